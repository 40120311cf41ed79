"""JSON Schemas for the configuration files read by the command line."""

_int = {"type": "integer"}
_num = {"type": "number"}
_seed = {"type": "integer", "minimum": 0}

SYNTH = {
    "type": "object",
    "properties": {
        "n_patients": {"type": "integer", "minimum": 1},
        "stay_length_mean_bins": {"type": "number", "exclusiveMinimum": 0},
        "stay_length_std_bins": {"type": "number", "minimum": 0},
        "min_stay_bins": {"type": "integer", "minimum": 1},
        "max_stay_bins": {"type": "integer", "minimum": 1},
        "repeat_stay_prob": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "latent_dim": {"type": "integer", "minimum": 0},
        "ar_coef": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "stay_effect_weight": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "lactate_link": {"type": "number", "minimum": 0, "maximum": 1},
        "lactate_period": {"type": "integer", "minimum": 1},
        "lactate_mixture": {
            "type": "object",
            "properties": {
                "medians": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                "log_sds": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                "target_weights": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
            },
            "additionalProperties": False,
        },
        "features": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string"},
                    "mean": _num,
                    "std": {"type": "number", "exclusiveMinimum": 0},
                    "period": {"type": "integer", "minimum": 1},
                    "loading": {"type": "number", "minimum": 0, "maximum": 1},
                },
                "required": ["name", "mean", "std"],
                "additionalProperties": False,
            },
        },
        "rng_seed": _seed,
    },
    "additionalProperties": False,
}

MISSINGNESS = {
    "type": "object",
    "properties": {
        "mechanism": {"enum": ["MCAR", "MAR", "MNAR"]},
        "rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "features": {"type": ["array", "null"], "items": {"type": "string"}},
        "conditioning_feature": {"type": ["string", "null"]},
        "mar_slope": _num,
        "curve": {
            "type": "object",
            "properties": {k: {"type": "number", "exclusiveMinimum": 0} for k in ("Normal", "Mild", "Moderate", "Severe")},
            "required": ["Normal", "Mild", "Moderate", "Severe"],
            "additionalProperties": False,
        },
        "rng_seed": _seed,
    },
    "required": ["mechanism"],
    "additionalProperties": False,
}

SYNTH_FILE = {
    "description": "Either a bare cohort config or {'cohort': ..., 'missingness': ...}.",
    "oneOf": [
        SYNTH,
        {
            "type": "object",
            "properties": {"cohort": SYNTH, "missingness": {"oneOf": [MISSINGNESS, {"type": "null"}]}},
            "required": ["cohort"],
            "additionalProperties": False,
        },
    ],
}

COHORT = {
    "type": "object",
    "properties": {
        "min_age_years": {"type": "number", "exclusiveMinimum": 0},
        "min_lactate_count": {"type": "integer", "minimum": 1},
        "min_los_minutes": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

EXPERIMENT = {
    "type": "object",
    "properties": {
        "task": {
            "type": "object",
            "properties": {
                "alpha_minutes": {"type": "integer", "minimum": 1},
                "beta_minutes": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "imputers": {"type": "array", "items": {"type": "string"}},
        "models": {"type": "array", "items": {"type": "string"}},
        "folds": {"type": "integer", "minimum": 2},
        "rng_seed": _seed,
        "max_window_bins": {"type": "integer", "minimum": 1},
        "standardize_all": {"type": "boolean"},
        "split_unit": {"enum": ["stay", "sample"]},
        "imputer_params": {"type": "object", "additionalProperties": {"type": "object"}},
        "model_params": {"type": "object", "additionalProperties": {"type": "object"}},
        "data": {
            "type": "object",
            "properties": {
                "grid": {"type": "string"},
                "name": {"type": "string"},
                "synth": SYNTH,
                "missingness": {"oneOf": [MISSINGNESS, {"type": "null"}]},
            },
            "additionalProperties": False,
        },
    },
    "required": ["data"],
    "additionalProperties": False,
}

IMPUTER_PARAMS = {"type": "object"}
