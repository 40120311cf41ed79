import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import grid_from_matrix
from oracles import band_ref
from lactbench.datamodel import LACTATE
from lactbench.interchange import load_grid, save_grid
from lactbench.synth import (
    TABLE2_WEIGHTS,
    ConfigError,
    MissingnessSpec,
    SynthConfig,
    apply_missingness,
    corrupted_cells,
    generate_cohort,
    lactate_category_proportions,
)


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(SynthConfig(n_patients=120, rng_seed=7))


def test_generation_is_deterministic(cohort):
    again = generate_cohort(SynthConfig(n_patients=120, rng_seed=7))
    assert np.array_equal(cohort.values, again.values, equal_nan=True)
    np.testing.assert_array_equal(cohort.mask, again.mask)
    assert cohort.stays == again.stays
    other = generate_cohort(SynthConfig(n_patients=120, rng_seed=8))
    assert not np.array_equal(cohort.values[:20], other.values[:20], equal_nan=True)


def test_native_periods_and_invariants(cohort):
    cohort.check_invariants()
    cfg = SynthConfig()
    lac = cohort.feature_index(LACTATE)
    for i in range(cohort.n_stays):
        m = cohort.stay_mask(i)
        obs = np.flatnonzero(m[lac])
        assert len(obs) and np.all(np.diff(obs) == cfg.lactate_period)
    assert cohort.mask[:, cohort.feature_index("heart_rate")].all()


def test_lactate_proportions_near_table2():
    g = generate_cohort(SynthConfig(n_patients=800, rng_seed=1))
    np.testing.assert_allclose(lactate_category_proportions(g), TABLE2_WEIGHTS, atol=0.03)


def test_zero_latent_dim_gives_uncorrelated_features():
    g = generate_cohort(SynthConfig(n_patients=400, latent_dim=0, rng_seed=3))
    cols = [g.feature_index(f) for f in ("heart_rate", "respiratory_rate", "spo2", "nibp_mean")]
    C = np.corrcoef(g.values[:, cols].T)
    off = C[~np.eye(len(cols), dtype=bool)]
    assert np.abs(off).max() < 0.05


def test_lactate_is_autocorrelated(cohort):
    lac = cohort.feature_index(LACTATE)
    pairs = []
    for i in range(cohort.n_stays):
        v = cohort.stay_values(i)[lac]
        obs = np.flatnonzero(np.isfinite(v))
        pairs += [(v[a], v[b]) for a, b in zip(obs[:-1], obs[1:])]
    a, b = np.log(np.array(pairs)).T
    assert np.corrcoef(a, b)[0, 1] > 0.3


def test_round_trip(cohort, tmp_path):
    save_grid(cohort, tmp_path)
    back, _ = load_grid(tmp_path)
    assert np.array_equal(back.values, cohort.values, equal_nan=True)
    assert back.stays == cohort.stays


def test_config_errors():
    with pytest.raises(ConfigError):
        SynthConfig.from_json({"n_patients": 3, "bogus": 1})
    with pytest.raises(ConfigError):
        SynthConfig.from_json({"n_patients": 0})
    with pytest.raises(ConfigError):
        MissingnessSpec.from_json({"mechanism": "MAR"})
    with pytest.raises(ConfigError):
        MissingnessSpec.from_json({"mechanism": "MNAR", "curve": {"Normal": 1}})
    cfg = SynthConfig(n_patients=5, rng_seed=2)
    assert SynthConfig.from_json(cfg.to_json()) == cfg


# -- missingness -------------------------------------------------------------------------


def big_grid(n=100_000, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.lognormal(0.6, 0.7, n), rng.standard_normal(n)])
    return grid_from_matrix(X, stay_lengths=[n], features=[LACTATE, "x"])


def test_mcar_rate():
    g = apply_missingness(big_grid(), MissingnessSpec("MCAR", 0.3, features=(LACTATE,), rng_seed=5))
    assert 0.295 <= 1 - g.mask[:, 0].mean() <= 0.305


def test_rate_zero_is_identity(cohort):
    g = apply_missingness(cohort, MissingnessSpec("MNAR", 0.0))
    np.testing.assert_array_equal(g.mask, cohort.mask)


def test_mnar_ratio_normal_vs_severe():
    g0 = big_grid()
    g = apply_missingness(g0, MissingnessSpec("MNAR", 0.3, features=(LACTATE,), rng_seed=9))
    bands = np.array([band_ref(v) for v in g0.values[:, 0]])
    drop = ~g.mask[:, 0]
    ratio = drop[bands == 0].mean() / drop[bands == 3].mean()
    assert abs(ratio / 3.0 - 1) < 0.2


def test_mar_depends_on_conditioning_feature():
    g0 = big_grid()
    g = apply_missingness(g0, MissingnessSpec("MAR", 0.3, features=(LACTATE,), conditioning_feature="x",
                                              mar_slope=2.0, rng_seed=1))
    drop = ~g.mask[:, 0]
    x = g0.values[:, 1]
    assert drop[x > 1].mean() > 2 * drop[x < -1].mean()
    assert abs(drop.mean() - 0.3) < 0.01
    assert g.mask[:, 1].all()


def test_composition_matches_product_survival():
    g0 = big_grid()
    a = apply_missingness(g0, MissingnessSpec("MCAR", 0.3, rng_seed=1))
    b = apply_missingness(a, MissingnessSpec("MCAR", 0.2, rng_seed=2))
    assert not np.any(b.mask & ~a.mask)
    assert abs(b.mask.mean() - 0.7 * 0.8) < 0.006
    np.testing.assert_array_equal(b.truth, g0.values)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["MCAR", "MAR", "MNAR"]), st.floats(0, 0.9), st.integers(0, 10_000))
def test_missingness_only_masks(mech, rate, seed):
    g0 = generate_cohort(SynthConfig(n_patients=6, rng_seed=seed % 50))
    spec = MissingnessSpec(mech, rate, conditioning_feature="heart_rate" if mech == "MAR" else None, rng_seed=seed)
    g = apply_missingness(g0, spec)
    g.check_invariants()
    assert not np.any(g.mask & ~g0.mask)
    np.testing.assert_array_equal(g.values[g.mask], g0.values[g.mask])
    assert np.array_equal(g.truth, g0.values, equal_nan=True)
    np.testing.assert_array_equal(corrupted_cells(g), g0.mask & ~g.mask)
