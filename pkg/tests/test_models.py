import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import TreeRef, adam_ref, central_difference, max_relative_error, ols_ref
from lactbench.models import (
    ForestParams,
    LassoParams,
    LstmParams,
    ModelError,
    Standardizer,
    forest_fit,
    lasso_fit,
    load_model,
    lstm_fit,
    lstm_predict,
    pad_and_flatten,
    save_model,
)
from lactbench.models.lasso import lasso_objective, soft_threshold
from lactbench.models.lstm import forward, init_params, loss_and_grads, pack
from lactbench.models.optim import Adam

# -- padding and standardization -----------------------------------------------------------------


def test_pad_prepends_zero_bins():
    h = np.array([[1.0, 2.0], [3.0, 4.0]])  # 2 features x 2 bins
    out = pad_and_flatten([h], 3)
    assert out.tolist() == [[0, 0, 1, 3, 2, 4]]


def test_pad_identity_at_max():
    h = np.arange(6.0).reshape(2, 3)
    assert pad_and_flatten([h], 3)[0].tolist() == h.T.ravel().tolist()


def test_pad_single_bin_layout():
    out = pad_and_flatten([np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])], 3)
    assert out.shape == (2, 6)
    assert np.all(out[:, :4] == 0) and out[:, 4:].tolist() == [[1, 2], [3, 4]]


def test_pad_rejects_long_history():
    with pytest.raises(ModelError):
        pad_and_flatten([np.zeros((1, 4))], 3)


def test_standardizer_examples():
    st_ = Standardizer.fit([np.array([[1.0], [5.0]]), np.array([[3.0], [5.0]])])
    out = st_.apply([np.array([[1.0, 3.0], [5.0, 5.0]])])[0]
    assert out[0].tolist() == [-1.0, 1.0]
    assert out[1].tolist() == [0.0, 0.0]
    with pytest.raises(ModelError):
        Standardizer.fit([np.zeros((1, 1))])


# -- lasso -------------------------------------------------------------------------------------------


def conditioned_problem(rng, n=80, p=6):
    X = rng.standard_normal((n, p)) + rng.standard_normal(p)
    w = rng.standard_normal(p)
    y = X @ w + 0.5 + 0.1 * rng.standard_normal(n)
    return X, y


def test_lasso_zero_penalty_matches_least_squares():
    for seed in range(5):
        X, y = conditioned_problem(np.random.default_rng(seed))
        m = lasso_fit(X, y, LassoParams(l1_penalty=0.0, tol=1e-13, max_sweeps=20000))
        b, w = ols_ref(X, y)
        assert np.max(np.abs(m.coef - w)) < 1e-6 and abs(m.intercept - b) < 1e-6


def test_lasso_zero_threshold():
    X, y = conditioned_problem(np.random.default_rng(1))
    lam_max = np.max(np.abs((X - X.mean(0)).T @ (y - y.mean()))) / len(y)
    m = lasso_fit(X, y, LassoParams(l1_penalty=lam_max))
    assert np.all(m.coef == 0.0) and m.intercept == pytest.approx(y.mean())
    m = lasso_fit(X, y, LassoParams(l1_penalty=0.99 * lam_max))
    assert np.count_nonzero(m.coef) >= 1


def test_lasso_constant_target():
    X = np.random.default_rng(0).standard_normal((20, 3))
    m = lasso_fit(X, np.full(20, 2.5))
    assert np.all(m.coef == 0) and m.intercept == 2.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-4, 1.0))
def test_lasso_objective_non_increasing(seed, lam):
    X, y = conditioned_problem(np.random.default_rng(seed), n=30, p=8)
    m = lasso_fit(X, y, LassoParams(l1_penalty=lam))
    h = np.array(m.objective_history)
    assert np.all(np.diff(h) <= 1e-12 * max(1.0, h[0]))
    Xc, yc = X - X.mean(0), y - y.mean()
    assert h[-1] == pytest.approx(lasso_objective(Xc, yc, m.coef, 0.0, lam))


def test_soft_threshold():
    assert soft_threshold(3.0, 1.0) == 2.0 and soft_threshold(-3.0, 1.0) == -2.0 and soft_threshold(0.5, 1.0) == 0


def test_lasso_rejects_bad_input():
    with pytest.raises(ModelError):
        lasso_fit(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ModelError):
        lasso_fit(np.array([[np.nan]]), np.ones(1))


# -- forest -----------------------------------------------------------------------------------------


def test_forest_constant_target():
    X = np.random.default_rng(0).standard_normal((30, 4))
    m = forest_fit(X, np.full(30, 1.7), ForestParams(n_trees=10))
    np.testing.assert_allclose(m.predict(X), 1.7, rtol=1e-15)


def test_forest_depth_zero_predicts_mean():
    X = np.random.default_rng(0).standard_normal((30, 4))
    y = np.arange(30.0)
    m = forest_fit(X, y, ForestParams(n_trees=1, max_depth=0, bootstrap=False))
    assert np.all(m.predict(X[:5]) == y.mean())


def tree_problem(seed, p):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, p))
    y = np.sin(2 * X[:, 0]) + X[:, -1] ** 2 + 0.1 * rng.standard_normal(60)
    return X, y, rng.standard_normal((40, p))


def single_tree(X, y, leaf):
    return forest_fit(X, y, ForestParams(n_trees=1, bootstrap=False, max_features=1.0, min_samples_leaf=leaf))


# With one feature there are no cross-feature ties, so the whole partition is pinned down.
@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 6))
def test_single_feature_tree_matches_reference(seed, leaf):
    X, y, Xq = tree_problem(seed, 1)
    m, ref = single_tree(X, y, leaf), TreeRef(min_samples_leaf=leaf).fit(X, y)
    np.testing.assert_allclose(m.predict(np.vstack([X, Xq])), ref.predict(np.vstack([X, Xq])), rtol=0, atol=1e-10)


# Several features may tie on small nodes; leaf sizes >= 3 keep the training partition unique.
@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(3, 6))
def test_multi_feature_tree_matches_reference_on_training_rows(seed, leaf):
    X, y, _ = tree_problem(seed, 3)
    m, ref = single_tree(X, y, leaf), TreeRef(min_samples_leaf=leaf).fit(X, y)
    np.testing.assert_allclose(m.predict(X), ref.predict(X), rtol=0, atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_forest_predictions_within_training_range(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((50, 4))
    y = rng.gamma(2, 2, 50)
    m = forest_fit(X, y, ForestParams(n_trees=15, rng_seed=seed % 100))
    p = m.predict(rng.standard_normal((30, 4)) * 5)
    assert np.all(p >= y.min()) and np.all(p <= y.max())


def test_forest_errors():
    with pytest.raises(ModelError):
        forest_fit(np.ones((2, 2)), np.ones(2), ForestParams(min_samples_leaf=5))
    with pytest.raises(ModelError):
        forest_fit(np.ones((0, 2)), np.ones(0))


# -- LSTM -----------------------------------------------------------------------------------------------


def test_lstm_gradient_check():
    params = LstmParams(layers=1, units=2, dropout=0.0, dtype="float64")
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        w = init_params(3, params, rng, head_bias=0.3)
        X, m = pack([rng.standard_normal((rng.integers(1, 5), 3))], 5)
        y = rng.standard_normal(1)
        _, grads = loss_and_grads(w, X, m, y)
        num = central_difference(lambda: loss_and_grads(w, X, m, y)[0], w)
        worst = max(worst, max_relative_error(grads, num))
    assert worst < 1e-4


def test_lstm_gradient_check_two_layers_with_dropout():
    params = LstmParams(layers=2, units=3, dropout=0.3, dtype="float64")
    rng = np.random.default_rng(3)
    w = init_params(2, params, rng)
    X, m = pack([rng.standard_normal((L, 2)) for L in (2, 4, 3)], 4)
    y = rng.standard_normal(3)
    drops = [(rng.random((3, 4, 3)) < 0.7) / 0.7 for _ in range(2)]
    _, grads = loss_and_grads(w, X, m, y, drops)
    num = central_difference(lambda: loss_and_grads(w, X, m, y, drops)[0], w)
    assert max_relative_error(grads, num) < 1e-4


def test_lstm_zero_input_gives_head_bias():
    params = LstmParams(units=8)
    w = init_params(4, params, np.random.default_rng(0), head_bias=1.25)
    X, m = pack([np.zeros((5, 4))], 5)
    assert forward(w, X, m)[0][0] == pytest.approx(1.25, abs=1e-15)


def toy_task(n=200, T=4, D=3, seed=0):
    rng = np.random.default_rng(seed)
    seqs = [rng.standard_normal((T, D)) for _ in range(n)]
    beta = rng.standard_normal(D)
    return seqs, np.array([s[-1] @ beta + 0.5 * s[-2, 0] for s in seqs])


def test_lstm_loss_non_increasing_first_epochs():
    seqs, y = toy_task()
    model = lstm_fit(seqs, y, LstmParams(layers=1, units=16, dropout=0.0, learning_rate=1e-2, epochs=5,
                                         batch_size=200, dtype="float64"))
    assert np.all(np.diff(model.loss_history) <= 0)


def test_lstm_learns_toy_task():
    seqs, y = toy_task(400)
    model = lstm_fit(seqs, y, LstmParams(layers=1, units=16, dropout=0.0, learning_rate=1e-2, epochs=60,
                                         batch_size=50))
    pred = lstm_predict(model, seqs)
    assert np.mean((pred - y) ** 2) < 0.2 * np.var(y)


def test_lstm_masking_and_shape_invariance():
    seqs, y = toy_task(50)
    model = lstm_fit(seqs, y, LstmParams(layers=2, units=8, epochs=2, dtype="float64"), max_len=6)
    for L in range(1, 5):
        s = seqs[0][-L:]
        p = lstm_predict(model, s)
        assert isinstance(p, float)
        # prediction is the same whatever the padded batch width
        X, m = pack([s], 9)
        assert forward(model.weights, X, m)[0][0] == pytest.approx(p, abs=1e-12)
    a = lstm_predict(model, seqs[:10])
    b = lstm_predict(model, seqs[:10])
    assert np.array_equal(a, b)


def test_lstm_is_seeded():
    seqs, y = toy_task(60)
    p = LstmParams(units=8, epochs=2, rng_seed=4)
    a = lstm_predict(lstm_fit(seqs, y, p), seqs)
    b = lstm_predict(lstm_fit(seqs, y, p), seqs)
    assert np.array_equal(a, b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_lstm_divergence_reports_learning_rate():
    seqs, y = toy_task(40)
    with pytest.raises(ModelError, match="learning_rate"):
        lstm_fit(seqs, y * 1e200, LstmParams(units=4, epochs=3, dropout=0.0, learning_rate=1.0, dtype="float64"))


def test_lstm_param_validation():
    with pytest.raises(ModelError):
        LstmParams(dropout=1.0).validate()
    with pytest.raises(ModelError):
        lstm_fit([], [], LstmParams())


# -- Adam and persistence --------------------------------------------------------------------------------


def test_adam_matches_hand_stepped_reference():
    grads = [0.5, -1.5, 2.0]
    p = {"w": np.array([1.0])}
    opt = Adam(p, lr=0.1)
    got = []
    for g in grads:
        opt.step({"w": np.array([g])})
        got.append(p["w"][0])
    np.testing.assert_allclose(got, adam_ref(1.0, grads, lr=0.1), rtol=0, atol=1e-15)


def test_model_save_load(tmp_path):
    X, y = conditioned_problem(np.random.default_rng(0))
    m = lasso_fit(X, y)
    save_model(m, tmp_path / "m.pkl")
    assert np.array_equal(load_model(tmp_path / "m.pkl").predict(X), m.predict(X))
    (tmp_path / "bad.pkl").write_bytes(b"\x80\x04N.")
    with pytest.raises(ModelError):
        load_model(tmp_path / "bad.pkl")
