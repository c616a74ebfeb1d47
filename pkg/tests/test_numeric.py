"""Low-level numerics against hand-rolled oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskmix.numeric import (
    AdamState,
    DimensionError,
    ParamStore,
    adam_step,
    affine_backward,
    affine_forward,
    clip_grads_,
    finite_diff_check,
    global_grad_norm,
    logistic_loss,
    relu_backward,
    relu_forward,
    residual_backward,
    residual_forward,
    sigmoid,
    softmax_rows,
    softmax_rows_backward,
    squared_loss,
)


def _matmul_loops(a, b):
    # independent O(n^3) oracle, no numpy matmul
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += a[i, l] * b[l, j]
            out[i, j] = s
    return out


def test_affine_forward_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    y = affine_forward(x, w, b)
    expect = _matmul_loops(x, w) + b
    assert np.allclose(y, expect, rtol=0, atol=1e-12)


def test_affine_backward_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4))
    w = rng.normal(size=(4, 2))
    dy = rng.normal(size=(6, 2))
    dx, dw, db = affine_backward(x, w, dy)
    assert np.allclose(dw, _matmul_loops(x.T.copy(), dy), atol=1e-12)
    assert np.allclose(db, dy.sum(axis=0), atol=1e-12)
    assert np.allclose(dx, _matmul_loops(dy, w.T.copy()), atol=1e-12)


def test_affine_shape_errors():
    with pytest.raises(DimensionError):
        affine_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))
    with pytest.raises(DimensionError):
        affine_forward(np.zeros((2, 3)), np.zeros((3, 5)), np.zeros(4))


def test_relu_is_strict_at_zero():
    x = np.array([-1.0, 0.0, 2.0])
    assert np.array_equal(relu_forward(x), [0.0, 0.0, 2.0])
    # subgradient at exactly 0 is 0 (x > 0 convention)
    assert np.array_equal(relu_backward(x, np.ones(3)), [0.0, 0.0, 1.0])


def test_residual_roundtrip():
    x = np.array([[1.0, -2.0]])
    fx = np.array([[0.5, 0.5]])
    assert np.array_equal(residual_forward(x, fx), [[1.5, -1.5]])
    dy = np.array([[2.0, 3.0]])
    d_fx, d_x = residual_backward(dy)
    assert np.array_equal(d_fx, dy)
    assert np.array_equal(d_x, dy)


def test_softmax_rows_known_values():
    z = np.array([[0.0, 0.0], [math.log(3.0), 0.0]])
    y = softmax_rows(z)
    assert np.allclose(y[0], [0.5, 0.5], atol=1e-15)
    assert np.allclose(y[1], [0.75, 0.25], atol=1e-15)


def test_softmax_rows_backward_vs_jacobian():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(3, 4))
    y = softmax_rows(z)
    dy = rng.normal(size=(3, 4))
    dz = softmax_rows_backward(y, dy)
    for r in range(3):
        jac = np.diag(y[r]) - np.outer(y[r], y[r])
        assert np.allclose(dz[r], jac @ dy[r], atol=1e-12)


def test_sigmoid_extremes_stay_finite():
    z = np.array([-800.0, 0.0, 800.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s))
    assert s[0] == 0.0 or s[0] < 1e-300
    assert s[1] == 0.5
    assert s[2] == 1.0


def test_logistic_loss_matches_naive_formula():
    rng = np.random.default_rng(3)
    z = rng.normal(size=50) * 3
    y = (rng.random(50) < 0.5).astype(float)
    losses, dlogits = logistic_loss(z, y)
    p = 1.0 / (1.0 + np.exp(-z))
    naive = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert np.allclose(losses, naive, atol=1e-12)
    assert np.allclose(dlogits, p - y, atol=1e-12)


def test_logistic_loss_huge_logits_finite():
    losses, dlogits = logistic_loss(np.array([5000.0, -5000.0]),
                                    np.array([0.0, 1.0]))
    assert np.all(np.isfinite(losses))
    assert np.allclose(losses, [5000.0, 5000.0])
    assert np.allclose(dlogits, [1.0, -1.0])


def test_squared_loss_gradient():
    losses, dp = squared_loss(np.array([2.0, -1.0]), np.array([0.5, -1.0]))
    assert np.allclose(losses, [2.25, 0.0])
    assert np.allclose(dp, [3.0, 0.0])


# ---------------------------------------------------------------------------
# parameter store / optimizer


def test_store_tracks_order_and_rejects_duplicates():
    store = ParamStore()
    store.add("b", np.zeros(2))
    store.add("a", np.zeros((2, 2)))
    assert store.names() == ["b", "a"]
    assert store.num_params() == 6
    with pytest.raises(KeyError):
        store.add("b", np.zeros(1))


def test_store_copy_is_independent():
    store = ParamStore()
    w = store.add("w", np.ones(3))
    other = store.copy()
    w += 5.0
    assert np.array_equal(other.params["w"], np.ones(3))
    store.load_values(other)
    assert np.array_equal(store.params["w"], np.ones(3))


def test_store_load_values_validates():
    a = ParamStore()
    a.add("w", np.zeros(2))
    b = ParamStore()
    b.add("x", np.zeros(2))
    with pytest.raises(KeyError):
        a.load_values(b)
    c = ParamStore()
    c.add("w", np.zeros(3))
    with pytest.raises(DimensionError):
        a.load_values(c)


def test_store_flatten_concatenates_in_order():
    store = ParamStore()
    store.add("w", np.array([[1.0, 2.0]]))
    store.add("b", np.array([3.0]))
    assert np.array_equal(store.flatten(), [1.0, 2.0, 3.0])
    assert ParamStore().flatten().shape == (0,)


def _adam_oracle(p0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    # plain-float reimplementation of bias-corrected Adam
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= lr * mhat / (math.sqrt(vhat) + eps)
    return p


def test_adam_two_steps_match_scalar_oracle():
    store = ParamStore()
    store.add("p", np.array([1.0]))
    state = AdamState.for_store(store)
    grads = [0.3, -0.7]
    for g in grads:
        store.grads["p"][0] = g
        adam_step(store, state, lr=0.01)
    expect = _adam_oracle(1.0, grads, 0.01)
    assert abs(store.params["p"][0] - expect) < 1e-15
    assert state.t == 2
    assert store.step == 2


def test_adam_zeroes_grads_after_step():
    store = ParamStore()
    store.add("p", np.zeros(2))
    state = AdamState.for_store(store)
    store.grads["p"][:] = [1.0, -1.0]
    adam_step(store, state, lr=0.1)
    assert np.array_equal(store.grads["p"], np.zeros(2))


def test_adam_state_must_match_store():
    store = ParamStore()
    store.add("p", np.zeros(1))
    state = AdamState.for_store(store)
    store2 = ParamStore()
    store2.add("q", np.zeros(1))
    with pytest.raises(KeyError):
        adam_step(store2, state, lr=0.1)


def test_grad_norm_and_clipping():
    store = ParamStore()
    store.add("a", np.zeros(2))
    store.add("b", np.zeros(1))
    store.grads["a"][:] = [3.0, 0.0]
    store.grads["b"][:] = [4.0]
    assert global_grad_norm(store) == 5.0
    pre = clip_grads_(store, 1.0)
    assert pre == 5.0
    assert abs(global_grad_norm(store) - 1.0) < 1e-12
    # already under the cap: untouched
    pre2 = clip_grads_(store, 10.0)
    assert abs(pre2 - 1.0) < 1e-12
    assert abs(global_grad_norm(store) - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# finite differences


def test_finite_diff_accepts_correct_quadratic_gradient():
    store = ParamStore()
    w = store.add("w", np.array([0.7, -1.2, 0.3]))
    a = np.array([2.0, -1.0, 0.5])

    def loss_fn():
        store.grads["w"] += 2.0 * (w - a)
        return float(np.sum((w - a) ** 2))

    report = finite_diff_check(loss_fn, store)
    assert report.checked == 3
    assert report.skipped == 0
    assert report.max_rel_err < 1e-8


def test_finite_diff_flags_planted_wrong_gradient():
    store = ParamStore()
    w = store.add("w", np.array([0.5, 0.5]))

    def loss_fn():
        store.grads["w"] += np.array([2.0 * w[0], 17.0])  # wrong on coord 1
        return float(w[0] ** 2 + w[1] ** 2)

    report = finite_diff_check(loss_fn, store)
    assert report.max_rel_err > 0.5
    assert report.worst_param == "w"
    assert report.worst_index == (1,)


def test_finite_diff_skips_relu_kinks_via_signature():
    store = ParamStore()
    # w[0] sits within h of the kink; w[1] is safely positive
    w = store.add("w", np.array([9e-6, 1.0]))

    def loss_fn():
        act = w > 0.0
        store.grads["w"] += np.where(act, 1.0, 0.0)
        return float(np.sum(np.maximum(w, 0.0))), act.tobytes()

    report = finite_diff_check(loss_fn, store, h=1e-5)
    assert report.skipped == 1
    assert report.checked == 1
    assert report.max_rel_err < 1e-8


def test_finite_diff_max_coords_sampling_is_seeded():
    store = ParamStore()
    w = store.add("w", np.arange(20, dtype=float))

    def loss_fn():
        store.grads["w"] += 2.0 * w
        return float(np.sum(w * w))

    r1 = finite_diff_check(loss_fn, store, max_coords=5,
                           rng=np.random.default_rng(7))
    r2 = finite_diff_check(loss_fn, store, max_coords=5,
                           rng=np.random.default_rng(7))
    assert r1.checked == r2.checked == 5
    assert r1.max_rel_err == r2.max_rel_err


# ---------------------------------------------------------------------------
# properties


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
@settings(max_examples=100, deadline=None)
def test_softmax_rows_sum_to_one(row):
    y = softmax_rows(np.array([row]))
    assert abs(y.sum() - 1.0) < 1e-9
    assert np.all(y >= 0)


@given(st.lists(st.integers(-30, 30), min_size=2, max_size=8, unique=True),
       st.floats(-100, 100))
@settings(max_examples=100, deadline=None)
def test_softmax_rows_shift_invariant_and_argmax_preserving(row, shift):
    # integer-spaced entries stay distinct after the float shift
    z = np.array([row], dtype=np.float64)
    y1 = softmax_rows(z)
    y2 = softmax_rows(z + shift)
    assert np.allclose(y1, y2, atol=1e-9)
    assert int(np.argmax(y1)) == int(np.argmax(z))


@given(st.floats(-700, 700), st.integers(0, 1))
@settings(max_examples=100, deadline=None)
def test_logistic_loss_nonnegative_with_bounded_grad(z, y):
    losses, dlogits = logistic_loss(np.array([z]), np.array([float(y)]))
    assert losses[0] >= 0.0
    assert -1.0 <= dlogits[0] <= 1.0
