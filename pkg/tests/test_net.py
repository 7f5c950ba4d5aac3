import numpy as np
import pytest

from pilrecon.net import (
    AdamState,
    MlpParams,
    MlpSpec,
    Workspace,
    adam_step,
    backward,
    forward,
    gradnorm_backward,
    init_params,
    load_params,
    save_params,
    spatial_gradient,
)


def finite_difference_param_grad(params, points, upstream, h=1e-5):
    """Central differences of sum(upstream * f) with respect to every parameter."""
    grad = np.zeros_like(params.flat)
    for i in range(len(params.flat)):
        bumped = params.copy()
        bumped.flat[i] += h
        hi = float(np.sum(upstream * forward(bumped, points)))
        bumped.flat[i] -= 2 * h
        lo = float(np.sum(upstream * forward(bumped, points)))
        grad[i] = (hi - lo) / (2 * h)
    return grad


def test_default_spec_has_823_parameters():
    assert MlpSpec().param_count == 823


def test_minimal_spec_parameter_count():
    assert MlpSpec((3, 1)).param_count == 4


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((4, 1))
    with pytest.raises(ValueError):
        MlpSpec((3, 2))
    with pytest.raises(ValueError):
        MlpSpec((3,))


def test_init_deterministic():
    a = init_params(MlpSpec(), seed=7)
    b = init_params(MlpSpec(), seed=7)
    assert np.array_equal(a.flat, b.flat)
    c = init_params(MlpSpec(), seed=8)
    assert not np.array_equal(a.flat, c.flat)


def test_init_bounds_and_zero_biases():
    params = init_params(MlpSpec(), seed=0)
    weights, biases = params.views()
    for w in weights:
        lim = 1.0 / np.sqrt(w.shape[0])
        assert np.all(np.abs(w) <= lim)
    for b in biases:
        assert np.all(b == 0)


def test_forward_zero_params_is_zero():
    params = MlpParams(MlpSpec(), np.zeros(823))
    out = forward(params, np.random.default_rng(0).standard_normal((5, 3)))
    assert np.all(out == 0)


def test_forward_single_layer_closed_form():
    params = MlpParams(MlpSpec((3, 1)), np.array([1.0, 0.0, 0.0, 0.0]))
    out = forward(params, np.array([[0.5, 0.0, 0.0]]))
    assert out[0] == pytest.approx(np.tanh(0.5))


def test_forward_range_inside_unit():
    params = init_params(MlpSpec(), seed=1)
    pts = np.random.default_rng(1).standard_normal((100, 3))
    out = forward(params, pts)
    assert np.all(np.abs(out) < 1)
    # under extreme saturation float rounding may reach exactly 1, never beyond
    params.flat[:] *= 50
    out = forward(params, pts)
    assert np.all(np.abs(out) <= 1)


def test_forward_rejects_nonfinite():
    params = init_params(MlpSpec(), seed=0)
    with pytest.raises(ValueError):
        forward(params, np.array([[np.nan, 0.0, 0.0]]))


def test_backward_zero_upstream():
    params = init_params(MlpSpec(), seed=0)
    pts = np.random.default_rng(0).standard_normal((4, 3))
    grad = backward(params, pts, np.zeros(4))
    assert np.all(grad == 0)


def test_backward_linearity():
    params = init_params(MlpSpec(), seed=2)
    pts = np.random.default_rng(2).standard_normal((6, 3))
    up = np.random.default_rng(3).standard_normal(6)
    g1 = backward(params, pts, up)
    g2 = backward(params, pts, 2 * up)
    assert np.allclose(g2, 2 * g1, rtol=1e-12)


@pytest.mark.parametrize("layer_sizes", [(3, 1), (3, 4, 1), MlpSpec().layer_sizes])
def test_backward_matches_finite_differences(layer_sizes):
    spec = MlpSpec(layer_sizes)
    params = init_params(spec, seed=11)
    rng = np.random.default_rng(11)
    pts = rng.standard_normal((3, 3))
    up = rng.standard_normal(3)
    analytic = backward(params, pts, up)
    numeric = finite_difference_param_grad(params, pts, up)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)
    assert np.max(rel) < 1e-6


def test_spatial_gradient_zero_params():
    params = MlpParams(MlpSpec(), np.zeros(823))
    g = spatial_gradient(params, np.random.default_rng(0).standard_normal((4, 3)))
    assert np.all(g == 0)


def test_spatial_gradient_single_layer_closed_form():
    params = MlpParams(MlpSpec((3, 1)), np.array([1.0, 0.0, 0.0, 0.0]))
    g = spatial_gradient(params, np.zeros((1, 3)))
    assert np.allclose(g, [[1.0, 0.0, 0.0]])


def test_spatial_gradient_matches_finite_differences():
    params = init_params(MlpSpec(), seed=5)
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((4, 3))
    analytic = spatial_gradient(params, pts)
    h = 1e-6
    for axis in range(3):
        hi = pts.copy()
        hi[:, axis] += h
        lo = pts.copy()
        lo[:, axis] -= h
        numeric = (forward(params, hi) - forward(params, lo)) / (2 * h)
        rel = np.abs(analytic[:, axis] - numeric) / (np.abs(numeric) + 1e-12)
        assert np.max(rel) < 1e-6


def test_output_odd_under_last_layer_negation():
    params = init_params(MlpSpec(), seed=9)
    pts = np.random.default_rng(9).standard_normal((10, 3))
    f = forward(params, pts)
    negated = params.copy()
    weights, biases = negated.views()
    weights[-1] *= -1
    biases[-1] *= -1
    assert np.allclose(forward(negated, pts), -f, rtol=1e-12)


def test_gradnorm_backward_matches_finite_differences():
    spec = MlpSpec((3, 4, 3, 1))
    params = init_params(spec, seed=13)
    rng = np.random.default_rng(13)
    pts = rng.standard_normal((5, 3))
    coeffs = rng.uniform(0.5, 1.5, 5)

    def objective(p):
        g = spatial_gradient(p, pts)
        return float(np.sum(coeffs * np.sum(g * g, axis=1)))

    value, analytic = gradnorm_backward(params, pts, coeffs)
    assert value == pytest.approx(objective(params), rel=1e-12)
    h = 1e-6
    numeric = np.zeros_like(analytic)
    for i in range(len(params.flat)):
        bumped = params.copy()
        bumped.flat[i] += h
        hi = objective(bumped)
        bumped.flat[i] -= 2 * h
        lo = objective(bumped)
        numeric[i] = (hi - lo) / (2 * h)
    rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-9)
    assert np.max(rel) < 1e-5


def test_adam_first_step_magnitude_is_lr():
    params = MlpParams(MlpSpec((3, 1)), np.zeros(4))
    state = AdamState.fresh(params)
    grad = np.array([1.0, 0.0, 0.0, 0.0])
    adam_step(params, grad, state, lr=5e-3)
    assert params.flat[0] == pytest.approx(-5e-3, rel=1e-6)
    assert state.t == 1


def test_adam_zero_gradient_is_noop_without_decay():
    params = init_params(MlpSpec(), seed=3)
    before = params.flat.copy()
    state = AdamState.fresh(params)
    adam_step(params, np.zeros_like(before), state, lr=5e-3, weight_decay=0.0)
    assert np.array_equal(params.flat, before)
    assert state.t == 1


def test_adam_two_steps_match_hand_computation():
    # independent scalar re-implementation of coupled-decay Adam
    theta, m, v = 0.3, 0.0, 0.0
    lr, wd, b1, b2, eps = 1e-2, 0.1, 0.9, 0.999, 1e-8
    g_const = 0.7
    for t in (1, 2):
        g = g_const + wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

    params = MlpParams(MlpSpec((3, 1)), np.array([0.3, 0.0, 0.0, 0.0]))
    state = AdamState.fresh(params)
    for _ in range(2):
        adam_step(params, np.array([g_const, 0, 0, 0.0]), state, lr=lr, weight_decay=wd)
    assert params.flat[0] == pytest.approx(theta, rel=1e-12)


def test_adam_rejects_nonfinite_gradient_naming_layer():
    params = init_params(MlpSpec((3, 4, 1)), seed=0)
    state = AdamState.fresh(params)
    grad = np.zeros_like(params.flat)
    grad[-1] = np.inf  # last bias -> layer 1
    with pytest.raises(FloatingPointError, match="layer 1"):
        adam_step(params, grad, state, lr=1e-3)


def test_adam_shape_mismatch():
    params = init_params(MlpSpec((3, 1)), seed=0)
    with pytest.raises(ValueError):
        adam_step(params, np.zeros(5), AdamState.fresh(params), lr=1e-3)


def test_decoupled_decay_differs_from_coupled():
    base = init_params(MlpSpec((3, 1)), seed=1)
    grad = np.array([0.5, -0.2, 0.1, 0.0])
    coupled = base.copy()
    adam_step(coupled, grad.copy(), AdamState.fresh(coupled), lr=1e-2, weight_decay=0.1)
    decoupled = base.copy()
    adam_step(decoupled, grad.copy(), AdamState.fresh(decoupled), lr=1e-2, weight_decay=0.1, decoupled=True)
    assert not np.allclose(coupled.flat, decoupled.flat)


def test_snapshot_roundtrip(tmp_path):
    params = init_params(MlpSpec(), seed=21)
    save_params(params, tmp_path / "w.params")
    back = load_params(tmp_path / "w.params")
    assert back.spec == params.spec
    assert np.array_equal(back.flat, params.flat)


def test_snapshot_layout_is_documented_byte_format(tmp_path):
    params = init_params(MlpSpec((3, 4, 1)), seed=2)
    save_params(params, tmp_path / "w.params")
    raw = (tmp_path / "w.params").read_bytes()
    assert np.frombuffer(raw[:4], dtype="<u4")[0] == 3
    assert tuple(np.frombuffer(raw[4:16], dtype="<u4")) == (3, 4, 1)
    flat = np.frombuffer(raw[16:], dtype="<f8")
    assert np.array_equal(flat, params.flat)


def test_workspace_reuse_matches_one_shot():
    params = init_params(MlpSpec(), seed=4)
    rng = np.random.default_rng(4)
    ws = Workspace(params.spec, 16)
    for _ in range(3):
        pts = rng.standard_normal((16, 3))
        up = rng.standard_normal(16)
        f_ws = ws.forward(params, pts).copy()
        g_ws = ws.backward(params, up).copy()
        assert np.allclose(f_ws, forward(params, pts), rtol=1e-15)
        assert np.allclose(g_ws, backward(params, pts, up), rtol=1e-12)


def test_float32_mode():
    params = init_params(MlpSpec(), seed=6, dtype=np.float32)
    assert params.flat.dtype == np.float32
    pts = np.random.default_rng(6).standard_normal((8, 3)).astype(np.float32)
    out = forward(params, pts)
    assert out.dtype == np.float32
