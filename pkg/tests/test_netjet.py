import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pinnlab.netjet import (
    DivergenceError, NetworkSpec, ParamVector, forward, forward_jet, init_params, load_checkpoint,
    loss_grad, save_checkpoint,
)
from pinnlab.loss import LossWeights, make_loss_fn
from pinnlab.problems import ProblemConfig
from pinnlab.sampling import sample_batch

from fd import jet_fd_error


def test_init_params_deterministic_and_sized():
    spec = NetworkSpec((3, 4, 1), ("phi",))
    a, b = init_params(spec, 7), init_params(spec, 7)
    assert a.values.size == 21
    np.testing.assert_array_equal(a.values, b.values)


def test_init_params_biases_zero_and_glorot_range():
    spec = NetworkSpec((3, 16, 8, 5))
    p = init_params(spec, 3)
    for A, b in p.unpack():
        assert np.all(b == 0.0)
        limit = np.sqrt(6.0 / sum(A.shape))
        assert np.all(np.abs(A) <= limit)


def test_init_params_seed_changes_values():
    spec = NetworkSpec((3, 4, 1), ("phi",))
    assert np.any(init_params(spec, 7).values != init_params(spec, 8).values)


def test_pack_unpack_roundtrip_bitwise():
    spec = NetworkSpec((3, 5, 7, 5))
    p = init_params(spec, 1)
    p.values[:] = np.random.default_rng(0).normal(size=p.values.size)
    q = ParamVector.pack(spec, p.unpack())
    assert q.values.tobytes() == p.values.tobytes()
    assert p.values.size == sum(r * c + r for r, c in spec.shapes)


@pytest.mark.parametrize("widths, names", [
    ((3, 4, 2), ("u1",)),
    ((2, 4, 1), ("phi",)),
    ((3,), ("phi",)),
])
def test_spec_rejects_bad_widths(widths, names):
    with pytest.raises(ValueError):
        NetworkSpec(widths, names)


def test_affine_layer_jet():
    spec = NetworkSpec((3, 2), ("u1", "phi"))
    W = np.array([[1.0, -2.0, 0.5], [3.0, 0.25, -1.0]])
    b = np.array([0.1, -0.3])
    theta = ParamVector.pack(spec, [(W, b)])
    jets = forward_jet(spec, theta, jnp.array([0.3, 0.7, 1.1]))
    for k, name in enumerate(spec.output_names):
        np.testing.assert_allclose(jets[name].d1, W[k], rtol=0, atol=1e-15)
        assert np.all(np.asarray(jets[name].d2) == 0.0)
        assert float(jets[name].value) == pytest.approx(W[k] @ [0.3, 0.7, 1.1] + b[k])


def test_single_tanh_neuron_closed_form():
    spec = NetworkSpec((3, 1, 1), ("phi",))
    w1, b0 = 0.8, -0.2
    theta = ParamVector.pack(spec, [(np.array([[w1, 0.0, 0.0]]), np.array([b0])),
                                    (np.array([[1.0]]), np.array([0.0]))])
    x = 0.45
    j = forward_jet(spec, theta, jnp.array([x, 0.0, 0.0]))["phi"]
    f = np.tanh(w1 * x + b0)
    assert float(j.d1[0]) == pytest.approx(w1 * (1 - f * f), rel=1e-14)
    assert float(j.d2[0]) == pytest.approx(-2 * f * w1 ** 2 * (1 - f * f), rel=1e-13)


def test_identity_activation_exact_on_affine_map():
    spec = NetworkSpec((3, 6, 4, 5), activation="identity")
    theta = init_params(spec, 2)
    layers = theta.unpack()
    M = np.eye(3)
    for A, _ in layers:
        M = A @ M
    pts = np.random.default_rng(0).uniform(size=(20, 3))
    jets = forward_jet(spec, theta, pts)
    for k, name in enumerate(spec.output_names):
        np.testing.assert_allclose(jets[name].d1, np.broadcast_to(M[k], (20, 3)), atol=1e-14)
        np.testing.assert_allclose(jets[name].d2, 0.0, atol=1e-15)


def test_jet_values_match_numpy_forward():
    spec = NetworkSpec((3, 9, 7, 5), clamp_phi=True)
    theta = init_params(spec, 5)
    pts = np.random.default_rng(1).uniform(-1, 1, size=(30, 3))
    vals = forward(spec, theta, pts)
    jets = forward_jet(spec, theta, pts)
    for k, name in enumerate(spec.output_names):
        np.testing.assert_allclose(jets[name].value, vals[:, k], rtol=1e-14, atol=1e-14)


def test_jets_match_finite_differences_random_triples():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(100):
        depth = rng.integers(1, 4)
        widths = (3, *rng.integers(2, 12, size=depth), 5)
        spec = NetworkSpec(tuple(int(w) for w in widths), clamp_phi=bool(trial % 2))
        theta = init_params(spec, int(rng.integers(1 << 30)))
        theta.values[:] += 0.1 * rng.normal(size=theta.values.size)
        point = rng.uniform([0, 0, 0], [1, 1, 2])
        worst = max(worst, jet_fd_error(spec, theta, point, h=1e-4))
    assert worst <= 1e-5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.1, 30.0))
def test_clamped_phi_within_unit_interval(seed, scale):
    spec = NetworkSpec((3, 8, 5), clamp_phi=True)
    theta = init_params(spec, seed)
    theta.values[:] *= scale
    pts = np.random.default_rng(seed).uniform(-5, 5, size=(50, 3))
    phi = np.asarray(forward_jet(spec, theta, pts)["phi"].value)
    assert np.all(np.abs(phi) <= 1.0)


def test_jets_finite():
    spec = NetworkSpec((3, 8, 8, 5))
    theta = init_params(spec, 0)
    theta.values[:] *= 50
    jets = forward_jet(spec, theta, np.random.default_rng(0).uniform(-10, 10, (40, 3)))
    for j in jets.values():
        assert all(np.all(np.isfinite(np.asarray(a))) for a in j)


def test_forward_jet_rejects_wrong_theta():
    spec = NetworkSpec((3, 4, 5))
    with pytest.raises(ValueError):
        forward_jet(spec, np.zeros(spec.n_params + 1), np.zeros(3))


def test_loss_grad_quadratic_and_constant():
    spec = NetworkSpec((3, 4, 5))
    theta = init_params(spec, 0).values + 0.3
    val, g = loss_grad(spec, theta, lambda th: jnp.sum(th * th))
    assert val == pytest.approx(float(theta @ theta))
    np.testing.assert_allclose(g, 2 * theta, rtol=1e-15)
    _, g0 = loss_grad(spec, theta, lambda th: jnp.asarray(3.0))
    assert np.all(g0 == 0)


def test_loss_grad_non_finite_raises():
    spec = NetworkSpec((3, 4, 5))
    with pytest.raises(DivergenceError):
        loss_grad(spec, np.zeros(spec.n_params), lambda th: jnp.sum(th) + jnp.inf)


def _toy_nsch_loss(spec, seed=3):
    problem = ProblemConfig()
    batch = sample_batch(problem.domain, (64, 32, 32), seed)
    fn = make_loss_fn(spec, problem, LossWeights())
    arrays = batch.arrays()
    return lambda th: fn(th, arrays)[0]


def test_loss_grad_matches_finite_differences():
    spec = NetworkSpec((3, 8, 8, 5))
    assert spec.n_params <= 200
    theta = init_params(spec, 11).values
    loss = _toy_nsch_loss(spec)
    _, g = loss_grad(spec, theta, loss)
    h = 1e-5
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fd[i] = (float(loss(theta + e)) - float(loss(theta - e))) / (2 * h)
    mask = np.abs(g) > 1e-8
    rel = np.abs(g[mask] - fd[mask]) / np.abs(g[mask])
    assert rel.max() <= 1e-4


def test_loss_grad_descent_direction():
    spec = NetworkSpec((3, 8, 8, 5))
    theta = init_params(spec, 4).values
    loss = _toy_nsch_loss(spec, seed=9)
    val, g = loss_grad(spec, theta, loss)
    assert np.any(g != 0)
    assert float(loss(theta - 1e-6 * g)) < val


def test_checkpoint_roundtrip(tmp_path):
    spec = NetworkSpec((3, 6, 5))
    theta = init_params(spec, 9)
    path = save_checkpoint(tmp_path / "ck", spec, theta, seed=9, step=12, loss=0.5)
    raw = (tmp_path / "ck.bin").read_bytes()
    assert raw == theta.values.astype("<f8").tobytes()
    spec2, theta2, header = load_checkpoint(path)
    assert spec2 == spec
    assert theta2.values.tobytes() == theta.values.tobytes()
    assert header["step"] == 12 and header["loss"] == 0.5 and header["seed"] == 9
