import numpy as np
import pytest

from bdistill import nn
from bdistill.errors import InputError, ShapeError


def manual_params(weights, biases, activation="tanh"):
    return nn.PolicyParams(
        [np.asarray(w, dtype=np.float64) for w in weights],
        [np.asarray(b, dtype=np.float64) for b in biases],
        activation,
    )


def straight_line_forward(params, obs):
    """Independent re-implementation: explicit loops, no shared code paths."""
    outputs = []
    for row in obs:
        h = list(row)
        for layer in range(len(params.weights)):
            w = params.weights[layer]
            b = params.biases[layer]
            z = []
            for j in range(w.shape[1]):
                acc = float(b[j])
                for i in range(w.shape[0]):
                    acc += float(h[i]) * float(w[i, j])
                z.append(acc)
            if layer < len(params.weights) - 1:
                if params.activation == "tanh":
                    h = [np.tanh(v) for v in z]
                else:
                    h = [max(v, 0.0) for v in z]
            else:
                h = z
        outputs.append(h)
    return np.array(outputs)


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central finite differences over every parameter (float64 path)."""
    flat = nn.flatten_params(params)
    grads = np.zeros_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += h
        down = flat.copy()
        down[i] -= h
        grads[i] = (
            loss_fn(nn.params_from_flat(up, params))
            - loss_fn(nn.params_from_flat(down, params))
        ) / (2.0 * h)
    return grads


def max_relative_error(analytic, reference):
    denom = np.maximum(np.abs(reference), 1e-6)
    return (np.abs(analytic - reference) / denom).max()


def random_policy(rng, out_dim=None, activation=None):
    obs_dim = int(rng.integers(1, 5))
    width = int(rng.integers(2, 9))
    out = out_dim if out_dim is not None else int(rng.integers(2, 5))
    act = activation or ("tanh" if rng.random() < 0.5 else "relu")
    params = nn.init_policy(obs_dim, width, out, act, seed=int(rng.integers(0, 2**31)))
    return params.astype(np.float64)


def away_from_relu_kinks(params, obs, margin=1e-3):
    """Central differences are invalid within h of a relu kink; reject those."""
    if params.activation != "relu":
        return True
    h = obs
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ w + b
        if np.abs(z).min() < margin:
            return False
        h = np.maximum(z, 0.0)
    return True


def random_fd_case(rng, a_dim=None):
    while True:
        out_dim = None if a_dim is None else 2 * a_dim
        params = random_policy(rng, out_dim=out_dim)
        n = int(rng.integers(1, 6))
        obs = rng.normal(size=(n, params.obs_dim))
        if away_from_relu_kinks(params, obs):
            return params, obs


# --- forward ----------------------------------------------------------------

def test_forward_zero_weights_gives_zero_outputs():
    params = nn.init_policy(4, 8, 3, "tanh", seed=0)
    for w in params.weights:
        w[:] = 0.0
    obs = np.random.default_rng(1).normal(size=(5, 4)).astype(np.float32)
    out = nn.forward(params, obs)
    assert np.all(out == 0.0)


def test_forward_single_unit_tanh_matches_scalar_math():
    w = 0.7
    params = manual_params([[[w]], [[1.0]]], [[0.0], [0.0]], "tanh")
    for x in (-2.0, -0.3, 0.0, 1.5):
        out = nn.forward(params, np.array([[x]]))
        assert out[0, 0] == pytest.approx(np.tanh(w * x), abs=1e-12)


def test_forward_matches_straight_line_reimplementation():
    rng = np.random.default_rng(7)
    for _ in range(5):
        params = random_policy(rng)
        obs = rng.normal(size=(4, params.obs_dim))
        expected = straight_line_forward(params, obs)
        got = nn.forward(params, obs)
        np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-12)


def test_forward_is_batch_order_equivariant():
    rng = np.random.default_rng(3)
    params = random_policy(rng)
    obs = rng.normal(size=(6, params.obs_dim))
    perm = rng.permutation(6)
    np.testing.assert_array_equal(nn.forward(params, obs)[perm], nn.forward(params, obs[perm]))


def test_forward_shape_mismatch_raises():
    params = nn.init_policy(4, 8, 2, seed=0)
    with pytest.raises(ShapeError):
        nn.forward(params, np.zeros((3, 5)))


# --- discrete BC loss -------------------------------------------------------

def test_discrete_loss_zero_weights_is_log_n_actions():
    params = nn.init_policy(4, 8, 2, "tanh", seed=0).astype(np.float64)
    for w in params.weights:
        w[:] = 0.0
    obs = np.random.default_rng(0).normal(size=(6, 4))
    loss, _ = nn.bc_loss_discrete(params, obs, np.array([0, 1, 0, 1, 1, 0]))
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_discrete_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(50):
        params, obs = random_fd_case(rng)
        labels = rng.integers(0, params.out_dim, size=obs.shape[0])
        loss, grads = nn.bc_loss_discrete(params, obs, labels)
        fd = finite_difference_grads(
            lambda p: nn.bc_loss_discrete(p, obs, labels)[0], params
        )
        assert max_relative_error(nn.flatten_params(grads), fd) <= 1e-4


def test_discrete_loss_invariant_under_batch_duplication():
    rng = np.random.default_rng(5)
    params = random_policy(rng)
    obs = rng.normal(size=(3, params.obs_dim))
    labels = rng.integers(0, params.out_dim, size=3)
    loss1, g1 = nn.bc_loss_discrete(params, obs, labels)
    loss2, g2 = nn.bc_loss_discrete(
        params, np.concatenate([obs, obs]), np.concatenate([labels, labels])
    )
    assert loss2 == pytest.approx(loss1, rel=1e-12)
    np.testing.assert_allclose(
        nn.flatten_params(g2), nn.flatten_params(g1), rtol=1e-10, atol=1e-14
    )


def test_discrete_label_out_of_range_rejected():
    params = nn.init_policy(2, 4, 3, seed=0)
    with pytest.raises(InputError):
        nn.bc_loss_discrete(params, np.zeros((2, 2)), np.array([0, 3]))


def test_discrete_empty_batch_rejected():
    params = nn.init_policy(2, 4, 3, seed=0)
    with pytest.raises(InputError):
        nn.bc_loss_discrete(params, np.zeros((0, 2)), np.array([], dtype=int))


# --- continuous BC loss -----------------------------------------------------

def test_continuous_loss_at_optimum_is_half_log_2pi():
    # All-zero network: mean = 0 = target, log-std = 0.
    params = nn.init_policy(3, 8, 4, "tanh", seed=0).astype(np.float64)
    for w in params.weights:
        w[:] = 0.0
    obs = np.random.default_rng(2).normal(size=(5, 3))
    loss, _ = nn.bc_loss_continuous(params, obs, np.zeros((5, 2)))
    assert loss == pytest.approx(0.5 * np.log(2.0 * np.pi), abs=1e-12)


def test_continuous_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    for _ in range(50):
        a_dim = int(rng.integers(1, 3))
        params, obs = random_fd_case(rng, a_dim=a_dim)
        targets = rng.normal(size=(obs.shape[0], a_dim))
        loss, grads = nn.bc_loss_continuous(params, obs, targets)
        fd = finite_difference_grads(
            lambda p: nn.bc_loss_continuous(p, obs, targets)[0], params
        )
        assert max_relative_error(nn.flatten_params(grads), fd) <= 1e-4


def test_continuous_loss_increases_with_log_std_at_matched_mean():
    params = nn.init_policy(3, 8, 2, "tanh", seed=0).astype(np.float64)
    for w in params.weights:
        w[:] = 0.0
    obs = np.random.default_rng(4).normal(size=(4, 3))
    targets = np.zeros((4, 1))
    losses = []
    for c in (0.0, 1.0, 5.0):
        params.biases[-1][1] = c  # log-std head offset
        losses.append(nn.bc_loss_continuous(params, obs, targets)[0])
    assert losses[0] < losses[1] < losses[2]


def test_continuous_nonfinite_targets_rejected():
    params = nn.init_policy(2, 4, 2, seed=0)
    with pytest.raises(InputError):
        nn.bc_loss_continuous(params, np.zeros((1, 2)), np.array([[np.nan]]))


# --- Adam -------------------------------------------------------------------

def test_adam_zero_gradient_is_fixed_point_for_params():
    params = nn.init_policy(3, 4, 2, seed=1).astype(np.float64)
    state = nn.init_adam(params.n_params, lr=0.01, dtype=np.float64)
    state.m[:] = 0.3  # pre-loaded moments must decay, params must not move
    zero = nn.PolicyParams(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
        params.activation,
    )
    # Fresh optimizer: zero gradient, zero moments -> exact fixed point.
    fresh = nn.init_adam(params.n_params, lr=0.01, dtype=np.float64)
    new_state, new_params = nn.adam_step(fresh, params, zero, max_grad_norm=0.5)
    np.testing.assert_array_equal(nn.flatten_params(new_params), nn.flatten_params(params))
    assert np.all(new_state.m == 0.0)
    # Pre-loaded moments decay by beta1.
    decayed, _ = nn.adam_step(state, params, zero)
    np.testing.assert_allclose(decayed.m, 0.3 * state.beta1)


def test_adam_first_step_is_lr_times_sign():
    params = nn.init_policy(2, 3, 2, seed=2).astype(np.float64)
    rng = np.random.default_rng(8)
    g = rng.normal(size=params.n_params)
    g[np.abs(g) < 1e-3] = 0.5  # keep gradients away from zero
    grads = nn.params_from_flat(g, params)
    state = nn.init_adam(params.n_params, lr=0.01, dtype=np.float64)
    _, new_params = nn.adam_step(state, params, grads)
    # Hand-computed single step: m_hat = g, v_hat = g^2, so the update is
    # lr * g / (|g| + eps) = lr * sign(g) up to the eps term.
    expected = nn.flatten_params(params) - 0.01 * g / (np.abs(g) + state.eps)
    np.testing.assert_allclose(nn.flatten_params(new_params), expected, rtol=1e-12)
    step = nn.flatten_params(new_params) - nn.flatten_params(params)
    np.testing.assert_allclose(step, -0.01 * np.sign(g), rtol=1e-4)


def test_gradient_clipping_caps_global_norm():
    g = np.ones(100) * 1.0  # norm 10
    clipped = nn.clip_global_norm(g, 0.5)
    assert np.linalg.norm(clipped) == pytest.approx(0.5, rel=1e-6)
    # Norm below the cap is untouched.
    small = np.ones(4) * 0.1
    np.testing.assert_array_equal(nn.clip_global_norm(small, 0.5), small)
