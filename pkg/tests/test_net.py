import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnpunmix import autodiff as ad
from pnpunmix import net
from pnpunmix._errors import DivergenceError, FormatError, ParameterError
from pnpunmix.admm import AdmmConfig, AdmmState, iterate, update_A
from pnpunmix.data import AbundanceField, EndmemberMatrix, SynthSpec, add_noise, generate_synthetic
from pnpunmix.denoisers import DenoiserSpec
from pnpunmix.initialization import InitResult, initialize
from pnpunmix.metrics import align, armse

GAUSS = DenoiserSpec("gaussian", sigma=1.0)


def _problem(B=6, R=2, H=8, W=8, seed=0):
    rng = np.random.default_rng(seed)
    M = rng.uniform(0.1, 1.0, (B, R))
    A = rng.dirichlet(np.ones(R), H * W).T
    X = M @ A + 0.01 * rng.standard_normal((B, H * W))
    return X, InitResult(EndmemberMatrix(M), AbundanceField(A, H, W))


def _nodes(p):
    return p.map(ad.constant)


def _reflect_pad(x, p):
    return np.pad(x, ((0, 0), (p, p), (p, p)), mode="reflect")


# -- layers -------------------------------------------------------------------------

def test_layer_examples():
    c = ad.constant
    one = np.ones((1, 2, 2))
    den = DenoiserSpec("linear_scale", c=0.5)
    v = net.layer_V1(c(one), c(0 * one), c(2 * one), c(0.3), c(0.7), den).value
    np.testing.assert_allclose(v, 1.0)
    v = net.layer_V1(c(one), c(one), c(5 * one), c(0.0), c(1.0), den).value
    np.testing.assert_allclose(v, 2.0)
    D = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_allclose(net.layer_G(c(0 * D), c(D), c(0 * D), c(0.5)).value, 0.5 * D)
    np.testing.assert_array_equal(net.layer_G(c(D), c(D), c(D), c(0.9)).value, D)
    X, V2, G2 = (np.random.default_rng(i).random((4, 6 if i == 0 else 3)) for i in range(3))
    np.testing.assert_allclose(
        net.layer_M(c(V2), c(G2), c(X), c(np.zeros((6, 3))), c(np.eye(3))).value, G2 - V2)
    W2 = np.random.default_rng(5).random((6, 3))
    np.testing.assert_allclose(
        net.layer_M(c(V2), c(G2), c(X), c(W2), c(np.zeros((3, 3)))).value, X @ W2)
    mixed = np.array([[-1.0, 0.5]])
    np.testing.assert_array_equal(net.layer_V2(c(mixed), c(0 * mixed)).value, [[0, 0.5]])


def test_loss_examples():
    X = np.zeros((5, 7))
    assert net.reconstruction_loss(X, [X - 1.0], [1.0]) == pytest.approx(5 / 2)
    assert net.reconstruction_loss(X, [X] * 5, net.DEFAULT_BETA_K) == 0.0
    assert net.NetConfig().weights() == (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def test_forward_loss_matches_array_loss():
    X, init = _problem()
    cfg = net.NetConfig(K=3, denoiser=GAUSS)
    outputs, loss = net.PnPNet(X, (8, 8), cfg).forward(net.init_params(X, init, cfg),
                                                       net.NetState.from_init(init))
    want = net.reconstruction_loss(X, [o["Xhat"].value for o in outputs], cfg.weights())
    assert float(loss.value) == pytest.approx(want, rel=1e-12)


# -- attention and dynamic convolution ----------------------------------------------------

def test_corner_positions_belong_to_largest_branch():
    rng = np.random.default_rng(1)
    p = net.init_dcl(3, 2, (1, 3, 5), rng, 1.0)
    T = net.attention(ad.constant(rng.random((3, 6, 6))), _nodes(p)).value
    np.testing.assert_array_equal(T[:, 0, 0], [0, 0, 1])
    np.testing.assert_allclose(T.sum(axis=0), 1.0)
    assert T[0, 2, 2] > 0 and T[0, 1, 1] == 0


def test_single_identity_branch_is_identity():
    rng = np.random.default_rng(2)
    p = net.init_dcl(3, 3, (1,), rng, 0.5)
    p.kernels[0][:, :, 0, 0] = np.eye(3)
    x = rng.random((3, 5, 4))
    np.testing.assert_allclose(net.dcl_forward(ad.constant(x), _nodes(p)).value, x, atol=1e-15)


@pytest.mark.parametrize("branch", [0, 1, 2])
def test_saturated_attention_is_plain_convolution(branch):
    rng = np.random.default_rng(3)
    p = net.init_dcl(2, 3, (1, 3, 5), rng, 0.1)
    p.kernels = [rng.standard_normal(k.shape) for k in p.kernels]
    # outside branch l's footprint only larger branches are live, so their
    # weight there cannot be suppressed; zero those taps
    k = p.kernels[branch].shape[-1]
    for K in p.kernels[branch + 1:]:
        off = (K.shape[-1] - k) // 2
        inner = K[..., off:off + k, off:off + k].copy()
        K[:] = 0.0
        K[..., off:off + k, off:off + k] = inner
    net.saturate_attention(p, branch)
    x = ad.constant(rng.random((2, 7, 6)))
    got = net.dcl_forward(x, _nodes(p)).value
    want = ad.conv2d(x, ad.constant(p.kernels[branch])).value
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_dcl_matches_positionwise_loop_oracle():
    rng = np.random.default_rng(4)
    p = net.init_dcl(1, 1, (1, 3), rng, 1.0)
    p.kernels = [rng.standard_normal(k.shape) for k in p.kernels]
    x = rng.random((1, 4, 4))
    got = net.dcl_forward(ad.constant(x), _nodes(p)).value
    T = net.attention(ad.constant(x), _nodes(p)).value
    xp = _reflect_pad(x, 1)[0]
    want = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            for l, K in enumerate(p.kernels):
                k = K.shape[-1]
                off = (3 - k) // 2
                for u in range(k):
                    for v in range(k):
                        want[i, j] += (T[l, off + u, off + v] * K[0, 0, u, v]
                                       * xp[i + off + u, j + off + v])
    np.testing.assert_allclose(got[0], want, atol=1e-12)


# -- initialization ------------------------------------------------------------------------

def test_init_matches_closed_form():
    X, init = _problem(seed=5)
    cfg = net.NetConfig(K=2)
    params = net.init_params(X, init, cfg)
    M, A = init.endmembers.data, init.abundances.data
    lhs = np.linalg.inv(M.T @ M + cfg.alpha * np.eye(2))
    for blk in params:
        np.testing.assert_allclose(blk.W1.kernels[0][:, :, 0, 0], lhs @ M.T, atol=1e-12)
        np.testing.assert_allclose(blk.Q1.kernels[0][:, :, 0, 0], cfg.alpha * lhs, atol=1e-12)
        assert not any(k.any() for k in blk.W1.kernels[1:])
        gram = np.linalg.inv(A @ A.T + cfg.beta * np.eye(2))
        np.testing.assert_allclose(blk.W2, A.T @ gram, atol=1e-12)
        np.testing.assert_allclose(blk.Q2, -cfg.beta * gram, atol=1e-12)
        assert (float(blk.theta1), float(blk.theta3)) == (0.5, 0.1)
    assert cfg.alpha == AdmmConfig().alpha


def test_initial_loss_below_zero_parameters():
    X, init = _problem(seed=6)
    cfg = net.NetConfig(K=5, denoiser=GAUSS)
    _, loss = net.PnPNet(X, (8, 8), cfg).forward(net.init_params(X, init, cfg),
                                                 net.NetState.from_init(init))
    zero = sum(cfg.weights()) * np.sum(X ** 2) / (2 * X.shape[1])
    assert np.isfinite(loss.value) and float(loss.value) < zero


def test_init_rejects_mismatch():
    X, init = _problem()
    with pytest.raises(ParameterError):
        net.init_params(X[:, :10], init, net.NetConfig())
    with pytest.raises(ParameterError):
        net.init_params(X, init, net.NetConfig(kernel_sizes=(3, 5)))


# -- block equals one ADMM iteration ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_block_reproduces_admm_iteration(seed):
    X, init = _problem(B=7, R=3, H=6, W=5, seed=seed)
    rng = np.random.default_rng(100 + seed)
    alpha, beta, lam, eta1, eta2 = 0.3, 0.2, 0.4, 0.7, 0.9
    M0, A0 = init.endmembers.data, init.abundances.data
    st = AdmmState(M=M0, A=A0, V1=A0 + 0.05 * rng.standard_normal(A0.shape),
                   G1=0.02 * rng.standard_normal(A0.shape),
                   V2=M0 + 0.05 * rng.random(M0.shape), G2=0.02 * rng.standard_normal(M0.shape))
    admm_cfg = AdmmConfig(alpha=alpha, beta=beta, lam=lam, eta1=eta1, eta2=eta2,
                          denoiser=GAUSS, projection="none")
    want = iterate(X, st, admm_cfg, (6, 5))

    cfg = net.NetConfig(K=1, alpha=alpha, beta=beta, denoiser=GAUSS, projection="none")
    # the endmember layer is built from the abundances of the same sweep
    A_new = update_A(X, M0, st.V1, st.G1, alpha)
    theta = (lam / (lam + alpha), alpha / (lam + alpha), eta1, eta2)
    blk = net.closed_form_block(M0, A0, alpha, beta, theta, cfg, rng)
    blk = dataclasses.replace(blk, **{k: v for k, v in
                                      zip(("W2", "Q2"), (A_new.T @ np.linalg.inv(
                                          A_new @ A_new.T + beta * np.eye(3)),
                                          -beta * np.linalg.inv(A_new @ A_new.T
                                                                + beta * np.eye(3))))})
    net.saturate_attention(blk.W1, 0)
    net.saturate_attention(blk.Q1, 0)
    state = net.NetState(V1=st.V1.reshape(3, 6, 5), G1=st.G1.reshape(3, 6, 5), V2=st.V2, G2=st.G2)
    out = net.PnPNet(X, (6, 5), cfg).forward([blk], state)[0][0]
    for name in ("A", "M", "V2", "G2"):
        np.testing.assert_allclose(out[name].value, getattr(want, name), atol=1e-8)
    for name in ("V1", "G1"):
        np.testing.assert_allclose(out[name].value.reshape(3, -1), getattr(want, name), atol=1e-8)


# -- gradients and invariants ----------------------------------------------------------------------

def test_full_block_gradient_matches_finite_differences():
    X, init = _problem(B=6, R=2, H=8, W=8, seed=7)
    cfg = net.NetConfig(K=1, denoiser=GAUSS, attention_scale=0.5)
    params = net.init_params(X, init, cfg)
    rng = np.random.default_rng(0)
    # nonzero larger kernels so every tensor carries gradient
    params = [params[0].map(lambda a: a + 0.05 * rng.standard_normal(a.shape))]
    state = net.NetState.from_init(init)
    model = net.PnPNet(X, (8, 8), cfg)
    _, loss = model.forward(params, state, requires_grad=True)
    loss.backward()
    grads = net._leaf_grads(model)
    arrays = [a for _, a in net.named_arrays(params)]
    names = [n for n, _ in net.named_arrays(params)]
    step = 1e-4
    worst = {}
    for name, a, g in zip(names, arrays, grads):
        flat, gflat = a.reshape(-1), g.reshape(-1)
        idx = rng.choice(flat.size, size=min(flat.size, 12), replace=False)
        fd = []
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(model.forward(params, state)[1].value)
            flat[i] = orig - step
            down = float(model.forward(params, state)[1].value)
            flat[i] = orig
            fd.append((up - down) / (2 * step))
        fd = np.array(fd)
        scale = max(np.abs(fd).max(), np.abs(gflat[idx]).max(), 1e-10)
        worst[name] = np.abs(fd - gflat[idx]).max() / scale
    assert max(worst.values()) < 1e-4, worst


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 3), st.integers(1, 3))
def test_forward_invariants(seed, R, K):
    rng = np.random.default_rng(seed)
    X, init = _problem(B=4, R=R, H=4, W=5, seed=seed)
    cfg = net.NetConfig(K=K, denoiser=GAUSS, attention_scale=1.0)
    params = [b.map(lambda a: a + rng.standard_normal(a.shape))
              for b in net.init_params(X, init, cfg)]
    outputs, loss = net.PnPNet(X, (4, 5), cfg).forward(params, net.NetState.from_init(init))
    assert np.isfinite(loss.value)
    for o in outputs:
        np.testing.assert_allclose(o["A"].value.sum(axis=0), 1.0, atol=1e-12)
        assert o["A"].value.min() >= 0
        assert o["V2"].value.min() >= 0


def test_forward_is_deterministic():
    X, init = _problem(seed=8)
    cfg = net.NetConfig(K=2, denoiser=DenoiserSpec("nlm", search_radius=2))
    a = net.PnPNet(X, (8, 8), cfg).forward(net.init_params(X, init, cfg),
                                           net.NetState.from_init(init))[0]
    b = net.PnPNet(X, (8, 8), cfg).forward(net.init_params(X, init, cfg),
                                           net.NetState.from_init(init))[0]
    for oa, ob in zip(a, b):
        np.testing.assert_array_equal(oa["A"].value, ob["A"].value)
        np.testing.assert_array_equal(oa["M"].value, ob["M"].value)


def test_default_output_shapes():
    cfg = net.NetConfig()
    assert cfg.K == 5 and cfg.kernel_sizes == (1, 3, 5) and cfg.lr == 5e-4
    X, init = _problem(B=9, R=4, H=5, W=6, seed=9)
    outputs, _ = net.PnPNet(X, (5, 6), cfg).forward(net.init_params(X, init, cfg),
                                                    net.NetState.from_init(init))
    assert len(outputs) == 5
    assert all(o["M"].shape == (9, 4) and o["A"].shape == (4, 30) for o in outputs)


# -- training ----------------------------------------------------------------------------------------

def test_single_endmember_noiseless_fit():
    m = np.linspace(0.2, 0.9, 8)[:, None]
    X = m @ np.ones((1, 36))
    init = initialize(X, 1, (6, 6))
    res = net.train(X, net.NetConfig(K=2, epochs=200, denoiser=GAUSS), init)
    assert res.history[-1] < 1e-8


def test_training_reduces_loss_and_is_deterministic():
    X, init = _problem(seed=10)
    cfg = net.NetConfig(K=2, epochs=30, denoiser=GAUSS)
    a = net.train(X, cfg, init)
    b = net.train(X, cfg, init)
    assert a.history[-1] < a.history[0]
    assert a.history == b.history
    np.testing.assert_array_equal(a.A, b.A)


def test_divergence_is_detected():
    X, init = _problem(seed=11)
    cfg = net.NetConfig(K=1, epochs=50, lr=50.0, denoiser=GAUSS)
    with pytest.raises(DivergenceError) as err:
        net.train(X, cfg, init)
    assert len(err.value.history) >= 1


@pytest.mark.slow
def test_small_scene_beats_initialization():
    cube, M, A = generate_synthetic(SynthSpec(height=30, width=30, endmember_count=3, seed=0))
    X = add_noise(cube, 20.0, seed=1).matrix()
    init = initialize(X, 3, (30, 30), seed=0)
    p0 = align(init.endmembers.data, M.data)
    base = armse(A.data, init.abundances.data[p0])
    res = net.train(X, net.NetConfig(K=3, epochs=300, denoiser=GAUSS), init)
    p = align(res.M, M.data)
    assert armse(A.data, res.A[p]) < base


# -- persistence and estimator -------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    X, init = _problem(seed=12)
    cfg = net.NetConfig(K=2, denoiser=GAUSS, seed=3)
    params = net.init_params(X, init, cfg)
    state = net.NetState.from_init(init)
    path = tmp_path / "c.pnpnet"
    net.save_checkpoint(path, params, cfg, state)
    got, cfg2, state2, header = net.load_checkpoint(path)
    assert cfg2 == cfg and header["seed"] == 3
    for (n1, a1), (n2, a2) in zip(net.named_arrays(params), net.named_arrays(got)):
        assert n1 == n2
        np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(state2.V1, state.V1)
    raw = path.read_bytes()
    (tmp_path / "bad").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        net.load_checkpoint(tmp_path / "bad")


def test_history_csv(tmp_path):
    net.write_history([3.0, 2.5], tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines() == ["epoch,loss", "1,3.0", "2,2.5"]


def test_config_validation():
    with pytest.raises(ParameterError):
        net.NetConfig(K=0).validate()
    with pytest.raises(ParameterError):
        net.NetConfig(K=3, beta_k=(1.0, 1.0)).validate()
    with pytest.raises(ParameterError):
        net.NetConfig(lr=0).validate()
    with pytest.raises(ParameterError):
        net.NetConfig(kernel_sizes=(3, 1)).validate()
    cfg = net.NetConfig(K=2, denoiser=DenoiserSpec("median"))
    assert net.NetConfig.from_dict(cfg.to_dict()) == cfg


def test_estimator_api():
    X, init = _problem(B=6, R=2, H=6, W=6, seed=13)
    est = net.PnPNetUnmixer(n_endmembers=2, image_shape=(6, 6), n_blocks=2, epochs=5)
    out = est.fit_transform(X.T)
    assert out.shape == (36, 2)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    np.testing.assert_allclose(est.transform(X.T), out)
    assert est.inverse_transform(out).shape == (36, 6)
    assert len(est.history_) == 5
