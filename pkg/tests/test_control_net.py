import numpy as np
import pytest

from pdecontrol import assembly, control_net as cn
from pdecontrol.errors import CacheMismatch, NonFiniteError
from pdecontrol.optim import Adam, plateau_triggered


@pytest.fixture
def small_arch():
    return cn.ControlArch(input_dim=4, width=8, depth=3)


def make_net(arch, seed=0, jitter=0.0, rng=None):
    xi = cn.init_control_params(arch, seed)
    if jitter:
        xi = xi + jitter * rng.standard_normal(xi.size)
    return cn.ControlNet(arch, xi)


def test_gelu_values():
    assert cn.gelu(0.0) == 0.0
    # GeLU(x) ~ x for large x, ~0 for very negative x
    assert cn.gelu(10.0) == pytest.approx(10.0, rel=1e-8)
    assert abs(cn.gelu(-10.0)) < 1e-8
    # derivative at 0 is Phi(0) = 1/2
    assert cn.gelu_deriv(0.0) == pytest.approx(0.5)


def test_zero_init_is_zero_field(small_arch, rng):
    net = make_net(small_arch)
    TH = rng.uniform(-1, 1, (6, 4))
    assert np.all(cn.forward(net, TH) == 0.0)


def test_param_count_and_layout(small_arch):
    n = cn.control_param_count(small_arch)
    m, w = 4, 8
    expect = (w * m + w) + 2 * (w * w + w + w * m + w) + (m * w + m)
    assert n == expect
    xi = cn.init_control_params(small_arch, 0)
    assert xi.shape == (n,)


def test_forward_jvp_consistency(small_arch, rng):
    net = make_net(small_arch, jitter=0.3, rng=rng)
    TH = rng.uniform(-1, 1, (5, 4))
    V = rng.standard_normal((5, 4))
    jv = cn.jvp_theta(net, TH, V)
    h = 1e-6
    fd = (cn.forward(net, TH + h * V) - cn.forward(net, TH - h * V)) / (2 * h)
    assert np.abs(jv - fd).max() < 1e-5


def test_vjp_matches_jvp(small_arch, rng):
    net = make_net(small_arch, jitter=0.3, rng=rng)
    TH = rng.uniform(-1, 1, (4, 4))
    V = rng.standard_normal((4, 4))
    U = rng.standard_normal((4, 4))
    lhs = np.sum(cn.jvp_theta(net, TH, V) * U, axis=1)
    rhs = np.sum(cn.vjp_theta(net, TH, U) * V, axis=1)
    assert np.allclose(lhs, rhs, rtol=1e-10)


def test_loss_l1_trivial_cases(small_arch, rng):
    net = make_net(small_arch)  # zero field
    recs = [
        assembly.GramRecord(theta=rng.uniform(-1, 1, 4), gram=np.eye(4), rhs=np.zeros(4), n_x=1, seed=0)
        for _ in range(3)
    ]
    loss, grad = cn.loss_l1(net, recs)
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_loss_l2_zero_net_unit_targets():
    arch = cn.ControlArch(input_dim=3, width=4, depth=2)
    net = cn.ControlNet(arch, cn.init_control_params(arch, 0))
    loss, _ = cn.loss_l2(net, (np.zeros((5, 3)), np.ones((5, 3))))
    assert loss == pytest.approx(3.0)


def test_loss_gradients_match_fd(small_arch, rng):
    net = make_net(small_arch, jitter=0.2, rng=rng)
    recs = []
    for _ in range(3):
        A = rng.standard_normal((4, 4))
        recs.append(
            assembly.GramRecord(
                theta=rng.uniform(-1, 1, 4), gram=A @ A.T / 4, rhs=rng.standard_normal(4), n_x=1, seed=0
            )
        )
    pairs = (rng.uniform(-1, 1, (4, 4)), rng.standard_normal((4, 4)))
    _, g1 = cn.loss_l1(net, recs)
    _, g2 = cn.loss_l2(net, pairs)
    h = 1e-6
    xi = net.xi
    for j in rng.choice(xi.size, 30, replace=False):
        xp, xm = xi.copy(), xi.copy()
        xp[j] += h
        xm[j] -= h
        for grad, loss_fn in ((g1, lambda n: cn.loss_l1(n, recs)[0]), (g2, lambda n: cn.loss_l2(n, pairs)[0])):
            fd = (loss_fn(cn.ControlNet(small_arch, xp)) - loss_fn(cn.ControlNet(small_arch, xm))) / (2 * h)
            assert abs(grad[j] - fd) <= 1e-4 * max(abs(fd), 1e-3)


def test_adam_first_step_magnitude(rng):
    grad = rng.standard_normal(10)
    adam = Adam(10, lr=1e-3)
    params = np.zeros(10)
    new = adam.step(params, grad)
    # bias-corrected first step is lr * sign(g) up to adam_eps
    assert np.allclose(np.abs(new), 1e-3, rtol=1e-4)
    assert np.allclose(np.sign(new), -np.sign(grad))


def test_plateau_detector_iff():
    # strictly decreasing by 1% per step: mean pct decrease ~1 >= 0.1 -> no stop
    decreasing = [100.0 * (0.99**k) for k in range(200)]
    assert not plateau_triggered(decreasing, 100, 0.1)
    # flat trace: mean pct decrease 0 < 0.1 -> stop
    flat = [1.0] * 200
    assert plateau_triggered(flat, 100, 0.1)
    # insufficient history never triggers
    assert not plateau_triggered([1.0] * 50, 100, 0.1)
    # exactly at the threshold is not below it
    exact = [100.0]
    for _ in range(150):
        exact.append(exact[-1] * (1 - 0.001))
    assert not plateau_triggered(exact, 100, 0.1 - 1e-9)
    assert plateau_triggered(exact, 100, 0.2)


def _toy_records(rng, n, m=4, scale=0.05):
    # exact-quadrature heat records on a small box: G = I, p = D theta
    D = -np.array([(k * np.pi) ** 2 for k in range(1, m + 1)])
    recs = []
    for _ in range(n):
        th = rng.uniform(-scale, scale, m)
        recs.append(assembly.GramRecord(theta=th, gram=np.eye(m), rhs=D * th, n_x=1, seed=0))
    return recs


def test_train_toy_linear_field_reaches_tolerance(rng):
    # the exact field is linear, so the loss should collapse quickly
    recs = _toy_records(rng, 256)
    arch = cn.ControlArch(input_dim=4, width=48, depth=2)
    net = cn.ControlNet(arch, cn.init_control_params(arch, 1))
    cfg = cn.TrainConfig(
        lr=1e-2, zeta=0.0, batch_size=0, stop_loss=1e-3, stop_plateau_pct=None, max_steps=5000, seed=3
    )
    net, history = cn.train(net, recs, None, cfg)
    assert history[-1][3] < 1e-3
    assert len(history) <= 5000


def test_train_determinism(rng):
    recs = _toy_records(rng, 64)
    arch = cn.ControlArch(input_dim=4, width=16, depth=2)
    cfg = cn.TrainConfig(lr=1e-3, zeta=0.0, batch_size=16, stop_loss=0.0, stop_plateau_pct=None, max_steps=60, seed=9)
    net1, h1 = cn.train(cn.ControlNet(arch, cn.init_control_params(arch, 2)), recs, None, cfg)
    net2, h2 = cn.train(cn.ControlNet(arch, cn.init_control_params(arch, 2)), recs, None, cfg)
    assert net1.xi.tobytes() == net2.xi.tobytes()
    assert h1 == h2


def test_zeta_zero_matches_pure_l1(rng):
    recs = _toy_records(rng, 64)
    arch = cn.ControlArch(input_dim=4, width=16, depth=2)
    cfg0 = cn.TrainConfig(lr=1e-3, zeta=0.0, batch_size=0, stop_loss=0.0, stop_plateau_pct=None, max_steps=40, seed=5)
    pairs = (np.zeros((0, 4)), np.zeros((0, 4)))
    net_a, _ = cn.train(cn.ControlNet(arch, cn.init_control_params(arch, 7)), recs, None, cfg0)
    net_b, _ = cn.train(cn.ControlNet(arch, cn.init_control_params(arch, 7)), recs, pairs, cfg0)
    cfg_z = cn.TrainConfig(lr=1e-3, zeta=0.1, batch_size=0, stop_loss=0.0, stop_plateau_pct=None, max_steps=40, seed=5)
    net_c, _ = cn.train(cn.ControlNet(arch, cn.init_control_params(arch, 7)), recs, pairs, cfg_z)
    assert net_a.xi.tobytes() == net_b.xi.tobytes() == net_c.xi.tobytes()


def test_train_rejects_mismatched_cache(rng):
    recs = _toy_records(rng, 8, m=4)
    arch = cn.ControlArch(input_dim=5, width=8, depth=2)
    with pytest.raises(CacheMismatch):
        cn.train(cn.ControlNet(arch, cn.init_control_params(arch, 0)), recs, None, cn.TrainConfig(max_steps=5))


def test_train_nonfinite_divergence(rng):
    recs = [
        assembly.GramRecord(theta=np.full(2, 1e160), gram=np.eye(2) * 1e160, rhs=np.zeros(2), n_x=1, seed=0)
    ]
    arch = cn.ControlArch(input_dim=2, width=4, depth=2)
    xi = cn.init_control_params(arch, 0)
    xi[-2:] = 1e160  # output bias enormous
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NonFiniteError):
        cn.train(cn.ControlNet(arch, xi), recs, None, cn.TrainConfig(max_steps=5, stop_loss=0.0, stop_plateau_pct=None))


def test_residual_scan_zero_when_exact(rng):
    # constant rhs with identity grams: output bias = p gives an exact fit
    m = 3
    p = rng.standard_normal(m)
    recs = [
        assembly.GramRecord(theta=rng.uniform(-1, 1, m), gram=np.eye(m), rhs=p.copy(), n_x=1, seed=0)
        for _ in range(4)
    ]
    arch = cn.ControlArch(input_dim=m, width=4, depth=2)
    xi = cn.init_control_params(arch, 0)
    xi[-m:] = p  # output bias
    net = cn.ControlNet(arch, xi)
    loss, _ = cn.loss_l1(net, recs)
    assert loss < 1e-28
    assert np.all(cn.residual_scan(net, recs) < 1e-14)


def test_checkpoint_roundtrip(tmp_path, small_arch, rng):
    net = make_net(small_arch, jitter=0.1, rng=rng)
    path = tmp_path / "control.json"
    cn.save_control_checkpoint(net, path)
    loaded = cn.load_control_checkpoint(path)
    assert loaded.arch == small_arch
    assert np.array_equal(loaded.xi, net.xi)


def test_loss_history_csv(tmp_path):
    history = [(1, 0.5, 0.25, 0.525), (2, 0.4, 0.2, 0.42)]
    path = tmp_path / "hist.csv"
    cn.save_loss_history(history, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "step,l1,l2,l_total"
    assert lines[1].startswith("1,0.5,0.25,")
