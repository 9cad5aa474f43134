"""The learned velocity field over parameter space: a gated residual network
with analytic backpropagation, the projection/trajectory losses, and the
training loop.

Layers:
    eta_0 = tanh(U_0 theta + b_0)
    eta_l = eta_{l-1} + GeLU(Ubar_l theta + bbar_l) * tanh(U_l eta_{l-1} + b_l)
    V(theta) = W_out eta_{depth-1} + b_out
with GeLU(x) = x Phi(x), Phi the standard normal CDF (exact erf form). The
gate reads the raw input theta, not the running state.

Flat parameter layout (frozen; checkpoints depend on it):
    xi = [U_0, b_0, {U_l, b_l, Ubar_l, bbar_l} per block, W_out, b_out]
with matrices stored row-major. The output layer is zero-initialized so a
fresh net is the zero field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import CacheMismatch, NonFiniteError
from .optim import Adam, plateau_triggered
from .sampling import rng_for

FORMAT_VERSION = 1

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_deriv(x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


@dataclass(frozen=True)
class ControlArch:
    input_dim: int
    width: int
    depth: int

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")

    @property
    def n_blocks(self) -> int:
        return self.depth - 1


def control_param_count(arch: ControlArch) -> int:
    m, w = arch.input_dim, arch.width
    per_block = w * w + w + w * m + w
    return (w * m + w) + arch.n_blocks * per_block + (m * w + m)


def control_arch_hash(arch: ControlArch) -> str:
    blob = json.dumps(
        {"input_dim": arch.input_dim, "width": arch.width, "depth": arch.depth},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _unpack(arch: ControlArch, xi: np.ndarray):
    m, w = arch.input_dim, arch.width
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = xi[pos : pos + size].reshape(shape)
        pos += size
        return out

    U0 = take((w, m))
    b0 = take((w,))
    blocks = []
    for _ in range(arch.n_blocks):
        U = take((w, w))
        b = take((w,))
        Ug = take((w, m))
        bg = take((w,))
        blocks.append((U, b, Ug, bg))
    W_out = take((m, w))
    b_out = take((m,))
    assert pos == xi.shape[0]
    return U0, b0, blocks, W_out, b_out


@dataclass(frozen=True)
class ControlNet:
    arch: ControlArch
    xi: np.ndarray

    def __post_init__(self):
        xi = np.ascontiguousarray(self.xi, dtype=np.float64)
        object.__setattr__(self, "xi", xi)
        expect = control_param_count(self.arch)
        if xi.shape != (expect,):
            raise ValueError(f"xi must have shape ({expect},), got {xi.shape}")

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        return forward(self, theta)


def init_control_params(arch: ControlArch, seed: int) -> np.ndarray:
    """Fan-in uniform hidden weights, zero biases, zero output layer."""
    rng = rng_for(seed, stream=1)
    m, w = arch.input_dim, arch.width
    chunks = [rng.uniform(-1, 1, w * m) * np.sqrt(1.0 / m), np.zeros(w)]
    for _ in range(arch.n_blocks):
        chunks.append(rng.uniform(-1, 1, w * w) * np.sqrt(1.0 / w))
        chunks.append(np.zeros(w))
        chunks.append(rng.uniform(-1, 1, w * m) * np.sqrt(1.0 / m))
        chunks.append(np.zeros(w))
    chunks.append(np.zeros(m * w))
    chunks.append(np.zeros(m))
    return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# forward / backward


def _forward_cached(net: ControlNet, TH: np.ndarray):
    U0, b0, blocks, W_out, b_out = _unpack(net.arch, net.xi)
    H = np.tanh(TH @ U0.T + b0)
    cache = {"H0": H, "TH": TH, "gates": [], "tanhs": [], "h_in": [], "pre_gate": []}
    for U, b, Ug, bg in blocks:
        R = TH @ Ug.T + bg
        gate = gelu(R)
        T = np.tanh(H @ U.T + b)
        cache["h_in"].append(H)
        cache["pre_gate"].append(R)
        cache["gates"].append(gate)
        cache["tanhs"].append(T)
        H = H + gate * T
    out = H @ W_out.T + b_out
    cache["H_last"] = H
    return out, cache, (U0, b0, blocks, W_out, b_out)


def forward(net: ControlNet, theta) -> np.ndarray:
    """V(theta); accepts a single vector (m,) or a batch (n, m)."""
    th = np.asarray(theta, dtype=np.float64)
    single = th.ndim == 1
    TH = th[None, :] if single else th
    if TH.shape[1] != net.arch.input_dim:
        raise ValueError("theta dimension does not match the control net")
    out, _, _ = _forward_cached(net, TH)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("control field evaluation overflowed")
    return out[0] if single else out


def _backward_xi(net: ControlNet, cache, params, dout: np.ndarray) -> np.ndarray:
    """Gradient of sum(dout * out) with respect to the flat xi."""
    U0, b0, blocks, W_out, b_out = params
    TH = cache["TH"]
    grads = np.empty_like(net.xi)
    m, w = net.arch.input_dim, net.arch.width

    gW_out = dout.T @ cache["H_last"]
    gb_out = dout.sum(axis=0)
    dH = dout @ W_out

    block_grads = []
    for k in range(net.arch.n_blocks - 1, -1, -1):
        U, b, Ug, bg = blocks[k]
        gate, T, R, H_in = cache["gates"][k], cache["tanhs"][k], cache["pre_gate"][k], cache["h_in"][k]
        dgate = dH * T
        dT = dH * gate
        dS = dT * (1.0 - T * T)
        gU = dS.T @ H_in
        gb = dS.sum(axis=0)
        dR = dgate * gelu_deriv(R)
        gUg = dR.T @ TH
        gbg = dR.sum(axis=0)
        block_grads.append((gU, gb, gUg, gbg))
        dH = dH + dS @ U
    block_grads.reverse()

    dA0 = dH * (1.0 - cache["H0"] ** 2)
    gU0 = dA0.T @ TH
    gb0 = dA0.sum(axis=0)

    pos = 0

    def put(a):
        nonlocal pos
        flat = a.ravel()
        grads[pos : pos + flat.size] = flat
        pos += flat.size

    put(gU0)
    put(gb0)
    for gU, gb, gUg, gbg in block_grads:
        put(gU)
        put(gb)
        put(gUg)
        put(gbg)
    put(gW_out)
    put(gb_out)
    assert pos == grads.size
    return grads


def jvp_theta(net: ControlNet, TH: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Directional derivative (d/ds) V(theta + s v) at s=0, batched."""
    U0, b0, blocks, W_out, b_out = _unpack(net.arch, net.xi)
    A0 = TH @ U0.T + b0
    H = np.tanh(A0)
    Hd = (1.0 - H * H) * (V @ U0.T)
    for U, b, Ug, bg in blocks:
        R = TH @ Ug.T + bg
        gate = gelu(R)
        gate_d = gelu_deriv(R) * (V @ Ug.T)
        S = H @ U.T + b
        T = np.tanh(S)
        Td = (1.0 - T * T) * (Hd @ U.T)
        H = H + gate * T
        Hd = Hd + gate_d * T + gate * Td
    return Hd @ W_out.T


def vjp_theta(net: ControlNet, TH: np.ndarray, U_cot: np.ndarray) -> np.ndarray:
    """Cotangent pullback J(theta)^T u, batched over rows."""
    out, cache, params = _forward_cached(net, TH)
    U0, b0, blocks, W_out, b_out = params
    dH = U_cot @ W_out
    dTH = np.zeros_like(TH)
    for k in range(net.arch.n_blocks - 1, -1, -1):
        U, b, Ug, bg = blocks[k]
        gate, T, R = cache["gates"][k], cache["tanhs"][k], cache["pre_gate"][k]
        dgate = dH * T
        dT = dH * gate
        dS = dT * (1.0 - T * T)
        dR = dgate * gelu_deriv(R)
        dTH += dR @ Ug
        dH = dH + dS @ U
    dA0 = dH * (1.0 - cache["H0"] ** 2)
    dTH += dA0 @ U0
    return dTH


# ---------------------------------------------------------------------------
# losses


def loss_l1(net: ControlNet, records) -> tuple[float, np.ndarray]:
    """Mean squared projection residual |G V(theta) - p|^2 and its xi-gradient."""
    TH = np.stack([r.theta for r in records])
    G = np.stack([r.gram for r in records])
    P = np.stack([r.rhs for r in records])
    return _loss_l1_arrays(net, TH, G, P)


def _loss_l1_arrays(net, TH, G, P):
    out, cache, params = _forward_cached(net, TH)
    res = np.einsum("nij,nj->ni", G, out) - P
    n = TH.shape[0]
    loss = float(np.mean(np.sum(res * res, axis=1)))
    dout = 2.0 * np.einsum("nij,ni->nj", G, res) / n  # G symmetric
    grad = _backward_xi(net, cache, params, dout)
    return loss, grad


def loss_l2(net: ControlNet, traj_pairs) -> tuple[float, np.ndarray]:
    """Mean squared deviation from trajectory velocities and its xi-gradient.

    traj_pairs is (thetas, velocities) as arrays of shape (n, m).
    """
    TH, V = traj_pairs
    return _loss_l2_arrays(net, np.asarray(TH, dtype=np.float64), np.asarray(V, dtype=np.float64))


def _loss_l2_arrays(net, TH, V):
    out, cache, params = _forward_cached(net, TH)
    res = out - V
    n = TH.shape[0]
    loss = float(np.mean(np.sum(res * res, axis=1)))
    dout = 2.0 * res / n
    grad = _backward_xi(net, cache, params, dout)
    return loss, grad


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    zeta: float = 0.1
    batch_size: int = 256  # 0 means full batch
    stop_loss: float = 0.1
    stop_plateau_pct: float | None = 0.1
    plateau_window: int = 100
    max_steps: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0,1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")


class _Batcher:
    """Deterministic epoch-shuffled minibatch index stream."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.bs = n if batch_size in (0, None) or batch_size >= n else batch_size
        self.rng = rng
        self.order = np.arange(n)
        self.pos = n  # force shuffle on first call

    def next(self) -> np.ndarray:
        if self.pos + self.bs > self.n:
            self.rng.shuffle(self.order)
            self.pos = 0
        idx = self.order[self.pos : self.pos + self.bs]
        self.pos += self.bs
        return idx


def train(
    net: ControlNet,
    gram_records,
    traj_pairs,
    cfg: TrainConfig,
) -> tuple[ControlNet, list[tuple[int, float, float, float]]]:
    """Minimize l1 + zeta*l2 with ADAM over shuffled minibatches.

    gram_records: list of GramRecord (may be empty only if traj_pairs given).
    traj_pairs: (thetas, velocities) arrays or None.
    Stops at stop_loss, on loss plateau, or at max_steps. Returns the trained
    net and the per-step history (step, l1, l2, l_total).
    """
    m = net.arch.input_dim
    TH = G = P = None
    if gram_records:
        TH = np.stack([r.theta for r in gram_records])
        G = np.stack([r.gram for r in gram_records])
        P = np.stack([r.rhs for r in gram_records])
        if TH.shape[1] != m:
            raise CacheMismatch("gram cache dimension does not match control net")
    T2 = V2 = None
    use_l2 = traj_pairs is not None and cfg.zeta > 0
    if use_l2:
        T2 = np.asarray(traj_pairs[0], dtype=np.float64)
        V2 = np.asarray(traj_pairs[1], dtype=np.float64)
        if T2.shape[0] == 0:
            use_l2 = False
        elif T2.shape[1] != m:
            raise CacheMismatch("trajectory cache dimension does not match control net")
    if TH is None and not use_l2:
        raise ValueError("nothing to train on: empty gram cache and no trajectory pairs")

    rng = rng_for(cfg.seed, stream=2)
    batcher1 = _Batcher(TH.shape[0], cfg.batch_size, rng) if TH is not None else None
    batcher2 = _Batcher(T2.shape[0], cfg.batch_size, rng) if use_l2 else None

    xi = net.xi.copy()
    adam = Adam(xi.size, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    history: list[tuple[int, float, float, float]] = []
    totals: list[float] = []

    for step in range(1, cfg.max_steps + 1):
        current = ControlNet(net.arch, xi)
        l1 = l2 = 0.0
        grad = np.zeros_like(xi)
        if batcher1 is not None:
            idx = batcher1.next()
            l1, g1 = _loss_l1_arrays(current, TH[idx], G[idx], P[idx])
            grad += g1
        if batcher2 is not None:
            idx2 = batcher2.next()
            l2, g2 = _loss_l2_arrays(current, T2[idx2], V2[idx2])
            grad += cfg.zeta * g2
        total = l1 + cfg.zeta * l2
        if not np.isfinite(total):
            raise NonFiniteError(f"training diverged at step {step}")
        history.append((step, l1, l2, total))
        totals.append(total)
        if total < cfg.stop_loss:
            break
        if cfg.stop_plateau_pct is not None and plateau_triggered(
            totals, cfg.plateau_window, cfg.stop_plateau_pct
        ):
            break
        xi = adam.step(xi, grad)

    return ControlNet(net.arch, xi), history


def residual_scan(net: ControlNet, records) -> np.ndarray:
    """|G V(theta) - p| per cached record (training-quality diagnostic)."""
    TH = np.stack([r.theta for r in records])
    out = forward(net, TH)
    res = np.einsum("nij,nj->ni", np.stack([r.gram for r in records]), out) - np.stack(
        [r.rhs for r in records]
    )
    return np.linalg.norm(res, axis=1)


# ---------------------------------------------------------------------------
# persistence


def save_control_checkpoint(net: ControlNet, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "arch": {"input_dim": net.arch.input_dim, "width": net.arch.width, "depth": net.arch.depth},
        "xi": net.xi.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_control_checkpoint(path) -> ControlNet:
    with open(path) as fh:
        doc = json.load(fh)
    arch = ControlArch(**doc["arch"])
    return ControlNet(arch=arch, xi=np.array(doc["xi"], dtype=np.float64))


def save_loss_history(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,l1,l2,l_total\n")
        for step, l1, l2, total in history:
            fh.write(f"{step},{l1!r},{l2!r},{total!r}\n")
