"""Monte-Carlo assembly of the tangent-space projection system.

For a model at parameters theta and operator F, the empirical system is
    G = (1/N) sum_i  g_i g_i^T,      p = (1/N) sum_i  g_i F[u_theta](x_i),
with g_i = grad_theta u_theta(x_i). Records are cached as JSON lines so long
sampling runs are resumable and byte-reproducible across thread counts.

Also hosts the unrolled-gradient-descent projection field: the K-step descent
on the convex quadratic  w^T G w - 2 w^T p  from w = 0.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import linalg, pde_ops, rom
from .errors import CacheMismatch, NonFiniteError, StepTooLarge
from .sampling import SampleBatch, rng_for, sample_omega

CACHE_FORMAT_VERSION = 1


@dataclass
class GramRecord:
    theta: np.ndarray
    gram: np.ndarray  # (m, m), exactly symmetric
    rhs: np.ndarray  # (m,)
    n_x: int
    seed: int


def gauss_legendre_batch(domain, n_nodes: int) -> tuple[SampleBatch, np.ndarray]:
    """Gauss-Legendre nodes/weights on a 1-D interval, packaged like a sample
    batch. Weights are normalized to integrate the uniform density (mean
    convention), so assembly code can treat quadrature and MC uniformly."""
    lo, hi = float(domain[0][0]), float(domain[1][0])
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    pts = 0.5 * (hi - lo) * (x + 1.0) + lo
    weights = 0.5 * w  # integrates f over (lo,hi)/|domain| like a mean
    batch = SampleBatch(points=pts[:, None], seed=0, generator_tag=f"gauss/{n_nodes}")
    return batch, weights


def assemble(
    model: rom.RomModel,
    op: pde_ops.PdeOperator,
    xs: SampleBatch,
    weights: np.ndarray | None = None,
) -> GramRecord:
    """One projection record at model.theta from the given spatial sample.

    With weights=None each point carries mass 1/N (Monte-Carlo mean);
    explicit weights enable exact quadrature for 1-D linear bases.
    """
    X = xs.points
    if X.shape[0] == 0:
        raise ValueError("empty sample batch")
    flags_needed = pde_ops.required_flags(op)
    need = rom.EvalFlags(
        value=flags_needed["value"],
        grad_x=flags_needed["grad_x"],
        laplacian=flags_needed["laplacian"],
        grad_theta=True,
    )
    ev = rom.eval_batch(model, X, need)
    f_vals = pde_ops.apply_operator_arrays(op, ev.value, ev.grad_x, ev.laplacian)
    gt = ev.grad_theta  # (n, m)
    if weights is None:
        n = X.shape[0]
        gram = gt.T @ gt / n
        rhs = gt.T @ f_vals / n
    else:
        wg = gt * weights[:, None]
        gram = wg.T @ gt
        rhs = wg.T @ f_vals
    gram = 0.5 * (gram + gram.T)  # exact symmetry
    if not (np.all(np.isfinite(gram)) and np.all(np.isfinite(rhs))):
        raise NonFiniteError("assembly produced non-finite entries")
    return GramRecord(theta=model.theta.copy(), gram=gram, rhs=rhs, n_x=X.shape[0], seed=xs.seed)


def assemble_at(
    arch: rom.RomArch,
    theta: np.ndarray,
    op: pde_ops.PdeOperator,
    domain,
    n_x: int,
    seed: int,
    stream: int,
    quadrature: str = "mc",
) -> GramRecord:
    """Assemble at one parameter point with a stream-split x-sample."""
    model = rom.RomModel(arch, theta)
    if quadrature == "gauss":
        xs, w = gauss_legendre_batch(domain, n_x)
        return assemble(model, op, xs, weights=w)
    xs = sample_omega(domain, n_x, seed, stream=stream)
    return assemble(model, op, xs)


# ---------------------------------------------------------------------------
# cache

def cache_header(arch: rom.RomArch, op: pde_ops.PdeOperator, n_x: int, seed: int) -> dict:
    return {
        "format_version": CACHE_FORMAT_VERSION,
        "kind": "gram_cache",
        "arch_hash": rom.arch_hash(arch),
        "op_tag": op.tag,
        "n_x": n_x,
        "m": rom.param_count(arch),
        "seed": seed,
    }


def _record_line(index: int, rec: GramRecord | None, reason: str = "") -> str:
    if rec is None:
        return json.dumps({"index": index, "skipped": True, "reason": reason})
    return json.dumps(
        {
            "index": index,
            "theta": rec.theta.tolist(),
            "gram": rec.gram.ravel().tolist(),
            "rhs": rec.rhs.tolist(),
            "n_x": rec.n_x,
            "seed": rec.seed,
        }
    )


def _count_existing(cache_path, header: dict) -> int:
    """Validate an existing cache header and count its record lines."""
    if not os.path.exists(cache_path):
        return -1
    with open(cache_path) as fh:
        first = fh.readline()
        if not first.strip():
            return -1
        existing = json.loads(first)
        for key in ("format_version", "kind", "arch_hash", "op_tag", "n_x", "m", "seed"):
            if existing.get(key) != header[key]:
                raise CacheMismatch(f"cache header mismatch on {key!r} in {cache_path}")
        return sum(1 for line in fh if line.strip())


def assemble_batch(
    arch: rom.RomArch,
    thetas: SampleBatch,
    op: pde_ops.PdeOperator,
    n_x: int,
    seed: int,
    cache_path,
    domain,
    threads: int = 1,
    quadrature: str = "mc",
) -> dict:
    """Assemble records for every theta in order, appending to cache_path.

    Resumable: records already present are skipped (the file is extended, not
    rewritten), and per-record sample streams depend only on (seed, index), so
    reruns and different thread counts produce byte-identical files.
    Non-finite records are logged as skipped lines; returns summary stats.
    """
    header = cache_header(arch, op, n_x, seed)
    done = _count_existing(cache_path, header)
    mode = "a"
    if done < 0:
        mode = "w"
        done = 0

    points = thetas.points
    todo = list(range(done, points.shape[0]))
    skipped = 0

    def build(index: int):
        try:
            return assemble_at(arch, points[index], op, domain, n_x, seed, stream=index + 1, quadrature=quadrature)
        except NonFiniteError:
            return None

    with open(cache_path, mode) as fh:
        if mode == "w":
            fh.write(json.dumps(header) + "\n")
        if threads > 1 and todo:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for index, rec in zip(todo, pool.map(build, todo)):
                    if rec is None:
                        skipped += 1
                    fh.write(_record_line(index, rec, reason="non-finite") + "\n")
        else:
            for index in todo:
                rec = build(index)
                if rec is None:
                    skipped += 1
                fh.write(_record_line(index, rec, reason="non-finite") + "\n")
    return {"total": points.shape[0], "computed": len(todo), "resumed": done, "skipped": skipped}


def read_cache(cache_path, expect_arch: rom.RomArch | None = None) -> tuple[dict, list[GramRecord]]:
    """Load a Gram cache; optionally enforce the architecture hash."""
    with open(cache_path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "gram_cache":
            raise CacheMismatch(f"{cache_path} is not a gram cache")
        if expect_arch is not None and header["arch_hash"] != rom.arch_hash(expect_arch):
            raise CacheMismatch("cache arch_hash does not match the requested architecture")
        m = header["m"]
        records = []
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            if doc.get("skipped"):
                continue
            records.append(
                GramRecord(
                    theta=np.array(doc["theta"]),
                    gram=np.array(doc["gram"]).reshape(m, m),
                    rhs=np.array(doc["rhs"]),
                    n_x=doc["n_x"],
                    seed=doc["seed"],
                )
            )
    return header, records


# ---------------------------------------------------------------------------
# unrolled gradient descent on the projection quadratic

def quadratic_objective(record: GramRecord, w: np.ndarray, constant: float = 0.0) -> float:
    """psi(w) = w^T G w - 2 w^T p (+ constant; the |F|^2 term is w-free)."""
    return float(w @ (record.gram @ w) - 2.0 * w @ record.rhs + constant)


def gd_projection_field(record: GramRecord, n_steps: int, h: float) -> np.ndarray:
    """K-step gradient descent on the projection quadratic from w = 0.

    Requires 0 < h < 1/lambda_max(G); grad psi(w) = 2(Gw - p).
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    lam = linalg.sym_eig_max(record.gram)
    if h <= 0 or (lam > 0 and h >= 1.0 / lam):
        raise StepTooLarge(f"need 0 < h < 1/lambda_max = {1.0 / lam if lam > 0 else np.inf:g}")
    w = np.zeros_like(record.rhs)
    G, p = record.gram, record.rhs
    for _ in range(n_steps):
        w = w - h * 2.0 * (G @ w - p)
    return w
