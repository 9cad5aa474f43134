"""Command bodies shared by the CLI: each function reads/writes only its
declared artifacts under the run's out_dir and embeds {format_version,
arch_hash, seed} so downstream consumers can fail fast on mismatches.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import assembly, control_net as cn, evolve, fit, reference, rom
from .config import RunConfig
from .errors import ChecksumMismatch, ConfigError, MissingArtifact
from .sampling import AnchorBalls, Box, rng_for, sample_theta

SOLUTION_FORMAT_VERSION = 1


def spec_from_dict(doc: dict) -> fit.InitialSpec:
    kind = doc.get("kind")
    if kind == "random_theta":
        return fit.RandomTheta(seed=doc["seed"])
    if kind == "heat_combo":
        return fit.HeatCombo(coeffs=np.array(doc["coeffs"]))
    if kind == "cheb_combo":
        return fit.ChebCombo(terms=tuple(tuple(t) for t in doc["terms"]))
    raise ConfigError(f"cannot reconstruct initial spec of kind {kind!r}")


def sample_initial_specs(cfg: RunConfig, count: int | None = None, stream_offset: int = 0):
    """Draw initial-condition specs from the configured family."""
    ini = cfg.raw["initials"]
    family = ini["family"]
    n = ini["count"] if count is None else count
    rng = rng_for(cfg.seed, stream=60 + stream_offset)
    specs: list[fit.InitialSpec] = []
    if family == "random_theta":
        for i in range(n):
            specs.append(fit.RandomTheta(seed=int(rng.integers(0, 2**31 - 1))))
    elif family == "heat_combo":
        for _ in range(n):
            specs.append(fit.HeatCombo(coeffs=rng.uniform(-1.0, 1.0, 4)))
    else:
        problem = cfg.problem()
        deg = ini["degree_max"]
        max_terms = ini["max_terms"]
        amplitude = ini["amplitude"]
        grid = np.linspace(problem.lo[0] + 1e-3, problem.hi[0] - 1e-3, 41)
        G1, G2 = np.meshgrid(grid, grid, indexing="ij")
        probe = np.stack([G1.ravel(), G2.ravel()], axis=1)
        for _ in range(n):
            n_terms = int(rng.integers(1, max_terms + 1))
            seen = set()
            terms = []
            while len(terms) < n_terms:
                i, j = int(rng.integers(0, deg + 1)), int(rng.integers(0, deg + 1))
                if (i, j) in seen:
                    continue
                seen.add((i, j))
                terms.append((i, j, float(rng.uniform(-1.0, 1.0))))
            spec = fit.ChebCombo(terms=tuple(terms))
            peak = np.abs(fit.eval_initial(spec, probe)).max()
            if peak > amplitude:
                scale = amplitude / peak
                spec = fit.ChebCombo(terms=tuple((i, j, c * scale) for i, j, c in spec.terms))
            specs.append(spec)
    return specs


def cmd_fit_initial(cfg: RunConfig, specs=None) -> list[dict]:
    """Fit (or directly sample) anchor parameters for each initial spec and
    write the anchor store."""
    cfg.ensure_layout()
    arch = cfg.rom_arch()
    problem = cfg.problem()
    ini = cfg.raw["initials"]
    if specs is None:
        specs = sample_initial_specs(cfg)
    entries = []
    fitcfg = cfg.fit_config()
    for k, spec in enumerate(specs):
        if isinstance(spec, fit.RandomTheta):
            space = cfg.theta_space()
            if not isinstance(space, Box):
                raise ConfigError("random_theta initials require a box parameter space")
            model = fit.resolve_random_theta(spec, arch, space)
            entries.append((spec, model.theta, 0.0))
        else:
            res = fit.fit_initial(
                arch,
                spec,
                problem.domain,
                ini["fit_n_x"],
                ini["eps0_target"],
                fitcfg,
                seed=cfg.seed + 1000 + k,
            )
            entries.append((spec, res.theta, res.rmse))
    fit.save_anchors(cfg.path("anchors"), entries)
    return [
        {"spec": spec.describe(), "rmse": rmse, "theta_norm": float(np.linalg.norm(theta))}
        for spec, theta, rmse in entries
    ]


def cmd_sample_gram(cfg: RunConfig) -> dict:
    cfg.ensure_layout()
    arch = cfg.rom_arch()
    problem = cfg.problem()
    space = cfg.theta_space()
    counts = cfg.raw["counts"]
    thetas = sample_theta(space, counts["n_theta"], cfg.seed, stream=40)
    return assembly.assemble_batch(
        arch,
        thetas,
        problem.operator,
        counts["n_x"],
        cfg.seed,
        cfg.path("gram_cache"),
        problem.domain,
        threads=cfg.threads,
        quadrature=cfg.raw["quadrature"],
    )


def cmd_gen_trajectories(cfg: RunConfig) -> dict:
    cfg.ensure_layout()
    arch = cfg.rom_arch()
    problem = cfg.problem()
    counts = cfg.raw["counts"]
    n_traj = counts["n_traj"]
    if n_traj == 0:
        evolve.write_traj_cache(
            cfg.path("traj_cache"),
            evolve.traj_cache_header(arch, problem.operator, 0.0, counts["n_x"], cfg.seed),
            [],
        )
        return {"trajectories": 0, "pairs": 0, "blowups": 0}
    space = cfg.theta_space()
    if isinstance(space, AnchorBalls):
        starts = space.anchors[np.arange(n_traj) % len(space.anchors)]
    else:
        starts = sample_theta(space, n_traj, cfg.seed, stream=41).points
    h = problem.horizon / counts["n_t"]
    trajs = []
    blowups = 0
    for i in range(n_traj):
        traj = evolve.gen_trajectory(
            arch,
            starts[i],
            problem.operator,
            problem.domain,
            counts["n_t"],
            h,
            counts["n_x"],
            cfg.seed,
            quadrature=cfg.raw["quadrature"],
            theta_space=space,
            stream_base=100_000 * (i + 1),
        )
        blowups += int(traj.blowup_step is not None)
        trajs.append(traj)
    evolve.write_traj_cache(
        cfg.path("traj_cache"),
        evolve.traj_cache_header(arch, problem.operator, h, counts["n_x"], cfg.seed),
        trajs,
    )
    pairs = sum(t.thetas.shape[0] for t in trajs)
    return {"trajectories": n_traj, "pairs": pairs, "blowups": blowups}


def control_checkpoint_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.path("checkpoints"), "control.json")


def cmd_train_control(
    cfg: RunConfig,
    resume: bool = False,
    train_overrides: dict | None = None,
    pairs_only: bool = False,
) -> dict:
    """Train the control field. pairs_only skips the projection loss and fits
    the trajectory pairs alone (curriculum warmup for stiff selections)."""
    cfg.ensure_layout()
    arch = cfg.rom_arch()
    records = []
    if not pairs_only:
        gram_path = cfg.path("gram_cache")
        if not os.path.exists(gram_path):
            raise MissingArtifact(f"gram cache {gram_path} not found; run sample-gram first")
        _, records = assembly.read_cache(gram_path, expect_arch=arch)
    pairs = None
    traj_path = cfg.path("traj_cache")
    if os.path.exists(traj_path):
        _, th2, v2 = evolve.read_traj_cache(traj_path, expect_arch=arch)
        if th2.shape[0]:
            pairs = (th2, v2)
    if pairs_only and pairs is None:
        raise MissingArtifact("pairs-only training needs a nonempty trajectory cache")
    carch = cfg.control_arch()
    ckpt = control_checkpoint_path(cfg)
    if resume:
        if not os.path.exists(ckpt):
            raise MissingArtifact(f"cannot resume: {ckpt} not found")
        net = cn.load_control_checkpoint(ckpt)
        if net.arch != carch:
            raise ChecksumMismatch("checkpoint control architecture differs from config")
    else:
        net = cn.ControlNet(carch, cn.init_control_params(carch, cfg.seed))
    tcfg = cfg.train_config(**(train_overrides or {}))
    if pairs_only and tcfg.zeta == 0:
        tcfg.zeta = 1.0
    net, history = cn.train(net, records, pairs, tcfg)
    cn.save_control_checkpoint(net, ckpt)
    mode = "a" if resume else "w"
    hist_path = os.path.join(cfg.out_dir, "curves", "loss_history.csv")
    with open(hist_path, mode) as fh:
        if mode == "w":
            fh.write("step,l1,l2,l_total\n")
        for step, l1, l2, total in history:
            fh.write(f"{step},{l1!r},{l2!r},{total!r}\n")
    final = history[-1][3] if history else float("nan")
    return {"steps": len(history), "final_loss": final, "records": len(records),
            "pairs": 0 if pairs is None else int(pairs[0].shape[0])}


def solution_path(cfg: RunConfig, index: int) -> str:
    return os.path.join(cfg.out_dir, "solutions", f"solution_{index:03d}.json")


def cmd_solve(cfg: RunConfig, anchor_index: int = 0) -> dict:
    cfg.ensure_layout()
    arch = cfg.rom_arch()
    problem = cfg.problem()
    thetas, docs = fit.load_anchors(cfg.path("anchors"))
    if anchor_index >= len(thetas):
        raise MissingArtifact(f"anchor {anchor_index} not in store of size {len(thetas)}")
    ckpt = control_checkpoint_path(cfg)
    if not os.path.exists(ckpt):
        raise MissingArtifact(f"control checkpoint {ckpt} not found; run train-control first")
    net = cn.load_control_checkpoint(ckpt)
    if net.arch.input_dim != rom.param_count(arch):
        raise ChecksumMismatch("control net dimension does not match the model architecture")
    space = cfg.theta_space()
    solve_cfg = cfg.raw["solve"]
    traj = evolve.solve_ivp(
        net,
        thetas[anchor_index],
        problem.horizon,
        solve_cfg["n_steps"],
        scheme=solve_cfg["scheme"],
        theta_space=space,
    )
    doc = {
        "format_version": SOLUTION_FORMAT_VERSION,
        "arch_hash": rom.arch_hash(arch),
        "seed": cfg.seed,
        "anchor_index": anchor_index,
        "initial": docs[anchor_index]["spec"],
        "fit_rmse": docs[anchor_index]["rmse"],
        "times": traj.times.tolist(),
        "thetas": traj.thetas.tolist(),
        "blowup_step": traj.blowup_step,
        "escape_step": traj.escape_step,
    }
    path = solution_path(cfg, anchor_index)
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return {
        "path": path,
        "steps": traj.thetas.shape[0] - 1,
        "blowup_step": traj.blowup_step,
        "escape_step": traj.escape_step,
    }


def load_solution(cfg: RunConfig, index: int) -> tuple[dict, evolve.ParamTrajectory]:
    path = solution_path(cfg, index)
    if not os.path.exists(path):
        raise MissingArtifact(f"solution {path} not found; run solve first")
    with open(path) as fh:
        doc = json.load(fh)
    if doc["arch_hash"] != rom.arch_hash(cfg.rom_arch()):
        raise ChecksumMismatch(f"solution {path} was produced with a different architecture")
    times = np.array(doc["times"])
    thetas = np.array(doc["thetas"])
    step = float(times[1] - times[0]) if len(times) > 1 else 0.0
    traj = evolve.ParamTrajectory(
        times=times,
        thetas=thetas,
        velocities=None,
        source="control_field",
        step=step,
        blowup_step=doc.get("blowup_step"),
        escape_step=doc.get("escape_step"),
    )
    return doc, traj


def reference_path(cfg: RunConfig, index: int) -> str:
    return os.path.join(cfg.out_dir, "reference", f"ref_{index:03d}.npz")


def cmd_reference(cfg: RunConfig, anchor_index: int = 0, nx: int = 100, nt: int = 2000) -> dict:
    """Materialize the reference solution where one must be computed
    (Allen-Cahn IMEX); closed-form references need no artifact."""
    cfg.ensure_layout()
    problem = cfg.problem()
    kind = cfg.raw["problem"]["kind"]
    if kind != "allen_cahn":
        return {"note": f"{kind} uses a closed-form reference; nothing to compute"}
    thetas, docs = fit.load_anchors(cfg.path("anchors"))
    if anchor_index >= len(docs):
        raise MissingArtifact(f"anchor {anchor_index} not in store")
    spec = spec_from_dict(docs[anchor_index]["spec"])
    grid = reference.solve_allen_cahn_imex(
        spec,
        cfg.raw["problem"]["epsilon"],
        nx,
        nt,
        problem.horizon,
        lo=problem.lo,
        hi=problem.hi,
    )
    path = reference_path(cfg, anchor_index)
    reference.save_grid_solution(grid, path)
    return {"path": path, "snapshots": len(grid.times)}


def build_reference(cfg: RunConfig, solution_doc: dict):
    """Reference solution object matching a stored solution's initial."""
    problem = cfg.problem()
    kind = cfg.raw["problem"]["kind"]
    arch = cfg.rom_arch()
    spec = spec_from_dict(solution_doc["initial"])
    if kind == "transport":
        model = None
        if isinstance(spec, fit.RandomTheta):
            # the anchor theta defines the initial function u_theta0
            thetas, _ = fit.load_anchors(cfg.path("anchors"))
            model = rom.RomModel(arch, thetas[solution_doc["anchor_index"]])
        op = problem.operator
        return reference.TransportShift(
            initial=spec, velocity=op.velocity, lo=problem.lo, hi=problem.hi, model=model
        )
    if kind == "heat":
        if problem.dim != 1 or not isinstance(spec, fit.HeatCombo):
            raise ConfigError("closed-form heat references cover 1-D combo initials")
        return reference.heat_series_from_combo(spec.coeffs, dim=1)
    if kind == "allen_cahn":
        path = reference_path(cfg, solution_doc["anchor_index"])
        if not os.path.exists(path):
            raise MissingArtifact(f"reference {path} not found; run the reference command first")
        return reference.load_grid_solution(path)
    raise ConfigError(f"no reference construction for problem kind {kind!r}")


def cmd_eval(cfg: RunConfig, anchor_index: int = 0, n_x: int = 4096, max_times: int = 64) -> dict:
    cfg.ensure_layout()
    doc, traj = load_solution(cfg, anchor_index)
    ref = build_reference(cfg, doc)
    problem = cfg.problem()
    curve = reference.error_curve(
        cfg.rom_arch(), traj, ref, problem.domain, n_x, seed=cfg.seed + 17, max_times=max_times
    )
    path = os.path.join(cfg.out_dir, "curves", f"errors_{anchor_index:03d}.csv")
    reference.save_error_curve(curve, path)
    finite = curve.rel_err[np.isfinite(curve.rel_err)]
    return {
        "path": path,
        "abs_err_max": float(curve.abs_err.max()),
        "rel_err_max": float(finite.max()) if finite.size else None,
        "rel_err_mean": float(finite.mean()) if finite.size else None,
    }


def cmd_export_slice(cfg: RunConfig, anchor_index: int, t: float, grid_n: int = 40) -> dict:
    cfg.ensure_layout()
    problem = cfg.problem()
    if problem.dim != 2:
        raise ConfigError("export-slice needs a 2-D problem")
    doc, traj = load_solution(cfg, anchor_index)
    ref = build_reference(cfg, doc)
    j = int(np.argmin(np.abs(traj.times - t)))
    path = os.path.join(cfg.out_dir, "slices", f"slice_{anchor_index:03d}_t{traj.times[j]:.4f}.csv")
    reference.export_slice(
        cfg.rom_arch(), traj.thetas[j], ref, problem.domain, float(traj.times[j]), path, grid_n=grid_n
    )
    return {"path": path, "time": float(traj.times[j])}
