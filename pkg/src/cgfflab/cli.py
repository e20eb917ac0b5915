"""Command-line entry point: ``cgfflab --config run.cfg [--threads N] [--out DIR] [--seed S]``."""

import argparse
import dataclasses
import math
import os
import sys

import numpy as np

from .capacity import CapacityError, solve_capacity_primal
from .config import ConfigError, default_resolution, parse_config
from .experiments import (
    SQRT_2_OVER_PI,
    check_log_correlated,
    embed_box,
    estimate_hole_probability,
    estimate_sup_tail,
)
from .fields import sample_cgff
from .io import append_csv_row, build_tag, config_hash, write_field, write_grid, write_pgm
from .kernels import asymptotic_residual
from .validation import ValidationError


def _provenance(cfg):
    return {"config_hash": config_hash(cfg.canonical()), "build": build_tag()}


def _inputs(cfg):
    return {
        "command": cfg.command,
        "model": cfg.model,
        "L": cfg.L,
        "alpha": "" if cfg.alpha is None else cfg.alpha,
        "seed": cfg.seed,
        "samples": cfg.samples,
    }


def _cmd_sample(cfg, out, threads):
    model = cfg.surface()
    s = sample_cgff(model, cfg.L, cfg.seed, default_resolution(cfg, model))
    prov = _provenance(cfg)
    base = os.path.join(out, f"field_{cfg.seed}")
    write_field(base + ".bin", s, prov)
    write_pgm(base + ".pgm", s.values, f"config_hash {prov['config_hash']}")
    return f"sample: {model.kind} L={cfg.L:g} n={s.resolution} min={s.values.min():.6g} max={s.values.max():.6g} -> {base}.bin"


def _in_range_pairs(model, count, seed):
    rng = np.random.default_rng(seed)
    a, b = model.sides
    radius = model.in_range_radius
    p = np.column_stack([rng.uniform(a / 4, 3 * a / 4, count), rng.uniform(b / 4, 3 * b / 4, count)])
    r = radius * np.sqrt(rng.uniform(0, 1, count))
    th = rng.uniform(0, 2 * math.pi, count)
    q = p + np.column_stack([r * np.cos(th), r * np.sin(th)])
    return p, q


def _cmd_kernel(cfg, out, threads):
    model = cfg.surface()
    Ls = cfg.L_grid if cfg.L_grid is not None else (cfg.L,)
    rep = asymptotic_residual(model, Ls, _in_range_pairs(model, cfg.pairs, cfg.seed))
    path = os.path.join(out, "residuals.csv")
    rep.to_csv(path)
    return f"kernel: {len(Ls)} cutoffs x {cfg.pairs} pairs, max|rho|={rep.max_abs.max():.6g} -> {path}"


def _cmd_capacity(cfg, out, threads):
    model = cfg.surface()
    mask = cfg.build_mask(default_resolution(cfg, model), model)
    res = solve_capacity_primal(model, mask, cfg.tol)
    prov = _provenance(cfg)
    row = {"model": cfg.model, "resolution": mask.resolution, **res.summary_row(), **prov}
    path = os.path.join(out, "capacity.csv")
    append_csv_row(path, row)
    write_grid(
        os.path.join(out, "potential.bin"),
        res.h,
        {"model": model.kind, "sides": model.sides, "resolution": mask.resolution, **prov},
    )
    return f"capacity: primal={res.primal:.10g} dual={res.dual:.10g} sweeps={res.iterations} -> {path}"


def _estimate_row(cfg, est, extra):
    row = _inputs(cfg)
    row.update(extra)
    row.update(est.as_row())
    row.update(_provenance(cfg))
    return row


def _cmd_sup_tail(cfg, out, threads):
    model = cfg.surface()
    thr = cfg.threshold
    if thr is None:
        thr = (SQRT_2_OVER_PI + cfg.eta) * math.log(math.sqrt(cfg.L))
    est = estimate_sup_tail(
        model, cfg.L, thr, cfg.samples, cfg.seed, default_resolution(cfg, model), n_jobs=threads
    )
    path = os.path.join(out, "results.csv")
    append_csv_row(path, _estimate_row(cfg, est, {"resolution": default_resolution(cfg, model)}))
    return f"sup-tail: p={est.estimate:.6g} CI=({est.ci[0]:.4g}, {est.ci[1]:.4g}) median sup/ln sqrt L={est.log_statistic:.6g} -> {path}"


def _cmd_hole(cfg, out, threads):
    model = cfg.surface()
    res = default_resolution(cfg, model)
    mask = cfg.build_mask(res, model)
    est = estimate_hole_probability(
        model, cfg.L, mask, cfg.samples, cfg.seed, cfg.method, n_jobs=threads
    )
    path = os.path.join(out, "results.csv")
    append_csv_row(path, _estimate_row(cfg, est, {"resolution": res}))
    flags = f" [{'; '.join(est.flags)}]" if est.flags else ""
    return f"hole: p={est.estimate:.6g} CI=({est.ci[0]:.4g}, {est.ci[1]:.4g}) ln p/ln^2 sqrt L={est.log_statistic:.6g}{flags} -> {path}"


def _cmd_embed(cfg, out, threads):
    model = cfg.surface()
    alpha = 0.0 if cfg.alpha is None else cfg.alpha
    emb = embed_box(model, cfg.delta, alpha, cfg.L, rng_seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    x = rng.integers(0, emb.N, size=(cfg.pairs, 2))
    y = rng.integers(0, emb.N, size=(cfg.pairs, 2))
    rep = check_log_correlated(model, cfg.L, alpha, emb, (x, y))
    row = {
        "model": cfg.model,
        "L": cfg.L,
        "alpha": alpha,
        "delta": cfg.delta,
        "box_side": emb.N,
        "ratio_min": emb.ratio_range[0],
        "ratio_max": emb.ratio_range[1],
        "pairs_checked": emb.pairs_checked,
        "exhaustive": emb.exhaustive,
        "residual_max": rep.max_abs,
        "residual_mean": rep.mean_abs,
        "rescaled_max": "" if rep.rescaled_residual is None else float(rep.rescaled_residual.max()),
        **_provenance(cfg),
    }
    path = os.path.join(out, "embedding.csv")
    append_csv_row(path, row)
    return f"embed-check: N={emb.N} ratios=[{emb.ratio_range[0]:.6g}, {emb.ratio_range[1]:.6g}] max residual={rep.max_abs:.6g} -> {path}"


_COMMANDS = {
    "sample": _cmd_sample,
    "kernel": _cmd_kernel,
    "capacity": _cmd_capacity,
    "sup-tail": _cmd_sup_tail,
    "hole": _cmd_hole,
    "embed-check": _cmd_embed,
}


def run(cfg, out=None, threads=None, seed=None, stream=sys.stdout):
    """Execute a parsed config.  Returns the exit status (0 on success)."""
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    out = out if out is not None else cfg.out
    threads = threads if threads is not None else cfg.threads
    os.makedirs(out, exist_ok=True)
    try:
        line = _COMMANDS[cfg.command](cfg, out, threads)
    except (ValidationError, CapacityError) as exc:
        mod = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"error in {cfg.command} ({mod}): {exc}", file=sys.stderr)
        return 1
    print(line, file=stream)
    return 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="cgfflab", description="Cut-off GFF laboratory")
    ap.add_argument("--config", required=True, help="key=value run configuration")
    ap.add_argument("--threads", type=int, default=None, help="worker cap")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = ap.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        ap.error("--threads must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        ap.error("--seed must be a 64-bit unsigned integer")
    try:
        with open(args.config, encoding="utf-8") as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"invalid config {args.config}:\n{exc}", file=sys.stderr)
        return 2
    return run(cfg, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
