"""Command-line front end: ``pnpunmix {synth,unmix,eval,suite}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric
divergence, 4 I/O error.
"""
import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import admm, metrics, net
from ._errors import DivergenceError, FormatError, ParameterError, UnmixError
from .data import (AbundanceField, SynthSpec, add_noise, export_abundance_maps,
                   generate_synthetic, load_cube, load_endmembers, load_raw, save_cube,
                   save_endmembers, save_raw, to_uint8, write_pgm)
from .initialization import initialize

logger = logging.getLogger("pnpunmix")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
SOLVERS = ("fcls", "pnp-admm", "pnp-net")


class ConfigError(UnmixError):
    pass


# -- configuration ------------------------------------------------------------------

def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def parse_snr(text):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--snr expects a comma-separated list of numbers, got {text!r}") from None


def solver_section(cfg, override=None):
    """``(name, params)`` of the single configured solver."""
    section = cfg.get("solver", {"pnp-admm": {}})
    if not isinstance(section, dict) or len(section) != 1:
        raise ConfigError("'solver' must hold exactly one of " + ", ".join(SOLVERS))
    name, params = next(iter(section.items()))
    if override is not None:
        name, params = override, (params if override == name else {})
    if name not in SOLVERS:
        raise ConfigError(f"unknown solver {name!r}; expected one of {SOLVERS}")
    params = dict(params or {})
    if "denoiser" in cfg and "denoiser" not in params:
        params["denoiser"] = cfg["denoiser"]
    return name, params


def synth_spec(cfg, seed=None):
    d = dict(cfg.get("data", {}).get("synth", {}))
    if seed is not None:
        d["seed"] = seed
    unknown = set(d) - set(SynthSpec.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown synth fields {sorted(unknown)}")
    return SynthSpec(**d).validate()


def _resolve(cfg, path):
    p = Path(path)
    return p if p.is_absolute() else Path(cfg["_base"]) / p


def load_scene(cfg, seed=None, snr=None):
    """Observed cube and, when available, the ground truth ``(M, A)``."""
    data = cfg.get("data", {})
    snr_db = data.get("snr_db", float("inf")) if snr is None else snr
    noise_seed = int(data.get("noise_seed", 1))
    if "cube" in data:
        cube = load_cube(_resolve(cfg, data["cube"]))
        truth = None
        if "truth" in data:
            truth = read_truth(_resolve(cfg, data["truth"]))
        if snr is not None or "snr_db" in data:
            cube = add_noise(cube, float(snr_db), seed=noise_seed)
        return cube, truth
    clean, M, A = generate_synthetic(synth_spec(cfg, seed))
    return add_noise(clean, float(snr_db), seed=noise_seed), (M.data, A.data, clean)


def read_truth(directory):
    directory = Path(directory)
    meta = json.loads((directory / "scene.json").read_text())
    M = load_endmembers(directory / "truth_M.csv").data
    A = load_raw(directory / "truth_A.raw", (M.shape[1], meta["height"] * meta["width"]))
    return M, A, load_cube(directory / "cube.hsc")


# -- commands -------------------------------------------------------------------

def cmd_synth(args):
    cfg = load_config(args.config)
    spec = synth_spec(cfg, args.seed)
    snrs = parse_snr(args.snr)
    if snrs is None:
        snrs = cfg.get("data", {}).get("snr_list", [])
    noise_seed = int(cfg.get("data", {}).get("noise_seed", 1))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cube, M, A = generate_synthetic(spec)
    save_cube(cube, out / "cube.hsc")
    save_endmembers(M, out / "truth_M.csv")
    save_raw(A.data, out / "truth_A.raw")
    noisy = []
    for snr in snrs:
        name = f"noisy_{snr:g}dB.hsc"
        save_cube(add_noise(cube, float(snr), seed=noise_seed), out / name)
        noisy.append(name)
    meta = {"height": spec.height, "width": spec.width, "bands": spec.band_count,
            "endmembers": spec.endmember_count, "seed": spec.seed, "noise_seed": noise_seed,
            "snr_db": list(snrs), "noisy": noisy}
    (out / "scene.json").write_text(json.dumps(meta, indent=2) + "\n")
    logger.info("wrote scene %dx%dx%d to %s", spec.height, spec.width, spec.band_count, out)
    return EXIT_OK


def run_solver(name, params, X, init, shape, out, seed):
    """Run one solver and write its solver-specific diagnostics into ``out``."""
    if name == "fcls":
        return init.endmembers.data, init.abundances.data
    if name == "pnp-admm":
        config = admm.AdmmConfig.from_dict(params)
        M, A, state = admm.solve(X, config, init, shape)
        admm.write_diagnostics(state, out / "diagnostics.csv")
        logger.info("pnp-admm: %d iterations, converged=%s", state.n_iter, state.converged)
        return M, A
    params.setdefault("seed", seed)
    config = net.NetConfig.from_dict(params)
    try:
        result = net.train(X, config, init, shape)
    except DivergenceError as exc:
        if exc.history:
            net.write_history(exc.history, out / "history.csv")
        raise
    net.write_history(result.history, out / "history.csv")
    net.save_checkpoint(out / "checkpoint.pnpnet", result.params, config,
                        state=net.NetState.from_init(init))
    with open(out / "diagnostics.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(result.history, start=1):
            fh.write(f"{i},{v!r}\n")
    logger.info("pnp-net: %d epochs, final loss %.6g", len(result.history), result.history[-1])
    return result.M, result.A


def write_estimate(out, M, A, X, shape, meta):
    h, w = shape
    out.mkdir(parents=True, exist_ok=True)
    save_endmembers(M, out / "est_M.csv")
    save_raw(A, out / "est_A.raw")
    export_abundance_maps(AbundanceField(np.clip(A, 0.0, None), h, w), out)
    err = np.sqrt(np.mean((X - M @ A) ** 2, axis=0)).reshape(h, w)
    save_raw(err, out / "recon_error.raw")
    peak = err.max()
    write_pgm(to_uint8(err / peak if peak > 0 else err), out / "recon_error.pgm")
    (out / "estimate.json").write_text(json.dumps(meta, indent=2) + "\n")


def unmix_one(cfg, name, params, out, seed, snr):
    cube, truth = load_scene(cfg, seed=cfg.get("data", {}).get("synth", {}).get("seed"), snr=snr)
    X, shape = cube.matrix(), (cube.height, cube.width)
    R = int(cfg.get("init", {}).get("n_endmembers",
                                    truth[0].shape[1] if truth else synth_spec(cfg).endmember_count))
    init = initialize(X, R, shape, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    M, A = run_solver(name, dict(params), X, init, shape, out, seed)
    meta = {"solver": name, "height": shape[0], "width": shape[1], "bands": X.shape[0],
            "endmembers": R, "seed": seed, "snr_db": None if snr is None else float(snr),
            "params": {k: (v if not isinstance(v, float) or np.isfinite(v) else str(v))
                       for k, v in params.items()}}
    write_estimate(out, M, A, X, shape, meta)
    if truth is not None:
        save_endmembers(truth[0], out / "truth_M.csv")
    return M, A, truth


def cmd_unmix(args):
    cfg = load_config(args.config)
    name, params = solver_section(cfg, args.solver)
    seed = args.seed if args.seed is not None else int(cfg.get("init", {}).get("seed", 0))
    out = Path(args.out or cfg.get("output", {}).get("dir", "out"))
    snrs = parse_snr(args.snr) or [None]
    for snr in snrs:
        target = out if len(snrs) == 1 else out / f"snr_{snr:g}dB"
        unmix_one(cfg, name, params, target, seed, snr)
        logger.info("wrote %s estimate to %s", name, target)
    return EXIT_OK


def read_estimate(directory):
    directory = Path(directory)
    try:
        meta = json.loads((directory / "estimate.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{directory}: estimate.json missing") from None
    M = load_endmembers(directory / "est_M.csv").data
    A = load_raw(directory / "est_A.raw", (M.shape[1], meta["height"] * meta["width"]))
    return M, A, meta


def cmd_eval(args):
    truth_M, truth_A, _ = read_truth(args.truth)
    reports = []
    for est in args.est:
        M, A, meta = read_estimate(est)
        if M.shape[1] != truth_M.shape[1]:
            raise ParameterError(
                f"{est}: {M.shape[1]} endmembers, truth has {truth_M.shape[1]}")
        label = args.label or Path(est).name
        if len(args.est) > 1 and args.label:
            label = f"{args.label}:{Path(est).name}"
        # reference is truth_M @ truth_A at file precision, so a perfect estimate scores exactly
        reports.append(metrics.evaluate(M, A, truth_M, truth_A, label=label))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_reports(reports, out)
    if args.table:
        write_table(reports, out.with_name(out.stem + "_table.csv"))
    for r in reports:
        print(" ".join(f"{k}={v}" for k, v in r.row().items()))
    return EXIT_OK


def write_table(reports, path):
    with open(path, "w") as fh:
        for row in metrics.table(reports):
            fh.write(",".join(row) + "\n")


def cmd_suite(args):
    """Synthesize the scene, run every configured solver at every SNR, tabulate."""
    cfg = load_config(args.config)
    out = Path(args.out or cfg.get("output", {}).get("dir", "suite_out"))
    seed = args.seed if args.seed is not None else int(cfg.get("init", {}).get("seed", 0))
    snrs = parse_snr(args.snr) or cfg.get("data", {}).get("snr_list", [20.0])
    solvers = cfg.get("solvers") or {"fcls": {}, "pnp-admm": {}, "pnp-net": {}}
    out.mkdir(parents=True, exist_ok=True)
    reports = {name: [] for name in solvers}
    for snr in snrs:
        for name, params in solvers.items():
            if name not in SOLVERS:
                raise ConfigError(f"unknown solver {name!r}")
            target = out / f"{name}_{snr:g}dB"
            M, A, (tM, tA, clean) = unmix_one(cfg, name, params, target, seed, snr)
            rep = metrics.evaluate(M, A, tM, tA, X=clean.matrix(), label=f"{snr:g}dB")
            reports[name].append(rep)
            logger.info("%s @ %g dB: aRMSE %.4f mSAD %.3f", name, snr, rep.armse, rep.msad)
    for name, reps in reports.items():
        metrics.write_reports(reps, out / f"report_{name}.csv")
        write_table(reps, out / f"table_{name}.csv")
        print(f"{name}: " + " ".join(f"{r.label}={r.armse:.4f}" for r in reps))
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="pnpunmix", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--snr", help="comma-separated SNR list in dB")
        p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    common(p, True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("unmix", help="initialize and run a solver")
    common(p, False)
    p.add_argument("--solver", choices=SOLVERS, help="override the configured solver")
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("eval", help="score estimates against ground truth")
    p.add_argument("--est", nargs="+", required=True, help="estimate directories")
    p.add_argument("--truth", required=True, help="directory written by 'synth'")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--label", help="row label (defaults to the estimate directory name)")
    p.add_argument("--table", action="store_true", help="also write a metric-by-run grid")
    p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suite", help="run the full synthetic benchmark")
    common(p, False)
    p.set_defaults(func=cmd_suite)
    return parser


def thread_limit():
    value = os.environ.get("UNMIX_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"UNMIX_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError("UNMIX_THREADS must be >= 1")
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with thread_limit():
            return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ParameterError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
