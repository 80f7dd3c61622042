"""Command line entry point: ``strongnoise <command> <config> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import asymptotics, experiments
from .io import ConfigError, emit_csv, emit_weak_csv, load_config
from .markov import is_ergodic, stationary_distribution
from .model import ModelError, fisher_information

log = logging.getLogger("strongnoise")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--trials", type=int, help="override the configured trial count")
    p.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo trials")
    p.add_argument("--mode", choices=("dt", "ct"), help="assert the chain's time mode")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="strongnoise", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", parents=[common], help="check the chain and noise, report ergodicity")
    p.add_argument("config")
    p = sub.add_parser("predict", parents=[common], help="print the strong-noise asymptotic prediction")
    p.add_argument("config")
    p = sub.add_parser("sweep", parents=[common], help="strong-noise sigma sweep to CSV")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p = sub.add_parser("weak-sweep", parents=[common], help="slow-chain eps sweep to CSV")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p = sub.add_parser("zcov", parents=[common], help="fluctuation-process covariance against P")
    p.add_argument("config")
    p.add_argument("--sigma-free", action="store_true",
                   help="the fluctuation process does not depend on sigma (accepted for clarity)")
    p.add_argument("--steps", type=int, default=10**5, help="retained steps (discrete time)")
    p.add_argument("--paths", type=int, default=10**4, help="independent paths (continuous time)")
    p.add_argument("--T", type=float, default=50.0, help="horizon (continuous time)")
    return parser


def _fmt_vec(v) -> str:
    return "[" + ", ".join(f"{x:.10g}" for x in np.ravel(v)) + "]"


def _fmt_mat(M) -> str:
    return "\n".join("  " + _fmt_vec(row) for row in np.atleast_2d(M))


def _load(args):
    cfg = load_config(args.config, args.command)
    if args.mode is not None:
        want = "discrete" if args.mode == "dt" else "continuous"
        if cfg.chain.mode != want:
            raise ConfigError(f"--mode {args.mode} does not match the config's mode {cfg.chain.mode!r}")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    return cfg.with_(**changes) if changes else cfg


def cmd_validate(cfg, args, out) -> int:
    chain = cfg.chain
    erg = is_ergodic(chain)
    print(f"mode: {chain.mode}", file=out)
    print(f"states: {chain.d}", file=out)
    print(f"noise: {cfg.noise.kind}" + (" (custom density: integrability conditions unchecked)"
                                        if cfg.noise.caveat else ""), file=out)
    print(f"fisher information: {fisher_information(cfg.noise):.10g}", file=out)
    if erg.ergodic:
        witness = f" (witness q={erg.witness})" if erg.witness is not None else ""
        print(f"ergodic: yes{witness}", file=out)
        print(f"stationary law: {_fmt_vec(stationary_distribution(chain))}", file=out)
        return 0
    print("ergodic: no", file=out)
    print("error: chain is not ergodic; steady-state commands will refuse it", file=sys.stderr)
    return 1


def cmd_predict(cfg, args, out) -> int:
    pred = asymptotics.predict(cfg.chain, cfg.noise, seed=cfg.seed)
    print(f"mu: {_fmt_vec(pred.mu)}", file=out)
    print(f"P ({pred.P.mode}, residual {pred.P.residual:.3g}):", file=out)
    print(_fmt_mat(pred.P.P), file=out)
    print(f"E_inf: {pred.e_infinity:.12g}", file=out)
    print(f"P_inf: {pred.p_infinity:.12g}", file=out)
    print(f"mse_gap_limit: {pred.mse_gap_limit:.12g}", file=out)
    se = f" +- {pred.map_gap_stderr:.3g}" if pred.map_gap_stderr > 0 else ""
    print(f"map_gap_limit: {pred.map_gap_limit:.12g}{se}", file=out)
    print(f"argmax set J (1-based): {{{', '.join(str(j + 1) for j in pred.argmax_set)}}}", file=out)
    print(f"degenerate_map: {str(pred.degenerate_map).lower()}", file=out)
    return 0


def cmd_sweep(cfg, args, out) -> int:
    rows = experiments.sweep(cfg, threads=args.threads)
    emit_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}", file=out)
    return 0


def cmd_weak_sweep(cfg, args, out) -> int:
    rows = experiments.weak_noise_sweep(cfg, threads=args.threads)
    emit_weak_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}", file=out)
    return 0


def cmd_zcov(cfg, args, out) -> int:
    C, P, rel = experiments.z_covariance(cfg, n=args.steps, n_paths=args.paths, T=args.T)
    print("sample covariance:", file=out)
    print(_fmt_mat(C), file=out)
    print("lyapunov P:", file=out)
    print(_fmt_mat(P), file=out)
    print(f"relative frobenius error: {rel:.6g}", file=out)
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "weak-sweep": cmd_weak_sweep,
    "zcov": cmd_zcov,
}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
