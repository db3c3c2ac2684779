"""Command line entry point: ``risloc run|bounds-only|validate <config>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, PRESETS, dumps, load_config


def _load(args):
    return load_config(args.config, args.preset)


def cmd_run(args) -> int:
    from .experiment import run_experiment
    from .reports import emit_reports

    cfg = _load(args)
    out = Path(args.out or cfg.output_dir)

    def progress(done, total):
        if done % max(1, total // 20) == 0 or done == total:
            logging.info("trials %d/%d", done, total)

    result = run_experiment(cfg, workers=args.threads, progress=progress)
    for f in emit_reports(result, out):
        print(f)
    for r in result.rows:
        print(f"P={r.p_dbm:+6.1f} dBm |s|={r.s_norm:.3f}  rmse_jlmc={r.rmse_jlmc:.3e}  "
              f"rmse_unaware={r.rmse_unaware:.3e}  peb_aware={r.peb_aware:.3e}  "
              f"peb_unaware={r.peb_unaware:.3e}  n={r.n_trials}")
    return 0


def cmd_bounds(args) -> int:
    from .experiment import compute_bounds
    from .reports import write_bounds, write_manifest, write_pseudo_true

    cfg = _load(args)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports, pts = compute_bounds(cfg)
    files = [write_bounds(reports, out), write_pseudo_true(pts, out)]
    (out / "config.toml").write_text(dumps(cfg))
    files.append(out / "config.toml")
    files.append(write_manifest(cfg, out, files))
    for f in files:
        print(f)
    for r in sorted(reports, key=lambda r: (r.s_norm, r.p_dbm)):
        print(f"P={r.p_dbm:+6.1f} dBm |s|={r.s_norm:.3f}  peb_aware={r.peb_aware:.3e}  "
              f"peb_unaware={r.peb_unaware:.3e}  bias={r.bias_norm:.3e}")
    return 0


def cmd_validate(args) -> int:
    cfg = _load(args)
    sys.stdout.write(dumps(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="risloc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="TOML config file (may be empty)")
        sp.add_argument("--preset", choices=PRESETS, default=None,
                        help="base profile for keys the file omits")

    r = sub.add_parser("run", help="Monte Carlo sweep with bounds and CSV reports")
    common(r)
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--threads", type=int, default=1, help="worker processes")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bounds-only", help="bounds and pseudo-true positions, no Monte Carlo")
    common(b)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bounds)

    v = sub.add_parser("validate", help="check a config and print it fully resolved")
    common(v)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
