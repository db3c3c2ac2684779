"""CSV and manifest writers. Numbers use 9 significant digits for stable diffs."""

from __future__ import annotations

import os
from pathlib import Path

from . import __version__
from .config import config_hash, dumps

RMSE_HEADER = "p_dbm,s_norm,rmse_jlmc_m,rmse_unaware_m,peb_aware_m,peb_unaware_m,bias_norm_m,n_trials"
PSEUDO_HEADER = "s_norm,x_m,y_m,z_m,bias_norm_m"
BOUNDS_HEADER = "p_dbm,s_norm,peb_aware_m,peb_known_m,peb_unaware_m,bias_norm_m,mcrb_pos_trace_m2,flags"
TRIALS_HEADER = ("cell,trial,seed,p_dbm,s_norm,err_jlmc_m,err_unaware_m,mc_err,"
                 "iterations,converged,monotone,error")


def fmt(x) -> str:
    return f"{float(x):.8e}"


def _write(path: Path, header: str, lines) -> Path:
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for line in lines:
                fh.write(line + "\n")
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc
    return path


def _rmse_line(r) -> str:
    return ",".join([fmt(r.p_dbm), fmt(r.s_norm), fmt(r.rmse_jlmc), fmt(r.rmse_unaware),
                     fmt(r.peb_aware), fmt(r.peb_unaware), fmt(r.bias_norm), str(r.n_trials)])


def write_pseudo_true(pts, out: Path) -> Path:
    lines = [",".join([fmt(q), *(fmt(v) for v in pt.position), fmt(pt.bias_norm)])
             for q, pt in pts]
    return _write(out / "pseudo_true_positions.csv", PSEUDO_HEADER, lines)


def write_bounds(reports, out: Path) -> Path:
    lines = [",".join([fmt(r.p_dbm), fmt(r.s_norm), fmt(r.peb_aware), fmt(r.peb_known),
                       fmt(r.peb_unaware), fmt(r.bias_norm),
                       fmt(r.mcrb[2:5, 2:5].trace()), ";".join(r.flags)])
             for r in sorted(reports, key=lambda r: (r.s_norm, r.p_dbm))]
    return _write(out / "bounds.csv", BOUNDS_HEADER, lines)


def write_manifest(cfg, out: Path, files, extra=()) -> Path:
    path = out / "manifest.txt"
    lines = [
        f"risloc {__version__}",
        f"config_sha256 {config_hash(cfg)}",
        f"master_seed {cfg.master_seed}",
        "trial_seed SeedSequence([master_seed, cell_index, trial_index]).generate_state(1)",
        "cell_index enumerates (s_norm, p_dbm) in config order, s_norm outer",
        "profile_seed SeedSequence([master_seed, 0x5EED])",
        *extra,
        "files " + " ".join(sorted(os.path.basename(f) for f in files)),
    ]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def emit_reports(result, out_dir) -> list:
    """Write the CSVs, the resolved config and a manifest for a finished run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = result.rows
    files = [
        _write(out / "rmse_vs_power.csv", RMSE_HEADER,
               [_rmse_line(r) for r in sorted(rows, key=lambda r: (r.s_norm, r.p_dbm))]),
        _write(out / "rmse_vs_snorm.csv", RMSE_HEADER,
               [_rmse_line(r) for r in sorted(rows, key=lambda r: (r.p_dbm, r.s_norm))]),
        write_pseudo_true(result.pseudo_true, out),
        write_bounds(result.reports, out),
        _write(out / "trials.csv", TRIALS_HEADER, [
            ",".join([str(t.cell), str(t.trial), str(t.seed), fmt(t.p_dbm), fmt(t.s_norm),
                      fmt(t.err_jlmc), fmt(t.err_unaware), fmt(t.mc_err), str(t.iterations),
                      str(int(t.converged)), str(int(t.monotone)),
                      (t.error or "").replace(",", ";").replace("\n", " ")])
            for t in result.trials]),
    ]
    cfg_path = out / "config.toml"
    cfg_path.write_text(dumps(result.config))
    files.append(cfg_path)
    failed = sum(t.failed for t in result.trials)
    files.append(write_manifest(result.config, out, files + [out / "timings.log"],
                                extra=[f"trials {len(result.trials)} failed {failed}"]))
    with open(out / "timings.log", "w") as fh:
        for t in result.trials:
            fh.write(f"{t.cell} {t.trial} {t.wall_time:.3f}\n")
    return files
