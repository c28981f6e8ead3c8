"""Command line entry point: ``rwre <subcommand> --config run.toml``.

Each run writes its statistic files (CSV, JSON, text) into ``--out`` plus a
``manifest.json`` holding the config hash, tool version, output digests,
wall time and censoring summary.  Statistic files depend only on the
config's semantic fields, never on ``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

import rwre
from rwre import _kernel as K
from rwre._rng import derive_seed, stream
from rwre.cascade import CascadeRejected, build_cascade, complete_levels
from rwre.config import ExperimentConfig, load_config
from rwre.env import ConfigError, EnvironmentWindow, NearestNeighbor, validate_conditions
from rwre.estimators import (
    INCONCLUSIVE,
    EstimateWithCI,
    NotTransientRight,
    Verdict,
    ballisticity_verdict,
    combined_se,
    estimate_EH1,
    estimate_EN0,
    estimate_velocity_occupation,
    estimate_velocity_regen,
    estimate_velocity_slope,
    inverse_with_se,
    sample_Nbar0_batch,
)
from rwre.oracle import SingularSystem, UnsupportedLaw, expected_hit_right_linear, expected_occupation_linear, nn_solomon
from rwre.regen import scan_trajectory
from rwre.walk import Walk, write_trajectory

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3

ESTIMATORS = ("slope", "regen", "occupation", "EH1", "EN0")


# ---------------------------------------------------------------------------
# output helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, header: list[str], columns: list) -> Path:
    cols = [np.asarray(c) for c in columns]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([_fmt(v) for v in row] for row in zip(*cols))
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _estimate_rows(estimates: dict[str, EstimateWithCI]) -> str:
    rows = [["estimate", "point", "stderr", "n", "censored", "flags"]]
    for key, e in estimates.items():
        rows.append([key, f"{e.point:.6g}", f"{e.stderr:.3g}", str(e.n), f"{e.censored_fraction:.4g}",
                     ",".join(e.flags) or "-"])
    return _table(rows)


class _Run:
    """Collects outputs of one subcommand and writes the manifest."""

    def __init__(self, args, cfg: ExperimentConfig | None, subcommand: str):
        self.cfg = cfg
        self.subcommand = subcommand
        out = args.out or (cfg.out_dir if cfg else Path("out"))
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.raw = bool(args.raw or (cfg.raw if cfg else False))
        self.figures = bool(args.figures or (cfg.figures if cfg else False))
        self.outputs: list[Path] = []
        self.figure_files: list[Path] = []
        self.censoring: dict = {}
        self.t0 = time.perf_counter()

    def file(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def figure(self, name: str) -> Path:
        p = self.out / name
        self.figure_files.append(p)
        return p

    def finish(self) -> Path:
        manifest = {
            "tool": "rwre",
            "version": rwre.__version__,
            "subcommand": self.subcommand,
            "config_hash": self.cfg.config_hash if self.cfg else None,
            "config_name": self.cfg.name if self.cfg else None,
            "seed": self.cfg.seed if self.cfg else None,
            "workers": self.cfg.workers if self.cfg else None,
            "outputs": {p.name: _sha256(p) for p in self.outputs},
            "figures": [p.name for p in self.figure_files],
            "censoring": self.censoring,
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
        }
        return write_json(self.out / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, cfg: ExperimentConfig, run: _Run) -> int:
    law, b = cfg.law, cfg.budget
    D = b.D or law.support.L + law.support.R
    finals, maxima, minima = [], [], []
    for r in range(args.paths):
        window = EnvironmentWindow(law, derive_seed(cfg.seed, "replica", r, "env"))
        w = Walk(window, 0, stream(cfg.seed, "replica", r, "walk"), record=True, lineage=f"replica:{r}")
        w.run(K.RUN, 0, b.n_steps)
        path = w.path()
        write_trajectory(run.file(f"trajectory_{r:04d}.txt"), path, cfg.seed, law.law_hash, {"D": D})
        finals.append(int(path.positions[-1]))
        maxima.append(int(path.positions.max()))
        minima.append(int(path.positions.min()))
        if run.figures and r == 0:
            from rwre.plotting import plot_path

            plot_path(path.positions, run.figure(f"trajectory_{r:04d}.png"), title=f"{cfg.name} replica {r}")
    write_csv(run.file("paths.csv"), ["replica", "steps", "final", "max", "min"],
              [np.arange(args.paths), np.full(args.paths, b.n_steps), finals, maxima, minima])
    print(_table([["replica", "final", "max", "min"]]
                 + [[str(r), str(f), str(M), str(m)] for r, (f, M, m) in enumerate(zip(finals, maxima, minima))]),
          end="")
    return EXIT_OK


def cmd_regen_scan(args, cfg, run: _Run) -> int:
    report = scan_trajectory(args.trajectory, args.D)
    rec = report.record
    write_csv(run.file("regenerations.csv"), ["k", "time", "position"],
              [np.arange(1, len(rec) + 1), rec.times, rec.positions])
    write_csv(run.file("increments.csv"), ["k", "dt", "dx"],
              [np.arange(2, len(report.sample) + 2), report.sample.dt, report.sample.dx])
    summary = {
        "source": Path(report.source).name,
        "header": report.header,
        "steps": report.steps,
        "D": rec.confirmation_distance,
        "regenerations": len(rec),
        "unconfirmed_tail_dropped": rec.unconfirmed_tail_dropped,
        "increments": len(report.sample),
        "ratio": report.ratio,
        "ratio_se": report.ratio_se,
        "note": report.sample.diagnostic,
    }
    write_json(run.file("regen_scan.json"), summary)
    run.censoring = {"unconfirmed_tail_dropped": rec.unconfirmed_tail_dropped}
    if run.figures:
        from rwre.plotting import plot_path
        from rwre.walk import read_trajectory

        walk, _ = read_trajectory(args.trajectory)
        plot_path(walk.positions, run.figure("regen_scan.png"), rec.times, title=Path(report.source).name)
    print(f"regenerations {len(rec)}  increments {len(report.sample)}  ratio {report.ratio:.6g} +/- {report.ratio_se:.3g}")
    return EXIT_OK


def cmd_cascade(args, cfg: ExperimentConfig, run: _Run) -> int:
    law, b, th = cfg.law, cfg.budget, cfg.thresholds
    R = law.support.R
    half = b.cascade_levels // 2
    lo, hi = -half * R + 1, (b.cascade_levels - half) * R
    try:
        cascade = build_cascade(law, lo, hi, cfg.seed, b.cascade_step_cap, th.max_censored)
    except CascadeRejected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    levels = np.array(list(complete_levels(cascade)), dtype=np.int64)
    sites = [cascade.coalescence_at_level(int(k)) for k in levels]
    indicator = np.array([s is not None for s in sites], dtype=bool)
    write_csv(run.file("coalescence.csv"), ["level", "coalesced", "site"],
              [levels, indicator, [s if s is not None else "" for s in sites]])

    values, censored, x_star = sample_Nbar0_batch(
        law, b.samples, cfg.seed, b.search_cap_levels, b.barrier, b.cascade_step_cap, cfg.workers
    )
    sample_seeds = [derive_seed(cfg.seed, "nbar", s) for s in range(b.samples)]
    write_csv(run.file("nbar0.csv"), ["seed", "x_star", "value", "censored"], [sample_seeds, x_star, values, censored])
    m = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else float("nan")
    summary = {
        "window": [lo, hi],
        "levels": len(levels),
        "coalescences": int(indicator.sum()),
        "coalescence_frequency": float(indicator.mean()) if len(levels) else 0.0,
        "finite_walks_censored_fraction": cascade.censored_fraction(),
        "nbar0_samples": int(b.samples),
        "nbar0_mean": m,
        "nbar0_se": se,
        "nbar0_censored_fraction": float(censored.mean()),
        "barrier": b.barrier,
    }
    write_json(run.file("cascade.json"), summary)
    run.censoring = {
        "finite_walks": summary["finite_walks_censored_fraction"],
        "nbar0": summary["nbar0_censored_fraction"],
    }
    if run.figures:
        from rwre.plotting import plot_cascade

        plot_cascade(levels, indicator, values, run.figure("cascade.png"))
    print(_table([
        ["levels", "coalescences", "frequency", "nbar0_mean", "nbar0_se"],
        [str(len(levels)), str(summary["coalescences"]), f"{summary['coalescence_frequency']:.4g}",
         f"{m:.6g}", f"{se:.3g}"],
    ]), end="")
    return EXIT_OK


def _run_estimators(cfg: ExperimentConfig, which) -> dict[str, EstimateWithCI]:
    law, b, th, seed, workers = cfg.law, cfg.budget, cfg.thresholds, cfg.seed, cfg.workers
    out = {}
    if "slope" in which:
        out["slope"] = estimate_velocity_slope(law, b.n_steps, b.replicas, seed, workers=workers, thresholds=th)
    if "regen" in which:
        out["regen"] = estimate_velocity_regen(law, b.n_steps, b.replicas, b.D, seed, workers=workers)
    if "occupation" in which:
        out["occupation"] = estimate_velocity_occupation(
            law, b.samples, (b.search_cap_levels, b.barrier, b.cascade_step_cap), seed, workers=workers
        )
    if "EH1" in which:
        out["EH1"] = estimate_EH1(law, b.n_hitting, b.step_cap, seed, workers=workers, thresholds=th)
    if "EN0" in which:
        out["EN0"] = estimate_EN0(law, b.n_hitting, b.barrier, b.step_cap, seed, workers=workers, thresholds=th)
    return out


def cross_checks(est: dict[str, EstimateWithCI], n_sigma: float) -> dict:
    """Pairwise velocity agreement and the inequality chain, where the inputs are present."""
    checks = {}
    vel = [k for k in ("slope", "regen", "occupation") if k in est and INCONCLUSIVE not in est[k].flags]
    for i, a in enumerate(vel):
        for c in vel[i + 1:]:
            d = est[a].point - est[c].point
            s = combined_se(est[a].stderr, est[c].stderr)
            checks[f"{a}~{c}"] = {"diff": d, "se": s, "ok": abs(d) <= n_sigma * s}
    if "EN0" in est and "EH1" in est:
        d = est["EN0"].point - est["EH1"].point
        s = combined_se(est["EN0"].stderr, est["EH1"].stderr)
        checks["EN0<=EH1"] = {"diff": d, "se": s, "ok": d <= n_sigma * s}
    if "slope" in est and "EN0" in est:
        inv, inv_se = inverse_with_se(est["EN0"])
        d = est["slope"].point - inv
        s = combined_se(est["slope"].stderr, inv_se)
        checks["v>=1/EN0"] = {"diff": d, "se": s, "ok": d >= -n_sigma * s}
    return checks


def _write_raw(run: _Run, est: dict[str, EstimateWithCI]) -> None:
    for key, e in est.items():
        if not e.raw:
            continue
        names = list(e.raw)
        n = len(e.raw[names[0]])
        index = "increment" if key == "regen" else ("sample" if key == "occupation" else "replica")
        write_csv(run.file(f"raw_{key}.csv"), [index, *names], [np.arange(n), *(e.raw[k] for k in names)])


def cmd_estimate(args, cfg: ExperimentConfig, run: _Run) -> int:
    which = ESTIMATORS if not args.only else tuple(args.only.split(","))
    unknown = [w for w in which if w not in ESTIMATORS]
    if unknown:
        raise ConfigError(f"--only: unknown estimator(s) {unknown}; choose from {list(ESTIMATORS)}")
    est = _run_estimators(cfg, which)
    checks = cross_checks(est, cfg.thresholds.n_sigma)
    write_json(run.file("estimates.json"), {
        "config_hash": cfg.config_hash,
        "estimates": {k: e.to_dict() for k, e in est.items()},
        "checks": checks,
    })
    text = _estimate_rows(est)
    run.file("estimates.txt").write_text(text)
    if run.raw:
        _write_raw(run, est)
    run.censoring = {k: e.censored_fraction for k, e in est.items()}
    if run.figures:
        from rwre.plotting import plot_doubling

        plot_doubling(est, run.figure("estimates.png"))
    print(text, end="")
    return EXIT_OK


def cmd_verdict(args, cfg: ExperimentConfig, run: _Run) -> int:
    try:
        v = ballisticity_verdict(cfg.law, cfg.budget, cfg.seed, thresholds=cfg.thresholds, workers=cfg.workers)
    except NotTransientRight as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    write_json(run.file("verdict.json"), {"config_hash": cfg.config_hash, **v.to_dict()})
    text = f"verdict: {v.verdict.value}\n" + "".join(f"  {r}\n" for r in v.reasons) + _estimate_rows(v.evidence)
    run.file("verdict.txt").write_text(text)
    if run.raw:
        _write_raw(run, v.evidence)
    run.censoring = {k: e.censored_fraction for k, e in v.evidence.items()}
    if run.figures:
        from rwre.plotting import plot_doubling

        plot_doubling(v.evidence, run.figure("verdict.png"))
    print(text, end="")
    if args.strict and v.verdict is Verdict.INCONCLUSIVE:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def oracle_report(cfg: ExperimentConfig) -> dict:
    law = cfg.law
    out: dict = {"regime": None, "v": None, "brackets": {}, "M": None, "notes": []}
    if isinstance(law, NearestNeighbor):
        res = nn_solomon(law)
        out.update(regime=res.regime.value, v=res.v, moments=res.to_dict())
    try:
        hit = expected_hit_right_linear(law)
        occ = expected_occupation_linear(law, cfg.budget.barrier)
    except (UnsupportedLaw, SingularSystem) as exc:
        out["notes"].append(f"linear systems not available: {exc}")
    else:
        out["brackets"] = {"EH1": hit.to_dict(), "EN0": occ.to_dict()}
        out["M"] = max(hit.truncation, occ.truncation)
        if out["v"] is None:
            drifts = [s.mean for s in law.essential_site_laws()]
            v = float(np.mean(drifts))
            out["v"] = v
            out["regime"] = "TransientRightBallistic" if v > 0 else None
    cond = validate_conditions(law)
    out["conditions"] = {"bounded_jumps": cond.bounded_jumps, "irreducible": cond.irreducible, "notes": cond.notes}
    return out


def cmd_oracle(args, cfg: ExperimentConfig, run: _Run) -> int:
    rep = oracle_report(cfg)
    write_json(run.file("oracle.json"), rep)
    print(json.dumps({k: rep[k] for k in ("regime", "v", "M")}))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "regen-scan": cmd_regen_scan,
    "cascade": cmd_cascade,
    "estimate": cmd_estimate,
    "oracle": cmd_oracle,
    "verdict": cmd_verdict,
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (TOML)")
    common.add_argument("--seed", type=_u64, help="master seed, overrides the config")
    common.add_argument("--workers", type=_positive, help="worker threads (does not change results)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--raw", action="store_true", help="also write per-replica CSV files")
    common.add_argument("--figures", action="store_true", help="also render PNG figures into the output directory")
    common.add_argument("--strict", action="store_true", help="exit with 3 on an Inconclusive verdict")

    p = argparse.ArgumentParser(prog="rwre", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rwre {rwre.__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate and dump trajectories")
    s.add_argument("--paths", type=_positive, default=1, help="number of replicas to dump")
    s = sub.add_parser("regen-scan", parents=[common], help="regenerations of a trajectory dump")
    s.add_argument("trajectory", type=Path)
    s.add_argument("--D", type=_positive, default=None, help="confirmation distance (default: from header)")
    sub.add_parser("cascade", parents=[common], help="coalescences and bi-infinite occupation samples")
    s = sub.add_parser("estimate", parents=[common], help="run the estimators")
    s.add_argument("--only", help=f"comma-separated subset of {','.join(ESTIMATORS)}")
    sub.add_parser("oracle", parents=[common], help="exact or bracketed reference values")
    sub.add_parser("verdict", parents=[common], help="ballisticity verdict")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = None
    try:
        if args.config is not None:
            cfg = load_config(args.config, seed=args.seed).with_overrides(workers=args.workers)
        elif args.command != "regen-scan":
            raise ConfigError("--config is required for this subcommand")
        run = _Run(args, cfg, args.command)
        code = COMMANDS[args.command](args, cfg, run)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    if code == EXIT_OK or code == EXIT_INCONCLUSIVE:
        run.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
