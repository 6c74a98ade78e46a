"""Command-line entry points tying the package together.

Subcommands: ``bounds`` (worst-case bound table and scaled step vectors),
``simulate`` (seeded copula simulation emitting FDR/FNR/sample-size
metrics), ``fss`` (matched fixed-sample-size search), ``verify-lp``
(LP certification of the closed-form bound), and ``yellowcard`` (drug-table
monitoring experiment).

Every experiment command is deterministic given its resolved configuration
and seed: rerunning overwrites the primary report files with identical
bytes.  Wall-clock timings go to a separate timings file so diffs stay
clean.  Exit codes: 0 success, 2 configuration error, 3 data error,
4 internal numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .calibrate import mc_truncated_critical_values
from .core import StepVector, bh_steps, bl_steps, d_bound, d_bound_at, scale_for_fdr, scale_for_pfdr
from .datagen import Bernoulli, CopulaConfig, Poisson, Toeplitz, stream_sources
from .errors import ConfigError, DataError, NumericalError
from .fixed_sample import find_matching_fss
from .procedures import TrialResult, run_open_ended, run_rejective, summarize
from .sprt import (
    CumulativeLlrSource,
    SimpleModel,
    make_standardizer,
    make_upper_standardizer,
    stepdown_critical_values,
)
from .worstcase import verify_bound
from .yellowcard import ExperimentConfig, load_drug_table, run_monitoring, thresholds

__all__ = [
    "RunManifest",
    "SimulationConfig",
    "run_simulation",
    "main",
]

_SCHEMES = {"bh": bh_steps, "bl": bl_steps}


# ---------------------------------------------------------------------------
# config plumbing

def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def _field(raw: dict, name: str, kind, *, required=True, default=None):
    """Extract raw[name] as ``kind``, reporting errors by config field path."""
    if name not in raw or raw[name] is None:
        if required:
            raise ConfigError(f"config.{name}: missing required field")
        return default
    value = raw[name]
    path = f"config.{name}"
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise AssertionError(f"unsupported field kind {kind}")


def _reject_unknown(raw: dict, allowed) -> None:
    for key in sorted(set(raw) - set(allowed)):
        raise ConfigError(f"config.{key}: unknown field")


def _resolve_seed(raw: dict, args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    seed = _field(raw, "seed", int, required=False)
    if seed is None:
        raise ConfigError("config.seed: missing (set it in the config or pass --seed)")
    return seed


@dataclass(frozen=True)
class SimulationConfig:
    """Resolved inputs of one copula simulation batch."""

    family: str
    null_param: float
    alt_param: float
    j: int
    m0: int
    rho: float
    q1: float
    q2: float
    mode: str  # "open" | "rejective"
    reps: int
    seed: int
    n_bar: int | None = None
    horizon: int = 5000
    calib_reps: int = 20000
    block: int = 64

    def __post_init__(self):
        if self.family not in ("bernoulli", "poisson"):
            raise ConfigError(
                f"config.family: must be 'bernoulli' or 'poisson', got {self.family!r}"
            )
        hi = 1.0 if self.family == "bernoulli" else float("inf")
        if not 0.0 < self.null_param < self.alt_param < hi:
            raise ConfigError(
                "config.null_param/alt_param: need 0 < null < alt"
                + (" < 1" if self.family == "bernoulli" else "")
            )
        if self.j < 1:
            raise ConfigError(f"config.j: must be >= 1, got {self.j}")
        if not 0 <= self.m0 <= self.j:
            raise ConfigError(f"config.m0: must lie in [0, j], got {self.m0}")
        if not -1.0 < self.rho < 1.0:
            raise ConfigError(f"config.rho: must lie in (-1, 1), got {self.rho}")
        for name, q in (("q1", self.q1), ("q2", self.q2)):
            if not 0.0 < q < 1.0:
                raise ConfigError(f"config.{name}: must lie in (0, 1), got {q}")
        if self.mode not in ("open", "rejective"):
            raise ConfigError(f"config.mode: must be 'open' or 'rejective', got {self.mode!r}")
        if self.reps < 1:
            raise ConfigError(f"config.reps: must be >= 1, got {self.reps}")
        if self.horizon < 1:
            raise ConfigError(f"config.horizon: must be >= 1, got {self.horizon}")
        if self.mode == "rejective":
            if self.n_bar is None or self.n_bar < 1:
                raise ConfigError("config.n_bar: rejective mode needs n_bar >= 1")
            if self.calib_reps < 1:
                raise ConfigError(f"config.calib_reps: must be >= 1, got {self.calib_reps}")

    @classmethod
    def from_dict(cls, raw: dict, seed: int) -> "SimulationConfig":
        _reject_unknown(raw, [f.name for f in dataclass_fields(cls)])
        return cls(
            family=_field(raw, "family", str),
            null_param=_field(raw, "null_param", float),
            alt_param=_field(raw, "alt_param", float),
            j=_field(raw, "j", int),
            m0=_field(raw, "m0", int),
            rho=_field(raw, "rho", float),
            q1=_field(raw, "q1", float, required=False, default=0.25),
            q2=_field(raw, "q2", float, required=False, default=0.15),
            mode=_field(raw, "mode", str, required=False, default="open"),
            reps=_field(raw, "reps", int),
            seed=seed,
            n_bar=_field(raw, "n_bar", int, required=False),
            horizon=_field(raw, "horizon", int, required=False, default=5000),
            calib_reps=_field(raw, "calib_reps", int, required=False, default=20000),
            block=_field(raw, "block", int, required=False, default=64),
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclass_fields(self)}


# ---------------------------------------------------------------------------
# simulation engine

def _sim_pieces(config: SimulationConfig):
    model = SimpleModel(config.family, config.null_param, config.alt_param)
    marginal = Bernoulli if config.family == "bernoulli" else Poisson
    pairs = [(marginal(config.null_param), marginal(config.alt_param))] * config.j
    truth = [True] * config.m0 + [False] * (config.j - config.m0)
    return model, pairs, truth


def _trial_sources(config: SimulationConfig, pairs, truth, model, std, t: int):
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(t,))
    )
    obs = stream_sources(
        CopulaConfig(j=config.j, structure=Toeplitz(config.rho)),
        pairs,
        truth,
        horizon=config.horizon,
        rng=rng,
        block=config.block,
    )
    return [CumulativeLlrSource(o, model, std) for o in obs]


def _trials_for_range(
    config: SimulationConfig, b_raw, start: int, stop: int
) -> list[TrialResult]:
    """Run trials [start, stop); per-trial seeds make chunking irrelevant."""
    model, pairs, truth = _sim_pieces(config)
    if config.mode == "open":
        alpha = scale_for_fdr(bh_steps(config.q1, config.j), config.q1)
        beta = scale_for_fdr(bh_steps(config.q2, config.j), config.q2)
        std = make_standardizer(stepdown_critical_values(alpha, beta))
        runner = lambda srcs: run_open_ended(srcs, std.a, std.b, block=config.block)
    else:
        std = make_upper_standardizer(np.asarray(b_raw, dtype=float))
        runner = lambda srcs: run_rejective(srcs, std.b, config.n_bar, block=config.block)
    out = []
    for t in range(start, stop):
        out.append(runner(_trial_sources(config, pairs, truth, model, std, t)))
    return out


def run_simulation(config: SimulationConfig, workers: int = 1):
    """Run the configured batch; returns (MetricsSummary, calibration_b | None).

    Trials are independently seeded by index, so the result is identical
    for any ``workers`` value; chunks merge in index order.
    """
    b_raw = None
    if config.mode == "rejective":
        model, _, _ = _sim_pieces(config)
        alpha = scale_for_fdr(bh_steps(config.q1, config.j), config.q1)
        report = mc_truncated_critical_values(
            model, alpha, config.n_bar, config.calib_reps, config.seed
        )
        b_raw = report.b
    if workers <= 1:
        trials = _trials_for_range(config, b_raw, 0, config.reps)
    else:
        bounds = np.linspace(0, config.reps, workers + 1).astype(int)
        chunks = [(s, e) for s, e in zip(bounds[:-1], bounds[1:]) if e > s]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_trials_for_range, config, b_raw, s, e) for s, e in chunks
            ]
            trials = [t for fut in futures for t in fut.result()]
    _, _, truth = _sim_pieces(config)
    return summarize(trials, truth), b_raw


# ---------------------------------------------------------------------------
# report emission

@dataclass(frozen=True)
class RunManifest:
    """Provenance record tying every report of a run to its configuration."""

    command: str
    config_digest: str
    seed: int | None
    versions: dict
    timings: dict


def _versions() -> dict:
    return {
        "seqfdr": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def _digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _out_dir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get("SEQFDR_OUT") or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _emit(out: Path, manifest: RunManifest) -> None:
    """Manifest and timings land in separate files: reports stay diffable."""
    stable = {
        "command": manifest.command,
        "config_digest": manifest.config_digest,
        "seed": manifest.seed,
        "versions": manifest.versions,
    }
    _write_json(out / f"{manifest.command}_manifest.json", stable)
    _write_json(out / f"{manifest.command}_timings.json", manifest.timings)


def _write_csv_row(path: Path, payload: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(payload.keys())
        writer.writerow("" if v is None else v for v in payload.values())


# ---------------------------------------------------------------------------
# subcommands

def _steps_for(scheme: str, q: float, j: int) -> StepVector:
    if scheme not in _SCHEMES:
        raise ConfigError(f"unknown step scheme {scheme!r} (choose from bh, bl)")
    if not 0.0 < q < 1.0:
        raise ConfigError(f"q must lie in (0, 1), got {q}")
    if j < 1:
        raise ConfigError(f"J must be >= 1, got {j}")
    return _SCHEMES[scheme](q, j)


def cmd_bounds(args) -> int:
    alpha = _steps_for(args.scheme, args.q, args.j)
    ms = [args.m] if args.m is not None else range(1, args.j + 1)
    print(f"scheme={args.scheme} q={args.q} J={args.j}")
    print("m  D(alpha,m)")
    for m in ms:
        print(f"{m:<2d} {d_bound_at(alpha, m):.6f}")
    best = d_bound(alpha)
    print(f"D(alpha) = {best.value:.6f} at m = {best.argmax_m}")
    fdr = scale_for_fdr(alpha, args.q)
    print("scaled for FDR control:", " ".join(f"{v:.6f}" for v in fdr.values))
    pfdr = scale_for_pfdr(alpha, args.q, args.gamma)
    print(
        f"scaled for pFDR control (gamma={args.gamma}):",
        " ".join(f"{v:.6f}" for v in pfdr.values),
    )
    return 0


def cmd_simulate(args) -> int:
    raw = _load_json(args.config)
    config = SimulationConfig.from_dict(raw, _resolve_seed(raw, args))
    digest = _digest(config.as_dict())
    t0 = time.perf_counter()
    summary, b_raw = run_simulation(config, workers=args.workers)
    elapsed = time.perf_counter() - t0

    out = _out_dir(args)
    metrics = summary.as_dict()
    _write_csv_row(out / "simulate_report.csv", metrics)
    payload = {"config_digest": digest, "config": config.as_dict(), "metrics": metrics}
    if b_raw is not None:
        payload["calibration_b"] = [float(v) for v in b_raw]
    _write_json(out / "simulate_report.json", payload)
    _emit(out, RunManifest("simulate", digest, config.seed, _versions(),
                           {"total_s": elapsed}))
    print(
        f"simulate: {config.family} j={config.j} m0={config.m0} mode={config.mode} "
        f"reps={config.reps} -> fdr={summary.fdr:.4f} fnr={summary.fnr:.4f} "
        f"mean_stream_n={summary.mean_stream_n:.2f}"
    )
    return 0


_FSS_FIELDS = (
    "family", "null_param", "alt_param", "j", "m0", "rho",
    "q1", "target_fnr", "reps", "seed", "n_max",
)


def cmd_fss(args) -> int:
    raw = _load_json(args.config)
    _reject_unknown(raw, _FSS_FIELDS)
    seed = _resolve_seed(raw, args)
    family = _field(raw, "family", str)
    if family not in ("bernoulli", "poisson"):
        raise ConfigError(f"config.family: must be 'bernoulli' or 'poisson', got {family!r}")
    j = _field(raw, "j", int)
    m0 = _field(raw, "m0", int)
    if not 0 <= m0 <= j:
        raise ConfigError(f"config.m0: must lie in [0, j], got {m0}")
    model = SimpleModel(family, _field(raw, "null_param", float), _field(raw, "alt_param", float))
    cop = CopulaConfig(j=j, structure=Toeplitz(_field(raw, "rho", float)), seed=seed)
    truth = [True] * m0 + [False] * (j - m0)
    resolved = {k: raw.get(k) for k in _FSS_FIELDS}
    resolved["seed"] = seed
    digest = _digest(resolved)

    t0 = time.perf_counter()
    result = find_matching_fss(
        model,
        cop,
        truth,
        _field(raw, "q1", float, required=False, default=0.25),
        _field(raw, "target_fnr", float),
        _field(raw, "reps", int),
        n_max=_field(raw, "n_max", int, required=False, default=4096),
    )
    elapsed = time.perf_counter() - t0

    out = _out_dir(args)
    row = {
        "n_fss": result.n_fss,
        "achieved_fnr": result.achieved_fnr,
        "achieved_fdr": result.achieved_fdr,
        "target_fnr": result.target_fnr,
        "reps": result.reps,
        "found": result.found,
        "fnr_se": result.fnr_se,
    }
    _write_csv_row(out / "fss_report.csv", row)
    _write_json(out / "fss_report.json",
                {"config_digest": digest, "config": resolved, "result": row})
    _emit(out, RunManifest("fss", digest, seed, _versions(), {"total_s": elapsed}))
    print(f"fss: n_fss={result.n_fss} found={result.found} "
          f"achieved_fnr={result.achieved_fnr:.4f} (target {result.target_fnr:.4f})")
    return 0


def cmd_verify_lp(args) -> int:
    if args.j_min < 1 or args.j_max < args.j_min:
        raise ConfigError(f"need 1 <= j-min <= j-max, got {args.j_min}..{args.j_max}")
    schemes = args.scheme or ["bh"]
    rows = []
    for scheme in schemes:
        for j in range(args.j_min, args.j_max + 1):
            alpha = _steps_for(scheme, args.q, j)
            for m0 in range(0, j + 1):
                rep = verify_bound(alpha, m0)
                rows.append({
                    "scheme": scheme, "q": args.q, "j": j, "m0": m0,
                    "lp_optimum": rep.lp_optimum, "d_value": rep.d_value,
                    "gap": rep.gap, "attained": rep.passed,
                })
    print("scheme q     J  m0  LP-optimum  D-bound     gap        attained")
    for r in rows:
        print(
            f"{r['scheme']:<6s} {r['q']:<5g} {r['j']:<2d} {r['m0']:<3d} "
            f"{r['lp_optimum']:<11.8f} {r['d_value']:<11.8f} "
            f"{r['gap']:< 10.2e} {str(r['attained']).lower()}"
        )
    out = _out_dir(args)
    with open(out / "verify_lp_report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    digest = _digest({"schemes": schemes, "q": args.q,
                      "j_min": args.j_min, "j_max": args.j_max})
    _emit(out, RunManifest("verify_lp", digest, None, _versions(), {}))
    return 0


_YC_FIELDS = ("q1", "q2", "p_h", "p_g", "top_n", "seed", "horizon")


def cmd_yellowcard(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    _reject_unknown(raw, _YC_FIELDS)
    seed = _resolve_seed(raw, args)
    records = load_drug_table(args.table)
    p_h = _field(raw, "p_h", float, required=False)
    p_g = _field(raw, "p_g", float, required=False)
    if (p_h is None) != (p_g is None):
        raise ConfigError("config.p_h/p_g: override both thresholds or neither")
    if p_h is None:
        p_h, p_g = thresholds(records)
    config = ExperimentConfig(
        records=tuple(records),
        q1=_field(raw, "q1", float, required=False, default=0.05),
        q2=_field(raw, "q2", float, required=False, default=0.15),
        p_h=p_h,
        p_g=p_g,
        rho_seed=seed,
        top_n=_field(raw, "top_n", int, required=False, default=len(records)),
    )
    resolved = {"table": str(args.table), "q1": config.q1, "q2": config.q2,
                "p_h": config.p_h, "p_g": config.p_g, "top_n": config.top_n,
                "seed": seed}
    digest = _digest(resolved)

    t0 = time.perf_counter()
    report = run_monitoring(
        config, horizon=_field(raw, "horizon", int, required=False, default=1000)
    )
    elapsed = time.perf_counter() - t0

    out = _out_dir(args)
    with open(out / "yellowcard_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["drug", "action", "termination_step", "termination_level", "truncated_flag"]
        )
        for row in report.rows:
            writer.writerow([row.drug, row.action, row.termination_step,
                             row.termination_level, int(row.truncated)])
    _write_json(out / "yellowcard_report.json", {
        "config_digest": digest,
        "config": resolved,
        "seed": seed,
        "thresholds": {"p_h": report.p_h, "p_g": report.p_g},
        "rho_by_cluster": [[c, r] for c, r in report.rho_by_cluster],
        "alpha": list(report.alpha),
        "beta": list(report.beta),
    })
    _emit(out, RunManifest("yellowcard", digest, seed, _versions(),
                           {"total_s": elapsed}))
    accepted = sum(r.action == "accept" for r in report.rows)
    print(f"yellowcard: {len(report.rows)} drugs monitored, "
          f"{accepted} accepted, {len(report.rows) - accepted} rejected")
    return 0


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqfdr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", help="print the worst-case bound table")
    p.add_argument("--scheme", default="bh", choices=sorted(_SCHEMES))
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--j", type=int, required=True)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", help="run a seeded copula simulation batch")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fss", help="matched fixed-sample-size search")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fss)

    p = sub.add_parser("verify-lp", help="LP certification of the closed-form bound")
    p.add_argument("--scheme", action="append", choices=sorted(_SCHEMES))
    p.add_argument("--q", type=float, default=0.2)
    p.add_argument("--j-min", type=int, default=2)
    p.add_argument("--j-max", type=int, default=4)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify_lp)

    p = sub.add_parser("yellowcard", help="drug-table monitoring experiment")
    p.add_argument("table", help="drug report CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_yellowcard)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
