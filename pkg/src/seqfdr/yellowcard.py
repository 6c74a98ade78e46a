"""Pharmacovigilance monitoring demo: drug report table in, decision table out.

Takes a prepared CSV of per-drug side-effect totals (target reaction count,
all-other count, years on record, cluster label), derives smoothed yearly
report rates and each drug's target-reaction fraction, sets the null/signal
fractions p_h and p_g at the 50th and 90th percentiles of the full table,
and monitors simulated report streams for the top-N most-reported drugs
with the open-ended step-down procedure.  Dependence enters through a
per-cluster latent copula whose decay parameters are drawn once per
experiment.  The output mirrors a terminal-action table: one row per drug
with the action, the termination year, and the crossed boundary level.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .core import bh_steps, scale_for_fdr
from .datagen import BlockClusters, CopulaConfig, ReportPair, stream_sources
from .errors import ConfigError, DrugTableError
from .procedures import run_open_ended
from .sprt import (
    CumulativeLlrSource,
    SimpleModel,
    make_standardizer,
    stepdown_critical_values,
)

logger = logging.getLogger(__name__)

__all__ = [
    "DrugRecord",
    "ExperimentConfig",
    "DecisionRow",
    "MonitoringReport",
    "load_drug_table",
    "derive_rates",
    "amnesia_fraction",
    "thresholds",
    "label_hypothesis",
    "run_monitoring",
]

_COLUMNS = ("name", "amnesia_count", "other_count", "years", "cluster")


@dataclass(frozen=True)
class DrugRecord:
    """One drug's report totals: target-reaction count, rest, years, cluster."""

    name: str
    amnesia_count: int
    other_count: int
    years: float
    cluster: int

    def __post_init__(self):
        if self.amnesia_count < 0 or self.other_count < 0:
            raise ValueError(
                f"report counts must be nonnegative, got "
                f"({self.amnesia_count}, {self.other_count})"
            )
        if not self.years > 0.0:
            raise ValueError(f"years on record must be positive, got {self.years}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs of one monitoring run.

    ``p_h``/``p_g`` are the null and signal reaction fractions (usually the
    table percentiles from :func:`thresholds`); ``rho_seed`` drives both the
    per-cluster correlation draw and the report streams; ``top_n`` caps the
    number of monitored drugs, most-reported first.
    """

    records: tuple[DrugRecord, ...]
    q1: float
    q2: float
    p_h: float
    p_g: float
    rho_seed: int
    top_n: int

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for name, q in (("q1", self.q1), ("q2", self.q2)):
            if not 0.0 < q < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {q}")
        if not 0.0 < self.p_h < self.p_g < 1.0:
            raise ConfigError(
                f"need 0 < p_h < p_g < 1, got p_h={self.p_h}, p_g={self.p_g}"
            )
        if self.top_n < 1:
            raise ConfigError(f"top_n must be at least 1, got {self.top_n}")
        if not self.records:
            raise ConfigError("records must be nonempty")


@dataclass(frozen=True)
class DecisionRow:
    """One monitored drug's terminal action."""

    drug: str
    action: str  # "reject" | "accept"
    termination_step: int  # years until the stream stopped
    termination_level: int  # cumulative boundary rank crossed
    truncated: bool


@dataclass(frozen=True)
class MonitoringReport:
    """Decision table plus everything needed to reproduce it.

    ``rho_by_cluster`` pairs each original cluster label with its drawn
    correlation decay; ``alpha``/``beta`` are the scaled step values the
    boundaries were built from.
    """

    rows: tuple[DecisionRow, ...]
    p_h: float
    p_g: float
    q1: float
    q2: float
    rho_by_cluster: tuple[tuple[int, float], ...]
    alpha: tuple[float, ...]
    beta: tuple[float, ...]


def load_drug_table(path) -> list[DrugRecord]:
    """Parse a drug report CSV with header name,amnesia_count,other_count,years,cluster.

    Structural problems (missing columns, malformed numbers) raise
    DrugTableError with the file location; rows that parse but violate the
    record invariants (negative counts, nonpositive years) are dropped with
    a logged warning naming the line.  An empty file yields an empty list.
    """
    records: list[DrugRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return records
        missing = [c for c in _COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DrugTableError(f"{path}: missing columns {', '.join(missing)}")
        for row in reader:
            line = reader.line_num
            try:
                name = (row["name"] or "").strip()
                amnesia = int(row["amnesia_count"].strip())
                other = int(row["other_count"].strip())
                years = float(row["years"].strip())
                cluster = int(row["cluster"].strip())
            except (AttributeError, TypeError, ValueError) as exc:
                raise DrugTableError(f"{path}:{line}: malformed row ({exc})") from exc
            if not name:
                raise DrugTableError(f"{path}:{line}: empty drug name")
            try:
                records.append(DrugRecord(name, amnesia, other, years, cluster))
            except ValueError as exc:
                logger.warning("%s:%d: rejected record %r: %s", path, line, name, exc)
    return records


def derive_rates(record: DrugRecord) -> tuple[float, float]:
    """Smoothed yearly report rates ((amnesia+1)/T, (other+1)/T).

    The +1 on each count keeps rarely reported drugs away from degenerate
    zero rates.
    """
    return (
        (record.amnesia_count + 1) / record.years,
        (record.other_count + 1) / record.years,
    )


def amnesia_fraction(record: DrugRecord) -> float:
    """Fraction of a drug's smoothed report rate that is the target reaction."""
    lam_amn, lam_other = derive_rates(record)
    return lam_amn / (lam_amn + lam_other)


def thresholds(records) -> tuple[float, float]:
    """Null/signal fractions: 50th and 90th percentiles of the table fractions.

    Computed over the full table, before any top-N filtering; linear
    interpolation between order statistics.
    """
    records = list(records)
    if len(records) < 2:
        raise DrugTableError(
            f"thresholds need at least 2 records, got {len(records)}"
        )
    fractions = np.array([amnesia_fraction(r) for r in records])
    p_h, p_g = np.percentile(fractions, [50.0, 90.0])
    return float(p_h), float(p_g)


def label_hypothesis(fraction: float, p_h: float, p_g: float) -> bool | None:
    """True when the null holds (fraction <= p_h), False when the signal does
    (fraction >= p_g), None for the unlabeled band in between."""
    if fraction <= p_h:
        return True
    if fraction >= p_g:
        return False
    return None


def _select_top(config: ExperimentConfig) -> list[DrugRecord]:
    # most total reports first; name breaks ties so the selection is stable
    ranked = sorted(
        config.records,
        key=lambda r: (-(r.amnesia_count + r.other_count), r.name),
    )
    return ranked[: config.top_n]


def run_monitoring(config: ExperimentConfig, *, horizon: int = 1000) -> MonitoringReport:
    """Monitor the top-N drugs' simulated report streams to terminal decisions.

    Per year and drug a correlated (target, other) report-count pair is drawn
    at the drug's table rates; the per-drug statistic is the cumulative
    conditional-binomial LLR of p_g against p_h given each year's total, and
    the step-down procedure runs open-ended on boundaries built from
    BH-shaped step values rescaled for worst-case FDR/FNR control at
    (q1, q2).  Cluster correlation decays are 2*Beta(4,2)-1 draws, one per
    cluster present among the monitored drugs.  Rows come back sorted by
    action (accepts first) then termination year.

    Raises DataUnderrunError when a stream is still undecided after
    ``horizon`` years.
    """
    top = _select_top(config)
    j = len(top)
    root = np.random.SeedSequence(config.rho_seed)
    rho_seq, stream_seq = root.spawn(2)

    labels = sorted({r.cluster for r in top})
    rho_rng = np.random.default_rng(rho_seq)
    rho_values = 2.0 * rho_rng.beta(4.0, 2.0, size=len(labels)) - 1.0
    index_of = {label: i for i, label in enumerate(labels)}
    structure = BlockClusters(
        cluster_of=tuple(index_of[r.cluster] for r in top),
        rho_of_cluster=tuple(rho_values),
    )

    alpha = scale_for_fdr(bh_steps(config.q1, j), config.q1)
    beta = scale_for_fdr(bh_steps(config.q2, j), config.q2)
    crit = stepdown_critical_values(alpha, beta)
    std = make_standardizer(crit)
    model = SimpleModel("conditional_binomial", config.p_h, config.p_g)

    marginals = [ReportPair(*derive_rates(r)) for r in top]
    raw = stream_sources(
        CopulaConfig(j=j, structure=structure),
        marginals,
        horizon=horizon,
        rng=np.random.default_rng(stream_seq),
        block=16,
    )
    sources = [CumulativeLlrSource(s, model, std) for s in raw]
    result = run_open_ended(sources, std.a, std.b)

    rows = tuple(
        sorted(
            (
                DecisionRow(
                    drug=top[d.stream].name,
                    action=d.action,
                    termination_step=d.step,
                    termination_level=d.level,
                    truncated=d.truncated,
                )
                for d in result.decisions
            ),
            key=lambda row: (row.action, row.termination_step, row.drug),
        )
    )
    return MonitoringReport(
        rows=rows,
        p_h=config.p_h,
        p_g=config.p_g,
        q1=config.q1,
        q2=config.q2,
        rho_by_cluster=tuple(zip(labels, (float(r) for r in rho_values))),
        alpha=tuple(float(v) for v in alpha.values),
        beta=tuple(float(v) for v in beta.values),
    )
