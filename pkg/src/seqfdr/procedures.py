"""Sequential step-down procedures over standardized statistic streams.

All streams are sampled in lockstep.  A stage ends as soon as some active
stream's statistic leaves the current continuation interval; the stage then
rejects a maximal top block and/or accepts a maximal bottom block of the
ordered active statistics against boundary levels offset by the decisions
already made.  The open-ended variant runs until every stream is decided;
the rejective variant only rejects, accepting whatever remains at a fixed
truncation horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import DataUnderrunError, StageGuardError

__all__ = [
    "StreamSource",
    "ReplaySource",
    "Decision",
    "TrialResult",
    "MetricsSummary",
    "run_open_ended",
    "run_rejective",
    "summarize",
    "decision_rows",
]


class StreamSource(Protocol):
    """Forward-only block reader of one stream's statistic values."""

    def take(self, n_from: int, n_to: int) -> np.ndarray:
        """Values at steps n_from..n_to (1-based); may be short if exhausted."""
        ...


class ReplaySource:
    """StreamSource over a fixed array, for fixtures and tests."""

    def __init__(self, values):
        self._values = np.asarray(values, dtype=float)

    def take(self, n_from: int, n_to: int) -> np.ndarray:
        return self._values[n_from - 1 : n_to]


@dataclass(frozen=True)
class Decision:
    """Terminal decision for one stream.

    ``level`` is the cumulative boundary rank the statistic crossed (for
    truncation acceptances, the ascending rank among the streams accepted
    together at the horizon).
    """

    stream: int
    action: str  # "reject" | "accept"
    step: int
    level: int
    truncated: bool = False


@dataclass(frozen=True)
class TrialResult:
    """Decisions for all streams of one trial."""

    decisions: tuple[Decision, ...]

    def __post_init__(self):
        by_stream = sorted(self.decisions, key=lambda d: d.stream)
        if [d.stream for d in by_stream] != list(range(len(by_stream))):
            raise ValueError("decisions must cover streams 0..J-1 exactly once")
        object.__setattr__(self, "decisions", tuple(by_stream))

    @property
    def j(self) -> int:
        return len(self.decisions)

    @property
    def n_rejected(self) -> int:
        return sum(d.action == "reject" for d in self.decisions)

    @property
    def max_n(self) -> int:
        return max(d.step for d in self.decisions)

    @property
    def total_samples(self) -> int:
        # lockstep sampling: each stream is observed up to its decision step
        return sum(d.step for d in self.decisions)

    def error_counts(self, truth: Sequence[bool | None]) -> tuple[int, int, int]:
        """(false rejections, false acceptances, total rejections).

        ``truth[j]`` True marks a true null, False a true signal, None a
        stream excluded from the error counts (but not from R).
        """
        if len(truth) != self.j:
            raise ValueError("truth must have one entry per stream")
        v = w = r = 0
        for d, t in zip(self.decisions, truth):
            if d.action == "reject":
                r += 1
                if t is True:
                    v += 1
            else:
                if t is False:
                    w += 1
        return v, w, r


@dataclass(frozen=True)
class MetricsSummary:
    """Error-rate and sample-size estimates over a batch of trials.

    ``pfdr``/``pfnr`` condition on trials with at least one rejection /
    acceptance-capacity respectively and are None when no trial qualifies.
    Standard errors are sample SDs over trials divided by sqrt(count); 0.0
    when fewer than two trials enter a mean.
    """

    n_trials: int
    fdr: float
    fdr_se: float
    fnr: float
    fnr_se: float
    pfdr: float | None
    pfdr_se: float | None
    pfnr: float | None
    pfnr_se: float | None
    mean_max_n: float
    mean_max_n_se: float
    mean_stream_n: float
    mean_stream_n_se: float
    n_trials_with_rejection: int
    n_trials_with_acceptance: int

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        raise ValueError("cannot summarize zero trials")
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, se


def summarize(trials: Sequence[TrialResult], truth: Sequence[bool | None]) -> MetricsSummary:
    """Trial-averaged FDR/FNR (and their positive variants) plus sample sizes."""
    if not trials:
        raise ValueError("cannot summarize zero trials")
    j = trials[0].j
    counts = np.array([t.error_counts(truth) for t in trials], dtype=float)
    v, w, r = counts[:, 0], counts[:, 1], counts[:, 2]
    fdp = v / np.maximum(r, 1.0)
    fnp = w / np.maximum(j - r, 1.0)
    fdr, fdr_se = _mean_se(fdp)
    fnr, fnr_se = _mean_se(fnp)
    with_rej = r >= 1.0
    not_all_rej = r < j
    pfdr = pfdr_se = pfnr = pfnr_se = None
    if with_rej.any():
        pfdr, pfdr_se = _mean_se(fdp[with_rej])
    if not_all_rej.any():
        pfnr, pfnr_se = _mean_se(fnp[not_all_rej])
    max_n, max_n_se = _mean_se(np.array([t.max_n for t in trials], dtype=float))
    stream_n, stream_n_se = _mean_se(
        np.array([t.total_samples / t.j for t in trials], dtype=float)
    )
    return MetricsSummary(
        n_trials=len(trials),
        fdr=fdr,
        fdr_se=fdr_se,
        fnr=fnr,
        fnr_se=fnr_se,
        pfdr=pfdr,
        pfdr_se=pfdr_se,
        pfnr=pfnr,
        pfnr_se=pfnr_se,
        mean_max_n=max_n,
        mean_max_n_se=max_n_se,
        mean_stream_n=stream_n,
        mean_stream_n_se=stream_n_se,
        n_trials_with_rejection=int(with_rej.sum()),
        n_trials_with_acceptance=int(not_all_rej.sum()),
    )


def decision_rows(trial_id: int, result: TrialResult) -> list[dict]:
    """Flat one-row-per-stream records for serialization."""
    return [
        {
            "trial_id": trial_id,
            "stream": d.stream,
            "action": d.action,
            "step": d.step,
            "level": d.level,
            "truncated_flag": int(d.truncated),
        }
        for d in result.decisions
    ]


class _Buffers:
    """Per-stream growing caches over forward-only sources."""

    def __init__(self, sources):
        self.sources = list(sources)
        self.data = [np.empty(0) for _ in self.sources]
        self.exhausted = [False] * len(self.sources)

    def extend_to(self, j: int, target: int) -> int:
        buf = self.data[j]
        if self.exhausted[j] or len(buf) >= target:
            return len(buf)
        got = self.sources[j].take(len(buf) + 1, target)
        if len(got):
            buf = np.concatenate([buf, np.asarray(got, dtype=float)])
            self.data[j] = buf
        if len(buf) < target:
            self.exhausted[j] = True
        return len(buf)

    def value_at(self, j: int, n: int) -> float:
        return float(self.data[j][n - 1])


def _scan_for_exit(bufs, active, n_from, lo, hi, block, state_fn, limit_step=None):
    """First step > n_from where some active value leaves (lo, hi).

    ``lo`` may be None (upper crossings only).  Returns None when
    ``limit_step`` is reached without a crossing; raises on stream
    exhaustion before a crossing or the limit.
    """
    scan = n_from
    while limit_step is None or scan < limit_step:
        target = scan + block
        if limit_step is not None:
            target = min(target, limit_step)
        limit = target
        for j in active:
            limit = min(limit, bufs.extend_to(j, target))
        if limit <= scan:
            dead = [j for j in active if bufs.exhausted[j]]
            raise DataUnderrunError(
                f"streams {dead} exhausted at step {scan} before any decision boundary "
                "was crossed",
                state=state_fn(),
            )
        cross = None
        for j in active:
            seg = bufs.data[j][scan:limit]
            m = seg >= hi if lo is None else (seg <= lo) | (seg >= hi)
            cross = m if cross is None else cross | m
        if cross.any():
            return scan + int(np.argmax(cross)) + 1
        scan = limit
    return None


def _order_active(bufs, active, n):
    vals = np.array([bufs.value_at(j, n) for j in active])
    order = np.lexsort((active, vals))
    return vals[order], [active[i] for i in order]


def _max_top_block(sorted_vals, b, r):
    """Largest t such that the top-t ordered statistics clear their offset levels."""
    sz = len(sorted_vals)
    t = 0
    for pos in range(sz, 0, -1):  # 1-based position from the bottom
        if sorted_vals[pos - 1] >= b[r + sz - pos]:
            t += 1
        else:
            break
    return t


def _max_bottom_block(sorted_vals, a, c):
    sz = len(sorted_vals)
    t = 0
    for pos in range(1, sz + 1):
        if sorted_vals[pos - 1] <= a[c + pos - 1]:
            t += 1
        else:
            break
    return t


def run_open_ended(
    sources: Sequence[StreamSource],
    a: np.ndarray,
    b: np.ndarray,
    max_stages_guard: int | None = None,
    block: int = 64,
) -> TrialResult:
    """Run the open-ended step-down procedure until every stream is decided.

    ``a``/``b`` are the standardized acceptance/rejection boundary vectors
    indexed by cumulative level (a nondecreasing, b nonincreasing,
    a[-1] < b[-1]).  A stream rejected as the position-``pos`` ordered
    statistic of a stage with ``size`` active streams and ``r`` prior
    rejections gets cumulative level ``r + size - pos + 1``; an accepted one
    at bottom position ``pos`` with ``c`` prior acceptances gets ``c + pos``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    j = len(sources)
    if a.shape != (j,) or b.shape != (j,):
        raise ValueError("boundary vectors must have one entry per stream")
    if np.any(np.diff(a) < 0.0) or np.any(np.diff(b) > 0.0):
        raise ValueError("a must be nondecreasing and b nonincreasing")
    if a[-1] > b[-1]:
        raise ValueError("boundaries cross: a[-1] > b[-1]")
    guard = j if max_stages_guard is None else int(max_stages_guard)

    bufs = _Buffers(sources)
    decisions: list[Decision | None] = [None] * j
    active = list(range(j))
    r = c = 0
    n = 0
    stage = 0

    def state():
        return {
            "stage": stage,
            "step": n,
            "rejections": r,
            "acceptances": c,
            "active": list(active),
            "decisions": [d for d in decisions if d is not None],
        }

    while active:
        stage += 1
        if stage > guard:
            raise StageGuardError(
                f"stage count exceeded guard ({guard})", state=state()
            )
        n = _scan_for_exit(bufs, active, n, a[c], b[r], block, state)
        sorted_vals, order = _order_active(bufs, active, n)
        sz = len(order)
        t_rej = _max_top_block(sorted_vals, b, r) if sorted_vals[-1] >= b[r] else 0
        t_acc = _max_bottom_block(sorted_vals, a, c) if sorted_vals[0] <= a[c] else 0
        # only reachable when a[-1] == b[-1] and a statistic sits exactly there
        t_acc = min(t_acc, sz - t_rej)
        for pos in range(sz - t_rej + 1, sz + 1):
            decisions[order[pos - 1]] = Decision(
                stream=order[pos - 1],
                action="reject",
                step=n,
                level=r + sz - pos + 1,
            )
        for pos in range(1, t_acc + 1):
            decisions[order[pos - 1]] = Decision(
                stream=order[pos - 1], action="accept", step=n, level=c + pos
            )
        r += t_rej
        c += t_acc
        active = [jj for jj in active if decisions[jj] is None]
    return TrialResult(decisions=tuple(decisions))


def run_rejective(
    sources: Sequence[StreamSource],
    b: np.ndarray,
    n_bar: int,
    block: int = 64,
) -> TrialResult:
    """Run the rejective (truncated) step-down procedure up to ``n_bar`` steps.

    Stages only reject; if the horizon arrives, every still-active stream is
    accepted there with ``truncated=True`` and levels by ascending order of
    the final statistics.  ``n_bar = 1`` reduces to a one-shot step-down test.
    """
    b = np.asarray(b, dtype=float)
    j = len(sources)
    if b.shape != (j,):
        raise ValueError("boundary vector must have one entry per stream")
    if np.any(np.diff(b) > 0.0):
        raise ValueError("b must be nonincreasing")
    if n_bar < 1:
        raise ValueError("n_bar must be at least 1")

    bufs = _Buffers(sources)
    decisions: list[Decision | None] = [None] * j
    active = list(range(j))
    r = 0
    n = 0

    def state():
        return {
            "step": n,
            "rejections": r,
            "active": list(active),
            "decisions": [d for d in decisions if d is not None],
        }

    def accept_remaining_at_horizon():
        sorted_vals, order = _order_active(bufs, active, n_bar)
        for pos, jj in enumerate(order, start=1):
            decisions[jj] = Decision(
                stream=jj, action="accept", step=n_bar, level=pos, truncated=True
            )

    while active:
        hit = _scan_for_exit(
            bufs, active, n, None, b[r], block, state, limit_step=n_bar
        )
        if hit is None:
            n = n_bar
            accept_remaining_at_horizon()
            break
        n = hit
        sorted_vals, order = _order_active(bufs, active, n)
        sz = len(order)
        t_rej = _max_top_block(sorted_vals, b, r)
        for pos in range(sz - t_rej + 1, sz + 1):
            decisions[order[pos - 1]] = Decision(
                stream=order[pos - 1],
                action="reject",
                step=n,
                level=r + sz - pos + 1,
            )
        r += t_rej
        active = [jj for jj in active if decisions[jj] is None]
        if active and n == n_bar:
            accept_remaining_at_horizon()
            break
    return TrialResult(decisions=tuple(decisions))
