"""Behavioural analyses of trained (or scripted) policies.

Every summary here is a pure function of a list of episode records, so numbers
recomputed from an NDJSON log match the ones produced at evaluation time.
Accuracy always excludes episodes that ended in a timeout.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .envproto import (EpisodeRecord, Policy, QuestionEnv, Termination, derive_seed,
                       randomize_interactions, run_episodes)

EVAL_BATCH = 32
SWEEP_DTS = (0.01, 0.025, 0.05, 0.075, 0.1)
MIN_INTERACTIONS = 4


def eval_run(env: QuestionEnv | Callable[[], QuestionEnv], policy: Policy,
             step_budget: int, seed: int, batch: int = EVAL_BATCH,
             pool=None) -> list[EpisodeRecord]:
    """Complete episodes, in seed order, whose cumulative length fits ``step_budget``.

    The episode that would overshoot the budget is discarded and evaluation
    stops there. ``env`` is either an environment (copied once per batch slot)
    or a zero-argument factory.
    """
    if step_budget <= 0:
        return []
    make = env if callable(env) and not isinstance(env, QuestionEnv) else (
        lambda: copy.deepcopy(env))
    envs = [make() for _ in range(batch)]
    out: list[EpisodeRecord] = []
    used = 0
    index = 0
    while True:
        n = min(batch, step_budget - used)  # every episode takes at least one step
        seeds = [derive_seed(seed, index + k) for k in range(n)]
        records, _ = run_episodes(envs[:n], policy, seeds, pool=pool)
        index += n
        for r in records:
            if used + r.steps > step_budget:
                return out
            used += r.steps
            out.append(r)
        if used >= step_budget:
            return out


def eval_episodes(env, policy: Policy, n_episodes: int, seed: int,
                  batch: int = EVAL_BATCH, pool=None) -> list[EpisodeRecord]:
    """Exactly ``n_episodes`` episodes with seeds ``derive_seed(seed, 0..n-1)``."""
    make = env if callable(env) and not isinstance(env, QuestionEnv) else (
        lambda: copy.deepcopy(env))
    envs = [make() for _ in range(min(batch, max(n_episodes, 1)))]
    out = []
    while len(out) < n_episodes:
        n = min(len(envs), n_episodes - len(out))
        seeds = [derive_seed(seed, len(out) + k) for k in range(n)]
        out.extend(run_episodes(envs[:n], policy, seeds, pool=pool)[0])
    return out


# -- statistics -----------------------------------------------------------

def wilson_interval(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return (math.nan, math.nan)
    ci = stats.binomtest(int(successes), int(n)).proportion_ci(level, method="wilson")
    return (float(ci.low), float(ci.high))


def median_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Distribution-free CI for the median from binomial order statistics."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0:
        return (math.nan, math.nan)
    alpha = 1.0 - level
    lo = int(stats.binom.ppf(alpha / 2, n, 0.5))
    hi = int(stats.binom.isf(alpha / 2, n, 0.5))
    lo = min(max(lo - 1, 0), n - 1)
    hi = min(max(hi, 0), n - 1)
    return (float(x[lo]), float(x[hi]))


@dataclass
class OlsFit:
    slope: float
    intercept: float
    slope_se: float
    n: int

    @property
    def t_stat(self) -> float:
        return self.slope / self.slope_se if self.slope_se > 0 else math.inf


class DegenerateFitError(ValueError):
    """All x values coincide, so the slope is undetermined."""


def ols_fit(points) -> OlsFit:
    """Closed-form simple linear regression of y on x."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    if n < 2:
        raise DegenerateFitError("need at least two points")
    x, y = pts[:, 0], pts[:, 1]
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise DegenerateFitError("x has zero variance")
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    if n > 2:
        resid = y - (intercept + slope * x)
        se = math.sqrt(float(resid @ resid) / (n - 2) / sxx)
    else:
        se = math.nan
    return OlsFit(slope, intercept, se, n)


# -- episode lengths ------------------------------------------------------

def interaction_steps(record: EpisodeRecord) -> int:
    """Interactions before the label; a timed-out episode is all interaction."""
    return record.steps - 1 if record.termination == Termination.LABELED.value else record.steps


def length_histogram(lengths: Iterable[int], bin_width: int = 1) -> dict[int, int]:
    """Counts keyed by the lower edge of each integer bin."""
    hist: dict[int, int] = {}
    for v in lengths:
        b = (int(v) // bin_width) * bin_width
        hist[b] = hist.get(b, 0) + 1
    return dict(sorted(hist.items()))


def fraction_at_least(lengths: Sequence[int], threshold: int = MIN_INTERACTIONS) -> float:
    lengths = list(lengths)
    if not lengths:
        return math.nan
    return sum(1 for v in lengths if v >= threshold) / len(lengths)


# -- summaries ------------------------------------------------------------

@dataclass
class EvalSummary:
    condition: dict
    n_episodes: int
    n_labeled: int
    n_correct: int
    p_correct: float
    ci_low: float
    ci_high: float
    histogram: dict[int, int] = field(default_factory=dict)
    median_length: float = math.nan
    timeouts: int = 0
    frac_ge4: float = math.nan

    def row(self) -> dict:
        return {**self.condition, "n_episodes": self.n_episodes, "n_labeled": self.n_labeled,
                "p_correct": self.p_correct, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "median_length": self.median_length, "timeouts": self.timeouts,
                "frac_ge4": self.frac_ge4}


def summarize(records: Sequence[EpisodeRecord], condition: dict | None = None) -> EvalSummary:
    labeled = [r for r in records if r.termination == Termination.LABELED.value]
    correct = sum(1 for r in labeled if r.correct)
    n_lab = len(labeled)
    lo, hi = wilson_interval(correct, n_lab)
    inter = [interaction_steps(r) for r in labeled]
    return EvalSummary(
        condition=dict(condition or {}), n_episodes=len(records), n_labeled=n_lab,
        n_correct=correct, p_correct=correct / n_lab if n_lab else math.nan,
        ci_low=lo, ci_high=hi, histogram=length_histogram(inter),
        median_length=float(np.median([r.steps for r in records])) if records else math.nan,
        timeouts=len(records) - n_lab, frac_ge4=fraction_at_least(inter))


@dataclass
class PairedSummary:
    learned: EvalSummary
    randomized: EvalSummary

    @property
    def accuracy_gap(self) -> float:
        return self.learned.p_correct - self.randomized.p_correct


def randomized_comparison(policy: Policy, env, budget: int, seed: int,
                          condition: dict | None = None, pool=None) -> PairedSummary:
    """Evaluate ``policy`` as is and with its interactions randomized, on the same seeds."""
    cond = dict(condition or {})
    learned = eval_run(env, policy, budget, seed, pool=pool)
    rand = eval_run(env, randomize_interactions(policy), budget, seed, pool=pool)
    return PairedSummary(summarize(learned, {**cond, "policy": "learned"}),
                         summarize(rand, {**cond, "policy": "randomized"}))


def gap_length_points(records: Sequence[EpisodeRecord]) -> np.ndarray:
    """(mass gap, episode length) pairs from Which is Heavier records."""
    return np.array([(r.instance["mass_gap"], r.steps) for r in records], dtype=np.float64)


@dataclass
class GapBin:
    lo: float
    hi: float
    n: int
    mean_length: float
    std_length: float


def gap_bins(points, n_bins: int = 10, lo: float = 0.0, hi: float = 1.0) -> list[GapBin]:
    """Per-bin mean and standard deviation of episode length over equal-width gap bins."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    edges = np.linspace(lo, hi, n_bins + 1)
    which = np.clip(np.searchsorted(edges, pts[:, 0], side="right") - 1, 0, n_bins - 1)
    out = []
    for b in range(n_bins):
        ys = pts[which == b, 1]
        out.append(GapBin(float(edges[b]), float(edges[b + 1]), int(ys.size),
                          float(ys.mean()) if ys.size else math.nan,
                          float(ys.std(ddof=1)) if ys.size > 1 else math.nan))
    return out


# -- control time step sweep ----------------------------------------------

@dataclass
class SweepRow:
    dt: float
    n_episodes: int
    p_correct: float
    ci_low: float
    ci_high: float
    median_seconds: float
    median_ci_low: float
    median_ci_high: float
    timeouts: int


def sweep_timeout(dt: float, train_dt: float = 0.1, train_timeout: int = 26,
                  mode: str = "real_time") -> int:
    """Timeout at test control step ``dt``.

    ``real_time`` keeps the training time budget (26 x 0.1 s) fixed in
    seconds; ``steps`` keeps the count of control steps fixed.
    """
    if mode == "steps":
        return train_timeout
    if mode != "real_time":
        raise ValueError(f"unknown timeout mode {mode!r}")
    return max(1, math.ceil(train_timeout * train_dt / dt - 1e-9))


def control_dt_sweep(policy: Policy, env_factory: Callable[[float, int], QuestionEnv],
                     dts: Sequence[float] = SWEEP_DTS, episodes: int = 50, seed: int = 0,
                     timeout_mode: str = "real_time", pool=None):
    """Evaluate one policy at several control steps.

    ``env_factory(dt, timeout_steps)`` builds the test environment. Returns
    the table rows and the raw records per dt.
    """
    rows, per_dt = [], {}
    for dt in dts:
        timeout = sweep_timeout(dt, mode=timeout_mode)
        recs = eval_episodes(lambda: env_factory(dt, timeout), policy, episodes, seed, pool=pool)
        s = summarize(recs)
        secs = [r.sim_seconds for r in recs]
        mlo, mhi = median_interval(secs)
        rows.append(SweepRow(float(dt), len(recs), s.p_correct, s.ci_low, s.ci_high,
                             float(np.median(secs)), mlo, mhi, s.timeouts))
        per_dt[float(dt)] = recs
    return rows, per_dt


# -- CSV writers ----------------------------------------------------------

SUMMARY_COLUMNS = ("n_episodes", "n_labeled", "p_correct", "ci_low", "ci_high",
                   "median_length", "timeouts", "frac_ge4")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary_csv(summaries: Sequence[EvalSummary], fh) -> None:
    """One row per summary; condition keys first (union, in first-seen order)."""
    keys: list[str] = []
    for s in summaries:
        for k in s.condition:
            if k not in keys:
                keys.append(k)
    cols = keys + list(SUMMARY_COLUMNS)
    fh.write(",".join(cols) + "\n")
    for s in summaries:
        row = s.row()
        fh.write(",".join(_fmt(row.get(c, "")) for c in cols) + "\n")


def write_fig3_left(by_beta: dict[float, Sequence[EpisodeRecord]], fh) -> None:
    """Columns: beta, interaction_steps, count, fraction_ge4 (per beta)."""
    fh.write("beta,interaction_steps,count,fraction_ge4\n")
    for beta, recs in by_beta.items():
        s = summarize(recs)
        for length, count in s.histogram.items():
            fh.write(f"{_fmt(float(beta))},{length},{count},{_fmt(s.frac_ge4)}\n")


def write_fig3_right(records: Sequence[EpisodeRecord], fh, n_bins: int = 10) -> OlsFit:
    """Columns: gap_lo, gap_hi, n, mean_length, std_length, then the OLS fit
    over all points repeated on every row."""
    pts = gap_length_points(records)
    fit = ols_fit(pts)
    fh.write("gap_lo,gap_hi,n,mean_length,std_length,ols_slope,ols_intercept,ols_slope_se\n")
    for b in gap_bins(pts, n_bins):
        fh.write(",".join(_fmt(v) for v in (b.lo, b.hi, b.n, b.mean_length, b.std_length,
                                             fit.slope, fit.intercept, fit.slope_se)) + "\n")
    return fit


def write_paired_csv(pairs: Sequence[PairedSummary], fh) -> None:
    """fig4.csv / fig7.csv: one learned and one randomized row per condition."""
    write_summary_csv([s for p in pairs for s in (p.learned, p.randomized)], fh)


def write_fig5(rows: Sequence[SweepRow], fh) -> None:
    fh.write("dt,n_episodes,p_correct,ci_low,ci_high,median_seconds,"
             "median_ci_low,median_ci_high,timeouts\n")
    for r in rows:
        fh.write(",".join(_fmt(v) for v in (r.dt, r.n_episodes, r.p_correct, r.ci_low,
                                             r.ci_high, r.median_seconds, r.median_ci_low,
                                             r.median_ci_high, r.timeouts)) + "\n")
