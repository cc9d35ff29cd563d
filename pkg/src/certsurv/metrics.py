"""Survival metrics, adversarial evaluation sweeps, and rank aggregation.

Concordance is Harrell's C over comparable pairs (earlier time had an
event), with half credit for risk ties.  The Brier score uses the
inverse-probability-of-censoring weighting with the censoring curve fitted
on the training split, integrated by the trapezoid rule.  Hazards that
overflow float64 are carried as +inf sentinels and surfaced as flags on the
metric records instead of being dropped.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .bounds import worst_case_log_hazard_batch
from .data import SurvivalDataset
from .losses import Batch, fgsm_perturb
from .network import Network, forward_batch
from .survival import StepCurve, km_estimator, population_curve_from_hazards
from .training import TrainConfig

log = logging.getLogger(__name__)

DEFAULT_EPS_GRID = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
ATTACKS = ("fgsm", "worstcase")
# rank direction per metric: +1 ranks ascending (lower is better)
METRIC_DIRECTIONS = {"ci": -1, "ibs": 1, "negll": 1}


class UndefinedMetricError(ValueError):
    """The metric has no defined value on this sample."""


class AggregationError(ValueError):
    """Rank aggregation input is incomplete or inconsistent."""


def concordance_index(risks, times, events) -> float:
    """Harrell's C: concordant fraction over comparable pairs."""
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    if not (len(risks) == len(times) == len(events)):
        raise ValueError("risks, times, events must have equal length")
    comparable = (times[:, None] < times[None, :]) & (events[:, None] == 1)
    n_pairs = int(comparable.sum())
    if n_pairs == 0:
        raise UndefinedMetricError("no comparable pairs")
    ri, rj = risks[:, None], risks[None, :]
    concordant = comparable & (ri > rj)
    tied = comparable & (ri == rj)
    return float((concordant.sum() + 0.5 * tied.sum()) / n_pairs)


def brier_ipcw(surv_at_tau, times, events, censor_km: StepCurve, tau: float):
    """IPCW Brier score at one horizon.

    Returns (score, n_excluded): records whose censoring weight hits an
    estimated zero are excluded from the sum but kept in the denominator.
    """
    s = np.asarray(surv_at_tau, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    n = len(times)
    g_at_t = censor_km.at_left(times)
    g_at_tau = float(censor_km(tau))
    total = 0.0
    excluded = 0
    for i in range(n):
        if events[i] == 1 and times[i] <= tau:
            if g_at_t[i] <= 0.0:
                excluded += 1
                continue
            total += s[i] ** 2 / g_at_t[i]
        elif times[i] > tau:
            if g_at_tau <= 0.0:
                excluded += 1
                continue
            total += (1.0 - s[i]) ** 2 / g_at_tau
        # censored at or before tau contributes zero
    return total / n, excluded


def integrated_brier(surv_over_grid, times, events, censor_km: StepCurve,
                     grid):
    """Trapezoidal integral of the Brier score over the grid, span-normalized."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must contain at least two points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    surv = np.asarray(surv_over_grid, dtype=float)
    scores = np.empty(grid.size)
    excluded = 0
    for j, tau in enumerate(grid):
        scores[j], exc = brier_ipcw(surv[:, j], times, events, censor_km, tau)
        excluded += exc
    value = float(np.trapezoid(scores, grid) / (grid[-1] - grid[0]))
    return value, excluded


def negll_metric(hazards, times, events) -> float:
    """Negative right-censored log likelihood from explicit hazard rates.

    Infinite hazards propagate to an infinite value (flag upstream) rather
    than raising.
    """
    lam = np.asarray(hazards, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ll = np.where(events == 1, np.log(lam) - lam * times, -lam * times)
    total = -float(np.sum(ll))
    return total


@dataclass
class MetricRecord:
    dataset: str
    method: str
    attack: str
    eps: float
    ci: float
    ibs: float
    negll: float
    ci_flag: bool = False
    ibs_flag: bool = False
    negll_flag: bool = False
    seed: int = 0

    CSV_FIELDS = ("dataset", "method", "attack", "eps", "ci", "ibs", "negll",
                  "ci_flag", "ibs_flag", "negll_flag", "seed")

    def csv_row(self):
        return [self.dataset, self.method, self.attack, repr(float(self.eps)),
                repr(float(self.ci)), repr(float(self.ibs)),
                repr(float(self.negll)), int(self.ci_flag),
                int(self.ibs_flag), int(self.negll_flag), self.seed]


def write_metrics_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricRecord.CSV_FIELDS)
        for rec in records:
            writer.writerow(rec.csv_row())


def read_metrics_csv(path) -> list[MetricRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(MetricRecord(
                row["dataset"], row["method"], row["attack"],
                float(row["eps"]), float(row["ci"]), float(row["ibs"]),
                float(row["negll"]), bool(int(row["ci_flag"])),
                bool(int(row["ibs_flag"])), bool(int(row["negll_flag"])),
                int(row["seed"]),
            ))
    return records


def evaluation_grid(times, n_points: int = 100) -> np.ndarray:
    """n_points positive horizons spanning (0, max observed time]."""
    tmax = float(np.max(times))
    return np.linspace(0.0, tmax, n_points + 1)[1:]


def censoring_km(train: SurvivalDataset) -> StepCurve:
    """Kaplan-Meier curve of the censoring distribution (events flipped)."""
    return km_estimator(train.t, 1 - train.e)


def _metrics_from_hazards(hazards, test: SurvivalDataset,
                          censor_km: StepCurve, grid) -> tuple:
    hazards = np.asarray(hazards, dtype=float)
    surv = np.exp(-np.outer(hazards, grid))
    try:
        ci = concordance_index(hazards, test.t, test.e)
        ci_flag = bool(np.isinf(hazards).any())
    except UndefinedMetricError:
        ci, ci_flag = float("nan"), True
    ibs, excluded = integrated_brier(surv, test.t, test.e, censor_km, grid)
    ibs_flag = bool(not np.isfinite(ibs) or excluded > 0
                    or np.isinf(hazards).any())
    negll = negll_metric(hazards, test.t, test.e)
    negll_flag = bool(not np.isfinite(negll) or np.isinf(hazards).any())
    return ci, ibs, negll, ci_flag, ibs_flag, negll_flag


def attack_hazards(net: Network, test: SurvivalDataset, attack: str,
                   eps: float, config: TrainConfig) -> np.ndarray:
    """Per-record hazard rates under the chosen evaluation attack."""
    if attack == "fgsm":
        batch = Batch(test.X, test.t, test.e)
        perturbed = fgsm_perturb(net, batch, eps, config.w, config.sigma,
                                 config.fgsm_sign_mode)
        G, _ = forward_batch(net, perturbed.X)
    elif attack == "worstcase":
        G = worst_case_log_hazard_batch(net, test.X, eps)
    else:
        raise ValueError(f"unknown attack {attack!r}; expected one of {ATTACKS}")
    with np.errstate(over="ignore"):
        return np.exp(G)


def attack_sweep(net: Network, test: SurvivalDataset, attack: str, eps_grid,
                 config: TrainConfig, censor_km: StepCurve,
                 dataset_name: str = "", method_name: str = "",
                 seed: int = 0, grid=None) -> list[MetricRecord]:
    """Concordance / integrated Brier / negative log likelihood per radius."""
    if grid is None:
        grid = evaluation_grid(test.t)
    records = []
    for eps in eps_grid:
        hazards = attack_hazards(net, test, attack, float(eps), config)
        ci, ibs, negll, cf, bf, nf = _metrics_from_hazards(
            hazards, test, censor_km, grid
        )
        records.append(MetricRecord(dataset_name, method_name, attack,
                                    float(eps), ci, ibs, negll, cf, bf, nf,
                                    seed))
    return records


@dataclass
class RankTable:
    """Mean rank of each method per (eps, metric); rank 1 is best."""

    methods: list[str]
    eps_values: list[float]
    metrics: list[str]
    mean_ranks: dict = field(default_factory=dict)  # (eps, metric) -> {method: rank}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["eps", "metric", *self.methods])
            for eps in self.eps_values:
                for metric in self.metrics:
                    cell = self.mean_ranks[(eps, metric)]
                    writer.writerow([repr(float(eps)), metric,
                                     *[repr(float(cell[m])) for m in self.methods]])


def _rank_with_ties(values: np.ndarray) -> np.ndarray:
    """Average ranks, 1-based, ties share the mean rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def average_ranks(records: list[MetricRecord],
                  metrics=("ci", "ibs", "negll")) -> RankTable:
    """Rank methods within each (dataset, eps, metric) cell, then average
    the ranks across datasets."""
    if not records:
        raise AggregationError("no records to rank")
    methods = sorted({r.method for r in records})
    datasets = sorted({r.dataset for r in records})
    eps_values = sorted({r.eps for r in records})
    by_key = {}
    for r in records:
        key = (r.dataset, r.eps, r.method)
        if key in by_key:
            raise AggregationError(f"duplicate cell {key}")
        by_key[key] = r
    table = RankTable(methods, eps_values, list(metrics))
    for eps in eps_values:
        for metric in metrics:
            direction = METRIC_DIRECTIONS[metric]
            acc = {m: 0.0 for m in methods}
            for ds in datasets:
                vals = []
                for m in methods:
                    rec = by_key.get((ds, eps, m))
                    if rec is None:
                        raise AggregationError(
                            f"missing cell dataset={ds} eps={eps} method={m}"
                        )
                    vals.append(getattr(rec, metric))
                oriented = direction * np.asarray(vals)
                # overflowed cells tie at the worst rank
                oriented = np.where(np.isnan(oriented), np.inf, oriented)
                ranks = _rank_with_ties(oriented)
                for m, rk in zip(methods, ranks):
                    acc[m] += rk
            table.mean_ranks[(eps, metric)] = {
                m: float(acc[m]) / len(datasets) for m in methods
            }
    return table


def relative_percent_change(baseline_records, method_records,
                            metrics=("ci", "ibs", "negll")):
    """Mean percent change from the baseline per (eps, metric).

    Cells with a zero baseline value are skipped and counted as flagged.
    """
    base = {(r.dataset, r.eps): r for r in baseline_records}
    eps_values = sorted({r.eps for r in method_records})
    out = {}
    flagged = 0
    for eps in eps_values:
        for metric in metrics:
            changes = []
            for r in method_records:
                if r.eps != eps:
                    continue
                b = base.get((r.dataset, r.eps))
                if b is None:
                    raise AggregationError(
                        f"no baseline cell for dataset={r.dataset} eps={r.eps}"
                    )
                bv = getattr(b, metric)
                if bv == 0.0 or not np.isfinite(bv):
                    flagged += 1
                    continue
                changes.append(100.0 * (getattr(r, metric) - bv) / bv)
            out[(eps, metric)] = float(np.mean(changes)) if changes else float("nan")
    return out, flagged


def friedman_test(matrix) -> tuple[float, float]:
    """Friedman chi-square with tie correction over a blocks x treatments
    matrix of values (smaller rank = smaller value)."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[1] < 2 or m.shape[0] < 2:
        raise ValueError("need at least 2 blocks and 2 treatments")
    n, k = m.shape
    ranks = np.vstack([_rank_with_ties(row) for row in m])
    rank_sums = ranks.sum(axis=0)
    stat = 12.0 / (n * k * (k + 1)) * float((rank_sums ** 2).sum()) \
        - 3.0 * n * (k + 1)
    tie_term = 0.0
    for row in m:
        _, counts = np.unique(row, return_counts=True)
        tie_term += float((counts ** 3 - counts).sum())
    correction = 1.0 - tie_term / (n * k * (k * k - 1))
    if correction <= 0.0:
        return 0.0, 1.0  # every block fully tied
    stat /= correction
    return float(stat), float(chi2.sf(stat, k - 1))


def emit_report(records, ranks: RankTable | None, out_dir,
                curves: dict | None = None, summary: dict | None = None):
    """Write metrics.csv, ranks.csv, curve CSVs, and summary.json."""
    if not records:
        raise ValueError("nothing to report")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    mpath = os.path.join(out_dir, "metrics.csv")
    write_metrics_csv(mpath, records)
    paths["metrics"] = mpath
    if ranks is not None:
        rpath = os.path.join(out_dir, "ranks.csv")
        ranks.to_csv(rpath)
        paths["ranks"] = rpath
    if curves:
        cdir = os.path.join(out_dir, "curves")
        os.makedirs(cdir, exist_ok=True)
        for name, (grid, values) in curves.items():
            cpath = os.path.join(cdir, f"{name}.csv")
            arr = np.column_stack([grid, values])
            np.savetxt(cpath, arr, delimiter=",", header="time,survival",
                       comments="")
            paths[f"curve:{name}"] = cpath
    if summary is not None:
        spath = os.path.join(out_dir, "summary.json")
        with open(spath, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
        paths["summary"] = spath
    return paths


def worst_case_population_curve(net: Network, X, eps: float, grid):
    """Population curve under per-record certified-maximum hazards."""
    G_ub = worst_case_log_hazard_batch(net, np.asarray(X, dtype=float), eps)
    with np.errstate(over="ignore"):
        hazards = np.exp(G_ub)
    return population_curve_from_hazards(hazards, grid)
