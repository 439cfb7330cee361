"""Recovery metrics: estimation errors, bias/RMSE/rRMSE, score-scale error, completion."""

import math
from collections import defaultdict
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from grmfit.core.errors import DomainError, EmptyInputError, PairingError
from grmfit.models.schemas import (
    PARAMETERS,
    AgreementSummary,
    ErrorDistribution,
    ErrorRecord,
    FitResult,
    ItemParameters,
    LoglikComparison,
    Method,
    Parameter,
    RecoverySummary,
    RuntimeSummary,
)
from grmfit.services.grm import expected_total_score

PERCENTILES = (2.5, 97.5)
RELATIVE_LOGLIK_LIMIT = 0.05


def _by_id(items: Sequence[ItemParameters]) -> Dict[int, ItemParameters]:
    out = {item.item_id: item for item in items}
    if len(out) != len(items):
        raise PairingError("duplicate item ids")
    return out


def _paired(
    estimates: Sequence[ItemParameters], truth: Sequence[ItemParameters]
) -> List[Tuple[ItemParameters, ItemParameters]]:
    est, true = _by_id(estimates), _by_id(truth)
    if set(est) != set(true):
        raise PairingError(
            f"estimate ids {sorted(est)} do not match true ids {sorted(true)}"
        )
    return [(est[i], true[i]) for i in sorted(true)]


def estimation_errors(
    estimates: Sequence[ItemParameters],
    truth: Sequence[ItemParameters],
    scenario_id: int,
    replicate: int,
) -> List[ErrorRecord]:
    """One record per item and parameter class, error = estimate - truth."""
    return [
        ErrorRecord(
            scenario_id=scenario_id,
            replicate=replicate,
            item_id=true.item_id,
            parameter=parameter,
            error=est.value(parameter) - true.value(parameter),
        )
        for est, true in _paired(estimates, truth)
        for parameter in PARAMETERS
    ]


def _group(records: Iterable[ErrorRecord]) -> Dict[Parameter, np.ndarray]:
    grouped: Dict[Parameter, List[float]] = defaultdict(list)
    for record in records:
        grouped[record.parameter].append(record.error)
    if not grouped:
        raise EmptyInputError("no error records to summarize")
    return {p: np.asarray(grouped[p], dtype=float) for p in PARAMETERS if p in grouped}


def trim_count(n: int, trim_fraction: float) -> int:
    # round first so that 0.01 * 1000 counts as exactly 10
    return math.ceil(round(trim_fraction * n, 9))


def trimmed_rmse(errors: np.ndarray, trim_fraction: float) -> float:
    """RMSE after dropping the k smallest and k largest signed errors."""
    k = trim_count(errors.shape[0], trim_fraction)
    kept = np.sort(errors)[k : errors.shape[0] - k]
    if kept.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean(kept**2)))


def recovery_summary(
    records: Sequence[ErrorRecord], trim_fraction: float = 0.01
) -> List[RecoverySummary]:
    if not 0.0 <= trim_fraction < 0.5:
        raise DomainError(f"trim_fraction must be in [0, 0.5), got {trim_fraction}")
    out = []
    for parameter, errors in _group(records).items():
        out.append(
            RecoverySummary(
                parameter=parameter,
                bias=float(np.mean(errors)),
                rmse=float(np.sqrt(np.mean(errors**2))),
                rrmse=trimmed_rmse(errors, trim_fraction),
                n=int(errors.shape[0]),
            )
        )
    return out


def error_distribution_table(records: Sequence[ErrorRecord]) -> List[ErrorDistribution]:
    """Mean (SD) and Median [Min, Max] of raw errors per parameter class."""
    return [
        ErrorDistribution(
            parameter=parameter,
            mean=float(np.mean(errors)),
            sd=float(np.std(errors, ddof=1)) if errors.shape[0] > 1 else 0.0,
            median=float(np.median(errors)),
            min=float(np.min(errors)),
            max=float(np.max(errors)),
            n=int(errors.shape[0]),
        )
        for parameter, errors in _group(records).items()
    ]


def expected_score_error_curve(
    estimates: Sequence[Sequence[ItemParameters]],
    truth: Sequence[Sequence[ItemParameters]],
    psi_grid: Sequence[float],
) -> pd.DataFrame:
    """Mean and 2.5/97.5 percentiles over replicates of (TS_est - TS_true) / M.

    `estimates[r]` and `truth[r]` are the item lists of replicate r. Returns one
    row per grid point with columns psi, mean_err, p2.5, p97.5.
    """
    grid = np.asarray(psi_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise EmptyInputError("psi grid is empty")
    if len(estimates) != len(truth):
        raise PairingError(
            f"{len(estimates)} estimate sets but {len(truth)} true sets"
        )
    if not estimates:
        raise EmptyInputError("no replicates to aggregate")

    curves = np.empty((len(estimates), grid.size))
    for r, (est, true) in enumerate(zip(estimates, truth)):
        pairs = _paired(est, true)
        est_sorted = [e for e, _ in pairs]
        true_sorted = [t for _, t in pairs]
        diff = expected_total_score(est_sorted, grid) - expected_total_score(true_sorted, grid)
        curves[r] = diff / len(pairs)

    low, high = np.percentile(curves, PERCENTILES, axis=0, method="linear")
    return pd.DataFrame(
        {"psi": grid, "mean_err": curves.mean(axis=0), "p2.5": low, "p97.5": high}
    )


def completion_rate(results: Sequence[FitResult]) -> float:
    if not results:
        raise EmptyInputError("no fit results")
    return sum(result.converged for result in results) / len(results)


def loglik_comparison(
    pairs: Sequence[Tuple[FitResult, FitResult]], threshold: float = 0.0
) -> LoglikComparison:
    """Compare (Laplace, GHQ-EM) log-likelihoods fitted to the same dataset.

    A method counts as lower when its log-likelihood falls below the other's by
    more than `threshold` relative to max(|L|, |G|). Pairs with a non-finite
    log-likelihood are left out.
    """
    if not pairs:
        raise EmptyInputError("no fit pairs")
    if threshold < 0:
        raise DomainError(f"threshold must be >= 0, got {threshold}")
    laplace, ghq = [], []
    for first, second in pairs:
        if first.method is not Method.LAPLACE or second.method is not Method.GHQ_EM:
            raise PairingError(
                f"expected (Laplace, GhqEm) pairs, got ({first.method.value}, {second.method.value})"
            )
        if [i.item_id for i in first.estimates] != [i.item_id for i in second.estimates]:
            raise PairingError("paired fits cover different items")
        if np.isfinite(first.loglik) and np.isfinite(second.loglik):
            laplace.append(first.loglik)
            ghq.append(second.loglik)

    lap, gh = np.asarray(laplace, dtype=float), np.asarray(ghq, dtype=float)
    diff = lap - gh
    scale = np.maximum(np.abs(lap), np.abs(gh))
    relative = np.divide(np.abs(diff), scale, out=np.zeros_like(diff), where=scale > 0)
    signed = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)

    def fraction(mask: np.ndarray) -> float:
        return float(mask.mean()) if mask.size else float("nan")

    return LoglikComparison(
        differences=diff.tolist(),
        relative_differences=relative.tolist(),
        threshold=threshold,
        fraction_laplace_lower=fraction(signed < -threshold),
        fraction_ghq_lower=fraction(signed > threshold),
        fraction_relative_above_5pct=fraction(relative > RELATIVE_LOGLIK_LIMIT),
    )


def method_agreement(
    laplace_estimates: Sequence[Sequence[ItemParameters]],
    ghq_estimates: Sequence[Sequence[ItemParameters]],
) -> List[AgreementSummary]:
    """Per parameter class: Pearson correlation and median |difference| between methods."""
    if len(laplace_estimates) != len(ghq_estimates):
        raise PairingError("agreement needs the same replicates for both methods")
    values: Dict[Parameter, List[Tuple[float, float]]] = defaultdict(list)
    for lap, ghq in zip(laplace_estimates, ghq_estimates):
        for lap_item, ghq_item in _paired(lap, ghq):
            for parameter in PARAMETERS:
                values[parameter].append((lap_item.value(parameter), ghq_item.value(parameter)))
    if not values:
        raise EmptyInputError("no paired estimates")

    out = []
    for parameter in PARAMETERS:
        pairs = np.asarray(values[parameter])
        x, y = pairs[:, 0], pairs[:, 1]
        if x.size > 1 and np.std(x) > 0 and np.std(y) > 0:
            correlation = float(np.corrcoef(x, y)[0, 1])
        else:
            correlation = float("nan")
        out.append(
            AgreementSummary(
                parameter=parameter,
                correlation=correlation,
                median_abs_diff=float(np.median(np.abs(x - y))),
                n=int(x.size),
            )
        )
    return out


def runtime_summary(results: Sequence[FitResult]) -> List[RuntimeSummary]:
    if not results:
        raise EmptyInputError("no fit results")
    times: Dict[Method, List[int]] = defaultdict(list)
    for result in results:
        times[result.method].append(result.wall_time_ms)
    return [
        RuntimeSummary(
            method=method,
            mean_ms=float(np.mean(times[method])),
            median_ms=float(np.median(times[method])),
            n=len(times[method]),
        )
        for method in Method
        if method in times
    ]
