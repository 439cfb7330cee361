"""Simulation-study orchestration: scenario grid x replicates x methods, then aggregation."""

import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy.special import expit
from tqdm import tqdm

from grmfit.core.config import settings
from grmfit.core.dependency import get_estimator
from grmfit.core.errors import DimensionError, EmptyInputError, GrmError
from grmfit.models.schemas import (
    ErrorRecord,
    FitConfig,
    FitResult,
    FitStatus,
    ItemParameters,
    Manifest,
    Method,
    StudyConfig,
)
from grmfit.services import metrics_service as metrics
from grmfit.services.em_service import starting_values
from grmfit.services.grm import as_itemset, pattern_loglik_grid
from grmfit.services.interface.study_interface import StudyInterface
from grmfit.services.laplace_service import HALF_LOG_2PI, find_posterior_mode, joint_logdensity
from grmfit.services.simulation_service import (
    sample_item_parameters,
    simulate_dataset,
    stream_id,
)
from grmfit.services.types import QuadratureRule, ResponseMatrix
from grmfit.utils.csv_io import (
    read_item_csv,
    write_frame,
    write_item_csv,
    write_response_csv,
)
from grmfit.utils.fit_store import MANIFEST_NAME, FitStore, fit_key, read_fit_json, read_json

logger = logging.getLogger(__name__)

AGGREGATE_FILES = ("summary.csv", "scores.csv", "completion.csv", "loglik.csv")
SUPPLEMENTARY_DIR = "supplementary"
_SCENARIO_RE = re.compile(r"^s(\d+)_(\d+)$")
_REPLICATE_RE = re.compile(r"^r(\d+)$")


@dataclass(frozen=True)
class Scenario:
    index: int
    n_subjects: int
    n_items: int

    @property
    def name(self) -> str:
        return f"s{self.n_subjects}_{self.n_items}"


@dataclass(frozen=True)
class FitTask:
    scenario: str
    replicate: int
    replicate_dir: str
    method: Method
    key: str
    data: ResponseMatrix
    init: Tuple[ItemParameters, ...]
    config: FitConfig


def scenario_grid(config: StudyConfig) -> List[Scenario]:
    """Scenarios in config order: sample sizes outer, item counts inner."""
    return [
        Scenario(index=i, n_subjects=n, n_items=m)
        for i, (n, m) in enumerate(product(config.sample_sizes, config.item_counts))
    ]


def psi_grid(psi_min: float, psi_max: float, step: float) -> np.ndarray:
    count = int(math.floor(round((psi_max - psi_min) / step, 9))) + 1
    return np.round(psi_min + step * np.arange(count), 10)


def run_fit_task(task: FitTask) -> FitResult:
    """Fit one task; any failure becomes a NumericalFailure result."""
    start = time.perf_counter()
    try:
        return get_estimator(task.method, task.config).fit(task.data, list(task.init))
    except Exception:
        logger.exception(
            "fit failed: scenario=%s replicate=%d method=%s",
            task.scenario,
            task.replicate,
            task.method.value,
        )
        return FitResult(
            estimates=list(task.init),
            loglik=float("nan"),
            converged=False,
            status=FitStatus.NUMERICAL_FAILURE,
            outer_iterations=0,
            wall_time_ms=int(round((time.perf_counter() - start) * 1000)),
            method=task.method,
        )


class StudyService(StudyInterface):
    """Runs a recovery study into a directory tree and aggregates it."""

    logger = logging.getLogger(__name__)

    def __init__(self, show_progress: Optional[bool] = None) -> None:
        self.show_progress = settings.show_progress if show_progress is None else show_progress

    def _prepare(
        self, config: StudyConfig, store: FitStore
    ) -> Tuple[List[dict], List[FitTask], List[dict]]:
        """Sample, simulate and write every replicate; collect the fits still to run."""
        fit_config = config.fit.model_copy(update={"quadrature_points": config.quadrature_points})
        scenarios, tasks, reused = [], [], []
        for scenario in scenario_grid(config):
            replicates = []
            for r in range(config.replicates):
                stream = (stream_id(scenario.index, r),)
                replicate_dir = f"{scenario.name}/r{r}"
                entry = {"replicate": r, "stream_id": stream[0], "seed": config.base_seed}
                items = sample_item_parameters(scenario.n_items, config.base_seed, stream)
                try:
                    simulated = simulate_dataset(
                        items,
                        scenario.n_subjects,
                        config.base_seed,
                        config.max_resimulations,
                        stream,
                    )
                except GrmError as exc:
                    self.logger.warning("replicate %s skipped: %s", replicate_dir, exc)
                    replicates.append({**entry, "resimulations": None, "error": str(exc)})
                    continue
                init = starting_values(simulated.data)
                out = store.root / replicate_dir
                write_item_csv(items, out / "params_true.csv")
                write_response_csv(simulated.data, out / "data.csv")
                write_item_csv(init, out / "init.csv")
                replicates.append({**entry, "resimulations": simulated.resimulations})

                for method in config.methods:
                    key = fit_key(simulated.data, init, method, fit_config)
                    cached = store.get(replicate_dir, method, key)
                    if cached is not None:
                        reused.append(
                            _fit_entry(scenario.name, r, method, key, cached, reused=True)
                        )
                        continue
                    tasks.append(
                        FitTask(
                            scenario=scenario.name,
                            replicate=r,
                            replicate_dir=replicate_dir,
                            method=method,
                            key=key,
                            data=simulated.data,
                            init=tuple(init),
                            config=fit_config,
                        )
                    )
            resims = [e["resimulations"] for e in replicates if e.get("resimulations") is not None]
            self.logger.info(
                "scenario %s prepared: %d replicates, %d resimulations in total",
                scenario.name,
                len(replicates),
                sum(resims),
            )
            scenarios.append(
                {
                    "index": scenario.index,
                    "name": scenario.name,
                    "n_subjects": scenario.n_subjects,
                    "n_items": scenario.n_items,
                    "replicates": replicates,
                }
            )
        return scenarios, tasks, reused

    def _execute(self, tasks: Sequence[FitTask], jobs: int) -> Iterable[Tuple[FitTask, FitResult]]:
        progress = tqdm(total=len(tasks), desc="fits", disable=not self.show_progress)
        try:
            if jobs == 1 or len(tasks) <= 1:
                for task in tasks:
                    yield task, run_fit_task(task)
                    progress.update(1)
                return
            with ProcessPoolExecutor(max_workers=jobs) as executor:
                futures = {executor.submit(run_fit_task, task): task for task in tasks}
                for future in as_completed(futures):
                    yield futures[future], future.result()
                    progress.update(1)
        finally:
            progress.close()

    def run(self, config: StudyConfig) -> Manifest:
        start = time.perf_counter()
        store = FitStore(config.output_dir)
        self.logger.info(
            "study started: %d scenarios x %d replicates, methods=%s, jobs=%d, out=%s",
            len(config.sample_sizes) * len(config.item_counts),
            config.replicates,
            [m.value for m in config.methods],
            config.jobs,
            store.root,
        )
        scenarios, tasks, fits = self._prepare(config, store)
        self.logger.info("%d fits to run, %d reused from a previous run", len(tasks), len(fits))

        for task, result in self._execute(tasks, config.jobs):
            store.put(task.replicate_dir, task.key, result)
            fits.append(_fit_entry(task.scenario, task.replicate, task.method, task.key, result))
            if not result.converged:
                self.logger.warning(
                    "%s %s r%d ended with %s",
                    task.method.value,
                    task.scenario,
                    task.replicate,
                    result.status.value,
                )

        order = {s["name"]: s["index"] for s in scenarios}
        fits.sort(key=lambda f: (order[f["scenario"]], f["replicate"], f["method"]))
        manifest = Manifest(
            config=config.model_dump(mode="json"),
            settings=settings.model_dump(),
            scenarios=scenarios,
            fits=fits,
            total_fit_wall_time_ms=sum(f["wall_time_ms"] for f in fits),
        )
        store.write_manifest(manifest)
        self.aggregate(store.root, store.root)
        manifest.study_wall_time_ms = int(round((time.perf_counter() - start) * 1000))
        store.write_manifest(manifest)
        self.logger.info("study finished in %.2fs", manifest.study_wall_time_ms / 1000)
        return manifest

    def aggregate(
        self,
        input_dir: Path,
        output_dir: Path,
        include_nonconverged: Optional[bool] = None,
    ) -> List[Path]:
        """Rebuild every aggregate table from the persisted tree alone."""
        input_dir, output_dir = Path(input_dir), Path(output_dir)
        config = _study_config(input_dir)
        if include_nonconverged is None:
            include_nonconverged = config.include_nonconverged
        grid = psi_grid(config.psi_min, config.psi_max, config.psi_step)
        tree = _read_tree(input_dir, config)
        if not tree:
            raise EmptyInputError(f"no scenario directories under {input_dir}")

        tables: Dict[str, List[dict]] = {
            name: []
            for name in ("summary", "scores", "completion", "loglik", "table1", "agreement", "runtime", "true_params")
        }
        methods = [m for m in Method if any(m in rep["fits"] for reps in tree.values() for rep in reps)]

        for scenario_index, (scenario, replicates) in enumerate(tree.items()):
            for rep in replicates:
                for item in rep["truth"]:
                    tables["true_params"].append(
                        {"scenario": scenario, "replicate": rep["replicate"], **item.to_row()}
                    )
            kept: Dict[Method, List[dict]] = {}
            for method in methods:
                with_fit = [rep for rep in replicates if method in rep["fits"]]
                if not with_fit:
                    continue
                results = [rep["fits"][method] for rep in with_fit]
                tables["completion"].append(
                    {"scenario": scenario, "method": method.value, "rate": metrics.completion_rate(results)}
                )
                for row in metrics.runtime_summary(results):
                    tables["runtime"].append({"scenario": scenario, **_plain(row)})

                kept[method] = [
                    rep for rep in with_fit if include_nonconverged or rep["fits"][method].converged
                ]
                if not kept[method]:
                    self.logger.warning("no usable %s fits in %s", method.value, scenario)
                    continue
                records: List[ErrorRecord] = []
                for rep in kept[method]:
                    records.extend(
                        metrics.estimation_errors(
                            rep["fits"][method].estimates, rep["truth"], scenario_index, rep["replicate"]
                        )
                    )
                for row in metrics.recovery_summary(records):
                    tables["summary"].append(
                        {"scenario": scenario, "method": method.value, **_plain(row)}
                    )
                for row in metrics.error_distribution_table(records):
                    tables["table1"].append(
                        {"scenario": scenario, "method": method.value, **_plain(row)}
                    )
                curve = metrics.expected_score_error_curve(
                    [rep["fits"][method].estimates for rep in kept[method]],
                    [rep["truth"] for rep in kept[method]],
                    grid,
                )
                curve.insert(0, "method", method.value)
                curve.insert(0, "scenario", scenario)
                tables["scores"].extend(curve.to_dict("records"))

            if Method.LAPLACE in methods and Method.GHQ_EM in methods:
                both = [rep for rep in replicates if Method.LAPLACE in rep["fits"] and Method.GHQ_EM in rep["fits"]]
                for rep in both:
                    tables["loglik"].append(
                        {
                            "scenario": scenario,
                            "replicate": rep["replicate"],
                            "loglik_laplace": rep["fits"][Method.LAPLACE].loglik,
                            "loglik_ghq": rep["fits"][Method.GHQ_EM].loglik,
                        }
                    )
                agreeing = [
                    rep
                    for rep in both
                    if include_nonconverged
                    or (rep["fits"][Method.LAPLACE].converged and rep["fits"][Method.GHQ_EM].converged)
                ]
                if agreeing:
                    for row in metrics.method_agreement(
                        [rep["fits"][Method.LAPLACE].estimates for rep in agreeing],
                        [rep["fits"][Method.GHQ_EM].estimates for rep in agreeing],
                    ):
                        tables["agreement"].append({"scenario": scenario, **_plain(row)})

        columns = {
            "summary": ["scenario", "method", "parameter", "bias", "rmse", "rrmse", "n"],
            "scores": ["scenario", "method", "psi", "mean_err", "p2.5", "p97.5"],
            "completion": ["scenario", "method", "rate"],
            "loglik": ["scenario", "replicate", "loglik_laplace", "loglik_ghq"],
            "table1": ["scenario", "method", "parameter", "mean", "sd", "median", "min", "max", "n"],
            "agreement": ["scenario", "parameter", "correlation", "median_abs_diff", "n"],
            "runtime": ["scenario", "method", "mean_ms", "median_ms", "n"],
            "true_params": ["scenario", "replicate", "item", "a", "b1", "b2", "b3", "b4"],
        }
        written = []
        for filename in AGGREGATE_FILES:
            name = Path(filename).stem
            if name == "loglik" and not (Method.LAPLACE in methods and Method.GHQ_EM in methods):
                continue
            frame = pd.DataFrame(tables[name], columns=columns[name])
            written.append(write_frame(frame, output_dir / f"{name}.csv"))
        for name in ("table1", "agreement", "runtime", "true_params"):
            frame = pd.DataFrame(tables[name], columns=columns[name])
            written.append(write_frame(frame, output_dir / SUPPLEMENTARY_DIR / f"{name}.csv"))
        self.logger.info("aggregated %d scenarios into %d tables under %s", len(tree), len(written), output_dir)
        return written


def _plain(model: BaseModel) -> dict:
    return {k: (v.value if isinstance(v, Enum) else v) for k, v in model.model_dump().items()}


def _fit_entry(
    scenario: str, replicate: int, method: Method, key: str, result: FitResult, reused: bool = False
) -> dict:
    return {
        "scenario": scenario,
        "replicate": replicate,
        "method": method.value,
        "key": key,
        "status": result.status.value,
        "wall_time_ms": result.wall_time_ms,
        "reused": reused,
    }


def _study_config(input_dir: Path) -> StudyConfig:
    manifest_path = input_dir / MANIFEST_NAME
    if manifest_path.exists():
        return StudyConfig.model_validate(read_json(manifest_path)["config"])
    return StudyConfig()


def _read_tree(input_dir: Path, config: StudyConfig) -> Dict[str, List[dict]]:
    """scenario name -> replicates with true items and whichever fits exist.

    Scenarios follow the configured grid order; directories outside it follow in
    (N, M) order.
    """
    found = {}
    for path in input_dir.iterdir():
        match = _SCENARIO_RE.match(path.name)
        if path.is_dir() and match:
            found[path.name] = (int(match.group(1)), int(match.group(2)))
    ordered = [s.name for s in scenario_grid(config) if s.name in found]
    ordered += sorted((n for n in found if n not in ordered), key=lambda n: found[n])

    store = FitStore(input_dir)
    tree: Dict[str, List[dict]] = {}
    for name in ordered:
        replicates = []
        rep_dirs = [
            (int(m.group(1)), p)
            for p in (input_dir / name).iterdir()
            if p.is_dir() and (m := _REPLICATE_RE.match(p.name))
        ]
        for r, rep_dir in sorted(rep_dirs):
            truth_path = rep_dir / "params_true.csv"
            if not truth_path.exists():
                continue
            fits = {}
            for method in Method:
                fit_path = store.path(f"{name}/r{r}", method)
                if fit_path.exists():
                    fits[method] = read_fit_json(fit_path)
            replicates.append({"replicate": r, "truth": read_item_csv(truth_path), "fits": fits})
        tree[name] = replicates
    return tree


def run_study(config: StudyConfig, show_progress: Optional[bool] = None) -> Manifest:
    return StudyService(show_progress).run(config)


def emit_likelihood_figure(
    items: Sequence[ItemParameters],
    responses: Sequence[int],
    rule: QuadratureRule,
    psi: Sequence[float],
    inner_tolerance: float = 1e-9,
) -> pd.DataFrame:
    """Plot-ready data for one response pattern.

    `kind == "curve"` rows carry, per psi: each item's P(Y >= 1), the data
    likelihood, the joint density with the N(0, 1) prior and the Laplace Gaussian
    approximation. `kind == "ghq"` rows carry the quadrature mass points
    w_q * exp(loglik(x_q)).
    """
    itemset = as_itemset(items)
    row = np.asarray(responses).reshape(1, -1)
    if row.shape[1] != itemset.n_items:
        raise DimensionError(
            f"pattern length {row.shape[1]} does not match item count {itemset.n_items}"
        )
    grid = np.asarray(psi, dtype=float).reshape(-1)
    if grid.size == 0:
        raise EmptyInputError("psi grid is empty")

    loglik = pattern_loglik_grid(itemset, row, grid)[0]
    mode = find_posterior_mode(itemset, row[0], inner_tolerance)
    g_hat, _, _ = joint_logdensity(itemset, row[0], mode.eta_hat)

    curve = pd.DataFrame({"kind": "curve", "psi": grid})
    for j, item_id in enumerate(itemset.item_ids):
        curve[f"icc_{int(item_id)}"] = expit(itemset.a[j] * (grid - itemset.b[j, 0]))
    curve["data_likelihood"] = np.exp(loglik)
    curve["joint_density"] = np.exp(loglik - 0.5 * grid**2 - HALF_LOG_2PI)
    curve["laplace_approximation"] = np.exp(
        g_hat - 0.5 * mode.curvature * (grid - mode.eta_hat) ** 2
    )

    node_loglik = pattern_loglik_grid(itemset, row, rule.nodes)[0]
    ghq = pd.DataFrame(
        {"kind": "ghq", "psi": rule.nodes, "ghq_mass": np.exp(rule.log_weights + node_loglik)}
    )
    return pd.concat([curve, ghq], ignore_index=True)
