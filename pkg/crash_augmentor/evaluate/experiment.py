import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

from crash_augmentor.cgan import CganModel, load_model, save_model, synthesize, train_cgan, write_history
from crash_augmentor.config import RunConfig, SpfFormula
from crash_augmentor.errors import SpfFitError
from crash_augmentor.simulate import (
    ExperimentSuite,
    SimDataset,
    derive_seed,
    expected_count_mean,
    gen_experiment_suite,
    quoted_sample_mean,
)
from crash_augmentor.spf import fit_spf, get_weighting

from .base import ArmContext, BaseMeasure, MetricSet, ReplicationResult
from .hotspot import DEFAULT_KS
from .measures import (
    CrashMapeMeasure,
    DispersionMapeMeasure,
    EbMapeMeasure,
    FalseIdentificationMeasure,
    PoissonMeanDifferenceMeasure,
)
from .report import ExperimentReport, ReportWriter

logger = logging.getLogger(__name__)


class ReplicationEvaluator:
    """Считает полный набор мер для одной обученной SPF"""

    def __init__(self):
        self.measures: Dict[str, BaseMeasure] = {
            "fi": FalseIdentificationMeasure(),
            "pmd": PoissonMeanDifferenceMeasure(),
            "mape_eb": EbMapeMeasure(),
            "mape_crash": CrashMapeMeasure(),
            "mape_dispersion": DispersionMapeMeasure(),
        }

    def evaluate(self, context: ArmContext) -> MetricSet:
        return MetricSet(**{key: measure.compute(context) for key, measure in self.measures.items()})


@dataclass
class ReplicationTask:
    replication: int
    dispersion: float
    ns_test: SimDataset
    prediction_test: SimDataset
    cgan: CganModel
    synthetic_sizes: Sequence[int]
    formula: Optional[SpfFormula]
    ks: Sequence[int]
    weighting: str
    master_seed: int


def _row(task: ReplicationTask, size: int, arm: str, alpha_hat: float, metrics: MetricSet) -> Dict[str, Any]:
    return {
        "dispersion": task.dispersion,
        "synthetic_size": size,
        "replication": task.replication,
        "arm": arm,
        "alpha_hat": alpha_hat,
        **metrics.to_dict(),
    }


def run_replication(task: ReplicationTask) -> ReplicationResult:
    """Base и Augmented SPF на одной NS-выборке для каждого размера синтетики"""
    evaluator = ReplicationEvaluator()
    weighting = get_weighting(task.weighting)

    def context(model) -> ArmContext:
        return ArmContext(
            model=model,
            ns_test=task.ns_test,
            prediction_test=task.prediction_test,
            true_dispersion=task.dispersion,
            weighting=weighting,
            ks=task.ks,
        )

    try:
        base = fit_spf(task.ns_test, task.formula)
        base_metrics = evaluator.evaluate(context(base))
        rows: List[Dict[str, Any]] = []
        for size in task.synthetic_sizes:
            seed = derive_seed(task.master_seed, f"synthesize-{task.dispersion!r}-{size}", task.replication)
            synthetic = synthesize(task.cgan, size, seed)
            augmented = fit_spf(task.ns_test.augment(synthetic), task.formula)
            rows.append(_row(task, size, "base", base.dispersion, base_metrics))
            rows.append(_row(task, size, "augmented", augmented.dispersion, evaluator.evaluate(context(augmented))))
    except SpfFitError as e:
        logger.warning(f"Replication {task.replication} (alpha={task.dispersion}) failed: {e}")
        return ReplicationResult(dispersion=task.dispersion, replication=task.replication, error=str(e))
    return ReplicationResult(dispersion=task.dispersion, replication=task.replication, rows=rows)


def run_simulation_experiment(suite: ExperimentSuite, cgan: CganModel,
                              synthetic_sizes: Sequence[int] = (200, 500, 1000),
                              formula: Optional[SpfFormula] = None,
                              ks: Sequence[int] = DEFAULT_KS,
                              weighting: str = "published",
                              workers: int = 1,
                              master_seed: Optional[int] = None,
                              skip: Iterable[int] = (),
                              on_result: Optional[Callable[[ReplicationResult], None]] = None,
                              metadata: Optional[Dict[str, Any]] = None) -> ExperimentReport:
    """Все репликации одного уровня дисперсии; результаты упорядочены по номеру репликации"""
    if cgan.feature_size != suite.cgan_train.feature_size:
        raise ValueError(
            f"CGAN generates {cgan.feature_size} features, suite has {suite.cgan_train.feature_size}"
        )
    if any(size < 0 for size in synthetic_sizes):
        raise ValueError("synthetic sizes must be >= 0")
    sample_size = len(suite.ns_test[0])
    if max(ks) > sample_size:
        raise ValueError(f"hotspot k={max(ks)} exceeds the {sample_size} sites of a test sample")
    get_weighting(weighting)

    skipped = set(skip)
    master = suite.master_seed if master_seed is None else master_seed
    tasks = [
        ReplicationTask(
            replication=i,
            dispersion=suite.config.dispersion,
            ns_test=ns_test,
            prediction_test=suite.prediction_test[i % len(suite.prediction_test)],
            cgan=cgan,
            synthetic_sizes=tuple(synthetic_sizes),
            formula=formula,
            ks=tuple(ks),
            weighting=weighting,
            master_seed=master,
        )
        for i, ns_test in enumerate(suite.ns_test)
        if i not in skipped
    ]
    logger.info(
        f"Running {len(tasks)} replications for alpha={suite.config.dispersion} "
        f"({len(skipped)} already done) with {workers} worker(s)"
    )

    results: List[ReplicationResult] = []

    def collect(stream: Iterable[ReplicationResult]) -> None:
        for result in stream:
            if on_result:
                on_result(result)
            results.append(result)

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            collect(pool.map(run_replication, tasks))
    else:
        collect(map(run_replication, tasks))

    failed = sum(1 for r in results if r.failed)
    if failed:
        logger.warning(f"{failed} of {len(results)} replications failed for alpha={suite.config.dispersion}")
    return ExperimentReport.from_results(results, metadata)


def experiment_metadata(config: RunConfig) -> Dict[str, Any]:
    """Параметры, от которых зависят числа отчёта (без меток времени)"""
    experiment = config.experiment
    return {
        "master_seed": config.master_seed,
        "dispersions": list(experiment.dispersions),
        "synthetic_sizes": list(experiment.synthetic_sizes),
        "ns_replications": experiment.ns_replications,
        "prediction_replications": experiment.prediction_replications,
        "sample_size": config.simulation.sample_size,
        "epochs": config.training.epochs,
        "hotspot_ks": list(experiment.hotspot_ks),
        "eb_weighting": experiment.eb_weighting,
        "mape_targets": {
            "mape_eb": "true lambda of the NS test sample",
            "mape_crash": "true lambda of the paired prediction sample",
            "mape_dispersion": "true alpha",
        },
        "pmd_normalization": "sum of true lambda over the true top-k sites",
        "expected_count_mean": expected_count_mean(config.simulation),
        "exp_beta0": quoted_sample_mean(config.simulation),
    }


def experiment_plan(config: RunConfig) -> Dict[str, Any]:
    experiment = config.experiment
    fits = len(experiment.dispersions) * experiment.ns_replications * (1 + len(experiment.synthetic_sizes))
    return {
        "dispersions": list(experiment.dispersions),
        "synthetic_sizes": list(experiment.synthetic_sizes),
        "ns_replications": experiment.ns_replications,
        "prediction_replications": experiment.prediction_replications,
        "cgan_trainings": len(experiment.dispersions),
        "epochs_per_training": config.training.epochs,
        "spf_fits": fits,
    }


def run_experiment_plan(config: RunConfig, out_dir: Path, workers: int = 1) -> ExperimentReport:
    """Полный эксперимент по всем уровням дисперсии с дозаписью report.csv и продолжением"""
    out_dir = Path(out_dir)
    experiment = config.experiment
    if max(experiment.hotspot_ks) > config.simulation.sample_size:
        raise ValueError(
            f"hotspot k={max(experiment.hotspot_ks)} exceeds sample size {config.simulation.sample_size}"
        )
    formula = config.formula if config.formula.terms else None
    writer = ReportWriter(out_dir, rows_per_replication=2 * len(experiment.synthetic_sizes))
    done = writer.completed()
    if done:
        logger.info(f"Resuming run in {out_dir}: {len(done)} replications already recorded")

    for dispersion in experiment.dispersions:
        simulation = config.simulation.model_copy(update={"dispersion": dispersion})
        suite = gen_experiment_suite(
            simulation,
            experiment.ns_replications,
            experiment.prediction_replications,
            master_seed=derive_seed(config.master_seed, f"suite-{dispersion!r}"),
        )
        model_path = out_dir / f"cgan_alpha_{dispersion:g}.model"
        if model_path.exists():
            logger.info(f"Reusing trained CGAN {model_path}")
            cgan = load_model(model_path)
        else:
            training = config.training.model_copy(
                update={"seed": derive_seed(config.master_seed, f"cgan-{dispersion!r}")}
            )
            cgan = train_cgan(suite.cgan_train, training)
            save_model(cgan, model_path)
            write_history(cgan, out_dir / f"cgan_alpha_{dispersion:g}_history.csv")

        run_simulation_experiment(
            suite,
            cgan,
            experiment.synthetic_sizes,
            formula=formula,
            ks=experiment.hotspot_ks,
            weighting=experiment.eb_weighting,
            workers=workers,
            master_seed=config.master_seed,
            skip={r for d, r in done if d == dispersion},
            on_result=writer.append,
        )

    report = ExperimentReport.load(out_dir, experiment_metadata(config))
    report.write(out_dir)
    return report
