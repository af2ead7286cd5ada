from .accuracy import mape
from .base import ArmContext, BaseMeasure, MetricSet, METRICS, ReplicationResult
from .experiment import ReplicationEvaluator, run_replication, run_simulation_experiment
from .hotspot import HotspotRanking, fi_test, multi_k_average, pmd_test, rank_sites
from .measures import (
    CrashMapeMeasure,
    DispersionMapeMeasure,
    EbMapeMeasure,
    FalseIdentificationMeasure,
    PoissonMeanDifferenceMeasure,
)
from .realworld import RealWorldReport, run_realworld_experiment, split_dataset
from .report import ExperimentReport, ReportWriter, improvement
from .stats import StatTestResult, ks_test, levene_test, paired_t_test, two_sample_t_test

__all__ = [
    'mape',
    'ArmContext',
    'BaseMeasure',
    'MetricSet',
    'METRICS',
    'ReplicationResult',
    'ReplicationEvaluator',
    'run_replication',
    'run_simulation_experiment',
    'HotspotRanking',
    'fi_test',
    'multi_k_average',
    'pmd_test',
    'rank_sites',
    'CrashMapeMeasure',
    'DispersionMapeMeasure',
    'EbMapeMeasure',
    'FalseIdentificationMeasure',
    'PoissonMeanDifferenceMeasure',
    'RealWorldReport',
    'run_realworld_experiment',
    'split_dataset',
    'ExperimentReport',
    'ReportWriter',
    'improvement',
    'StatTestResult',
    'ks_test',
    'levene_test',
    'paired_t_test',
    'two_sample_t_test',
]
