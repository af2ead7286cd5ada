from .cgan import CganModel, NormalizationStats, synthesize, train_cgan
from .config import RunConfig, SimConfig, SpfFormula, TrainConfig
from .dataset import Dataset, read_csv, write_csv
from .simulate import SimDataset, gen_dataset, gen_experiment_suite
from .spf import SpfModel, eb_estimate, fit_spf

__all__ = [
    'CganModel',
    'NormalizationStats',
    'synthesize',
    'train_cgan',
    'RunConfig',
    'SimConfig',
    'SpfFormula',
    'TrainConfig',
    'Dataset',
    'read_csv',
    'write_csv',
    'SimDataset',
    'gen_dataset',
    'gen_experiment_suite',
    'SpfModel',
    'eb_estimate',
    'fit_spf',
]
