import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, CliApp, CliSubCommand, SettingsConfigDict, SettingsError

from crash_augmentor.cgan import load_model, save_model, synthesize, train_cgan, write_history
from crash_augmentor.config import PRESETS, EbWeighting, RunConfig, SpfFormula, settings
from crash_augmentor.dataset import read_csv, write_csv
from crash_augmentor.errors import CrashAugmentError, NumericalError
from crash_augmentor.evaluate import ExperimentReport, rank_sites, run_realworld_experiment
from crash_augmentor.evaluate.experiment import experiment_metadata, experiment_plan, run_experiment_plan
from crash_augmentor.simulate import derive_seed, gen_dataset, gen_experiment_suite, gen_intersection_dataset
from crash_augmentor.spf import SpfModel, coefficient_significance, eb_estimates, fit_spf

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def resolve_config(preset: Optional[str], config_path: Optional[Path],
                   overrides: Dict[str, Any]) -> RunConfig:
    """Флаги > файл > пресет > значения по умолчанию; None во флагах означает "не задано" """
    cleaned: Dict[str, Any] = {}
    for key, value in overrides.items():
        if isinstance(value, dict):
            section = {k: v for k, v in value.items() if v is not None}
            if section:
                cleaned[key] = section
        elif value is not None:
            cleaned[key] = value
    return RunConfig.layered(base=PRESETS[preset] if preset else None, toml_file=config_path, **cleaned)


def write_manifest(path: Path, command: str, config: Optional[RunConfig],
                   outputs: Sequence[Path], extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": config.model_dump(mode="json") if config is not None else None,
        "outputs": [Path(p).name for p in outputs],
        **(extra or {}),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


class SimulateCommand(BaseModel):
    """Генерирует симулированные выборки (или стенд-ин перекрёстков) в CSV"""

    dispersion: Optional[float] = Field(None, gt=0)
    size: Optional[int] = Field(None, ge=1)
    replications: int = Field(1, ge=1)
    seed: Optional[int] = Field(None, ge=0)
    suite: bool = False
    preset: Literal["gamma-poisson", "intersections"] = "gamma-poisson"
    config: Optional[Path] = None
    out_dir: Path = Path("data")

    def cli_cmd(self) -> None:
        config = resolve_config(None, self.config, {
            "simulation": {"dispersion": self.dispersion, "sample_size": self.size, "seed": self.seed},
        })
        simulation = config.simulation
        outputs: List[Path] = []
        if self.preset == "intersections":
            for i in range(self.replications):
                data = gen_intersection_dataset(self.size or 200, derive_seed(simulation.seed, "intersections", i))
                outputs.append(write_csv(data, self.out_dir / f"intersections_{i:04d}.csv"))
        elif self.suite:
            suite = gen_experiment_suite(simulation, self.replications, self.replications)
            outputs.append(write_csv(suite.cgan_train, self.out_dir / "cgan_train.csv"))
            for i, data in enumerate(suite.ns_test):
                outputs.append(write_csv(data, self.out_dir / f"ns_test_{i:04d}.csv"))
            for i, data in enumerate(suite.prediction_test):
                outputs.append(write_csv(data, self.out_dir / f"prediction_test_{i:04d}.csv"))
        else:
            for i in range(self.replications):
                seed = derive_seed(simulation.seed, "dataset", i)
                data = gen_dataset(simulation.model_copy(update={"seed": seed}))
                outputs.append(write_csv(data, self.out_dir / f"sim_{i:04d}.csv"))
        write_manifest(self.out_dir / "manifest.json", "simulate", config, outputs,
                       {"preset": self.preset, "suite": self.suite})
        logger.info(f"Wrote {len(outputs)} datasets to {self.out_dir}")


class TrainCommand(BaseModel):
    """Обучает CGAN на CSV с данными"""

    data: Path
    out: Path = Path("cgan.model")
    epochs: Optional[int] = Field(None, ge=0)
    batch_size: Optional[int] = Field(None, gt=0)
    lr_g: Optional[float] = Field(None, gt=0)
    lr_d: Optional[float] = Field(None, gt=0)
    decay_g: Optional[float] = Field(None, ge=0)
    decay_d: Optional[float] = Field(None, ge=0)
    seed: Optional[int] = Field(None, ge=0)
    log_features: List[str] = Field(default_factory=list)
    config: Optional[Path] = None

    def cli_cmd(self) -> None:
        config = resolve_config(None, self.config, {"training": {
            "epochs": self.epochs, "batch_size": self.batch_size, "lr_g": self.lr_g, "lr_d": self.lr_d,
            "decay_g": self.decay_g, "decay_d": self.decay_d, "seed": self.seed,
        }})
        data = read_csv(self.data)
        unknown = set(self.log_features) - set(data.feature_names)
        if unknown:
            raise ValueError(f"unknown features for log transform: {sorted(unknown)}")
        model = train_cgan(data, config.training, [n in self.log_features for n in data.feature_names])
        history = write_history(model, _sidecar(self.out, "_history.csv"))
        save_model(model, self.out)
        write_manifest(_sidecar(self.out, ".manifest.json"), "train", config, [self.out, history],
                       {"data": str(self.data), "log_features": self.log_features})


class AugmentCommand(BaseModel):
    """Генерирует n синтетических строк обученной CGAN"""

    model: Path
    n: int = Field(..., ge=0)
    seed: int = Field(0, ge=0)
    out: Path = Path("synthetic.csv")
    merge_with: Optional[Path] = None

    def cli_cmd(self) -> None:
        if not self.model.exists():
            raise FileNotFoundError(f"model file {self.model} not found")
        cgan = load_model(self.model)
        synthetic = synthesize(cgan, self.n, self.seed)
        dataset = read_csv(self.merge_with).augment(synthetic) if self.merge_with else synthetic
        write_csv(dataset, self.out, include_synthetic=True)
        write_manifest(_sidecar(self.out, ".manifest.json"), "augment", None, [self.out],
                       {"model": str(self.model), "n": self.n, "seed": self.seed})
        logger.info(f"Wrote {len(dataset)} rows ({self.n} synthetic) to {self.out}")


class FitCommand(BaseModel):
    """Оценивает NB SPF и печатает коэффициенты с тестом Вальда"""

    data: Path
    out: Path = Path("spf.json")
    features: List[str] = Field(default_factory=list)
    log_features: List[str] = Field(default_factory=list)
    augment: Optional[Path] = None
    config: Optional[Path] = None

    def cli_cmd(self) -> None:
        config = resolve_config(None, self.config, {})
        data = read_csv(self.data)
        if self.augment:
            data = data.augment(read_csv(self.augment))
        names = self.features or config.formula.names or list(data.feature_names)
        log_names = self.log_features or [t.name for t in config.formula.terms if t.log]
        formula = SpfFormula.from_names(names, log_names)
        model = fit_spf(data, formula)
        model.save(self.out)
        print(model.equation())
        for test in coefficient_significance(model):
            p = f"{test.p_value:.4g}" if test.p_value is not None else "n/a"
            print(f"  {test.name:>20}  {test.estimate:+.5f}  se={test.std_error:.5f}  p={p}")
        write_manifest(_sidecar(self.out, ".manifest.json"), "fit", config, [self.out],
                       {"data": str(self.data), "augment": str(self.augment) if self.augment else None,
                        "formula": formula.model_dump()})


class ScreenCommand(BaseModel):
    """Ранжирует площадки по оценке EB и отмечает top-k как очаги"""

    data: Path
    model: Path
    top_k: Optional[int] = Field(None, ge=1)
    weighting: EbWeighting = "published"
    out: Path = Path("hotspots.csv")

    def cli_cmd(self) -> None:
        data = read_csv(self.data)
        spf = SpfModel.load(self.model)
        k = self.top_k or len(data)
        if k > len(data):
            raise ValueError(f"top-k={k} exceeds the {len(data)} sites in {self.data}")
        mu = spf.predict_dataset(data)
        eb, weight = eb_estimates(mu, data.counts, spf.dispersion, self.weighting)
        order = rank_sites(eb, source="eb").order
        frame = pd.DataFrame({
            "rank": range(1, len(order) + 1),
            "site": order,
            "mu": mu[order],
            "observed": data.counts[order],
            "eb": eb[order],
            "weight": weight[order],
            "hotspot": [int(r < k) for r in range(len(order))],
        })
        self.out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(self.out, index=False, float_format="%.17g", lineterminator="\n")
        print(frame.head(k).to_string(index=False))
        write_manifest(_sidecar(self.out, ".manifest.json"), "screen", None, [self.out],
                       {"data": str(self.data), "model": str(self.model), "top_k": k,
                        "weighting": self.weighting})


class ExperimentCommand(BaseModel):
    """Запускает симуляционный эксперимент (или прогон на реальных данных)"""

    mode: Literal["simulation", "realworld"] = "simulation"
    preset: Literal["paper-sim", "smoke"] = "paper-sim"
    config: Optional[Path] = None
    scale: float = Field(1.0, gt=0)
    seed: Optional[int] = Field(None, ge=0)
    epochs: Optional[int] = Field(None, ge=0)
    workers: Optional[int] = Field(None, ge=1)
    weighting: Optional[EbWeighting] = None
    data: Optional[Path] = None
    synthetic_size: Optional[int] = Field(None, ge=0)
    split_seed: Optional[int] = Field(None, ge=0)
    out_dir: Optional[Path] = None
    dry_run: bool = False

    def cli_cmd(self) -> None:
        config = resolve_config(self.preset, self.config, {
            "master_seed": self.seed,
            "training": {"epochs": self.epochs},
            "experiment": {"eb_weighting": self.weighting},
            "real_world": {"synthetic_size": self.synthetic_size, "split_seed": self.split_seed},
        })
        if self.scale != 1.0:
            config = config.model_copy(update={"experiment": config.experiment.scaled(self.scale)})
        out_dir = self.out_dir or settings.OUTPUT_DIR / self.preset
        workers = self.workers or settings.AUGMENT_WORKERS

        if self.mode == "realworld":
            self._run_realworld(config, out_dir)
            return
        if self.dry_run:
            print(json.dumps({"out_dir": str(out_dir), "workers": workers, **experiment_plan(config)}, indent=2))
            return
        write_manifest(out_dir / "manifest.json", "experiment", config, [],
                       {"preset": self.preset, "scale": self.scale, "workers": workers})
        report = run_experiment_plan(config, out_dir, workers)
        print(report.format_table())

    def _run_realworld(self, config: RunConfig, out_dir: Path) -> None:
        real_world = config.real_world
        if self.dry_run:
            print(json.dumps({"out_dir": str(out_dir), "data": str(self.data) if self.data else "intersections",
                              **real_world.model_dump()}, indent=2))
            return
        dataset = (
            read_csv(self.data) if self.data
            else gen_intersection_dataset(200, derive_seed(config.master_seed, "intersections"))
        )
        report = run_realworld_experiment(
            dataset,
            split_seed=real_world.split_seed,
            synthetic_size=real_world.synthetic_size,
            formula=config.formula if config.formula.terms else None,
            train_config=config.training,
            exclude_zero_counts=real_world.exclude_zero_counts,
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        result_path = out_dir / "realworld.json"
        result_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        write_manifest(out_dir / "manifest.json", "experiment", config, [result_path],
                       {"mode": "realworld", "data": str(self.data) if self.data else "intersections"})
        print(f"Base:      {report.base_model.equation()}")
        print(f"Augmented: {report.augmented_model.equation()}")
        print(f"MAPE base={report.mape_base:.2f}%  augmented={report.mape_augmented:.2f}%  "
              f"sites={report.evaluated_sites} (excluded zeros: {report.excluded_zero_sites})")


class ReportCommand(BaseModel):
    """Пересобирает summary.json и boxplot_long.csv из report.csv каталога запуска"""

    run_dir: Path

    def cli_cmd(self) -> None:
        manifest_path = self.run_dir / "manifest.json"
        metadata: Dict[str, Any] = {}
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            if manifest.get("config"):
                metadata = experiment_metadata(RunConfig.model_validate(manifest["config"]))
        report = ExperimentReport.load(self.run_dir, metadata)
        report.write(self.run_dir)
        print(report.format_table())


class CrashAugmentCli(BaseSettings):
    """CGAN-аугментация данных о ДТП для SPF и выявления очагов аварийности"""

    model_config = SettingsConfigDict(
        cli_prog_name="crash_augmentor",
        cli_kebab_case=True,
        cli_implicit_flags=True,
    )

    simulate: CliSubCommand[SimulateCommand]
    train: CliSubCommand[TrainCommand]
    augment: CliSubCommand[AugmentCommand]
    fit: CliSubCommand[FitCommand]
    screen: CliSubCommand[ScreenCommand]
    experiment: CliSubCommand[ExperimentCommand]
    report: CliSubCommand[ReportCommand]

    def cli_cmd(self) -> None:
        CliApp.run_subcommand(self)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        CliApp.run(CrashAugmentCli, cli_args=args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}", exc_info=True)
        return EXIT_NUMERICAL
    except (ValidationError, SettingsError) as e:
        logger.error(f"Invalid arguments: {e}")
        return EXIT_USAGE
    except (CrashAugmentError, ValueError, KeyError, FileNotFoundError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
