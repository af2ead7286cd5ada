from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

from pydantic import BaseModel, Field, field_validator
from pydantic_settings import (
    BaseSettings,
    InitSettingsSource,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

EbWeighting = Literal["published", "inverse-dispersion"]


class Settings(BaseSettings):
    # Число процессов для репликаций эксперимента
    AUGMENT_WORKERS: int = Field(1, ge=1)
    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: Path = Path("runs")

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")


class SimConfig(BaseModel):
    """Параметры симуляции: lambda = exp(beta0 + b'X) * exp(eps), exp(eps) ~ Gamma(1/alpha, alpha)"""

    beta0: float = 0.5
    coefficients: List[float] = Field(default_factory=lambda: [0.5, -0.5, 1.0, -1.0], min_length=1)
    dispersion: float = Field(0.5, gt=0)
    sample_size: int = Field(100, ge=1)
    seed: int = Field(0, ge=0)

    @property
    def feature_size(self) -> int:
        return len(self.coefficients)


class TrainConfig(BaseModel):
    epochs: int = Field(5000, ge=0)
    batch_size: int = Field(100, gt=0)
    lr_g: float = Field(0.001, gt=0)
    lr_d: float = Field(0.001, gt=0)
    decay_g: float = Field(0.001, ge=0)
    decay_d: float = Field(0.0, ge=0)
    seed: int = Field(0, ge=0)


class FormulaTerm(BaseModel):
    name: str
    log: bool = False


class SpfFormula(BaseModel):
    terms: List[FormulaTerm] = Field(default_factory=list)

    @classmethod
    def from_names(cls, names: List[str], log_names: Optional[List[str]] = None) -> "SpfFormula":
        log_names = set(log_names or [])
        unknown = log_names - set(names)
        if unknown:
            raise ValueError(f"log flag set for unknown features: {sorted(unknown)}")
        return cls(terms=[FormulaTerm(name=n, log=n in log_names) for n in names])

    @property
    def names(self) -> List[str]:
        return [t.name for t in self.terms]

    @property
    def log_flags(self) -> List[bool]:
        return [t.log for t in self.terms]


class ExperimentConfig(BaseModel):
    dispersions: List[float] = Field(default_factory=lambda: [0.5, 1.5], min_length=1)
    synthetic_sizes: List[int] = Field(default_factory=lambda: [200, 500, 1000], min_length=1)
    ns_replications: int = Field(1000, ge=1)
    prediction_replications: int = Field(1000, ge=1)
    hotspot_ks: List[int] = Field(default_factory=lambda: [5, 10, 15, 20], min_length=1)
    eb_weighting: EbWeighting = "published"

    @field_validator("dispersions")
    @classmethod
    def _positive_dispersions(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values):
            raise ValueError("dispersions must be > 0")
        return values

    @field_validator("synthetic_sizes")
    @classmethod
    def _non_negative(cls, values: List[int]) -> List[int]:
        if any(v < 0 for v in values):
            raise ValueError("synthetic sizes must be >= 0")
        return values

    @field_validator("hotspot_ks")
    @classmethod
    def _positive_ks(cls, values: List[int]) -> List[int]:
        if any(v < 1 for v in values):
            raise ValueError("hotspot k must be >= 1")
        return values

    def scaled(self, scale: float) -> "ExperimentConfig":
        """Масштабирует число репликаций (минимум 1)"""
        if scale <= 0:
            raise ValueError("scale must be > 0")
        return self.model_copy(update={
            "ns_replications": max(1, round(self.ns_replications * scale)),
            "prediction_replications": max(1, round(self.prediction_replications * scale)),
        })


class RealWorldConfig(BaseModel):
    split_seed: int = Field(0, ge=0)
    synthetic_size: int = Field(1000, ge=0)
    # MAPE не определён при y = 0, такие площадки исключаются
    exclude_zero_counts: bool = True


class RunConfig(BaseSettings):
    """Конфигурация запуска; собирается только из явно переданных слоёв, окружение не читается"""

    master_seed: int = Field(0, ge=0)
    simulation: SimConfig = Field(default_factory=SimConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    formula: SpfFormula = Field(default_factory=SpfFormula)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    real_world: RealWorldConfig = Field(default_factory=RealWorldConfig)

    @classmethod
    def settings_customise_sources(cls, settings_cls: Type[BaseSettings],
                                   init_settings: PydanticBaseSettingsSource,
                                   env_settings: PydanticBaseSettingsSource,
                                   dotenv_settings: PydanticBaseSettingsSource,
                                   file_secret_settings: PydanticBaseSettingsSource,
                                   ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings,)

    @classmethod
    def layered(cls, base: Optional["RunConfig"] = None, toml_file: Optional[Path] = None,
                **overrides: Any) -> "RunConfig":
        """Флаги > TOML-файл > base; вложенные секции объединяются по ключам"""
        if toml_file is not None and not Path(toml_file).is_file():
            raise FileNotFoundError(f"config file {toml_file} not found")
        defaults = (base or cls()).model_dump()

        class Layers(cls):
            @classmethod
            def settings_customise_sources(cls_, settings_cls, init_settings, env_settings,
                                           dotenv_settings, file_secret_settings):
                files = (TomlConfigSettingsSource(settings_cls, toml_file=toml_file),) if toml_file else ()
                return (init_settings, *files, InitSettingsSource(settings_cls, init_kwargs=defaults))

        return cls.model_validate(Layers(**overrides).model_dump())

    @classmethod
    def from_toml(cls, path: Path, base: Optional["RunConfig"] = None) -> "RunConfig":
        return cls.layered(base=base, toml_file=path)


PRESETS: Dict[str, RunConfig] = {
    "paper-sim": RunConfig(),
    "smoke": RunConfig(
        training=TrainConfig(epochs=200),
        experiment=ExperimentConfig(
            dispersions=[0.5],
            synthetic_sizes=[0, 200],
            ns_replications=5,
            prediction_replications=5,
        ),
    ),
}

settings = Settings()
