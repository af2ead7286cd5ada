import json
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from pydantic import Field
from pydantic_settings import BaseSettings, CliApp, SettingsConfigDict

from crash_augmentor.cgan import discriminator_accuracy, synthesize, train_cgan
from crash_augmentor.config import PRESETS, ExperimentConfig, SimConfig, TrainConfig
from crash_augmentor.evaluate import ks_test
from crash_augmentor.evaluate.experiment import run_experiment_plan
from crash_augmentor.simulate import derive_seed, gen_dataset

# Приёмка восстановления распределения: медианный KS p по зёрнам и полоса точности D
MIN_KS_P_VALUE = 0.05
ACCURACY_BAND = (0.35, 0.65)
MIN_SEEDS_IN_BAND = 0.7


class CganCalibrator(BaseSettings):
    """Проверка CGAN на нескольких зёрнах: синтетика против отложенной реальной выборки и,
    опционально, направление эффекта аугментации на уменьшенном эксперименте"""

    model_config = SettingsConfigDict(cli_kebab_case=True, cli_implicit_flags=True)

    seeds: int = Field(10, ge=1)
    epochs: int = Field(5000, ge=1)
    sample_size: int = Field(200, ge=2)
    coefficients: List[float] = Field(default_factory=lambda: [1.0, -1.0], min_length=1)
    dispersion: float = Field(0.5, gt=0)
    directional: bool = False
    directional_replications: int = Field(50, ge=1)
    results_dir: Path = Path("results")

    def _sample(self, seed: int, label: str):
        return gen_dataset(SimConfig(
            coefficients=self.coefficients,
            dispersion=self.dispersion,
            sample_size=self.sample_size,
            seed=derive_seed(seed, label),
        ))

    def check_seed(self, seed: int) -> Dict[str, Any]:
        """Обучает CGAN на одной выборке и сравнивает синтетику с отложенной выборкой того же размера"""
        real = self._sample(seed, "calibration-data")
        held_out = self._sample(seed, "calibration-held-out")
        model = train_cgan(real, TrainConfig(epochs=self.epochs, seed=derive_seed(seed, "calibration-cgan")))
        synthetic = synthesize(model, len(held_out), derive_seed(seed, "calibration-synthesize"))

        features = {}
        for name in real.feature_names:
            ks = ks_test(synthetic.column(name), held_out.column(name))
            features[name] = {
                "mean_gap": abs(float(synthetic.column(name).mean() - held_out.column(name).mean())),
                "ks_distance": ks.statistic,
                "ks_p_value": ks.p_value,
            }
        accuracy = discriminator_accuracy(model, held_out, derive_seed(seed, "calibration-accuracy"))
        in_band = ACCURACY_BAND[0] <= accuracy <= ACCURACY_BAND[1]
        return {
            "seed": seed,
            "final_losses": model.training_history[-1] if model.training_history else None,
            "late_loss_d": float(np.mean([d for d, _ in model.training_history[-100:]])) if model.training_history else None,
            "counts_from_training_set": bool(np.isin(synthetic.counts, real.counts).all()),
            "discriminator_accuracy": accuracy,
            "accuracy_in_band": in_band,
            "features": features,
            "accepted": in_band and all((f["ks_p_value"] or 0.0) > MIN_KS_P_VALUE for f in features.values()),
        }

    @staticmethod
    def recovery_verdict(checks: List[Dict[str, Any]]) -> Dict[str, Any]:
        """Медиана KS p по каждому признаку и доля зёрен с точностью D в полосе"""
        if not checks:
            return {"median_ks_p_value": {}, "seeds_in_band": 0, "accepted": False}
        names = list(checks[0]["features"])
        medians = {
            name: float(np.median([c["features"][name]["ks_p_value"] or 0.0 for c in checks]))
            for name in names
        }
        in_band = sum(c["accuracy_in_band"] for c in checks)
        return {
            "median_ks_p_value": medians,
            "seeds_in_band": in_band,
            "accepted": all(p > MIN_KS_P_VALUE for p in medians.values())
            and in_band >= MIN_SEEDS_IN_BAND * len(checks),
        }

    def check_direction(self) -> Dict[str, Any]:
        """Уменьшенный эксперимент: улучшение FI и PMD при наибольшей синтетике должно быть > 0"""
        config = PRESETS["paper-sim"].model_copy(update={
            "training": TrainConfig(epochs=self.epochs),
            "experiment": ExperimentConfig(
                dispersions=[self.dispersion],
                ns_replications=self.directional_replications,
                prediction_replications=self.directional_replications,
            ),
        })
        with tempfile.TemporaryDirectory() as run_dir:
            summary = run_experiment_plan(config, Path(run_dir)).summary()
        largest = max(summary["cells"], key=lambda c: c["synthetic_size"])
        gains = {m: largest["metrics"][m]["improvement"] for m in ("fi", "pmd")}
        return {
            "synthetic_size": largest["synthetic_size"],
            "improvements": gains,
            "accepted": all(g is not None and g > 0 for g in gains.values()),
        }

    def calibrate_all(self) -> Dict[str, Any]:
        results: Dict[str, Any] = {
            "total": self.seeds,
            "processed": 0,
            "accepted": 0,
            "rejected": 0,
            "failures": [],
            "checks": [],
        }
        for seed in range(self.seeds):
            try:
                print(f"\nTraining CGAN for seed {seed}")
                check = self.check_seed(seed)
                results["checks"].append(check)
                results["accepted" if check["accepted"] else "rejected"] += 1
                for name, feature in check["features"].items():
                    print(f"  {name}: KS D={feature['ks_distance']:.3f}, p={feature['ks_p_value']}")
                print(f"  discriminator accuracy={check['discriminator_accuracy']:.3f}")
            except Exception as e:
                print(f"Error calibrating seed {seed}: {e}")
                results["failures"].append({"seed": seed, "error": str(e)})
            results["processed"] += 1
            print(f"Progress: {results['processed']}/{results['total']} seeds")

        results["recovery"] = self.recovery_verdict(results["checks"])
        if self.directional:
            print("\nRunning scaled experiment for the direction of improvement...")
            results["direction"] = self.check_direction()
        return results

    def save_results(self, results: Dict[str, Any]) -> Path:
        self.results_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        filepath = self.results_dir / f"calibration_results_{timestamp}.json"
        with open(filepath, "w", encoding="utf-8") as f:
            json.dump(results, f, indent=2, ensure_ascii=False)
        return filepath

    def cli_cmd(self) -> None:
        print("Starting CGAN calibration...")
        results = self.calibrate_all()

        print("\nCalibration completed!")
        print(f"Seeds: {results['total']}")
        print(f"Accepted: {results['accepted']}")
        print(f"Rejected: {results['rejected']}")
        print(f"Recovery: {results['recovery']}")
        if "direction" in results:
            print(f"Direction check: {results['direction']}")
        for failure in results["failures"]:
            print(f"Seed {failure['seed']}: {failure['error']}")

        path = self.save_results(results)
        print(f"\nResults saved to {path}")


if __name__ == "__main__":
    CliApp.run(CganCalibrator)
