import json
import logging
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import pandas as pd

from .base import METRICS, ReplicationResult
from .stats import paired_t_test

logger = logging.getLogger(__name__)

REPORT_FILE = "report.csv"
FAILURES_FILE = "failures.csv"
SUMMARY_FILE = "summary.json"
BOXPLOT_FILE = "boxplot_long.csv"

ARMS = ("base", "augmented")
KEY_COLUMNS = ["dispersion", "synthetic_size", "replication", "arm"]
ROW_COLUMNS = KEY_COLUMNS + ["alpha_hat", *METRICS]
FAILURE_COLUMNS = ["dispersion", "replication", "error"]
FLOAT_FORMAT = "%.17g"

METRIC_LABELS = {
    "fi": "FI",
    "pmd": "PMD",
    "mape_eb": "MAPE(EB)",
    "mape_crash": "MAPE(crashes)",
    "mape_dispersion": "MAPE(alpha)",
}


def improvement(base_mean: float, augmented_mean: float) -> Optional[float]:
    """(Base - Augmented) / Base * 100; для нулевого Base определено только при нулевом Augmented"""
    if base_mean == 0:
        return 0.0 if augmented_mean == 0 else None
    return 100.0 * (base_mean - augmented_mean) / base_mean


def _write_frame(frame: pd.DataFrame, path: Path, append: bool) -> None:
    frame.to_csv(
        path,
        mode="a" if append else "w",
        header=not append,
        index=False,
        float_format=FLOAT_FORMAT,
        lineterminator="\n",
    )


def _read_complete_lines(path: Path) -> pd.DataFrame:
    """Читает CSV, отбрасывая недописанную последнюю строку"""
    text = path.read_text(encoding="utf-8")
    if text and not text.endswith("\n"):
        text = text[: text.rfind("\n") + 1]
    if not text.strip():
        return pd.DataFrame()
    return pd.read_csv(StringIO(text), float_precision="round_trip")


class ReportWriter:
    """Дописывает report.csv по мере завершения репликаций, умеет продолжать прерванный запуск"""

    def __init__(self, run_dir: Path, rows_per_replication: int):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.report_path = self.run_dir / REPORT_FILE
        self.failures_path = self.run_dir / FAILURES_FILE
        self.rows_per_replication = rows_per_replication

    def completed(self) -> Set[Tuple[float, int]]:
        """(dispersion, replication) уже записанных репликаций; неполные группы удаляются"""
        done: Set[Tuple[float, int]] = set()
        if self.report_path.exists():
            frame = _read_complete_lines(self.report_path)
            if not frame.empty:
                complete = frame.dropna().groupby(["dispersion", "replication"]).filter(
                    lambda g: len(g) == self.rows_per_replication
                )
                dropped = len(frame) - len(complete)
                if dropped:
                    logger.warning(f"Discarding {dropped} rows of unfinished replications in {self.report_path}")
                _write_frame(complete[ROW_COLUMNS], self.report_path, append=False)
                done |= {(float(d), int(r)) for d, r in zip(complete["dispersion"], complete["replication"])}
        if self.failures_path.exists():
            failures = _read_complete_lines(self.failures_path)
            if not failures.empty:
                _write_frame(failures[FAILURE_COLUMNS], self.failures_path, append=False)
                done |= {(float(d), int(r)) for d, r in zip(failures["dispersion"], failures["replication"])}
        return done

    def append(self, result: ReplicationResult) -> None:
        if result.failed:
            frame = pd.DataFrame([[result.dispersion, result.replication, result.error]], columns=FAILURE_COLUMNS)
            _write_frame(frame, self.failures_path, append=self.failures_path.exists())
            return
        frame = pd.DataFrame(result.rows, columns=ROW_COLUMNS)
        _write_frame(frame, self.report_path, append=self.report_path.exists())


@dataclass
class ExperimentReport:
    rows: pd.DataFrame
    failures: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=FAILURE_COLUMNS))
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_results(cls, results: Iterable[ReplicationResult],
                     metadata: Optional[Dict[str, Any]] = None) -> "ExperimentReport":
        rows: List[Dict[str, Any]] = []
        failures: List[List[Any]] = []
        for result in results:
            if result.failed:
                failures.append([result.dispersion, result.replication, result.error])
            else:
                rows.extend(result.rows)
        return cls(
            rows=pd.DataFrame(rows, columns=ROW_COLUMNS),
            failures=pd.DataFrame(failures, columns=FAILURE_COLUMNS),
            metadata=dict(metadata or {}),
        )

    @classmethod
    def load(cls, run_dir: Path, metadata: Optional[Dict[str, Any]] = None) -> "ExperimentReport":
        run_dir = Path(run_dir)
        report_path = run_dir / REPORT_FILE
        if not report_path.exists():
            raise FileNotFoundError(f"{report_path} not found")
        rows = _read_complete_lines(report_path)
        failures_path = run_dir / FAILURES_FILE
        failures = (
            _read_complete_lines(failures_path) if failures_path.exists()
            else pd.DataFrame(columns=FAILURE_COLUMNS)
        )
        return cls(rows=rows.reindex(columns=ROW_COLUMNS), failures=failures, metadata=dict(metadata or {}))

    def cells(self) -> List[Tuple[float, int]]:
        keys = self.rows[["dispersion", "synthetic_size"]].drop_duplicates()
        return sorted((float(d), int(s)) for d, s in keys.itertuples(index=False))

    def _arm_values(self, dispersion: float, size: int, arm: str) -> pd.DataFrame:
        selected = self.rows[
            (self.rows["dispersion"] == dispersion)
            & (self.rows["synthetic_size"] == size)
            & (self.rows["arm"] == arm)
        ]
        return selected.sort_values("replication").set_index("replication")

    def _failed_count(self, dispersion: float) -> int:
        if self.failures.empty:
            return 0
        return int((self.failures["dispersion"] == dispersion).sum())

    def cell_summary(self, dispersion: float, size: int) -> Dict[str, Any]:
        base = self._arm_values(dispersion, size, "base")
        augmented = self._arm_values(dispersion, size, "augmented")
        paired = base.join(augmented, lsuffix="_base", rsuffix="_augmented", how="inner")
        metrics = {}
        for metric in METRICS:
            base_mean = float(paired[f"{metric}_base"].mean())
            augmented_mean = float(paired[f"{metric}_augmented"].mean())
            test = paired_t_test(paired[f"{metric}_base"], paired[f"{metric}_augmented"])
            metrics[metric] = {
                "base_mean": base_mean,
                "augmented_mean": augmented_mean,
                "improvement": improvement(base_mean, augmented_mean),
                "t_statistic": test.statistic,
                "p_value": test.p_value,
            }
        return {
            "dispersion": dispersion,
            "synthetic_size": size,
            "replications": int(len(paired)),
            "failed": self._failed_count(dispersion),
            "metrics": metrics,
        }

    def size_comparisons(self) -> List[Dict[str, Any]]:
        """Парный t-тест Augmented между соседними размерами синтетической выборки"""
        comparisons = []
        for dispersion in sorted({d for d, _ in self.cells()}):
            sizes = sorted(s for d, s in self.cells() if d == dispersion)
            for smaller, larger in zip(sizes, sizes[1:]):
                left = self._arm_values(dispersion, smaller, "augmented")
                right = self._arm_values(dispersion, larger, "augmented")
                paired = left.join(right, lsuffix="_small", rsuffix="_large", how="inner")
                for metric in METRICS:
                    test = paired_t_test(paired[f"{metric}_small"], paired[f"{metric}_large"])
                    comparisons.append({
                        "dispersion": dispersion,
                        "metric": metric,
                        "smaller": smaller,
                        "larger": larger,
                        "t_statistic": test.statistic,
                        "p_value": test.p_value,
                    })
        return comparisons

    def summary(self) -> Dict[str, Any]:
        return {
            "metadata": self.metadata,
            "cells": [self.cell_summary(d, s) for d, s in self.cells()],
            "size_comparisons": self.size_comparisons(),
        }

    def boxplot_frame(self) -> pd.DataFrame:
        """Длинная таблица для боксплотов: одна строка на (ячейку, репликацию, ветвь, меру)"""
        long = self.rows.melt(
            id_vars=KEY_COLUMNS, value_vars=list(METRICS), var_name="metric", value_name="value"
        )
        return long.sort_values(["dispersion", "synthetic_size", "metric", "arm", "replication"],
                                kind="mergesort").reset_index(drop=True)

    def write(self, out_dir: Path) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary_path = out_dir / SUMMARY_FILE
        summary_path.write_text(json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8")
        boxplot_path = out_dir / BOXPLOT_FILE
        _write_frame(self.boxplot_frame(), boxplot_path, append=False)
        logger.info(f"Report written to {summary_path} and {boxplot_path}")
        return {"summary": summary_path, "boxplot": boxplot_path}

    def format_table(self) -> str:
        """Текстовая таблица: строки - размер синтетики, столбцы - улучшение по мерам"""
        lines = []
        for dispersion in sorted({d for d, _ in self.cells()}):
            lines.append(f"alpha = {dispersion:g} (failed replications: {self._failed_count(dispersion)})")
            header = f"{'synthetic':>10} " + " ".join(f"{METRIC_LABELS[m]:>22}" for m in METRICS)
            lines.append(header)
            for d, size in self.cells():
                if d != dispersion:
                    continue
                cell = self.cell_summary(d, size)
                values = []
                for metric in METRICS:
                    entry = cell["metrics"][metric]
                    gain = entry["improvement"]
                    p = entry["p_value"]
                    text = "n/a" if gain is None else f"{gain:+.2f}%"
                    text += f" (p={p:.3f})" if p is not None else " (p=n/a)"
                    values.append(f"{text:>22}")
                lines.append(f"{size:>10} " + " ".join(values))
            lines.append("")
        return "\n".join(lines)
