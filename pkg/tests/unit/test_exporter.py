#!/usr/bin/env python3
"""
Tests para la escritura de artefactos.
"""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from marco_oculomotor.data.models import (
    Discarded,
    EpochLog,
    EvalReport,
    ExpertFeatures,
    FoldResult,
    PretaskMetrics,
)
from marco_oculomotor.utils.exporter import (
    Exporter,
    atomic_path,
    header_lines,
    staged_directory,
    write_text_atomic,
)


def _read(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def test_header_lines():
    assert header_lines(3, "abc") == ["# seed = 3", "# config_hash = abc"]
    assert header_lines(None, None) == []


def test_atomic_write_keeps_old_file_on_failure(tmp_path: Path):
    target = tmp_path / "out.txt"
    write_text_atomic(target, "antiguo")
    with pytest.raises(RuntimeError):
        with atomic_path(target) as tmp:
            tmp.write_text("a medias", encoding="utf-8")
            raise RuntimeError("fallo")
    assert target.read_text(encoding="utf-8") == "antiguo"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


def test_staged_directory_publishes_on_success(tmp_path: Path):
    target = tmp_path / "corpus"
    target.mkdir()
    (target / "keep.txt").write_text("x", encoding="utf-8")
    with staged_directory(target) as staging:
        (staging / "new.txt").write_text("y", encoding="utf-8")
        assert not (target / "new.txt").exists()
    assert sorted(p.name for p in target.iterdir()) == ["keep.txt", "new.txt"]
    assert [p.name for p in tmp_path.iterdir()] == ["corpus"]


def test_staged_directory_discards_on_failure(tmp_path: Path):
    target = tmp_path / "corpus"
    with pytest.raises(ValueError):
        with staged_directory(target) as staging:
            (staging / "new.txt").write_text("y", encoding="utf-8")
            raise ValueError("fallo")
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []


def test_training_log_has_header_and_blank_disabled_tasks(tmp_path: Path):
    """Las tareas desactivadas quedan como celdas vacías."""
    logs = [
        EpochLog(1, 0.001, {"rc": 0.5, "fi": 0.6}, PretaskMetrics(rc_dist_deg=1.5)),
        EpochLog(2, 0.001, {"rc": 0.4, "fi": 0.5}),
    ]
    path = Exporter(seed=7, config_hash="cafe").export_training_log(logs, tmp_path / "log.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[:2] == ["# seed = 7", "# config_hash = cafe"]
    assert lines[2] == ",".join(EpochLog.COLUMNS)
    frame = _read(path)
    assert frame["epoch"].tolist() == [1, 2]
    assert frame["loss_pc"].isna().all()
    assert frame["val_rc_dist"].tolist()[0] == 1.5


def test_eval_report_rows(tmp_path: Path):
    report = EvalReport(
        name="obf", accuracy=0.75, auc=0.8, f1=0.7, seed=0,
        folds=[FoldResult(0, 6, 2, 1.0, None, 1.0, 0.1), FoldResult(1, 6, 2, 0.5, 0.5, 0.4, 1.0)],
    )
    frame = _read(Exporter().export_eval_report(report, tmp_path / "eval.csv"))
    assert frame["fold"].astype(str).tolist() == ["0", "1", "all"]
    assert frame["n_test"].tolist() == [2, 2, 4]
    assert np.isnan(frame["auc"][0])
    assert frame["accuracy"].tolist()[-1] == 0.75


def test_discards_and_labels(tmp_path: Path):
    exporter = Exporter()
    discards = [Discarded("lab", "p1", "s1", "missing", 0.6)]
    frame = _read(exporter.export_discards(discards, tmp_path / "discarded.csv"))
    assert frame.iloc[0].tolist() == ["lab", "p1", "s1", "missing", 0.6]
    labels = _read(exporter.export_labels(np.array([1, 0, 1]), tmp_path / "labels.csv"))
    assert labels["label"].tolist() == [1, 0, 1]


def test_difference_vectors(tmp_path: Path):
    vectors = np.arange(6, dtype=float).reshape(2, 3)
    path = Exporter().export_difference_vectors(vectors, np.array([1, 0]), ["a|b", "a|c"], tmp_path / "d.csv")
    frame = _read(path)
    assert list(frame.columns) == ["same", "pair", "d0", "d1", "d2"]
    assert frame["same"].tolist() == [1, 0]


def test_summaries(tmp_path: Path):
    features = ExpertFeatures(2, 1.5, 300.0, 600.0, 3.0)
    text = Exporter(seed=1).export_expert_summary(features, tmp_path / "f.txt").read_text(encoding="utf-8")
    lines = text.splitlines()
    assert lines[0] == "Características expertas"
    assert set(lines[1]) == {"="}
    assert "# seed = 1" in lines
    assert any(line.startswith("n_fixations") and line.endswith(": 2") for line in lines)
