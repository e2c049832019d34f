#!/usr/bin/env python3
"""
Exportador - Marco Oculomotor
=============================

Escritura de artefactos: registros de entrenamiento, informes de
evaluación, etiquetas I-VT, datos para gráficas y resúmenes de texto.
Todos los archivos se escriben primero en un temporal y se renombran al
terminar, de modo que un fallo nunca deja artefactos a medias.
"""

import io
import os
import shutil
import tempfile
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from marco_oculomotor.data.models import (
    Discarded,
    EpochLog,
    EvalReport,
    ExpertFeatures,
    StimulusReport,
)

from .logger import get_logger

logger = get_logger(__name__)


@contextmanager
def atomic_path(path: str | Path) -> Iterator[Path]:
    """
    Ruta temporal en el mismo directorio que se renombra a ``path`` al salir.

    Si el bloque falla, el temporal se elimina y ``path`` queda intacto.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, target)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_text_atomic(path: str | Path, text: str) -> Path:
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")
    return Path(path)


def write_bytes_atomic(path: str | Path, data: bytes) -> Path:
    with atomic_path(path) as tmp:
        tmp.write_bytes(data)
    return Path(path)


@contextmanager
def staged_directory(path: str | Path) -> Iterator[Path]:
    """
    Directorio de preparación que se publica en ``path`` al terminar.

    Cada entrada preparada reemplaza a la homónima del destino; el resto
    del destino no se toca. Si el bloque falla no se publica nada.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield staging
        target.mkdir(parents=True, exist_ok=True)
        for child in sorted(staging.iterdir()):
            dest = target / child.name
            if dest.is_dir() and not dest.is_symlink():
                shutil.rmtree(dest)
            os.replace(child, dest)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def header_lines(seed: int | None, config_hash: str | None) -> list[str]:
    """Comentarios de cabecera con la semilla y la huella de la configuración."""
    lines = []
    if seed is not None:
        lines.append(f"# seed = {seed}")
    if config_hash:
        lines.append(f"# config_hash = {config_hash}")
    return lines


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, float | np.floating):
        return repr(float(value))
    return str(value)


class Exporter:
    """
    Exportador de artefactos CSV y de texto.

    Cada CSV lleva como comentarios iniciales la semilla y la huella de
    configuración con la que se produjo.
    """

    def __init__(self, seed: int | None = None, config_hash: str | None = None):
        self.seed = seed
        self.config_hash = config_hash

    def _write_frame(self, frame: pd.DataFrame, path: str | Path) -> Path:
        buffer = io.StringIO()
        for line in header_lines(self.seed, self.config_hash):
            buffer.write(line + "\n")
        frame.to_csv(buffer, index=False, lineterminator="\n")
        written = write_text_atomic(path, buffer.getvalue())
        logger.info(f"Escrito {written}")
        return written

    def export_training_log(self, logs: Sequence[EpochLog], path: str | Path) -> Path:
        """Registro por época: tasa de aprendizaje, pérdidas y métricas de validación."""
        rows = [{key: _fmt(value) for key, value in log.as_row().items()} for log in logs]
        return self._write_frame(pd.DataFrame(rows, columns=list(EpochLog.COLUMNS)), path)

    def export_eval_report(self, report: EvalReport, path: str | Path) -> Path:
        """Informe de clasificación: una fila por fold y una fila global."""
        rows = [
            [report.name, str(f.fold), str(f.n_train), str(f.n_test), _fmt(f.accuracy),
             _fmt(f.auc), _fmt(f.f1), _fmt(f.best_c)]
            for f in report.folds
        ]
        n_total = sum(f.n_test for f in report.folds)
        rows.append([report.name, "all", "", str(n_total), _fmt(report.accuracy),
                     _fmt(report.auc), _fmt(report.f1), ""])
        columns = ["name", "fold", "n_train", "n_test", "accuracy", "auc", "f1", "best_c"]
        return self._write_frame(pd.DataFrame(rows, columns=columns), path)

    def export_stimulus_report(self, report: StimulusReport, path: str | Path) -> Path:
        """Informe de la tarea de predicción de estímulo."""
        columns = ["mode", "c_ways", "k_shots", "accuracy", "seed", "episodes", "n_support", "n_query"]
        row = [report.mode, report.c_ways, report.k_shots, _fmt(report.accuracy), report.seed,
               report.episodes, report.n_support, report.n_query]
        return self._write_frame(pd.DataFrame([row], columns=columns), path)

    def export_labels(self, labels: np.ndarray, path: str | Path) -> Path:
        """Etiquetas por muestra (1 = fijación, 0 = sácada)."""
        frame = pd.DataFrame({"label": np.asarray(labels, dtype=np.int64)})
        return self._write_frame(frame, path)

    def export_discards(self, discarded: Sequence[Discarded], path: str | Path) -> Path:
        """Grabaciones descartadas con su motivo."""
        rows = [
            [d.source_tag, d.participant_id, d.stimulus_id, d.reason, _fmt(d.missing_fraction)]
            for d in discarded
        ]
        columns = ["source_tag", "participant_id", "stimulus_id", "reason", "missing_fraction"]
        return self._write_frame(pd.DataFrame(rows, columns=columns), path)

    def export_loss_curves(self, frame: pd.DataFrame, path: str | Path) -> Path:
        """Curvas de pérdida por época, listas para graficar."""
        return self._write_frame(frame, path)

    def export_difference_vectors(
        self, vectors: np.ndarray, same: np.ndarray, pairs: Sequence[str], path: str | Path
    ) -> Path:
        """Vectores |E(x1) − E(x2)| etiquetados por mismo/distinto scanpath."""
        vectors = np.asarray(vectors, dtype=np.float64).reshape(len(same), -1)
        frame = pd.DataFrame(vectors, columns=[f"d{i}" for i in range(vectors.shape[1])])
        frame.insert(0, "pair", list(pairs))
        frame.insert(0, "same", np.asarray(same, dtype=np.int64))
        return self._write_frame(frame, path)

    def export_summary(self, title: str, items: Sequence[tuple[str, object]], path: str | Path) -> Path:
        """Resumen legible en texto plano."""
        lines = [title, "=" * len(title)]
        lines += header_lines(self.seed, self.config_hash)
        width = max((len(k) for k, _ in items), default=0)
        lines += [f"{key.ljust(width)} : {value}" for key, value in items]
        written = write_text_atomic(path, "\n".join(lines) + "\n")
        logger.info(f"Escrito {written}")
        return written

    def export_expert_summary(self, features: ExpertFeatures, path: str | Path) -> Path:
        """Resumen de características expertas de un scanpath."""
        items = [(name, _fmt(getattr(features, name))) for name in ExpertFeatures.FIELDS]
        return self.export_summary("Características expertas", items, path)
