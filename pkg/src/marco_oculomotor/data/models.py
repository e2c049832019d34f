#!/usr/bin/env python3
"""
Modelos de Datos - Marco Oculomotor
===================================

Define las estructuras de datos del dominio: geometría de pantalla,
grabaciones crudas, scanpaths canónicos, pares de segmentos para las
tareas de pre-entrenamiento, métricas, informes de evaluación y el
almacén de embeddings.
"""

import math
from dataclasses import dataclass, field, replace
from typing import ClassVar

import numpy as np

from marco_oculomotor.errors import GazeDataError, UsageError


@dataclass(frozen=True)
class ScreenGeometry:
    """Geometría física del monitor y distancia de visión."""
    width_px: int
    height_px: int
    width_mm: float
    height_mm: float
    viewing_distance_mm: float

    def __post_init__(self) -> None:
        for name in ("width_px", "height_px", "width_mm", "height_mm",
                     "viewing_distance_mm"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise GazeDataError(f"Geometría inválida: {name} = {value}")

    @property
    def mm_per_px(self) -> tuple[float, float]:
        """Milímetros por píxel en cada eje."""
        return self.width_mm / self.width_px, self.height_mm / self.height_px

    @property
    def center_px(self) -> tuple[float, float]:
        """Centro de la pantalla en píxeles."""
        return self.width_px / 2.0, self.height_px / 2.0

    def halfextent_deg(self) -> tuple[float, float]:
        """Media extensión de la pantalla en grados visuales."""
        d = self.viewing_distance_mm
        return (
            math.degrees(math.atan(self.width_mm / 2.0 / d)),
            math.degrees(math.atan(self.height_mm / 2.0 / d)),
        )


@dataclass
class RawRecording:
    """
    Grabación cruda de mirada en píxeles, posiblemente binocular.

    Los ojos ausentes se representan con NaN en ``left``/``right``.
    """
    t_ms: np.ndarray
    left: np.ndarray
    right: np.ndarray
    valid: np.ndarray
    geometry: ScreenGeometry
    source_tag: str
    participant_id: str
    stimulus_id: str
    native_hz: float

    def __post_init__(self) -> None:
        self.t_ms = np.asarray(self.t_ms, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.float64).reshape(-1, 2)
        self.right = np.asarray(self.right, dtype=np.float64).reshape(-1, 2)
        self.valid = np.asarray(self.valid, dtype=bool)
        n = self.t_ms.shape[0]
        if self.left.shape[0] != n or self.right.shape[0] != n or self.valid.shape[0] != n:
            raise GazeDataError("Longitudes inconsistentes en la grabación")
        if n > 1 and not np.all(np.diff(self.t_ms) > 0):
            raise GazeDataError("Las marcas de tiempo no son estrictamente crecientes")
        present = ~np.isnan(self.left).any(axis=1) | ~np.isnan(self.right).any(axis=1)
        if np.any(self.valid & ~present):
            raise GazeDataError("Muestra válida sin ningún ojo presente")

    @property
    def n_samples(self) -> int:
        return int(self.t_ms.shape[0])


@dataclass
class Scanpath:
    """Secuencia canónica a 60 Hz en grados visuales, origen en el centro."""
    points: np.ndarray
    source_tag: str = ""
    participant_id: str = ""
    stimulus_id: str = ""
    halfextent_deg: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise GazeDataError(f"Forma de scanpath inválida: {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise GazeDataError("El scanpath contiene valores no finitos")

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def key(self) -> tuple[str, str, str]:
        """Identidad del scanpath (fuente, participante, estímulo)."""
        return self.source_tag, self.participant_id, self.stimulus_id

    def with_points(self, points: np.ndarray) -> "Scanpath":
        """Copia con otros puntos y la misma identidad."""
        return replace(self, points=points)


@dataclass(frozen=True)
class Discarded:
    """Grabación descartada durante el preprocesamiento."""
    source_tag: str
    participant_id: str
    stimulus_id: str
    reason: str
    missing_fraction: float | None = None


@dataclass(frozen=True)
class ExpertFeatures:
    """Características clásicas de scanpath usadas como línea base."""
    n_fixations: int
    total_fixation_duration_s: float
    mean_saccade_speed_degps: float
    max_saccade_speed_degps: float
    mean_fixation_speed_degps: float

    FIELDS: ClassVar[tuple[str, ...]] = (
        "n_fixations",
        "total_fixation_duration_s",
        "mean_saccade_speed_degps",
        "max_saccade_speed_degps",
        "mean_fixation_speed_degps",
    )

    def as_array(self) -> np.ndarray:
        return np.array([float(getattr(self, f)) for f in self.FIELDS])


@dataclass
class SegmentPair:
    """Segmento de entrada, su continuación inmediata y las etiquetas FI."""
    x: np.ndarray
    x_next: np.ndarray
    fi: np.ndarray
    mask: np.ndarray
    source_tag: str = ""
    start: int = 0


@dataclass
class ClPair:
    """Par de segmentos para la tarea contrastiva; ``same`` = 1 si comparten scanpath."""
    x1: np.ndarray
    x2: np.ndarray
    same: int


@dataclass
class PretaskMetrics:
    """Métricas de validación de las tareas de pre-entrenamiento."""
    rc_dist_deg: float | None = None
    pc_dist_deg: float | None = None
    fi_auc: float | None = None
    cl_acc: float | None = None


@dataclass
class EpochLog:
    """Registro de una época de entrenamiento."""
    COLUMNS: ClassVar[tuple[str, ...]] = (
        "epoch", "lr", "loss_rc", "loss_pc", "loss_fi", "loss_cl",
        "val_rc_dist", "val_pc_dist", "val_fi_auc", "val_cl_acc",
    )

    epoch: int
    lr: float
    losses: dict[str, float | None]
    val: PretaskMetrics = field(default_factory=PretaskMetrics)

    def as_row(self) -> dict[str, float | int | None]:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "loss_rc": self.losses.get("rc"),
            "loss_pc": self.losses.get("pc"),
            "loss_fi": self.losses.get("fi"),
            "loss_cl": self.losses.get("cl"),
            "val_rc_dist": self.val.rc_dist_deg,
            "val_pc_dist": self.val.pc_dist_deg,
            "val_fi_auc": self.val.fi_auc,
            "val_cl_acc": self.val.cl_acc,
        }


@dataclass
class ParticipantRecord:
    """Participante con su etiqueta y un scanpath por estímulo."""
    participant_id: str
    label: int
    scanpaths: dict[str, Scanpath] = field(default_factory=dict)


@dataclass
class FoldResult:
    """Resultado de un pliegue de validación cruzada."""
    fold: int
    n_train: int
    n_test: int
    accuracy: float
    auc: float | None
    f1: float
    best_c: float | None = None


@dataclass
class EvalReport:
    """Informe de clasificación de participantes."""
    name: str
    accuracy: float
    auc: float | None
    f1: float
    seed: int
    folds: list[FoldResult] = field(default_factory=list)


@dataclass
class StimulusTaskSpec:
    """Especificación de una tarea de predicción de estímulo c-way k-shot."""
    c_ways: int
    k_shots: int
    mode: str = "supervised"
    episodes: int = 500
    queries: int = 5

    def __post_init__(self) -> None:
        if self.c_ways <= 0 or self.k_shots <= 0:
            raise UsageError("c_ways y k_shots deben ser positivos")
        if self.mode not in ("supervised", "metric"):
            raise UsageError(f"Modo desconocido: {self.mode}")
        if self.episodes <= 0 or self.queries <= 0:
            raise UsageError("episodes y queries deben ser positivos")


@dataclass
class StimulusReport:
    """Informe de la tarea de predicción de estímulo."""
    mode: str
    c_ways: int
    k_shots: int
    accuracy: float
    seed: int
    episodes: int = 0
    n_support: int = 0
    n_query: int = 0


@dataclass(frozen=True)
class RosterEntry:
    """Archivo del roster de un dataset."""
    file: str
    participant_id: str
    stimulus_id: str


@dataclass
class DatasetManifest:
    """Manifiesto de un directorio de dataset."""
    source_tag: str
    geometry: ScreenGeometry
    native_hz: float
    roster: list[RosterEntry] = field(default_factory=list)
    labels: dict[str, int] = field(default_factory=dict)
    kind: str = "raw"


@dataclass(frozen=True)
class RowError:
    """Fila rechazada durante la carga."""
    file: str
    line: int
    message: str


@dataclass
class LoadReport:
    """Resumen de la carga de un corpus."""
    total_rows: int = 0
    parsed_rows: int = 0
    rejected_rows: int = 0
    row_errors: list[RowError] = field(default_factory=list)
    skipped_files: list[str] = field(default_factory=list)


@dataclass
class EmbeddingRecord:
    """Embedding de un scanpath identificado por participante y estímulo."""
    participant_id: str
    stimulus_id: str
    vector: np.ndarray


@dataclass
class EmbeddingStore:
    """Colección de embeddings que comparten dimensión y modelo de origen."""
    dim: int
    model_checksum: str = ""
    records: list[EmbeddingRecord] = field(default_factory=list)

    def append(self, participant_id: str, stimulus_id: str, vector: np.ndarray) -> None:
        """
        Añade un embedding al almacén.

        Raises:
            GazeDataError: Si la dimensión no coincide con la cabecera
        """
        values = np.asarray(vector, dtype=np.float32).reshape(-1)
        if values.shape[0] != self.dim:
            raise GazeDataError(
                f"Dimensión {values.shape[0]} incompatible con el almacén ({self.dim})"
            )
        self.records.append(EmbeddingRecord(participant_id, stimulus_id, values))

    def __len__(self) -> int:
        return len(self.records)

    def matrix(self) -> np.ndarray:
        """Matriz (n, dim) con todos los vectores."""
        if not self.records:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([r.vector for r in self.records])

    def lookup(self) -> dict[tuple[str, str], np.ndarray]:
        return {(r.participant_id, r.stimulus_id): r.vector for r in self.records}
