#!/usr/bin/env python3
"""
Análisis de Fijaciones - Marco Oculomotor
=========================================

Identificación de fijaciones por umbral de velocidad (I-VT), máscara de
balanceo de clases para la tarea FI y características expertas de
scanpath usadas como línea base en la clasificación de participantes.
"""

import math

import numpy as np

from marco_oculomotor.data.models import ExpertFeatures, Scanpath
from marco_oculomotor.errors import GazeDataError

from .gaze import SAMPLE_RATE_HZ, is_sentinel

DEFAULT_VT_DEGPS = 100.0
DEFAULT_MIN_FIX_MS = 200.0


def _as_points(sp: Scanpath | np.ndarray) -> np.ndarray:
    return sp.points if isinstance(sp, Scanpath) else np.asarray(sp, dtype=np.float64)


def min_fixation_samples(min_fix_ms: float) -> int:
    """Longitud mínima de una fijación en muestras a 60 Hz (12 para 200 ms)."""
    return max(1, math.ceil(min_fix_ms * SAMPLE_RATE_HZ / 1000.0 - 1e-9))


def velocity(sp: Scanpath | np.ndarray) -> np.ndarray:
    """
    Velocidad por muestra en grados por segundo.

    v[i] = 60·‖p[i] − p[i−1]‖ para i ≥ 1 y v[0] = v[1]. Las diferencias
    que tocan un centinela valen infinito.
    """
    points = _as_points(sp)
    if points.shape[0] < 2:
        raise GazeDataError("Se necesitan al menos 2 puntos para la velocidad")
    step = SAMPLE_RATE_HZ * np.linalg.norm(np.diff(points, axis=0), axis=1)
    sentinel = is_sentinel(points)
    step[sentinel[1:] | sentinel[:-1]] = np.inf
    return np.concatenate([step[:1], step])


def find_runs(flags: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Rachas maximales de valores verdaderos.

    Returns:
        (inicios, finales exclusivos)
    """
    padded = np.concatenate([[0], np.asarray(flags, dtype=np.int8), [0]])
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def ivt_labels(
    sp: Scanpath | np.ndarray,
    v_thresh: float = DEFAULT_VT_DEGPS,
    min_fix_ms: float = DEFAULT_MIN_FIX_MS,
) -> np.ndarray:
    """
    Etiquetas I-VT: 1 = fijación, 0 = sácada.

    Una muestra es fijación provisional si su velocidad es estrictamente
    menor que el umbral; las rachas de fijación más cortas que
    ``min_fix_ms`` pasan a sácada. Los centinelas siempre son sácada.
    """
    points = _as_points(sp)
    provisional = velocity(points) < v_thresh
    provisional &= ~is_sentinel(points)

    labels = provisional.astype(np.int8)
    min_len = min_fixation_samples(min_fix_ms)
    starts, ends = find_runs(provisional)
    for start, end in zip(starts, ends, strict=True):
        if end - start < min_len:
            labels[start:end] = 0
    return labels


def balanced_mask(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Máscara que selecciona tantas fijaciones como sácadas.

    Se eligen c = min(#fijaciones, #sácadas) muestras de cada clase de
    forma uniforme sin reemplazo; con c = 0 la máscara es nula.
    """
    labels = np.asarray(labels)
    if not np.all((labels == 0) | (labels == 1)):
        raise GazeDataError("Las etiquetas deben ser binarias")
    fix_idx = np.flatnonzero(labels == 1)
    sac_idx = np.flatnonzero(labels == 0)
    c = min(fix_idx.size, sac_idx.size)
    mask = np.zeros(labels.shape[0], dtype=np.int8)
    if c > 0:
        mask[rng.choice(fix_idx, size=c, replace=False)] = 1
        mask[rng.choice(sac_idx, size=c, replace=False)] = 1
    return mask


def expert_features(sp: Scanpath | np.ndarray, labels: np.ndarray) -> ExpertFeatures:
    """
    Características expertas de un scanpath a partir de sus etiquetas I-VT.

    Las muestras con velocidad no finita (junto a centinelas) no cuentan en
    las estadísticas de velocidad; las clases vacías dan 0.
    """
    points = _as_points(sp)
    labels = np.asarray(labels)
    v = velocity(points)
    finite = np.isfinite(v) & ~is_sentinel(points)
    fix = labels == 1
    sac = ~fix

    starts, _ = find_runs(fix)
    sac_speeds = v[sac & finite]
    fix_speeds = v[fix & finite]
    return ExpertFeatures(
        n_fixations=int(starts.size),
        total_fixation_duration_s=float(fix.sum()) / SAMPLE_RATE_HZ,
        mean_saccade_speed_degps=float(sac_speeds.mean()) if sac_speeds.size else 0.0,
        max_saccade_speed_degps=float(sac_speeds.max()) if sac_speeds.size else 0.0,
        mean_fixation_speed_degps=float(fix_speeds.mean()) if fix_speeds.size else 0.0,
    )
