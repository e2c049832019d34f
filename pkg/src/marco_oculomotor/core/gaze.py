#!/usr/bin/env python3
"""
Preprocesamiento de Mirada - Marco Oculomotor
=============================================

Convierte grabaciones crudas en scanpaths canónicos: promedio binocular,
conversión de píxeles a grados visuales, remuestreo a 60 Hz, relleno de
huecos y marcado de puntos fuera de pantalla. Incluye los aumentos
aleatorios usados durante el pre-entrenamiento.
"""

import math

import numpy as np

from marco_oculomotor.data.models import Discarded, RawRecording, Scanpath, ScreenGeometry
from marco_oculomotor.errors import GazeDataError
from marco_oculomotor.utils.batch_processor import BatchProcessor
from marco_oculomotor.utils.config import AugmentConfig
from marco_oculomotor.utils.logger import get_logger

logger = get_logger(__name__)

SAMPLE_RATE_HZ = 60
SAMPLE_PERIOD_MS = 1000.0 / SAMPLE_RATE_HZ
OFFSCREEN_MARGIN_DEG = 10.0
SENTINEL_DEG = -180.0
MAX_MISSING_FRACTION = 0.5


def ms_to_samples(ms: float) -> int:
    """Número de muestras a 60 Hz que cubren ``ms`` milisegundos."""
    return int(round(ms * SAMPLE_RATE_HZ / 1000.0))


def is_sentinel(points: np.ndarray) -> np.ndarray:
    """Máscara de puntos marcados como fuera de pantalla."""
    points = np.asarray(points)
    return (points[..., 0] == SENTINEL_DEG) & (points[..., 1] == SENTINEL_DEG)


def px_to_deg(p: tuple[float, float], g: ScreenGeometry) -> tuple[float, float]:
    """
    Convierte un punto en píxeles a grados visuales respecto al centro.

    Args:
        p: Punto (x_px, y_px)
        g: Geometría de la pantalla

    Returns:
        Punto (x_deg, y_deg)

    Raises:
        GazeDataError: Si el punto no es finito
    """
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise GazeDataError(f"Muestra corrupta: ({x}, {y})")
    mx, my = g.mm_per_px
    cx, cy = g.center_px
    d = g.viewing_distance_mm
    return (
        math.degrees(math.atan((x - cx) * mx / d)),
        math.degrees(math.atan((y - cy) * my / d)),
    )


def pixels_to_degrees(points_px: np.ndarray, g: ScreenGeometry) -> np.ndarray:
    """Versión vectorizada de ``px_to_deg``; los NaN se conservan como faltantes."""
    pts = np.asarray(points_px, dtype=np.float64).reshape(-1, 2)
    mm = np.array(g.mm_per_px)
    center = np.array(g.center_px)
    return np.degrees(np.arctan((pts - center) * mm / g.viewing_distance_mm))


def deg_to_px(p: tuple[float, float], g: ScreenGeometry) -> tuple[float, float]:
    """Inversa de ``px_to_deg``."""
    out = degrees_to_pixels(np.array([p], dtype=np.float64), g)[0]
    return float(out[0]), float(out[1])


def degrees_to_pixels(points_deg: np.ndarray, g: ScreenGeometry) -> np.ndarray:
    """Convierte grados visuales a píxeles de pantalla."""
    pts = np.asarray(points_deg, dtype=np.float64).reshape(-1, 2)
    mm = np.array(g.mm_per_px)
    center = np.array(g.center_px)
    return center + np.tan(np.radians(pts)) * g.viewing_distance_mm / mm


def merge_binocular(
    left: tuple[float, float] | None,
    right: tuple[float, float] | None,
) -> tuple[float, float] | None:
    """
    Promedia los ojos disponibles de una muestra.

    Returns:
        Media de los ojos presentes, el único ojo presente, o None
    """
    eyes = [e for e in (left, right) if e is not None and all(map(math.isfinite, e))]
    if not eyes:
        return None
    return (
        sum(e[0] for e in eyes) / len(eyes),
        sum(e[1] for e in eyes) / len(eyes),
    )


def merge_eyes(r: RawRecording) -> np.ndarray:
    """Aplica ``merge_binocular`` a toda la grabación; faltantes como NaN."""
    stacked = np.stack([r.left, r.right])
    present = np.all(np.isfinite(stacked), axis=2) & r.valid[None, :]
    count = present.sum(axis=0)
    total = np.where(present[..., None], stacked, 0.0).sum(axis=0)
    merged = np.full((r.n_samples, 2), np.nan)
    ok = count > 0
    merged[ok] = total[ok] / count[ok, None]
    return merged


def resample_60hz(ts: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """
    Remuestrea una señal a la rejilla de 60 Hz que empieza en ``ts[0]``.

    Interpolación lineal por eje. Los instantes de la rejilla que coinciden
    con una muestra reproducen su valor exacto; un NaN vecino produce NaN.

    Args:
        ts: Tiempos en milisegundos, estrictamente crecientes
        vs: Valores (n,) o (n, d)

    Returns:
        Valores sobre la rejilla ts0 + k/60 s, k = 0..K con tiempo <= ts[-1]
    """
    ts = np.asarray(ts, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    if ts.shape[0] < 2:
        raise GazeDataError("Se necesitan al menos 2 muestras para interpolar")
    if vs.shape[0] != ts.shape[0]:
        raise GazeDataError("Tiempos y valores con longitudes distintas")
    if not np.all(np.diff(ts) > 0):
        raise GazeDataError("Tiempos no estrictamente crecientes")

    n_grid = int(math.floor((ts[-1] - ts[0]) / SAMPLE_PERIOD_MS + 1e-9)) + 1
    grid = ts[0] + np.arange(n_grid) * SAMPLE_PERIOD_MS

    idx = np.clip(np.searchsorted(ts, grid, side="right") - 1, 0, ts.shape[0] - 2)
    w = np.clip((grid - ts[idx]) / (ts[idx + 1] - ts[idx]), 0.0, 1.0)

    lo = vs[idx]
    hi = vs[idx + 1]
    if vs.ndim > 1:
        w = w[:, None]
    out = lo * (1.0 - w) + hi * w
    # Coincidencias exactas sin contaminación del vecino
    out = np.where(w == 0.0, lo, out)
    out = np.where(w == 1.0, hi, out)
    return out


def fill_missing(vs: np.ndarray) -> tuple[np.ndarray, float]:
    """
    Rellena huecos por interpolación lineal entre vecinos válidos.

    Los huecos iniciales y finales mantienen el valor válido más cercano.

    Returns:
        (secuencia rellenada, fracción faltante antes del relleno)
    """
    values = np.asarray(vs, dtype=np.float64)
    flat = values.ndim == 1
    data = values.reshape(values.shape[0], -1).copy()
    n = data.shape[0]
    if n == 0:
        raise GazeDataError("Secuencia vacía")
    missing = ~np.all(np.isfinite(data), axis=1)
    if missing.all():
        raise GazeDataError("Todas las muestras faltan; no hay valores de anclaje")

    idx = np.arange(n)
    good = ~missing
    for col in range(data.shape[1]):
        data[missing, col] = np.interp(idx[missing], idx[good], data[good, col])

    fraction = float(missing.sum()) / n
    return (data[:, 0] if flat else data), fraction


def mark_offscreen(points: np.ndarray, halfextent_deg: tuple[float, float]) -> np.ndarray:
    """
    Marca con el centinela (-180, -180) los puntos a más de 10 grados
    fuera del borde de la pantalla. El borde exacto más 10 se conserva.
    """
    hx, hy = halfextent_deg
    if not (hx > 0 and hy > 0):
        raise GazeDataError(f"Media extensión inválida: {halfextent_deg}")
    out = np.array(points, dtype=np.float64, copy=True)
    far = (np.abs(out[:, 0]) > hx + OFFSCREEN_MARGIN_DEG) | (
        np.abs(out[:, 1]) > hy + OFFSCREEN_MARGIN_DEG
    )
    out[far] = SENTINEL_DEG
    return out


def preprocess(r: RawRecording) -> Scanpath | Discarded:
    """
    Canonicaliza una grabación cruda.

    Orden fijo: promedio binocular, grados visuales, remuestreo a 60 Hz,
    relleno de huecos y marcado fuera de pantalla. La fracción faltante se
    mide tras el promedio binocular y antes del remuestreo.
    """
    try:
        merged = merge_eyes(r)
        missing_fraction = float(np.mean(np.isnan(merged).any(axis=1))) if r.n_samples else 1.0
        if missing_fraction > MAX_MISSING_FRACTION:
            return Discarded(
                r.source_tag, r.participant_id, r.stimulus_id,
                reason="missing", missing_fraction=missing_fraction,
            )
        deg = pixels_to_degrees(merged, r.geometry)
        resampled = resample_60hz(r.t_ms, deg)
        filled, _ = fill_missing(resampled)
        halfextent = r.geometry.halfextent_deg()
        return Scanpath(
            points=mark_offscreen(filled, halfextent),
            source_tag=r.source_tag,
            participant_id=r.participant_id,
            stimulus_id=r.stimulus_id,
            halfextent_deg=halfextent,
        )
    except GazeDataError as e:
        return Discarded(r.source_tag, r.participant_id, r.stimulus_id, reason=str(e))


def preprocess_many(
    recordings: list[RawRecording], threads: int = 1
) -> tuple[list[Scanpath], list[Discarded]]:
    """
    Preprocesa un corpus completo en paralelo.

    Returns:
        (scanpaths en el orden de entrada, grabaciones descartadas)
    """
    processor: BatchProcessor[RawRecording, Scanpath | Discarded] = BatchProcessor(
        max_workers=threads
    )
    results = processor.process_items(
        recordings,
        preprocess,
        describe=lambda r: f"{r.source_tag}/{r.participant_id}/{r.stimulus_id}",
    )
    scanpaths: list[Scanpath] = []
    discarded: list[Discarded] = []
    for rec, result in zip(recordings, results, strict=True):
        if isinstance(result, Scanpath):
            scanpaths.append(result)
        else:
            if result is None:
                result = Discarded(rec.source_tag, rec.participant_id, rec.stimulus_id,
                                   reason="error interno")
            logger.warning(
                f"Descartada {result.source_tag}/{result.participant_id}/"
                f"{result.stimulus_id}: {result.reason}"
            )
            discarded.append(result)
    logger.info(f"Preprocesadas {len(scanpaths)} grabaciones, descartadas {len(discarded)}")
    return scanpaths, discarded


def affine_matrix(scale: float, rotation_rad: float, shear: float) -> np.ndarray:
    """
    Matriz escala · rotación (antihoraria) · cizalla, con cizalla x' = x + s·y.
    """
    c, s = math.cos(rotation_rad), math.sin(rotation_rad)
    rotation = np.array([[c, -s], [s, c]])
    shear_m = np.array([[1.0, shear], [0.0, 1.0]])
    return scale * rotation @ shear_m


def apply_affine(points: np.ndarray, matrix: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Aplica A·p + b a los puntos que no son centinela."""
    out = np.array(points, dtype=np.float64, copy=True)
    keep = ~is_sentinel(out)
    out[keep] = out[keep] @ np.asarray(matrix).T + np.asarray(offset)
    return out


def augment_points(
    points: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """
    Aumenta una secuencia de puntos: transformación afín aleatoria y
    después ruido gaussiano independiente por punto con probabilidad dada.
    """
    if cfg.is_identity:
        return np.array(points, dtype=np.float64, copy=True)
    scale = rng.uniform(*cfg.scale_range)
    theta = rng.uniform(*cfg.rotation_range_rad)
    shear = rng.uniform(*cfg.shear_range)
    offset = rng.uniform(cfg.offset_range_deg[0], cfg.offset_range_deg[1], size=2)
    out = apply_affine(points, affine_matrix(scale, theta, shear), offset)

    if cfg.point_noise_prob > 0 and cfg.point_noise_sd_deg > 0:
        hit = (rng.random(out.shape[0]) < cfg.point_noise_prob) & ~is_sentinel(out)
        out[hit] += rng.normal(0.0, cfg.point_noise_sd_deg, size=(int(hit.sum()), 2))
    return out


def augment(sp: Scanpath, cfg: AugmentConfig, rng: np.random.Generator) -> Scanpath:
    """Versión de ``augment_points`` sobre un scanpath completo."""
    return sp.with_points(augment_points(sp.points, cfg, rng))
