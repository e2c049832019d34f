#!/usr/bin/env python3
"""
Tests para el preprocesamiento de mirada.
"""

import math

import numpy as np
import pytest

from marco_oculomotor.core.gaze import (
    SAMPLE_PERIOD_MS,
    SENTINEL_DEG,
    affine_matrix,
    augment,
    augment_points,
    deg_to_px,
    fill_missing,
    mark_offscreen,
    merge_binocular,
    preprocess,
    preprocess_many,
    px_to_deg,
    resample_60hz,
)
from marco_oculomotor.data.models import Discarded, RawRecording, Scanpath, ScreenGeometry
from marco_oculomotor.errors import GazeDataError
from marco_oculomotor.utils.config import AugmentConfig

from ..helpers import make_scanpath


def _recording(
    geometry: ScreenGeometry, t_ms: np.ndarray, px: np.ndarray, valid: np.ndarray | None = None
) -> RawRecording:
    px = np.asarray(px, dtype=np.float64)
    if valid is None:
        valid = np.ones(len(t_ms), dtype=bool)
    left = px.copy()
    left[~valid] = np.nan
    return RawRecording(
        t_ms=t_ms,
        left=left,
        right=np.full_like(px, np.nan),
        valid=valid,
        geometry=geometry,
        source_tag="test",
        participant_id="p000",
        stimulus_id="s000",
        native_hz=60.0,
    )


def test_center_maps_to_origin(geometry: ScreenGeometry):
    """El centro de la pantalla corresponde a (0, 0)."""
    assert px_to_deg((960, 540), geometry) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_px_to_deg_arctangent():
    """100 px a 0,25 mm/px y 650 mm dan atan(25/650)."""
    g = ScreenGeometry(width_px=1000, height_px=800, width_mm=250.0, height_mm=200.0, viewing_distance_mm=650.0)
    x_deg, y_deg = px_to_deg((600, 400), g)
    assert x_deg == pytest.approx(math.degrees(math.atan(25.0 / 650.0)), abs=1e-12)
    assert y_deg == pytest.approx(0.0, abs=1e-12)


def test_px_to_deg_symmetry_and_monotonicity(geometry: ScreenGeometry):
    """Puntos simétricos dan grados opuestos y la conversión es monótona."""
    right = px_to_deg((960 + 300, 540 + 200), geometry)
    left = px_to_deg((960 - 300, 540 - 200), geometry)
    assert right[0] == pytest.approx(-left[0])
    assert right[1] == pytest.approx(-left[1])
    xs = [px_to_deg((x, 540), geometry)[0] for x in range(0, 1920, 64)]
    assert all(a < b for a, b in zip(xs, xs[1:]))


def test_px_to_deg_rejects_non_finite(geometry: ScreenGeometry):
    with pytest.raises(GazeDataError):
        px_to_deg((float("nan"), 10.0), geometry)


def test_deg_to_px_inverts(geometry: ScreenGeometry):
    p = (123.0, 987.0)
    assert deg_to_px(px_to_deg(p, geometry), geometry) == pytest.approx(p)


def test_merge_binocular():
    """Promedio de ojos, paso directo de un ojo y ausencia total."""
    assert merge_binocular((100, 100), (200, 200)) == (150, 150)
    assert merge_binocular((100, 100), None) == (100, 100)
    assert merge_binocular(None, (float("nan"), 3.0)) is None
    assert merge_binocular(None, None) is None


def test_resample_identity_at_60hz():
    ts = np.arange(50) * SAMPLE_PERIOD_MS
    vs = np.random.default_rng(0).normal(size=(50, 2))
    np.testing.assert_array_equal(resample_60hz(ts, vs), vs)


def test_resample_ramp_is_exact():
    """Una rampa a 120 Hz se reproduce exactamente en la rejilla de 60 Hz."""
    ts = np.arange(241) * (1000.0 / 120.0)
    out = resample_60hz(ts, ts)
    grid = np.arange(len(out)) * SAMPLE_PERIOD_MS
    assert len(out) == 121
    np.testing.assert_allclose(out, grid, atol=1e-9)


def test_resample_affine_signal():
    rng = np.random.default_rng(4)
    ts = np.cumsum(rng.uniform(1.0, 9.0, size=300))
    out = resample_60hz(ts, 3.0 * ts - 7.0)
    grid = ts[0] + np.arange(len(out)) * SAMPLE_PERIOD_MS
    np.testing.assert_allclose(out, 3.0 * grid - 7.0, atol=1e-9)


def test_resample_midpoint_at_30hz():
    """A 30 Hz cada muestra impar de la rejilla es el punto medio."""
    ts = np.arange(10) * (1000.0 / 30.0)
    vs = np.arange(10, dtype=np.float64) ** 2
    out = resample_60hz(ts, vs)
    assert out[1] == pytest.approx((vs[0] + vs[1]) / 2)
    assert out[3] == pytest.approx((vs[1] + vs[2]) / 2)


def test_resample_needs_two_samples():
    with pytest.raises(GazeDataError):
        resample_60hz(np.array([0.0]), np.array([1.0]))


def test_fill_missing():
    filled, fraction = fill_missing(np.array([1.0, np.nan, 3.0]))
    np.testing.assert_allclose(filled, [1.0, 2.0, 3.0])
    assert fraction == pytest.approx(1 / 3)

    clean = np.array([[1.0, 2.0], [3.0, 4.0]])
    same, zero = fill_missing(clean)
    np.testing.assert_array_equal(same, clean)
    assert zero == 0.0


def test_fill_missing_holds_edges():
    filled, fraction = fill_missing(np.array([np.nan, np.nan, 5.0, 6.0, np.nan]))
    np.testing.assert_allclose(filled, [5.0, 5.0, 5.0, 6.0, 6.0])
    assert fraction == pytest.approx(3 / 5)


def test_fill_missing_all_missing():
    with pytest.raises(GazeDataError):
        fill_missing(np.full(4, np.nan))


def test_mark_offscreen_boundary():
    """El margen es estricto: el borde más 10 grados se conserva."""
    points = np.array([[0.0, 0.0], [30.0, 0.0], [30.1, 0.0], [0.0, -25.5]])
    out = mark_offscreen(points, (20.0, 15.0))
    np.testing.assert_array_equal(out[0], [0.0, 0.0])
    np.testing.assert_array_equal(out[1], [30.0, 0.0])
    np.testing.assert_array_equal(out[2], [SENTINEL_DEG, SENTINEL_DEG])
    np.testing.assert_array_equal(out[3], [SENTINEL_DEG, SENTINEL_DEG])


def test_preprocess_clean_recording(geometry: ScreenGeometry):
    """Una grabación limpia a 60 Hz conserva su duración."""
    t = np.arange(120) * SAMPLE_PERIOD_MS
    px = np.column_stack([np.linspace(500, 1400, 120), np.full(120, 540.0)])
    sp = preprocess(_recording(geometry, t, px))
    assert isinstance(sp, Scanpath)
    assert len(sp) == 120
    assert sp.halfextent_deg == pytest.approx(geometry.halfextent_deg())


def test_preprocess_discards_missing(geometry: ScreenGeometry):
    """Con más de la mitad de muestras inválidas la grabación se descarta."""
    t = np.arange(100) * SAMPLE_PERIOD_MS
    valid = np.ones(100, dtype=bool)
    valid[:51] = False
    result = preprocess(_recording(geometry, t, np.full((100, 2), 700.0), valid))
    assert isinstance(result, Discarded)
    assert result.reason == "missing"
    assert result.missing_fraction == pytest.approx(0.51)


def test_preprocess_idempotent_on_canonical(geometry: ScreenGeometry):
    """Datos ya en grados a 60 Hz atraviesan el preprocesado sin cambios."""
    rng = np.random.default_rng(2)
    deg = rng.uniform(-10, 10, size=(90, 2))
    px = np.array([deg_to_px(tuple(p), geometry) for p in deg])
    sp = preprocess(_recording(geometry, np.arange(90) * SAMPLE_PERIOD_MS, px))
    np.testing.assert_allclose(sp.points, deg, atol=1e-9)


def test_preprocess_golden_binocular_25hz():
    """
    Grabación binocular a 25 Hz con un hueco y una salida de pantalla.

    Pantalla de 200 px = 200 mm a 100 mm: ±100 px son ±45°. Se promedian
    los ojos en píxeles, se pasa a grados, se remuestrea, se rellena el
    hueco sobre la rejilla de 60 Hz y por último se marca lo que queda a
    más de 55° del centro.
    """
    geometry = ScreenGeometry(200, 200, 200.0, 200.0, 100.0)
    nan = np.nan
    recording = RawRecording(
        t_ms=np.array([0.0, 40.0, 80.0, 120.0, 160.0]),
        left=np.array([[100, 100], [150, 100], [nan, nan], [400, 100], [400, 100]], dtype=float),
        right=np.array([[100, 100], [250, 100], [nan, nan], [nan, nan], [nan, nan]], dtype=float),
        valid=np.array([True, True, False, True, True]),
        geometry=geometry,
        source_tag="golden",
        participant_id="p000",
        stimulus_id="s000",
        native_hz=25.0,
    )
    sp = preprocess(recording)
    assert isinstance(sp, Scanpath)
    assert len(sp) == 10

    # atan(3) = 71,565°; el hueco (k = 3..7) se interpola entre 37,5° y 71,565°
    expected_x = [0.0, 18.75, 37.5, 43.177508529513, 48.855017059026, 54.532525588539]
    np.testing.assert_allclose(sp.points[:6, 0], expected_x, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(sp.points[:6, 1], 0.0, atol=1e-9)
    np.testing.assert_array_equal(sp.points[6:], np.full((4, 2), SENTINEL_DEG))
    assert sp.halfextent_deg == pytest.approx((45.0, 45.0))


def test_downsampling_error_is_small(geometry: ScreenGeometry):
    """Una señal suave a 500 Hz queda a menos de 0,8° de la ideal en la rejilla."""
    t = np.arange(0, 5000, 2.0)

    def ideal(ms: np.ndarray) -> np.ndarray:
        s = ms / 1000.0
        return np.column_stack([8 * np.sin(2 * np.pi * 0.7 * s), 5 * np.cos(2 * np.pi * 0.4 * s)])

    px = np.array([deg_to_px(tuple(p), geometry) for p in ideal(t)])
    sp = preprocess(_recording(geometry, t, px))
    grid = np.arange(len(sp)) * SAMPLE_PERIOD_MS
    errors = np.linalg.norm(sp.points - ideal(grid), axis=1)
    assert np.median(errors) < 0.8


def test_preprocess_many_keeps_order(geometry: ScreenGeometry):
    t = np.arange(60) * SAMPLE_PERIOD_MS
    bad = np.ones(60, dtype=bool)
    bad[:40] = False
    recordings = [
        _recording(geometry, t, np.full((60, 2), 600.0)),
        _recording(geometry, t, np.full((60, 2), 600.0), bad),
        _recording(geometry, t, np.full((60, 2), 900.0)),
    ]
    scanpaths, discarded = preprocess_many(recordings, threads=2)
    assert len(scanpaths) == 2
    assert len(discarded) == 1
    assert scanpaths[0].points[0, 0] < scanpaths[1].points[0, 0]


def test_augment_identity():
    sp = make_scanpath(np.random.default_rng(0).normal(size=(20, 2)))
    out = augment(sp, AugmentConfig(), np.random.default_rng(1))
    np.testing.assert_array_equal(out.points, sp.points)


def test_augment_offset_keeps_sentinels(offset_augment: AugmentConfig):
    """Un desplazamiento puro mueve los puntos y respeta los centinelas."""
    points = np.array([[0.0, 0.0], [SENTINEL_DEG, SENTINEL_DEG], [2.0, -1.0]])
    out = augment_points(points, offset_augment, np.random.default_rng(0))
    np.testing.assert_allclose(out[0], [1.0, 1.0])
    np.testing.assert_array_equal(out[1], [SENTINEL_DEG, SENTINEL_DEG])
    np.testing.assert_allclose(out[2], [3.0, 0.0])


def test_rotation_is_counterclockwise():
    matrix = affine_matrix(1.0, math.pi / 2, 0.0)
    np.testing.assert_allclose(matrix @ np.array([1.0, 0.0]), [0.0, 1.0], atol=1e-12)


def test_point_noise_probability():
    cfg = AugmentConfig(point_noise_sd_deg=1.0, point_noise_prob=0.5)
    points = np.zeros((2000, 2))
    out = augment_points(points, cfg, np.random.default_rng(3))
    moved = np.any(out != 0.0, axis=1).mean()
    assert 0.45 < moved < 0.55
