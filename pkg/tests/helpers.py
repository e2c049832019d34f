#!/usr/bin/env python3
"""Utilidades compartidas por los tests."""

import numpy as np

from marco_oculomotor.data.models import Scanpath

HALFEXTENT = (22.2, 12.97)


def make_scanpath(
    points: np.ndarray | list[list[float]],
    participant_id: str = "p000",
    stimulus_id: str = "s000",
    source_tag: str = "test",
) -> Scanpath:
    """Scanpath de prueba con la media extensión de un monitor estándar."""
    return Scanpath(
        points=np.asarray(points, dtype=np.float64),
        source_tag=source_tag,
        participant_id=participant_id,
        stimulus_id=stimulus_id,
        halfextent_deg=HALFEXTENT,
    )


def ivt_oracle(points: np.ndarray, v_thresh: float = 100.0, min_samples: int = 12) -> np.ndarray:
    """Reimplementación directa de I-VT, muestra a muestra."""
    n = len(points)
    speeds = []
    for i in range(1, n):
        a, b = points[i - 1], points[i]
        if (a[0] == -180.0 and a[1] == -180.0) or (b[0] == -180.0 and b[1] == -180.0):
            speeds.append(float("inf"))
        else:
            speeds.append(60.0 * float(np.hypot(b[0] - a[0], b[1] - a[1])))
    speeds = [speeds[0]] + speeds
    labels = []
    for i in range(n):
        sentinel = points[i][0] == -180.0 and points[i][1] == -180.0
        labels.append(1 if speeds[i] < v_thresh and not sentinel else 0)
    i = 0
    while i < n:
        if labels[i] == 1:
            j = i
            while j < n and labels[j] == 1:
                j += 1
            if j - i < min_samples:
                for k in range(i, j):
                    labels[k] = 0
            i = j
        else:
            i += 1
    return np.array(labels, dtype=np.int8)
