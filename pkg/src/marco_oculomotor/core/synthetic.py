#!/usr/bin/env python3
"""
Corpus Sintético - Marco Oculomotor
===================================

Generador de scanpaths con verdad de fijaciones conocida. Cada estímulo
tiene una disposición de grupos de interés y una matriz de transición
entre ellos; cada participante tiene un estilo (desplazamiento, escala
de temblor y sesgo de permanencia). Las fijaciones se sitúan en los
centros de los grupos y las sácadas son barridos lineales que superan
holgadamente el umbral de velocidad de I-VT.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from marco_oculomotor.data.models import DatasetManifest, RosterEntry, Scanpath, ScreenGeometry
from marco_oculomotor.data.repository import scanpath_file_name, write_manifest, write_raw_recording
from marco_oculomotor.errors import GazeDataError
from marco_oculomotor.utils.config import SynthConfig
from marco_oculomotor.utils.exporter import Exporter
from marco_oculomotor.utils.logger import get_logger

from .fixation import DEFAULT_MIN_FIX_MS, DEFAULT_VT_DEGPS, min_fixation_samples
from .gaze import SAMPLE_PERIOD_MS, SAMPLE_RATE_HZ, degrees_to_pixels

logger = get_logger(__name__)

# Velocidad mínima de un barrido, por encima del umbral de I-VT
MIN_SWEEP_SPEED_DEGPS = 1.2 * DEFAULT_VT_DEGPS
LAYOUT_BOX_FRACTION = 0.7
LAYOUT_ATTEMPTS = 1000
LABELS_DIR = "labels"


@dataclass(frozen=True)
class StimulusLayout:
    """Grupos de interés de un estímulo y probabilidades de transición."""
    stimulus_id: str
    centers: np.ndarray
    transitions: np.ndarray
    start: np.ndarray


@dataclass(frozen=True)
class ParticipantStyle:
    """Estilo individual de mirada."""
    participant_id: str
    source_tag: str
    offset: np.ndarray
    jitter_scale: float
    dwell_bias: float
    clinical: bool = False

    @property
    def label(self) -> int:
        return int(self.clinical)


@dataclass
class SynthItem:
    """Scanpath generado junto con sus etiquetas exactas."""
    scanpath: Scanpath
    labels: np.ndarray
    repetition: int = 0


@dataclass
class SyntheticCorpus:
    config: SynthConfig
    geometry: ScreenGeometry
    styles: list[ParticipantStyle]
    layouts: list[StimulusLayout]
    items: list[SynthItem]

    @property
    def source_tags(self) -> list[str]:
        return sorted({s.source_tag for s in self.styles})

    def labels_by_participant(self) -> dict[str, int]:
        return {s.participant_id: s.label for s in self.styles}


def synth_geometry(cfg: SynthConfig) -> ScreenGeometry:
    return ScreenGeometry(
        width_px=cfg.width_px,
        height_px=cfg.height_px,
        width_mm=cfg.width_mm,
        height_mm=cfg.height_mm,
        viewing_distance_mm=cfg.viewing_distance_mm,
    )


def source_tag_for(index: int, n_sources: int) -> str:
    return "synth" if n_sources == 1 else f"synth{index}"


def stimulus_layout(cfg: SynthConfig, index: int) -> StimulusLayout:
    """
    Disposición determinista del estímulo ``index``.

    Los centros se colocan dentro del 70 % central de la pantalla de modo
    que cada grupo tenga al menos un destino a una distancia dentro del
    rango de amplitudes de sácada.

    Raises:
        GazeDataError: Si el rango de amplitudes no cabe en la pantalla
    """
    rng = np.random.default_rng([cfg.seed, 1, index])
    box = LAYOUT_BOX_FRACTION * np.array(synth_geometry(cfg).halfextent_deg())
    a_min, a_max = cfg.amplitude_deg
    if a_min > 2.0 * float(np.hypot(*box)):
        raise GazeDataError(
            f"Amplitud mínima {a_min}° inviable en una pantalla de ±{box[0]:.1f}°×±{box[1]:.1f}°"
        )
    sid = f"s{index:03d}"
    c = cfg.n_clusters
    if c == 1:
        centers = rng.uniform(-box, box, size=(1, 2))
        return StimulusLayout(sid, centers, np.ones((1, 1)), np.ones(1))

    for _ in range(LAYOUT_ATTEMPTS):
        centers = rng.uniform(-box, box, size=(c, 2))
        dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        allowed = (dist >= a_min) & (dist <= a_max)
        if allowed.any(axis=1).all():
            weights = rng.dirichlet(np.full(c, 0.5), size=c) * allowed
            transitions = weights / weights.sum(axis=1, keepdims=True)
            return StimulusLayout(sid, centers, transitions, rng.dirichlet(np.ones(c)))
    raise GazeDataError(
        f"No se encontró una disposición con amplitudes en [{a_min}, {a_max}]° "
        f"tras {LAYOUT_ATTEMPTS} intentos"
    )


def participant_styles(cfg: SynthConfig) -> list[ParticipantStyle]:
    """
    Estilos de todos los participantes.

    Los participantes se reparten entre fuentes por turnos; una fracción
    ``clinical_fraction`` forma el grupo clínico, con permanencias más
    largas y más temblor.
    """
    n_clinical = int(round(cfg.clinical_fraction * cfg.n_participants))
    clinical = set(np.random.default_rng([cfg.seed, 3]).permutation(cfg.n_participants)[:n_clinical].tolist())
    styles = []
    for i in range(cfg.n_participants):
        rng = np.random.default_rng([cfg.seed, 2, i])
        jitter = float(rng.uniform(*cfg.jitter_scale_range))
        dwell = float(rng.uniform(*cfg.dwell_bias_range))
        is_clinical = i in clinical
        if is_clinical:
            jitter *= cfg.clinical_jitter_factor
            dwell *= cfg.clinical_dwell_factor
        styles.append(ParticipantStyle(
            participant_id=f"p{i:03d}",
            source_tag=source_tag_for(i % cfg.n_sources, cfg.n_sources),
            offset=rng.normal(0.0, cfg.participant_offset_sd_deg, size=2),
            jitter_scale=jitter,
            dwell_bias=dwell,
            clinical=is_clinical,
        ))
    return styles


def _fixation_samples(cfg: SynthConfig, dwell_bias: float, rng: np.random.Generator) -> int:
    ms = rng.uniform(*cfg.fixation_ms) * dwell_bias
    return max(min_fixation_samples(DEFAULT_MIN_FIX_MS), int(round(ms * SAMPLE_RATE_HZ / 1000.0)))


def _saccade_samples(cfg: SynthConfig, distance: float, rng: np.random.Generator) -> int:
    ms = rng.uniform(*cfg.saccade_ms)
    samples = max(1, int(round(ms * SAMPLE_RATE_HZ / 1000.0)))
    fastest = math.floor(SAMPLE_RATE_HZ * distance / MIN_SWEEP_SPEED_DEGPS)
    return max(1, min(samples, fastest))


def synth_scanpath(
    cfg: SynthConfig,
    style: ParticipantStyle,
    layout: StimulusLayout,
    rng: np.random.Generator,
) -> tuple[Scanpath, np.ndarray]:
    """
    Genera un scanpath y sus etiquetas exactas (1 = fijación, 0 = sácada).

    Las fases alternan fijaciones (centro del grupo más desplazamiento
    del participante y temblor) y barridos lineales. La muestra de
    aterrizaje de cada barrido pertenece a la sácada. La generación
    termina siempre al final de una fijación completa.
    """
    geometry = synth_geometry(cfg)
    halfextent = np.array(geometry.halfextent_deg())
    target = int(round(rng.uniform(*cfg.duration_s) * SAMPLE_RATE_HZ))
    sd = cfg.jitter_sd_deg * style.jitter_scale

    def fixate(cluster: int, n: int) -> np.ndarray:
        center = layout.centers[cluster] + style.offset
        return np.clip(center + rng.normal(0.0, sd, size=(n, 2)), -halfextent, halfextent)

    n_clusters = layout.centers.shape[0]
    if n_clusters == 1:
        points = fixate(0, target)
        labels = np.ones(target, dtype=np.int8)
    else:
        cluster = int(rng.choice(n_clusters, p=layout.start))
        chunks = [fixate(cluster, _fixation_samples(cfg, style.dwell_bias, rng))]
        label_chunks = [np.ones(len(chunks[0]), dtype=np.int8)]
        total = len(chunks[0])
        while total < target:
            cluster = int(rng.choice(n_clusters, p=layout.transitions[cluster]))
            fixation = fixate(cluster, 1 + _fixation_samples(cfg, style.dwell_bias, rng))
            start, landing = chunks[-1][-1], fixation[0]
            n_sac = _saccade_samples(cfg, float(np.linalg.norm(landing - start)), rng)
            steps = np.arange(1, n_sac + 1)[:, None] / n_sac
            sweep = start + (landing - start) * steps
            chunks += [sweep, fixation[1:]]
            label_chunks += [np.zeros(n_sac, dtype=np.int8), np.ones(len(fixation) - 1, dtype=np.int8)]
            total += len(sweep) + len(fixation) - 1
        points = np.concatenate(chunks)
        labels = np.concatenate(label_chunks)

    scanpath = Scanpath(
        points=points,
        source_tag=style.source_tag,
        participant_id=style.participant_id,
        stimulus_id=layout.stimulus_id,
        halfextent_deg=(float(halfextent[0]), float(halfextent[1])),
    )
    return scanpath, labels


def expected_fixation_share(cfg: SynthConfig, dwell_bias: float = 1.0, grid: int = 20001) -> float:
    """
    Fracción de muestras de fijación esperada para un sesgo de permanencia.
    """
    min_fix = min_fixation_samples(DEFAULT_MIN_FIX_MS)
    fix_ms = np.linspace(*cfg.fixation_ms, grid) * dwell_bias
    sac_ms = np.linspace(*cfg.saccade_ms, grid)
    fix = np.maximum(min_fix, np.round(fix_ms * SAMPLE_RATE_HZ / 1000.0)).mean()
    sac = np.maximum(1, np.round(sac_ms * SAMPLE_RATE_HZ / 1000.0)).mean()
    if cfg.n_clusters == 1:
        return 1.0
    return float(fix / (fix + sac))


def generate_corpus(cfg: SynthConfig) -> SyntheticCorpus:
    """
    Genera el corpus completo: cada participante ve todos los estímulos
    ``scanpaths_per_pair`` veces. Determinista para una semilla dada.
    """
    styles = participant_styles(cfg)
    layouts = [stimulus_layout(cfg, j) for j in range(cfg.n_stimuli)]
    items = []
    for i, style in enumerate(styles):
        for j, layout in enumerate(layouts):
            for rep in range(cfg.scanpaths_per_pair):
                rng = np.random.default_rng([cfg.seed, 4, i, j, rep])
                sp, labels = synth_scanpath(cfg, style, layout, rng)
                items.append(SynthItem(scanpath=sp, labels=labels, repetition=rep))
    logger.info(
        f"Corpus sintético: {len(items)} scanpaths, {cfg.n_participants} participantes, "
        f"{cfg.n_stimuli} estímulos, {cfg.n_sources} fuente(s)"
    )
    return SyntheticCorpus(
        config=cfg,
        geometry=synth_geometry(cfg),
        styles=styles,
        layouts=layouts,
        items=items,
    )


def write_synthetic_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> list[Path]:
    """
    Escribe el corpus como grabaciones crudas en píxeles, con etiquetas exactas
    en ``labels/`` y un manifiesto por fuente.

    Con una sola fuente el dataset ocupa ``out_dir``; con varias, un
    subdirectorio por fuente.

    Returns:
        Directorios de dataset escritos
    """
    out_dir = Path(out_dir)
    cfg = corpus.config
    exporter = Exporter(seed=cfg.seed)
    labels = corpus.labels_by_participant()
    written = []
    for tag in corpus.source_tags:
        directory = out_dir if len(corpus.source_tags) == 1 else out_dir / tag
        roster = []
        for item in corpus.items:
            sp = item.scanpath
            if sp.source_tag != tag:
                continue
            name = scanpath_file_name(sp, item.repetition)
            pixels = degrees_to_pixels(sp.points, corpus.geometry)
            t_ms = np.arange(len(sp)) * SAMPLE_PERIOD_MS
            write_raw_recording(directory / name, t_ms, pixels, pixels, np.ones(len(sp), dtype=bool))
            exporter.export_labels(item.labels, directory / LABELS_DIR / name)
            roster.append(RosterEntry(name, sp.participant_id, sp.stimulus_id))
        manifest = DatasetManifest(
            source_tag=tag,
            geometry=corpus.geometry,
            native_hz=float(SAMPLE_RATE_HZ),
            roster=roster,
            labels={s.participant_id: labels[s.participant_id] for s in corpus.styles if s.source_tag == tag},
        )
        write_manifest(manifest, directory)
        written.append(directory)
    return written
