#!/usr/bin/env python3
"""
Repositorio de Corpus - Marco Oculomotor
========================================

Lectura y escritura de corpus en disco. Cada dataset ocupa un directorio
con un manifiesto ``manifest.txt`` (líneas ``clave = valor``) y un CSV
por grabación. Un corpus puede ser un único dataset o un directorio con
un subdirectorio por fuente.

Formatos:

- Grabación cruda: ``t_ms,lx,ly,rx,ry,valid``; celdas vacías = ojo ausente
- Scanpath canónico: ``x_deg,y_deg`` a 60 Hz implícitos
- Manifiesto: geometría, ``source_tag``, ``native_hz``, ``kind``, líneas
  ``recording = archivo, participante, estímulo`` y ``label.<participante> = 0|1``
"""

import io
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from marco_oculomotor.errors import GazeDataError
from marco_oculomotor.utils.batch_processor import BatchProcessor
from marco_oculomotor.utils.exporter import write_text_atomic
from marco_oculomotor.utils.logger import get_logger

from .models import (
    DatasetManifest,
    LoadReport,
    ParticipantRecord,
    RawRecording,
    RosterEntry,
    RowError,
    Scanpath,
    ScreenGeometry,
)

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.txt"
RAW_COLUMNS = ("t_ms", "lx", "ly", "rx", "ry", "valid")
SCANPATH_COLUMNS = ("x_deg", "y_deg")
GEOMETRY_KEYS = ("width_px", "height_px", "width_mm", "height_mm", "viewing_distance_mm")
KINDS = ("raw", "scanpath")


# ---------------------------------------------------------------------------
# Manifiestos
# ---------------------------------------------------------------------------

def parse_manifest_text(text: str, origin: str = "<manifest>") -> DatasetManifest:
    """
    Interpreta el texto de un manifiesto.

    Raises:
        GazeDataError: Si faltan claves, la geometría es inválida o hay líneas mal formadas
    """
    values: dict[str, str] = {}
    roster: list[RosterEntry] = []
    labels: dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise GazeDataError(f"{origin}:{number}: línea sin '=': {raw.strip()}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "recording":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 3 or not all(parts):
                raise GazeDataError(f"{origin}:{number}: se esperaba 'archivo, participante, estímulo'")
            roster.append(RosterEntry(*parts))
        elif key.startswith("label."):
            if value not in ("0", "1"):
                raise GazeDataError(f"{origin}:{number}: etiqueta no binaria '{value}'")
            labels[key[len("label."):]] = int(value)
        else:
            values[key] = value

    missing = [k for k in ("source_tag", "native_hz", *GEOMETRY_KEYS) if k not in values]
    if missing:
        raise GazeDataError(f"{origin}: faltan claves en el manifiesto: {missing}")
    kind = values.pop("kind", "raw")
    if kind not in KINDS:
        raise GazeDataError(f"{origin}: tipo de dataset desconocido '{kind}'")
    try:
        geometry = ScreenGeometry(
            width_px=int(values["width_px"]),
            height_px=int(values["height_px"]),
            width_mm=float(values["width_mm"]),
            height_mm=float(values["height_mm"]),
            viewing_distance_mm=float(values["viewing_distance_mm"]),
        )
        native_hz = float(values["native_hz"])
    except ValueError as e:
        raise GazeDataError(f"{origin}: geometría inválida: {e}") from e
    if not native_hz > 0:
        raise GazeDataError(f"{origin}: native_hz debe ser positivo")
    unknown = set(values) - {"source_tag", "native_hz", *GEOMETRY_KEYS}
    if unknown:
        logger.warning(f"{origin}: claves ignoradas {sorted(unknown)}")
    return DatasetManifest(
        source_tag=values["source_tag"],
        geometry=geometry,
        native_hz=native_hz,
        roster=roster,
        labels=labels,
        kind=kind,
    )


def read_manifest(directory: str | Path) -> DatasetManifest:
    """
    Lee el manifiesto de un directorio de dataset.

    Raises:
        GazeDataError: Si el manifiesto no existe o es inválido
    """
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise GazeDataError(f"No hay manifiesto en {directory}")
    return parse_manifest_text(path.read_text(encoding="utf-8"), str(path))


def format_manifest(manifest: DatasetManifest) -> str:
    g = manifest.geometry
    lines = [
        f"source_tag = {manifest.source_tag}",
        f"kind = {manifest.kind}",
        f"native_hz = {manifest.native_hz:g}",
        f"width_px = {g.width_px}",
        f"height_px = {g.height_px}",
        f"width_mm = {g.width_mm:g}",
        f"height_mm = {g.height_mm:g}",
        f"viewing_distance_mm = {g.viewing_distance_mm:g}",
    ]
    lines += [f"recording = {e.file}, {e.participant_id}, {e.stimulus_id}" for e in manifest.roster]
    lines += [f"label.{pid} = {label}" for pid, label in sorted(manifest.labels.items())]
    return "\n".join(lines) + "\n"


def write_manifest(manifest: DatasetManifest, directory: str | Path) -> Path:
    return write_text_atomic(Path(directory) / MANIFEST_NAME, format_manifest(manifest))


def find_datasets(path: str | Path) -> list[Path]:
    """
    Directorios de dataset de un corpus: la raíz si tiene manifiesto o,
    si no, cada subdirectorio con manifiesto en orden alfabético.

    Raises:
        GazeDataError: Si el corpus no existe o no contiene ningún manifiesto
    """
    root = Path(path)
    if not root.is_dir():
        raise GazeDataError(f"El corpus {root} no existe")
    if (root / MANIFEST_NAME).is_file():
        return [root]
    datasets = sorted(d for d in root.iterdir() if d.is_dir() and (d / MANIFEST_NAME).is_file())
    if not datasets:
        raise GazeDataError(f"No hay manifiesto en {root} ni en sus subdirectorios")
    return datasets


def corpus_kind(path: str | Path) -> str:
    """Tipo ('raw' o 'scanpath') de un corpus; todos sus datasets deben coincidir."""
    kinds = {read_manifest(d).kind for d in find_datasets(path)}
    if len(kinds) != 1:
        raise GazeDataError(f"Corpus con datasets de tipos mezclados: {sorted(kinds)}")
    return kinds.pop()


# ---------------------------------------------------------------------------
# Grabaciones crudas
# ---------------------------------------------------------------------------

@dataclass
class FileReport:
    """Resultado de leer un archivo de grabación."""
    total_rows: int = 0
    parsed_rows: int = 0
    row_errors: list[RowError] = field(default_factory=list)
    skipped: bool = False


def _parse_valid(cell: str) -> int | None:
    value = cell.strip().lower()
    if value in ("1", "true"):
        return 1
    if value in ("0", "false"):
        return 0
    return None


def parse_raw_rows(frame: pd.DataFrame, file: str) -> tuple[pd.DataFrame, FileReport]:
    """
    Valida fila a fila una tabla cruda leída como texto.

    Se rechazan las filas con valores no numéricos, tiempos no finitos,
    ojos con una sola coordenada o muestras válidas sin ningún ojo. Un
    tiempo no creciente invalida el archivo completo.

    Returns:
        (filas aceptadas como números, informe del archivo)
    """
    report = FileReport(total_rows=len(frame))
    numeric = pd.DataFrame(index=frame.index)
    bad = pd.Series("", index=frame.index)

    for col in RAW_COLUMNS[:5]:
        text = frame[col].astype(str).str.strip()
        values = pd.to_numeric(text, errors="coerce")
        unparsable = values.isna() & (text != "")
        bad[unparsable & (bad == "")] = f"valor no numérico en {col}"
        numeric[col] = values
    valid = frame["valid"].astype(str).map(_parse_valid)
    bad[valid.isna() & (bad == "")] = "valor inválido en valid"
    numeric["valid"] = valid

    bad[~np.isfinite(numeric["t_ms"].astype(float)) & (bad == "")] = "t_ms ausente o no finito"
    for a, b in (("lx", "ly"), ("rx", "ry")):
        partial = numeric[a].isna() != numeric[b].isna()
        bad[partial & (bad == "")] = f"ojo con una sola coordenada ({a}, {b})"
    no_eye = numeric[["lx", "ly"]].isna().any(axis=1) & numeric[["rx", "ry"]].isna().any(axis=1)
    bad[(numeric["valid"] == 1) & no_eye & (bad == "")] = "muestra válida sin ningún ojo"

    for idx in bad.index[bad != ""]:
        report.row_errors.append(RowError(file, int(idx) + 2, bad[idx]))
    accepted = numeric[bad == ""]

    diffs = np.diff(accepted["t_ms"].to_numpy(dtype=np.float64))
    if np.any(diffs <= 0):
        offending = accepted.index[int(np.argmax(diffs <= 0)) + 1]
        report.row_errors.append(RowError(file, int(offending) + 2, "marca de tiempo no creciente"))
        report.parsed_rows = 0
        report.skipped = True
        return accepted.iloc[0:0], report

    report.parsed_rows = len(accepted)
    return accepted, report


def read_raw_recording(
    path: str | Path, entry: RosterEntry, manifest: DatasetManifest
) -> tuple[RawRecording | None, FileReport]:
    """
    Lee una grabación cruda del roster.

    Returns:
        (grabación o None si el archivo se omite, informe del archivo)

    Raises:
        GazeDataError: Si la cabecera no es la esperada
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    if tuple(c.strip() for c in frame.columns) != RAW_COLUMNS:
        raise GazeDataError(f"{path}: cabecera inesperada {list(frame.columns)}")
    frame.columns = list(RAW_COLUMNS)
    accepted, report = parse_raw_rows(frame, str(path))
    if report.skipped:
        return None, report
    if accepted.empty:
        report.skipped = True
        return None, report
    recording = RawRecording(
        t_ms=accepted["t_ms"].to_numpy(dtype=np.float64),
        left=accepted[["lx", "ly"]].to_numpy(dtype=np.float64),
        right=accepted[["rx", "ry"]].to_numpy(dtype=np.float64),
        valid=accepted["valid"].to_numpy(dtype=np.int64) == 1,
        geometry=manifest.geometry,
        source_tag=manifest.source_tag,
        participant_id=entry.participant_id,
        stimulus_id=entry.stimulus_id,
        native_hz=manifest.native_hz,
    )
    return recording, report


def load_corpus(path: str | Path, threads: int = 1) -> tuple[list[RawRecording], LoadReport]:
    """
    Carga todas las grabaciones crudas de un corpus.

    Las filas mal formadas se informan con archivo y línea; los archivos
    ilegibles o con tiempos no crecientes se omiten y se listan en el
    informe. Filas aceptadas más rechazadas igualan las filas leídas.

    Raises:
        GazeDataError: Si falta el manifiesto o su geometría es inválida
    """
    jobs: list[tuple[Path, RosterEntry, DatasetManifest]] = []
    tags: set[str] = set()
    for directory in find_datasets(path):
        manifest = read_manifest(directory)
        if manifest.kind != "raw":
            raise GazeDataError(f"{directory} no contiene grabaciones crudas")
        if manifest.source_tag in tags:
            raise GazeDataError(f"source_tag repetido en el corpus: {manifest.source_tag}")
        tags.add(manifest.source_tag)
        if not manifest.roster:
            logger.warning(f"Roster vacío en {directory}")
        jobs += [(directory / e.file, e, manifest) for e in manifest.roster]

    processor: BatchProcessor[tuple, tuple] = BatchProcessor(max_workers=threads)
    results = processor.process_items(
        jobs, lambda job: read_raw_recording(*job), describe=lambda job: str(job[0])
    )

    recordings: list[RawRecording] = []
    report = LoadReport()
    for (file, _, _), result in zip(jobs, results, strict=True):
        if result is None:
            report.skipped_files.append(str(file))
            continue
        recording, file_report = result
        report.total_rows += file_report.total_rows
        report.parsed_rows += file_report.parsed_rows
        report.rejected_rows += file_report.total_rows - file_report.parsed_rows
        report.row_errors += file_report.row_errors
        if recording is None:
            logger.warning(f"Archivo omitido: {file}")
            report.skipped_files.append(str(file))
        else:
            recordings.append(recording)
    for error in report.row_errors:
        logger.error(f"{error.file}:{error.line}: {error.message}")
    logger.info(
        f"Corpus cargado: {len(recordings)} grabaciones, {report.parsed_rows}/{report.total_rows} "
        f"filas aceptadas, {len(report.skipped_files)} archivos omitidos"
    )
    return recordings, report


def format_raw_csv(t_ms: np.ndarray, left: np.ndarray, right: np.ndarray, valid: np.ndarray) -> str:
    """CSV crudo; los NaN se escriben como celdas vacías."""
    frame = pd.DataFrame({
        "t_ms": np.asarray(t_ms, dtype=np.float64),
        "lx": left[:, 0], "ly": left[:, 1],
        "rx": right[:, 0], "ry": right[:, 1],
        "valid": np.asarray(valid, dtype=np.int64),
    })
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, na_rep="", float_format="%.17g", lineterminator="\n")
    return buffer.getvalue()


def write_raw_recording(
    path: str | Path, t_ms: np.ndarray, left: np.ndarray, right: np.ndarray, valid: np.ndarray
) -> Path:
    return write_text_atomic(path, format_raw_csv(t_ms, left, right, valid))


# ---------------------------------------------------------------------------
# Scanpaths canónicos
# ---------------------------------------------------------------------------

def scanpath_file_name(sp: Scanpath, repetition: int = 0) -> str:
    suffix = f"_r{repetition}" if repetition else ""
    return f"{sp.participant_id}_{sp.stimulus_id}{suffix}.csv"


def format_scanpath_csv(sp: Scanpath) -> str:
    frame = pd.DataFrame(sp.points, columns=list(SCANPATH_COLUMNS))
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
    return buffer.getvalue()


def read_scanpath_csv(
    path: str | Path,
    source_tag: str = "",
    participant_id: str = "",
    stimulus_id: str = "",
    halfextent_deg: tuple[float, float] = (0.0, 0.0),
) -> Scanpath:
    """
    Lee un scanpath canónico.

    Raises:
        GazeDataError: Si el archivo no tiene el formato ``x_deg,y_deg``
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, comment="#", skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise GazeDataError(f"{path}: no se pudo leer: {e}") from e
    if tuple(c.strip() for c in frame.columns) != SCANPATH_COLUMNS:
        raise GazeDataError(f"{path}: cabecera inesperada {list(frame.columns)}")
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    if values.size == 0 or not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.isfinite(values).all(axis=1))) + 2 if values.size else 2
        raise GazeDataError(f"{path}:{bad}: valores no numéricos o ausentes")
    return Scanpath(
        points=values,
        source_tag=source_tag,
        participant_id=participant_id,
        stimulus_id=stimulus_id,
        halfextent_deg=halfextent_deg,
    )


def write_scanpath_dataset(
    scanpaths: Sequence[Scanpath],
    directory: str | Path,
    geometry: ScreenGeometry,
    labels: dict[str, int] | None = None,
) -> DatasetManifest:
    """Escribe los scanpaths de una fuente y su manifiesto canónico."""
    directory = Path(directory)
    if not scanpaths:
        raise GazeDataError(f"Sin scanpaths que escribir en {directory}")
    source_tags = {sp.source_tag for sp in scanpaths}
    if len(source_tags) != 1:
        raise GazeDataError(f"Un dataset canónico admite una sola fuente: {sorted(source_tags)}")
    seen: dict[tuple[str, str], int] = {}
    roster = []
    for sp in scanpaths:
        pair = (sp.participant_id, sp.stimulus_id)
        repetition = seen.get(pair, 0)
        seen[pair] = repetition + 1
        name = scanpath_file_name(sp, repetition)
        write_text_atomic(directory / name, format_scanpath_csv(sp))
        roster.append(RosterEntry(name, sp.participant_id, sp.stimulus_id))
    participants = {sp.participant_id for sp in scanpaths}
    manifest = DatasetManifest(
        source_tag=source_tags.pop(),
        geometry=geometry,
        native_hz=60.0,
        roster=roster,
        labels={pid: v for pid, v in (labels or {}).items() if pid in participants},
        kind="scanpath",
    )
    write_manifest(manifest, directory)
    return manifest


def load_scanpaths(path: str | Path) -> tuple[list[Scanpath], dict[str, int]]:
    """
    Carga un corpus canónico.

    Returns:
        (scanpaths en orden del roster, etiquetas de participante)
    """
    scanpaths: list[Scanpath] = []
    labels: dict[str, int] = {}
    for directory in find_datasets(path):
        manifest = read_manifest(directory)
        if manifest.kind != "scanpath":
            raise GazeDataError(f"{directory} no contiene scanpaths canónicos")
        if not manifest.roster:
            logger.warning(f"Roster vacío en {directory}")
        halfextent = manifest.geometry.halfextent_deg()
        for entry in manifest.roster:
            scanpaths.append(read_scanpath_csv(
                directory / entry.file, manifest.source_tag,
                entry.participant_id, entry.stimulus_id, halfextent,
            ))
        labels.update(manifest.labels)
    logger.info(f"Cargados {len(scanpaths)} scanpaths de {path}")
    return scanpaths, labels


def collect_labels(path: str | Path) -> dict[str, int]:
    """Etiquetas de participante declaradas en todos los manifiestos del corpus."""
    labels: dict[str, int] = {}
    for directory in find_datasets(path):
        labels.update(read_manifest(directory).labels)
    return labels


def build_participant_records(
    scanpaths: Sequence[Scanpath], labels: dict[str, int]
) -> tuple[list[ParticipantRecord], list[str]]:
    """
    Agrupa los scanpaths por participante.

    El roster de estímulos es la lista ordenada de todos los estímulos del
    corpus. Sólo se incluyen participantes con etiqueta; si un participante
    tiene varios scanpaths de un estímulo se usa el primero.

    Returns:
        (registros ordenados por participante, roster)
    """
    roster = sorted({sp.stimulus_id for sp in scanpaths})
    records: dict[str, ParticipantRecord] = {}
    unlabeled: set[str] = set()
    for sp in scanpaths:
        if sp.participant_id not in labels:
            unlabeled.add(sp.participant_id)
            continue
        rec = records.setdefault(
            sp.participant_id, ParticipantRecord(sp.participant_id, labels[sp.participant_id])
        )
        rec.scanpaths.setdefault(sp.stimulus_id, sp)
    if unlabeled:
        logger.warning(f"Participantes sin etiqueta omitidos: {sorted(unlabeled)}")
    return [records[pid] for pid in sorted(records)], roster
