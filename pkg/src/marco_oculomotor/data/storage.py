#!/usr/bin/env python3
"""
Persistencia - Marco Oculomotor
===============================

Almacén de embeddings y checkpoints del modelo.

El almacén es una línea de cabecera de texto
``OBFEMB v1 dim=<d> checksum=<huella> count=<n> payload_crc=<crc32>``
seguida de registros binarios: longitud (uint16 LE) y bytes UTF-8 del
participante, ídem del estímulo, y ``dim`` flotantes de 32 bits LE.

El checkpoint es un zip con ``config.txt`` (configuración completa en el
formato de archivo de configuración), ``tasks.txt`` (tareas separadas por
comas) y ``parameters.bin`` con los arrays del modelo, todo little-endian:

- uint32: número de entradas
- por entrada: uint16 longitud del nombre, nombre UTF-8 (clave del
  ``state_dict``, p. ej. ``encoder.rnn.weight_ih_l0``), uint8 rango,
  ``rango`` dimensiones uint32 y los valores como float32 en orden C

Los valores se guardan siempre en 32 bits; los buffers enteros (contadores
de batch normalization) se convierten al cargar.
"""

import hashlib
import io
import struct
import zipfile
import zlib
from pathlib import Path

import numpy as np
import torch

from marco_oculomotor.core.network import ObfModel
from marco_oculomotor.errors import ConfigError, GazeDataError
from marco_oculomotor.utils.config import AppConfig, ConfigManager, config_to_text
from marco_oculomotor.utils.exporter import write_bytes_atomic
from marco_oculomotor.utils.logger import get_logger

from .models import EmbeddingStore

logger = get_logger(__name__)

STORE_MAGIC = "OBFEMB"
STORE_VERSION = "v1"
FLOAT_LE = np.dtype("<f4")


def _pack_text(value: str) -> bytes:
    data = value.encode("utf-8")
    if len(data) > 0xFFFF:
        raise GazeDataError(f"Identificador demasiado largo: {value[:32]}...")
    return struct.pack("<H", len(data)) + data


def encode_store(store: EmbeddingStore) -> bytes:
    """Serializa el almacén completo."""
    payload = io.BytesIO()
    for rec in store.records:
        payload.write(_pack_text(rec.participant_id))
        payload.write(_pack_text(rec.stimulus_id))
        payload.write(np.asarray(rec.vector, dtype=FLOAT_LE).tobytes())
    body = payload.getvalue()
    header = (
        f"{STORE_MAGIC} {STORE_VERSION} dim={store.dim} checksum={store.model_checksum or '-'} "
        f"count={len(store)} payload_crc={zlib.crc32(body):08x}\n"
    )
    return header.encode("ascii") + body


def decode_store(data: bytes, origin: str = "<store>") -> EmbeddingStore:
    """
    Reconstruye un almacén serializado.

    Raises:
        GazeDataError: Si la cabecera, el CRC o el número de registros no cuadran
    """
    newline = data.find(b"\n")
    if newline < 0:
        raise GazeDataError(f"{origin}: falta la cabecera")
    fields = data[:newline].decode("ascii", errors="replace").split()
    if len(fields) != 6 or fields[0] != STORE_MAGIC or fields[1] != STORE_VERSION:
        raise GazeDataError(f"{origin}: cabecera no reconocida")
    try:
        meta = dict(f.split("=", 1) for f in fields[2:])
        dim, count, crc = int(meta["dim"]), int(meta["count"]), int(meta["payload_crc"], 16)
        checksum = meta["checksum"]
    except (KeyError, ValueError) as e:
        raise GazeDataError(f"{origin}: cabecera inválida: {e}") from e
    body = data[newline + 1:]
    if zlib.crc32(body) != crc:
        raise GazeDataError(f"{origin}: CRC del contenido no coincide")

    store = EmbeddingStore(dim=dim, model_checksum="" if checksum == "-" else checksum)
    offset = 0
    width = dim * FLOAT_LE.itemsize

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(body):
            raise GazeDataError(f"{origin}: registro truncado")
        chunk = body[offset:offset + n]
        offset += n
        return chunk

    for _ in range(count):
        ids = []
        for _ in range(2):
            (length,) = struct.unpack("<H", take(2))
            ids.append(take(length).decode("utf-8"))
        vector = np.frombuffer(take(width), dtype=FLOAT_LE).astype(np.float32)
        store.append(ids[0], ids[1], vector)
    if offset != len(body):
        raise GazeDataError(f"{origin}: {len(body) - offset} bytes sobrantes tras {count} registros")
    return store


def save_embeddings(store: EmbeddingStore, path: str | Path) -> Path:
    """Escribe el almacén de forma atómica."""
    written = write_bytes_atomic(path, encode_store(store))
    logger.info(f"Almacén de {len(store)} embeddings ({store.dim}-d) escrito en {written}")
    return written


def load_embeddings(
    path: str | Path, expected_dim: int | None = None, expected_checksum: str | None = None
) -> EmbeddingStore:
    """
    Lee un almacén de embeddings.

    Raises:
        GazeDataError: Si el archivo está corrupto o no coincide la dimensión o la huella
    """
    path = Path(path)
    if not path.is_file():
        raise GazeDataError(f"No existe el almacén {path}")
    store = decode_store(path.read_bytes(), str(path))
    if expected_dim is not None and store.dim != expected_dim:
        raise GazeDataError(f"{path}: dimensión {store.dim}, se esperaba {expected_dim}")
    if expected_checksum is not None and store.model_checksum != expected_checksum:
        raise GazeDataError(f"{path}: huella de modelo {store.model_checksum}, se esperaba {expected_checksum}")
    return store


def encode_parameters(state: dict[str, torch.Tensor]) -> bytes:
    """Serializa un ``state_dict`` al formato de ``parameters.bin``."""
    out = io.BytesIO()
    out.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        values = tensor.detach().cpu().to(torch.float64).numpy().astype(FLOAT_LE)
        if values.ndim > 0xFF:
            raise GazeDataError(f"Parámetro {name} con demasiadas dimensiones")
        out.write(_pack_text(name))
        out.write(struct.pack(f"<B{values.ndim}I", values.ndim, *values.shape))
        out.write(np.ascontiguousarray(values).tobytes())
    return out.getvalue()


def decode_parameters(data: bytes, origin: str = "<parameters>") -> dict[str, torch.Tensor]:
    """
    Lee ``parameters.bin``.

    Raises:
        GazeDataError: Si el contenido está truncado o tiene bytes sobrantes
    """
    offset = 0

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise GazeDataError(f"{origin}: parámetros truncados")
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    state: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (length,) = struct.unpack("<H", take(2))
        name = take(length).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(take(n * FLOAT_LE.itemsize), dtype=FLOAT_LE).reshape(shape)
        state[name] = torch.from_numpy(values.astype(np.float32))
    if offset != len(data):
        raise GazeDataError(f"{origin}: {len(data) - offset} bytes sobrantes tras {count} parámetros")
    return state


def model_checksum(model: ObfModel) -> str:
    """Huella SHA-256 corta de los parámetros del modelo."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()[:16]


def save_checkpoint(model: ObfModel, config: AppConfig, path: str | Path) -> Path:
    """Guarda configuración y parámetros (float32) en un zip, de forma atómica."""
    archive = io.BytesIO()
    entries = {
        "config.txt": config_to_text(config).encode("utf-8"),
        "tasks.txt": (",".join(model.tasks) + "\n").encode("utf-8"),
        "parameters.bin": encode_parameters(model.state_dict()),
    }
    with zipfile.ZipFile(archive, "w") as zf:
        for name, data in entries.items():
            # Fecha fija: el mismo modelo produce el mismo archivo
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, data)
    written = write_bytes_atomic(path, archive.getvalue())
    logger.info(f"Checkpoint escrito en {written}")
    return written


def load_checkpoint(path: str | Path) -> tuple[ObfModel, AppConfig]:
    """
    Reconstruye el modelo guardado en modo evaluación.

    Raises:
        GazeDataError: Si el checkpoint no existe o está corrupto
    """
    path = Path(path)
    if not path.is_file():
        raise GazeDataError(f"No existe el checkpoint {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            config_text = zf.read("config.txt").decode("utf-8")
            tasks = [t for t in zf.read("tasks.txt").decode("utf-8").strip().split(",") if t]
            params = zf.read("parameters.bin")
    except (zipfile.BadZipFile, KeyError) as e:
        raise GazeDataError(f"Checkpoint corrupto {path}: {e}") from e

    try:
        config = ConfigManager.parse_text(config_text)
    except ConfigError as e:
        raise GazeDataError(f"Configuración corrupta en {path}: {e}") from e
    model = ObfModel(config.model, tasks)
    state = decode_parameters(params, f"{path}:parameters.bin")
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise GazeDataError(f"Parámetros incompatibles en {path}: {e}") from e
    model.eval()
    return model, config
