#!/usr/bin/env python3
"""
Tests para el almacén de embeddings y los checkpoints.
"""

import zipfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from marco_oculomotor.core.network import ObfModel
from marco_oculomotor.data.models import EmbeddingStore
from marco_oculomotor.data.storage import (
    decode_parameters,
    decode_store,
    encode_parameters,
    encode_store,
    load_checkpoint,
    load_embeddings,
    model_checksum,
    save_checkpoint,
    save_embeddings,
)
from marco_oculomotor.errors import GazeDataError
from marco_oculomotor.utils.config import AppConfig, ModelConfig


@pytest.fixture
def store() -> EmbeddingStore:
    rng = np.random.default_rng(0)
    store = EmbeddingStore(dim=4, model_checksum="abc123")
    store.append("p000", "s000", rng.normal(size=4))
    store.append("p001", "s000#2", rng.normal(size=4))
    store.append("pñ", "estímulo", rng.normal(size=4))
    return store


def test_store_encode_decode(store: EmbeddingStore):
    decoded = decode_store(encode_store(store))
    assert decoded.dim == 4 and decoded.model_checksum == "abc123"
    assert [(r.participant_id, r.stimulus_id) for r in decoded.records] == [
        ("p000", "s000"), ("p001", "s000#2"), ("pñ", "estímulo"),
    ]
    np.testing.assert_array_equal(decoded.matrix(), store.matrix())


def test_store_header_is_text(store: EmbeddingStore):
    header = encode_store(store).split(b"\n", 1)[0].decode("ascii")
    assert header.startswith("OBFEMB v1 dim=4 checksum=abc123 count=3 payload_crc=")


def test_store_detects_corruption(store: EmbeddingStore):
    data = bytearray(encode_store(store))
    data[-1] ^= 0xFF
    with pytest.raises(GazeDataError, match="CRC"):
        decode_store(bytes(data))
    with pytest.raises(GazeDataError):
        decode_store(b"sin cabecera")
    with pytest.raises(GazeDataError):
        decode_store(b"OTRO v1 dim=4 checksum=- count=0 payload_crc=0\n")


def test_store_rejects_wrong_dimension(store: EmbeddingStore):
    with pytest.raises(GazeDataError):
        store.append("p002", "s001", np.zeros(5))


def test_load_embeddings_checks(tmp_path: Path, store: EmbeddingStore):
    path = save_embeddings(store, tmp_path / "emb.bin")
    assert len(load_embeddings(path, expected_dim=4, expected_checksum="abc123")) == 3
    with pytest.raises(GazeDataError):
        load_embeddings(path, expected_dim=8)
    with pytest.raises(GazeDataError):
        load_embeddings(path, expected_checksum="otro")
    with pytest.raises(GazeDataError):
        load_embeddings(tmp_path / "falta.bin")


def test_empty_store_round_trip():
    decoded = decode_store(encode_store(EmbeddingStore(dim=3)))
    assert len(decoded) == 0 and decoded.model_checksum == ""
    assert decoded.matrix().shape == (0, 3)


def test_checkpoint_round_trip(tmp_path: Path, tiny_model_config: ModelConfig):
    """El modelo recargado produce los mismos embeddings y la misma huella."""
    torch.manual_seed(0)
    model = ObfModel(tiny_model_config, ("rc", "fi")).eval()
    config = replace(AppConfig(), model=tiny_model_config)
    path = save_checkpoint(model, config, tmp_path / "model.ckpt")
    loaded, loaded_config = load_checkpoint(path)
    assert loaded.tasks == ("rc", "fi")
    assert loaded_config.model == tiny_model_config
    assert model_checksum(loaded) == model_checksum(model)
    x = torch.randn(2, 30, 2)
    with torch.no_grad():
        torch.testing.assert_close(loaded.encode(x)[0], model.encode(x)[0])


def test_checkpoint_bytes_are_stable(tmp_path: Path, tiny_model_config: ModelConfig):
    torch.manual_seed(0)
    model = ObfModel(tiny_model_config)
    config = replace(AppConfig(), model=tiny_model_config)
    a = save_checkpoint(model, config, tmp_path / "a.ckpt").read_bytes()
    b = save_checkpoint(model, config, tmp_path / "b.ckpt").read_bytes()
    assert a == b


def test_checkpoint_errors(tmp_path: Path):
    with pytest.raises(GazeDataError):
        load_checkpoint(tmp_path / "falta.ckpt")
    broken = tmp_path / "roto.ckpt"
    broken.write_bytes(b"no es un zip")
    with pytest.raises(GazeDataError):
        load_checkpoint(broken)


def _read_parameters_with_numpy(data: bytes) -> dict[str, np.ndarray]:
    """Lector independiente de torch del formato documentado."""
    offset = 4
    count = int(np.frombuffer(data, dtype="<u4", count=1)[0])
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        length = int(np.frombuffer(data, dtype="<u2", count=1, offset=offset)[0])
        offset += 2
        name = data[offset:offset + length].decode("utf-8")
        offset += length
        rank = int(np.frombuffer(data, dtype="u1", count=1, offset=offset)[0])
        offset += 1
        shape = tuple(int(d) for d in np.frombuffer(data, dtype="<u4", count=rank, offset=offset))
        offset += 4 * rank
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
    assert offset == len(data)
    return arrays


def test_checkpoint_parameters_are_plain_float32(tmp_path: Path, tiny_model_config: ModelConfig):
    """``parameters.bin`` se lee sin torch: nombres, formas y valores float32."""
    torch.manual_seed(0)
    model = ObfModel(tiny_model_config, ("rc", "cl")).eval()
    config = replace(AppConfig(), model=tiny_model_config)
    path = save_checkpoint(model, config, tmp_path / "model.ckpt")
    with zipfile.ZipFile(path) as zf:
        arrays = _read_parameters_with_numpy(zf.read("parameters.bin"))

    state = model.state_dict()
    assert list(arrays) == list(state)
    for name, tensor in state.items():
        assert arrays[name].shape == tuple(tensor.shape)
        np.testing.assert_array_equal(arrays[name], tensor.detach().numpy().astype(np.float32))


def test_float64_model_is_saved_in_32_bits(tmp_path: Path, tiny_model_config: ModelConfig):
    torch.manual_seed(0)
    model = ObfModel(tiny_model_config, ("rc",)).double().eval()
    config = replace(AppConfig(), model=tiny_model_config)
    path = save_checkpoint(model, config, tmp_path / "model.ckpt")
    with zipfile.ZipFile(path) as zf:
        arrays = _read_parameters_with_numpy(zf.read("parameters.bin"))
    assert all(a.dtype == np.dtype("<f4") for a in arrays.values())

    loaded, _ = load_checkpoint(path)
    assert all(p.dtype == torch.float32 for p in loaded.parameters())
    x = torch.randn(2, 30, 2)
    with torch.no_grad():
        torch.testing.assert_close(loaded.encode(x)[0], model.encode(x.double())[0].float(), atol=1e-5, rtol=1e-5)


def test_truncated_parameters_are_rejected(tmp_path: Path, tiny_model_config: ModelConfig):
    torch.manual_seed(0)
    model = ObfModel(tiny_model_config, ("rc",))
    data = encode_parameters(model.state_dict())
    assert set(decode_parameters(data)) == set(model.state_dict())
    with pytest.raises(GazeDataError, match="truncados"):
        decode_parameters(data[:-3])
    with pytest.raises(GazeDataError, match="sobrantes"):
        decode_parameters(data + b"\x00")
