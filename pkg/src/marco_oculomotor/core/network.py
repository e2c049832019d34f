#!/usr/bin/env python3
"""
Red OBF - Marco Oculomotor
==========================

Codificador (bloque convolucional opcional + bloque secuencial) y los
cuatro decodificadores de las tareas de pre-entrenamiento:

- RC: reconstrucción del segmento de entrada
- PC: predicción de los siguientes 500 ms
- FI: identificación de fijaciones por muestra
- CL: cabeza siamesa que decide si dos segmentos vienen del mismo scanpath

El embedding de los backbones recurrentes concatena los estados ocultos
finales de todas las capas (y los de celda en LSTM). En el Transformer se
añade un marcador de fin de secuencia aprendido y se concatena su latente
en cada capa.
"""

import math
from collections.abc import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence

from marco_oculomotor.errors import GazeDataError, SegmentTooShortError, UsageError
from marco_oculomotor.utils.config import Backbone, ModelConfig

LEAKY_SLOPE = 0.01
RECURRENT = {Backbone.RNN: nn.RNN, Backbone.GRU: nn.GRU, Backbone.LSTM: nn.LSTM}


def pad_sequences(
    seqs: Sequence[np.ndarray], dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Rellena con ceros una lista de secuencias (t_i, d) hasta la más larga.

    Returns:
        (tensor (B, T, d), longitudes (B,))
    """
    if not seqs:
        raise GazeDataError("Lista de secuencias vacía")
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    width = np.asarray(seqs[0]).reshape(len(seqs[0]), -1).shape[1]
    out = torch.zeros((len(seqs), int(lengths.max()), width), dtype=dtype)
    for i, s in enumerate(seqs):
        arr = np.asarray(s, dtype=np.float64).reshape(len(s), -1)
        out[i, : len(s)] = torch.as_tensor(arr, dtype=dtype)
    return out, lengths


def length_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """Máscara booleana (B, T) verdadera en las posiciones válidas."""
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


def sinusoidal_encoding(length: int, dim: int, dtype: torch.dtype) -> torch.Tensor:
    """Codificación posicional sinusoidal (length, dim)."""
    position = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div)[:, : dim // 2]
    return pe.to(dtype)


class LearnedPool(nn.Conv1d):
    """
    Submuestreo temporal con una convolución de paso ``pool`` que parte
    de un average pooling exacto (pesos identidad/pool, sesgo 0).
    """

    def __init__(self, channels: int, pool: int):
        super().__init__(channels, channels, pool, stride=pool)
        self.reset_to_average()

    def reset_to_average(self) -> None:
        with torch.no_grad():
            self.weight.zero_()
            idx = torch.arange(self.out_channels)
            self.weight[idx, idx, :] = 1.0 / self.kernel_size[0]
            if self.bias is not None:
                self.bias.zero_()


def init_fan_in_uniform(module: nn.Module, generator: torch.Generator | None = None) -> None:
    """
    Inicializa los parámetros con U(−1/√fan_in, 1/√fan_in).

    Los sesgos usan el fan-in de la matriz de pesos de su capa. Las capas
    de normalización conservan su inicialización (escala 1, sesgo 0) y
    ``LearnedPool`` arranca como average pooling.
    """
    for m in module.modules():
        if isinstance(m, nn.BatchNorm1d | nn.LayerNorm | LearnedPool):
            continue
        own = list(m.parameters(recurse=False))
        weights = [p for p in own if p.dim() >= 2]
        layer_fan = weights[0].shape[1] * int(np.prod(weights[0].shape[2:])) if weights else None
        with torch.no_grad():
            for param in own:
                if param.dim() >= 2:
                    fan_in = param.shape[1] * int(np.prod(param.shape[2:]))
                else:
                    fan_in = layer_fan or param.numel()
                bound = 1.0 / math.sqrt(fan_in)
                param.uniform_(-bound, bound, generator=generator)


class ConvBlock(nn.Module):
    """
    Convolución 1-D con padding "same", leaky ReLU, residual con la entrada
    rellenada con ceros hasta ``channels`` canales y submuestreo por
    ``pool``: average pooling fijo o ``LearnedPool``.
    """

    def __init__(
        self,
        channels: int = 30,
        kernel: int = 7,
        pool: int = 2,
        in_channels: int = 2,
        learned_pool: bool = False,
    ):
        super().__init__()
        self.channels = channels
        self.kernel = kernel
        self.pool = pool
        self.in_channels = in_channels
        self.conv = nn.Conv1d(in_channels, channels, kernel, padding=kernel // 2)
        self.downsample = LearnedPool(channels, pool) if learned_pool else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """
        Args:
            x: Tensor (B, T, 2)

        Returns:
            Tensor (B, ⌊T/pool⌋, channels)
        """
        if x.shape[1] < self.kernel:
            raise SegmentTooShortError(
                f"Segmento de {x.shape[1]} muestras menor que el kernel ({self.kernel})"
            )
        z = x.transpose(1, 2)
        y = F.leaky_relu(self.conv(z), LEAKY_SLOPE)
        y = y + F.pad(z, (0, 0, 0, self.channels - self.in_channels))
        if self.downsample is not None:
            y = self.downsample(y)
        else:
            y = F.avg_pool1d(y, kernel_size=self.pool, stride=self.pool)
        return y.transpose(1, 2)

    def out_lengths(self, lengths: torch.Tensor) -> torch.Tensor:
        return torch.div(lengths, self.pool, rounding_mode="floor")


class ObfEncoder(nn.Module):
    """Codificador: bloque convolucional opcional y bloque secuencial."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.conv = (
            ConvBlock(cfg.conv_channels, cfg.conv_kernel, cfg.pool, learned_pool=cfg.learned_pool)
            if cfg.use_conv
            else None
        )
        in_size = cfg.conv_channels if cfg.use_conv else 2
        if cfg.backbone is Backbone.TRANSFORMER:
            self.input_proj = nn.Linear(in_size, cfg.hidden)
            self.eos = nn.Parameter(torch.empty(cfg.hidden))
            self.layers = nn.ModuleList(
                nn.TransformerEncoderLayer(
                    cfg.hidden, cfg.n_heads, cfg.ff_dim, dropout=0.0, batch_first=True
                )
                for _ in range(cfg.n_layers)
            )
        else:
            self.rnn = RECURRENT[cfg.backbone](
                in_size, cfg.hidden, num_layers=cfg.n_layers, batch_first=True
            )

    @property
    def min_length(self) -> int:
        """Longitud mínima de entrada admitida."""
        if self.conv is None:
            return 1
        return max(self.cfg.conv_kernel, self.cfg.pool)

    def forward(
        self, x: torch.Tensor, lengths: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Codifica un lote de segmentos.

        Args:
            x: Tensor (B, T, 2) rellenado con ceros
            lengths: Longitudes reales (B,); None si todas valen T

        Returns:
            (embeddings (B, D), latentes por paso (B, T', H), longitudes T')
        """
        if x.dim() != 3 or x.shape[2] != 2:
            raise GazeDataError(f"Forma de entrada inválida: {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise GazeDataError("Entrada no finita al codificador")
        if lengths is None:
            lengths = torch.full((x.shape[0],), x.shape[1], dtype=torch.long)
        lengths = lengths.to(torch.long).cpu()
        if int(lengths.min()) < self.min_length:
            raise SegmentTooShortError(
                f"Segmento de {int(lengths.min())} muestras; mínimo {self.min_length}"
            )

        h = x
        if self.conv is not None:
            h = self.conv(h)
            lengths = self.conv.out_lengths(lengths)

        if self.cfg.backbone is Backbone.TRANSFORMER:
            return self._forward_transformer(h, lengths)
        return self._forward_recurrent(h, lengths)

    def _forward_recurrent(
        self, h: torch.Tensor, lengths: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        packed = pack_padded_sequence(h, lengths, batch_first=True, enforce_sorted=False)
        out, state = self.rnn(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True)
        states = state if isinstance(state, tuple) else (state,)
        batch = h.shape[0]
        # (L, B, H) -> (B, L·H) por cada estado
        parts = [s.permute(1, 0, 2).reshape(batch, -1) for s in states]
        return torch.cat(parts, dim=1), out, lengths

    def _forward_transformer(
        self, h: torch.Tensor, lengths: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        batch, steps, _ = h.shape
        z = self.input_proj(h)
        z = torch.cat([z, z.new_zeros(batch, 1, z.shape[2])], dim=1)
        positions = torch.arange(steps + 1)
        eos_mask = (positions[None, :] == lengths[:, None]).to(z.device)
        z = torch.where(eos_mask[..., None], self.eos.to(z.dtype), z)
        z = z + sinusoidal_encoding(steps + 1, z.shape[2], z.dtype).to(z.device)
        padding = (positions[None, :] > lengths[:, None]).to(z.device)

        eos_latents = []
        for layer in self.layers:
            z = layer(z, src_key_padding_mask=padding)
            eos_latents.append(z[torch.arange(batch), lengths])
        return torch.cat(eos_latents, dim=1), z, lengths + 1


class RecurrentDecoder(nn.Module):
    """Decodificador recurrente inicializado con el embedding desagregado por capa."""

    def __init__(self, cfg: ModelConfig, out_size: int):
        super().__init__()
        self.cfg = cfg
        self.rnn = RECURRENT[cfg.backbone](2, cfg.hidden, num_layers=cfg.n_layers, batch_first=True)
        self.out = nn.Linear(cfg.hidden, out_size)

    def initial_state(self, e: torch.Tensor) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
        layers, hidden = self.cfg.n_layers, self.cfg.hidden
        if e.shape[1] != self.cfg.embedding_dim:
            raise ValueError(
                f"Embedding de dimensión {e.shape[1]}; se esperaba {self.cfg.embedding_dim}"
            )
        chunks = e.split(layers * hidden, dim=1)
        states = [c.reshape(e.shape[0], layers, hidden).permute(1, 0, 2).contiguous() for c in chunks]
        return (states[0], states[1]) if self.cfg.backbone is Backbone.LSTM else states[0]

    def consume(
        self, e: torch.Tensor, inputs: torch.Tensor, causal: bool = True,
        lengths: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Procesa una secuencia de entradas completa partiendo del embedding."""
        out, _ = self.rnn(inputs, self.initial_state(e))
        return self.out(out)

    def generate(self, e: torch.Tensor, steps: int) -> torch.Tensor:
        """Decodificación autorregresiva realimentando sus propias salidas."""
        state = self.initial_state(e)
        inp = e.new_zeros(e.shape[0], 1, 2)
        outputs = []
        for _ in range(steps):
            out, state = self.rnn(inp, state)
            y = self.out(out)
            outputs.append(y)
            inp = y
        return torch.cat(outputs, dim=1)


class TransformerDecoder(nn.Module):
    """Decodificador Transformer que atiende a los latentes de fin de secuencia."""

    def __init__(self, cfg: ModelConfig, out_size: int):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(2, cfg.hidden)
        self.layers = nn.TransformerDecoder(
            nn.TransformerDecoderLayer(
                cfg.hidden, cfg.n_heads, cfg.ff_dim, dropout=0.0, batch_first=True
            ),
            num_layers=cfg.n_layers,
        )
        self.out = nn.Linear(cfg.hidden, out_size)

    def _memory(self, e: torch.Tensor) -> torch.Tensor:
        if e.shape[1] != self.cfg.embedding_dim:
            raise ValueError(
                f"Embedding de dimensión {e.shape[1]}; se esperaba {self.cfg.embedding_dim}"
            )
        return e.reshape(e.shape[0], self.cfg.n_layers, self.cfg.hidden)

    def _run(
        self, e: torch.Tensor, inputs: torch.Tensor, causal: bool,
        lengths: torch.Tensor | None = None,
    ) -> torch.Tensor:
        steps = inputs.shape[1]
        z = self.input_proj(inputs) + sinusoidal_encoding(steps, self.cfg.hidden, inputs.dtype).to(
            inputs.device
        )
        mask = None
        if causal:
            mask = torch.triu(
                torch.full((steps, steps), float("-inf"), dtype=inputs.dtype, device=inputs.device),
                diagonal=1,
            )
        padding = None
        if lengths is not None:
            padding = ~length_mask(lengths.to(inputs.device), steps)
        return self.out(
            self.layers(z, self._memory(e), tgt_mask=mask, tgt_key_padding_mask=padding)
        )

    def consume(
        self, e: torch.Tensor, inputs: torch.Tensor, causal: bool = False,
        lengths: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return self._run(e, inputs, causal, lengths)

    def generate(self, e: torch.Tensor, steps: int) -> torch.Tensor:
        inputs = e.new_zeros(e.shape[0], 1, 2)
        outputs = []
        for _ in range(steps):
            y = self._run(e, inputs, causal=True)[:, -1:]
            outputs.append(y)
            inputs = torch.cat([inputs, y], dim=1)
        return torch.cat(outputs, dim=1)


class ClHead(nn.Module):
    """MLP siamés sobre |e1 − e2|: lineal, sigmoide, batch norm y salida sigmoide."""

    def __init__(self, dim: int, hidden: int = 128):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.Sigmoid(),
            nn.BatchNorm1d(hidden),
            nn.Linear(hidden, 1),
            nn.Sigmoid(),
        )

    def forward(self, e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
        if e1.shape != e2.shape or e1.shape[-1] != self.dim:
            raise ValueError(
                f"Dimensiones incompatibles: {tuple(e1.shape)} y {tuple(e2.shape)}"
            )
        return self.net(torch.abs(e1 - e2)).squeeze(-1)


class ObfModel(nn.Module):
    """Codificador OBF con los decodificadores de las tareas habilitadas."""

    TASKS = ("rc", "pc", "fi", "cl")

    def __init__(self, cfg: ModelConfig, tasks: Sequence[str] = TASKS):
        super().__init__()
        # Se toma antes de construir los submódulos; cada componente tiene su generador
        base_seed = int(torch.randint(0, 2**31 - 1, (1,)).item())
        unknown = set(tasks) - set(self.TASKS)
        if unknown:
            raise UsageError(f"Tareas desconocidas: {sorted(unknown)}")
        self.cfg = cfg
        self.tasks = tuple(t for t in self.TASKS if t in tasks)
        self.encoder = ObfEncoder(cfg)
        decoder_cls = TransformerDecoder if cfg.backbone is Backbone.TRANSFORMER else RecurrentDecoder
        decoders: dict[str, nn.Module] = {}
        for task in self.tasks:
            if task == "cl":
                decoders[task] = ClHead(cfg.embedding_dim, cfg.cl_hidden)
            else:
                decoders[task] = decoder_cls(cfg, out_size=1 if task == "fi" else 2)
        self.decoders = nn.ModuleDict(decoders)

        init_fan_in_uniform(self.encoder, torch.Generator().manual_seed(base_seed))
        for task, decoder in self.decoders.items():
            offset = 1 + self.TASKS.index(task)
            init_fan_in_uniform(decoder, torch.Generator().manual_seed(base_seed + offset))

    @property
    def embedding_dim(self) -> int:
        return self.cfg.embedding_dim

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _decoder(self, task: str) -> nn.Module:
        if task not in self.decoders:
            raise UsageError(f"La tarea {task} está deshabilitada en este modelo")
        return self.decoders[task]

    def encode(
        self, x: torch.Tensor, lengths: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Codifica un lote.

        Returns:
            (embeddings (B, D), latentes por paso)
        """
        emb, latents, _ = self.encoder(x, lengths)
        return emb, latents

    def decode_rc(self, e: torch.Tensor, t: int, teacher: torch.Tensor | None = None) -> torch.Tensor:
        """
        Reconstruye t pasos. Con ``teacher`` usa teacher forcing: la entrada
        del paso k es teacher[k−1] y la del paso 0 un vector nulo. Sin él,
        realimenta sus propias salidas.
        """
        return self._decode_sequence("rc", e, t, teacher)

    def decode_pc(self, e: torch.Tensor, t: int, teacher: torch.Tensor | None = None) -> torch.Tensor:
        """Predice los t pasos siguientes al segmento codificado."""
        return self._decode_sequence("pc", e, t, teacher)

    def _decode_sequence(
        self, task: str, e: torch.Tensor, t: int, teacher: torch.Tensor | None
    ) -> torch.Tensor:
        decoder = self._decoder(task)
        if teacher is None:
            return decoder.generate(e, t)
        if teacher.shape[1] != t:
            raise ValueError(f"Teacher de longitud {teacher.shape[1]}; se esperaba {t}")
        inputs = torch.cat([teacher.new_zeros(teacher.shape[0], 1, 2), teacher[:, :-1]], dim=1)
        return decoder.consume(e, inputs, causal=True)

    def decode_fi(
        self, e: torch.Tensor, x: torch.Tensor, lengths: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Probabilidad de fijación por muestra, consumiendo las coordenadas crudas."""
        decoder = self._decoder("fi")
        if x.shape[0] != e.shape[0]:
            raise ValueError("Lote de embeddings y de segmentos con tamaños distintos")
        if lengths is not None and int(lengths.max()) > x.shape[1]:
            raise ValueError("Longitudes mayores que el segmento")
        logits = decoder.consume(e, x, causal=False, lengths=lengths)
        return torch.sigmoid(logits.squeeze(-1))

    def cl_head(self, e1: torch.Tensor, e2: torch.Tensor) -> torch.Tensor:
        """Probabilidad de que dos segmentos provengan del mismo scanpath."""
        return self._decoder("cl")(e1, e2)


def count_encoder_parameters(model: ObfModel) -> int:
    """Número de parámetros entrenables del codificador."""
    return sum(p.numel() for p in model.encoder.parameters())
