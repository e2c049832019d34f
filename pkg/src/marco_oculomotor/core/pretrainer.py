#!/usr/bin/env python3
"""
Pre-entrenamiento - Marco Oculomotor
====================================

Muestreo de segmentos, ensamblado de lotes de una sola fuente, bucle de
optimización con las cuatro tareas auto-supervisadas, métricas de
validación y comprobación de gradientes por diferencias finitas.
"""

import math
from collections import defaultdict
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.metrics import roc_auc_score

from marco_oculomotor.data.models import ClPair, EpochLog, PretaskMetrics, Scanpath, SegmentPair
from marco_oculomotor.errors import GazeDataError, SegmentTooShortError, UsageError
from marco_oculomotor.utils.config import AugmentConfig, ModelConfig, PretrainConfig
from marco_oculomotor.utils.logger import get_logger

from .fixation import balanced_mask, ivt_labels
from .gaze import augment_points, ms_to_samples
from .losses import loss_cl, loss_fi, loss_pc, loss_rc, total_loss
from .network import ObfModel, pad_sequences

logger = get_logger(__name__)


@dataclass(frozen=True)
class SegmentBounds:
    """Longitudes de segmento en muestras a 60 Hz."""
    min_len: int
    max_len: int
    horizon: int

    @property
    def required(self) -> int:
        """Longitud mínima de scanpath para extraer un par."""
        return self.min_len + self.horizon


def segment_bounds(cfg: PretrainConfig) -> SegmentBounds:
    """Convierte los rangos temporales de la configuración a muestras."""
    return SegmentBounds(
        min_len=ms_to_samples(cfg.input_len_s[0] * 1000.0),
        max_len=ms_to_samples(cfg.input_len_s[1] * 1000.0),
        horizon=ms_to_samples(cfg.pc_horizon_ms),
    )


def sample_segment_pair(
    sp: Scanpath,
    cfg: PretrainConfig,
    rng: np.random.Generator,
    augment_cfg: AugmentConfig | None = None,
) -> SegmentPair:
    """
    Extrae un segmento de entrada y su continuación inmediata.

    La longitud t es uniforme en [300, min(600, n − 30)] y el inicio
    uniforme. El aumento se aplica a toda la ventana antes de calcular las
    etiquetas I-VT, de modo que coinciden con la entrada tensorizada.

    Raises:
        SegmentTooShortError: Si el scanpath tiene menos de 330 muestras
    """
    bounds = segment_bounds(cfg)
    n = len(sp)
    if n < bounds.required:
        raise SegmentTooShortError(
            f"Scanpath de {n} muestras; se necesitan al menos {bounds.required}"
        )
    t = int(rng.integers(bounds.min_len, min(bounds.max_len, n - bounds.horizon) + 1))
    start = int(rng.integers(0, n - t - bounds.horizon + 1))
    window = sp.points[start:start + t + bounds.horizon]
    if augment_cfg is not None:
        window = augment_points(window, augment_cfg, rng)
    x = window[:t]
    fi = ivt_labels(x, cfg.vt_degps, cfg.min_fix_ms)
    return SegmentPair(
        x=x,
        x_next=window[t:],
        fi=fi,
        mask=balanced_mask(fi, rng),
        source_tag=sp.source_tag,
        start=start,
    )


def cl_segment(
    sp: Scanpath, cfg: PretrainConfig, rng: np.random.Generator, avoid_start: int | None = None
) -> tuple[np.ndarray, int]:
    """Segmento de entre el 20 % y el 40 % del scanpath; devuelve (puntos, inicio)."""
    n = len(sp)
    lo = math.ceil(cfg.cl_frac[0] * n)
    hi = max(lo, math.floor(cfg.cl_frac[1] * n))
    length = int(rng.integers(lo, hi + 1))
    n_starts = n - length + 1
    if avoid_start is not None and n_starts > 1:
        start = int(rng.integers(0, n_starts - 1))
        if start >= avoid_start:
            start += 1
    else:
        start = int(rng.integers(0, n_starts))
    return sp.points[start:start + length], start


def sample_cl_pairs(
    batch: Sequence[Scanpath],
    cfg: PretrainConfig,
    rng: np.random.Generator,
    n_pairs: int | None = None,
    augment_cfg: AugmentConfig | None = None,
) -> list[ClPair]:
    """
    Genera pares contrastivos a partir de un lote de una sola fuente.

    La mitad de los pares (redondeando hacia arriba) son positivos: dos
    segmentos con inicios distintos del mismo scanpath. El resto son
    negativos: segmentos de dos scanpaths distintos. Cada segmento mide
    entre el 20 % y el 40 % de su scanpath.

    Raises:
        UsageError: Si el lote tiene menos de 2 scanpaths o mezcla fuentes
    """
    if len(batch) < 2:
        raise UsageError("Se necesitan al menos 2 scanpaths para la tarea contrastiva")
    sources = {sp.source_tag for sp in batch}
    if len(sources) != 1:
        raise UsageError(f"Lote con fuentes mezcladas: {sorted(sources)}")

    n_pairs = len(batch) if n_pairs is None else n_pairs
    labels = np.array([1] * ((n_pairs + 1) // 2) + [0] * (n_pairs // 2))
    rng.shuffle(labels)

    pairs = []
    for same in labels:
        if same:
            sp = batch[int(rng.integers(0, len(batch)))]
            x1, start = cl_segment(sp, cfg, rng)
            x2, _ = cl_segment(sp, cfg, rng, avoid_start=start)
        else:
            i, j = rng.choice(len(batch), size=2, replace=False)
            x1, _ = cl_segment(batch[int(i)], cfg, rng)
            x2, _ = cl_segment(batch[int(j)], cfg, rng)
        if augment_cfg is not None:
            x1 = augment_points(x1, augment_cfg, rng)
            x2 = augment_points(x2, augment_cfg, rng)
        pairs.append(ClPair(x1=x1, x2=x2, same=int(same)))
    return pairs


def learning_rate_at(epoch: int, cfg: PretrainConfig) -> float:
    """Tasa de aprendizaje de la época (base 1), dividida a la mitad cada N épocas."""
    return cfg.lr * 0.5 ** ((epoch - 1) // cfg.lr_halving_every)


def split_train_val(
    scanpaths: Sequence[Scanpath], train_frac: float, rng: np.random.Generator
) -> tuple[list[Scanpath], list[Scanpath]]:
    """Partición aleatoria por scanpath en entrenamiento y validación."""
    order = rng.permutation(len(scanpaths))
    n_train = int(round(train_frac * len(scanpaths)))
    if len(scanpaths) >= 2:
        n_train = min(max(n_train, 1), len(scanpaths) - 1)
    else:
        n_train = len(scanpaths)
    train = [scanpaths[i] for i in order[:n_train]]
    val = [scanpaths[i] for i in order[n_train:]]
    return train, val


def make_batches(
    scanpaths: Sequence[Scanpath], batch_size: int, rng: np.random.Generator
) -> list[list[Scanpath]]:
    """
    Agrupa los scanpaths por fuente y los reparte en lotes de una sola fuente.

    Cada fuente se baraja y se divide en ⌈n/batch⌉ lotes de tamaño similar;
    el orden final de los lotes también se baraja.
    """
    by_source: dict[str, list[Scanpath]] = defaultdict(list)
    for sp in scanpaths:
        by_source[sp.source_tag].append(sp)
    batches: list[list[Scanpath]] = []
    for tag in sorted(by_source):
        group = by_source[tag]
        order = rng.permutation(len(group))
        n_chunks = math.ceil(len(group) / batch_size)
        for chunk in np.array_split(order, n_chunks):
            batches.append([group[i] for i in chunk])
    return [batches[i] for i in rng.permutation(len(batches))]


def batch_losses(
    model: ObfModel,
    pairs: Sequence[SegmentPair],
    cl_pairs: Sequence[ClPair] = (),
) -> dict[str, torch.Tensor]:
    """
    Pérdidas de las tareas habilitadas en el modelo para un lote.

    RC y PC usan teacher forcing. La tarea CL sólo se evalúa con al menos
    dos pares (la normalización por lotes lo exige en entrenamiento).
    """
    dtype = model.dtype
    x, lengths = pad_sequences([p.x for p in pairs], dtype)
    e, _ = model.encode(x, lengths)
    parts: dict[str, torch.Tensor] = {}
    if "rc" in model.tasks:
        parts["rc"] = loss_rc(model.decode_rc(e, x.shape[1], teacher=x), x, lengths)
    if "pc" in model.tasks:
        x_next, next_lengths = pad_sequences([p.x_next for p in pairs], dtype)
        pred = model.decode_pc(e, x_next.shape[1], teacher=x_next)
        parts["pc"] = loss_pc(pred, x_next, next_lengths)
    if "fi" in model.tasks:
        fi, _ = pad_sequences([p.fi for p in pairs], dtype)
        mask, _ = pad_sequences([p.mask for p in pairs], dtype)
        probs = model.decode_fi(e, x, lengths)
        parts["fi"] = loss_fi(probs, fi.squeeze(-1), mask.squeeze(-1))
    if "cl" in model.tasks and len(cl_pairs) >= 2:
        x1, l1 = pad_sequences([p.x1 for p in cl_pairs], dtype)
        x2, l2 = pad_sequences([p.x2 for p in cl_pairs], dtype)
        e1, _ = model.encode(x1, l1)
        e2, _ = model.encode(x2, l2)
        same = torch.tensor([p.same for p in cl_pairs], dtype=dtype)
        parts["cl"] = loss_cl(model.cl_head(e1, e2), same)
    return parts


class Pretrainer:
    """Entrenador conjunto del codificador y los cuatro decodificadores."""

    def __init__(
        self,
        model_cfg: ModelConfig,
        pretrain_cfg: PretrainConfig,
        augment_cfg: AugmentConfig | None = None,
        on_epoch: Callable[[EpochLog], None] | None = None,
    ):
        """
        Inicializa el entrenador.

        Args:
            model_cfg: Arquitectura del modelo
            pretrain_cfg: Hiperparámetros de entrenamiento
            augment_cfg: Aumentos, usados sólo si ``pretrain_cfg.augment``
            on_epoch: Callback invocado con el registro de cada época
        """
        model_cfg.validate()
        pretrain_cfg.validate()
        self.model_cfg = model_cfg
        self.cfg = pretrain_cfg
        self.augment_cfg = augment_cfg if pretrain_cfg.augment else None
        self.on_epoch = on_epoch
        self.bounds = segment_bounds(pretrain_cfg)
        self.batch_sources: list[str] = []
        self.model: ObfModel | None = None

    def _prepare_corpus(self, corpus: Sequence[Scanpath]) -> list[Scanpath]:
        excluded = set(self.cfg.exclude_sources)
        kept = [sp for sp in corpus if sp.source_tag not in excluded]
        if excluded:
            logger.info(f"Fuentes excluidas: {sorted(excluded)}; quedan {len(kept)} scanpaths")
        usable = [sp for sp in kept if len(sp) >= self.bounds.required]
        if len(usable) < len(kept):
            logger.warning(
                f"Omitidos {len(kept) - len(usable)} scanpaths con menos de "
                f"{self.bounds.required} muestras"
            )
        if not usable:
            raise GazeDataError("Corpus vacío tras filtrar por longitud y fuentes")
        return usable

    def _make_optimizer(self, model: ObfModel) -> torch.optim.Optimizer:
        if self.cfg.optimizer == "adam":
            return torch.optim.Adam(model.parameters(), lr=self.cfg.lr)
        return torch.optim.SGD(model.parameters(), lr=self.cfg.lr)

    def train(self, corpus: Sequence[Scanpath]) -> tuple[ObfModel, list[EpochLog]]:
        """
        Pre-entrena un modelo nuevo sobre el corpus.

        Args:
            corpus: Scanpaths canónicos, posiblemente de varias fuentes

        Returns:
            (modelo entrenado, registro por época)
        """
        scanpaths = self._prepare_corpus(corpus)
        seeds = np.random.SeedSequence(self.cfg.seed).spawn(4)
        split_rng, batch_rng, seg_rng, cl_rng = (np.random.default_rng(s) for s in seeds)

        torch.manual_seed(self.cfg.seed)
        model = ObfModel(self.model_cfg, self.cfg.active_tasks)
        self.model = model
        optimizer = self._make_optimizer(model)
        weights = {t: self.cfg.weight(t) for t in ObfModel.TASKS}

        train_set, val_set = split_train_val(scanpaths, self.cfg.train_frac, split_rng)
        logger.info(
            f"Pre-entrenamiento: {len(train_set)} scanpaths de entrenamiento, "
            f"{len(val_set)} de validación, tareas {list(model.tasks)}, "
            f"optimizador {self.cfg.optimizer}"
        )

        history: list[EpochLog] = []
        for epoch in range(1, self.cfg.epochs + 1):
            lr = learning_rate_at(epoch, self.cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr

            model.train()
            sums: dict[str, float] = defaultdict(float)
            counts: dict[str, int] = defaultdict(int)
            for batch in make_batches(train_set, self.cfg.batch, batch_rng):
                self.batch_sources.append(batch[0].source_tag)
                parts = self._step(model, optimizer, batch, weights, seg_rng, cl_rng)
                for task, value in parts.items():
                    sums[task] += value
                    counts[task] += 1

            losses: dict[str, float | None] = {
                t: (sums[t] / counts[t] if counts[t] else None) for t in ObfModel.TASKS
            }
            val = PretaskMetrics()
            if val_set and (epoch % self.cfg.eval_every == 0 or epoch == self.cfg.epochs):
                val_rng = np.random.default_rng([self.cfg.seed, 1])
                val = evaluate_pretasks(model, val_set, self.cfg, val_rng)

            log = EpochLog(epoch=epoch, lr=lr, losses=losses, val=val)
            history.append(log)
            logger.info(
                f"Época {epoch}/{self.cfg.epochs} lr={lr:.6g} "
                + " ".join(f"{t}={v:.4f}" for t, v in losses.items() if v is not None)
            )
            if self.on_epoch:
                self.on_epoch(log)

        model.eval()
        return model, history

    def _step(
        self,
        model: ObfModel,
        optimizer: torch.optim.Optimizer,
        batch: list[Scanpath],
        weights: dict[str, float],
        seg_rng: np.random.Generator,
        cl_rng: np.random.Generator,
    ) -> dict[str, float]:
        """Un paso de optimización sobre un lote de una sola fuente."""
        pairs = [sample_segment_pair(sp, self.cfg, seg_rng, self.augment_cfg) for sp in batch]
        cl_pairs: list[ClPair] = []
        if "cl" in model.tasks:
            if len(batch) >= 2:
                cl_pairs = sample_cl_pairs(batch, self.cfg, cl_rng, augment_cfg=self.augment_cfg)
            else:
                logger.debug(f"Lote de un solo scanpath en {batch[0].source_tag}; sin pares CL")

        parts = batch_losses(model, pairs, cl_pairs)
        loss = total_loss(parts, weights)
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_value_(model.parameters(), self.cfg.grad_clip)
        optimizer.step()
        logger.debug(f"Lote {batch[0].source_tag} ({len(batch)}): pérdida {float(loss):.4f}")
        return {task: float(value.detach()) for task, value in parts.items()}


@dataclass
class PretaskPredictions:
    """Predicciones del modelo sobre un conjunto de validación."""
    rc: list[np.ndarray] | None = None
    pc: list[np.ndarray] | None = None
    fi: list[np.ndarray] | None = None
    cl: np.ndarray | None = None
    cl_labels: np.ndarray = field(default_factory=lambda: np.zeros(0))


def collect_predictions(
    model: ObfModel, pairs: Sequence[SegmentPair], cl_pairs: Sequence[ClPair] = ()
) -> PretaskPredictions:
    """Predicciones autorregresivas (sin teacher forcing) en modo evaluación."""
    was_training = model.training
    model.eval()
    dtype = model.dtype
    preds = PretaskPredictions(cl_labels=np.array([p.same for p in cl_pairs]))
    with torch.no_grad():
        if pairs:
            x, lengths = pad_sequences([p.x for p in pairs], dtype)
            e, _ = model.encode(x, lengths)
            if "rc" in model.tasks:
                recon = model.decode_rc(e, x.shape[1]).numpy()
                preds.rc = [recon[i, : len(p.x)] for i, p in enumerate(pairs)]
            if "pc" in model.tasks:
                horizon = max(len(p.x_next) for p in pairs)
                pred = model.decode_pc(e, horizon).numpy()
                preds.pc = [pred[i, : len(p.x_next)] for i, p in enumerate(pairs)]
            if "fi" in model.tasks:
                probs = model.decode_fi(e, x, lengths).numpy()
                preds.fi = [probs[i, : len(p.x)] for i, p in enumerate(pairs)]
        if "cl" in model.tasks and cl_pairs:
            x1, l1 = pad_sequences([p.x1 for p in cl_pairs], dtype)
            x2, l2 = pad_sequences([p.x2 for p in cl_pairs], dtype)
            preds.cl = model.cl_head(model.encode(x1, l1)[0], model.encode(x2, l2)[0]).numpy()
    model.train(was_training)
    return preds


def mean_distance(preds: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> float:
    """Media sobre muestras de la distancia euclídea media por instante."""
    per_sample = [
        float(np.mean(np.linalg.norm(np.asarray(p) - np.asarray(t), axis=1)))
        for p, t in zip(preds, targets, strict=True)
    ]
    return float(np.mean(per_sample))


def score_pretasks(
    pairs: Sequence[SegmentPair],
    preds: PretaskPredictions,
) -> PretaskMetrics:
    """
    Calcula las métricas de validación a partir de predicciones.

    La AUC de FI usa todos los instantes etiquetados; si sólo hay una
    clase queda indefinida (None).
    """
    metrics = PretaskMetrics()
    if preds.rc is not None and pairs:
        metrics.rc_dist_deg = mean_distance(preds.rc, [p.x for p in pairs])
    if preds.pc is not None and pairs:
        metrics.pc_dist_deg = mean_distance(preds.pc, [p.x_next for p in pairs])
    if preds.fi is not None and pairs:
        labels = np.concatenate([p.fi for p in pairs])
        scores = np.concatenate(preds.fi)
        if np.unique(labels).size == 2:
            metrics.fi_auc = float(roc_auc_score(labels, scores))
    if preds.cl is not None and preds.cl_labels.size:
        metrics.cl_acc = float(np.mean((preds.cl >= 0.5).astype(int) == preds.cl_labels))
    return metrics


def validation_pairs(
    valset: Sequence[Scanpath], cfg: PretrainConfig, rng: np.random.Generator
) -> tuple[list[SegmentPair], list[ClPair]]:
    """Un par de segmentos por scanpath y pares CL balanceados por fuente."""
    bounds = segment_bounds(cfg)
    usable = [sp for sp in valset if len(sp) >= bounds.required]
    pairs = [sample_segment_pair(sp, cfg, rng) for sp in usable]
    by_source: dict[str, list[Scanpath]] = defaultdict(list)
    for sp in usable:
        by_source[sp.source_tag].append(sp)
    cl_pairs: list[ClPair] = []
    for tag in sorted(by_source):
        group = by_source[tag]
        if len(group) >= 2:
            cl_pairs.extend(sample_cl_pairs(group, cfg, rng, n_pairs=max(2, len(group))))
    return pairs, cl_pairs


def evaluate_pretasks(
    model: ObfModel,
    valset: Sequence[Scanpath],
    cfg: PretrainConfig,
    rng: np.random.Generator,
) -> PretaskMetrics:
    """
    Métricas de validación: distancias RC/PC en grados, AUC de FI y
    exactitud de CL con umbral 0,5.

    Raises:
        GazeDataError: Si el conjunto de validación está vacío
    """
    if not valset:
        raise GazeDataError("Conjunto de validación vacío")
    pairs, cl_pairs = validation_pairs(valset, cfg, rng)
    return score_pretasks(pairs, collect_predictions(model, pairs, cl_pairs))


def educated_guess(pairs: Sequence[SegmentPair]) -> PretaskMetrics:
    """
    Línea base que predice siempre el punto medio del conjunto y azar en
    las tareas de clasificación.
    """
    if not pairs:
        raise GazeDataError("Sin pares para la línea base")
    center = np.concatenate([p.x for p in pairs]).mean(axis=0)
    return PretaskMetrics(
        rc_dist_deg=mean_distance([np.broadcast_to(center, p.x.shape) for p in pairs],
                                  [p.x for p in pairs]),
        pc_dist_deg=mean_distance([np.broadcast_to(center, p.x_next.shape) for p in pairs],
                                  [p.x_next for p in pairs]),
        fi_auc=0.5,
        cl_acc=0.5,
    )


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.nn.Parameter],
    n_checks: int = 50,
    eps: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """
    Compara el gradiente analítico con diferencias centrales.

    Args:
        loss_fn: Función sin argumentos que devuelve la pérdida escalar
        params: Parámetros a comprobar
        n_checks: Número de coordenadas elegidas al azar
        eps: Paso de la diferencia central
        seed: Semilla de la elección de coordenadas
        floor: Cota inferior del denominador del error relativo

    Returns:
        Máximo error relativo |a − n| / max(floor, |a| + |n|)
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [
        (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for p in params
    ]

    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    chosen = rng.choice(int(offsets[-1]), size=min(n_checks, int(offsets[-1])), replace=False)

    worst = 0.0
    with torch.no_grad():
        for flat in chosen:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            idx = int(flat - offsets[k])
            view = params[k].view(-1)
            original = float(view[idx])
            view[idx] = original + eps
            plus = float(loss_fn())
            view[idx] = original - eps
            minus = float(loss_fn())
            view[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = float(analytic[k].view(-1)[idx])
            worst = max(worst, abs(a - numeric) / max(floor, abs(a) + abs(numeric)))
    return worst


def grad_check(
    model: ObfModel,
    pairs: Sequence[SegmentPair],
    cl_pairs: Sequence[ClPair] = (),
    weights: dict[str, float] | None = None,
    n_checks: int = 50,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """
    Comprobación de gradiente de la pérdida combinada en un modelo pequeño.

    Raises:
        ValueError: Si el modelo no está en 64 bits o supera 1000 parámetros
    """
    if model.dtype != torch.float64:
        raise ValueError("La comprobación de gradiente requiere un modelo en float64")
    n_params = sum(p.numel() for p in model.parameters())
    if n_params > 1000:
        raise ValueError(f"Modelo demasiado grande para la comprobación: {n_params} parámetros")
    weights = weights or {t: 1.0 for t in ObfModel.TASKS}

    def loss_fn() -> torch.Tensor:
        return total_loss(batch_losses(model, pairs, cl_pairs), weights)

    return finite_difference_check(loss_fn, list(model.parameters()), n_checks, eps, seed)
