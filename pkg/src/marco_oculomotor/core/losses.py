#!/usr/bin/env python3
"""
Funciones de Pérdida - Marco Oculomotor
=======================================

Pérdidas de las cuatro tareas de pre-entrenamiento y su combinación
ponderada. Todas aceptan lotes rellenados con ceros junto con las
longitudes reales de cada muestra.
"""

from collections.abc import Mapping

import torch
import torch.nn.functional as F

from marco_oculomotor.errors import NumericalError

from .network import length_mask

EPSILON = 1e-7


def _batched(t: torch.Tensor) -> torch.Tensor:
    return t.unsqueeze(0) if t.dim() == 2 else t


def _sequence_loss(pred: torch.Tensor, target: torch.Tensor, lengths: torch.Tensor | None) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"Formas distintas: {tuple(pred.shape)} y {tuple(target.shape)}")
    pred, target = _batched(pred), _batched(target)
    batch, steps, _ = pred.shape
    if lengths is None:
        lengths = torch.full((batch,), steps, dtype=torch.long)
    mask = length_mask(lengths.to(pred.device), steps).to(pred.dtype)
    sq = ((pred - target) ** 2).sum(dim=2) * mask
    per_sample = sq.sum(dim=1) / (2.0 * lengths.to(pred.dtype))
    return per_sample.mean()


def loss_rc(recon: torch.Tensor, x: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
    """‖recon − x‖² / 2t por muestra, promediado sobre el lote."""
    return _sequence_loss(recon, x, lengths)


def loss_pc(pred: torch.Tensor, x_next: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
    """‖pred − x′‖² / 2t′ por muestra, promediado sobre el lote."""
    return _sequence_loss(pred, x_next, lengths)


def loss_fi(probs: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """
    Entropía cruzada binaria sobre las muestras balanceadas por la máscara.

    Con una máscara balanceada el promedio conjunto coincide con pesar cada
    clase por ½. Una máscara nula da pérdida 0 sin contribución al gradiente.
    """
    if probs.shape != labels.shape or probs.shape != mask.shape:
        raise ValueError("probs, labels y mask deben tener la misma forma")
    probs, labels, mask = (t if t.dim() == 2 else t.unsqueeze(0) for t in (probs, labels, mask))
    labels = labels.to(probs.dtype)
    mask = mask.to(probs.dtype)
    fix = (mask * labels).sum(dim=1)
    sac = (mask * (1.0 - labels)).sum(dim=1)
    if not torch.equal(fix, sac):
        raise ValueError("La máscara FI no está balanceada")
    total = mask.sum()
    if total == 0:
        return (probs * 0.0).sum()
    p = probs.clamp(EPSILON, 1.0 - EPSILON)
    bce = -(labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p))
    return (bce * mask).sum() / total


def loss_cl(p: torch.Tensor, same: torch.Tensor) -> torch.Tensor:
    """Entropía cruzada binaria −[S·ln p + (1−S)·ln(1−p)], promediada."""
    p = torch.as_tensor(p)
    same = torch.as_tensor(same, dtype=p.dtype)
    return F.binary_cross_entropy(p.clamp(EPSILON, 1.0 - EPSILON), same)


def total_loss(
    parts: Mapping[str, torch.Tensor | float],
    weights: Mapping[str, float],
) -> torch.Tensor:
    """
    Suma ponderada de las pérdidas de las tareas activas.

    Las tareas con peso 0 o ausentes no participan.

    Raises:
        NumericalError: Si alguna pérdida activa no es finita
    """
    total: torch.Tensor | None = None
    for task, value in parts.items():
        weight = float(weights.get(task, 0.0))
        if weight == 0.0:
            continue
        value = torch.as_tensor(value, dtype=torch.float64) if not torch.is_tensor(value) else value
        if not torch.isfinite(value).all():
            raise NumericalError(f"Pérdida no finita en la tarea {task}")
        term = weight * value
        total = term if total is None else total + term
    if total is None:
        return torch.zeros((), dtype=torch.float64)
    return total
