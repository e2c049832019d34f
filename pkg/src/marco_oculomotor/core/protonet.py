#!/usr/bin/env python3
"""
Red Prototípica - Marco Oculomotor
==================================

Modo métrico de la predicción de estímulo: una proyección a un espacio
de 128 dimensiones sobre el codificador, entrenada por episodios c-way
k-shot. Cada clase se representa por la media de sus proyecciones de
soporte y las consultas se asignan al prototipo más cercano según la
distancia euclídea al cuadrado.
"""

import copy
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from marco_oculomotor.data.models import Scanpath, StimulusReport, StimulusTaskSpec
from marco_oculomotor.errors import UsageError
from marco_oculomotor.utils.config import EvalConfig
from marco_oculomotor.utils.logger import get_logger

from .downstream import group_by_stimulus
from .network import ObfModel, pad_sequences

logger = get_logger(__name__)


def prototypes(support: torch.Tensor, labels: torch.Tensor, c: int) -> torch.Tensor:
    """
    Media de las proyecciones de soporte de cada clase.

    Raises:
        UsageError: Si alguna clase no tiene soporte
    """
    counts = torch.bincount(labels, minlength=c)
    if counts.numel() > c or bool((counts == 0).any()):
        raise UsageError("Cada clase necesita al menos un ejemplo de soporte")
    sums = torch.zeros(c, support.shape[1], dtype=support.dtype).index_add_(0, labels, support)
    return sums / counts[:, None].to(support.dtype)


def proto_logits(queries: torch.Tensor, protos: torch.Tensor) -> torch.Tensor:
    """Logits = −‖q − p‖² para cada consulta y prototipo."""
    return -((queries[:, None, :] - protos[None, :, :]) ** 2).sum(dim=2)


def nearest_prototype(queries: np.ndarray | torch.Tensor, protos: np.ndarray | torch.Tensor) -> np.ndarray:
    """Índice del prototipo más cercano; en empate gana el índice menor."""
    logits = proto_logits(torch.as_tensor(queries), torch.as_tensor(protos))
    return np.argmax(logits.detach().numpy(), axis=1)


@dataclass
class Episode:
    """Episodio c-way k-shot: soporte y consultas con etiquetas 0..c−1."""
    stimuli: list[str]
    support: list[Scanpath]
    support_labels: np.ndarray
    query: list[Scanpath]
    query_labels: np.ndarray


def sample_episode(
    groups: dict[str, list[Scanpath]],
    c: int,
    k: int,
    queries: int,
    rng: np.random.Generator,
) -> Episode:
    """
    Muestrea un episodio sobre los estímulos de ``groups``.

    Cada estímulo elegido aporta k participantes al soporte y hasta
    ``queries`` participantes distintos a la consulta.

    Raises:
        UsageError: Si hay menos de c estímulos con más de k participantes
    """
    eligible = sorted(sid for sid, group in groups.items() if len(group) > k)
    if len(eligible) < c:
        raise UsageError(
            f"Episodio {c}-way {k}-shot imposible: {len(eligible)} estímulos con más de {k} participantes"
        )
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=c, replace=False)]
    support, support_labels, query, query_labels = [], [], [], []
    for label, sid in enumerate(chosen):
        group = groups[sid]
        order = rng.permutation(len(group))
        n_query = min(queries, len(group) - k)
        support.extend(group[i] for i in order[:k])
        support_labels.extend([label] * k)
        query.extend(group[i] for i in order[k:k + n_query])
        query_labels.extend([label] * n_query)
    return Episode(
        stimuli=chosen,
        support=support,
        support_labels=np.array(support_labels, dtype=np.int64),
        query=query,
        query_labels=np.array(query_labels, dtype=np.int64),
    )


def split_meta_stimuli(
    stimuli: Sequence[str], n_train: int, c: int, rng: np.random.Generator
) -> tuple[list[str], list[str]]:
    """
    Reserva ``n_train`` estímulos para meta-entrenamiento y el resto para meta-test.

    Raises:
        UsageError: Si alguno de los dos conjuntos no permite episodios de c clases
    """
    stimuli = sorted(stimuli)
    n_test = len(stimuli) - n_train
    if n_test < c:
        raise UsageError(
            f"El conjunto de meta-test quedaría vacío para {c}-way: {len(stimuli)} estímulos, "
            f"{n_train} reservados para meta-entrenamiento y {max(n_test, 0)} disponibles"
        )
    if n_train < c:
        raise UsageError(f"Meta-entrenamiento con {n_train} estímulos no admite {c}-way")
    order = rng.permutation(len(stimuli))
    train = sorted(stimuli[i] for i in order[:n_train])
    test = sorted(stimuli[i] for i in order[n_train:])
    return train, test


class ProtoNet(nn.Module):
    """Proyección lineal al espacio métrico sobre el codificador OBF."""

    def __init__(self, model: ObfModel, proto_dim: int = 128, fine_tune: bool = False):
        super().__init__()
        self.model = copy.deepcopy(model) if fine_tune else model
        self.fine_tune = fine_tune
        self.head = nn.Linear(model.embedding_dim, proto_dim)

    def trainable_parameters(self) -> list[nn.Parameter]:
        """Parámetros que ajusta el entrenamiento episódico."""
        return list(self.parameters()) if self.fine_tune else list(self.head.parameters())

    def embed(self, scanpaths: Sequence[Scanpath]) -> torch.Tensor:
        """Embeddings del codificador para scanpaths completos."""
        x, lengths = pad_sequences([sp.points for sp in scanpaths], self.model.dtype)
        if self.fine_tune:
            return self.model.encode(x, lengths)[0].float()
        with torch.no_grad():
            return self.model.encode(x, lengths)[0].float()

    def forward(self, scanpaths: Sequence[Scanpath]) -> torch.Tensor:
        return self.head(self.embed(scanpaths))


class _EmbeddingCache:
    """Embeddings por scanpath calculados una sola vez con el codificador congelado."""

    def __init__(self, net: ProtoNet):
        self.net = net
        self._cache: dict[int, torch.Tensor] = {}

    def __call__(self, scanpaths: Sequence[Scanpath]) -> torch.Tensor:
        missing = [sp for sp in scanpaths if id(sp) not in self._cache]
        if missing:
            for sp, e in zip(missing, self.net.embed(missing), strict=True):
                self._cache[id(sp)] = e
        return torch.stack([self._cache[id(sp)] for sp in scanpaths])


def _episode_loss(
    net: ProtoNet, episode: Episode, embed: Callable[[Sequence[Scanpath]], torch.Tensor]
) -> torch.Tensor:
    c = len(episode.stimuli)
    support = net.head(embed(episode.support))
    query = net.head(embed(episode.query))
    protos = prototypes(support, torch.as_tensor(episode.support_labels), c)
    return F.cross_entropy(proto_logits(query, protos), torch.as_tensor(episode.query_labels))


def protonet_train(
    model: ObfModel,
    scanpaths: Sequence[Scanpath],
    spec: StimulusTaskSpec,
    cfg: EvalConfig,
    seed: int = 0,
    fine_tune: bool = False,
) -> ProtoNet:
    """
    Entrena la proyección métrica por episodios sobre los estímulos de meta-entrenamiento.

    Args:
        model: Codificador pre-entrenado
        scanpaths: Scanpaths de los estímulos de meta-entrenamiento
        spec: Tarea c-way k-shot
        cfg: Épocas, iteraciones, dimensión y tasa de aprendizaje
        seed: Semilla de los episodios y de la inicialización
        fine_tune: Ajusta también una copia del codificador

    Raises:
        UsageError: Si los estímulos no bastan para un episodio
    """
    groups = group_by_stimulus(scanpaths)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    net = ProtoNet(model, cfg.proto_dim, fine_tune)
    net.model.eval()
    embed = net.embed if fine_tune else _EmbeddingCache(net)
    optimizer = torch.optim.Adam(net.trainable_parameters(), lr=cfg.proto_lr)

    for epoch in range(1, cfg.proto_epochs + 1):
        total = 0.0
        for _ in range(cfg.proto_iterations):
            episode = sample_episode(groups, spec.c_ways, spec.k_shots, spec.queries, rng)
            loss = _episode_loss(net, episode, embed)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss.detach())
        logger.debug(f"Época métrica {epoch}: pérdida media {total / cfg.proto_iterations:.4f}")
    logger.info(f"Proyección métrica entrenada ({cfg.proto_epochs} épocas)")
    return net


def protonet_eval(
    net: ProtoNet,
    scanpaths: Sequence[Scanpath],
    spec: StimulusTaskSpec,
    seed: int = 0,
    train_stimuli: Sequence[str] = (),
) -> StimulusReport:
    """
    Exactitud media por episodio sobre los estímulos de meta-test.

    Raises:
        UsageError: Si meta-test comparte estímulos con meta-entrenamiento
    """
    groups = group_by_stimulus(scanpaths)
    overlap = set(groups) & set(train_stimuli)
    if overlap:
        raise UsageError(f"Estímulos compartidos entre meta-entrenamiento y meta-test: {sorted(overlap)}")
    rng = np.random.default_rng(seed)
    net.eval()
    cache = _EmbeddingCache(net)
    accuracies = []
    n_support = n_query = 0
    with torch.no_grad():
        for _ in range(spec.episodes):
            episode = sample_episode(groups, spec.c_ways, spec.k_shots, spec.queries, rng)
            protos = prototypes(
                net.head(cache(episode.support)), torch.as_tensor(episode.support_labels), spec.c_ways
            )
            predicted = nearest_prototype(net.head(cache(episode.query)), protos)
            accuracies.append(float(np.mean(predicted == episode.query_labels)))
            n_support += len(episode.support)
            n_query += len(episode.query)
    accuracy = float(np.mean(accuracies))
    logger.info(
        f"Tarea métrica {spec.c_ways}-way {spec.k_shots}-shot: exactitud {accuracy:.4f} "
        f"en {spec.episodes} episodios"
    )
    return StimulusReport(
        mode="metric",
        c_ways=spec.c_ways,
        k_shots=spec.k_shots,
        accuracy=accuracy,
        seed=seed,
        episodes=spec.episodes,
        n_support=n_support,
        n_query=n_query,
    )


def run_metric_task(
    model: ObfModel,
    scanpaths: Sequence[Scanpath],
    spec: StimulusTaskSpec,
    cfg: EvalConfig,
    seed: int = 0,
    fine_tune: bool = False,
) -> StimulusReport:
    """Divide los estímulos, entrena la proyección y la evalúa en meta-test."""
    groups = group_by_stimulus(scanpaths)
    rng = np.random.default_rng(seed)
    train_ids, test_ids = split_meta_stimuli(list(groups), cfg.meta_train_stimuli, spec.c_ways, rng)
    train_set = [sp for sid in train_ids for sp in groups[sid]]
    test_set = [sp for sid in test_ids for sp in groups[sid]]
    net = protonet_train(model, train_set, spec, cfg, seed, fine_tune)
    return protonet_eval(net, test_set, spec, seed + 1, train_stimuli=train_ids)
