#!/usr/bin/env python3
"""
Evaluación Posterior - Marco Oculomotor
=======================================

Protocolos de aplicación del codificador pre-entrenado:

- Extracción de embeddings de scanpaths completos
- Predicción de estímulo c-way k-shot con una cabeza MLP supervisada
- Clasificación de participantes con vectores concatenados y regresión
  logística L1 validada de forma cruzada
- Línea base con características expertas sobre los mismos folds
"""

import copy
from collections import defaultdict
from collections.abc import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import accuracy_score, f1_score, roc_auc_score
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from torch import nn

from marco_oculomotor.data.models import (
    EvalReport,
    ExpertFeatures,
    FoldResult,
    ParticipantRecord,
    Scanpath,
    StimulusReport,
    StimulusTaskSpec,
)
from marco_oculomotor.errors import SegmentTooShortError, UsageError
from marco_oculomotor.utils.batch_processor import BatchProcessor
from marco_oculomotor.utils.config import EvalConfig
from marco_oculomotor.utils.logger import get_logger

from .fixation import DEFAULT_MIN_FIX_MS, DEFAULT_VT_DEGPS, expert_features, ivt_labels
from .network import ObfModel, pad_sequences

logger = get_logger(__name__)


def extract_embedding(model: ObfModel, sp: Scanpath) -> np.ndarray:
    """
    Embedding del scanpath completo, sin segmentar.

    Raises:
        SegmentTooShortError: Si el scanpath es más corto que el mínimo del codificador
    """
    if len(sp) < model.encoder.min_length:
        raise SegmentTooShortError(
            f"Scanpath {sp.key} de {len(sp)} muestras; mínimo {model.encoder.min_length}"
        )
    model.eval()
    with torch.no_grad():
        x, lengths = pad_sequences([sp.points], model.dtype)
        e, _ = model.encode(x, lengths)
    return e[0].double().numpy()


def extract_embeddings(
    model: ObfModel, scanpaths: Sequence[Scanpath], threads: int = 1
) -> list[np.ndarray | None]:
    """
    Embeddings de muchos scanpaths; los fallos se registran y devuelven ``None``.
    """
    model.eval()
    processor: BatchProcessor[Scanpath, np.ndarray] = BatchProcessor(max_workers=threads)
    results = processor.process_items(
        list(scanpaths), lambda sp: extract_embedding(model, sp), describe=lambda sp: str(sp.key)
    )
    if processor.progress.errors:
        logger.warning(f"{len(processor.progress.errors)} scanpaths sin embedding")
    return results


# ---------------------------------------------------------------------------
# Predicción de estímulo supervisada
# ---------------------------------------------------------------------------

def group_by_stimulus(scanpaths: Sequence[Scanpath]) -> dict[str, list[Scanpath]]:
    """Agrupa los scanpaths por estímulo, ordenados por participante."""
    groups: dict[str, list[Scanpath]] = defaultdict(list)
    for sp in scanpaths:
        groups[sp.stimulus_id].append(sp)
    return {sid: sorted(group, key=lambda s: s.participant_id) for sid, group in sorted(groups.items())}


def choose_stimuli(
    groups: dict[str, list[Scanpath]], c: int, min_users: int, rng: np.random.Generator
) -> list[str]:
    """
    Elige c estímulos con al menos ``min_users`` participantes.

    Raises:
        UsageError: Si no hay suficientes estímulos elegibles
    """
    eligible = sorted(sid for sid, group in groups.items() if len(group) >= min_users)
    if len(eligible) < c:
        raise UsageError(
            f"Se necesitan {c} estímulos con al menos {min_users} participantes; "
            f"hay {len(eligible)}"
        )
    chosen = rng.choice(len(eligible), size=c, replace=False)
    return [eligible[i] for i in sorted(chosen)]


def split_k_shot(
    groups: dict[str, list[Scanpath]],
    stimuli: Sequence[str],
    k: int,
    rng: np.random.Generator,
) -> tuple[list[tuple[Scanpath, int]], list[tuple[Scanpath, int]]]:
    """
    Divide cada estímulo en k participantes de soporte y el resto de consulta.

    Returns:
        (soporte, consulta) como listas de (scanpath, clase)

    Raises:
        UsageError: Si algún estímulo no tiene más de k participantes
    """
    support: list[tuple[Scanpath, int]] = []
    query: list[tuple[Scanpath, int]] = []
    for label, sid in enumerate(stimuli):
        group = groups[sid]
        if len(group) <= k:
            raise UsageError(f"El estímulo {sid} tiene {len(group)} participantes; k={k}")
        order = rng.permutation(len(group))
        support.extend((group[i], label) for i in order[:k])
        query.extend((group[i], label) for i in order[k:])
    return support, query


class MlpHead(nn.Module):
    """Dos capas ocultas (256 y 512) con normalización por lotes, sigmoide y dropout."""

    HIDDEN = (256, 512)

    def __init__(self, in_dim: int, n_classes: int, dropout: float = 0.5):
        super().__init__()
        layers: list[nn.Module] = []
        width = in_dim
        for hidden in self.HIDDEN:
            layers += [nn.Linear(width, hidden), nn.BatchNorm1d(hidden), nn.Sigmoid(), nn.Dropout(dropout)]
            width = hidden
        layers.append(nn.Linear(width, n_classes))
        self.net = nn.Sequential(*layers)
        self.n_classes = n_classes

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        """Logits (B, c); la probabilidad es su softmax."""
        return self.net(e)


def _check_classes(labels: np.ndarray, c: int) -> None:
    if c < 2:
        raise UsageError("Se necesitan al menos 2 clases")
    counts = np.bincount(labels, minlength=c)
    if labels.min() < 0 or counts.size > c:
        raise UsageError(f"Etiquetas fuera de [0, {c})")
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise UsageError(f"Clases sin ejemplos: {empty.tolist()}")


def train_mlp_head(
    embeddings: np.ndarray,
    labels: np.ndarray,
    c: int,
    epochs: int = 200,
    lr: float = 0.001,
    seed: int = 0,
) -> MlpHead:
    """
    Entrena la cabeza MLP sobre embeddings fijos con entropía cruzada.

    Raises:
        UsageError: Si alguna clase no tiene ejemplos
    """
    labels = np.asarray(labels, dtype=np.int64)
    _check_classes(labels, c)
    torch.manual_seed(seed)
    x = torch.as_tensor(np.asarray(embeddings), dtype=torch.float32)
    y = torch.as_tensor(labels)
    head = MlpHead(x.shape[1], c)
    optimizer = torch.optim.Adam(head.parameters(), lr=lr)
    head.train()
    for _ in range(epochs):
        optimizer.zero_grad()
        loss = F.cross_entropy(head(x), y)
        loss.backward()
        optimizer.step()
    head.eval()
    return head


class StimulusClassifier(nn.Module):
    """Codificador más cabeza MLP, ajustados de extremo a extremo."""

    def __init__(self, model: ObfModel, n_classes: int):
        super().__init__()
        self.model = model
        self.head = MlpHead(model.embedding_dim, n_classes)

    def forward(self, scanpaths: Sequence[Scanpath]) -> torch.Tensor:
        x, lengths = pad_sequences([sp.points for sp in scanpaths], self.model.dtype)
        e, _ = self.model.encode(x, lengths)
        return self.head(e.float())


def fine_tune_classifier(
    model: ObfModel,
    scanpaths: Sequence[Scanpath],
    labels: np.ndarray,
    c: int,
    epochs: int = 200,
    lr: float = 0.001,
    seed: int = 0,
) -> StimulusClassifier:
    """
    Ajusta una copia del codificador junto con la cabeza MLP.

    El modelo original no se modifica.
    """
    labels = np.asarray(labels, dtype=np.int64)
    _check_classes(labels, c)
    torch.manual_seed(seed)
    classifier = StimulusClassifier(copy.deepcopy(model), c)
    optimizer = torch.optim.Adam(classifier.parameters(), lr=lr)
    y = torch.as_tensor(labels)
    classifier.train()
    for _ in range(epochs):
        optimizer.zero_grad()
        loss = F.cross_entropy(classifier(scanpaths), y)
        loss.backward()
        optimizer.step()
    classifier.eval()
    return classifier


def predict_classes(head: MlpHead, embeddings: np.ndarray) -> np.ndarray:
    """Clase de mayor probabilidad para cada embedding."""
    head.eval()
    with torch.no_grad():
        logits = head(torch.as_tensor(np.asarray(embeddings), dtype=torch.float32))
    return np.argmax(torch.softmax(logits, dim=1).numpy(), axis=1)


def run_supervised_task(
    model: ObfModel,
    scanpaths: Sequence[Scanpath],
    spec: StimulusTaskSpec,
    cfg: EvalConfig,
    seed: int = 0,
    fine_tune: bool = False,
) -> StimulusReport:
    """
    Predicción de estímulo c-way k-shot con cabeza MLP.

    Para cada uno de los c estímulos elegidos, k participantes forman el
    soporte y el resto la consulta; ningún par (participante, estímulo)
    aparece en ambos conjuntos.
    """
    rng = np.random.default_rng(seed)
    groups = group_by_stimulus(scanpaths)
    stimuli = choose_stimuli(groups, spec.c_ways, spec.k_shots + 1, rng)
    support, query = split_k_shot(groups, stimuli, spec.k_shots, rng)
    y_support = np.array([label for _, label in support])
    y_query = np.array([label for _, label in query])

    if fine_tune:
        classifier = fine_tune_classifier(
            model, [sp for sp, _ in support], y_support, spec.c_ways, cfg.mlp_epochs, cfg.mlp_lr, seed
        )
        with torch.no_grad():
            predicted = np.argmax(classifier([sp for sp, _ in query]).numpy(), axis=1)
    else:
        e_support = np.stack([extract_embedding(model, sp) for sp, _ in support])
        e_query = np.stack([extract_embedding(model, sp) for sp, _ in query])
        head = train_mlp_head(e_support, y_support, spec.c_ways, cfg.mlp_epochs, cfg.mlp_lr, seed)
        predicted = predict_classes(head, e_query)

    accuracy = float(accuracy_score(y_query, predicted))
    logger.info(
        f"Tarea supervisada {spec.c_ways}-way {spec.k_shots}-shot: exactitud {accuracy:.4f} "
        f"({len(query)} consultas)"
    )
    return StimulusReport(
        mode="supervised",
        c_ways=spec.c_ways,
        k_shots=spec.k_shots,
        accuracy=accuracy,
        seed=seed,
        n_support=len(support),
        n_query=len(query),
    )


# ---------------------------------------------------------------------------
# Clasificación de participantes
# ---------------------------------------------------------------------------

def concat_roster(
    blocks: dict[str, np.ndarray], roster: Sequence[str], dim: int
) -> np.ndarray:
    """Concatena bloques por estímulo en el orden del roster; los ausentes valen cero."""
    vector = np.zeros(len(roster) * dim, dtype=np.float64)
    for i, sid in enumerate(roster):
        block = blocks.get(sid)
        if block is not None:
            vector[i * dim:(i + 1) * dim] = block
    return vector


def participant_vector(
    model: ObfModel, rec: ParticipantRecord, roster: Sequence[str]
) -> np.ndarray:
    """
    Vector del participante: embeddings concatenados en el orden del roster.

    Los scanpaths ausentes o demasiado cortos aportan un bloque de ceros.
    """
    blocks: dict[str, np.ndarray] = {}
    for sid in roster:
        sp = rec.scanpaths.get(sid)
        if sp is None:
            continue
        try:
            blocks[sid] = extract_embedding(model, sp)
        except SegmentTooShortError as e:
            logger.warning(f"Bloque nulo para {rec.participant_id}/{sid}: {e}")
    return concat_roster(blocks, roster, model.embedding_dim)


def expert_vector(
    rec: ParticipantRecord,
    roster: Sequence[str],
    vt_degps: float = DEFAULT_VT_DEGPS,
    min_fix_ms: float = DEFAULT_MIN_FIX_MS,
) -> np.ndarray:
    """Características expertas concatenadas en el orden del roster."""
    blocks = {}
    for sid in roster:
        sp = rec.scanpaths.get(sid)
        if sp is not None and len(sp) >= 2:
            blocks[sid] = expert_features(sp, ivt_labels(sp, vt_degps, min_fix_ms)).as_array()
    return concat_roster(blocks, roster, len(ExpertFeatures.FIELDS))


def stratified_folds(
    labels: np.ndarray, folds: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """
    Particiones estratificadas disjuntas que cubren a todos los participantes.

    Raises:
        UsageError: Si algún fold de entrenamiento queda con una sola clase
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise UsageError("Se necesitan participantes de ambas clases")
    if counts.min() < folds:
        raise UsageError(
            f"La clase minoritaria tiene {counts.min()} participantes, menos que {folds} folds; "
            f"reduzca eval.folds para mantener la estratificación"
        )
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    splits = list(splitter.split(np.zeros(labels.size), labels))
    for train_idx, _ in splits:
        if np.unique(labels[train_idx]).size < 2:
            raise UsageError("Fold de entrenamiento con una sola clase; use folds estratificados")
    return splits


def fit_l1_classifier(
    x: np.ndarray,
    y: np.ndarray,
    cs: Sequence[float] = (0.01, 0.1, 1.0, 10.0, 100.0),
    inner_folds: int = 3,
    seed: int = 0,
) -> tuple[Pipeline, float]:
    """
    Clasificador lineal con penalización L1, eligiendo C por búsqueda interna.

    Returns:
        (pipeline ajustado, C elegido)
    """
    pipeline = Pipeline([
        ("scaler", StandardScaler()),
        ("clf", LogisticRegression(penalty="l1", solver="liblinear", max_iter=1000)),
    ])
    n_inner = min(inner_folds, int(np.bincount(y).min()))
    if len(cs) == 1 or n_inner < 2:
        c = float(cs[len(cs) // 2])
        pipeline.set_params(clf__C=c)
        return pipeline.fit(x, y), c
    search = GridSearchCV(
        pipeline,
        {"clf__C": list(cs)},
        cv=StratifiedKFold(n_splits=n_inner, shuffle=True, random_state=seed),
        scoring="accuracy",
    )
    search.fit(x, y)
    return search.best_estimator_, float(search.best_params_["clf__C"])


def _safe_auc(y: np.ndarray, scores: np.ndarray) -> float | None:
    return float(roc_auc_score(y, scores)) if np.unique(y).size == 2 else None


def lasso_cv(
    vectors: np.ndarray,
    labels: np.ndarray,
    folds: int = 5,
    inner_folds: int = 3,
    cs: Sequence[float] = (0.01, 0.1, 1.0, 10.0, 100.0),
    seed: int = 0,
    name: str = "obf",
) -> EvalReport:
    """
    Validación cruzada estratificada de un clasificador L1.

    Las métricas globales se calculan sobre las predicciones de todos los
    folds; la clase positiva es la clínica (etiqueta 1).
    """
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != y.shape[0]:
        raise UsageError("Número de vectores y de etiquetas distinto")

    predicted = np.zeros_like(y)
    scores = np.zeros(y.shape[0], dtype=np.float64)
    fold_results = []
    for fold, (train_idx, test_idx) in enumerate(stratified_folds(y, folds, seed)):
        clf, best_c = fit_l1_classifier(x[train_idx], y[train_idx], cs, inner_folds, seed)
        predicted[test_idx] = clf.predict(x[test_idx])
        scores[test_idx] = clf.predict_proba(x[test_idx])[:, 1]
        fold_results.append(FoldResult(
            fold=fold,
            n_train=int(train_idx.size),
            n_test=int(test_idx.size),
            accuracy=float(accuracy_score(y[test_idx], predicted[test_idx])),
            auc=_safe_auc(y[test_idx], scores[test_idx]),
            f1=float(f1_score(y[test_idx], predicted[test_idx], zero_division=0)),
            best_c=best_c,
        ))

    report = EvalReport(
        name=name,
        accuracy=float(accuracy_score(y, predicted)),
        auc=_safe_auc(y, scores),
        f1=float(f1_score(y, predicted, zero_division=0)),
        seed=seed,
        folds=fold_results,
    )
    logger.info(
        f"Clasificación {name}: exactitud {report.accuracy:.4f}, AUC {report.auc}, F1 {report.f1:.4f}"
    )
    return report


def participant_matrix(
    model: ObfModel, records: Sequence[ParticipantRecord], roster: Sequence[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Matriz de vectores de participante y vector de etiquetas."""
    vectors = np.stack([participant_vector(model, rec, roster) for rec in records])
    return vectors, np.array([rec.label for rec in records], dtype=np.int64)


def expert_baseline(
    records: Sequence[ParticipantRecord],
    roster: Sequence[str],
    cfg: EvalConfig,
    seed: int = 0,
    vt_degps: float = DEFAULT_VT_DEGPS,
    min_fix_ms: float = DEFAULT_MIN_FIX_MS,
) -> EvalReport:
    """Mismo protocolo que ``lasso_cv`` sobre características expertas."""
    vectors = np.stack([expert_vector(rec, roster, vt_degps, min_fix_ms) for rec in records])
    labels = np.array([rec.label for rec in records], dtype=np.int64)
    return lasso_cv(vectors, labels, cfg.folds, cfg.inner_folds, cfg.lasso_cs, seed, name="expert")
