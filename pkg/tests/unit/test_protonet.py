#!/usr/bin/env python3
"""
Tests para la red prototípica del modo métrico.
"""

from dataclasses import replace

import numpy as np
import pytest
import torch

from marco_oculomotor.core.downstream import group_by_stimulus
from marco_oculomotor.core.network import ObfModel
from marco_oculomotor.core.protonet import (
    ProtoNet,
    nearest_prototype,
    protonet_eval,
    protonet_train,
    prototypes,
    run_metric_task,
    sample_episode,
    split_meta_stimuli,
)
from marco_oculomotor.core.synthetic import generate_corpus
from marco_oculomotor.data.models import Scanpath, StimulusTaskSpec
from marco_oculomotor.errors import UsageError
from marco_oculomotor.utils.config import EvalConfig, ModelConfig, SynthConfig


@pytest.fixture
def model(tiny_model_config: ModelConfig) -> ObfModel:
    torch.manual_seed(0)
    return ObfModel(tiny_model_config)


@pytest.fixture
def six_stimuli() -> list[Scanpath]:
    """4 participantes × 6 estímulos."""
    corpus = generate_corpus(
        SynthConfig(n_participants=4, n_stimuli=6, duration_s=(3.0, 4.0), n_clusters=4, seed=2)
    )
    return [item.scanpath for item in corpus.items]


def test_prototypes_are_class_means():
    support = torch.tensor([[0.0, 0.0], [2.0, 2.0], [10.0, 0.0], [1.0, 1.0]])
    labels = torch.tensor([0, 0, 1, 0])
    protos = prototypes(support, labels, 2)
    torch.testing.assert_close(protos, torch.tensor([[1.0, 1.0], [10.0, 0.0]]))


def test_prototypes_follow_offset():
    """Desplazar el soporte desplaza cada prototipo en la misma cantidad."""
    support = torch.randn(9, 4, generator=torch.Generator().manual_seed(0))
    labels = torch.tensor([0, 1, 2] * 3)
    shift = torch.tensor([1.0, -2.0, 0.5, 3.0])
    torch.testing.assert_close(prototypes(support + shift, labels, 3), prototypes(support, labels, 3) + shift)


def test_prototypes_need_every_class():
    with pytest.raises(UsageError):
        prototypes(torch.zeros(2, 3), torch.tensor([0, 0]), 2)


def test_nearest_prototype_ties_go_to_lowest_index():
    protos = np.array([[1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]])
    queries = np.array([[0.0, 0.0], [-0.9, 0.1], [4.0, 4.0]])
    assert nearest_prototype(queries, protos).tolist() == [0, 1, 2]


def test_sample_episode_sizes(six_stimuli: list[Scanpath]):
    groups = group_by_stimulus(six_stimuli)
    episode = sample_episode(groups, 3, 2, 5, np.random.default_rng(0))
    assert len(episode.stimuli) == 3
    assert len(episode.support) == 6
    assert len(episode.query) == 6
    assert episode.support_labels.tolist() == [0, 0, 1, 1, 2, 2]
    assert {id(sp) for sp in episode.support}.isdisjoint({id(sp) for sp in episode.query})
    with pytest.raises(UsageError):
        sample_episode(groups, 7, 1, 1, np.random.default_rng(0))
    with pytest.raises(UsageError):
        sample_episode(groups, 2, 4, 1, np.random.default_rng(0))


def test_split_meta_stimuli():
    stimuli = [f"s{i:02d}" for i in range(10)]
    train, test = split_meta_stimuli(stimuli, 6, 3, np.random.default_rng(0))
    assert len(train) == 6 and len(test) == 4
    assert set(train).isdisjoint(test)
    with pytest.raises(UsageError):
        split_meta_stimuli(stimuli, 2, 3, np.random.default_rng(0))


def test_split_meta_stimuli_huge_task_rejected():
    """1003-way sobre 1003 estímulos deja el meta-test sin clases suficientes."""
    stimuli = [f"s{i:04d}" for i in range(1003)]
    with pytest.raises(UsageError, match="meta-test"):
        split_meta_stimuli(stimuli, 500, 1003, np.random.default_rng(0))


def test_protonet_trainable_parameters(model: ObfModel):
    frozen = ProtoNet(model, proto_dim=8)
    assert frozen.model is model
    assert len(frozen.trainable_parameters()) == 2
    tuned = ProtoNet(model, proto_dim=8, fine_tune=True)
    assert tuned.model is not model
    assert len(tuned.trainable_parameters()) == len(list(model.parameters())) + 2


def test_protonet_forward_shape(model: ObfModel, six_stimuli: list[Scanpath]):
    net = ProtoNet(model, proto_dim=8)
    assert net(six_stimuli[:3]).shape == (3, 8)


def test_protonet_eval_rejects_shared_stimuli(model: ObfModel, six_stimuli: list[Scanpath]):
    net = ProtoNet(model, proto_dim=8)
    spec = StimulusTaskSpec(2, 1, mode="metric", episodes=2, queries=1)
    with pytest.raises(UsageError):
        protonet_eval(net, six_stimuli, spec, train_stimuli=["s000"])


def test_frozen_training_keeps_encoder(model: ObfModel, six_stimuli: list[Scanpath], fast_eval_config: EvalConfig):
    before = {k: v.clone() for k, v in model.state_dict().items()}
    spec = StimulusTaskSpec(2, 1, mode="metric", episodes=2, queries=2)
    for fine_tune in (False, True):
        protonet_train(model, six_stimuli, spec, fast_eval_config, seed=1, fine_tune=fine_tune)
    for key, value in model.state_dict().items():
        torch.testing.assert_close(value, before[key])


def test_run_metric_task(model: ObfModel, six_stimuli: list[Scanpath], fast_eval_config: EvalConfig):
    cfg = replace(fast_eval_config, meta_train_stimuli=3)
    spec = StimulusTaskSpec(2, 1, mode="metric", episodes=4, queries=2)
    report = run_metric_task(model, six_stimuli, spec, cfg, seed=5)
    assert report.mode == "metric"
    assert report.episodes == 4
    assert report.n_support == 8 and report.n_query == 16
    assert 0.0 <= report.accuracy <= 1.0
    again = run_metric_task(model, six_stimuli, spec, cfg, seed=5)
    assert again.accuracy == report.accuracy


def test_run_metric_task_too_many_ways(model: ObfModel, six_stimuli: list[Scanpath], fast_eval_config: EvalConfig):
    cfg = replace(fast_eval_config, meta_train_stimuli=3)
    with pytest.raises(UsageError, match="meta-test"):
        run_metric_task(model, six_stimuli, StimulusTaskSpec(4, 1, mode="metric"), cfg)
