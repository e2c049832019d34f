#!/usr/bin/env python3
"""
Tests para el pre-entrenamiento.
"""

from dataclasses import replace

import numpy as np
import pytest
import torch

from marco_oculomotor.core.fixation import ivt_labels
from marco_oculomotor.core.network import ObfModel
from marco_oculomotor.core.pretrainer import (
    PretaskPredictions,
    Pretrainer,
    batch_losses,
    cl_segment,
    educated_guess,
    evaluate_pretasks,
    grad_check,
    learning_rate_at,
    make_batches,
    sample_cl_pairs,
    sample_segment_pair,
    score_pretasks,
    segment_bounds,
    split_train_val,
)
from marco_oculomotor.core.synthetic import generate_corpus
from marco_oculomotor.data.models import Scanpath
from marco_oculomotor.errors import GazeDataError, SegmentTooShortError, UsageError
from marco_oculomotor.utils.config import AugmentConfig, ModelConfig, PretrainConfig, SynthConfig

from ..helpers import make_scanpath


def _smooth_scanpath(n: int, seed: int, source: str = "test", pid: str = "p000") -> Scanpath:
    rng = np.random.default_rng(seed)
    return make_scanpath(np.cumsum(rng.normal(0.0, 0.4, size=(n, 2)), axis=0), pid, f"s{seed:03d}", source)


def test_segment_bounds_defaults():
    bounds = segment_bounds(PretrainConfig())
    assert (bounds.min_len, bounds.max_len, bounds.horizon) == (300, 600, 30)
    assert bounds.required == 330


def test_sample_segment_pair():
    """Entrada de 5 a 10 s seguida de sus 500 ms siguientes."""
    sp = _smooth_scanpath(700, 0)
    cfg = PretrainConfig()
    rng = np.random.default_rng(1)
    for _ in range(20):
        pair = sample_segment_pair(sp, cfg, rng)
        assert 300 <= len(pair.x) <= 600
        assert len(pair.x_next) == 30
        np.testing.assert_array_equal(pair.x, sp.points[pair.start:pair.start + len(pair.x)])
        np.testing.assert_array_equal(pair.x_next[0], sp.points[pair.start + len(pair.x)])
        np.testing.assert_array_equal(pair.fi, ivt_labels(pair.x))
        assert (pair.mask * pair.fi).sum() == (pair.mask * (1 - pair.fi)).sum()


def test_sample_segment_pair_too_short():
    with pytest.raises(SegmentTooShortError):
        sample_segment_pair(_smooth_scanpath(329, 0), PretrainConfig(), np.random.default_rng(0))


def test_sample_segment_pair_augmented(offset_augment: AugmentConfig):
    sp = _smooth_scanpath(400, 2)
    pair = sample_segment_pair(sp, PretrainConfig(), np.random.default_rng(0), offset_augment)
    original = sp.points[pair.start:pair.start + len(pair.x)]
    np.testing.assert_allclose(pair.x, original + 1.0)


def test_cl_segment_lengths():
    sp = _smooth_scanpath(500, 3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        points, start = cl_segment(sp, PretrainConfig(), rng)
        assert 100 <= len(points) <= 200
        other, other_start = cl_segment(sp, PretrainConfig(), rng, avoid_start=start)
        assert other_start != start


def test_cl_pairs_balanced():
    """Con 7 pares, 4 son positivos y 3 negativos."""
    batch = [_smooth_scanpath(300, i) for i in range(4)]
    pairs = sample_cl_pairs(batch, PretrainConfig(), np.random.default_rng(0), n_pairs=7)
    assert len(pairs) == 7
    assert sum(p.same for p in pairs) == 4


def test_cl_pairs_errors():
    cfg = PretrainConfig()
    with pytest.raises(UsageError):
        sample_cl_pairs([_smooth_scanpath(300, 0)], cfg, np.random.default_rng(0))
    mixed = [_smooth_scanpath(300, 0, "a"), _smooth_scanpath(300, 1, "b")]
    with pytest.raises(UsageError):
        sample_cl_pairs(mixed, cfg, np.random.default_rng(0))


def test_learning_rate_halving():
    cfg = PretrainConfig(lr=0.001, lr_halving_every=100)
    assert learning_rate_at(1, cfg) == 0.001
    assert learning_rate_at(100, cfg) == 0.001
    assert learning_rate_at(101, cfg) == 0.0005
    assert learning_rate_at(301, cfg) == 0.000125


def test_split_train_val():
    scanpaths = [_smooth_scanpath(50, i) for i in range(10)]
    train, val = split_train_val(scanpaths, 0.8, np.random.default_rng(0))
    assert len(train) == 8 and len(val) == 2
    assert {id(sp) for sp in train}.isdisjoint({id(sp) for sp in val})


def test_make_batches_single_source():
    scanpaths = [_smooth_scanpath(50, i, "a" if i % 3 else "b") for i in range(20)]
    batches = make_batches(scanpaths, 4, np.random.default_rng(0))
    assert all(len({sp.source_tag for sp in batch}) == 1 for batch in batches)
    assert sorted(id(sp) for batch in batches for sp in batch) == sorted(id(sp) for sp in scanpaths)
    assert max(len(batch) for batch in batches) <= 4


def test_score_pretasks_perfect_predictions():
    cfg = PretrainConfig(input_len_s=(1.0, 1.5))
    rng = np.random.default_rng(0)
    pairs = [sample_segment_pair(_smooth_scanpath(200, i), cfg, rng) for i in range(3)]
    preds = PretaskPredictions(
        rc=[p.x for p in pairs],
        pc=[p.x_next for p in pairs],
        fi=[p.fi.astype(float) for p in pairs],
        cl=np.array([0.9, 0.1]),
        cl_labels=np.array([1, 0]),
    )
    metrics = score_pretasks(pairs, preds)
    assert metrics.rc_dist_deg == 0.0
    assert metrics.pc_dist_deg == 0.0
    assert metrics.cl_acc == 1.0


def test_educated_guess():
    cfg = PretrainConfig(input_len_s=(1.0, 1.5))
    rng = np.random.default_rng(0)
    pairs = [sample_segment_pair(_smooth_scanpath(200, i), cfg, rng) for i in range(3)]
    guess = educated_guess(pairs)
    assert guess.fi_auc == 0.5 and guess.cl_acc == 0.5
    assert guess.rc_dist_deg > 0.0
    with pytest.raises(GazeDataError):
        educated_guess([])


def test_evaluate_pretasks_empty(tiny_model_config: ModelConfig):
    with pytest.raises(GazeDataError):
        evaluate_pretasks(ObfModel(tiny_model_config), [], PretrainConfig(), np.random.default_rng(0))


def test_gradient_check(gradcheck_model_config: ModelConfig):
    """Gradiente analítico y diferencias centrales coinciden en 64 bits."""
    torch.manual_seed(0)
    model = ObfModel(gradcheck_model_config).double()
    assert sum(p.numel() for p in model.parameters()) <= 1000
    cfg = PretrainConfig(input_len_s=(0.5, 0.8), pc_horizon_ms=100.0)
    rng = np.random.default_rng(0)
    scanpaths = [_smooth_scanpath(80, i) for i in range(3)]
    pairs = [sample_segment_pair(sp, cfg, rng) for sp in scanpaths]
    cl_pairs = sample_cl_pairs(scanpaths, cfg, rng, n_pairs=4)
    assert grad_check(model, pairs, cl_pairs, n_checks=60) < 1e-4


def test_gradient_check_requires_small_float64(gradcheck_model_config: ModelConfig, tiny_model_config: ModelConfig):
    with pytest.raises(ValueError):
        grad_check(ObfModel(gradcheck_model_config), [])
    with pytest.raises(ValueError):
        grad_check(ObfModel(replace(tiny_model_config, hidden=32)).double(), [])


def test_zero_fi_mask_gives_zero_fi_gradient(gradcheck_model_config: ModelConfig):
    torch.manual_seed(0)
    model = ObfModel(gradcheck_model_config, ("fi",)).double()
    cfg = PretrainConfig(input_len_s=(0.5, 0.8), pc_horizon_ms=100.0)
    pair = sample_segment_pair(_smooth_scanpath(80, 1), cfg, np.random.default_rng(0))
    pair.mask = np.zeros_like(pair.mask)
    loss = batch_losses(model, [pair])["fi"]
    loss.backward()
    assert all(float(p.grad.abs().sum()) == 0.0 for p in model.parameters() if p.grad is not None)


def test_pretrain_smoke(
    synthetic_scanpaths: list[Scanpath], tiny_model_config: ModelConfig, fast_pretrain_config: PretrainConfig
):
    """Dos épocas completas con las cuatro tareas y métricas de validación."""
    seen = []
    model, logs = Pretrainer(tiny_model_config, fast_pretrain_config, on_epoch=seen.append).train(
        synthetic_scanpaths
    )
    assert len(logs) == 2 and seen == logs
    assert [log.epoch for log in logs] == [1, 2]
    for task in ObfModel.TASKS:
        assert logs[-1].losses[task] is not None
        assert np.isfinite(logs[-1].losses[task])
    assert logs[-1].val.rc_dist_deg is not None
    assert logs[-1].val.cl_acc is not None
    assert not model.training


def test_pretrain_reproducible(
    synthetic_scanpaths: list[Scanpath], tiny_model_config: ModelConfig, fast_pretrain_config: PretrainConfig
):
    """Misma semilla y configuración dan el mismo registro y los mismos pesos."""
    model_a, logs_a = Pretrainer(tiny_model_config, fast_pretrain_config).train(synthetic_scanpaths)
    model_b, logs_b = Pretrainer(tiny_model_config, fast_pretrain_config).train(synthetic_scanpaths)
    for a, b in zip(logs_a, logs_b, strict=True):
        for key, value in a.as_row().items():
            if value is None:
                assert b.as_row()[key] is None
            else:
                assert b.as_row()[key] == pytest.approx(value, abs=1e-9)
    for (name, a), (_, b) in zip(model_a.state_dict().items(), model_b.state_dict().items(), strict=True):
        torch.testing.assert_close(a, b, rtol=0, atol=1e-9, msg=name)


def test_pretrain_disabled_task(
    synthetic_scanpaths: list[Scanpath], tiny_model_config: ModelConfig, fast_pretrain_config: PretrainConfig
):
    cfg = replace(fast_pretrain_config, w_pc=0.0, epochs=1)
    model, logs = Pretrainer(tiny_model_config, cfg).train(synthetic_scanpaths)
    assert "pc" not in model.tasks
    row = logs[0].as_row()
    assert row["loss_pc"] is None and row["val_pc_dist"] is None
    assert row["loss_rc"] is not None and row["loss_fi"] is not None and row["loss_cl"] is not None


def test_pretrain_excluded_source(tiny_model_config: ModelConfig, fast_pretrain_config: PretrainConfig):
    corpus = generate_corpus(SynthConfig(n_participants=6, n_stimuli=3, n_sources=2, duration_s=(3.0, 4.0)))
    scanpaths = [item.scanpath for item in corpus.items]
    cfg = replace(fast_pretrain_config, epochs=1, exclude_sources=("synth1",))
    trainer = Pretrainer(tiny_model_config, cfg)
    trainer.train(scanpaths)
    assert set(trainer.batch_sources) == {"synth0"}


def test_pretrain_batches_never_mix_sources(tiny_model_config: ModelConfig, fast_pretrain_config: PretrainConfig):
    corpus = generate_corpus(SynthConfig(n_participants=6, n_stimuli=3, n_sources=3, duration_s=(3.0, 4.0)))
    trainer = Pretrainer(tiny_model_config, replace(fast_pretrain_config, epochs=1))
    trainer.train([item.scanpath for item in corpus.items])
    assert set(trainer.batch_sources) == {"synth0", "synth1", "synth2"}


def test_pretrain_rejects_unusable_corpus(tiny_model_config: ModelConfig, fast_pretrain_config: PretrainConfig):
    with pytest.raises(GazeDataError):
        Pretrainer(tiny_model_config, fast_pretrain_config).train([_smooth_scanpath(20, 0)])
