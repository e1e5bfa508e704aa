#!/usr/bin/env python3
"""
Tests for minibatch training, checkpoints and resuming
"""

import dataclasses
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch

from audio_data import mix, synth_speech, white_noise, write_wav
from errors import ConfigurationError, NumericalError
from feature_extractor import extract_utterance
from losses import BASELINE_COLUMNS, LOSS_COLUMNS
from network import ModelConfig, load_model
from testing_support import collect, run_suite
from trainer import DynamicMixDataset, FeatureDataset, Trainer, TrainRun, dataset_triples, train

TINY = ModelConfig(fo_enc_dim=8, fc_enc_dim=8, conv_channels=12, gru_hidden=10, tfgru_band_dim=1,
                   snr_hidden=6, seed=1)


def _utterances(count=4, seconds=0.25):
    items = []
    for i in range(count):
        clean = synth_speech(seconds, seed=100 + i)
        noisy, noise = mix(clean, white_noise(seconds, seed=200 + i), 5.0 * i - 5.0, seed=i)
        items.append(extract_utterance(noisy - noise, noisy, noise))
    return FeatureDataset(items)


DATA = _utterances()


def _run(out_dir, **overrides):
    values = dict(data_dir=out_dir, out_dir=out_dir, model=TINY, epochs=2, batch_size=2, seq_frames=10)
    values.update(overrides)
    return TrainRun(**values)


def test_single_batch_loss_decreases():
    with tempfile.TemporaryDirectory() as tmp:
        trainer = Trainer(_run(tmp, seq_frames=1000), DATA)
        items = DATA.utterances
        before = trainer.evaluate_loss(items)
        trainer.train_batch(items)
        assert trainer.evaluate_loss(items) < before
        assert trainer.run.step == 1


def test_training_runs_in_double_precision():
    with tempfile.TemporaryDirectory() as tmp:
        trainer = Trainer(_run(tmp), DATA)
        assert trainer.dtype == torch.float64
        assert all(p.dtype == torch.float64 for p in trainer.model.parameters())
        assert Trainer(_run(tmp, double_precision=False), DATA).dtype == torch.float32
    with tempfile.TemporaryDirectory() as tmp:
        result = train(_run(tmp, epochs=1), DATA)
        assert all(p.dtype == torch.float64 for p in result.model.parameters())


def test_every_frame_of_an_uneven_batch_is_trained():
    short = DATA.utterances[0]
    clean = synth_speech(0.5, seed=300)
    noisy, noise = mix(clean, white_noise(0.5, seed=301), 0.0, seed=3)
    long = extract_utterance(noisy - noise, noisy, noise)
    assert len(long) > len(short)
    g_r = long.g_r.copy()
    g_r[len(short):] = 1.0 - g_r[len(short):]
    altered = dataclasses.replace(long, g_r=g_r)

    outcomes = []
    for item in (long, altered):
        with tempfile.TemporaryDirectory() as tmp:
            trainer = Trainer(_run(tmp, seq_frames=1000), FeatureDataset([short, item]))
            parts = trainer.train_batch([short, item])
            outcomes.append((parts['gain_real'], trainer.model.gain_real_head.linear.weight.detach().clone()))
    # targets past the end of the shorter utterance reach the loss and the update
    assert outcomes[0][0] != outcomes[1][0]
    assert not torch.equal(outcomes[0][1], outcomes[1][1])


def test_training_is_deterministic():
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        a = train(_run(first), DATA)
        b = train(_run(second), DATA)
        pd.testing.assert_frame_equal(a.history, b.history)
        for (name, x), (_, y) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
            assert torch.equal(x, y), name
        curve_a = pd.read_csv(Path(first) / 'loss.csv')
        curve_b = pd.read_csv(Path(second) / 'loss.csv')
        pd.testing.assert_frame_equal(curve_a, curve_b)


def test_history_and_checkpoints():
    with tempfile.TemporaryDirectory() as tmp:
        result = train(_run(tmp), DATA)
        assert list(result.history.epoch) == [1, 2]
        assert {'total', 'validation', 'snr'} <= set(result.history.columns)
        for name in ('epoch_001', 'epoch_002', 'best'):
            assert (Path(tmp) / 'checkpoints' / f'{name}.pcpn').exists()
            assert (Path(tmp) / 'checkpoints' / f'{name}.opt').exists()
        assert load_model(Path(tmp) / 'model.pcpn').config == TINY
        curve = pd.read_csv(Path(tmp) / 'loss.csv')
        assert list(curve.columns) == LOSS_COLUMNS
        # 2 epochs x 2 batches x 3 windows of at most 10 frames
        assert len(curve) == 12


def test_zero_epochs_writes_initial_model():
    with tempfile.TemporaryDirectory() as tmp:
        run = _run(tmp, epochs=0, model_path=Path(tmp) / 'init.pcpn')
        result = train(run)
        assert result.history.empty
        loaded = load_model(Path(tmp) / 'init.pcpn')
        # the file stores float32 copies of the float64 training weights
        for (name, x), (_, y) in zip(result.model.state_dict().items(), loaded.state_dict().items()):
            assert torch.equal(x.float(), y), name


def test_resume_matches_uninterrupted_run():
    with tempfile.TemporaryDirectory() as full, tempfile.TemporaryDirectory() as part, \
            tempfile.TemporaryDirectory() as resumed:
        reference = train(_run(full), DATA).model
        train(_run(part, epochs=1), DATA)
        checkpoint = Path(part) / 'checkpoints' / 'epoch_001.pcpn'
        continued = train(_run(resumed, resume_from=checkpoint), DATA)
        assert list(continued.history.epoch) == [2]
        for (name, x), (_, y) in zip(reference.state_dict().items(), continued.model.state_dict().items()):
            assert torch.equal(x, y), name


def test_baseline_loss_columns():
    with tempfile.TemporaryDirectory() as tmp:
        train(_run(tmp, epochs=1, baseline_loss=True), DATA)
        curve = pd.read_csv(Path(tmp) / 'loss.csv')
        assert list(curve.columns) == BASELINE_COLUMNS


def test_nan_batch_is_dumped():
    broken = DATA.utterances[0]
    broken = type(broken)(f_o=np.full_like(broken.f_o, np.nan), f_c=broken.f_c, g_r=broken.g_r,
                          g_i=broken.g_i, r=broken.r, snr=broken.snr)
    with tempfile.TemporaryDirectory() as tmp:
        trainer = Trainer(_run(tmp), FeatureDataset([broken]))
        with pytest.raises(NumericalError) as info:
            trainer.train_batch([broken])
        assert info.value.dump_path is not None
        dumped = np.load(info.value.dump_path)
        assert np.isnan(dumped['f_o']).all()


def test_run_validation():
    with pytest.raises(ConfigurationError):
        _run('/tmp', epochs=-1)
    with pytest.raises(ConfigurationError):
        _run('/tmp', lr=0.0)
    with pytest.raises(ConfigurationError):
        _run('/tmp', validation_fraction=1.0)
    with pytest.raises(ConfigurationError):
        train(_run('/nonexistent/data', epochs=1))


def test_dataset_from_directory():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        for i in range(2):
            clean = synth_speech(0.25, seed=i)
            noisy, noise = mix(clean, white_noise(0.25, seed=10 + i), 0.0, seed=i)
            write_wav(root / 'clean' / f'u{i}.wav', noisy - noise)
            write_wav(root / 'noisy' / f'u{i}.wav', noisy)
            write_wav(root / 'noise' / f'u{i}.wav', noise)
        write_wav(root / 'noisy' / 'lonely.wav', white_noise(0.25, seed=3))
        assert [t['name'] for t in dataset_triples(root)] == ['u0', 'u1']

        dataset = FeatureDataset.from_directory(root)
        assert dataset.names == ['u0', 'u1']
        assert (root / 'features' / 'u0.pcpf').exists()
        cached = FeatureDataset.from_directory(root)
        np.testing.assert_allclose(cached.utterances[0].f_o, dataset.utterances[0].f_o, atol=1e-5)


def test_dynamic_mixing():
    clean = [synth_speech(0.25, seed=i) for i in range(3)]
    noise = [white_noise(0.5, seed=9)]
    dataset = DynamicMixDataset(clean, noise, seed=4, rir_probability=0.5)
    first = dataset.epoch_items(0)
    assert len(first) == 3
    np.testing.assert_array_equal(first[0].f_o, dataset.epoch_items(0)[0].f_o)
    assert not np.array_equal(first[0].f_o, dataset.epoch_items(1)[0].f_o)
    with pytest.raises(ConfigurationError):
        DynamicMixDataset([], noise)


if __name__ == "__main__":
    sys.exit(0 if run_suite("Trainer", collect(globals())) else 1)
