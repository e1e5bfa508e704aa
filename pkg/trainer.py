import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from audio_data import SNR_RANGE_DB, load_at_rate, mix, rir_convolve, synth_rir
from errors import ConfigurationError, NumericalError
from feature_extractor import UtteranceFeatures, extract_utterance, read_feature_cache, write_feature_cache
from losses import (
    BASELINE_COLUMNS, LOSS_COLUMNS, LossConfig, LossCurveWriter, baseline_components, loss_components,
)
from network import AdamOptimizer, ModelConfig, ModelOutput, PercepNetPlus, load_model, save_model

logger = logging.getLogger(__name__)


@dataclass
class TrainRun:
    """
    Everything that determines a training run

    Args:
        data_dir: Mixed dataset with clean/, noisy/ and noise/ folders
        out_dir: Checkpoints, loss CSV and diagnostics go here
        model_path: Final model file
        model: Network configuration
        loss: Loss weights
        epochs: Passes over the training set
        batch_size: Utterances per minibatch
        seq_frames: Truncated BPTT window in frames
        lr: Adam learning rate
        seed: Seed for shuffling, mixing and initialization
        baseline_loss: Train with the gain + strength loss only
        dynamic_mix: Draw fresh mixtures from the clean and noise folders every epoch
        rir_probability: Share of dynamic mixtures whose speech is reverberated
        validation_fraction: Utterances held out for best-model selection
        deterministic: Single-threaded deterministic kernels
        double_precision: Train in float64; model files still store float32
        resume_from: Checkpoint to continue from
        epoch: Epochs completed so far
        step: Optimizer steps taken so far
    """
    data_dir: Path
    out_dir: Path
    model_path: Optional[Path] = None
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 20
    batch_size: int = 32
    seq_frames: int = 200
    lr: float = 1e-3
    seed: int = 0
    baseline_loss: bool = False
    dynamic_mix: bool = False
    rir_probability: float = 0.5
    validation_fraction: float = 0.1
    deterministic: bool = True
    double_precision: bool = True
    resume_from: Optional[Path] = None
    epoch: int = 0
    step: int = 0

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        self.out_dir = Path(self.out_dir)
        self.model_path = Path(self.model_path) if self.model_path else self.out_dir / 'model.pcpn'
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1 or self.seq_frames < 1:
            raise ConfigurationError("batch_size and seq_frames must be positive")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.rir_probability <= 1.0:
            raise ConfigurationError(f"rir_probability must lie in [0, 1], got {self.rir_probability}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")


def dataset_triples(data_dir: Union[str, Path]) -> List[Dict[str, Path]]:
    """Matching clean / noisy / noise files of a mixed dataset directory"""
    root = Path(data_dir)
    triples = []
    for noisy in sorted((root / 'noisy').glob('*.wav')):
        clean, noise = root / 'clean' / noisy.name, root / 'noise' / noisy.name
        if clean.is_file() and noise.is_file():
            triples.append({'name': noisy.stem, 'clean': clean, 'noisy': noisy, 'noise': noise})
        else:
            logger.warning("Skipping %s: clean or noise companion missing", noisy.name)
    return triples


class FeatureDataset:
    """Fixed set of utterances with their features and targets"""

    def __init__(self, utterances: Sequence[UtteranceFeatures], names: Optional[Sequence[str]] = None):
        self.utterances = list(utterances)
        self.names = list(names) if names is not None else [str(i) for i in range(len(self.utterances))]

    def __len__(self) -> int:
        return len(self.utterances)

    def epoch_items(self, epoch: int) -> List[UtteranceFeatures]:
        return self.utterances

    @classmethod
    def from_directory(cls, data_dir: Union[str, Path], cache_dir: Optional[Union[str, Path]] = None
                       ) -> 'FeatureDataset':
        """
        Extract (or reload from the feature cache) every utterance of a mixed dataset

        Args:
            data_dir: Directory with clean/, noisy/ and noise/
            cache_dir: Where .pcpf caches are kept, data_dir/features by default
        """
        cache = Path(cache_dir) if cache_dir else Path(data_dir) / 'features'
        utterances, names = [], []
        for triple in tqdm(dataset_triples(data_dir), desc='Extracting features'):
            cached = cache / f"{triple['name']}.pcpf"
            if cached.exists():
                utterances.append(read_feature_cache(cached))
            else:
                noisy = load_at_rate(triple['noisy'])
                noise = load_at_rate(triple['noise'])
                clean = noisy - noise
                utterance = extract_utterance(clean, noisy, noise)
                write_feature_cache(cached, utterance)
                utterances.append(utterance)
            names.append(triple['name'])
        logger.info("Loaded %d utterances from %s", len(utterances), data_dir)
        return cls(utterances, names)


class DynamicMixDataset:
    """
    Fresh mixtures every epoch

    Each item pairs a clean signal with a random noise at a random SNR;
    with probability rir_probability the speech is reverberated first.
    Draws depend only on (seed, epoch).
    """

    def __init__(self, clean: Sequence[np.ndarray], noise: Sequence[np.ndarray], seed: int = 0,
                 rirs: Optional[Sequence[np.ndarray]] = None, rir_probability: float = 0.5,
                 snr_range: Sequence[float] = SNR_RANGE_DB):
        if not clean or not noise:
            raise ConfigurationError("Dynamic mixing needs at least one clean and one noise signal")
        self.clean = list(clean)
        self.noise = list(noise)
        self.rirs = list(rirs) if rirs else None
        self.seed = seed
        self.rir_probability = rir_probability
        self.snr_range = snr_range

    def __len__(self) -> int:
        return len(self.clean)

    def _rir(self, rng: np.random.Generator, length: int) -> np.ndarray:
        if self.rirs:
            rir = self.rirs[int(rng.integers(0, len(self.rirs)))]
        else:
            rir = synth_rir(int(rng.integers(0, 2 ** 31)), rt60=float(rng.uniform(0.2, 0.6)))
        return rir[:length]

    def epoch_items(self, epoch: int) -> List[UtteranceFeatures]:
        rng = np.random.default_rng([self.seed, epoch])
        items = []
        for clean in self.clean:
            noise = self.noise[int(rng.integers(0, len(self.noise)))]
            snr_db = float(rng.uniform(*self.snr_range))
            mix_seed = int(rng.integers(0, 2 ** 31))
            if rng.random() < self.rir_probability:
                clean = rir_convolve(clean, self._rir(rng, len(clean)))
            noisy, noise_scaled = mix(clean, noise, snr_db, mix_seed)
            items.append(extract_utterance(noisy - noise_scaled, noisy, noise_scaled))
        return items

    @classmethod
    def from_directory(cls, data_dir: Union[str, Path], seed: int = 0,
                       rir_probability: float = 0.5) -> 'DynamicMixDataset':
        root = Path(data_dir)
        clean = [load_at_rate(p) for p in sorted((root / 'clean').glob('*.wav'))]
        noise = [load_at_rate(p) for p in sorted((root / 'noise').glob('*.wav'))]
        rir_dir = root / 'rir'
        rirs = [load_at_rate(p) for p in sorted(rir_dir.glob('*.wav'))] if rir_dir.is_dir() else None
        return cls(clean, noise, seed=seed, rirs=rirs, rir_probability=rir_probability)


def _pad(values: np.ndarray, frames: int) -> np.ndarray:
    values = values[:frames]
    return np.pad(values, [(0, frames - len(values))] + [(0, 0)] * (values.ndim - 1))


def _stack(items: Sequence[UtteranceFeatures], frames: int) -> Dict[str, np.ndarray]:
    """Zero-pad every utterance to frames; mask is 1 on real frames and 0 on padding"""
    names = ('f_o', 'f_c', 'g_r', 'g_i', 'r', 'snr')
    batch = {name: np.stack([_pad(getattr(item, name), frames) for item in items]) for name in names}
    batch['mask'] = np.stack([(np.arange(frames) < len(item)).astype(np.float64) for item in items])
    return batch


class Trainer:
    """
    Minibatch truncated-BPTT training

    Utterances of a batch are zero-padded to the longest one and walked
    in windows of seq_frames; padded frames get zero weight in the loss
    and recurrent state crosses windows detached.
    """

    def __init__(self, run: TrainRun, train_set, validation_set: Optional[FeatureDataset] = None):
        self.run = run
        self.train_set = train_set
        self.validation_set = validation_set
        if run.deterministic:
            torch.use_deterministic_algorithms(True)
            torch.set_num_threads(1)

        if run.resume_from:
            self.model = load_model(run.resume_from)
            self.run.model = self.model.config
        else:
            self.model = PercepNetPlus(run.model)
        if run.double_precision:
            self.model.double()
        self.dtype = next(self.model.parameters()).dtype
        self.optimizer = AdamOptimizer(self.model.parameters(), lr=run.lr)
        self.best_loss = float('inf')
        if run.resume_from:
            self._restore(Path(run.resume_from))
        self.curve = LossCurveWriter(run.out_dir / 'loss.csv',
                                     BASELINE_COLUMNS if run.baseline_loss else LOSS_COLUMNS)
        self.include_snr = run.model.snr_head and not run.baseline_loss

    def _restore(self, checkpoint: Path):
        sidecar = checkpoint.with_suffix('.opt')
        if not sidecar.exists():
            logger.warning("No optimizer state next to %s, starting with fresh moments", checkpoint)
            return
        state = torch.load(sidecar, weights_only=False)
        if 'model' in state:
            self.model.load_state_dict(state['model'])
        self.optimizer.load_state_dict(state['optimizer'])
        self.run.epoch = state['epoch']
        self.run.step = state['step']
        self.best_loss = state.get('best_loss', float('inf'))
        logger.info("Resumed from %s at epoch %d, step %d", checkpoint, self.run.epoch, self.run.step)

    def _tensor(self, values: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(values, dtype=self.dtype)

    def _components(self, batch: Dict[str, np.ndarray], window: slice, hidden):
        f_o, f_c = self._tensor(batch['f_o'][:, window]), self._tensor(batch['f_c'][:, window])
        targets = ModelOutput(self._tensor(batch['g_r'][:, window]), self._tensor(batch['g_i'][:, window]),
                              self._tensor(batch['r'][:, window]), self._tensor(batch['snr'][:, window]))
        mask = self._tensor(batch['mask'][:, window])
        predictions, hidden = self.model(f_o, f_c, hidden)
        if self.run.baseline_loss:
            parts = baseline_components(targets, predictions, self.run.loss, training=True, mask=mask)
        else:
            parts = loss_components(targets, predictions, self.run.loss, training=True,
                                    include_snr=self.include_snr, mask=mask)
        return parts, {name: h.detach() for name, h in hidden.items()}

    def _dump(self, batch: Dict[str, np.ndarray], reason: str) -> NumericalError:
        path = self.run.out_dir / f"nan_epoch{self.run.epoch:03d}_step{self.run.step:06d}.npz"
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, **batch)
        logger.error("%s; offending batch written to %s", reason, path)
        return NumericalError(f"{reason} (batch dumped to {path})", dump_path=str(path))

    def train_batch(self, items: Sequence[UtteranceFeatures]) -> Dict[str, float]:
        """One pass of optimizer steps over a batch; returns frame-weighted mean components"""
        frames = max(len(item) for item in items)
        batch = _stack(items, frames)
        padded = batch['mask'].size - int(batch['mask'].sum())
        if padded:
            logger.debug("Batch of %d utterances padded with %d frames", len(items), padded)
        self.model.train()
        hidden, totals, weight = None, {}, 0
        for start in range(0, frames, self.run.seq_frames):
            window = slice(start, min(start + self.run.seq_frames, frames))
            try:
                parts, hidden = self._components(batch, window, hidden)
            except ValueError as e:
                # the range check rejects NaN predictions before the loss is summed
                raise self._dump(batch, f"Invalid training values: {e}") from e
            if not torch.isfinite(parts['total']):
                raise self._dump(batch, "Non-finite training loss")
            self.optimizer.zero_grad()
            parts['total'].backward()
            try:
                self.optimizer.step()
            except NumericalError as e:
                raise self._dump(batch, str(e)) from e
            self.run.step += 1
            self.curve.write(self.run.epoch + 1, self.run.step, parts)
            span = float(batch['mask'][:, window].sum())
            for name, value in parts.items():
                totals[name] = totals.get(name, 0.0) + float(value.detach()) * span
            weight += span
        return {name: value / max(weight, 1) for name, value in totals.items()}

    def evaluate_loss(self, items: Sequence[UtteranceFeatures]) -> float:
        if not items:
            return float('nan')
        self.model.eval()
        total, weight = 0.0, 0
        with torch.no_grad():
            for item in items:
                batch = _stack([item], len(item))
                parts, _ = self._components(batch, slice(0, len(item)), None)
                total += float(parts['total']) * len(item)
                weight += len(item)
        return total / max(weight, 1)

    def checkpoint(self, name: str):
        path = save_model(self.model, self.run.out_dir / 'checkpoints' / f"{name}.pcpn")
        state = {'model': self.model.state_dict(), 'optimizer': self.optimizer.state_dict(),
                 'epoch': self.run.epoch, 'step': self.run.step, 'best_loss': self.best_loss}
        torch.save(state, path.with_suffix('.opt'))

    def fit(self) -> pd.DataFrame:
        """Train the remaining epochs; returns the per-epoch component means"""
        history = []
        for epoch in range(self.run.epoch, self.run.epochs):
            items = self.train_set.epoch_items(epoch)
            order = np.random.default_rng([self.run.seed, epoch]).permutation(len(items))
            epoch_parts, batches = {}, 0
            for start in tqdm(range(0, len(order), self.run.batch_size), desc=f'Epoch {epoch + 1}',
                              leave=False):
                parts = self.train_batch([items[i] for i in order[start:start + self.run.batch_size]])
                for name, value in parts.items():
                    epoch_parts[name] = epoch_parts.get(name, 0.0) + value
                batches += 1
            self.run.epoch = epoch + 1
            row = {'epoch': self.run.epoch, **{k: v / max(batches, 1) for k, v in epoch_parts.items()}}

            held_out = self.validation_set.utterances if self.validation_set else []
            row['validation'] = self.evaluate_loss(held_out) if held_out else row.get('total', float('nan'))
            history.append(row)
            logger.info("Epoch %d: total %.4f, validation %.4f", self.run.epoch,
                        row.get('total', float('nan')), row['validation'])

            self.checkpoint(f"epoch_{self.run.epoch:03d}")
            if row['validation'] < self.best_loss:
                self.best_loss = row['validation']
                self.checkpoint('best')
        save_model(self.model, self.run.model_path)
        return pd.DataFrame(history)


@dataclass
class TrainResult:
    model: PercepNetPlus
    history: pd.DataFrame


def _split(dataset: FeatureDataset, fraction: float, seed: int):
    if fraction <= 0 or len(dataset) < 2:
        return dataset, None
    held = max(1, int(round(fraction * len(dataset))))
    order = np.random.default_rng(seed).permutation(len(dataset))
    pick = lambda idx: FeatureDataset([dataset.utterances[i] for i in idx], [dataset.names[i] for i in idx])
    return pick(order[held:]), pick(order[:held])


def train(run: TrainRun, train_set=None, validation_set: Optional[FeatureDataset] = None) -> TrainResult:
    """
    Train a model as described by run

    Args:
        run: Run settings
        train_set: Dataset to use instead of run.data_dir
        validation_set: Held-out utterances

    Returns:
        TrainResult with the trained model and per-epoch losses
    """
    torch.manual_seed(run.seed)
    if train_set is None and run.epochs <= run.epoch:
        train_set = FeatureDataset([])
    elif train_set is None:
        if not run.data_dir.is_dir():
            raise ConfigurationError(f"Training data directory not found: {run.data_dir}")
        if run.dynamic_mix:
            train_set = DynamicMixDataset.from_directory(run.data_dir, run.seed, run.rir_probability)
        else:
            train_set, validation_set = _split(FeatureDataset.from_directory(run.data_dir),
                                               run.validation_fraction, run.seed)
    trainer = Trainer(run, train_set, validation_set)
    logger.info("Training %d parameters for %d epochs on %d utterances",
                trainer.model.parameter_count(), run.epochs - run.epoch, len(train_set))
    history = trainer.fit()
    return TrainResult(model=trainer.model, history=history)
