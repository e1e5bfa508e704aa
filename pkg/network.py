import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from dsp_core import NUM_BANDS
from errors import ConfigurationError, ModelFormatError, NumericalError, ShapeError
from feature_extractor import FC_DIM, FO_DIM

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"PCPN+"
MODEL_VERSION = 1
RECURRENT_LAYERS = ('block1', 'block2', 'gru1', 'gru2', 'gru3', 'snr_gru')

_ACTIVATIONS = {
    'tanh': torch.tanh,
    'sigmoid': torch.sigmoid,
    'linear': lambda x: x,
}


def tfgru_parameter_count(input_dim: int, band_dim: int, hidden: int,
                          num_bands: int = NUM_BANDS) -> int:
    """Projection FC + TGRU over the projected frame + FGRU over the band steps"""
    projected = num_bands * band_dim
    return (input_dim * projected + projected
            + 3 * hidden * (projected + hidden + 1)
            + 3 * hidden * (band_dim + hidden + 1))


def gru_parameter_count(input_dim: int, hidden: int) -> int:
    return 3 * hidden * (input_dim + hidden + 1)


def solve_tfgru_hidden(input_dim: int, gru_hidden: int, band_dim: int,
                       num_bands: int = NUM_BANDS) -> int:
    """
    Hidden width that makes a TF-GRU block cost what a plain GRU layer costs

    Args:
        input_dim: Width of the block input
        gru_hidden: Width of the plain GRU being matched
        band_dim: Per-band feature width of the FGRU steps

    Returns:
        The hidden size with the smallest parameter difference
    """
    target = gru_parameter_count(input_dim, gru_hidden)
    candidates = np.arange(1, 4 * gru_hidden + 1)
    costs = np.array([tfgru_parameter_count(input_dim, band_dim, int(h), num_bands)
                      for h in candidates])
    return int(candidates[np.argmin(np.abs(costs - target))])


@dataclass
class ModelConfig:
    """
    Layer sizes and switches of the enhancement network

    Args:
        fo_enc_dim: Encoder width for the hand-crafted features
        fc_enc_dim: Encoder width for the complex band features
        conv_channels: Channels of both temporal convolutions
        conv_kernel: Convolution kernel span in frames
        gru_hidden: Width of the three GRU layers and the plain-GRU reference
        tfgru_band_dim: Per-band width of the TF-GRU frequency steps
        snr_hidden: Width of the SNR branch GRU
        tfgru_hidden: TF-GRU hidden width, solved for parameter parity when None
        num_bands: Number of ERB bands
        lookahead_frames: Future frames the network may see
        complex_features: Feed the complex band features
        tf_gru: Use TF-GRU blocks instead of plain GRU layers
        snr_head: Build the SNR estimation branch
        seed: Initialization seed
    """
    fo_enc_dim: int = 64
    fc_enc_dim: int = 64
    conv_channels: int = 128
    conv_kernel: int = 3
    gru_hidden: int = 160
    tfgru_band_dim: int = 4
    snr_hidden: int = 64
    tfgru_hidden: Optional[int] = None
    num_bands: int = NUM_BANDS
    lookahead_frames: int = 3
    complex_features: bool = True
    tf_gru: bool = True
    snr_head: bool = True
    seed: int = 0

    def __post_init__(self):
        sizes = ['fo_enc_dim', 'fc_enc_dim', 'conv_channels', 'conv_kernel', 'gru_hidden',
                 'tfgru_band_dim', 'snr_hidden', 'num_bands', 'lookahead_frames']
        for name in sizes:
            if int(getattr(self, name)) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.conv_kernel > 1 + self.lookahead_frames:
            raise ConfigurationError(
                f"conv_kernel {self.conv_kernel} spans more than 1 + {self.lookahead_frames} frames")
        if 2 * (self.conv_kernel - 1) < self.lookahead_frames:
            raise ConfigurationError(
                f"Two kernels of {self.conv_kernel} frames cannot look {self.lookahead_frames} frames ahead")
        if self.tfgru_hidden is None:
            self.tfgru_hidden = solve_tfgru_hidden(self.conv_channels, self.gru_hidden,
                                                   self.tfgru_band_dim, self.num_bands)
        elif self.tfgru_hidden <= 0:
            raise ConfigurationError(f"tfgru_hidden must be positive, got {self.tfgru_hidden}")

    @classmethod
    def desk(cls, **overrides) -> 'ModelConfig':
        """Small preset that trains on a CPU in minutes"""
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> 'ModelConfig':
        """Full-scale preset, about 8.5M parameters"""
        values = dict(fo_enc_dim=128, fc_enc_dim=128, conv_channels=512, conv_kernel=3,
                      gru_hidden=460, tfgru_band_dim=8, snr_hidden=128)
        values.update(overrides)
        return cls(**values)

    @property
    def conv_lookaheads(self) -> Tuple[int, int]:
        first = min(self.conv_kernel - 1, self.lookahead_frames)
        return first, self.lookahead_frames - first

    @property
    def encoded_dim(self) -> int:
        return self.fo_enc_dim + (self.fc_enc_dim if self.complex_features else 0)

    @property
    def trunk_dim(self) -> int:
        return 2 * self.tfgru_hidden if self.tf_gru else self.gru_hidden

    def parameter_count(self) -> int:
        """Closed-form count of trainable parameters"""
        c, k, g = self.conv_channels, self.conv_kernel, self.gru_hidden
        total = FO_DIM * self.fo_enc_dim + self.fo_enc_dim
        if self.complex_features:
            total += FC_DIM * self.fc_enc_dim + self.fc_enc_dim
        total += self.encoded_dim * c * k + c
        total += c * c * k + c
        if self.tf_gru:
            h = self.tfgru_hidden
            total += tfgru_parameter_count(c, self.tfgru_band_dim, h, self.num_bands)
            total += tfgru_parameter_count(2 * h, self.tfgru_band_dim, h, self.num_bands)
        else:
            total += gru_parameter_count(c, g) + gru_parameter_count(g, g)
        total += gru_parameter_count(self.trunk_dim, g) + 2 * gru_parameter_count(g, g)
        total += 3 * (g * self.num_bands + self.num_bands)
        if self.snr_head:
            total += gru_parameter_count(c, self.snr_hidden) + self.snr_hidden + 1
        return total

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**values)


class ModelOutput(NamedTuple):
    """Band gains (real, imaginary), pitch strengths and normalized SNR, all in (0, 1)"""
    gain_real: torch.Tensor
    gain_imag: torch.Tensor
    strength: torch.Tensor
    snr: torch.Tensor


class FCLayer(nn.Module):
    """Fully connected layer y = act(Wx + b)"""

    def __init__(self, in_features: int, out_features: int, activation: str = 'linear'):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ConfigurationError(f"Unknown activation '{activation}'")
        self.in_features = in_features
        self.activation = activation
        self.linear = nn.Linear(in_features, out_features)
        bound = math.sqrt(1.0 / in_features)
        nn.init.uniform_(self.linear.weight, -bound, bound)
        nn.init.uniform_(self.linear.bias, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"FCLayer expects {self.in_features} inputs, got {x.shape[-1]}")
        return _ACTIVATIONS[self.activation](self.linear(x))


class LookaheadConv1d(nn.Module):
    """
    Temporal convolution over frames [t - (K-1-lookahead), t + lookahead]

    The offline path zero-pads both ends of the sequence; the streaming
    path convolves an explicit window of the last K inputs.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int, lookahead: int):
        super().__init__()
        if not 0 <= lookahead <= kernel - 1:
            raise ConfigurationError(f"Lookahead {lookahead} does not fit a kernel of {kernel}")
        self.kernel = kernel
        self.lookahead = lookahead
        self.conv = nn.Conv1d(in_channels, out_channels, kernel)
        bound = math.sqrt(1.0 / (in_channels * kernel))
        nn.init.uniform_(self.conv.weight, -bound, bound)
        nn.init.uniform_(self.conv.bias, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (batch, frames, channels) -> (batch, frames, out_channels)"""
        padded = F.pad(x.transpose(1, 2), (self.kernel - 1 - self.lookahead, self.lookahead))
        return torch.tanh(self.conv(padded)).transpose(1, 2)

    def step(self, window: torch.Tensor) -> torch.Tensor:
        """window: (batch, kernel, channels) -> (batch, out_channels)"""
        return torch.tanh(self.conv(window.transpose(1, 2)))[..., 0]


class GRUCell(nn.Module):
    """
    Single GRU update

    z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    h~ = tanh(W_h x + U_h (r * h) + b_h), h' = (1 - z) * h + z * h~
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.x2h = nn.Linear(input_size, 3 * hidden_size)
        self.h2h = nn.Linear(hidden_size, 3 * hidden_size, bias=False)
        self.reset_parameters()

    def reset_parameters(self):
        bound = math.sqrt(1.0 / self.input_size)
        nn.init.uniform_(self.x2h.weight, -bound, bound)
        nn.init.uniform_(self.x2h.bias, -bound, bound)
        # each gate's recurrent block is orthogonal
        for gate in self.h2h.weight.data.chunk(3, 0):
            nn.init.orthogonal_(gate)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_size or h.shape[-1] != self.hidden_size:
            raise ShapeError(f"GRUCell expects ({self.input_size}, {self.hidden_size}), "
                             f"got ({x.shape[-1]}, {h.shape[-1]})")
        x_z, x_r, x_h = self.x2h(x).chunk(3, -1)
        u_z, u_r, u_h = self.h2h.weight.chunk(3, 0)
        z = torch.sigmoid(x_z + h @ u_z.T)
        r = torch.sigmoid(x_r + h @ u_r.T)
        candidate = torch.tanh(x_h + (r * h) @ u_h.T)
        return (1.0 - z) * h + z * candidate


class GRULayer(nn.Module):
    """GRU over the second axis of a (batch, steps, features) tensor"""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.hidden_size = hidden_size
        self.cell = GRUCell(input_size, hidden_size)

    def forward(self, x: torch.Tensor, h0: Optional[torch.Tensor] = None
                ) -> Tuple[torch.Tensor, torch.Tensor]:
        h = x.new_zeros(x.shape[0], self.hidden_size) if h0 is None else h0
        outputs = []
        for step in range(x.shape[1]):
            h = self.cell(x[:, step], h)
            outputs.append(h)
        if not outputs:
            return x.new_zeros(x.shape[0], 0, self.hidden_size), h
        return torch.stack(outputs, dim=1), h


class TFGRUBlock(nn.Module):
    """
    Time-frequency GRU block

    A projection spreads each frame over num_bands steps of band_dim
    values. The TGRU runs across frames on the flat projection; the FGRU
    runs across the band steps of each frame from a zero state. The block
    emits the TGRU output next to the final FGRU state.
    """

    def __init__(self, input_size: int, band_dim: int, hidden_size: int,
                 num_bands: int = NUM_BANDS, projection_size: Optional[int] = None):
        super().__init__()
        projection_size = projection_size or num_bands * band_dim
        if projection_size % num_bands:
            raise ConfigurationError(
                f"TF-GRU projection width {projection_size} is not divisible by {num_bands} bands")
        self.num_bands = num_bands
        self.band_dim = projection_size // num_bands
        self.hidden_size = hidden_size
        self.projection = FCLayer(input_size, projection_size, 'tanh')
        self.tgru = GRULayer(projection_size, hidden_size)
        self.fgru = GRULayer(self.band_dim, hidden_size)

    @property
    def output_size(self) -> int:
        return 2 * self.hidden_size

    def forward(self, x: torch.Tensor, h0: Optional[torch.Tensor] = None
                ) -> Tuple[torch.Tensor, torch.Tensor]:
        batch, frames = x.shape[:2]
        projected = self.projection(x)
        time_out, h_last = self.tgru(projected, h0)
        bands = projected.reshape(batch * frames, self.num_bands, self.band_dim)
        _, freq_final = self.fgru(bands)
        freq_out = freq_final.reshape(batch, frames, self.hidden_size)
        return torch.cat([time_out, freq_out], dim=-1), h_last


@dataclass
class ModelState:
    """
    Streaming state of one audio stream

    Args:
        hidden: Last hidden vector of every recurrent layer
        conv1_window: Last conv_kernel encoded frames
        conv2_window: Last conv_kernel first-convolution outputs
        frames_in: Frames pushed so far
        real_frames: Frames pushed with features, not as end padding
    """
    hidden: Dict[str, torch.Tensor] = field(default_factory=dict)
    conv1_window: Optional[torch.Tensor] = None
    conv2_window: Optional[torch.Tensor] = None
    frames_in: int = 0
    real_frames: int = 0


class PercepNetPlus(nn.Module):
    """
    Gain, strength and SNR estimator

    Encoders -> two lookahead convolutions -> two TF-GRU blocks -> three
    GRU layers -> sigmoid heads for the real gains, imaginary gains and
    pitch strengths. The SNR branch taps the convolution output.
    """

    def __init__(self, config: Optional[ModelConfig] = None):
        super().__init__()
        self.config = config or ModelConfig.desk()
        cfg = self.config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self._build(cfg)
        logger.debug("Built PercepNetPlus with %d parameters", self.parameter_count())

    def _build(self, cfg: ModelConfig):
        self.fo_enc = FCLayer(FO_DIM, cfg.fo_enc_dim, 'tanh')
        self.fc_enc = FCLayer(FC_DIM, cfg.fc_enc_dim, 'tanh') if cfg.complex_features else None
        first, second = cfg.conv_lookaheads
        self.conv1 = LookaheadConv1d(cfg.encoded_dim, cfg.conv_channels, cfg.conv_kernel, first)
        self.conv2 = LookaheadConv1d(cfg.conv_channels, cfg.conv_channels, cfg.conv_kernel, second)
        if cfg.tf_gru:
            self.block1 = TFGRUBlock(cfg.conv_channels, cfg.tfgru_band_dim, cfg.tfgru_hidden, cfg.num_bands)
            self.block2 = TFGRUBlock(2 * cfg.tfgru_hidden, cfg.tfgru_band_dim, cfg.tfgru_hidden, cfg.num_bands)
        else:
            self.block1 = GRULayer(cfg.conv_channels, cfg.gru_hidden)
            self.block2 = GRULayer(cfg.gru_hidden, cfg.gru_hidden)
        self.gru1 = GRULayer(cfg.trunk_dim, cfg.gru_hidden)
        self.gru2 = GRULayer(cfg.gru_hidden, cfg.gru_hidden)
        self.gru3 = GRULayer(cfg.gru_hidden, cfg.gru_hidden)
        self.gain_real_head = FCLayer(cfg.gru_hidden, cfg.num_bands, 'sigmoid')
        self.gain_imag_head = FCLayer(cfg.gru_hidden, cfg.num_bands, 'sigmoid')
        self.strength_head = FCLayer(cfg.gru_hidden, cfg.num_bands, 'sigmoid')
        if cfg.snr_head:
            self.snr_gru = GRULayer(cfg.conv_channels, cfg.snr_hidden)
            self.snr_fc = FCLayer(cfg.snr_hidden, 1, 'sigmoid')
        else:
            self.snr_gru = None
            self.snr_fc = None

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _encode(self, f_o: torch.Tensor, f_c: torch.Tensor) -> torch.Tensor:
        encoded = self.fo_enc(f_o)
        if self.fc_enc is not None:
            encoded = torch.cat([encoded, self.fc_enc(f_c)], dim=-1)
        return encoded

    def _recurrent(self, x: torch.Tensor, hidden: Optional[Dict[str, torch.Tensor]]
                   ) -> Tuple[ModelOutput, Dict[str, torch.Tensor]]:
        hidden = dict(hidden or {})
        y, hidden['block1'] = self.block1(x, hidden.get('block1'))
        y, hidden['block2'] = self.block2(y, hidden.get('block2'))
        y, hidden['gru1'] = self.gru1(y, hidden.get('gru1'))
        y, hidden['gru2'] = self.gru2(y, hidden.get('gru2'))
        y, hidden['gru3'] = self.gru3(y, hidden.get('gru3'))
        if self.snr_gru is not None:
            s, hidden['snr_gru'] = self.snr_gru(x, hidden.get('snr_gru'))
            snr = self.snr_fc(s)[..., 0]
        else:
            snr = x.new_ones(x.shape[:2])
        output = ModelOutput(gain_real=self.gain_real_head(y), gain_imag=self.gain_imag_head(y),
                             strength=self.strength_head(y), snr=snr)
        return output, hidden

    def forward(self, f_o: torch.Tensor, f_c: torch.Tensor,
                hidden: Optional[Dict[str, torch.Tensor]] = None
                ) -> Tuple[ModelOutput, Dict[str, torch.Tensor]]:
        """
        Offline pass over whole sequences

        Args:
            f_o: (batch, frames, 70)
            f_c: (batch, frames, 68)
            hidden: Recurrent state carried in from a previous window

        Returns:
            (ModelOutput with (batch, frames, ...) tensors, final hidden states)
        """
        if f_o.shape[-1] != FO_DIM or f_c.shape[-1] != FC_DIM or f_o.shape[:2] != f_c.shape[:2]:
            raise ShapeError(f"Feature shapes {tuple(f_o.shape)} / {tuple(f_c.shape)} do not match the model")
        x = self.conv2(self.conv1(self._encode(f_o, f_c)))
        return self._recurrent(x, hidden)

    def initial_state(self, batch: int = 1) -> ModelState:
        """Zero state for a new stream"""
        weight = self.conv1.conv.weight
        cfg = self.config
        return ModelState(
            conv1_window=weight.new_zeros(batch, cfg.conv_kernel, cfg.encoded_dim),
            conv2_window=weight.new_zeros(batch, cfg.conv_kernel, cfg.conv_channels),
        )

    def step(self, f_o: Optional[torch.Tensor], f_c: Optional[torch.Tensor],
             state: ModelState) -> Optional[ModelOutput]:
        """
        Push one frame of features into a stream

        Passing None for the features pushes a zero encoded frame, which
        is how the offline pass pads beyond the end of a sequence.

        Args:
            f_o: (batch, 70) or None
            f_c: (batch, 68) or None
            state: Stream state, updated in place

        Returns:
            Outputs for the frame lookahead_frames behind the newest one,
            or None while the lookahead is still filling
        """
        if not isinstance(state, ModelState) or state.conv1_window is None:
            raise ValueError("step needs a state from initial_state()")
        window = state.conv1_window
        if f_o is None:
            encoded = window.new_zeros(window.shape[0], window.shape[2])
        else:
            encoded = self._encode(f_o, f_c)
            state.real_frames += 1
        state.conv1_window = torch.cat([window[:, 1:], encoded[:, None]], dim=1)
        state.frames_in += 1

        first, second = self.config.conv_lookaheads
        newest = state.frames_in - 1
        if newest - first < 0:
            return None
        conv1_out = self.conv1.step(state.conv1_window)
        if newest - first >= state.real_frames:
            # past the end: the offline pass zero-pads the second convolution here
            conv1_out = torch.zeros_like(conv1_out)
        state.conv2_window = torch.cat([state.conv2_window[:, 1:], conv1_out[:, None]], dim=1)
        if newest - first - second < 0:
            return None
        conv2_out = self.conv2.step(state.conv2_window)
        output, state.hidden = self._recurrent(conv2_out[:, None], state.hidden)
        return ModelOutput(*(t[:, 0] for t in output))


def model_backward(model: nn.Module, outputs: Sequence[torch.Tensor],
                   output_grads: Sequence[Optional[torch.Tensor]]) -> Dict[str, torch.Tensor]:
    """
    Reverse-mode gradients of the parameters given gradients of the outputs

    Args:
        model: Module whose forward produced the outputs
        outputs: Output tensors, still attached to their graph
        output_grads: One gradient per output; None excludes that output

    Returns:
        Parameter name -> gradient, zeros for parameters the outputs do not reach
    """
    pairs = [(out, grad) for out, grad in zip(outputs, output_grads) if grad is not None]
    if not pairs or not all(out.grad_fn is not None for out, _ in pairs):
        raise ValueError("model_backward needs outputs from a forward pass with gradient tracking")
    model.zero_grad(set_to_none=True)
    torch.autograd.backward([out for out, _ in pairs], [grad for _, grad in pairs])
    return {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in model.named_parameters()}


class AdamOptimizer:
    """
    Adam with a finiteness check on every gradient

    Args:
        params: Parameters to optimize
        lr: Learning rate
        betas: Moment decay rates
    """

    def __init__(self, params: Iterable[torch.Tensor], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.optimizer = torch.optim.Adam(self.params, lr=lr, betas=betas, eps=eps)

    def zero_grad(self):
        self.optimizer.zero_grad(set_to_none=True)

    def step(self):
        for p in self.params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                self.zero_grad()
                raise NumericalError("Non-finite gradient, optimizer step aborted")
        self.optimizer.step()

    def state_dict(self) -> Dict:
        return self.optimizer.state_dict()

    def load_state_dict(self, state: Dict):
        self.optimizer.load_state_dict(state)


_HEADER = struct.Struct('<5sH')
_LENGTH = struct.Struct('<I')


def save_model(model: PercepNetPlus, path: Union[str, Path]) -> Path:
    """
    Write a model file

    Layout: magic "PCPN+", version u16, config JSON prefixed by its u32
    length, every parameter in state_dict order as little-endian float32,
    then the CRC32 of everything before it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode('utf-8')
    chunks = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION), _LENGTH.pack(len(config_blob)), config_blob]
    for tensor in model.state_dict().values():
        chunks.append(tensor.detach().cpu().numpy().astype('<f4').tobytes())
    body = b''.join(chunks)
    path.write_bytes(body + struct.pack('<I', zlib.crc32(body)))
    logger.info("Saved model to %s", path)
    return path


def load_model(path: Union[str, Path]) -> PercepNetPlus:
    """Read a file written by save_model"""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ModelFormatError(f"Cannot read model file {path}: {e}") from e
    if len(data) < _HEADER.size + _LENGTH.size + 4:
        raise ModelFormatError(f"{path}: truncated model file")
    magic, version = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")
    body, (crc,) = data[:-4], struct.unpack('<I', data[-4:])
    if zlib.crc32(body) != crc:
        raise ModelFormatError(f"{path}: checksum mismatch")

    (config_len,) = _LENGTH.unpack_from(body, _HEADER.size)
    offset = _HEADER.size + _LENGTH.size
    try:
        config = ModelConfig.from_dict(json.loads(body[offset:offset + config_len].decode('utf-8')))
    except (ValueError, TypeError) as e:
        raise ModelFormatError(f"{path}: invalid model config: {e}") from e
    offset += config_len

    model = PercepNetPlus(config)
    state = model.state_dict()
    for name, tensor in state.items():
        size = tensor.numel() * 4
        if offset + size > len(body):
            raise ModelFormatError(f"{path}: parameter data ends before '{name}'")
        values = np.frombuffer(body, dtype='<f4', count=tensor.numel(), offset=offset)
        state[name] = torch.from_numpy(values.astype(np.float32).reshape(tensor.shape))
        offset += size
    if offset != len(body):
        raise ModelFormatError(f"{path}: {len(body) - offset} trailing bytes after parameters")
    model.load_state_dict(state)
    logger.info("Loaded model from %s (%d parameters)", path, model.parameter_count())
    return model
