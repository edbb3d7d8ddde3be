"""Model components: CP factor matrices, the causal temporal encoder, and the
convolutional scorer applied to the latent interaction tensor.

The prediction pipeline for an entry (i, j, k) is

    encode V around slot k  ->  outer product with S[i] and U[j]  ->
    RxRxR interaction tensor  ->  conv stack  ->  sigmoid score in (0, 1)

Everything here is forward-only and pure; gradients live in the training
module and the batch kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import ConfigError, DataError
from .kernels.numpy_backend import sigmoid

MIN_RANK = 7


def require_min_rank(rank: int) -> None:
    if rank < MIN_RANK:
        raise ConfigError(f"rank must be ≥ {MIN_RANK} for nlr-cnn, got {rank}")


def pool_applies(rank: int) -> bool:
    """Whether the 2x2/stride-2 pool fits between the convolutions.

    The valid chain with pooling is R -> R-2 -> (R-2)//2 -> ... -> (R-2)//2 - 3
    which closes only for R >= 10; for 7 <= R <= 9 the pool is skipped and the
    three convolutions alone keep every map at least 1x1.
    """
    return (rank - 2) // 2 >= 4


def spatial_chain(rank: int) -> tuple[int, ...]:
    """Spatial side lengths after each stage actually applied."""
    require_min_rank(rank)
    n1 = rank - 2
    if pool_applies(rank):
        n2 = n1 // 2
        return (rank, n1, n2, n2 - 2, n2 - 3)
    return (rank, n1, n1 - 2, n1 - 3)


@dataclass
class FactorModel:
    """Rank-R feature matrices for stations (S), parameters (U), time slots (V)."""

    S: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        if not (self.S.ndim == self.U.ndim == self.V.ndim == 2):
            raise ConfigError("factor matrices must be 2-D")
        if not (self.S.shape[1] == self.U.shape[1] == self.V.shape[1] >= 1):
            raise ConfigError("factor matrices must share a common rank >= 1")

    @property
    def rank(self) -> int:
        return self.S.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.S.shape[0], self.U.shape[0], self.V.shape[0])

    def copy(self) -> "FactorModel":
        return FactorModel(self.S.copy(), self.U.copy(), self.V.copy())


@dataclass
class TemporalEncoder:
    """Depthwise causal taps over a window of time-slot embeddings.

    ``weights[r, tau]`` multiplies V[k - window + 1 + tau, r]; the last tap
    is the current slot. Out-of-range (negative) slots contribute zero.
    """

    weights: np.ndarray  # (R, window)
    bias: np.ndarray     # (R,)

    @property
    def window(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "TemporalEncoder":
        return TemporalEncoder(self.weights.copy(), self.bias.copy())


@dataclass
class InteractionCNN:
    """Conv stack scoring the RxRxR interaction tensor down to one sigmoid value."""

    conv3_k: np.ndarray  # (C1, R, 3, 3), input channels = temporal latent mode
    conv3_b: np.ndarray
    conv2_k: np.ndarray  # (C2, C1, 3, 3)
    conv2_b: np.ndarray
    conv1_k: np.ndarray  # (C3, C2, 2, 2)
    conv1_b: np.ndarray
    head_w: np.ndarray   # (C3,)
    head_b: np.ndarray   # scalar, kept 0-d for uniform parameter handling
    use_pool: bool

    @property
    def rank(self) -> int:
        return self.conv3_k.shape[1]

    @property
    def channels(self) -> tuple[int, int, int]:
        return (self.conv3_k.shape[0], self.conv2_k.shape[0], self.conv1_k.shape[0])

    def copy(self) -> "InteractionCNN":
        return InteractionCNN(
            self.conv3_k.copy(), self.conv3_b.copy(),
            self.conv2_k.copy(), self.conv2_b.copy(),
            self.conv1_k.copy(), self.conv1_b.copy(),
            self.head_w.copy(), self.head_b.copy(), self.use_pool)


@dataclass
class NlrModel:
    """Full prediction model: factors + temporal encoder + interaction CNN."""

    factors: FactorModel
    encoder: TemporalEncoder
    cnn: InteractionCNN

    @property
    def rank(self) -> int:
        return self.factors.rank

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.factors.dims

    def params(self) -> dict[str, np.ndarray]:
        """Named parameter tensors; values are live views, not copies."""
        return {
            "S": self.factors.S,
            "U": self.factors.U,
            "V": self.factors.V,
            "encoder_w": self.encoder.weights,
            "encoder_b": self.encoder.bias,
            "conv3_k": self.cnn.conv3_k,
            "conv3_b": self.cnn.conv3_b,
            "conv2_k": self.cnn.conv2_k,
            "conv2_b": self.cnn.conv2_b,
            "conv1_k": self.cnn.conv1_k,
            "conv1_b": self.cnn.conv1_b,
            "head_w": self.cnn.head_w,
            "head_b": self.cnn.head_b,
        }

    def copy(self) -> "NlrModel":
        return NlrModel(self.factors.copy(), self.encoder.copy(), self.cnn.copy())

    def spatial_chain(self) -> tuple[int, ...]:
        return spatial_chain(self.rank)

    def kernel_args(self) -> tuple:
        c = self.cnn
        return (self.factors.S, self.factors.U, self.factors.V,
                self.encoder.weights, self.encoder.bias,
                c.conv3_k, c.conv3_b, c.conv2_k, c.conv2_b, c.conv1_k, c.conv1_b,
                c.head_w, float(c.head_b), c.use_pool)

    def predict_batch(self, ii, jj, kk) -> np.ndarray:
        return kernels.nlr_predict(*self.kernel_args(), ii, jj, kk)


# ---------------------------------------------------------------------------
# initialization


def positive_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform draw on (0, 0.1]; strictly positive so nonnegative projection and
    the all-zero stationary point are both avoided."""
    return 0.1 * (1.0 - rng.random(shape))


def init_factor_model(dims, rank: int, rng: np.random.Generator) -> FactorModel:
    n_i, n_j, n_k = dims
    return FactorModel(
        S=positive_uniform(rng, (n_i, rank)),
        U=positive_uniform(rng, (n_j, rank)),
        V=positive_uniform(rng, (n_k, rank)),
    )


def init_encoder(rank: int, window: int, rng: np.random.Generator) -> TemporalEncoder:
    # identity tap: the encoder starts as a pass-through of the current slot
    weights = np.zeros((rank, window))
    weights[:, -1] = 1.0
    return TemporalEncoder(weights=weights, bias=np.zeros(rank))


def _fan_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


# factor entries start small, so zero conv biases would leave most ReLUs dead
# and make training a coin flip; a small positive bias starts every unit live
CONV_BIAS_INIT = 0.05


def init_cnn(rank: int, channels: tuple[int, int, int],
             rng: np.random.Generator) -> InteractionCNN:
    require_min_rank(rank)
    c1, c2, c3 = channels
    if min(channels) < 1:
        raise ConfigError(f"channel widths must be positive, got {channels}")
    return InteractionCNN(
        conv3_k=_fan_uniform(rng, (c1, rank, 3, 3), rank * 9, c1 * 9),
        conv3_b=np.full(c1, CONV_BIAS_INIT),
        conv2_k=_fan_uniform(rng, (c2, c1, 3, 3), c1 * 9, c2 * 9),
        conv2_b=np.full(c2, CONV_BIAS_INIT),
        conv1_k=_fan_uniform(rng, (c3, c2, 2, 2), c2 * 4, c3 * 4),
        conv1_b=np.full(c3, CONV_BIAS_INIT),
        head_w=_fan_uniform(rng, (c3,), c3, 1),
        head_b=np.zeros(()),
        use_pool=pool_applies(rank),
    )


def init_nlr_model(dims, rank: int, window: int, channels,
                   rng: np.random.Generator) -> NlrModel:
    return NlrModel(
        factors=init_factor_model(dims, rank, rng),
        encoder=init_encoder(rank, window, rng),
        cnn=init_cnn(rank, tuple(channels), rng),
    )


# ---------------------------------------------------------------------------
# single-entry forward operations


def temporal_encode(V: np.ndarray, k: int, enc: TemporalEncoder) -> np.ndarray:
    """Causally encoded time embedding for slot k: ReLU of the windowed taps."""
    if not 0 <= k < V.shape[0]:
        raise DataError(f"time index {k} out of range [0, {V.shape[0]})")
    t = enc.window
    pre = enc.bias.astype(np.float64).copy()
    for tau in range(t):
        kt = k - t + 1 + tau
        if kt >= 0:
            pre += enc.weights[:, tau] * V[kt]
    return np.maximum(pre, 0.0)


def outer3(s: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rank-one interaction tensor H[a,b,c] = s_a * u_b * v_c."""
    if not (s.shape == u.shape == v.shape and s.ndim == 1):
        raise DataError(
            f"outer3 needs three equal-length vectors, got {s.shape}, {u.shape}, {v.shape}")
    return s[:, None, None] * u[None, :, None] * v[None, None, :]


def _conv2d_valid(x: np.ndarray, kern: np.ndarray, bias: np.ndarray) -> np.ndarray:
    ksz = kern.shape[2]
    win = sliding_window_view(x, (ksz, ksz), axis=(1, 2))
    return np.einsum("cpqyx,ocyx->opq", win, kern) + bias[:, None, None]


def maxpool2x2(x: np.ndarray) -> np.ndarray:
    """2x2/stride-2 max pool over the trailing two axes; odd edges are cropped."""
    c, n = x.shape[0], x.shape[1]
    half = n // 2
    crop = x[:, :2 * half, :2 * half]
    blocks = crop.reshape(c, half, 2, half, 2).transpose(0, 1, 3, 2, 4).reshape(c, half, half, 4)
    return blocks.max(-1)


def maxpool2x2_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Route pooled gradients to the first row-major argmax of each 2x2 block."""
    c, n = x.shape[0], x.shape[1]
    half = n // 2
    crop = x[:, :2 * half, :2 * half]
    blocks = crop.reshape(c, half, 2, half, 2).transpose(0, 1, 3, 2, 4).reshape(c, half, half, 4)
    am = blocks.argmax(-1)
    dblocks = np.zeros_like(blocks)
    np.put_along_axis(dblocks, am[..., None], grad[..., None], -1)
    out = np.zeros_like(x)
    out[:, :2 * half, :2 * half] = dblocks.reshape(
        c, half, half, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * half, 2 * half)
    return out


def cnn_forward(H: np.ndarray, net: InteractionCNN) -> float:
    """Score an interaction tensor: conv stack, global average, sigmoid.

    The temporal mode (third axis of H) is unfolded as the channel axis of an
    RxR spatial map. Output is strictly inside (0, 1).
    """
    rank = net.rank
    if H.shape != (rank, rank, rank):
        raise DataError(f"interaction tensor must be {(rank, rank, rank)}, got {H.shape}")
    x = np.moveaxis(H, 2, 0)  # channels = temporal latent mode
    x = np.maximum(_conv2d_valid(x, net.conv3_k, net.conv3_b), 0.0)
    if net.use_pool:
        x = maxpool2x2(x)
    x = np.maximum(_conv2d_valid(x, net.conv2_k, net.conv2_b), 0.0)
    x = np.maximum(_conv2d_valid(x, net.conv1_k, net.conv1_b), 0.0)
    g = x.mean(axis=(1, 2))
    return float(sigmoid(g @ net.head_w + float(net.head_b)))


def model_predict(factors: FactorModel, enc: TemporalEncoder, net: InteractionCNN,
                  i: int, j: int, k: int) -> float:
    """Predicted (normalized) value for cell (i, j, k)."""
    n_i, n_j, n_k = factors.dims
    if not (0 <= i < n_i and 0 <= j < n_j and 0 <= k < n_k):
        raise DataError(f"index ({i}, {j}, {k}) out of range for dims {factors.dims}")
    v_enc = temporal_encode(factors.V, k, enc)
    return cnn_forward(outer3(factors.S[i], factors.U[j], v_enc), net)
