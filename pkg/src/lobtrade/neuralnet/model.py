"""Model definition: forward, stochastic forward, loss and gradients.

Block order: feature-axis conv blocks -> inception module (1x1 conv,
time conv, time max-pool + 1x1 conv) -> channel dropout (one mask value
per flattened feature channel, identical at every timestep of a pass,
inverted scaling 1/(1-rate)) -> LSTM -> dense softmax head.

Tensors flow as (batch, time, features, channels) in float64.  The
backward pass mirrors the forward graph exactly; see tests for the
finite-difference verification.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..rng import CounterRng

# Probability vectors are ordered [p(up), p(neutral), p(down)].
CLASS_ORDER = (1, 0, -1)
_LABEL_TO_CLASS = {1: 0, 0: 1, -1: 2}


def label_to_class(label: int) -> int:
    """Movement label {+1, 0, -1} -> class index {0, 1, 2}."""
    return _LABEL_TO_CLASS[label]


def class_to_label(index: int) -> int:
    return CLASS_ORDER[index]


class ShapeError(ValueError):
    """Input or weight shape does not match the model configuration."""


class NonFiniteError(FloatingPointError):
    """A non-finite activation appeared; names the offending layer."""


@dataclass(frozen=True)
class ConvBlockSpec:
    """Feature-axis convolution: kernel and stride along the 40-feature
    axis (time extent 1), `filters` output channels, leaky-ReLU."""

    kernel: int = 2
    stride: int = 2
    filters: int = 16


@dataclass(frozen=True)
class InceptionSpec:
    """Three parallel branches over the conv feature maps: 1x1 conv,
    `time_kernel`x1 conv over time (same padding), and `pool_size`x1
    time max-pool followed by a 1x1 conv.  Each branch has `filters`
    channels; outputs are concatenated."""

    filters: int = 32
    time_kernel: int = 3
    pool_size: int = 3


@dataclass(frozen=True)
class ModelConfig:
    T: int = 100
    n_features: int = 40
    conv_blocks: tuple[ConvBlockSpec, ...] = (ConvBlockSpec(), ConvBlockSpec())
    inception: InceptionSpec = field(default_factory=InceptionSpec)
    dropout_rate: float = 0.2
    recurrent_units: int = 64
    classes: int = 3
    leaky_slope: float = 0.01

    def validate(self) -> None:
        if self.T < 1:
            raise ShapeError("T must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ShapeError("dropout_rate must be in [0, 1)")
        if self.recurrent_units < 1:
            raise ShapeError("recurrent_units must be >= 1")
        if self.inception.time_kernel % 2 != 1 or self.inception.pool_size % 2 != 1:
            raise ShapeError("inception time kernel and pool size must be odd")
        if self.inception.filters < 1:
            raise ShapeError("inception filters must be >= 1")
        f = self.n_features
        for i, blk in enumerate(self.conv_blocks):
            if blk.kernel < 1 or blk.stride < 1 or blk.filters < 1:
                raise ShapeError(f"conv block {i}: bad kernel/stride/filters")
            if f < blk.kernel:
                raise ShapeError(f"conv block {i}: kernel {blk.kernel} exceeds {f} features")
            f = (f - blk.kernel) // blk.stride + 1

    def feature_sizes(self) -> list[int]:
        """Feature-axis widths after each conv block (first entry: input)."""
        sizes = [self.n_features]
        for blk in self.conv_blocks:
            sizes.append((sizes[-1] - blk.kernel) // blk.stride + 1)
        return sizes

    @property
    def conv_out_features(self) -> int:
        return self.feature_sizes()[-1]

    @property
    def lstm_input_dim(self) -> int:
        """Flattened channel count entering dropout and the LSTM."""
        return self.conv_out_features * 3 * self.inception.filters

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_blocks"] = tuple(ConvBlockSpec(**b) for b in d.get("conv_blocks", ()))
        if "inception" in d:
            d["inception"] = InceptionSpec(**d["inception"])
        return cls(**d)

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).digest()


class Weights:
    """Flat parameter store keyed by layer name (float64 arrays)."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self._arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self._arrays[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def names(self) -> tuple[str, ...]:
        return tuple(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "Weights":
        return Weights({k: v.copy() for k, v in self._arrays.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def validate_finite(self) -> None:
        for name, arr in self._arrays.items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"non-finite parameter in '{name}'")


def weight_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape map, in build order."""
    cfg.validate()
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 1
    for i, blk in enumerate(cfg.conv_blocks):
        shapes[f"conv{i}.w"] = (blk.filters, c_in, blk.kernel)
        shapes[f"conv{i}.b"] = (blk.filters,)
        c_in = blk.filters
    f = cfg.inception.filters
    shapes["incep1.w"] = (f, c_in)
    shapes["incep1.b"] = (f,)
    shapes["incep2.w"] = (f, c_in, cfg.inception.time_kernel)
    shapes["incep2.b"] = (f,)
    shapes["incep3.w"] = (f, c_in)
    shapes["incep3.b"] = (f,)
    d, h = cfg.lstm_input_dim, cfg.recurrent_units
    shapes["lstm.wx"] = (d, 4 * h)
    shapes["lstm.wh"] = (h, 4 * h)
    shapes["lstm.b"] = (4 * h,)
    shapes["out.w"] = (h, cfg.classes)
    shapes["out.b"] = (cfg.classes,)
    return shapes


def init_weights(cfg: ModelConfig, rng: CounterRng) -> Weights:
    """Fan-in-scaled uniform init for conv/dense, 1/sqrt(fan_in) uniform
    for the recurrent matrices, zero biases except forget gate bias 1."""
    arrays: dict[str, np.ndarray] = {}
    h = cfg.recurrent_units
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".b"):
            b = np.zeros(shape)
            if name == "lstm.b":
                b[h : 2 * h] = 1.0  # forget gate bias
            arrays[name] = b
        elif name == "lstm.wx":
            s = np.sqrt(1.0 / cfg.lstm_input_dim)
            arrays[name] = (rng.uniform(shape) * 2.0 - 1.0) * s
        elif name == "lstm.wh":
            s = np.sqrt(1.0 / h)
            arrays[name] = (rng.uniform(shape) * 2.0 - 1.0) * s
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            s = np.sqrt(6.0 / fan_in)
            arrays[name] = (rng.uniform(shape) * 2.0 - 1.0) * s
    return Weights(arrays)


def dropout_masks(cfg: ModelConfig, rng: CounterRng, n: int) -> np.ndarray:
    """n per-pass channel masks, entries in {0, 1/(1-rate)}."""
    keep = 1.0 - cfg.dropout_rate
    kept = rng.uniform((n, cfg.lstm_input_dim)) < keep
    return kept.astype(np.float64) / keep


def _check_finite(layer: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite activation in layer '{layer}'")


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def _leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0.0, 1.0, slope)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _conv_block_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, kernel: int, stride: int):
    """x (B,T,F,Cin) -> (windows, pre) with pre (B,T,Fo,Cout)."""
    f_out = (x.shape[2] - kernel) // stride + 1
    xw = np.stack(
        [x[:, :, j : j + stride * (f_out - 1) + 1 : stride, :] for j in range(kernel)],
        axis=-1,
    )  # (B,T,Fo,Cin,K)
    bsz, t, _, c_in, k = xw.shape
    pre = xw.reshape(bsz * t * f_out, c_in * k) @ w.reshape(w.shape[0], c_in * k).T
    pre = pre.reshape(bsz, t, f_out, w.shape[0]) + b
    return xw, pre


def _forward_cached(cfg: ModelConfig, w: Weights, X: np.ndarray, masks: np.ndarray | None):
    """Batched forward returning (probs, cache).  masks: (B, D) or None."""
    if X.ndim != 3 or X.shape[1] != cfg.T or X.shape[2] != cfg.n_features:
        raise ShapeError(
            f"input shape {X.shape} does not match (B, {cfg.T}, {cfg.n_features})"
        )
    slope = cfg.leaky_slope
    B, T = X.shape[0], cfg.T
    cache: dict = {"X": X, "masks": masks, "conv": []}

    h = X[..., None]  # (B,T,F,1)
    for i, blk in enumerate(cfg.conv_blocks):
        xw, pre = _conv_block_forward(h, w[f"conv{i}.w"], w[f"conv{i}.b"], blk.kernel, blk.stride)
        _check_finite(f"conv{i}", pre)
        h = _leaky(pre, slope)
        cache["conv"].append((xw, pre))
    cache["conv_out"] = h  # (B,T,Fc,C)

    # inception branch 1: 1x1 conv
    pre1 = h @ w["incep1.w"].T + w["incep1.b"]
    a1 = _leaky(pre1, slope)

    # inception branch 2: time conv, same zero padding
    kt = cfg.inception.time_kernel
    pt = kt // 2
    hp = np.pad(h, ((0, 0), (pt, pt), (0, 0), (0, 0)))
    xe = np.stack([hp[:, d : d + T] for d in range(kt)], axis=-1)  # (B,T,Fc,C,kt)
    c_in = h.shape[3]
    w2 = w["incep2.w"].reshape(cfg.inception.filters, c_in * kt)
    pre2 = xe.reshape(-1, c_in * kt) @ w2.T
    pre2 = pre2.reshape(B, T, h.shape[2], cfg.inception.filters) + w["incep2.b"]
    a2 = _leaky(pre2, slope)

    # inception branch 3: time max-pool (same, -inf padding) + 1x1 conv
    pool = cfg.inception.pool_size
    pp = pool // 2
    hm = np.pad(h, ((0, 0), (pp, pp), (0, 0), (0, 0)), constant_values=-np.inf)
    stackm = np.stack([hm[:, d : d + T] for d in range(pool)], axis=-1)  # (B,T,Fc,C,pool)
    argm = np.argmax(stackm, axis=-1)
    pooled = np.take_along_axis(stackm, argm[..., None], axis=-1)[..., 0]
    pre3 = pooled @ w["incep3.w"].T + w["incep3.b"]
    a3 = _leaky(pre3, slope)

    z = np.concatenate([a1, a2, a3], axis=-1)  # (B,T,Fc,3f)
    _check_finite("inception", z)
    cache.update(xe=xe, pre1=pre1, pre2=pre2, pre3=pre3, pooled=pooled, argm=argm)

    flat = z.reshape(B, T, cfg.lstm_input_dim)
    dropped = flat if masks is None else flat * masks[:, None, :]
    cache["flat"] = flat

    # LSTM over T steps; only the final hidden state feeds the head
    H = cfg.recurrent_units
    wx, wh, bl = w["lstm.wx"], w["lstm.wh"], w["lstm.b"]
    h_t = np.zeros((B, H))
    c_t = np.zeros((B, H))
    gates = np.empty((T, B, 4, H))
    cells = np.empty((T + 1, B, H))
    hs = np.empty((T + 1, B, H))
    cells[0] = 0.0
    hs[0] = 0.0
    for t in range(T):
        zt = dropped[:, t, :] @ wx + h_t @ wh + bl
        i_g = _sigmoid(zt[:, :H])
        f_g = _sigmoid(zt[:, H : 2 * H])
        g_g = np.tanh(zt[:, 2 * H : 3 * H])
        o_g = _sigmoid(zt[:, 3 * H :])
        c_t = f_g * c_t + i_g * g_g
        h_t = o_g * np.tanh(c_t)
        gates[t, :, 0], gates[t, :, 1], gates[t, :, 2], gates[t, :, 3] = i_g, f_g, g_g, o_g
        cells[t + 1] = c_t
        hs[t + 1] = h_t
    _check_finite("lstm", h_t)
    cache.update(dropped=dropped, gates=gates, cells=cells, hs=hs)

    logits = h_t @ w["out.w"] + w["out.b"]
    _check_finite("out", logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    probs = expl / expl.sum(axis=1, keepdims=True)
    cache.update(logits=logits, probs=probs, log_probs=shifted - np.log(expl.sum(axis=1, keepdims=True)))
    return probs, cache


def forward_batch(
    cfg: ModelConfig, w: Weights, X: np.ndarray, masks: np.ndarray | None = None
) -> np.ndarray:
    """Deterministic batched forward (or stochastic with explicit masks)."""
    probs, _ = _forward_cached(cfg, w, X, masks)
    return probs


def forward(
    cfg: ModelConfig, w: Weights, x: np.ndarray, rng: CounterRng | None = None
) -> np.ndarray:
    """Class probabilities for one window.

    Deterministic when `rng` is None (inverted dropout needs no rescale);
    otherwise draws one channel mask applied identically at every
    timestep.
    """
    if rng is None:
        return forward_batch(cfg, w, x[None])[0]
    return mc_forward(cfg, w, x, 1, rng)[0]


def mc_forward(cfg: ModelConfig, w: Weights, x: np.ndarray, M: int, rng: CounterRng) -> np.ndarray:
    """M stochastic passes over the same input, fresh mask per pass.

    Returns the (M, classes) matrix of softmax rows.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    masks = dropout_masks(cfg, rng, M)
    X = np.broadcast_to(x, (M,) + x.shape)
    return forward_batch(cfg, w, X, masks)


def stochastic_forward_trace(cfg: ModelConfig, w: Weights, x: np.ndarray, rng: CounterRng):
    """One stochastic pass exposing pre- and post-dropout activations.

    Returns (probs, pre (T, D), post (T, D)); instrumentation for the
    mask time-consistency checks.
    """
    masks = dropout_masks(cfg, rng, 1)
    probs, cache = _forward_cached(cfg, w, x[None], masks)
    return probs[0], cache["flat"][0], cache["dropped"][0]


def validate_mc_samples(samples: np.ndarray, tol: float = 1e-6) -> None:
    """Check the McSamples invariants: rows non-negative, sum to 1."""
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError(f"expected (M, classes) sample matrix, got {samples.shape}")
    if np.any(samples < 0):
        raise ValueError("negative probability in MC samples")
    if np.any(np.abs(samples.sum(axis=1) - 1.0) > tol):
        raise ValueError("MC sample row does not sum to 1")


def loss_and_grad(
    cfg: ModelConfig,
    w: Weights,
    X: np.ndarray,
    y: np.ndarray,
    masks: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its exact gradient.

    `y` holds class indices (see label_to_class).  `masks` fixes the
    per-example dropout masks for the pass; None disables dropout.
    """
    if len(X) == 0:
        raise ValueError("empty batch")
    probs, cache = _forward_cached(cfg, w, X, masks)
    B, T = X.shape[0], cfg.T
    y = np.asarray(y, dtype=np.int64)
    loss = float(-np.mean(cache["log_probs"][np.arange(B), y]))
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")

    grads = {name: np.zeros_like(arr) for name, arr in w.items()}
    slope = cfg.leaky_slope

    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B

    h_last = cache["hs"][T]
    grads["out.w"][:] = h_last.T @ dlogits
    grads["out.b"][:] = dlogits.sum(axis=0)
    dh = dlogits @ w["out.w"].T

    # LSTM backward through time
    H = cfg.recurrent_units
    wx, wh = w["lstm.wx"], w["lstm.wh"]
    gates, cells, hs, dropped = cache["gates"], cache["cells"], cache["hs"], cache["dropped"]
    dc = np.zeros((B, H))
    d_dropped = np.empty((B, T, dropped.shape[2]))
    for t in range(T - 1, -1, -1):
        i_g, f_g, g_g, o_g = gates[t, :, 0], gates[t, :, 1], gates[t, :, 2], gates[t, :, 3]
        tanh_c = np.tanh(cells[t + 1])
        do = dh * tanh_c
        dc = dc + dh * o_g * (1.0 - tanh_c**2)
        di = dc * g_g
        dg = dc * i_g
        df = dc * cells[t]
        dzi = di * i_g * (1.0 - i_g)
        dzf = df * f_g * (1.0 - f_g)
        dzg = dg * (1.0 - g_g**2)
        dzo = do * o_g * (1.0 - o_g)
        dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)  # (B,4H)
        grads["lstm.wx"] += dropped[:, t, :].T @ dz
        grads["lstm.wh"] += hs[t].T @ dz
        grads["lstm.b"] += dz.sum(axis=0)
        d_dropped[:, t, :] = dz @ wx.T
        dh = dz @ wh.T
        dc = dc * f_g

    dflat = d_dropped if masks is None else d_dropped * masks[:, None, :]
    f_c = cfg.conv_out_features
    nf = cfg.inception.filters
    dz_inc = dflat.reshape(B, T, f_c, 3 * nf)
    d1 = dz_inc[..., :nf] * _leaky_grad(cache["pre1"], slope)
    d2 = dz_inc[..., nf : 2 * nf] * _leaky_grad(cache["pre2"], slope)
    d3 = dz_inc[..., 2 * nf :] * _leaky_grad(cache["pre3"], slope)

    h_conv = cache["conv_out"]
    c_in = h_conv.shape[3]
    dh_conv = np.zeros_like(h_conv)

    # branch 1 (1x1)
    grads["incep1.w"][:] = np.einsum("btfo,btfc->oc", d1, h_conv)
    grads["incep1.b"][:] = d1.sum(axis=(0, 1, 2))
    dh_conv += d1 @ w["incep1.w"]

    # branch 2 (time conv)
    kt = cfg.inception.time_kernel
    pt = kt // 2
    xe = cache["xe"]
    grads["incep2.w"][:] = np.einsum("btfo,btfcd->ocd", d2, xe)
    grads["incep2.b"][:] = d2.sum(axis=(0, 1, 2))
    dhp = np.zeros((B, T + 2 * pt, f_c, c_in))
    for d in range(kt):
        dhp[:, d : d + T] += d2 @ w["incep2.w"][:, :, d]
    dh_conv += dhp[:, pt : pt + T]

    # branch 3 (max-pool + 1x1)
    grads["incep3.w"][:] = np.einsum("btfo,btfc->oc", d3, cache["pooled"])
    grads["incep3.b"][:] = d3.sum(axis=(0, 1, 2))
    dpooled = d3 @ w["incep3.w"]
    pool = cfg.inception.pool_size
    pp = pool // 2
    argm = cache["argm"]
    dhm = np.zeros((B, T + 2 * pp, f_c, c_in))
    for d in range(pool):
        sel = argm == d
        view = dhm[:, d : d + T]
        view[sel] += dpooled[sel]
    dh_conv += dhm[:, pp : pp + T]

    # conv blocks, last to first
    d_out = dh_conv
    for i in range(len(cfg.conv_blocks) - 1, -1, -1):
        blk = cfg.conv_blocks[i]
        xw, pre = cache["conv"][i]
        d_pre = d_out * _leaky_grad(pre, slope)  # (B,T,Fo,Cout)
        bsz, t, f_o, _ = d_pre.shape
        k, ci = blk.kernel, xw.shape[3]
        flat_x = xw.reshape(bsz * t * f_o, ci * k)
        flat_d = d_pre.reshape(bsz * t * f_o, blk.filters)
        grads[f"conv{i}.w"][:] = (flat_d.T @ flat_x).reshape(blk.filters, ci, k)
        grads[f"conv{i}.b"][:] = d_pre.sum(axis=(0, 1, 2))
        d_in = np.zeros((bsz, t, cfg.feature_sizes()[i], ci))
        for j in range(k):
            d_in[:, :, j : j + blk.stride * (f_o - 1) + 1 : blk.stride, :] += (
                d_pre @ w[f"conv{i}.w"][:, :, j]
            )
        d_out = d_in

    return loss, grads


def predict_proba(
    cfg: ModelConfig, w: Weights, X: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    """Deterministic class probabilities for many windows, batched."""
    out = np.empty((len(X), cfg.classes))
    for start in range(0, len(X), batch_size):
        out[start : start + batch_size] = forward_batch(cfg, w, X[start : start + batch_size])
    return out
