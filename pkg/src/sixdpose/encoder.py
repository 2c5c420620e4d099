"""Convolutional denoising autoencoder with hand-derived gradients.

The network maps a square RGB crop to a latent vector and back:

* encoder: N stride-2 convolutions (kernel 5, ReLU) followed by a fully
  connected layer to the latent vector (linear);
* decoder: fully connected layer (ReLU), then N stages of nearest-neighbor
  2x upsampling + stride-1 convolution (ReLU on all but the last, which is
  followed by a sigmoid).

Everything runs on numpy arrays laid out (batch, height, width, channels).
Backpropagation is written per layer kind; there is no autodiff. The
training loss is the sum over samples of the Euclidean norm of the
flattened reconstruction error, guarded by 1e-12 inside the square root.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

LOSS_GUARD = 1e-12


@dataclass(frozen=True)
class Architecture:
    """Shape descriptor; fully determines every tensor in the network."""

    input_size: int = 64
    input_channels: int = 3
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    kernel: int = 5
    latent_dim: int = 128

    def __post_init__(self):
        size = self.input_size
        for _ in self.conv_channels:
            if size % 2 != 0:
                raise ValueError(
                    f"input_size {self.input_size} is not divisible by 2^{len(self.conv_channels)}"
                )
            size //= 2
        if size < 1:
            raise ValueError("too many conv stages for this input size")
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")

    @property
    def bottleneck_size(self) -> int:
        return self.input_size // (2 ** len(self.conv_channels))

    @property
    def flat_dim(self) -> int:
        return self.bottleneck_size ** 2 * self.conv_channels[-1]

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        """All parameter tensors in their fixed (serialization) order."""
        k = self.kernel
        shapes: dict[str, tuple[int, ...]] = {}
        cin = self.input_channels
        for i, cout in enumerate(self.conv_channels):
            shapes[f"enc_conv{i}_w"] = (k, k, cin, cout)
            shapes[f"enc_conv{i}_b"] = (cout,)
            cin = cout
        shapes["enc_fc_w"] = (self.flat_dim, self.latent_dim)
        shapes["enc_fc_b"] = (self.latent_dim,)
        shapes["dec_fc_w"] = (self.latent_dim, self.flat_dim)
        shapes["dec_fc_b"] = (self.flat_dim,)
        dec_channels = tuple(reversed(self.conv_channels[:-1])) + (self.input_channels,)
        cin = self.conv_channels[-1]
        for i, cout in enumerate(dec_channels):
            shapes[f"dec_conv{i}_w"] = (k, k, cin, cout)
            shapes[f"dec_conv{i}_b"] = (cout,)
            cin = cout
        return shapes

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["conv_channels"] = list(d["conv_channels"])
        return d

    @staticmethod
    def from_json(obj: dict) -> "Architecture":
        kwargs = dict(obj)
        kwargs["conv_channels"] = tuple(kwargs["conv_channels"])
        return Architecture(**kwargs)


@dataclass(frozen=True)
class EncoderParams:
    """All trainable tensors plus the architecture that shapes them."""

    arch: Architecture
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.arch.tensor_shapes()
        if list(self.tensors.keys()) != list(expected.keys()):
            raise ValueError("tensor names/order do not match the architecture")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {t.shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"{name}: non-finite values")

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(self.arch, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())


def init_params(arch: Architecture, seed: int, dtype=np.float64) -> EncoderParams:
    """He-uniform weights, zero biases, drawn in fixed tensor order."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in arch.tensor_shapes().items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return EncoderParams(arch, tensors)


def zero_params(arch: Architecture, dtype=np.float64) -> EncoderParams:
    return EncoderParams(
        arch, {name: np.zeros(shape, dtype=dtype) for name, shape in arch.tensor_shapes().items()}
    )


# ---------------------------------------------------------------------------
# layer primitives (forward + backward)

def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Patches of x as (N, Ho, Wo, k*k*C); channel varies fastest."""
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (N, Ho, Wo, C, k, k)
    col = win.transpose(0, 1, 2, 4, 5, 3)  # (N, Ho, Wo, k, k, C)
    n, ho, wo = col.shape[:3]
    return np.ascontiguousarray(col).reshape(n, ho, wo, k * k * x.shape[3])


def _col2im(dcol: np.ndarray, x_shape: tuple, k: int, stride: int) -> np.ndarray:
    n, h, w, c = x_shape
    pad = k // 2
    ho, wo = dcol.shape[1], dcol.shape[2]
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcol.dtype)
    dcol = dcol.reshape(n, ho, wo, k, k, c)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride, :] += dcol[
                :, :, :, ki, kj, :
            ]
    return dxp[:, pad : pad + h, pad : pad + w, :]


def _conv_forward(x, w, b, stride):
    """Returns (y, col); the col is reused by the backward pass."""
    k = w.shape[0]
    col = _im2col(x, k, stride)
    n, ho, wo, _ = col.shape
    y = col.reshape(n * ho * wo, -1) @ w.reshape(-1, w.shape[3])
    return y.reshape(n, ho, wo, w.shape[3]) + b, col


def _conv_backward(dy, col, x_shape, w, stride):
    k = w.shape[0]
    n, ho, wo, patch = col.shape
    dy2 = dy.reshape(n * ho * wo, -1)
    dw = (col.reshape(n * ho * wo, patch).T @ dy2).reshape(w.shape)
    db = dy2.sum(axis=0)
    if stride == 1:
        # dx is the same-padding correlation of dy with the flipped kernel;
        # dy's im2col is much smaller than scattering a full dcol
        wflip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
        dycol = _im2col(dy, k, 1)
        dx = dycol.reshape(n * ho * wo, -1) @ wflip.reshape(-1, w.shape[2])
        dx = dx.reshape(x_shape)
    else:
        dcol = dy2 @ w.reshape(-1, w.shape[3]).T
        dx = _col2im(dcol.reshape(n, ho, wo, patch), x_shape, k, stride)
    return dx, dw, db


def _upsample2_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def _upsample2_backward(dy):
    n, h, w, c = dy.shape
    return dy.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# network forward / backward

def _as_batch(images: np.ndarray, arch: Architecture) -> tuple[np.ndarray, bool]:
    x = np.asarray(images)
    single = x.ndim == 3
    if single:
        x = x[None]
    expected = (arch.input_size, arch.input_size, arch.input_channels)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"expected image(s) of shape {expected}, got {np.asarray(images).shape}")
    return x, single


def _encode_forward(params: EncoderParams, x: np.ndarray, cache: list | None):
    t = params.tensors
    h = x.astype(params.dtype, copy=False)
    for i in range(len(params.arch.conv_channels)):
        pre, col = _conv_forward(h, t[f"enc_conv{i}_w"], t[f"enc_conv{i}_b"], stride=2)
        if cache is not None:
            cache.append(("enc_conv", i, (h.shape, col), pre))
        h = np.maximum(pre, 0.0)
    n = h.shape[0]
    flat = h.reshape(n, -1)
    z = flat @ t["enc_fc_w"] + t["enc_fc_b"]
    if cache is not None:
        cache.append(("enc_fc", None, flat, None))
    return z


def _decode_forward(params: EncoderParams, z: np.ndarray, cache: list | None):
    t = params.tensors
    arch = params.arch
    pre = z @ t["dec_fc_w"] + t["dec_fc_b"]
    if cache is not None:
        cache.append(("dec_fc", None, z, pre))
    h = np.maximum(pre, 0.0)
    s = arch.bottleneck_size
    h = h.reshape(h.shape[0], s, s, arch.conv_channels[-1])
    n_stages = len(arch.conv_channels)
    for i in range(n_stages):
        up = _upsample2_forward(h)
        pre, col = _conv_forward(up, t[f"dec_conv{i}_w"], t[f"dec_conv{i}_b"], stride=1)
        if cache is not None:
            cache.append(("dec_conv", i, (up.shape, col), pre))
        if i < n_stages - 1:
            h = np.maximum(pre, 0.0)
        else:
            h = _sigmoid(pre)
            if cache is not None:
                cache.append(("sigmoid", None, None, h))
    return h


def encode(params: EncoderParams, images: np.ndarray) -> np.ndarray:
    """Latent code(s) for one image (H, W, 3) or a batch (N, H, W, 3)."""
    x, single = _as_batch(images, params.arch)
    z = _encode_forward(params, x, cache=None)
    return z[0] if single else z


def decode(params: EncoderParams, latents: np.ndarray) -> np.ndarray:
    """Reconstruction(s) from latent code(s) of dim latent_dim."""
    z = np.asarray(latents, dtype=params.dtype)
    single = z.ndim == 1
    if single:
        z = z[None]
    if z.shape[1] != params.arch.latent_dim:
        raise ValueError(f"expected latent dim {params.arch.latent_dim}, got {z.shape[1]}")
    out = _decode_forward(params, z, cache=None)
    return out[0] if single else out


def reconstruct(params: EncoderParams, images: np.ndarray) -> np.ndarray:
    return decode(params, encode(params, images))


def _per_sample_norms(recon: np.ndarray, targets: np.ndarray) -> np.ndarray:
    diff = (recon - targets).reshape(recon.shape[0], -1)
    return np.sqrt((diff * diff).sum(axis=1) + LOSS_GUARD)


def loss(params: EncoderParams, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Sum over samples of the L2 norm of the reconstruction error."""
    x, _ = _as_batch(inputs, params.arch)
    t, _ = _as_batch(targets, params.arch)
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    recon = _decode_forward(params, _encode_forward(params, x, None), None)
    return float(_per_sample_norms(recon, t.astype(params.dtype, copy=False)).sum())


def loss_and_grads(
    params: EncoderParams, inputs: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Training loss and its gradient for every parameter tensor."""
    x, _ = _as_batch(inputs, params.arch)
    tgt, _ = _as_batch(targets, params.arch)
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    tgt = tgt.astype(params.dtype, copy=False)

    cache: list = []
    z = _encode_forward(params, x, cache)
    recon = _decode_forward(params, z, cache)

    norms = _per_sample_norms(recon, tgt)
    total = float(norms.sum())

    t = params.tensors
    grads = {name: None for name in t}
    diff = recon - tgt
    d = diff / norms[:, None, None, None]

    # walk the cache backwards
    for entry in reversed(cache):
        kind, idx, a, b = entry
        if kind == "sigmoid":
            out = b
            d = d * out * (1.0 - out)
        elif kind == "dec_conv":
            (up_shape, col), _pre = a, b
            if d.ndim != 4:
                raise AssertionError("gradient shape mismatch")
            dx, dw, db = _conv_backward(d, col, up_shape, t[f"dec_conv{idx}_w"], stride=1)
            grads[f"dec_conv{idx}_w"] = dw
            grads[f"dec_conv{idx}_b"] = db
            d = _upsample2_backward(dx)
            if idx > 0:
                # ReLU between stages: previous stage's preactivation gate
                prev_pre = _find_pre(cache, "dec_conv", idx - 1)
                d = d * (prev_pre > 0)
            else:
                d = d.reshape(d.shape[0], -1)
                fc_pre = _find_pre(cache, "dec_fc", None)
                d = d * (fc_pre > 0)
        elif kind == "dec_fc":
            zin, _pre = a, b
            grads["dec_fc_w"] = zin.T @ d
            grads["dec_fc_b"] = d.sum(axis=0)
            d = d @ t["dec_fc_w"].T
        elif kind == "enc_fc":
            flat = a
            grads["enc_fc_w"] = flat.T @ d
            grads["enc_fc_b"] = d.sum(axis=0)
            d = d @ t["enc_fc_w"].T
            s = params.arch.bottleneck_size
            d = d.reshape(d.shape[0], s, s, params.arch.conv_channels[-1])
        elif kind == "enc_conv":
            (x_shape, col), pre = a, b
            d = d * (pre > 0)
            dx, dw, db = _conv_backward(d, col, x_shape, t[f"enc_conv{idx}_w"], stride=2)
            grads[f"enc_conv{idx}_w"] = dw
            grads[f"enc_conv{idx}_b"] = db
            d = dx
        else:
            raise AssertionError(f"unknown cache entry {kind}")

    missing = [k for k, v in grads.items() if v is None]
    if missing:
        raise AssertionError(f"gradients missing for {missing}")
    return total, grads


def _find_pre(cache: list, kind: str, idx):
    for entry in cache:
        if entry[0] == kind and entry[1] == idx:
            return entry[3]
    raise AssertionError(f"cache entry {kind}/{idx} not found")


def _loss_and_relu_signs(params: EncoderParams, x: np.ndarray, t: np.ndarray):
    """Loss plus the boolean activation pattern of every ReLU in the network."""
    cache: list = []
    z = _encode_forward(params, x, cache)
    recon = _decode_forward(params, z, cache)
    last_stage = len(params.arch.conv_channels) - 1
    signs = [
        np.signbit(entry[3]).ravel()
        for entry in cache
        if entry[0] in ("enc_conv", "dec_fc")
        or (entry[0] == "dec_conv" and entry[1] != last_stage)  # last stage is sigmoid
    ]
    value = float(_per_sample_norms(recon, t).sum())
    return value, signs


def gradient_check(
    params: EncoderParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    n_checks: int = 200,
    step: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 regardless of the incoming dtype. The relative error
    denominator is guarded at 1e-8 so dead (zero-gradient) parameters do
    not produce NaNs.

    Central differences are only a valid oracle where the loss is smooth
    over the whole [-step, +step] interval, so a drawn parameter is redrawn
    when the perturbation flips any ReLU activation state, or when both
    gradient estimates sit below the finite-difference resolution (the
    difference of two loss evaluations carries ~1e-13 relative rounding).
    The check still covers ``n_checks`` parameters.
    """
    p64 = params.astype(np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    _, grads = loss_and_grads(p64, x, t)

    sizes = {name: arr.size for name, arr in p64.tensors.items()}
    total = sum(sizes.values())
    rng = np.random.default_rng(seed)
    names = list(p64.tensors.keys())
    offsets = np.cumsum([0] + [sizes[n] for n in names])

    worst = 0.0
    checked = 0
    attempts = 0
    while checked < n_checks and attempts < 20 * n_checks:
        attempts += 1
        flat_idx = int(rng.integers(0, total))
        slot = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        name = names[slot]
        local = int(flat_idx - offsets[slot])
        tensor = p64.tensors[name]
        orig = tensor.flat[local]
        tensor.flat[local] = orig + step
        lp, signs_p = _loss_and_relu_signs(p64, x, t)
        tensor.flat[local] = orig - step
        lm, signs_m = _loss_and_relu_signs(p64, x, t)
        tensor.flat[local] = orig
        if any(not np.array_equal(a, b) for a, b in zip(signs_p, signs_m)):
            continue  # kink inside the interval; the oracle is invalid here
        numeric = (lp - lm) / (2.0 * step)
        analytic = float(grads[name].flat[local])
        noise_floor = (abs(lp) + abs(lm)) * 1e-13 / (2.0 * step)
        if max(abs(analytic), abs(numeric)) < 20.0 * noise_floor:
            continue  # below what two loss evaluations can resolve
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
        checked += 1
    return worst
