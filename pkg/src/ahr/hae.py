"""Hybrid autoencoder: encoder/decoder pair, hybrid loss, distillation, checkpoints."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import (
    IDENTITY,
    RELU,
    DenseNet,
    DimensionError,
    Layer,
    as_matrix,
    backward,
    forward,
    init_dense,
    predict,
)


class ArchitectureMismatch(ValueError):
    pass


@dataclass(eq=False)
class HAEModel:
    encoder: DenseNet
    decoder: DenseNet

    def __post_init__(self):
        if self.encoder.out_dim != self.decoder.in_dim:
            raise DimensionError("decoder input", self.encoder.out_dim, self.decoder.in_dim)
        if self.decoder.out_dim != self.encoder.in_dim:
            raise DimensionError("decoder output", self.encoder.in_dim, self.decoder.out_dim)
        if self.latent_dim >= self.input_dim:
            raise ValueError(
                f"latent_dim {self.latent_dim} must be smaller than input_dim {self.input_dim}"
            )

    @property
    def input_dim(self) -> int:
        return self.encoder.in_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def touch(self) -> None:
        self.encoder.touch()
        self.decoder.touch()

    def copy(self) -> "HAEModel":
        return HAEModel(self.encoder.copy(), self.decoder.copy())

    def same_params(self, other: "HAEModel") -> bool:
        return self.encoder.same_params(other.encoder) and self.decoder.same_params(other.decoder)


def build_hae(input_dim: int, hidden: list[int], latent_dim: int, rng: np.random.Generator) -> HAEModel:
    """Encoder ``input -> hidden... -> latent`` and its mirror image as decoder."""
    enc = init_dense([input_dim, *hidden, latent_dim], rng)
    dec = init_dense([latent_dim, *reversed(hidden), input_dim], rng)
    return HAEModel(enc, dec)


def encode(model: HAEModel, batch) -> np.ndarray:
    return predict(model.encoder, as_matrix(batch, model.input_dim))


def decode(model: HAEModel, latents) -> np.ndarray:
    return predict(model.decoder, as_matrix(latents, model.latent_dim, "latents"))


@dataclass
class LossBreakdown:
    recon: float
    latent_pull: float
    distill_enc: float = 0.0
    distill_dec: float = 0.0
    lam: float = 1.0

    @property
    def total(self) -> float:
        return self.recon + self.lam * self.latent_pull + self.distill_enc + self.distill_dec


def hybrid_loss(x, x_hat, z, targets, lam: float = 1.0):
    """Reconstruction plus latent pull toward each row's centroid, summed over rows.

    ``targets`` holds one centroid per row (NaN rows mean "unassigned").
    Returns (LossBreakdown, grad wrt x_hat, grad wrt z).
    """
    x = as_matrix(x)
    x_hat = as_matrix(x_hat, x.shape[1], "x_hat")
    z = as_matrix(z, what="z")
    targets = as_matrix(targets, z.shape[1], "targets")
    if not (x.shape[0] == x_hat.shape[0] == z.shape[0] == targets.shape[0]):
        raise DimensionError("row count", x.shape[0], targets.shape[0])
    if not np.all(np.isfinite(targets)):
        bad = int(np.nonzero(~np.all(np.isfinite(targets), axis=1))[0][0])
        raise ValueError(f"row {bad} has no assigned centroid")
    dx = x_hat - x
    dz = z - targets
    out = LossBreakdown(float(np.sum(dx * dx)), float(np.sum(dz * dz)), lam=lam)
    return out, 2.0 * dx, 2.0 * lam * dz


def _distance_term(a: np.ndarray, ref: np.ndarray, squared: bool):
    """sum_rows ||a - ref||(^2) and its gradient with respect to ``a``."""
    diff = a - ref
    if squared:
        return float(np.sum(diff * diff)), 2.0 * diff
    norms = np.sqrt(np.sum(diff * diff, axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    return float(np.sum(norms)), np.where(norms > 0.0, diff / safe, 0.0)


@dataclass(frozen=True)
class DistillSettings:
    squared: bool = True
    weight_enc: float = 1.0
    weight_dec: float = 1.0


def _check_arch(old: HAEModel, new: HAEModel):
    if old.encoder.sizes != new.encoder.sizes or old.decoder.sizes != new.decoder.sizes:
        raise ArchitectureMismatch(
            f"old {old.encoder.sizes}/{old.decoder.sizes} vs new {new.encoder.sizes}/{new.decoder.sizes}"
        )


def distill_loss(old: HAEModel, new: HAEModel, batch, settings: DistillSettings = DistillSettings()):
    """Encoder and reconstruction distillation of ``new`` toward the frozen ``old``.

    Returns (enc_term, dec_term, grads) with grads ordered like ``new.params()``.
    ``old`` is only evaluated, never differentiated.
    """
    _check_arch(old, new)
    x = as_matrix(batch, new.input_dim)
    z_old = encode(old, x)
    x_old = decode(old, z_old)
    z, enc_cache = forward(new.encoder, x)
    x_hat, dec_cache = forward(new.decoder, z)
    enc_term, g_z = _distance_term(z, z_old, settings.squared)
    dec_term, g_xh = _distance_term(x_hat, x_old, settings.squared)
    dec_grads, g_z_back = backward(new.decoder, dec_cache, settings.weight_dec * g_xh)
    enc_grads, _ = backward(new.encoder, enc_cache, settings.weight_enc * g_z + g_z_back)
    return settings.weight_enc * enc_term, settings.weight_dec * dec_term, enc_grads + dec_grads


def composite_loss(model: HAEModel, x, targets, lam: float = 1.0, old: HAEModel | None = None,
                   distill: DistillSettings = DistillSettings()):
    """Hybrid loss plus (when ``old`` is given) distillation, with gradients.

    This is the per-minibatch objective minimised during HAE training.
    Returns (LossBreakdown, grads ordered like ``model.params()``).
    """
    x = as_matrix(x, model.input_dim)
    z, enc_cache = forward(model.encoder, x)
    x_hat, dec_cache = forward(model.decoder, z)
    loss, g_xh, g_z = hybrid_loss(x, x_hat, z, targets, lam)
    if old is not None:
        _check_arch(old, model)
        z_old = encode(old, x)
        x_old = decode(old, z_old)
        enc_term, g_ze = _distance_term(z, z_old, distill.squared)
        dec_term, g_xd = _distance_term(x_hat, x_old, distill.squared)
        loss.distill_enc = distill.weight_enc * enc_term
        loss.distill_dec = distill.weight_dec * dec_term
        g_z = g_z + distill.weight_enc * g_ze
        g_xh = g_xh + distill.weight_dec * g_xd
    dec_grads, g_z_back = backward(model.decoder, dec_cache, g_xh)
    enc_grads, _ = backward(model.encoder, enc_cache, g_z + g_z_back)
    return loss, enc_grads + dec_grads


# ------------------------------------------------------------------ checkpoints
#
# Layout (little endian):
#   b"AHRM" | u32 version | u32 n_nets (always 2: encoder, decoder)
#   per net:   u32 n_layers
#   per layer: u32 out | u32 in | u8 activation (0 identity, 1 relu)
#              | f64[out*in] weight (row major) | f64[out] bias

MODEL_MAGIC = b"AHRM"
MODEL_VERSION = 1
_ACT_CODE = {IDENTITY: 0, RELU: 1}
_CODE_ACT = {v: k for k, v in _ACT_CODE.items()}


def model_to_bytes(model: HAEModel) -> bytes:
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, 2)]
    for net in (model.encoder, model.decoder):
        parts.append(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            parts.append(struct.pack("<IIB", layer.out_dim, layer.in_dim, _ACT_CODE[layer.activation]))
            parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(buf: bytes) -> HAEModel:
    if buf[:4] != MODEL_MAGIC:
        raise ValueError("not an HAE checkpoint (bad magic)")
    version, n_nets = struct.unpack_from("<II", buf, 4)
    if version != MODEL_VERSION or n_nets != 2:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    nets = []
    try:
        for _ in range(2):
            (n_layers,) = struct.unpack_from("<I", buf, off)
            off += 4
            layers = []
            for _ in range(n_layers):
                out, inp, code = struct.unpack_from("<IIB", buf, off)
                off += 9
                w = np.frombuffer(buf, dtype="<f8", count=out * inp, offset=off).reshape(out, inp)
                off += 8 * out * inp
                b = np.frombuffer(buf, dtype="<f8", count=out, offset=off)
                off += 8 * out
                layers.append(Layer(w.astype(np.float64), b.astype(np.float64), _CODE_ACT[code]))
            nets.append(DenseNet(layers))
    except (struct.error, ValueError) as exc:
        raise ValueError(f"truncated HAE checkpoint: {exc}") from exc
    if off != len(buf):
        raise ValueError(f"trailing bytes in HAE checkpoint ({len(buf) - off})")
    return HAEModel(*nets)


def save_model(model: HAEModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> HAEModel:
    return model_from_bytes(Path(path).read_bytes())
