"""Inference runtime for trained closure networks and the MLCW weight format.

MLCW file layout (all little-endian, 64-bit floats):

================  =====================================================
magic             4 bytes, ``b"MLCW"``
version           u32, currently 1
M                 u32, moment order of the closure
eps_gap           f64, minimum eigenvalue separation of the offsets head
n_features        u32, followed by f64 means[n] and f64 scales[n]
n_layers          u32
per layer         u32 in, u32 out, u8 has_norm, u8 activation
                  (0 = identity, 1 = relu), f64 W[out*in] row-major,
                  f64 b[out]; if has_norm: f64 gamma[out], beta[out],
                  mean[out], var[out], f64 eps_bn
n_golden          u32, then per vector f64 in[n_features], f64 out[M+1]
crc32             u32 over every preceding byte
================  =====================================================

A layer computes ``y = W x + b``, then the normalization map
``gamma * (y - mean) / sqrt(var + eps_bn) + beta`` with stored running
statistics (inference mode, never updated), then the activation.  The
network input is the standardized feature vector
``((rho, theta, f_3, ..., f_M) - means) / scales``; the macroscopic
velocity is deliberately not a feature, which makes the induced closure
row Galilean invariant by construction.  Golden vectors pair raw feature
vectors with network outputs and are verified on load.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np

from .closure_hyperbolic import last_rows_from_eigenvalue_fields
from .moment_core import PrimitiveMomentState

__all__ = [
    "MLCW_MAGIC",
    "MLCW_VERSION",
    "ACTIVATIONS",
    "WeightsFormatError",
    "BadMagicError",
    "VersionMismatchError",
    "DimensionMismatchError",
    "NonFiniteWeightError",
    "TruncatedFileError",
    "ChecksumError",
    "GoldenVectorError",
    "InferenceError",
    "BatchNormParams",
    "LayerWeights",
    "NetworkWeights",
    "ClosureRuntimeConfig",
    "load_weights",
    "save_weights",
    "forward",
    "eigen_offsets_from_raw",
    "ml_last_row",
    "ml_last_rows_fields",
    "features_from_state",
]

MLCW_MAGIC = b"MLCW"
MLCW_VERSION = 1
ACTIVATIONS = ("identity", "relu")
GOLDEN_TOL = 1e-12


class WeightsFormatError(ValueError):
    """Base class for malformed weight files."""


class BadMagicError(WeightsFormatError):
    pass


class VersionMismatchError(WeightsFormatError):
    pass


class DimensionMismatchError(WeightsFormatError):
    pass


class NonFiniteWeightError(WeightsFormatError):
    pass


class TruncatedFileError(WeightsFormatError):
    pass


class ChecksumError(WeightsFormatError):
    pass


class GoldenVectorError(WeightsFormatError):
    pass


class InferenceError(RuntimeError):
    def __init__(self, layer_index: int, message: str):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float


@dataclass(frozen=True)
class LayerWeights:
    weight: np.ndarray  # (out, in), row-major
    bias: np.ndarray  # (out,)
    norm: Optional[BatchNormParams] = None
    activation: str = "identity"


@dataclass(frozen=True)
class NetworkWeights:
    layers: list[LayerWeights]
    golden_inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    golden_outputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_inputs(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].weight.shape[0]


@dataclass(frozen=True)
class ClosureRuntimeConfig:
    order: int
    eps_gap: float
    feature_means: np.ndarray
    feature_scales: np.ndarray

    def __post_init__(self):
        if not self.eps_gap > 0.0:
            raise ValueError("eps_gap must be positive")
        if np.any(np.asarray(self.feature_scales) <= 0.0):
            raise ValueError("feature scales must be positive")


def _validate_network(weights: NetworkWeights, config: ClosureRuntimeConfig) -> None:
    n_feat = config.feature_means.shape[0]
    if weights.layers[0].weight.shape[1] != n_feat:
        raise DimensionMismatchError(
            f"first layer expects {weights.layers[0].weight.shape[1]} inputs, "
            f"{n_feat} features stored"
        )
    prev_out = n_feat
    for i, layer in enumerate(weights.layers):
        out, inp = layer.weight.shape
        if inp != prev_out:
            raise DimensionMismatchError(f"layer {i} input {inp} != previous output {prev_out}")
        if layer.bias.shape != (out,):
            raise DimensionMismatchError(f"layer {i} bias shape {layer.bias.shape}")
        if layer.norm is not None:
            for name in ("gamma", "beta", "mean", "var"):
                if getattr(layer.norm, name).shape != (out,):
                    raise DimensionMismatchError(f"layer {i} norm field {name} shape")
            if np.any(layer.norm.var <= 0.0):
                raise WeightsFormatError(f"layer {i} has non-positive running variance")
        if layer.activation not in ACTIVATIONS:
            raise WeightsFormatError(f"layer {i} unknown activation {layer.activation!r}")
        prev_out = out
    if prev_out != config.order + 1:
        raise DimensionMismatchError(
            f"final layer width {prev_out} != M+1 = {config.order + 1}"
        )


# ---------------------------------------------------------------------------
# Binary IO
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def f64_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(float)


def load_weights(stream: BinaryIO) -> tuple[NetworkWeights, ClosureRuntimeConfig]:
    """Parse an MLCW stream, verifying checksum, dimensions and golden vectors.

    Raises a :class:`WeightsFormatError` subclass on any defect; no partial
    state escapes.
    """
    data = stream.read()
    if len(data) < 4:
        raise TruncatedFileError("file shorter than magic")
    if data[:4] != MLCW_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < 8:
        raise TruncatedFileError("file ends inside header")
    body, tail = data[:-4], data[-4:]
    stored_crc = struct.unpack("<I", tail)[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError("crc32 mismatch")

    r = _Reader(body)
    r.take(4)  # magic
    version = r.u32()
    if version != MLCW_VERSION:
        raise VersionMismatchError(f"unsupported version {version}")
    order = r.u32()
    eps_gap = r.f64()
    n_feat = r.u32()
    means = r.f64_array(n_feat)
    scales = r.f64_array(n_feat)
    n_layers = r.u32()
    if n_layers == 0:
        raise WeightsFormatError("network has no layers")
    layers = []
    for _ in range(n_layers):
        inp = r.u32()
        out = r.u32()
        has_norm = r.u8()
        act = r.u8()
        if act >= len(ACTIVATIONS):
            raise WeightsFormatError(f"unknown activation tag {act}")
        W = r.f64_array(out * inp).reshape(out, inp)
        b = r.f64_array(out)
        norm = None
        if has_norm:
            gamma = r.f64_array(out)
            beta = r.f64_array(out)
            mean = r.f64_array(out)
            var = r.f64_array(out)
            eps_bn = r.f64()
            norm = BatchNormParams(gamma, beta, mean, var, eps_bn)
        layers.append(LayerWeights(W, b, norm, ACTIVATIONS[act]))
    n_golden = r.u32()
    gin = np.empty((n_golden, n_feat))
    gout = np.empty((n_golden, order + 1))
    for g in range(n_golden):
        gin[g] = r.f64_array(n_feat)
        gout[g] = r.f64_array(order + 1)
    if r.pos != len(body):
        raise WeightsFormatError(f"{len(body) - r.pos} trailing bytes before checksum")

    weights = NetworkWeights(layers, gin, gout)
    config = ClosureRuntimeConfig(order, eps_gap, means, scales)
    for layer in layers:
        arrays = [layer.weight, layer.bias]
        if layer.norm is not None:
            arrays += [layer.norm.gamma, layer.norm.beta, layer.norm.mean, layer.norm.var]
        if not all(np.isfinite(a).all() for a in arrays):
            raise NonFiniteWeightError("non-finite value in stored weights")
    _validate_network(weights, config)

    if n_golden:
        std = (gin - means) / scales
        got = forward(weights, std)
        err = np.max(np.abs(got - gout))
        if not err <= GOLDEN_TOL:
            raise GoldenVectorError(f"golden vector mismatch, max deviation {err:.3e}")
    return weights, config


def save_weights(
    weights: NetworkWeights,
    config: ClosureRuntimeConfig,
    stream: BinaryIO,
    golden_inputs: Optional[np.ndarray] = None,
) -> None:
    """Serialize network + config to MLCW.

    ``golden_inputs`` are raw feature vectors; their outputs are computed here
    so the stored pairs are consistent by construction.
    """
    _validate_network(weights, config)
    if golden_inputs is None:
        golden_inputs = weights.golden_inputs
    golden_inputs = np.asarray(golden_inputs, dtype=float).reshape(-1, config.feature_means.size)
    std = (golden_inputs - config.feature_means) / config.feature_scales
    golden_outputs = (
        forward(weights, std) if golden_inputs.size else np.zeros((0, config.order + 1))
    )

    out = bytearray()
    out += MLCW_MAGIC
    out += struct.pack("<I", MLCW_VERSION)
    out += struct.pack("<I", config.order)
    out += struct.pack("<d", config.eps_gap)
    out += struct.pack("<I", config.feature_means.size)
    out += np.asarray(config.feature_means, dtype="<f8").tobytes()
    out += np.asarray(config.feature_scales, dtype="<f8").tobytes()
    out += struct.pack("<I", len(weights.layers))
    for layer in weights.layers:
        o, i = layer.weight.shape
        out += struct.pack("<IIBB", i, o, int(layer.norm is not None), ACTIVATIONS.index(layer.activation))
        out += np.asarray(layer.weight, dtype="<f8").tobytes()
        out += np.asarray(layer.bias, dtype="<f8").tobytes()
        if layer.norm is not None:
            for arr in (layer.norm.gamma, layer.norm.beta, layer.norm.mean, layer.norm.var):
                out += np.asarray(arr, dtype="<f8").tobytes()
            out += struct.pack("<d", layer.norm.eps)
    out += struct.pack("<I", golden_inputs.shape[0])
    for g in range(golden_inputs.shape[0]):
        out += np.asarray(golden_inputs[g], dtype="<f8").tobytes()
        out += np.asarray(golden_outputs[g], dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    stream.write(bytes(out))


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def forward(weights: NetworkWeights, x: np.ndarray) -> np.ndarray:
    """Deterministic inference pass; ``x`` is ``(..., n_in)`` standardized features."""
    y = np.asarray(x, dtype=float)
    for i, layer in enumerate(weights.layers):
        y = y @ layer.weight.T + layer.bias
        if layer.norm is not None:
            nm = layer.norm
            y = nm.gamma * (y - nm.mean) / np.sqrt(nm.var + nm.eps) + nm.beta
        if layer.activation == "relu":
            y = np.maximum(y, 0.0)
        if not np.isfinite(y).all():
            raise InferenceError(i, "non-finite activation")
    return y


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + exp(x)) without overflow for large |x|.
    return np.logaddexp(0.0, x)


def eigen_offsets_from_raw(raw: np.ndarray, eps_gap: float) -> np.ndarray:
    """Strictly increasing offsets from an unconstrained head vector.

    ``rt_0 = raw_0`` and ``rt_k = rt_{k-1} + softplus(raw_k) + eps_gap``;
    smooth in ``raw`` and gap-bounded below by ``eps_gap``.
    """
    raw = np.asarray(raw, dtype=float)
    gaps = _softplus(raw[..., 1:]) + eps_gap
    out = np.empty_like(raw)
    out[..., 0] = raw[..., 0]
    out[..., 1:] = raw[..., 0:1] + np.cumsum(gaps, axis=-1)
    return out


def features_from_state(rho, theta, fs) -> np.ndarray:
    """Raw feature vector(s) ``(rho, theta, f_3, ..., f_M)`` — no velocity."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    fs = np.asarray(fs, dtype=float)
    return np.concatenate((rho[..., None], theta[..., None], fs), axis=-1)


def ml_last_rows_fields(
    weights: NetworkWeights, config: ClosureRuntimeConfig, rho, u, theta, fs
) -> np.ndarray:
    """Closure rows for batched states through the eigenvalue head."""
    feats = features_from_state(rho, theta, fs)
    std = (feats - config.feature_means) / config.feature_scales
    raw = forward(weights, std)
    offsets = eigen_offsets_from_raw(raw, config.eps_gap)
    return last_rows_from_eigenvalue_fields(offsets, rho, u, theta, fs)


def ml_last_row(
    weights: NetworkWeights, config: ClosureRuntimeConfig, w: PrimitiveMomentState
) -> np.ndarray:
    """Closure row for one state: standardize, infer, order eigenvalues, solve."""
    if w.order != config.order:
        raise ValueError(f"state order {w.order} != closure order {config.order}")
    return ml_last_rows_fields(
        weights, config, np.array([w.rho]), np.array([w.u]), np.array([w.theta]), w.f[None, :]
    )[0]
