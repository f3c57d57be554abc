"""Desk-scale numeric references for the training losses.

Everything here is plain float64 numpy with no learning framework: the
3-layer dynamic/static mask head and its seven layer-choice paths, the
squared-denominator Dice loss, representative-kernel averaging, the
softmax overlap-suppression loss with void pixels excluded, and a central
finite-difference harness for the analytic gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .masks import as_entity_map, as_mask

__all__ = [
    "LayerWeights",
    "PathSpec",
    "KernelSet",
    "PATH_CODES",
    "DEFAULT_PATH_WEIGHTS",
    "DICE_EPSILON",
    "sigmoid",
    "softmax_channels",
    "add_relative_coords",
    "mask_head_forward",
    "dice_loss",
    "dice_loss_grad",
    "kernel_bank_loss",
    "representative_kernels",
    "overlap_suppression_loss",
    "overlap_suppression_grad",
    "total_loss",
    "grad_check",
    "pack_head_weights",
    "unpack_head_weights",
    "save_tensor",
    "load_tensor",
]

# Path codes in the conventional table order; bit i of a code picks dynamic
# (1) or static (0) weights for layer i, and the all-static path 000 does
# not exist. DEFAULT_PATH_WEIGHTS aligns with this order.
PATH_CODES = ("111", "110", "101", "100", "011", "010", "001")
DEFAULT_PATH_WEIGHTS = (1.0, 1.0, 1.0, 0.25, 0.25, 0.25, 0.25)
DICE_EPSILON = 1e-5


@dataclass(frozen=True)
class LayerWeights:
    """One 1x1 convolution layer: a per-pixel affine map."""

    weight: np.ndarray  # (out_channels, in_channels)
    bias: np.ndarray    # (out_channels,)

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError(
                f"layer weight {w.shape} and bias {b.shape} are inconsistent"
            )
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class PathSpec:
    """One of the seven dynamic/static layer choices plus its loss weight."""

    index: int
    layer_choice: tuple[bool, bool, bool]
    weight: float = 1.0

    def __post_init__(self):
        code = "".join("1" if d else "0" for d in self.layer_choice)
        if int(code, 2) != self.index or not 1 <= self.index <= 7:
            raise DomainError(
                f"path index {self.index} inconsistent with layer choice {code!r}"
            )
        if self.weight < 0:
            raise DomainError(f"path weight must be >= 0, got {self.weight}")

    @property
    def code(self) -> str:
        return "".join("1" if d else "0" for d in self.layer_choice)

    @classmethod
    def from_code(cls, code: str, weight: float = 1.0) -> "PathSpec":
        if len(code) != 3 or set(code) - {"0", "1"}:
            raise DomainError(f"path code must be 3 binary digits, got {code!r}")
        return cls(
            index=int(code, 2),
            layer_choice=tuple(c == "1" for c in code),
            weight=weight,
        )


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax across axis 0 of an (N, ...) stack."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=0, keepdims=True)


def add_relative_coords(features: np.ndarray) -> np.ndarray:
    """Append the two relative-coordinate channels (y, x in [-1, 1])."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ShapeError(f"features must be (H, W, C), got {features.shape}")
    h, w, _ = features.shape
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.concatenate([features, yy[..., None], xx[..., None]], axis=2)


def _check_head(features: np.ndarray, dynamic, static) -> None:
    if features.ndim != 3:
        raise ShapeError(f"features must be (H, W, C), got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise DomainError("features must be finite")
    if len(dynamic) != 3 or len(static) != 3:
        raise ShapeError("the mask head has exactly 3 dynamic and 3 static layers")
    in_ch = features.shape[2]
    for i, (dyn, sta) in enumerate(zip(dynamic, static)):
        if dyn.weight.shape != sta.weight.shape:
            raise ShapeError(
                f"layer {i}: dynamic {dyn.weight.shape} and static "
                f"{sta.weight.shape} weights must share a shape"
            )
        if dyn.weight.shape[1] != in_ch:
            raise ShapeError(
                f"layer {i} expects {dyn.weight.shape[1]} input channels, got {in_ch}"
            )
        in_ch = dyn.weight.shape[0]
    if in_ch != 1:
        raise ShapeError(f"the final layer must emit 1 channel, got {in_ch}")


def mask_head_forward(features: np.ndarray, dynamic, static, path: PathSpec) -> np.ndarray:
    """Run the 3-layer mask head along one dynamic/static path.

    Layers are 1x1 convolutions (per-pixel affine maps) with ReLU after the
    first two; the path picks dynamic or static weights per layer. Returns
    single-channel logits of shape (H, W).
    """
    features = np.asarray(features, dtype=np.float64)
    _check_head(features, dynamic, static)
    h, w, c = features.shape
    x = features.reshape(h * w, c)
    for i in range(3):
        layer = dynamic[i] if path.layer_choice[i] else static[i]
        x = x @ layer.weight.T + layer.bias
        if i < 2:
            x = np.maximum(x, 0.0)
    return x.reshape(h, w)


def _dice_from_sums(s_py: float, s_pp: float, s_yy: float, epsilon: float) -> float:
    return 1.0 - (2.0 * s_py + epsilon) / (s_pp + s_yy + epsilon)


def dice_loss(probs: np.ndarray, target, epsilon: float = DICE_EPSILON) -> float:
    """Squared-denominator Dice loss.

    ``1 - (2*sum(p*y) + eps) / (sum(p^2) + sum(y^2) + eps)``.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    probs = np.asarray(probs, dtype=np.float64)
    y = as_mask(target)
    if probs.shape != y.shape:
        raise ShapeError(f"probs shape {probs.shape} != target shape {y.shape}")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise DomainError("probabilities must lie in [0, 1]")
    yf = y.astype(np.float64)
    return _dice_from_sums(
        float((probs * yf).sum()), float((probs * probs).sum()), float(yf.sum()), epsilon
    )


def dice_loss_grad(probs: np.ndarray, target, epsilon: float = DICE_EPSILON) -> np.ndarray:
    """Analytic gradient of dice_loss with respect to probs."""
    probs = np.asarray(probs, dtype=np.float64)
    yf = as_mask(target).astype(np.float64)
    num = 2.0 * float((probs * yf).sum()) + epsilon
    den = float((probs * probs).sum()) + float(yf.sum()) + epsilon
    return (2.0 * probs * num - 2.0 * yf * den) / (den * den)


def kernel_bank_loss(features, dynamic, static, target, path_weights=DEFAULT_PATH_WEIGHTS, epsilon: float = DICE_EPSILON):
    """Weighted Dice over all seven mask-head paths.

    ``path_weights`` follows PATH_CODES order. Paths with weight 0 are
    skipped entirely. Returns (total, per-path breakdown).
    """
    if len(path_weights) != 7:
        raise DomainError(f"expected 7 path weights, got {len(path_weights)}")
    if any(w < 0 for w in path_weights):
        raise DomainError("path weights must be >= 0")
    total = 0.0
    breakdown = {}
    for code, weight in zip(PATH_CODES, path_weights):
        if weight == 0:
            continue
        path = PathSpec.from_code(code, weight)
        logits = mask_head_forward(features, dynamic, static, path)
        d = dice_loss(sigmoid(logits), target, epsilon)
        breakdown[code] = {"weight": float(weight), "dice": d, "weighted": float(weight) * d}
        total += float(weight) * d
    return total, breakdown


@dataclass(frozen=True)
class KernelSet:
    """Sampled kernels with their entity assignment.

    ``kernels[i]`` is a flat mask-head parameter vector assigned to entity
    ``assignment[i]`` (entities are 1..N).
    """

    kernels: tuple[np.ndarray, ...]
    assignment: tuple[int, ...]

    def __post_init__(self):
        kernels = tuple(np.asarray(k, dtype=np.float64).ravel() for k in self.kernels)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))
        if len(kernels) != len(self.assignment):
            raise ShapeError("one assignment per kernel is required")
        if not kernels:
            raise ShapeError("a kernel set may not be empty")
        if len({k.shape for k in kernels}) != 1:
            raise ShapeError("all kernel vectors must have the same length")
        if any(a < 1 for a in self.assignment):
            raise DomainError("entity indices start at 1")


def representative_kernels(kernels: KernelSet) -> np.ndarray:
    """Per-entity mean of assigned kernel vectors; shape (N, D).

    Row n-1 is the representative kernel of entity n. Every entity in 1..N
    (N = max assigned index) must own at least one kernel.
    """
    n = max(kernels.assignment)
    dim = kernels.kernels[0].shape[0]
    out = np.zeros((n, dim))
    counts = np.zeros(n, dtype=np.int64)
    for vec, ent in zip(kernels.kernels, kernels.assignment):
        out[ent - 1] += vec
        counts[ent - 1] += 1
    missing = np.flatnonzero(counts == 0) + 1
    if missing.size:
        raise DomainError(f"entities {missing.tolist()} have no assigned kernel")
    return out / counts[:, None]


def _suppression_terms(probs_valid: np.ndarray, target_valid: np.ndarray, ids, epsilon: float):
    """Per-entity Dice terms over the non-void pixels.

    probs_valid is (N, V); target_valid the entity ID per valid pixel.
    Returns per-entity (num, den, y) with y as float indicator rows.
    """
    terms = []
    for n, entity_id in enumerate(ids):
        p = probs_valid[n]
        y = (target_valid == entity_id).astype(np.float64)
        num = 2.0 * float((p * y).sum()) + epsilon
        den = float((p * p).sum()) + float(y.sum()) + epsilon
        terms.append((num, den, y))
    return terms


def _suppression_loss_from_probs(probs_valid, target_valid, ids, epsilon) -> float:
    terms = _suppression_terms(probs_valid, target_valid, ids, epsilon)
    return float(np.mean([1.0 - num / den for num, den, _ in terms]))


def _suppression_grad_wrt_probs(probs_valid, target_valid, ids, epsilon) -> np.ndarray:
    terms = _suppression_terms(probs_valid, target_valid, ids, epsilon)
    g = np.zeros_like(probs_valid)
    n_entities = len(ids)
    for n, (num, den, y) in enumerate(terms):
        g[n] = (2.0 * probs_valid[n] * num - 2.0 * y * den) / (den * den) / n_entities
    return g


def _suppression_parts(logit_maps: np.ndarray, target) -> tuple[np.ndarray, np.ndarray, list[int], np.ndarray]:
    logit_maps = np.asarray(logit_maps, dtype=np.float64)
    target = as_entity_map(target)
    if logit_maps.ndim != 3 or logit_maps.shape[1:] != target.shape:
        raise ShapeError(
            f"logit stack {logit_maps.shape} does not match target {target.shape}"
        )
    ids = [int(i) for i in np.unique(target) if i != 0]
    if logit_maps.shape[0] != len(ids):
        raise ShapeError(
            f"{logit_maps.shape[0]} logit channels for {len(ids)} GT entities"
        )
    valid = target > 0
    return logit_maps, target, ids, valid


def overlap_suppression_loss(logit_maps, target, activation: str = "softmax", epsilon: float = DICE_EPSILON) -> float:
    """Dice of the activation-squashed entity stack against the GT map.

    Channel n corresponds to the n-th distinct nonzero GT ID (ascending).
    The per-entity Dice values are averaged; pixels with GT ID 0 (void) are
    excluded from every sum, and an all-void target gives 0. ``activation``
    is "softmax", "sigmoid", or "mix" (equal-weight average of both).
    """
    logit_maps, target, ids, valid = _suppression_parts(logit_maps, target)
    if not valid.any():
        return 0.0
    z = logit_maps[:, valid]
    tv = target[valid]
    if activation == "softmax":
        return _suppression_loss_from_probs(softmax_channels(z), tv, ids, epsilon)
    if activation == "sigmoid":
        return _suppression_loss_from_probs(sigmoid(z), tv, ids, epsilon)
    if activation == "mix":
        return 0.5 * _suppression_loss_from_probs(softmax_channels(z), tv, ids, epsilon) + \
            0.5 * _suppression_loss_from_probs(sigmoid(z), tv, ids, epsilon)
    raise DomainError(f"unknown activation {activation!r}")


def overlap_suppression_grad(logit_maps, target, activation: str = "softmax", epsilon: float = DICE_EPSILON) -> np.ndarray:
    """Analytic gradient of overlap_suppression_loss w.r.t. the logits."""
    logit_maps, target, ids, valid = _suppression_parts(logit_maps, target)
    grad = np.zeros_like(logit_maps)
    if not valid.any():
        return grad
    z = logit_maps[:, valid]
    tv = target[valid]

    def softmax_part():
        s = softmax_channels(z)
        g = _suppression_grad_wrt_probs(s, tv, ids, epsilon)
        return s * (g - (g * s).sum(axis=0, keepdims=True))

    def sigmoid_part():
        s = sigmoid(z)
        g = _suppression_grad_wrt_probs(s, tv, ids, epsilon)
        return g * s * (1.0 - s)

    if activation == "softmax":
        gz = softmax_part()
    elif activation == "sigmoid":
        gz = sigmoid_part()
    elif activation == "mix":
        gz = 0.5 * softmax_part() + 0.5 * sigmoid_part()
    else:
        raise DomainError(f"unknown activation {activation!r}")
    grad[:, valid] = gz
    return grad


def total_loss(det_loss: float, o_loss: float, r_loss: float) -> float:
    """Overall training loss: detection + overlap suppression + path sum."""
    values = (det_loss, o_loss, r_loss)
    if not all(np.isfinite(v) for v in values):
        raise DomainError(f"loss terms must be finite, got {values}")
    return float(det_loss + o_loss + r_loss)


def grad_check(fn, grad_fn, point: np.ndarray, step: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    The denominator is floored at 1e-6 so near-zero components compare on
    an absolute scale instead of amplifying roundoff.
    """
    if step <= 0:
        raise DomainError(f"step must be positive, got {step}")
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(grad_fn(point), dtype=np.float64)
    if analytic.shape != point.shape:
        raise ShapeError(f"gradient shape {analytic.shape} != point shape {point.shape}")
    worst = 0.0
    it = np.nditer(point, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        bumped = point.copy()
        bumped[idx] = point[idx] + step
        hi = fn(bumped)
        bumped[idx] = point[idx] - step
        lo = fn(bumped)
        numeric = (hi - lo) / (2.0 * step)
        a = float(analytic[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, rel)
        it.iternext()
    return worst


def pack_head_weights(layers) -> np.ndarray:
    """Flatten 3 LayerWeights into one parameter vector."""
    parts = []
    for layer in layers:
        parts.append(layer.weight.ravel())
        parts.append(layer.bias)
    return np.concatenate(parts)


def unpack_head_weights(vector: np.ndarray, dims) -> list[LayerWeights]:
    """Rebuild 3 LayerWeights from a flat vector given (out, in) dims."""
    vector = np.asarray(vector, dtype=np.float64).ravel()
    layers = []
    pos = 0
    for out_ch, in_ch in dims:
        w = vector[pos : pos + out_ch * in_ch].reshape(out_ch, in_ch)
        pos += out_ch * in_ch
        b = vector[pos : pos + out_ch]
        pos += out_ch
        layers.append(LayerWeights(weight=w, bias=b))
    if pos != vector.size:
        raise ShapeError(
            f"vector has {vector.size} values but the dims describe {pos}"
        )
    return layers


def save_tensor(array: np.ndarray, path) -> None:
    """Write a tensor as JSON: {"shape": [...], "data": [...]} (row-major)."""
    array = np.asarray(array, dtype=np.float64)
    obj = {"shape": list(array.shape), "data": [float(v) for v in array.ravel()]}
    Path(path).write_text(json.dumps(obj, separators=(",", ":")) + "\n")


def load_tensor(path) -> np.ndarray:
    try:
        obj = json.loads(Path(path).read_text())
        shape = obj["shape"]
        data = obj["data"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed tensor JSON: {exc}") from exc
    arr = np.asarray(data, dtype=np.float64)
    if arr.size != int(np.prod(shape)):
        raise FormatError(f"{path}: {arr.size} values for shape {shape}")
    return arr.reshape(shape)
