"""Seeded self-checks for the loss references.

Each check returns a (name, measured, bound, passed) row; the CLI
losscheck subcommand prints them as a table and fails the run when any
row fails.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import (
    DEFAULT_PATH_WEIGHTS,
    PATH_CODES,
    LayerWeights,
    PathSpec,
    add_relative_coords,
    dice_loss,
    dice_loss_grad,
    grad_check,
    kernel_bank_loss,
    mask_head_forward,
    overlap_suppression_grad,
    overlap_suppression_loss,
    save_tensor,
    sigmoid,
    softmax_channels,
)

__all__ = ["CheckRow", "run_loss_checks", "GRAD_TOLERANCE", "EXACT_TOLERANCE"]

GRAD_TOLERANCE = 1e-4
EXACT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class CheckRow:
    name: str
    measured: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.measured <= self.bound

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": self.measured,
            "bound": self.bound,
            "passed": self.passed,
        }


def _random_head(rng, in_ch: int):
    dims = [(4, in_ch), (3, 4), (1, 3)]
    dyn = [LayerWeights(rng.normal(size=d), rng.normal(size=d[0])) for d in dims]
    sta = [LayerWeights(rng.normal(size=d), rng.normal(size=d[0])) for d in dims]
    return dyn, sta


def _random_target_map(rng, h: int, w: int, n: int) -> np.ndarray:
    """ID map with n entities present plus some void."""
    while True:
        ids = rng.integers(0, n + 1, size=(h, w))
        present = set(int(i) for i in np.unique(ids)) - {0}
        if len(present) == n:
            return ids.astype(np.int64)


def run_loss_checks(seed: int = 0, count: int = 20, step: float = 1e-6, fixtures_dir=None) -> list[CheckRow]:
    rng = np.random.Generator(np.random.PCG64(seed))
    rows: list[CheckRow] = []
    if fixtures_dir is not None:
        fixtures_dir = Path(fixtures_dir)
        fixtures_dir.mkdir(parents=True, exist_ok=True)

    def dump(name: str, array) -> None:
        if fixtures_dir is not None:
            save_tensor(np.asarray(array, dtype=np.float64), fixtures_dir / f"{name}.json")

    worst = 0.0
    for i in range(count):
        h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        # Margins keep the +-step probes inside [0, 1].
        probs = rng.uniform(0.05, 0.95, size=(h, w))
        target = rng.integers(0, 2, size=(h, w)).astype(bool)
        dump(f"dice_probs_{i:03d}", probs)
        dump(f"dice_target_{i:03d}", target)
        worst = max(
            worst,
            grad_check(
                lambda p, t=target: dice_loss(p, t),
                lambda p, t=target: dice_loss_grad(p, t),
                probs,
                step,
            ),
        )
    rows.append(CheckRow("dice_loss gradient vs central differences", worst, GRAD_TOLERANCE))

    for activation in ("softmax", "sigmoid", "mix"):
        worst = 0.0
        for i in range(count):
            h, w = int(rng.integers(3, 6)), int(rng.integers(3, 6))
            n = int(rng.integers(1, 4))
            target = _random_target_map(rng, h, w, n)
            logits = rng.normal(size=(n, h, w))
            dump(f"suppression_{activation}_logits_{i:03d}", logits)
            dump(f"suppression_{activation}_target_{i:03d}", target)
            worst = max(
                worst,
                grad_check(
                    lambda z, t=target, a=activation: overlap_suppression_loss(z, t, a),
                    lambda z, t=target, a=activation: overlap_suppression_grad(z, t, a),
                    logits,
                    step,
                ),
            )
        rows.append(
            CheckRow(
                f"overlap suppression gradient ({activation})", worst, GRAD_TOLERANCE
            )
        )

    worst = 0.0
    for _ in range(count):
        h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        n = int(rng.integers(1, 4))
        target = _random_target_map(rng, h, w, n)
        logits = rng.normal(size=(n, h, w))
        s = softmax_channels(logits)
        worst = max(worst, float(np.abs(s.sum(axis=0) - 1.0).max()))
    rows.append(CheckRow("softmax channels sum to 1", worst, EXACT_TOLERANCE))

    worst = 0.0
    for _ in range(count):
        h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        feats = add_relative_coords(rng.normal(size=(h, w, 3)))
        dyn, sta = _random_head(rng, feats.shape[2])
        target = rng.integers(0, 2, size=(h, w)).astype(bool)
        weights = rng.uniform(0.1, 2.0, size=7)
        total, _ = kernel_bank_loss(feats, dyn, sta, target, tuple(weights))
        recomposed = 0.0
        for code, weight in zip(PATH_CODES, weights):
            logits = mask_head_forward(feats, dyn, sta, PathSpec.from_code(code))
            recomposed += float(weight) * dice_loss(sigmoid(logits), target)
        worst = max(worst, abs(total - recomposed))
    rows.append(
        CheckRow("kernel bank loss = weighted sum of single paths", worst, EXACT_TOLERANCE)
    )

    default_ok = DEFAULT_PATH_WEIGHTS == (1.0, 1.0, 1.0, 0.25, 0.25, 0.25, 0.25)
    rows.append(
        CheckRow("default path weights (1,1,1,0.25,0.25,0.25,0.25)", 0.0 if default_ok else 1.0, 0.5)
    )
    return rows
