"""Trainable sparsity masks with hard forward binarization and straight-through
gradients.

Forward: masked = H(logits) * coeffs with H the Heaviside step at zero.
Backward: coefficient grads pass through the hard gate, logit grads through
the sigmoid relaxation, i.e. the binarised gate is treated as
sigmoid(M) + stop_grad(H(M) - sigmoid(M)).

The mask loss is the mean sigmoid over all logit entries, so its weight is
resolution independent.
"""

import numpy as np


def heaviside(logits: np.ndarray) -> np.ndarray:
    return (np.asarray(logits) > 0.0).astype(float)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 - s)


def apply_mask(coeffs: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Hard-masked coefficients H(logits) * coeffs."""
    coeffs = np.asarray(coeffs, float)
    logits = np.asarray(logits, float)
    if coeffs.shape != logits.shape:
        raise ValueError(
            f"mask shape {logits.shape} does not match grid {coeffs.shape}")
    return heaviside(logits) * coeffs


def apply_mask_backward(grad_masked, coeffs, logits):
    """Straight-through backward: returns (grad_coeffs, grad_logits)."""
    grad_masked = np.asarray(grad_masked, float)
    if grad_masked.shape != np.shape(coeffs):
        raise ValueError("upstream grad shape mismatch")
    grad_coeffs = heaviside(logits) * grad_masked
    grad_logits = sigmoid_grad(logits) * coeffs * grad_masked
    return grad_coeffs, grad_logits


class MaskSet:
    """One logit grid per coefficient grid, keyed by the owning grid's name."""

    def __init__(self, logits: dict):
        self.logits = logits

    @classmethod
    def for_shapes(cls, shapes: dict, init: float = 2.0) -> "MaskSet":
        return cls({name: np.full(shape, float(init))
                    for name, shape in shapes.items()})

    def total_entries(self) -> int:
        return sum(v.size for v in self.logits.values())

    def items(self):
        return self.logits.items()

    def __getitem__(self, name):
        return self.logits[name]

    def hard(self) -> dict:
        return {name: heaviside(v) for name, v in self.logits.items()}


def mask_loss(masks: MaskSet) -> float:
    """Mean sigmoid over every logit entry of every mask grid."""
    total = masks.total_entries()
    if total == 0:
        return 0.0
    acc = sum(float(np.sum(sigmoid(v))) for v in masks.logits.values())
    return acc / total


def mask_loss_grads(masks: MaskSet, weight: float) -> dict:
    """d(weight * mask_loss)/d(logits) per mask grid."""
    total = masks.total_entries()
    if total == 0:
        return {}
    scale = weight / total
    return {name: scale * sigmoid_grad(v) for name, v in masks.logits.items()}


def sparsity(masks: MaskSet) -> float:
    """Fraction of entries whose hard mask is zero."""
    total = masks.total_entries()
    if total == 0:
        return 0.0
    off = sum(float(np.sum(heaviside(v) == 0.0)) for v in masks.logits.values())
    return off / total
