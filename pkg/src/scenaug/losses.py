"""Redundancy-reduction (Barlow Twins) and variance-invariance-covariance (VICReg) objectives.

Both return the loss value together with analytic gradients with respect to
the two embedding batches, so they can drive the numpy networks directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BT_EPS = 1e-6
VICREG_EPS = 1e-4


@dataclass
class LossOutput:
    value: float
    grad_a: np.ndarray
    grad_b: np.ndarray
    terms: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.value
        yield (self.grad_a, self.grad_b)


def _check(za: np.ndarray, zb: np.ndarray) -> None:
    if za.shape != zb.shape or za.ndim != 2:
        raise ValueError(f"embedding batches must share an (N, d) shape, got {za.shape} and {zb.shape}")
    if za.shape[0] < 2:
        raise ValueError("need at least 2 rows for batch statistics")


def _standardize(z: np.ndarray, eps: float):
    zc = z - z.mean(axis=0)
    s = np.sqrt((zc * zc).mean(axis=0) + eps)
    return zc / s, s


def _standardize_backward(a: np.ndarray, s: np.ndarray, g: np.ndarray) -> np.ndarray:
    # a = (z - mean) / sqrt(var + eps) with population variance
    return (g - g.mean(axis=0) - a * (g * a).mean(axis=0)) / s


def barlow_twins_loss(za: np.ndarray, zb: np.ndarray, lambda_offdiag: float = 5e-3,
                      eps: float = BT_EPS) -> LossOutput:
    """Sum of (1 - C_ii)^2 plus ``lambda_offdiag`` times the squared off-diagonal of C.

    C is the cross-correlation of the batch-standardized embeddings.
    """
    _check(za, zb)
    n, d = za.shape
    a, sa = _standardize(za, eps)
    b, sb = _standardize(zb, eps)
    c = a.T @ b / n
    diag = np.diagonal(c)
    off = c - np.diag(diag)
    on_term = float(((1.0 - diag) ** 2).sum())
    off_term = float((off ** 2).sum())

    g_c = 2.0 * lambda_offdiag * off
    g_c[np.diag_indices(d)] = -2.0 * (1.0 - diag)
    g_a = b @ g_c.T / n
    g_b = a @ g_c / n
    zero_var = int(np.count_nonzero(za.var(axis=0) == 0) + np.count_nonzero(zb.var(axis=0) == 0))
    return LossOutput(
        on_term + lambda_offdiag * off_term,
        _standardize_backward(a, sa, g_a),
        _standardize_backward(b, sb, g_b),
        {"on_diag": on_term, "off_diag": off_term, "zero_variance_dims": zero_var},
    )


@dataclass(frozen=True)
class VICRegCoeffs:
    invariance: float = 25.0
    variance: float = 25.0
    covariance: float = 1.0
    gamma: float = 1.0
    eps: float = VICREG_EPS


def _variance_term(z: np.ndarray, gamma: float, eps: float):
    n, d = z.shape
    zc = z - z.mean(axis=0)
    std = np.sqrt((zc * zc).sum(axis=0) / (n - 1) + eps)
    hinge = np.maximum(0.0, gamma - std)
    active = (gamma - std) > 0
    grad = -(active / std) * zc / ((n - 1) * d)
    return float(hinge.mean()), grad


def _covariance_term(z: np.ndarray):
    n, d = z.shape
    zc = z - z.mean(axis=0)
    cov = zc.T @ zc / (n - 1)
    off = cov - np.diag(np.diagonal(cov))
    value = float((off ** 2).sum() / d)
    grad = 4.0 * zc @ off / (d * (n - 1))
    return value, grad


def vicreg_loss(za: np.ndarray, zb: np.ndarray, coeffs: VICRegCoeffs = VICRegCoeffs()) -> LossOutput:
    """Invariance (mean squared difference) + variance hinge + off-diagonal covariance penalty."""
    _check(za, zb)
    n, d = za.shape
    diff = za - zb
    inv = float((diff ** 2).mean())
    g_inv = 2.0 * diff / (n * d)
    var_a, gv_a = _variance_term(za, coeffs.gamma, coeffs.eps)
    var_b, gv_b = _variance_term(zb, coeffs.gamma, coeffs.eps)
    cov_a, gc_a = _covariance_term(za)
    cov_b, gc_b = _covariance_term(zb)
    value = coeffs.invariance * inv + coeffs.variance * (var_a + var_b) + coeffs.covariance * (cov_a + cov_b)
    grad_a = coeffs.invariance * g_inv + coeffs.variance * gv_a + coeffs.covariance * gc_a
    grad_b = -coeffs.invariance * g_inv + coeffs.variance * gv_b + coeffs.covariance * gc_b
    return LossOutput(value, grad_a, grad_b,
                      {"invariance": inv, "variance": var_a + var_b, "covariance": cov_a + cov_b})
