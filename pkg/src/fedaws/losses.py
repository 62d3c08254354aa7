"""Loss family for cosine scorers.

Logits are ``s_c = w_c . g`` with unit ``w_c`` and ``g``, so every cosine
distance below is ``1 - s``. Functions returning a gradient return it with
respect to their first (logit) argument.
"""

from __future__ import annotations

import numpy as np

from .errors import ClassOutOfRange, MarginOutOfTheoryRange

DEFAULT_NU = 1.5
DEFAULT_HINGE_MARGIN = 0.9
# Two logits closer than this count as tied when deciding Top-1 membership.
TIE_TOL = 1e-12


def _check_class(y: int, num_classes: int) -> int:
    if not 0 <= int(y) < num_classes:
        raise ClassOutOfRange(f"class {y} outside [0, {num_classes})")
    return int(y)


def _sq_hinge(x):
    return np.square(np.maximum(0.0, x))


def contrastive_loss(dist_to_pos: float, dists_to_negs, alpha: float, beta: float, nu: float) -> float:
    negs = np.asarray(dists_to_negs, dtype=np.float64)
    if dist_to_pos < 0 or np.any(negs < 0):
        raise ValueError("distances must be non-negative")
    return float(alpha * dist_to_pos**2 + beta * np.sum(_sq_hinge(nu - negs)))


def pos_hinge_loss(s_y, margin: float = DEFAULT_HINGE_MARGIN):
    """Squared hinge ``max(0, margin - s_y)^2`` and its derivative in ``s_y``.

    Works elementwise on arrays. The derivative at the kink is 0.
    """
    gap = np.maximum(0.0, margin - np.asarray(s_y, dtype=np.float64))
    value, grad = gap * gap, -2.0 * gap
    if np.ndim(value) == 0:
        return float(value), float(grad)
    return value, grad


def ccl_loss(s, y: int, nu: float = DEFAULT_NU) -> float:
    s = np.asarray(s, dtype=np.float64)
    y = _check_class(y, s.size)
    neg = _sq_hinge(nu - 1.0 + s)
    neg[y] = 0.0
    return float((1.0 - s[y]) ** 2 + neg.sum())


def ccl_grad(s, y: int, nu: float = DEFAULT_NU) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    y = _check_class(y, s.size)
    grad = 2.0 * np.maximum(0.0, nu - 1.0 + s)
    grad[y] = -2.0 * (1.0 - s[y])
    return grad


def ccl_loss_batch(S: np.ndarray, y: np.ndarray, nu) -> np.ndarray:
    """Row-wise cosine contrastive loss; ``nu`` may be a scalar or per-row."""
    S = np.asarray(S, dtype=np.float64)
    rows = np.arange(S.shape[0])
    nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), (S.shape[0],))
    neg = _sq_hinge(nu[:, None] - 1.0 + S)
    neg[rows, y] = 0.0
    return (1.0 - S[rows, y]) ** 2 + neg.sum(axis=1)


def lsp_loss(s_y: float, W: np.ndarray, y: int, nu: float = DEFAULT_NU) -> float:
    """Positive part on the logit, negative part on class-class similarities."""
    W = np.asarray(W, dtype=np.float64)
    y = _check_class(y, W.shape[0])
    neg = _sq_hinge(nu - 1.0 + W @ W[y])
    neg[y] = 0.0
    return float((1.0 - s_y) ** 2 + neg.sum())


def lsp_grad(s_y: float, W: np.ndarray, y: int, nu: float = DEFAULT_NU) -> tuple[float, np.ndarray]:
    """Gradient of :func:`lsp_loss` in ``s_y`` and in ``W`` (rows treated as free)."""
    W = np.asarray(W, dtype=np.float64)
    y = _check_class(y, W.shape[0])
    h = np.maximum(0.0, nu - 1.0 + W @ W[y])
    h[y] = 0.0
    dW = 2.0 * h[:, None] * W[y][None, :]
    dW[y] = 2.0 * h @ W
    return -2.0 * (1.0 - s_y), dW


def lsp_loss_batch(S: np.ndarray, W: np.ndarray, y: np.ndarray, nu) -> np.ndarray:
    rows = np.arange(S.shape[0])
    nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), (S.shape[0],))
    neg = _sq_hinge(nu[:, None] - 1.0 + W[y] @ W.T)
    neg[rows, y] = 0.0
    return (1.0 - S[rows, y]) ** 2 + neg.sum(axis=1)


def softmax_xent(s, y: int, temperature: float = 1.0) -> tuple[float, np.ndarray]:
    """Cross-entropy of ``softmax(s / temperature)`` at ``y`` and its logit gradient."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    s = np.asarray(s, dtype=np.float64)
    y = _check_class(y, s.size)
    z = s / temperature
    z = z - z.max()
    log_norm = np.log(np.sum(np.exp(z)))
    p = np.exp(z - log_norm)
    p[y] -= 1.0
    return float(log_norm - z[y]), p / temperature


def softmax_xent_batch(S: np.ndarray, y: np.ndarray, temperature: float = 1.0):
    """Per-row loss and gradient of the cross-entropy."""
    z = np.asarray(S, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(z.shape[0])
    p = np.exp(z - log_norm[:, None])
    p[rows, y] -= 1.0
    return log_norm - z[rows, y], p / temperature


def in_top1(s, y: int) -> bool:
    s = np.asarray(s, dtype=np.float64)
    return bool(s[y] >= s.max() - TIE_TOL)


def surrogate_gap(s, y: int, nu: float = DEFAULT_NU) -> tuple[float, float]:
    """Both sides of ``ccl >= 2 (nu - 1) * [y not in Top1]``; ties count as correct."""
    if not 1.0 < nu < 2.0:
        raise MarginOutOfTheoryRange(f"nu={nu} outside (1, 2)")
    lhs = ccl_loss(s, y, nu)
    rhs = 0.0 if in_top1(s, y) else 2.0 * (nu - 1.0)
    return lhs, rhs
