"""Two-layer ReLU network ``x -> U relu(Vx + b)`` with closed-form gradients.

Shapes: ``U`` is ``(1, m)``, ``V`` is ``(m, n)``, ``b`` is ``(m,)``. Gradients
with respect to ``V`` are stored in the same ``(m, n)`` layout as ``V``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import as_colvec, as_mat


@dataclass(eq=False)
class TwoLayerNet:
    U: np.ndarray
    V: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.U = as_mat(self.U, "U")
        self.V = as_mat(self.V, "V")
        self.b = as_colvec(self.b, "b")
        if self.U.shape[0] != 1:
            raise ValueError(f"U must be a row vector, got shape {self.U.shape}")
        if not (self.U.shape[1] == self.V.shape[0] == self.b.shape[0]):
            raise ValueError(
                f"inconsistent widths: U {self.U.shape}, V {self.V.shape}, b {self.b.shape}")

    @property
    def width(self) -> int:
        return self.V.shape[0]

    @property
    def input_dim(self) -> int:
        return self.V.shape[1]

    def copy(self) -> "TwoLayerNet":
        return TwoLayerNet(self.U.copy(), self.V.copy(), self.b.copy())

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Outputs for every row of ``X``."""
        z = np.asarray(X, dtype=np.float64) @ self.V.T
        z += self.b
        np.maximum(z, 0.0, out=z)
        return z @ self.U[0]


@dataclass(eq=False)
class NetGradient:
    dU: np.ndarray
    dV: np.ndarray
    db: np.ndarray


def _check_input(net: TwoLayerNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != net.input_dim:
        raise ValueError(f"input has dimension {x.shape[0]}, network expects {net.input_dim}")
    return x


def preactivation(net: TwoLayerNet, x) -> np.ndarray:
    x = _check_input(net, x)
    return net.V @ x + net.b


def forward(net: TwoLayerNet, x) -> float:
    z = preactivation(net, x)
    return float(net.U[0] @ np.maximum(z, 0.0))


def activation_pattern(net: TwoLayerNet, x) -> np.ndarray:
    """Boolean diagonal of the activation operator; a pre-activation of exactly 0 is inactive."""
    return preactivation(net, x) > 0.0


def forward_masked(net: TwoLayerNet, x) -> float:
    """Same output computed as ``U D (Vx + b)`` with ``D`` the activation pattern."""
    z = preactivation(net, x)
    d = np.diag((z > 0.0).astype(np.float64))
    return float((net.U @ d @ z)[0])


def activation_margin(net: TwoLayerNet, x) -> float:
    return float(np.min(np.abs(preactivation(net, x))))


def grad_params(net: TwoLayerNet, x, residual: float) -> NetGradient:
    """Gradient of the output at ``x``, scaled by ``residual``.

    ``dV`` is the outer product ``residual * (D Uᵀ) xᵀ`` and so has rank at
    most one.
    """
    x = _check_input(net, x)
    z = net.V @ x + net.b
    active = z > 0.0
    gated = np.where(active, net.U[0], 0.0)
    return NetGradient(
        dU=(residual * np.maximum(z, 0.0)).reshape(1, -1),
        dV=residual * np.outer(gated, x),
        db=residual * gated,
    )


def kaiming_init(m: int, n: int, seed: int | None = 0) -> TwoLayerNet:
    """He-normal init: ``V ~ N(0, 2/n)``, ``U ~ N(0, 2/m)``, ``b = 0``."""
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    rng = np.random.default_rng(seed)
    V = rng.normal(0.0, math.sqrt(2.0 / n), size=(m, n))
    U = rng.normal(0.0, math.sqrt(2.0 / m), size=(1, m))
    return TwoLayerNet(U, V, np.zeros(m))


def _fmt_row(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_checkpoint(net: TwoLayerNet, path) -> None:
    """Write ``m n``, then U (one line), V (m lines), b (one line)."""
    lines = [f"{net.width} {net.input_dim}", _fmt_row(net.U[0])]
    lines.extend(_fmt_row(row) for row in net.V)
    lines.append(_fmt_row(net.b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> TwoLayerNet:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        m, n = (int(t) for t in lines[0].split())
    except (IndexError, ValueError):
        raise ValueError(f"{path}: bad checkpoint header") from None
    if len(lines) != m + 3:
        raise ValueError(f"{path}: expected {m + 3} lines, found {len(lines)}")
    rows = [[float(t) for t in ln.split()] for ln in lines[1:]]
    U = np.array([rows[0]])
    V = np.array(rows[1:m + 1])
    b = np.array(rows[m + 1])
    if U.shape != (1, m) or V.shape != (m, n) or b.shape != (m,):
        raise ValueError(f"{path}: parameter shapes do not match header {m} {n}")
    return TwoLayerNet(U, V, b)
