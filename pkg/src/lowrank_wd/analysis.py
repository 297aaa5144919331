"""Diagnostics: batch-gradient census, rank certificates, gap, bounds, accuracy.

A rank certificate is a low-rank matrix ``V_tilde`` built from per-sample
gradients together with an ``epsilon`` (the largest batch-gradient norm over
an explicit batch family) and a constant ``C`` such that
``‖V - V_tilde‖_F <= C * epsilon``. The batch family is exactly the set of
batches the triangle-inequality argument touches, so the inequality is
checked deterministically rather than sampled.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .linalg import frobenius_norm, numerical_rank
from .network import TwoLayerNet, grad_params
from .training import ConstantG, GSpec, batch_gradient, epoch_batches, g_values, mse

DEGENERATE_G_GAP = 1e-12
VERIFY_RTOL = 1e-12


class InfeasibleFamilyError(ValueError):
    pass


# -- batch families ---------------------------------------------------------

@dataclass(frozen=True)
class EpochPartition:
    """The ``⌊N/B⌋`` disjoint batches of one shuffled epoch."""

    seed: int = 0

    def batches(self, n_samples: int, batch_size: int) -> list[np.ndarray]:
        if n_samples < batch_size:
            raise InfeasibleFamilyError(f"N={n_samples} is smaller than B={batch_size}")
        order = epoch_batches(n_samples, batch_size, np.random.default_rng(self.seed))
        return list(order.reshape(-1, batch_size))

    def describe(self) -> str:
        return f"epoch_partition(seed={self.seed})"


@dataclass(frozen=True)
class RandomBatches:
    count: int
    seed: int = 0

    def batches(self, n_samples: int, batch_size: int) -> list[np.ndarray]:
        if n_samples < batch_size:
            raise InfeasibleFamilyError(f"N={n_samples} is smaller than B={batch_size}")
        rng = np.random.default_rng(self.seed)
        return [np.sort(rng.choice(n_samples, size=batch_size, replace=False))
                for _ in range(self.count)]

    def describe(self) -> str:
        return f"random_batches(count={self.count},seed={self.seed})"


def _check_bases(n_samples: int, batch_size: int, p0, p1, extra=()) -> tuple[np.ndarray, np.ndarray]:
    p0 = np.asarray(p0, dtype=np.int64)
    p1 = np.asarray(p1, dtype=np.int64)
    if n_samples < 2 * batch_size:
        raise InfeasibleFamilyError(f"swap family needs N >= 2B, got N={n_samples}, B={batch_size}")
    for name, p in (("P0", p0), ("P1", p1)):
        if p.shape != (batch_size - 1,) or len(set(p.tolist())) != batch_size - 1:
            raise InfeasibleFamilyError(f"{name} must hold B-1={batch_size - 1} distinct indices")
        if p.min() < 0 or p.max() >= n_samples:
            raise InfeasibleFamilyError(f"{name} has indices outside [0, {n_samples})")
    if set(p0.tolist()) & set(p1.tolist()):
        raise InfeasibleFamilyError("P0 and P1 must be disjoint")
    for i in extra:
        if not 0 <= i < n_samples:
            raise InfeasibleFamilyError(f"index {i} outside [0, {n_samples})")
    return p0, p1


@dataclass(frozen=True)
class SwapFamily:
    """Batches ``P1 ∪ {j}`` for ``j ∈ P0 ∪ {i1}``, followed by ``P0 ∪ {i1}``."""

    p0: tuple
    p1: tuple
    i1: int

    def batches(self, n_samples: int, batch_size: int) -> list[np.ndarray]:
        p0, p1 = _check_bases(n_samples, batch_size, self.p0, self.p1, (self.i1,))
        if self.i1 in set(p0.tolist()) | set(p1.tolist()):
            raise InfeasibleFamilyError("i1 must lie outside P0 ∪ P1")
        swaps = [np.append(p1, j) for j in list(p0) + [self.i1]]
        return swaps + [np.append(p0, self.i1)]

    def describe(self) -> str:
        return f"swap_family(P0={list(self.p0)},P1={list(self.p1)},i1={self.i1})"


# -- census -----------------------------------------------------------------

@dataclass
class GradientCensus:
    family: str
    batches: list
    norms: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def epsilon(self) -> float:
        return float(self.norms.max())

    def write_norms_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["batch_id", "norm"])
            for k, v in enumerate(self.norms):
                w.writerow([k, repr(float(v))])

    def write_histogram_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def v_gradient_norm(net: TwoLayerNet, dataset: Dataset, rows, gspec: GSpec) -> float:
    rows = np.asarray(rows, dtype=np.int64)
    grad = batch_gradient(net, dataset.X[rows], dataset.y[rows], gspec)
    return frobenius_norm(grad.dV)


def gradient_census(net: TwoLayerNet, dataset: Dataset, batch_size: int, gspec: GSpec,
                    family, bins: int = 30) -> GradientCensus:
    """Frobenius norm of the V part of the batch gradient for every batch in ``family``.

    The histogram has ``bins`` equal-width bins on ``[0, max]`` (``[0, 1]`` when
    every norm is zero).
    """
    batches = family.batches(len(dataset), batch_size)
    if not batches:
        raise InfeasibleFamilyError("batch family is empty")
    norms = np.array([v_gradient_norm(net, dataset, rows, gspec) for rows in batches])
    hi = float(norms.max()) if norms.max() > 0 else 1.0
    counts, edges = np.histogram(norms, bins=bins, range=(0.0, hi))
    return GradientCensus(family.describe(), batches, norms, edges, counts)


# -- rank certificates -------------------------------------------------------

@dataclass
class RankCertificate:
    mode: str
    V: np.ndarray
    V_tilde: np.ndarray
    rank_bound: int
    epsilon: float
    constant_proof: float
    constant_tight: float
    distance: float
    holds_proof: bool
    holds_tight: bool
    indices: tuple
    p0: tuple
    p1: tuple
    batch_size: int
    g_pair: tuple = ()
    family_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def bound(self) -> float:
        return self.constant_proof * self.epsilon

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "rank_bound": self.rank_bound,
            "rank_V_tilde": numerical_rank(self.V_tilde) if np.any(self.V_tilde) else 0,
            "epsilon": self.epsilon,
            "constant_proof": self.constant_proof,
            "constant_tight": self.constant_tight,
            "distance": self.distance,
            "bound_proof": self.constant_proof * self.epsilon,
            "bound_tight": self.constant_tight * self.epsilon,
            "holds_proof": self.holds_proof,
            "holds_tight": self.holds_tight,
            "indices": [int(i) for i in self.indices],
            "P0": [int(i) for i in self.p0],
            "P1": [int(i) for i in self.p1],
            "batch_size": self.batch_size,
            "g_pair": [float(v) for v in self.g_pair],
            "family_norms": [float(v) for v in self.family_norms],
            "V_fro": frobenius_norm(self.V),
            "V_tilde": self.V_tilde.tolist(),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def sample_terms(net: TwoLayerNet, X: np.ndarray, y: np.ndarray):
    """Per-sample factors of the residual-weighted V gradients.

    Sample ``i`` contributes ``resid[i] * outer(gated[i], X[i])``.
    """
    z = X @ net.V.T + net.b
    active = z > 0.0
    resid = np.where(active, z, 0.0) @ net.U[0] - y
    gated = np.where(active, net.U[0][None, :], 0.0)
    return resid, gated


def _default_bases(n_samples: int, batch_size: int, seed: int):
    perm = np.random.default_rng(seed).permutation(n_samples)
    return perm[:batch_size - 1], perm[batch_size - 1:2 * batch_size - 2]


def _holds(distance: float, bound: float) -> bool:
    return bool(distance <= bound * (1.0 + VERIFY_RTOL))


def build_certificate(net: TwoLayerNet, dataset: Dataset, batch_size: int, gspec: GSpec,
                      mode: str = "constant_g", p0=None, p1=None, i1=None, i2=None,
                      seed: int = 0) -> RankCertificate:
    """Construct the low-rank witness for ``net.V``.

    ``constant_g``: ``V_tilde = -T_i1 / mu_v`` (rank <= 1), epsilon over the
    swap family of (P0, P1, i1), ``C = (2B+1)/mu_v``.

    ``variable_g``: ``V_tilde = -(T_i1 - T_i2) / (g_i1 - g_i2)`` (rank <= 2),
    epsilon over the batches ``P0 ∪ {i1}`` and ``P0 ∪ {i2}``,
    ``C = 2B/|g_i1 - g_i2|``.

    Here ``T_i`` is the residual-weighted V gradient of sample ``i``. Unpinned
    bases come from a seeded shuffle; unpinned indices minimise the distance.
    """
    N, B = len(dataset), batch_size
    if B < 2:
        raise InfeasibleFamilyError("batch size must be at least 2")
    if p0 is None or p1 is None:
        d0, d1 = _default_bases(N, B, seed) if N >= 2 * B else (None, None)
        if d0 is None:
            raise InfeasibleFamilyError(f"swap family needs N >= 2B, got N={N}, B={B}")
        p0 = d0 if p0 is None else p0
        p1 = d1 if p1 is None else p1
    p0, p1 = _check_bases(N, B, p0, p1, tuple(i for i in (i1, i2) if i is not None))
    g = g_values(gspec, dataset.X, dataset.y)
    resid, gated = sample_terms(net, dataset.X, dataset.y)
    V = net.V
    # ⟨V, T_i⟩ and ‖T_i‖² without forming T_i
    v_dot = resid * np.einsum("ij,ij->i", gated, dataset.X @ V.T)
    gated_sq = np.einsum("ij,ij->i", gated, gated)
    x_sq = np.einsum("ij,ij->i", dataset.X, dataset.X)
    v_sq = float(np.sum(V * V))

    def T(i):
        return resid[i] * np.outer(gated[i], dataset.X[i])

    if mode == "constant_g":
        if not isinstance(gspec, ConstantG) or gspec.mu_v <= 0:
            raise ValueError("constant_g certificates need a ConstantG with mu_v > 0")
        mu = float(gspec.mu_v)
        taken = set(p0.tolist()) | set(p1.tolist())
        if i1 is None:
            cand = np.array([i for i in range(N) if i not in taken])
            d2 = v_sq + 2 * v_dot[cand] / mu + resid[cand] ** 2 * gated_sq[cand] * x_sq[cand] / mu ** 2
            i1 = int(cand[np.argmin(d2)])
        elif i1 in taken:
            raise InfeasibleFamilyError("i1 must lie outside P0 ∪ P1")
        family = SwapFamily(tuple(p0.tolist()), tuple(p1.tolist()), i1)
        V_tilde = -T(i1) / mu
        constant_proof = (2 * B + 1) / mu
        constant_tight = 2 * B / mu
        indices, rank_bound, g_pair = (i1,), 1, (mu,)
        norms = np.array([v_gradient_norm(net, dataset, rows, gspec)
                          for rows in family.batches(N, B)])
    elif mode == "variable_g":
        taken = set(p0.tolist())
        if i1 is None or i2 is None:
            cand = np.array([i for i in range(N) if i not in taken])
            dg = g[cand][:, None] - g[cand][None, :]
            ok = np.abs(dg) > DEGENERATE_G_GAP
            if not ok.any():
                raise ValueError("g takes a single value on the candidates; use constant_g")
            dg_safe = np.where(ok, dg, 1.0)
            rg = gated[cand] @ gated[cand].T
            rx = dataset.X[cand] @ dataset.X[cand].T
            tt = np.outer(resid[cand], resid[cand]) * rg * rx
            tn = np.diag(tt)
            vd = v_dot[cand]
            d2 = (v_sq + 2 * (vd[:, None] - vd[None, :]) / dg_safe
                  + (tn[:, None] + tn[None, :] - 2 * tt) / dg_safe ** 2)
            d2 = np.where(ok, d2, np.inf)
            a, b_ = np.unravel_index(np.argmin(d2), d2.shape)
            i1, i2 = int(cand[a]), int(cand[b_])
        if i1 == i2 or i1 in taken or i2 in taken:
            raise InfeasibleFamilyError("i1, i2 must be distinct and outside P0")
        gap = float(g[i1] - g[i2])
        if abs(gap) <= DEGENERATE_G_GAP:
            raise ValueError(f"|g(i1) - g(i2)| = {abs(gap):.3g} is degenerate")
        V_tilde = -(T(i1) - T(i2)) / gap
        constant_proof = constant_tight = 2 * B / abs(gap)
        indices, rank_bound, g_pair = (i1, i2), 2, (float(g[i1]), float(g[i2]))
        norms = np.array([v_gradient_norm(net, dataset, np.append(p0, i), gspec)
                          for i in (i1, i2)])
    else:
        raise ValueError(f"unknown certificate mode {mode!r}")

    eps = float(norms.max())
    distance = frobenius_norm(V - V_tilde)
    return RankCertificate(
        mode=mode, V=V.copy(), V_tilde=V_tilde, rank_bound=rank_bound, epsilon=eps,
        constant_proof=constant_proof, constant_tight=constant_tight, distance=distance,
        holds_proof=_holds(distance, constant_proof * eps),
        holds_tight=_holds(distance, constant_tight * eps),
        indices=indices, p0=tuple(int(i) for i in p0), p1=tuple(int(i) for i in p1),
        batch_size=B, g_pair=g_pair, family_norms=norms,
    )


def verify_certificate(cert: RankCertificate, constant: str = "proof") -> bool:
    """Recompute ``‖V - V_tilde‖_F`` and compare with ``C * epsilon``.

    ``constant="proof"`` uses ``constant_proof`` (``(2B+1)/mu_v`` for constant g);
    ``"tight"`` uses ``constant_tight`` (``2B/mu_v``), which the triangle chain
    does not guarantee.
    """
    c = {"proof": cert.constant_proof, "tight": cert.constant_tight}[constant]
    return _holds(frobenius_norm(cert.V - cert.V_tilde), c * cert.epsilon)


# -- generalisation, bounds, accuracy -----------------------------------------

def generalization_gap(net: TwoLayerNet, train_set: Dataset, test_set: Dataset):
    """(test MSE - train MSE, its absolute value)."""
    gap = mse(net, test_set) - mse(net, train_set)
    return gap, abs(gap)


class BoundValues(NamedTuple):
    full: float
    lowrank: float
    confidence_term: float
    full_complexity: float
    lowrank_complexity: float
    ratio: float


def bound_value(m: int, n: int, k: int, N: float, delta: float, L: float = 1.0,
                C: float = 1.0) -> BoundValues:
    """Uniform vs low-rank generalisation bounds for width ``m``, input dim ``n``.

    ``full = C L² √(ln(1/δ)/N) + C L² √(m n ln m ln N / N)`` and ``lowrank``
    replaces ``m n`` by ``(m + n) k``. ``ratio`` compares the complexity terms
    only. ``N`` may be any real ``>= 2``.
    """
    if m < 2 or n < 2 or N < 2 or k < 1:
        raise ValueError("need m, n, N >= 2 and k >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if C <= 0 or L <= 0:
        raise ValueError("C and L must be positive")
    scale = C * L * L
    conf = scale * math.sqrt(math.log(1 / delta) / N)
    logs = math.log(m) * math.log(N) / N
    full_c = scale * math.sqrt(m * n * logs)
    low_c = scale * math.sqrt((m + n) * k * logs)
    return BoundValues(conf + full_c, conf + low_c, conf, full_c, low_c, full_c / low_c)


def accuracy_round(net: TwoLayerNet, dataset: Dataset) -> float:
    """Fraction of samples where ``clamp(round(output), 0, 9)`` equals the label.

    Rounding is half-up.
    """
    y = dataset.y
    if np.any(y != np.round(y)) or np.any((y < 0) | (y > 9)):
        raise ValueError("accuracy needs integer labels in [0, 9]")
    pred = np.clip(np.floor(net.predict(dataset.X) + 0.5), 0, 9)
    return float(np.mean(pred == y))
