"""Simplex geometry: Dirichlet sampling, the information diffusion kernel,
and the unbiased MMD estimator used for distribution matching.

All kernel/MMD computations run in torch so gradients flow to the encoded
samples; Dirichlet sampling is numpy-based and fully deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

SIMPLEX_ATOL = 1e-5

# Below this distance from s=1 the squared geodesic arccos^2(s) is replaced
# by its series 2*(1-s), whose derivative -2 is the exact limit.
_NEAR_ONE_EPS = 1e-7


class GeometryError(ValueError):
    pass


class ShapeError(GeometryError):
    pass


class InvalidPriorError(GeometryError):
    pass


class InvalidBatchError(GeometryError):
    pass


def check_simplex(values, atol: float = SIMPLEX_ATOL) -> None:
    """Raise GeometryError unless `values` is a probability vector."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected 1-d vector, got shape {v.shape}")
    if np.any(v < 0):
        raise GeometryError("simplex vector has negative entries")
    s = float(v.sum())
    if abs(s - 1.0) > atol:
        raise GeometryError(f"simplex vector sums to {s}, not 1")


@dataclass(frozen=True)
class SimplexVector:
    """Probability vector over topics (theta_d, theta_w, or a prior draw)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        check_simplex(v)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DirichletPrior:
    """Symmetric Dirichlet with a single concentration parameter."""

    concentration: float
    dim: int

    def __post_init__(self):
        if not self.concentration > 0:
            raise InvalidPriorError(f"concentration must be > 0, got {self.concentration}")
        if self.dim < 2:
            raise InvalidPriorError(f"dim must be >= 2, got {self.dim}")


@dataclass
class SampleBatch:
    """A batch of simplex vectors tagged by origin (encoded vs prior)."""

    rows: np.ndarray  # (m, dim)
    role: str = "encoded-Q"  # "encoded-Q" or "prior-P"

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.float64)
        if r.ndim != 2:
            raise ShapeError(f"expected 2-d batch, got shape {r.shape}")
        if r.shape[0] < 2:
            raise InvalidBatchError("batch needs at least 2 rows")
        self.rows = r

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def _gamma_mt(rng: np.random.Generator, shape: float, n: int) -> np.ndarray:
    """Marsaglia-Tsang gamma sampler with the small-shape boost.

    Valid for all shape > 0; shapes < 1 draw from Gamma(shape + 1) and apply
    the U^(1/shape) boost, avoiding the degeneracy of naive samplers in the
    small-concentration regime.
    """
    boost = None
    a = shape
    if a < 1.0:
        boost = rng.random(n) ** (1.0 / a)
        a = a + 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        while True:
            x = rng.standard_normal()
            v = (1.0 + c * x) ** 3
            if v <= 0.0:
                continue
            u = rng.random()
            if np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v):
                out[i] = d * v
                break
    if boost is not None:
        out = out * boost
    return out


def dirichlet_rows(rng: np.random.Generator, concentration: float,
                   dim: int, m: int) -> np.ndarray:
    """m symmetric-Dirichlet rows via normalized gamma draws.

    For concentration < 1 the U^(1/a) boost underflows in linear space, so
    the normalization runs in log space (softmax of log-gamma draws).
    """
    a = concentration
    if a < 1.0:
        base = _gamma_mt(rng, a + 1.0, m * dim).reshape(m, dim)
        log_boost = np.log(rng.random((m, dim))) / a
        logs = np.log(base) + log_boost
        logs -= logs.max(axis=1, keepdims=True)
        rows = np.exp(logs)
    else:
        rows = _gamma_mt(rng, a, m * dim).reshape(m, dim)
    return rows / rows.sum(axis=1, keepdims=True)


def sample_dirichlet(prior: DirichletPrior, m: int, seed: int) -> SampleBatch:
    """Draw m i.i.d. samples from a symmetric Dirichlet; bit-identical per seed."""
    if m < 2:
        raise InvalidBatchError(f"need m >= 2, got {m}")
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = dirichlet_rows(rng, prior.concentration, prior.dim, m)
    return SampleBatch(rows=rows, role="prior-P")


def sample_dirichlet_tensor(concentration: float, dim: int, m: int, seed: int,
                            dtype=torch.float32) -> torch.Tensor:
    """Prior draws as a constant torch tensor (for training-time MMD)."""
    batch = sample_dirichlet(DirichletPrior(concentration, dim), m, seed)
    return torch.from_numpy(batch.rows).to(dtype)


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, SimplexVector):
        return torch.from_numpy(x.values)
    if isinstance(x, SampleBatch):
        return torch.from_numpy(x.rows)
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def idk_kernel_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Information diffusion kernel exp(-arccos^2(sum_z sqrt(a_z*b_z)))
    for every row pair; a is (n, Z), b is (p, Z), result (n, p).

    s is clamped to [0, 1]; near s=1 the stable series keeps the gradient
    finite (the analytic limit of d/ds arccos^2(s) at 1 is -2).
    """
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    s = torch.sqrt(a.clamp_min(0)).matmul(torch.sqrt(b.clamp_min(0)).transpose(-1, -2))
    s = s.clamp(0.0, 1.0)
    near_one = s > 1.0 - _NEAR_ONE_EPS
    s_safe = torch.where(near_one, torch.zeros_like(s), s)
    dist2 = torch.where(near_one, 2.0 * (1.0 - s), torch.arccos(s_safe) ** 2)
    return torch.exp(-dist2)


def idk_kernel(a, b) -> float | torch.Tensor:
    """Kernel value for a single pair of simplex vectors."""
    ta, tb = _as_tensor(a), _as_tensor(b)
    out = idk_kernel_matrix(ta.reshape(1, -1), tb.reshape(1, -1))[0, 0]
    if isinstance(a, torch.Tensor) or isinstance(b, torch.Tensor):
        return out
    return float(out)


def mmd_idk(q, p) -> float | torch.Tensor:
    """Unbiased MMD estimator between two equal-size sample batches.

    Three terms: off-diagonal within-batch kernel means for q and for p,
    minus 2/m^2 times the full cross-kernel sum. May be negative.
    Differentiable with respect to q (and p) rows when given tensors.
    """
    tq, tp = _as_tensor(q), _as_tensor(p)
    if tq.ndim != 2 or tp.ndim != 2:
        raise ShapeError("batches must be 2-d")
    if tq.shape[1] != tp.shape[1]:
        raise ShapeError(f"dimension mismatch: {tq.shape[1]} vs {tp.shape[1]}")
    if tq.shape[0] != tp.shape[0]:
        raise ShapeError(f"batch sizes must match: {tq.shape[0]} vs {tp.shape[0]}")
    m = tq.shape[0]
    if m < 2:
        raise ShapeError(f"need m >= 2, got {m}")
    kqq = idk_kernel_matrix(tq, tq)
    kpp = idk_kernel_matrix(tp, tp)
    kqp = idk_kernel_matrix(tq, tp)
    denom = m * (m - 1)
    term_q = (kqq.sum() - kqq.diagonal().sum()) / denom
    term_p = (kpp.sum() - kpp.diagonal().sum()) / denom
    cross = 2.0 * kqp.sum() / (m * m)
    out = term_q + term_p - cross
    if isinstance(q, torch.Tensor) or isinstance(p, torch.Tensor):
        return out
    return float(out)
