"""Evidence algebra on the binary frame {free, occupied}.

Masses are triples (m_f, m_o, m_u) summing to one; the unknown component
carries the ignorance of the frame. Scalar operations work on
:class:`MassFunction`; the ``*_nd`` variants apply the same formulas to
numpy arrays whose last axis holds the triple, and are the kernels the
grid layer builds on. All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Construction absorbs float drift up to this deviation and rejects larger ones.
CONSTRUCT_TOL = 1e-6
# K at or above 1 - TOTAL_CONFLICT_EPS counts as total conflict (exact 1.0 is
# measure-zero under floats).
TOTAL_CONFLICT_EPS = 1e-12

FREE, OCC, UNK = 0, 1, 2


class TotalConflictError(ValueError):
    """Two masses are fully contradictory; Dempster's rule is undefined."""


@dataclass(frozen=True)
class MassFunction:
    """Evidence mass triple (free, occupied, unknown), normalized to sum 1."""

    m_f: float
    m_o: float
    m_u: float

    def __post_init__(self):
        vals = [float(self.m_f), float(self.m_o), float(self.m_u)]
        for i, v in enumerate(vals):
            if not math.isfinite(v):
                raise ValueError(f"non-finite mass component: {vals}")
            if v < -CONSTRUCT_TOL or v > 1.0 + CONSTRUCT_TOL:
                raise ValueError(f"mass component out of [0, 1]: {vals}")
            if v < 0.0:
                vals[i] = 0.0
        s = vals[0] + vals[1] + vals[2]
        if abs(s - 1.0) > CONSTRUCT_TOL:
            raise ValueError(f"mass components sum to {s!r}, not 1: {vals}")
        # renormalize real drift but leave ulp-level dust alone, so exact
        # values (vacuous cells, floored unknowns) survive construction
        if abs(s - 1.0) > 1e-12:
            vals = [v / s for v in vals]
        object.__setattr__(self, "m_f", vals[0])
        object.__setattr__(self, "m_o", vals[1])
        object.__setattr__(self, "m_u", vals[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.m_f, self.m_o, self.m_u])

    @staticmethod
    def from_array(arr) -> "MassFunction":
        return MassFunction(float(arr[0]), float(arr[1]), float(arr[2]))


VACUOUS = MassFunction(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class SubjectiveOpinion:
    """Evidence counts (e_f, e_o) for the two committed states.

    The Dirichlet strength S = 2 + e_f + e_o; masses and the Dirichlet mean
    are derived views of the counts.
    """

    e_f: float
    e_o: float

    def __post_init__(self):
        if not (math.isfinite(self.e_f) and math.isfinite(self.e_o)):
            raise ValueError("non-finite evidence count")
        if self.e_f < 0.0 or self.e_o < 0.0:
            raise ValueError(f"negative evidence count: ({self.e_f}, {self.e_o})")

    @property
    def strength(self) -> float:
        return 2.0 + self.e_f + self.e_o

    def dirichlet_mean(self) -> tuple[float, float]:
        s = self.strength
        return (self.e_f + 1.0) / s, (self.e_o + 1.0) / s


def conflict(a: MassFunction, b: MassFunction) -> float:
    """Mass jointly committed to contradictory states."""
    return a.m_f * b.m_o + a.m_o * b.m_f


def dempster_combine(a: MassFunction, b: MassFunction) -> MassFunction:
    """Conjunctive combination, renormalizing conflict away.

    Raises :class:`TotalConflictError` when the sources are fully
    contradictory; the caller decides what to do with the cell then.
    """
    k = conflict(a, b)
    if k >= 1.0 - TOTAL_CONFLICT_EPS:
        raise TotalConflictError(f"conflict {k} leaves no compatible mass")
    inv = 1.0 / (1.0 - k)
    return MassFunction(
        (a.m_f * b.m_f + a.m_f * b.m_u + a.m_u * b.m_f) * inv,
        (a.m_o * b.m_o + a.m_o * b.m_u + a.m_u * b.m_o) * inv,
        (a.m_u * b.m_u) * inv,
    )


def yager_combine(a: MassFunction, b: MassFunction) -> MassFunction:
    """Conjunctive combination routing conflict into the unknown mass."""
    k = conflict(a, b)
    return MassFunction(
        a.m_f * b.m_f + a.m_f * b.m_u + a.m_u * b.m_f,
        a.m_o * b.m_o + a.m_o * b.m_u + a.m_u * b.m_o,
        a.m_u * b.m_u + k,
    )


def discount(gamma: float, m: MassFunction) -> MassFunction:
    """Scale committed mass by gamma, moving the remainder to unknown."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"discount factor {gamma} outside [0, 1]")
    return MassFunction(gamma * m.m_f, gamma * m.m_o, 1.0 - gamma + gamma * m.m_u)


def limit_unknown(m: MassFunction, floor: float) -> MassFunction:
    """Raise the unknown mass to at least ``floor``, scaling committed mass down.

    The free:occupied ratio is preserved. Masses already at or above the
    floor are returned unchanged.
    """
    if not 0.0 <= floor < 1.0:
        raise ValueError(f"unknown-mass floor {floor} outside [0, 1)")
    delta = floor - m.m_u
    if delta <= 0.0:
        return m
    committed = m.m_f + m.m_o
    # normalization guarantees committed > 0 whenever m_u < floor < 1
    assert committed > 0.0
    scale = 1.0 - delta / committed
    # land on the floor bit-exactly; m_u + delta would leave float dust
    return MassFunction(scale * m.m_f, scale * m.m_o, floor)


def opinion_to_mass(o: SubjectiveOpinion) -> MassFunction:
    """Evidential view of an opinion; unknown mass 2/S is always positive."""
    s = o.strength
    return MassFunction(o.e_f / s, o.e_o / s, 2.0 / s)


def pignistic_occupancy(m: MassFunction) -> float:
    """Point probability of occupancy: half the unknown mass joins m_o."""
    return (1.0 - m.m_f + m.m_o) / 2.0


def evidential_loss(
    predicted: SubjectiveOpinion, target: MassFunction
) -> tuple[float, float, float]:
    """Per-class regression loss of an opinion against a target mass.

    The committed components penalize the squared residual between target
    mass and Dirichlet mean, weighted by the mean's variance factor; the
    unknown component penalizes residual ignorance. Provided for validating
    plug-in prediction models; no training loop ships with this package.
    """
    s = predicted.strength
    p_f, p_o = predicted.dirichlet_mean()
    l_f = (target.m_f - p_f) ** 2 * p_f * (1.0 - p_f) / (s + 1.0)
    l_o = (target.m_o - p_o) ** 2 * p_o * (1.0 - p_o) / (s + 1.0)
    l_u = (1.0 - 2.0 / s) ** 2
    return l_f, l_o, l_u


# ---------------------------------------------------------------------------
# Array kernels: same algebra over (..., 3) float arrays, one triple per cell.
# These are what the per-grid fusion loops actually run.
# ---------------------------------------------------------------------------


def conflict_nd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., FREE] * b[..., OCC] + a[..., OCC] * b[..., FREE]


def dempster_nd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise Dempster combination; totally conflicting cells keep ``a``.

    Keeping the first argument implements the map-update policy: when an
    update is irreconcilable with a cell, the cell is left untouched.
    """
    k = conflict_nd(a, b)
    total = k >= 1.0 - TOTAL_CONFLICT_EPS
    inv = 1.0 / np.where(total, np.inf, 1.0 - k)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    out[..., FREE] = (
        a[..., FREE] * b[..., FREE] + a[..., FREE] * b[..., UNK] + a[..., UNK] * b[..., FREE]
    ) * inv
    out[..., OCC] = (
        a[..., OCC] * b[..., OCC] + a[..., OCC] * b[..., UNK] + a[..., UNK] * b[..., OCC]
    ) * inv
    out[..., UNK] = a[..., UNK] * b[..., UNK] * inv
    if np.any(total):
        out[total] = np.broadcast_to(a, out.shape)[total]
    return out


def yager_nd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise Yager combination; always defined."""
    k = conflict_nd(a, b)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    out[..., FREE] = (
        a[..., FREE] * b[..., FREE] + a[..., FREE] * b[..., UNK] + a[..., UNK] * b[..., FREE]
    )
    out[..., OCC] = (
        a[..., OCC] * b[..., OCC] + a[..., OCC] * b[..., UNK] + a[..., UNK] * b[..., OCC]
    )
    out[..., UNK] = a[..., UNK] * b[..., UNK] + k
    return out


def discount_nd(gamma: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Elementwise discounting; ``gamma`` broadcasts against the cell axes."""
    g = np.asarray(gamma)[..., None]
    out = g * m
    out[..., UNK] += 1.0 - np.asarray(gamma)
    return out


def limit_unknown_nd(m: np.ndarray, floor: float) -> np.ndarray:
    """Elementwise unknown-mass floor; cells above the floor pass through."""
    delta = np.maximum(0.0, floor - m[..., UNK])
    committed = m[..., FREE] + m[..., OCC]
    scale = 1.0 - delta / np.where(committed > 0.0, committed, 1.0)
    out = np.empty_like(m)
    out[..., FREE] = scale * m[..., FREE]
    out[..., OCC] = scale * m[..., OCC]
    out[..., UNK] = np.maximum(m[..., UNK], floor)
    return out


def pignistic_nd(m: np.ndarray) -> np.ndarray:
    return (1.0 - m[..., FREE] + m[..., OCC]) / 2.0


def is_normalized_nd(m: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Per-cell check of the mass-function invariants."""
    in_range = np.all((m >= -atol) & (m <= 1.0 + atol), axis=-1)
    return in_range & (np.abs(m.sum(axis=-1) - 1.0) <= atol)
