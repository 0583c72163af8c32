"""Bases of equivariant linear spaces, scheme rendering, numeric verification.

Every basis matrix is a 0/1 indicator of one orbit of index pairs, stored as
float64 so downstream linear algebra needs no casts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .permgroup import (
    GeneratorSet,
    GroupError,
    OrbitPartition,
    pair_orbits,
    wreath_generators,
)


@dataclass(frozen=True)
class EquivariantBasis:
    degree: int
    matrices: tuple
    source: str  # orbit | kron | wreath | dss

    def __len__(self):
        return len(self.matrices)

    def combine(self, weights) -> np.ndarray:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.size != len(self.matrices):
            raise ValueError(
                f"{weights.size} weights for {len(self.matrices)} basis matrices"
            )
        out = np.zeros((self.degree, self.degree))
        for w, B in zip(weights, self.matrices):
            out += w * B
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "degree": self.degree,
                "source": self.source,
                "matrices": [B.tolist() for B in self.matrices],
            }
        )


def basis_from_partition(p: OrbitPartition) -> EquivariantBasis:
    mats = tuple(
        (p.orbit_id == k).astype(np.float64) for k in range(p.orbit_count)
    )
    return EquivariantBasis(p.degree, mats, "orbit")


def kron_basis(basis_a: EquivariantBasis, basis_b: EquivariantBasis) -> EquivariantBasis:
    """All Kronecker products A_i (x) B_j, for the product group's layer space."""
    mats = tuple(
        np.kron(A, B) for A in basis_a.matrices for B in basis_b.matrices
    )
    return EquivariantBasis(basis_a.degree * basis_b.degree, mats, "kron")


def apply_two_sided(A: np.ndarray, B: np.ndarray, X: np.ndarray) -> np.ndarray:
    """(A (x) B) applied to row-major vec(X): A on rows of X, B on columns."""
    return A @ X @ B.T


def is_transitive(gens: GeneratorSet) -> bool:
    """Whether the point action has a single orbit.

    Read off the pair partition: (i,i) ~ (j,j) exactly when some g maps i to j.
    """
    return pair_orbits(gens).diagonal_orbit_ids().size == 1


def wreath_basis(h_gens: GeneratorSet, n: int) -> EquivariantBasis:
    """Layer basis for independent per-element H copies composed with S_n.

    Requires H transitive; the space is spanned by each H-basis element
    repeated on the n diagonal blocks plus one matrix carrying the single
    shared off-block parameter.
    """
    if not is_transitive(h_gens):
        raise GroupError(
            "wreath layer basis requires H to act transitively on points; "
            f"this H has {pair_orbits(h_gens).diagonal_orbit_ids().size} point orbits"
        )
    d = h_gens.degree
    h_basis = basis_from_partition(pair_orbits(h_gens))
    eye = np.eye(n)
    mats = [np.kron(eye, B) for B in h_basis.matrices]
    mats.append(np.kron(np.ones((n, n)) - eye, np.ones((d, d))))
    return EquivariantBasis(n * d, tuple(mats), "wreath")


def wreath_orbit_count(h_gens: GeneratorSet, n: int) -> int:
    """Independent route to the wreath layer dimension, via generic orbit BFS."""
    return pair_orbits(wreath_generators(h_gens, n)).orbit_count


# ------------------------------------------------------------------ rendering

# fixed 32-color palette (RGB), cycled over orbit ids; determinism over looks
PALETTE = np.array(
    [
        (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
        (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
        (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
        (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
        (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
        (255, 255, 255), (0, 0, 0), (100, 160, 60), (60, 60, 220),
        (200, 80, 80), (80, 200, 160), (160, 80, 200), (200, 160, 40),
        (40, 120, 90), (120, 40, 140), (90, 90, 30), (30, 90, 160),
    ],
    dtype=np.uint8,
)


@dataclass(frozen=True)
class SchemeImage:
    width: int
    height: int
    color_index: np.ndarray  # (height, width) orbit ids

    def rgb(self) -> np.ndarray:
        return PALETTE[self.color_index % len(PALETTE)]

    def distinct_colors(self) -> int:
        return int(np.unique(self.color_index).size)

    def to_ppm(self) -> bytes:
        header = f"P6\n{self.width} {self.height}\n255\n".encode()
        return header + self.rgb().tobytes()


def render_scheme(p: OrbitPartition) -> SchemeImage:
    return SchemeImage(p.degree, p.degree, p.orbit_id.copy())


def write_ppm(image: SchemeImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(image.to_ppm())


# --------------------------------------------------------------- verification

def check_equivariance(
    L: np.ndarray, gens: GeneratorSet, trials: int = 50, seed: int = 0
) -> float:
    """max over generators g and random x of ||L(g.x) - g.L(x)||_inf."""
    L = np.asarray(L, dtype=np.float64)
    if L.shape != (gens.degree, gens.degree):
        raise ValueError(f"matrix shape {L.shape} vs group degree {gens.degree}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(gens.degree)
        Lx = L @ x
        for g in gens.generators:
            r = np.max(np.abs(L @ x[g.inv] - Lx[g.inv]))
            worst = max(worst, float(r))
    return worst


def commutes_exactly(B: np.ndarray, gens: GeneratorSet) -> bool:
    """P(g) B == B P(g) for every generator, entrywise exact."""
    for g in gens.generators:
        P = g.matrix()
        if not np.array_equal(P @ B, B @ P):
            return False
    return True


def projection_residual(
    basis_a: EquivariantBasis, basis_b: EquivariantBasis
) -> float:
    """Worst least-squares residual projecting either basis onto the other."""
    if basis_a.degree != basis_b.degree:
        raise ValueError("degree mismatch between bases")
    Va = np.stack([B.ravel() for B in basis_a.matrices], axis=1)
    Vb = np.stack([B.ravel() for B in basis_b.matrices], axis=1)
    worst = 0.0
    for V, W in ((Va, Vb), (Vb, Va)):
        coef, *_ = np.linalg.lstsq(V, W, rcond=None)
        worst = max(worst, float(np.max(np.abs(V @ coef - W))))
    return worst
