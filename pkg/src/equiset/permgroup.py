"""Permutation groups given by generators.

Actions follow the convention (g.x)_i = x[g^-1(i)].  Degree-l permutations
are stored in one-line image form (map[i] = g(i)) with the inverse computed
eagerly, since the action reads through g^-1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._kernels import pair_orbit_labels


class GroupError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class Perm:
    """Bijection on {0..l-1} in one-line image form."""

    __slots__ = ("map", "inv")

    def __init__(self, map):
        m = np.asarray(map, dtype=np.int64)
        if m.ndim != 1 or m.size == 0:
            raise GroupError("permutation must be a nonempty 1-d index array")
        if not np.array_equal(np.sort(m), np.arange(m.size)):
            raise GroupError(f"not a bijection on 0..{m.size - 1}: {m.tolist()}")
        self.map = m
        self.map.flags.writeable = False
        self.inv = np.argsort(m)
        self.inv.flags.writeable = False

    @property
    def degree(self) -> int:
        return self.map.size

    @classmethod
    def identity(cls, degree: int) -> "Perm":
        return cls(np.arange(degree))

    def inverse(self) -> "Perm":
        return Perm(self.inv)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.map, np.arange(self.degree)))

    def fixed_points(self) -> int:
        return int(np.count_nonzero(self.map == np.arange(self.degree)))

    def matrix(self) -> np.ndarray:
        """Permutation matrix P(g) with (P(g) x)_i = x[g^-1(i)]."""
        P = np.zeros((self.degree, self.degree))
        P[np.arange(self.degree), self.inv] = 1.0
        return P

    def __eq__(self, other):
        return isinstance(other, Perm) and np.array_equal(self.map, other.map)

    def __hash__(self):
        return hash(self.map.tobytes())

    def __repr__(self):
        return f"Perm({self.map.tolist()})"


def apply_perm(g: Perm, x):
    """(g.x)_i = x[g^-1(i)], acting on the leading axis of x."""
    x = np.asarray(x)
    if x.shape[0] != g.degree:
        raise DimensionError(
            f"vector of length {x.shape[0]} under degree-{g.degree} permutation"
        )
    return x[g.inv]


def compose(g: Perm, h: Perm) -> Perm:
    """(g o h)(i) = g(h(i))."""
    if g.degree != h.degree:
        raise DimensionError(f"degree mismatch: {g.degree} vs {h.degree}")
    return Perm(g.map[h.map])


@dataclass(frozen=True)
class GeneratorSet:
    degree: int
    generators: tuple = ()

    def __post_init__(self):
        if not self.generators:
            raise GroupError("generator set must be nonempty")
        for g in self.generators:
            if g.degree != self.degree:
                raise GroupError(
                    f"generator degree {g.degree} != declared {self.degree}"
                )
        object.__setattr__(self, "generators", tuple(self.generators))

    def gen_array(self) -> np.ndarray:
        return np.stack([g.map for g in self.generators])

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSet":
        obj = json.loads(text)
        return cls(obj["degree"], tuple(Perm(m) for m in obj["generators"]))

    def to_json(self) -> str:
        return json.dumps(
            {
                "degree": self.degree,
                "generators": [g.map.tolist() for g in self.generators],
            }
        )


@dataclass(frozen=True)
class OrbitPartition:
    """Partition of the l x l index pairs into group orbits.

    orbit_count is the dimension of the equivariant layer space; orbit_id
    holds contiguous ids 0..orbit_count-1 in row-major first-seen order.
    """

    degree: int
    orbit_id: np.ndarray
    orbit_count: int

    def diagonal_orbit_ids(self) -> np.ndarray:
        """Orbit ids met on the diagonal: the point orbits of the group."""
        return np.unique(np.diagonal(self.orbit_id))


DEFAULT_CLOSURE_CAP = 100_000


def closure(gens: GeneratorSet, cap: int = DEFAULT_CLOSURE_CAP) -> list[Perm]:
    """All group elements by BFS over generator products, each exactly once."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    ident = Perm.identity(gens.degree)
    seen = {ident: None}
    frontier = [ident]
    while frontier:
        nxt = []
        for h in frontier:
            for g in gens.generators:
                p = compose(g, h)
                if p not in seen:
                    seen[p] = None
                    nxt.append(p)
                    if len(seen) > cap:
                        raise GroupError(
                            f"group too large (> {cap} elements), use orbit method"
                        )
        frontier = nxt
    return list(seen)


def pair_orbits(gens: GeneratorSet) -> OrbitPartition:
    """Orbits of (s,t) -> (g(s), g(t)); never materializes the full group."""
    l = gens.degree
    labels = pair_orbit_labels(gens.gen_array())
    # labels are per-orbit minima, so unique's sorted order is first-seen order
    _, contiguous = np.unique(labels, return_inverse=True)
    orbit_id = contiguous.reshape(l, l).astype(np.int64)
    return OrbitPartition(l, orbit_id, int(orbit_id.max()) + 1)


def dim_trace(elements: list[Perm]) -> int:
    """Equivariant-space dimension as the average squared fixed-point count."""
    if not elements:
        raise GroupError("empty element list")
    total = sum(p.fixed_points() ** 2 for p in elements)
    if total % len(elements) != 0:
        raise GroupError("fixed-point sum not divisible by element count: input not a group")
    return total // len(elements)


# ------------------------------------------------------------- constructions

def trivial(d: int) -> GeneratorSet:
    return GeneratorSet(d, (Perm.identity(d),))


def cyclic(d: int) -> GeneratorSet:
    if d < 1:
        raise GroupError("cyclic degree must be >= 1")
    return GeneratorSet(d, (Perm((np.arange(d) + 1) % d),))


def symmetric(n: int) -> GeneratorSet:
    if n < 1:
        raise GroupError("symmetric degree must be >= 1")
    if n == 1:
        return trivial(1)
    swap = np.arange(n)
    swap[[0, 1]] = swap[[1, 0]]
    gens = [Perm(swap)]
    if n > 2:
        gens.append(Perm((np.arange(n) + 1) % n))
    return GeneratorSet(n, tuple(gens))


def translations2d(h: int, w: int) -> GeneratorSet:
    """Cyclic row/column shifts on an h x w grid flattened row-major."""
    r, c = np.divmod(np.arange(h * w), w)
    row_shift = Perm(((r + 1) % h) * w + c)
    col_shift = Perm(r * w + (c + 1) % w)
    return GeneratorSet(h * w, (row_shift, col_shift))


def product_group(a: GeneratorSet, b: GeneratorSet) -> GeneratorSet:
    """Product action on row-major pair indices i = s * degree(b) + t."""
    la, lb = a.degree, b.degree
    s, t = np.divmod(np.arange(la * lb), lb)
    gens = [Perm(g.map[s] * lb + t) for g in a.generators]
    gens += [Perm(s * lb + g.map[t]) for g in b.generators]
    return GeneratorSet(la * lb, tuple(gens))


def graph_conjugation(k: int) -> GeneratorSet:
    """S_k acting on k x k adjacency indices by simultaneous row/column moves."""
    r, c = np.divmod(np.arange(k * k), k)
    return GeneratorSet(
        k * k,
        tuple(Perm(g.map[r] * k + g.map[c]) for g in symmetric(k).generators),
    )


def wreath_generators(h: GeneratorSet, n: int) -> GeneratorSet:
    """Generators of the per-element-copies-of-H plus set-permutation group.

    H generators act on block 0 only; S_n generators permute the n blocks of
    size d.  Acting on l = n*d row-major indices.
    """
    if n < 1:
        raise GroupError("need n >= 1 set elements")
    d = h.degree
    l = n * d
    gens = []
    for g in h.generators:
        m = np.arange(l)
        m[:d] = g.map
        gens.append(Perm(m))
    blk, off = np.divmod(np.arange(l), d)
    for g in symmetric(n).generators:
        gens.append(Perm(g.map[blk] * d + off))
    return GeneratorSet(l, tuple(gens))


# ----------------------------------------------------------- groupspec parser

GRAMMAR = (
    "groupspec := trivial:d | cyclic:d | sym:n | trans2d:h,w "
    "| prod(A,B) | graph:k"
)


def parse_groupspec(text: str) -> GeneratorSet:
    """Parse the canonical text grammar into a generator set."""
    s = text.strip()
    try:
        return _parse(s)
    except GroupError:
        raise
    except Exception as exc:
        raise GroupError(f"bad groupspec {text!r} ({exc}); grammar: {GRAMMAR}") from exc


def _parse(s: str) -> GeneratorSet:
    if s.startswith("prod(") and s.endswith(")"):
        inner = s[5:-1]
        depth = 0
        for i, ch in enumerate(inner):
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif ch == "," and depth == 0:
                return product_group(_parse(inner[:i]), _parse(inner[i + 1:]))
        raise GroupError(f"prod(A,B) needs a top-level comma: {s!r}; grammar: {GRAMMAR}")
    if ":" not in s:
        raise GroupError(f"bad groupspec {s!r}; grammar: {GRAMMAR}")
    head, _, args = s.partition(":")
    head = head.strip().lower()
    if head == "trivial":
        return trivial(int(args))
    if head == "cyclic":
        return cyclic(int(args))
    if head == "sym":
        return symmetric(int(args))
    if head == "trans2d":
        h, w = (int(v) for v in args.split(","))
        return translations2d(h, w)
    if head == "graph":
        return graph_conjugation(int(args))
    raise GroupError(f"unknown group kind {head!r}; grammar: {GRAMMAR}")
