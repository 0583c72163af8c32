"""Set layers for elements with their own symmetry group H.

Internal layout is (batch, n, f, d): n set elements, f feature channels,
d positions inside one element.  DeepSets-style layers see plain feature
vectors as d = 1.  All layer maps here are linear; activations and
normalization are applied between layers by the Model wrapper.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .equimap import basis_from_partition
from .permgroup import GeneratorSet, pair_orbits, parse_groupspec
from .tensor import (
    ParamStore,
    ShapeError,
    Tensor,
    basis_expand,
    batch_norm_train,
    circ_conv1d,
    concat,
    elem_linear,
    mean_pool2,
)

LAYER_KINDS = (
    "siamese",
    "deepsets",
    "dss_sum",
    "dss_max",
    "dss_aittala",
    "dss_sridhar",
)

CONFIG_VERSION = 1


# ----------------------------------------------------------------- structures

@dataclass(frozen=True)
class FullDense:
    """Unconstrained map mixing channels and positions."""

    def tag(self):
        return {"type": "dense"}


@dataclass(frozen=True)
class CircConv:
    """Circular 1-D convolution; exactly equivariant to cyclic shifts."""

    k: int

    def tag(self):
        return {"type": "conv", "k": self.k}


@dataclass(frozen=True)
class SharedBasis:
    """Weights over the orbit-indicator basis of an arbitrary group H."""

    group: str
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def gens(self) -> GeneratorSet:
        if "gens" not in self._cache:
            self._cache["gens"] = parse_groupspec(self.group)
        return self._cache["gens"]

    def basis_array(self) -> np.ndarray:
        if "basis" not in self._cache:
            b = basis_from_partition(pair_orbits(self.gens()))
            self._cache["basis"] = np.stack(b.matrices)
        return self._cache["basis"]

    def tag(self):
        return {"type": "basis", "group": self.group}


def structure_from_tag(tag: dict):
    t = tag["type"]
    if t == "dense":
        return FullDense()
    if t == "conv":
        return CircConv(int(tag["k"]))
    if t == "basis":
        return SharedBasis(tag["group"])
    raise ValueError(f"unknown h-structure tag {tag!r}")


class HMap:
    """One parameterized H-equivariant linear map (..., f, d) -> (..., g, d)."""

    def __init__(self, structure, store: ParamStore, prefix: str,
                 in_features: int, out_features: int, d: int, bias: bool = True):
        self.structure = structure
        self.d = d
        self.in_features = in_features
        self.out_features = out_features
        if isinstance(structure, CircConv):
            if structure.k > d:
                raise ShapeError(f"conv kernel {structure.k} wider than d={d}")
            self.w = store.uniform(
                prefix + ".w", (out_features, in_features, structure.k),
                fan_in=in_features * structure.k,
            )
        elif isinstance(structure, SharedBasis):
            basis = structure.basis_array()
            if basis.shape[1] != d:
                raise ShapeError(
                    f"basis degree {basis.shape[1]} vs element dimension {d}"
                )
            self.w = store.uniform(
                prefix + ".w", (out_features, in_features, basis.shape[0]),
                fan_in=in_features * d,
            )
        elif isinstance(structure, FullDense):
            self.w = store.uniform(
                prefix + ".w", (out_features, in_features, d, d),
                fan_in=in_features * d,
            )
        else:
            raise TypeError(f"unknown structure {structure!r}")
        # per-channel constants are fixed by every permutation action
        self.b = store.zeros(prefix + ".b", (out_features, 1)) if bias else None

    def __call__(self, X: Tensor) -> Tensor:
        if isinstance(self.structure, CircConv):
            out = circ_conv1d(X, self.w)
        elif isinstance(self.structure, SharedBasis):
            out = elem_linear(basis_expand(self.w, self.structure.basis_array()), X)
        else:
            out = elem_linear(self.w, X)
        if self.b is not None:
            out = out + self.b
        return out

    def matrix(self) -> np.ndarray:
        """Materialized d x d map; single-feature maps only."""
        if self.in_features != 1 or self.out_features != 1:
            raise ShapeError("matrix() is for f = f' = 1 maps")
        if isinstance(self.structure, CircConv):
            k = self.structure.k
            M = np.zeros((self.d, self.d))
            for t in range(self.d):
                for j in range(k):
                    M[t, (t + j - k // 2) % self.d] += self.w.data[0, 0, j]
            return M
        if isinstance(self.structure, SharedBasis):
            return np.einsum(
                "e,ets->ts", self.w.data[0, 0], self.structure.basis_array()
            )
        return self.w.data[0, 0]


# -------------------------------------------------------------- layer forward

def _bcast_over_set(T: Tensor, like: Tensor) -> Tensor:
    # zero-add broadcasts the singleton set axis; backward sums it back
    return T + Tensor(np.zeros(like.shape))


def siamese_forward(X: Tensor, L1: HMap) -> Tensor:
    """The same H-map applied independently to every set element."""
    return L1(X)


def deepsets_forward(X: Tensor, L1: HMap, L2: HMap) -> Tensor:
    """L1(x_i) + L2(sum_{j != i} x_j) on plain feature vectors (d = 1)."""
    S = X.sum(axis=-3, keepdims=True)
    return L1(X) + L2(S - X)


def dss_forward(variant: str, X: Tensor, L1: HMap, L2: HMap | None) -> Tensor:
    """One linear set layer; X is (..., n, f, d).

    sum:     L1(x_i) + L2(sum_j x_j)      (all-j aggregation)
    max:     L1(x_i) + L2(elementwise max_j x_j)
    aittala: [L1(x_i), max_j L2(x_j)]     (feature concatenation, width 2f')
    sridhar: L1(x_i) - (1/n) sum_j L1(x_j)
    """
    if variant == "dss_sum":
        return L1(X) + L2(X.sum(axis=-3, keepdims=True))
    if variant == "dss_max":
        return L1(X) + L2(X.max(axis=-3, keepdims=True))
    if variant == "dss_aittala":
        A = L1(X)
        M = _bcast_over_set(L2(X).max(axis=-3, keepdims=True), A)
        return concat((A, M), axis=-2)
    if variant == "dss_sridhar":
        Y = L1(X)
        return Y - Y.mean(axis=-3, keepdims=True)
    raise ValueError(f"unknown DSS variant {variant!r}")


def materialized_dss_matrix(A1: np.ndarray, A2: np.ndarray, n: int) -> np.ndarray:
    """nd x nd matrix of the single-feature sum layer with maps A1, A2."""
    return np.kron(np.eye(n), A1) + np.kron(np.ones((n, n)), A2)


# -------------------------------------------------------------------- configs

@dataclass(frozen=True)
class LayerConfig:
    kind: str
    h_structure: object
    in_features: int
    out_features: int
    use_norm: bool = False
    pool: bool = False      # mean-pool positions by 2 after activation
    collapse_d: bool = False  # sum the position axis away (H-invariant)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def width_out(self) -> int:
        return 2 * self.out_features if self.kind == "dss_aittala" else self.out_features

    def to_dict(self):
        return {
            "kind": self.kind,
            "h": self.h_structure.tag(),
            "in": self.in_features,
            "out": self.out_features,
            "norm": self.use_norm,
            "pool": self.pool,
            "collapse_d": self.collapse_d,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(
            obj["kind"], structure_from_tag(obj["h"]), obj["in"], obj["out"],
            obj.get("norm", False), obj.get("pool", False),
            obj.get("collapse_d", False),
        )


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple
    head: dict  # {"type": "invariant", "mlp": [...], "classes": c} | to_n | to_d | to_nd
    n: int
    d: int

    def validate(self):
        width = None
        for i, lc in enumerate(self.layers):
            if width is not None and lc.in_features != width:
                raise ValueError(
                    f"layer {i} expects {lc.in_features} features, got {width}"
                )
            width = lc.width_out
        if self.head["type"] not in ("invariant", "to_n", "to_d", "to_nd"):
            raise ValueError(f"unknown head {self.head['type']!r}")
        return self

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": CONFIG_VERSION,
                "n": self.n,
                "d": self.d,
                "layers": [lc.to_dict() for lc in self.layers],
                "head": self.head,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        obj = json.loads(text)
        if obj.get("version") != CONFIG_VERSION:
            raise ValueError(f"unsupported model config version {obj.get('version')}")
        cfg = cls(
            tuple(LayerConfig.from_dict(o) for o in obj["layers"]),
            obj["head"],
            obj["n"],
            obj["d"],
        )
        return cfg.validate()


# ---------------------------------------------------------------------- model

class Model:
    """A stack of set layers plus a head, with parameters and norm buffers."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.store = ParamStore(seed)
        self.layers = []
        self.norm_buffers = {}
        d = config.d
        for i, lc in enumerate(config.layers):
            prefix = f"layer{i}"
            maps = {}
            maps["L1"] = HMap(
                lc.h_structure, self.store, prefix + ".L1",
                lc.in_features, lc.out_features, d,
            )
            if lc.kind in ("deepsets", "dss_sum", "dss_max", "dss_aittala"):
                maps["L2"] = HMap(
                    lc.h_structure, self.store, prefix + ".L2",
                    lc.in_features, lc.out_features, d, bias=False,
                )
            self.layers.append(maps)
            if lc.use_norm:
                w = lc.width_out
                self.store.ones(prefix + ".gamma", (w, 1))
                self.store.zeros(prefix + ".beta", (w, 1))
                self.norm_buffers[prefix] = {
                    "mean": np.zeros((w, 1)),
                    "var": np.ones((w, 1)),
                }
            if lc.collapse_d:
                d = 1
            elif lc.pool:
                d = d // 2
        self._head_d = d
        self._build_head()

    # feature width entering the head
    def _head_width(self) -> int:
        if self.config.layers:
            return self.config.layers[-1].width_out
        return 1

    def _build_head(self):
        head = self.config.head
        w = self._head_width()
        if head["type"] == "invariant":
            widths = list(head.get("mlp", [])) + [head["classes"]]
            prev = w
            for i, width in enumerate(widths):
                self.store.uniform(f"head.W{i}", (prev, width), fan_in=prev)
                self.store.zeros(f"head.b{i}", (width,))
                prev = width
        elif head["type"] == "to_n":
            self.store.uniform("head.wa", (w, 1), fan_in=w)
            self.store.uniform("head.wb", (w, 1), fan_in=w)
            self.store.zeros("head.b", (1,))
        elif head["type"] in ("to_d", "to_nd"):
            structure = (
                structure_from_tag(head["h"]) if "h" in head
                else self.config.layers[-1].h_structure
            )
            self._head_map1 = HMap(
                structure, self.store, "head.L1", w, 1, self._head_d
            )
            if head["type"] == "to_nd":
                self._head_map2 = HMap(
                    structure, self.store, "head.L2", w, 1, self._head_d, bias=False
                )

    # ------------------------------------------------------------ norm layers

    def _batch_norm(self, X: Tensor, prefix: str, training: bool) -> Tensor:
        gamma = self.store[prefix + ".gamma"]
        beta = self.store[prefix + ".beta"]
        buf = self.norm_buffers[prefix]
        eps = 1e-5
        if training:
            out, mu, var = batch_norm_train(X, gamma, beta, axes=(0, 1, 3), eps=eps)
            momentum = 0.9
            buf["mean"] = momentum * buf["mean"] + (1 - momentum) * mu[0, 0]
            buf["var"] = momentum * buf["var"] + (1 - momentum) * var[0, 0]
            return out
        # evaluation: affine from the running statistics (cheap per-feature ops)
        a = gamma * Tensor(1.0 / np.sqrt(buf["var"] + eps))
        return X * a + (beta - Tensor(buf["mean"]) * a)

    # --------------------------------------------------------------- forward

    def forward(self, X, training: bool = False) -> Tensor:
        """X: (batch, n, f, d) array or Tensor; returns head output."""
        if not isinstance(X, Tensor):
            X = Tensor(X)
        if X.ndim != 4:
            raise ShapeError(f"expected (batch, n, f, d), got {X.shape}")
        for i, (lc, maps) in enumerate(zip(self.config.layers, self.layers)):
            prefix = f"layer{i}"
            if lc.kind == "siamese":
                X = siamese_forward(X, maps["L1"])
            elif lc.kind == "deepsets":
                X = deepsets_forward(X, maps["L1"], maps["L2"])
            else:
                X = dss_forward(lc.kind, X, maps["L1"], maps.get("L2"))
            if lc.use_norm:
                X = self._batch_norm(X, prefix, training)
            X = X.relu()
            if lc.collapse_d:
                X = X.sum(axis=-1, keepdims=True)
            elif lc.pool:
                X = mean_pool2(X)
        return self._head(X)

    def _head(self, X: Tensor) -> Tensor:
        head = self.config.head
        if head["type"] == "invariant":
            return invariant_head(X, self.store)
        if head["type"] == "to_n":
            return equivariant_to_n(X, self.store)
        if head["type"] == "to_d":
            return equivariant_to_d(X, self._head_map1)
        return equivariant_to_nd(X, self._head_map1, self._head_map2)

    def __call__(self, X, training=False):
        return self.forward(X, training)

    # checkpointing covers the parameters *and* the norm running statistics;
    # restoring one without the other pairs weights with foreign buffers
    def snapshot(self):
        bufs = {
            k: {n: v.copy() for n, v in b.items()}
            for k, b in self.norm_buffers.items()
        }
        return self.store.state_copy(), bufs

    def restore(self, snap):
        state, bufs = snap
        self.store.load_state(state)
        self.norm_buffers = {
            k: {n: v.copy() for n, v in b.items()} for k, b in bufs.items()
        }


# ---------------------------------------------------------------------- heads

def invariant_head(X: Tensor, store: ParamStore) -> Tensor:
    """Sum over set and positions, then an MLP: a G-invariant classifier."""
    Z = X.sum(axis=(-3, -1))  # (batch, f)
    i = 0
    while f"head.W{i}" in store:
        Z = Z @ store[f"head.W{i}"] + store[f"head.b{i}"]
        i += 1
        if f"head.W{i}" in store:
            Z = Z.relu()
    return Z


def equivariant_to_n(X: Tensor, store: ParamStore) -> Tensor:
    """One score per element: S_n-equivariant, H-invariant.  (b, n, f, d) -> (b, n)."""
    Z = X.sum(axis=-1)  # H-invariant functional per feature: (b, n, f)
    S = Z.sum(axis=-2, keepdims=True) - Z  # sum over j != i
    out = Z @ store["head.wa"] + S @ store["head.wb"] + store["head.b"]
    return out.reshape(*out.shape[:-1])


def equivariant_to_d(X: Tensor, L: HMap) -> Tensor:
    """One d-vector per set: S_n-invariant, H-equivariant.  -> (b, d)."""
    S = X.sum(axis=-3)  # (b, f, d)
    out = L(S)  # (b, 1, d)
    return out.reshape(out.shape[0], out.shape[-1])


def equivariant_to_nd(X: Tensor, L1: HMap, L2: HMap) -> Tensor:
    """A final sum-aggregation layer with a single output channel. -> (b, n, d)."""
    out = dss_forward("dss_sum", X, L1, L2)  # (b, n, 1, d)
    return out.reshape(out.shape[0], out.shape[1], out.shape[-1])


# ------------------------------------------------------- expressivity witness

SEPARATION_X = np.array([[1.0, 2.0], [3.0, 4.0]])
SEPARATION_Y = np.array([[1.0, 2.0], [4.0, 3.0]])


def separation_witness(Z: np.ndarray) -> float:
    """f(Z) = sum_i <z_i, sum_j z_j>^2: G-invariant, DSS-expressible."""
    s = Z.sum(axis=0)
    return float(((Z @ s) ** 2).sum())


def separation_pair():
    """Two sets in one wreath orbit but different S_2 x C_2 orbits.

    Y applies the nontrivial C_2 swap to the second element only, which no
    (q, h) pair acting uniformly can reproduce; the quadratic witness tells
    them apart while any Siamese-plus-sum model cannot.
    """
    return (
        SEPARATION_X.copy(),
        SEPARATION_Y.copy(),
        (separation_witness(SEPARATION_X), separation_witness(SEPARATION_Y)),
    )


def product_orbit(Z: np.ndarray) -> list[np.ndarray]:
    """All images of Z under S_2 x C_2 (set permutation, uniform coord swap)."""
    out = []
    for q in (np.array([0, 1]), np.array([1, 0])):
        for h in (np.array([0, 1]), np.array([1, 0])):
            out.append(Z[q][:, h])
    return out


def siamese_invariant_config() -> ModelConfig:
    """A small Siamese+sum invariant model on 2 elements with H = C_2."""
    layers = (
        LayerConfig("siamese", SharedBasis("cyclic:2"), 1, 4),
        LayerConfig("siamese", SharedBasis("cyclic:2"), 4, 4),
    )
    head = {"type": "invariant", "mlp": [8], "classes": 1}
    return ModelConfig(layers, head, n=2, d=2)
