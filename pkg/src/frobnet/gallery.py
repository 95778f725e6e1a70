"""Built-in targets used by the command line and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .dag_compiler import DagSpec
from .errors import RejectedInput
from .oracles import (
    abs_power_oracle,
    affine_oracle,
    mean_oracle,
    polynomial_oracle,
    product_oracle,
    scaled_sine_oracle,
)
from .primitives import PrimitiveSpec


@dataclass(frozen=True)
class GalleryEntry:
    name: str
    kind: str  # "primitive", "holder" or "dag"
    description: str
    factory: Callable[[], object]

    def build(self, **kw):
        """Primitive entries take ``k``; the others take no arguments."""
        return self.factory(**kw)


def square_target():
    return polynomial_oracle([(1.0, (2,))], 1, 2.0, name="x^2")


def quadratic_2d_target():
    terms = [(0.25, (2, 0)), (0.5, (1, 1)), (0.25, (0, 2))]
    return polynomial_oracle(terms, 2, 2.0, name="(x1+x2)^2/4")


_BOX2 = [(-1.0, 1.0)] * 2


def binary_tree_d4() -> DagSpec:
    """``(x1+x2)/2 * (x3+x4)/2`` on [-1,1]^4 as a two-level binary tree."""
    return DagSpec(
        levels=(("x1", "x2", "x3", "x4"), ("v1", "v2"), ("f",)),
        parents={"v1": ("x1", "x2"), "v2": ("x3", "x4"), "f": ("v1", "v2")},
        oracles={"v1": mean_oracle(2, 2.0, _BOX2), "v2": mean_oracle(2, 2.0, _BOX2),
                 "f": product_oracle(2, 1.0, 2.0, _BOX2)},
        range_bounds={"v1": 1.0, "v2": 1.0, "f": 1.0},
        name="binarytree-d4",
    )


def constant_level_l3() -> DagSpec:
    """Three levels on [-1,1]^3 with a rough (alpha = 1/2) middle node."""
    return DagSpec(
        levels=(("x1", "x2", "x3"), ("v1", "v2"), ("w1", "w2"), ("f",)),
        parents={"v1": ("x1", "x2"), "v2": ("x2", "x3"), "w1": ("v1", "v2"), "w2": ("v2",),
                 "f": ("w1", "w2")},
        oracles={
            "v1": mean_oracle(2, 2.0, _BOX2),
            "v2": product_oracle(2, 1.0, 2.0, _BOX2),
            "w1": scaled_sine_oracle(1.0, 1.0, [0.5, 0.5], 0.0, 2.0, _BOX2),
            "w2": abs_power_oracle(0.5, [1.0], 0.0, 1.0, [(-1.0, 1.0)]),
            "f": product_oracle(2, 1.0, 2.0, _BOX2),
        },
        range_bounds={"v1": 1.0, "v2": 1.0, "w1": 1.0, "w2": 1.0, "f": 1.0},
        name="constlevel-L3",
    )


def multi_index_s2() -> DagSpec:
    """``g(Ax)`` with two projections of [-1,1]^4 and ``g(u) = u1 u2``."""
    box4 = [(-1.0, 1.0)] * 4
    return DagSpec(
        levels=(("x1", "x2", "x3", "x4"), ("p1", "p2"), ("f",)),
        parents={"p1": ("x1", "x2", "x3", "x4"), "p2": ("x1", "x2", "x3", "x4"), "f": ("p1", "p2")},
        oracles={"p1": affine_oracle([0.25, 0.25, 0.25, 0.25], 0.0, 2.0, box4),
                 "p2": affine_oracle([0.25, -0.25, 0.25, -0.25], 0.0, 2.0, box4),
                 "f": product_oracle(2, 1.0, 2.0, _BOX2)},
        range_bounds={"p1": 1.0, "p2": 1.0, "f": 1.0},
        name="multiindex-s2",
    )


_ENTRIES = [
    GalleryEntry("square", "primitive", "square net, k from the command line",
                 lambda k=1: PrimitiveSpec("square", k=k)),
    GalleryEntry("product", "primitive", "product net on [-1,1]^2",
                 lambda k=1: PrimitiveSpec("product", k=k)),
    GalleryEntry("monomial-d3", "primitive", "x1 x2 x3 on [-1,1]^3",
                 lambda k=1: PrimitiveSpec("monomial", k=k, d=3)),
    GalleryEntry("holder-1d-α2", "holder", "x^2 on [0,1], alpha = 2", square_target),
    GalleryEntry("holder-2d-α2", "holder", "(x1+x2)^2/4 on [0,1]^2, alpha = 2", quadratic_2d_target),
    GalleryEntry("multiindex-s2", "dag", "product of two projections of [-1,1]^4", multi_index_s2),
    GalleryEntry("binarytree-d4", "dag", "binary tree on [-1,1]^4", binary_tree_d4),
    GalleryEntry("constlevel-L3", "dag", "three-level DAG on [-1,1]^3", constant_level_l3),
]
GALLERY = {e.name: e for e in _ENTRIES}
_ALIASES = {"holder-1d-alpha2": "holder-1d-α2", "holder-2d-alpha2": "holder-2d-α2"}


def gallery_entry(name: str) -> GalleryEntry:
    key = _ALIASES.get(name, name)
    if key not in GALLERY:
        raise RejectedInput(f"unknown gallery target {name!r}; choose from {sorted(GALLERY)}")
    return GALLERY[key]


def names() -> list[str]:
    return list(GALLERY)
