"""Shared data model: knockoff-augmented datasets, cloak masks, partitions.

Conventions used throughout the package:

* variables and covariates are indexed 0-based in code;
* subgroup labels are 1-based, ``1 <= label <= width``;
* user-facing names (CSV headers, subgroup definitions) are 1-based,
  e.g. column ``x3`` is variable index 2 and ``Z1=0`` refers to covariate
  index 0.

All container types are frozen and hold read-only arrays; the swap
operations return new bundles and never mutate their inputs.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .rng import derive_rng


class DimensionError(ValueError):
    """Shapes of related arrays do not line up."""


class DatasetFormatError(ValueError):
    """A dataset file violates the CSV schema."""


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DataBundle:
    """A knockoff-augmented dataset: variables, knockoffs, outcome, covariates.

    ``x`` and ``xk`` are ``(n, p)``; ``y`` is length ``n``; ``z`` is
    ``(n, m)`` with ``m >= 0``.
    """

    x: np.ndarray
    xk: np.ndarray
    y: np.ndarray
    z: np.ndarray
    column_names: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "xk", _frozen(self.xk))
        object.__setattr__(self, "y", _frozen(self.y))
        z = np.array(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(len(z), -1) if z.size else z.reshape(self.x.shape[0], 0)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        if self.x.ndim != 2 or self.xk.ndim != 2:
            raise DimensionError("x and xk must be 2-dimensional")
        if self.x.shape != self.xk.shape:
            raise DimensionError(
                f"x has shape {self.x.shape} but xk has shape {self.xk.shape}"
            )
        n, p = self.x.shape
        if n < 1 or p < 1:
            raise DimensionError("need at least one row and one variable")
        if self.y.shape != (n,):
            raise DimensionError(f"y has shape {self.y.shape}, expected ({n},)")
        if self.z.shape[0] != n:
            raise DimensionError(
                f"z has {self.z.shape[0]} rows, expected {n}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.z.shape[1]

    def take(self, rows) -> "DataBundle":
        """Row subset as a new bundle."""
        rows = np.asarray(rows, dtype=int)
        return DataBundle(
            self.x[rows], self.xk[rows], self.y[rows], self.z[rows],
            self.column_names,
        )

    def binary_covariates(self) -> np.ndarray:
        """Indices of covariate columns whose values are all 0 or 1."""
        out = []
        for c in range(self.m):
            vals = self.z[:, c]
            if np.all((vals == 0.0) | (vals == 1.0)):
                out.append(c)
        return np.array(out, dtype=int)


@dataclass(frozen=True)
class CloakMask:
    """Binary swap mask: entry ``(i, j)`` set means swap ``x`` and ``xk`` there."""

    v: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.v)
        if not np.isin(v, (0, 1)).all():
            raise ValueError("cloak entries must be exactly 0 or 1")
        v = v.astype(np.uint8)
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @classmethod
    def draw(cls, n: int, p: int, prob: float = 0.5, seed: int = 0) -> "CloakMask":
        """I.i.d. Bernoulli(prob) mask."""
        rng = derive_rng(seed, "cloak-mask")
        return cls((rng.random((n, p)) < prob).astype(np.uint8), seed=seed)

    @classmethod
    def draw_blocks(cls, n: int, blocks: "BlockMap", prob: float = 0.5,
                    seed: int = 0) -> "CloakMask":
        """Mask constant across the columns of each block (block-level swaps)."""
        rng = derive_rng(seed, "cloak-mask")
        per_block = (rng.random((n, blocks.n_blocks)) < prob).astype(np.uint8)
        return cls(per_block[:, blocks.block_of], seed=seed)

    @classmethod
    def zeros(cls, n: int, p: int) -> "CloakMask":
        return cls(np.zeros((n, p), dtype=np.uint8))


class HypothesisId(NamedTuple):
    """A single local hypothesis: (variable or block index, subgroup label)."""

    variable: int
    label: int


@dataclass(frozen=True)
class PartitionSet:
    """Per-variable subgroup rules over the covariate space.

    Each rule is a sorted tuple of covariate indices; the empty tuple is the
    trivial rule (a single subgroup covering everyone). For a rule over g
    binary covariates the subgroup label is the big-endian binary encoding
    of their configuration, offset to start at 1:
    ``label = 1 + sum_k z[c_k] * 2**(g - 1 - k)`` over the sorted indices.
    """

    rules: tuple

    def __post_init__(self):
        rules = tuple(tuple(sorted(int(c) for c in r)) for r in self.rules)
        for r in rules:
            if len(set(r)) != len(r):
                raise ValueError(f"rule {r} repeats a covariate")
        object.__setattr__(self, "rules", rules)

    @classmethod
    def trivial(cls, p: int) -> "PartitionSet":
        return cls(((),) * p)

    @classmethod
    def uniform(cls, p: int, covariates: Sequence[int]) -> "PartitionSet":
        """Every variable split by the same covariate configuration."""
        return cls((tuple(covariates),) * p)

    @property
    def p(self) -> int:
        return len(self.rules)

    def width(self, j: int) -> int:
        return 1 << len(self.rules[j])

    @property
    def widths(self) -> np.ndarray:
        return np.array([self.width(j) for j in range(self.p)], dtype=int)

    @property
    def total_width(self) -> int:
        return int(self.widths.sum())

    def labels_for(self, j: int, z: np.ndarray) -> np.ndarray:
        """Subgroup label of every row of ``z`` under rule ``j``."""
        rule = self.rules[j]
        n = z.shape[0]
        if not rule:
            return np.ones(n, dtype=int)
        labels = np.ones(n, dtype=int)
        g = len(rule)
        for k, c in enumerate(rule):
            col = z[:, c]
            if not np.all((col == 0.0) | (col == 1.0)):
                raise ValueError(
                    f"covariate {c} is not binary; discretize before partitioning"
                )
            labels += col.astype(int) << (g - 1 - k)
        return labels

    def hypothesis_ids(self, variables=None) -> list:
        """All (variable, label) pairs, variables ascending then labels."""
        if variables is None:
            variables = range(self.p)
        return [
            HypothesisId(j, ell)
            for j in variables
            for ell in range(1, self.width(j) + 1)
        ]

    def subgroup_definition(self, j: int, label: int) -> str:
        """Human-readable subgroup, e.g. ``"Z1=0,Z3=1"`` or ``"all"``."""
        rule = self.rules[j]
        if not rule:
            return "all"
        self._check(j, label)
        g = len(rule)
        bits = [(label - 1) >> (g - 1 - k) & 1 for k in range(g)]
        return ",".join(f"Z{c + 1}={b}" for c, b in zip(rule, bits))

    def _check(self, j: int, label: int):
        if not 0 <= j < self.p:
            raise IndexError(f"variable index {j} out of range [0, {self.p})")
        if not 1 <= label <= self.width(j):
            raise IndexError(
                f"label {label} invalid for variable {j} (width {self.width(j)})"
            )


def subgroup_members(partition: PartitionSet, j: int, label: int,
                     z: np.ndarray) -> np.ndarray:
    """Sorted row indices of subgroup ``label`` for variable ``j``.

    Over labels ``1..width(j)`` the results partition ``range(n)``.
    """
    partition._check(j, label)
    labels = partition.labels_for(j, z)
    return np.flatnonzero(labels == label)


def cloak_swap(d: DataBundle, mask: CloakMask) -> DataBundle:
    """Entry-wise swap of ``x`` and ``xk`` wherever the mask is set.

    Involution: applying the same mask twice returns the original bundle.
    """
    if mask.v.shape != d.x.shape:
        raise DimensionError(
            f"mask shape {mask.v.shape} does not match data shape {d.x.shape}"
        )
    flip = mask.v == 1
    x = np.where(flip, d.xk, d.x)
    xk = np.where(flip, d.x, d.xk)
    return DataBundle(x, xk, d.y, d.z, d.column_names)


def swap_subgroups(d: DataBundle, swaps: Iterable[HypothesisId],
                   partition: PartitionSet) -> DataBundle:
    """Swap ``x[i, j]`` with ``xk[i, j]`` for every row of each listed subgroup."""
    mask = np.zeros(d.x.shape, dtype=np.uint8)
    for j, label in swaps:
        rows = subgroup_members(partition, j, label, d.z)
        mask[rows, j] = 1
    return cloak_swap(d, CloakMask(mask))


@dataclass(frozen=True)
class BlockMap:
    """Assignment of variables to contiguous, non-empty blocks."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("blocks must be non-empty")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_blocks(self) -> int:
        return len(self.sizes)

    @property
    def p(self) -> int:
        return sum(self.sizes)

    @property
    def block_of(self) -> np.ndarray:
        """Block index of each variable."""
        return np.repeat(np.arange(self.n_blocks), self.sizes)

    def members(self, b: int) -> np.ndarray:
        start = sum(self.sizes[:b])
        return np.arange(start, start + self.sizes[b])


# CSV dataset schema: header row "y,x1..xp,xk1..xkp,z1..zm" (any column
# order), float cells, fixed row length. Parsing is strict.

_COL_RE = re.compile(r"^(y|x(\d+)|xk(\d+)|z(\d+))$")


def read_dataset_csv(path) -> DataBundle:
    """Load a bundle from CSV; raises :class:`DatasetFormatError` on bad input."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file") from None
        kinds = {}
        for pos, name in enumerate(header):
            m = _COL_RE.match(name.strip())
            if not m:
                raise DatasetFormatError(f"unrecognized column name {name!r}")
            if name in kinds:
                raise DatasetFormatError(f"duplicate column {name!r}")
            kinds[name.strip()] = pos
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetFormatError(
                    f"line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DatasetFormatError(
                    f"line {lineno}: non-numeric cell"
                ) from None
    if not rows:
        raise DatasetFormatError("no data rows")
    table = np.array(rows, dtype=float)

    def collect(prefix: str) -> np.ndarray:
        idx = {}
        for name, pos in kinds.items():
            m = _COL_RE.match(name)
            if prefix == "x" and m.group(2) is not None:
                idx[int(m.group(2))] = pos
            elif prefix == "xk" and m.group(3) is not None:
                idx[int(m.group(3))] = pos
            elif prefix == "z" and m.group(4) is not None:
                idx[int(m.group(4))] = pos
        if sorted(idx) != list(range(1, len(idx) + 1)):
            raise DatasetFormatError(
                f"{prefix} columns must be numbered 1..{len(idx)} without gaps"
            )
        cols = [idx[k] for k in range(1, len(idx) + 1)]
        return table[:, cols]

    if "y" not in kinds:
        raise DatasetFormatError("missing outcome column 'y'")
    x = collect("x")
    xk = collect("xk")
    z = collect("z")
    if x.shape[1] == 0:
        raise DatasetFormatError("no x columns found")
    if xk.shape[1] == 0:
        raise DatasetFormatError(
            "no xk columns: knockoff copies must be supplied with the "
            "dataset (construction for arbitrary distributions is not "
            "provided)"
        )
    if xk.shape[1] != x.shape[1]:
        raise DatasetFormatError(
            f"found {x.shape[1]} x columns but {xk.shape[1]} xk columns"
        )
    y = table[:, kinds["y"]]
    return DataBundle(x, xk, y, z)


def write_dataset_csv(d: DataBundle, path) -> None:
    """Write a bundle in the canonical column order y, x*, xk*, z*."""
    header = (
        ["y"]
        + [f"x{j + 1}" for j in range(d.p)]
        + [f"xk{j + 1}" for j in range(d.p)]
        + [f"z{c + 1}" for c in range(d.m)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(d.n):
            writer.writerow(
                [repr(float(d.y[i]))]
                + [repr(float(v)) for v in d.x[i]]
                + [repr(float(v)) for v in d.xk[i]]
                + [repr(float(v)) for v in d.z[i]]
            )
