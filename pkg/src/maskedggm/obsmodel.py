"""Observation masks and joint-measurement counting for partially observed data.

Each sample records values for a subset of the p variables.  Everything
downstream (covariance estimation, variance contractions) is driven by how
often variables are observed together, so this module keeps per-variable
observation sets as packed bit-vectors and answers pairwise / quadruple
joint-observation counts with popcounts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np


class MaskedDataError(ValueError):
    """Raised when masked data fails validation or parsing."""


_MISSING_MARKERS = {""}  # plus any case variant of "nan"


def _is_missing(cell: str) -> bool:
    s = cell.strip()
    return s in _MISSING_MARKERS or s.lower() == "nan"


@dataclass(frozen=True)
class MaskGroup:
    """A batch of samples sharing one observation mask.

    ``values[r]`` holds the observed values of global sample ``rows[r]``,
    aligned with ``indices`` (sorted, unique variable indices).
    """

    indices: np.ndarray
    rows: np.ndarray
    values: np.ndarray


class MaskedDataset:
    """n samples over p variables, each sample observing a subset of them.

    Samples are stored grouped by identical observation mask so that large
    designs (e.g. one million two-variable samples) stay compact and
    covariance accumulation can run blockwise.  Immutable after construction.
    """

    def __init__(
        self,
        groups: Sequence[MaskGroup],
        n_samples: int,
        n_vars: int,
        var_names: Optional[Sequence[str]] = None,
        validate: bool = True,
    ):
        self.groups = list(groups)
        self.n_samples = int(n_samples)
        self.n_vars = int(n_vars)
        self.var_names = list(var_names) if var_names is not None else None
        if validate:
            self._validate()

    def _validate(self) -> None:
        if self.n_vars <= 0:
            raise MaskedDataError("dataset must have at least one variable")
        if self.var_names is not None and len(self.var_names) != self.n_vars:
            raise MaskedDataError("var_names length does not match n_vars")
        seen = np.zeros(self.n_samples, dtype=bool)
        for g in self.groups:
            idx = np.asarray(g.indices)
            if idx.ndim != 1 or g.values.ndim != 2:
                raise MaskedDataError("malformed mask group")
            if idx.size != np.unique(idx).size:
                raise MaskedDataError("duplicate variable index inside a mask")
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
                raise MaskedDataError("variable index out of range")
            if g.values.shape != (g.rows.size, idx.size):
                raise MaskedDataError("value block shape does not match mask")
            if g.rows.size and (g.rows.min() < 0 or g.rows.max() >= self.n_samples):
                raise MaskedDataError("sample row id out of range")
            if seen[g.rows].any():
                raise MaskedDataError("sample row id repeated across groups")
            seen[g.rows] = True
        if not seen.all():
            raise MaskedDataError("some sample rows are missing from all groups")

    # ------------------------------------------------------------------
    # constructors

    @classmethod
    def from_rows(
        cls,
        rows: Iterable[tuple[Sequence[int], Sequence[float]]],
        n_vars: int,
        var_names: Optional[Sequence[str]] = None,
    ) -> "MaskedDataset":
        """Build from per-sample (observed indices, values) pairs."""
        buckets: dict[tuple[int, ...], tuple[list[int], list[np.ndarray]]] = {}
        count = 0
        for i, (idx, vals) in enumerate(rows):
            idx = np.asarray(idx, dtype=np.int64)
            vals = np.asarray(vals, dtype=np.float64)
            if idx.size != vals.size:
                raise MaskedDataError(f"sample {i}: {idx.size} indices but {vals.size} values")
            order = np.argsort(idx, kind="stable")
            idx, vals = idx[order], vals[order]
            key = tuple(int(j) for j in idx)
            rlist, vlist = buckets.setdefault(key, ([], []))
            rlist.append(i)
            vlist.append(vals)
            count += 1
        groups = [
            MaskGroup(
                indices=np.asarray(key, dtype=np.int64),
                rows=np.asarray(rlist, dtype=np.int64),
                values=np.vstack(vlist) if vlist else np.zeros((0, len(key))),
            )
            for key, (rlist, vlist) in buckets.items()
        ]
        return cls(groups, n_samples=count, n_vars=n_vars, var_names=var_names)

    @classmethod
    def from_full(cls, X: np.ndarray, var_names: Optional[Sequence[str]] = None) -> "MaskedDataset":
        """Fully observed matrix: every sample observes all columns."""
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape
        g = MaskGroup(np.arange(p, dtype=np.int64), np.arange(n, dtype=np.int64), X.copy())
        return cls([g], n_samples=n, n_vars=p, var_names=var_names)

    @classmethod
    def from_nan_matrix(cls, X: np.ndarray, var_names: Optional[Sequence[str]] = None) -> "MaskedDataset":
        """Build from an n x p matrix where NaN marks an unobserved cell."""
        X = np.asarray(X, dtype=np.float64)
        obs = np.isfinite(X)
        return cls.from_rows(
            ((np.nonzero(obs[i])[0], X[i, obs[i]]) for i in range(X.shape[0])),
            n_vars=X.shape[1],
            var_names=var_names,
        )

    # ------------------------------------------------------------------
    # accessors

    def iter_samples(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (observed indices, values) per sample, in sample order."""
        slots: list[Optional[tuple[np.ndarray, np.ndarray]]] = [None] * self.n_samples
        for g in self.groups:
            for r, row in zip(g.rows, g.values):
                slots[int(r)] = (g.indices, row)
        for s in slots:
            assert s is not None
            yield s

    def to_nan_matrix(self) -> np.ndarray:
        X = np.full((self.n_samples, self.n_vars), np.nan)
        for g in self.groups:
            X[np.ix_(g.rows, g.indices)] = g.values
        return X

    def subsample(self, keep: np.ndarray) -> "MaskedDataset":
        """Restrict to samples where ``keep`` is True (rows renumbered)."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.n_samples,):
            raise MaskedDataError("keep mask must have one entry per sample")
        new_id = np.cumsum(keep) - 1
        groups = []
        for g in self.groups:
            sel = keep[g.rows]
            if not sel.any():
                continue
            groups.append(MaskGroup(g.indices, new_id[g.rows[sel]], g.values[sel]))
        return MaskedDataset(
            groups, n_samples=int(keep.sum()), n_vars=self.n_vars,
            var_names=self.var_names, validate=False,
        )

    def write_masked_csv(self, path) -> None:
        """Export in the masked-CSV format read by :func:`load_masked_csv`."""
        names = self.var_names or [f"v{j}" for j in range(self.n_vars)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for idx, vals in self.iter_samples():
                row = [""] * self.n_vars
                for j, v in zip(idx, vals):
                    row[int(j)] = repr(float(v))
                w.writerow(row)


@dataclass(frozen=True)
class PairCounts:
    """Symmetric p x p matrix of joint-observation counts.

    ``counts[j, k]`` is the number of samples observing both j and k; the
    diagonal counts samples observing each single variable.
    """

    counts: np.ndarray
    n_samples: int

    def __post_init__(self):
        c = self.counts
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise MaskedDataError("counts must be square")
        if (c != c.T).any():
            raise MaskedDataError("counts must be symmetric")
        if (c < 0).any() or (c > self.n_samples).any():
            raise MaskedDataError("counts out of range")

    @property
    def n_vars(self) -> int:
        return self.counts.shape[0]


def pairwise_counts(data: MaskedDataset) -> PairCounts:
    """Count joint observations for every variable pair.

    ``counts[j, k] = |{i : j, k in V_i}|``, accumulated blockwise over mask
    groups (exact integer arithmetic).
    """
    p = data.n_vars
    counts = np.zeros((p, p), dtype=np.int64)
    for g in data.groups:
        if g.indices.size:
            counts[np.ix_(g.indices, g.indices)] += g.rows.size
    return PairCounts(counts=counts, n_samples=data.n_samples)


class ObservationIndex:
    """Per-variable observation sets packed as bit-vectors.

    Pairwise and quadruple joint counts are popcounts of 2-way and 4-way
    intersections, O(n_samples / 8) bytes each.  Quadruple counts are served
    through a bounded LRU cache and are never materialised as a p^4 array.
    Immutable after construction; the cache is safe for concurrent readers.
    """

    def __init__(self, data: MaskedDataset, quad_cache_size: int = 1 << 18):
        self.n_samples = data.n_samples
        self.n_vars = data.n_vars
        nbytes = (data.n_samples + 7) // 8
        self._bits = np.zeros((data.n_vars, max(nbytes, 1)), dtype=np.uint8)
        flags = np.zeros(data.n_samples, dtype=bool)
        per_var_rows: dict[int, list[np.ndarray]] = {}
        for g in data.groups:
            for j in g.indices:
                per_var_rows.setdefault(int(j), []).append(g.rows)
        for j, row_chunks in per_var_rows.items():
            flags[:] = False
            for rows in row_chunks:
                flags[rows] = True
            self._bits[j] = np.packbits(flags, bitorder="little")
        self._quad_cached = lru_cache(maxsize=quad_cache_size)(self._quad_uncached)

    def observation_count(self, j: int) -> int:
        return int(np.bitwise_count(self._bits[j]).sum())

    def pair_count(self, j: int, k: int) -> int:
        return int(np.bitwise_count(self._bits[j] & self._bits[k]).sum())

    def pairwise_counts(self) -> PairCounts:
        p = self.n_vars
        counts = np.zeros((p, p), dtype=np.int64)
        for j in range(p):
            counts[j, j] = self.observation_count(j)
            for k in range(j + 1, p):
                counts[j, k] = counts[k, j] = self.pair_count(j, k)
        return PairCounts(counts=counts, n_samples=self.n_samples)

    def joint_bits(self, indices: Sequence[int]) -> np.ndarray:
        """Packed bit-vector of samples observing every listed variable."""
        out = self._bits[int(indices[0])].copy()
        for j in indices[1:]:
            out &= self._bits[int(j)]
        return out

    def _quad_uncached(self, key: tuple[int, ...]) -> int:
        return int(np.bitwise_count(self.joint_bits(key)).sum())

    def quad_count(self, j: int, k: int, j2: int, k2: int) -> int:
        """Number of samples observing all of j, k, j2, k2.

        Invariant under permutations of the arguments; repeated indices
        collapse, so quad_count(j, k, j, k) equals the pairwise count.
        """
        for i in (j, k, j2, k2):
            if not (0 <= i < self.n_vars):
                raise IndexError(f"variable index {i} out of range [0, {self.n_vars})")
        key = tuple(sorted(set((int(j), int(k), int(j2), int(k2)))))
        return self._quad_cached(key)


def quad_count(idx: ObservationIndex, j: int, k: int, j2: int, k2: int) -> int:
    """Joint observation count of four variables (see ObservationIndex.quad_count)."""
    return idx.quad_count(j, k, j2, k2)


def load_masked_csv(path) -> MaskedDataset:
    """Read a masked dataset from CSV.

    The first row holds variable names; each following row is one sample.
    Empty cells and any case variant of "nan" are missing.  Ragged rows and
    non-numeric cells raise :class:`MaskedDataError` with the offending
    row/column location (1-based, counting the header as row 1).
    """
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MaskedDataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if len(header) == 0 or all(h == "" for h in header):
            raise MaskedDataError(f"{path}: header row defines zero columns")
        p = len(header)
        rows: list[tuple[np.ndarray, np.ndarray]] = []
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != p:
                raise MaskedDataError(
                    f"{path}: row {lineno} has {len(cells)} cells, expected {p}"
                )
            idx, vals = [], []
            for col, cell in enumerate(cells):
                if _is_missing(cell):
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise MaskedDataError(
                        f"{path}: row {lineno}, column {col + 1} ({header[col]}): "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                idx.append(col)
                vals.append(v)
            rows.append((np.asarray(idx, dtype=np.int64), np.asarray(vals)))
    return MaskedDataset.from_rows(rows, n_vars=p, var_names=header)
