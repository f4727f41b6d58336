"""Snapshot series, parameter indexing and file I/O.

Nodes are 0-based everywhere in memory and 1-based in files.  Pairs are
enumerated in ``np.triu_indices(p, 1)`` order; that ordering is shared by
every module that stores per-pair arrays.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SeriesFormatError",
    "SnapshotSeries",
    "ParameterIndex",
    "ParameterSet",
    "KERNEL_IDS",
    "normalize_kernel_id",
    "build_index",
    "load_series",
    "save_series",
    "pair_arrays",
]

# global parameter names per kernel, in parameter-vector order
GLOBAL_NAMES: dict[str, tuple[str, ...]] = {
    "degree_het": ("a0", "a1", "b0", "b1"),
    "persistence": ("a", "b"),
    "transitivity": ("a", "b"),
    "transitivity_ext": ("a1", "b1", "a2", "b2"),
    "global_ar": ("alpha", "beta"),
    "edgewise_ar": (),
}
KERNEL_IDS = tuple(GLOBAL_NAMES)
_NODE_KERNELS = ("degree_het", "persistence", "transitivity", "transitivity_ext")


class SeriesFormatError(ValueError):
    """Raised when a series file cannot be parsed.

    ``kind`` is one of ``"parse"``, ``"dimension"``, ``"value"`` or ``"index"``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind} error: {message}")
        self.kind = kind


def normalize_kernel_id(kernel_id: str) -> str:
    key = str(kernel_id).strip().lower().replace("-", "_")
    aliases = {"degree": "degree_het", "transitivity_ar": "transitivity"}
    key = aliases.get(key, key)
    if key not in GLOBAL_NAMES:
        raise ValueError(f"unknown kernel id {kernel_id!r}; expected one of {', '.join(KERNEL_IDS)}")
    return key


def pair_arrays(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the unordered pairs ``i < j``."""
    return np.triu_indices(p, 1)


@dataclass(frozen=True)
class SnapshotSeries:
    """An ordered sequence of symmetric 0/1 adjacency matrices.

    ``data`` has shape ``(n, p, p)``.  The array is copied on construction and
    marked read-only, so a series can be shared freely.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise ValueError(f"expected an (n, p, p) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 2:
            raise ValueError("a series needs at least one snapshot and two nodes")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        arr = arr.astype(np.uint8, copy=True)
        if np.any(np.diagonal(arr, axis1=1, axis2=2)):
            raise ValueError("self-loops are not allowed")
        if not np.array_equal(arr, arr.transpose(0, 2, 1)):
            raise ValueError("adjacency matrices must be symmetric")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_upper(cls, upper: np.ndarray, p: int) -> "SnapshotSeries":
        """Build from an ``(n, p*(p-1)/2)`` array of pair indicators."""
        upper = np.asarray(upper)
        rows, cols = pair_arrays(p)
        data = np.zeros((upper.shape[0], p, p), dtype=np.uint8)
        data[:, rows, cols] = upper
        data[:, cols, rows] = upper
        return cls(data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, t):
        if isinstance(t, slice):
            return SnapshotSeries(self.data[t])
        return self.data[t]

    def upper(self) -> np.ndarray:
        """Pair indicators, shape ``(n, p*(p-1)/2)``."""
        rows, cols = pair_arrays(self.p)
        return self.data[:, rows, cols]

    def __eq__(self, other):
        if not isinstance(other, SnapshotSeries):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True)
class ParameterIndex:
    """Which parameters enter which edge transitions.

    ``edge_scope[k]`` lists the parameter indices involved in pair ``k`` in the
    kernel's local column order (globals first, then ``xi_i, xi_j, eta_i,
    eta_j`` for node kernels).  ``param_scope[l]`` lists the pairs whose
    transition involves parameter ``l``.
    """

    kernel_id: str
    p: int
    names: tuple[str, ...]
    global_set: np.ndarray
    edge_scope: np.ndarray
    param_scope: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def q(self) -> int:
        return len(self.names)

    @property
    def n_pairs(self) -> int:
        return self.p * (self.p - 1) // 2

    def is_global(self, l: int) -> bool:
        return bool(np.isin(l, self.global_set))

    def scope_size(self, l: int) -> int:
        return len(self.param_scope[l])

    def position(self, name: str) -> int:
        return self.names.index(name)


def build_index(kernel_id: str, p: int) -> ParameterIndex:
    """Parameter layout and index sets for a built-in kernel on ``p`` nodes."""
    kernel_id = normalize_kernel_id(kernel_id)
    p = int(p)
    if p < 3:
        raise ValueError("p must be at least 3")
    if kernel_id == "degree_het" and p < 4:
        raise ValueError("the degree heterogeneity kernel needs p >= 4")
    rows, cols = pair_arrays(p)
    n_pairs = len(rows)
    all_pairs = np.arange(n_pairs)

    if kernel_id in _NODE_KERNELS:
        gnames = GLOBAL_NAMES[kernel_id]
        n_glob = len(gnames)
        names = gnames + tuple(f"xi_{i + 1}" for i in range(p)) + tuple(f"eta_{i + 1}" for i in range(p))
        scope = np.empty((n_pairs, n_glob + 4), dtype=np.intp)
        scope[:, :n_glob] = np.arange(n_glob)
        scope[:, n_glob] = n_glob + rows
        scope[:, n_glob + 1] = n_glob + cols
        scope[:, n_glob + 2] = n_glob + p + rows
        scope[:, n_glob + 3] = n_glob + p + cols
        incident = [np.flatnonzero((rows == i) | (cols == i)) for i in range(p)]
        param_scope = tuple([all_pairs] * n_glob + incident + incident)
        global_set = np.arange(n_glob)
    elif kernel_id == "global_ar":
        names = ("alpha", "beta")
        scope = np.tile(np.array([0, 1], dtype=np.intp), (n_pairs, 1))
        param_scope = (all_pairs, all_pairs)
        global_set = np.arange(2)
    else:  # edgewise_ar
        names = tuple(f"alpha_{i + 1}_{j + 1}" for i, j in zip(rows, cols)) + tuple(
            f"beta_{i + 1}_{j + 1}" for i, j in zip(rows, cols)
        )
        scope = np.stack([all_pairs, n_pairs + all_pairs], axis=1).astype(np.intp)
        singles = tuple(np.array([k]) for k in range(n_pairs))
        param_scope = singles + singles
        global_set = np.arange(0)

    for arr in (scope, global_set, *param_scope):
        arr.setflags(write=False)
    return ParameterIndex(kernel_id, p, names, global_set, scope, param_scope)


@dataclass(frozen=True)
class ParameterSet:
    """A parameter vector together with its layout."""

    values: np.ndarray
    index: ParameterIndex

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.index.q,):
            raise ValueError(f"expected {self.index.q} parameter values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("parameter values must be finite")
        if np.any(vals < 0):
            raise ValueError("parameters of the built-in kernels are non-negative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_blocks(cls, kernel_id: str, p: int, globals_: dict | None = None, xi=None, eta=None,
                    alpha=None, beta=None) -> "ParameterSet":
        """Assemble from named blocks.  Scalars broadcast over nodes or pairs."""
        index = build_index(kernel_id, p)
        kid = index.kernel_id
        vals = np.zeros(index.q)
        globals_ = dict(globals_ or {})
        if kid == "edgewise_ar":
            n_pairs = index.n_pairs
            vals[:n_pairs] = np.broadcast_to(np.asarray(alpha, dtype=float), (n_pairs,))
            vals[n_pairs:] = np.broadcast_to(np.asarray(beta, dtype=float), (n_pairs,))
            return cls(vals, index)
        gnames = GLOBAL_NAMES[kid]
        if kid == "global_ar":
            globals_.setdefault("alpha", alpha)
            globals_.setdefault("beta", beta)
        missing = [g for g in gnames if globals_.get(g) is None]
        extra = set(globals_) - set(gnames)
        if missing or {k for k in extra if globals_[k] is not None}:
            raise ValueError(f"{kid} needs globals {gnames}; missing {missing}, unexpected {sorted(extra)}")
        for k, g in enumerate(gnames):
            vals[k] = float(globals_[g])
        if kid in _NODE_KERNELS:
            ng = len(gnames)
            vals[ng:ng + p] = np.broadcast_to(np.asarray(xi, dtype=float), (p,))
            vals[ng + p:] = np.broadcast_to(np.asarray(eta, dtype=float), (p,))
        return cls(vals, index)

    @property
    def kernel_id(self) -> str:
        return self.index.kernel_id

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.index.position(name)])

    @property
    def globals(self) -> dict[str, float]:
        return {self.index.names[l]: float(self.values[l]) for l in self.index.global_set}

    @property
    def xi(self) -> np.ndarray:
        ng = len(self.index.global_set)
        return self.values[ng:ng + self.index.p]

    @property
    def eta(self) -> np.ndarray:
        ng = len(self.index.global_set)
        return self.values[ng + self.index.p:ng + 2 * self.index.p]

    def replace(self, values) -> "ParameterSet":
        return ParameterSet(values, self.index)

    def to_dict(self) -> dict:
        out = {"kernel": self.kernel_id, "p": self.index.p, "globals": self.globals}
        if self.kernel_id in _NODE_KERNELS:
            out["xi"] = self.xi.tolist()
            out["eta"] = self.eta.tolist()
        elif self.kernel_id == "edgewise_ar":
            out["values"] = self.values.tolist()
        return out


# ---------------------------------------------------------------- file I/O

_HEADER = re.compile(r"^\s*#?\s*p\s*=\s*(\d+)\s+n\s*=\s*(\d+)\s*$")


def _parse_header(line: str, lineno: int) -> tuple[int, int]:
    m = _HEADER.match(line)
    if not m:
        raise SeriesFormatError("parse", f"line {lineno}: expected header 'p=<int> n=<int>', got {line.strip()!r}")
    return int(m.group(1)), int(m.group(2))


def _load_matrix_text(lines: list[str]) -> SnapshotSeries:
    if not lines:
        raise SeriesFormatError("parse", "empty file")
    p, n = _parse_header(lines[0], 1)
    rows: list[list[str]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != p:
            raise SeriesFormatError("dimension", f"line {lineno}: expected {p} entries, got {len(tokens)}")
        for tok in tokens:
            if tok not in ("0", "1"):
                raise SeriesFormatError("value", f"line {lineno}: entry {tok!r} is not 0 or 1")
        rows.append(tokens)
    if len(rows) != n * p:
        raise SeriesFormatError("dimension", f"expected {n * p} matrix rows for p={p}, n={n}, got {len(rows)}")
    data = np.array(rows, dtype=np.uint8).reshape(n, p, p)
    return _symmetrize(data)


def _symmetrize(data: np.ndarray) -> SnapshotSeries:
    upper = np.triu(data, 1)
    return SnapshotSeries(upper | upper.transpose(0, 2, 1))


def _load_edge_csv(lines: list[str]) -> SnapshotSeries:
    header = None
    body: list[tuple[int, str]] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.lstrip().startswith("#"):
            if header is None and _HEADER.match(line):
                header = _parse_header(line, lineno)
            continue
        body.append((lineno, line))
    if header is None:
        raise SeriesFormatError("parse", "missing '# p=<int> n=<int>' comment line")
    p, n = header
    if not body or [c.strip() for c in body[0][1].split(",")] != ["t", "i", "j"]:
        raise SeriesFormatError("parse", "missing 't,i,j' header row")
    data = np.zeros((n, p, p), dtype=np.uint8)
    linenos = [ln for ln, _ in body[1:]]
    for lineno, row in zip(linenos, csv.reader(text for _, text in body[1:])):
        if len(row) != 3:
            raise SeriesFormatError("parse", f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            t, i, j = (int(x) for x in row)
        except ValueError:
            raise SeriesFormatError("parse", f"line {lineno}: non-integer field in {row!r}") from None
        if not 1 <= t <= n:
            raise SeriesFormatError("index", f"line {lineno}: t={t} outside [1, {n}]")
        if not (1 <= i <= p and 1 <= j <= p):
            raise SeriesFormatError("index", f"line {lineno}: node id outside [1, {p}]")
        if i == j:
            raise SeriesFormatError("index", f"line {lineno}: self-loop ({i}, {j})")
        data[t - 1, i - 1, j - 1] = data[t - 1, j - 1, i - 1] = 1
    return SnapshotSeries(data)


def _sniff_format(path: Path) -> str:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                return "edge-csv" if line.lstrip().startswith("#") else "matrix-text"
    return "matrix-text"


def load_series(path, format: str | None = None) -> SnapshotSeries:
    """Read a series written in ``matrix-text`` or ``edge-csv`` format.

    With ``format=None`` the format is inferred from the first non-blank line.
    """
    path = Path(path)
    fmt = format or _sniff_format(path)
    lines = path.read_text().splitlines()
    if fmt == "matrix-text":
        return _load_matrix_text(lines)
    if fmt == "edge-csv":
        return _load_edge_csv(lines)
    raise ValueError(f"unknown series format {fmt!r}")


def save_series(series: SnapshotSeries, path, format: str = "matrix-text") -> None:
    path = Path(path)
    p, n = series.p, series.n
    if format == "matrix-text":
        blocks = []
        for snap in series.data:
            blocks.append("\n".join(" ".join(str(v) for v in row) for row in snap))
        text = f"p={p} n={n}\n" + "\n\n".join(blocks) + "\n"
    elif format == "edge-csv":
        out = [f"# p={p} n={n}", "t,i,j"]
        rows, cols = pair_arrays(p)
        for t, snap in enumerate(series.data, start=1):
            present = snap[rows, cols].astype(bool)
            out.extend(f"{t},{i + 1},{j + 1}" for i, j in zip(rows[present], cols[present]))
        text = "\n".join(out) + "\n"
    else:
        raise ValueError(f"unknown series format {format!r}")
    path.write_text(text)
