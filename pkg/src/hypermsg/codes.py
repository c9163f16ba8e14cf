"""Parity-check matrices over GF(2): alist I/O, syndromes, codeword enumeration."""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

MAX_ENUMERATE_N = 24


class ParseError(ValueError):
    """Malformed parity-check matrix text. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def gf2_rank(matrix: np.ndarray) -> int:
    """Rank over GF(2) by Gaussian elimination."""
    a = np.array(matrix, dtype=np.uint8) & 1
    rows, cols = a.shape
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        pivots = np.nonzero(a[rank:, col])[0]
        if pivots.size == 0:
            continue
        pivot = rank + pivots[0]
        if pivot != rank:
            a[[rank, pivot]] = a[[pivot, rank]]
        hits = np.nonzero(a[:, col])[0]
        hits = hits[hits != rank]
        a[hits] ^= a[rank]
        rank += 1
    return rank


def gf2_nullspace(matrix: np.ndarray) -> np.ndarray:
    """Basis of {v : H v = 0} as rows of a (k, n) uint8 array."""
    a = np.array(matrix, dtype=np.uint8) & 1
    rows, cols = a.shape
    pivot_cols = []
    r = 0
    for col in range(cols):
        if r == rows:
            break
        pivots = np.nonzero(a[r:, col])[0]
        if pivots.size == 0:
            continue
        p = r + pivots[0]
        if p != r:
            a[[r, p]] = a[[p, r]]
        hits = np.nonzero(a[:, col])[0]
        hits = hits[hits != r]
        a[hits] ^= a[r]
        pivot_cols.append(col)
        r += 1
    free = [c for c in range(cols) if c not in set(pivot_cols)]
    basis = np.zeros((len(free), cols), dtype=np.uint8)
    for i, fc in enumerate(free):
        basis[i, fc] = 1
        for row, pc in enumerate(pivot_cols):
            basis[i, pc] = a[row, fc]
    return basis


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Binary m x n parity-check matrix of a linear block code.

    The dimension k is always derived from the GF(2) rank; rows beyond the
    rank (overcomplete matrices) are kept and used by the decoders.
    """

    entries: np.ndarray
    name: str = ""
    rank: int = field(init=False)

    def __post_init__(self):
        h = np.array(self.entries)
        if h.ndim != 2 or h.size == 0:
            raise ValueError("parity-check matrix must be a non-empty 2-D array")
        if not np.all((h == 0) | (h == 1)):
            raise ValueError("parity-check entries must be 0 or 1")
        h = h.astype(np.uint8)
        if np.any(h.sum(axis=1) == 0):
            raise ValueError(f"row {int(np.argmin(h.sum(axis=1)))} of H is empty")
        if np.any(h.sum(axis=0) == 0):
            raise ValueError(f"column {int(np.argmin(h.sum(axis=0)))} of H is empty")
        h.setflags(write=False)
        object.__setattr__(self, "entries", h)
        rank = gf2_rank(h)
        if rank >= h.shape[1]:
            raise ValueError("H has full column rank: the code is {0}, rate is not in (0,1)")
        object.__setattr__(self, "rank", rank)

    @property
    def num_checks(self) -> int:
        return self.entries.shape[0]

    @property
    def num_vars(self) -> int:
        return self.entries.shape[1]

    @property
    def k(self) -> int:
        return self.num_vars - self.rank

    @property
    def code_rate(self) -> Fraction:
        return Fraction(self.k, self.num_vars)

    def __eq__(self, other):
        if not isinstance(other, ParityCheckMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash((self.entries.shape, self.entries.tobytes()))

    def __repr__(self):
        return f"ParityCheckMatrix({self.name!r}, m={self.num_checks}, n={self.num_vars}, k={self.k})"


def _as_matrix(H) -> np.ndarray:
    return H.entries if isinstance(H, ParityCheckMatrix) else np.asarray(H, dtype=np.uint8)


def syndrome(H, v) -> np.ndarray:
    """H v^T over GF(2). ``v`` may be a single word or a (batch, n) array."""
    h = _as_matrix(H)
    v = np.asarray(v)
    if v.shape[-1] != h.shape[1]:
        raise ValueError(f"word length {v.shape[-1]} does not match n={h.shape[1]}")
    return ((v.astype(np.int64) @ h.T.astype(np.int64)) & 1).astype(np.uint8)


def enumerate_codewords(H) -> np.ndarray:
    """All codewords as a (2^k, n) uint8 array, in lexicographic order.

    Refuses codes with n > 24.
    """
    h = _as_matrix(H)
    n = h.shape[1]
    if n > MAX_ENUMERATE_N:
        raise ValueError(f"refusing to enumerate codewords for n={n} > {MAX_ENUMERATE_N}")
    basis = gf2_nullspace(h)
    k = basis.shape[0]
    coeffs = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int64).reshape(2**k, k)
    words = (coeffs @ basis.astype(np.int64)) & 1
    words = words.astype(np.uint8)
    order = np.lexsort(words.T[::-1])
    return words[order]


# --- alist / dense text I/O -------------------------------------------------

def _int_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            yield lineno, [int(tok) for tok in stripped.split()]
        except ValueError:
            raise ParseError(f"non-integer token in {stripped!r}", lineno) from None


def parse_alist(text: str, name: str = "") -> ParityCheckMatrix:
    """Parse MacKay's alist format. Zero padding entries are skipped."""
    lines = list(_int_lines(text))

    def take(idx, what):
        if idx >= len(lines):
            last = lines[-1][0] if lines else 0
            raise ParseError(f"unexpected end of input while reading {what}", last + 1)
        return lines[idx]

    ln, head = take(0, "header")
    if len(head) != 2 or min(head) <= 0:
        raise ParseError("expected 'n m' with positive integers", ln)
    n, m = head
    ln, maxdeg = take(1, "maximum degrees")
    if len(maxdeg) != 2:
        raise ParseError("expected 'max_col_degree max_row_degree'", ln)
    max_col, max_row = maxdeg
    ln, col_deg = take(2, "column degrees")
    if len(col_deg) != n:
        raise ParseError(f"expected {n} column degrees, got {len(col_deg)}", ln)
    ln_rd, row_deg = take(3, "row degrees")
    if len(row_deg) != m:
        raise ParseError(f"expected {m} row degrees, got {len(row_deg)}", ln_rd)
    if max(col_deg) != max_col or max(row_deg) != max_row:
        raise ParseError("maximum degrees disagree with degree lists", lines[1][0])

    h = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        ln, idx = take(4 + j, f"column {j + 1} list")
        ones = [i for i in idx if i != 0]
        if any(i < 0 or i > m for i in ones):
            raise ParseError(f"row index out of range 1..{m} in column {j + 1}", ln)
        if len(ones) != col_deg[j] or len(set(ones)) != len(ones):
            raise ParseError(
                f"column {j + 1} lists {len(ones)} rows, degree line says {col_deg[j]}", ln)
        for i in ones:
            h[i - 1, j] = 1
    for i in range(m):
        ln, idx = take(4 + n + i, f"row {i + 1} list")
        ones = [j for j in idx if j != 0]
        if any(j < 0 or j > n for j in ones):
            raise ParseError(f"column index out of range 1..{n} in row {i + 1}", ln)
        if len(ones) != row_deg[i] or len(set(ones)) != len(ones):
            raise ParseError(
                f"row {i + 1} lists {len(ones)} columns, degree line says {row_deg[i]}", ln)
        expected = set(np.nonzero(h[i])[0] + 1)
        if set(ones) != expected:
            raise ParseError(f"row {i + 1} disagrees with the column lists", ln)
    if len(lines) > 4 + n + m:
        raise ParseError("trailing data after row lists", lines[4 + n + m][0])
    return ParityCheckMatrix(h, name=name)


def to_alist(H, pad: bool = True) -> str:
    """Serialize to alist text; ``pad`` zero-fills lists to the maximum degree."""
    h = _as_matrix(H)
    m, n = h.shape
    col_deg = h.sum(axis=0)
    row_deg = h.sum(axis=1)
    max_col, max_row = int(col_deg.max()), int(row_deg.max())
    out = [f"{n} {m}", f"{max_col} {max_row}",
           " ".join(str(int(d)) for d in col_deg),
           " ".join(str(int(d)) for d in row_deg)]
    for j in range(n):
        idx = [int(i) + 1 for i in np.nonzero(h[:, j])[0]]
        if pad:
            idx += [0] * (max_col - len(idx))
        out.append(" ".join(map(str, idx)))
    for i in range(m):
        idx = [int(j) + 1 for j in np.nonzero(h[i])[0]]
        if pad:
            idx += [0] * (max_row - len(idx))
        out.append(" ".join(map(str, idx)))
    return "\n".join(out) + "\n"


def normalize_whitespace(text: str) -> str:
    lines = (re.sub(r"\s+", " ", line).strip() for line in text.splitlines())
    return "\n".join(line for line in lines if line)


def parse_dense(text: str, name: str = "") -> ParityCheckMatrix:
    """Plain dense format: ``m n`` header, then m rows of 0/1 entries."""
    lines = list(_int_lines(text))
    if not lines:
        raise ParseError("empty input", 1)
    ln, head = lines[0]
    if len(head) != 2 or min(head) <= 0:
        raise ParseError("expected 'm n' header", ln)
    m, n = head
    if len(lines) - 1 != m:
        raise ParseError(f"expected {m} rows, got {len(lines) - 1}", ln)
    rows = []
    for ln, row in lines[1:]:
        if len(row) != n:
            raise ParseError(f"expected {n} entries, got {len(row)}", ln)
        if any(v not in (0, 1) for v in row):
            raise ParseError("entries must be 0 or 1", ln)
        rows.append(row)
    return ParityCheckMatrix(np.array(rows, dtype=np.uint8), name=name)


def to_dense(H) -> str:
    h = _as_matrix(H)
    body = "\n".join(" ".join(str(int(v)) for v in row) for row in h)
    return f"{h.shape[0]} {h.shape[1]}\n{body}\n"


def load_code(path, name: str | None = None) -> ParityCheckMatrix:
    """Load a code from an alist file, or a dense file (``.txt``/``.dense``)."""
    path = Path(path)
    text = path.read_text()
    name = name or path.stem
    if path.suffix in (".txt", ".dense"):
        return parse_dense(text, name=name)
    return parse_alist(text, name=name)


# --- bundled codes ------------------------------------------------------------

# key -> (alist resource, display label)
BUNDLED = {
    "repetition-3": ("repetition_3.alist", "Repetition (3,1)"),
    "hamming-7-4": ("hamming_7_4.alist", "Hamming (7,4)"),
    "bch-15-7": ("bch_15_7.alist", "BCH (15,7)"),
    "bch-31-16": ("bch_31_16.alist", "BCH (31,16)"),
    "bch-63-51": ("bch_63_51.alist", "BCH (63,51)"),
    "bch-63-51-cyclic": ("bch_63_51_cyclic.alist", "BCH (63,51), cyclic-shift H"),
    "bch-63-51-overcomplete": ("bch_63_51_overcomplete.alist", "BCH (63,51), 63-row overcomplete H"),
    "polar-64-48": ("polar_64_48.alist", "POLAR (64,48)"),
    "ldpc-array-121-80": ("ldpc_array_121_80.alist", "LDPC ARRAY (121,80)"),
}


def bundled_alist_text(key: str) -> str:
    try:
        fname, _ = BUNDLED[key]
    except KeyError:
        raise KeyError(f"unknown code {key!r}; bundled: {', '.join(BUNDLED)}") from None
    return resources.files("hypermsg.data.codes").joinpath(fname).read_text()


def get_code(ref: str) -> ParityCheckMatrix:
    """Resolve a bundled code key or a file path."""
    if ref in BUNDLED:
        return parse_alist(bundled_alist_text(ref), name=ref)
    path = Path(ref)
    if path.exists():
        return load_code(path)
    raise KeyError(f"unknown code {ref!r}; bundled: {', '.join(BUNDLED)}")
