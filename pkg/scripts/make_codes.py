"""Regenerate the bundled alist files under src/hypermsg/data/codes/.

    python scripts/make_codes.py
"""
import itertools
from pathlib import Path

import numpy as np

from hypermsg.codes import ParityCheckMatrix, gf2_rank, to_alist

OUT = Path(__file__).resolve().parents[1] / "src" / "hypermsg" / "data" / "codes"

PRIMITIVE = {4: 0b10011, 5: 0b100101, 6: 0b1000011}


def _gf_tables(m):
    poly = PRIMITIVE[m]
    size = (1 << m) - 1
    exp = [0] * (2 * size)
    x = 1
    for i in range(size):
        exp[i] = exp[i + size] = x
        x <<= 1
        if x >> m:
            x ^= poly
    log = {v: i for i, v in enumerate(exp[:size])}
    return exp, log, size


def _polymul_gf2(a, b):
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def _polydivmod_gf2(a, b):
    q = 0
    db = b.bit_length()
    while a.bit_length() >= db:
        shift = a.bit_length() - db
        q |= 1 << shift
        a ^= b << shift
    return q, a


def _minimal_poly(power, m):
    exp, log, size = _gf_tables(m)
    coset = sorted({(power << i) % size for i in range(m)})
    # product of (x + alpha^c) with coefficients in GF(2^m), as lists of field elements
    coeffs = [1]
    for c in coset:
        root = exp[c]
        nxt = [0] * (len(coeffs) + 1)
        for i, a in enumerate(coeffs):
            nxt[i + 1] ^= a
            if a:
                nxt[i] ^= exp[log[a] + log[root]]
        coeffs = nxt
    assert all(v in (0, 1) for v in coeffs)
    return sum(v << i for i, v in enumerate(coeffs)), tuple(coset)


def bch_parity_check(n, t):
    m = n.bit_length()
    assert (1 << m) - 1 == n
    g, seen = 1, set()
    for power in range(1, 2 * t + 1):
        mp, coset = _minimal_poly(power, m)
        if coset not in seen:
            seen.add(coset)
            g = _polymul_gf2(g, mp)
    h, rem = _polydivmod_gf2((1 << n) | 1, g)
    assert rem == 0
    k = h.bit_length() - 1
    hrev = [(h >> (k - i)) & 1 for i in range(k + 1)]
    rows = np.zeros((n - k, n), dtype=np.uint8)
    for i in range(n - k):
        rows[i, i:i + k + 1] = hrev
    return rows


def _dual_codewords(h):
    k = h.shape[0]
    coeffs = np.array(list(itertools.product((0, 1), repeat=k)), dtype=np.int64)
    return ((coeffs @ h.astype(np.int64)) & 1).astype(np.uint8)


def _four_cycles(h):
    overlap = h.astype(np.int64) @ h.T.astype(np.int64)
    np.fill_diagonal(overlap, 0)
    return int((overlap * (overlap - 1) // 2).sum() // 2)


def low_weight_basis(h, trials=3000, seed=0):
    """Basis of minimum-weight dual codewords with the fewest 4-cycles among random draws."""
    dual = _dual_codewords(h)
    weights = dual.sum(axis=1)
    low = dual[weights == weights[weights > 0].min()]
    rank = gf2_rank(h)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(trials):
        rows = []
        for i in rng.permutation(len(low)):
            if gf2_rank(np.array(rows + [low[i]])) > len(rows):
                rows.append(low[i])
            if len(rows) == rank:
                break
        if len(rows) < rank:
            continue
        cand = np.array(rows)
        score = _four_cycles(cand)
        if best is None or score < best[0]:
            best = (score, cand)
    return best[1]


def cyclic_overcomplete(h):
    """All n cyclic shifts of one minimum-weight dual codeword."""
    dual = _dual_codewords(h)
    weights = dual.sum(axis=1)
    row = dual[np.nonzero(weights == weights[weights > 0].min())[0][0]]
    return np.array([np.roll(row, i) for i in range(h.shape[1])])


def polar_parity_check(n_log, k, design_ebn0_db=0.0):
    n = 1 << n_log
    rate = k / n
    z0 = np.exp(-rate * 10 ** (design_ebn0_db / 10))

    def bhattacharyya(level, z):
        if level == 0:
            return [z]
        return bhattacharyya(level - 1, 2 * z - z * z) + bhattacharyya(level - 1, z * z)

    z = np.array(bhattacharyya(n_log, z0))
    frozen = np.sort(np.argsort(-z, kind="stable")[: n - k])
    g = np.array([[1]], dtype=np.uint8)
    for _ in range(n_log):
        g = np.kron(g, np.array([[1, 0], [1, 1]], dtype=np.uint8))
    return g[:, frozen].T.copy()


def array_ldpc_parity_check(p, j, k):
    eye = np.eye(p, dtype=np.uint8)
    blocks = [[np.roll(eye, (r * c) % p, axis=1) for c in range(k)] for r in range(j)]
    return np.block(blocks)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    hamming = np.array([[(c >> b) & 1 for c in range(1, 8)] for b in range(3)], dtype=np.uint8)
    codes = {
        "repetition_3": np.array([[1, 1, 0], [0, 1, 1]], dtype=np.uint8),
        "hamming_7_4": hamming,
        "bch_15_7": low_weight_basis(bch_parity_check(15, 2)),
        "bch_31_16": low_weight_basis(bch_parity_check(31, 3), trials=500),
        "bch_63_51": low_weight_basis(bch_parity_check(63, 2)),
        "bch_63_51_cyclic": bch_parity_check(63, 2),
        "bch_63_51_overcomplete": cyclic_overcomplete(bch_parity_check(63, 2)),
        "polar_64_48": polar_parity_check(6, 48),
        "ldpc_array_121_80": array_ldpc_parity_check(11, 4, 11),
    }
    for name, h in codes.items():
        code = ParityCheckMatrix(h, name=name)
        print(f"{name}: m={code.num_checks} n={code.num_vars} k={code.k} edges={int(h.sum())}")
        (OUT / f"{name}.alist").write_text(to_alist(code))


if __name__ == "__main__":
    main()
