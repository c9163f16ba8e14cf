"""Independent reference computations used by several test modules."""
import numpy as np
from scipy.special import logsumexp

from hypermsg import codes


def brute_force_posterior_llr(H, llr):
    """log P(bit_v = 0 | y) / P(bit_v = 1 | y) by summing over every codeword."""
    words = codes.enumerate_codewords(H).astype(float)
    llr = np.atleast_2d(llr)
    # log-likelihood of each codeword up to a constant: sum_i l_i (1 - 2 c_i) / 2
    scores = llr @ (1.0 - 2.0 * words).T / 2.0
    out = np.empty_like(llr)
    for v in range(words.shape[1]):
        zero = words[:, v] == 0
        out[:, v] = logsumexp(scores[:, zero], axis=1) - logsumexp(scores[:, ~zero], axis=1)
    return out


def ml_codeword(H, llr):
    words = codes.enumerate_codewords(H)
    scores = (1.0 - 2.0 * words) @ np.asarray(llr, dtype=float)
    return words[int(np.argmax(scores))]


def is_cycle_free(H) -> bool:
    """A bipartite graph is a forest iff edges = nodes - components."""
    h = np.asarray(H.entries if hasattr(H, "entries") else H)
    m, n = h.shape
    parent = list(range(m + n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for c, v in zip(*np.nonzero(h)):
        a, b = find(c), find(m + v)
        if a == b:
            return False
        parent[a] = b
    return True


def random_tree_code(num_checks: int, rng) -> np.ndarray:
    """Parity-check matrix with a cycle-free Tanner graph and check degrees >= 2.

    Every new check attaches to one existing variable plus one to three new ones.
    """
    rows = []
    n = 1
    for _ in range(num_checks):
        anchor = int(rng.integers(n))
        fresh = int(rng.integers(1, 4))
        rows.append([anchor] + list(range(n, n + fresh)))
        n += fresh
    h = np.zeros((num_checks, n), dtype=np.uint8)
    for i, cols in enumerate(rows):
        h[i, cols] = 1
    return h


TREE_CODES = {
    "repetition-3": [[1, 1, 0], [0, 1, 1]],
    "single-parity-5": [[1, 1, 1, 1, 1]],
    "chain-6": [[1, 1, 0, 0, 0, 0], [0, 1, 1, 0, 0, 0], [0, 0, 1, 1, 0, 0],
                [0, 0, 0, 1, 1, 0], [0, 0, 0, 0, 1, 1]],
    "star-7": [[1, 1, 1, 0, 0, 0, 0], [1, 0, 0, 1, 1, 0, 0], [1, 0, 0, 0, 0, 1, 1]],
    "two-level-9": [[1, 1, 1, 0, 0, 0, 0, 0, 0], [0, 1, 0, 1, 1, 0, 0, 0, 0],
                    [0, 0, 1, 0, 0, 1, 1, 0, 0], [0, 0, 0, 0, 1, 0, 0, 1, 1]],
    "caterpillar-12": [[1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0], [0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0],
                       [0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0],
                       [0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1]],
}


def tree_depth_iterations(H) -> int:
    """Enough flooding iterations for messages to cross any cycle-free graph."""
    m, n = np.asarray(H.entries if hasattr(H, "entries") else H).shape
    return m + n
