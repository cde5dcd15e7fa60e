"""Louvain community detection on dense weighted graphs.

Deterministic by construction: nodes are visited in index order and the seed
only breaks ties among moves with equal modularity gain.  Weights must be
non-negative and symmetric; callers shift signed interaction scores before
clustering.  Undirected modularity with a resolution parameter:

    Q = sum_ij [W_ij - resolution * k_i * k_j / (2W)] * same(c_i, c_j) / (2W)

where 2W is the total ordered weight and k_i the row sum (self-loops, which
appear on aggregated graphs, count once in the row and once on the diagonal).
"""

import numpy as np

from .errors import ValidationError

_GAIN_TOL = 1e-12


def modularity(weights: np.ndarray, communities: list[list[int]],
               resolution: float = 1.0) -> float:
    """Modularity of a partition; the brute-force-checkable reference form."""
    w = np.asarray(weights, dtype=float)
    m2 = w.sum()
    if m2 <= 0:
        return 0.0
    k = w.sum(axis=1)
    q = 0.0
    for comm in communities:
        idx = np.asarray(comm)
        q += w[np.ix_(idx, idx)].sum() - resolution * k[idx].sum() ** 2 / m2
    return q / m2


def _one_level(w: np.ndarray, resolution: float, rng: np.random.Generator) -> np.ndarray:
    """Phase 1: greedy local moves until no node improves. Returns community labels."""
    n = w.shape[0]
    labels = np.arange(n)
    m2 = w.sum()
    k = w.sum(axis=1)
    sigma_tot = k.copy().astype(float)
    moved = True
    while moved:
        moved = False
        for i in range(n):
            current = labels[i]
            sigma_tot[current] -= k[i]
            # link weight from i into each candidate community (self excluded)
            neigh = np.nonzero(w[i])[0]
            links: dict[int, float] = {current: 0.0}
            for j in neigh:
                if j == i:
                    continue
                links[labels[j]] = links.get(labels[j], 0.0) + w[i, j]
            best_comms: list[int] = []
            best_gain = -np.inf
            for comm, l_ic in sorted(links.items()):
                gain = 2.0 * l_ic / m2 - 2.0 * resolution * k[i] * sigma_tot[comm] / (m2 * m2)
                if gain > best_gain + _GAIN_TOL:
                    best_gain = gain
                    best_comms = [comm]
                elif gain >= best_gain - _GAIN_TOL:
                    best_comms.append(comm)
            if current in best_comms:
                choice = current  # staying put always wins its ties
            elif len(best_comms) == 1:
                choice = best_comms[0]
            else:
                choice = best_comms[int(rng.integers(len(best_comms)))]
            sigma_tot[choice] += k[i]
            if choice != current:
                labels[i] = choice
                moved = True
    return labels


def _relabel(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Renumber communities 0..C-1 in order of their smallest member."""
    order: dict[int, int] = {}
    for lab in labels:
        if lab not in order:
            order[lab] = len(order)
    return np.array([order[lab] for lab in labels]), len(order)


def _aggregate(w: np.ndarray, labels: np.ndarray, num: int) -> np.ndarray:
    out = np.zeros((num, num))
    for a in range(num):
        ia = np.nonzero(labels == a)[0]
        for b in range(num):
            ib = np.nonzero(labels == b)[0]
            out[a, b] = w[np.ix_(ia, ib)].sum()
    return out


def louvain_communities(weights: np.ndarray, resolution: float = 1.0,
                        seed: int = 0) -> list[list[int]]:
    """Full Louvain: local moves plus graph aggregation, repeated to a fixed point.

    Returns communities as sorted index lists, ordered by smallest member.
    A graph with zero total weight yields all-singleton communities.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValidationError("weights must be a square matrix")
    if not np.allclose(w, w.T):
        raise ValidationError("weights must be symmetric")
    if np.any(w < 0):
        raise ValidationError("weights must be non-negative (shift signed scores first)")
    n = w.shape[0]
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    node_to_comm = np.arange(n)  # original node -> current community
    level_w = w.copy()
    if level_w.sum() <= 0:
        return [[i] for i in range(n)]
    while True:
        labels = _one_level(level_w, resolution, rng)
        labels, num = _relabel(labels)
        if num == level_w.shape[0]:
            break
        node_to_comm = labels[node_to_comm]
        level_w = _aggregate(level_w, labels, num)
    groups: dict[int, list[int]] = {}
    for node, comm in enumerate(node_to_comm):
        groups.setdefault(int(comm), []).append(node)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])
