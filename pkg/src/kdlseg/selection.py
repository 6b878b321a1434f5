"""Greedy correlation-based sample selection.

Each step scores every unselected candidate of the class being reduced:

    score = P_U - P_S - P_O

where P_U is the mean Pearson correlation to the other unselected vectors
of its own class (representativeness), P_S the mean correlation to the
already selected vectors (redundancy) and P_O the mean correlation to all
vectors of the other class (separation). The candidate with the highest
score wins; ties go to the lowest index.

Scores need only correlation row sums, never full correlation matrices, so
the incremental selector streams block-by-block and updates cached sums as
vectors are selected. ``select_samples_oracle`` recomputes everything from
scratch each step and exists to cross-check the incremental path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BLOCK_SIZE = 4096


def pearson(u, v):
    """Pearson correlation across the components of two vectors.

    Returns 0 when either vector has zero variance.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    if u.size < 2:
        raise ValueError("vectors must have at least 2 components")
    du = u - u.mean()
    dv = v - v.mean()
    su = np.sqrt((du**2).mean())
    sv = np.sqrt((dv**2).mean())
    if su == 0.0 or sv == 0.0:
        return 0.0
    return float((du * dv).mean() / (su * sv))


def standardize_rows(vectors):
    """Z-score each row (population std); zero-variance rows become zero."""
    vectors = np.asarray(vectors, dtype=np.float64)
    mean = vectors.mean(axis=1, keepdims=True)
    deltas = vectors - mean
    std = np.sqrt((deltas**2).mean(axis=1, keepdims=True))
    safe = np.where(std > 0.0, std, 1.0)
    return np.where(std > 0.0, deltas / safe, 0.0)


def correlation_matrix(vectors, others=None):
    """Pairwise Pearson coefficients; square within one class, rectangular
    between two. Zero-variance vectors correlate 0 with everything."""
    z = standardize_rows(vectors)
    zo = z if others is None else standardize_rows(others)
    return (z @ zo.T) / z.shape[1]


def score_candidate(i, selected, own_corr, cross_corr):
    """Definitional score of candidate ``i`` from full correlation matrices.

    ``selected`` holds the already chosen indices of the candidate's class;
    ``own_corr`` is its within-class matrix and ``cross_corr`` the
    rectangular matrix against the other class (rows = candidate class).
    """
    own_corr = np.asarray(own_corr)
    n_own = own_corr.shape[0]
    selected = list(selected)
    if i in selected:
        raise ValueError(f"candidate {i} is already selected")
    m = len(selected)

    others = np.ones(n_own, dtype=bool)
    others[selected] = False
    others[i] = False
    denominator = n_own - m - 1
    p_unselected = own_corr[i, others].sum() / denominator if denominator > 0 else 0.0
    p_selected = own_corr[i, selected].mean() if m > 0 else 0.0
    cross_corr = np.asarray(cross_corr)
    p_other = cross_corr[i].mean() if cross_corr.shape[1] > 0 else 0.0
    return p_unselected - p_selected - p_other


@dataclass
class SelectionState:
    """Cached row sums driving the incremental selector.

    own_total includes the candidate's self-correlation; sel_sum is the
    correlation sum to the currently selected set; other_mean is the fixed
    P_O term. candidate_mask is True where a vector is still unselected.
    """

    selected: list
    candidate_mask: np.ndarray
    own_total: np.ndarray
    self_corr: np.ndarray
    sel_sum: np.ndarray
    other_mean: np.ndarray


class GreedySelector:
    """Incremental greedy selection over one class of feature vectors."""

    def __init__(self, own_vectors, other_vectors, block_size=DEFAULT_BLOCK_SIZE):
        if block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {block_size}")
        own_vectors = np.asarray(own_vectors, dtype=np.float64)
        other_vectors = np.asarray(other_vectors, dtype=np.float64)
        if len(other_vectors) > 0 and other_vectors.shape[1] != own_vectors.shape[1]:
            raise ValueError(
                f"dimension mismatch: own {own_vectors.shape[1]} vs "
                f"other {other_vectors.shape[1]}"
            )
        self.block_size = int(block_size)
        self.dimension = own_vectors.shape[1]
        self.z_own = standardize_rows(own_vectors)

        n_own = len(own_vectors)
        self_corr = (self.z_own**2).sum(axis=1) / self.dimension
        own_total = self._matvec(self.z_own.sum(axis=0)) / self.dimension
        if len(other_vectors) > 0:
            z_other_sum = standardize_rows(other_vectors).sum(axis=0)
            other_mean = self._matvec(z_other_sum) / (
                self.dimension * len(other_vectors)
            )
        else:
            other_mean = np.zeros(n_own)

        self.state = SelectionState(
            selected=[],
            candidate_mask=np.ones(n_own, dtype=bool),
            own_total=own_total,
            self_corr=self_corr,
            sel_sum=np.zeros(n_own),
            other_mean=other_mean,
        )

    def _matvec(self, vector):
        """z_own @ vector computed in row blocks (bitwise block-size invariant)."""
        out = np.empty(len(self.z_own))
        for start in range(0, len(self.z_own), self.block_size):
            stop = start + self.block_size
            out[start:stop] = self.z_own[start:stop] @ vector
        return out

    def scores(self):
        """Current P_U - P_S - P_O for every candidate; selected -> -inf."""
        state = self.state
        n_own = len(state.candidate_mask)
        m = len(state.selected)
        denominator = n_own - m - 1
        if denominator > 0:
            p_unsel = (state.own_total - state.self_corr - state.sel_sum) / denominator
        else:
            p_unsel = np.zeros(n_own)
        p_sel = state.sel_sum / m if m > 0 else np.zeros(n_own)
        values = p_unsel - p_sel - state.other_mean
        values[~state.candidate_mask] = -np.inf
        return values

    def step(self):
        """Select the arg-max candidate (ties -> lowest index) and update sums."""
        state = self.state
        if not state.candidate_mask.any():
            raise ValueError("no candidates left to select")
        pick = int(np.argmax(self.scores()))
        state.selected.append(pick)
        state.candidate_mask[pick] = False
        state.sel_sum += self._matvec(self.z_own[pick]) / self.dimension
        return pick


def select_samples(own_vectors, other_vectors, n, block_size=DEFAULT_BLOCK_SIZE):
    """Greedily pick ``n`` indices from the own class, in selection order."""
    n_own = len(np.asarray(own_vectors))
    if not 1 <= n <= n_own:
        raise ValueError(f"n must be in [1, {n_own}], got {n}")
    selector = GreedySelector(own_vectors, other_vectors, block_size)
    return np.array([selector.step() for _ in range(n)], dtype=np.intp)


def select_samples_oracle(own_vectors, other_vectors, n):
    """From-scratch reference selector (full matrices; small inputs only)."""
    own_vectors = np.asarray(own_vectors, dtype=np.float64)
    other_vectors = np.asarray(other_vectors, dtype=np.float64)
    n_own = len(own_vectors)
    if not 1 <= n <= n_own:
        raise ValueError(f"n must be in [1, {n_own}], got {n}")
    own_corr = correlation_matrix(own_vectors)
    if len(other_vectors) > 0:
        cross_corr = correlation_matrix(own_vectors, other_vectors)
    else:
        cross_corr = np.zeros((n_own, 0))

    selected = []
    for _ in range(n):
        best_index = -1
        best_score = -np.inf
        for i in range(n_own):
            if i in selected:
                continue
            score = score_candidate(i, selected, own_corr, cross_corr)
            if score > best_score:
                best_index, best_score = i, score
        selected.append(best_index)
    return np.array(selected, dtype=np.intp)


def save_indices(path, indices):
    """Plain-text audit list, one selected index per line."""
    from .fileio import atomic_write

    with atomic_write(path) as handle:
        handle.write("".join(f"{int(i)}\n" for i in indices).encode())
