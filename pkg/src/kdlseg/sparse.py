"""Kernel orthogonal matching pursuit and feature-space reconstruction error.

A dictionary is represented implicitly as D = Phi(Y) A, so every quantity is
reachable through kernel evaluations: for a signal z only kz = K(z, Y) and
kzz = kappa(z, z) are needed, together with the training Gram matrix
K(Y, Y) and the coefficient matrix A (one column per atom).

``komp`` codes a single signal and follows the greedy recursion literally:
correlations tau = (kz - v' K) a_i over unselected atoms, arg-max |tau|
(ties to the lowest atom index), then a least-squares refit on the grown
support. ``komp_batch`` codes many signals at once through the identities

    tau   = kz A - x' (A' K A)
    error = kzz - 2 (kz A) x + x' (A' K A) x

which only involve the small atom-space matrices KZ A and G = A' K A.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TAU_TOLERANCE = 1e-12
RANK_RTOL = 1e-10
ERROR_CLAMP = 1e-9


@dataclass
class SparseCode:
    """Support indices with aligned coefficients, at most ``t0`` of them.

    ``flagged`` marks codes where pursuit stopped early because the
    restricted system went numerically singular.
    """

    support: np.ndarray
    coefficients: np.ndarray
    t0: int
    flagged: bool = False

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.intp)
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if len(self.support) != len(self.coefficients):
            raise ValueError("support and coefficients must align")
        if len(self.support) > self.t0:
            raise ValueError(f"more than t0={self.t0} coefficients")
        if len(np.unique(self.support)) != len(self.support):
            raise ValueError("support indices must be distinct")

    def dense(self, n_atoms):
        x = np.zeros(n_atoms)
        x[self.support] = self.coefficients
        return x


def solve_sym_psd(matrix, rhs, rtol=RANK_RTOL):
    """Solve a small symmetric PSD system via eigendecomposition.

    Returns (solution, True), or (None, False) when the smallest eigenvalue
    falls below rtol times the largest (rank-deficient within tolerance).
    """
    w, v = np.linalg.eigh(matrix)
    if w[-1] <= 0.0 or w[0] < rtol * w[-1]:
        return None, False
    return v @ ((v.T @ rhs) / w), True


def komp(kz, kzz, A, K_YY, t0):
    """Greedy kernel sparse coding of one signal.

    Parameters
    ----------
    kz : (N,) kernel row K(z, Y) of the signal against the training samples.
    kzz : scalar kappa(z, z).
    A : (N, K) coefficient matrix, one column per atom.
    K_YY : (N, N) training Gram matrix.
    t0 : sparsity bound, 1 <= t0 <= K.

    Stops early (without error) when the best |tau| drops below 1e-12 or the
    restricted normal equations become singular; the latter flags the code.
    """
    kz = np.asarray(kz, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    K_YY = np.asarray(K_YY, dtype=np.float64)
    n, n_atoms = A.shape
    if kz.shape != (n,) or K_YY.shape != (n, n):
        raise ValueError(
            f"inconsistent shapes: kz {kz.shape}, A {A.shape}, K {K_YY.shape}"
        )
    if not 1 <= t0 <= n_atoms:
        raise ValueError(f"t0 must be in [1, {n_atoms}], got {t0}")

    support: list[int] = []
    coefficients = np.zeros(0)
    v = np.zeros(n)
    flagged = False
    for _ in range(t0):
        tau = np.abs((kz - v @ K_YY) @ A)
        tau[support] = -1.0
        pick = int(np.argmax(tau))
        if tau[pick] < TAU_TOLERANCE:
            break
        trial = support + [pick]
        A_sub = A[:, trial]
        gram_sub = A_sub.T @ K_YY @ A_sub
        solution, ok = solve_sym_psd(gram_sub, kz @ A_sub)
        if not ok:
            flagged = True
            break
        support = trial
        coefficients = solution
        v = A_sub @ coefficients
    return SparseCode(np.array(support, dtype=np.intp), coefficients, t0, flagged)


def reconstruction_error2(kz, kzz, code, A, K_YY):
    """Squared feature-space residual ||Phi(z) - Phi(Y) A x||^2.

    Small negative values (above -1e-9) from roundoff clamp to zero; larger
    ones signal numerical corruption and raise.
    """
    if len(code.support) == 0:
        energy = float(kzz)
    else:
        v = A[:, code.support] @ code.coefficients
        energy = float(kzz - 2.0 * (kz @ v) + v @ K_YY @ v)
    if energy < -ERROR_CLAMP:
        raise ValueError(f"negative reconstruction energy {energy:g}")
    return max(energy, 0.0)


@dataclass
class BatchCodes:
    """Sparse codes for a batch of signals, padded with -1 / 0.0."""

    support: np.ndarray  # (count, t0) intp, -1 where unused
    coefficients: np.ndarray  # (count, t0) float64
    error2: np.ndarray  # (count,) squared feature-space residuals
    flagged: np.ndarray  # (count,) bool, singular early stop
    t0: int = field(default=0)

    def __len__(self):
        return len(self.error2)

    def code(self, i):
        used = self.support[i] >= 0
        return SparseCode(
            self.support[i, used],
            self.coefficients[i, used],
            self.t0,
            bool(self.flagged[i]),
        )

    def dense(self, n_atoms):
        """(count, n_atoms) dense coefficient matrix."""
        x = np.zeros((len(self), n_atoms))
        rows = np.arange(len(self))[:, None]
        used = self.support >= 0
        x[np.broadcast_to(rows, self.support.shape)[used], self.support[used]] = (
            self.coefficients[used]
        )
        return x


def komp_batch(KZ, kzz, A, K_YY, t0, gram_atoms=None):
    """Code every row of KZ against the same dictionary.

    ``gram_atoms`` may pass a precomputed A' K A. Results match running
    ``komp`` row by row (same greedy picks and tolerances) but all work
    happens in atom space, so cost is independent of the sample count N
    once KZ A is formed.
    """
    KZ = np.atleast_2d(np.asarray(KZ, dtype=np.float64))
    kzz = np.asarray(kzz, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    count = len(KZ)
    n, n_atoms = A.shape
    if not 1 <= t0 <= n_atoms:
        raise ValueError(f"t0 must be in [1, {n_atoms}], got {t0}")
    if KZ.shape[1] != n or kzz.shape != (count,):
        raise ValueError(
            f"inconsistent shapes: KZ {KZ.shape}, kzz {kzz.shape}, A {A.shape}"
        )

    G = A.T @ K_YY @ A if gram_atoms is None else gram_atoms
    KZA = KZ @ A

    support = np.full((count, t0), -1, dtype=np.intp)
    x_full = np.zeros((count, n_atoms))
    chosen = np.zeros((count, n_atoms), dtype=bool)
    flagged = np.zeros(count, dtype=bool)
    active = np.arange(count)

    for step in range(t0):
        if len(active) == 0:
            break
        tau = np.abs(KZA[active] - x_full[active] @ G)
        tau[chosen[active]] = -1.0
        picks = np.argmax(tau, axis=1)
        strong = tau[np.arange(len(active)), picks] >= TAU_TOLERANCE
        active = active[strong]
        if len(active) == 0:
            break
        picks = picks[strong]

        support[active, step] = picks
        chosen[active, picks] = True
        sub = support[active, : step + 1]
        gram_sub = G[sub[:, :, None], sub[:, None, :]]
        rhs = np.take_along_axis(KZA[active], sub, axis=1)

        w, v = np.linalg.eigh(gram_sub)
        good = (w[:, -1] > 0.0) & (w[:, 0] >= RANK_RTOL * w[:, -1])
        if not good.all():
            bad = active[~good]
            support[bad, step] = -1
            chosen[bad, picks[~good]] = False
            flagged[bad] = True
            active = active[good]
            sub, gram_sub = sub[good], gram_sub[good]
            rhs, w, v = rhs[good], w[good], v[good]
            if len(active) == 0:
                break
        solutions = (v @ ((np.swapaxes(v, 1, 2) @ rhs[:, :, None]) / w[:, :, None]))[
            ..., 0
        ]
        x_full[active] = 0.0
        rows = np.repeat(active, step + 1)
        x_full[rows, sub.ravel()] = solutions.ravel()

    error2 = kzz - 2.0 * np.einsum("ij,ij->i", KZA, x_full)
    error2 += np.einsum("ij,ij->i", x_full @ G, x_full)
    if (error2 < -ERROR_CLAMP).any():
        raise ValueError(f"negative reconstruction energy {error2.min():g}")
    np.maximum(error2, 0.0, out=error2)

    coefficients = np.zeros((count, t0))
    used = support >= 0
    rows = np.broadcast_to(np.arange(count)[:, None], support.shape)
    coefficients[used] = x_full[rows[used], support[used]]
    return BatchCodes(support, coefficients, error2, flagged, t0)
