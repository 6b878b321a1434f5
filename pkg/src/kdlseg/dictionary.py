"""Kernel K-SVD training and the KDL1 model file format.

Training alternates two stages. Stage 1 sparse-codes every training sample
with kernel OMP against the current dictionary. Stage 2 walks the atoms in
ascending order; for atom k it collects the samples using it (omega_k),
forms the restricted residual E_k^R in coefficient space, and replaces the
atom with the dominant eigenvector of (E_k^R)' K (E_k^R):

    a_k  <-  E_k^R v_1 / sigma_1      x_k[omega_k]  <-  sigma_1 v_1'

where sigma_1^2 is the largest eigenvalue. The coefficient-row refresh
keeps every rank-1 update optimal given the other atoms, which is what
makes the stage monotone. Atoms that nobody uses (or whose best eigenvalue
collapses) are replaced by the indicator of the currently worst-represented
training sample, normalized in feature space. The sigma_1 scaling leaves
every atom with unit feature-space norm a_k' K a_k = 1.
"""

from __future__ import annotations

import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureScaler
from .fileio import FormatError, atomic_write, expect_eof, read_exact
from .kernels import KernelSpec, gram
from .sparse import komp_batch

KDL_MAGIC = b"KDL1"
KDL_VERSION = 1

DEAD_ATOM_EIGENVALUE = 1e-12
ATOM_NORM_TOLERANCE = 1e-8

DEFAULT_ATOMS = 32
DEFAULT_T0 = 3
DEFAULT_MAX_ITERS = 20
DEFAULT_TOL = 1e-4

TISSUE_NORMAL = "normal"
TISSUE_TUMOR = "tumor"
_TISSUE_BYTES = {TISSUE_NORMAL: 0, TISSUE_TUMOR: 1}
_KERNEL_BYTES = {"linear": 0, "rbf": 1}


@dataclass
class TrainParams:
    atoms: int = DEFAULT_ATOMS
    t0: int = DEFAULT_T0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("rbf", 0.35))
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    seed: int = 0


@dataclass
class KernelDictionary:
    """D = Phi(Y) A plus everything needed to code a raw feature vector."""

    samples: np.ndarray  # (N, L) training feature vectors, already scaled
    coefficients: np.ndarray  # (N, K), one column per atom
    kernel: KernelSpec
    scaler: FeatureScaler
    t0: int
    tissue: str = TISSUE_NORMAL

    def __post_init__(self):
        self._gram = None

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def n_atoms(self):
        return self.coefficients.shape[1]

    @property
    def dimension(self):
        return self.samples.shape[1]

    def gram(self):
        if self._gram is None:
            self._gram = gram(self.kernel, self.samples)
        return self._gram


@dataclass
class TrainReport:
    """Per-iteration diagnostics from ``train``.

    coding_errors[j] is the total feature-space error after the Stage-1
    coding of iteration j (so coding_errors[0] measures the initial
    dictionary); updated_errors[j] is the error after that iteration's
    Stage-2 atom updates. A max_iters=0 run records a single coding pass
    and nothing else.
    """

    coding_errors: list = field(default_factory=list)
    updated_errors: list = field(default_factory=list)
    replaced_atoms: list = field(default_factory=list)
    stage1_seconds: list = field(default_factory=list)
    stage2_seconds: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.updated_errors)


def init_dictionary(n_samples, n_atoms, K_YY, seed):
    """Seeded one-hot initialization, unit-normalized in feature space.

    Each column gets a single 1 at a random sample row; duplicate rows are
    re-drawn so the chosen rows are distinct whenever n_atoms <= n_samples.
    """
    if n_atoms > n_samples:
        warnings.warn(
            f"{n_atoms} atoms from {n_samples} samples: duplicate rows allowed",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    used = set()
    A = np.zeros((n_samples, n_atoms))
    for k in range(n_atoms):
        row = int(rng.integers(n_samples))
        while n_atoms <= n_samples and row in used:
            row = int(rng.integers(n_samples))
        used.add(row)
        norm2 = K_YY[row, row]
        if norm2 <= 0.0:
            raise ValueError(f"training sample {row} has zero feature-space norm")
        A[row, k] = 1.0 / np.sqrt(norm2)
    return A


def _total_error(K_YY, C):
    """Sum of ||Phi(y_i) - Phi(Y) C[:, i]||^2 over all samples."""
    per_sample = np.diag(K_YY) - 2.0 * (K_YY * C).sum(axis=0)
    per_sample += (C * (K_YY @ C)).sum(axis=0)
    return per_sample, float(per_sample.sum())


def _fix_sign(vector):
    nonzero = np.flatnonzero(vector)
    if len(nonzero) and vector[nonzero[0]] < 0.0:
        return -vector
    return vector


@dataclass
class IterationResult:
    coefficients: np.ndarray  # updated A, (N, K)
    codes: np.ndarray  # updated X, (K, N)
    coding_error: float  # total error after Stage 1
    updated_error: float  # total error after Stage 2
    replaced: int
    stage1_seconds: float
    stage2_seconds: float


def kksvd_iteration(A, K_YY, t0):
    """One sparse-coding + dictionary-update pass."""
    A = np.asarray(A, dtype=np.float64)
    K_YY = np.asarray(K_YY, dtype=np.float64)
    n, n_atoms = A.shape

    start = time.perf_counter()
    codes = komp_batch(K_YY, np.diag(K_YY).copy(), A, K_YY, t0)
    coding_error = float(codes.error2.sum())
    X = codes.dense(n_atoms).T  # (K, N)
    stage1_seconds = time.perf_counter() - start

    start = time.perf_counter()
    A = A.copy()
    residual = np.eye(n) - A @ X  # E in coefficient space; E_k = residual + a_k x_k
    replaced = 0
    for k in range(n_atoms):
        x_row = X[k]
        omega = np.flatnonzero(x_row)
        atom = A[:, k]

        new_atom = None
        if omega.size > 0:
            E_kR = residual[:, omega] + np.outer(atom, x_row[omega])
            M = E_kR.T @ (K_YY @ E_kR)
            w, v = np.linalg.eigh(M)
            sigma2 = w[-1]
            if sigma2 >= DEAD_ATOM_EIGENVALUE:
                v1 = _fix_sign(v[:, -1])
                sigma = np.sqrt(sigma2)
                new_atom = E_kR @ v1 / sigma
                new_row = np.zeros(n)
                new_row[omega] = sigma * v1
        if new_atom is None:
            # dead atom: move it onto the worst-represented training sample
            per_sample, _ = _total_error(K_YY, A @ X)
            worst = int(np.argmax(per_sample))
            new_atom = np.zeros(n)
            new_atom[worst] = 1.0 / np.sqrt(K_YY[worst, worst])
            new_row = np.zeros(n)
            replaced += 1

        if omega.size > 0:
            residual[:, omega] += np.outer(atom, x_row[omega])
        new_omega = np.flatnonzero(new_row)
        if new_omega.size > 0:
            residual[:, new_omega] -= np.outer(new_atom, new_row[new_omega])
        A[:, k] = new_atom
        X[k] = new_row

    _, updated_error = _total_error(K_YY, A @ X)
    stage2_seconds = time.perf_counter() - start
    return IterationResult(
        A, X, coding_error, updated_error, replaced, stage1_seconds, stage2_seconds
    )


def atom_norms(A, K_YY):
    """Feature-space squared norms a_k' K a_k of every atom."""
    return (A * (K_YY @ A)).sum(axis=0)


def train(samples, params, scaler=None, tissue=TISSUE_NORMAL):
    """Train a kernel dictionary on (already scaled) feature vectors.

    Stops after ``params.max_iters`` iterations or when the relative
    improvement of the post-update error drops below ``params.tol``.
    ``scaler`` is stored in the model for coding raw vectors later; the
    identity scaler is recorded when none is given.
    """
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    if samples.ndim != 2 or len(samples) == 0:
        raise ValueError("training samples must be a nonempty (count, dim) array")
    if tissue not in _TISSUE_BYTES:
        raise ValueError(f"tissue must be 'normal' or 'tumor', got {tissue!r}")

    K_YY = gram(params.kernel, samples)
    A = init_dictionary(len(samples), params.atoms, K_YY, params.seed)
    report = TrainReport()

    if params.max_iters == 0:
        codes = komp_batch(K_YY, np.diag(K_YY).copy(), A, K_YY, params.t0)
        report.coding_errors.append(float(codes.error2.sum()))
    previous = None
    for _ in range(params.max_iters):
        result = kksvd_iteration(A, K_YY, params.t0)
        A = result.coefficients
        report.coding_errors.append(result.coding_error)
        report.updated_errors.append(result.updated_error)
        report.replaced_atoms.append(result.replaced)
        report.stage1_seconds.append(result.stage1_seconds)
        report.stage2_seconds.append(result.stage2_seconds)

        drift = np.abs(atom_norms(A, K_YY) - 1.0).max()
        if drift > ATOM_NORM_TOLERANCE:
            raise RuntimeError(f"atom norm drifted by {drift:g} after update stage")

        if previous is not None:
            if previous <= 0.0 or (previous - result.updated_error) / previous < params.tol:
                break
        previous = result.updated_error

    scaler = scaler if scaler is not None else FeatureScaler.identity(samples.shape[1])
    dictionary = KernelDictionary(
        samples=samples,
        coefficients=A,
        kernel=params.kernel,
        scaler=scaler,
        t0=params.t0,
        tissue=tissue,
    )
    dictionary._gram = K_YY
    return dictionary, report


# ---------------------------------------------------------------------------
# KDL1 model files


def save_model(path, dictionary):
    d = dictionary
    gamma = d.kernel.gamma if d.kernel.gamma is not None else 0.0
    with atomic_write(path) as handle:
        handle.write(KDL_MAGIC)
        handle.write(
            struct.pack(
                "<BBBd",
                KDL_VERSION,
                _TISSUE_BYTES[d.tissue],
                _KERNEL_BYTES[d.kernel.family],
                gamma,
            )
        )
        handle.write(
            struct.pack("<IIII", d.dimension, d.n_samples, d.n_atoms, d.t0)
        )
        handle.write(np.ascontiguousarray(d.scaler.mean, dtype="<f8").tobytes())
        handle.write(np.ascontiguousarray(d.scaler.std, dtype="<f8").tobytes())
        # sample-major: each sample's L components contiguous
        handle.write(np.ascontiguousarray(d.samples, dtype="<f8").tobytes())
        # atom-major: each atom's N coefficients contiguous
        handle.write(np.ascontiguousarray(d.coefficients.T, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as handle:
        magic = read_exact(handle, 4, path, "magic")
        if magic != KDL_MAGIC:
            raise FormatError(f"{path}: bad KDL1 magic {magic!r}")
        version, tissue_byte, kernel_byte, gamma = struct.unpack(
            "<BBBd", read_exact(handle, 11, path, "header")
        )
        if version != KDL_VERSION:
            raise FormatError(f"{path}: unsupported KDL1 version {version}")
        if tissue_byte not in (0, 1):
            raise FormatError(f"{path}: invalid class byte {tissue_byte}")
        if kernel_byte not in (0, 1):
            raise FormatError(f"{path}: invalid kernel byte {kernel_byte}")
        dim, n, n_atoms, t0 = struct.unpack(
            "<IIII", read_exact(handle, 16, path, "sizes")
        )
        if min(dim, n, n_atoms, t0) == 0 or t0 > n_atoms:
            raise FormatError(
                f"{path}: inconsistent sizes L={dim} N={n} K={n_atoms} T0={t0}"
            )
        mean = np.frombuffer(read_exact(handle, 8 * dim, path, "scaler means"), "<f8")
        std = np.frombuffer(read_exact(handle, 8 * dim, path, "scaler stds"), "<f8")
        samples = np.frombuffer(
            read_exact(handle, 8 * dim * n, path, "training samples"), "<f8"
        ).reshape(n, dim)
        coeffs = np.frombuffer(
            read_exact(handle, 8 * n * n_atoms, path, "coefficients"), "<f8"
        ).reshape(n_atoms, n)
        expect_eof(handle, path)

    family = "linear" if kernel_byte == 0 else "rbf"
    kernel = KernelSpec(family, gamma if family == "rbf" else None)
    tissue = TISSUE_NORMAL if tissue_byte == 0 else TISSUE_TUMOR
    return KernelDictionary(
        samples=samples.astype(np.float64),
        coefficients=coeffs.T.astype(np.float64),
        kernel=kernel,
        scaler=FeatureScaler(mean.copy(), std.copy()),
        t0=int(t0),
        tissue=tissue,
    )
