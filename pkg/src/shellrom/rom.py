"""Localized reduced-order models: offline training and online solves.

Offline: full-order solutions and operators are sampled over a training set,
zero-extended onto the fixed background space, clustered by parameter
distance, and compressed per cluster with POD (solution snapshots, in the H2
Gram norm) and DEIM (operator snapshots, Euclidean). The parameter-dependent
DEIM coefficients are interpolated by cubic radial basis functions with a
linear polynomial tail, so the online stage touches nothing of background
size except the final solution expansion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import (
    ConfigError,
    DegenerateModeError,
    EmptyBasisError,
    ExtrapolationWarning,
    InterpolationError,
    ReducedSolveError,
    UndefinedNormError,
)

ARTIFACT_FORMAT = "shellrom-rom-1"


# ---------------------------------------------------------------------------
# snapshots and extension


def extend_solution(u_active: np.ndarray, active_idx: np.ndarray, n_background: int) -> np.ndarray:
    """Zero extension of an active-DOF vector onto the background space."""
    u_active = np.asarray(u_active, dtype=float)
    active_idx = np.asarray(active_idx)
    if u_active.shape[0] != active_idx.shape[0]:
        raise ValueError("active vector and index set sizes differ")
    out = np.zeros(n_background)
    out[active_idx] = u_active
    return out


def restrict_solution(u_hat: np.ndarray, active_idx: np.ndarray) -> np.ndarray:
    return np.asarray(u_hat)[np.asarray(active_idx)]


# ---------------------------------------------------------------------------
# clustering


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (N_c, M)
    labels: np.ndarray  # (N_s,)
    variance: float

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def assign(self, mu) -> int:
        mu = np.atleast_1d(np.asarray(mu, float))
        d = np.linalg.norm(self.centroids - mu[None, :], axis=1)
        return int(np.argmin(d))


def _kmeans_pp_seed(samples, k, rng):
    n = samples.shape[0]
    centroids = [samples[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((samples[:, None, :] - np.array(centroids)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centroids.append(samples[rng.integers(n)])
            continue
        centroids.append(samples[rng.choice(n, p=d2 / total)])
    return np.array(centroids)


def kmeans(samples: np.ndarray, n_clusters: int, seed: int = 0,
           max_iter: int = 300) -> ClusterModel:
    """Lloyd iterations from k-means++ seeding until assignments fix.

    Empty clusters are re-seeded from the sample farthest from its assigned
    centroid.
    """
    samples = np.atleast_2d(np.asarray(samples, float))
    if samples.shape[0] < n_clusters:
        raise ConfigError("more clusters than training samples")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_seed(samples, n_clusters, rng)
    labels = np.full(samples.shape[0], -1)
    for _ in range(max_iter):
        d2 = ((samples[:, None, :] - centroids[None]) ** 2).sum(-1)
        new_labels = np.argmin(d2, axis=1)
        for k in range(n_clusters):
            if not np.any(new_labels == k):
                far = int(np.argmax(d2[np.arange(samples.shape[0]), new_labels]))
                centroids[k] = samples[far]
                new_labels[far] = k
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(n_clusters):
            centroids[k] = samples[labels == k].mean(axis=0)
    d2 = ((samples - centroids[labels]) ** 2).sum(-1)
    return ClusterModel(centroids, labels, float(d2.sum()))


def variance_scan(samples: np.ndarray, n_clusters_max: int, seed: int = 0,
                  restarts: int = 10) -> np.ndarray:
    """Best-of-restarts k-means variance for N_c = 1 .. n_clusters_max."""
    out = np.empty(n_clusters_max)
    for k in range(1, n_clusters_max + 1):
        best = np.inf
        for r in range(restarts):
            cm = kmeans(samples, k, seed=seed * 1000 + 97 * k + r)
            best = min(best, cm.variance)
        out[k - 1] = best
    return out


# ---------------------------------------------------------------------------
# POD


def pod(S: np.ndarray, xnorm=None, tol: float = 1e-7, n_max: int = None):
    """Method-of-snapshots POD in the norm induced by ``xnorm`` (SPD).

    Returns (V, sigma) with V^T X V = I; the basis size is the smallest N
    with 1 - sum_{i<=N} sigma_i^2 / sum sigma_j^2 <= tol^2, capped at n_max.
    ``sigma`` contains every snapshot singular value.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0 or not np.any(S):
        raise EmptyBasisError("snapshot matrix is empty or all zero")

    def truncation(sigma):
        lam = sigma ** 2
        tail = 1.0 - np.cumsum(lam) / lam.sum()
        ok = tail <= tol ** 2 * (1.0 + 1e-12) + 1e-300
        N = int(np.argmax(ok)) + 1 if ok.any() else lam.size
        N = min(N, int(np.sum(sigma > 1e-14 * sigma[0])))
        if n_max is not None:
            N = min(N, n_max)
        return max(N, 1)

    if xnorm is None:
        U, sigma, _ = np.linalg.svd(S, full_matrices=False)
        return U[:, :truncation(sigma)].copy(), sigma

    # method of snapshots in the X inner product; the Gram matrix squares the
    # conditioning, so re-orthonormalize the basis afterwards (span preserved)
    G = S.T @ (xnorm @ S)
    lam, Z = np.linalg.eigh(0.5 * (G + G.T))
    lam = np.clip(lam[::-1], 0.0, None)
    Z = Z[:, ::-1]
    sigma = np.sqrt(lam)
    N = truncation(sigma)
    V = (S @ Z[:, :N]) / sigma[:N][None, :]
    C = V.T @ (xnorm @ V)
    L = np.linalg.cholesky(0.5 * (C + C.T))
    V = sla.solve_triangular(L, V.T, lower=True).T
    return V, sigma


# ---------------------------------------------------------------------------
# DEIM


def deim_indices(U: np.ndarray) -> np.ndarray:
    """Standard greedy magic-point selection on POD modes (columns of U)."""
    n, Q = U.shape
    J = [int(np.argmax(np.abs(U[:, 0])))]
    for q in range(1, Q):
        rows = np.array(J)
        try:
            coef = np.linalg.solve(U[rows, :q], U[rows, q])
        except np.linalg.LinAlgError as exc:
            raise DegenerateModeError(f"singular DEIM system at mode {q}") from exc
        r = U[:, q] - U[:, :q] @ coef
        J.append(int(np.argmax(np.abs(r))))
    return np.array(J)


@dataclass
class DeimApprox:
    """Affine approximation of one operator family on a fixed layout."""

    terms: np.ndarray  # (n, Q) POD modes of operator snapshots
    indices: np.ndarray  # (Q,) magic points into the layout
    sigma: np.ndarray

    def __post_init__(self):
        self._lu = sla.lu_factor(self.terms[self.indices, :])

    @property
    def n_terms(self) -> int:
        return self.terms.shape[1]

    def theta(self, values_at_magic: np.ndarray) -> np.ndarray:
        """Coefficients reproducing the given magic-point values exactly."""
        return sla.lu_solve(self._lu, values_at_magic)

    def reconstruct(self, theta: np.ndarray) -> np.ndarray:
        return self.terms @ theta


def deim_train(S: np.ndarray, tol: float, n_max: int = None) -> DeimApprox:
    """POD (Euclidean) + greedy interpolation points for operator snapshots."""
    U, sigma = pod(S, xnorm=None, tol=tol, n_max=n_max)
    J = deim_indices(U)
    if np.unique(J).size != J.size:
        raise DegenerateModeError("repeated DEIM magic point")
    return DeimApprox(U, J, sigma)


# ---------------------------------------------------------------------------
# RBF interpolation of the DEIM coefficients


@dataclass
class RbfSurrogate:
    """Cubic RBF interpolant with a linear polynomial tail, vector-valued.

    Fits theta: R^M -> R^Q through the training values exactly. When there
    are too few centers to carry the tail, a least-squares polynomial that
    still interpolates the data (constant or linear) is used instead.
    """

    centers: np.ndarray  # (m, M)
    weights: np.ndarray  # (m + M + 1, Q); zero RBF part in degenerate mode
    poly_only: bool = False

    @classmethod
    def fit(cls, centers: np.ndarray, values: np.ndarray) -> "RbfSurrogate":
        centers = np.atleast_2d(np.asarray(centers, float))
        values = np.asarray(values, float)
        if values.ndim == 1:
            values = values[:, None]
        m, M = centers.shape
        if m >= 2:
            dists = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
            np.fill_diagonal(dists, np.inf)
            scale = max(np.abs(centers).max(), 1.0)
            if dists.min() <= 1e-14 * scale:
                raise InterpolationError("coincident RBF centers")
        P = np.column_stack([np.ones(m), centers])
        if m <= M + 1:
            # not enough centers for the augmented system; the polynomial
            # tail alone interpolates exactly (points affinely independent)
            coef, *_ = np.linalg.lstsq(P, values, rcond=None)
            w = np.zeros((m + M + 1, values.shape[1]))
            w[m:] = coef
            return cls(centers, w, poly_only=True)
        r = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        Phi = r ** 3
        A = np.zeros((m + M + 1, m + M + 1))
        A[:m, :m] = Phi
        A[:m, m:] = P
        A[m:, :m] = P.T
        rhs = np.zeros((m + M + 1, values.shape[1]))
        rhs[:m] = values
        try:
            w = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise InterpolationError(f"singular RBF system: {exc}") from exc
        return cls(centers, w)

    def __call__(self, mu) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(mu, float))
        m, M = self.centers.shape
        tail = self.weights[m] + mu @ self.weights[m + 1:]
        if self.poly_only:
            return tail
        r = np.linalg.norm(self.centers - mu[None, :], axis=1)
        return (r ** 3) @ self.weights[:m] + tail

    def gradient(self, mu) -> np.ndarray:
        """d theta / d mu, shape (Q, M)."""
        mu = np.atleast_1d(np.asarray(mu, float))
        m, M = self.centers.shape
        grad = self.weights[m + 1:].T.copy()  # (Q, M) tail slope
        if self.poly_only:
            return grad
        diff = mu[None, :] - self.centers  # (m, M)
        r = np.linalg.norm(diff, axis=1)
        # d r^3 / d mu = 3 r (mu - mu_j)
        grad += np.einsum("mq,md->qd", self.weights[:m], 3.0 * r[:, None] * diff)
        return grad


# ---------------------------------------------------------------------------
# artifact containers


@dataclass
class ClusterRom:
    """Per-cluster reduced model: basis, affine terms, surrogates."""

    basis: np.ndarray  # (n, N), X-orthonormal
    sigma: np.ndarray
    deim_a: DeimApprox
    deim_f: DeimApprox
    rbf_a: RbfSurrogate
    rbf_f: RbfSurrogate
    red_stiffness: np.ndarray  # (Q_a, N, N)
    red_load: np.ndarray  # (Q_f, N)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass
class LocalRomArtifact:
    """The persisted offline product."""

    clusters_model: ClusterModel
    clusters: list
    pattern_indices: np.ndarray
    pattern_indptr: np.ndarray
    n_dofs: int
    gram: sp.csr_matrix
    train_params: np.ndarray
    mu_lower: np.ndarray
    mu_upper: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return self.clusters_model.n_clusters

    def matrix_from_pattern(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.pattern_indices, self.pattern_indptr),
                             shape=(self.n_dofs, self.n_dofs))


# ---------------------------------------------------------------------------
# offline training


def latin_hypercube(n: int, lower, upper, seed: int) -> np.ndarray:
    from scipy.stats import qmc

    lower = np.atleast_1d(np.asarray(lower, float))
    upper = np.atleast_1d(np.asarray(upper, float))
    sampler = qmc.LatinHypercube(d=lower.size, seed=seed)
    pts = sampler.random(n)
    return qmc.scale(pts, lower, upper)


def compute_snapshots(model, params: np.ndarray, progress=None):
    """FOM sweep: extended solutions, load vectors, and stiffness entries.

    Returns (S_u, S_f, S_a, pattern) with S_a holding the vectorized
    stiffness on the union sparsity pattern of every training sample.
    """
    from .kl_shell import solve_fom

    systems = []
    S_u = np.empty((model.n_dofs, len(params)))
    S_f = np.empty((model.n_dofs, len(params)))
    union = None
    for j, mu in enumerate(params):
        system = model.assemble(mu)
        u, _ = solve_fom(system)
        S_u[:, j] = u
        S_f[:, j] = system.f
        K = system.K.tocsr()
        K.sort_indices()
        systems.append(K)
        patt = K.copy()
        patt.data = np.abs(np.sign(patt.data)) + 1.0  # keep explicit zeros
        union = patt if union is None else (union + patt)
        if progress is not None:
            progress(j, mu)
    union.data[:] = 0.0
    union.sort_indices()
    n = union.shape[0]
    union_keys = _entry_keys(union, n)
    S_a = np.zeros((union.nnz, len(params)))
    for j, K in enumerate(systems):
        pos = np.searchsorted(union_keys, _entry_keys(K, n))
        S_a[pos, j] = K.data
    return S_u, S_f, S_a, union


def _entry_keys(K: sp.csr_matrix, n: int) -> np.ndarray:
    """Sorted int64 keys row * n + col of a canonical CSR matrix."""
    rows = np.repeat(np.arange(K.shape[0], dtype=np.int64), np.diff(K.indptr))
    return rows * n + K.indices


def train(model, n_train=None, n_clusters=None, pod_tol=None, deim_tol=None,
          n_max=None, seed=None, progress=None) -> LocalRomArtifact:
    """Offline phase: sample, cluster, and build every local ROM.

    Settings default to the model's ``rom`` block. Deterministic for a given
    seed: the sampling, clustering, and every factorization are seeded or
    order-fixed.
    """
    cfg = dict(model.rom)
    n_train = n_train if n_train is not None else cfg.get("n_train", 100)
    n_clusters = n_clusters if n_clusters is not None else cfg.get("n_clusters", 4)
    pod_tol = pod_tol if pod_tol is not None else cfg.get("pod_tol", 1e-7)
    deim_tol = deim_tol if deim_tol is not None else cfg.get("deim_tol") or pod_tol / 100.0
    n_max = n_max if n_max is not None else cfg.get("n_max", 40)
    seed = seed if seed is not None else cfg.get("seed", 0)

    params = latin_hypercube(n_train, model.mu_lower, model.mu_upper, seed)
    S_u, S_f, S_a, union = compute_snapshots(model, params, progress)
    cm = kmeans(params, n_clusters, seed=seed)
    X = model.h2_gram()

    clusters = []
    for k in range(n_clusters):
        sel = np.nonzero(cm.labels == k)[0]
        V, sigma = pod(S_u[:, sel], xnorm=X, tol=pod_tol, n_max=n_max)
        deim_a = deim_train(S_a[:, sel], tol=deim_tol)
        deim_f = deim_train(S_f[:, sel], tol=deim_tol)
        theta_a = np.stack([deim_a.theta(S_a[deim_a.indices, j]) for j in sel])
        theta_f = np.stack([deim_f.theta(S_f[deim_f.indices, j]) for j in sel])
        rbf_a = RbfSurrogate.fit(params[sel], theta_a)
        rbf_f = RbfSurrogate.fit(params[sel], theta_f)
        red_K = np.empty((deim_a.n_terms, V.shape[1], V.shape[1]))
        for q in range(deim_a.n_terms):
            Kq = sp.csr_matrix((deim_a.terms[:, q], union.indices, union.indptr),
                               shape=(model.n_dofs, model.n_dofs))
            red_K[q] = V.T @ (Kq @ V)
        red_f = deim_f.terms.T @ V  # (Q_f, N)
        clusters.append(ClusterRom(V, sigma, deim_a, deim_f, rbf_a, rbf_f,
                                   red_K, red_f))

    meta = {
        "format": ARTIFACT_FORMAT,
        "n_train": int(n_train),
        "n_clusters": int(n_clusters),
        "pod_tol": float(pod_tol),
        "deim_tol": float(deim_tol),
        "n_max": int(n_max),
        "seed": int(seed),
        "model_name": model.name,
    }
    return LocalRomArtifact(cm, clusters, union.indices.copy(), union.indptr.copy(),
                            model.n_dofs, X.tocsr(), params,
                            model.mu_lower.copy(), model.mu_upper.copy(), meta)


# ---------------------------------------------------------------------------
# online stage


@dataclass
class RomSolution:
    cluster: int
    u_reduced: np.ndarray
    u_hat: np.ndarray
    compliance: float
    reduced_load: np.ndarray


def rom_solve(artifact: LocalRomArtifact, mu) -> RomSolution:
    """Online reduced solve at one parameter value."""
    mu = np.atleast_1d(np.asarray(mu, float))
    if np.any(mu < artifact.mu_lower - 1e-12) or np.any(mu > artifact.mu_upper + 1e-12):
        warnings.warn(f"parameter {mu} outside the trained box", ExtrapolationWarning)
    k = artifact.clusters_model.assign(mu)
    cl = artifact.clusters[k]
    th_a = cl.rbf_a(mu)
    th_f = cl.rbf_f(mu)
    K_N = np.einsum("q,qmn->mn", th_a, cl.red_stiffness)
    f_N = th_f @ cl.red_load
    try:
        u_N = np.linalg.solve(K_N, f_N)
    except np.linalg.LinAlgError as exc:
        raise ReducedSolveError(f"singular reduced system in cluster {k}") from exc
    u_hat = cl.basis @ u_N
    return RomSolution(k, u_N, u_hat, 0.5 * float(u_N @ f_N), f_N)


def rom_error(u_rom: np.ndarray, u_fom: np.ndarray, xnorm) -> float:
    """Relative error sqrt(e X e / u X u) in the norm of ``xnorm``."""
    e = u_rom - u_fom
    ref = float(u_fom @ (xnorm @ u_fom))
    if ref <= 0.0:
        raise UndefinedNormError("zero-norm reference solution")
    return float(np.sqrt((e @ (xnorm @ e)) / ref))
