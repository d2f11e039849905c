"""Dense complex-matrix kernel.

Hermitian spectral tools, polar isometries, spectral projections, and
commutant projections, all with deterministic tolerances. Everything here
is a pure function of its inputs; matrices are plain complex ndarrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    AmbiguousCutError,
    DegenerateInputError,
    DimensionMismatchError,
    InvalidAlgebraError,
)

HERM_TOL = 1e-12
CHECK_TOL = 1e-9


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return (a + a*)/2. The result is exactly Hermitian in storage."""
    return (np.asarray(a, dtype=complex) + np.asarray(a, dtype=complex).conj().T) / 2.0


def svd_safe(a: np.ndarray, compute_uv: bool = True, full_matrices: bool = True):
    """Singular value decomposition with a slow-driver fallback.

    LAPACK's divide-and-conquer driver occasionally refuses to converge on
    perfectly finite, tiny-scaled matrices; the QR-based driver is slower
    but does not share the failure mode.
    """
    try:
        if compute_uv:
            return np.linalg.svd(a, full_matrices=full_matrices)
        return np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(
            a, compute_uv=compute_uv, full_matrices=full_matrices, lapack_driver="gesvd"
        )


def op_norm(a: np.ndarray) -> float:
    """Operator (spectral) norm; 0.0 for empty input."""
    a = np.atleast_2d(np.asarray(a))
    if a.size == 0:
        return 0.0
    try:
        return float(np.linalg.norm(a, 2))
    except np.linalg.LinAlgError:
        return float(svd_safe(a, compute_uv=False)[0])


def trace_norm(a: np.ndarray) -> float:
    return float(svd_safe(np.atleast_2d(a), compute_uv=False).sum())


def frob_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def eye_like(d: int) -> np.ndarray:
    return np.eye(d, dtype=complex)


@dataclass(frozen=True, eq=False)
class Projection:
    """An orthogonal projection with its rank pinned at construction."""

    matrix: np.ndarray
    rank: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def complement(self) -> "Projection":
        return Projection(eye_like(self.dim) - self.matrix, self.dim - self.rank)


def projection_from_matrix(m: np.ndarray, tol: float = 1e-10) -> Projection:
    """Validate and wrap a matrix as a Projection.

    Requires ||m^2 - m|| and ||m - m*|| at most `tol`, and the trace within
    1e-8 of an integer, which becomes the rank.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError("projection matrix must be square")
    herm_defect = op_norm(m - m.conj().T)
    if herm_defect > tol:
        raise DegenerateInputError(f"not Hermitian: defect {herm_defect:.3e}")
    h = hermitize(m)
    idem_defect = op_norm(h @ h - h)
    if idem_defect > tol:
        raise DegenerateInputError(f"not idempotent: defect {idem_defect:.3e}")
    tr = float(np.real(np.trace(h)))
    rank = int(round(tr))
    if abs(tr - rank) > 1e-8:
        raise DegenerateInputError(f"trace {tr!r} is not near an integer")
    return Projection(h, rank)


def rank1_projection(xi: np.ndarray) -> Projection:
    """Projection onto the line spanned by a nonzero vector."""
    xi = np.asarray(xi, dtype=complex).reshape(-1)
    nrm = np.linalg.norm(xi)
    if nrm < 1e-14:
        raise DegenerateInputError("zero vector spans no line")
    v = xi / nrm
    return Projection(hermitize(np.outer(v, v.conj())), 1)


def polar_isometry(v: np.ndarray, p: Projection, tol: float = 1e-9) -> np.ndarray:
    """Nearest isometry onto range(p): the polar factor w of p v.

    `v` must be an isometry (columns orthonormal within 1e-10) with
    ||v v* - p|| < 1/2. The output satisfies w* w = 1, w w* = p, and
    ||v - w|| <= 2 ||v v* - p||.
    """
    v = np.asarray(v, dtype=complex)
    if v.ndim != 2:
        raise DimensionMismatchError("isometry must be a matrix")
    d, r = v.shape
    if p.matrix.shape[0] != d:
        raise DimensionMismatchError("projection dimension does not match isometry range")
    iso_defect = op_norm(v.conj().T @ v - eye_like(r))
    if iso_defect > 1e-10:
        raise DegenerateInputError(f"v is not an isometry: defect {iso_defect:.3e}")
    eps = op_norm(v @ v.conj().T - p.matrix)
    if eps >= 0.5:
        raise DegenerateInputError(f"||vv*-p|| = {eps:.6f} is not below 1/2")
    pv = p.matrix @ v
    u, s, wh = svd_safe(pv, full_matrices=False)
    if s.min(initial=np.inf) < 1e-10:
        raise DegenerateInputError("pv is rank deficient; the distance precondition failed")
    return u @ wh


def spectral_projection(
    h: np.ndarray, lo: float, hi: float, tol: float = 1e-9
) -> Projection:
    """Spectral projection of a Hermitian matrix for the window [lo, hi].

    Membership is inclusive, with a tol/10 slack so eigenvalues sitting
    exactly on a boundary classify stably. The cut is ambiguous, and raises,
    when it splits a numerical cluster: some kept and some discarded
    eigenvalue closer than `tol`.
    """
    h = np.asarray(h, dtype=complex)
    if op_norm(h - h.conj().T) > max(HERM_TOL * max(op_norm(h), 1.0), HERM_TOL):
        raise DegenerateInputError("spectral projection needs a Hermitian input")
    w, vecs = np.linalg.eigh(hermitize(h))
    slack = tol / 10.0
    inside = (w >= lo - slack) & (w <= hi + slack)
    if inside.any() and (~inside).any():
        gap = w[inside].min() - w[~inside][w[~inside] < w[inside].min()].max(initial=-np.inf)
        hi_gap = w[~inside][w[~inside] > w[inside].max()].min(initial=np.inf) - w[inside].max()
        if min(gap, hi_gap) < tol:
            raise AmbiguousCutError(
                f"cut [{lo!r}, {hi!r}] splits eigenvalues separated by {min(gap, hi_gap):.3e}"
            )
    cols = vecs[:, inside]
    proj = hermitize(cols @ cols.conj().T)
    return Projection(proj, int(inside.sum()))


def largest_gap_cut(values: np.ndarray, lo: float, hi: float) -> float:
    """Midpoint of the largest gap between sorted values inside (lo, hi).

    Used to place deterministic spectral cuts when a window boundary falls
    in a gap. Raises if no gap of useful width intersects the interval.
    """
    vals = np.sort(np.asarray(values, dtype=float))
    edges = np.concatenate(([lo], vals[(vals > lo) & (vals < hi)], [hi]))
    widths = np.diff(edges)
    if widths.size == 0 or widths.max() <= 1e-8:
        raise AmbiguousCutError("no usable spectral gap inside the permitted window")
    j = int(np.argmax(widths))
    return float((edges[j] + edges[j + 1]) / 2.0)


def _span_projector(mats: list[np.ndarray]) -> tuple[np.ndarray, int]:
    """Orthogonal projector (d^2 x d^2) onto span{vec(b)} and its rank."""
    d = mats[0].shape[0]
    stack = np.stack([m.reshape(-1) for m in mats], axis=1)
    q, r = np.linalg.qr(stack)
    keep = np.abs(np.diag(r)) > 1e-10 * max(1.0, np.abs(np.diag(r)).max())
    q = q[:, keep]
    return q @ q.conj().T, int(keep.sum())


def _check_star_algebra(basis: list[np.ndarray], tol: float) -> None:
    d = basis[0].shape[0]
    proj, _ = _span_projector(basis)

    def in_span(m: np.ndarray) -> bool:
        vecm = m.reshape(-1)
        return float(np.linalg.norm(vecm - proj @ vecm)) <= tol * max(1.0, float(np.linalg.norm(vecm)))

    if not in_span(eye_like(d)):
        raise InvalidAlgebraError("identity is not in the span: algebra must be unital")
    for b in basis:
        if not in_span(b.conj().T):
            raise InvalidAlgebraError("span is not closed under adjoints")
    for a in basis:
        for b in basis:
            if not in_span(a @ b):
                raise InvalidAlgebraError("span is not closed under products")


def commutant_project(
    algebra_basis: list[np.ndarray], t: np.ndarray, tol: float = 1e-9
) -> np.ndarray:
    """HS-orthogonal projection of t onto the commutant of a *-algebra.

    The basis must span a unital *-closed algebra (checked). The output is
    the unique minimizer of ||y - t||_HS over {y : [y, b] = 0 for all b},
    which coincides with the Haar twirl of t over the algebra's unitary
    group. Positive t gives positive output.
    """
    basis = [np.asarray(b, dtype=complex) for b in algebra_basis]
    t = np.asarray(t, dtype=complex)
    d = t.shape[0]
    if any(b.shape != (d, d) for b in basis):
        raise DimensionMismatchError("basis and t must share one square dimension")
    _check_star_algebra(basis, tol)

    # [y,b] = 0 as a linear system on vec(y), row-major: L_b = 1(x)b^T - b(x)1.
    kmat = np.zeros((d * d, d * d), dtype=complex)
    ident = eye_like(d)
    for b in basis:
        lb = np.kron(ident, b.T) - np.kron(b, ident)
        kmat += lb.conj().T @ lb
    w, vecs = np.linalg.eigh(hermitize(kmat))
    scale = max(float(w[-1]), 1.0)
    null = vecs[:, w <= 1e-10 * scale]
    y = (null @ (null.conj().T @ t.reshape(-1))).reshape(d, d)
    if op_norm(t - t.conj().T) <= HERM_TOL * max(op_norm(t), 1.0):
        y = hermitize(y)
    return y


def tensor_commutant_project(t: np.ndarray, n: int, m: int) -> np.ndarray:
    """Commutant projection for the algebra {a (x) 1_m} on C^n (x) C^m.

    The commutant is 1_n (x) M_m, and the HS projection is the normalized
    partial average over the first factor: t -> 1_n (x) (1/n) sum_i t_ii.
    Exact, and much faster than the linear-system route the general
    commutant_project takes; the two agree on this algebra.
    """
    t = np.asarray(t, dtype=complex)
    if t.shape != (n * m, n * m):
        raise DimensionMismatchError(f"expected a {n * m} x {n * m} matrix")
    t4 = t.reshape(n, m, n, m)
    avg = np.einsum("iaib->ab", t4) / n
    return np.kron(eye_like(n), avg)
