"""Linear maps between matrix algebras, represented by their Choi matrices.

The Choi matrix is the single source of truth: for T: M_n -> M_k it is the
nk x nk matrix sum_ij e_ij (x) T(e_ij), so complete positivity is one
eigendecomposition away and Kraus / Stinespring forms are derived views.
Codomains may be block algebras (+) M_{k_l}, recorded structurally so
coordinate maps can be sliced out rather than recovered numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    NotCompletelyPositiveError,
)
from .matcore import Projection, eye_like, hermitize, op_norm

KRAUS_TRUNCATION = 1e-12


@dataclass(frozen=True, eq=False)
class MatLinMap:
    """A linear map M_n -> M_k (or into a block algebra inside M_k)."""

    n: int
    k: int
    choi: np.ndarray
    cod_blocks: tuple[int, ...] | None = None

    def __post_init__(self):
        d = self.n * self.k
        if self.choi.shape != (d, d):
            raise DimensionMismatchError(
                f"choi must be {d} x {d} for a map M_{self.n} -> M_{self.k}"
            )
        if self.cod_blocks is not None and sum(self.cod_blocks) != self.k:
            raise DimensionMismatchError("codomain blocks must sum to cod_dim")

    @property
    def c4(self) -> np.ndarray:
        """Choi as a (n, k, n, k) tensor: c4[i, a, j, b] = T(e_ij)[a, b]."""
        return self.choi.reshape(self.n, self.k, self.n, self.k)

    def _same_shape(self, other: "MatLinMap") -> None:
        if (self.n, self.k, self.cod_blocks) != (other.n, other.k, other.cod_blocks):
            raise DimensionMismatchError("maps act between different spaces")

    def __add__(self, other: "MatLinMap") -> "MatLinMap":
        self._same_shape(other)
        return MatLinMap(self.n, self.k, self.choi + other.choi, self.cod_blocks)

    def __sub__(self, other: "MatLinMap") -> "MatLinMap":
        self._same_shape(other)
        return MatLinMap(self.n, self.k, self.choi - other.choi, self.cod_blocks)

    def __mul__(self, scalar: complex) -> "MatLinMap":
        return MatLinMap(self.n, self.k, self.choi * scalar, self.cod_blocks)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class StinespringForm:
    """Dilation data: T(x) = v* (x (x) 1_m) v with v: C^k -> C^n (x) C^m."""

    multiplicity: int
    v: np.ndarray


@dataclass(frozen=True, eq=False)
class CpCheck:
    ok: bool
    min_eig: float
    witness: np.ndarray | None


@dataclass(frozen=True, eq=False)
class EmbeddingCertificate:
    """A map split as homomorphic corner plus orthogonal remainder.

    `split_projection` cuts the codomain; the compressed part p map(.) p is
    the *-homomorphism whose multiplicativity defect is `hom_residual`, and
    `iso_residual` records the worst sampled norm distortion at the
    amplification level of the domain.
    """

    map: MatLinMap
    split_projection: Projection
    hom_residual: float
    iso_residual: float


def from_choi(
    n: int, k: int, choi: np.ndarray, cod_blocks: tuple[int, ...] | None = None
) -> MatLinMap:
    return MatLinMap(n, k, np.asarray(choi, dtype=complex), cod_blocks)


def from_apply(n: int, k: int, fn, cod_blocks: tuple[int, ...] | None = None) -> MatLinMap:
    """Assemble the Choi matrix by evaluating fn on the matrix-unit basis."""
    c4 = np.zeros((n, k, n, k), dtype=complex)
    unit = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            unit[i, j] = 1.0
            c4[i, :, j, :] = fn(unit)
            unit[i, j] = 0.0
    return MatLinMap(n, k, c4.reshape(n * k, n * k), cod_blocks)


def from_kraus(n: int, k: int, ops: list[np.ndarray]) -> MatLinMap:
    stack = np.stack([np.asarray(a, dtype=complex) for a in ops])
    c4 = np.einsum("mai,mbj->iajb", stack, stack.conj())
    return MatLinMap(n, k, c4.reshape(n * k, n * k))


def identity_map(n: int) -> MatLinMap:
    c4 = np.einsum("ia,jb->iajb", eye_like(n), eye_like(n))
    return MatLinMap(n, n, c4.reshape(n * n, n * n))


def depolarizing_map(n: int) -> MatLinMap:
    """x -> trace(x)/n * identity, the fully mixing UCP map on M_n."""
    c4 = np.einsum("ij,ab->iajb", eye_like(n), eye_like(n)) / n
    return MatLinMap(n, n, c4.reshape(n * n, n * n))


def conjugation_map(u: np.ndarray) -> MatLinMap:
    """x -> u x u* for a square matrix u (an automorphism when u is unitary)."""
    u = np.asarray(u, dtype=complex)
    n = u.shape[0]
    c4 = np.einsum("ai,bj->iajb", u, u.conj())
    return MatLinMap(n, n, c4.reshape(n * n, n * n))


def isometry_embedding(v: np.ndarray) -> MatLinMap:
    """x -> v x v* for an N x n isometry v: the basic corner embedding."""
    v = np.asarray(v, dtype=complex)
    big, n = v.shape
    c4 = np.einsum("ai,bj->iajb", v, v.conj())
    return MatLinMap(n, big, c4.reshape(n * big, n * big))


def apply(t: MatLinMap, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.shape != (t.n, t.n):
        raise DimensionMismatchError(f"argument must be {t.n} x {t.n}")
    return np.einsum("ij,iajb->ab", x, t.c4)


def unit_image(t: MatLinMap, i: int, j: int) -> np.ndarray:
    """T(e_ij), sliced straight out of the Choi tensor."""
    return np.array(t.c4[i, :, j, :])


def adjoint(t: MatLinMap) -> MatLinMap:
    """Hilbert-Schmidt adjoint T*: M_k -> M_n."""
    c4 = t.c4.transpose(1, 0, 3, 2).conj()
    return MatLinMap(t.k, t.n, np.ascontiguousarray(c4).reshape(t.k * t.n, t.k * t.n))


def compose(s: MatLinMap, t: MatLinMap) -> MatLinMap:
    """s after t."""
    if s.n != t.k:
        raise DimensionMismatchError("inner dimensions differ")
    c4 = np.einsum("icjd,cadb->iajb", t.c4, s.c4)
    return MatLinMap(t.n, s.k, c4.reshape(t.n * s.k, t.n * s.k), s.cod_blocks)


def is_cp(t: MatLinMap, tol: float = 1e-9) -> CpCheck:
    w, vecs = np.linalg.eigh(hermitize(t.choi))
    lo = float(w[0])
    if lo >= -tol:
        return CpCheck(True, lo, None)
    return CpCheck(False, lo, vecs[:, 0])


def amplify(t: MatLinMap, m: int) -> MatLinMap:
    """id_{M_m} (x) T, on domain M_m (x) M_n ordered first factor outermost."""
    if m < 1:
        raise DimensionMismatchError("amplification level must be positive")
    ident = eye_like(m)
    c8 = np.einsum("su,tv,iajb->siuatjvb", ident, ident, t.c4)
    d = m * t.n * m * t.k
    return MatLinMap(m * t.n, m * t.k, c8.reshape(d, d))


def tensor_unit(t: MatLinMap, m: int) -> MatLinMap:
    """x -> 1_m (x) T(x), the unit-padded amplification of the codomain."""
    if m < 1:
        raise DimensionMismatchError("padding level must be positive")
    c6 = np.einsum("uv,iajb->iuajvb", eye_like(m), t.c4)
    d = t.n * m * t.k
    return MatLinMap(t.n, m * t.k, c6.reshape(d, d))


def kraus(t: MatLinMap, tol: float = KRAUS_TRUNCATION) -> list[np.ndarray]:
    check = is_cp(t)
    if not check.ok:
        raise NotCompletelyPositiveError(
            f"Kraus form needs a CP map; min Choi eigenvalue {check.min_eig:.3e}",
            witness=check.witness,
        )
    w, vecs = np.linalg.eigh(hermitize(t.choi))
    ops = []
    for lam, col in zip(w, vecs.T):
        if lam > tol:
            ops.append(np.sqrt(lam) * col.reshape(t.n, t.k).T)
    if not ops:
        ops.append(np.zeros((t.k, t.n), dtype=complex))
    return ops


def stinespring(t: MatLinMap) -> StinespringForm:
    """Dilation through sigma(x) = x (x) 1_m with m = Kraus rank.

    v is an (n*m, k) contraction with v* sigma(x) v = T(x); for unital T it
    is an isometry.
    """
    ops = kraus(t)
    m = len(ops)
    stack = np.stack(ops)  # (m, k, n)
    v = stack.conj().transpose(2, 0, 1).reshape(t.n * m, t.k)
    return StinespringForm(m, v)


def stinespring_apply(form: StinespringForm, n: int, x: np.ndarray) -> np.ndarray:
    """Evaluate v* (x (x) 1_m) v without building the map."""
    m = form.multiplicity
    v3 = form.v.reshape(n, m, -1)
    return np.einsum("ima,ij,jmb->ab", v3.conj(), np.asarray(x, dtype=complex), v3)


def compress(t: MatLinMap, p: Projection) -> MatLinMap:
    """phi_p(x) = p phi(x) p."""
    if p.matrix.shape[0] != t.k:
        raise DimensionMismatchError("projection must live in the codomain")
    c4 = np.einsum("aA,iAjB,Bb->iajb", p.matrix, t.c4, p.matrix)
    return MatLinMap(t.n, t.k, c4.reshape(t.n * t.k, t.n * t.k), t.cod_blocks)


def corner_remainder(t: MatLinMap, p: Projection) -> MatLinMap:
    return compress(t, p.complement())


def unitalize(t: MatLinMap) -> MatLinMap:
    """Add the trace-weighted defect x -> tau(x)(1 - T(1)) to make T unital.

    Keeps complete positivity and, for a complete order embedding, complete
    isometry. Requires T CP with T(1) <= 1 (up to 1e-9).
    """
    check = is_cp(t)
    if not check.ok:
        raise NotCompletelyPositiveError(
            f"unitalize needs a CP map; min Choi eigenvalue {check.min_eig:.3e}",
            witness=check.witness,
        )
    unit = apply(t, eye_like(t.n))
    defect = eye_like(t.k) - unit
    lo = float(np.linalg.eigvalsh(hermitize(defect))[0])
    if lo < -1e-9:
        raise DegenerateInputError(
            f"T(1) has an eigenvalue {1.0 - lo:.12f} above 1; cannot unitalize"
        )
    choi = t.choi + np.kron(eye_like(t.n), hermitize(defect)) / t.n
    return MatLinMap(t.n, t.k, choi, t.cod_blocks)


def direct_sum(maps: list[MatLinMap]) -> MatLinMap:
    """Stack maps with a shared domain into one block-codomain map."""
    if not maps:
        raise DimensionMismatchError("direct sum of nothing")
    n = maps[0].n
    if any(t.n != n for t in maps):
        raise DimensionMismatchError("direct sum needs a shared domain")
    k_tot = sum(t.k for t in maps)
    c4 = np.zeros((n, k_tot, n, k_tot), dtype=complex)
    off = 0
    for t in maps:
        c4[:, off : off + t.k, :, off : off + t.k] = t.c4
        off += t.k
    blocks = tuple(t.k for t in maps)
    return MatLinMap(n, k_tot, c4.reshape(n * k_tot, n * k_tot), blocks)


def coordinate(t: MatLinMap, i: int) -> MatLinMap:
    """The i-th block coordinate of a block-codomain map."""
    if t.cod_blocks is None:
        raise DimensionMismatchError("map has no block structure")
    if not 0 <= i < len(t.cod_blocks):
        raise DimensionMismatchError(f"no block {i} in {len(t.cod_blocks)} blocks")
    off = sum(t.cod_blocks[:i])
    ki = t.cod_blocks[i]
    c4 = t.c4[:, off : off + ki, :, off : off + ki]
    return MatLinMap(t.n, ki, np.ascontiguousarray(c4).reshape(t.n * ki, t.n * ki))


def domain_rotate(t: MatLinMap, u: np.ndarray) -> MatLinMap:
    """T(u . u*): precompose with the automorphism Ad_u of the domain."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (t.n, t.n):
        raise DimensionMismatchError("rotation must be a domain-sized square matrix")
    c4 = np.einsum("ki,kalb,lj->iajb", u, t.c4, u.conj())
    return MatLinMap(t.n, t.k, c4.reshape(t.n * t.k, t.n * t.k), t.cod_blocks)


def codomain_rotate(t: MatLinMap, u: np.ndarray) -> MatLinMap:
    """u T(.) u*: postcompose with conjugation in the codomain."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (t.k, t.k):
        raise DimensionMismatchError("rotation must be a codomain-sized square matrix")
    c4 = np.einsum("aA,iAjB,bB->iajb", u, t.c4, u.conj())
    return MatLinMap(t.n, t.k, c4.reshape(t.n * t.k, t.n * t.k))
