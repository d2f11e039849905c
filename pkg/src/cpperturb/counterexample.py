"""Dimension dependence made concrete: a well-inverted map far from embeddings.

A finite family of corank-1 projections p_1..p_r in M_n (n > 4) indexes the
map

    phi(e_ij) = e_ij (x) p_i p_j    on    M_r -> M_r (x) M_n.

Its Choi matrix factors as A A* with A = sum_i e_i1 (x) e_i1 (x) p_i, so phi
is CP, and phi(1) = diag(p_1, ..., p_r) is a projection, so phi is a complete
contraction. Under phi, a rank-1 projection at any amplification level keeps
norm exactly lambda_max(sum_j c_j p_j), where c is the coefficient marginal
over the domain index; the trace pins that at (n-1)/n or more, so the inverse
is completely bounded. Yet every exact complete order embedding psi admits a
one-matrix-unit, one-vector evaluation pushing ||psi - phi|| up toward 1 when
the family covers the corank-1 projections finely: a good inverse does not
make an embedding nearby.

Family sizes explode with n, so the dense map is avoided wherever possible:
level-k rank-1 norms reduce to n x n eigenproblems, the Choi spectrum to the
spectrum of sum_i p_i, and the dense MatLinMap is materialized only when its
Choi side stays small.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._random import ginibre, haar_isometry, rng_for, unit_vector
from .cpmap import (
    EmbeddingCertificate,
    MatLinMap,
    apply,
    from_kraus,
    is_cp,
    isometry_embedding,
)
from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    HypothesisFailureError,
    NoCertificateError,
)
from .matcore import Projection, eye_like, hermitize, op_norm
from .perturb import _hom_isometry, make_certificate

# Largest Choi side we are willing to hold densely.
DENSE_CHOI_CAP = 4096

_KERNEL_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class CoveringEstimate:
    """Sampled covering radius: max over fresh draws of the family distance."""

    value: float
    sample_count: int
    seed: int


@dataclass(frozen=True, eq=False)
class ProjectionFamily:
    """Corank-1 projections in M_n, kept pairwise farther than a target.

    Member i is 1 - k_i k_i* for the unit kernel vector k_i; distances
    between members reduce to kernel overlaps, which is what every search
    here runs on. `last_accept_draw` close to `draws_used` means the greedy
    pass was still finding room when the budget ran out, so the family is
    probably not saturated at its target radius.
    """

    n: int
    rank: int
    members: list[Projection]
    kernel_vectors: np.ndarray
    covering_radius_estimate: CoveringEstimate
    target_radius: float
    draws_used: int
    last_accept_draw: int

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True, eq=False)
class SeparationRecord:
    """One candidate's certified distance evaluation.

    `bound` is ||(psi - phi)(e_{i1})|| evaluated from below at the witness
    index i and the vector carried by the candidate's homomorphic corner;
    `nearest_*` locate the family member closest to the corank-1 projection
    the construction points at, so bound >= 1 - nearest_distance - slack.
    """

    bound: float
    witness_index: int
    witness_overlap: float
    hom_value: float
    nearest_index: int
    nearest_distance: float
    anchor_norm: float


@dataclass(frozen=True, eq=False)
class CounterexampleInstance:
    """The indexed map with its structural certificates attached.

    `map` is the dense MatLinMap when r*r*n <= DENSE_CHOI_CAP and None
    beyond that; `choi_min_eig` and `unit_defect` are computed structurally
    either way (the nonzero Choi spectrum is the spectrum of sum_i p_i, and
    phi(1) is blockwise the members themselves).
    """

    n: int
    r: int
    family: ProjectionFamily
    map: MatLinMap | None
    inverse_bound: float
    choi_min_eig: float
    unit_defect: float
    separation_records: list[SeparationRecord] = field(default_factory=list)

    def corner_block(self, i: int, j: int) -> np.ndarray:
        """The n x n block p_i p_j sitting at codomain position (i, j)."""
        pm = self.family.members
        return pm[i].matrix @ pm[j].matrix


def corank1(v: np.ndarray) -> Projection:
    """Projection onto the orthogonal complement of the line through v."""
    v = np.asarray(v, dtype=complex).reshape(-1)
    nrm = np.linalg.norm(v)
    if nrm < 1e-14:
        raise DegenerateInputError("zero vector has no complement line")
    u = v / nrm
    n = u.size
    return Projection(hermitize(eye_like(n) - np.outer(u, u.conj())), n - 1)


def _pair_distance(u: np.ndarray, v: np.ndarray) -> float:
    # ||(1-uu*) - (1-vv*)|| = ||uu* - vv*|| = sqrt(1 - |<u,v>|^2) for unit u, v
    return float(np.sqrt(max(1.0 - abs(np.vdot(u, v)) ** 2, 0.0)))


def nearest_member(family: ProjectionFamily, kernel: np.ndarray) -> tuple[float, int]:
    """Distance from the corank-1 projection with the given kernel line.

    Returns (distance, member index); ties go to the lowest index.
    """
    kernel = np.asarray(kernel, dtype=complex).reshape(-1)
    if kernel.size != family.n:
        raise DimensionMismatchError(f"kernel vector must have length {family.n}")
    nrm = np.linalg.norm(kernel)
    if nrm < 1e-14:
        raise DegenerateInputError("zero kernel vector")
    overlaps = np.abs(family.kernel_vectors.conj() @ (kernel / nrm)) ** 2
    dists = np.sqrt(np.clip(1.0 - overlaps, 0.0, None))
    idx = int(np.argmin(dists))
    return float(dists[idx]), idx


def projection_family(
    n: int,
    target_radius: float,
    seed: int = 0,
    budget: int = 500,
    estimate_samples: int = 10_000,
) -> ProjectionFamily:
    """Greedy packing of corank-1 projections, then a sampled covering check.

    Draws `budget` uniform corank-1 projections (complements of Haar unit
    vectors) and keeps each one farther than `target_radius` from everything
    kept so far. The covering radius is then estimated as the maximum family
    distance over `estimate_samples` fresh draws; that estimate is honest
    whether or not the budget sufficed, and `last_accept_draw` says whether
    it plausibly did.
    """
    if n <= 4:
        raise HypothesisFailureError("corank-1 families need n > 4")
    if target_radius <= 0.0:
        raise DegenerateInputError("target radius must be positive")
    if budget < 1:
        raise DegenerateInputError("budget must allow at least one draw")
    rng = rng_for(seed, 71)
    kept: list[np.ndarray] = []
    last_accept = -1
    for draw in range(budget):
        v = unit_vector(rng, n)
        if all(_pair_distance(v, u) > target_radius for u in kept):
            kept.append(v)
            last_accept = draw
    kernels = np.stack(kept)
    members = [corank1(u) for u in kept]

    rng2 = rng_for(seed, 72)
    worst = 0.0
    for _ in range(estimate_samples):
        v = unit_vector(rng2, n)
        worst = max(worst, min(_pair_distance(v, u) for u in kept))
    return ProjectionFamily(
        n=n,
        rank=n - 1,
        members=members,
        kernel_vectors=kernels,
        covering_radius_estimate=CoveringEstimate(
            value=float(worst), sample_count=estimate_samples, seed=seed
        ),
        target_radius=float(target_radius),
        draws_used=budget,
        last_accept_draw=last_accept,
    )


def family_from_kernels(
    kernels: np.ndarray, seed: int = 0, estimate_samples: int = 10_000
) -> ProjectionFamily:
    """Family with prescribed kernel directions, covering estimated as usual.

    Rows are normalized; the order is kept, so the first row becomes the
    anchor member. Useful for engineered nets (an orthonormal kernel
    basis has exactly one avoidance direction pattern and known floors)
    and for rebuilding a family from a stored listing.
    """
    kernels = np.asarray(kernels, dtype=complex)
    if kernels.ndim != 2:
        raise DimensionMismatchError("kernels must be a 2d array of row vectors")
    r, n = kernels.shape
    if n <= 4:
        raise HypothesisFailureError("corank-1 families need n > 4")
    if r < 1:
        raise DegenerateInputError("at least one kernel row is needed")
    norms = np.linalg.norm(kernels, axis=1)
    if norms.min() < _KERNEL_TOL:
        raise DegenerateInputError("kernel rows must be nonzero")
    kernels = kernels / norms[:, None]
    members = [corank1(u) for u in kernels]
    rng = rng_for(seed, 72)
    worst = 0.0
    for _ in range(estimate_samples):
        v = unit_vector(rng, n)
        worst = max(worst, min(_pair_distance(v, u) for u in kernels))
    return ProjectionFamily(
        n=n,
        rank=n - 1,
        members=members,
        kernel_vectors=kernels,
        covering_radius_estimate=CoveringEstimate(
            value=float(worst), sample_count=estimate_samples, seed=seed
        ),
        target_radius=0.0,
        draws_used=r,
        last_accept_draw=r - 1,
    )


def build_counterexample(family: ProjectionFamily) -> CounterexampleInstance:
    """Assemble the indexed map with its structural certificates.

    The Choi matrix is A A* for A = sum_i e_i1 (x) e_i1 (x) p_i, and A*A
    collapses to sum_i p_i, so complete positivity is certified by the
    smallest eigenvalue of that n x n sum; phi(1) = diag(p_i) is idempotent
    exactly when every member is. The dense map is attached only when its
    Choi side fits under DENSE_CHOI_CAP, and then re-checked directly.
    """
    n, r = family.n, family.size
    if r == 0:
        raise DegenerateInputError("empty family")
    if n <= 4:
        raise HypothesisFailureError("the construction needs n > 4")
    mats = [p.matrix for p in family.members]
    kernel_gram = np.einsum("ia,ib->ab", family.kernel_vectors, family.kernel_vectors.conj())
    member_sum = r * eye_like(n) - kernel_gram
    choi_min = min(0.0, float(np.linalg.eigvalsh(hermitize(member_sum))[0]))
    unit_defect = max(op_norm(m @ m - m) for m in mats)

    dense = None
    if r * r * n <= DENSE_CHOI_CAP:
        c4 = np.zeros((r, r * n, r, r * n), dtype=complex)
        for i in range(r):
            for j in range(r):
                c4[i, i * n : (i + 1) * n, j, j * n : (j + 1) * n] = mats[i] @ mats[j]
        dense = MatLinMap(r, r * n, c4.reshape(r * r * n, r * r * n))
        check = is_cp(dense, tol=1e-9)
        choi_min = min(choi_min, float(check.min_eig))
        unit = apply(dense, eye_like(r))
        unit_defect = max(unit_defect, op_norm(unit @ unit - unit))

    return CounterexampleInstance(
        n=n,
        r=r,
        family=family,
        map=dense,
        inverse_bound=n / (n - 4.0),
        choi_min_eig=choi_min,
        unit_defect=float(unit_defect),
    )


def rank1_value(family: ProjectionFamily, weights: np.ndarray) -> float:
    """Image norm of a rank-1 projection with the given coefficient marginal.

    ||phi^(k)(p)|| = lambda_max(sum_j w_j p_j) for every level k whose
    rank-1 p has marginal w over the domain index, which collapses to
    1 - lambda_min(sum_j w_j k_j k_j*) in kernel form. The trace of the
    kernel sum is 1, so the value never drops below (n-1)/n.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != family.size:
        raise DimensionMismatchError(f"weights must have length {family.size}")
    if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
        raise DegenerateInputError("weights must be a probability vector")
    kers = family.kernel_vectors
    kernel_part = np.einsum("j,ja,jb->ab", w, kers, kers.conj())
    return 1.0 - float(np.linalg.eigvalsh(hermitize(kernel_part))[0])


def verify_inverse_bound(
    instance: CounterexampleInstance, trials: int = 1000, seed: int = 0
) -> float:
    """Worst sampled rank-1 image norm over amplification levels up to 3.

    Samples coefficient blocks at levels 1..3, converts each to its
    marginal, and evaluates rank1_value; a multiplicative-weights ascent on
    lambda_min(sum w_j k_j k_j*) then pushes the worst case further down.
    The returned empirical minimum certifies nothing by itself but, by the
    trace floor, can never land below (n-1)/n; the instance's attached
    inverse_bound only needs (n-2)/n.
    """
    fam = instance.family
    kers = fam.kernel_vectors
    rng = rng_for(seed, 74)
    r = fam.size

    def kernel_min(w: np.ndarray) -> tuple[float, np.ndarray]:
        kernel_part = np.einsum("j,ja,jb->ab", w, kers, kers.conj())
        vals, vecs = np.linalg.eigh(hermitize(kernel_part))
        return float(vals[0]), vecs[:, 0]

    best = np.inf
    best_w = np.full(r, 1.0 / r)
    for t in range(trials):
        level = 1 + t % 3
        alpha = ginibre(rng, level, r)
        w = (np.abs(alpha) ** 2).sum(axis=0)
        w /= w.sum()
        bottom, _ = kernel_min(w)
        if 1.0 - bottom < best:
            best, best_w = 1.0 - bottom, w

    # ascend lambda_min over the simplex: supergradient is |<v_min, k_j>|^2
    w = best_w.copy()
    for _ in range(80):
        bottom, v = kernel_min(w)
        best = min(best, 1.0 - bottom)
        grad = np.abs(kers.conj() @ v) ** 2
        w = w * np.exp(2.0 * (grad - grad.max()))
        total = w.sum()
        if total < 1e-300:
            break
        w /= total
    bottom, _ = kernel_min(w)
    return float(min(best, 1.0 - bottom))


def anchored_state_value(
    instance: CounterexampleInstance, iters: int = 400, seed: int = 0
) -> tuple[float, float]:
    """Certified bracket on the best mixed-state Gram floor of the map.

    The Gram matrix of the unit images against any codomain state is
    diagonal here, with entries tr(sigma p_1 p_i p_1) once the state is
    pushed into its only useful corner, so the optimal-state value of the
    instance equals max over densities sigma on C^n of the worst entry.
    The lower end is a direct evaluation (the flat state p_1/(n-1) already
    guarantees (n-2)/(n-1)); the upper end is lambda_max of a mixture
    found by multiplicative-weights descent. Both ends are certificates;
    only the gap between them is heuristic.
    """
    fam = instance.family
    n, r = instance.n, fam.size
    p1 = fam.members[0].matrix
    anchors = np.stack([p1 @ p.matrix @ p1 for p in fam.members])

    def floor_of(sigma: np.ndarray) -> float:
        return float(np.einsum("ab,iba->i", sigma, anchors).real.min())

    lower = floor_of(p1 / (n - 1.0))
    mu = np.full(r, 1.0 / r)
    upper = np.inf
    avg = np.zeros((n, n), dtype=complex)
    for it in range(1, iters + 1):
        mix = hermitize(np.einsum("i,iab->ab", mu, anchors))
        vals, vecs = np.linalg.eigh(mix)
        upper = min(upper, float(vals[-1]))
        top = vecs[:, -1]
        # the averaged top eigenprojections track the optimal state
        avg += np.outer(top, top.conj())
        if it % 20 == 0 or it == iters:
            lower = max(lower, floor_of(hermitize(avg / it)))
        grad = np.real(np.einsum("a,iab,b->i", top.conj(), anchors, top))
        mu = mu * np.exp(-3.0 * (grad - grad.min()))
        mu /= mu.sum()
    return lower, max(upper, lower)


def anchored_vector_value(
    instance: CounterexampleInstance, restarts: int = 32, seed: int = 0, iters: int = 300
) -> float:
    """Best vector-state Gram floor of the map, by sphere ascent on C^n.

    Restricting the optimal-state problem to rank-1 states collapses it to
    max over unit w of min_i ||p_i p_1 w||^2: the state has to dodge every
    kernel direction at once. The returned value is an evaluation at the
    best vector found, so it certifies the vector-state optimum from
    below. A family that covers the corank-1 projections with radius d
    caps the true value at d^2, far below the mixed-state floor, which is
    the whole point: no single vector survives a fine net.
    """
    fam = instance.family
    n = instance.n
    p1 = fam.members[0].matrix
    kers = fam.kernel_vectors
    best = 0.0
    for rr in range(restarts):
        w = unit_vector(rng_for(seed, 76, rr), n)
        rate = 0.5
        for _ in range(iters):
            h = p1 @ w
            vals = np.linalg.norm(h) ** 2 - np.abs(kers.conj() @ h) ** 2
            i = int(np.argmin(vals))
            grad = p1 @ (h - kers[i] * np.vdot(kers[i], h))
            cand = w + rate * grad
            cand /= np.linalg.norm(cand)
            h2 = p1 @ cand
            vals2 = np.linalg.norm(h2) ** 2 - np.abs(kers.conj() @ h2) ** 2
            if float(vals2.min()) > float(vals.min()):
                w = cand
            else:
                rate *= 0.7
                if rate < 1e-8:
                    break
        h = p1 @ w
        vals = np.linalg.norm(h) ** 2 - np.abs(kers.conj() @ h) ** 2
        best = max(best, float(vals.min()))
    return best


def random_coe(
    r: int, n: int, seed: int = 0, tail_scale: float = 0.5, cert_samples: int = 50
) -> EmbeddingCertificate:
    """Seeded exact complete order embedding M_r -> M_r (x) M_n.

    An isometric conjugation carries the identity-representation corner; a
    CP remainder into the orthogonal corner (scaled to tail_scale on the
    unit) rides along so candidates are not secretly unital. tail_scale=0
    gives a plain *-monomorphism.
    """
    cod = r * n
    if cod < 2 * r:
        raise DimensionMismatchError("codomain leaves no room for an orthogonal remainder")
    rng = rng_for(seed, 75)
    u = haar_isometry(rng, cod, r)
    psi = isometry_embedding(u)
    if tail_scale > 0.0:
        comp, _ = np.linalg.qr(
            (np.eye(cod) - u @ u.conj().T) @ ginibre(rng, cod, cod - r)
        )
        kraus = [comp @ ginibre(rng, cod - r, r) for _ in range(2)]
        tail = from_kraus(r, cod, kraus)
        tail_unit = op_norm(apply(tail, eye_like(r)))
        psi = psi + (tail_scale / tail_unit) * tail
    split = Projection(hermitize(u @ u.conj().T), r)
    return make_certificate(psi, split, seed=seed, samples=cert_samples)


def separation_record(
    instance: CounterexampleInstance,
    cert: EmbeddingCertificate,
    remember: bool = True,
) -> SeparationRecord:
    """Certified distance evaluation for one candidate embedding.

    Reads the vector xi carried by the candidate's homomorphic corner,
    anchors at h = p_1 xi_1 (first codomain block of xi, pushed through
    member 0), and evaluates ||psi(e_{i1}) xi|| - ||p_i h|| over the whole
    family; the best index is the certified witness. The family member
    nearest the complement of the line through h is recorded alongside,
    because ||p_i h|| <= ||q - p_i|| there, giving bound >= 1 - distance
    for exact candidates. Appends itself to the instance's records unless
    told otherwise.
    """
    fam = instance.family
    r, n = instance.r, instance.n
    m = cert.map
    if (m.n, m.k) != (r, r * n):
        raise DimensionMismatchError(
            f"candidate must map M_{r} into M_{r * n} to compare with this instance"
        )
    if cert.hom_residual > 1e-6:
        raise NoCertificateError(
            f"candidate hom residual {cert.hom_residual:.3e} is not embedding-grade"
        )
    g = _hom_isometry(cert)
    xi = g[:, 0]
    xi1 = xi.reshape(r, n)[0]
    k1 = fam.kernel_vectors[0]
    h = xi1 - k1 * np.vdot(k1, xi1)
    hn = float(np.linalg.norm(h))

    # ||psi(e_{i1}) xi|| for every i, straight from the Choi blocks
    hom_vals = np.linalg.norm(m.c4[:, :, 0, :] @ xi, axis=1)
    inner = fam.kernel_vectors.conj() @ h
    overlaps = np.sqrt(np.clip(hn**2 - np.abs(inner) ** 2, 0.0, None))
    margins = hom_vals - overlaps
    i_star = int(np.argmax(margins))

    if hn <= _KERNEL_TOL:
        near_d, near_i = 0.0, 0
    else:
        near_d, near_i = nearest_member(fam, h)
    rec = SeparationRecord(
        bound=float(margins[i_star]),
        witness_index=i_star,
        witness_overlap=float(overlaps[i_star]),
        hom_value=float(hom_vals[i_star]),
        nearest_index=near_i,
        nearest_distance=near_d,
        anchor_norm=hn,
    )
    if remember:
        instance.separation_records.append(rec)
    return rec


def separation_lower_bound(
    instance: CounterexampleInstance, cert: EmbeddingCertificate
) -> float:
    """Certified lower bound on ||psi - phi|| for one candidate embedding."""
    return separation_record(instance, cert).bound
