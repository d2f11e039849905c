"""Operator and completely bounded norms of matrix-algebra maps.

Lower bounds come from seeded multi-start ascent with explicit witnesses;
upper bounds come from a certified semidefinite program (or structural
facts: a CP map's cb norm is the norm of its unit image). Amplified maps
are handled through the base Choi tensor at every level, so nothing of
size (level * n * level * k)^2 is ever materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _sdp
from ._random import ginibre, rng_for, unit_vector
from .cpmap import MatLinMap, apply, coordinate, is_cp, kraus
from .errors import (
    DegenerateInputError,
    NoCertificateError,
    NotCompletelyPositiveError,
    SolverError,
)
from .matcore import eye_like, hermitize, op_norm, svd_safe

DEFAULT_RESTARTS = 64
_SDP_EMBED_CAP = 160
# positive_min switches to Kraus-image Grams when the Choi rank is this small
_KRAUS_PATH_CAP = 48
# budget for one leveled image evaluation when picking a default level
_ASCENT_FLOP_CAP = 2e7


@dataclass(frozen=True, eq=False)
class NormEstimate:
    lower: float
    upper: float
    method: str
    witness: np.ndarray | None


@dataclass(frozen=True, eq=False)
class PositiveMinResult:
    value: float
    witness: np.ndarray
    restarts: int


def _leveled_image(c4: np.ndarray, x: np.ndarray, m: int) -> np.ndarray:
    """(id_m (x) T)(x) for x on C^m (x) C^n, from the base Choi tensor."""
    n, k = c4.shape[0], c4.shape[1]
    if m == 1:
        return np.einsum("ij,iajb->ab", x, c4)
    # [st, ij] @ [ij, ab] through BLAS; einsum is an order of magnitude
    # slower at level 16
    xm = np.ascontiguousarray(x.reshape(m, n, m, n).transpose(0, 2, 1, 3)).reshape(
        m * m, n * n
    )
    cm = np.ascontiguousarray(c4.transpose(0, 2, 1, 3)).reshape(n * n, k * k)
    out = (xm @ cm).reshape(m, m, k, k).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(out).reshape(m * k, m * k)


def leveled_apply(t: MatLinMap, x: np.ndarray, m: int) -> np.ndarray:
    """Apply the level-m amplification of t without building its Choi."""
    x = np.asarray(x, dtype=complex)
    if x.shape != (m * t.n, m * t.n):
        raise DegenerateInputError(f"argument must be {m * t.n} x {m * t.n}")
    return _leveled_image(t.c4, x, m)


def _pair_matrix(c4: np.ndarray, u: np.ndarray, w: np.ndarray, m: int) -> np.ndarray:
    """M with <u, T^(m)(X) w> = sum X[(si),(tj)] M[(si),(tj)]."""
    n, k = c4.shape[0], c4.shape[1]
    u4 = u.reshape(m, k)
    w4 = w.reshape(m, k)
    # contract b then a through BLAS
    d = (c4.reshape(n * k * n, k) @ w4.T).reshape(n, k, n, m)
    mm = u4.conj() @ np.ascontiguousarray(d.transpose(1, 0, 2, 3)).reshape(
        k, n * n * m
    )
    mm = mm.reshape(m, n, n, m).transpose(0, 1, 3, 2)
    return np.ascontiguousarray(mm).reshape(m * n, m * n)


def _top_pair(
    y: np.ndarray, w0: np.ndarray | None, sweeps: int
) -> tuple[np.ndarray, np.ndarray, float]:
    """Approximate top singular pair by power iteration, warm-startable.

    The returned value Re <u, y w> never exceeds the true top singular
    value, so downstream certificates stay sound.
    """
    if w0 is None:
        w = y[np.argmax(np.abs(y).sum(axis=1))].conj()
        nrm = np.linalg.norm(w)
        w = w / nrm if nrm > 0 else np.ones(y.shape[1]) / np.sqrt(y.shape[1])
        sweeps += 8
    else:
        w = w0
    u = None
    for _ in range(sweeps):
        u = y @ w
        nu = np.linalg.norm(u)
        if nu < 1e-300:
            break
        u = u / nu
        w = y.conj().T @ u
        nw = np.linalg.norm(w)
        if nw < 1e-300:
            break
        w = w / nw
    val = float(np.real(np.vdot(u, y @ w))) if u is not None else 0.0
    return u, w, val


def _norm_ascent(
    c4: np.ndarray, m: int, restarts: int, seed: int, iters: int = 60, tol: float = 1e-12
) -> tuple[float, np.ndarray]:
    """max ||T^(m)(X)|| over ||X|| <= 1 by alternating exact steps.

    For a fixed singular pair (u, w) the optimal X is the transposed polar
    of the pair matrix, with value its trace norm; for fixed X the best
    pair is the top singular pair of the image. The value ascends
    monotonically, and the reported value is a direct evaluation at the
    returned X, so inexact pairs along the way cannot break soundness.
    Matrix-unit starts are always included; at level 1 the result
    therefore dominates every single-entry evaluation.
    """
    n, k = c4.shape[0], c4.shape[1]
    dim_in, dim_out = m * n, m * k
    exact_pairs = dim_out <= 64

    unit_starts: list[np.ndarray] = []
    for i in range(n):
        for j in range(n):
            x = np.zeros((m * n, m * n), dtype=complex)
            for s in range(m):
                x[s * n + i, s * n + j] = 1.0
            unit_starts.append(x)
    if m > 1 and len(unit_starts) > 4:
        # at amplified levels keep only the most promising units
        scored = []
        for x in unit_starts:
            _, _, v = _top_pair(_leveled_image(c4, x, m), None, 12)
            scored.append(v)
        order = np.argsort(scored)[::-1][:4]
        unit_starts = [unit_starts[i] for i in order]
    starts = unit_starts
    for r in range(restarts):
        rng = rng_for(seed, r)
        g = ginibre(rng, dim_in, dim_in)
        starts.append(g / np.linalg.norm(g, 2))

    runs: list[tuple[float, np.ndarray]] = []
    for x in starts:
        w_warm = None
        est = 0.0
        prev_trace = -np.inf
        for _ in range(iters):
            y = _leveled_image(c4, x, m)
            if exact_pairs:
                uu, ss, vv = svd_safe(y)
                u, w, new_val = uu[:, 0], vv[0].conj(), float(ss[0])
            else:
                u, w, new_val = _top_pair(y, w_warm, 10)
            w_warm = w
            mm = _pair_matrix(c4, u, w, m)
            mu, ms, mv = svd_safe(mm)
            trace_val = float(ms.sum())
            x = (mv.conj().T @ mu.conj().T).T
            est = max(new_val, trace_val)
            if trace_val <= new_val + tol or trace_val <= prev_trace + tol * max(
                1.0, prev_trace
            ):
                break
            prev_trace = trace_val
        runs.append((est, x))

    # exact evaluation only where it can matter; evaluation certifies
    best_est = max(est for est, _ in runs)
    best_val, best_x = -np.inf, None
    for est, x in runs:
        if est < best_est - 1e-4 * (1.0 + best_est):
            continue
        direct = op_norm(_leveled_image(c4, x, m))
        if direct > best_val:
            best_val, best_x = direct, x
    return best_val, best_x


def map_norm(
    t: MatLinMap, restarts: int = DEFAULT_RESTARTS, seed: int = 0, upper: str = "auto"
) -> NormEstimate:
    """Operator norm sup ||T(x)|| / ||x||, certified from below by a witness.

    The upper bound is the cb norm, which always dominates; `upper` picks
    its route as in cb_norm.
    """
    if upper not in ("auto", "split"):
        raise ValueError(f"unknown upper route {upper!r}")
    lower, witness = _leveled_ascent_blocks(t, 1, restarts, seed)
    up, method = _cb_upper_value(t, upper)
    return NormEstimate(lower, max(up, lower), method, witness)


def _leveled_ascent_blocks(
    t: MatLinMap, m: int, restarts: int, seed: int
) -> tuple[float, np.ndarray]:
    """Ascent lower bound at level m, blockwise on block codomains."""
    if t.cod_blocks is None:
        return _norm_ascent(t.c4, m, restarts, seed)
    best_val, best_x = -np.inf, None
    for i in range(len(t.cod_blocks)):
        val, x = _norm_ascent(coordinate(t, i).c4, m, restarts, seed)
        if val > best_val:
            best_val, best_x = val, x
    # re-evaluate on the whole map so the witness reproduces the bound
    y = leveled_apply(t, best_x, m)
    return op_norm(y), best_x


def _psd_split_upper(t: MatLinMap) -> tuple[float, str]:
    """Structural cb upper bound beyond the solver's size cap.

    Hermitian Choi: ||T+(1)|| + ||T-(1)|| from the Jordan split, which
    never exceeds the Choi trace norm. Otherwise the trace norm itself
    (each singular triple is a rank-one Choi piece of cb norm at most its
    weight). Loose, but dimension-robust.
    """
    choi = t.choi
    if np.linalg.norm(choi - choi.conj().T) > 1e-10 * max(1.0, np.linalg.norm(choi)):
        return float(svd_safe(choi, compute_uv=False).sum()), "choi-trace"
    w, vecs = np.linalg.eigh(hermitize(choi))
    v4 = vecs.T.reshape(-1, t.n, t.k)
    pos = np.einsum("m,mia,mib->ab", np.clip(w, 0.0, None), v4, v4.conj())
    neg = np.einsum("m,mia,mib->ab", np.clip(-w, 0.0, None), v4, v4.conj())
    return op_norm(pos) + op_norm(neg), "psd-split"


def _cb_upper_value(t: MatLinMap, route: str = "auto") -> tuple[float, str]:
    if t.cod_blocks is not None:
        vals = [_cb_upper_value(coordinate(t, i), route) for i in range(len(t.cod_blocks))]
        val = max(v for v, _ in vals)
        tags = {tag for _, tag in vals}
        return val, tags.pop() if len(tags) == 1 else "blockwise-mixed"
    check = is_cp(t, tol=1e-12)
    if check.ok:
        return op_norm(apply(t, eye_like(t.n))), "cp-unit"
    if route == "split":
        return _psd_split_upper(t)
    try:
        upper, _ = _sdp.cb_upper(t.choi, t.n, t.k, max_embed_side=_SDP_EMBED_CAP)
        return upper, "sdp"
    except SolverError:
        return _psd_split_upper(t)


def cb_norm(
    t: MatLinMap,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    level: int | None = None,
    upper: str = "auto",
) -> NormEstimate:
    """Completely bounded norm: ascent at a sufficient level from below,
    certified semidefinite value (or structural bound) from above.

    The norm is attained at level min(domain, codomain) already, so the
    default level is that, further capped so one leveled image stays
    affordable on large codomains (the cap only weakens the lower bound,
    never the certificate). Block codomains take the max over blocks.
    `upper` picks the certificate route: "auto" prefers the semidefinite
    value, "split" skips it for the cheap spectral-split bound (still
    certified, and tight when the positive and negative parts are nearly
    disjoint).
    """
    if upper not in ("auto", "split"):
        raise ValueError(f"unknown upper route {upper!r}")
    if level is None:
        b = max(t.cod_blocks) if t.cod_blocks is not None else t.k
        afford = int(np.sqrt(_ASCENT_FLOP_CAP / max(t.n * t.n * t.k * t.k, 1)))
        level = max(1, min(t.n, b, max(afford, 1)))
    lower, witness = _leveled_ascent_blocks(t, level, restarts, seed)
    up, method = _cb_upper_value(t, upper)
    return NormEstimate(lower, max(up, lower), method, witness)


def positive_min(
    t: MatLinMap, m: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0, iters: int = 120
) -> PositiveMinResult:
    """min ||T^(m)(q)|| over rank-1 projections q at level m, for CP maps.

    Projected subgradient descent on the unit sphere of C^m (x) C^n with
    seeded restarts; product-state starts from the eigenvectors of T*(1)
    are included so kernel directions are found exactly. The value is the
    evaluation at the returned witness, hence a certified upper bound on
    the true minimum.
    """
    check = is_cp(t)
    if not check.ok:
        raise NotCompletelyPositiveError(
            f"positive_min needs a CP map; min Choi eigenvalue {check.min_eig:.3e}",
            witness=check.witness,
        )
    c4 = t.c4
    n = t.n
    dim = m * n

    ops = kraus(t)
    if len(ops) <= _KRAUS_PATH_CAP:
        # low Choi rank: the level-m image of vv* is YY* for the stack of
        # Kraus images of v, so its top eigenvalue lives in an s x s Gram
        kst = np.stack(ops)

        def objective(v: np.ndarray) -> tuple[float, np.ndarray]:
            v4 = v.reshape(m, n)
            y = np.einsum("mi,ski->smk", v4, kst)
            gram = np.einsum("smk,tmk->st", y.conj(), y)
            evals, evecs = np.linalg.eigh(hermitize(gram))
            u4 = np.einsum("s,smk->mk", evecs[:, -1], y)
            nrm = np.linalg.norm(u4)
            if nrm > 1e-14:
                u4 = u4 / nrm
            return float(evals[-1]), u4.reshape(-1)

        def gradient(u: np.ndarray, v: np.ndarray) -> np.ndarray:
            u4 = u.reshape(m, t.k)
            v4 = v.reshape(m, n)
            y = np.einsum("mi,ski->smk", v4, kst)
            beta = np.einsum("mk,smk->s", u4.conj(), y)
            return np.einsum("s,mb,sbj->mj", beta, u4, kst.conj()).reshape(-1)
    else:
        def objective(v: np.ndarray) -> tuple[float, np.ndarray]:
            v4 = v.reshape(m, n)
            y = np.einsum("si,tj,iajb->satb", v4, v4.conj(), c4).reshape(m * t.k, m * t.k)
            evals, evecs = np.linalg.eigh(hermitize(y))
            return float(evals[-1]), evecs[:, -1]

        def gradient(u: np.ndarray, v: np.ndarray) -> np.ndarray:
            u4 = u.reshape(m, t.k)
            v4 = v.reshape(m, n)
            return np.einsum("sa,tb,si,iajb->tj", u4.conj(), u4, v4, c4).reshape(-1)

    # product starts e_1 (x) (eigvecs of T*(1)), ascending eigenvalue
    tstar_unit = np.einsum("iaja->ij", c4.conj())
    evals, evecs = np.linalg.eigh(hermitize(tstar_unit))
    starts = []
    for idx in range(n):
        v = np.zeros((m, n), dtype=complex)
        v[0] = evecs[:, idx]
        starts.append(v.reshape(-1))
    for r in range(restarts):
        starts.append(unit_vector(rng_for(seed, 7, r), dim))

    best_val, best_v = np.inf, None
    for v in starts:
        v = v / np.linalg.norm(v)
        val, u = objective(v)
        if val < best_val:
            best_val, best_v = val, v
        step = 0.5
        for it in range(iters):
            grad = gradient(u, v)
            moved = False
            while step > 1e-9:
                cand = v - step * grad
                nrm = np.linalg.norm(cand)
                if nrm < 1e-12:
                    step /= 2.0
                    continue
                cand = cand / nrm
                cval, cu = objective(cand)
                if cval < val - 1e-15:
                    v, val, u = cand, cval, cu
                    moved = True
                    break
                step /= 2.0
            if val < best_val:
                best_val, best_v = val, v
            if not moved:
                break
            step = min(step * 4.0, 0.5)
    return PositiveMinResult(best_val, best_v, len(starts))


def inverse_cb_upper(t: MatLinMap, c: float) -> float:
    """Upper bound (2c - 1)^(-1) on the inverse cb norm from a positive-
    cone minimum c above 1/2."""
    if c <= 0.5:
        raise NoCertificateError(
            f"positive minimum {c!r} is not above 1/2; the criterion does not apply"
        )
    return 1.0 / (2.0 * c - 1.0)


def _superoperator(t: MatLinMap) -> np.ndarray:
    return np.ascontiguousarray(t.c4.transpose(1, 3, 0, 2)).reshape(
        t.k * t.k, t.n * t.n
    )


def inverse_cb_lower(
    t: MatLinMap,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    level: int | None = None,
    iters: int = 80,
) -> NormEstimate:
    """Certified lower bound on ||T^{-1}||_cb from a worst-contracted input.

    Minimizes ||T^(m)(x)|| / ||x|| by subgradient descent at level m
    (default: the domain dimension, which suffices for the inverse's cb
    norm). The witness x has unit norm; the bound is 1 over its measured
    contraction, so it is certified by evaluation. Requires T injective.
    """
    sv = svd_safe(_superoperator(t), compute_uv=False)
    if sv[-1] <= 1e-10:
        raise DegenerateInputError(
            f"map is numerically non-injective (smallest superoperator "
            f"singular value {sv[-1]:.3e})"
        )
    if level is None:
        level = t.n
    c4 = t.c4
    m, n = level, t.n
    dim = m * n

    def ratio(x: np.ndarray) -> float:
        return op_norm(_leveled_image(c4, x, m)) / op_norm(x)

    starts: list[np.ndarray] = []
    ident = eye_like(dim)
    for i in range(min(n, 4)):
        for j in range(min(n, 4)):
            x = np.zeros((m * n, m * n), dtype=complex)
            for s in range(m):
                x[s * n + i, s * n + j] = 1.0 if i != j else (1.0 if s % 2 == 0 else -1.0)
            starts.append(x)
    starts.append(ident - 2.0 * np.diag(np.arange(dim) % 2).astype(complex))
    # the worst-contracted input is the pseudo-inverse image of the
    # pseudo-inverse's own norm witness; ascend on that map to seed the
    # right basin (exactly optimal when T is a bijection)
    pinv_sup = np.linalg.pinv(_superoperator(t))
    c4_pinv = pinv_sup.reshape(n, n, t.k, t.k).transpose(2, 0, 3, 1)
    _, y_best = _norm_ascent(c4_pinv, m, max(4, restarts // 4), seed + 1)
    starts.append(_leveled_image(c4_pinv, y_best, m))
    for r in range(restarts):
        g = ginibre(rng_for(seed, 13, r), dim, dim)
        starts.append(g)

    best_ratio, best_x = np.inf, None
    for x in starts:
        x = x / np.linalg.norm(x, 2)
        val = ratio(x)
        if val < best_ratio:
            best_ratio, best_x = val, x
        step = 0.3
        for it in range(iters):
            y = _leveled_image(c4, x, m)
            yu, ys, yv = svd_safe(y)
            u, w = yu[:, 0], yv[0].conj()
            num_grad = _pair_matrix(c4, u, w, m).conj()
            xu, xs, xv = svd_safe(x)
            den_grad = np.outer(xu[:, 0], xv[0])
            nval, dval = float(ys[0]), float(xs[0])
            grad = (num_grad * dval - nval * den_grad) / (dval * dval)
            moved = False
            while step > 1e-10:
                cand = x - step * grad
                cnorm = np.linalg.norm(cand, 2)
                if cnorm < 1e-12:
                    step /= 2.0
                    continue
                cand = cand / cnorm
                cval = ratio(cand)
                if cval < val - 1e-15:
                    x, val = cand, cval
                    moved = True
                    break
                step /= 2.0
            if val < best_ratio:
                best_ratio, best_x = val, x
            if not moved:
                break
            step = min(step * 4.0, 0.3)

    witness = best_x / op_norm(best_x)
    contraction = op_norm(_leveled_image(c4, witness, m))
    if contraction <= 1e-12:
        raise DegenerateInputError("witness was annihilated; map is not injective")
    lower = 1.0 / contraction
    return NormEstimate(lower, np.inf, "descent-witness", witness)
