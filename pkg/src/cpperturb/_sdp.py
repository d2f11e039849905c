"""Semidefinite plumbing over the clarabel cone solver.

Two programs live here: the exact characterization of the completely
bounded norm of a map given by its Choi matrix, and the optimal-state
program maximizing the smallest eigenvalue of a Gram form over density
matrices. Complex Hermitian constraints are embedded as real symmetric
ones via [[Re, -Im], [Im, Re]].

Solver output is never trusted blindly: each routine moves the returned
point to an exactly feasible one (shifting by the measured infeasibility,
or projecting onto the density simplex) and recomputes the objective by
dense eigendecomposition, so every reported bound is certified.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

import clarabel

from .errors import SolverError
from .matcore import hermitize

_SQ2 = np.sqrt(2.0)


def _tri_index(i: int, j: int) -> int:
    """svec position of upper-triangle entry (i, j), i <= j, column-stacked."""
    return j * (j + 1) // 2 + i


def _svec(s: np.ndarray) -> np.ndarray:
    """Column-stacked scaled upper triangle of a real symmetric matrix."""
    d = s.shape[0]
    out = np.empty(d * (d + 1) // 2)
    pos = 0
    for j in range(d):
        for i in range(j + 1):
            out[pos] = s[i, j] * (_SQ2 if i != j else 1.0)
            pos += 1
    return out


def _embed(h: np.ndarray) -> np.ndarray:
    """Real symmetric embedding of a complex Hermitian matrix."""
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


def _herm_entry_rows(r: int, c: int, kind: str, d: int) -> list[tuple[int, float]]:
    """Triangle rows touched by one Hermitian degree of freedom.

    The degree of freedom sits at (r, c) of a d x d Hermitian matrix:
    `diag` is the real diagonal entry (r == c), `re`/`im` the real and
    imaginary parts of the off-diagonal pair (r < c). Returns (svec row,
    coefficient) pairs in the embedded 2d x 2d triangle.
    """
    if kind == "diag":
        return [(_tri_index(r, r), 1.0), (_tri_index(d + r, d + r), 1.0)]
    if kind == "re":
        return [(_tri_index(r, c), _SQ2), (_tri_index(d + r, d + c), _SQ2)]
    if kind == "im":
        # top-right embedding block carries -Im
        return [(_tri_index(r, d + c), -_SQ2), (_tri_index(c, d + r), _SQ2)]
    raise ValueError(kind)


def _herm_components(d: int) -> list[tuple[int, int, str]]:
    """Real coordinates of a d x d Hermitian matrix, in a fixed order."""
    comps = [(i, i, "diag") for i in range(d)]
    for j in range(d):
        for i in range(j):
            comps.append((i, j, "re"))
            comps.append((i, j, "im"))
    return comps


def _assemble_hermitian(coords: np.ndarray, d: int) -> np.ndarray:
    h = np.zeros((d, d), dtype=complex)
    for val, (r, c, kind) in zip(coords, _herm_components(d)):
        if kind == "diag":
            h[r, r] += val
        elif kind == "re":
            h[r, c] += val
            h[c, r] += val
        else:
            h[r, c] += 1j * val
            h[c, r] += -1j * val
    return h


def _solve(
    a: sparse.csc_matrix,
    b: np.ndarray,
    q: np.ndarray,
    cones,
    tol: float = 1e-11,
    max_iter: int = 200,
) -> np.ndarray:
    p = sparse.csc_matrix((len(q), len(q)))
    sol = None
    # Ruiz equilibration occasionally stalls on nearly degenerate Gram
    # data at iteration 1; the same problem solves cleanly without it,
    # so a failed first attempt is retried unequilibrated.
    for equilibrate in (True, False):
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.tol_feas = tol
        settings.max_iter = max_iter
        settings.equilibrate_enable = equilibrate
        solver = clarabel.DefaultSolver(p, q, a, b, cones, settings)
        sol = solver.solve()
        if str(sol.status) in ("Solved", "AlmostSolved"):
            return np.asarray(sol.x)
    raise SolverError(
        f"cone solver stopped with status {sol.status}; "
        f"primal residual {sol.r_prim:.3e}, dual residual {sol.r_dual:.3e}"
    )


def _herm_image_dirs(g4: np.ndarray):
    """Hermitian image directions of a Hermitian-variable linear map.

    g4[mu, nu, a, b] sends the Hermitian variable H (side rho) to the
    Hermitian image M[a, b] = sum_{mu nu} H[mu, nu] g4[mu, nu, a, b].
    Yields (coordinate index, m_dir) over the fixed Hermitian coordinate
    order of H.
    """
    rho = g4.shape[0]
    for v_idx, (r, c, kind) in enumerate(_herm_components(rho)):
        if kind == "diag":
            m_dir = g4[r, r]
        elif kind == "re":
            m_dir = g4[r, c] + g4[c, r]
        else:
            m_dir = 1j * (g4[r, c] - g4[c, r])
        yield v_idx, hermitize(m_dir)


def _emit_herm_image(rows, cols, vals, offset, var_base, g4, k, sign):
    """Append A entries for sign * M(H) inside a k x k Hermitian cone block."""
    for v_idx, m_dir in _herm_image_dirs(g4):
        for i in range(k):
            if m_dir[i, i].real != 0.0:
                for row, coef in _herm_entry_rows(i, i, "diag", k):
                    rows.append(offset + row)
                    cols.append(var_base + v_idx)
                    vals.append(sign * coef * m_dir[i, i].real)
        for j_col in range(k):
            for i in range(j_col):
                if m_dir[i, j_col].real != 0.0:
                    for row, coef in _herm_entry_rows(i, j_col, "re", k):
                        rows.append(offset + row)
                        cols.append(var_base + v_idx)
                        vals.append(sign * coef * m_dir[i, j_col].real)
                if m_dir[i, j_col].imag != 0.0:
                    for row, coef in _herm_entry_rows(i, j_col, "im", k):
                        rows.append(offset + row)
                        cols.append(var_base + v_idx)
                        vals.append(sign * coef * m_dir[i, j_col].imag)


def cb_upper(
    choi: np.ndarray, n: int, k: int, max_embed_side: int = 160
) -> tuple[float, float]:
    """Certified upper bound on the cb norm of the map with this Choi matrix.

    Solves min s over Hermitian P, Q with [[P, J], [J*, Q]] >= 0 and the
    domain partial traces of P and Q both at most s. The program is
    compressed onto the spectral support of J first; this is exact, since
    Schur complements let optimal P and Q live on range(J). The solver
    point is shifted to exact feasibility before the objective is
    re-evaluated, so the first return is a true upper bound; the second is
    the raw solver objective (a near-optimal reference).

    The PSD cone's interior-point cost grows as the eighth power of the
    support dimension; `max_embed_side` caps the embedded block (raising
    SolverError) so callers can fall back to structural bounds.
    """
    d = n * k
    j = np.asarray(choi, dtype=complex)
    herm_defect = float(np.linalg.norm(j - j.conj().T, 2))
    scale = max(float(np.linalg.norm(j, 2)), 1e-30)
    if herm_defect > 1e-10 * scale:
        raise SolverError("cb program expects the Choi matrix of a Hermitian-preserving map")

    evals, evecs = np.linalg.eigh(hermitize(j))
    keep = np.abs(evals) > 1e-12 * scale
    slack = float(np.abs(evals[~keep]).sum())
    rho = int(keep.sum())
    if rho == 0:
        return slack, 0.0
    if 4 * rho > max_embed_side:
        raise SolverError(
            f"support dimension {rho} needs an embedded PSD block of side {4 * rho}, "
            f"beyond the {max_embed_side} cap"
        )
    u = evecs[:, keep]  # d x rho frame of the support
    j_small = np.diag(evals[keep]).astype(complex)
    # tr_n(U H U*)[a, b] = sum_{mu nu} H[mu, nu] g4[mu, nu, a, b]
    u3 = u.reshape(n, k, rho)
    g4 = np.ascontiguousarray(np.einsum("iam,ibn->mnab", u3, u3.conj()))

    comps = _herm_components(rho)
    nv = len(comps)
    n_var = 1 + 2 * nv  # s, then P, then Q on the support

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b_parts: list[np.ndarray] = []
    cones = []
    offset = 0

    # big block [[P, J], [J*, Q]] >= 0 on the support, embedded side 4*rho
    side = 2 * rho
    zc = np.zeros((side, side), dtype=complex)
    zc[:rho, rho:] = j_small
    zc[rho:, :rho] = j_small.conj().T
    b_parts.append(_svec(_embed(zc)))
    for v_idx, (r, c, kind) in enumerate(comps):
        for row, coef in _herm_entry_rows(r, c, kind, side):
            rows.append(offset + row)
            cols.append(1 + v_idx)
            vals.append(-coef)
        for row, coef in _herm_entry_rows(rho + r, rho + c, kind, side):
            rows.append(offset + row)
            cols.append(1 + nv + v_idx)
            vals.append(-coef)
    cones.append(clarabel.PSDTriangleConeT(2 * side))
    offset += (2 * side) * (2 * side + 1) // 2

    # s*1_k - tr_n(U P U*) >= 0, and the same for Q
    for which in (0, 1):
        b_parts.append(np.zeros(2 * k * (2 * k + 1) // 2))
        _emit_herm_image(rows, cols, vals, offset, 1 + which * nv, g4, k, sign=1.0)
        for i in range(k):
            for row, coef in _herm_entry_rows(i, i, "diag", k):
                rows.append(offset + row)
                cols.append(0)
                vals.append(-coef)
        cones.append(clarabel.PSDTriangleConeT(2 * k))
        offset += 2 * k * (2 * k + 1) // 2

    a = sparse.csc_matrix((vals, (rows, cols)), shape=(offset, n_var))
    b = np.concatenate(b_parts)
    q = np.zeros(n_var)
    q[0] = 1.0

    x = _solve(a, b, q, cones)
    raw = float(x[0])

    p_mat = hermitize(_assemble_hermitian(x[1 : 1 + nv], rho))
    q_mat = hermitize(_assemble_hermitian(x[1 + nv :], rho))
    block = np.zeros((side, side), dtype=complex)
    block[:rho, :rho] = p_mat
    block[:rho, rho:] = j_small
    block[rho:, :rho] = j_small.conj().T
    block[rho:, rho:] = q_mat
    lift = max(0.0, -float(np.linalg.eigvalsh(hermitize(block))[0])) + 1e-13
    tr_p = np.einsum("mn,mnab->ab", p_mat + lift * np.eye(rho), g4)
    tr_q = np.einsum("mn,mnab->ab", q_mat + lift * np.eye(rho), g4)
    certified = 0.5 * (
        float(np.linalg.eigvalsh(hermitize(tr_p))[-1])
        + float(np.linalg.eigvalsh(hermitize(tr_q))[-1])
    )
    return certified + slack, raw


def state_opt(gram_blocks: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Maximize the least eigenvalue of a state-dependent Gram form.

    gram_blocks[i, j] is the N x N matrix whose trace against the state
    gives entry (i, j); it must satisfy gram_blocks[j, i] = gram_blocks[i,
    j]* so the form is Hermitian. Returns (certified value, state, raw
    solver objective) where the state is projected onto the exact density
    simplex and the certified value is recomputed from it.
    """
    blocks = np.asarray(gram_blocks, dtype=complex)
    n = blocks.shape[0]
    big = blocks.shape[2]
    comps = _herm_components(big)
    nv = len(comps)
    n_var = 1 + nv  # t, then rho

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b_parts: list[np.ndarray] = []
    cones = []
    offset = 0

    # rho >= 0
    b_parts.append(np.zeros(2 * big * (2 * big + 1) // 2))
    for v_idx, (r, c, kind) in enumerate(comps):
        for row, coef in _herm_entry_rows(r, c, kind, big):
            rows.append(offset + row)
            cols.append(1 + v_idx)
            vals.append(-coef)
    cones.append(clarabel.PSDTriangleConeT(2 * big))
    offset += 2 * big * (2 * big + 1) // 2

    # M(rho) - t >= 0 with M(rho)[i,j] = tr(rho B_ij) = sum rho[a,b] B_ij[b,a]
    b_parts.append(np.zeros(2 * n * (2 * n + 1) // 2))
    g4 = np.ascontiguousarray(blocks.transpose(3, 2, 0, 1))
    _emit_herm_image(rows, cols, vals, offset, 1, g4, n, sign=-1.0)
    for i in range(n):
        for row, coef in _herm_entry_rows(i, i, "diag", n):
            rows.append(offset + row)
            cols.append(0)
            vals.append(coef)
    cones.append(clarabel.PSDTriangleConeT(2 * n))
    offset += 2 * n * (2 * n + 1) // 2

    # trace rho = 1
    b_parts.append(np.ones(1))
    for v_idx, (r, c, kind) in enumerate(comps):
        if kind == "diag":
            rows.append(offset)
            cols.append(1 + v_idx)
            vals.append(1.0)
    cones.append(clarabel.ZeroConeT(1))
    offset += 1

    a = sparse.csc_matrix((vals, (rows, cols)), shape=(offset, n_var))
    b = np.concatenate(b_parts)
    q = np.zeros(n_var)
    q[0] = -1.0  # maximize t

    # every returned number is recomputed from the projected state, so a
    # looser solve only costs optimality slack, never soundness
    x = _solve(a, b, q, cones, tol=1e-9)
    raw = float(x[0])

    rho = hermitize(_assemble_hermitian(x[1:], big))
    evals, evecs = np.linalg.eigh(rho)
    evals = np.clip(evals, 0.0, None)
    if evals.sum() <= 0.0:
        raise SolverError("state collapsed to zero after projection")
    evals = evals / evals.sum()
    rho = hermitize((evecs * evals) @ evecs.conj().T)
    m = np.einsum("ab,ijba->ij", rho, blocks)
    value = float(np.linalg.eigvalsh(hermitize(m))[0])
    return value, rho, raw
