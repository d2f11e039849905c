import numpy as np
import pytest

from cpperturb import perturb
from cpperturb.cbnorm import cb_norm
from cpperturb.cpmap import (
    EmbeddingCertificate,
    MatLinMap,
    apply,
    compose,
    conjugation_map,
    depolarizing_map,
    from_apply,
    from_kraus,
    identity_map,
    is_cp,
    isometry_embedding,
    unit_image,
)
from cpperturb.errors import (
    DegenerateInputError,
    DimensionMismatchError,
    HypothesisFailureError,
    NotCompletelyPositiveError,
)
from cpperturb.matcore import Projection, eye_like, hermitize, op_norm, rank1_projection
from cpperturb._random import ginibre, haar_isometry, haar_unitary, rng_for, unit_vector


def unit_mat(n, i, j):
    m = np.zeros((n, n), dtype=complex)
    m[i, j] = 1.0
    return m


def blend(u, t):
    """Automorphism mixed with depolarizing noise; inverse defect scales with t."""
    n = u.shape[0]
    return (1.0 - t) * conjugation_map(u) + t * depolarizing_map(n)


def split_member(rng, n, cod, tail_scale=0.5):
    """Exact split embedding: isometric corner plus CP junk in the complement.

    The tail is scaled below 1 in cb norm so the direct sum stays exactly
    isometric at every matrix level.
    """
    v = haar_isometry(rng, cod, n)
    comp = eye_like(cod) - v @ v.conj().T
    w, _ = np.linalg.qr(comp @ ginibre(rng, cod, cod - n))
    tail = from_kraus(n, cod, [w @ ginibre(rng, cod - n, n)])
    tail = tail * (tail_scale / cb_norm(tail).upper)
    return isometry_embedding(v) + tail, Projection(v @ v.conj().T, n), v, w


def cp_noise(rng, n, cod, size):
    raw = from_kraus(n, cod, [ginibre(rng, cod, n)])
    return raw * (size / cb_norm(raw).upper)


def als_unitary_fit(phi, iters=300, seed=0):
    """Best conjugation fit by alternating polar updates on the two sides.

    Minimizes sum_ij ||phi(e_ij) - W* e_ij V||_F^2 over unitary pairs; each
    half-step is an exact orthogonal Procrustes solve. Independent of the
    production rounding pipeline, so it serves as its oracle.
    """
    n = phi.n
    units = [[unit_image(phi, i, j) for j in range(n)] for i in range(n)]
    eij = [[unit_mat(n, i, j) for j in range(n)] for i in range(n)]

    def fit_value(vmat, wmat):
        return sum(
            np.linalg.norm(units[i][j] - wmat.conj().T @ eij[i][j] @ vmat) ** 2
            for i in range(n)
            for j in range(n)
        )

    rng = rng_for(seed, 1)
    best = None
    for v0 in [eye_like(n)] + [haar_unitary(rng, n) for _ in range(3)]:
        vmat, wmat = v0.copy(), v0.copy()
        for _ in range(iters):
            mw = sum(
                eij[i][j] @ vmat @ units[i][j].conj().T
                for i in range(n)
                for j in range(n)
            )
            uu, _, vh = np.linalg.svd(mw)
            wmat = uu @ vh
            a = sum(
                units[i][j].conj().T @ wmat.conj().T @ eij[i][j]
                for i in range(n)
                for j in range(n)
            )
            uu, _, vh = np.linalg.svd(a)
            vmat = (uu @ vh).conj().T
        f = fit_value(vmat, wmat)
        if best is None or f < best[0]:
            best = (f, vmat, wmat)
    return best


class TestBounds:
    def test_published_values(self):
        assert perturb.automorphism_bound(1e-4) == pytest.approx(0.57)
        assert perturb.cutdown_bound(1e-4) == pytest.approx(6.8)
        assert perturb.crux_bound(1e-4) == pytest.approx(13.6)
        assert perturb.amplified_bound(1e-4) == pytest.approx(27.2)
        assert perturb.rank1_image_bound(1e-8) == pytest.approx(31.5)
        assert perturb.rank1_embed_bound(2.0**-32) == pytest.approx(680.0)

    def test_amplified_doubles_crux(self):
        for d in (1e-2, 1e-4, 1e-6):
            assert perturb.amplified_bound(d) == pytest.approx(2.0 * perturb.crux_bound(d))

    def test_cascade_constants_close(self):
        # the intermediate constants chain into the published promises once
        # delta is small enough for those promises to be sub-trivial
        for d in (1e-9, 1e-12, 1e-40):
            dp = 819.0 * d**0.25
            assert 11.0 * dp**0.5 <= 315.0 * d**0.125 + 1e-12
            assert 136.0 * (12.0 * dp**0.5) ** 0.5 <= 1360.0 * d ** (1.0 / 32.0)


class TestGramMin:
    def test_identity_map(self):
        lg = perturb.gram_min(identity_map(3), np.array([1.0, 0.0, 0.0]))
        assert np.allclose(lg.gram, eye_like(3), atol=1e-12)
        assert lg.min_eig == pytest.approx(1.0)

    def test_degenerate_direction(self):
        squash = from_kraus(2, 2, [unit_mat(2, 0, 0)])
        lg = perturb.gram_min(squash, np.array([1.0, 0.0]))
        assert lg.min_eig == pytest.approx(0.0, abs=1e-12)

    def test_rejects_bad_xi(self):
        with pytest.raises(DimensionMismatchError):
            perturb.gram_min(identity_map(3), np.ones(4) / 2.0)
        with pytest.raises(DegenerateInputError):
            perturb.gram_min(identity_map(3), np.array([2.0, 0.0, 0.0]))

    def test_hull_minimum_by_sampling(self):
        # min_eig claims to be the minimum of <x xi, xi> over the unit-trace
        # positive hull; check against direct sampling of that hull, plus a
        # shrinking local search around the best rank-1 point
        rng = rng_for(21, 3)
        viso = haar_isometry(rng, 27, 9)
        phi = from_apply(3, 9, lambda x: viso.conj().T @ np.kron(x, eye_like(9)) @ viso)
        lg = perturb.gram_min(phi, unit_vector(rng, 9))
        rs = rng_for(21, 4)
        a = (rs.standard_normal((20000, 3, 3)) + 1j * rs.standard_normal((20000, 3, 3)))
        lam = a @ np.conj(np.transpose(a, (0, 2, 1)))
        lam /= np.einsum("sii->s", lam).real[:, None, None]
        dens_vals = np.einsum("ij,sji->s", lg.gram, lam).real
        vs = rs.standard_normal((20000, 3)) + 1j * rs.standard_normal((20000, 3))
        vs /= np.linalg.norm(vs, axis=1)[:, None]
        vec_vals = np.einsum("si,ij,sj->s", vs.conj(), lg.gram, vs).real
        assert dens_vals.min() >= lg.min_eig - 1e-12
        assert vec_vals.min() >= lg.min_eig - 1e-12
        best = min(dens_vals.min(), vec_vals.min())
        v = vs[np.argmin(vec_vals)]
        radius = 0.3
        for _ in range(25):
            cand = v[None, :] + radius * (
                rs.standard_normal((500, 3)) + 1j * rs.standard_normal((500, 3))
            )
            cand /= np.linalg.norm(cand, axis=1)[:, None]
            cv = np.einsum("si,ij,sj->s", cand.conj(), lg.gram, cand).real
            j = int(np.argmin(cv))
            if cv[j] < best:
                best, v = float(cv[j]), cand[j]
            radius *= 0.7
        assert best - lg.min_eig <= 1e-3

    def test_spectrum_fixed_by_first_index_permutation(self):
        from cpperturb.cpmap import domain_rotate

        rng = rng_for(22, 5)
        phi = from_kraus(3, 6, [ginibre(rng, 6, 3), ginibre(rng, 6, 3)])
        xi = unit_vector(rng, 6)
        perm = np.zeros((3, 3))
        for j, s in enumerate((0, 2, 1)):
            perm[s, j] = 1.0
        rotated = domain_rotate(phi, perm)
        a = np.linalg.eigvalsh(perturb.gram_min(phi, xi).gram)
        b = np.linalg.eigvalsh(perturb.gram_min(rotated, xi).gram)
        assert np.allclose(a, b, atol=1e-11)


class TestMakeCertificate:
    def test_exact_member_residuals(self):
        psi, p, _, _ = split_member(rng_for(30, 1), 3, 10)
        cert = perturb.make_certificate(psi, p, seed=1)
        assert cert.map is psi
        assert cert.hom_residual <= 1e-10
        assert cert.iso_residual <= 1e-10

    def test_refuses_non_cp(self):
        rng = rng_for(30, 2)
        diff = conjugation_map(haar_unitary(rng, 3)) - conjugation_map(haar_unitary(rng, 3))
        with pytest.raises(NotCompletelyPositiveError):
            perturb.make_certificate(diff, Projection(eye_like(3), 3))

    def test_detects_broken_corner(self):
        rng = rng_for(30, 3)
        psi, p, _, _ = split_member(rng, 3, 10)
        cert = perturb.make_certificate(psi + cp_noise(rng, 3, 10, 1e-2), p, seed=2)
        assert 1e-4 < cert.hom_residual < 1.0


class TestNearAuto:
    def test_exact_automorphism_fixed(self):
        u = haar_unitary(rng_for(40, 1), 4)
        phi = conjugation_map(u)
        pi, rep = perturb.near_auto_to_auto(phi, 0.0, seed=1)
        assert np.allclose(pi.choi, phi.choi, atol=1e-12)
        assert rep.cb_distance.upper <= 1e-9
        assert rep.passed
        assert rep.delta_measured <= 1e-8
        assert rep.output_certificate.hom_residual <= 1e-12

    def test_blend_matches_alternating_fit(self):
        u = haar_unitary(rng_for(40, 2), 3)
        phi = blend(u, 0.05)
        pi, rep = perturb.near_auto_to_auto(phi, 0.07, seed=2)
        fit_resid, vmat, wmat = als_unitary_fit(phi, seed=3)
        assert op_norm(vmat - wmat) <= 1e-8
        assert op_norm(conjugation_map(wmat.conj().T).choi - pi.choi) <= 1e-5
        # the fit residual of the blend is exactly t^2 (n^2 - 1 + (n-1)^2/n... )
        # measured once and frozen: 8 t^2 on M_3
        assert fit_resid == pytest.approx(8.0 * 0.05**2, rel=1e-6)

    def test_blend_report(self):
        u = haar_unitary(rng_for(40, 3), 3)
        pi, rep = perturb.near_auto_to_auto(blend(u, 0.05), 0.07, seed=4)
        assert rep.cb_distance.upper == pytest.approx(2.0 * 0.05 * (1 - 1 / 9), abs=1e-6)
        assert rep.promised_bound == pytest.approx(perturb.automorphism_bound(0.07))
        assert rep.passed
        assert 0.04 < rep.delta_measured < 0.11
        assert op_norm(apply(pi, eye_like(3)) - eye_like(3)) <= 1e-12

    def test_normalizes_scaled_unit(self):
        u = haar_unitary(rng_for(40, 4), 3)
        phi = 1.002 * blend(u, 0.05)
        pi, rep = perturb.near_auto_to_auto(phi, 0.07, seed=5)
        assert np.allclose(pi.choi, conjugation_map(u).choi, atol=1e-10)
        assert rep.cb_distance.upper < 0.15

    def test_rejects_noncontractive(self):
        u = haar_unitary(rng_for(40, 5), 3)
        with pytest.raises(HypothesisFailureError):
            perturb.near_auto_to_auto(1.5 * conjugation_map(u), 0.01)

    def test_rejects_delta_out_of_range(self):
        phi = conjugation_map(haar_unitary(rng_for(40, 6), 3))
        with pytest.raises(HypothesisFailureError):
            perturb.near_auto_to_auto(phi, 0.2)
        with pytest.raises(HypothesisFailureError):
            perturb.near_auto_to_auto(phi, -0.01)

    def test_rejects_non_square(self):
        rect = from_kraus(2, 3, [ginibre(rng_for(40, 7), 3, 2)])
        with pytest.raises(DimensionMismatchError):
            perturb.near_auto_to_auto(rect, 0.01)

    def test_rejects_non_cp(self):
        u = haar_unitary(rng_for(40, 8), 3)
        phi = 1.1 * conjugation_map(u) - 0.1 * depolarizing_map(3)
        with pytest.raises(NotCompletelyPositiveError):
            perturb.near_auto_to_auto(phi, 0.01)

    def test_two_automorphism_mixture_is_ambiguous(self):
        # orthogonal unitaries give a dilation block with a flat spectrum,
        # so no cut isolates a rank-n piece
        shift = np.roll(eye_like(3), 1, axis=0)
        phi = 0.5 * conjugation_map(eye_like(3)) + 0.5 * conjugation_map(shift)
        with pytest.raises(HypothesisFailureError):
            perturb.near_auto_to_auto(phi, 0.01)


class TestCutdown:
    def test_exact_member_fixed(self):
        psi, p, _, _ = split_member(rng_for(50, 1), 3, 12)
        cert, rep = perturb.cutdown_embed(psi, p, 0.0, seed=1)
        assert np.allclose(cert.map.choi, psi.choi, atol=1e-9)
        assert rep.cb_distance.upper <= 1e-8
        assert rep.passed
        assert cert.hom_residual <= 1e-10

    def test_generous_budget_still_works(self):
        # the inner rounding sees the measured corner defect, not the raw
        # caller budget, so a loose delta cannot break an exact input
        psi, p, _, _ = split_member(rng_for(50, 2), 3, 12)
        _, rep = perturb.cutdown_embed(psi, p, 0.3, seed=2)
        assert rep.cb_distance.upper <= 1e-8

    def test_noisy_corner(self):
        rng = rng_for(50, 3)
        psi, p, _, _ = split_member(rng, 3, 12)
        phi = psi + cp_noise(rng, 3, 12, 1e-2)
        cert, rep = perturb.cutdown_embed(phi, p, 0.05, seed=3)
        assert rep.cb_distance.upper <= 0.2
        assert rep.passed
        assert rep.promised_bound == pytest.approx(perturb.cutdown_bound(0.05))
        assert cert.hom_residual <= 1e-10

    def test_output_splits_exactly(self):
        rng = rng_for(50, 4)
        psi, p, _, _ = split_member(rng, 3, 12)
        phi = psi + cp_noise(rng, 3, 12, 1e-2)
        cert, _ = perturb.cutdown_embed(phi, p, 0.05, seed=4)
        q = cert.split_projection.matrix
        x = ginibre(rng, 3, 3)
        y = apply(cert.map, x)
        assert op_norm(q @ y @ (eye_like(12) - q)) <= 1e-12

    def test_wrong_rank_projection(self):
        psi, _, v, _ = split_member(rng_for(50, 5), 3, 12)
        small = Projection(v[:, :2] @ v[:, :2].conj().T, 2)
        with pytest.raises(DimensionMismatchError):
            perturb.cutdown_embed(psi, small, 0.01)

    def test_orthogonal_corner_uncertifiable(self):
        psi, _, _, w = split_member(rng_for(50, 6), 3, 12)
        away = Projection(w[:, :3] @ w[:, :3].conj().T, 3)
        with pytest.raises(HypothesisFailureError):
            perturb.cutdown_embed(psi, away, 0.01)

    def test_continuity_at_zero(self):
        psi, p, _, _ = split_member(rng_for(50, 7), 3, 12)
        _, rep = perturb.cutdown_embed(psi, p, 1e-9, seed=5)
        assert rep.cb_distance.upper <= 1e-6


class TestCrux:
    def test_exact_embedding(self):
        psi, _, v, _ = split_member(rng_for(60, 1), 3, 12)
        lg = perturb.gram_min(psi, v[:, 0])
        assert lg.min_eig == pytest.approx(1.0, abs=1e-12)
        cert, rep = perturb.crux_perturb(psi, v[:, 0], 1e-6, seed=1)
        assert rep.cb_distance.upper <= 1e-7
        assert rep.passed
        assert cert.hom_residual <= 1e-10

    def test_noisy_map(self):
        rng = rng_for(60, 2)
        psi, _, v, _ = split_member(rng, 2, 8)
        phi = psi + cp_noise(rng, 2, 8, 1e-3)
        cert, rep = perturb.crux_perturb(phi, v[:, 0], 0.01, seed=2)
        assert rep.cb_distance.upper <= 0.15
        assert rep.passed
        assert rep.promised_bound == pytest.approx(perturb.crux_bound(0.01))

    def test_gate_rejects_poor_vector(self):
        psi, _, _, w = split_member(rng_for(60, 3), 3, 12)
        with pytest.raises(HypothesisFailureError):
            perturb.crux_perturb(psi, w[:, 0], 0.01)

    def test_gate_rejects_large_delta(self):
        psi, _, v, _ = split_member(rng_for(60, 4), 3, 12)
        with pytest.raises(HypothesisFailureError):
            perturb.crux_perturb(psi, v[:, 0], 0.5)


class TestOptimalState:
    def test_identity_map(self):
        rho, value = perturb.optimal_state(identity_map(3))
        assert value == pytest.approx(1.0, abs=1e-7)
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-10)
        assert np.linalg.eigvalsh(rho)[0] >= -1e-10
        evals = np.sort(np.linalg.eigvalsh(rho))[::-1]
        assert evals[0] == pytest.approx(1.0, abs=1e-7)
        assert evals[1] <= 1e-7
        assert rho[0, 0].real == pytest.approx(1.0, abs=1e-6)

    def test_isometric_embedding(self):
        v = haar_isometry(rng_for(70, 1), 7, 3)
        rho, value = perturb.optimal_state(isometry_embedding(v))
        assert value == pytest.approx(1.0, abs=1e-7)
        assert np.sort(np.linalg.eigvalsh(rho))[-2] <= 1e-7

    def test_bracketed_by_ascent_and_norm(self):
        rng = rng_for(70, 2)
        phi = from_kraus(2, 5, [ginibre(rng, 5, 2), ginibre(rng, 5, 2)])
        phi = phi * (1.0 / cb_norm(phi).upper)
        rho, value = perturb.optimal_state(phi, seed=3)
        imgs = np.ascontiguousarray(phi.c4[:, :, 0, :])
        blocks = np.einsum("iba,jbc->ijac", imgs.conj(), imgs)
        _, ascent_val = perturb._state_ascent(blocks, seed=4, restarts=4)
        assert value >= ascent_val - 1e-7
        assert value <= 1.0 + 1e-9
        direct, _ = perturb._state_value(blocks, rho)
        assert direct == pytest.approx(value, abs=1e-9)


class TestVectorState:
    def test_identity_reaches_one(self):
        assert perturb.vector_state_value(identity_map(3), restarts=4) == pytest.approx(
            1.0, abs=1e-9
        )

    def test_never_beats_unrestricted(self):
        rng = rng_for(75, 1)
        phi = from_kraus(2, 6, [ginibre(rng, 6, 2), ginibre(rng, 6, 2)])
        vec_val = perturb.vector_state_value(phi, restarts=8, seed=1)
        _, opt_val = perturb.optimal_state(phi, seed=1)
        assert vec_val <= opt_val + 1e-7


class TestAmplified:
    def test_exact_member_needs_no_padding(self):
        psi, _, _, _ = split_member(rng_for(80, 1), 2, 6)
        k, cert, rep = perturb.amplified_perturb(psi, 1e-6, seed=1)
        assert k == 1
        assert cert.map.n == 2
        assert rep.cb_distance.upper <= 1e-7
        assert rep.passed

    def test_noisy_member(self):
        rng = rng_for(80, 2)
        psi, _, _, _ = split_member(rng, 2, 6, tail_scale=0.4)
        phi = psi + cp_noise(rng, 2, 6, 1e-3)
        k, cert, rep = perturb.amplified_perturb(phi, 0.01, seed=2)
        assert k == 1
        assert rep.cb_distance.upper <= 0.2
        assert rep.passed
        assert rep.promised_bound == pytest.approx(perturb.amplified_bound(0.01))
        assert rep.input_map.n == k * 2

    def test_gate_rejects_uninvertible(self):
        with pytest.raises(HypothesisFailureError):
            perturb.amplified_perturb(depolarizing_map(3), 0.01)

    def test_continuity_at_zero(self):
        psi, _, _, _ = split_member(rng_for(80, 3), 2, 6)
        _, _, rep = perturb.amplified_perturb(psi, 1e-9, seed=3)
        assert rep.cb_distance.upper <= 1e-6


class TestCoeSplit:
    def test_padded_identity(self):
        v = np.vstack([eye_like(3), np.zeros((2, 3))])
        cert = perturb.coe_split(isometry_embedding(v))
        expect = np.diag([1.0, 1.0, 1.0, 0.0, 0.0]).astype(complex)
        assert op_norm(cert.split_projection.matrix - expect) <= 1e-9
        assert cert.hom_residual <= 1e-12

    def test_conjugation_with_junk(self):
        rng = rng_for(90, 1)
        u = haar_unitary(rng, 3)
        v = np.vstack([eye_like(3), np.zeros((6, 3))])
        comp = np.vstack([np.zeros((3, 6)), eye_like(6)])
        junk = from_kraus(3, 9, [comp @ ginibre(rng, 6, 3)])
        junk = junk * (0.7 / cb_norm(junk).upper)
        psi = compose(isometry_embedding(v), conjugation_map(u)) + junk
        cert = perturb.coe_split(psi, seed=1)
        expect = np.diag([1.0] * 3 + [0.0] * 6).astype(complex)
        assert op_norm(cert.split_projection.matrix - expect) <= 1e-7
        assert cert.hom_residual <= 1e-10

    def test_recovers_random_member_projection(self):
        psi, p, _, _ = split_member(rng_for(90, 2), 3, 12)
        cert = perturb.coe_split(psi, seed=2)
        assert op_norm(cert.split_projection.matrix - p.matrix) <= 1e-7

    def test_rejects_contraction(self):
        psi, _, _, _ = split_member(rng_for(90, 3), 3, 12)
        with pytest.raises(HypothesisFailureError):
            perturb.coe_split(0.9 * psi)

    def test_rejects_non_cp(self):
        rng = rng_for(90, 4)
        diff = conjugation_map(haar_unitary(rng, 3)) - conjugation_map(haar_unitary(rng, 3))
        with pytest.raises(NotCompletelyPositiveError):
            perturb.coe_split(diff)


class TestInvertEmbedding:
    def test_padded_identity_compresses(self):
        rng = rng_for(100, 1)
        v = np.vstack([eye_like(3), np.zeros((2, 3))])
        t = perturb.invert_embedding(perturb.coe_split(isometry_embedding(v)))
        y = ginibre(rng, 5, 5)
        assert np.allclose(apply(t, y), y[:3, :3], atol=1e-10)
        assert op_norm(apply(t, eye_like(5)) - eye_like(3)) <= 1e-12

    def test_member_left_inverse(self):
        psi, _, _, _ = split_member(rng_for(100, 2), 4, 20)
        t = perturb.invert_embedding(perturb.coe_split(psi, seed=1))
        assert op_norm(apply(t, eye_like(20)) - eye_like(4)) <= 1e-12
        resid = op_norm(compose(t, psi).choi - identity_map(4).choi)
        assert resid <= 1e-8

    def test_refuses_sloppy_certificate(self):
        psi, p, _, _ = split_member(rng_for(100, 3), 3, 12)
        fake = EmbeddingCertificate(
            map=psi, split_projection=p, hom_residual=1e-3, iso_residual=0.0
        )
        with pytest.raises(HypothesisFailureError):
            perturb.invert_embedding(fake)


class TestApproxInverse:
    def test_exact_member(self):
        psi, _, _, _ = split_member(rng_for(110, 1), 2, 6)
        t, bound = perturb.approx_inverse(psi, 1e-6, seed=1)
        assert bound == pytest.approx(perturb.amplified_bound(1e-6))
        resid = cb_norm(identity_map(2) - compose(t, psi)).upper
        assert resid <= 1e-7
        assert op_norm(apply(t, eye_like(6)) - eye_like(2)) <= 1e-12
        assert is_cp(t).ok

    def test_noisy_member(self):
        rng = rng_for(110, 2)
        psi, _, _, _ = split_member(rng, 2, 6, tail_scale=0.4)
        phi = psi + cp_noise(rng, 2, 6, 5e-3)
        t, _ = perturb.approx_inverse(phi, 0.02, seed=2)
        resid = cb_norm(identity_map(2) - compose(t, phi)).upper
        assert resid <= 0.4
        assert op_norm(apply(t, eye_like(6)) - eye_like(2)) <= 1e-12


class TestRank1:
    def test_identity_recovers_e11(self):
        p = rank1_projection(np.array([1.0, 0.0, 0.0]))
        r = perturb.rank1_recover(identity_map(3), p, 1e-6, seed=1)
        assert r.rank == 1
        assert op_norm(r.matrix - unit_mat(3, 0, 0)) <= 1e-9

    def test_embedded_rotation(self):
        rng = rng_for(120, 1)
        u = haar_unitary(rng, 3)
        v = haar_isometry(rng, 8, 3)
        phi = compose(isometry_embedding(v), conjugation_map(u)) + cp_noise(rng, 3, 8, 1e-4)
        p = rank1_projection(v @ u[:, 0])
        r = perturb.rank1_recover(phi, p, 1e-3, seed=2)
        assert op_norm(r.matrix - unit_mat(3, 0, 0)) <= 1e-2
        assert op_norm(apply(phi, r.matrix) - p.matrix) <= 0.05

    def test_perturb_exact_member(self):
        psi, _, v, _ = split_member(rng_for(120, 2), 2, 6)
        p = rank1_projection(v[:, 0])
        cert, rep = perturb.rank1_perturb(psi, p, 1e-6, seed=3)
        assert rep.cb_distance.upper <= 1e-7
        assert rep.passed
        q = cert.split_projection.matrix
        assert op_norm(q @ p.matrix @ q - p.matrix) <= 1e-6
        r = perturb.rank1_recover(psi, p, 1e-6, seed=3)
        # psi carries a junk block outside q; only the corner lands on p.
        assert op_norm(q @ apply(cert.map, r.matrix) @ q - p.matrix) <= 1e-6

    def test_perturb_noisy_member(self):
        rng = rng_for(120, 3)
        psi, _, v, _ = split_member(rng, 2, 7, tail_scale=0.4)
        phi = psi + cp_noise(rng, 2, 7, 1e-3)
        p = rank1_projection(v[:, 0])
        cert, rep = perturb.rank1_perturb(phi, p, 0.01, seed=4)
        assert rep.cb_distance.upper <= 0.3
        assert rep.passed
        assert rep.promised_bound == pytest.approx(perturb.rank1_embed_bound(0.01))
        assert cert.hom_residual <= 1e-8

    def test_gate_rejects_orthogonal_target(self):
        psi, _, _, w = split_member(rng_for(120, 4), 2, 6)
        p = rank1_projection(w[:, 0])
        with pytest.raises(HypothesisFailureError):
            perturb.rank1_recover(psi, p, 1e-11, seed=5)

    def test_rejects_higher_rank_target(self):
        psi, _, v, _ = split_member(rng_for(120, 5), 2, 6)
        p = Projection(v @ v.conj().T, 2)
        with pytest.raises(DimensionMismatchError):
            perturb.rank1_recover(psi, p, 1e-6)


class TestLeakage:
    def block_map(self, rng, n, b, cod, tau):
        psi, p, v, w = split_member(rng, n, cod)
        c4 = np.zeros((n + b, cod, n + b, cod), dtype=complex)
        c4[:n, :, :n, :] = psi.c4
        c4[n:, :, n:, :] = tau.c4
        phi = MatLinMap(n + b, cod, c4.reshape((n + b) * cod, (n + b) * cod))
        cert = perturb.make_certificate(psi, p, seed=7)
        return phi, psi, cert, p, v, w

    def test_no_extra_block(self):
        psi, p, _, _ = split_member(rng_for(130, 1), 3, 12)
        cert = perturb.make_certificate(psi, p, seed=1)
        corner, comm = perturb.cutdown_leakage_check(psi, cert, p, 0.01, seed=1)
        assert corner == 0.0
        assert comm <= 1e-9

    def test_orthogonal_extension_clean(self):
        rng = rng_for(130, 2)
        w_probe, _ = np.linalg.qr(ginibre(rng, 12, 12))
        # build tau after psi so its Kraus lands in psi's complement
        psi, p, v, w = split_member(rng, 3, 12)
        tau = from_kraus(2, 12, [w @ ginibre(rng, 9, 2)])
        tau = tau * (0.3 / cb_norm(tau).upper)
        c4 = np.zeros((5, 12, 5, 12), dtype=complex)
        c4[:3, :, :3, :] = psi.c4
        c4[3:, :, 3:, :] = tau.c4
        phi = MatLinMap(5, 12, c4.reshape(60, 60))
        cert = perturb.make_certificate(psi, p, seed=2)
        corner, comm = perturb.cutdown_leakage_check(phi, cert, p, 0.01, seed=2)
        assert corner <= 1e-9
        assert comm <= 1e-9

    def test_mismatched_projection_raises(self):
        psi, p, _, w = split_member(rng_for(130, 3), 3, 12)
        cert = perturb.make_certificate(psi, p, seed=3)
        other = Projection(w[:, :3] @ w[:, :3].conj().T, 3)
        with pytest.raises(HypothesisFailureError):
            perturb.cutdown_leakage_check(psi, cert, other, 0.01)

    def test_drifted_restriction_raises(self):
        rng = rng_for(130, 4)
        psi, p, _, _ = split_member(rng, 3, 12)
        cert = perturb.make_certificate(psi, p, seed=4)
        drifted = psi + cp_noise(rng, 3, 12, 0.1)
        with pytest.raises(HypothesisFailureError):
            perturb.cutdown_leakage_check(drifted, cert, p, 0.01, seed=4)

    def test_leaky_tail_raises(self):
        rng = rng_for(130, 5)
        psi, p, v, w = split_member(rng, 3, 12)
        bad = from_kraus(2, 12, [v @ ginibre(rng, 3, 2)])
        bad = bad * (0.3 / cb_norm(bad).upper)
        c4 = np.zeros((5, 12, 5, 12), dtype=complex)
        c4[:3, :, :3, :] = psi.c4
        c4[3:, :, 3:, :] = bad.c4
        phi = MatLinMap(5, 12, c4.reshape(60, 60))
        cert = perturb.make_certificate(psi, p, seed=5)
        with pytest.raises(HypothesisFailureError):
            perturb.cutdown_leakage_check(phi, cert, p, 0.01, seed=5)

    def test_small_leak_measured(self):
        rng = rng_for(130, 6)
        psi, p, v, w = split_member(rng, 3, 12)
        slight = from_kraus(2, 12, [v @ ginibre(rng, 3, 2)])
        slight = slight * (5e-3 / cb_norm(slight).upper)
        c4 = np.zeros((5, 12, 5, 12), dtype=complex)
        c4[:3, :, :3, :] = psi.c4
        c4[3:, :, 3:, :] = slight.c4
        phi = MatLinMap(5, 12, c4.reshape(60, 60))
        cert = perturb.make_certificate(psi, p, seed=6)
        corner, comm = perturb.cutdown_leakage_check(phi, cert, p, 0.01, seed=6)
        assert 0.0 < corner <= 8 * 0.01 + 1e-7
        assert corner <= 1e-2
        assert comm <= 8 * 0.01**0.5 + 1e-7


class TestContinuityAtZero:
    def test_all_roundings_fix_exact_inputs(self):
        u = haar_unitary(rng_for(140, 1), 3)
        _, rep = perturb.near_auto_to_auto(conjugation_map(u), 1e-9, seed=1)
        assert rep.cb_distance.upper <= 1e-6

        psi, p, v, _ = split_member(rng_for(140, 2), 2, 6)
        _, rep = perturb.cutdown_embed(psi, p, 1e-9, seed=2)
        assert rep.cb_distance.upper <= 1e-6
        _, rep = perturb.crux_perturb(psi, v[:, 0], 1e-9, seed=3)
        assert rep.cb_distance.upper <= 1e-6
        _, _, rep = perturb.amplified_perturb(psi, 1e-9, seed=4)
        assert rep.cb_distance.upper <= 1e-6
        _, rep = perturb.rank1_perturb(psi, rank1_projection(v[:, 0]), 1e-9, seed=5)
        assert rep.cb_distance.upper <= 1e-6


class TestReports:
    def test_pass_definition_and_floor(self):
        rng = rng_for(150, 1)
        psi, p, _, _ = split_member(rng, 2, 6)
        phi = psi + cp_noise(rng, 2, 6, 1e-3)
        _, rep = perturb.cutdown_embed(phi, p, 0.01, seed=1)
        assert rep.passed == (rep.cb_distance.upper <= rep.promised_bound + 1e-7)
        assert rep.delta_measured >= 1e-9

    def test_certificates_are_cp_with_tight_corners(self):
        rng = rng_for(150, 2)
        psi, p, v, _ = split_member(rng, 2, 6)
        phi = psi + cp_noise(rng, 2, 6, 1e-3)
        cert_cut, _ = perturb.cutdown_embed(phi, p, 0.01, seed=2)
        cert_crux, _ = perturb.crux_perturb(phi, v[:, 0], 0.01, seed=3)
        for cert in (cert_cut, cert_crux):
            assert is_cp(cert.map).ok
            assert cert.hom_residual <= 1e-8
            pm = cert.split_projection.matrix
            assert op_norm(pm @ pm - pm) <= 1e-10
