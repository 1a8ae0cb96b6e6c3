import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import eigh as dense_eigh

from hcbloch.beta import (
    beta_eval,
    flux,
    pure_bloch_bands,
    solve_lifts,
    spatial_points,
    spatial_spectrum,
)
from hcbloch.bloch import ThetaGrid, assemble_bloch, bloch_eigs, theta_sweep
from hcbloch.cell import effective_tensor, solve_cell_problem
from hcbloch.errors import EmptyActiveSetError, PoleProximityError
from hcbloch.geometry import classify_nodes


@pytest.fixture(scope="module")
def lift_setup(single_fiber):
    grid = classify_nodes(single_fiber, 10)
    theta = (0.0, np.pi / 2, np.pi)
    asm = assemble_bloch(single_fiber, grid, theta)
    dec = bloch_eigs(single_fiber, grid, theta, m_max=10, assembly=asm, method="dense")
    lifts = solve_lifts(single_fiber, grid, theta, dec, assembly=asm)
    return single_fiber, grid, theta, asm, dec, lifts


def test_empty_active_set_raises(single_fiber):
    grid = classify_nodes(single_fiber, 8)
    theta = (np.pi / 2, np.pi, np.pi / 3)
    dec = bloch_eigs(single_fiber, grid, theta, m_max=2)
    with pytest.raises(EmptyActiveSetError):
        solve_lifts(single_fiber, grid, theta, dec)


def test_lift_boundary_values_exact(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    field = lifts.fields[1]
    assert np.all(field[grid.fiber_mask(1).ravel()] == 1.0)


def test_lift_harmonicity(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    assert lifts.residuals[1] < 1e-10


def test_lift_real_at_zero_theta(single_fiber):
    grid = classify_nodes(single_fiber, 8)
    dec = bloch_eigs(single_fiber, grid, (0.0, 0.0, 0.0), m_max=5)
    lifts = solve_lifts(single_fiber, grid, (0.0, 0.0, 0.0), dec)
    assert not np.iscomplexobj(lifts.coeffs[1])
    # single fiber at theta = 0: harmonic extension of constant data is 1
    assert np.abs(lifts.fields[1] - 1.0).max() < 1e-10


def test_bessel_inequality(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    b = lifts.fields[1][asm.dofs]
    norm2 = grid.h**3 * np.vdot(b, b).real
    partial = float(np.sum(np.abs(lifts.coeffs[1]) ** 2))
    assert partial <= norm2 + 1e-12
    assert abs(lifts.mass_gram[0, 0].real - norm2) < 1e-12


def test_green_identity(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    for m in range(dec.m_max):
        T = flux(asm, dec.vectors[:, m], lifts.fields[1], 1)
        err = abs(T + dec.eigenvalues[m] * np.conjugate(lifts.coeffs[1][m]))
        assert err <= 1e-12 * (1.0 + dec.eigenvalues[m])


def test_flux_of_zero_field(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    assert flux(asm, np.zeros(asm.dim), lifts.fields[1], 1) == 0.0


def test_beta_hermitian_both_modes(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    rng = np.random.default_rng(42)
    for mode in ("spectral", "resummed"):
        beta = beta_eval(lifts, dec, mode=mode)
        guard = beta.pole_guard_width(1e-6)
        count = 0
        while count < 50:
            lam = rng.uniform(0.0, 0.98 * dec.eigenvalues[-1])
            if np.any(np.abs(beta.poles - lam) < 2 * guard):
                continue
            B = beta(lam)
            assert np.abs(B - B.conj().T).max() <= 1e-12
            count += 1


def test_beta_zero_spectral_is_psd(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    B0 = beta_eval(lifts, dec, lam=0.0, mode="spectral")
    assert np.min(np.linalg.eigvalsh(B0)) >= -1e-12


def unique_poles(poles, rel=1e-9):
    out = [float(poles[0])]
    for p in poles[1:]:
        if p - out[-1] > rel * max(1.0, abs(p)):
            out.append(float(p))
    return out


def test_beta_diagonal_monotone_between_poles(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    for mode in ("spectral", "resummed"):
        beta = beta_eval(lifts, dec, mode=mode)
        guard = 10 * beta.pole_guard_width(1e-6)
        cuts = [0.0] + [p for p in unique_poles(beta.poles) if p < 0.9 * beta.poles[-1]]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if hi - lo <= 4 * guard:
                continue
            xs = np.linspace(lo + guard, hi - guard, 200)
            vals = [beta(x)[0, 0].real for x in xs]
            assert np.all(np.diff(vals) > 0.0), mode
            assert np.all(beta.diagonal_derivative(xs[50]) > 0.0)


def test_pole_proximity_error(lift_setup):
    geom, grid, theta, asm, dec, lifts = lift_setup
    beta = beta_eval(lifts, dec)
    with pytest.raises(PoleProximityError):
        beta(float(dec.eigenvalues[0]))


def test_two_fiber_beta_cross_hermitian(two_fiber):
    grid = classify_nodes(two_fiber, 10)
    theta = (0.0, np.pi / 2, 0.0)  # both fiber axes active
    asm = assemble_bloch(two_fiber, grid, theta)
    dec = bloch_eigs(two_fiber, grid, theta, m_max=8, assembly=asm, method="dense")
    lifts = solve_lifts(two_fiber, grid, theta, dec, assembly=asm)
    assert lifts.active == (1, 3)
    beta = beta_eval(lifts, dec, mode="resummed")
    B = beta(3.0)
    assert B.shape == (2, 2)
    assert abs(B[0, 1] - np.conjugate(B[1, 0])) <= 1e-12
    for m in range(dec.m_max):
        for axis in (1, 3):
            T = flux(asm, dec.vectors[:, m], lifts.fields[axis], axis)
            coeff = lifts.coeffs[axis][m]
            assert abs(T + dec.eigenvalues[m] * np.conjugate(coeff)) <= 1e-12 * (
                1.0 + dec.eigenvalues[m]
            )


def test_spatial_roots_match_bordered_pencil(single_fiber):
    """Secular roots of the fully-resummed coupling matrix must agree with
    an independent generalized eigensolve of the bordered spatial pencil."""
    grid = classify_nodes(single_fiber, 10)
    theta = (0.0, np.pi / 2, np.pi)
    asm = assemble_bloch(single_fiber, grid, theta)
    dim = asm.dim
    dec = bloch_eigs(single_fiber, grid, theta, m_max=dim, method="dense", assembly=asm)
    lifts = solve_lifts(single_fiber, grid, theta, dec, assembly=asm)
    beta = beta_eval(lifts, dec, mode="resummed")
    a_hom = effective_tensor([solve_cell_problem(single_fiber, grid, 1)])
    window = (0.0, float(dec.eigenvalues[6] * 0.99))
    k = (1, 0, 0)
    roots = spatial_spectrum(beta, a_hom, theta, [k], window)
    assert roots, "expected at least one secular root in the window"

    n = grid.n
    fiber_nodes = np.flatnonzero(grid.fiber_mask(1).ravel())
    rows = np.concatenate([asm.dofs, fiber_nodes])
    cols = np.concatenate([np.arange(dim), np.full(fiber_nodes.size, dim)])
    Z = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n**3, dim + 1)).tocsr()
    A_Z = (Z.getH() @ asm.full @ Z).toarray()
    A_Z[-1, -1] += a_hom[0, 0] * (2 * np.pi) ** 2
    M_Z = grid.h**3 * np.asarray((Z.multiply(Z)).sum(axis=0)).ravel()
    pencil = dense_eigh(A_Z, np.diag(M_Z), eigvals_only=True)
    for r in roots:
        assert np.min(np.abs(pencil - r.lam)) < 1e-7 * (1.0 + r.lam)


def test_root_certification_and_scan_oracle(lift_setup):
    """Every root is bracketed by a certified sign change; the root count
    per inter-pole interval matches a dense 10^4-point scan."""
    geom, grid, theta, asm, dec, lifts = lift_setup
    beta = beta_eval(lifts, dec, mode="resummed")
    a_hom = effective_tensor([solve_cell_problem(geom, grid, 1)])
    window = (0.0, float(dec.eigenvalues[5] * 0.98))
    k = (2, 0, 0)
    roots = spatial_spectrum(beta, a_hom, theta, [k], window)
    mu1 = float(dec.eigenvalues[0])
    kk = 2 * np.pi * np.array([2, 0, 0], dtype=float)

    def F(lam):
        return float(np.real(np.linalg.det(
            np.diag([a_hom[0, 0] * kk[0] ** 2]) - beta(lam)
        )))

    for r in roots:
        lo, hi = r.bracket
        assert hi - lo <= 1e-10 * mu1
        if lo < hi:
            assert F(lo) * F(hi) < 0.0

    # dense scan oracle: count sign changes on a 10^4-point grid
    guard = 5 * beta.pole_guard_width(1e-6)
    cuts = [window[0]] + sorted(
        v
        for p in unique_poles(beta.poles)
        if window[0] < p < window[1]
        for v in (p - guard, p + guard)
    ) + [window[1]]
    count = 0
    for lo, hi in zip(cuts[::2], cuts[1::2]):
        xs = np.linspace(lo, hi, 10_000)
        fs = np.sign([F(x) for x in xs])
        count += int(np.sum(fs[:-1] * fs[1:] < 0))
    assert count == len(roots)


def test_spatial_zero_map(single_fiber):
    grid = classify_nodes(single_fiber, 8)
    theta = (np.pi, np.pi / 2, np.pi / 2)
    dec = bloch_eigs(single_fiber, grid, theta, m_max=4)
    a_hom = effective_tensor([solve_cell_problem(single_fiber, grid, 1)])
    pts = spatial_points(single_fiber, grid, theta, dec, a_hom, [(1, 0, 0)], (0.0, 50.0))
    assert pts == []


def test_bands_single_point_sweep(single_fiber):
    grid = classify_nodes(single_fiber, 8)
    dec = bloch_eigs(single_fiber, grid, (0.0, 0.0, 0.0), m_max=4)
    structure = pure_bloch_bands({(0.0, 0.0, 0.0): dec})
    for band in structure.branch_intervals:
        assert band.lo == band.hi


def test_bands_monotone_under_refinement(single_fiber):
    grid = classify_nodes(single_fiber, 8)
    s2 = theta_sweep(single_fiber, grid, ThetaGrid(2), m_max=4)
    s4 = theta_sweep(single_fiber, grid, ThetaGrid(4), m_max=4)
    b2 = pure_bloch_bands(s2).branch_intervals
    b4 = pure_bloch_bands(s4).branch_intervals
    for band2, band4 in zip(b2, b4):
        assert band4.lo <= band2.lo + 1e-12
        assert band4.hi >= band2.hi - 1e-12


def test_bands_inclusion_degenerate(inclusion):
    grid = classify_nodes(inclusion, 8)
    sweep = theta_sweep(inclusion, grid, ThetaGrid(2), m_max=4)
    structure = pure_bloch_bands(sweep)
    for band in structure.branch_intervals:
        assert band.hi - band.lo <= 1e-12
    assert structure.gaps  # isolated resonances leave gaps in the window


def test_band_merging_and_gaps():
    from hcbloch.bloch import BlochDecomposition
    from hcbloch.operators import QuasiMomentum

    # synthetic two-point sweep with overlapping branches
    def dec(theta, vals):
        return BlochDecomposition(
            theta=QuasiMomentum(theta),
            eigenvalues=np.asarray(vals, dtype=float),
            vectors=np.zeros((1, len(vals))),
            dofs=np.array([0]),
            grid_n=4,
            residuals=np.zeros(len(vals)),
        )

    sweep = {
        (0.0, 0.0, 0.0): dec((0.0, 0.0, 0.0), [1.0, 2.0, 6.0]),
        (np.pi, 0.0, 0.0): dec((np.pi, 0.0, 0.0), [2.5, 3.0, 7.0]),
    }
    structure = pure_bloch_bands(sweep, window=(0.0, 8.0))
    assert len(structure.bands) == 2  # branches [1,2.5] and [2,3] merge; [6,7] stays
    assert structure.bands[0].lo == 1.0 and structure.bands[0].hi == 3.0
    assert structure.gaps == [(0.0, 1.0), (3.0, 6.0), (7.0, 8.0)]


def test_spectral_mode_no_root_below_first_pole(lift_setup):
    """Literal-series mode: beta(0) >= 0 and increasing up to the first
    pole, so the k = 0 secular function has no root in (0, mu_1)."""
    geom, grid, theta, asm, dec, lifts = lift_setup
    beta = beta_eval(lifts, dec, mode="spectral")
    assert beta(0.0)[0, 0].real > 0.0
    guard = 10 * beta.pole_guard_width(1e-6)
    xs = np.linspace(guard, float(beta.poles[0]) - guard, 2000)
    vals = np.array([beta(x)[0, 0].real for x in xs])
    assert np.all(vals > 0.0)  # F = -beta never changes sign before mu_1
