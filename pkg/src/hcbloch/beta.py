"""Harmonic lifts, surface fluxes, the frequency-dependent coupling matrix,
pure Bloch bands, and the spatial spectrum on the torus.

For each active fiber axis i (theta_i = 0) the lift is the a0-harmonic
extension into the soft phase of the boundary data "1 on fiber i, 0 on
the other stiff closures".  Its expansion coefficients in the Bloch
eigenbasis feed the Hermitian coupling matrix

    beta_ij(lam) = lam |C_i| d_ij
                   + sum_m |mu_m|^2 / (mu_m - lam) * b_m^(j) conj(b_m^(i)),

whose poles sit at the Bloch eigenvalues.  The spatial spectrum on a
torus of period L consists, per Fourier mode k, of the roots of the
secular determinant  det(diag(a_hom_i k_i^2) - beta(lam)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bloch import BlochAssembly, BlochDecomposition, assemble_bloch
from .errors import EmptyActiveSetError, PoleProximityError
from .geometry import CellGeometry, Grid
from .operators import as_quasi_momentum, linear_solve

__all__ = [
    "LiftSet",
    "BetaMatrix",
    "Band",
    "BandStructure",
    "SpatialRoot",
    "solve_lifts",
    "flux",
    "beta_eval",
    "pure_bloch_bands",
    "spatial_spectrum",
    "spatial_points",
]


@dataclass(frozen=True)
class LiftSet:
    """Harmonic lifts and their Bloch expansion coefficients at one theta.

    Besides the mode coefficients, carries the two mode-free Gram
    matrices of the lifts, flux_gram[i,j] = T_i(b^(j)) (surface flux of
    lift j through fiber i) and mass_gram[i,j] = <b^(j), b^(i)>_{L2(Q_0)};
    these are the exact values of the two conditionally convergent
    constants hidden in the pole series of the coupling matrix.
    """

    theta: tuple[float, float, float]
    active: tuple[int, ...]
    fields: dict[int, np.ndarray] = field(repr=False)  # axis -> flat n^3 values
    coeffs: dict[int, np.ndarray]  # axis -> (m_max,) <b, v_m>_{L2(Q_0)}
    residuals: dict[int, float]
    measures: dict[int, float]
    flux_gram: np.ndarray = None
    mass_gram: np.ndarray = None


def solve_lifts(
    geom: CellGeometry,
    grid: Grid,
    theta,
    bloch: BlochDecomposition,
    tol: float = 1e-10,
    assembly: BlochAssembly | None = None,
) -> LiftSet:
    """Solve the lift problems for every active axis and expand them.

    Raises EmptyActiveSetError when no fiber axis has theta_i = 0: the
    spatial operator is the zero map there and no lift exists.
    """
    asm = assembly if assembly is not None else assemble_bloch(geom, grid, theta)
    active = asm.theta.active_set(geom.active_axes)
    if not active:
        raise EmptyActiveSetError(
            f"no active fiber axis at theta={asm.theta.theta}; spatial operator is the zero map"
        )
    if tuple(bloch.theta.theta) != tuple(asm.theta.theta):
        raise ValueError("Bloch decomposition was computed at a different theta")

    h3 = asm.h**3
    fields: dict[int, np.ndarray] = {}
    coeffs: dict[int, np.ndarray] = {}
    residuals: dict[int, float] = {}
    measures: dict[int, float] = {}
    for axis in active:
        boundary = np.zeros(grid.n**3, dtype=asm.full.dtype)
        boundary[grid.fiber_mask(axis).ravel()] = 1.0
        rhs = -(asm.full @ boundary)[asm.dofs]
        values = linear_solve(asm.interior, rhs, tol=tol)
        residuals[axis] = float(
            np.linalg.norm(asm.interior @ values - rhs) / max(np.linalg.norm(rhs), 1e-300)
        )
        lift = boundary.astype(np.result_type(values.dtype, boundary.dtype))
        lift[asm.dofs] = values
        fields[axis] = lift
        coeffs[axis] = h3 * (bloch.vectors.conj().T @ values)
        measures[axis] = grid.fiber_measure(axis)

    na = len(active)
    flux_gram = np.zeros((na, na), dtype=complex)
    mass_gram = np.zeros((na, na), dtype=complex)
    for jj, ax_j in enumerate(active):
        applied = asm.full @ fields[ax_j]
        for ii, ax_i in enumerate(active):
            flux_gram[ii, jj] = np.sum(applied[grid.fiber_mask(ax_i).ravel()])
            mass_gram[ii, jj] = h3 * np.vdot(fields[ax_i][asm.dofs], fields[ax_j][asm.dofs])
    # Hermitian in exact arithmetic (Dirichlet-form Grams); symmetrize away
    # the solver-residual defect.
    flux_gram = 0.5 * (flux_gram + flux_gram.conj().T)
    mass_gram = 0.5 * (mass_gram + mass_gram.conj().T)

    return LiftSet(
        theta=asm.theta.theta,
        active=active,
        fields=fields,
        coeffs=coeffs,
        residuals=residuals,
        measures=measures,
        flux_gram=flux_gram,
        mass_gram=mass_gram,
    )


def flux(asm: BlochAssembly, v: np.ndarray, lift_field: np.ndarray, axis: int) -> complex:
    """Discrete surface flux of v through the boundary of fiber ``axis``.

    Summation-by-parts form: T(v) = q(v, b) - <A0 v, b>, with q the full
    Dirichlet form including the stiff-boundary links and A0 the
    interior operator.  For a Bloch eigenpair (mu, v) this satisfies the
    Green identity T(v) = -mu * conj(<b, v>) to machine precision.

    ``v`` is a soft-phase DOF vector; ``lift_field`` a full-grid field.
    """
    v_full = asm.embed(v)
    q_form = np.vdot(lift_field, asm.full @ v_full)
    interior = np.vdot(lift_field[asm.dofs], asm.interior @ v)
    return complex(q_form - interior)


@dataclass(frozen=True)
class BetaMatrix:
    """Evaluator of the coupling matrix on the active axes at one theta.

    Two summations of the same pole series are available:

    * mode="spectral": the literal truncated series
      lam |C_i| d_ij + sum_{m<=m_max} |mu_m|^2/(mu_m - lam) b^(j) conj(b^(i)).
      Its truncation error contains the partial sums of
      sum_m mu_m b^(j) conj(b^(i)), which grow with m_max (the lifts have
      nonzero trace, so their zero-trace eigenexpansions carry a boundary
      layer); use it only as the literal series.

    * mode="resummed" (default): the two conditionally convergent
      constants are replaced by their exact mode-free values,

      lam |C_i| d_ij - T_i(b^(j)) + lam <b^(j), b^(i)>
                     + sum_{m<=m_max} lam^2/(mu_m - lam) b^(j) conj(b^(i)),

      which is the same series rearranged term by term
      (mu^2/(mu-lam) = mu + lam + lam^2/(mu-lam)) and is the summation
      implied by the Green-identity derivation of the series.  Its
      truncation tail is O(lam^2 sum_{m>m_max} |b_m|^2 / mu_m), so roots
      converge as the truncation deepens.

    Both modes share the pole set and the strict monotonicity of the
    diagonal between consecutive poles.
    """

    theta: tuple[float, float, float]
    active: tuple[int, ...]
    poles: np.ndarray  # (m_max,) Bloch eigenvalues, ascending
    coeffs: np.ndarray  # (n_active, m_max), row i = lift coefficients of active[i]
    measures: np.ndarray  # (n_active,) discrete fiber volumes
    flux_gram: np.ndarray = None  # T_i(b^(j)), Hermitian
    mass_gram: np.ndarray = None  # <b^(j), b^(i)>_{L2(Q_0)}, Hermitian
    mode: str = "resummed"

    def __post_init__(self):
        if self.mode not in ("spectral", "resummed"):
            raise ValueError(f"unknown summation mode {self.mode!r}")
        if self.mode == "resummed" and (self.flux_gram is None or self.mass_gram is None):
            raise ValueError("resummed mode needs the lift Gram matrices")

    @property
    def m_max(self) -> int:
        return len(self.poles)

    def pole_guard_width(self, pole_guard: float) -> float:
        return pole_guard * float(self.poles[0])

    def _check_guard(self, lam: float, pole_guard: float) -> None:
        guard = self.pole_guard_width(pole_guard)
        if np.any(np.abs(self.poles - lam) < guard):
            raise PoleProximityError(f"lambda={lam} within {guard:.3e} of a pole")

    def __call__(self, lam: float, pole_guard: float = 1e-6) -> np.ndarray:
        """Hermitian coupling matrix at spectral parameter lam."""
        self._check_guard(lam, pole_guard)
        if self.mode == "spectral":
            weights = np.abs(self.poles) ** 2 / (self.poles - lam)
            out = (self.coeffs.conj() * weights) @ self.coeffs.T
            return out + lam * np.diag(self.measures)
        weights = lam**2 / (self.poles - lam)
        out = (self.coeffs.conj() * weights) @ self.coeffs.T
        out = out - self.flux_gram + lam * self.mass_gram
        return out + lam * np.diag(self.measures)

    def diagonal_derivative(self, lam: float, pole_guard: float = 1e-6) -> np.ndarray:
        """d/dlam of the diagonal; strictly positive between poles.

        Spectral mode: |C_i| + sum |mu_m b_m|^2 / (mu_m - lam)^2.
        Resummed mode adds the nonnegative unresolved tail mass
        ||b||^2 - sum_{m<=m_max} |b_m|^2.
        """
        self._check_guard(lam, pole_guard)
        w = np.abs(self.poles) ** 2 / (self.poles - lam) ** 2
        base = self.measures + (np.abs(self.coeffs) ** 2 * w).sum(axis=1)
        if self.mode == "spectral":
            return base
        tail_mass = np.real(np.diag(self.mass_gram)) - (np.abs(self.coeffs) ** 2).sum(axis=1)
        return base + tail_mass


def beta_eval(
    lifts: LiftSet,
    bloch: BlochDecomposition,
    lam=None,
    pole_guard: float = 1e-6,
    mode: str = "spectral",
):
    """Build the BetaMatrix from lifts + Bloch data; evaluate if lam given.

    The default mode is the literal truncated series; root finding uses
    mode="resummed" (see BetaMatrix).
    """
    coeffs = np.vstack([lifts.coeffs[axis] for axis in lifts.active])
    measures = np.array([lifts.measures[axis] for axis in lifts.active])
    beta = BetaMatrix(
        theta=lifts.theta,
        active=lifts.active,
        poles=np.asarray(bloch.eigenvalues, dtype=float),
        coeffs=coeffs,
        measures=measures,
        flux_gram=lifts.flux_gram,
        mass_gram=lifts.mass_gram,
        mode=mode,
    )
    if lam is None:
        return beta
    return beta(float(lam), pole_guard=pole_guard)


@dataclass(frozen=True)
class Band:
    lo: float
    hi: float
    branches: tuple[int, ...]
    theta_at_lo: tuple[float, float, float]
    theta_at_hi: tuple[float, float, float]


@dataclass(frozen=True)
class SpatialRoot:
    theta: tuple[float, float, float]
    k_index: tuple[int, int, int]
    lam: float
    residual: float
    bracket: tuple[float, float]


@dataclass(frozen=True)
class BandStructure:
    """Pure Bloch bands, gaps within the window, and spatial eigenvalues."""

    branch_intervals: list[Band]
    bands: list[Band]
    gaps: list[tuple[float, float]]
    window: tuple[float, float]
    spatial: list[SpatialRoot] = field(default_factory=list)


def pure_bloch_bands(sweep, m_max: int | None = None, window=None) -> BandStructure:
    """Aggregate a theta sweep into per-branch intervals, bands and gaps.

    Branch m spans [min_theta mu_m, max_theta mu_m]; overlapping branch
    intervals merge into maximal bands, and gaps are the complement
    inside the window [0, lambda_max].
    """
    if not sweep:
        raise ValueError("empty theta sweep")
    thetas = sorted(sweep)
    m_avail = min(sweep[t].m_max for t in thetas)
    m_use = m_avail if m_max is None else min(m_max, m_avail)

    branch_intervals = []
    for m in range(m_use):
        vals = np.array([sweep[t].eigenvalues[m] for t in thetas])
        i_lo, i_hi = int(np.argmin(vals)), int(np.argmax(vals))
        branch_intervals.append(
            Band(
                lo=float(vals[i_lo]),
                hi=float(vals[i_hi]),
                branches=(m,),
                theta_at_lo=thetas[i_lo],
                theta_at_hi=thetas[i_hi],
            )
        )

    lam_max = window[1] if window is not None else max(b.hi for b in branch_intervals)
    merged: list[Band] = []
    for band in sorted(branch_intervals, key=lambda b: (b.lo, b.hi)):
        if merged and band.lo <= merged[-1].hi:
            prev = merged[-1]
            if band.hi > prev.hi:
                merged[-1] = Band(
                    lo=prev.lo,
                    hi=band.hi,
                    branches=prev.branches + band.branches,
                    theta_at_lo=prev.theta_at_lo,
                    theta_at_hi=band.theta_at_hi,
                )
            else:
                merged[-1] = Band(
                    lo=prev.lo,
                    hi=prev.hi,
                    branches=prev.branches + band.branches,
                    theta_at_lo=prev.theta_at_lo,
                    theta_at_hi=prev.theta_at_hi,
                )
        else:
            merged.append(band)

    gaps: list[tuple[float, float]] = []
    cursor = 0.0
    for band in merged:
        if band.lo > cursor:
            gaps.append((cursor, min(band.lo, lam_max)))
        cursor = max(cursor, band.hi)
        if cursor >= lam_max:
            break
    if cursor < lam_max:
        gaps.append((cursor, lam_max))
    gaps = [(lo, hi) for lo, hi in gaps if hi > lo]

    return BandStructure(
        branch_intervals=branch_intervals,
        bands=merged,
        gaps=gaps,
        window=(0.0, float(lam_max)),
    )


def _bisect(fn, lo, hi, f_lo, f_hi, width):
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if f_mid == 0.0:
            return mid, mid, 0.0
        if (f_lo < 0.0) != (f_mid < 0.0):
            hi, f_hi = mid, f_mid
        else:
            lo, f_lo = mid, f_mid
    return lo, hi, None


def spatial_spectrum(
    beta: BetaMatrix,
    a_hom: np.ndarray,
    theta,
    k_modes,
    window: tuple[float, float],
    L: float = 1.0,
    pole_guard: float = 1e-6,
    scan_points: int = 600,
    bracket_width_rel: float = 1e-10,
) -> list[SpatialRoot]:
    """Roots of the per-mode secular determinant inside the window.

    For each integer Fourier triple z (k = 2 pi z / L) the function
    F(lam) = det(diag(a_hom_i k_i^2) - beta(lam)) is scanned for sign
    changes on every inter-pole subinterval (pole neighborhoods excluded
    by the guard) and each change is certified by bisection down to a
    bracket of width bracket_width_rel * mu_1.

    Returns [] when the active set is empty (zero-map rule).
    """
    if not beta.active:
        return []
    a_diag = np.array([a_hom[i - 1, i - 1] for i in beta.active])
    guard = beta.pole_guard_width(pole_guard)
    width = bracket_width_rel * float(beta.poles[0])
    lo_w, hi_w = window

    # Inter-pole subintervals clipped to the window; the margin is kept
    # slightly wider than the evaluator guard so scan endpoints stay legal.
    margin = guard * (1.0 + 1e-6) + 1e-300
    poles = np.sort(beta.poles)
    cuts = [lo_w]
    for p in poles:
        cuts.extend((p - margin, p + margin))
    cuts.append(hi_w)
    intervals = []
    for a, b in zip(cuts[::2], cuts[1::2]):
        a, b = max(a, lo_w), min(b, hi_w)
        if b > a:
            intervals.append((a, b))

    roots: list[SpatialRoot] = []
    theta_t = tuple(beta.theta)
    for z in k_modes:
        z = tuple(int(v) for v in z)
        k = 2.0 * np.pi * np.asarray(z, dtype=float) / L
        shift = np.diag(a_diag * np.array([k[i - 1] ** 2 for i in beta.active]))

        def F(lam):
            mat = shift - beta(lam, pole_guard=pole_guard)
            return float(np.real(np.linalg.det(mat)))

        for a, b in intervals:
            xs = np.linspace(a, b, scan_points)
            fs = np.array([F(x) for x in xs])
            signs = np.sign(fs)
            for j in range(len(xs) - 1):
                if signs[j] == 0.0:
                    roots.append(
                        SpatialRoot(theta=theta_t, k_index=z, lam=float(xs[j]),
                                    residual=0.0, bracket=(float(xs[j]), float(xs[j])))
                    )
                    continue
                if signs[j] * signs[j + 1] < 0.0:
                    lo, hi, exact = _bisect(F, xs[j], xs[j + 1], fs[j], fs[j + 1], width)
                    lam = 0.5 * (lo + hi) if exact is None else exact
                    roots.append(
                        SpatialRoot(
                            theta=theta_t,
                            k_index=z,
                            lam=float(lam),
                            residual=abs(F(lam)),
                            bracket=(float(lo), float(hi)),
                        )
                    )
    roots.sort(key=lambda r: (r.k_index, r.lam))
    return roots


def spatial_points(
    geom: CellGeometry,
    grid: Grid,
    theta,
    bloch: BlochDecomposition,
    a_hom: np.ndarray,
    k_modes,
    window: tuple[float, float],
    L: float = 1.0,
    pole_guard: float = 1e-6,
    lift_tol: float = 1e-10,
    assembly: BlochAssembly | None = None,
) -> list[SpatialRoot]:
    """Spatial-spectrum roots at one theta; [] when no axis is active.

    Wraps lift solve + resummed secular root finding, applying the
    zero-map rule: quasi-momenta with every component nonzero carry no
    spatial spectrum.
    """
    qm = as_quasi_momentum(theta)
    if not qm.active_set(geom.active_axes):
        return []
    lifts = solve_lifts(geom, grid, qm, bloch, tol=lift_tol, assembly=assembly)
    beta = beta_eval(lifts, bloch, mode="resummed")
    return spatial_spectrum(
        beta, a_hom, qm, k_modes, window, L=L, pole_guard=pole_guard
    )
