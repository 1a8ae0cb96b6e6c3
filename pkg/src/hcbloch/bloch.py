"""Quasi-periodic Bloch eigenproblem on the soft phase.

The Bloch operator at quasi-momentum theta is -div(a0 grad .) acting on
soft-phase node values with zero trace on the stiff closures and
theta-quasi-periodic wrap across the cell faces.  Its lowest eigenpairs
are positive (the stiff regions act as Dirichlet anchors) and ordered by
the min-max principle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError
from .geometry import CellGeometry, Grid
from .operators import (
    QuasiMomentum,
    SparseOperator,
    as_quasi_momentum,
    eigensolve,
    full_stiffness,
    mass_operator,
    restrict_to,
)

__all__ = [
    "BlochAssembly",
    "BlochDecomposition",
    "ThetaGrid",
    "assemble_bloch",
    "bloch_eigs",
    "dirichlet_baseline",
    "theta_sweep",
]


@dataclass(frozen=True)
class BlochAssembly:
    """Discrete Bloch operator context at one quasi-momentum.

    ``full`` is the unrestricted cell stiffness (all n^3 nodes) and
    ``interior`` its restriction to the soft-phase DOFs; both are needed
    again for harmonic lifts and surface fluxes.
    """

    grid: Grid = field(repr=False)
    theta: QuasiMomentum
    a0: np.ndarray = field(repr=False)
    full: sp.csr_matrix = field(repr=False)
    interior: sp.csr_matrix = field(repr=False)
    dofs: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def dim(self) -> int:
        return self.interior.shape[0]

    def operator(self) -> SparseOperator:
        return SparseOperator(matrix=self.interior, h=self.h, dofs=self.dofs, full=self.full)

    def embed(self, values: np.ndarray) -> np.ndarray:
        """Extend a DOF vector by zero to the full node grid (flat)."""
        out = np.zeros(self.grid.n**3, dtype=np.result_type(values.dtype, self.full.dtype))
        out[self.dofs] = values
        return out


def assemble_bloch(geom: CellGeometry, grid: Grid, theta) -> BlochAssembly:
    qm = as_quasi_momentum(theta)
    a0 = grid.a0_field()
    full = full_stiffness(grid.n, a0, qm, bc="quasi_periodic")
    interior, dofs = restrict_to(full, grid.matrix_mask)
    return BlochAssembly(grid=grid, theta=qm, a0=a0, full=full, interior=interior, dofs=dofs)


@dataclass(frozen=True)
class BlochDecomposition:
    """Lowest Bloch eigenpairs at one theta, L^2(Q_0)-orthonormal."""

    theta: QuasiMomentum
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (dim, m_max), columns orthonormal in h^3 inner product
    dofs: np.ndarray = field(repr=False)
    grid_n: int
    residuals: np.ndarray = field(repr=False)

    @property
    def m_max(self) -> int:
        return len(self.eigenvalues)

    def mode_field(self, m: int) -> np.ndarray:
        """Eigenfunction m as an (n,n,n) array, zero on the stiff phase."""
        out = np.zeros(self.grid_n**3, dtype=self.vectors.dtype)
        out[self.dofs] = self.vectors[:, m]
        return out.reshape((self.grid_n,) * 3)


def bloch_eigs(
    geom: CellGeometry,
    grid: Grid,
    theta,
    m_max: int = 10,
    tol: float = 1e-8,
    seed: int = 0,
    method: str = "auto",
    assembly: BlochAssembly | None = None,
) -> BlochDecomposition:
    """Lowest m_max eigenpairs of the Bloch operator at theta."""
    asm = assembly if assembly is not None else assemble_bloch(geom, grid, theta)
    dec = eigensolve(
        asm.operator(),
        mass_operator(asm.h, asm.dim),
        m_max=m_max,
        tol=tol,
        seed=seed,
        method=method,
    )
    return BlochDecomposition(
        theta=asm.theta,
        eigenvalues=dec.eigenvalues,
        vectors=dec.vectors,
        dofs=asm.dofs,
        grid_n=grid.n,
        residuals=dec.residuals,
    )


def dirichlet_baseline(
    geom: CellGeometry,
    grid: Grid,
    m_max: int = 10,
    tol: float = 1e-8,
    seed: int = 0,
    method: str = "auto",
) -> np.ndarray:
    """Eigenvalues of the full Dirichlet operator on the soft phase.

    Zero trace on the stiff closures and on the cell boundary: the grid
    planes with a zero coordinate leave the DOF set and wrap links are
    cut.  These dominate every Bloch branch: lambda_n(theta) <= mu_n.
    """
    n = grid.n
    a0 = grid.a0_field()
    full = full_stiffness(n, a0, None, bc="dirichlet_box")
    inner = np.ones((n, n, n), dtype=bool)
    for ax in range(3):
        sl = [slice(None)] * 3
        sl[ax] = 0
        inner[tuple(sl)] = False
    interior, dofs = restrict_to(full, grid.matrix_mask & inner)
    dec = eigensolve(
        SparseOperator(matrix=interior, h=grid.h, dofs=dofs, full=full),
        mass_operator(grid.h, dofs.size),
        m_max=m_max,
        tol=tol,
        seed=seed,
        method=method,
    )
    return dec.eigenvalues


@dataclass(frozen=True)
class ThetaGrid:
    """Uniform g^3 grid over [0, 2pi)^3, lexicographically ordered.

    Contains theta = 0 and, for g >= 2, every axis hyperplane
    {theta_i = 0}, where the spatial spectrum lives.
    """

    g: int

    def __post_init__(self):
        if self.g < 1:
            raise ValueError("theta grid needs g >= 1")

    @property
    def points(self) -> list[QuasiMomentum]:
        step = 2.0 * np.pi / self.g
        vals = [k * step for k in range(self.g)]
        return [
            QuasiMomentum((t1, t2, t3))
            for t1 in vals
            for t2 in vals
            for t3 in vals
        ]

    def adjacent_pairs(self):
        """Pairs of grid points differing by one step in one component."""
        step = 2.0 * np.pi / self.g
        vals = [k * step for k in range(self.g)]
        pairs = []
        pts = {}
        for i1, t1 in enumerate(vals):
            for i2, t2 in enumerate(vals):
                for i3, t3 in enumerate(vals):
                    pts[(i1, i2, i3)] = (t1, t2, t3)
        for (i1, i2, i3), t in pts.items():
            for d, i in enumerate((i1, i2, i3)):
                if i + 1 < self.g:
                    nb = list((i1, i2, i3))
                    nb[d] += 1
                    pairs.append((t, pts[tuple(nb)]))
        return pairs


def theta_sweep(
    geom: CellGeometry,
    grid: Grid,
    tgrid: ThetaGrid,
    m_max: int = 10,
    tol: float = 1e-8,
    seed: int = 0,
    threads: int = 1,
    method: str = "auto",
) -> dict[tuple[float, float, float], BlochDecomposition]:
    """Bloch eigenvalues over the whole theta grid.

    The result map is keyed by theta tuples in lexicographic order and is
    deterministic regardless of the parallel schedule; per-point failures
    are aggregated into a single ConvergenceError naming each theta.
    """
    points = tgrid.points

    def solve(qm: QuasiMomentum):
        return bloch_eigs(geom, grid, qm, m_max=m_max, tol=tol, seed=seed, method=method)

    results: dict[tuple[float, float, float], BlochDecomposition] = {}
    failures: list[tuple[tuple[float, float, float], Exception]] = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [(qm, pool.submit(solve, qm)) for qm in points]
        for qm, fut in futures:
            try:
                results[qm.theta] = fut.result()
            except Exception as exc:  # aggregate below
                failures.append((qm.theta, exc))
    else:
        for qm in points:
            try:
                results[qm.theta] = solve(qm)
            except Exception as exc:
                failures.append((qm.theta, exc))
    if failures:
        summary = "; ".join(f"theta={t}: {e}" for t, e in failures)
        raise ConvergenceError(f"theta sweep failed at {len(failures)} point(s): {summary}")
    return {t: results[t] for t in sorted(results)}
