"""Command-line interface: geom-check | cell | bloch | beta | spectrum | validate.

Every subcommand reads one YAML config (plus a few flag overrides),
writes machine-readable artifacts into the output directory, and exits
0 on success, 1 on a failed validation verdict, 2 on errors (with a
JSON error payload on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .beta import beta_eval, pure_bloch_bands, spatial_points
from .bloch import ThetaGrid, bloch_eigs, theta_sweep
from .cell import axial_flux, effective_tensor, solve_cell_problem
from .config import SCHEMA_VERSION, RunConfig, parse_config, with_overrides
from .errors import HcBlochError
from .geometry import build_geometry, classify_nodes
from .operators import as_quasi_momentum
from .validation import convergence_report

__all__ = ["main", "run_subcommand"]


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=_json_default)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows, meta: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {meta}", ",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _meta(cfg: RunConfig, geom) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "geometry_hash": geom.content_hash(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }


def _auto_window(cfg: RunConfig, sweep) -> tuple[float, float]:
    if cfg.lambda_max is not None:
        return (0.0, float(cfg.lambda_max))
    top = max(dec.eigenvalues[-1] for dec in sweep.values())
    return (0.0, float(0.999 * top))


def cmd_geom_check(cfg: RunConfig, out_dir: Path) -> int:
    geom = build_geometry(cfg.geometry)
    grid = classify_nodes(geom, cfg.n)
    payload = {
        "status": "ok",
        "geometry_hash": geom.content_hash(),
        "variant": geom.variant,
        "fiber_axes": list(geom.active_axes),
        "n": grid.n,
        "matrix_fraction": float(np.count_nonzero(grid.matrix_mask)) / grid.n**3,
        "fiber_measures": {str(a): grid.fiber_measure(a) for a in geom.active_axes},
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_cell(cfg: RunConfig, out_dir: Path) -> int:
    geom = build_geometry(cfg.geometry)
    grid = classify_nodes(geom, cfg.n)
    solutions = [
        solve_cell_problem(geom, grid, axis, tol=cfg.tol_linear)
        for axis in geom.active_axes
    ]
    tensor = effective_tensor(solutions)
    payload = _meta(cfg, geom)
    payload["solutions"] = [
        {
            "fiber": sol.axis,
            "a_hom": sol.a_hom,
            "discrete_measure": sol.discrete_measure,
            "residual": sol.residual,
            "off_axis_flux": {
                str(j): axial_flux(geom, grid, sol, j)
                for j in (1, 2, 3)
                if j != sol.axis
            },
        }
        for sol in solutions
    ]
    payload["effective_tensor"] = tensor.tolist()
    _write_json(out_dir / "cell.json", payload)
    print(json.dumps({"written": str(out_dir / "cell.json")}))
    return 0


def _sweep(cfg: RunConfig, geom, grid, theta_override=None):
    if theta_override is not None:
        qm = as_quasi_momentum(theta_override)
        dec = bloch_eigs(geom, grid, qm, m_max=cfg.m_max, tol=cfg.tol_eigen, seed=cfg.seed)
        return {qm.theta: dec}
    return theta_sweep(
        geom,
        grid,
        ThetaGrid(cfg.theta_g),
        m_max=cfg.m_max,
        tol=cfg.tol_eigen,
        seed=cfg.seed,
        threads=cfg.threads,
    )


def cmd_bloch(cfg: RunConfig, out_dir: Path, theta_override=None) -> int:
    geom = build_geometry(cfg.geometry)
    grid = classify_nodes(geom, cfg.n)
    sweep = _sweep(cfg, geom, grid, theta_override)
    rows = []
    for theta in sorted(sweep):
        dec = sweep[theta]
        for m, mu in enumerate(dec.eigenvalues, start=1):
            rows.append((theta[0], theta[1], theta[2], m, float(mu)))
    meta = f"hcbloch bands schema={SCHEMA_VERSION} geometry={geom.content_hash()} seed={cfg.seed}"
    _write_csv(out_dir / "bands.csv", ["theta1", "theta2", "theta3", "m", "mu"], rows, meta)
    print(json.dumps({"written": str(out_dir / "bands.csv"), "points": len(sweep)}))
    return 0


def cmd_beta(cfg: RunConfig, out_dir: Path, theta_override=None) -> int:
    from .beta import solve_lifts

    geom = build_geometry(cfg.geometry)
    grid = classify_nodes(geom, cfg.n)
    qm = as_quasi_momentum(theta_override if theta_override is not None else (0.0, 0.0, 0.0))
    dec = bloch_eigs(geom, grid, qm, m_max=cfg.m_max, tol=cfg.tol_eigen, seed=cfg.seed)
    lifts = solve_lifts(geom, grid, qm, dec, tol=cfg.tol_linear)
    beta = beta_eval(lifts, dec, mode="resummed")
    lam_hi = cfg.lambda_max if cfg.lambda_max is not None else 0.999 * float(dec.eigenvalues[-1])
    guard = beta.pole_guard_width(cfg.pole_guard)
    samples = np.linspace(0.0, lam_hi, 400)
    header = ["lambda"]
    for i in beta.active:
        for j in beta.active:
            header += [f"re_beta_{i}{j}", f"im_beta_{i}{j}"]
    rows = []
    for lam in samples:
        if np.any(np.abs(beta.poles - lam) < guard):
            continue
        mat = beta(float(lam), pole_guard=cfg.pole_guard)
        row = [float(lam)]
        for a in range(len(beta.active)):
            for b in range(len(beta.active)):
                row += [float(mat[a, b].real), float(mat[a, b].imag)]
        rows.append(tuple(row))
    meta = (
        f"hcbloch beta schema={SCHEMA_VERSION} geometry={geom.content_hash()} "
        f"theta={','.join(repr(t) for t in qm.theta)} seed={cfg.seed}"
    )
    _write_csv(out_dir / "beta.csv", header, rows, meta)
    print(json.dumps({"written": str(out_dir / "beta.csv"), "active_axes": list(beta.active)}))
    return 0


def cmd_spectrum(cfg: RunConfig, out_dir: Path) -> int:
    geom = build_geometry(cfg.geometry)
    grid = classify_nodes(geom, cfg.n)
    sweep = _sweep(cfg, geom, grid)
    window = _auto_window(cfg, sweep)
    structure = pure_bloch_bands(sweep, m_max=cfg.m_max, window=window)

    a_hom = effective_tensor(
        [solve_cell_problem(geom, grid, axis, tol=cfg.tol_linear) for axis in geom.active_axes]
    )
    spatial = []
    for theta in sorted(sweep):
        spatial.extend(
            spatial_points(
                geom,
                grid,
                theta,
                sweep[theta],
                a_hom,
                cfg.k_modes,
                window,
                L=cfg.torus_period,
                pole_guard=cfg.pole_guard,
                lift_tol=cfg.tol_linear,
            )
        )

    payload = _meta(cfg, geom)
    payload.update(
        {
            "window": list(window),
            "branch_intervals": [
                {
                    "m": b.branches[0] + 1,
                    "lo": b.lo,
                    "hi": b.hi,
                    "theta_at_lo": list(b.theta_at_lo),
                    "theta_at_hi": list(b.theta_at_hi),
                }
                for b in structure.branch_intervals
            ],
            "bands": [
                {"lo": b.lo, "hi": b.hi, "branches": [m + 1 for m in b.branches]}
                for b in structure.bands
            ],
            "gaps": [list(g) for g in structure.gaps],
            "spatial": [
                {
                    "theta": list(r.theta),
                    "k": list(r.k_index),
                    "lambda": r.lam,
                    "residual": r.residual,
                    "bracket": list(r.bracket),
                }
                for r in spatial
            ],
        }
    )
    _write_json(out_dir / "spectrum.json", payload)
    print(
        json.dumps(
            {
                "written": str(out_dir / "spectrum.json"),
                "bands": len(structure.bands),
                "gaps": len(structure.gaps),
                "spatial_points": len(spatial),
            }
        )
    )
    return 0


def cmd_validate(cfg: RunConfig, out_dir: Path, eps_override=None) -> int:
    geom = build_geometry(cfg.geometry)
    eps_K = list(eps_override) if eps_override is not None else list(cfg.eps_K)
    probe_theta = (0.0, 0.0, 0.0) if cfg.contrast == "double_porosity" else (np.pi, np.pi, np.pi)
    report = convergence_report(
        geom,
        cfg.p_cell,
        eps_K,
        theta=probe_theta,
        k_index=cfg.validate_k_index,
        contrast=cfg.contrast,
        residual_factor=cfg.residual_factor,
        monotone_slack=cfg.monotone_slack,
        tol=cfg.tol_linear,
    )
    payload = _meta(cfg, geom)
    payload["report"] = report.to_dict()
    _write_json(out_dir / "validate.json", payload)
    print(json.dumps({"written": str(out_dir / "validate.json"), "passed": report.passed}))
    return 0 if report.passed else 1


def _parse_theta(text: str | None):
    if text is None:
        return None
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise HcBlochError(f"--theta needs three comma-separated values, got {text!r}")
    return tuple(parts)


def _parse_eps(text: str | None):
    if text is None:
        return None
    return [int(v) for v in text.split(",")]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hcbloch",
        description="Band structure of high-contrast fibered composites and "
        "two-scale validation of the homogenized limit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("geom-check", "cell", "bloch", "beta", "spectrum", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", default=None, help="output directory (default from config)")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        if name in ("bloch", "beta"):
            p.add_argument("--theta", default=None, help="single quasi-momentum 't1,t2,t3'")
        if name in ("beta", "spectrum"):
            p.add_argument("--lambda-max", dest="lambda_max", type=float, default=None)
        if name == "validate":
            p.add_argument("--eps", default=None, help="comma-separated K list, e.g. 4,8")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        cfg = with_overrides(
            cfg,
            threads=args.threads,
            seed=args.seed,
            lambda_max=getattr(args, "lambda_max", None),
            out_dir=args.out,
        )
        out_dir = Path(cfg.out_dir)
        return run_subcommand(
            args.command,
            cfg,
            out_dir,
            theta=_parse_theta(getattr(args, "theta", None)),
            eps=_parse_eps(getattr(args, "eps", None)),
        )
    except HcBlochError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "violations"):
            payload["violations"] = exc.violations
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 2


def run_subcommand(command: str, cfg: RunConfig, out_dir: Path, theta=None, eps=None) -> int:
    if command == "geom-check":
        return cmd_geom_check(cfg, out_dir)
    if command == "cell":
        return cmd_cell(cfg, out_dir)
    if command == "bloch":
        return cmd_bloch(cfg, out_dir, theta_override=theta)
    if command == "beta":
        return cmd_beta(cfg, out_dir, theta_override=theta)
    if command == "spectrum":
        return cmd_spectrum(cfg, out_dir)
    if command == "validate":
        return cmd_validate(cfg, out_dir, eps_override=eps)
    raise HcBlochError(f"unknown subcommand {command!r}")


if __name__ == "__main__":
    sys.exit(main())
