"""Command line front end: ``poroscale <cell|table|darcy|transport|verify>``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import ScenarioConfig, parse_config
from .darcy import continuity_experiment, darcy_time_slices, permeability_field
from .diffeo import circle_path
from .errors import BandViolationError, ConfigError, PoroscaleError, ReparametrizationError
from .evolution import evolve
from .geometry import UnitCellGrid, circle_levelset, extract_interface
from .tables import (PhiTable, SolverConfig, build_table, cell_parameters, read_table_csv,
                     smoothness_check, write_phi_table_csv, write_table_csv)
from .transport import DIAGNOSTIC_COLUMNS, CouplingMode, ReactionRate, TransportSetup, initial_state, run
from .verify import format_report, run_criteria

OUTPUT_ENV = "POROSCALE_OUTPUT_DIR"
DEFAULT_OUTPUT = "poroscale_out"
VERIFY_FAILED = 5

log = logging.getLogger("poroscale")


class Outputs:
    """Collects written files for the manifest."""

    def __init__(self, root: Path, formats: set):
        self.root = root
        self.formats = formats
        self.files = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def wants(self, fmt: str) -> bool:
        return fmt in self.formats


# --- shared builders ---

def _geometry(cfg: ScenarioConfig):
    return circle_levelset(cfg.geometry.radius, UnitCellGrid(cfg.geometry.n))


def _solver_config(cfg: ScenarioConfig, with_k: bool | None = None) -> SolverConfig:
    t = cfg.tables
    return SolverConfig(t.eps_penal, t.eta_penal, with_K=t.with_k if with_k is None else with_k,
                        delta=t.delta)


def load_or_build_table(cfg: ScenarioConfig, with_k: bool | None = None):
    if cfg.tables.file:
        return read_table_csv(cfg.tables.file, cfg.tables.delta)
    phi0 = _geometry(cfg)
    ev = cfg.evolution
    if ev.method == "analytic":
        path = circle_path(cfg.geometry.radius, ev.r_end)
        s_values = np.linspace(path.s_min, path.s_max, cfg.tables.samples)
        return build_table(path, phi0, config=_solver_config(cfg, with_k), s_values=s_values)
    epath = evolve(phi0, ev.v_n, ev.dt, ev.steps)
    return build_table(epath, samples=cfg.tables.samples, config=_solver_config(cfg, with_k))


# --- subcommands ---

def cmd_cell(cfg: ScenarioConfig, out: Outputs, args) -> int:
    phi = _geometry(cfg)
    params = cell_parameters(phi, _solver_config(cfg))
    D = np.asarray(params.D)
    summary = params.summary()
    summary.update(radius=cfg.geometry.radius, n=cfg.geometry.n,
                   D_anisotropy=float(abs(D[0, 0] - D[1, 1])), D_offdiagonal=float(abs(D[0, 1])))
    if out.wants("json"):
        fileio.write_json(out.path("cell_summary.json"), summary)
    if out.wants("csv"):
        fileio.write_interface_csv(out.path("interface.csv"), extract_interface(phi))
        rows = [{"quantity": "phi", "value": params.phi}, {"quantity": "sigma", "value": params.sigma}]
        rows += [{"quantity": f"D{i + 1}{j + 1}", "value": D[i, j]} for i in range(2) for j in range(2)]
        if params.K is not None:
            rows += [{"quantity": f"K{i + 1}{j + 1}", "value": params.K[i, j]} for i in range(2) for j in range(2)]
        fileio.write_rows_csv(out.path("cell_summary.csv"), rows, ["quantity", "value"])
    fileio.write_levelset(out.path("levelset.txt"), phi)
    print(f"phi = {params.phi:.6f}")
    print(f"sigma = {params.sigma:.6f}")
    print(f"D = [[{D[0, 0]:.6f}, {D[0, 1]:.3e}], [{D[1, 0]:.3e}, {D[1, 1]:.6f}]]")
    if params.K is not None:
        K = params.K
        print(f"K = [[{K[0, 0]:.6e}, {K[0, 1]:.3e}], [{K[1, 0]:.3e}, {K[1, 1]:.6e}]]")
    return 0


def cmd_table(cfg: ScenarioConfig, out: Outputs, args) -> int:
    table = load_or_build_table(cfg)
    write_table_csv(table, out.path("table.csv"))
    try:
        write_phi_table_csv(PhiTable(table), out.path("phi_table.csv"))
    except ReparametrizationError as exc:
        out.files.pop()
        log.warning("no porosity-indexed table: %s", exc)
    if len(table) >= 6:
        names = ["phi", "sigma", "D11", "D22"] + (["K11", "K22"] if table.K is not None else [])
        rep = smoothness_check(table, names)
        rows = [{"column": k, "order": e.order, "richardson_derivative": e.richardson,
                 "noise_floor": e.noise_floor, "noise_limited": str(e.noise_limited).lower()}
                for k, e in rep.items()]
        fileio.write_rows_csv(out.path("table_smoothness.csv"), rows,
                              ["column", "order", "richardson_derivative", "noise_floor", "noise_limited"])
    print(f"table with {len(table)} samples, s in [{table.s[0]:.6g}, {table.s[-1]:.6g}], "
          f"phi in [{table.phi.min():.6g}, {table.phi.max():.6g}]")
    return 0


def cmd_darcy(cfg: ScenarioConfig, out: Outputs, args) -> int:
    table = load_or_build_table(cfg, with_k=True)
    grid = cfg.darcy_grid()
    data = cfg.darcy_data()
    sfield = cfg.s_field()
    Xc, Yc = grid.cell_centers()
    times = np.linspace(0.0, cfg.macro.t_end, cfg.darcy.slices + 1)
    Ks = [permeability_field(table, np.broadcast_to(sfield(t, Xc, Yc), Xc.shape)) for t in times]
    result = darcy_time_slices(grid, Ks, data, workers=max(1, args.threads))
    rows = []
    for k, (t, f) in enumerate(zip(times, result.fields)):
        rows.append({"slice": k, "t": t, "v_change_l2": result.differences[k - 1] if k else 0.0,
                     "mass_balance": f.mass_balance(), "coercivity": f.coercivity, "k_max": f.k_max,
                     "cg_iterations": f.info.iterations})
        if out.wants("vtk"):
            fileio.write_darcy_vtk(out.path(f"darcy/slice_{k:04d}.vtk"), f)
    if out.wants("csv"):
        fileio.write_rows_csv(out.path("darcy_slices.csv"), rows, list(rows[0]))
    bump = np.exp(-((Xc - 0.5 * grid.lx) ** 2 + (Yc - 0.5 * grid.ly) ** 2) / cfg.darcy.bump_width ** 2)
    crow = []
    for eps in cfg.continuity_eps():
        rep = continuity_experiment(grid, Ks[0], Ks[0] * (1 + eps * bump)[..., None, None], data)
        r = rep.ratios()
        crow.append({"eps": eps, "dK_linf": rep.dK_linf, "dp_h1": rep.dp_h1, "dv_l2": rep.dv_l2,
                     "dv_linf": rep.dv_linf, "ratio_v_l2": r["v_l2"], "ratio_p_h1": r["p_h1"],
                     "ratio_v_linf_sqrt": r["v_linf_sqrt"]})
    if out.wants("csv"):
        fileio.write_rows_csv(out.path("continuity.csv"), crow, list(crow[0]))
    if out.wants("json"):
        fileio.write_json(out.path("darcy_summary.json"),
                          {"slices": len(result.fields), "max_slice_change_l2": result.max_difference,
                           "max_mass_balance": max(abs(r["mass_balance"]) for r in rows),
                           "continuity": crow})
    print(f"{len(result.fields)} Darcy slices, max consecutive |dv|_L2 = {result.max_difference:.6e}")
    return 0


def cmd_transport(cfg: ScenarioConfig, out: Outputs, args) -> int:
    m = cfg.macro
    full = m.mode == "full_diffusive"
    table = load_or_build_table(cfg, with_k=m.mode == "partial_advective")
    phi_table = PhiTable(table) if full else None
    mode = CouplingMode(m.mode, None if full else cfg.s_field(), m.vn_sign)
    # transport boundary conditions come from the c_<edge> keys, not from the Darcy tags
    setup = TransportSetup(cfg.macro_grid(), cfg.concentration_dirichlet(),
                           ReactionRate.linear() if m.reaction == "linear" else ReactionRate.zero(),
                           m.diffusion_scale)
    start = initial_state(setup, m.c0, mode, table, phi_table, m.phi0)
    result = run(mode, setup, start, m.t_end, m.dt, table=table, phi_table=phi_table,
                 darcy_grid=cfg.darcy_grid(), darcy_data=cfg.darcy_data())
    if out.wants("csv"):
        fileio.write_rows_csv(out.path("diagnostics.csv"), result.diagnostics, DIAGNOSTIC_COLUMNS)
    if out.wants("vtk"):
        every = cfg.output.every
        for k, st in enumerate(result.states):
            if k % every == 0 or k == len(result.states) - 1:
                fileio.write_state_vtk(out.path(f"transport/state_{k:05d}.vtk"), setup.grid, st)
    summary = {"mode": m.mode, "completed": result.completed, "horizon": result.horizon,
               "steps": len(result.states) - 1, "max_picard_iterations": result.max_picard(),
               "error": result.error.reason() if result.error else None,
               "band_margin_min": min((d.get("band_margin", np.inf) for d in result.diagnostics))}
    if out.wants("json"):
        fileio.write_json(out.path("transport_summary.json"), summary)
    if result.error is not None:
        _finish(out, args, "transport")
        err = result.error
        if isinstance(err, BandViolationError):
            raise type(err)(f"{err} (valid up to t={result.horizon:.6g})", err.node, err.t)
        raise err
    print(f"transport {m.mode}: reached t = {result.horizon:.6g} in {len(result.states) - 1} steps")
    return 0


def cmd_verify(cfg: ScenarioConfig, out: Outputs, args) -> int:
    results = run_criteria(seed=args.seed)
    report = format_report(results)
    out.path("verify_report.txt").write_text(report)
    fileio.write_json(out.root / "verify_timings.json",
                      {str(r.number): round(r.seconds, 3) for r in results})
    sys.stdout.write(report)
    return 0 if all(r.passed for r in results) else VERIFY_FAILED


COMMANDS = {"cell": cmd_cell, "table": cmd_table, "darcy": cmd_darcy, "transport": cmd_transport,
            "verify": cmd_verify}


def _finish(out: Outputs, args, command: str) -> None:
    fileio.write_manifest(out.root, out.files, {"command": command, "seed": args.seed})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poroscale", description="Micro-macro reactive transport scenarios.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI scenario file (optional for verify)")
    p.add_argument("--out", help=f"output directory (default: [output] directory, ${OUTPUT_ENV}, "
                                 f"or ./{DEFAULT_OUTPUT})")
    p.add_argument("--threads", type=int, default=1, help="workers for independent Darcy slices")
    p.add_argument("--seed", type=int, default=0, help="seed for randomised audit data")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def output_dir(cfg: ScenarioConfig, args) -> Path:
    return Path(args.out or cfg.output.directory or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.config:
            cfg = parse_config(args.config)
        elif args.command == "verify":
            cfg = ScenarioConfig()
        else:
            raise ConfigError(f"command {args.command!r} needs --config")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Outputs(output_dir(cfg, args), cfg.formats())
        code = COMMANDS[args.command](cfg, out, args)
        _finish(out, args, args.command)
        return code
    except PoroscaleError as exc:
        print(exc.reason(), file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"InputError: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
