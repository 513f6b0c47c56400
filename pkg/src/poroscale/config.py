"""Scenario configuration: flat INI sections, defaults and cross-field validation."""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .darcy import DIRICHLET, EDGES, FLUX, DarcyData, MacroGrid
from .errors import ConfigError
from .geometry import default_margin
from .tables import DEFAULT_DELTA

OUTPUT_FORMATS = ("csv", "vtk", "json")


@dataclass
class GeometryConfig:
    shape: str = "circle"
    radius: float = 0.3
    n: int = 128


@dataclass
class EvolutionConfig:
    method: str = "analytic"      # analytic radial path or level-set characteristics
    r_end: float = 0.15
    v_n: float = 1.0
    dt: float = 0.01
    steps: int = 10


@dataclass
class TablesConfig:
    samples: int = 7
    with_k: bool = True
    delta: float = DEFAULT_DELTA
    eps_penal: float = 1e-6
    eta_penal: float = 1e-6
    file: str = ""


@dataclass
class MacroConfig:
    mode: str = "partial_diffusive"
    nx: int = 16
    ny: int = 16
    lx: float = 1.0
    ly: float = 1.0
    t_end: float = 0.2
    dt: float = 0.01
    c0: float = 1.0
    phi0: float = 0.85
    vn_sign: int = 1
    s0: float = 0.02
    s_rate: float = 0.2
    s_grad_x: float = 0.0
    s_grad_y: float = 0.0
    reaction: str = "linear"
    diffusion_scale: float = 1.0
    c_left: str = "none"
    c_right: str = "none"
    c_bottom: str = "none"
    c_top: str = "none"


@dataclass
class DarcyConfig:
    left: str = "flux:1.0"
    right: str = "dirichlet:0.0"
    bottom: str = "flux:0.0"
    top: str = "flux:0.0"
    source: float = 0.0
    slices: int = 10
    continuity_eps: str = "1e-2,1e-3,1e-4"
    bump_width: float = 0.1


@dataclass
class OutputConfig:
    directory: str = ""
    formats: str = "csv,vtk,json"
    every: int = 1


SECTIONS = {"geometry": GeometryConfig, "evolution": EvolutionConfig, "tables": TablesConfig,
            "macro": MacroConfig, "darcy": DarcyConfig, "output": OutputConfig}


@dataclass
class ScenarioConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    tables: TablesConfig = field(default_factory=TablesConfig)
    macro: MacroConfig = field(default_factory=MacroConfig)
    darcy: DarcyConfig = field(default_factory=DarcyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: str = ""

    # --- derived objects ---

    def s_range(self) -> tuple:
        """Order-parameter range covered by the geometry path."""
        if self.evolution.method == "analytic":
            end = self.geometry.radius - self.evolution.r_end
        else:
            end = self.evolution.v_n * self.evolution.dt * self.evolution.steps
        return min(0.0, end), max(0.0, end)

    def radius_range(self) -> tuple:
        lo, hi = self.s_range()
        r = self.geometry.radius
        return r - hi, r - lo

    def s_field(self):
        m = self.macro

        def s(t, X, Y):
            return m.s0 + m.s_rate * t + m.s_grad_x * X + m.s_grad_y * Y
        return s

    def macro_grid(self) -> MacroGrid:
        m = self.macro
        return MacroGrid(m.nx, m.ny, m.lx, m.ly, {e: DIRICHLET for e in EDGES})

    def concentration_dirichlet(self) -> dict:
        out = {}
        for e in EDGES:
            val = getattr(self.macro, f"c_{e}")
            if val.strip().lower() != "none":
                out[e] = float(val)
        return out

    def darcy_grid(self) -> MacroGrid:
        m = self.macro
        tags = {e: _split_bc(getattr(self.darcy, e))[0] for e in EDGES}
        return MacroGrid(m.nx, m.ny, m.lx, m.ly, tags)

    def darcy_data(self) -> DarcyData:
        flux, pressure = {}, {}
        for e in EDGES:
            kind, val = _split_bc(getattr(self.darcy, e))
            (flux if kind == FLUX else pressure)[e] = val
        return DarcyData(self.darcy.source, flux, pressure)

    def continuity_eps(self) -> list:
        return [float(v) for v in self.darcy.continuity_eps.split(",") if v.strip()]

    def formats(self) -> set:
        return {f.strip() for f in self.output.formats.split(",") if f.strip()}


def _split_bc(text: str) -> tuple:
    kind, _, val = text.partition(":")
    kind = kind.strip().lower()
    if kind not in (DIRICHLET, FLUX):
        raise ValueError(f"boundary kind must be 'flux' or 'dirichlet', got {kind!r}")
    return kind, float(val) if val.strip() else 0.0


def _key_lines(text: str) -> dict:
    """(section, key) -> line number, for error messages."""
    out, section = {}, None
    for k, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            out[(section, None)] = k
        elif section and s and s[0] not in "#;":
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            out.setdefault((section, key), k)
    return out


def _convert(raw: str, typ):
    if typ is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        val = float(raw)
        if val != int(val):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(val)
    if typ is float:
        return float(raw)
    return raw.strip()


def parse_config_text(text: str, source: str = "<string>") -> ScenarioConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: key outside any [section]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}: duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}: duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"{source}: cannot parse line {exc.errors[0][1] if exc.errors else ''}",
                          lineno) from None
    lines = _key_lines(text)
    problems = []
    cfg = ScenarioConfig(source=source)
    for sec in parser.sections():
        name = sec.strip().lower()
        if name not in SECTIONS:
            problems.append(f"[{sec}] (line {lines.get((name, None))}): unknown section")
            continue
        obj = getattr(cfg, name)
        types = {f.name: type(getattr(obj, f.name)) for f in fields(obj)}
        for key, raw in parser.items(sec):
            where = f"[{name}] {key} (line {lines.get((name, key))})"
            if key not in types:
                problems.append(f"{where}: unknown key")
                continue
            try:
                setattr(obj, key, _convert(raw, types[key]))
            except ValueError as exc:
                problems.append(f"{where}: {exc}")
    if problems:
        raise ConfigError(problems)
    problems = validate(cfg, lines)
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(path) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"configuration file {str(p)!r} does not exist")
    return parse_config_text(p.read_text(), str(p))


def validate(cfg: ScenarioConfig, lines: dict | None = None) -> list:
    """Every violated precondition, each naming the offending key."""
    lines = lines or {}
    out = []

    def bad(section, key, msg):
        ln = lines.get((section, key))
        out.append(f"[{section}] {key}{f' (line {ln})' if ln else ''}: {msg}")

    g, ev, tb, m, dc, op = cfg.geometry, cfg.evolution, cfg.tables, cfg.macro, cfg.darcy, cfg.output
    if g.shape != "circle":
        bad("geometry", "shape", f"only 'circle' is supported, got {g.shape!r}")
    if g.n < 16:
        bad("geometry", "n", f"grid needs at least 16 cells, got {g.n}")
    margin = default_margin(max(g.n, 16))
    if not 0.0 < g.radius < 0.5 - margin:
        bad("geometry", "radius", f"must lie in (0, {0.5 - margin:.4g}) for n={g.n}")
    if ev.method not in ("analytic", "levelset"):
        bad("evolution", "method", f"must be 'analytic' or 'levelset', got {ev.method!r}")
    elif ev.method == "analytic":
        if not 0.0 < ev.r_end < 0.5 - margin or ev.r_end == g.radius:
            bad("evolution", "r_end", f"must differ from the radius and lie in (0, {0.5 - margin:.4g})")
        elif not tb.file and 0.0 < tb.delta < 0.5:
            for section, key, r in (("geometry", "radius", g.radius), ("evolution", "r_end", ev.r_end)):
                porosity = 1.0 - np.pi * r * r
                if not tb.delta <= porosity <= 1.0 - tb.delta:
                    bad(section, key, f"circle porosity {porosity:.6f} leaves the band "
                                      f"[{tb.delta:g}, {1 - tb.delta:g}]; lower [tables] delta or change the radius")
    else:
        if ev.dt <= 0:
            bad("evolution", "dt", "must be positive")
        if ev.steps < 1:
            bad("evolution", "steps", "must be at least 1")
        if ev.v_n == 0:
            bad("evolution", "v_n", "must be nonzero to sweep a path")
    if tb.samples < 3:
        bad("tables", "samples", f"need at least 3 samples, got {tb.samples}")
    if not 0.0 < tb.delta < 0.5:
        bad("tables", "delta", "must lie in (0, 0.5)")
    for key in ("eps_penal", "eta_penal"):
        if not 0.0 < getattr(tb, key) < 1.0:
            bad("tables", key, "must lie in (0, 1)")
    if tb.file and not Path(tb.file).is_file():
        bad("tables", "file", f"table file {tb.file!r} not found")

    if m.mode == "full_advective":
        bad("macro", "mode", "full coupling with advective transport is not implemented; "
                             "use full_diffusive or partial_advective")
    elif m.mode not in ("partial_diffusive", "full_diffusive", "partial_advective"):
        bad("macro", "mode", f"unknown mode {m.mode!r}")
    if m.nx < 1 or m.ny < 1:
        bad("macro", "nx", "need at least one cell per axis")
    if m.lx <= 0 or m.ly <= 0:
        bad("macro", "lx", "domain lengths must be positive")
    if m.t_end < 0:
        bad("macro", "t_end", "must be non-negative")
    if m.dt <= 0:
        bad("macro", "dt", "must be positive")
    if m.vn_sign not in (1, -1):
        bad("macro", "vn_sign", "must be +1 or -1")
    if m.reaction not in ("linear", "zero"):
        bad("macro", "reaction", f"must be 'linear' or 'zero', got {m.reaction!r}")
    if m.mode == "full_diffusive" and m.reaction != "linear":
        bad("macro", "reaction", "full coupling requires the linear rate f(c) = c")
    if m.diffusion_scale <= 0:
        bad("macro", "diffusion_scale", "must be positive")
    for e in EDGES:
        raw = getattr(m, f"c_{e}")
        if raw.strip().lower() == "none":
            continue
        try:
            val = float(raw)
        except ValueError:
            bad("macro", f"c_{e}", f"must be 'none' or a number, got {raw!r}")
            continue
        if abs(val - m.c0) > 1e-12:
            bad("macro", f"c_{e}", f"boundary value {val:g} incompatible with the initial value c0={m.c0:g} "
                                   "(compatibility C0(0,.) = c0 on the boundary)")
    if m.c0 < 0 and m.mode == "full_diffusive":
        bad("macro", "c0", "full coupling needs c0 >= 0")

    lo, hi = cfg.s_range()
    if m.mode.startswith("partial"):
        corners = [(x, y) for x in (0.0, m.lx) for y in (0.0, m.ly)]
        svals = [m.s0 + m.s_rate * t + m.s_grad_x * x + m.s_grad_y * y
                 for t in (0.0, max(m.t_end, 0.0)) for x, y in corners]
        if min(svals) < lo - 1e-12 or max(svals) > hi + 1e-12:
            bad("macro", "s0", f"s(t, x) spans [{min(svals):.4g}, {max(svals):.4g}], outside the "
                               f"tabulated range [{lo:.4g}, {hi:.4g}]")
    if m.mode == "full_diffusive":
        r_lo, r_hi = cfg.radius_range()
        phi_lo, phi_hi = 1 - np.pi * r_hi ** 2, 1 - np.pi * r_lo ** 2
        if not (max(phi_lo, tb.delta) < m.phi0 < min(phi_hi, 1 - tb.delta)):
            bad("macro", "phi0", f"must lie inside the porosity range "
                                 f"({max(phi_lo, tb.delta):.4g}, {min(phi_hi, 1 - tb.delta):.4g})")
    if m.mode == "partial_advective":
        if not tb.with_k:
            bad("tables", "with_k", "advective transport needs the permeability column")
        # inflow flux data bound the boundary speed; the run re-checks the true CFL number
        try:
            gmax = max([abs(_split_bc(getattr(dc, e))[1]) for e in EDGES
                        if _split_bc(getattr(dc, e))[0] == FLUX] + [0.0])
            r_lo, r_hi = cfg.radius_range()
            phi_min = 1 - np.pi * r_hi ** 2
            h = min(m.lx / max(m.nx, 1), m.ly / max(m.ny, 1))
            if phi_min > 0 and m.dt * gmax / (h * phi_min) > 0.9:
                bad("macro", "dt", f"CFL estimate {m.dt * gmax / (h * phi_min):.3g} exceeds 0.9")
        except ValueError:
            pass

    for e in EDGES:
        try:
            _split_bc(getattr(dc, e))
        except ValueError as exc:
            bad("darcy", e, str(exc))
    try:
        if not any(_split_bc(getattr(dc, e))[0] == DIRICHLET for e in EDGES):
            bad("darcy", "left", "at least one edge must carry Dirichlet pressure")
    except ValueError:
        pass
    if dc.slices < 1:
        bad("darcy", "slices", "need at least one slice")
    try:
        eps = cfg.continuity_eps()
        if len(eps) < 2 or any(e <= 0 for e in eps):
            bad("darcy", "continuity_eps", "need at least two positive values")
    except ValueError:
        bad("darcy", "continuity_eps", "must be a comma-separated list of numbers")
    if dc.bump_width <= 0:
        bad("darcy", "bump_width", "must be positive")

    unknown = cfg.formats() - set(OUTPUT_FORMATS)
    if unknown:
        bad("output", "formats", f"unknown formats {sorted(unknown)}; allowed {list(OUTPUT_FORMATS)}")
    if op.every < 1:
        bad("output", "every", "must be at least 1")
    return out
