"""Time marching for the quadrature-free scheme.

Each step transports the previous velocity along the linearized
characteristic feet, assembles the composite load exactly, and reuses one
factorization of the constant saddle matrix.  Runs are deterministic: element
loops are ordered and checkpoints round-trip coefficients exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .assembly import LidProfile, SaddleSystem, assemble_rhs, lid_dirichlet
from .mesh import generate_cavity_mesh, mesh_hash
from .solver import Factorization, factorize, solve_step, stokes_projection
from .spaces import (PressureDofMap, PressureField, VelocityDofMap,
                     VelocityField, norm_l2)
from .transport import NonInjectiveError

__all__ = [
    "SimulationConfig",
    "SimulationState",
    "StationarityReport",
    "Simulation",
    "stationarity_rate",
    "kinetic_energy",
    "write_checkpoint",
    "read_checkpoint",
    "write_trace_csv",
    "continuation_ladder",
]


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of one cavity (or manufactured) run; nu = 1/re."""

    re: float = 500.0
    dt: float = 1.0 / 64.0
    t_max: float = 400.0
    n: int = 32
    domain: str = "equilateral"
    base: float = 1.0
    height: float = 2.0
    eps_lid: float = 1.0 / 16.0
    lid_speed: float = 1.0
    tolerance: float = 1e-4
    initial: str = "zero"          # zero | stokes | checkpoint:<path>
    mode: str = "exact"            # exact | quadrature
    quad_degree: int = 4
    cadence: int = 0               # checkpoint every this many steps (0: off)
    outdir: str = ""
    deterministic: bool = True
    auto_halve_dt: bool = False

    def __post_init__(self):
        if not self.re > 0:
            raise ValueError(f"re must be positive, got {self.re}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if self.mode not in ("exact", "quadrature"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (self.initial in ("zero", "stokes")
                or self.initial.startswith("checkpoint:")):
            raise ValueError(f"unknown initial state {self.initial!r}")

    @property
    def nu(self) -> float:
        return 1.0 / self.re

    def scheme_name(self) -> str:
        if self.mode == "exact":
            return "exact"
        return f"quadrature{self.quad_degree}"

    def config_hash(self) -> str:
        items = sorted((f.name, repr(getattr(self, f.name)))
                       for f in fields(self))
        return hashlib.sha256(repr(items).encode()).hexdigest()[:16]


@dataclass
class SimulationState:
    n: int
    t: float
    u: VelocityField
    p: PressureField


@dataclass
class StationarityReport:
    converged: bool
    step: int | None
    tolerance: float
    rates_u: np.ndarray = field(repr=False)
    rates_p: np.ndarray = field(repr=False)

    @property
    def final_rates(self):
        if len(self.rates_u) == 0:
            return (np.inf, np.inf)
        return float(self.rates_u[-1]), float(self.rates_p[-1])


def stationarity_rate(prev: SimulationState, nxt: SimulationState, dt: float):
    """Max nodal change per unit time for velocity and pressure."""
    ru = float(np.abs(nxt.u.coeffs - prev.u.coeffs).max()) / dt
    rp = float(np.abs(nxt.p.coeffs - prev.p.coeffs).max()) / dt
    return ru, rp


def kinetic_energy(u: VelocityField) -> float:
    return 0.5 * norm_l2(u) ** 2


class Simulation:
    """One configured run: mesh, spaces, factorization, and stepping.

    ``f`` is an optional source callable ``f(x1, x2, t) -> (f1, f2)``; the
    cavity experiments use f = 0.  ``dirichlet`` overrides the lid boundary
    data (the manufactured studies pass homogeneous values).
    """

    def __init__(self, config: SimulationConfig, mesh=None, vmap=None,
                 pmap=None, f=None, dirichlet=None):
        self.config = config
        self.mesh = mesh if mesh is not None else generate_cavity_mesh(
            config.domain, config.n, base=config.base, height=config.height)
        self.vmap = vmap if vmap is not None else VelocityDofMap(self.mesh)
        self.pmap = pmap if pmap is not None else PressureDofMap(self.mesh)
        self.f = f
        self.lid = LidProfile(ramp_fraction=config.eps_lid,
                              speed=config.lid_speed)
        if dirichlet is None:
            dirichlet = lid_dirichlet(self.vmap, self.lid)
        self._dirichlet = dirichlet
        self.dt = config.dt
        self._n_halvings = 0
        self._build(self.dt)
        self.last_stats = None

    def _build(self, dt):
        self.system = SaddleSystem(self.vmap, self.pmap, nu=self.config.nu,
                                   dt=dt, dirichlet=self._dirichlet)
        self.fact = factorize(self.system)

    # -- state construction ----------------------------------------------------

    def zero_state(self) -> SimulationState:
        return SimulationState(0, 0.0, VelocityField(self.vmap),
                               PressureField(self.pmap))

    def initial_state(self, u0=None, grad_u0=None) -> SimulationState:
        kind = self.config.initial
        if kind == "zero":
            return self.zero_state()
        if kind == "stokes":
            if u0 is None:
                raise ValueError("initial 'stokes' needs the data callable")
            u, p = stokes_projection(u0, self.vmap, self.pmap,
                                     nu=self.config.nu, grad_u0=grad_u0)
            return SimulationState(0, 0.0, u, p)
        path = kind.split(":", 1)[1]
        state, _header = read_checkpoint(path, self.vmap, self.pmap,
                                         expect_mesh=self.mesh)
        return SimulationState(0, 0.0, state.u, state.p)

    def from_state(self, other: SimulationState) -> SimulationState:
        """Adopt a final state of another run as a fresh initial value."""
        return SimulationState(0, 0.0,
                               VelocityField(self.vmap, other.u.coeffs.copy()),
                               PressureField(self.pmap, other.p.coeffs.copy()))

    # -- stepping ---------------------------------------------------------------

    def _time_of(self, n):
        if self._n_halvings == 0:
            return n * self.dt
        return None  # caller accumulates

    def step(self, state: SimulationState) -> SimulationState:
        """One backward-Euler characteristic step."""
        cfg = self.config
        f_at = None
        if self.f is not None:
            t_new = state.t + self.dt
            f_at = lambda x, y, _t=t_new: self.f(x, y, _t)  # noqa: E731
        while True:
            try:
                load, stats = assemble_rhs(state.u, self.dt, f=f_at,
                                           mode=cfg.mode,
                                           quad_degree=cfg.quad_degree)
                break
            except NonInjectiveError:
                if not cfg.auto_halve_dt or self._n_halvings >= 8:
                    raise
                self._n_halvings += 1
                self.dt = self.dt / 2.0
                self._build(self.dt)
        u, p = solve_step(self.fact, load)
        self.last_stats = stats
        t = self._time_of(state.n + 1)
        if t is None:
            t = state.t + self.dt
        return SimulationState(state.n + 1, t, u, p)

    def run_to_stationary(self, state=None, callback=None):
        """March until the nodal rates drop below the tolerance.

        Returns ``(state, StationarityReport, trace)`` where the trace rows
        are (step, time, rate_u, rate_p, kinetic energy, elements whose
        image left the domain).  Non-convergence by t_max is reported, not
        raised.
        """
        cfg = self.config
        if state is None:
            state = self.initial_state()
        rates_u, rates_p, trace = [], [], []
        converged = False
        step_of = None
        outdir = Path(cfg.outdir) if cfg.outdir else None
        if outdir:
            outdir.mkdir(parents=True, exist_ok=True)

        while state.t < cfg.t_max - 1e-12:
            nxt = self.step(state)
            ru, rp = stationarity_rate(state, nxt, self.dt)
            rates_u.append(ru)
            rates_p.append(rp)
            state = nxt
            trace.append((state.n, state.t, ru, rp, kinetic_energy(state.u),
                          self.last_stats.n_deficit_elements))
            if callback is not None:
                callback(state, ru, rp)
            if outdir and cfg.cadence > 0 and state.n % cfg.cadence == 0:
                write_checkpoint(outdir / f"step{state.n:08d}.chk",
                                 state, cfg, self.mesh)
            if ru < cfg.tolerance and rp < cfg.tolerance:
                converged = True
                step_of = state.n
                break
        if outdir:
            tag = "final" if converged else "unconverged"
            write_checkpoint(outdir / f"{tag}.chk", state, cfg, self.mesh)
        report = StationarityReport(converged, step_of, cfg.tolerance,
                                    np.asarray(rates_u), np.asarray(rates_p))
        return state, report, trace


def continuation_ladder(config: SimulationConfig, re_list, u0=None,
                        checkpoint_dir=None):
    """Run each Reynolds number to stationarity, chaining the initial values.

    The first rung starts from ``config.initial`` (or the given state);
    every later rung starts from the previous stationary solution.  Returns
    a list of (re, state, report) with unconverged rungs included.
    """
    re_list = list(re_list)
    if any(b <= a for a, b in zip(re_list, re_list[1:])):
        raise ValueError("re_list must be strictly increasing")
    results = []
    shared = {}
    state = u0
    for re in re_list:
        cfg = replace(config, re=re)
        sim = Simulation(cfg, **shared)
        shared = {"mesh": sim.mesh, "vmap": sim.vmap, "pmap": sim.pmap}
        init = sim.from_state(state) if state is not None \
            else sim.initial_state()
        final, report, _trace = sim.run_to_stationary(init)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir)
            path.mkdir(parents=True, exist_ok=True)
            write_checkpoint(path / f"re{re:g}.chk", final, cfg, sim.mesh)
        results.append((re, final, report))
        state = final
    return results


# -- checkpoints and traces ---------------------------------------------------


def write_checkpoint(path, state: SimulationState, config: SimulationConfig,
                     mesh) -> None:
    """Text checkpoint: header then one coefficient per line in dof order.

    Coefficients are printed with 17 significant digits so that reading the
    file back reproduces every float bit for bit.
    """
    buf = io.StringIO()
    buf.write(f"scheme {config.scheme_name()}\n")
    buf.write(f"step {state.n}\n")
    buf.write(f"time {state.t:.17g}\n")
    buf.write(f"re {config.re:.17g}\n")
    buf.write(f"dt {config.dt:.17g}\n")
    buf.write(f"mesh {mesh_hash(mesh)}\n")
    buf.write(f"config {config.config_hash()}\n")
    buf.write(f"velocity_dofs {len(state.u.coeffs)}\n")
    buf.write(f"pressure_dofs {len(state.p.coeffs)}\n")
    for v in state.u.coeffs:
        buf.write(f"{v:.17g}\n")
    for v in state.p.coeffs:
        buf.write(f"{v:.17g}\n")
    Path(path).write_text(buf.getvalue())


def read_checkpoint(path, vmap: VelocityDofMap, pmap: PressureDofMap,
                    expect_mesh=None):
    """Read a checkpoint; verifies the mesh hash when a mesh is given."""
    lines = Path(path).read_text().splitlines()
    header = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split(None, 1)
        if len(parts) == 2 and not _is_float_line(parts[0]):
            header[parts[0]] = parts[1]
            i += 1
        else:
            break
    nu_dofs = int(header["velocity_dofs"])
    np_dofs = int(header["pressure_dofs"])
    if nu_dofs != vmap.n_dofs or np_dofs != pmap.n_dofs:
        raise ValueError(
            f"checkpoint has {nu_dofs}/{np_dofs} dofs but the mesh needs "
            f"{vmap.n_dofs}/{pmap.n_dofs}")
    if expect_mesh is not None and header.get("mesh") != mesh_hash(expect_mesh):
        raise ValueError("checkpoint was written for a different mesh")
    vals = np.array([float(s) for s in lines[i:i + nu_dofs + np_dofs]])
    if len(vals) != nu_dofs + np_dofs:
        raise ValueError("checkpoint is truncated")
    state = SimulationState(int(header["step"]), float(header["time"]),
                            VelocityField(vmap, vals[:nu_dofs]),
                            PressureField(pmap, vals[nu_dofs:]))
    return state, header


def _is_float_line(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "rate_u", "rate_p",
                    "kinetic_energy", "outside_images"])
        for row in trace:
            w.writerow([row[0], f"{row[1]:.17g}", f"{row[2]:.17g}",
                        f"{row[3]:.17g}", f"{row[4]:.17g}", row[5]])
