"""Frozen planet orbit solvers.

The production pipeline seeds at weak repulsion from the folded brake and
continues the damped Newton solution of the discrete Euler-Lagrange system
up to full coupling; the linking min-max search drives the same discrete
functional with the deformation flow and serves as an independent
cross-check on the orbits found.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from . import diagnostics
from .brake import BrakeOrbit, FoldedBrake, brake_level_trapezoid, fold_brake, solve_brake
from .linking import (
    FlowError,
    FlowParams,
    FlowState,
    SamplePlan,
    SeedingError,
    SeparationCoords,
    disk_seed,
    flow,
    theta,
)
from .potentials import PotentialFamily, PowerLaw
from .smoothing import SmoothingParams, apply_smoothing
from .trajectory import (
    EvaluationError,
    Mesh,
    Path,
    _attraction_core,
    _uses_ejection_model,
    action,
    ejection_exponent,
    ejection_kinetic_coefficient,
    first_interval_attraction,
    h1_distance,
)


class SolverError(RuntimeError):
    """Newton divergence or continuation failure."""


class BarrierError(SolverError):
    """Separation collapse while stepping."""


@dataclass(frozen=True)
class NewtonConfig:
    max_iterations: int = 60
    grad_tol: float = 1e-10
    stall_tol: float = 1e-10
    backtrack: float = 0.5
    min_step: float = 1e-14
    ordering_cap: float = 0.9


@dataclass(frozen=True)
class SolverConfig:
    """Mesh, Newton, continuation and flow knobs for a run."""

    T: float = 1.0
    mesh_m: int = 512
    mesh_grading: float = 1.5
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    # continuation schedules: repulsion damping walks 1 -> 2^-10, the
    # smoothing cut shrinks geometrically
    mu_schedule: tuple = tuple(2.0 ** -k for k in range(11))
    eps_schedule: tuple = (1e-2, 3e-3, 1e-3)

    # linking / flow parameters; b and the cutoff width are derived from
    # the seeded disk when left unset
    linking_radius: float = 2.0
    lam: float = 1.0
    b: float | None = None
    cutoff_eps: float | None = None
    flow_dt: float = 0.05
    flow_rounds: int = 60
    flow_steps_per_round: int = 8
    stabilize_tol: float = 1e-7
    stabilize_window: int = 4
    boundary_samples: int = 8
    interior_samples: int = 24
    seed: int = 0

    escape_guard_threshold: float = 1e-6
    # absolute rigid-shift gap for the weak-coupling bootstrap seed; must
    # sit inside the narrow Newton basin around the near-collision profile
    seed_gap: float = 0.02
    escape_bound_factor: float = 8.0

    def __post_init__(self):
        for name in ("mu_schedule", "eps_schedule"):
            sched = np.asarray(getattr(self, name), dtype=float)
            if sched.size and not (np.all(np.diff(sched) < 0) or np.all(np.diff(sched) > 0)):
                raise SolverError(f"{name} must be strictly monotone")
        if self.T <= 0 or self.newton.grad_tol <= 0:
            raise SolverError("horizon and tolerances must be positive")

    def template(self) -> Mesh:
        return Mesh(T=self.T, m=self.mesh_m, grading=self.mesh_grading)


@dataclass
class OrbitSolution:
    """A converged critical point with its certificate numbers."""

    path: Path
    family: PotentialFamily
    smoothing: SmoothingParams | None
    action: float
    energy: float
    max_el_residual: float
    boundary_residuals: dict
    min_separation: float
    grad_norm: float
    iterations: int
    converged: bool
    failure: str = ""
    invariants: diagnostics.InvariantReport | None = None

    def to_result_dict(self) -> dict:
        out = {
            "action": self.action,
            "energy": self.energy,
            "max_el_residual": self.max_el_residual,
            "boundary_residuals": dict(self.boundary_residuals),
            "min_separation": self.min_separation,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        if self.failure:
            out["failure"] = self.failure
        if self.invariants is not None:
            out["invariants"] = self.invariants.to_dict()
        return out


# ---------------------------------------------------------------------------
# Discrete Euler-Lagrange system
# ---------------------------------------------------------------------------

def _assemble(values: np.ndarray, mesh: Mesh, eff: PotentialFamily, mu: float,
              model_active: bool):
    """Nodal gradient (flattened node-major) and banded Jacobian of the
    discrete action, with the Dirichlet row for the pinned origin node."""
    n, m1 = values.shape
    m = m1 - 1
    N = n * m1
    h = mesh.h
    w = mesh.weights
    band = n
    ab = np.zeros((2 * band + 1, N))
    grad = np.zeros_like(values)
    diag = np.zeros_like(values)

    # kinetic part
    v = np.diff(values, axis=1) / h
    grad[:, :-1] -= v
    grad[:, 1:] += v
    diag[:, :-1] += 1.0 / h
    diag[:, 1:] += 1.0 / h
    # same-electron neighbour coupling, band offset n
    cols = np.arange(N - n)
    ab[0, cols + n] += np.repeat(-1.0 / h, n)       # superdiagonal block
    ab[2 * band, cols] += np.repeat(-1.0 / h, n)    # subdiagonal block

    # attractions
    nu = c_nu = None
    for i in range(n):
        spec = eff.f_i(i + 1)
        q = values[i]
        wi = w
        if i == 0 and model_active:
            nu = ejection_exponent(_attraction_core(spec).p)
            c_nu = ejection_kinetic_coefficient(nu)
            wi = w.copy()
            wi[0] = 0.0
            wi[1] -= h[0] / 2.0
            qeval = q[1:]
            if getattr(spec, "singular_at_zero", False) and np.any(qeval <= 0.0):
                raise BarrierError("first electron pushed onto the nucleus")
            grad[i, 1:] += wi[1:] * np.asarray(spec.deriv(qeval), dtype=float)
            diag[i, 1:] += wi[1:] * np.asarray(spec.deriv2(qeval), dtype=float)
            v1, d1, d2 = first_interval_attraction(spec, float(q[1]), float(h[0]), nu)
            grad[i, 1] += d1 + (2.0 * c_nu - 1.0) * q[1] / h[0]
            diag[i, 1] += d2 + (2.0 * c_nu - 1.0) / h[0]
        else:
            if getattr(spec, "singular_at_zero", False) and np.any(q <= 0.0):
                k = int(np.argmax(q <= 0.0))
                raise BarrierError(
                    f"electron {i + 1} on the nucleus at node t={mesh.nodes[k]:.6g}")
            grad[i] += wi * np.asarray(spec.deriv(q), dtype=float)
            diag[i] += wi * np.asarray(spec.deriv2(q), dtype=float)

    # repulsions
    rows_extra, cols_extra, vals_extra = [], [], []
    for (i, j) in eff.pairs():
        sep = values[j - 1] - values[i - 1]
        if np.any(sep <= 0.0):
            k = int(np.argmax(sep <= 0.0))
            raise BarrierError(
                f"separation collapse of pair ({i},{j}) at node t={mesh.nodes[k]:.6g}")
        spec = eff.g_pair(i, j)
        g1 = mu * w * np.asarray(spec.deriv(sep), dtype=float)
        g2 = mu * w * np.asarray(spec.deriv2(sep), dtype=float)
        grad[j - 1] -= g1
        grad[i - 1] += g1
        diag[j - 1] -= g2
        diag[i - 1] -= g2
        node_cols = np.arange(m1) * n
        rows_extra.append(node_cols + (i - 1))
        cols_extra.append(node_cols + (j - 1))
        vals_extra.append(g2)

    flat_diag_cols = np.arange(N)
    ab[band, :] += diag.T.ravel()
    for rr, cc, vv in zip(rows_extra, cols_extra, vals_extra):
        ab[band + rr - cc, cc] += vv
        ab[band + cc - rr, rr] += vv

    r = grad.T.ravel().copy()

    # Dirichlet row for the pinned origin node of the first electron
    r[0] = values[0, 0]
    ab[band, 0] = 1.0
    for off in range(1, band + 1):
        ab[band - off, off] = 0.0
    return r, ab


def _mu_rows(values: np.ndarray, mesh: Mesh, eff: PotentialFamily) -> np.ndarray:
    """d(residual)/d(mu): the residual is linear in the damping, so the
    tangent predictor along mu is exact in that direction."""
    n, m1 = values.shape
    w = mesh.weights
    out = np.zeros_like(values)
    for (i, j) in eff.pairs():
        sep = values[j - 1] - values[i - 1]
        g1 = w * np.asarray(eff.g_pair(i, j).deriv(sep), dtype=float)
        out[j - 1] -= g1
        out[i - 1] += g1
    flat = out.T.ravel().copy()
    flat[0] = 0.0
    return flat


def predictor_seed(sol: OrbitSolution, mu_from: float, mu_to: float,
                   config: SolverConfig) -> Path:
    """First-order continuation predictor in the damping parameter."""
    eff = apply_smoothing(sol.family.with_mu(mu_from), sol.smoothing)
    mesh = sol.path.mesh
    n = sol.path.n
    model_active = _uses_ejection_model(sol.path, eff.f_i(1))
    _, ab = _assemble(sol.path.values, mesh, eff, mu_from, model_active)
    rhs = -(mu_to - mu_from) * _mu_rows(sol.path.values, mesh, eff)
    v = solve_banded((n, n), ab, rhs).reshape(mesh.m + 1, n).T
    alpha = min(1.0, _step_cap(sol.path.values, v, eff,
                               config.newton.ordering_cap, model_active))
    vals = sol.path.values + alpha * v
    vals[0, 0] = 0.0
    return Path(mesh, vals, admissible=True)


def _step_cap(values: np.ndarray, step: np.ndarray, eff: PotentialFamily,
              cap: float, model_active: bool) -> float:
    """Largest multiple of the Newton step that keeps separations (and,
    for singular attractions, first-electron positivity) from collapsing."""
    alpha = 1.0
    n = values.shape[0]
    if n > 1:
        sep = np.diff(values, axis=0)
        dsep = np.diff(step, axis=0)
        bad = dsep < 0.0
        if np.any(bad):
            alpha = min(alpha, float(np.min(cap * sep[bad] / -dsep[bad])))
    if getattr(eff.f_i(1), "singular_at_zero", False):
        q = values[0, 1:] if model_active else values[0]
        d = step[0, 1:] if model_active else step[0]
        bad = d < 0.0
        if np.any(bad):
            alpha = min(alpha, float(np.min(cap * q[bad] / -d[bad])))
    return max(alpha, 0.0)


def solve_el_bvp(seed: Path, family: PotentialFamily,
                 smoothing: SmoothingParams | None = None,
                 config: SolverConfig | None = None,
                 references: dict | None = None) -> OrbitSolution:
    """Damped Newton on the discrete Euler-Lagrange system with the pinned
    origin node, natural end rows, and ordering-preserving step caps."""
    config = config or SolverConfig(T=seed.mesh.T, mesh_m=seed.mesh.m,
                                    mesh_grading=seed.mesh.grading)
    nc = config.newton
    eff = apply_smoothing(family, smoothing)
    mu = family.mu
    mesh = seed.mesh
    n = seed.n
    values = seed.values.copy()
    values[0, 0] = 0.0
    model_active = _uses_ejection_model(seed, eff.f_i(1))

    escape_bound = config.escape_bound_factor * max(float(np.max(np.abs(values))), 1.0)
    r, ab = _assemble(values, mesh, eff, mu, model_active)
    norm = float(np.max(np.abs(r)))
    merit = float(np.linalg.norm(r))
    it = 0
    for it in range(1, nc.max_iterations + 1):
        if norm <= nc.grad_tol:
            break
        if float(np.max(np.abs(values))) > escape_bound:
            raise SolverError(
                "escape detected: electrons drifting to infinity along the "
                "flat direction (residual decays without a critical point); "
                "seed closer to the target orbit")
        step_flat = solve_banded((n, n), ab, -r)
        step = step_flat.reshape(mesh.m + 1, n).T
        alpha = min(1.0, _step_cap(values, step, eff, nc.ordering_cap, model_active))
        accepted = False
        while alpha >= nc.min_step:
            cand = values + alpha * step
            cand[0, 0] = 0.0
            try:
                r_new, ab_new = _assemble(cand, mesh, eff, mu, model_active)
            except BarrierError:
                alpha *= nc.backtrack
                continue
            norm_new = float(np.max(np.abs(r_new)))
            merit_new = float(np.linalg.norm(r_new))
            if merit_new <= (1.0 - 1e-4 * alpha) * merit or norm_new <= nc.grad_tol:
                values, r, ab = cand, r_new, ab_new
                norm, merit = norm_new, merit_new
                accepted = True
                break
            alpha *= nc.backtrack
        if not accepted:
            if norm <= nc.stall_tol:
                break
            raise SolverError(
                f"Newton line search collapsed at iteration {it}; "
                f"residual {norm:.3e}")
    else:
        if norm > nc.stall_tol:
            raise SolverError(
                f"Newton did not converge in {nc.max_iterations} iterations; "
                f"residual {norm:.3e}")

    path = Path(mesh, values, admissible=True)
    rows = r.reshape(mesh.m + 1, n).T
    interior = float(np.max(np.abs(rows[:, 1:-1]))) if mesh.m > 2 else 0.0
    boundary = {"q1_at_0": float(values[0, 0]),
                "dq1_at_T": float(rows[0, -1])}
    for i in range(2, n + 1):
        boundary[f"dq{i}_at_0"] = float(-rows[i - 1, 0])
        boundary[f"dq{i}_at_T"] = float(rows[i - 1, -1])
    a_val = action(path, family, smoothing)
    er_mask = diagnostics.resolved_mask(path, smoothing)
    h_nodal = diagnostics.total_energy(path, family, smoothing)
    energy = float(np.mean(h_nodal[er_mask])) if er_mask.any() else float(
        np.mean(h_nodal[1:-1]))
    sol = OrbitSolution(
        path=path, family=family, smoothing=smoothing, action=a_val,
        energy=energy, max_el_residual=interior, boundary_residuals=boundary,
        min_separation=path.min_separation(), grad_norm=norm, iterations=it,
        converged=norm <= max(nc.grad_tol, nc.stall_tol),
    )
    if references is not None:
        sol.invariants = diagnostics.invariant_report(sol, references)
    return sol


# ---------------------------------------------------------------------------
# Seeding and continuation
# ---------------------------------------------------------------------------

def _power_bases(family: PotentialFamily):
    bases = []
    for f in family.f:
        bases.append(f if isinstance(f, PowerLaw) else _attraction_core(f))
    return bases


def reference_brake(family: PotentialFamily, smoothing: SmoothingParams | None,
                    config: SolverConfig) -> tuple[BrakeOrbit, FoldedBrake]:
    """Matching-smoothing brake on the run's template: the limit object of
    the repulsion-damped family on this very mesh."""
    eps = smoothing.epsilon if smoothing is not None and smoothing.epsilon else 0.0
    orbit = solve_brake(_power_bases(family), config.T, family.n,
                        eps1=eps, eps2=eps, template=config.template())
    return orbit, fold_brake(orbit)


def theta_seed(folded: FoldedBrake, config: SolverConfig) -> Path:
    """Shift the folded brake apart by small uniform gaps: the
    weak-coupling orbit sits within a hair of the brake profile."""
    n = folded.n
    s = SeparationCoords(tuple(config.seed_gap * np.arange(1, n)))
    return theta(s, folded)


@dataclass
class SweepStage:
    parameter: float
    solution: OrbitSolution
    h1_to_brake: float


@dataclass
class SweepResult:
    stages: list
    folded: FoldedBrake
    reference_level: float
    failure: str = ""

    def distances(self) -> list:
        return [s.h1_to_brake for s in self.stages]


def _first_stage(family: PotentialFamily, smoothing: SmoothingParams | None,
                 mu: float, folded: FoldedBrake,
                 config: SolverConfig) -> OrbitSolution:
    """Solve the opening stage from a ladder of rigid-shift seeds.

    Weak coupling wants gaps near the orbit's tiny separations; strong
    coupling wants the hovering-electron scale, a fraction of the brake
    apex.  The ladder tries both families of scales.
    """
    apex = float(folded.path.values.max())
    if mu < 0.05:
        gaps = [config.seed_gap, 2.5 * config.seed_gap, 0.5 * config.seed_gap]
    else:
        gaps = [0.28 * apex, 0.42 * apex, 0.6 * apex, 0.18 * apex, 0.9 * apex]
    fam = family.with_mu(mu)
    last_exc: Exception | None = None
    for gap in gaps:
        seed = theta(SeparationCoords(tuple(gap * np.arange(1, family.n))), folded)
        try:
            return solve_el_bvp(seed, fam, smoothing, config)
        except (SolverError, EvaluationError) as exc:
            last_exc = exc
    raise SolverError(f"opening stage mu={mu:.6g} failed from every seed: {last_exc}")


def _walk_mu(sol: OrbitSolution, mu_from: float, mu_to: float,
             family: PotentialFamily, smoothing: SmoothingParams | None,
             config: SolverConfig, depth: int = 0) -> OrbitSolution:
    """Predictor-corrector step in the damping, bisecting on failure."""
    fam = family.with_mu(mu_to)
    try:
        seed = predictor_seed(sol, mu_from, mu_to, config)
        return solve_el_bvp(seed, fam, smoothing, config)
    except (SolverError, EvaluationError):
        if depth >= 6:
            raise
        mid = math.sqrt(mu_from * mu_to)
        half = _walk_mu(sol, mu_from, mid, family, smoothing, config, depth + 1)
        return _walk_mu(half, mid, mu_to, family, smoothing, config, depth + 1)


def continue_mu(family: PotentialFamily, smoothing: SmoothingParams | None,
                schedule=None, config: SolverConfig | None = None) -> SweepResult:
    """Solve along a damping schedule by predictor-corrector continuation,
    each stage seeded from its predecessor (with adaptive bisection when a
    step leaves the Newton basin); reports the H1 distance to the matching
    folded brake per stage."""
    config = config or SolverConfig()
    sched = list(schedule if schedule is not None else config.mu_schedule)
    if not sched:
        raise SolverError("empty damping schedule")
    orbit, folded = reference_brake(family, smoothing, config)

    stages = []
    failure = ""
    prev: OrbitSolution | None = None
    prev_mu = math.nan
    for mu in sched:
        try:
            if prev is None:
                sol = _first_stage(family, smoothing, mu, folded, config)
            else:
                sol = _walk_mu(prev, prev_mu, mu, family, smoothing, config)
        except (SolverError, EvaluationError) as exc:
            failure = f"stage mu={mu:.6g}: {exc}"
            break
        stages.append(SweepStage(parameter=mu, solution=sol,
                                 h1_to_brake=h1_distance(sol.path, folded.path)))
        prev, prev_mu = sol, mu
    return SweepResult(stages=stages, folded=folded, reference_level=orbit.c,
                       failure=failure)


@dataclass
class EpsStage:
    epsilon: float
    solution: OrbitSolution
    min_q1_late: float
    min_separation_late: float
    concavity_margin: float
    energy: diagnostics.EnergyReport


@dataclass
class EpsSweepResult:
    stages: list
    reference_level: float
    failure: str = ""


def continue_eps(family: PotentialFamily, schedule=None,
                 config: SolverConfig | None = None) -> EpsSweepResult:
    """Shrink the smoothing cut at full coupling; a trailing zero in the
    schedule polishes against the raw attractions (ejection-model first
    interval, interior Euler-Lagrange rows untouched by the singularity)."""
    config = config or SolverConfig()
    sched = list(schedule if schedule is not None else config.eps_schedule)
    if not sched or any(e < 0 for e in sched):
        raise SolverError("epsilon schedule must be nonnegative")

    raw_orbit = solve_brake(_power_bases(family), config.T, family.n,
                            template=config.template())
    c0 = raw_orbit.c

    stages = []
    failure = ""
    prev_sol = None
    for eps in sched:
        sm = SmoothingParams(epsilon=eps) if eps > 0 else None
        if prev_sol is None:
            sweep = continue_mu(family, sm, [family.mu], config)
            if sweep.failure or not sweep.stages:
                return EpsSweepResult([], c0, failure=sweep.failure or "no stage")
            sol = sweep.stages[-1].solution
        else:
            try:
                sol = solve_el_bvp(prev_sol.path, family, sm, config)
            except (SolverError, EvaluationError) as exc:
                failure = f"stage eps={eps:.6g}: {exc}"
                break
        prev_sol = sol
        t = sol.path.mesh.nodes
        late = t >= config.T / 4.0
        q1 = sol.path.values[0]
        min_sep_late = math.inf
        if sol.path.n > 1:
            min_sep_late = float(np.min(sol.path.separations()[:, late]))
        slopes = np.diff(q1) / sol.path.mesh.h
        stages.append(EpsStage(
            epsilon=eps, solution=sol,
            min_q1_late=float(np.min(q1[late])),
            min_separation_late=min_sep_late,
            concavity_margin=float(-np.max(np.diff(slopes))),
            energy=diagnostics.energy_report(sol.path, family, sm, c0),
        ))
    return EpsSweepResult(stages=stages, reference_level=c0, failure=failure)


# ---------------------------------------------------------------------------
# Min-max search
# ---------------------------------------------------------------------------

@dataclass
class MinmaxTrace:
    rounds: list = field(default_factory=list)
    advisories: list = field(default_factory=list)
    c_star: float = math.nan
    flows: list = field(default_factory=list)


def minmax_search(family: PotentialFamily, smoothing: SmoothingParams | None,
                  r: float | None = None, config: SolverConfig | None = None,
                  keep_flows: bool = False) -> tuple[OrbitSolution, MinmaxTrace]:
    """Linking min-max: seed a disk of shifted folded brakes, flow it by
    the cutoff deformation field while ratcheting the level estimate down,
    then polish the maximizing sample with Newton.

    Returns the polished solution plus the search trace; a polish failure
    is reported through the solution's ``failure`` field, not hidden.
    """
    config = config or SolverConfig()
    if family.n == 1:
        orbit, folded = reference_brake(family, smoothing, config)
        sol = solve_el_bvp(folded.path, family, smoothing, config)
        return sol, MinmaxTrace(c_star=sol.action)

    from .trajectory import g_functional

    orbit, folded = reference_brake(family, smoothing, config)
    c_ref = orbit.c

    radius = r if r is not None else config.linking_radius
    plan = SamplePlan(boundary=config.boundary_samples,
                      interior=config.interior_samples, seed=config.seed)
    lam = config.lam
    probe = disk_seed(radius, folded, plan, family, smoothing, lam,
                      c_tilde=c_ref, b=-math.inf, reference_level=c_ref)
    b = config.b if config.b is not None else 0.8 * float(probe.boundary_g.min())
    if probe.boundary_g.min() <= b:
        raise SeedingError(
            f"boundary barrier min {probe.boundary_g.min():.6g} below b={b:.6g}; "
            "increase the linking radius")

    def barrier(p: Path) -> float:
        return (g_functional(p, 0.0, family)
                + lam * (c_ref - action(p, family, smoothing)))

    cutoff_eps = config.cutoff_eps if config.cutoff_eps is not None else 1.0
    states = [FlowState(path=p, params=FlowParams(c_star=0.0, b=b, c_ref=c_ref,
                                                  lam=lam, cutoff_eps=cutoff_eps,
                                                  dt=config.flow_dt))
              for p in probe.interior]

    trace = MinmaxTrace()

    def counted_peak():
        """Max action over samples inside the barrier sublevel; samples in
        the superlevel sit in the topologically free region and never cap
        the min-max."""
        best_idx, best_act = -1, -math.inf
        for idx, st in enumerate(states):
            if barrier(st.path) > b:
                continue
            a = action(st.path, family, smoothing)
            if a > best_act or (abs(a - best_act) <= 1e-9
                                and g_functional(st.path, 0.0, family)
                                < g_functional(states[best_idx].path, 0.0, family)):
                best_idx, best_act = idx, a
        return best_idx, best_act

    history = []
    pick, c_star = counted_peak()
    if pick < 0:
        raise SeedingError("no disk sample inside the barrier sublevel; "
                           "lower b or adjust the radius")
    for rnd in range(config.flow_rounds):
        st = states[pick]
        st.params = FlowParams(c_star=c_star, b=b, c_ref=c_ref, lam=lam,
                               cutoff_eps=cutoff_eps, dt=config.flow_dt)
        st.history.clear()
        st.terminated = ""
        try:
            flow(st, config.flow_steps_per_round, family, smoothing)
        except FlowError as exc:
            trace.advisories.append(
                f"flow stalled at the barrier interface: {exc}; "
                "consider raising b or lambda")
        pick_new, c_new = counted_peak()
        trace.rounds.append({"round": rnd, "disk_max": c_new, "c_star": c_star,
                             "peak": pick_new, "terminated": st.terminated})
        history.append(c_new)
        stable = (len(history) > config.stabilize_window
                  and abs(history[-1] - history[-1 - config.stabilize_window])
                  <= config.stabilize_tol * max(1.0, abs(history[-1])))
        near_critical = st.near_critical and pick_new == pick
        pick, c_star = pick_new, c_new
        if pick < 0 or near_critical or stable:
            break

    trace.c_star = c_star
    if keep_flows:
        trace.flows = states
    if pick < 0:
        raise SeedingError("every disk sample left the barrier sublevel; "
                           "raise b or the radius")

    try:
        sol = solve_el_bvp(states[pick].path, family, smoothing, config,
                           references={"c0": orbit.c, "folded": folded})
    except (SolverError, EvaluationError) as exc:
        best = states[pick].path
        sol = OrbitSolution(
            path=best, family=family, smoothing=smoothing,
            action=c_star, energy=math.nan,
            max_el_residual=math.inf, boundary_residuals={},
            min_separation=best.min_separation(), grad_norm=math.inf,
            iterations=0, converged=False, failure=f"polish failed: {exc}")
        return sol, trace

    if sol.action > c_ref + 1e-6:
        sol.failure = (f"min-max level {sol.action:.9g} exceeds the brake "
                       f"reference {c_ref:.9g}")
    return sol, trace


def solve_frozen_orbit(family: PotentialFamily, smoothing: SmoothingParams | None,
                       method: str = "continue",
                       config: SolverConfig | None = None) -> OrbitSolution:
    """Front door used by the CLI: continuation to the family's damping, or
    the min-max search, both certified by the invariant report."""
    config = config or SolverConfig()
    if method == "continue":
        sweep = continue_mu(family, smoothing, [family.mu], config)
        if sweep.failure or not sweep.stages:
            raise SolverError(sweep.failure or "continuation produced no stage")
        sol = sweep.stages[-1].solution
        orbit, folded = reference_brake(family, smoothing, config)
        raw_orbit = solve_brake(_power_bases(family), config.T, family.n,
                                template=config.template())
        sol.invariants = diagnostics.invariant_report(
            sol, {"c0": raw_orbit.c, "folded": folded})
        return sol
    if method == "minmax":
        sol, _ = minmax_search(family, smoothing, None, config)
        if sol.invariants is None and sol.converged:
            raw_orbit = solve_brake(_power_bases(family), config.T, family.n,
                                    template=config.template())
            _, folded = reference_brake(family, smoothing, config)
            sol.invariants = diagnostics.invariant_report(
                sol, {"c0": raw_orbit.c, "folded": folded})
        return sol
    raise SolverError(f"unknown method {method!r}")
