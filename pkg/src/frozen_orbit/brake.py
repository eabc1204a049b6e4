"""Segmented Kepler-type brake orbits on [0, nT].

The curve eta starts on the nucleus, rises monotonically, and stops at nT;
on the i-th time slot it feels the i-th attraction.  Folding successive
slots back onto [0, T] produces the limit profile of the n-electron orbits
as the repulsion is switched off.

The minimizer is found by damped Newton on the discretized functional
(convex for convex attractions); an independent energy-based shooting
routine cross-validates it by pure quadrature.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from .potentials import PotentialFamily, PowerLaw
from .smoothing import SmoothedPotential, smooth_tangent
from .trajectory import (
    EvaluationError,
    Mesh,
    Path,
    ejection_exponent,
    ejection_kinetic_coefficient,
    first_interval_attraction,
    _attraction_core,
)


class BrakeSolverError(RuntimeError):
    """Newton failed to reach the residual tolerance."""


@dataclass(frozen=True)
class BrakeConfig:
    max_iterations: int = 80
    grad_tol: float = 1e-11
    # floating-point floor: with tangent-splice kinks and strongly graded
    # meshes the gradient cannot always be driven to grad_tol; a stall with
    # gradient below this is accepted (the level is quadratically
    # insensitive to it)
    stall_tol: float = 1e-8
    backtrack: float = 0.5
    min_step: float = 1e-14
    positivity_cap: float = 0.9


def _segment_potentials(attractions, eps1: float, eps2: float):
    """Per-segment effective attraction: tangent-smoothed at eps1 for the
    first slot, eps2 for the rest; zero eps keeps the raw potential."""
    out = []
    for idx, base in enumerate(attractions):
        eps = eps1 if idx == 0 else eps2
        if eps > 0.0:
            out.append(smooth_tangent(base, eps) if isinstance(base, PowerLaw) else base)
        else:
            out.append(base)
    return out


@dataclass(frozen=True)
class BrakeOrbit:
    """Discrete nT-brake: nodes over [0, nT], nodal eta, per-segment
    potentials, and the discrete minimum level c."""

    template: Mesh
    n: int
    times: np.ndarray
    eta: np.ndarray
    potentials: tuple
    eps1: float
    eps2: float
    c: float
    grad_norm: float
    iterations: int

    @property
    def T(self) -> float:
        return self.template.T

    @property
    def m_per_segment(self) -> int:
        return self.template.m

    def eta_at_T(self) -> float:
        return float(self.eta[self.m_per_segment])

    def apex(self) -> float:
        return float(self.eta[-1])

    def segment_slice(self, i: int) -> slice:
        m = self.m_per_segment
        return slice((i - 1) * m, i * m + 1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,eta\n")
        for t, e in zip(self.times, self.eta):
            buf.write(f"{t:.17g},{e:.17g}\n")
        return buf.getvalue()


def _brake_nodes(template: Mesh, n: int) -> np.ndarray:
    """Concatenate n copies of the template, reversing it on even slots so
    junction nodes coincide exactly with the template's endpoints."""
    tau, T = template.nodes, template.T
    chunks = [np.array([0.0])]
    for i in range(1, n + 1):
        seg = (i - 1) * T + (tau[1:] if i % 2 == 1 else (T - tau[::-1][1:]))
        chunks.append(seg)
    return np.concatenate(chunks)


def _interval_segments(n: int, m: int) -> np.ndarray:
    """Segment index (1-based) owning each of the n*m intervals."""
    return np.repeat(np.arange(1, n + 1), m)


class _DiscreteBrake:
    """Discretized functional F over nodal eta values with eta(0) pinned.

    The first interval always uses the ejection-model quadrature, so levels
    computed for smoothed and raw attractions are ordered exactly.
    """

    def __init__(self, template: Mesh, n: int, potentials):
        self.template = template
        self.n = n
        self.m = template.m
        self.nodes = _brake_nodes(template, n)
        self.h = np.diff(self.nodes)
        self.seg_of_interval = _interval_segments(n, self.m)
        self.potentials = list(potentials)
        self.nu = ejection_exponent(_attraction_core(potentials[0]).p)
        self.c_nu = ejection_kinetic_coefficient(self.nu)
        self.raw_anywhere = any(getattr(p, "singular_at_zero", False) for p in potentials)

    @property
    def size(self) -> int:
        return self.n * self.m

    def _check_domain(self, eta_free: np.ndarray) -> bool:
        return not (self.raw_anywhere and np.any(eta_free <= 0.0))

    def value(self, eta_free: np.ndarray) -> float:
        eta = np.concatenate([[0.0], eta_free])
        h = self.h
        dq = np.diff(eta)
        kin = 0.5 * np.sum(dq[1:] ** 2 / h[1:])
        kin += self.c_nu * eta_free[0] ** 2 / h[0]
        pot = 0.0
        for i in range(1, self.n + 1):
            phi = self.potentials[i - 1]
            mask = self.seg_of_interval == i
            idx = np.nonzero(mask)[0]
            if i == 1:
                idx = idx[1:]
            left, right = eta[idx], eta[idx + 1]
            hv = h[idx]
            pot += 0.5 * float(hv @ (np.asarray(phi.value(left))
                                     + np.asarray(phi.value(right))))
        v1, _, _ = first_interval_attraction(self.potentials[0], float(eta_free[0]),
                                             float(h[0]), self.nu)
        return float(kin + pot + v1)

    def value_trapezoid(self, eta_free: np.ndarray) -> float:
        """Same functional under plain per-interval trapezoid everywhere;
        only defined for smoothed first attractions (finite at 0)."""
        if getattr(self.potentials[0], "singular_at_zero", False):
            raise EvaluationError("trapezoid level undefined for a raw first slot")
        eta = np.concatenate([[0.0], eta_free])
        h = self.h
        dq = np.diff(eta)
        kin = 0.5 * np.sum(dq ** 2 / h)
        pot = 0.0
        for i in range(1, self.n + 1):
            phi = self.potentials[i - 1]
            idx = np.nonzero(self.seg_of_interval == i)[0]
            pot += 0.5 * float(h[idx] @ (np.asarray(phi.value(eta[idx]))
                                         + np.asarray(phi.value(eta[idx + 1]))))
        return float(kin + pot)

    def grad_and_jac(self, eta_free: np.ndarray):
        M = self.size
        eta = np.concatenate([[0.0], eta_free])
        h = self.h
        v = np.diff(eta) / h                    # interval slopes, 0..M-1

        # kinetic rows; free index k corresponds to node k+1
        grad = np.empty(M)
        grad[:-1] = v[:-1] - v[1:]
        grad[-1] = v[-1]
        grad[0] = 2.0 * self.c_nu * eta_free[0] / h[0] - v[1]
        diag = np.empty(M)
        diag[:-1] = 1.0 / h[:-1] + 1.0 / h[1:]
        diag[-1] = 1.0 / h[-1]
        diag[0] = 2.0 * self.c_nu / h[0] + 1.0 / h[1]
        off = -1.0 / h[1:]                      # couples free k and k+1

        # potential rows, interval by interval (interval 0 handled by the
        # ejection model below; its left node is pinned anyway)
        for i in range(1, self.n + 1):
            phi = self.potentials[i - 1]
            idx = np.nonzero(self.seg_of_interval == i)[0]
            if i == 1:
                idx = idx[1:]
            left, right = eta[idx], eta[idx + 1]
            hv = h[idx]
            np.add.at(grad, idx - 1, 0.5 * hv * np.asarray(phi.deriv(left), dtype=float))
            np.add.at(grad, idx, 0.5 * hv * np.asarray(phi.deriv(right), dtype=float))
            np.add.at(diag, idx - 1, 0.5 * hv * np.asarray(phi.deriv2(left), dtype=float))
            np.add.at(diag, idx, 0.5 * hv * np.asarray(phi.deriv2(right), dtype=float))
        _, d1, d2 = first_interval_attraction(self.potentials[0], float(eta_free[0]),
                                              float(h[0]), self.nu)
        grad[0] += d1
        diag[0] += d2
        return grad, diag, off


def _initial_guess(problem: _DiscreteBrake) -> np.ndarray:
    core = _attraction_core(problem.potentials[0])
    a = core.a
    total = problem.nodes[-1]
    r = (2.0 * math.sqrt(2.0 * a) * total / math.pi) ** (2.0 / 3.0)
    return r * (problem.nodes[1:] / total) ** problem.nu


def solve_brake(attractions, T: float, n: int,
                eps1: float = 0.0, eps2: float = 0.0,
                template: Mesh | None = None,
                config: BrakeConfig | None = None,
                initial: np.ndarray | None = None) -> BrakeOrbit:
    """Minimize the discretized segmented Kepler functional.

    ``attractions`` are the raw per-electron attractions (length n);
    ``eps1``/``eps2`` smooth the first / remaining slots.  Returns the
    discrete minimizer with its level c.
    """
    if len(attractions) != n:
        raise EvaluationError(f"need {n} attractions, got {len(attractions)}")
    template = template or Mesh(T=T, m=400, grading=1.5)
    if not math.isclose(template.T, T, rel_tol=0, abs_tol=1e-15 * max(T, 1.0)):
        raise EvaluationError("mesh template horizon must equal T")
    config = config or BrakeConfig()
    potentials = _segment_potentials(attractions, eps1, eps2)
    problem = _DiscreteBrake(template, n, potentials)

    x = np.asarray(initial, dtype=float).copy() if initial is not None \
        else _initial_guess(problem)
    if x.shape != (problem.size,):
        raise EvaluationError(f"initial guess must have {problem.size} free nodes")
    if not problem._check_domain(x):
        raise EvaluationError("initial guess must be positive for raw attractions")

    fval = problem.value(x)
    grad_norm = math.inf
    for it in range(1, config.max_iterations + 1):
        grad, diag, off = problem.grad_and_jac(x)
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= config.grad_tol:
            break
        ab = np.zeros((3, problem.size))
        ab[1] = diag
        ab[0, 1:] = off
        ab[2, :-1] = off
        step = solve_banded((1, 1), ab, -grad)
        # keep nodes away from the singular axis while raw terms are active
        alpha = 1.0
        if problem.raw_anywhere or True:
            neg = step < 0.0
            if np.any(neg):
                alpha = min(1.0, float(np.min(
                    config.positivity_cap * x[neg] / -step[neg])))
                if alpha <= 0.0:
                    alpha = config.min_step
        slack = 64.0 * np.finfo(float).eps * max(abs(fval), 1.0)
        while alpha >= config.min_step:
            cand = x + alpha * step
            if problem._check_domain(cand):
                cand_val = problem.value(cand)
                if cand_val <= fval + 1e-4 * alpha * float(grad @ step) + slack:
                    x, fval = cand, cand_val
                    break
            alpha *= config.backtrack
        else:
            if grad_norm <= config.stall_tol:
                break
            raise BrakeSolverError(
                f"line search collapsed at iteration {it}; grad norm {grad_norm:.3e}")
    else:
        if grad_norm > config.stall_tol:
            raise BrakeSolverError(
                f"no convergence after {config.max_iterations} iterations; "
                f"grad norm {grad_norm:.3e}")

    eta = np.concatenate([[0.0], x])
    return BrakeOrbit(template=template, n=n, times=problem.nodes, eta=eta,
                      potentials=tuple(potentials), eps1=eps1, eps2=eps2,
                      c=problem.value(x), grad_norm=grad_norm, iterations=it)


def brake_level_trapezoid(orbit: BrakeOrbit) -> float:
    """The found minimizer's level under plain trapezoid quadrature (the
    form matched by path actions of smoothed families)."""
    problem = _DiscreteBrake(orbit.template, orbit.n, orbit.potentials)
    return problem.value_trapezoid(orbit.eta[1:])


# ---------------------------------------------------------------------------
# Folding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldedBrake:
    """n-component path on [0, T] obtained by reflecting successive brake
    slots; carries the schedule of its n-1 endpoint double collisions."""

    path: Path
    collisions: tuple  # ((i, i+1), t) with t in {0.0, T}

    @property
    def n(self) -> int:
        return self.path.n


def fold_brake(orbit: BrakeOrbit, T: float | None = None) -> FoldedBrake:
    if T is not None and not math.isclose(T, orbit.T, rel_tol=1e-12):
        raise EvaluationError("fold target horizon must match the brake template")
    m, n = orbit.m_per_segment, orbit.n
    vals = np.empty((n, m + 1))
    for i in range(1, n + 1):
        if i % 2 == 1:
            vals[i - 1] = orbit.eta[(i - 1) * m: i * m + 1]
        else:
            vals[i - 1] = orbit.eta[(i - 1) * m: i * m + 1][::-1]
    path = Path(orbit.template, vals, admissible=False)
    schedule = []
    for i in range(1, n):
        schedule.append(((i, i + 1), orbit.T if i % 2 == 1 else 0.0))
    return FoldedBrake(path=path, collisions=tuple(schedule))


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def _one_sided_slope(t0, t1, t2, y0, y1, y2) -> float:
    """Second-order derivative estimate at t0 from the two nodes beyond it."""
    h1, h2 = t1 - t0, t2 - t0
    return float((y1 - y0) * h2 / (h1 * (h2 - h1)) - (y2 - y0) * h1 / (h2 * (h2 - h1)))


@dataclass
class BrakeReport:
    monotonicity_margin: float
    junction_mismatch: float
    el_residual: float
    energy_drift: float
    eps2_level_shift: float | None
    checks: dict = field(default_factory=dict)

    def all_pass(self) -> bool:
        return all(self.checks.values())


def verify_brake(orbit: BrakeOrbit, config: BrakeConfig | None = None,
                 junction_tol: float = 1e-3, el_tol: float = 1e-9,
                 energy_tol: float = 1e-6, eps2_tol: float = 1e-8,
                 recheck_eps2: bool = True,
                 resolved_fraction: float = 0.2) -> BrakeReport:
    """Report the lemma-level properties of a computed brake: monotonicity,
    C1 junctions, interior stationarity, per-segment energy constancy, and
    (for smoothed slots) independence of the level from the second cut.

    Energy constancy uses interval-midpoint finite differences, which are
    second-order accurate only where the mesh resolves the motion; the
    drift is therefore measured on the window where eta exceeds
    ``resolved_fraction`` of the apex (and sits clear of the smoothing
    zone).  Inside the ejection layer the finite-difference energy is a
    mesh artifact, not a property of the minimizer.
    """
    eta, times = orbit.eta, orbit.times
    m, n = orbit.m_per_segment, orbit.n

    margin = float(np.min(np.diff(eta)))

    mismatches = [0.0]
    for i in range(1, n):
        j = i * m
        left = _one_sided_slope(times[j], times[j - 1], times[j - 2],
                                eta[j], eta[j - 1], eta[j - 2])
        right = _one_sided_slope(times[j], times[j + 1], times[j + 2],
                                 eta[j], eta[j + 1], eta[j + 2])
        mismatches.append(abs(left - right))
    junction_mismatch = max(mismatches)

    problem = _DiscreteBrake(orbit.template, n, orbit.potentials)
    grad, _, _ = problem.grad_and_jac(eta[1:])
    el_residual = float(np.max(np.abs(grad)))

    # per-segment energy 0.5 eta'^2 - f(eta) at interval midpoints, on the
    # finite-difference-resolved window
    h = np.diff(times)
    v = np.diff(eta) / h
    floor = max(10.0 * orbit.eps1, resolved_fraction * float(eta[-1]))
    drift = 0.0
    for i in range(1, n + 1):
        sl = slice((i - 1) * m, i * m)
        vi = v[sl]
        mid = 0.5 * (eta[(i - 1) * m: i * m] + eta[(i - 1) * m + 1: i * m + 1])
        phi = orbit.potentials[i - 1]
        keep = mid > floor
        if not np.any(keep):
            continue
        vi, mid = vi[keep], mid[keep]
        e = 0.5 * vi ** 2 - np.asarray(phi.value(mid), dtype=float)
        scale = max(float(np.mean(np.abs(e))), 1e-30)
        drift = max(drift, float(np.max(np.abs(e - np.mean(e)))) / scale)

    eps2_shift = None
    if recheck_eps2 and orbit.eps2 > 0.0:
        bases = [(_attraction_core(p)) for p in orbit.potentials]
        other = solve_brake(bases, orbit.T, n, orbit.eps1, orbit.eps2 / 2.0,
                            orbit.template, config, initial=orbit.eta[1:].copy())
        eps2_shift = abs(other.c - orbit.c)

    checks = {
        "monotone": margin >= -1e-12,
        "junction_c1": junction_mismatch <= junction_tol,
        "el_residual": el_residual <= el_tol,
        "energy_constancy": drift <= energy_tol,
    }
    if eps2_shift is not None:
        checks["eps2_independent"] = eps2_shift <= eps2_tol
    return BrakeReport(monotonicity_margin=margin,
                       junction_mismatch=junction_mismatch,
                       el_residual=el_residual,
                       energy_drift=drift,
                       eps2_level_shift=eps2_shift,
                       checks=checks)


# ---------------------------------------------------------------------------
# Independent oracle: energy-based shooting by pure quadrature
# ---------------------------------------------------------------------------

def _time_integral(phi, h: float, lo: float, hi: float, apex: float | None) -> float:
    """integral of d xi / sqrt(2 (h + phi(xi))) on [lo, hi]; if hi is the
    apex (h + phi = 0 there), substitute xi = hi - u^2 to kill the root."""
    from scipy.integrate import quad

    if hi <= lo:
        return 0.0
    if apex is not None:
        def g(u):
            xi = hi - u * u
            val = 2.0 * (h + float(phi.value(max(xi, 1e-300))))
            return 2.0 * u / math.sqrt(max(val, 1e-300))
        out, _ = quad(g, 0.0, math.sqrt(hi - lo), limit=200)
        return out

    def f(xi):
        val = 2.0 * (h + float(phi.value(max(xi, 1e-300))))
        return 1.0 / math.sqrt(max(val, 1e-300))
    out, _ = quad(f, lo, hi, limit=200)
    return out


def _f_time_integral(phi, h: float, lo: float, hi: float, apex: bool) -> float:
    """integral of f(eta) dt over a rising stretch, as a xi-quadrature;
    substitutions remove the collision-start and apex singularities."""
    from scipy.integrate import quad

    if hi <= lo:
        return 0.0

    def integrand(xi):
        fv = float(phi.value(max(xi, 1e-300)))
        return fv / math.sqrt(max(2.0 * (h + fv), 1e-300))

    mid = 0.5 * (lo + hi)
    total = 0.0
    if lo == 0.0 and getattr(phi, "singular_at_zero", False):
        def g_lo(u):
            xi = u * u
            fv = float(phi.value(max(xi, 1e-300)))
            return 2.0 * u * fv / math.sqrt(max(2.0 * (h + fv), 1e-300))
        part, _ = quad(g_lo, 0.0, math.sqrt(mid), limit=200)
        total += part
    else:
        part, _ = quad(integrand, lo, mid, limit=200)
        total += part
    if apex:
        def g_hi(u):
            xi = hi - u * u
            fv = float(phi.value(max(xi, 1e-300)))
            return 2.0 * u * fv / math.sqrt(max(2.0 * (h + fv), 1e-300))
        part, _ = quad(g_hi, 0.0, math.sqrt(hi - mid), limit=200)
        total += part
    else:
        part, _ = quad(integrand, mid, hi, limit=200)
        total += part
    return total


def _apex_of(phi, h: float) -> float:
    """Solve h + phi(xi) = 0 for the turning radius."""
    from scipy.optimize import brentq

    if h >= 0.0:
        return math.inf
    lo, hi = 1e-12, 1.0
    while h + float(phi.value(hi)) > 0.0:
        hi *= 2.0
        if hi > 1e12:
            return math.inf
    return float(brentq(lambda x: h + float(phi.value(x)), lo, hi, xtol=1e-15))


def _chain_time(potentials, T: float, n: int, h1: float):
    """Total rising time of the segment chain started with first-slot
    energy h1, truncated at the apex; also returns per-segment data."""
    from scipy.optimize import brentq

    t_total = 0.0
    lo = 0.0
    h = h1
    segments = []
    for i in range(n):
        phi = potentials[i]
        apex = _apex_of(phi, h)
        if math.isfinite(apex):
            t_apex = _time_integral(phi, h, lo, apex, apex)
        else:
            t_apex = math.inf
        if i == n - 1 or t_apex <= T:
            # ride to the apex: the chain ends here
            segments.append((h, lo, apex, True))
            return t_total + t_apex, segments

        # position reached after exactly T inside this slot
        def time_to(x):
            return _time_integral(phi, h, lo, x, None) - T

        if math.isfinite(apex):
            hi = apex * (1.0 - 1e-12)
        else:
            hi = max(2.0 * lo, 1.0)
            while time_to(hi) < 0.0:
                hi *= 2.0
        eta_T = float(brentq(time_to, lo + 1e-300, hi, xtol=1e-14, rtol=8.9e-16))
        segments.append((h, lo, eta_T, False))
        t_total += T
        h = h + float(phi.value(eta_T)) - float(potentials[i + 1].value(eta_T))
        lo = eta_T
    return t_total, segments


def shoot_brake(attractions, T: float, n: int,
                eps1: float = 0.0, eps2: float = 0.0) -> dict:
    """Energy-based shooting oracle: finds the first-slot energy for which
    the monotone chain stops exactly at nT; all by adaptive quadrature.

    Returns apex, eta(T), the level c, and the per-segment energies.
    """
    from scipy.optimize import brentq

    potentials = _segment_potentials(attractions, eps1, eps2)

    def mismatch(h1):
        t, _ = _chain_time(potentials, T, n, h1)
        return t - n * T

    # bracket: energies near 0- give long times, steep negatives stop early
    hi = -1e-9
    while not math.isfinite(mismatch(hi)) or mismatch(hi) < 0.0:
        hi /= 2.0
        if abs(hi) < 1e-300:
            raise BrakeSolverError("shooting bracket failed near zero energy")
    lo = hi * 2.0
    while mismatch(lo) > 0.0:
        lo *= 2.0
        if abs(lo) > 1e12:
            raise BrakeSolverError("shooting bracket failed at steep energies")
    h1 = float(brentq(mismatch, lo, hi, xtol=1e-14, rtol=8.9e-16))

    _, segments = _chain_time(potentials, T, n, h1)
    c = 0.0
    seg_energies = []
    eta_T = None
    for i, (h, a, b, is_apex) in enumerate(segments):
        phi = potentials[i]
        dt = T
        c += h * dt + 2.0 * _f_time_integral(phi, h, a, b, is_apex)
        seg_energies.append(h)
        if i == 0:
            eta_T = b
    return {"h1": h1, "segment_energies": seg_energies, "apex": segments[-1][2],
            "eta_T": eta_T, "c": c}


# Closed forms for families whose attractions share one power law a/s.

def kepler_apex(a: float, total_time: float) -> float:
    """Turning radius of the collision brake of qdd = -a/q^2 lasting the
    given time."""
    return (2.0 * math.sqrt(2.0 * a) * total_time / math.pi) ** (2.0 / 3.0)


def kepler_c0(a: float, n: int, T: float) -> float:
    """Closed-form minimum level for n equal a/s slots of length T."""
    r = kepler_apex(a, n * T)
    return -a * n * T / r + math.pi * math.sqrt(2.0 * a * r)


def kepler_eta(a: float, total_time: float, t: float) -> float:
    """Position along the collision brake at time t (degenerate-ellipse
    parametrization)."""
    from scipy.optimize import brentq

    r = kepler_apex(a, total_time)
    scale = r ** 1.5 / math.sqrt(2.0 * a)

    def timeof(theta):
        return scale * (theta - math.sin(theta) * math.cos(theta)) - t

    theta = brentq(timeof, 0.0, math.pi / 2.0, xtol=1e-15)
    return r * math.sin(theta) ** 2
