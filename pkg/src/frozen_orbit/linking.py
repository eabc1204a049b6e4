"""Linking geometry and the deformation flow.

The folded brake, shifted rigidly apart by positive gaps, spans a disk of
admissible configurations whose boundary sits arbitrarily deep in the
barrier functional's superlevels; the min-max search deforms that disk by
a cutoff gradient field that trades action descent against barrier growth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .brake import FoldedBrake
from .potentials import PotentialFamily
from .smoothing import SmoothingParams
from .trajectory import (
    EvaluationError,
    GradientRep,
    Path,
    action,
    g_functional,
    grad_action,
    grad_g_lambda_c,
    h1_norm_of_rep,
    h1_representative,
)


class SeedingError(RuntimeError):
    """Disk radius too small: the boundary sphere does not clear the
    barrier threshold."""


class FlowError(RuntimeError):
    """Step-size control collapsed during the deformation flow."""


@dataclass(frozen=True)
class SeparationCoords:
    """Strictly increasing positive shifts (s_1 < ... < s_{n-1}) applied to
    electrons 2..n on top of the folded brake."""

    s: tuple

    def __post_init__(self):
        arr = np.asarray(self.s, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise EvaluationError("separation coordinates need at least one entry")
        if not (arr[0] > 0 and np.all(np.diff(arr) > 0)):
            raise EvaluationError("separation coordinates must be strictly "
                                  "increasing and positive")

    @property
    def gaps(self) -> np.ndarray:
        arr = np.asarray(self.s, dtype=float)
        return np.diff(np.concatenate([[0.0], arr]))


def theta(coords: SeparationCoords, folded: FoldedBrake) -> Path:
    """Rigid-shift embedding: electron 1 rides the brake, electron i+1 is
    the brake's next fold raised by s_i."""
    x = folded.path.values
    s = np.asarray(coords.s, dtype=float)
    if s.size != x.shape[0] - 1:
        raise EvaluationError(f"need {x.shape[0] - 1} coordinates, got {s.size}")
    vals = x.copy()
    vals[1:] += s[:, None]
    return Path(folded.path.mesh, vals, admissible=True)


def phi(path: Path) -> np.ndarray:
    """Logs of the nodewise-minimum neighbour separations."""
    if path.n < 2:
        raise EvaluationError("phi needs at least two electrons")
    mins = path.separations().min(axis=1)
    if np.any(mins <= 0.0):
        raise EvaluationError("phi undefined: non-positive separation")
    return np.log(mins)


def phi_theta_inverse(y: np.ndarray) -> SeparationCoords:
    """Closed-form inverse of phi o theta: gaps are exponentials, shifts
    their prefix sums."""
    v = np.exp(np.asarray(y, dtype=float))
    return SeparationCoords(tuple(np.cumsum(v)))


# ---------------------------------------------------------------------------
# Disk seeding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplePlan:
    """Deterministic sampling of the unit ball in the gap coordinates."""

    boundary: int = 8
    interior: int = 16
    seed: int = 0

    def points(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """(boundary points on the sphere, interior points incl. center)."""
        rng = np.random.default_rng(self.seed)
        if dim == 1:
            bnd = np.array([[-1.0], [1.0]])
        else:
            raw = rng.standard_normal((self.boundary, dim))
            bnd = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        k = max(self.interior - 1, 1)
        radii = (np.arange(1, k + 1) / (k + 1)) ** (1.0 / max(dim, 1))
        dirs = rng.standard_normal((k, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        interior = np.vstack([np.zeros((1, dim)), radii[:, None] * dirs])
        return bnd, interior


@dataclass
class DiskSeed:
    """Sampled image of the linking disk: boundary paths pinned by the
    sphere map, interior paths free to flow."""

    radius: float
    boundary: list
    interior: list
    boundary_g: np.ndarray
    actions: np.ndarray
    reference_level: float
    action_margin: float


def disk_map(x: np.ndarray, r: float, folded: FoldedBrake) -> Path:
    """gamma(x) = Theta((Phi o Theta)^{-1}(r x)); at the center the gaps
    are all one."""
    return theta(phi_theta_inverse(r * np.asarray(x, dtype=float)), folded)


def disk_seed(r: float, folded: FoldedBrake, plan: SamplePlan,
              family: PotentialFamily, smoothing: SmoothingParams | None,
              lam: float, c_tilde: float, b: float,
              reference_level: float | None = None,
              beta: float = 0.0) -> DiskSeed:
    """Sample the linking disk at radius r.

    Raises SeedingError when some boundary sample fails to clear the
    barrier threshold b (the radius is too small for this b).
    """
    if r <= 0:
        raise SeedingError("disk radius must be positive")
    dim = folded.n - 1
    if dim < 1:
        raise SeedingError("linking needs at least two electrons")
    bnd_pts, int_pts = plan.points(dim)
    boundary = [disk_map(x, r, folded) for x in bnd_pts]
    interior = [disk_map(x, r, folded) for x in int_pts]

    g_vals = []
    for p in boundary:
        g = g_functional(p, beta, family)
        a = action(p, family, smoothing)
        g_vals.append(g + lam * (c_tilde - a))
    boundary_g = np.asarray(g_vals)
    if boundary_g.min() <= b:
        raise SeedingError(
            f"boundary barrier {boundary_g.min():.6g} does not exceed b={b:.6g}; "
            "increase the disk radius")

    acts = np.asarray([action(p, family, smoothing) for p in boundary + interior])
    margin = float('nan')
    if reference_level is not None:
        margin = float(np.max(acts) - reference_level)
    return DiskSeed(radius=r, boundary=boundary, interior=interior,
                    boundary_g=boundary_g, actions=acts,
                    reference_level=reference_level if reference_level is not None else math.nan,
                    action_margin=margin)


# ---------------------------------------------------------------------------
# Deformation field and flow
# ---------------------------------------------------------------------------

def cutoff(t: float, eps: float) -> float:
    """C^1 monotone plateau function: 1 below eps/2, 0 above eps."""
    if t <= eps / 2.0:
        return 1.0
    if t >= eps:
        return 0.0
    u = (t - eps / 2.0) / (eps / 2.0)
    return 1.0 - (3.0 * u * u - 2.0 * u ** 3)


@dataclass(frozen=True)
class FlowParams:
    """Knobs of the cutoff deformation field.

    c_star centers the action cutoff and b the barrier cutoffs; c_ref is
    the fixed reference level inside the shifted barrier functional
    G = barrier + lam (c_ref - action).  cutoff_eps is the plateau width
    and dt the nominal Euler step.  The proof-level thresholds behind lam
    and b are not computable; they are exposed here as configuration.
    """

    c_star: float
    b: float
    c_ref: float | None = None
    lam: float = 1.0
    cutoff_eps: float = 1.0
    beta: float = 0.0
    dt: float = 0.05
    grad_floor: float = 1e-9
    z_tol: float = 1e-10
    min_step: float = 1e-12
    separation_cap: float = 0.25

    @property
    def shift_level(self) -> float:
        return self.c_star if self.c_ref is None else self.c_ref


@dataclass
class FlowState:
    """A path being deformed, with the running (action, barrier) record."""

    path: Path
    params: FlowParams
    history: list = field(default_factory=list)
    near_critical: bool = False
    terminated: str = ""

    def values(self) -> tuple[float, float]:
        return self.history[-1][1], self.history[-1][2]


@dataclass
class FieldDiagnostics:
    action: float
    g_lambda: float
    cutoff_action: float
    cutoff_barrier: float
    cutoff_interface: float
    grad_a_norm: float
    grad_g_norm: float
    cosine: float
    near_critical: bool


def deformation_field(path: Path, params: FlowParams, family: PotentialFamily,
                      smoothing: SmoothingParams | None = None
                      ) -> tuple[np.ndarray, FieldDiagnostics]:
    """The cutoff descent/ascent combination field, in H1 representatives.

    Z = phi(|A - c*|) phi(G - b) (-grad A / |grad A| + phi(|G - b|) grad G / |grad G|)
    """
    a_val = action(path, family, smoothing)
    g_val = (g_functional(path, params.beta, family)
             + params.lam * (params.shift_level - a_val))
    eps = params.cutoff_eps
    cut_a = cutoff(abs(a_val - params.c_star), eps)
    cut_g = cutoff(g_val - params.b, eps)
    cut_i = cutoff(abs(g_val - params.b), eps)

    diag = FieldDiagnostics(action=a_val, g_lambda=g_val, cutoff_action=cut_a,
                            cutoff_barrier=cut_g, cutoff_interface=cut_i,
                            grad_a_norm=0.0, grad_g_norm=0.0, cosine=0.0,
                            near_critical=False)
    if cut_a == 0.0 or cut_g == 0.0:
        return np.zeros_like(path.values), diag

    ga = grad_action(path, family, smoothing)
    ra = h1_representative(ga.nodal, path)
    norm_a = h1_norm_of_rep(ra, ga.nodal)
    diag.grad_a_norm = norm_a
    if norm_a < params.grad_floor:
        diag.near_critical = True
        return np.zeros_like(path.values), diag

    gg = grad_g_lambda_c(path, params.lam, params.beta, family, smoothing)
    rg = h1_representative(gg.nodal, path)
    norm_g = h1_norm_of_rep(rg, gg.nodal)
    diag.grad_g_norm = norm_g
    if norm_g > 0:
        diag.cosine = float(np.sum(ra * gg.nodal)) / (norm_a * norm_g)

    z = -ra / norm_a
    if cut_i > 0.0 and norm_g > 0.0:
        z = z + cut_i * rg / norm_g
    z = cut_a * cut_g * z
    if path.admissible:
        z[0, 0] = 0.0
    return z, diag


def flow(state: FlowState, steps: int, family: PotentialFamily,
         smoothing: SmoothingParams | None = None) -> FlowState:
    """Explicit Euler deformation with separation-aware step capping and
    monotonicity backtracking: the action may never rise, and the barrier
    may never fall while inside the interface band."""
    params = state.params
    path = state.path
    slack = 1e-12
    for _ in range(steps):
        z, diag = deformation_field(path, params, family, smoothing)
        if not state.history:
            state.history.append((0, diag.action, diag.g_lambda,
                                  diag.grad_a_norm))
        zmax = float(np.max(np.abs(z)))
        if diag.near_critical:
            state.near_critical = True
            state.terminated = "near-critical"
            break
        if zmax <= params.z_tol:
            state.terminated = "outside-cutoffs" if diag.cutoff_action * diag.cutoff_barrier == 0.0 else "stationary"
            break
        tau = params.dt
        if path.n > 1:
            tau = min(tau, params.separation_cap * path.min_separation() / zmax)
        in_band = abs(diag.g_lambda - params.b) <= params.cutoff_eps / 2.0
        accepted = False
        while tau >= params.min_step:
            try:
                cand = path.with_values(path.values + tau * z)
            except Exception:
                tau *= 0.5
                continue
            try:
                a_new = action(cand, family, smoothing)
                g_new = (g_functional(cand, params.beta, family)
                         + params.lam * (params.shift_level - a_new))
            except EvaluationError:
                tau *= 0.5
                continue
            if a_new > diag.action + slack:
                tau *= 0.5
                continue
            if in_band and g_new < diag.g_lambda - slack:
                tau *= 0.5
                continue
            accepted = True
            break
        if not accepted:
            raise FlowError(
                f"step control collapsed at step {len(state.history)}; "
                f"action={diag.action:.6g}, barrier={diag.g_lambda:.6g}")
        path = cand
        state.history.append((len(state.history), a_new, g_new, diag.grad_a_norm))
    state.path = path
    return state


def flow_history_csv(state: FlowState) -> str:
    lines = ["step,action,g_value,grad_norm"]
    for step, a, g, gn in state.history:
        lines.append(f"{step},{a:.17g},{g:.17g},{gn:.17g}")
    return "\n".join(lines) + "\n"
