"""Discretized paths and the functionals on them.

A path is piecewise linear on a graded mesh of [0, T].  The kinetic term is
integrated exactly for that model, potential terms by per-node trapezoid
weights, which makes every functional here a smooth function of the nodal
values with an exact nodal gradient.

When the first electron starts on the nucleus and its attraction is still
singular there, the first interval's attraction integral is evaluated in
closed form along the ejection model q ~ (t/t1)^nu with nu = 2/(2+p); the
trapezoid rule is undefined (infinite) at that node and the piecewise-linear
model is not integrable for p >= 1.  The brake solver uses the same rule, so
discrete comparisons between path actions and brake levels are ordered
exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .potentials import PotentialFamily, PowerLaw
from .smoothing import SmoothedPotential, SmoothingParams, TailDampedAttraction, apply_smoothing


class MeshError(ValueError):
    """Mesh construction/compatibility problem."""


class EvaluationError(ValueError):
    """Functional evaluated where a singular term is undefined."""


@dataclass(frozen=True)
class Mesh:
    """Graded mesh of [0, T]: nodes t_k = T (k/m)^grading.

    ``rule`` selects the node-weight quadrature for potential terms;
    trapezoid is the production rule, Simpson exists for error estimation.
    """

    T: float
    m: int
    grading: float = 1.0
    rule: str = "trapezoid"
    _nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.T > 0):
            raise MeshError(f"horizon must be positive, got T={self.T}")
        if self.m < 2:
            raise MeshError(f"need at least 2 intervals, got m={self.m}")
        if self.grading < 1.0:
            raise MeshError(f"grading exponent must be >= 1, got {self.grading}")
        if self.rule not in ("trapezoid", "simpson"):
            raise MeshError(f"unknown quadrature rule {self.rule!r}")
        nodes = self.T * (np.arange(self.m + 1) / self.m) ** self.grading
        nodes[0], nodes[-1] = 0.0, self.T
        nodes.setflags(write=False)
        object.__setattr__(self, "_nodes", nodes)

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def h(self) -> np.ndarray:
        return np.diff(self._nodes)

    @property
    def weights(self) -> np.ndarray:
        """Node weights of the selected rule."""
        if self.rule == "simpson":
            return simpson_weights(self._nodes)
        return trapezoid_weights(self._nodes)

    def compatible(self, other: "Mesh") -> bool:
        return self.m == other.m and np.array_equal(self._nodes, other._nodes)


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    h = np.diff(nodes)
    w = np.zeros(len(nodes))
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


def simpson_weights(nodes: np.ndarray) -> np.ndarray:
    """Composite Simpson on a possibly non-uniform mesh (per interval pair,
    exact for quadratics); a trailing odd interval falls back to trapezoid."""
    n = len(nodes) - 1
    w = np.zeros(len(nodes))
    k = 0
    while k + 2 <= n:
        h0 = nodes[k + 1] - nodes[k]
        h1 = nodes[k + 2] - nodes[k + 1]
        s = h0 + h1
        w[k] += s * (2.0 - h1 / h0) / 6.0
        w[k + 1] += s ** 3 / (6.0 * h0 * h1)
        w[k + 2] += s * (2.0 - h0 / h1) / 6.0
        k += 2
    if k < n:
        h = nodes[k + 1] - nodes[k]
        w[k] += h / 2.0
        w[k + 1] += h / 2.0
    return w


@dataclass(frozen=True)
class Path:
    """Nodal positions of n electrons on a mesh.

    With ``admissible`` set the constraints of the configuration space are
    asserted: first electron pinned to the nucleus at t=0 and strict
    ordering at every node.
    """

    mesh: Mesh
    values: np.ndarray
    admissible: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.mesh.m + 1:
            raise MeshError(f"values must be (n, m+1); got {v.shape} for m={self.mesh.m}")
        if self.admissible:
            if v[0, 0] != 0.0:
                raise MeshError("admissible path must have q1(0) = 0")
            if v.shape[0] > 1 and not np.all(np.diff(v, axis=0) > 0.0):
                raise MeshError("admissible path must be strictly ordered at every node")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def separations(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def min_separation(self) -> float:
        if self.n < 2:
            return math.inf
        return float(self.separations().min())

    def with_values(self, values, admissible: bool | None = None) -> "Path":
        return Path(self.mesh, values,
                    self.admissible if admissible is None else admissible)

    @staticmethod
    def from_callable(mesh: Mesh, fns: Sequence[Callable[[np.ndarray], np.ndarray]],
                      admissible: bool = True) -> "Path":
        vals = np.vstack([np.asarray(f(mesh.nodes), dtype=float) for f in fns])
        return Path(mesh, vals, admissible)


def path_to_csv(path: Path) -> str:
    buf = io.StringIO()
    n = path.n
    buf.write("t," + ",".join(f"q{i}" for i in range(1, n + 1)) + "\n")
    for k, t in enumerate(path.mesh.nodes):
        row = [f"{t:.17g}"] + [f"{path.values[i, k]:.17g}" for i in range(n)]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def path_from_csv(text: str, grading: float = 1.0, admissible: bool = True) -> Path:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    header = lines[0].split(",")
    if header[0] != "t":
        raise MeshError("path CSV must start with a 't' column")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    t, vals = data[:, 0], data[:, 1:].T
    m = len(t) - 1
    mesh = Mesh(T=float(t[-1]), m=m, grading=grading)
    if not np.allclose(mesh.nodes, t, rtol=0, atol=1e-12 * max(1.0, t[-1])):
        raise MeshError("CSV nodes are not the stated graded mesh")
    return Path(mesh, vals, admissible=admissible)


@dataclass
class GradientRep:
    """Euclidean (nodal, quadrature-weighted) and H1 (Riesz) views of a
    functional derivative.  The pinned entry (electron 1, node 0) is zero."""

    nodal: np.ndarray
    h1: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Ejection-model first interval
# ---------------------------------------------------------------------------

def ejection_exponent(p: float) -> float:
    """Power of the collision asymptotics q ~ t^nu for an s**-p attraction."""
    return 2.0 / (2.0 + p)


def ejection_kinetic_coefficient(nu: float) -> float:
    """integral of (1/2) qdot^2 over the model interval = coeff * q1^2 / t1."""
    return nu * nu / (2.0 * (2.0 * nu - 1.0))


def _attraction_core(spec) -> PowerLaw:
    if isinstance(spec, PowerLaw):
        return spec
    if isinstance(spec, SmoothedPotential):
        return spec.base
    if isinstance(spec, TailDampedAttraction):
        return spec.base.base
    raise EvaluationError(f"no power-law core for {type(spec).__name__}")


def first_interval_attraction(spec, eta1: float, t1: float,
                              nu: float) -> tuple[float, float, float]:
    """(value, d/d eta1, d2/d eta1^2) of integral_0^t1 f(eta1 (t/t1)^nu) dt.

    Closed form for power laws and their tangent-smoothed / tail-damped
    variants (the tail never matters on the first interval).
    """
    if isinstance(spec, TailDampedAttraction):
        v, d, d2 = first_interval_attraction(spec.base, eta1, t1, nu)
        return v + spec.offset * t1, d, d2

    if isinstance(spec, PowerLaw):
        if eta1 <= 0.0:
            raise EvaluationError("ejection model needs a positive first node")
        a, p = spec.a, spec.p
        if p * nu >= 1.0:
            raise EvaluationError(f"attraction exponent {p} too steep for the model")
        c = t1 / (1.0 - p * nu)
        val = c * a * eta1 ** (-p)
        d = -p * c * a * eta1 ** (-p - 1.0)
        d2 = p * (p + 1.0) * c * a * eta1 ** (-p - 2.0)
        return val, d, d2

    if isinstance(spec, SmoothedPotential):
        eps = spec.epsilon
        A = spec.f_eps - eps * spec.slope     # intercept of the tangent line
        B = spec.slope
        if eta1 <= eps:
            # whole interval inside the tangent zone (any sign of eta1)
            val = t1 * (A + B * eta1 / (1.0 + nu))
            return val, t1 * B / (1.0 + nu), 0.0
        base = spec.base
        a, p = base.a, base.p
        w_eps = eps / eta1
        inv = 1.0 / nu
        # tangent piece on [0, w_eps], power piece on [w_eps, 1]
        val = t1 * (A * w_eps ** inv
                    + B * eta1 * w_eps ** (inv + 1.0) / (1.0 + nu)
                    + a * eta1 ** (-p) * (1.0 - w_eps ** (inv - p)) / (1.0 - p * nu))
        # differentiate under the integral (the integrand stays continuous
        # at the splice, so the moving-boundary terms cancel)
        d = t1 * (B * w_eps ** (inv + 1.0) / (1.0 + nu)
                  - p * a * eta1 ** (-p - 1.0)
                  * (1.0 - w_eps ** (inv - p)) / (1.0 - p * nu))
        d2 = t1 * (p * (p + 1.0) * a * eta1 ** (-p - 2.0)
                   * (1.0 - w_eps ** (inv - p)) / (1.0 - p * nu))
        return val, d, d2

    raise EvaluationError(f"no first-interval rule for {type(spec).__name__}")


def _uses_ejection_model(path: Path, eff_f1) -> bool:
    """The model rule applies whenever the first electron starts on the
    nucleus and its attraction carries a singular power-law core (raw, or
    smoothed: the tangent zone is traversed within a fraction of the first
    interval on any practical mesh, where node-based quadrature badly
    overcounts).  The closed forms are smooth in the nodal values."""
    if path.values[0, 0] != 0.0:
        return False
    try:
        _attraction_core(eff_f1)
    except EvaluationError:
        return False
    return True


# ---------------------------------------------------------------------------
# Core term assembly
# ---------------------------------------------------------------------------

def _effective(family: PotentialFamily, smoothing: SmoothingParams | None) -> PotentialFamily:
    return apply_smoothing(family, smoothing)


def _eval_attraction(spec, q: np.ndarray, i: int, mesh: Mesh, order: int) -> np.ndarray:
    if getattr(spec, "singular_at_zero", False) and np.any(q <= 0.0):
        k = int(np.argmax(q <= 0.0))
        raise EvaluationError(
            f"attraction f_{i} evaluated at non-positive q at node t={mesh.nodes[k]:.6g}")
    if order == 0:
        return np.asarray(spec.value(q), dtype=float)
    if order == 1:
        return np.asarray(spec.deriv(q), dtype=float)
    return np.asarray(spec.deriv2(q), dtype=float)


def _check_separations(values: np.ndarray, mesh: Mesh, i: int, j: int) -> np.ndarray:
    sep = values[j - 1] - values[i - 1]
    if np.any(sep <= 0.0):
        k = int(np.argmax(sep <= 0.0))
        raise EvaluationError(
            f"non-positive separation for pair ({i},{j}) at node t={mesh.nodes[k]:.6g}")
    return sep


def _attraction_terms(path: Path, eff: PotentialFamily, need_grad: bool):
    """Quadrature value of sum_i integral f_i(q_i) and its nodal gradient."""
    mesh, values = path.mesh, path.values
    w = mesh.weights
    total = 0.0
    grad = np.zeros_like(values) if need_grad else None
    model = _uses_ejection_model(path, eff.f_i(1))
    for i in range(1, eff.n + 1):
        spec = eff.f_i(i)
        q = values[i - 1]
        if i == 1 and model:
            nu = ejection_exponent(_attraction_core(spec).p)
            t1 = mesh.h[0]
            v1, d1, _ = first_interval_attraction(spec, float(q[1]), t1, nu)
            wi = w.copy()
            wi[0] = 0.0
            wi[1] -= t1 / 2.0
            total += float(wi[1:] @ _eval_attraction(spec, q[1:], i, mesh, 0)) + v1
            if need_grad:
                grad[i - 1, 1:] += wi[1:] * _eval_attraction(spec, q[1:], i, mesh, 1)
                grad[i - 1, 1] += d1
        else:
            total += float(w @ _eval_attraction(spec, q, i, mesh, 0))
            if need_grad:
                grad[i - 1] += w * _eval_attraction(spec, q, i, mesh, 1)
    return total, grad


def _repulsion_terms(path: Path, eff: PotentialFamily, need_grad: bool):
    """Quadrature value of sum_{i<j} integral g_ij(q_j - q_i) and gradient."""
    mesh, values = path.mesh, path.values
    w = mesh.weights
    total = 0.0
    grad = np.zeros_like(values) if need_grad else None
    for (i, j) in eff.pairs():
        sep = _check_separations(values, mesh, i, j)
        spec = eff.g_pair(i, j)
        total += float(w @ np.asarray(spec.value(sep), dtype=float))
        if need_grad:
            dg = w * np.asarray(spec.deriv(sep), dtype=float)
            grad[j - 1] += dg
            grad[i - 1] -= dg
    return total, grad


def _kinetic_terms(path: Path, eff: PotentialFamily, need_grad: bool):
    mesh, values = path.mesh, path.values
    h = mesh.h
    dq = np.diff(values, axis=1)
    total = float(0.5 * np.sum(dq * dq / h))
    grad = None
    if need_grad:
        v = dq / h
        grad = np.zeros_like(values)
        grad[:, :-1] -= v
        grad[:, 1:] += v
    if _uses_ejection_model(path, eff.f_i(1)):
        nu = ejection_exponent(_attraction_core(eff.f_i(1)).p)
        c = ejection_kinetic_coefficient(nu)
        q01, h0 = values[0, 1], h[0]
        total += (c - 0.5) * q01 * q01 / h0
        if need_grad:
            grad[0, 1] += (2.0 * c - 1.0) * q01 / h0
    return total, grad


def action(path: Path, family: PotentialFamily,
           smoothing: SmoothingParams | None = None) -> float:
    """Lagrangian action: kinetic + attraction - mu * repulsion."""
    eff = _effective(family, smoothing)
    kin, _ = _kinetic_terms(path, eff, False)
    att, _ = _attraction_terms(path, eff, False)
    rep, _ = _repulsion_terms(path, eff, False) if eff.n > 1 else (0.0, None)
    return kin + att - family.mu * rep


def grad_action(path: Path, family: PotentialFamily,
                smoothing: SmoothingParams | None = None,
                with_h1: bool = False) -> GradientRep:
    eff = _effective(family, smoothing)
    kin, gk = _kinetic_terms(path, eff, True)
    att, ga = _attraction_terms(path, eff, True)
    nodal = gk + ga
    if eff.n > 1:
        rep, gr = _repulsion_terms(path, eff, True)
        nodal -= family.mu * gr
    if path.admissible:
        nodal[0, 0] = 0.0
    rep_ = GradientRep(nodal=nodal)
    if with_h1:
        rep_.h1 = h1_representative(nodal, path)
    return rep_


def g_functional(path: Path, beta: float = 0.0,
                 family: PotentialFamily | None = None) -> float:
    """Barrier functional: separation stiffness + strong-force term
    (+ beta times the undamped repulsion)."""
    mesh, values = path.mesh, path.values
    if path.n < 2:
        return 0.0
    w = mesh.weights
    total = 0.0
    for i in range(1, path.n):
        sep = _check_separations(values, mesh, i, i + 1)
        total += float(w @ (sep * sep + sep ** -2.0))
    if beta:
        if family is None:
            raise EvaluationError("beta > 0 needs a family for the repulsion term")
        rep, _ = _repulsion_terms(path, family, False)
        total += beta * rep
    return total


def grad_g(path: Path, beta: float = 0.0,
           family: PotentialFamily | None = None,
           with_h1: bool = False) -> GradientRep:
    mesh, values = path.mesh, path.values
    w = mesh.weights
    nodal = np.zeros_like(values)
    for i in range(1, path.n):
        sep = _check_separations(values, mesh, i, i + 1)
        d = w * (2.0 * sep - 2.0 * sep ** -3.0)
        nodal[i] += d
        nodal[i - 1] -= d
    if beta:
        if family is None:
            raise EvaluationError("beta > 0 needs a family for the repulsion term")
        _, gr = _repulsion_terms(path, family, True)
        nodal += beta * gr
    if path.admissible:
        nodal[0, 0] = 0.0
    rep_ = GradientRep(nodal=nodal)
    if with_h1:
        rep_.h1 = h1_representative(nodal, path)
    return rep_


def g_lambda_c(path: Path, lam: float, c: float, beta: float = 0.0,
               family: PotentialFamily | None = None,
               smoothing: SmoothingParams | None = None) -> float:
    """The shifted barrier functional G + lambda (c - A)."""
    if lam < 0:
        raise EvaluationError("lambda must be nonnegative")
    val = g_functional(path, beta, family)
    if lam:
        val += lam * (c - action(path, family, smoothing))
    return val


def grad_g_lambda_c(path: Path, lam: float, beta: float = 0.0,
                    family: PotentialFamily | None = None,
                    smoothing: SmoothingParams | None = None,
                    with_h1: bool = False) -> GradientRep:
    g = grad_g(path, beta, family)
    nodal = g.nodal
    if lam:
        nodal = nodal - lam * grad_action(path, family, smoothing).nodal
    rep_ = GradientRep(nodal=nodal)
    if with_h1:
        rep_.h1 = h1_representative(nodal, path)
    return rep_


def directional_derivative(path: Path, family: PotentialFamily, j: int,
                           smoothing: SmoothingParams | None = None) -> float:
    """Pairing of the action gradient with the constant escape direction
    that shifts electrons j+1..n together; used as an escape detector."""
    if not (1 <= j <= path.n - 1):
        raise EvaluationError(f"escape index must satisfy 1 <= j <= n-1, got {j}")
    eff = _effective(family, smoothing)
    mesh, values = path.mesh, path.values
    w = mesh.weights
    total = 0.0
    for i in range(j + 1, path.n + 1):
        total += float(w @ _eval_attraction(eff.f_i(i), values[i - 1], i, mesh, 1))
        for k in range(1, j + 1):
            sep = _check_separations(values, mesh, k, i)
            total -= family.mu * float(
                w @ np.asarray(eff.g_pair(k, i).deriv(sep), dtype=float))
    return total


def h1_distance(p1: Path, p2: Path) -> float:
    """H1 norm of the nodal difference (piecewise-linear derivative part)."""
    if not p1.mesh.compatible(p2.mesh):
        raise MeshError("h1_distance needs identical meshes")
    d = p1.values - p2.values
    w = trapezoid_weights(p1.mesh.nodes)
    l2 = float(np.sum(w * d * d))
    dd = np.diff(d, axis=1)
    dot = float(np.sum(dd * dd / p1.mesh.h))
    return math.sqrt(l2 + dot)


def h1_representative(nodal: np.ndarray, path: Path) -> np.ndarray:
    """Riesz representative in the discrete H1 inner product (lumped mass +
    piecewise-linear stiffness), component by component, with the pinned
    first-electron node handled as a Dirichlet row."""
    from scipy.linalg import solve_banded

    mesh = path.mesh
    m = mesh.m
    h = mesh.h
    w = trapezoid_weights(mesh.nodes)
    out = np.zeros_like(nodal)
    for i in range(nodal.shape[0]):
        ab = np.zeros((3, m + 1))
        ab[1, :] = w
        ab[1, :-1] += 1.0 / h
        ab[1, 1:] += 1.0 / h
        ab[0, 1:] = -1.0 / h      # superdiagonal
        ab[2, :-1] = -1.0 / h     # subdiagonal
        rhs = nodal[i].copy()
        if i == 0 and path.admissible:
            ab[1, 0] = 1.0
            ab[0, 1] = 0.0
            rhs[0] = 0.0
            ab[2, 0] = 0.0
        out[i] = solve_banded((1, 1), ab, rhs)
    return out


def h1_norm_of_rep(rep: np.ndarray, nodal: np.ndarray) -> float:
    """H1 norm of a Riesz representative via <r, M r> = <r, nodal>."""
    return math.sqrt(max(float(np.sum(rep * nodal)), 0.0))
