"""Energies, integral identities, and invariant aggregation.

Nodal velocities come from second-order finite differences (centered
inside, one-sided at the ends).  Near the first electron's ejection those
stencils do not resolve the motion on any practical mesh, so energy
statistics are taken over the resolved window, which is reported alongside
the verdicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .potentials import PotentialFamily
from .smoothing import SmoothingParams, apply_smoothing
from .trajectory import (
    EvaluationError,
    Mesh,
    Path,
    action,
    directional_derivative,
    simpson_weights,
    trapezoid_weights,
)


def nodal_velocities(path: Path) -> np.ndarray:
    """Second-order finite-difference velocities at every node."""
    t = path.mesh.nodes
    q = path.values
    h = np.diff(t)
    v = np.empty_like(q)
    hl, hr = h[:-1], h[1:]
    slopes = np.diff(q, axis=1) / h
    v[:, 1:-1] = (slopes[:, :-1] * hr + slopes[:, 1:] * hl) / (hl + hr)
    # one-sided second-order stencils at the ends
    for (k, k1, k2) in ((0, 1, 2), (-1, -2, -3)):
        h1, h2 = t[k1] - t[k], t[k2] - t[k]
        v[:, k] = ((q[:, k1] - q[:, k]) * h2 / (h1 * (h2 - h1))
                   - (q[:, k2] - q[:, k]) * h1 / (h2 * (h2 - h1)))
    return v


def _potential_at_nodes(path: Path, family: PotentialFamily,
                        smoothing: SmoothingParams | None) -> np.ndarray:
    eff = apply_smoothing(family, smoothing)
    q = path.values
    pot = np.zeros(q.shape[1])
    for i in range(1, path.n + 1):
        spec = eff.f_i(i)
        qi = q[i - 1]
        if getattr(spec, "singular_at_zero", False) and np.any(qi <= 0.0):
            k = int(np.argmax(qi <= 0.0))
            raise EvaluationError(
                f"attraction f_{i} undefined at node t={path.mesh.nodes[k]:.6g}")
        pot -= np.asarray(spec.value(qi), dtype=float)
    for (i, j) in eff.pairs():
        sep = q[j - 1] - q[i - 1]
        if np.any(sep <= 0.0):
            k = int(np.argmax(sep <= 0.0))
            raise EvaluationError(
                f"collision of pair ({i},{j}) at node t={path.mesh.nodes[k]:.6g}")
        pot += family.mu * np.asarray(eff.g_pair(i, j).value(sep), dtype=float)
    return pot


def total_energy(path: Path, family: PotentialFamily,
                 smoothing: SmoothingParams | None = None,
                 node: int | None = None):
    """Kinetic - attraction + mu * repulsion; at one node or all nodes."""
    v = nodal_velocities(path)
    h = 0.5 * np.sum(v * v, axis=0) + _potential_at_nodes(path, family, smoothing)
    if node is None:
        return h
    return float(h[node])


def cluster_energy(path: Path, family: PotentialFamily,
                   smoothing: SmoothingParams | None, j: int, l: int,
                   node: int | None = None):
    """Energy of the electron sub-cluster {l..j}, counting only
    intra-cluster repulsions."""
    if not (1 <= l <= j <= path.n):
        raise EvaluationError(f"cluster needs 1 <= l <= j <= n, got l={l}, j={j}")
    eff = apply_smoothing(family, smoothing)
    v = nodal_velocities(path)
    q = path.values
    h = np.zeros(q.shape[1])
    for i in range(l, j + 1):
        h += 0.5 * v[i - 1] ** 2
        h -= np.asarray(eff.f_i(i).value(q[i - 1]), dtype=float)
    for i in range(l, j + 1):
        for k in range(i + 1, j + 1):
            h += family.mu * np.asarray(
                eff.g_pair(i, k).value(q[k - 1] - q[i - 1]), dtype=float)
    if node is None:
        return h
    return float(h[node])


def resolved_mask(path: Path, smoothing: SmoothingParams | None = None,
                  fraction: float = 0.2) -> np.ndarray:
    """Nodes where finite-difference stencils resolve the motion: the
    first electron must be out of its ejection layer (and clear of the
    smoothing zone)."""
    q1 = path.values[0]
    eps = smoothing.epsilon if smoothing is not None and smoothing.epsilon else 0.0
    floor = max(10.0 * eps, fraction * float(np.max(q1)))
    mask = q1 > floor
    mask[0] = False
    mask[-1] = mask[-1] and q1[-1] > floor
    return mask


@dataclass
class EnergyReport:
    """Nodal total energy with drift and the theoretical bounds.

    ``window_paper`` is the displayed window (-c0/T, ((alpha-2)/(alpha+2)) c0);
    ``upper_virial`` is the bound implied by the same argument with the
    solution's own action in place of c0, which is the sharp form for
    exactly homogeneous potentials.
    """

    nodal: np.ndarray
    mask: np.ndarray
    mean: float
    max_drift: float
    window_paper: tuple
    window_paper_ok: bool
    upper_virial: float
    upper_virial_ok: bool
    kinetic_sq: float
    kinetic_bound: float
    kinetic_ok: bool

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "max_drift": self.max_drift,
            "window_paper": list(self.window_paper),
            "window_paper_ok": self.window_paper_ok,
            "upper_virial": self.upper_virial,
            "upper_virial_ok": self.upper_virial_ok,
            "kinetic_sq": self.kinetic_sq,
            "kinetic_bound": self.kinetic_bound,
            "kinetic_ok": self.kinetic_ok,
            "resolved_nodes": int(self.mask.sum()),
        }


def energy_report(path: Path, family: PotentialFamily,
                  smoothing: SmoothingParams | None,
                  c0: float, tol: float = 1e-8,
                  fraction: float = 0.2) -> EnergyReport:
    h = total_energy(path, family, smoothing)
    mask = resolved_mask(path, smoothing, fraction)
    hw = h[mask] if mask.any() else h[1:-1]
    mean = float(np.mean(hw))
    drift = float(np.max(np.abs(hw - mean))) / max(abs(mean), 1e-30)

    T = path.mesh.T
    alpha = family.alpha
    lo = -c0 / T
    hi = (alpha - 2.0) / (alpha + 2.0) * c0
    a_val = action(path, family, smoothing)
    hi_virial = (alpha - 2.0) / (alpha + 2.0) * a_val / T

    dq = np.diff(path.values, axis=1)
    kin_sq = float(np.sum(dq * dq / path.mesh.h))
    kin_bound = 2.0 * alpha * c0 / (alpha + 2.0)

    return EnergyReport(
        nodal=h, mask=mask, mean=mean, max_drift=drift,
        window_paper=(lo, hi),
        window_paper_ok=bool(lo < mean < hi),
        upper_virial=hi_virial,
        upper_virial_ok=bool(lo < mean <= hi_virial + tol),
        kinetic_sq=kin_sq, kinetic_bound=kin_bound,
        kinetic_ok=bool(kin_sq <= kin_bound + tol),
    )


def quadrature_error_estimate(path: Path, integrand: np.ndarray) -> float:
    """Cheap honest error proxy: |Simpson - trapezoid| of the same nodal
    samples."""
    nodes = path.mesh.nodes
    return abs(float((simpson_weights(nodes) - trapezoid_weights(nodes)) @ integrand))


def integrated_identity_residual(path: Path, family: PotentialFamily,
                                 smoothing: SmoothingParams | None, j: int,
                                 with_estimate: bool = False):
    """Quadrature of the j-th motion equation over [0, T]; at critical
    points with flat-velocity ends this telescopes to zero."""
    if j < 2:
        raise EvaluationError("the integrated identity applies to j >= 2")
    if j > path.n:
        raise EvaluationError(f"j={j} exceeds n={path.n}")
    eff = apply_smoothing(family, smoothing)
    q = path.values
    w = path.mesh.weights
    integrand = np.asarray(eff.f_i(j).deriv(q[j - 1]), dtype=float)
    for k in range(j + 1, path.n + 1):
        integrand += family.mu * np.asarray(
            eff.g_pair(j, k).deriv(q[k - 1] - q[j - 1]), dtype=float)
    for k in range(1, j):
        integrand -= family.mu * np.asarray(
            eff.g_pair(k, j).deriv(q[j - 1] - q[k - 1]), dtype=float)
    residual = float(w @ integrand)
    if not with_estimate:
        return residual
    return residual, quadrature_error_estimate(path, integrand)


PASS, FAIL, NA = "pass", "fail", "n/a"


@dataclass
class InvariantReport:
    """Aggregation of every lemma-level check on a solution.

    ``entries`` maps check name to (verdict, margin, note); informational
    entries carry verdict "n/a" and never affect the aggregate.
    """

    entries: dict = field(default_factory=dict)

    def add(self, name: str, ok: bool | None, margin: float, note: str = "") -> None:
        verdict = NA if ok is None else (PASS if ok else FAIL)
        self.entries[name] = (verdict, float(margin), note)

    def all_pass(self) -> bool:
        return all(v != FAIL for (v, _, _) in self.entries.values())

    def to_dict(self) -> dict:
        return {k: {"verdict": v, "margin": m, "note": n}
                for k, (v, m, n) in sorted(self.entries.items())}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def table(self) -> str:
        lines = [f"{'check':34s} {'verdict':8s} {'margin':>12s}  note"]
        for k, (v, m, n) in sorted(self.entries.items()):
            lines.append(f"{k:34s} {v:8s} {m:12.3e}  {n}")
        return "\n".join(lines)


def invariant_report(solution, references: dict | None = None,
                     el_tol: float = 1e-10, boundary_tol: float = 1e-8,
                     energy_drift_tol: float = 1e-6) -> InvariantReport:
    """Check a solved orbit against every verifiable conclusion: residuals,
    boundary certificates, ordering, concavity, action/kinetic/energy
    bounds, the integrated identity, and the escape guard.

    ``solution`` is any object exposing path/family/smoothing and the
    residual fields produced by the solver; ``references`` may carry
    ``c0`` (brake level) and ``folded`` (the folded brake) for the bounds
    that need them.
    """
    refs = references or {}
    rep = InvariantReport()
    path: Path = solution.path
    family: PotentialFamily = solution.family
    smoothing = solution.smoothing

    rep.add("el_residual", solution.max_el_residual <= el_tol,
            el_tol - solution.max_el_residual,
            f"max interior nodal gradient {solution.max_el_residual:.3e}")
    worst_boundary = max(abs(v) for v in solution.boundary_residuals.values())
    rep.add("boundary_residuals", worst_boundary <= boundary_tol,
            boundary_tol - worst_boundary, "discrete-derivative sense")

    if path.n >= 2:
        min_sep = path.min_separation()
        rep.add("strict_ordering", min_sep > 0.0, min_sep, "")
    else:
        rep.add("strict_ordering", None, math.inf, "single electron")

    # first electron monotone increasing and concave
    q1 = path.values[0]
    fwd = np.diff(q1)
    slopes = fwd / path.mesh.h
    rep.add("q1_increasing", bool(np.min(fwd) >= -1e-12), float(np.min(fwd)), "")
    curv = np.diff(slopes)
    rep.add("q1_concave", bool(np.max(curv) <= 1e-10), float(-np.max(curv)),
            "slope differences")

    c0 = refs.get("c0")
    if c0 is not None:
        a_val = solution.action
        rep.add("action_below_c0", a_val <= c0 + 1e-8, c0 + 1e-8 - a_val,
                f"action {a_val:.8f}, c0 {c0:.8f}")
        er = energy_report(path, family, smoothing, c0)
        rep.add("kinetic_bound", er.kinetic_ok, er.kinetic_bound - er.kinetic_sq,
                "squared L2 of the velocity")
        rep.add("energy_drift", er.max_drift <= energy_drift_tol,
                energy_drift_tol - er.max_drift,
                f"resolved window, {int(er.mask.sum())} nodes")
        rep.add("energy_lower", er.mean > er.window_paper[0],
                er.mean - er.window_paper[0], "")
        rep.add("energy_upper_virial", er.upper_virial_ok,
                er.upper_virial - er.mean, "action-based upper bound")
        rep.add("energy_window_paper", None, er.window_paper[1] - er.mean,
                f"displayed window ({er.window_paper[0]:.4f}, "
                f"{er.window_paper[1]:.4f}), mean {er.mean:.4f}; informational")

    if path.n >= 2:
        worst = 0.0
        worst_est = 0.0
        for j in range(2, path.n + 1):
            res, est = integrated_identity_residual(path, family, smoothing, j,
                                                    with_estimate=True)
            if abs(res) > worst:
                worst, worst_est = abs(res), est
        tol = max(10.0 * worst_est, 1e-12)
        rep.add("integrated_identity", worst <= tol, tol - worst,
                f"residual {worst:.3e} vs 10x quadrature error {10 * worst_est:.3e}")

        worst_ratio, worst_escape, worst_tol = 0.0, 0.0, 1e-12
        for j in range(1, path.n):
            dd = abs(directional_derivative(path, family, j, smoothing))
            tol_j = max(10.0 * _escape_estimate(path, family, smoothing, j), 1e-12)
            if dd / tol_j > worst_ratio:
                worst_ratio, worst_escape, worst_tol = dd / tol_j, dd, tol_j
        rep.add("escape_guard", worst_ratio <= 1.0, worst_tol - worst_escape,
                "stationarity against rigid outward shifts")
    else:
        rep.add("integrated_identity", None, math.inf, "no pairs")
        rep.add("escape_guard", None, math.inf, "no pairs")

    return rep


def _escape_estimate(path: Path, family: PotentialFamily,
                     smoothing: SmoothingParams | None, j: int) -> float:
    eff = apply_smoothing(family, smoothing)
    q = path.values
    integrand = np.zeros(q.shape[1])
    for i in range(j + 1, path.n + 1):
        integrand += np.asarray(eff.f_i(i).deriv(q[i - 1]), dtype=float)
        for k in range(1, j + 1):
            integrand -= family.mu * np.asarray(
                eff.g_pair(k, i).deriv(q[i - 1] - q[k - 1]), dtype=float)
    return quadrature_error_estimate(path, integrand)
