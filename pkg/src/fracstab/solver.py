"""Picard iteration for the integral form of the fractional Volterra problem.

The initial value problem of order (alpha, beta) with weight function psi,

    D^{alpha,beta;psi} u(t) = f(t, u(t)) + int_0^t k(t, s, u(s)) ds,
    I^{1-gamma;psi} u(0) = sigma,        gamma = alpha + beta*(1 - alpha),

is equivalent to the fixed-point equation u = Omega(u) with

    (Omega v)(t) = (psi(t)-psi(0))^(gamma-1) * sigma / Gamma(gamma)
                   + I^{alpha;psi}[ f(., v(.)) ](t)
                   + I^{alpha;psi}[ xi -> int_0^xi k(xi, s, v(s)) ds ](t).

solve() iterates u_{m+1} = Omega(u_m) from the prefactor seed and stops on
a sup-norm residual below tol.  When gamma < 1 the prefactor diverges at
t = 0, so norms and convergence checks run on nodes 1..n-1 and node 0
carries a flagged display placeholder (the prefactor evaluated at half the
first step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exprlang import Expr, evaluate
from .psicalc import (
    FractionalOrder,
    GridFunction,
    build_plan,
    make_grid,
    same_grid,
)

__all__ = [
    "ProblemSpec",
    "SolveReport",
    "ContractionReport",
    "SpotCheckReport",
    "NonContractiveError",
    "SingularPrefactorError",
    "problem_grid",
    "prefactor",
    "prefactor_at",
    "picard_step",
    "solve",
    "contraction_check",
    "lipschitz_spot_check",
]


class NonContractiveError(RuntimeError):
    """Picard iteration diverged; carries the residual trace for diagnosis."""

    def __init__(self, message, residual_trace):
        super().__init__(message)
        self.residual_trace = np.asarray(residual_trace)


class SingularPrefactorError(ValueError):
    """The prefactor (psi(t)-psi(0))^(gamma-1) was requested at t=0 with gamma<1."""


@dataclass(frozen=True)
class ProblemSpec:
    """Full problem statement: orders, domain, expressions and constants.

    f is an expression over {t, u}, k over {t, s, u}, psi and phi over {t}.
    L_f and L_k are user-asserted Lipschitz constants of f and k in u
    (lipschitz_spot_check can falsify but not prove them).  Exactly one of
    phi (envelope mode) / epsilon (constant mode) may be present; both
    absent means solve-only.
    """

    order: FractionalOrder
    T: float
    n: int
    psi: Expr
    f: Expr
    k: Expr
    sigma: float
    L_f: float
    L_k: float
    phi: Expr | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if self.phi is not None and self.epsilon is not None:
            raise ValueError("phi and epsilon are mutually exclusive")
        if self.L_f < 0.0 or self.L_k < 0.0:
            raise ValueError("Lipschitz constants must be nonnegative")
        if self.epsilon is not None and self.epsilon < 0.0:
            raise ValueError("epsilon must be nonnegative")

    @property
    def mode(self):
        """'HUR' (envelope), 'HU' (constant epsilon), or None (solve-only)."""
        if self.phi is not None:
            return "HUR"
        if self.epsilon is not None:
            return "HU"
        return None


@dataclass(frozen=True)
class SolveReport:
    solution: GridFunction
    iterations: int
    residual_trace: np.ndarray
    contraction_estimate: float
    converged: bool


@dataclass(frozen=True)
class ContractionReport:
    q: float
    satisfied: bool


@dataclass(frozen=True)
class SpotCheckReport:
    max_ratio_f: float
    max_ratio_k: float
    violation_f: bool
    violation_k: bool

    @property
    def violated(self):
        return self.violation_f or self.violation_k


def _eval_on(expr, shape, bindings):
    # expressions without variables evaluate to scalars; broadcast them
    vals = np.asarray(evaluate(expr, bindings), dtype=float)
    return np.broadcast_to(vals, shape)


def problem_grid(spec):
    """Build the uniform grid for a problem, sampling its weight function."""
    return make_grid(spec.T, spec.n, lambda t: _eval_on(spec.psi, t.shape, {"t": t}))


def check_nodes(spec):
    """Node slice used for norms and checks: 1..n-1 when gamma < 1, else all."""
    return slice(1, None) if spec.order.gamma < 1.0 else slice(None)


def prefactor_at(spec, t):
    """Prefactor (psi(t)-psi(0))^(gamma-1) * sigma / Gamma(gamma) at scalar t.

    Raises SingularPrefactorError at t = 0 when gamma < 1, where the value
    is genuinely unbounded.
    """
    gamma = spec.order.gamma
    dpsi = float(evaluate(spec.psi, {"t": float(t)})) - float(
        evaluate(spec.psi, {"t": 0.0})
    )
    if dpsi == 0.0 and gamma < 1.0:
        raise SingularPrefactorError(
            f"prefactor is singular at t={t} for gamma={gamma} < 1"
        )
    return dpsi ** (gamma - 1.0) * spec.sigma / math.gamma(gamma)


def prefactor(spec, grid):
    """Prefactor term as a GridFunction.

    For gamma < 1, node 0 stores the prefactor evaluated at t_1/2 as a
    display placeholder; it is excluded from norms and checks.
    """
    gamma = spec.order.gamma
    dpsi = grid.psi_values - grid.psi_values[0]
    scale = spec.sigma / math.gamma(gamma)
    values = np.empty(grid.n)
    values[1:] = dpsi[1:] ** (gamma - 1.0) * scale
    if gamma == 1.0:
        values[0] = scale
    else:
        half = 0.5 * grid.t[1]
        psi_half = float(evaluate(spec.psi, {"t": half}))
        values[0] = (psi_half - grid.psi_values[0]) ** (gamma - 1.0) * scale
    return GridFunction(grid, values)


def _inner_volterra(spec, grid, v_values):
    """Composite-trapezoid inner integrals K_i = int_0^{t_i} k(t_i, s, v(s)) ds."""
    n = grid.n
    t = grid.t
    kmat = _eval_on(
        spec.k,
        (n, n),
        {"t": t[:, None], "s": t[None, :], "u": v_values[None, :]},
    )
    h = t[1] - t[0]
    running = np.diagonal(np.cumsum(kmat, axis=1))
    inner = h * (running - 0.5 * (kmat[:, 0] + np.diagonal(kmat)))
    inner[0] = 0.0
    return inner


def picard_step(spec, plan_alpha, v):
    """One application of the integral operator Omega to the iterate v.

    Returns the grid function

        prefactor + I^{alpha;psi}[f(., v)] + I^{alpha;psi}[inner Volterra of v],

    where the inner integral int_0^xi k(xi, s, v(s)) ds binds the kernel's
    first argument to the outer quadrature variable xi and is computed by
    composite trapezoid over s.  Domain violations inside f or k surface
    as EvalError.
    """
    grid = plan_alpha.grid
    if not same_grid(v.grid, grid):
        raise ValueError("iterate does not live on the plan's grid")
    f_vals = _eval_on(spec.f, (grid.n,), {"t": grid.t, "u": v.values})
    inner = _inner_volterra(spec, grid, v.values)
    total = (
        prefactor(spec, grid).values
        + plan_alpha.weights @ f_vals
        + plan_alpha.weights @ inner
    )
    return GridFunction(grid, total)


def solve(spec, tol=1e-10, max_iter=200, *, plan=None, forcing=None):
    """Picard iteration u_{m+1} = Omega(u_m) from the prefactor seed.

    Parameters
    ----------
    spec : ProblemSpec
    tol : float
        Stop when the sup-norm of successive differences (over checked
        nodes) falls below tol.  The fixed-point residual of the returned
        solution is then at most tol/(1-q) for contraction estimate q.
    max_iter : int
        Iteration cap; hitting it returns converged=False.
    plan : QuadraturePlan, optional
        Reuse a precomputed order-alpha plan on the problem's grid.
    forcing : ndarray, optional
        Extra grid function added to every iterate (solves the forced
        equation u = Omega(u) + forcing); used to manufacture perturbed
        solutions.

    Raises
    ------
    NonContractiveError
        After 5 consecutive residual increases (divergence).
    """
    if not tol > 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1, got {max_iter}")
    if plan is None:
        plan = build_plan(spec.order.alpha, problem_grid(spec))
    grid = plan.grid
    nodes = check_nodes(spec)
    seed = prefactor(spec, grid).values
    if forcing is not None:
        seed = seed + np.asarray(forcing, dtype=float)
    u = GridFunction(grid, seed)

    trace = []
    increases = 0
    converged = False
    iterations = 0
    for _ in range(max_iter):
        stepped = picard_step(spec, plan, u).values
        if forcing is not None:
            stepped = stepped + forcing
        residual = float(np.max(np.abs(stepped - u.values)[nodes]))
        trace.append(residual)
        u = GridFunction(grid, stepped)
        iterations += 1
        if residual < tol:
            converged = True
            break
        if len(trace) >= 2 and residual > trace[-2]:
            increases += 1
            if increases >= 5:
                raise NonContractiveError(
                    f"residual grew for {increases} consecutive iterations "
                    f"(last residual {residual:.3e})",
                    trace,
                )
        else:
            increases = 0

    trace = np.asarray(trace)
    ratios = [
        trace[m] / trace[m - 1]
        for m in range(1, len(trace))
        if trace[m - 1] > 0.0
    ]
    estimate = float(max(ratios)) if ratios else 0.0
    return SolveReport(u, iterations, trace, estimate, converged)


def hu_factor(spec):
    """The constant (psi(T)-psi(0))^alpha / Gamma(alpha+1)."""
    psi_span = float(evaluate(spec.psi, {"t": spec.T})) - float(
        evaluate(spec.psi, {"t": 0.0})
    )
    return psi_span**spec.order.alpha / math.gamma(spec.order.alpha + 1.0)


def contraction_check(spec, M=None):
    """Contraction constant q and whether the fixed-point hypothesis holds.

    Envelope (HUR) mode needs the envelope constant M and uses
    q = M*L_f + M^2*L_k; otherwise q = (psi(T)-psi(0))^alpha/Gamma(alpha+1)
    * [L_f + (T/2)*L_k].  q = 0 (zero Lipschitz data) counts as satisfied.
    """
    if spec.mode == "HUR":
        if M is None:
            raise ValueError("envelope mode requires the constant M")
        q = M * spec.L_f + M * M * spec.L_k
    else:
        q = hu_factor(spec) * (spec.L_f + 0.5 * spec.T * spec.L_k)
    return ContractionReport(float(q), bool(0.0 <= q < 1.0))


def lipschitz_spot_check(spec, samples, rng_seed, B=10.0):
    """Sample difference quotients of f and k in u and compare to L_f, L_k.

    Draws (t, s, u1, u2) uniformly from [0,T] x [0,T] x [-B,B]^2 and
    reports the largest observed |f(t,u1)-f(t,u2)|/|u1-u2| and kernel
    analogue; a ratio exceeding the asserted constant by more than 1e-9
    is flagged.  Can falsify asserted constants, never prove them.
    """
    if samples < 1:
        raise ValueError(f"samples must be at least 1, got {samples}")
    rng = np.random.default_rng(rng_seed)
    t = rng.uniform(0.0, spec.T, samples)
    s = rng.uniform(0.0, spec.T, samples)
    u1 = rng.uniform(-B, B, samples)
    u2 = rng.uniform(-B, B, samples)
    du = np.abs(u1 - u2)
    ok = du > 0.0

    def max_ratio(expr, bind1, bind2):
        vals1 = _eval_on(expr, (samples,), bind1)
        vals2 = _eval_on(expr, (samples,), bind2)
        diff = np.abs(vals1 - vals2)[ok]
        return float(np.max(diff / du[ok])) if diff.size else 0.0

    ratio_f = max_ratio(spec.f, {"t": t, "u": u1}, {"t": t, "u": u2})
    ratio_k = max_ratio(
        spec.k, {"t": t, "s": s, "u": u1}, {"t": t, "s": s, "u": u2}
    )
    return SpotCheckReport(
        ratio_f,
        ratio_k,
        bool(ratio_f > spec.L_f + 1e-9),
        bool(ratio_k > spec.L_k + 1e-9),
    )
