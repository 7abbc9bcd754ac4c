"""Approximate policy iteration with finite-element policy evaluation.

Each iteration samples the transition moments of the current policy at the
mesh nodes, solves the drift-diffusion-reaction weak form for a continuous
value function, and then improves the policy pointwise on all grid states
using recovered first and second derivatives of that value. The loop stops
when the policy stops changing (exact equality on the state grid) or the
iteration budget runs out, in which case the result is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem
from .errors import DomainError
from .mdp import MdpModel
from .moments import Convention, assemble_coefficients, transition_moments


@dataclass(frozen=True)
class ApiConfig:
    """Knobs of the approximate policy-iteration loop.

    Args:
        k: mesh subsample factor (1 keeps all states, 2 the checkerboard half).
        max_iterations: evaluation/improvement cycles before flagging.
        convention: moment sign convention fed to the PDE and improvement.
        init_policy: "goal-aimed" points every state at the goal; "uniform-n"
            starts from the first compass action everywhere.
        stickiness: score margin a challenger action must beat the incumbent
            by during the loop. Near-tied states otherwise flip forever as the
            evaluated value jitters, so the stopping rule would never trigger;
            the margin doubles for a state after its second flip, which pins
            any remaining oscillators. Zero restores the bare argmax loop.
    """

    k: int = 1
    max_iterations: int = 50
    convention: Convention = "displacement"
    init_policy: str = "goal-aimed"
    stickiness: float = 1e-4

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.init_policy not in ("goal-aimed", "uniform-n"):
            raise ValueError(f"unknown initial policy {self.init_policy!r}")
        if self.stickiness < 0:
            raise ValueError("stickiness must be non-negative")


@dataclass(eq=False)
class ApiResult:
    policy: np.ndarray
    value: fem.ContinuousValue
    iterations: int
    change_counts: list[int]
    converged: bool
    diagnostics: list[dict] = field(default_factory=list)


def initial_policy(model: MdpModel, kind: str = "goal-aimed") -> np.ndarray:
    """Either uniform first-action or headings aimed most directly at the goal."""
    if kind == "uniform-n":
        return np.zeros(model.n_states, dtype=np.int64)
    positions = model.states.positions()
    goal = positions[model.states.goal]
    delta = goal - positions
    bearing = np.arctan2(delta[:, 1], delta[:, 0])
    headings = np.array([a.heading for a in model.actions])
    alignment = np.cos(bearing[:, None] - headings[None, :])
    policy = np.argmax(alignment, axis=1)
    policy[model.states.goal] = 0
    return policy.astype(np.int64)


def _state_scores(
    model: MdpModel,
    s: int,
    value_at: float,
    grad: np.ndarray,
    hess: np.ndarray,
    convention: Convention,
) -> np.ndarray:
    gamma = model.gamma
    scores = np.empty(model.n_actions)
    for a in range(model.n_actions):
        m = transition_moments(model, s, a, convention)
        diff_term = 0.5 * float(np.tensordot(m.diffusion, hess))
        scores[a] = (
            model.rewards[s, a]
            + gamma * (float(m.drift @ grad) + diff_term)
            - (1.0 - gamma) * value_at
        )
    return scores


def improve_policy_continuous(
    model: MdpModel,
    value: fem.ContinuousValue,
    states: np.ndarray | None = None,
    convention: Convention = "displacement",
    clamp: bool = False,
    incumbent: np.ndarray | None = None,
    margins: np.ndarray | None = None,
) -> np.ndarray:
    """Greedy one-step improvement against a continuous value function.

    Scores each action by expected reward plus the drift and diffusion terms
    of the local expansion of the value (the action-independent reaction term
    is kept for fidelity; it cannot change the argmax). State centers outside
    the mesh cover raise DomainError unless ``clamp`` projects them onto it.
    With ``incumbent``/``margins`` set (the loop's hysteresis), a state keeps
    its incumbent action unless the best challenger clears the margin.
    """
    if states is None:
        states = np.arange(model.n_states)
    policy = (
        np.zeros(model.n_states, dtype=np.int64) if incumbent is None else incumbent.copy()
    )
    for s in states:
        s = int(s)
        p = model.states.position(s)
        if clamp and not value.mesh.covers(p):
            p = value.mesh.project(p)
        elif not value.mesh.covers(p):
            raise DomainError(f"state center {tuple(p)} outside mesh cover")
        v = value.evaluate(p)
        grad = value.gradient(p)
        hess = value.hessian(p)
        scores = _state_scores(model, s, v, grad, hess, convention)
        best = int(np.argmax(scores))
        if incumbent is None:
            policy[s] = best
        else:
            margin = 0.0 if margins is None else float(margins[s])
            if best != policy[s] and scores[best] > scores[policy[s]] + margin:
                policy[s] = best
    return policy


def project_wall_tangential(coeffs, mesh: fem.Mesh, model: MdpModel) -> None:
    """Zero the wall-normal part of the second moment at domain-wall nodes.

    The truncated transition rows carry no probability flux across the state
    grid's walls, but their raw second moments do not encode that; projecting
    the moment onto the wall-tangential direction makes the natural zero-flux
    side condition hold identically and removes the boundary layer it would
    otherwise induce in the evaluated value. Mutates ``coeffs`` in place.
    """
    st = model.states
    x_lo, y_lo = st.origin
    x_hi = st.origin.x + (st.nx - 1) * st.cell_km
    y_hi = st.origin.y + (st.ny - 1) * st.cell_km
    tol = 1e-9
    for node in mesh.boundary_nodes:
        x, y = mesh.nodes[node]
        sig = coeffs.diffusion[node]
        if abs(x - x_lo) < tol or abs(x - x_hi) < tol:
            sig[0, 0] = 0.0
            sig[0, 1] = 0.0
            sig[1, 0] = 0.0
        if abs(y - y_lo) < tol or abs(y - y_hi) < tol:
            sig[1, 1] = 0.0
            sig[0, 1] = 0.0
            sig[1, 0] = 0.0


def evaluate_policy_fem(
    model: MdpModel,
    policy: np.ndarray,
    mesh: fem.Mesh,
    convention: Convention = "displacement",
) -> tuple[fem.ContinuousValue, float]:
    """One finite-element policy evaluation; returns the value and residual."""
    coeffs = assemble_coefficients(model, policy, mesh.node_state, mesh.goal_node, convention)
    project_wall_tangential(coeffs, mesh, model)
    system = fem.constrain_goal(fem.assemble(mesh, coeffs), mesh.goal_node)
    nodal = fem.solve(system)
    residual = float(np.max(np.abs(system.matrix @ nodal - system.rhs)))
    return fem.ContinuousValue(mesh, nodal), residual


def approximate_policy_iteration(model: MdpModel, cfg: ApiConfig = ApiConfig()) -> ApiResult:
    """Alternate FEM evaluation and pointwise improvement on all grid states."""
    mesh = fem.build_mesh(model.states, cfg.k)
    policy = initial_policy(model, cfg.init_policy)
    change_counts: list[int] = []
    diagnostics: list[dict] = []
    flips = np.zeros(model.n_states, dtype=np.int64)
    value: fem.ContinuousValue | None = None
    for it in range(1, cfg.max_iterations + 1):
        value, residual = evaluate_policy_fem(model, policy, mesh, cfg.convention)
        margins = cfg.stickiness * np.exp2(np.clip(flips - 2, 0, 48))
        improved = improve_policy_continuous(
            model,
            value,
            convention=cfg.convention,
            clamp=True,
            incumbent=policy if cfg.stickiness > 0 else None,
            margins=margins,
        )
        changes = int(np.sum(improved != policy))
        flips += improved != policy
        change_counts.append(changes)
        diagnostics.append(
            {
                "iteration": it,
                "policy_changes": changes,
                "solve_residual": residual,
                "value_min": float(value.coefficients.min()),
                "value_max": float(value.coefficients.max()),
            }
        )
        if changes == 0:
            return ApiResult(policy, value, it, change_counts, True, diagnostics)
        policy = improved
    assert value is not None
    return ApiResult(policy, value, cfg.max_iterations, change_counts, False, diagnostics)


def value_mse(value: fem.ContinuousValue, oracle: np.ndarray, states) -> float:
    """Mean squared gap to a reference table over non-obstacle state centers.

    Centers that fall outside the mesh cover (the two cut corners of an
    even-sized checkerboard mesh) are evaluated at their projection onto it.
    """
    keep = ~states.obstacles
    points = states.positions()[keep]
    approx = value.evaluate_many(points, clamp=True)
    return float(np.mean((approx - oracle[keep]) ** 2))
