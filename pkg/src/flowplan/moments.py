"""First and second transition moments and nodal PDE coefficient fields.

Expanding the one-step value recursion to second order around a state turns
it into a drift-diffusion-reaction equation whose coefficients are the
moments of the one-step displacement under the transition law. The default
``displacement`` convention uses E[s' - s] as the drift, which transports
value along the expected motion; ``paper-literal`` negates the drift to
match the expansion written with (s - s') differences. The second moment is
identical under both (signs square away).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .mdp import MdpModel

Convention = Literal["displacement", "paper-literal"]


@dataclass(frozen=True, eq=False)
class DriftDiffusion:
    """One-step displacement moments: drift (km) and non-central second
    moment (km^2) of a single (state, action) transition row."""

    drift: np.ndarray  # shape (2,)
    diffusion: np.ndarray  # shape (2, 2), symmetric PSD

    def __post_init__(self) -> None:
        if self.drift.shape != (2,) or self.diffusion.shape != (2, 2):
            raise ValueError("drift must be a 2-vector and diffusion a 2x2 matrix")


@dataclass(eq=False)
class PdeCoefficients:
    """Per-node coefficient fields of the value PDE under a fixed policy."""

    drift: np.ndarray  # (n_nodes, 2)
    diffusion: np.ndarray  # (n_nodes, 2, 2)
    source: np.ndarray  # (n_nodes,) expected one-step reward R(s, pi(s))
    gamma: float
    goal_node: int


def _check_convention(convention: str) -> None:
    if convention not in ("displacement", "paper-literal"):
        raise ValueError(f"unknown moment convention {convention!r}")


def transition_moments(
    model: MdpModel, s: int, a: int, convention: Convention = "displacement"
) -> DriftDiffusion:
    """Displacement moments of a transition row.

    drift_i = sum_s' T(s,a;s') (s'_i - s_i) and
    diffusion_ij = sum_s' T(s,a;s') (s'_i - s_i)(s'_j - s_j); the
    paper-literal convention flips the drift sign.
    """
    _check_convention(convention)
    ids, probs = model.transition_row(s, a)
    positions = model.states.positions()
    disp = positions[ids] - positions[s]
    drift = probs @ disp
    diffusion = (disp * probs[:, None]).T @ disp
    if convention == "paper-literal":
        drift = -drift
    return DriftDiffusion(drift, diffusion)


def assemble_coefficients(
    model: MdpModel,
    policy: np.ndarray,
    node_states: np.ndarray,
    goal_node: int,
    convention: Convention = "displacement",
) -> PdeCoefficients:
    """Sample drift, diffusion, and reward source at mesh nodes.

    ``node_states`` maps each node to its grid state; the node sitting on the
    goal state is recorded for the point constraint applied by the solver.
    """
    _check_convention(convention)
    node_states = np.asarray(node_states)
    if node_states.ndim != 1 or len(node_states) == 0:
        raise ValueError("node_states must be a non-empty 1-D array of state ids")
    if node_states.min() < 0 or node_states.max() >= model.n_states:
        raise ValueError("node maps to a state id outside the model")
    n = len(node_states)
    drift = np.empty((n, 2))
    diffusion = np.empty((n, 2, 2))
    source = np.empty(n)
    for k, s in enumerate(node_states):
        a = int(policy[s])
        m = transition_moments(model, int(s), a, convention)
        drift[k] = m.drift
        diffusion[k] = m.diffusion
        source[k] = model.rewards[s, a]
    return PdeCoefficients(drift, diffusion, source, model.gamma, goal_node)


def write_coefficients_csv(path, node_positions: np.ndarray, coeffs: PdeCoefficients) -> None:
    """Debug dump of the nodal coefficient fields."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "x_km", "y_km", "mu_x", "mu_y", "sxx", "sxy", "syy", "source"])
        for k in range(len(node_positions)):
            writer.writerow(
                [
                    k,
                    repr(float(node_positions[k, 0])),
                    repr(float(node_positions[k, 1])),
                    repr(float(coeffs.drift[k, 0])),
                    repr(float(coeffs.drift[k, 1])),
                    repr(float(coeffs.diffusion[k, 0, 0])),
                    repr(float(coeffs.diffusion[k, 0, 1])),
                    repr(float(coeffs.diffusion[k, 1, 1])),
                    repr(float(coeffs.source[k])),
                ]
            )
