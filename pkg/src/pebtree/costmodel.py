"""Analytical I/O cost of the privacy-aware range query.

The sequence-value component dominates key order, so the model estimates
leaf accesses from the policy parameters alone: with ``n_p`` policies per
user and grouping factor ``theta``, a query touches about
``1 + n_p - n_p**theta`` leaves (capped by the leaf count), and the user
density scales that linearly through two fitted parameters.  The fit
takes exactly two measured sample points.

Pure functions; thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CostParams:
    """Inputs of the fitted cost function for one workload point."""

    a1: float
    a2: float
    n_users: int
    n_policies: int
    theta: float
    side: float
    leaf_count: int


def _grouping_term(n_policies: int, theta: float, leaf_count: int) -> float:
    if n_policies < 1:
        raise ValueError("need at least one policy per user")
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if leaf_count < 1:
        raise ValueError("leaf count is at least 1")
    base = n_policies if n_policies <= leaf_count else leaf_count
    return base - n_policies**theta


def cost_c1(n_policies: int, theta: float, leaf_count: int) -> float:
    """Parameter-free leaf estimate: one leaf plus the ungrouped remainder."""
    return 1.0 + _grouping_term(n_policies, theta, leaf_count)


def cost_c(params: CostParams) -> float:
    """Fitted leaf estimate; density times the grouping term, floored at 1."""
    density = params.n_users / (params.side * params.side)
    value = 1.0 + (params.a1 * density + params.a2) * _grouping_term(
        params.n_policies, params.theta, params.leaf_count
    )
    return max(value, 1.0)


Sample = tuple[int, float, int, float, int, float]
# (n_users, side, n_policies, theta, leaf_count, measured cost)


def fit_cost_params(sample1: Sample, sample2: Sample) -> tuple[float, float]:
    """Solve for (a1, a2) from two measured sample points.

    Each sample is (n_users, side, n_policies, theta, leaf_count,
    measured).  The points must differ in user density and must not sit at
    theta = 1 (where the grouping term vanishes and the system is
    singular).
    """
    betas = []
    densities = []
    for n_users, side, n_policies, theta, leaf_count, measured in (sample1, sample2):
        term = _grouping_term(n_policies, theta, leaf_count)
        if term == 0:
            raise ValueError("sample at theta = 1 makes the fit singular")
        betas.append((measured - 1.0) / term)
        densities.append(n_users / (side * side))
    if densities[0] == densities[1]:
        raise ValueError("sample points must differ in user density")
    a1 = (betas[0] - betas[1]) / (densities[0] - densities[1])
    a2 = betas[0] - a1 * densities[0]
    return a1, a2
