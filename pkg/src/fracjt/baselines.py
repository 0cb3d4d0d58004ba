"""Reference policies: conventional full-frame ZF-JT, greedy fractional JT,
and fixed-BS selection for the single-BS subframe.

All three are online state callbacks operating on a budget-capped
PerFrameInput (budgets prefilled to B/T_f + E by the evaluation loop).
"""

from __future__ import annotations

from .perframe import (
    PerFrameInput,
    PerFrameSolution,
    _select_user,
    per_frame_greedy,
    per_stage_utility,
    zfjt_power_allocation,
)

BASELINE_KINDS = ("conventional_zfjt", "greedy", "fixed_bs")


def conventional_zfjt(pf: PerFrameInput) -> PerFrameSolution:
    """Whole-frame ZF-JT: alpha forced to 0, per-BS inequality power constraints."""
    p1, p2, value, loads = zfjt_power_allocation(pf.w_row_powers, pf.budgets, pf.noise)
    user = _select_user(0, pf.e_rates[0], pf.gains, pf.noise)
    return PerFrameSolution(
        k=0, user=user, alpha=0.0, p_tilde=0.0,
        powers=(p1, p2), sum_rate=value, jt_loads=loads,
    )


def greedy_policy(pf: PerFrameInput, delta_alpha: float = 1e-3) -> PerFrameSolution:
    """Spend-everything fractional JT: the frame optimum at full budget caps."""
    return per_frame_greedy(pf, delta_alpha)


def fixed_bs_policy(k: int, pf: PerFrameInput, delta_alpha: float = 1e-3) -> PerFrameSolution:
    """Fractional JT with the single-BS subframe pinned to BS k."""
    if k not in (0, 1):
        raise ValueError(f"BS index must be 0 or 1, got {k}")
    return per_stage_utility(pf, delta_alpha, ks=(k,))
