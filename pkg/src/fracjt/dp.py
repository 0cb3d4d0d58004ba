"""Exact dynamic programming over the discretized battery/channel state space.

Relative value iteration with damping, exact policy iteration, and seeded
Monte-Carlo policy evaluation on the same discretized dynamics.

Actions are parameterized as target battery levels: action j of BS k in state
(i1, i2) budgets A = (B_k + T_f E_k - level[target]) / T_f, i.e. spend
everything above the target.  With the default cap of (levels - 1) frames of
arrivals per BS, one frame's harvest is exactly one battery step, so the
equality-constrained transitions land on grid points, no energy is created or
destroyed by projection, and the discretized chain stays unichain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelGrid, as_generator
from .perframe import PerFrameInput, PerFrameSolution, per_frame_greedy, per_stage_utility
from .precoding import zf_weights

_FEAS_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """Iteration failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class EnergyCausalityError(RuntimeError):
    """A solution would drive a battery negative: solver bug upstream."""


@dataclass
class SystemState:
    battery: tuple
    channel_idx: int


@dataclass
class StateGrid:
    """Per-BS battery levels plus the channel grid and the action-set size."""

    battery_levels: tuple  # (levels for BS1, levels for BS2), each sorted from 0
    channel: ChannelGrid
    action_levels: int
    noise: float
    frame_length: float

    def __post_init__(self):
        lv = tuple(np.asarray(l, dtype=float) for l in self.battery_levels)
        for l in lv:
            if l[0] != 0.0:
                raise ValueError("battery levels must start at 0")
            if len(l) > 1 and np.any(np.diff(l) <= 0):
                raise ValueError("battery levels must be strictly increasing")
        if self.action_levels < 2:
            raise ValueError("need at least 2 action levels")
        self.battery_levels = lv

    @property
    def shape(self) -> tuple:
        return (
            len(self.battery_levels[0]),
            len(self.battery_levels[1]),
            self.channel.n_states,
        )

    def b_max(self, k: int) -> float:
        return float(self.battery_levels[k][-1])

    def project_level(self, k: int, b: float) -> int:
        """Grid level holding at most b Joules (floor with round-off slack).

        Rounding down cannot create energy, so no policy can farm the
        projection; exact landings produced by the spend-down actions are
        honored through the tolerance.
        """
        lv = self.battery_levels[k]
        idx = int(np.searchsorted(lv, b * (1.0 + 1e-9) + 1e-12, side="right")) - 1
        return max(idx, 0)


def make_state_grid(
    channel_grid: ChannelGrid,
    e_rates,
    noise: float,
    frame_length: float,
    battery_levels: int = 8,
    action_levels: int = 6,
    cap_frames: float = 20.0,
    b_max=None,
) -> StateGrid:
    """Uniform per-BS battery grids from 0 to the cap.

    The cap defaults to min(cap_frames, battery_levels - 1) frames of that
    BS's arrivals, which keeps the level step at or below one frame's harvest
    so that saving energy is representable on the grid.
    """
    levels = []
    for k in (0, 1):
        if b_max is not None:
            cap = float(b_max[k]) if np.ndim(b_max) else float(b_max)
        else:
            cap = min(cap_frames, battery_levels - 1) * frame_length * e_rates[k]
        if cap <= 0:
            levels.append(np.array([0.0]))
        else:
            levels.append(np.linspace(0.0, cap, battery_levels))
    return StateGrid(tuple(levels), channel_grid, action_levels, noise, frame_length)


def action_set(grid: StateGrid, e_rates, k: int, i: int):
    """Spend-down actions of BS k at level i: (target level indices, budgets).

    Action j drains the battery to target level t_j, so the transition is
    exact on the grid and no energy is created by projection.  At most
    ``action_levels`` evenly spaced targets are kept, always including target
    0 (spend everything) and the highest reachable level.  When one frame's
    harvest would overflow the cap, an extra zero-budget action (bank what
    fits, overflow lost) is appended; without it a full battery would force
    spending, which breaks the monotonicity of the relative utility.
    """
    lv = grid.battery_levels[k]
    tf = grid.frame_length
    avail = lv[i] + tf * e_rates[k]
    hi = int(np.searchsorted(lv, avail + _FEAS_TOL * (1.0 + avail), side="right")) - 1
    m = grid.action_levels
    if hi + 1 <= m:
        targets = np.arange(hi + 1)
    else:
        targets = np.unique(np.round(np.linspace(0, hi, m)).astype(int))
    budgets = np.maximum((avail - lv[targets]) / tf, 0.0)
    if avail > lv[-1] + _FEAS_TOL * (1.0 + avail) and budgets[-1] > 0.0:
        targets = np.append(targets, len(lv) - 1)
        budgets = np.append(budgets, 0.0)
    return targets, budgets


@dataclass
class Policy:
    """Per-state action indices into each BS's action list, shape (L1, L2, C, 2)."""

    actions: np.ndarray

    def budgets(self, grid: StateGrid, e_rates, i1: int, i2: int, ci: int) -> tuple:
        j1, j2 = self.actions[i1, i2, ci]
        return (
            float(action_set(grid, e_rates, 0, i1)[1][j1]),
            float(action_set(grid, e_rates, 1, i2)[1][j2]),
        )


@dataclass
class RelativeUtility:
    h: np.ndarray  # (L1, L2, C)
    lam: float


@dataclass
class StageTables:
    """Per-(state, action) utility and next-level maps; -inf marks invalid actions."""

    utility: np.ndarray  # (L1, L2, C, m, m)
    next1: np.ndarray    # (L1, L2, C, m, m) int
    next2: np.ndarray


def battery_update(battery, sol: PerFrameSolution, e_rates, frame_length: float,
                   b_max) -> np.ndarray:
    """Next battery levels after one frame, clipped to [0, b_max] per BS.

    Raises EnergyCausalityError when the pre-clip result is negative beyond
    round-off, which signals an infeasible solution upstream.
    """
    spend = sol.spends(frame_length)
    caps = (float(b_max[0]), float(b_max[1])) if np.ndim(b_max) else (float(b_max),) * 2
    nxt = np.array(
        [
            battery[0] + frame_length * e_rates[0] - spend[0],
            battery[1] + frame_length * e_rates[1] - spend[1],
        ]
    )
    tol = 1e-9 * max(1.0, caps[0], caps[1])
    if np.min(nxt) < -tol:
        raise EnergyCausalityError(
            f"battery would go to {nxt.min():.3e} J; solution spends more than available"
        )
    return np.minimum(np.maximum(nxt, 0.0), np.array(caps))


def build_stage_tables(
    grid: StateGrid,
    e_rates,
    delta_alpha: float = 1e-3,
    per_stage: str = "equality",
) -> StageTables:
    """Tabulate the per-stage optimum and next-state map for every (s, a).

    ``per_stage='equality'`` uses the closed-form equality-constrained solver,
    whose consumption equals the budget, so transitions hit targets exactly.
    ``'inequality'`` uses the KKT water-filling solver (budgets as caps); its
    solutions may leave slack, banking the difference.
    """
    if per_stage not in ("equality", "inequality"):
        raise ValueError(f"unknown per_stage mode {per_stage!r}")
    n1, n2, nc = grid.shape
    m = grid.action_levels + 1  # room for the overflow action
    tf = grid.frame_length
    lv1, lv2 = grid.battery_levels
    acts1 = [action_set(grid, e_rates, 0, i) for i in range(n1)]
    acts2 = [action_set(grid, e_rates, 1, i) for i in range(n2)]
    util = np.full((n1, n2, nc, m, m), -np.inf)
    next1 = np.zeros((n1, n2, nc, m, m), dtype=np.int64)
    next2 = np.zeros((n1, n2, nc, m, m), dtype=np.int64)
    caps = (grid.b_max(0), grid.b_max(1))
    for ci, chan in enumerate(grid.channel.states):
        w = zf_weights(chan.entries)
        for i1 in range(n1):
            for i2 in range(n2):
                b = (lv1[i1], lv2[i2])
                for j1, a1 in enumerate(acts1[i1][1]):
                    for j2, a2 in enumerate(acts2[i2][1]):
                        pf = PerFrameInput.build(
                            b, e_rates, (a1, a2), chan, grid.noise, tf, w=w
                        )
                        if per_stage == "equality":
                            sol = per_stage_utility(pf, delta_alpha)
                        else:
                            sol = per_frame_greedy(pf, delta_alpha)
                        util[i1, i2, ci, j1, j2] = sol.sum_rate
                        nb = battery_update(b, sol, e_rates, tf, caps)
                        next1[i1, i2, ci, j1, j2] = grid.project_level(0, nb[0])
                        next2[i1, i2, ci, j1, j2] = grid.project_level(1, nb[1])
    return StageTables(util, next1, next2)


def _argmax_actions(q: np.ndarray) -> np.ndarray:
    m = q.shape[-1]
    flat = q.reshape(*q.shape[:3], -1)
    idx = flat.argmax(axis=3)
    return np.stack([idx // m, idx % m], axis=-1)


def _greedy_sweep(tables: StageTables, h: np.ndarray, probs: np.ndarray, tau: float):
    """Q-values with damped continuation; invalid actions stay at -inf."""
    hbar = h @ probs  # (L1, L2): channel transition is i.i.d.
    cont = hbar[tables.next1, tables.next2]
    q = tables.utility + tau * cont
    return q.max(axis=(3, 4)), q


def relative_value_iteration(
    grid: StateGrid,
    e_rates,
    tau: float = 0.9,
    tol: float = 1e-5,
    max_iter: int = 5000,
    tables: StageTables | None = None,
    delta_alpha: float = 1e-3,
    ref_channel: int | None = None,
):
    """Damped relative value iteration; returns (RelativeUtility, Policy).

    The average utility is read off at the reference state (0, 0, H0) each
    sweep; iteration stops when the relative-utility update falls below tol.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if tables is None:
        tables = build_stage_tables(grid, e_rates, delta_alpha)
    probs = grid.channel.stationary_probs
    c0 = int(np.argmax(probs)) if ref_channel is None else int(ref_channel)
    h = np.zeros(grid.shape)
    lam = 0.0
    resid = math.inf
    for _ in range(max_iter):
        qmax, _ = _greedy_sweep(tables, h, probs, tau)
        lam = float(qmax[0, 0, c0])
        h_new = (1.0 - tau) * h + qmax - lam
        resid = float(np.max(np.abs(h_new - h)))
        h = h_new
        if resid < tol:
            _, q = _greedy_sweep(tables, h, probs, tau)
            actions = _argmax_actions(q)
            return RelativeUtility(h=h, lam=lam), Policy(actions=actions)
    raise ConvergenceError("relative value iteration did not converge", resid)


def _myopic_policy(grid: StateGrid, tables: StageTables) -> Policy:
    return Policy(actions=_argmax_actions(tables.utility))


def _evaluate_policy_linear(grid: StateGrid, tables: StageTables, policy: Policy,
                            ref_channel: int):
    """Solve the average-reward evaluation equations with h pinned at (0,0,H0)."""
    n1, n2, nc = grid.shape
    probs = grid.channel.stationary_probs
    n_states = n1 * n2 * nc

    def sid(i1, i2, ci):
        return (i1 * n2 + i2) * nc + ci

    s0 = sid(0, 0, ref_channel)

    def col(s):
        return None if s == s0 else (s if s < s0 else s - 1) + 1

    mat = np.zeros((n_states, n_states))
    rhs = np.empty(n_states)
    for i1 in range(n1):
        for i2 in range(n2):
            for ci in range(nc):
                s = sid(i1, i2, ci)
                mat[s, 0] = 1.0
                cs = col(s)
                if cs is not None:
                    mat[s, cs] += 1.0
                j1, j2 = policy.actions[i1, i2, ci]
                nx1 = tables.next1[i1, i2, ci, j1, j2]
                nx2 = tables.next2[i1, i2, ci, j1, j2]
                for cn in range(nc):
                    cc = col(sid(nx1, nx2, cn))
                    if cc is not None:
                        mat[s, cc] -= probs[cn]
                rhs[s] = tables.utility[i1, i2, ci, j1, j2]
    try:
        x = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        # multichain policy: fall back to the minimum-norm solution
        x = np.linalg.lstsq(mat, rhs, rcond=None)[0]
    lam = float(x[0])
    h = np.zeros(n_states)
    for s in range(n_states):
        cs = col(s)
        h[s] = 0.0 if cs is None else x[cs]
    return lam, h.reshape(n1, n2, nc)


def policy_iteration_exact(
    grid: StateGrid,
    e_rates,
    initial: Policy | None = None,
    tol: float = 1e-9,
    max_iter: int = 200,
    tables: StageTables | None = None,
    delta_alpha: float = 1e-3,
    ref_channel: int | None = None,
):
    """Exact policy iteration; returns (RelativeUtility, Policy, lambda trace).

    ``tol`` is the minimum Q-value gain required to replace an incumbent
    action; numerically tied actions would otherwise flip forever.
    """
    if tables is None:
        tables = build_stage_tables(grid, e_rates, delta_alpha)
    probs = grid.channel.stationary_probs
    c0 = int(np.argmax(probs)) if ref_channel is None else int(ref_channel)
    policy = initial if initial is not None else _myopic_policy(grid, tables)
    trace = []
    tol_improve = tol
    for _ in range(max_iter):
        lam, h = _evaluate_policy_linear(grid, tables, policy, c0)
        trace.append(lam)
        hbar = h @ probs
        q = tables.utility + hbar[tables.next1, tables.next2]
        new_actions = _argmax_actions(q)
        # keep the incumbent action unless the argmax strictly improves;
        # otherwise numerically tied actions make the policy cycle forever
        n1, n2, nc = grid.shape
        ii1, ii2, cc = np.meshgrid(
            np.arange(n1), np.arange(n2), np.arange(nc), indexing="ij"
        )
        q_old = q[ii1, ii2, cc, policy.actions[..., 0], policy.actions[..., 1]]
        q_new = q[ii1, ii2, cc, new_actions[..., 0], new_actions[..., 1]]
        improve = q_new > q_old + tol_improve
        merged = np.where(improve[..., None], new_actions, policy.actions)
        if np.array_equal(merged, policy.actions):
            return RelativeUtility(h=h, lam=lam), policy, trace
        policy = Policy(actions=merged)
    raise ConvergenceError("policy iteration did not terminate", math.nan)


@dataclass
class MCStats:
    avg_sum_rate: float
    avg_alpha: float
    per_user_rates: list = field(default_factory=list)
    n_frames: int = 0


def _per_user_rates(sol: PerFrameSolution, chan, noise: float) -> tuple:
    g = float(np.abs(chan.entries[sol.user, sol.k]) ** 2)
    r_single = math.log2(1.0 + sol.p_tilde * g / noise) if sol.alpha > 0 else 0.0
    rates = []
    for i in (0, 1):
        r = (1.0 - sol.alpha) * math.log2(1.0 + sol.powers[i] / noise)
        if i == sol.user:
            r += sol.alpha * r_single
        rates.append(r)
    return tuple(rates)


def solution_provider(policy, grid: StateGrid, e_rates, delta_alpha: float = 1e-3):
    """Memoized per-state frame solutions for a stationary policy.

    ``policy`` is either a Policy table (budgets looked up, equality solver)
    or a callable taking a budget-capped PerFrameInput and returning a
    PerFrameSolution (online baselines).
    """
    lv1, lv2 = grid.battery_levels
    tf = grid.frame_length
    cache: dict = {}
    w_cache = [zf_weights(ch.entries) for ch in grid.channel.states]

    def solve(i1: int, i2: int, ci: int) -> PerFrameSolution:
        key = (i1, i2, ci)
        sol = cache.get(key)
        if sol is not None:
            return sol
        b = (lv1[i1], lv2[i2])
        chan = grid.channel.states[ci]
        if isinstance(policy, Policy):
            budgets = policy.budgets(grid, e_rates, i1, i2, ci)
            pf = PerFrameInput.build(b, e_rates, budgets, chan, grid.noise, tf,
                                     w=w_cache[ci])
            sol = per_stage_utility(pf, delta_alpha)
        else:
            caps = (b[0] / tf + e_rates[0], b[1] / tf + e_rates[1])
            pf = PerFrameInput.build(b, e_rates, caps, chan, grid.noise, tf,
                                     w=w_cache[ci])
            sol = policy(pf)
        cache[key] = sol
        return sol

    return solve


def evaluate_policy_mc(
    policy,
    grid: StateGrid,
    e_rates,
    n_frames: int,
    rng,
    delta_alpha: float = 1e-3,
    collect: bool = False,
    trace_writer=None,
    start_battery=(0.0, 0.0),
) -> MCStats:
    """Closed-loop simulation on the discretized dynamics; seeded, reproducible.

    Batteries evolve through the actual per-frame solutions and are projected
    to the nearest grid level, matching the DP transition model.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = as_generator(rng)
    solve = solution_provider(policy, grid, e_rates, delta_alpha)
    lv1, lv2 = grid.battery_levels
    tf = grid.frame_length
    caps = (grid.b_max(0), grid.b_max(1))
    probs = grid.channel.stationary_probs
    draws = rng.choice(grid.channel.n_states, size=n_frames, p=probs)
    i1 = grid.project_level(0, start_battery[0])
    i2 = grid.project_level(1, start_battery[1])
    nxt_cache: dict = {}
    total = 0.0
    alpha_total = 0.0
    samples: list = []
    for t in range(n_frames):
        ci = int(draws[t])
        sol = solve(i1, i2, ci)
        total += sol.sum_rate
        alpha_total += sol.alpha
        if collect:
            samples.extend(_per_user_rates(sol, grid.channel.states[ci], grid.noise))
        if trace_writer is not None:
            trace_writer.write(
                f"{t},{sol.k + 1},{sol.alpha:.6g},{sol.p_tilde:.6g},"
                f"{sol.powers[0]:.6g},{sol.powers[1]:.6g},{lv1[i1]:.6g},{lv2[i2]:.6g}\n"
            )
        key = (i1, i2, ci)
        nxt = nxt_cache.get(key)
        if nxt is None:
            nb = battery_update((lv1[i1], lv2[i2]), sol, e_rates, tf, caps)
            nxt = (grid.project_level(0, nb[0]), grid.project_level(1, nb[1]))
            nxt_cache[key] = nxt
        i1, i2 = nxt
    return MCStats(
        avg_sum_rate=total / n_frames,
        avg_alpha=alpha_total / n_frames,
        per_user_rates=samples,
        n_frames=n_frames,
    )


def save_dp_table(path, grid: StateGrid, util: RelativeUtility, policy: Policy,
                  e_rates) -> None:
    """Plain-text dump: lambda header, then one state per line with h and budgets."""
    lines = [f"# lambda {float(util.lam)!r}", "# b1_idx b2_idx chan_idx h A1_W A2_W"]
    n1, n2, nc = grid.shape
    for i1 in range(n1):
        for i2 in range(n2):
            for ci in range(nc):
                a1, a2 = policy.budgets(grid, e_rates, i1, i2, ci)
                lines.append(
                    f"{i1} {i2} {ci} {float(util.h[i1, i2, ci])!r} "
                    f"{float(a1)!r} {float(a2)!r}"
                )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dp_table(path, grid: StateGrid):
    """Parse a saved table back into (lambda, h array, budget array)."""
    h = np.zeros(grid.shape)
    budgets = np.zeros((*grid.shape, 2))
    lam = math.nan
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# lambda"):
                lam = float(line.split()[2])
                continue
            if line.startswith("#"):
                continue
            toks = line.split()
            i1, i2, ci = int(toks[0]), int(toks[1]), int(toks[2])
            h[i1, i2, ci] = float(toks[3])
            budgets[i1, i2, ci] = (float(toks[4]), float(toks[5]))
    return lam, h, budgets
