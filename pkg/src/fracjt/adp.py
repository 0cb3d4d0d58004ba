"""Simulation-based approximate policy iteration with LSPE(beta).

The relative utility is approximated as phi(s)^T c over a 14-dimensional
feature map; weights are fitted by the recursive least-squares policy
evaluation along simulated trajectories, and the policy search restarts from
random policies/states ("policy exploration") to cover the state space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import as_generator
from .dp import (
    Policy,
    StageTables,
    StateGrid,
    action_set,
    battery_update,
    build_stage_tables,
    evaluate_policy_mc,
    solution_provider,
)
from .precoding import gram_eigenvalues

FEATURE_DIM = 14
FEATURE_NAMES = (
    "energy_b1", "energy_b2",
    "chan_11", "chan_12", "chan_21", "chan_22",
    "eig_1", "eig_2",
    "energy_chan_11", "energy_chan_12", "energy_chan_21", "energy_chan_22",
    "energy_eig_1", "energy_eig_2",
)


class DivergenceError(RuntimeError):
    """LSPE weights blew up; try a smaller beta."""


def features(battery, channel, e_rates, noise: float, frame_length: float) -> np.ndarray:
    """Rate-scaled state features: energy, channel, eigenvalue, and 2nd-order terms.

    Ordering: [2 energy, 4 channel (user-major), 2 eigen (descending),
    4 energy*channel, 2 energy*eigen].
    """
    q = (battery[0] / frame_length + e_rates[0], battery[1] / frame_length + e_rates[1])
    g = np.abs(channel.entries) ** 2
    rho = gram_eigenvalues(channel.entries)
    out = np.empty(FEATURE_DIM)
    out[0] = math.log2(1.0 + q[0] / noise)
    out[1] = math.log2(1.0 + q[1] / noise)
    idx = 2
    for i in (0, 1):
        for k in (0, 1):
            out[idx] = math.log2(1.0 + float(g[i, k]))
            idx += 1
    out[6] = math.log2(1.0 + rho[0])
    out[7] = math.log2(1.0 + rho[1])
    idx = 8
    for i in (0, 1):
        for k in (0, 1):
            out[idx] = math.log2(1.0 + q[k] * float(g[i, k]) / noise)
            idx += 1
    out[12] = math.log2(1.0 + q[0] * rho[0] / noise)
    out[13] = math.log2(1.0 + q[1] * rho[1] / noise)
    return out


def build_feature_table(grid: StateGrid, e_rates) -> np.ndarray:
    """phi(s) for every grid state, shape (L1, L2, C, 14)."""
    n1, n2, nc = grid.shape
    lv1, lv2 = grid.battery_levels
    table = np.empty((n1, n2, nc, FEATURE_DIM))
    for ci, chan in enumerate(grid.channel.states):
        for i1 in range(n1):
            for i2 in range(n2):
                table[i1, i2, ci] = features(
                    (lv1[i1], lv2[i2]), chan, e_rates, grid.noise, grid.frame_length
                )
    return table


@dataclass
class LspeAccumulators:
    """Running LSPE(beta) statistics; all-zero boundary values before sample 0."""

    a_mat: np.ndarray
    b_mat: np.ndarray
    b_vec: np.ndarray
    z_vec: np.ndarray
    lambda_run: float = 0.0
    count: int = 0  # samples absorbed so far (i + 1)

    @classmethod
    def zeros(cls, dim: int = FEATURE_DIM) -> "LspeAccumulators":
        return cls(
            a_mat=np.zeros((dim, dim)),
            b_mat=np.zeros((dim, dim)),
            b_vec=np.zeros(dim),
            z_vec=np.zeros(dim),
        )


def _ridge_solve(b_mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    dim = b_mat.shape[0]
    ridge = 1e-8 * float(np.trace(b_mat)) / dim
    if ridge <= 0.0:
        ridge = 1e-12
    return np.linalg.solve(b_mat + ridge * np.eye(dim), rhs)


def lspe_accumulate(acc: LspeAccumulators, phi: np.ndarray, phi_next: np.ndarray,
                    g: float, beta: float) -> LspeAccumulators:
    """Absorb one sample into the running LSPE(beta) statistics.

    Running averages with i/(i+1) forgetting and the eligibility trace
    z_i = beta z_{i-1} + phi(s_i); the running utility average feeds the
    centered reward in b_i.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    i = acc.count
    w_old = i / (i + 1.0)
    w_new = 1.0 / (i + 1.0)
    acc.z_vec = beta * acc.z_vec + phi
    acc.a_mat = w_old * acc.a_mat + w_new * np.outer(acc.z_vec, phi_next - phi)
    acc.b_mat = w_old * acc.b_mat + w_new * np.outer(phi, phi)
    acc.lambda_run = w_old * acc.lambda_run + w_new * g
    acc.b_vec = w_old * acc.b_vec + w_new * acc.z_vec * (g - acc.lambda_run)
    acc.count = i + 1
    return acc


def lspe_step(acc: LspeAccumulators, phi: np.ndarray, phi_next: np.ndarray,
              g: float, beta: float, c: np.ndarray):
    """One LSPE(beta) sample update; returns (acc, next weights).

    The new weights come from a ridge-regularized solve of B_i applied to
    A_i c + b_i.
    """
    acc = lspe_accumulate(acc, phi, phi_next, g, beta)
    c_next = c + _ridge_solve(acc.b_mat, acc.a_mat @ c + acc.b_vec)
    return acc, c_next


def evaluate_policy_lspe(
    policy,
    grid: StateGrid,
    e_rates,
    beta: float,
    n_samples: int,
    eps_c: float,
    rng,
    delta_alpha: float = 1e-3,
    phi_table: np.ndarray | None = None,
    start_state=None,
    restart_every: int = 0,
):
    """Fit phi^T c to the relative utility of a fixed policy by simulation.

    Stops once the weight update drops below eps_c or the sample budget is
    exhausted; returns (weights, running average utility).  For the first
    20 x feature-dim samples only the statistics accumulate and the weights
    stay put: pre-rank iterates of the recursion are noise (they can swing
    the weights arbitrarily before the second-moment matrix settles), and the
    very first update is identically zero anyway since lambda_0 = g_0.

    ``restart_every > 0`` chops the trajectory into segments that restart
    from uniformly random states (the eligibility trace resets and no
    transition is formed across the seam), so under-visited states still get
    coverage; without it a deterministic policy only ever shows its own
    recurrent class to the regression.
    """
    if n_samples < FEATURE_DIM:
        raise ValueError(f"need at least {FEATURE_DIM} samples")
    burn_in = 20 * FEATURE_DIM
    rng = as_generator(rng)
    if phi_table is None:
        phi_table = build_feature_table(grid, e_rates)
    solve = solution_provider(policy, grid, e_rates, delta_alpha)
    lv1, lv2 = grid.battery_levels
    tf = grid.frame_length
    caps = (grid.b_max(0), grid.b_max(1))
    probs = grid.channel.stationary_probs
    n1, n2, nc = grid.shape

    def random_state():
        return (int(rng.integers(n1)), int(rng.integers(n2)),
                int(rng.choice(nc, p=probs)))

    state = tuple(start_state) if start_state is not None else random_state()
    draws = rng.choice(nc, size=n_samples + 1, p=probs)
    acc = LspeAccumulators.zeros()
    c = np.zeros(FEATURE_DIM)
    nxt_cache: dict = {}
    since_restart = 0
    for t in range(n_samples):
        i1, i2, ci = state
        sol = solve(i1, i2, ci)
        key = (i1, i2, ci)
        nxt = nxt_cache.get(key)
        if nxt is None:
            nb = battery_update((lv1[i1], lv2[i2]), sol, e_rates, tf, caps)
            nxt = (grid.project_level(0, nb[0]), grid.project_level(1, nb[1]))
            nxt_cache[key] = nxt
        state_next = (nxt[0], nxt[1], int(draws[t]))
        phi_now = phi_table[i1, i2, ci]
        phi_next = phi_table[state_next]
        if acc.count + 1 < burn_in:
            acc = lspe_accumulate(acc, phi_now, phi_next, sol.sum_rate, beta)
            delta = None
        else:
            acc, c_next = lspe_step(acc, phi_now, phi_next, sol.sum_rate, beta, c)
            delta = float(np.linalg.norm(c_next - c))
            c = c_next
            if float(np.linalg.norm(c)) > 1e6:
                raise DivergenceError("LSPE weights exceeded 1e6; reduce beta")
        since_restart += 1
        if restart_every > 0 and since_restart >= restart_every:
            state = random_state()
            acc.z_vec = np.zeros(FEATURE_DIM)  # no trace across the seam
            since_restart = 0
        else:
            state = state_next
        if delta is not None and delta < eps_c:
            break
    return c, acc.lambda_run


def improve_policy_approx(
    c: np.ndarray,
    grid: StateGrid,
    e_rates,
    tables: StageTables | None = None,
    phi_table: np.ndarray | None = None,
    delta_alpha: float = 1e-3,
) -> Policy:
    """Greedy policy against the feature-approximated continuation value.

    The channel-expectation of phi(s')^T c is computed exactly over the grid;
    the improvement still sweeps every state.
    """
    if tables is None:
        tables = build_stage_tables(grid, e_rates, delta_alpha)
    if phi_table is None:
        phi_table = build_feature_table(grid, e_rates)
    probs = grid.channel.stationary_probs
    phic = phi_table @ c            # (L, L, C)
    phic_bar = phic @ probs         # (L, L)
    q = tables.utility + phic_bar[tables.next1, tables.next2]
    m = q.shape[-1]
    flat = q.reshape(*grid.shape, -1)
    idx = flat.argmax(axis=3)
    return Policy(actions=np.stack([idx // m, idx % m], axis=-1))


def approximate_policy_iteration(
    grid: StateGrid,
    e_rates,
    beta: float,
    n_improve: int,
    n_explore: int,
    rng_seed: int,
    n_samples: int = 2000,
    eps_c: float = 1e-4,
    eval_frames: int = 4000,
    delta_alpha: float = 1e-3,
    tables: StageTables | None = None,
    restart_every: int = 0,
):
    """Approximate policy iteration with n_explore random restarts.

    Each exploration starts from a random feasible policy and random state,
    alternates LSPE evaluation and approximate improvement n_improve times,
    and is scored by seeded Monte-Carlo; the best policy wins.  Exploration
    seeds depend only on (rng_seed, index), so an n_explore=1 run is a prefix
    of any larger run with the same seed.
    """
    if n_improve < 1 or n_explore < 1:
        raise ValueError("n_improve and n_explore must be >= 1")
    if tables is None:
        tables = build_stage_tables(grid, e_rates, delta_alpha)
    phi_table = build_feature_table(grid, e_rates)
    n1, n2, nc = grid.shape
    n_act1 = [len(action_set(grid, e_rates, 0, i)[0]) for i in range(n1)]
    n_act2 = [len(action_set(grid, e_rates, 1, i)[0]) for i in range(n2)]
    best_policy = None
    best_lam = -math.inf
    lam_per_exploration = []
    for e in range(n_explore):
        rng = np.random.default_rng(np.random.SeedSequence((rng_seed, 0x5EED, e)))
        actions = np.zeros((n1, n2, nc, 2), dtype=np.int64)
        for i1 in range(n1):
            for i2 in range(n2):
                actions[i1, i2, :, 0] = rng.integers(0, n_act1[i1], size=nc)
                actions[i1, i2, :, 1] = rng.integers(0, n_act2[i2], size=nc)
        policy = Policy(actions=actions)
        c = np.zeros(FEATURE_DIM)
        # approximate policy iteration does not improve monotonically, so
        # every round's policy is scored (common random numbers within the
        # exploration) and the best one represents the exploration
        explore_best = -math.inf
        explore_policy = policy
        eval_seq = (rng_seed, 0xE7A1, e)
        for _ in range(n_improve):
            start = (int(rng.integers(n1)), int(rng.integers(n2)),
                     int(rng.choice(nc, p=grid.channel.stationary_probs)))
            c, _ = evaluate_policy_lspe(
                policy, grid, e_rates, beta, n_samples, eps_c, rng,
                delta_alpha=delta_alpha, phi_table=phi_table, start_state=start,
                restart_every=restart_every,
            )
            policy = improve_policy_approx(
                c, grid, e_rates, tables=tables, phi_table=phi_table,
                delta_alpha=delta_alpha,
            )
            stats = evaluate_policy_mc(
                policy, grid, e_rates, eval_frames,
                np.random.default_rng(np.random.SeedSequence(eval_seq)),
                delta_alpha=delta_alpha,
            )
            if stats.avg_sum_rate > explore_best:
                explore_best = stats.avg_sum_rate
                explore_policy = policy
        lam_per_exploration.append(explore_best)
        if explore_best > best_lam:
            best_lam = explore_best
            best_policy = explore_policy
    return best_policy, best_lam, lam_per_exploration


def save_weights(path, c: np.ndarray) -> None:
    """One text line of 14 numbers under a feature-order header."""
    with open(path, "w") as f:
        f.write("# " + " ".join(FEATURE_NAMES) + "\n")
        f.write(" ".join(format(float(v), ".17g") for v in c) + "\n")


def load_weights(path) -> np.ndarray:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: no weight line found")
    c = np.array([float(tok) for tok in lines[0].split()])
    if c.shape != (FEATURE_DIM,):
        raise ValueError(f"{path}: expected {FEATURE_DIM} weights, got {c.shape}")
    return c
