"""Per-frame sum-rate maximization for the two-subframe transmission split.

Closed-form equality-constrained power allocation, concave bi-section over the
single-BS time fraction, and the KKT water-filling enumeration for the
inequality-constrained variant used by budget-exhausting policies.

Conventions: BS and user indices are 0-based; ``k`` is the BS active in the
single-BS subframe and ``1 - k`` sleeps to store energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .precoding import row_powers, zf_weights

_NEG_TOL = 1e-9  # round-off slack when clipping computed powers at zero


class DegenerateChannelError(ValueError):
    """C0 vanished: the precoder rows are linearly dependent (measure-zero draw)."""


@dataclass
class PerFrameInput:
    """Frame state and budgets together with precoder-derived constants.

    battery/e_rates/budgets are per-BS; ``gains[i][k]`` is |H_ik|^2 and
    ``w_row_powers[k][i]`` is |w_ki|^2.  ``channel`` keeps the originating
    matrix for callers that need it; the solvers only read the scalars.
    """

    battery: tuple
    e_rates: tuple
    budgets: tuple
    gains: tuple
    w_row_powers: tuple
    noise: float
    frame_length: float
    channel: object = None

    @classmethod
    def build(cls, battery, e_rates, budgets, channel, noise, frame_length, w=None):
        if noise <= 0:
            raise ValueError("noise variance must be positive")
        if frame_length <= 0:
            raise ValueError("frame length must be positive")
        battery = (float(battery[0]), float(battery[1]))
        e_rates = (float(e_rates[0]), float(e_rates[1]))
        budgets = (float(budgets[0]), float(budgets[1]))
        for k in (0, 1):
            if battery[k] < 0 or e_rates[k] < 0 or budgets[k] < 0:
                raise ValueError("battery, arrival rates and budgets must be >= 0")
            cap = battery[k] / frame_length + e_rates[k]
            if budgets[k] > cap * (1 + 1e-9) + 1e-12:
                raise ValueError(
                    f"budget {budgets[k]} exceeds causality cap {cap} for BS {k + 1}"
                )
        if w is None:
            w = zf_weights(channel.entries)
        g = np.abs(channel.entries) ** 2
        w2 = row_powers(w)
        return cls(
            battery=battery,
            e_rates=e_rates,
            budgets=budgets,
            gains=((float(g[0, 0]), float(g[0, 1])), (float(g[1, 0]), float(g[1, 1]))),
            w_row_powers=(
                (float(w2[0, 0]), float(w2[0, 1])),
                (float(w2[1, 0]), float(w2[1, 1])),
            ),
            noise=float(noise),
            frame_length=float(frame_length),
            channel=channel,
        )

    def with_budgets(self, budgets) -> "PerFrameInput":
        return replace(self, budgets=(float(budgets[0]), float(budgets[1])))


@dataclass
class PerFrameSolution:
    """Optimizer output for one frame.

    ``jt_loads[k]`` is the ZF-JT subframe load sum_i |w_ki|^2 p_i of BS k,
    needed for battery bookkeeping when constraints are not tight.
    """

    k: int
    user: int
    alpha: float
    p_tilde: float
    powers: tuple
    sum_rate: float
    jt_loads: tuple

    def spends(self, frame_length: float) -> tuple:
        """Energy drawn from each BS over the frame, in Joules."""
        a, kb = self.alpha, 1 - self.k
        active = frame_length * (a * self.p_tilde + (1 - a) * self.jt_loads[self.k])
        other = frame_length * (1 - a) * self.jt_loads[kb]
        return (active, other) if self.k == 0 else (other, active)


@dataclass
class FeasibilityBounds:
    p_tilde_min: float
    p_tilde_max: float
    alpha_min: float
    c0: float
    c1: float
    c2: float


class _Cand(NamedTuple):
    value: float
    alpha: float
    p_tilde: float
    p1: float
    p2: float
    # JT-phase loads (active BS, sleeping BS); taken from the tight
    # constraints where possible so battery bookkeeping is exact even when
    # the 2x2 power solve is ill-conditioned
    loads: tuple = None


def _select_user(k: int, e_k: float, gains, noise: float) -> int:
    r0 = math.log2(1.0 + e_k * gains[0][k] / noise)
    r1 = math.log2(1.0 + e_k * gains[1][k] / noise)
    return 1 if r1 > r0 else 0


def select_user(k: int, e_k: float, channel, noise: float) -> int:
    """User scheduled in the single-BS subframe: max rate at nominal power e_k.

    Ties break toward user 0.
    """
    g = np.abs(channel.entries) ** 2
    return _select_user(k, e_k, ((g[0, 0], g[0, 1]), (g[1, 0], g[1, 1])), noise)


class _FrameContext:
    """Scalar constants for one (input, active BS, scheduled user) combination."""

    __slots__ = (
        "k", "user", "noise", "tf", "gain",
        "bk", "ek", "ak", "akb", "wk1", "wk2", "wb1", "wb2",
        "d", "c1", "c2",
    )

    def __init__(self, pf: PerFrameInput, k: int, user: int):
        kb = 1 - k
        self.k = k
        self.user = user
        self.noise = pf.noise
        self.tf = pf.frame_length
        self.gain = pf.gains[user][k]
        self.bk = pf.battery[k]
        self.ek = pf.e_rates[k]
        self.ak = pf.budgets[k]
        self.akb = pf.budgets[kb]
        self.wk1, self.wk2 = pf.w_row_powers[k]
        self.wb1, self.wb2 = pf.w_row_powers[kb]
        self.d = self.wk1 * self.wb2 - self.wk2 * self.wb1
        self.c1 = self.ak * self.wb2 - self.akb * self.wk2
        self.c2 = self.ak * self.wb1 - self.akb * self.wk1


def _alpha_min(ctx: _FrameContext) -> float:
    """Smallest feasible time fraction for the equality-constrained problem."""
    if ctx.d > 0:
        num, w = ctx.c2, ctx.wb1
    elif ctx.d < 0:
        num, w = ctx.c1, ctx.wb2
    else:
        raise DegenerateChannelError("C0 = 0: degenerate precoder rows")
    if w == 0.0:
        return 0.0 if num <= 0 else math.inf
    need = num / w - ctx.bk / ctx.tf
    if need <= 0:
        return 0.0
    if ctx.ek == 0.0:
        return math.inf
    return need / ctx.ek


def _ptilde_bounds(ctx: _FrameContext, alpha: float):
    """Feasible [p_min, p_max] of the single-BS power for 0 < alpha < 1."""
    bcap = ctx.bk / (alpha * ctx.tf) + ctx.ek
    lo, hi = 0.0, bcap
    if ctx.d > 0:
        if ctx.wb1 > 0.0:
            lo = max(lo, ctx.c2 / (alpha * ctx.wb1))
        elif ctx.c2 > 0.0:
            return None
        if ctx.wb2 > 0.0:
            hi = min(hi, ctx.c1 / (alpha * ctx.wb2))
        elif ctx.c1 < 0.0:
            return None
    elif ctx.d < 0:
        if ctx.wb2 > 0.0:
            lo = max(lo, ctx.c1 / (alpha * ctx.wb2))
        elif ctx.c1 > 0.0:
            return None
        if ctx.wb1 > 0.0:
            hi = min(hi, ctx.c2 / (alpha * ctx.wb1))
        elif ctx.c2 < 0.0:
            return None
    else:
        raise DegenerateChannelError("C0 = 0: degenerate precoder rows")
    if lo > hi + 1e-12 * (1.0 + abs(hi)):
        return None
    if lo > hi:
        lo = hi  # single feasible point up to round-off; keep the tighter cap
    return lo, hi


def feasibility_bounds(pf: PerFrameInput, k: int, alpha: float) -> Optional[FeasibilityBounds]:
    """Prop.-2 feasibility constants for fixed (k, alpha); None when empty."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    ctx = _FrameContext(pf, k, 0)
    bounds = _ptilde_bounds(ctx, alpha)
    am = _alpha_min(ctx)
    if bounds is None:
        return None
    lo, hi = bounds
    return FeasibilityBounds(
        p_tilde_min=lo,
        p_tilde_max=hi,
        alpha_min=am,
        c0=(1.0 - alpha) * ctx.d,
        c1=ctx.c1,
        c2=ctx.c2,
    )


def _fprime(ctx: _FrameContext, alpha: float, p: float) -> float:
    """Derivative (up to the positive factor alpha/ln2) of the reduced objective."""
    oma = 1.0 - alpha
    c0 = oma * ctx.d
    t1 = ctx.gain / (ctx.noise + ctx.gain * p)
    t2 = oma * ctx.wb2 / (ctx.noise * c0 + ctx.c1 - alpha * ctx.wb2 * p)
    t3 = oma * ctx.wb1 / (ctx.noise * c0 - ctx.c2 + alpha * ctx.wb1 * p)
    return t1 - t2 + t3


def _real_roots(a: float, b: float, c: float) -> list:
    """Real roots of a x^2 + b x + c, handling the degenerate linear case."""
    scale = max(abs(a), abs(b), abs(c), 1e-300)
    if abs(a) <= 1e-14 * scale:
        if abs(b) <= 1e-14 * scale:
            return []
        return [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return []
    root = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(root, b))
    if q == 0.0:
        return [0.0]
    r1 = q / a
    r2 = c / q
    return [r1] if r1 == r2 else [r1, r2]


def _objective(ctx: _FrameContext, alpha: float, pt: float, p1: float, p2: float) -> float:
    sig = ctx.noise
    val = 0.0
    if alpha > 0.0:
        val += alpha * math.log2(1.0 + pt * ctx.gain / sig)
    if alpha < 1.0:
        val += (1.0 - alpha) * (
            math.log2(1.0 + max(p1, 0.0) / sig) + math.log2(1.0 + max(p2, 0.0) / sig)
        )
    return val


def _quadratic_root(ctx: _FrameContext, alpha: float) -> Optional[float]:
    """Nonnegative stationary point of the reduced objective, if one exists.

    The first-order condition clears to a quadratic whose roots also cover
    invalid branches of the rational derivative (where a log argument would be
    negative).  Only roots with sign(C0) * (sigma^2 + p_i) > 0 for both users
    lie on the concave branch the optimization lives on, and there at most one
    stationary point exists.
    """
    oma = 1.0 - alpha
    c0 = oma * ctx.d
    u0 = ctx.noise * c0 + ctx.c1
    u1 = -alpha * ctx.wb2
    v0 = ctx.noise * c0 - ctx.c2
    v1 = alpha * ctx.wb1
    s0, s1 = ctx.noise, ctx.gain
    g = ctx.gain
    a2 = g * u1 * v1 - oma * ctx.wb2 * s1 * v1 + oma * ctx.wb1 * s1 * u1
    a1 = (
        g * (u0 * v1 + u1 * v0)
        - oma * ctx.wb2 * (s0 * v1 + s1 * v0)
        + oma * ctx.wb1 * (s0 * u1 + s1 * u0)
    )
    a0 = g * u0 * v0 - oma * ctx.wb2 * s0 * v0 + oma * ctx.wb1 * s0 * u0

    def on_valid_branch(r: float) -> bool:
        return (
            s0 + g * r > 0.0
            and c0 * (u0 + u1 * r) > 0.0
            and c0 * (v0 + v1 * r) > 0.0
        )

    roots = [r for r in _real_roots(a2, a1, a0) if r >= 0.0 and on_valid_branch(r)]
    if not roots:
        return None
    if len(roots) == 1:
        return roots[0]
    # numerically coincident roots: keep the descending zero crossing
    for r in sorted(roots):
        h = 1e-8 * (1.0 + abs(r))
        try:
            if _fprime(ctx, alpha, r - h) >= 0.0 >= _fprime(ctx, alpha, r + h):
                return r
        except ZeroDivisionError:
            continue
    return max(roots)


def _stationary_clamped(ctx: _FrameContext, alpha: float, lo: float, hi: float) -> float:
    """p* per the Prop.-2 rule: the stationary point clamped to [lo, hi]."""
    root = _quadratic_root(ctx, alpha)
    if root is None:
        # derivative never vanishes for p >= 0: pick the better boundary
        flo = _eval_on_manifold(ctx, alpha, lo)
        fhi = _eval_on_manifold(ctx, alpha, hi)
        return lo if flo >= fhi else hi
    if root > hi:
        return hi
    if root < lo:
        return lo
    return root


def _eval_on_manifold(ctx: _FrameContext, alpha: float, pt: float) -> float:
    c0 = (1.0 - alpha) * ctx.d
    p1 = (ctx.c1 - alpha * ctx.wb2 * pt) / c0
    p2 = (alpha * ctx.wb1 * pt - ctx.c2) / c0
    return _objective(ctx, alpha, pt, p1, p2)


def stationary_ptilde(pf: PerFrameInput, k: int, user: int, alpha: float,
                      fb: FeasibilityBounds) -> float:
    """Optimal single-BS power on the equality manifold for fixed (k, alpha)."""
    ctx = _FrameContext(pf, k, user)
    return _stationary_clamped(ctx, alpha, fb.p_tilde_min, fb.p_tilde_max)


def _refine_equality_powers(ctx: _FrameContext, alpha: float, pt: float,
                            p1: float, p2: float):
    """One iterative-refinement step on the 2x2 equality system.

    The closed-form division by C0 loses up to eps * condition digits; the
    refinement brings the constraint residuals back to round-off.
    """
    oma = 1.0 - alpha
    rk = (ctx.ak - alpha * pt - oma * (ctx.wk1 * p1 + ctx.wk2 * p2)) / oma
    rb = (ctx.akb - oma * (ctx.wb1 * p1 + ctx.wb2 * p2)) / oma
    dp1 = (rk * ctx.wb2 - rb * ctx.wk2) / ctx.d
    dp2 = (rb * ctx.wk1 - rk * ctx.wb1) / ctx.d
    return p1 + dp1, p2 + dp2


def _equality_candidate(ctx: _FrameContext, alpha: float) -> Optional[_Cand]:
    """Best point of the equality-constrained problem at this alpha, or None."""
    if alpha < 0.0 or alpha > 1.0:
        return None
    if alpha == 0.0:
        if ctx.d == 0.0:
            raise DegenerateChannelError("C0 = 0: degenerate precoder rows")
        p1 = ctx.c1 / ctx.d
        p2 = -ctx.c2 / ctx.d
        p1, p2 = _refine_equality_powers(ctx, 0.0, 0.0, p1, p2)
        if p1 < -_NEG_TOL * (1.0 + abs(p1)) or p2 < -_NEG_TOL * (1.0 + abs(p2)):
            return None
        p1, p2 = max(p1, 0.0), max(p2, 0.0)
        return _Cand(_objective(ctx, 0.0, 0.0, p1, p2), 0.0, 0.0, p1, p2,
                     loads=(ctx.ak, ctx.akb))
    if alpha == 1.0:
        # the sleeping BS's equality constraint needs a zero budget
        if ctx.akb > 1e-15:
            return None
        pt = ctx.ak
        if pt > ctx.bk / ctx.tf + ctx.ek + _NEG_TOL * (1.0 + pt):
            return None
        return _Cand(_objective(ctx, 1.0, pt, 0.0, 0.0), 1.0, pt, 0.0, 0.0,
                     loads=(0.0, 0.0))
    bounds = _ptilde_bounds(ctx, alpha)
    if bounds is None:
        return None
    lo, hi = bounds
    pt = _stationary_clamped(ctx, alpha, lo, hi)
    c0 = (1.0 - alpha) * ctx.d
    p1 = (ctx.c1 - alpha * ctx.wb2 * pt) / c0
    p2 = (alpha * ctx.wb1 * pt - ctx.c2) / c0
    p1, p2 = _refine_equality_powers(ctx, alpha, pt, p1, p2)
    p1, p2 = max(p1, 0.0), max(p2, 0.0)
    oma = 1.0 - alpha
    loads = (max((ctx.ak - alpha * pt) / oma, 0.0), ctx.akb / oma)
    return _Cand(_objective(ctx, alpha, pt, p1, p2), alpha, pt, p1, p2, loads=loads)


def power_allocation_equality(pf: PerFrameInput, k: int, user: int,
                              alpha: float) -> Optional[PerFrameSolution]:
    """Closed-form solution with both JT power constraints tight; None if empty."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    ctx = _FrameContext(pf, k, user)
    cand = _equality_candidate(ctx, alpha)
    if cand is None:
        return None
    return _solution_from(pf, ctx, cand)


def _solution_from(pf: PerFrameInput, ctx: _FrameContext, cand: _Cand) -> PerFrameSolution:
    if cand.loads is not None:
        pair = cand.loads  # (active BS, sleeping BS)
        loads = pair if ctx.k == 0 else (pair[1], pair[0])
    else:
        w2 = pf.w_row_powers
        loads = (
            w2[0][0] * cand.p1 + w2[0][1] * cand.p2,
            w2[1][0] * cand.p1 + w2[1][1] * cand.p2,
        )
    return PerFrameSolution(
        k=ctx.k,
        user=ctx.user,
        alpha=cand.alpha,
        p_tilde=cand.p_tilde,
        powers=(cand.p1, cand.p2),
        sum_rate=cand.value,
        jt_loads=loads,
    )


def subframe_objective(pf: PerFrameInput, k: int, user: int, alpha: float,
                       p_tilde: float, p1: float, p2: float) -> float:
    """Frame-averaged sum rate of an explicit power split."""
    for p in (p_tilde, p1, p2):
        if p < 0:
            raise ValueError(f"negative power {p}")
    ctx = _FrameContext(pf, k, user)
    return _objective(ctx, alpha, p_tilde, p1, p2)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_polish(fn, lo: float, hi: float, best, tol: float = 1e-8):
    """Golden-section refinement of a concave max known to lie in [lo, hi].

    Sharpens the bi-section's delta-resolution maximizer so that returned
    values are second-order exact in alpha, which downstream monotonicity
    checks rely on.  Returns the best candidate seen.
    """
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    while hi - lo > tol:
        v1 = f1.value if f1 is not None else -math.inf
        v2 = f2.value if f2 is not None else -math.inf
        if v1 >= v2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = fn(x2)
    for cand in (f1, f2):
        if cand is not None and (best is None or cand.value > best.value):
            best = cand
    return best


def _bisect_concave(fn, lo: float, hi: float, delta: float):
    """Algorithm-1 style bi-section for a concave objective on [lo, hi].

    ``fn(alpha)`` returns a candidate with a ``value`` field or None
    (infeasible, treated as -inf).  The midpoint test terminates within
    ceil(log2((hi - lo) / delta)) + 2 iterations; the surviving bracket is
    then polished by golden-section search.
    """
    if hi <= lo:
        return fn(lo)
    orig_lo, orig_hi = lo, hi
    best = None
    max_iter = max(1, math.ceil(math.log2(max((hi - lo) / delta, 1.0))) + 2)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        fl = fn(mid - delta)
        fr = fn(mid + delta)
        vm = fm.value if fm is not None else -math.inf
        vl = fl.value if fl is not None else -math.inf
        vr = fr.value if fr is not None else -math.inf
        for cand in (fm, fl, fr):
            if cand is not None and (best is None or cand.value > best.value):
                best = cand
        if vm >= vl and vm >= vr:
            break
        if vl <= vm <= vr:
            lo = mid
        else:
            hi = mid
    # the concave max stays within delta of the surviving bracket
    return _golden_polish(
        fn, max(orig_lo, lo - delta), min(orig_hi, hi + delta), best
    )


def bisect_alpha(pf: PerFrameInput, k: int, user: int, delta_alpha: float):
    """Concave bi-section over the time fraction; (alpha, value) or None."""
    if delta_alpha <= 0:
        raise ValueError("delta_alpha must be positive")
    ctx = _FrameContext(pf, k, user)
    am = _alpha_min(ctx)
    if am > 1.0 + 1e-9:
        return None
    am = min(am, 1.0)
    cand = _bisect_concave(lambda a: _equality_candidate(ctx, a), am, 1.0, delta_alpha)
    if cand is None:
        return None
    return cand.alpha, cand.value


def _best_for_k(ctx: _FrameContext, delta_alpha: float) -> Optional[_Cand]:
    """Per-stage utility search for one active BS (boundary checks + bi-section)."""
    am = _alpha_min(ctx)
    if am > 1.0 + 1e-9:
        return None
    am = min(am, 1.0)
    f_am = _equality_candidate(ctx, am)
    if f_am is not None:
        nxt = _equality_candidate(ctx, min(am + delta_alpha, 1.0))
        if nxt is None or f_am.value > nxt.value:
            return f_am
    if ctx.akb <= 1e-15:
        f_one = _equality_candidate(ctx, 1.0)
        if f_one is not None:
            prev = _equality_candidate(ctx, 1.0 - delta_alpha)
            if prev is None or f_one.value > prev.value:
                return f_one
    return _bisect_concave(lambda a: _equality_candidate(ctx, a), am, 1.0, delta_alpha)


def per_stage_utility(pf: PerFrameInput, delta_alpha: float = 1e-3,
                      ks=(0, 1)) -> PerFrameSolution:
    """Max equality-constrained frame rate over active BS, fraction, and powers.

    Falls back to an all-zero solution when no (k, alpha) is feasible, which
    only happens for zero budgets.
    """
    best = None
    best_ctx = None
    for k in ks:
        user = _select_user(k, pf.e_rates[k], pf.gains, pf.noise)
        ctx = _FrameContext(pf, k, user)
        cand = _best_for_k(ctx, delta_alpha)
        if cand is not None and (best is None or cand.value > best.value):
            best, best_ctx = cand, ctx
    if best is None:
        k = ks[0]
        user = _select_user(k, pf.e_rates[k], pf.gains, pf.noise)
        best_ctx = _FrameContext(pf, k, user)
        best = _Cand(0.0, 0.0, 0.0, 0.0, 0.0)
    return _solution_from(pf, best_ctx, best)


# ---------------------------------------------------------------------------
# Inequality-constrained variant (KKT water-filling case enumeration)
# ---------------------------------------------------------------------------


def _waterfill_nu(terms, total: float, iters: int = 70) -> Optional[float]:
    """Solve sum_j w_j * max(nu - t_j, 0) = total for the water level nu.

    ``terms`` is a list of (weight, threshold) pairs with weight >= 0.
    """
    active = [(w, t) for (w, t) in terms if w > 0.0]
    if not active:
        return None
    if total <= 0.0:
        return min(t for _, t in active)
    lo = min(t for _, t in active)
    wsum = sum(w for w, _ in active)
    hi = max(t for _, t in active) + total / wsum
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s = 0.0
        for w, t in active:
            if mid > t:
                s += w * (mid - t)
        if s < total:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _water_power(nu: float, w: float, noise: float) -> float:
    """[1/(mu w) - noise]^+ with nu = 1/mu; unbounded when w = 0 and nu > 0."""
    if w == 0.0:
        return math.inf if nu > noise * w else 0.0
    return max(nu / w - noise, 0.0)


def zfjt_power_allocation(w_row_powers, budgets, noise: float):
    """Full-frame ZF-JT power allocation under per-BS inequality constraints.

    Prop.-1 case enumeration: both constraints tight, or a single tight
    constraint with a water-filling level found by bisection.  Returns
    (p1, p2, value, per-BS loads), where tight-side loads equal the budget
    exactly so battery bookkeeping cannot overshoot.
    """
    w2 = w_row_powers
    a = (float(budgets[0]), float(budgets[1]))
    atol = (1e-9 * (1.0 + a[0]), 1e-9 * (1.0 + a[1]))
    cands = [(0.0, 0.0, (0.0, 0.0))]
    d = w2[0][0] * w2[1][1] - w2[0][1] * w2[1][0]
    if d != 0.0:
        p1 = (a[0] * w2[1][1] - a[1] * w2[0][1]) / d
        p2 = (a[1] * w2[0][0] - a[0] * w2[1][0]) / d
        # one refinement step keeps residuals at round-off for ill-conditioned rows
        r0 = a[0] - (w2[0][0] * p1 + w2[0][1] * p2)
        r1 = a[1] - (w2[1][0] * p1 + w2[1][1] * p2)
        p1 += (r0 * w2[1][1] - r1 * w2[0][1]) / d
        p2 += (r1 * w2[0][0] - r0 * w2[1][0]) / d
        if p1 >= -_NEG_TOL * (1 + abs(p1)) and p2 >= -_NEG_TOL * (1 + abs(p2)):
            cands.append((max(p1, 0.0), max(p2, 0.0), a))
    for k in (0, 1):
        kb = 1 - k
        # zero weights draw no budget from constraint k, so they are excluded
        terms = [(1.0, noise * w2[k][i]) for i in (0, 1) if w2[k][i] > 0.0]
        nu = _waterfill_nu(terms, a[k])
        if nu is None:
            continue
        p1 = _water_power(nu, w2[k][0], noise)
        p2 = _water_power(nu, w2[k][1], noise)
        if not (math.isfinite(p1) and math.isfinite(p2)):
            continue
        slack_load = w2[kb][0] * p1 + w2[kb][1] * p2
        if slack_load <= a[kb] + atol[kb]:
            loads = (a[k], min(slack_load, a[kb])) if k == 0 else \
                (min(slack_load, a[0]), a[1])
            cands.append((p1, p2, loads))
    best = None
    for p1, p2, loads in cands:
        val = math.log2(1.0 + p1 / noise) + math.log2(1.0 + p2 / noise)
        if best is None or val > best[2]:
            best = (p1, p2, val, loads)
    return best


def _inequality_candidate(ctx: _FrameContext, alpha: float) -> Optional[_Cand]:
    """Optimum of the inequality-constrained problem at fixed (k, alpha).

    Enumerates the KKT active-constraint patterns allowed by the activity
    property (at least one JT constraint tight) and keeps the best
    primal-feasible candidate.
    """
    if alpha < 0.0 or alpha > 1.0:
        return None
    sig = ctx.noise
    if alpha == 0.0:
        p1, p2, val, loads = zfjt_power_allocation(
            ((ctx.wk1, ctx.wk2), (ctx.wb1, ctx.wb2)), (ctx.ak, ctx.akb), sig
        )
        return _Cand(val, 0.0, 0.0, p1, p2, loads=loads)
    bcap_a = ctx.bk / ctx.tf + alpha * ctx.ek  # cap on alpha * p_tilde
    if alpha == 1.0:
        pt = min(bcap_a, ctx.ak)
        return _Cand(_objective(ctx, 1.0, pt, 0.0, 0.0), 1.0, pt, 0.0, 0.0,
                     loads=(0.0, 0.0))
    oma = 1.0 - alpha
    atol_k = 1e-9 * (1.0 + ctx.ak)
    atol_b = 1e-9 * (1.0 + ctx.akb)
    cands = []

    eq = _equality_candidate(ctx, alpha)
    if eq is not None:
        cands.append(eq)

    # active-BS constraint tight, battery and sleeping-BS constraints slack
    terms = [(oma, sig * w) for w in (ctx.wk1, ctx.wk2) if w > 0.0]
    if ctx.gain > 0.0:
        terms.append((alpha, sig / ctx.gain))
    nu = _waterfill_nu(terms, ctx.ak)
    if nu is not None:
        pt = max(nu - sig / ctx.gain, 0.0) if ctx.gain > 0.0 else 0.0
        p1 = _water_power(nu, ctx.wk1, sig)
        p2 = _water_power(nu, ctx.wk2, sig)
        if (
            math.isfinite(p1) and math.isfinite(p2)
            and alpha * pt <= bcap_a + 1e-9 * (1.0 + bcap_a)
            and oma * (ctx.wb1 * p1 + ctx.wb2 * p2) <= ctx.akb + atol_b
        ):
            loads = (max((ctx.ak - alpha * pt) / oma, 0.0),
                     min(ctx.wb1 * p1 + ctx.wb2 * p2, ctx.akb / oma))
            cands.append(_Cand(_objective(ctx, alpha, pt, p1, p2),
                               alpha, pt, p1, p2, loads=loads))

    # battery cap and active-BS constraint both tight
    pt = bcap_a / alpha
    rem = ctx.ak - bcap_a
    if rem >= -atol_k:
        rem = max(rem, 0.0)
        terms = [(oma, sig * w) for w in (ctx.wk1, ctx.wk2) if w > 0.0]
        nu = _waterfill_nu(terms, rem)
        if rem == 0.0 or nu is None:
            p1 = p2 = 0.0
        else:
            p1 = _water_power(nu, ctx.wk1, sig)
            p2 = _water_power(nu, ctx.wk2, sig)
        if (
            math.isfinite(p1) and math.isfinite(p2)
            and oma * (ctx.wb1 * p1 + ctx.wb2 * p2) <= ctx.akb + atol_b
        ):
            loads = (rem / oma,
                     min(ctx.wb1 * p1 + ctx.wb2 * p2, ctx.akb / oma))
            cands.append(_Cand(_objective(ctx, alpha, pt, p1, p2),
                               alpha, pt, p1, p2, loads=loads))

    # sleeping-BS constraint tight; p_tilde fills whatever remains
    if ctx.wb1 > 0.0 and ctx.wb2 > 0.0:
        if ctx.akb <= 1e-15:
            p1 = p2 = 0.0
        else:
            nu = _waterfill_nu(
                [(oma, sig * ctx.wb1), (oma, sig * ctx.wb2)], ctx.akb
            )
            p1 = _water_power(nu, ctx.wb1, sig)
            p2 = _water_power(nu, ctx.wb2, sig)
        load_k = ctx.wk1 * p1 + ctx.wk2 * p2
        room = ctx.ak - oma * load_k
        if room >= -atol_k:
            pt = min(bcap_a, max(room, 0.0)) / alpha
            loads = (load_k, ctx.akb / oma if ctx.akb > 1e-15 else 0.0)
            cands.append(_Cand(_objective(ctx, alpha, pt, p1, p2),
                               alpha, pt, p1, p2, loads=loads))

    if not cands:
        return _Cand(0.0, alpha, 0.0, 0.0, 0.0, loads=(0.0, 0.0))
    return max(cands, key=lambda c: c.value)


def per_frame_greedy(pf: PerFrameInput, delta_alpha: float = 1e-3) -> PerFrameSolution:
    """Inequality-constrained frame optimum (budgets normally set to the caps).

    Outer concave bi-section over alpha with explicit boundary candidates,
    maximized over the active-BS choice.
    """
    best = None
    best_ctx = None
    for k in (0, 1):
        user = _select_user(k, pf.e_rates[k], pf.gains, pf.noise)
        ctx = _FrameContext(pf, k, user)
        cands = [
            _inequality_candidate(ctx, 0.0),
            _inequality_candidate(ctx, 1.0),
            _bisect_concave(lambda a: _inequality_candidate(ctx, a), 0.0, 1.0, delta_alpha),
        ]
        for cand in cands:
            if cand is not None and (best is None or cand.value > best.value):
                best, best_ctx = cand, ctx
    return _solution_from(pf, best_ctx, best)
