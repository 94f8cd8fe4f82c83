"""Growth functions and the Hardy-type tail transform.

A growth function is a non-decreasing phi : (0, inf) -> (0, inf) with
phi(t) -> 0 as t -> 0+.  The tail transform

    tail_transform(phi, alpha)(t) = t^alpha * int_t^inf phi(s) s^(-alpha) ds/s

measures how much of phi lives above scale t.  Moduli whose Dini integral
and tail transform are both dominated by a multiple of phi itself (see
check_class_membership) are the ones for which Holder-scale estimates
transfer across scales; verify_growth_lemmas checks the standard calculus
facts about them on a user grid.

All quadrature is composite trapezoid on log-spaced nodes over dyadic
blocks, with analytic tail bounds per family.  Everything here is pure and
safe to evaluate concurrently.
"""

from dataclasses import dataclass, field

import numpy as np

NODES_PER_BLOCK = 256      # trapezoid nodes per dyadic block
TAIL_REL_TOL = 1e-8        # stop once the analytic tail bound is this small vs the partial sum
MAX_BLOCKS = 4000          # hard budget on dyadic blocks per integral
DIVERGENCE_STREAK = 8      # consecutive non-decaying blocks before declaring divergence
DIVERGENCE_RATIO = 0.98    # geometric decay threshold for the block probe
_LN2 = np.log(2.0)


class DivergentTailError(ArithmeticError):
    """The tail integral of phi(s) s^(-alpha-1) fails the convergence test."""


class NonpositivePhiError(ValueError):
    """phi produced a non-positive, non-finite or decreasing sample."""


class GrowthFunction:
    """Non-decreasing modulus on (0, inf) vanishing at 0+.

    Families:
      power      t^a with 0 < a < 1
      power_log  t^a * log(e + 1/t)^(-gamma) with gamma >= 0
      tabulated  monotone samples, piecewise-linear in log t; extended as a
                 power below the first node and as a constant above the last

    Instances are immutable and vectorized over t.
    """

    def __init__(self, family, **params):
        self.family = family
        self.params = dict(params)
        if family == "power":
            a = float(params["a"])
            if not 0.0 < a < 1.0:
                raise ValueError(f"power exponent must be in (0,1), got {a}")
            self.a = a
        elif family == "power_log":
            a = float(params["a"])
            gamma = float(params["gamma"])
            if not 0.0 < a < 1.0:
                raise ValueError(f"power_log exponent must be in (0,1), got {a}")
            if gamma < 0.0:
                raise ValueError("power_log weight gamma must be >= 0")
            self.a = a
            self.gamma = gamma
        elif family == "tabulated":
            ts = np.asarray(params["t"], dtype=float)
            vs = np.asarray(params["phi"], dtype=float)
            if ts.ndim != 1 or ts.shape != vs.shape or ts.size < 2:
                raise ValueError("tabulated family needs matching 1d arrays with >= 2 nodes")
            if np.any(np.diff(ts) <= 0) or ts[0] <= 0:
                raise ValueError("tabulated t nodes must be positive and strictly increasing")
            if np.any(vs <= 0) or np.any(np.diff(vs) < 0):
                raise NonpositivePhiError("tabulated phi values must be positive and non-decreasing")
            self._ts = ts
            self._vs = vs
            # power continuation below the first node keeps phi(0+) = 0
            head = (np.log(vs[1]) - np.log(vs[0])) / (np.log(ts[1]) - np.log(ts[0]))
            if head <= 0:
                raise ValueError("tabulated head segment must be strictly increasing")
            self._head_exponent = head
        else:
            raise ValueError(f"unknown growth family {family!r}")
        self._validate()

    @classmethod
    def from_config(cls, cfg):
        """Build from a config mapping like {"family": "power", "a": 0.3}."""
        cfg = dict(cfg)
        family = cfg.pop("family")
        return cls(family, **cfg)

    def describe(self):
        return {"family": self.family, **self.params}

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("growth functions are defined for t > 0 only")
        if self.family == "power":
            out = t ** self.a
        elif self.family == "power_log":
            out = t ** self.a * np.log(np.e + 1.0 / t) ** (-self.gamma)
        else:
            out = self._eval_tabulated(t)
        return out if out.ndim else float(out)

    def _eval_tabulated(self, t):
        ts, vs = self._ts, self._vs
        out = np.interp(np.log(t), np.log(ts), vs)
        below = t < ts[0]
        if np.any(below):
            out = np.where(below, vs[0] * (t / ts[0]) ** self._head_exponent, out)
        # np.interp already clamps above ts[-1] to vs[-1]
        return out

    def _validate(self):
        # type invariants, probed on a decreasing log grid down to ~1e-12
        grid = np.logspace(4, -12, 80)
        vals = np.asarray(self(grid))
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise NonpositivePhiError(f"{self.family} sample is not strictly positive")
        if np.any(np.diff(vals) > 0):  # grid is decreasing, so values must not increase
            raise NonpositivePhiError(f"{self.family} sample is not non-decreasing")
        if self(1e-12) > 0.9 * self(1e-8):  # still decaying at the bottom of the range
            raise NonpositivePhiError(f"{self.family} does not vanish at 0+")

    # -- family analytics used by the quadrature -------------------------------

    def tail_power(self):
        """Exponent a with phi(s) <= s^a * coef for large s, or None."""
        if self.family in ("power", "power_log"):
            return self.a, 1.0
        return None

    def head_exponent(self):
        """Exponent p with phi(s) <= phi(T) (s/T)^p for s <= T."""
        if self.family in ("power", "power_log"):
            return self.a
        return self._head_exponent


def _slack(lhs, rhs):
    """Normalized slack of the inequality lhs <= rhs; negative means violated."""
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return (rhs - lhs) / scale


def _block_quadrature(f, x_lo, x_hi):
    xs = np.linspace(x_lo, x_hi, NODES_PER_BLOCK + 1)
    return float(np.trapezoid(f(xs), xs))


def tail_transform(phi, alpha, t, method="auto"):
    """t^alpha * int_t^inf phi(s) s^(-alpha-1) ds.

    Closed form for the power family; otherwise log-spaced trapezoid over
    dyadic blocks with an analytic remainder bound.  method="quadrature"
    forces the numeric path (tests use it to cross-check the closed form).
    Raises DivergentTailError when the integral has no finite value or the
    dyadic block sums fail to decay geometrically.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0,1)")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise ValueError("tail transform needs t > 0")

    tp = phi.tail_power()
    if tp is not None and tp[0] >= alpha:
        raise DivergentTailError(
            f"phi grows like s^{tp[0]:g} at infinity, tail diverges for alpha={alpha:g}")

    if phi.family == "power" and method == "auto":
        out = t_arr ** phi.a / (alpha - phi.a)
        return out if out.ndim else float(out)

    if t_arr.ndim == 0:
        return _tail_quadrature(phi, alpha, float(t_arr))
    return np.array([_tail_quadrature(phi, alpha, ti) for ti in t_arr.ravel()]).reshape(t_arr.shape)


def _tail_quadrature(phi, alpha, t):
    # integrate phi(e^x) e^(-alpha x) dx from log t upward, block by block
    def f(xs):
        return np.asarray(phi(np.exp(xs))) * np.exp(-alpha * xs)

    x0 = np.log(t)
    total = 0.0
    blocks = []
    tp = phi.tail_power()
    # blocks can rise toward the s ~ 1 hump before decaying when t << 1, so
    # the geometric-decay probe only applies to families without an analytic
    # remainder bound (for the built-ins convergence is decided upfront)
    probe = tp is None and phi.family != "tabulated"
    for k in range(MAX_BLOCKS):
        block = _block_quadrature(f, x0 + k * _LN2, x0 + (k + 1) * _LN2)
        total += block
        blocks.append(block)
        if probe and len(blocks) > DIVERGENCE_STREAK:
            recent = blocks[-(DIVERGENCE_STREAK + 1):]
            if all(recent[i + 1] >= DIVERGENCE_RATIO * recent[i] and recent[i] > 0
                   for i in range(DIVERGENCE_STREAK)):
                raise DivergentTailError("dyadic block sums do not decay geometrically")
        big_t = np.exp(x0 + (k + 1) * _LN2)
        if phi.family == "tabulated":
            if big_t >= phi._ts[-1]:
                # constant beyond the last node: exact remainder
                total += phi._vs[-1] * big_t ** (-alpha) / alpha
                break
        elif tp is not None:
            a, coef = tp
            remainder = coef * big_t ** (a - alpha) / (alpha - a)
            if remainder <= TAIL_REL_TOL * total:
                total += remainder  # the bound is tight for both built-in families
                break
    else:
        raise DivergentTailError("tail integral did not settle within the block budget")
    return t ** alpha * total


def dini_integral(phi, t):
    """int_0^t phi(s) ds/s, with the same quadrature conventions."""
    t = float(t)
    if t <= 0:
        raise ValueError("dini integral needs t > 0")
    if phi.family == "power":
        return t ** phi.a / phi.a

    def f(xs):
        return np.asarray(phi(np.exp(xs)))

    if phi.family == "tabulated" and t <= phi._ts[0]:
        return float(phi(t)) / phi.head_exponent()

    x0 = np.log(t)
    total = 0.0
    p = phi.head_exponent()
    for k in range(MAX_BLOCKS):
        total += _block_quadrature(f, x0 - (k + 1) * _LN2, x0 - k * _LN2)
        small_t = np.exp(x0 - (k + 1) * _LN2)
        if phi.family == "tabulated" and small_t <= phi._ts[0]:
            total += float(phi(small_t)) / p  # exact under the power continuation
            break
        remainder = float(phi(small_t)) / p  # phi(s) <= phi(T)(s/T)^p below T
        if remainder <= TAIL_REL_TOL * total:
            total += remainder
            break
    else:
        raise DivergentTailError("dini integral did not settle within the block budget")
    return total


@dataclass(frozen=True)
class GrowthClassReport:
    beta: float
    c_phi_estimate: float
    is_member: bool
    worst_t: float
    table: tuple = ()  # rows (t, ratio)

    def to_rows(self):
        return [{"t": t, "ratio": r} for t, r in self.table]


def check_class_membership(phi, beta, t_grid):
    """Largest (Dini + tail)/phi ratio over the grid; finite means member.

    A divergent tail at exponent beta means phi sits outside the class, which
    is reported rather than raised; genuinely broken phi values still raise
    NonpositivePhiError.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be non-empty and sorted increasing")
    try:
        tails = tail_transform(phi, beta, t_grid)
    except DivergentTailError:
        return GrowthClassReport(beta=beta, c_phi_estimate=np.inf, is_member=False,
                                 worst_t=float(t_grid[-1]))
    tails = np.atleast_1d(tails)
    dinis = np.array([dini_integral(phi, ti) for ti in t_grid])
    ratios = (dinis + tails) / np.asarray(phi(t_grid))
    worst = int(np.argmax(ratios))
    return GrowthClassReport(
        beta=beta,
        c_phi_estimate=float(ratios[worst]),
        is_member=bool(np.all(np.isfinite(ratios))),
        worst_t=float(t_grid[worst]),
        table=tuple(zip(t_grid.tolist(), ratios.tolist())),
    )


@dataclass(frozen=True)
class LemmaCheck:
    check_id: str
    worst_t: float
    slack: float

    @property
    def passed(self):
        return bool(self.slack >= -1e-9)

    def to_row(self):
        return {"check_id": self.check_id, "worst_t": self.worst_t,
                "slack": self.slack, "pass": self.passed}


@dataclass(frozen=True)
class GrowthLemmaReport:
    checks: tuple
    c_phi: float

    @property
    def all_pass(self):
        return all(c.passed for c in self.checks)

    def to_rows(self):
        return [c.to_row() for c in self.checks]

    def __getitem__(self, check_id):
        for c in self.checks:
            if c.check_id == check_id:
                return c
        raise KeyError(check_id)


def _worst(t_grid, slacks):
    slacks = np.asarray(slacks, dtype=float)
    if slacks.size == 0:  # vacuous on degenerate grids
        return float(np.asarray(t_grid).ravel()[0]), 0.0
    i = int(np.argmin(slacks))
    return float(np.asarray(t_grid).ravel()[i]), float(slacks[i])


def verify_growth_lemmas(phi, alpha, beta, t_grid, pair_grid=None):
    """Grid check of the tail-transform calculus and the class consequences.

    Checks, with normalized slack (negative = violated):
      tail_nondecreasing_vanishing   T phi is a growth function
      tail_ratio_decreasing          t^-alpha T phi decreasing, -> 0 at inf
      tail_doubling                  T phi(2t) <= 2^alpha T phi(t)
      phi_below_tail                 phi <= alpha T phi
      dyadic_sum_bounded             t^alpha sum_k phi(2^k t)(2^k t)^-alpha
                                     <= alpha/(1-2^-alpha) T phi(t)
      tail_antitone_in_order         T_alpha phi <= T_alpha' phi, alpha' < alpha
      scaled_ratio_almost_decreasing t2^-b phi(t2) <= b C t1^-b phi(t1)
      doubling_from_class            phi(2t) <= 2^b b C phi(t)
      subadditive_up_to_constant     phi(t1+t2) <= 2C (phi(t1)+phi(t2))
      scaled_ratio_vanishes          t^-b phi(t) -> 0 at inf

    The vanishing-limit rows assert a factor-2 drop between the grid median
    and the relevant end, which is the strongest limit statement a finite
    grid supports.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be sorted increasing")
    membership = check_class_membership(phi, beta, t_grid)
    if not membership.is_member:
        raise DivergentTailError(f"phi is not in the beta={beta:g} class on this grid")
    c_phi = membership.c_phi_estimate

    q = np.atleast_1d(tail_transform(phi, alpha, t_grid))
    q2 = np.atleast_1d(tail_transform(phi, alpha, 2.0 * t_grid))
    ph = np.asarray(phi(t_grid))
    ph2 = np.asarray(phi(2.0 * t_grid))
    mid = t_grid.size // 2
    wide = t_grid.size >= 8  # limit statements need a real spread of scales
    checks = []

    mono = np.array([_slack(q[i], q[i + 1]) for i in range(q.size - 1)])
    ts = t_grid[:-1] if t_grid.size > 1 else t_grid
    if wide:
        mono = np.append(mono, _slack(q[0], 0.5 * q[mid]))
        ts = np.append(ts, t_grid[0])
    checks.append(LemmaCheck("tail_nondecreasing_vanishing", *_worst(ts, mono)))

    ratio = q / t_grid ** alpha
    dec = np.array([_slack(ratio[i + 1], ratio[i]) for i in range(ratio.size - 1)])
    ts = t_grid[1:] if t_grid.size > 1 else t_grid
    if wide:
        dec = np.append(dec, _slack(ratio[-1], 0.5 * ratio[mid]))
        ts = np.append(ts, t_grid[-1])
    checks.append(LemmaCheck("tail_ratio_decreasing", *_worst(ts, dec)))

    checks.append(LemmaCheck("tail_doubling",
                             *_worst(t_grid, [_slack(q2[i], 2.0 ** alpha * q[i])
                                              for i in range(q.size)])))

    checks.append(LemmaCheck("phi_below_tail",
                             *_worst(t_grid, [_slack(ph[i], alpha * q[i])
                                              for i in range(q.size)])))

    dyadic_c = alpha / (1.0 - 2.0 ** (-alpha))
    sums = _dyadic_sums(phi, alpha, t_grid)
    checks.append(LemmaCheck("dyadic_sum_bounded",
                             *_worst(t_grid, [_slack(sums[i], dyadic_c * q[i])
                                              for i in range(q.size)])))

    # the comparison order must stay above phi's growth exponent to converge
    tp = phi.tail_power()
    alpha_low = 0.5 * (tp[0] + alpha) if tp is not None else 0.5 * alpha
    q_lower = np.atleast_1d(tail_transform(phi, alpha_low, t_grid))
    checks.append(LemmaCheck("tail_antitone_in_order",
                             *_worst(t_grid, [_slack(q[i], q_lower[i])
                                              for i in range(q.size)])))

    if pair_grid is None:
        stride = max(1, t_grid.size // 40)
        pair_ts = t_grid[::stride]
    else:
        pair_ts = np.asarray(pair_grid, dtype=float)
    pv = np.asarray(phi(pair_ts))
    i_lo, i_hi = np.meshgrid(np.arange(pair_ts.size), np.arange(pair_ts.size), indexing="ij")
    keep = i_lo <= i_hi
    t1, t2 = pair_ts[i_lo[keep]], pair_ts[i_hi[keep]]
    p1, p2 = pv[i_lo[keep]], pv[i_hi[keep]]
    s = [_slack(t2[i] ** (-beta) * p2[i], beta * c_phi * t1[i] ** (-beta) * p1[i])
         for i in range(t1.size)]
    checks.append(LemmaCheck("scaled_ratio_almost_decreasing", *_worst(t2, s)))

    checks.append(LemmaCheck("doubling_from_class",
                             *_worst(t_grid, [_slack(ph2[i], 2.0 ** beta * beta * c_phi * ph[i])
                                              for i in range(ph.size)])))

    psum = np.asarray(phi(t1 + t2))
    s = [_slack(psum[i], 2.0 * c_phi * (p1[i] + p2[i])) for i in range(t1.size)]
    checks.append(LemmaCheck("subadditive_up_to_constant", *_worst(t2, s)))

    scaled = ph / t_grid ** beta
    vanish = _slack(scaled[-1], 0.5 * scaled[mid]) if wide else 0.0
    checks.append(LemmaCheck("scaled_ratio_vanishes",
                             worst_t=float(t_grid[-1]), slack=vanish))

    return GrowthLemmaReport(checks=tuple(checks), c_phi=c_phi)


def _dyadic_sums(phi, alpha, t_grid):
    """t^alpha sum_{k>=0} phi(2^k t) (2^k t)^(-alpha), truncated when settled."""
    out = np.empty(t_grid.size)
    for i, t in enumerate(t_grid):
        total = 0.0
        for k in range(MAX_BLOCKS):
            term = float(phi(2.0 ** k * t)) * (2.0 ** k * t) ** (-alpha)
            total += term
            if k > 4 and term <= 1e-12 * total:
                break
        else:
            raise DivergentTailError("dyadic sum did not settle")
        out[i] = t ** alpha * total
    return out
