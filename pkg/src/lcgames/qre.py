"""Joint utility and rationality estimation for paired lane-change choices.

Both vehicles' cooperate/defect probabilities are logistic in the expected
utility advantage of cooperating, with the passive vehicle's probability
feeding the active vehicle's expectation and vice versa. The coupled pair is
solved by damped iteration per event; coefficients for all role x interaction
type x outcome blocks are then estimated by L1-penalized maximum likelihood
with box constraints.

Mutual defection carries utility zero everywhere and anchors the scale of
each 2x2 game.

Parameter layout: ``beta`` has shape (role, type, outcome, slot) =
(2, 3, 3, 12) with roles (active, passive), types (AV vs HDV, HDV vs AV,
HDV vs HDV), outcomes (CC, CD, DC) and slot 0 the intercept; ``lam`` has
shape (2, 3) over the same roles and types.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import expit

from .errors import DataError, FitError, FixedPointError, NumericError, SchemaVersionError
from .extraction import LaneChangeEvent
from .standardize import Standardization, fit_standardization

log = logging.getLogger(__name__)

N_ROLES, N_TYPES, N_OUTCOMES, N_SLOTS = 2, 3, 3, 12
N_BETA = N_ROLES * N_TYPES * N_OUTCOMES * N_SLOTS          # 216
N_LAMBDA = N_ROLES * N_TYPES                               # 6
N_THETA = N_BETA + N_LAMBDA                                # 222
N_NULL_PARAMS = N_ROLES * N_TYPES * N_OUTCOMES             # 18 intercepts

BETA_BOUND = 20.0
LAMBDA_MIN, LAMBDA_MAX = 0.01, 10.0
PROB_CLIP = 1e-12
L1_SMOOTH_EPS = 1e-8

ROLE_ACTIVE, ROLE_PASSIVE = 0, 1
ROLES = ("active", "passive")
OUTCOME_INDEX = {"CC": 0, "CD": 1, "DC": 2, "DD": 3}
MODEL_SCHEMA_VERSION = 1


class InteractionType(IntEnum):
    """Own-type/opponent-type context selecting a coefficient block."""

    AV_VS_HDV = 0
    HDV_VS_AV = 1
    HDV_VS_HDV = 2
    AV_VS_AV = 3        # imputation target only; never fitted

    @property
    def fitted(self) -> bool:
        return self is not InteractionType.AV_VS_AV


def interaction_type(own: str, other: str) -> InteractionType:
    if own == "AV":
        return InteractionType.AV_VS_AV if other == "AV" else InteractionType.AV_VS_HDV
    if own == "HDV":
        return InteractionType.HDV_VS_AV if other == "AV" else InteractionType.HDV_VS_HDV
    raise DataError(f"unknown vehicle type {own!r}")


def pair_name(active_type: str, passive_type: str) -> str:
    return f"{active_type}-{passive_type}"


PAIR_NAMES = ("HDV-HDV", "HDV-AV", "AV-HDV", "AV-AV")
FITTED_PAIRS = PAIR_NAMES[:3]


@dataclass
class UtilityModel:
    """Coefficient tensor plus rationality parameters and metadata."""

    beta: np.ndarray                     # (2, 3, 3, 12)
    lam: np.ndarray                      # (2, 3)
    l1_weight: float
    standardization: Standardization
    diagnostics: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.beta.shape != (N_ROLES, N_TYPES, N_OUTCOMES, N_SLOTS):
            raise DataError(f"beta shape {self.beta.shape} != (2, 3, 3, 12)")
        if self.lam.shape != (N_ROLES, N_TYPES):
            raise DataError(f"lambda shape {self.lam.shape} != (2, 3)")
        if not np.all(np.isfinite(self.beta)) or not np.all(np.isfinite(self.lam)):
            raise DataError("model parameters must be finite")
        if np.any(np.abs(self.beta) > BETA_BOUND + 1e-12):
            raise DataError(f"utility coefficients exceed [-{BETA_BOUND}, {BETA_BOUND}]")
        if np.any(self.lam < LAMBDA_MIN - 1e-12) or np.any(self.lam > LAMBDA_MAX + 1e-12):
            raise DataError(f"rationality parameters exceed [{LAMBDA_MIN}, {LAMBDA_MAX}]")
        if self.l1_weight < 0:
            raise DataError("l1_weight must be >= 0")

    def beta_slice(self, role: int, itype: InteractionType, outcome: str) -> np.ndarray:
        t = InteractionType.AV_VS_HDV if itype is InteractionType.AV_VS_AV else itype
        return self.beta[role, int(t), OUTCOME_INDEX[outcome]]

    def lam_at(self, role: int, itype: InteractionType) -> float:
        t = InteractionType.AV_VS_HDV if itype is InteractionType.AV_VS_AV else itype
        return float(self.lam[role, int(t)])


@dataclass
class FixedPointResult:
    p_active: float
    p_passive: float
    residual: float
    iterations: int


@dataclass
class EventSet:
    """Column-oriented view of events for estimation."""

    raw: np.ndarray                  # (n, 11) raw state variables
    s_tilde: np.ndarray              # (n, 12) standardized + intercept slot
    standardization: Standardization
    ta_idx: np.ndarray               # (n,) active interaction type index
    tp_idx: np.ndarray               # (n,) passive interaction type index
    a: np.ndarray                    # (n,) 1.0 when the active vehicle cooperated
    b: np.ndarray                    # (n,) 1.0 when the passive vehicle cooperated

    def __len__(self) -> int:
        return self.s_tilde.shape[0]

    @classmethod
    def from_states(cls, raw, active_types, passive_types, outcomes,
                    standardization: Standardization | None = None) -> "EventSet":
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        ta, tp = [], []
        for at, pt in zip(active_types, passive_types):
            t_a = interaction_type(at, pt)
            t_p = interaction_type(pt, at)
            if not t_a.fitted or not t_p.fitted:
                raise DataError("AV-AV interactions cannot enter a fitted event set")
            ta.append(int(t_a))
            tp.append(int(t_p))
        a = np.array([1.0 if o in ("CC", "CD") else 0.0 for o in outcomes])
        b = np.array([1.0 if o in ("CC", "DC") else 0.0 for o in outcomes])
        if standardization is None:
            standardization = fit_standardization(raw)
        return cls(raw=raw, s_tilde=standardization.augment(raw),
                   standardization=standardization,
                   ta_idx=np.asarray(ta), tp_idx=np.asarray(tp), a=a, b=b)

    @classmethod
    def from_events(cls, events: list[LaneChangeEvent],
                    standardization: Standardization | None = None) -> "EventSet":
        missing = [ev.event_id for ev in events if ev.outcome is None]
        if missing:
            raise DataError(f"events without outcomes (run clustering first): {missing[:3]}")
        return cls.from_states(
            raw=np.array([ev.state for ev in events]),
            active_types=[ev.active_type for ev in events],
            passive_types=[ev.passive_type for ev in events],
            outcomes=[ev.outcome for ev in events],
            standardization=standardization,
        )

    def outcome_labels(self) -> np.ndarray:
        return np.where(self.a == 1.0,
                        np.where(self.b == 1.0, "CC", "CD"),
                        np.where(self.b == 1.0, "DC", "DD"))

    def pair_labels(self) -> np.ndarray:
        active = np.where(self.ta_idx == int(InteractionType.AV_VS_HDV), "AV", "HDV")
        passive = np.where(self.tp_idx == int(InteractionType.AV_VS_HDV), "AV", "HDV")
        return np.array([f"{a}-{p}" for a, p in zip(active, passive)])


# ---------------------------------------------------------------------------
# Utilities and the choice-probability fixed point

def utility(beta_slice: np.ndarray, s_tilde: np.ndarray) -> float:
    """Linear utility of one outcome at one standardized, augmented state."""
    beta_slice = np.asarray(beta_slice, dtype=float)
    s_tilde = np.asarray(s_tilde, dtype=float)
    if beta_slice.shape != (N_SLOTS,) or s_tilde.shape != (N_SLOTS,):
        raise DataError(f"expected {N_SLOTS}-vectors, got {beta_slice.shape} and {s_tilde.shape}")
    return float(beta_slice @ s_tilde)


def expected_utilities(s_tilde, model: UtilityModel, role: int,
                       t_a: InteractionType, t_p: InteractionType,
                       p_other: float) -> tuple[float, float]:
    """Expected utilities (cooperate, defect) for one role.

    ``p_other`` is the opponent's cooperation probability. Mutual-defection
    terms vanish because that utility is identically zero.
    """
    if not 0.0 <= p_other <= 1.0:
        raise DataError(f"p_other {p_other} outside [0, 1]")
    s_tilde = np.asarray(s_tilde, dtype=float)
    if role == ROLE_ACTIVE:
        u_cc = utility(model.beta_slice(role, t_a, "CC"), s_tilde)
        u_cd = utility(model.beta_slice(role, t_a, "CD"), s_tilde)
        u_dc = utility(model.beta_slice(role, t_a, "DC"), s_tilde)
        return p_other * u_cc + (1 - p_other) * u_cd, p_other * u_dc
    u_cc = utility(model.beta_slice(role, t_p, "CC"), s_tilde)
    u_cd = utility(model.beta_slice(role, t_p, "CD"), s_tilde)
    u_dc = utility(model.beta_slice(role, t_p, "DC"), s_tilde)
    return p_other * u_cc + (1 - p_other) * u_dc, p_other * u_cd


def _event_utilities(beta: np.ndarray, s_tilde: np.ndarray,
                     ta_idx: np.ndarray, tp_idx: np.ndarray):
    """Per-event outcome utilities, shape (n, 3) per role, outcomes CC/CD/DC."""
    n = s_tilde.shape[0]
    ua = np.empty((n, N_OUTCOMES))
    up = np.empty((n, N_OUTCOMES))
    for t in range(N_TYPES):
        m = ta_idx == t
        if m.any():
            ua[m] = s_tilde[m] @ beta[ROLE_ACTIVE, t].T
        m = tp_idx == t
        if m.any():
            up[m] = s_tilde[m] @ beta[ROLE_PASSIVE, t].T
    return ua, up


def _fp_iterate(ua, up, la, lp, damping, tol, max_iter, start=None):
    """Damped simultaneous iteration, by default from (0.5, 0.5).

    Converged events are frozen and dropped from the working set, so the
    per-iteration cost tracks the number of still-unconverged events.
    """
    n = ua.shape[0]
    if start is None:
        pa = np.full(n, 0.5)
        pp = np.full(n, 0.5)
    else:
        pa, pp = start[0].copy(), start[1].copy()
    pa_out, pp_out = pa.copy(), pp.copy()
    res_out = np.full(n, np.inf)
    active = np.arange(n)
    ua_a, up_a, la_a, lp_a = ua, up, la, lp
    iterations = 0
    while active.size and iterations < max_iter:
        iterations += 1
        da = pp * ua_a[:, 0] + (1.0 - pp) * ua_a[:, 1] - pp * ua_a[:, 2]
        dp = pa * up_a[:, 0] + (1.0 - pa) * up_a[:, 2] - pa * up_a[:, 1]
        fa = expit(la_a * da)
        fp_ = expit(lp_a * dp)
        residual = np.maximum(np.abs(pa - fa), np.abs(pp - fp_))
        conv = residual < tol
        if conv.any():
            done = active[conv]
            pa_out[done] = pa[conv]
            pp_out[done] = pp[conv]
            res_out[done] = residual[conv]
            keep = ~conv
            active = active[keep]
            if not active.size:
                return pa_out, pp_out, res_out, iterations
            pa, pp = pa[keep], pp[keep]
            fa, fp_ = fa[keep], fp_[keep]
            residual = residual[keep]
            ua_a, up_a = ua_a[keep], up_a[keep]
            la_a, lp_a = la_a[keep], lp_a[keep]
        if iterations >= max_iter:
            break
        pa = (1.0 - damping) * pa + damping * fa
        pp = (1.0 - damping) * pp + damping * fp_
    if active.size:
        da = pp * ua_a[:, 0] + (1.0 - pp) * ua_a[:, 1] - pp * ua_a[:, 2]
        dp = pa * up_a[:, 0] + (1.0 - pa) * up_a[:, 2] - pa * up_a[:, 1]
        fa = expit(la_a * da)
        fp_ = expit(lp_a * dp)
        pa_out[active] = pa
        pp_out[active] = pp
        res_out[active] = np.maximum(np.abs(pa - fa), np.abs(pp - fp_))
    return pa_out, pp_out, res_out, iterations


def _fp_residual(ua, up, la, lp, pa, pp):
    da = pp * ua[:, 0] + (1.0 - pp) * ua[:, 1] - pp * ua[:, 2]
    dp = pa * up[:, 0] + (1.0 - pa) * up[:, 2] - pa * up[:, 1]
    fa = expit(la * da)
    fp_ = expit(lp * dp)
    return fa, fp_, np.maximum(np.abs(pa - fa), np.abs(pp - fp_))


def _fp_newton(ua, up, la, lp, pa, pp, tol, max_iter=60):
    """Newton steps on p - f(p) = 0, tracking the best iterate seen.

    The coupled map is linear inside each sigmoid, so the 2x2 Jacobian is
    closed-form. Steps are clamped to stay in (0, 1) and to survive the
    near-singular Jacobian at a tangent fixed point; because iterates can
    cycle in bistable regimes, only the lowest-residual state is returned.
    """
    tiny = 1e-15
    pa, pp = pa.copy(), pp.copy()
    ca = ua[:, 0] - ua[:, 1] - ua[:, 2]
    cp = up[:, 0] - up[:, 2] - up[:, 1]
    best_pa, best_pp = pa.copy(), pp.copy()
    best_res = np.full(pa.shape, np.inf)
    for _ in range(max_iter):
        fa, fp_, residual = _fp_residual(ua, up, la, lp, pa, pp)
        improved = residual < best_res
        best_pa[improved] = pa[improved]
        best_pp[improved] = pp[improved]
        best_res[improved] = residual[improved]
        if best_res.max() < tol:
            break
        r1 = pa - fa
        r2 = pp - fp_
        aa = fa * (1.0 - fa) * la * ca           # df_a / dp_p
        bb = fp_ * (1.0 - fp_) * lp * cp         # df_p / dp_a
        det = 1.0 - aa * bb
        det = np.where(np.abs(det) < 1e-12, np.copysign(1e-12, det), det)
        step_a = np.clip((r1 + aa * r2) / det, -0.25, 0.25)
        step_p = np.clip((r2 + bb * r1) / det, -0.25, 0.25)
        pa = np.clip(pa - step_a, tiny, 1.0 - tiny)
        pp = np.clip(pp - step_p, tiny, 1.0 - tiny)
    return best_pa, best_pp, best_res


def _fp_bisect(ua, up, la, lp, iters: int = 100):
    """Bracketing solve on the composed scalar map.

    p_active is an explicit function of p_passive, so the equilibrium is a
    root of g(p_passive) - p_passive on [0, 1]; g(0) >= 0 and g(1) - 1 <= 0
    guarantee a bracket, making this the always-converging fallback.
    """
    ca = ua[:, 0] - ua[:, 1] - ua[:, 2]
    cp = up[:, 0] - up[:, 2] - up[:, 1]

    def g(pp):
        pa = expit(la * (ua[:, 1] + ca * pp))
        return expit(lp * (up[:, 2] + cp * pa)), pa

    lo = np.zeros(ua.shape[0])
    hi = np.ones(ua.shape[0])
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        gm, _ = g(mid)
        h_pos = gm >= mid
        lo = np.where(h_pos, mid, lo)
        hi = np.where(h_pos, hi, mid)
    pp = 0.5 * (lo + hi)
    _, pa = g(pp)
    return pa, pp


def solve_fixed_points(ua, up, la, lp, damping=0.5, tol=1e-10, max_iter=500,
                       continue_budget=4000, start=None):
    """Solve the coupled probabilities for a batch of events.

    Damped iteration handles the bulk. Unconverged events continue the same
    trajectory with a larger budget and get a Newton polish from wherever it
    stands; with positive role coupling the composed map is monotone, so
    this lands on the root the iteration was crawling toward and keeps the
    selection continuous in the parameters. Events that still oscillate have
    negative coupling and a unique equilibrium, so the bracketing bisection
    fallback cannot change the selection.
    """
    pa, pp, residual, iterations = _fp_iterate(ua, up, la, lp, damping, tol,
                                               max_iter, start=start)
    bad = residual >= tol
    if bad.any():
        sub = _fp_iterate(ua[bad], up[bad], la[bad], lp[bad], damping, tol,
                          continue_budget, start=(pa[bad], pp[bad]))
        iterations += sub[3]
        news = _fp_newton(ua[bad], up[bad], la[bad], lp[bad], sub[0], sub[1], tol)
        pa[bad], pp[bad], residual[bad] = news
        bad = residual >= tol
    if bad.any():
        b_pa, b_pp = _fp_bisect(ua[bad], up[bad], la[bad], lp[bad])
        news = _fp_newton(ua[bad], up[bad], la[bad], lp[bad], b_pa, b_pp, tol,
                          max_iter=30)
        pa[bad], pp[bad], residual[bad] = news
        bad = residual >= tol
    if bad.any():
        raise FixedPointError(
            f"{int(bad.sum())} events did not converge (max residual {residual.max():.3e})",
            residual=float(residual.max()),
        )
    return pa, pp, residual, iterations


def solve_fixed_point(s_tilde, model: UtilityModel,
                      t_a: InteractionType, t_p: InteractionType,
                      damping: float = 0.5, tol: float = 1e-10,
                      max_iter: int = 500) -> FixedPointResult:
    """Coupled cooperation probabilities for a single event.

    Raises FixedPointError carrying the last residual on non-convergence;
    the caller may retry with a tighter damping factor.
    """
    model.validate()
    s = np.asarray(s_tilde, dtype=float).reshape(1, N_SLOTS)
    ta_idx = np.array([int(t_a if t_a.fitted else InteractionType.AV_VS_HDV)])
    tp_idx = np.array([int(t_p if t_p.fitted else InteractionType.AV_VS_HDV)])
    ua, up = _event_utilities(model.beta, s, ta_idx, tp_idx)
    la = np.array([model.lam_at(ROLE_ACTIVE, t_a)])
    lp = np.array([model.lam_at(ROLE_PASSIVE, t_p)])
    pa, pp, residual, iterations = _fp_iterate(ua, up, la, lp, damping, tol, max_iter)
    if residual.max() >= tol:
        raise FixedPointError(
            f"fixed point did not converge (residual {residual.max():.3e})",
            residual=float(residual.max()),
        )
    return FixedPointResult(p_active=float(pa[0]), p_passive=float(pp[0]),
                            residual=float(residual.max()), iterations=iterations)


def event_probabilities(model: UtilityModel, es: EventSet, tol: float = 1e-10):
    """Converged (p_active, p_passive) arrays for every event."""
    ua, up = _event_utilities(model.beta, es.s_tilde, es.ta_idx, es.tp_idx)
    la = model.lam[ROLE_ACTIVE, es.ta_idx]
    lp = model.lam[ROLE_PASSIVE, es.tp_idx]
    pa, pp, _, _ = solve_fixed_points(ua, up, la, lp, tol=tol)
    return pa, pp


# ---------------------------------------------------------------------------
# Likelihood, penalty, and the analytic gradient

def _bernoulli_ll(p, y):
    pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return y * np.log(pc) + (1.0 - y) * np.log1p(-pc)


def log_likelihood(model: UtilityModel, es: EventSet, tol: float = 1e-10) -> float:
    """Unpenalized log-likelihood of both roles' observed choices."""
    pa, pp = event_probabilities(model, es, tol=tol)
    return float(np.sum(_bernoulli_ll(pa, es.a) + _bernoulli_ll(pp, es.b)))


def _objective_and_grad(beta, lam, es: EventSet, l1_weight: float,
                        fp_tol: float, penalize_mask: np.ndarray | None = None,
                        fp_start=None):
    """Penalized log-likelihood and its gradient w.r.t. (beta, lam).

    The gradient differentiates through the fixed point: with
    p_a = sigmoid(lam_a D_a(p_p)) and p_p = sigmoid(lam_p D_p(p_a)), the
    per-event sensitivities solve a 2x2 linear system whose closed form is
    used below. Events whose probability sits inside the clipping band
    contribute zero gradient for that role. ``fp_start`` optionally warm
    starts the equilibrium solve (used during fitting to follow each
    event's branch continuously).
    """
    s = es.s_tilde
    ua, up = _event_utilities(beta, s, es.ta_idx, es.tp_idx)
    la = lam[ROLE_ACTIVE, es.ta_idx]
    lp = lam[ROLE_PASSIVE, es.tp_idx]
    pa, pp, _, _ = solve_fixed_points(ua, up, la, lp, tol=fp_tol, start=fp_start)

    da = pp * ua[:, 0] + (1.0 - pp) * ua[:, 1] - pp * ua[:, 2]
    dp = pa * up[:, 0] + (1.0 - pa) * up[:, 2] - pa * up[:, 1]

    ll = float(np.sum(_bernoulli_ll(pa, es.a) + _bernoulli_ll(pp, es.b)))

    in_band_a = (pa > PROB_CLIP) & (pa < 1.0 - PROB_CLIP)
    in_band_p = (pp > PROB_CLIP) & (pp < 1.0 - PROB_CLIP)
    wa = np.where(in_band_a, es.a / np.clip(pa, PROB_CLIP, None)
                  - (1.0 - es.a) / np.clip(1.0 - pa, PROB_CLIP, None), 0.0)
    wp = np.where(in_band_p, es.b / np.clip(pp, PROB_CLIP, None)
                  - (1.0 - es.b) / np.clip(1.0 - pp, PROB_CLIP, None), 0.0)

    sa = pa * (1.0 - pa)
    sp = pp * (1.0 - pp)
    ca = ua[:, 0] - ua[:, 1] - ua[:, 2]        # dD_a / dp_p
    cp = up[:, 0] - up[:, 2] - up[:, 1]        # dD_p / dp_a
    aa = sa * la * ca
    bb = sp * lp * cp
    delta = 1.0 - aa * bb
    delta = np.where(np.abs(delta) < 1e-12, np.copysign(1e-12, delta), delta)

    qa = sa * (wa + wp * bb) / delta
    qp = sp * (wp + wa * aa) / delta

    grad_beta = np.zeros_like(beta)
    coef_a = np.stack([qa * la * pp, qa * la * (1.0 - pp), -qa * la * pp], axis=1)
    coef_p = np.stack([qp * lp * pa, -qp * lp * pa, qp * lp * (1.0 - pa)], axis=1)
    for t in range(N_TYPES):
        m = es.ta_idx == t
        if m.any():
            grad_beta[ROLE_ACTIVE, t] = coef_a[m].T @ s[m]
        m = es.tp_idx == t
        if m.any():
            grad_beta[ROLE_PASSIVE, t] = coef_p[m].T @ s[m]

    grad_lam = np.zeros_like(lam)
    for t in range(N_TYPES):
        m = es.ta_idx == t
        grad_lam[ROLE_ACTIVE, t] = float(np.sum(qa[m] * da[m]))
        m = es.tp_idx == t
        grad_lam[ROLE_PASSIVE, t] = float(np.sum(qp[m] * dp[m]))

    penalty = 0.0
    if l1_weight > 0:
        mask = np.ones_like(beta) if penalize_mask is None else penalize_mask
        smooth = np.sqrt(beta ** 2 + L1_SMOOTH_EPS)
        penalty = float(l1_weight * np.sum(mask * smooth))
        grad_beta = grad_beta - l1_weight * mask * beta / smooth

    return ll - penalty, grad_beta, grad_lam, ll, (pa, pp)


def penalized_objective(model: UtilityModel, es: EventSet,
                        fp_tol: float = 1e-10) -> float:
    """Objective value (log-likelihood minus smoothed L1 penalty) at a model."""
    value, _, _, _, _ = _objective_and_grad(
        model.beta, model.lam, es, model.l1_weight, fp_tol)
    return value


# ---------------------------------------------------------------------------
# Bounded quasi-Newton minimizer
#
# The likelihood is discontinuous wherever an event's equilibrium selection
# jumps between coexisting fixed points, which breaks Wolfe line searches.
# This projected L-BFGS uses backtracking with a sufficient-decrease test
# only, so it keeps making monotone progress past such cliffs.

@dataclass
class _MinimizeResult:
    x: np.ndarray
    fun: float
    jac: np.ndarray
    nit: int
    nfev: int
    success: bool
    message: str


def _minimize_bounded(fun, x0, lower, upper, max_iter=1000, memory=20,
                      gtol=1e-6, ftol=1e-11, c1=1e-4, alpha_min=1e-10,
                      stall_limit=8, on_accept=None):
    """Projected L-BFGS with Armijo backtracking under box constraints.

    ``on_accept`` is called with each accepted iterate, letting the caller
    commit per-evaluation state (e.g. equilibrium warm starts).
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    f, g = fun(x)
    if on_accept is not None:
        on_accept(x)
    nfev = 1
    s_mem: list[np.ndarray] = []
    y_mem: list[np.ndarray] = []
    rho_mem: list[float] = []
    stall = 0
    message = "maximum iterations reached"
    success = False
    nit = 0

    def projected_gradient(x, g):
        pg = g.copy()
        pg[(x <= lower + 1e-12) & (g > 0)] = 0.0
        pg[(x >= upper - 1e-12) & (g < 0)] = 0.0
        return pg

    def two_loop(g):
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_mem), reversed(y_mem), reversed(rho_mem)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_mem:
            gamma = (s_mem[-1] @ y_mem[-1]) / (y_mem[-1] @ y_mem[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_mem, y_mem, rho_mem), reversed(alphas)):
            q += s * (a - rho * (y @ q))
        return q

    for nit in range(1, max_iter + 1):
        pg = projected_gradient(x, g)
        if np.max(np.abs(pg)) < gtol:
            success, message = True, "projected gradient below gtol"
            break

        d = -two_loop(g)
        d[(x <= lower + 1e-12) & (d < 0)] = 0.0
        d[(x >= upper - 1e-12) & (d > 0)] = 0.0
        if d @ g >= 0 or not np.any(d):
            d = -pg
        if not y_mem:
            d = d / max(np.linalg.norm(d), 1.0)

        accepted = False
        for direction in (d, -pg):
            alpha = 1.0
            while alpha >= alpha_min:
                x_new = np.clip(x + alpha * direction, lower, upper)
                step = x_new - x
                if not np.any(step):
                    break
                f_new, g_new = fun(x_new)
                nfev += 1
                if f_new <= f + c1 * (g @ step):
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
        if not accepted:
            success, message = True, "no descent step found (kink-stationary)"
            break
        if on_accept is not None:
            on_accept(x_new)

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_mem.append(s)
            y_mem.append(y)
            rho_mem.append(1.0 / sy)
            if len(s_mem) > memory:
                s_mem.pop(0)
                y_mem.pop(0)
                rho_mem.pop(0)

        if f - f_new <= ftol * max(1.0, abs(f)):
            stall += 1
            if stall >= stall_limit:
                x, f, g = x_new, f_new, g_new
                success, message = True, "objective improvement below ftol"
                break
        else:
            stall = 0
        x, f, g = x_new, f_new, g_new

    return _MinimizeResult(x=x, fun=f, jac=g, nit=nit, nfev=nfev,
                           success=success, message=message)


def _check_types_present(es: EventSet) -> None:
    for name, idx in (("active", es.ta_idx), ("passive", es.tp_idx)):
        present = set(int(t) for t in np.unique(idx))
        if present != {0, 1, 2}:
            raise DataError(
                f"{name} role covers interaction types {sorted(present)}; "
                "all three fitted types are required")


def fit(es: EventSet, l1_weight: float = 0.1, seed: int | None = None,
        max_iter: int = 3000, fp_tol: float = 1e-10,
        ftol: float = 1e-11, gtol: float = 1e-6) -> UtilityModel:
    """Maximize the penalized log-likelihood under box constraints.

    Starts from beta = 0, lambda = 1 and runs a bounded quasi-Newton method
    with the analytic gradient of the smoothed objective. ``seed`` is
    accepted for interface stability; the procedure is deterministic.
    Raises FitError (carrying the best parameters seen) when the optimizer
    fails to converge within its budget.
    """
    del seed
    _check_types_present(es)

    def unpack(theta):
        return (theta[:N_BETA].reshape(N_ROLES, N_TYPES, N_OUTCOMES, N_SLOTS),
                theta[N_BETA:].reshape(N_ROLES, N_TYPES))

    # Equilibria are warm started from the last accepted iterate so each
    # event follows its branch continuously along the optimization path.
    warm = {"start": None, "last": None}

    def negative_objective(theta):
        beta, lam = unpack(theta)
        value, g_beta, g_lam, _, probs = _objective_and_grad(
            beta, lam, es, l1_weight, fp_tol, fp_start=warm["start"])
        warm["last"] = (theta.copy(), probs)
        grad = np.concatenate([g_beta.ravel(), g_lam.ravel()])
        return -value, -grad

    def commit_warm_start(theta):
        if warm["last"] is not None and np.array_equal(warm["last"][0], theta):
            warm["start"] = warm["last"][1]

    theta0 = np.concatenate([np.zeros(N_BETA), np.ones(N_LAMBDA)])
    lower = np.concatenate([np.full(N_BETA, -BETA_BOUND), np.full(N_LAMBDA, LAMBDA_MIN)])
    upper = np.concatenate([np.full(N_BETA, BETA_BOUND), np.full(N_LAMBDA, LAMBDA_MAX)])
    result = _minimize_bounded(negative_objective, theta0, lower, upper,
                               max_iter=max_iter, gtol=gtol, ftol=ftol,
                               on_accept=commit_warm_start)
    grad_norm = float(np.max(np.abs(result.jac)))
    if not result.success:
        raise FitError(
            f"optimizer failed: {result.message} (grad norm {grad_norm:.3e})",
            best_theta=result.x, grad_norm=grad_norm,
        )
    beta, lam = unpack(result.x)
    model = UtilityModel(
        beta=beta, lam=lam, l1_weight=l1_weight,
        standardization=es.standardization,
        diagnostics={
            "converged": bool(result.success),
            "iterations": int(result.nit),
            "n_evaluations": int(result.nfev),
            "objective": float(-result.fun),
            "grad_norm": grad_norm,
            "message": str(result.message),
            "n_events": len(es),
            "n_free_params": N_THETA,
        },
    )
    model.validate()
    return model


def fit_null(es: EventSet, max_iter: int = 2000, fp_tol: float = 1e-10) -> UtilityModel:
    """Intercept-only baseline: 18 free intercepts, lambda fixed at 1.

    No penalty is applied, so the full-versus-null comparison has
    222 - 18 = 204 degrees of freedom.
    """
    _check_types_present(es)

    def expand(theta18):
        beta = np.zeros((N_ROLES, N_TYPES, N_OUTCOMES, N_SLOTS))
        beta[:, :, :, 0] = theta18.reshape(N_ROLES, N_TYPES, N_OUTCOMES)
        return beta

    lam = np.ones((N_ROLES, N_TYPES))

    def negative_objective(theta18):
        beta = expand(theta18)
        value, g_beta, _, _, _ = _objective_and_grad(beta, lam, es, 0.0, fp_tol)
        return -value, -g_beta[:, :, :, 0].ravel()

    theta0 = np.zeros(N_NULL_PARAMS)
    lower = np.full(N_NULL_PARAMS, -BETA_BOUND)
    upper = np.full(N_NULL_PARAMS, BETA_BOUND)
    result = _minimize_bounded(negative_objective, theta0, lower, upper,
                               max_iter=max_iter, gtol=1e-8, ftol=1e-13)
    grad_norm = float(np.max(np.abs(result.jac)))
    if not result.success:
        raise FitError(
            f"null-model optimizer failed: {result.message}",
            best_theta=result.x, grad_norm=grad_norm,
        )
    model = UtilityModel(
        beta=expand(result.x), lam=lam, l1_weight=0.0,
        standardization=es.standardization,
        diagnostics={
            "converged": bool(result.success),
            "iterations": int(result.nit),
            "objective": float(-result.fun),
            "grad_norm": grad_norm,
            "n_events": len(es),
            "n_free_params": N_NULL_PARAMS,
        },
    )
    model.validate()
    return model


def likelihood_ratio_stats(ll_full: float, ll_null: float,
                           df: int = N_THETA - N_NULL_PARAMS) -> dict:
    """LRT statistic, p-value, and McFadden pseudo R^2 from two raw LLs."""
    lrt = 2.0 * (ll_full - ll_null)
    mcfadden = 1.0 - ll_full / ll_null
    p_value = float(stats.chi2.sf(max(lrt, 0.0), df))
    return {"lrt_stat": float(lrt), "df": int(df), "p_value": p_value,
            "mcfadden": float(mcfadden)}


def validate(model_full: UtilityModel, model_null: UtilityModel,
             es: EventSet) -> dict:
    """Full-versus-null comparison on unpenalized log-likelihoods."""
    ll_full = log_likelihood(model_full, es)
    ll_null = log_likelihood(model_null, es)
    if ll_full < ll_null:
        log.warning("full model log-likelihood below null (%.4f < %.4f); "
                    "likely a regularization artifact", ll_full, ll_null)
    out = likelihood_ratio_stats(ll_full, ll_null)
    out.update({"ll_full": ll_full, "ll_null": ll_null})
    return out


def vif(z_states: np.ndarray) -> np.ndarray:
    """Variance inflation factors for the 11 standardized state variables.

    Returns 12 values; the last is the constant's VIF, identically 1.0.
    Perfectly collinear variables report +inf.
    """
    z = np.atleast_2d(np.asarray(z_states, dtype=float))
    n, p = z.shape
    if n < p + 2:
        raise DataError(f"VIF needs at least {p + 2} events, got {n}")
    out = np.empty(p + 1)
    for j in range(p):
        y = z[:, j]
        x = np.column_stack([np.ones(n), np.delete(z, j, axis=1)])
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ coef
        ss_res = float(resid @ resid)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        if ss_tot <= 0.0:
            out[j] = np.inf
            continue
        r2 = 1.0 - ss_res / ss_tot
        out[j] = np.inf if r2 >= 1.0 - 1e-12 else 1.0 / (1.0 - r2)
    out[p] = 1.0
    return out


def predict_and_score(model: UtilityModel, es: EventSet) -> dict:
    """Outcome prediction metrics plus the expected-cooperation summary.

    Each role's choice is predicted cooperative when its converged
    probability is at least 0.5; the joint prediction maps to CC/CD/DC/DD.
    Precision/recall/F1 are one-vs-rest per outcome; recall is null for
    outcomes absent from the truth.
    """
    pa, pp = event_probabilities(model, es)
    pred = np.where(pa >= 0.5, np.where(pp >= 0.5, "CC", "CD"),
                    np.where(pp >= 0.5, "DC", "DD"))
    true = es.outcome_labels()

    per_outcome: dict[str, dict] = {}
    for o in ("CC", "CD", "DC", "DD"):
        tp = int(np.sum((pred == o) & (true == o)))
        fp = int(np.sum((pred == o) & (true != o)))
        fn = int(np.sum((pred != o) & (true == o)))
        precision = tp / (tp + fp) if (tp + fp) > 0 else None
        recall = tp / (tp + fn) if (tp + fn) > 0 else None
        if precision is not None and recall is not None and (precision + recall) > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = None
        per_outcome[o] = {"precision": precision, "recall": recall, "f1": f1,
                          "support": int(np.sum(true == o))}

    def macro(key):
        vals = [m[key] for m in per_outcome.values() if m[key] is not None]
        return float(np.mean(vals)) if vals else None

    expected = {}
    for role, probs, obs in (("active", pa, es.a), ("passive", pp, es.b)):
        expected[role] = {
            "observed": float(obs.sum()),
            "expected": float(probs.sum()),
            "stdev": float(np.sqrt(np.sum(probs * (1.0 - probs)))),
        }
    return {
        "per_outcome": per_outcome,
        "macro": {k: macro(k) for k in ("precision", "recall", "f1")},
        "expected_cooperation": expected,
        "n_events": len(es),
    }


# ---------------------------------------------------------------------------
# Synthetic data

@dataclass
class StateDistribution:
    """Sampling law for synthetic states and interaction-pair mix."""

    mean: np.ndarray
    cov: np.ndarray
    pair_weights: dict[str, float]           # over FITTED_PAIRS

    @classmethod
    def default(cls) -> "StateDistribution":
        return cls(mean=np.zeros(11), cov=np.eye(11),
                   pair_weights={"HDV-HDV": 0.6, "HDV-AV": 0.25, "AV-HDV": 0.15})


def generate_synthetic(theta_star: UtilityModel, n: int,
                       state_distribution: StateDistribution | None = None,
                       seed: int = 0):
    """Sample events from a known model.

    States are multivariate normal, interaction pairs follow the configured
    proportions, and both roles' choices are Bernoulli draws at the solved
    fixed-point probabilities. Returns (EventSet, info) where info carries
    the generating probabilities; the event set reuses ``theta_star``'s
    standardization so recovery comparisons share a basis.
    """
    theta_star.validate()
    dist = state_distribution or StateDistribution.default()
    rng = np.random.default_rng(seed)

    raw = rng.multivariate_normal(dist.mean, dist.cov, size=n)
    pairs = list(dist.pair_weights)
    weights = np.array([dist.pair_weights[p] for p in pairs], dtype=float)
    weights = weights / weights.sum()
    pair_idx = rng.choice(len(pairs), size=n, p=weights)
    active_types = [pairs[i].split("-")[0] for i in pair_idx]
    passive_types = [pairs[i].split("-")[1] for i in pair_idx]

    s_tilde = theta_star.standardization.augment(raw)
    ta_idx = np.array([int(interaction_type(a, p))
                       for a, p in zip(active_types, passive_types)])
    tp_idx = np.array([int(interaction_type(p, a))
                       for a, p in zip(active_types, passive_types)])
    ua, up = _event_utilities(theta_star.beta, s_tilde, ta_idx, tp_idx)
    la = theta_star.lam[ROLE_ACTIVE, ta_idx]
    lp = theta_star.lam[ROLE_PASSIVE, tp_idx]
    pa, pp, _, _ = solve_fixed_points(ua, up, la, lp)

    a = (rng.random(n) < pa).astype(float)
    b = (rng.random(n) < pp).astype(float)
    es = EventSet(raw=raw, s_tilde=s_tilde,
                  standardization=theta_star.standardization,
                  ta_idx=ta_idx, tp_idx=tp_idx, a=a, b=b)
    info = {"p_active": pa, "p_passive": pp}
    return es, info


# ---------------------------------------------------------------------------
# Model persistence

def model_to_dict(model: UtilityModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "layout": "beta[role][type][outcome][slot]; roles=(active,passive); "
                  "types=(AV_VS_HDV,HDV_VS_AV,HDV_VS_HDV); outcomes=(CC,CD,DC); "
                  "slot 0 = intercept, slots 1..11 = standardized state variables",
        "beta": model.beta.tolist(),
        "lambda": model.lam.tolist(),
        "l1_weight": float(model.l1_weight),
        "standardization": model.standardization.to_dict(),
        "diagnostics": model.diagnostics,
    }


def model_from_dict(data: dict) -> UtilityModel:
    version = data.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"model schema version {version!r} incompatible with {MODEL_SCHEMA_VERSION}")
    model = UtilityModel(
        beta=np.asarray(data["beta"], dtype=float),
        lam=np.asarray(data["lambda"], dtype=float),
        l1_weight=float(data["l1_weight"]),
        standardization=Standardization.from_dict(data["standardization"]),
        diagnostics=dict(data.get("diagnostics", {})),
    )
    model.validate()
    return model


def save_model(path: str | Path, model: UtilityModel) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> UtilityModel:
    path = Path(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a valid model file ({exc})") from None
    try:
        return model_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model file ({exc})") from None
