"""Computable versions of the quantities that drive the fast-rate analysis.

Covers empirical covariances and the covariate-shift norm, conditional
variances of the next-stage maximum, the two value-gap bound evaluators,
sampled stability coefficients on tabular MDPs, the disk example for the
curvature conditions, and a tabular family with a continuum-like action
grid on which the quadratic gap-versus-residual scaling can be observed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import mdp as M
from .errors import DataError, DomainError, EstimationError, PreconditionError, SingularSystemError, StructureError
from .features import ArrayFeatures
from .fqi import Dataset, regular_sequence_check

# ---------------------------------------------------------------------------
# covariances


def empirical_covariance(data: Dataset, fm) -> np.ndarray:
    """``(1/n) sum phi(s_i, a_i) phi(s_i, a_i)^T``."""
    design = fm.design(data.states, data.actions)
    g = design.gram() / design.n
    return 0.5 * (g + g.T)


def population_covariance(mdp: M.TabularMDP, fm: ArrayFeatures, pi_star: np.ndarray, h: int) -> np.ndarray:
    """``E[phi phi^T]`` under the stage-h occupation measure of ``pi_star``."""
    xi = M.occupation_weights(mdp, pi_star, h)
    phi = fm.table
    return np.einsum("sa,sai,saj->ij", xi, phi, phi)


def symmetric_eigvalsh(a: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix (LAPACK tridiagonal reduction)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructureError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise StructureError("matrix must be symmetric")
    return linalg.eigh(a, eigvals_only=True)


def covariate_shift_norm(sigma: np.ndarray, sigma_hat: np.ndarray, lam: float) -> float:
    """``|| Sigma^{1/2} (Sigma_hat + lam I)^{-1/2} ||_2``.

    Computed as the square root of the largest generalized eigenvalue of
    ``Sigma v = mu (Sigma_hat + lam I) v``, which avoids forming matrix
    square roots.
    """
    sigma = np.asarray(sigma, dtype=float)
    b = np.asarray(sigma_hat, dtype=float) + lam * np.eye(sigma.shape[0])
    try:
        mu = linalg.eigh(0.5 * (sigma + sigma.T), 0.5 * (b + b.T), eigvals_only=True)
    except linalg.LinAlgError as exc:
        raise SingularSystemError("Sigma_hat + lam I is not positive definite") from exc
    return float(np.sqrt(max(mu[-1], 0.0)))


# ---------------------------------------------------------------------------
# conditional variances


def tabular_sampler(mdp: M.TabularMDP, h: int):
    """Sampler of stage-(h+1) states given a stage-h pair ``(s, a)``."""
    P = mdp.transitions[h - 1]

    def sample(pair, m, rng):
        s, a = pair
        return rng.choice(mdp.n_states, size=m, p=P[s, a])

    return sample


def conditional_std_estimate(sampler, f_max, pairs, inner_samples: int, rng: np.random.Generator):
    """Per-pair sample variances of ``max_a f(S', a)`` and the pooled ``sigma_hat``.

    ``f_max`` maps an array of next states to ``max_a f(s', a)``.
    Returns ``(variances, sqrt(mean(variances)))``.
    """
    if inner_samples < 2:
        raise DomainError("need at least two inner samples per pair")
    var = np.empty(len(pairs))
    for i, pair in enumerate(pairs):
        vals = np.asarray(f_max(sampler(pair, inner_samples, rng)), dtype=float)
        var[i] = np.var(vals, ddof=1)
    return var, float(np.sqrt(var.mean()))


# ---------------------------------------------------------------------------
# bound evaluators


@dataclass
class BoundInputs:
    """Inputs to the value-gap bounds; arrays indexed by stage ``h - 1``.

    ``kappa[h-1, h'-1]`` is the occupation-stability coefficient for the pair
    ``(h, h')``; ``kappa_star_stage[h-1]`` is the one-step Bellman-stability
    coefficient, and products of consecutive entries give the multi-step ones.
    """

    eps: np.ndarray
    q_norms: np.ndarray
    kappa: np.ndarray | None = None
    kappa_star_stage: np.ndarray | None = None
    dim: int = 1
    beta_norms: np.ndarray | None = None
    rho: np.ndarray | None = None
    xi_phi: float = 1.0

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        H = self.eps.shape[0]
        self.q_norms = np.asarray(self.q_norms, dtype=float)
        if self.q_norms.shape != (H,):
            raise StructureError("q_norms must have one entry per stage")
        if np.any(self.eps < 0) or not np.all(np.isfinite(self.eps)):
            raise DataError("residual bounds must be finite and nonnegative")
        if self.kappa is not None:
            self.kappa = np.asarray(self.kappa, dtype=float)
            if self.kappa.shape != (H, H):
                raise StructureError("kappa must be H x H")
        if self.kappa_star_stage is not None:
            self.kappa_star_stage = np.asarray(self.kappa_star_stage, dtype=float)
            if self.kappa_star_stage.shape[0] < H - 1:
                raise StructureError("need a Bellman-stability coefficient for stages 1..H-1")

    @property
    def horizon(self) -> int:
        return self.eps.shape[0]

    def kappa_star(self, h: int, hp: int) -> float:
        """Product of one-step coefficients for stages ``h..hp-1``; 1 when ``h == hp``."""
        return float(np.prod(self.kappa_star_stage[h - 1:hp - 1]))


def _check_q_norms(q_norms: np.ndarray, H: int):
    if np.any(q_norms[:H - 1] <= 0):
        raise PreconditionError("optimal Q-function norms must be positive")


def fast_rate_bound(b: BoundInputs) -> float:
    """``2 sum_h (1/|q*_h|) (sum_{h'>=h} kappa(h,h') eps_h') (sum_{h'>=h} kappa*(h->h') eps_h')``."""
    if b.kappa is None or b.kappa_star_stage is None:
        raise StructureError("stability coefficients are required")
    if not regular_sequence_check(b.eps):
        raise PreconditionError("residual sequence is not regular")
    H = b.horizon
    _check_q_norms(b.q_norms, H)
    total = 0.0
    for h in range(1, H):
        s1 = sum(b.kappa[h - 1, hp - 1] * b.eps[hp - 1] for hp in range(h, H))
        s2 = sum(b.kappa_star(h, hp) * b.eps[hp - 1] for hp in range(h, H))
        total += s1 * s2 / b.q_norms[h - 1]
    return 2.0 * total


@dataclass
class PropLinResult:
    bound: float
    condition_holds: bool
    thresholds: np.ndarray


def prop_lin_bound(eps, beta_norms, q_norms, d: int, H: int | None = None) -> PropLinResult:
    """``6 sqrt(d) sum_h (|beta_h| / |q*_h|) (sum_{h'>=h} eps_h')^2`` and the smallness check.

    The check requires, for h = 1..H-1,
    ``eps_h <= |q*_{h+1}| / (6 sqrt(d) |beta_{h+1}| (H-h)^2 (1 + log H))``.
    """
    eps = np.asarray(eps, dtype=float)
    beta = np.asarray(beta_norms, dtype=float)
    qn = np.asarray(q_norms, dtype=float)
    H = eps.shape[0] if H is None else H
    if eps.shape != (H,) or beta.shape != (H,) or qn.shape != (H,):
        raise StructureError("eps, beta_norms and q_norms need length H")
    if np.any(eps < 0):
        raise DataError("residual bounds must be nonnegative")
    _check_q_norms(qn, H)
    total = 0.0
    for h in range(1, H):
        total += beta[h - 1] / qn[h - 1] * eps[h - 1:H - 1].sum() ** 2
    thr = np.empty(H - 1)
    for h in range(1, H):
        with np.errstate(divide="ignore"):
            thr[h - 1] = qn[h] / (6.0 * np.sqrt(d) * beta[h] * (H - h) ** 2 * (1.0 + np.log(H)))
    holds = bool(regular_sequence_check(eps) and np.all(eps[:H - 1] <= thr))
    return PropLinResult(6.0 * np.sqrt(d) * total, holds, thr)


def linear_metric(diff_norm: float, beta_norm: float, q_norm: float, d: int) -> float:
    """``sqrt(d) |beta_h| / |q*_h| * |f - g|_h``."""
    if q_norm <= 0:
        raise PreconditionError("optimal Q-function norm must be positive")
    return float(np.sqrt(d) * beta_norm / q_norm * diff_norm)


def neighborhood_radius(H: int, h: int, xi_phi: float = 1.0, log_factor: bool = False) -> float:
    """Largest admissible ``rho_h``: ``1 / (2 xi_phi (H - h + 1))``, optionally over ``1 + log H``."""
    r = 1.0 / (2.0 * xi_phi * (H - h + 1))
    return r / (1.0 + np.log(H)) if log_factor else r


# ---------------------------------------------------------------------------
# sampled stability coefficients


@dataclass
class StabilityEstimate:
    """Sampled lower bounds on the stability suprema.

    ``kappa_star[h-1]`` bounds the one-step Bellman-stability coefficient and
    ``kappa[h-1, h'-1]`` the occupation-stability coefficient.  The ``*_trace``
    arrays hold the running maximum after each draw (NaN before the first
    usable draw).
    """

    kappa_star: np.ndarray
    kappa: np.ndarray
    kappa_star_trace: np.ndarray
    kappa_trace: np.ndarray
    used: int
    trials: int
    label: str = "lower bound (sampled supremum)"


def _propagated_features(mdp, fm: ArrayFeatures, pi_star, h: int, hp: int) -> np.ndarray:
    psi = np.empty_like(fm.table)
    for k in range(fm.dim):
        psi[:, :, k] = M.multistep_transition(mdp, pi_star, h, hp, fm.table[:, :, k])
    return psi


def occupation_stability_sup(mdp, fm: ArrayFeatures, pi_star, pi_h: np.ndarray, h: int, hp: int,
                             sigma_hp: np.ndarray | None = None) -> float:
    """``sup_g |E*[(P^{h->h'} g)(S, pi*) - (P^{h->h'} g)(S, pi)]| / |g|_{h'}`` over ``g = <theta, phi>``.

    The supremum over ``theta`` equals ``sqrt(m^T Sigma_{h'}^+ m)`` when ``m``
    lies in the range of ``Sigma_{h'}`` and is infinite otherwise.
    """
    psi = _propagated_features(mdp, fm, pi_star, h, hp)
    xi = M.occupation_weights(mdp, pi_star, h)
    nu = xi.sum(axis=1)
    s = np.arange(mdp.n_states)
    m = nu @ (psi[s, pi_star[h - 1]] - psi[s, pi_h])
    if sigma_hp is None:
        sigma_hp = population_covariance(mdp, fm, pi_star, hp)
    if not np.any(m):
        return 0.0
    pinv = linalg.pinvh(sigma_hp)
    resid = m - sigma_hp @ (pinv @ m)
    if np.linalg.norm(resid) > 1e-9 * (1.0 + np.linalg.norm(m)):
        return np.inf
    return float(np.sqrt(max(m @ pinv @ m, 0.0)))


def stability_coefficients_sampled(mdp: M.TabularMDP, fm: ArrayFeatures, trials: int,
                                   rng: np.random.Generator, radius=None, beta_norms=1.0,
                                   functions=None) -> StabilityEstimate:
    """Maximum observed stability ratios over random members of the neighborhood.

    Each draw is ``f_h = q*_h + <theta_h, phi>`` with ``theta_h`` Gaussian,
    rescaled so that the linear metric to ``q*_h`` is a uniform fraction of
    ``radius[h-1]`` (default: the admissible radius with the log factor).
    ``functions`` replaces the random draws with explicit StageQ arrays.
    Draws with a zero denominator are skipped.
    """
    H, S, A = mdp.rewards.shape
    q_star = M.exact_optimal_q(mdp)
    pi_star = M.greedy_policy(q_star)
    d = fm.dim
    beta = np.broadcast_to(np.asarray(beta_norms, dtype=float), (H,))
    if radius is None:
        radius = [neighborhood_radius(H, h, log_factor=True) for h in range(1, H + 1)]
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (H,))
    q_norms = np.array([M.occupancy_norm(mdp, pi_star, q_star[i], i + 1) for i in range(H)])
    sigmas = [population_covariance(mdp, fm, pi_star, h) for h in range(1, H + 1)]

    if functions is None:
        def draws():
            for _ in range(trials):
                f = q_star.copy()
                for i in range(H):
                    g = fm.table @ rng.standard_normal(d)
                    gn = M.occupancy_norm(mdp, pi_star, g, i + 1)
                    if gn == 0 or q_norms[i] == 0:
                        continue
                    target = rng.uniform() * radius[i] * q_norms[i] / (np.sqrt(d) * beta[i])
                    f[i] += g * (target / gn)
                yield f
        source = draws()
    else:
        source = iter(functions)
        trials = len(functions)

    ks = np.full(H - 1, np.nan)
    kx = np.full((H, H), np.nan)
    ks_trace = np.full((trials, H - 1), np.nan)
    kx_trace = np.full((trials, H, H), np.nan)
    used = 0
    for t, f in enumerate(source):
        f = np.asarray(f, dtype=float)
        any_used = False
        for h in range(1, H):
            den = M.occupancy_norm(mdp, pi_star, f[h] - q_star[h], h + 1)
            if den > 0:
                num = M.occupancy_norm(mdp, pi_star, M.apply_optimality_operator(mdp, f[h], h)
                                       - M.apply_optimality_operator(mdp, q_star[h], h), h)
                ks[h - 1] = np.fmax(ks[h - 1], num / den)
                any_used = True
        for h in range(1, H + 1):
            if q_norms[h - 1] == 0:
                continue
            rel = M.occupancy_norm(mdp, pi_star, f[h - 1] - q_star[h - 1], h) / q_norms[h - 1]
            if rel == 0:
                continue
            pi_h = np.argmax(f[h - 1], axis=1)
            for hp in range(h, H + 1):
                sup = occupation_stability_sup(mdp, fm, pi_star, pi_h, h, hp, sigmas[hp - 1])
                kx[h - 1, hp - 1] = np.fmax(kx[h - 1, hp - 1], sup / rel)
            any_used = True
        used += any_used
        ks_trace[t] = ks
        kx_trace[t] = kx
    if used == 0:
        raise EstimationError("every draw had a zero denominator")
    return StabilityEstimate(ks, kx, ks_trace, kx_trace, used, trials)


# ---------------------------------------------------------------------------
# disk example


@dataclass
class DiskInstance:
    """Greedy features ``s + rho w / |w|`` on the disk of radius ``rho`` around ``s``."""

    w: np.ndarray
    w_star: np.ndarray
    rho: float
    sigma: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(2))
    state: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.w_star = np.asarray(self.w_star, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.state = np.asarray(self.state, dtype=float)
        if np.linalg.norm(self.w_star) == 0 or np.linalg.norm(self.w) == 0:
            raise DomainError("weights must be nonzero")
        if not 0 < self.rho <= 0.5:
            raise DomainError("rho must lie in (0, 1/2]")


@dataclass
class DiskReport:
    angle: float
    feature_gap: float
    value_gap: float
    lipschitz_ok: bool
    quadratic_ok: bool
    angle_ok: bool
    curv1_ratio: float
    curv2_ratio: float
    curv1_ok: bool
    curv2_ok: bool
    sandwich_ok: bool

    @property
    def all_ok(self) -> bool:
        return (self.lipschitz_ok and self.quadratic_ok and self.angle_ok
                and self.curv1_ok and self.curv2_ok)


def disk_curvature_check(inst: DiskInstance, tol: float = 1e-12) -> DiskReport:
    """Evaluate the disk inequalities and both curvature conditions with ``beta = 16 sqrt(2) rho``."""
    w, ws, rho = inst.w, inst.w_star, inst.rho
    d = 2
    nw, nws = np.linalg.norm(w), np.linalg.norm(ws)
    phi = inst.state + rho * w / nw
    phi_s = inst.state + rho * ws / nws
    angle = float(np.arctan2(abs(w[0] * ws[1] - w[1] * ws[0]), w @ ws))
    fgap = float(np.linalg.norm(phi - phi_s))
    vgap = float(w @ (phi - phi_s))
    slack = tol * (1.0 + rho)
    lipschitz_ok = fgap <= rho * angle + slack
    quadratic_ok = abs(vgap) <= 0.5 * rho * nw * angle**2 + tol * (1.0 + nw)
    ratio = np.linalg.norm(w - ws) / nws
    angle_ok = ratio <= 1.0 and angle <= np.arcsin(min(ratio, 1.0)) + tol

    beta = 16.0 * np.sqrt(2.0) * rho
    sig_inv = np.linalg.inv(inst.sigma)
    dphi = phi - phi_s
    dw = w - ws
    lhs1 = float(np.sqrt(dphi @ sig_inv @ dphi))
    norm_ws = float(np.sqrt(ws @ inst.sigma @ ws))
    rel = float(np.sqrt(dw @ inst.sigma @ dw)) / norm_ws
    rhs1 = beta * np.sqrt(d) * rel
    rhs2 = beta * np.sqrt(d) * norm_ws * rel**2
    ev = np.linalg.eigvalsh(inst.sigma)
    sandwich_ok = bool(ev[0] >= 1 / (2 * d) - 1e-15 and ev[-1] <= 2 / d + 1e-15)
    return DiskReport(
        angle=angle, feature_gap=fgap, value_gap=vgap,
        lipschitz_ok=bool(lipschitz_ok), quadratic_ok=bool(quadratic_ok), angle_ok=bool(angle_ok),
        curv1_ratio=lhs1 / rhs1 if rhs1 > 0 else (0.0 if lhs1 == 0 else np.inf),
        curv2_ratio=vgap / rhs2 if rhs2 > 0 else (0.0 if vgap == 0 else np.inf),
        curv1_ok=bool(lhs1 <= rhs1 + slack), curv2_ok=bool(vgap <= rhs2 + tol * (1.0 + nw)),
        sandwich_ok=sandwich_ok,
    )


def random_disk_instance(rng: np.random.Generator) -> DiskInstance:
    """Random instance with ``|w - w*| <= |w*|`` and a state inside the radius-1/2 disk."""
    rho = rng.uniform(1e-3, 0.5)
    ws = rng.standard_normal(2) * np.exp(rng.uniform(-2, 2))
    r = np.linalg.norm(ws) * np.sqrt(rng.uniform()) * 0.999999
    ang = rng.uniform(0, 2 * np.pi)
    w = ws + r * np.array([np.cos(ang), np.sin(ang)])
    s_r = 0.5 * np.sqrt(rng.uniform())
    s_a = rng.uniform(0, 2 * np.pi)
    return DiskInstance(w, ws, rho, state=s_r * np.array([np.cos(s_a), np.sin(s_a)]))


# ---------------------------------------------------------------------------
# quadratic-scaling family


@dataclass
class QuadraticActionMDP:
    """Tabular MDP on an action grid in ``[-1, 1]`` whose Q-functions are quadratic in ``a``."""

    mdp: M.TabularMDP
    grid: np.ndarray
    features: ArrayFeatures


def quadratic_action_mdp(rng: np.random.Generator, n_states: int = 3, horizon: int = 3,
                         n_actions: int = 2001, curvature=(0.2, 0.6)) -> QuadraticActionMDP:
    """Rewards concave quadratic in ``a``; transitions a convex mix linear in ``a``.

    Because ``r_h(s, .)`` is quadratic and ``P_h(. | s, a)`` is affine in
    ``a``, every optimal Q-function lies in the span of
    ``e_s (x) (1, a, a^2)``.
    """
    S, H = n_states, horizon
    a = np.linspace(-1.0, 1.0, n_actions)
    c = rng.uniform(*curvature, size=(H, S))
    peak = rng.uniform(-0.4, 0.4, size=(H, S))
    base = rng.uniform(0.0, 1.0, size=(H, S))
    r = base[..., None] - c[..., None] * (a - peak[..., None]) ** 2
    lo = rng.dirichlet(np.ones(S), size=(H - 1, S))
    hi = rng.dirichlet(np.ones(S), size=(H - 1, S))
    mix = 0.5 * (1.0 + a)
    P = (1.0 - mix)[None, None, :, None] * lo[:, :, None, :] + mix[None, None, :, None] * hi[:, :, None, :]
    mu = rng.dirichlet(np.ones(S))
    mdp = M.TabularMDP(P, r, mu)
    poly = np.stack([np.ones_like(a), a, a * a], axis=1)
    table = np.zeros((S, n_actions, 3 * S))
    for s in range(S):
        table[s, :, 3 * s:3 * s + 3] = poly
    return QuadraticActionMDP(mdp, a, ArrayFeatures(table))


@dataclass
class ScalingFamily:
    t: np.ndarray
    eps_total: np.ndarray
    gaps: np.ndarray
    slope: float
    in_neighborhood: bool
    eps: np.ndarray


def quadratic_scaling_family(inst: QuadraticActionMDP, rng: np.random.Generator,
                             scales=(1.0, 0.5, 0.25, 0.125), size: float = 0.05,
                             beta_norm: float = 1.0) -> ScalingFamily:
    """Value gaps and exact residuals for ``q_hat = q* + t Delta`` over ``t``.

    ``Delta_h`` is a random quadratic in ``a`` per state for stages 1..H-1
    and zero at the last stage, so ``q_hat_H = r_H``.  The slope is the
    least-squares slope of ``log gap`` on ``log sum_h eps_h``.
    Membership in the neighborhood is checked for the largest ``t`` with
    the linear metric and the log-factor radius.
    """
    mdp = inst.mdp
    H, S, _ = mdp.rewards.shape
    q_star = M.exact_optimal_q(mdp)
    pi_star = M.greedy_policy(q_star)
    j_star = M.policy_value(mdp, pi_star)
    theta = rng.uniform(-1.0, 1.0, size=(H, inst.features.dim)) * size
    theta[H - 1] = 0.0
    delta = np.stack([inst.features.q_table(th) for th in theta])
    d = inst.features.dim
    q_norms = np.array([M.occupancy_norm(mdp, pi_star, q_star[i], i + 1) for i in range(H)])
    scales = np.asarray(scales, dtype=float)
    eps_all = np.empty((scales.size, H))
    gaps = np.empty(scales.size)
    inside = True
    for k, t in enumerate(scales):
        q_hat = q_star + t * delta
        res = M.bellman_residuals(mdp, q_hat)
        eps_all[k, :H - 1] = [M.occupancy_norm(mdp, pi_star, res[i], i + 1) for i in range(H - 1)]
        eps_all[k, H - 1] = 0.0
        gaps[k] = j_star - M.policy_value(mdp, M.greedy_policy(q_hat))
        if t == scales.max():
            for h in range(1, H + 1):
                diff = M.occupancy_norm(mdp, pi_star, q_hat[h - 1] - q_star[h - 1], h)
                if linear_metric(diff, beta_norm, q_norms[h - 1], d) > neighborhood_radius(H, h, log_factor=True):
                    inside = False
    tot = eps_all.sum(axis=1)
    ok = gaps > 0
    slope = np.nan
    if ok.sum() >= 2:
        slope = float(np.polyfit(np.log(tot[ok]), np.log(gaps[ok]), 1)[0])
    return ScalingFamily(scales, tot, gaps, slope, inside, eps_all)
