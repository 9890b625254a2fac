"""Count likelihoods for the five competing models.

Shared-lead-time models (SsbParams): a group of `mass` individuals
shares one latent Weibull lead time U; an individual in the responsive
phase (probability eta) acts within s hours of the lead time with
probability expit(alpha + beta * s), which has an atom expit(alpha) at
s = 0.  Observing the group at time t therefore yields a binomial count
with success probability eta * expit(alpha + beta * (t - u)) mixed over
u, plus a lump of probability exp(-(t/lam)**gamma) on zero from groups
whose lead time has not arrived.

Plain logistic models replace t - u by t (no lead time); the
random-effects variant instead draws (alpha, beta) per group from a
bivariate normal.

Everything is computed in log space.  Binomial kernels are shifted by
their maximum over the achievable range of z = alpha + beta * (t - u)
before exponentiating, so counts whose probability underflows a double
still return a finite log-likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit, gammaln, log_expit, logit, logsumexp

from .core import CountDataset, ReParams, SsbParams
from .errors import DomainError
from .quadrature import (QuadConfig, DEFAULT_QUAD, integrate_weibull,
                         weibull_logsf)

__all__ = [
    "CountPmf",
    "McCountPmf",
    "ssb_count_loglik",
    "ssb_dataset_loglik",
    "frozen_dataset_loglik",
    "marginal_count_pmf",
    "delta_factor",
    "lrm_count_logpmf",
    "lrm_loglik",
    "re_loglik",
    "mc_count_pmf",
]


@dataclass(frozen=True)
class CountPmf:
    """Distribution of the count at one time: probs[k] = Pr[N(t) = k]."""

    t: float
    probs: np.ndarray
    converged: bool = True

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).copy()
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class McCountPmf:
    """Monte Carlo estimate of a count pmf with per-component standard
    errors."""

    t: float
    probs: np.ndarray
    se: np.ndarray
    n_sims: int


def _log_success(z, eta: float):
    """log(eta * expit(z)) elementwise."""
    if eta >= 1.0:
        return log_expit(z)
    return math.log(eta) + log_expit(z)


def _log_failure(z, eta: float):
    """log(1 - eta * expit(z)) elementwise, stable at both tails."""
    if eta >= 1.0:
        return log_expit(-np.asarray(z, dtype=float))
    return np.log1p(-eta * expit(z))


def _binom_kernel_peak(alpha: float, beta: float, t: float,
                       mass: int, k: int, eta: float) -> float:
    """max over u in [0, t] of k*log(eta p) + (mass-k)*log(1 - eta p)
    where p = expit(alpha + beta*(t-u)).

    The kernel is unimodal in z = alpha + beta*(t-u) with its maximum at
    eta*p = k/mass, so the peak sits at logit(k/(mass*eta)) clamped to
    the achievable range [alpha, alpha + beta*t].
    """
    z_lo, z_hi = alpha, alpha + beta * t
    if k == 0:
        zs = z_lo
    elif k >= mass * eta:
        zs = z_hi
    else:
        zs = min(max(float(logit(k / (mass * eta))), z_lo), z_hi)
    ls = float(_log_success(np.float64(zs), eta)) if k > 0 else 0.0
    lf = float(_log_failure(np.float64(zs), eta)) if k < mass else 0.0
    return k * ls + (mass - k) * lf


def _log_binom_coef(mass: int, k: int) -> float:
    return float(gammaln(mass + 1) - gammaln(k + 1) - gammaln(mass - k + 1))


def _check_obs(mass: int, t: float, k: int) -> None:
    if not (t > 0 and math.isfinite(t)):
        raise DomainError(f"observation time must be > 0, got {t!r}")
    if not (0 <= k <= mass):
        raise DomainError(f"count {k} outside [0, {mass}]")


def _kernel_breakpoints(alpha: float, beta: float, t: float,
                        mass: int, k: int, eta: float):
    """u values resolving the binomial kernel's sharp region, or None.

    For 0 < k < mass*eta the kernel peaks at z* = logit(k/(mass*eta)),
    i.e. u* = t - (z* - alpha)/beta, with curvature scale sigma_z of
    order 1/sqrt(mass q (1-q)).  When the peak falls at or beyond the
    z ceiling alpha + beta*t the kernel instead decays from u = 0 on a
    length set by its log-slope there.  For large mass either feature is
    far narrower than the default mesh; handing its location to the
    quadrature saves the subdivisions otherwise spent finding it.
    """
    if k <= 0:
        return None
    q = k / (mass * eta)
    z_hi = alpha + beta * t
    if 0.0 < q < 1.0:
        z_star = float(logit(q))
        if z_star < z_hi:
            u_star = t - (z_star - alpha) / beta
            sigma_u = 1.0 / (math.sqrt(mass * q * (1.0 - q)) * beta)
            return tuple(u_star + c * sigma_u
                         for c in (-8.0, -2.0, 0.0, 2.0, 8.0))
    # peak clamped to u = 0: exponential falloff with rate
    # beta * d/dz [k log(eta p) + (mass-k) log(1 - eta p)] at z_hi
    p_hi = float(expit(z_hi))
    slope = k * (1.0 - p_hi)
    if k < mass:
        slope -= (mass - k) * eta * p_hi * (1.0 - p_hi) / (1.0 - eta * p_hi)
    slope *= beta
    if slope <= 0.0:
        return None
    ell = 1.0 / slope
    return tuple(ell * c for c in (0.25, 1.0, 4.0, 16.0, 64.0))


def _count_loglik_impl(p: SsbParams, mass: int, t: float, k: int,
                       cfg: QuadConfig, panels=None):
    """Returns (loglik, converged, panels_used)."""
    _check_obs(mass, t, k)
    a, b, lam, gam, eta = p.alpha, p.beta, p.lam, p.gamma, p.eta
    if eta == 0.0:
        # nobody ever acts: the count is 0 with probability one
        return ((0.0 if k == 0 else -np.inf), True, ())

    def kernel(u: np.ndarray, shift: float) -> np.ndarray:
        z = a + b * (t - u)
        lg = (mass - k) * _log_failure(z, eta)
        if k > 0:
            lg = lg + k * _log_success(z, eta)
        return np.exp(lg - shift)

    shift = _binom_kernel_peak(a, b, t, mass, k, eta)
    breaks = None if panels is not None else _kernel_breakpoints(
        a, b, t, mass, k, eta)
    res = integrate_weibull(lambda u: kernel(u, shift), lam, gam, t,
                            cfg, panels=panels, breakpoints=breaks)
    log_int = (shift + math.log(res.value)) if res.value > 0.0 else -np.inf
    if k == 0:
        ll = float(np.logaddexp(weibull_logsf(t, lam, gam), log_int))
    else:
        ll = _log_binom_coef(mass, k) + log_int
    return ll, res.converged, res.panels


def ssb_count_loglik(params: SsbParams, mass: int, t: float, k: int,
                     config: Optional[QuadConfig] = None) -> float:
    """log Pr[N(t) = k] for one group of `mass` under the shared-lead-
    time model.  Returns -inf when the probability is exactly zero
    (eta = 0 with k > 0)."""
    cfg = config or DEFAULT_QUAD
    ll, _, _ = _count_loglik_impl(params, mass, t, k, cfg)
    return ll


def ssb_dataset_loglik(params: SsbParams, data: CountDataset,
                       config: Optional[QuadConfig] = None) -> float:
    """Sum of ssb_count_loglik over all observations (0 for an empty
    dataset)."""
    cfg = config or DEFAULT_QUAD
    total = 0.0
    for t, ks, mult in data.grouped():
        for k, m in zip(ks, mult):
            ll, _, _ = _count_loglik_impl(params, data.mass, t, int(k), cfg)
            total += float(m) * ll
    return total


def frozen_dataset_loglik(params: SsbParams, data: CountDataset,
                          config: Optional[QuadConfig] = None,
                          free_eta: bool = False) -> Callable[[np.ndarray], float]:
    """Build a dataset log-likelihood with quadrature meshes frozen at
    `params`.

    The returned callable maps a parameter vector (alpha, beta, lambda,
    gamma) -- plus eta if free_eta -- to the log-likelihood, evaluating
    every integral on the panel layout the adaptive rule chose at the
    anchor point.  Freezing the mesh makes the map smooth, which keeps
    finite-difference Hessians clean; re-adapting at each perturbed
    point would move panel boundaries discontinuously.
    """
    cfg = config or DEFAULT_QUAD
    frozen: dict[tuple[float, int], tuple] = {}
    for t, ks, _ in data.grouped():
        for k in ks:
            _, _, panels = _count_loglik_impl(params, data.mass, t, int(k), cfg)
            frozen[(t, int(k))] = panels

    def loglik(theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        eta = float(theta[4]) if free_eta else params.eta
        try:
            p = SsbParams(alpha=float(theta[0]), beta=float(theta[1]),
                          lam=float(theta[2]), gamma=float(theta[3]), eta=eta)
        except DomainError:
            return -np.inf
        total = 0.0
        for t, ks, mult in data.grouped():
            for k, m in zip(ks, mult):
                ll, _, _ = _count_loglik_impl(p, data.mass, t, int(k), cfg,
                                              panels=frozen[(t, int(k))])
                total += float(m) * ll
        return total

    return loglik


def marginal_count_pmf(params: SsbParams, mass: int, t: float,
                       config: Optional[QuadConfig] = None) -> CountPmf:
    """Pr[N(t) = k] for k = 0..mass.  The entries are each computed by
    adaptive quadrature and sum to 1 up to quadrature tolerance."""
    cfg = config or DEFAULT_QUAD
    probs = np.empty(mass + 1)
    ok = True
    for k in range(mass + 1):
        ll, conv, _ = _count_loglik_impl(params, mass, t, k, cfg)
        probs[k] = math.exp(ll) if ll > -np.inf else 0.0
        ok = ok and conv
    return CountPmf(t=float(t), probs=probs, converged=ok)


def delta_factor(params: SsbParams, mass: int, t: float,
                 config: Optional[QuadConfig] = None) -> float:
    """The overlap term Delta(t) = int_0^t (1 - p(z))**mass f_U(u) du
    with p = expit(alpha + beta*(t-u)): the probability that the lead
    time has passed yet nobody has acted (eta plays no role; the
    identities it enters hold for the eta = 1 model).

    Links the latent CDF to observables:  Pr[U < t] = Pr[N(t) > 0] +
    Delta(t)  and  Pr[N(t) = 0] = Pr[U >= t] + Delta(t).
    """
    _check_obs(mass, t, 0)
    cfg = config or DEFAULT_QUAD
    a, b = params.alpha, params.beta
    shift = mass * float(_log_failure(np.float64(a), 1.0))

    def g(u: np.ndarray) -> np.ndarray:
        z = a + b * (t - u)
        return np.exp(mass * _log_failure(z, 1.0) - shift)

    res = integrate_weibull(g, params.lam, params.gamma, t, cfg)
    return math.exp(shift) * res.value


# ---------------------------------------------------------------------------
# plain logistic (no lead time)


def lrm_count_logpmf(alpha: float, beta: float, eta: float,
                     mass: int, t, k):
    """log Pr[N(t) = k] under the logistic response in chronological
    time: N(t) ~ Binomial(mass, eta * expit(alpha + beta * t)).
    Broadcasts over arrays of t and k."""
    t = np.asarray(t, dtype=float)
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k > mass):
        raise DomainError("count outside [0, mass]")
    z = alpha + beta * t
    logc = gammaln(mass + 1) - gammaln(k + 1) - gammaln(mass - k + 1)
    if eta == 0.0:
        out = np.where(k == 0, 0.0, -np.inf)
        return float(out) if out.ndim == 0 else out
    with np.errstate(invalid="ignore"):
        succ = np.where(k > 0, k * _log_success(z, eta), 0.0)
        fail = np.where(k < mass, (mass - k) * _log_failure(z, eta), 0.0)
    out = logc + succ + fail
    return float(out) if out.ndim == 0 else out


def lrm_loglik(alpha: float, beta: float, data: CountDataset,
               eta: float = 1.0) -> float:
    """Dataset log-likelihood of the plain logistic model (closed
    form)."""
    total = 0.0
    for t, ks, mult in data.grouped():
        lls = lrm_count_logpmf(alpha, beta, eta, data.mass, t, ks)
        total += float(np.dot(mult, lls))
    return total


# ---------------------------------------------------------------------------
# random-effects logistic


def _re_obs_loglik(mz: float, vz: float, mass: int, k: int, eta: float,
                   gh_x: np.ndarray, gh_logw: np.ndarray) -> float:
    """log E[Binom(k; mass, eta*expit(Z))] for Z ~ N(mz, vz), by
    Gauss-Hermite recentered on the integrand's mode.

    For large mass the binomial kernel is far narrower than the normal,
    so a rule centered on the normal's mean puts no nodes under the
    kernel.  Centering on the mode of log-normal-density + log-kernel
    (found by a grid scan plus safeguarded Newton steps) and scaling by
    the curvature there makes a modest fixed order accurate."""

    def logh(z):
        z = np.asarray(z, dtype=float)
        out = -0.5 * (z - mz) ** 2 / vz
        out = out + (mass - k) * _log_failure(z, eta)
        if k > 0:
            out = out + k * _log_success(z, eta)
        return out

    sd = math.sqrt(vz)
    grid = mz + sd * np.linspace(-8.0, 8.0, 81)
    if 0 < k < mass * eta:
        grid = np.append(grid, float(logit(k / (mass * eta))))
    m0 = float(grid[int(np.argmax(logh(grid)))])
    # a few damped Newton steps via central differences
    h = 1e-5 * max(sd, 1.0)
    for _ in range(8):
        f0, fp, fm = logh([m0, m0 + h, m0 - h])
        g1 = (fp - fm) / (2.0 * h)
        g2 = (fp - 2.0 * f0 + fm) / (h * h)
        if g2 >= 0.0:
            break
        step = -g1 / g2
        step = max(-4.0 * sd, min(4.0 * sd, step))
        m1 = m0 + step
        if logh(m1) >= f0:
            m0 = m1
        if abs(step) < 1e-10 * max(1.0, abs(m0)):
            break
    f0, fp, fm = logh([m0, m0 + h, m0 - h])
    g2 = (fp - 2.0 * f0 + fm) / (h * h)
    scale = math.sqrt(-1.0 / g2) if g2 < 0.0 else sd
    z_n = m0 + math.sqrt(2.0) * scale * gh_x
    lse = float(logsumexp(gh_logw + gh_x ** 2 + logh(z_n)))
    return (lse + math.log(scale) + 0.5 * math.log(2.0)
            - 0.5 * math.log(2.0 * math.pi * vz))


def _re_batch_loglik(mz: np.ndarray, vz: np.ndarray, ks: np.ndarray,
                     mass: int, eta: float, gh_x: np.ndarray,
                     gh_logw: np.ndarray) -> np.ndarray:
    """Vectorized _re_obs_loglik: one row per (mz, vz, k) entry, the
    same grid scan, damped Newton mode search, and mode-centered
    Gauss-Hermite rule applied to all rows at once.  Per-row arithmetic
    is identical to the scalar path; the loop state (a frozen row, a
    rejected step) becomes latched masks."""
    mz = np.asarray(mz, dtype=float)
    vz = np.asarray(vz, dtype=float)
    k1 = np.asarray(ks, dtype=float)
    n = mz.size
    kcol = k1[:, None]

    def logh(z):
        out = -0.5 * (z - mz[:, None]) ** 2 / vz[:, None]
        out = out + (mass - kcol) * _log_failure(z, eta)
        with np.errstate(invalid="ignore"):
            contrib = kcol * _log_success(z, eta)
        return out + np.where(kcol > 0, contrib, 0.0)

    sd = np.sqrt(vz)
    grid = mz[:, None] + sd[:, None] * np.linspace(-8.0, 8.0, 81)[None, :]
    at_peak = (k1 > 0) & (k1 < mass * eta)
    with np.errstate(divide="ignore"):
        peak = logit(np.clip(k1 / (mass * eta), 1e-15, 1.0 - 1e-15))
    grid = np.concatenate([grid, np.where(at_peak, peak, mz)[:, None]],
                          axis=1)
    lg = logh(grid)
    m0 = grid[np.arange(n), np.argmax(lg, axis=1)]

    h = 1e-5 * np.maximum(sd, 1.0)
    done = np.zeros(n, dtype=bool)
    for _ in range(8):
        f0, fp, fm = logh(np.stack([m0, m0 + h, m0 - h], axis=1)).T
        g1 = (fp - fm) / (2.0 * h)
        g2 = (fp - 2.0 * f0 + fm) / (h * h)
        done |= g2 >= 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.clip(-g1 / g2, -4.0 * sd, 4.0 * sd)
        m1 = m0 + step
        f1 = logh(m1[:, None])[:, 0]
        m0 = np.where(~done & (f1 >= f0), m1, m0)
        done |= np.abs(step) < 1e-10 * np.maximum(1.0, np.abs(m0))
        if bool(np.all(done)):
            break
    f0, fp, fm = logh(np.stack([m0, m0 + h, m0 - h], axis=1)).T
    g2 = (fp - 2.0 * f0 + fm) / (h * h)
    neg = g2 < 0.0
    scale = np.where(neg, np.sqrt(-1.0 / np.where(neg, g2, -1.0)), sd)
    z_n = m0[:, None] + math.sqrt(2.0) * scale[:, None] * gh_x[None, :]
    lse = logsumexp(gh_logw[None, :] + gh_x[None, :] ** 2 + logh(z_n),
                    axis=1)
    return (lse + np.log(scale) + 0.5 * math.log(2.0)
            - 0.5 * np.log(2.0 * math.pi * vz))


def re_loglik(params: ReParams, data: CountDataset,
              config: Optional[QuadConfig] = None) -> float:
    """Dataset log-likelihood when each group draws its own
    (alpha, beta) from N(mean, cov).

    Each observation depends on the pair only through z = a + b*t, which
    is itself normal, so the double integral collapses to one dimension
    per observation; that integral is done by mode-centered
    Gauss-Hermite (see _re_obs_loglik, batched across observations in
    _re_batch_loglik) with the node sum in log space so deep tails
    cannot underflow."""
    cfg = config or DEFAULT_QUAD
    gh_x, gh_w = hermgauss(int(cfg.gh_nodes))
    gh_logw = np.log(gh_w)
    mass = data.mass
    eta = params.eta
    s1, s2, rho = params.sigma1, params.sigma2, params.rho
    total = 0.0
    mzs, vzs, kss, mults, logcs = [], [], [], [], []
    for t, ks, mult in data.grouped():
        mz = params.mu1 + params.mu2 * t
        vz = s1 * s1 + 2.0 * rho * s1 * s2 * t + (s2 * t) ** 2
        for k, m in zip(ks, mult):
            k = int(k)
            if eta == 0.0:
                total += float(m) * (0.0 if k == 0 else -np.inf)
                continue
            mzs.append(mz)
            vzs.append(vz)
            kss.append(k)
            mults.append(float(m))
            logcs.append(_log_binom_coef(mass, k))
    if kss:
        ll = _re_batch_loglik(np.asarray(mzs), np.asarray(vzs),
                              np.asarray(kss), mass, eta, gh_x, gh_logw)
        total += float(np.dot(np.asarray(mults), ll + np.asarray(logcs)))
    return float(total)


# ---------------------------------------------------------------------------
# Monte Carlo check of the count distribution


def mc_count_pmf(params: SsbParams, mass: int, t: float, n_sims: int,
                 seed: int, chunk_size: Optional[int] = None) -> McCountPmf:
    """Estimate Pr[N(t) = k] by direct simulation of the data-generating
    process: draw the shared lead time, per-individual phase, and
    per-individual action delay, count how many acted by t.

    This shares no code with the quadrature path, so it serves as an
    independent check of every analytic probability.
    """
    from .simulation import action_time_from_uniform, lead_time_from_uniform

    _check_obs(mass, t, 0)
    if n_sims < 1:
        raise DomainError("n_sims must be >= 1")
    rng = np.random.default_rng(seed)
    if chunk_size is None:
        chunk_size = max(1, int(4.0e7 // max(mass, 1)))
    hist = np.zeros(mass + 1, dtype=np.int64)
    left = int(n_sims)
    while left > 0:
        b = min(left, chunk_size)
        u = lead_time_from_uniform(params.lam, params.gamma, rng.random(b))
        phase = rng.random((b, mass)) < params.eta
        s = action_time_from_uniform(params.alpha, params.beta,
                                     rng.random((b, mass)))
        acted = phase & (s <= (t - u)[:, None])
        hist += np.bincount(acted.sum(axis=1), minlength=mass + 1)
        left -= b
    p = hist / float(n_sims)
    se = np.sqrt(p * (1.0 - p) / float(n_sims))
    return McCountPmf(t=float(t), probs=p, se=se, n_sims=int(n_sims))
