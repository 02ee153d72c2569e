"""Nonlinear least-squares and maximum-likelihood fits for the analysis chain.

Three fit families:
  * tanh/sech flight fits, Z = a + b tanh(t/tau + c) and
    X = a' + b' sech(t/tau' + c'), by damped least squares with analytic
    Jacobians (independent parameter sets, unweighted residuals);
  * two-exponential dwell-time mixtures by EM maximum likelihood on the raw
    samples (histograms are for display only);
  * equal-width bi-Gaussian pointer histograms on the I quadrature, giving
    the record SNR |(mean_B - mean_notB) / (2 sigma)|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LM_MAX_ITER = 200
LM_REL_STEP = 1e-8


class FitError(RuntimeError):
    pass


def lm_least_squares(residual, jacobian, x0: np.ndarray,
                     max_iter: int = LM_MAX_ITER, rel_step: float = LM_REL_STEP,
                     validate=None) -> tuple[np.ndarray, np.ndarray, int]:
    """Damped (Levenberg-Marquardt style) least squares.

    Minimizes |residual(x)|^2; `jacobian` returns d residual / d x.  Steps
    that `validate` rejects (e.g. a non-positive time constant) count as
    failed and raise the damping.  Returns (x, covariance, n_iter), the
    covariance being sigma^2 (J^T J)^-1 at the optimum with
    sigma^2 = SSR / (n - p).
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual(x)
    cost = float(r @ r)
    lam = 1e-3
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        jac = jacobian(x)
        grad = jac.T @ r
        hess = jac.T @ jac
        accepted = False
        for _ in range(60):
            damped = hess + lam * np.diag(np.maximum(np.diag(hess), 1e-12))
            try:
                step = np.linalg.solve(damped, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + step
            if validate is not None and not validate(x_new):
                lam *= 10.0
                continue
            r_new = residual(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
            if lam > 1e14:
                break
        if not accepted:
            break
        rel = np.linalg.norm(step) / max(np.linalg.norm(x), 1e-30)
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 3.0, 1e-14)
        if rel < rel_step:
            break
    else:
        raise FitError(f"no convergence in {max_iter} iterations")
    jac = jacobian(x)
    hess = jac.T @ jac
    dof = max(len(r) - len(x), 1)
    sigma2 = cost / dof
    try:
        cov = sigma2 * np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov = np.full((len(x), len(x)), np.nan)
    return x, cov, n_iter


# tanh / sech flight fits

@dataclass(frozen=True)
class TanhSechFit:
    a: float
    b: float
    c: float
    tau: float
    a_prime: float
    b_prime: float
    c_prime: float
    tau_prime: float
    a_err: float = 0.0
    b_err: float = 0.0
    c_err: float = 0.0
    tau_err: float = 0.0
    a_prime_err: float = 0.0
    b_prime_err: float = 0.0
    c_prime_err: float = 0.0
    tau_prime_err: float = 0.0

    def __post_init__(self):
        if self.tau <= 0 or self.tau_prime <= 0:
            raise FitError("time constants must be positive")

    def z_model(self, t: np.ndarray) -> np.ndarray:
        return self.a + self.b * np.tanh(t / self.tau + self.c)

    def x_model(self, t: np.ndarray) -> np.ndarray:
        return self.a_prime + self.b_prime / np.cosh(t / self.tau_prime + self.c_prime)

    def z_zero_crossing(self) -> float:
        """Time at which the fitted Z crosses zero (the mid-flight time)."""
        arg = -self.a / self.b
        if not -1.0 < arg < 1.0:
            raise FitError("fitted Z never crosses zero")
        return (math.atanh(arg) - self.c) * self.tau


def tanh_model(t: np.ndarray, prm: np.ndarray) -> np.ndarray:
    a, b, c, tau = prm
    return a + b * np.tanh(t / tau + c)


def tanh_jacobian(t: np.ndarray, prm: np.ndarray) -> np.ndarray:
    a, b, c, tau = prm
    u = t / tau + c
    sech2 = 1.0 / np.cosh(u) ** 2
    return np.column_stack([np.ones_like(t), np.tanh(u),
                            b * sech2, -b * sech2 * t / tau**2])


def sech_model(t: np.ndarray, prm: np.ndarray) -> np.ndarray:
    a, b, c, tau = prm
    return a + b / np.cosh(t / tau + c)


def sech_jacobian(t: np.ndarray, prm: np.ndarray) -> np.ndarray:
    a, b, c, tau = prm
    u = t / tau + c
    sech = 1.0 / np.cosh(u)
    st = sech * np.tanh(u)
    return np.column_stack([np.ones_like(t), sech,
                            -b * st, b * st * t / tau**2])


def _tanh_seed(t: np.ndarray, z: np.ndarray) -> np.ndarray:
    lo = float(np.mean(z[:max(len(z) // 8, 1)]))
    hi = float(np.mean(z[-max(len(z) // 8, 1):]))
    b0 = 0.5 * (hi - lo)
    a0 = 0.5 * (hi + lo)
    if abs(b0) < 1e-3:
        raise FitError("degenerate tomogram: no Z transition to fit")
    zc = z - a0
    sign_change = np.nonzero(np.diff(np.sign(zc)))[0]
    t_mid = float(t[sign_change[0]]) if sign_change.size else float(np.median(t))
    # 25-75% rise levels of a tanh are at +-0.5493 in its argument
    lev25, lev75 = a0 - 0.5 * b0, a0 + 0.5 * b0
    i25 = np.argmin(np.abs(z - lev25))
    i75 = np.argmin(np.abs(z - lev75))
    rise = abs(float(t[i75] - t[i25]))
    tau0 = max(rise / 1.0986, 0.2 * (t[1] - t[0]) if len(t) > 1 else 0.1)
    return np.array([a0, b0, -t_mid / tau0, tau0])


def _sech_seed(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    a0 = 0.5 * (float(np.mean(x[:max(len(x) // 8, 1)]))
                + float(np.mean(x[-max(len(x) // 8, 1):])))
    k = int(np.argmax(x))
    b0 = float(x[k]) - a0
    if abs(b0) < 1e-3:
        raise FitError("degenerate tomogram: no X peak to fit")
    t_peak = float(t[k])
    half = a0 + 0.5 * b0
    above = np.nonzero(x >= half)[0]
    width = float(t[above[-1]] - t[above[0]]) if above.size >= 2 else 4 * (t[1] - t[0])
    tau0 = max(0.5 * width / 1.3170, 0.2 * (t[1] - t[0]) if len(t) > 1 else 0.1)
    return np.array([a0, b0, -t_peak / tau0, tau0])


def fit_tanh_sech(t, z, x, constrain_a_prime_zero: bool = False) -> TanhSechFit:
    """Fit Z with the tanh form and X with the sech form on a common grid.

    The two parameter sets are independent.  With constrain_a_prime_zero the
    X offset is fixed at zero (dark-drive-off data sets).  Points with NaN in
    either channel are ignored for that channel.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    mz = np.isfinite(z)
    mx = np.isfinite(x)
    if mz.sum() < 8 or mx.sum() < 8:
        raise FitError("need at least 8 finite grid points spanning the transition")

    tz, zz = t[mz], z[mz]
    seed = _tanh_seed(tz, zz)
    pz, cov_z, _ = lm_least_squares(
        lambda prm: tanh_model(tz, prm) - zz,
        lambda prm: tanh_jacobian(tz, prm),
        seed, validate=lambda prm: prm[3] > 0)
    ez = np.sqrt(np.abs(np.diag(cov_z)))

    tx, xx = t[mx], x[mx]
    seed_x = _sech_seed(tx, xx)
    if constrain_a_prime_zero:
        seed3 = seed_x[1:]
        px3, cov_x3, _ = lm_least_squares(
            lambda prm: sech_model(tx, np.concatenate([[0.0], prm])) - xx,
            lambda prm: sech_jacobian(tx, np.concatenate([[0.0], prm]))[:, 1:],
            seed3, validate=lambda prm: prm[2] > 0)
        px = np.concatenate([[0.0], px3])
        ex = np.concatenate([[0.0], np.sqrt(np.abs(np.diag(cov_x3)))])
    else:
        px, cov_x, _ = lm_least_squares(
            lambda prm: sech_model(tx, prm) - xx,
            lambda prm: sech_jacobian(tx, prm),
            seed_x, validate=lambda prm: prm[3] > 0)
        ex = np.sqrt(np.abs(np.diag(cov_x)))

    return TanhSechFit(a=pz[0], b=pz[1], c=pz[2], tau=pz[3],
                       a_prime=px[0], b_prime=px[1], c_prime=px[2], tau_prime=px[3],
                       a_err=ez[0], b_err=ez[1], c_err=ez[2], tau_err=ez[3],
                       a_prime_err=ex[0], b_prime_err=ex[1],
                       c_prime_err=ex[2], tau_prime_err=ex[3])


# dwell-time fits

@dataclass(frozen=True)
class BiExponentialFit:
    rate_fast: float        # 1/us
    rate_slow: float
    weight_fast: float      # fraction of the fast component, in (0, 1)
    rate_fast_err: float
    rate_slow_err: float
    weight_fast_err: float
    log_likelihood: float
    degenerate: bool = False

    def __post_init__(self):
        if not self.degenerate and not self.rate_fast > self.rate_slow > 0:
            raise FitError("bi-exponential fit requires rate_fast > rate_slow > 0")


def _knee_seed(x: np.ndarray) -> tuple[float, float, float]:
    """Two-piece log-linear regression on the dwell histogram, split at the knee."""
    hi = float(np.quantile(x, 0.995))
    edges = np.linspace(0.0, hi, 40)
    counts, edges = np.histogram(x, bins=edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    good = counts > 0
    tc, lc = centers[good], np.log(counts[good])
    if len(tc) < 6:
        return 2.0 / max(float(np.mean(x)), 1e-9), 0.5 / max(float(np.mean(x)), 1e-9), 0.8
    best = None
    tries = range(2, len(tc) - 2)
    for k in tries:
        s1, i1 = np.polyfit(tc[:k], lc[:k], 1)
        s2, i2 = np.polyfit(tc[k:], lc[k:], 1)
        sse = float(((np.polyval([s1, i1], tc[:k]) - lc[:k])**2).sum()
                    + ((np.polyval([s2, i2], tc[k:]) - lc[k:])**2).sum())
        if best is None or sse < best[0]:
            best = (sse, s1, s2)
    _, s1, s2 = best
    r1 = max(-s1, 1e-6)
    r2 = max(-s2, 1e-7)
    if r1 < r2:
        r1, r2 = r2, r1
    if r1 / r2 < 1.5:
        r1, r2 = 2.0 * r1, 0.5 * r2
    return r1, r2, 0.8


def _bi_exp_loglik(x: np.ndarray, r1: float, r2: float, w: float) -> float:
    f = w * r1 * np.exp(-r1 * x) + (1.0 - w) * r2 * np.exp(-r2 * x)
    return float(np.log(f).sum())


def fit_bi_exponential(samples, origin: float | None = None,
                       max_iter: int = 5000) -> BiExponentialFit:
    """EM maximum-likelihood fit of a two-exponential mixture to raw dwells.

    `origin` shifts the samples before fitting (memorylessness makes the
    rates invariant); by default the minimum observed dwell is used.  For
    frame-quantized dwells pass origin = t_int/2 to cancel the half-frame
    discretization bias.  Single-exponential data comes back with the
    degenerate flag set instead of an error.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < 20:
        raise FitError(f"need at least 20 dwell samples, got {len(x)}")
    x = x - (float(x.min()) if origin is None else origin)
    if x.min() < 0:
        raise FitError("origin exceeds the smallest dwell")
    x = np.maximum(x, 0.0)

    r1, r2, w = _knee_seed(x)
    ll = _bi_exp_loglik(x, r1, r2, w)
    for _ in range(max_iter):
        f1 = w * r1 * np.exp(-r1 * x)
        f2 = (1.0 - w) * r2 * np.exp(-r2 * x)
        resp = f1 / (f1 + f2)
        s1 = resp.sum()
        s2 = len(x) - s1
        denom1 = resp @ x
        denom2 = x.sum() - denom1
        if s1 <= 0 or s2 <= 0 or denom1 <= 0 or denom2 <= 0:
            break
        r1 = s1 / denom1
        r2 = s2 / denom2
        w = s1 / len(x)
        if r1 < r2:
            r1, r2, w = r2, r1, 1.0 - w
        ll_new = _bi_exp_loglik(x, r1, r2, w)
        if abs(ll_new - ll) < 1e-10 * max(len(x), 1):
            ll = ll_new
            break
        ll = ll_new

    # observed-information errors via a central-difference Hessian
    prm = np.array([r1, r2, w])
    h = np.array([max(1e-6, 1e-4 * r1), max(1e-7, 1e-4 * r2), 1e-4])

    def ll_at(v):
        return _bi_exp_loglik(x, v[0], v[1], min(max(v[2], 1e-9), 1 - 1e-9))

    hess = np.zeros((3, 3))
    for i in range(3):
        for j in range(i, 3):
            pp = prm.copy(); pp[i] += h[i]; pp[j] += h[j]
            pm = prm.copy(); pm[i] += h[i]; pm[j] -= h[j]
            mp = prm.copy(); mp[i] -= h[i]; mp[j] += h[j]
            mm = prm.copy(); mm[i] -= h[i]; mm[j] -= h[j]
            hess[i, j] = hess[j, i] = \
                (ll_at(pp) - ll_at(pm) - ll_at(mp) + ll_at(mm)) / (4 * h[i] * h[j])
    try:
        cov = np.linalg.inv(-hess)
        errs = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        errs = np.full(3, np.inf)

    degenerate = bool(w < 1e-3 or w > 1 - 1e-3
                      or (r1 - r2) < 2.0 * (errs[0] + errs[1]))
    return BiExponentialFit(rate_fast=r1, rate_slow=r2, weight_fast=w,
                            rate_fast_err=errs[0], rate_slow_err=errs[1],
                            weight_fast_err=errs[2], log_likelihood=ll,
                            degenerate=degenerate)


def fit_exponential(samples, origin: float = 0.0) -> tuple[float, float]:
    """Single-exponential MLE: (time constant, standard error)."""
    x = np.asarray(samples, dtype=float) - origin
    if len(x) < 5:
        raise FitError("need at least 5 dwell samples")
    if x.min() < 0:
        raise FitError("origin exceeds the smallest dwell")
    tc = float(np.mean(x))
    return tc, tc / math.sqrt(len(x))


# pointer-histogram fit

@dataclass(frozen=True)
class BiGaussianFit:
    mean_b: float       # record units, I quadrature
    mean_notb: float
    sigma: float
    weight_b: float
    snr: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise FitError("sigma must be positive")


def fit_bi_gaussian(i_values, max_iter: int = 3000) -> BiGaussianFit:
    """Equal-width two-Gaussian mixture on the I quadrature.

    SNR = |(mean_B - mean_notB) / (sigma_B + sigma_G)|^2 with the shared
    width.  Raises on effectively unimodal data.
    """
    x = np.asarray(i_values, dtype=float)
    if len(x) < 100:
        raise FitError(f"need at least 100 record samples, got {len(x)}")
    mu1 = float(np.quantile(x, 0.9))
    mu2 = float(np.quantile(x, 0.1))
    sig = 0.5 * float(np.std(x))
    w = 0.5
    ll = -np.inf
    for _ in range(max_iter):
        d1 = -0.5 * ((x - mu1) / sig) ** 2
        d2 = -0.5 * ((x - mu2) / sig) ** 2
        f1 = w * np.exp(d1)
        f2 = (1.0 - w) * np.exp(d2)
        tot = f1 + f2
        resp = f1 / tot
        s1 = resp.sum()
        s2 = len(x) - s1
        if s1 <= 1 or s2 <= 1:
            raise FitError("bi-Gaussian fit collapsed: record looks single-state")
        mu1 = float((resp @ x) / s1)
        mu2 = float(((1 - resp) @ x) / s2)
        var = float((resp @ (x - mu1) ** 2 + (1 - resp) @ (x - mu2) ** 2) / len(x))
        sig = math.sqrt(var)
        w = s1 / len(x)
        ll_new = float((np.log(tot) - math.log(sig)).sum())
        if abs(ll_new - ll) < 1e-10 * len(x):
            break
        ll = ll_new
    if mu1 < mu2:
        mu1, mu2, w = mu2, mu1, 1.0 - w
    # likelihood-ratio test against a single Gaussian: a unimodal record gains
    # essentially nothing from the second component
    m0, s0 = float(np.mean(x)), float(np.std(x))
    ll_single = float((-0.5 * ((x - m0) / s0) ** 2 - math.log(s0)).sum())
    if 2.0 * (ll - ll_single) < 50.0:
        raise FitError("record histogram is unimodal; no pointer separation")
    snr = ((mu1 - mu2) / (2.0 * sig)) ** 2
    return BiGaussianFit(mean_b=mu1, mean_notb=mu2, sigma=sig, weight_b=w, snr=snr)
