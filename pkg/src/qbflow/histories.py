"""Crossing probabilities from decoherent histories.

The other modules ask "how much probability current flows through the
origin"; this one asks the sharper question "what is the probability that
the particle is on the right at one time and on the left at another", built
from projected, environment-smoothed evolution.  Three layers:

* window functions — the free crossing window ``f_integral`` (a scaled
  sine-integral) and its strong-decoherence Gaussian limit;
* two-time crossing probabilities — ``delta_exact`` (project, evolve,
  project, two independent numerical routes), ``delta_free`` (window
  quadrature against the evolved Wigner function), ``delta_intermediate``
  (position noise folded into the window) and ``delta_strong``, plus the
  closed-form asymptotic estimate they are all compared against;
* interval chains — ``crossing_class_matrix`` builds the full decoherence
  matrix for a partition of an arrival window into sub-intervals by
  propagating one-sidedly masked density matrices, and
  ``class_operator_probability`` condenses it: do the squared (history)
  probabilities agree with the linear (difference-of-survival) ones, and
  are the off-diagonals negligible?
* the verdict — ``decoherence_verdict`` gates one arrival window against
  the three conditions under which its crossing probability deserves the
  name, and returns a :class:`DecoherenceReport` citing any failures.

Projectors split at the origin; states are expected to approach it from
the right (negative mean momentum).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcx

from .core_model import Interval, PhysParams, derive_timescales
from .gaussian_engine import (
    GaussianMixtureState,
    evaluate_state,
    moments,
    propagate_mixture,
)
from .grid_engine import (
    axis_straddling_zero,
    density_matrix_from_state,
    _propagate_density_split_raw,
)

__all__ = [
    "f_integral",
    "survival_probability",
    "linear_crossing_probabilities",
    "delta_exact",
    "delta_free",
    "delta_free_asymptotic",
    "delta_intermediate",
    "delta_strong",
    "crossing_class_matrix",
    "class_operator_probability",
    "right_current_probability",
    "decoherence_verdict",
    "DecoherenceReport",
]

_SQRT2 = math.sqrt(2.0)

# |u| below this: Maclaurin series of the sine integral; above: continued
# fraction.  At the seam both converge well past double precision.
_F_SERIES_CUT = 4.0

# Ratio realising ">> 1" in the regime classifications: t/tau counts as
# "many localisation times" from this factor on.  Soft by nature — the
# closed forms degrade gradually — so it gates warnings and labels, never
# values.
_REGIME_FACTOR = 3.0


# ---------------------------------------------------------------------------
# crossing window functions


def _si_series(u: np.ndarray) -> np.ndarray:
    """Sine integral by its Maclaurin series, for 0 <= u < ~4.

    Si(u) = sum_k (-1)^k u^(2k+1) / ((2k+1) (2k+1)!); successive terms
    follow from the ratio -u^2 (2k-1) / ((2k+1)^2 (2k)).
    """
    total = np.array(u, dtype=float, copy=True)
    term = np.array(u, dtype=float, copy=True)
    u2 = u * u
    for k in range(1, 40):
        term *= -u2 * (2 * k - 1) / ((2 * k + 1) ** 2 * (2 * k))
        total += term
        if np.all(np.abs(term) < 1e-18):
            break
    return total


def _exp_integral_imag_axis(u: np.ndarray) -> np.ndarray:
    """E_1(i u) for u >= ~4 by the standard continued fraction.

    Evaluated with the modified Lentz recurrence; for arguments this far
    from the origin it converges in a few dozen iterations.
    """
    z = 1j * np.asarray(u, dtype=float)
    tiny = 1e-300
    f = z + 1.0
    c = np.where(f == 0.0, tiny, f).astype(complex)
    f = c.copy()
    d = np.zeros_like(f)
    converged = np.zeros(f.shape, dtype=bool)
    for j in range(1, 200):
        a = -float(j * j)
        b = z + (2 * j + 1)
        d = b + a * d
        d = np.where(d == 0.0, tiny, d)
        c = b + a / c
        c = np.where(c == 0.0, tiny, c)
        d = 1.0 / d
        delta = c * d
        f = f * delta
        converged |= np.abs(delta - 1.0) < 1e-15
        if converged.all():
            return np.exp(-z) / f
    raise ArithmeticError(
        "continued fraction for the crossing window did not converge"
    )


def f_integral(u):
    """Free crossing window f(u) = 1/2 - Si(u)/pi.

    Interpolates between 1 (u -> -inf, the packet certainly ends up on the
    other side) and 0 (u -> +inf), with f(0) = 1/2 exactly and the
    reflection f(u) + f(-u) = 1.  Small-u slope is -1/pi; the large-|u|
    tail rings as cos(u)/(pi u).

    Accepts scalars or arrays; evaluated via the sine-integral series for
    |u| < 4 and a continued fraction beyond, both at double precision.
    """
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 0
    au = np.atleast_1d(np.abs(arr))
    res = np.empty_like(au)
    small = au < _F_SERIES_CUT
    if small.any():
        res[small] = 0.5 - _si_series(au[small]) / math.pi
    if (~small).any():
        res[~small] = -np.imag(_exp_integral_imag_axis(au[~small])) / math.pi
    out = np.where(np.atleast_1d(arr) < 0.0, 1.0 - res, res)
    return float(out[0]) if scalar else out.reshape(arr.shape)


# ---------------------------------------------------------------------------
# stable half-line Gaussian Fourier integrals


def _gaussian_fourier_below(mu, var, beta, hi):
    """int_{-inf}^{hi} e^{i beta X} N(X; mu, var) dX, stable for large beta.

    Naively this is e^{i beta mu - beta^2 var / 2} * erfc(w)/2 with
    w = (mu + i beta var - hi) / sqrt(2 var); both factors overflow /
    underflow separately, so combine them through the scaled erfcx:
    the product equals exp(i beta mu - x0^2 - 2 i x0 y) * erfcx(w) / 2
    with w = x0 + i y, whose magnitude never exceeds a few units.
    """
    sig = np.sqrt(var)
    x0 = (mu - hi) / (sig * _SQRT2)
    y = beta * sig / _SQRT2
    w = x0 + 1j * y
    return 0.5 * erfcx(w) * np.exp(1j * beta * mu - x0 * x0 - 2j * x0 * y)


def _gaussian_fourier_above(mu, var, beta, lo):
    """int_{lo}^{inf} e^{i beta X} N(X; mu, var) dX (mirror of _below)."""
    return _gaussian_fourier_below(-np.asarray(mu), var, -np.asarray(beta), -np.asarray(lo))


# ---------------------------------------------------------------------------
# survival probabilities (linear route)


def _right_mass(state: GaussianMixtureState, lo: float = 0.0) -> float:
    """Closed-form integral of the position density over q > lo."""
    total = 0.0
    for term in state.terms:
        c = term.cov
        cp, cq = term.center
        kp, kq = term.k
        if kp == 0.0 and kq == 0.0 and term.phase == 0.0:
            total += term.weight * 0.5 * float(erfc((lo - cq) / (math.sqrt(c.qq) * _SQRT2)))
            continue
        v = c.pp - c.pq * c.pq / c.qq
        alpha = kp * c.pq / c.qq + kq
        psi = kp * (cp - c.pq * cq / c.qq) + term.phase
        damp = math.exp(-0.5 * kp * kp * v)
        piece = _gaussian_fourier_above(cq, c.qq, alpha, lo)
        total += term.weight * damp * float(np.real(np.exp(1j * psi) * piece))
    return total


def survival_probability(
    state: GaussianMixtureState, t: float, params: PhysParams
) -> float:
    """Probability of still being right of the origin at time t.

    Exact per-term reduction of the evolved mixture; no grids involved.
    """
    return _right_mass(propagate_mixture(state, t, params))


def linear_crossing_probabilities(
    state: GaussianMixtureState, boundaries, params: PhysParams
) -> np.ndarray:
    """Survival differences S(t_{k-1}) - S(t_k) over a time partition.

    The "linear" arrival probabilities: no projections are inserted, so
    they ignore interference between crossing at different intervals.
    """
    b = _checked_boundaries(boundaries)
    surv = np.array([survival_probability(state, t, params) for t in b])
    return -np.diff(surv)


def _checked_boundaries(boundaries) -> np.ndarray:
    b = np.asarray(boundaries, dtype=float)
    if b.ndim != 1 or b.size < 2:
        raise ValueError("boundaries must be a 1-D sequence of at least two times")
    if not np.all(np.diff(b) > 0.0):
        raise ValueError("boundaries must be strictly increasing")
    if b[0] < 0.0:
        raise ValueError(f"boundaries must be non-negative, got first entry {b[0]}")
    return b


# ---------------------------------------------------------------------------
# exact two-time crossing probability


def delta_exact(
    state: GaussianMixtureState,
    window: Interval,
    params: PhysParams,
    route: str = "semianalytic",
    n: int = 1024,
) -> float:
    """Tr[ P_right rho(t2) ] for the state projected left at t1.

    The probability of finding the particle right of the origin at ``t2``
    after certainly finding it left at ``t1`` — the sharp measure of
    re-crossing that the window-function estimates approximate.

    Two independent routes:

    * ``"semianalytic"`` — projecting left and evolving reduces, on the
      diagonal, to half the left mass plus a one-dimensional integral of
      the masked chord transform,

          1/2 m_- + (1/pi) int_0^inf dxi/xi e^{-c xi^2} Im G(xi),
          G(xi) = int_{X < -xi/2} dX int dp e^{i xi (m X/dt + p)/hbar} W(p, X),

      with W the evolved Wigner function at t1 and c = D dt / 3 hbar^2.
      Every term of G is a half-line Gaussian Fourier integral, evaluated
      in closed form; only the xi quadrature is numerical.
    * ``"grid"`` — sample the density matrix at t1 on an axis with the
      origin exactly mid-cell, zero the rows and columns right of it, push
      the left block through the spectral split-step propagator and
      integrate the diagonal over x > 0.

    The two share no numerics (closed Gaussian half-line transforms versus
    FFT splitting), so their agreement checks both.  The grid route
    resolves the hard projector edge only to ~1% at the default
    resolution and requires ``D > 0``: without decoherence the projected
    block keeps coherent algebraic tails that outrun any finite box.
    """
    if params.gamma != 0.0:
        raise ValueError("crossing probabilities require negligible dissipation (gamma = 0)")
    if route == "semianalytic":
        return _delta_exact_closed(state, window, params)
    if route == "grid":
        return _delta_exact_grid(state, window, params, n)
    raise ValueError(f"unknown route {route!r}, expected 'semianalytic' or 'grid'")


def _delta_exact_closed(
    state: GaussianMixtureState, window: Interval, params: PhysParams
) -> float:
    hbar, m = params.hbar, params.mass
    dt = window.width
    st = propagate_mixture(state, window.t1, params)
    c_damp = params.D * dt / (3.0 * hbar * hbar)
    m_left = st.total_mass() - _right_mass(st)

    # xi range: the integrand dies by e^{-c xi^2} and, per term, by the
    # conditional-momentum factor e^{-v (xi/hbar +- k_p)^2 / 2}.
    xi_max = 0.0
    rate = 0.0
    for term in st.terms:
        c = term.cov
        v = c.pp - c.pq * c.pq / c.qq
        decay = c_damp + 0.5 * v / (hbar * hbar)
        xi_max = max(xi_max, hbar * abs(term.k[0]) + math.sqrt(41.0 / decay))
        sq = math.sqrt(c.qq)
        span = abs(term.center[1]) + 6.0 * sq
        rate = max(
            rate,
            span * (m / (hbar * dt) + abs(c.pq) / (hbar * c.qq))
            + abs(term.center[0]) / hbar
            + abs(term.k[0]) + abs(term.k[1]),
        )
    n_xi = min(max(int(xi_max * (rate + 0.5 * xi_max * m / (hbar * dt)) / 0.2) + 64, 512), 400_000)
    d_xi = xi_max / n_xi
    xi = (np.arange(n_xi) + 0.5) * d_xi  # midpoint rule: no xi = 0 endpoint

    g = np.zeros(n_xi, dtype=complex)
    for term in st.terms:
        c = term.cov
        cp, cq = term.center
        kp, kq = term.k
        v = c.pp - c.pq * c.pq / c.qq
        cp_const = cp - c.pq * cq / c.qq
        for eta in (+1.0, -1.0):
            a = eta * kp + xi / hbar
            b = eta * kq + m * xi / (hbar * dt)
            beta = b + a * c.pq / c.qq
            piece = _gaussian_fourier_below(cq, c.qq, beta, -0.5 * xi)
            g += (
                0.5
                * term.weight
                * np.exp(1j * eta * term.phase + 1j * a * cp_const - 0.5 * a * a * v)
                * piece
            )

    integral = float(np.sum(np.exp(-c_damp * xi * xi) * np.imag(g) / xi) * d_xi)
    return 0.5 * m_left + integral / math.pi


def _delta_exact_grid(
    state: GaussianMixtureState, window: Interval, params: PhysParams, n: int
) -> float:
    if params.D <= 0.0:
        raise ValueError(
            "the grid route needs decoherence (D > 0) to damp the projector "
            "edge; without it the masked block keeps algebraic tails no finite "
            "box captures — use the semianalytic route"
        )
    st = propagate_mixture(state, window.t1, params)
    end = propagate_mixture(st, window.width, params)
    mean1, cov1 = moments(st)
    mean2, cov2 = moments(end)
    sq1, sq2 = math.sqrt(cov1.qq), math.sqrt(cov2.qq)
    lo = min(mean1[1] - 8.0 * sq1, mean2[1] - 8.0 * sq2)
    hi = max(mean1[1] + 8.0 * sq1, mean2[1] + 8.0 * sq2)
    if lo >= 0.0:
        return 0.0  # nothing left of the origin to project onto
    hi = max(hi, 2.0 * sq1)
    pad = 0.04 * (hi - lo)
    lo -= pad
    hi += pad
    sp = max(math.sqrt(cov1.pp), math.sqrt(cov2.pp))
    p_reach = max(abs(mean1[0]), abs(mean2[0])) + 7.0 * sp
    n_min = int((hi - lo) * p_reach / (params.hbar * 0.8 * math.pi)) + 1
    n_use = max(n, 1 << (n_min - 1).bit_length())
    if n_use > 4096:
        raise ValueError("state too broad for the grid route (needs > 4096 points)")
    axis = axis_straddling_zero(lo, hi, n_use)
    rho = density_matrix_from_state(st, axis)
    keep = axis.points < 0.0
    masked = rho.values * np.outer(keep, keep)
    out = _propagate_density_split_raw(masked, axis, window.width, params)
    right = axis.points > 0.0
    return float(np.trapezoid(np.real(np.diagonal(out)) * right, axis.points))


# ---------------------------------------------------------------------------
# window-quadrature estimates


def _grid(a: float, b: float, step: float) -> np.ndarray:
    return np.linspace(a, b, max(int((b - a) / step) + 2, 9))


def _graded_origin_grid(lo: float, hi: float, ell: float, coarse: float) -> np.ndarray:
    """Grid on [lo, hi] whose steps grow geometrically with distance from 0.

    The crossing window rises from 0 to 1/2 across a boundary layer of
    width ~ell around the origin; a uniform envelope-scale grid steps
    right over it.  Steps run from ell/80 at the origin up to ``coarse``.
    """
    xs = [hi]
    x = hi
    while x > lo:
        x -= min(coarse, max(0.0145 * abs(x), ell / 80.0))
        xs.append(x)
    xs[-1] = lo
    return np.array(xs[::-1])


def _band_step_mass(state: GaussianMixtureState, xs, p_floor) -> np.ndarray:
    """Position-resolved mass of the state above a momentum floor.

    step(x) = int_{p > p_floor(x)} W(p, x) dp, per term in closed form: the
    joint Gaussian factorises into the position marginal times a
    conditional momentum Gaussian, and the fringe cos(kp p + kq x + phi)
    turns into a one-sided Fourier integral.
    """
    xs = np.asarray(xs, dtype=float)
    p_floor = np.asarray(p_floor, dtype=float)
    total = np.zeros(xs.shape)
    for term in state.terms:
        c = term.cov
        cp, cq = term.center
        kp, kq = term.k
        v = c.pp - c.pq * c.pq / c.qq
        marg = np.exp(-0.5 * (xs - cq) ** 2 / c.qq) / math.sqrt(2.0 * math.pi * c.qq)
        cond_mean = cp + (c.pq / c.qq) * (xs - cq)
        piece = _gaussian_fourier_above(cond_mean, v, kp, p_floor)
        total += term.weight * marg * np.real(
            np.exp(1j * (kq * xs + term.phase)) * piece
        )
    return total


def delta_free(
    state: GaussianMixtureState,
    window: Interval,
    params: PhysParams,
    u_cut: float = 200.0,
) -> float:
    """Window-function estimate of the crossing probability, free kernel.

    Delta_f = int_{X<0} dX int dp W_t1(p, X) f[(X/hbar)(m X/dt + p)],

    with W the Wigner function evolved to the window's opening and f the
    sine-integral crossing window.  The phase u = X(mX/dt + p)/hbar runs
    arbitrarily fast in p far from the origin, so there the momentum
    integral is taken in u itself over the band |u| <= u_cut — where f has
    settled onto its asymptotes to within 1/(pi u_cut) — plus a
    closed-form f = 1 step term for the strip u < -u_cut.  Near the origin
    the band degenerates and a plain p-grid resolves the slow phase
    directly, on a grid graded into the origin — the window climbs from 0
    to 1/2 across a layer of width ~hbar/|pbar| there.  Truncation error
    is bounded by mass/(pi u_cut), and the dropped tails oscillate without
    stationary points, so the bound is very loose in practice.
    """
    if params.gamma != 0.0:
        raise ValueError("crossing probabilities require negligible dissipation (gamma = 0)")
    if u_cut <= _F_SERIES_CUT:
        raise ValueError(f"u_cut must exceed {_F_SERIES_CUT}, got {u_cut}")
    hbar, m = params.hbar, params.mass
    dt = window.width
    st = propagate_mixture(state, window.t1, params)
    mean, cov = moments(st)
    sq, sp = math.sqrt(cov.qq), math.sqrt(cov.pp)
    x_lo = mean[1] - 7.5 * sq
    x_hi = min(0.0, mean[1] + 7.5 * sq)
    if x_lo >= 0.0:
        return 0.0
    ps = np.linspace(mean[0] - 7.5 * sp, mean[0] + 7.5 * sp, 701)
    x_near = 0.35 * hbar / (ps[1] - ps[0])
    dx = sq / 25.0
    near_lo = max(x_lo, -x_near)
    total = 0.0
    if x_hi > near_lo:
        ell = hbar / (abs(mean[0]) + 3.0 * sp)
        xs = _graded_origin_grid(near_lo, x_hi, ell, dx)
        w = evaluate_state(st, ps[:, None], xs[None, :])
        u = xs[None, :] * (m * xs[None, :] / dt + ps[:, None]) / hbar
        g = np.trapezoid(w * f_integral(u), ps, axis=0)
        total += float(np.trapezoid(g, xs))
    if near_lo > x_lo:
        xs = _grid(x_lo, near_lo, dx)
        us = np.linspace(-u_cut, u_cut, 2 * int(u_cut / 0.3) + 1)
        fu = f_integral(us)
        col = xs[:, None]
        pu = us[None, :] * hbar / col - m * col / dt
        w = evaluate_state(st, pu, np.broadcast_to(col, pu.shape))
        band = np.trapezoid(w * fu[None, :], us, axis=1) * (hbar / np.abs(xs))
        step = _band_step_mass(st, xs, -m * xs / dt + u_cut * hbar / np.abs(xs))
        total += float(np.trapezoid(band + step, xs))
    return total


def delta_strong(
    state: GaussianMixtureState, window: Interval, params: PhysParams
) -> float:
    """Crossing probability in the strong-decoherence (Gaussian) limit.

    The oscillatory window, averaged over the position noise accumulated
    during the interval, collapses to an error function of the classical
    miss distance:

        Delta_s = int_{X<0} dX int dp W_t1(p, X)
                    (1/2) erfc(-lambda (X + p dt/m)),
        lambda = sqrt(3 m^2 / (4 D dt^3)).

    The momentum integral is taken first, which leaves a smooth profile in
    X even when the raw window edge is much sharper than the grid; the X
    range is clipped to the strip where the window is not exponentially
    dead.
    """
    if params.gamma != 0.0:
        raise ValueError("crossing probabilities require negligible dissipation (gamma = 0)")
    if params.D <= 0.0:
        raise ValueError("strong-decoherence window needs D > 0")
    hbar, m = params.hbar, params.mass
    dt = window.width
    st = propagate_mixture(state, window.t1, params)
    mean, cov = moments(st)
    scales = derive_timescales(params, mean[0])
    if dt < _REGIME_FACTOR * scales.tau_l:
        warnings.warn(
            f"window spans only {dt / scales.tau_l:.2g} localisation times; the "
            "error-function window assumes the accumulated noise dominates "
            "the free oscillation (dt >> tau_l)",
            RuntimeWarning,
            stacklevel=2,
        )
    if mean[0] != 0.0 and dt > 0.25 * scales.tau_s:
        warnings.warn(
            f"window spans {dt / scales.tau_s:.2g} stochastic times; momentum "
            "diffusion degrades the mean motion itself (needs dt << tau_s)",
            RuntimeWarning,
            stacklevel=2,
        )
    sq, sp = math.sqrt(cov.qq), math.sqrt(cov.pp)
    lam = math.sqrt(3.0 * m * m / (4.0 * params.D * dt ** 3))
    strip = (abs(mean[0]) + 7.5 * sp) * dt / m + 4.0 / lam
    x_lo = max(mean[1] - 8.0 * sq, -strip)
    x_hi = min(0.0, mean[1] + 8.0 * sq)
    if x_lo >= x_hi:
        return 0.0
    xs = np.linspace(x_lo, x_hi, 1501)
    ps = np.linspace(mean[0] - 7.5 * sp, mean[0] + 7.5 * sp, 701)
    w = evaluate_state(st, ps[:, None], xs[None, :])
    win = 0.5 * erfc(-lam * (xs[None, :] + ps[:, None] * dt / m))
    g = np.trapezoid(w * win, ps, axis=0)
    return float(np.trapezoid(g, xs))


def _smeared_window(
    mus: np.ndarray,
    p0: float,
    s_q: float,
    m: float,
    hbar: float,
    dt: float,
    u_cut: float,
) -> np.ndarray:
    """F(mu) = int_{X<0} N(X; mu, s_q^2) f[X (m X/dt + p0)/hbar] dX.

    One adaptive ladder in X serves every mu for a fixed conditional
    momentum p0: steps resolve both the noise kernel (s_q/10) and the
    local window phase (0.35 rad), and the descent stops once the window
    has decayed past u_cut or the kernel has died under every mu.
    """
    floor = float(np.min(mus)) - 9.0 * s_q
    ladder = [0.0]
    x = 0.0
    while True:
        step = min(s_q / 10.0, 0.35 * hbar / (abs(2.0 * m * x / dt + p0) + 1e-300))
        x -= step
        if x < floor:
            break
        ladder.append(x)
        if x * (m * x / dt + p0) / hbar > u_cut:
            break
    if len(ladder) < 2:
        return np.zeros(mus.shape)
    xs = np.array(ladder[::-1])
    fv = f_integral(xs * (m * xs / dt + p0) / hbar)
    kern = np.exp(-0.5 * ((xs[None, :] - mus[:, None]) / s_q) ** 2) / (
        math.sqrt(2.0 * math.pi) * s_q
    )
    return np.trapezoid(kern * fv[None, :], xs, axis=1)


def delta_intermediate(
    state: GaussianMixtureState,
    window: Interval,
    params: PhysParams,
    u_cut: float = 200.0,
) -> tuple:
    """Crossing probability with position noise folded into the window,
    together with an a-priori bound on what the fold leaves out.

    The free window f survives, but the ballistic position it is evaluated
    at is smeared by the quantum-noise spread accumulated up to the
    window, s_Q^2 = 2 D t1^3 / 3 m^2:

        Delta_i = int dp0 dX0 W_0(p0, X0) F(X0 + p0 t1/m, p0),
        F(mu, p0) = int_{X<0} dX N(X; mu, s_Q^2) f[(X/hbar)(m X/dt + p0)].

    Returns ``(value, bound)``; the neglected momentum-noise corrections
    are bounded by (1/16) sqrt(2 m hbar / (p0bar^2 t1)) (tau_l / t1).
    The bound is an order-of-magnitude cap obtained by dropping the
    exponential localisation of F around the ballistic crossing; it keeps
    no O(1) factors (the true supremum of the fold is sqrt(3 pi)/2 ~ 1.5
    times larger), so it dominates the value once the packet's crossing
    misses the window by a width or more and should be read at that
    resolution near dead centre.

    Emits a RuntimeWarning outside its regime: the fold needs many
    localisation times before the window (t1 >> tau_l) and a window short
    against one (dt << tau_l).
    """
    if params.gamma != 0.0:
        raise ValueError("crossing probabilities require negligible dissipation (gamma = 0)")
    if params.D <= 0.0:
        raise ValueError(
            "intermediate window needs D > 0; at D = 0 it reduces to the free window (delta_free)"
        )
    if window.t1 <= 0.0:
        raise ValueError("intermediate window needs t1 > 0")
    hbar, m = params.hbar, params.mass
    t1, dt = window.t1, window.width
    mean0, cov0 = moments(state)
    p_bar = mean0[0]
    if p_bar == 0.0:
        raise ValueError("correction bound diverges for zero mean momentum")
    s_q = math.sqrt(2.0 * params.D * t1 ** 3 / 3.0) / m
    tau_l = derive_timescales(params, p_bar).tau_l
    if t1 < _REGIME_FACTOR * tau_l:
        warnings.warn(
            f"window opens only {t1 / tau_l:.2g} localisation times in; the "
            "position-noise fold assumes t1 >> tau_l",
            RuntimeWarning,
            stacklevel=2,
        )
    if dt > tau_l:
        warnings.warn(
            f"window spans {dt / tau_l:.2g} localisation times; the free "
            "window inside the fold assumes dt << tau_l",
            RuntimeWarning,
            stacklevel=2,
        )
    bound = (math.sqrt(2.0 * m * hbar / (p_bar * p_bar * t1)) / 16.0) * (tau_l / t1)
    sq0, sp0 = math.sqrt(cov0.qq), math.sqrt(cov0.pp)
    n_out = 71
    p0s = np.linspace(p_bar - 6.0 * sp0, p_bar + 6.0 * sp0, n_out)
    x0s = np.linspace(mean0[1] - 6.0 * sq0, mean0[1] + 6.0 * sq0, n_out)
    w0 = evaluate_state(state, p0s[:, None], x0s[None, :])
    fmat = np.empty((n_out, n_out))
    for i, p0 in enumerate(p0s):
        fmat[i] = _smeared_window(x0s + p0 * t1 / m, p0, s_q, m, hbar, dt, u_cut)
    value = float(np.trapezoid(np.trapezoid(w0 * fmat, x0s, axis=1), p0s))
    return value, bound


def delta_free_asymptotic(
    state: GaussianMixtureState, window: Interval, params: PhysParams
) -> float:
    """Stationary-phase estimate of the free crossing probability.

    For a packet of initial width sigma whose center ballistically reaches
    the origin at the window's opening,

        Delta ~ sqrt(pi/2) hbar / (8 sigma |pbar|) exp(-offset^2 / 2 sigma^2),

    offset = q0bar + pbar t1 / m.  Emits a RuntimeWarning outside its
    regime: when the window is shorter than ~10 hbar/E (no construction
    resolves the crossing that finely) or when the packet misses the
    origin by more than one width at t1.
    """
    hbar, m = params.hbar, params.mass
    mean, cov = moments(state)
    p_bar = mean[0]
    if p_bar >= 0.0:
        raise ValueError("asymptotic crossing estimate needs negative mean momentum")
    sigma = math.sqrt(cov.qq)
    offset = mean[1] + p_bar * window.t1 / m
    if p_bar * p_bar * window.width / (2.0 * m * hbar) < 10.0:
        warnings.warn(
            "window shorter than ~10 hbar/E: the stationary-phase estimate degrades",
            RuntimeWarning,
            stacklevel=2,
        )
    if abs(offset) > sigma:
        warnings.warn(
            "packet misses the origin by more than one width at t1; "
            "the estimate is exponentially suppressed and unreliable",
            RuntimeWarning,
            stacklevel=2,
        )
    return (
        math.sqrt(math.pi / 2.0)
        * hbar
        / (8.0 * sigma * abs(p_bar))
        * math.exp(-0.5 * offset * offset / (sigma * sigma))
    )


# ---------------------------------------------------------------------------
# interval chains


def _chain_axis(state, times, params, n):
    """Shared position axis covering the evolved state at every listed time.

    Returns ``(axis, p_reach)``: the grid, and the largest momentum it
    resolves (mean reach plus six widths across the whole schedule); the
    point count is rounded up to a power of two satisfying Nyquist for
    that reach.
    """
    hbar = params.hbar
    k_need = 0.0
    lo = math.inf
    hi = -math.inf
    for t in times:
        st = propagate_mixture(state, float(t), params)
        mean, cov = moments(st)
        lo = min(lo, mean[1] - 7.5 * math.sqrt(cov.qq))
        hi = max(hi, mean[1] + 7.5 * math.sqrt(cov.qq))
        k_need = max(k_need, (abs(mean[0]) + 6.0 * math.sqrt(cov.pp)) / hbar)
    pad = 0.035 * (hi - lo)
    lo -= pad
    hi += pad
    if lo >= 0.0 or hi <= 0.0:
        raise ValueError("the partition never brings the state near the origin")
    n_min = int((hi - lo) * k_need / math.pi) + 1
    n_use = 1 << (max(n_min, n or 1024) - 1).bit_length()
    if n_use > 4096:
        raise ValueError("state too broad for the chain grid (needs > 4096 points)")
    return axis_straddling_zero(lo, hi, n_use), k_need * hbar


def _class_matrix(state, windows, params, axis, threads=1):
    """Decoherence functional over ordered ``(open, close)`` time windows.

    Ket-side projections run along each row's own class times; the
    unprojected backbone rho(open_k) is re-sampled from the exact Gaussian
    engine per class, so grid error never accumulates along the schedule.
    Rows are mutually independent and run on a thread pool when asked —
    each writes a disjoint slice of the matrix, and the FFT work releases
    the interpreter lock.
    """
    left = axis.points < 0.0
    right = ~left
    wrap = params.D > 0.0
    n_classes = len(windows)
    mat = np.zeros((n_classes, n_classes), dtype=complex)

    def _row(k):
        a_k, b_k = windows[k]
        base = density_matrix_from_state(
            propagate_mixture(state, a_k, params), axis
        ).values
        sym = _propagate_density_split_raw(
            base * np.outer(right, right), axis, b_k - a_k, params, wrap_check=wrap
        )
        # Tr[(P_< U P_>) rho (P_< U P_>)^dag] is real by construction; the
        # grid trace leaves a phantom imaginary part at discretisation level.
        mat[k, k] = np.trapezoid(np.diagonal(sym) * left, axis.points).real
        del sym
        if k + 1 == n_classes:
            return
        chain = _propagate_density_split_raw(
            base * right[:, None], axis, b_k - a_k, params, wrap_check=wrap
        ) * left[:, None]
        del base
        reached = b_k
        for j in range(k + 1, n_classes):
            a_j, b_j = windows[j]
            if a_j > reached:
                chain = _propagate_density_split_raw(
                    chain, axis, a_j - reached, params, wrap_check=wrap
                )
            reached = a_j
            fork = _propagate_density_split_raw(
                chain * right[None, :], axis, b_j - a_j, params, wrap_check=wrap
            ) * left[None, :]
            mat[k, j] = np.trapezoid(np.diagonal(fork), axis.points)
            mat[j, k] = np.conjugate(mat[k, j])
            del fork

    workers = max(1, min(int(threads), n_classes, 4))
    if workers == 1:
        for k in range(n_classes):
            _row(k)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_row, range(n_classes)))
    return mat


def crossing_class_matrix(
    state: GaussianMixtureState,
    boundaries,
    params: PhysParams,
    n: int | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Decoherence functional for one-crossing classes on a time partition.

    Class k (0-based) asserts: right of the origin at t_k, left of it at
    t_{k+1}.  Entry (k, j) of the returned complex matrix is the
    decoherence functional between classes k and j — class k's projectors
    act on the ket side, class j's on the bra side, each at its own times,
    with open-system evolution in between.

    One-sidedly projected density matrices are pushed with the spectral
    split-step propagator on a shared axis; the unprojected backbone
    rho(t_k) is re-sampled from the exact Gaussian engine at the start of
    every class, so grid error never accumulates along the partition.  The
    diagonal is real: D[k, k] is the crossing probability for interval k
    with the projections actually applied.  Comparing it against the
    projection-free survival differences, and the off-diagonals against
    zero, measures how decoherent the partition is.

    With D = 0 the projected blocks keep coherent algebraic tails that any
    finite box truncates: values then carry a few-percent bias — fine for
    exhibiting large off-diagonals, not for precision work — and the
    border sentinel is disabled in that regime.
    """
    if params.gamma != 0.0:
        raise ValueError("crossing probabilities require negligible dissipation (gamma = 0)")
    b = _checked_boundaries(boundaries)
    axis, _ = _chain_axis(state, b, params, n)
    windows = [(float(b[k]), float(b[k + 1])) for k in range(len(b) - 1)]
    return _class_matrix(state, windows, params, axis, threads=threads)


def class_operator_probability(
    state: GaussianMixtureState,
    intervals,
    params: PhysParams,
    eps: float | None = None,
    n: int | None = None,
    threads: int = 1,
) -> tuple:
    """Linear and projected probabilities for first-crossing classes.

    ``intervals`` is an ordered, non-overlapping sequence of
    :class:`~qbflow.core_model.Interval`; gaps between windows are
    allowed.  Class k asserts: right of the origin when window k opens,
    left of it when it closes.  Returns ``(p_linear, p_squared,
    offdiag_max)``:

    * ``p_linear[k]`` — the survival difference S(open_k) - S(close_k)
      with no projections inserted, what the integrated current assigns;
    * ``p_squared[k]`` — the same crossing with the projections actually
      applied, Tr[P_left U (P_right rho P_right) U*];
    * ``offdiag_max`` — the largest interference magnitude between two
      distinct classes.

    The classes decohere — and the linear numbers are honest
    probabilities — when ``offdiag_max`` is small against
    ``max(p_linear)`` and the two probability routes agree.

    ``eps`` floors the window widths.  Projecting faster than the state
    can move freezes the crossing (the Zeno regime), so widths under
    ``max(10 hbar/E, one-cell transit of the fastest resolved momentum)``
    are rejected by default; pass ``eps`` explicitly to override.
    """
    if params.gamma != 0.0:
        raise ValueError("crossing probabilities require negligible dissipation (gamma = 0)")
    windows = [(float(iv.t1), float(iv.t2)) for iv in intervals]
    if not windows:
        raise ValueError("need at least one interval")
    if windows[0][0] < 0.0:
        raise ValueError(f"intervals must open at non-negative times, got {windows[0][0]}")
    for (a0, b0), (a1, b1) in zip(windows, windows[1:]):
        if a1 < b0:
            raise ValueError(
                "intervals must be ordered and non-overlapping: "
                f"[{a0:g}, {b0:g}] is followed by [{a1:g}, {b1:g}]"
            )
    times = sorted({t for w in windows for t in w})
    axis, p_reach = _chain_axis(state, times, params, n)
    mean0, cov0 = moments(state)
    energy = (mean0[0] ** 2 + cov0.pp) / (2.0 * params.mass)
    if eps is None:
        eps = max(10.0 * params.hbar / energy, params.mass * axis.step / p_reach)
    narrowest = min(b - a for a, b in windows)
    if narrowest < eps:
        raise ValueError(
            f"window of width {narrowest:.3g} is below the projector-spacing "
            f"floor eps = {eps:.3g}: crossing classes this fine sit in the "
            "Zeno regime (or under the grid's time resolution)"
        )
    mat = _class_matrix(state, windows, params, axis, threads=threads)
    p_lin = np.array(
        [
            survival_probability(state, a, params)
            - survival_probability(state, b, params)
            for a, b in windows
        ]
    )
    p_sq = np.real(np.diagonal(mat)).copy()
    if mat.shape[0] > 1:
        offdiag_max = float(np.abs(mat - np.diag(np.diagonal(mat))).max())
    else:
        offdiag_max = 0.0
    return p_lin, p_sq, offdiag_max


def right_current_probability(
    state: GaussianMixtureState,
    window: Interval,
    params: PhysParams,
    route: str = "semianalytic",
    n: int = 1024,
) -> float:
    """Probability carried by the right-moving current over the window.

    The current at the origin is a difference of one-sided flows: a
    left-moving flow out of x > 0 — the classical picture of arrival —
    minus a right-moving flow re-entering from the already-crossed side.
    The re-entering piece, accumulated over the window with the state
    held to the crossed side at its opening, is the projected re-crossing
    probability that :func:`delta_exact` computes; this alias names that
    reading.  The integrated current understates the projected class
    probability by at most this amount.  For a near-classical left-mover
    it is negligible; for backflow states it stays positive and finite
    even while the net current integral goes negative.
    """
    return delta_exact(state, window, params, route=route, n=n)


# ---------------------------------------------------------------------------
# the verdict


@dataclass(frozen=True, eq=False)
class DecoherenceReport:
    """Verdict on one arrival window: may a crossing probability be
    assigned to it?

    Attributes
    ----------
    t1, t2 : float
        The window.
    delta_exact : float
        The projected re-crossing probability — the interference measure
        that must be small.
    delta_formula : float
        The regime-appropriate closed-form estimate of the same quantity.
    regime : str
        ``"free"``, ``"intermediate"`` or ``"strong"``: which closed form
        applies, classified from (t1/tau_l, dt/tau_l).
    decoherent : bool
        Conjunction of the three gates; the window's crossing probability
        deserves the name exactly when this holds.
    gates_failed : tuple of str
        One line per failed gate; empty when decoherent.
    e_dt_over_hbar : float
        Window width in units of the energy time hbar/E.
    t1_over_tau_l : float
        Opening time in localisation times (0 when D = 0: tau_l is then
        infinite).
    gaussian : bool
        Single unmodulated Gaussian?  Such states need no environmental
        scrubbing and skip the preparation gate.
    thresholds : tuple of (str, float)
        The gate thresholds the verdict was taken at.
    """

    t1: float
    t2: float
    delta_exact: float
    delta_formula: float
    regime: str
    decoherent: bool
    gates_failed: tuple
    e_dt_over_hbar: float
    t1_over_tau_l: float
    gaussian: bool
    thresholds: tuple

    def summary_text(self) -> str:
        head = "decoherent" if self.decoherent else "NOT decoherent"
        lines = [
            f"arrival window [{self.t1:g}, {self.t2:g}]: {head}",
            f"  regime: {self.regime} (t1 = {self.t1_over_tau_l:.3g} tau_l, "
            f"E dt/hbar = {self.e_dt_over_hbar:.3g})",
            f"  delta_exact = {self.delta_exact:.3e}, "
            f"regime formula = {self.delta_formula:.3e}",
        ]
        lines.extend(f"  gate failed: {gate}" for gate in self.gates_failed)
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("# arrival-window decoherence verdict\n")
            fh.write(
                "# thresholds: "
                + " ".join(f"{name}={value!r}" for name, value in self.thresholds)
                + "\n"
            )
            fh.write(
                "t1,t2,regime,delta_exact,delta_formula,"
                "e_dt_over_hbar,t1_over_tau_l,gaussian,decoherent,gates_failed\n"
            )
            fh.write("time,time,,1,1,1,1,,,\n")
            fh.write(
                f"{self.t1!r},{self.t2!r},{self.regime},{self.delta_exact!r},"
                f"{self.delta_formula!r},{self.e_dt_over_hbar!r},"
                f"{self.t1_over_tau_l!r},{self.gaussian},{self.decoherent},"
                + "; ".join(self.gates_failed)
                + "\n"
            )


def decoherence_verdict(
    state: GaussianMixtureState,
    window: Interval,
    params: PhysParams,
    *,
    route: str = "semianalytic",
    n: int = 1024,
    delta_max: float = 0.01,
    energy_min: float = 10.0,
    t1_min: float = 5.0,
) -> DecoherenceReport:
    """Gate one arrival window and report why whenever it fails.

    Three gates, thresholds exposed as keywords:

    * interference — the projected re-crossing probability must be small,
      ``delta_exact < delta_max``;
    * resolution — the window must be coarser than the energy time,
      ``E dt/hbar > energy_min``: no construction resolves an arrival
      finer than hbar/E;
    * preparation — a state that is not a single unmodulated Gaussian
      must have evolved for ``t1 > t1_min * tau_l`` before the window
      opens, long enough for the environment to scrub spatial coherence.
      At D = 0 this gate cannot pass (tau_l is infinite: superpositions
      keep their fringes forever), while plain Gaussians skip it.

    The report also quotes the closed-form estimate matched to the
    regime: ``"strong"`` when the window itself spans many localisation
    times, ``"intermediate"`` when only the opening time does, ``"free"``
    otherwise.
    """
    hbar, m = params.hbar, params.mass
    mean0, cov0 = moments(state)
    energy = (mean0[0] ** 2 + cov0.pp) / (2.0 * m)
    e_dt = energy * window.width / hbar
    kp0, kq0 = state.terms[0].k
    gaussian = len(state.terms) == 1 and kp0 == 0.0 and kq0 == 0.0
    tau_l = math.sqrt(2.0 * m * hbar / params.D) if params.D > 0.0 else math.inf
    t1_ratio = window.t1 / tau_l
    if window.width >= _REGIME_FACTOR * tau_l:
        regime = "strong"
    elif window.t1 >= _REGIME_FACTOR * tau_l:
        regime = "intermediate"
    else:
        regime = "free"
    dex = delta_exact(state, window, params, route=route, n=n)
    if regime == "free":
        formula = delta_free(state, window, params)
    elif regime == "intermediate":
        formula, _ = delta_intermediate(state, window, params)
    else:
        formula = delta_strong(state, window, params)
    gates = []
    if not dex < delta_max:
        gates.append(
            f"interference too large: delta_exact = {dex:.3g} (needs < {delta_max:g})"
        )
    if not e_dt > energy_min:
        gates.append(
            f"interval too fine: E dt/hbar = {e_dt:.3g} (needs > {energy_min:g})"
        )
    if not gaussian and not window.t1 > t1_min * tau_l:
        gates.append(
            f"t1 too small: {window.t1:g} = {t1_ratio:.3g} tau_l (needs "
            f"> {t1_min:g} tau_l for a non-Gaussian state)"
        )
    return DecoherenceReport(
        t1=float(window.t1),
        t2=float(window.t2),
        delta_exact=float(dex),
        delta_formula=float(formula),
        regime=regime,
        decoherent=not gates,
        gates_failed=tuple(gates),
        e_dt_over_hbar=float(e_dt),
        t1_over_tau_l=float(t1_ratio),
        gaussian=gaussian,
        thresholds=(
            ("delta_max", float(delta_max)),
            ("energy_min", float(energy_min)),
            ("t1_min_tau_l", float(t1_min)),
        ),
    )
