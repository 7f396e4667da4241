"""Arrival-time distributions at the origin, three ways.

Current route
    J(t) = -j(0, t): the (signed) probability current of the evolved state
    through x = 0, taken positive for right-to-left crossings.  With
    dissipation switched on the current picks up the diffusive correction
    from :mod:`lindblad_dynamics`.

POVM route
    For measurement intervals the current integral is re-expressed as the
    expectation of an effect operator.  Splitting the accumulated noise
    covariance into a minimum-uncertainty part (absorbed into the state as
    a Husimi smearing) and a positive remainder (absorbed into the symbol)
    yields  Tr(E rho) = int Q(z) S_E(z) dz  with a bounded symbol S_E and a
    non-negative Q — manifestly a generalised measurement, available once
    the noise has accumulated past a hard threshold.

Stochastic route
    Repeated propagate-and-truncate on a grid: the norm lost to the
    absorbed half-line, or equivalently the boundary flux of the restricted
    state, estimates the same arrival probability.

The three agree within quadrature error on their common domain; the
acceptance tests hold them to that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad
from scipy.stats import norm as _std_normal

from .core_model import Interval, PhysParams
from .gaussian_engine import (
    Cov2,
    GaussianMixtureState,
    convolve_state,
    evaluate_state,
    flux_density,
    husimi_smear,
    moments,
    position_density_gradient,
    propagate_mixture,
    qbm_covariance,
    qbm_covariance_comoving,
)
from .grid_engine import (
    Axis,
    PhaseSpaceGrid,
    default_axes,
    propagate_wigner_qbm,
    slice_at_q0,
    wigner_grid_from_state,
)

__all__ = [
    "arrival_current",
    "current_from_wigner",
    "arrival_probability",
    "q_function_current",
    "povm_threshold_time",
    "PovmEffect",
    "build_povm_E",
    "povm_F_expectation",
    "StochasticArrival",
    "arrival_probability_stochastic",
    "ArrivalResult",
    "backflow_scan",
]

# Accumulated-noise threshold for the POVM split: the comoving covariance
# admits a minimum-uncertainty decomposition iff D t^2 / m >= this * hbar.
_POVM_THRESHOLD = 1.5 + math.sqrt(3.0)


def arrival_current(
    state: GaussianMixtureState,
    t: float,
    params: PhysParams,
    corrected: bool = False,
) -> float:
    """Arrival current J(t) = -j(0) of the exactly evolved state.

    corrected=True adds the diffusive-current contribution
    +(hbar^2 b^2 / 2) d rho/dx |_0, which is what actually balances the
    continuity equation for gamma > 0 (it vanishes identically otherwise).
    """
    evolved = propagate_mixture(state, t, params)
    j = -flux_density(evolved, 0.0, params.mass)
    if corrected and params.gamma != 0.0:
        coeff = 0.5 * (params.hbar * params.b) ** 2
        j += coeff * position_density_gradient(evolved, 0.0)
    return float(j)


def current_from_wigner(w: PhaseSpaceGrid, params: PhysParams) -> float:
    """Grid estimate of the arrival current from a Wigner snapshot."""
    prof = slice_at_q0(w)
    return float(-np.trapezoid(w.p.points * prof, dx=w.p.step) / params.mass)


def arrival_probability(
    state: GaussianMixtureState,
    interval: Interval,
    params: PhysParams,
    corrected: bool = False,
) -> float:
    """Time integral of the arrival current over the interval."""
    val, _err = quad(
        lambda t: arrival_current(state, t, params, corrected=corrected),
        interval.t1,
        interval.t2,
        limit=400,
        epsabs=1e-12,
        epsrel=1e-10,
    )
    return float(val)


def q_function_current(
    state: GaussianMixtureState, t: float, params: PhysParams, n: int = 4001
) -> float:
    """Arrival current computed in the comoving picture.

    Writing the evolved current as a line integral over the *initial* state
    smeared with the comoving noise covariance,

        J(t) = int dp (-p/m) (g_At * W0)(p, -p t / m),

    exercises a completely different pipeline from :func:`arrival_current`
    (covariance transport instead of state transport); the two agree to
    quadrature accuracy.
    """
    if t < 0.0:
        raise ValueError(f"time must be non-negative, got {t}")
    if t == 0.0:
        smeared = state
    else:
        smeared = convolve_state(state, qbm_covariance_comoving(t, params))
    mean, cov = moments(smeared)
    sp = math.sqrt(cov.pp)
    p = np.linspace(mean[0] - 9.0 * sp, mean[0] + 9.0 * sp, n)
    line = evaluate_state(smeared, p, -p * t / params.mass)
    return float(np.trapezoid(-p / params.mass * line, p))


# ---------------------------------------------------------------------------
# POVM construction


def povm_threshold_time(params: PhysParams) -> float:
    """Earliest reference time with a valid effect-operator split.

    The comoving covariance can shed a minimum-uncertainty Gaussian and
    stay positive only once D t^2 / m >= (3/2 + sqrt(3)) hbar; before that
    the arrival statistics are genuinely beyond this POVM construction.
    """
    if params.D <= 0.0:
        raise ValueError("POVM construction requires D > 0")
    return math.sqrt(_POVM_THRESHOLD * params.hbar * params.mass / params.D)


def _split_covariance(t_ref: float, params: PhysParams, s: float | None):
    """(s, A0, B) with A0 minimum-uncertainty, B = A(t_ref)~ - A0 PSD."""
    a_t = qbm_covariance_comoving(t_ref, params)
    h = params.hbar
    if s is None:
        # equalising choice: maximises det(B) over the A0 family
        s = float((a_t.pp / (4.0 * a_t.qq)) ** 0.25)
    a0 = Cov2(h * s * s, 0.0, h / (4.0 * s * s))
    b_pp = a_t.pp - a0.pp
    b_qq = a_t.qq - a0.qq
    b_det = b_pp * b_qq - a_t.pq * a_t.pq
    scale = max(a_t.pp * a_t.qq, h * h)
    if b_pp < -1e-12 * math.sqrt(scale) or b_qq < -1e-12 * math.sqrt(scale) or (
        b_det < -1e-10 * scale
    ):
        raise ValueError(
            "too early for POVM construction: accumulated noise "
            f"D t^2 / m = {params.D * t_ref ** 2 / params.mass!r} is below "
            f"the splitting threshold {_POVM_THRESHOLD!r} hbar"
        )
    b = Cov2(max(b_pp, 0.0), a_t.pq, max(b_qq, 0.0))
    return s, a0, b


@dataclass(frozen=True)
class PovmEffect:
    """Arrival effect operator for one time interval, in symbol form.

    The expectation Tr(E rho) = int dz Q(z) S_E(z) pairs the bounded symbol
    S_E (this object) with the A0-smeared Husimi function Q of the state.
    The noise covariance is frozen at t_ref; freezing at the interval
    midpoint cancels the first-order freeze error.
    """

    interval: Interval
    params: PhysParams
    s: float          # squeeze of the minimum-uncertainty part A0
    t_ref: float      # covariance freeze time (midpoint, clipped up to threshold)
    a0: Cov2          # minimum-uncertainty part, absorbed into the state
    b: Cov2           # remainder, absorbed into the symbol

    def _sigma(self, t: float) -> float:
        n = np.array([t / self.params.mass, 1.0])
        var = float(n @ self.b.matrix() @ n)
        return math.sqrt(max(var, 0.0))

    def symbol(self, p, q) -> np.ndarray:
        """S_E(p, q) = Phi(u1) - Phi(u2), the smeared crossing-band indicator."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        m = self.params.mass
        out = []
        for t_i in (self.interval.t1, self.interval.t2):
            arg = q + p * t_i / m
            sig = self._sigma(t_i)
            if sig == 0.0:
                out.append(np.where(arg >= 0.0, 1.0, 0.0))
            else:
                out.append(_std_normal.cdf(arg / sig))
        return out[0] - out[1]

    def expectation(
        self, state: GaussianMixtureState, n: int = 512, widths: float = 9.0
    ) -> float:
        """Tr(E rho) by quadrature of Q * S_E over the smeared support."""
        if state.hbar != self.params.hbar:
            raise ValueError(
                f"state hbar {state.hbar!r} != params hbar {self.params.hbar!r}"
            )
        q_state = husimi_smear(state, self.s)
        pax, qax = default_axes(q_state, self.params, t_max=0.0, n=n, widths=widths)
        pp, qq = np.meshgrid(pax.points, qax.points, indexing="ij")
        q_vals = evaluate_state(q_state, pp, qq)
        integrand = q_vals * self.symbol(pp, qq)
        return float(
            np.trapezoid(np.trapezoid(integrand, dx=qax.step, axis=1), dx=pax.step)
        )


def build_povm_E(
    interval: Interval, params: PhysParams, s: float | None = None
) -> PovmEffect:
    """Effect operator for arrival within the interval.

    The freeze time is the interval midpoint; midpoints earlier than the
    splitting threshold are clipped up to it, which keeps early tiles valid
    at the cost of a (recorded) freeze bias.  Raises when even the interval
    end lies below the threshold.
    """
    t_thr = povm_threshold_time(params)
    if interval.t2 < t_thr:
        raise ValueError(
            f"too early for POVM construction: interval ends at {interval.t2!r} "
            f"but the covariance split needs t >= {t_thr!r}"
        )
    t_ref = max(interval.midpoint, t_thr)
    s_val, a0, b = _split_covariance(t_ref, params, s)
    return PovmEffect(interval=interval, params=params, s=s_val, t_ref=t_ref, a0=a0, b=b)


def povm_F_expectation(
    state: GaussianMixtureState,
    t: float,
    params: PhysParams,
    s: float | None = None,
    n: int = 768,
    widths: float = 9.0,
) -> float:
    """Instantaneous arrival-rate operator paired with the Husimi function.

    Uses the per-time split A(t)~ = A0 + B(t): the symbol is the smeared
    weighted line density

        S_F(z) = -(1/m) [z_p - (B n)_p (n.z) / (n^T B n)]
                 * phi(n.z / sigma) / sigma,      sigma^2 = n^T B n,

    with n = (t/m, 1).  As B -> 0 this collapses back to the line integral
    of :func:`q_function_current`; the expectation equals the arrival
    current for any valid split.
    """
    if state.hbar != params.hbar:
        raise ValueError(f"state hbar {state.hbar!r} != params hbar {params.hbar!r}")
    s_val, a0, b = _split_covariance(t, params, s)
    mass = params.mass
    nvec = np.array([t / mass, 1.0])
    sig2 = float(nvec @ b.matrix() @ nvec)
    q_state = husimi_smear(state, s_val)
    if sig2 <= 0.0:
        # degenerate remainder: fall back to the sharp line integral
        mean, cov = moments(q_state)
        sp = math.sqrt(cov.pp)
        p = np.linspace(mean[0] - widths * sp, mean[0] + widths * sp, 4001)
        line = evaluate_state(q_state, p, -p * t / mass)
        return float(np.trapezoid(-p / mass * line, p))
    sig = math.sqrt(sig2)
    bn_p = float((b.matrix() @ nvec)[0])
    pax, qax = default_axes(q_state, params, t_max=0.0, n=n, widths=widths)
    pp, qq = np.meshgrid(pax.points, qax.points, indexing="ij")
    q_vals = evaluate_state(q_state, pp, qq)
    ndotz = pp * nvec[0] + qq
    weight = pp - bn_p * ndotz / sig2
    gauss = np.exp(-0.5 * (ndotz / sig) ** 2) / (sig * math.sqrt(2.0 * math.pi))
    integrand = -(1.0 / mass) * weight * gauss * q_vals
    return float(np.trapezoid(np.trapezoid(integrand, dx=qax.step, axis=1), dx=pax.step))


# ---------------------------------------------------------------------------
# stochastic (restricted-propagation) route


@dataclass(frozen=True)
class StochasticArrival:
    """Arrival probability from the truncate-and-propagate march."""

    interval: Interval
    eps: float
    norm_loss: float      # restricted-norm drop over the interval
    boundary_flux: float  # time-integrated current of the restricted state
    final_norm: float     # survival probability at interval end

    def mutual_disagreement(self) -> float:
        scale = max(abs(self.norm_loss), abs(self.boundary_flux), 1e-300)
        return abs(self.norm_loss - self.boundary_flux) / scale


def arrival_probability_stochastic(
    state: GaussianMixtureState,
    interval: Interval,
    params: PhysParams,
    eps: float,
    n: int = 256,
    q_margin: float = 4.0,
) -> StochasticArrival:
    """March the restricted evolution and read off the crossing probability.

    Two estimators from one march:  the drop of the restricted norm across
    the interval, and the trapezoid of the boundary current sampled at the
    step times.  They differ at O(eps); their mutual disagreement is the
    cheapest convergence diagnostic.
    """
    for name, t in (("t1", interval.t1), ("t2", interval.t2)):
        k = t / eps
        if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
            raise ValueError(f"{name}/eps = {k!r} is not a whole number of steps")
    k1, k2 = round(interval.t1 / eps), round(interval.t2 / eps)

    pax, qax = default_axes(state, params, t_max=interval.t2, n=n)
    spread = qbm_covariance(interval.t2, params)
    _, cov0 = moments(state)
    q_lo = min(qax.lo, -q_margin * math.sqrt(cov0.qq + spread.qq))
    qax = Axis(q_lo, max(qax.hi, 1.0), n)

    q_pts = qax.points
    mask = (q_pts > 0.0).astype(float)
    mask[np.isclose(q_pts, 0.0, atol=1e-12 * max(1.0, abs(qax.hi)))] = 0.5

    w = wigner_grid_from_state(state, pax, qax)
    w = w.with_values(w.values * mask[None, :])
    norms = [w.integrate()]
    currents = [current_from_wigner(w, params)]
    for _k in range(k2):
        w = propagate_wigner_qbm(w, eps, params, check_mass=False)
        currents.append(current_from_wigner(w, params))
        w = w.with_values(w.values * mask[None, :])
        norms.append(w.integrate())

    norm_loss = norms[k1] - norms[k2]
    flux = float(np.trapezoid(currents[k1 : k2 + 1], dx=eps))
    return StochasticArrival(
        interval=interval,
        eps=eps,
        norm_loss=float(norm_loss),
        boundary_flux=flux,
        final_norm=float(norms[k2]),
    )


# ---------------------------------------------------------------------------
# scans and records


@dataclass(frozen=True)
class ArrivalResult:
    """Sampled arrival-current record J(t) with its running integral."""

    times: np.ndarray
    current: np.ndarray
    cumulative: np.ndarray
    corrected: bool = False
    label: str = ""

    def min_current(self) -> tuple[float, float]:
        """(t, J) at the most negative sampled current."""
        i = int(np.argmin(self.current))
        return float(self.times[i]), float(self.current[i])

    def total(self) -> float:
        return float(self.cumulative[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("# arrival-time record\n")
            fh.write(f"# corrected={self.corrected} label={self.label}\n")
            fh.write("t,J,P_cum\n")
            fh.write("1/time,1/time,1\n")
            for t, j, c in zip(self.times, self.current, self.cumulative):
                fh.write(f"{float(t)!r},{float(j)!r},{float(c)!r}\n")


def backflow_scan(
    state: GaussianMixtureState,
    params: PhysParams,
    times: np.ndarray,
    corrected: bool = False,
    label: str = "",
) -> ArrivalResult:
    """Sample the arrival current on a time grid (exact engine route)."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("need a 1-D array of at least two sample times")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("sample times must be strictly increasing")
    current = np.array(
        [arrival_current(state, t, params, corrected=corrected) for t in times]
    )
    cumulative = np.concatenate(
        [[0.0], cumulative_trapezoid(current, times)]
    )
    return ArrivalResult(
        times=times, current=current, cumulative=cumulative,
        corrected=corrected, label=label,
    )
