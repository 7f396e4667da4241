"""Brute-force grid representations and propagators.

Everything in here is deliberately direct: explicit kernel quadratures,
finite grids, interpolated slices.  The grid engine is the oracle that the
closed-form Gaussian engine is validated against, so the two share no
numerical pathway — grid propagation applies the literal evolution kernels
by quadrature.

Conventions: phase-space arrays are indexed ``values[i, j] = W(p_i, q_j)``;
density matrices are ``values[i, j] = rho(x_i, x_j)`` on a common uniform
axis.  All quadratures are trapezoidal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .core_model import PhysParams
from .gaussian_engine import (
    GaussianMixtureState,
    evaluate_state,
    moments,
    qbm_covariance,
)

__all__ = [
    "Axis",
    "DensityMatrixGrid",
    "PhaseSpaceGrid",
    "default_axes",
    "density_matrix_from_state",
    "wigner_grid_from_state",
    "wigner_from_density",
    "q_function_from_wigner",
    "propagate_wigner_qbm",
    "propagate_wigner_restricted",
    "propagate_density_qbm",
    "propagate_density_split",
    "axis_straddling_zero",
    "slice_at_q0",
    "integrate_region",
    "export_phase_space_csv",
]

_DEFAULT_N = 256
_EXTENT_WIDTHS = 8.0  # default half-extent in units of combined state widths


@dataclass(frozen=True)
class Axis:
    """Uniform 1-D grid."""

    lo: float
    hi: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"axis needs at least 2 points, got n={self.n}")
        if not (self.hi > self.lo):
            raise ValueError(f"axis inverted: [{self.lo}, {self.hi}]")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    def index_of(self, x: float) -> float:
        """Fractional index of coordinate x."""
        return (x - self.lo) / self.step


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Wigner-type function sampled on a rectangular (p, q) grid."""

    p: Axis
    q: Axis
    values: np.ndarray  # shape (p.n, q.n)
    hbar: float = 1.0

    def __post_init__(self) -> None:
        if self.values.shape != (self.p.n, self.q.n):
            raise ValueError(
                f"values shape {self.values.shape} != axes ({self.p.n}, {self.q.n})"
            )

    def integrate(self) -> float:
        return float(
            np.trapezoid(np.trapezoid(self.values, dx=self.q.step, axis=1), dx=self.p.step)
        )

    def momentum_marginal(self) -> np.ndarray:
        """int dq W(p, q) per momentum row."""
        return np.trapezoid(self.values, dx=self.q.step, axis=1)

    def position_marginal(self) -> np.ndarray:
        return np.trapezoid(self.values, dx=self.p.step, axis=0)

    def with_values(self, values: np.ndarray) -> "PhaseSpaceGrid":
        return replace(self, values=values)


@dataclass(frozen=True)
class DensityMatrixGrid:
    """Position-representation density matrix on a square uniform grid."""

    axis: Axis
    values: np.ndarray  # shape (n, n), complex
    hbar: float = 1.0

    def __post_init__(self) -> None:
        n = self.axis.n
        if self.values.shape != (n, n):
            raise ValueError(f"values shape {self.values.shape} != ({n}, {n})")

    def trace(self) -> float:
        return float(np.trapezoid(np.real(np.diag(self.values)), dx=self.axis.step))

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.values - self.values.conj().T)))

    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.values))

    def with_values(self, values: np.ndarray) -> "DensityMatrixGrid":
        return replace(self, values=values)


def default_axes(
    state: GaussianMixtureState,
    params: PhysParams,
    t_max: float = 0.0,
    n: int = _DEFAULT_N,
    widths: float = _EXTENT_WIDTHS,
) -> tuple[Axis, Axis]:
    """Axes covering a state's support over an evolution window [0, t_max].

    Extents are the initial mean, swept along the classical flow up to
    t_max, padded by ``widths`` combined standard deviations (initial plus
    accumulated QBM spreading).
    """
    mean, cov = moments(state)
    spread = qbm_covariance(t_max, params) if t_max > 0.0 else None
    sp = math.sqrt(cov.pp + (spread.pp if spread else 0.0))
    sq = math.sqrt(cov.qq + (spread.qq if spread else 0.0))
    q_drift = mean[1] + mean[0] * t_max / params.mass
    q_lo = min(mean[1], q_drift) - widths * sq
    q_hi = max(mean[1], q_drift) + widths * sq
    return (
        Axis(mean[0] - widths * sp, mean[0] + widths * sp, n),
        Axis(q_lo, q_hi, n),
    )


def wigner_grid_from_state(
    state: GaussianMixtureState, p_axis: Axis, q_axis: Axis
) -> PhaseSpaceGrid:
    """Sample a Gaussian-mixture Wigner function on a grid."""
    pp, qq = np.meshgrid(p_axis.points, q_axis.points, indexing="ij")
    return PhaseSpaceGrid(p_axis, q_axis, evaluate_state(state, pp, qq), state.hbar)


def density_matrix_from_state(
    state: GaussianMixtureState, axis: Axis
) -> DensityMatrixGrid:
    """Exact position-representation density matrix of a Gaussian mixture.

    Per term (centre (cp, cq), covariance S, modulation k, phase phi), with
    Xbar = (x+y)/2, xi = x - y, mu(Xbar) = cp + S_pq/S_qq (Xbar - cq) and
    v = S_pp - S_pq^2/S_qq:

      rho(x, y) = w * N(Xbar; cq, S_qq) * (1/2) * sum over eta = +-1 of
                  exp(i eta (kq Xbar + phi)) *
                  exp(i mu(Xbar) u_eta - v u_eta^2 / 2),

    u_eta = xi/hbar + eta*kp.  Unmodulated terms reduce to the familiar
    Gaussian-times-coherence-envelope form.
    """
    x = axis.points
    hbar = state.hbar
    xb = 0.5 * (x[:, None] + x[None, :])
    xi = x[:, None] - x[None, :]
    out = np.zeros((axis.n, axis.n), dtype=complex)
    for term in state.terms:
        c = term.cov
        cp, cq = term.center
        v = c.pp - c.pq * c.pq / c.qq
        mu = cp + (c.pq / c.qq) * (xb - cq)
        envelope = term.weight * np.exp(
            -0.5 * (xb - cq) ** 2 / c.qq
        ) / math.sqrt(2.0 * math.pi * c.qq)
        kp, kq = term.k
        if kp == 0.0 and kq == 0.0 and term.phase == 0.0:
            u = xi / hbar
            out += envelope * np.exp(1j * mu * u - 0.5 * v * u * u)
            continue
        for eta in (+1.0, -1.0):
            u = xi / hbar + eta * kp
            out += 0.5 * envelope * np.exp(
                1j * eta * (kq * xb + term.phase) + 1j * mu * u - 0.5 * v * u * u
            )
    return DensityMatrixGrid(axis, out, hbar)


# ---------------------------------------------------------------------------
# transforms


def wigner_from_density(rho: DensityMatrixGrid, p_axis: Axis | None = None) -> PhaseSpaceGrid:
    """Wigner transform by direct quadrature over the coherence coordinate.

    W(p, q_i) = (1/2 pi hbar) * sum_k e^{-i p xi_k / hbar}
                rho(q_i + k dx, q_i - k dx) * (2 dx),

    using the exact anti-diagonal samples xi_k = 2 k dx.  Hermiticity makes
    the +-k pairs combine into a manifestly real result.  The default
    momentum axis spans the Nyquist window pi hbar / (2 dx).
    """
    axis = rho.axis
    n = axis.n
    dx = axis.step
    hbar = rho.hbar
    if p_axis is None:
        p_max = math.pi * hbar / (2.0 * dx) * (1.0 - 1.0 / n)
        p_axis = Axis(-p_max, p_max, n)
    kmax = n - 1
    # anti-diagonal extraction: add[k][i] = rho[i+k, i-k] where valid
    vals = rho.values
    re = np.zeros((kmax + 1, n))
    im = np.zeros((kmax + 1, n))
    for k in range(kmax + 1):
        i = np.arange(k, n - k)
        if i.size == 0:
            break
        d = vals[i + k, i - k]
        re[k, i] = d.real
        im[k, i] = d.imag
    xi = 2.0 * dx * np.arange(kmax + 1)
    ph = np.outer(p_axis.points, xi) / hbar
    cos_m, sin_m = np.cos(ph), np.sin(ph)
    w = cos_m @ re + sin_m @ im  # real part of e^{-i p xi} rho doubled below
    w = 2.0 * w - np.outer(cos_m[:, 0], re[0])  # k=0 term counted once
    w *= 2.0 * dx / (2.0 * math.pi * hbar)
    return PhaseSpaceGrid(p_axis, axis, w, hbar)


def q_function_from_wigner(w: PhaseSpaceGrid, s: float) -> PhaseSpaceGrid:
    """Gaussian smoothing to the (squeezed) Husimi representation.

    Convolves with diag(hbar s^2, hbar / 4 s^2) — a minimum-uncertainty
    kernel — so the output is non-negative up to quadrature error for any
    valid Wigner input.
    """
    if s <= 0.0:
        raise ValueError(f"s must be positive, got {s}")
    sig_p = math.sqrt(w.hbar) * s / w.p.step
    sig_q = math.sqrt(w.hbar) / (2.0 * s) / w.q.step
    out = ndimage.gaussian_filter1d(w.values, sig_p, axis=0, mode="constant", truncate=8.0)
    out = ndimage.gaussian_filter1d(out, sig_q, axis=1, mode="constant", truncate=8.0)
    return w.with_values(out)


# ---------------------------------------------------------------------------
# Wigner propagation


def _shear_q(values: np.ndarray, p_pts: np.ndarray, q_axis: Axis, lam: float) -> np.ndarray:
    """Pushforward along q -> q + lam*p: W'(p, q) = W(p, q - lam p)."""
    n_p, n_q = values.shape
    rows = np.repeat(np.arange(n_p, dtype=float)[:, None], n_q, axis=1)
    cols = (q_axis.points[None, :] - lam * p_pts[:, None] - q_axis.lo) / q_axis.step
    return ndimage.map_coordinates(values, [rows, cols], order=3, mode="constant", cval=0.0)


def _gauss1d(values: np.ndarray, var: float, step: float, axis: int) -> np.ndarray:
    if var <= 0.0:
        return values
    return ndimage.gaussian_filter1d(
        values, math.sqrt(var) / step, axis=axis, mode="constant", truncate=8.0
    )


def propagate_wigner_qbm(
    w: PhaseSpaceGrid,
    t: float,
    params: PhysParams,
    method: str = "fast",
    check_mass: bool = True,
) -> PhaseSpaceGrid:
    """Evolve a gridded Wigner function for time t (negligible dissipation).

    method="direct" applies the literal Gaussian evolution kernel

        K = N exp(-alpha (p-p0)^2 - beta v^2 + eps (p-p0) v),
        v = q - q0 - p0 t/m,
        alpha = 1/Dt, beta = 3m^2/Dt^3, eps = 3m/Dt^2,
        N = sqrt(3 m^2 / (4 pi^2 D^2 t^4)),

    by O(n^4) quadrature — simple, auditable, and the oracle for everything
    else, but limited to modest grids.

    method="fast" (default) applies the exact decomposition of the same
    kernel: shear by t/2m, convolve with diag(2Dt, Dt^3/6m^2), shear by
    t/2m again (A(t) = S_{t/2m} diag(2Dt, Dt^3/6m^2) S_{t/2m}^T).

    Raises when evolved mass leaks off the grid ("grid too small for
    requested time").
    """
    if t < 0.0:
        raise ValueError(f"propagation time must be non-negative, got {t}")
    if params.gamma != 0.0:
        raise ValueError("grid propagation requires negligible dissipation (gamma = 0)")
    if t == 0.0:
        return w
    m = params.mass
    d = params.D
    if method == "fast":
        lam = 0.5 * t / m
        out = _shear_q(w.values, w.p.points, w.q, lam)
        if d > 0.0:
            out = _gauss1d(out, 2.0 * d * t, w.p.step, axis=0)
            out = _gauss1d(out, d * t ** 3 / (6.0 * m * m), w.q.step, axis=1)
        out = _shear_q(out, w.p.points, w.q, lam)
    elif method == "direct":
        if d <= 0.0:
            raise ValueError("direct kernel method requires D > 0")
        if w.p.n * w.q.n > 170 * 170:
            raise ValueError("direct method is limited to grids up to ~170x170")
        # the kernel's thin principal width sqrt(det A / A_pp) must be
        # resolved, else the quadrature rides over a ridge it cannot see
        thin = math.sqrt(d * t ** 3 / 6.0) / m
        if thin < 1.2 * w.q.step:
            raise ValueError("grid too coarse for requested time")
        alpha = 1.0 / (d * t)
        beta = 3.0 * m * m / (d * t ** 3)
        epsl = 3.0 * m / (d * t * t)
        norm = math.sqrt(3.0 * m * m / (4.0 * math.pi ** 2 * d * d * t ** 4))
        p = w.p.points
        q = w.q.points
        wq = np.full(w.q.n, w.q.step)
        wq[[0, -1]] *= 0.5
        wp = np.full(w.p.n, w.p.step)
        wp[[0, -1]] *= 0.5
        src = w.values * (wp[:, None] * wq[None, :])
        out = np.zeros_like(w.values)
        for k0 in range(w.p.n):
            p0 = p[k0]
            dp = p - p0  # (n_p,)
            v = q[:, None] - q[None, :] - p0 * t / m  # (n_q out, n_q0)
            kern = np.exp(
                -alpha * dp[:, None, None] ** 2
                - beta * v[None, :, :] ** 2
                + epsl * dp[:, None, None] * v[None, :, :]
            )
            out += norm * np.einsum("ijl,l->ij", kern, src[k0])
    else:
        raise ValueError(f"unknown method {method!r}")
    result = w.with_values(out)
    if check_mass:
        before, after = w.integrate(), result.integrate()
        if abs(before) > 1e-12 and abs(after - before) > 1e-3 * abs(before):
            raise ValueError("grid too small for requested time")
    return result


def propagate_wigner_restricted(
    w: PhaseSpaceGrid, t: float, eps: float, params: PhysParams
) -> PhaseSpaceGrid:
    """Propagate with repeated truncation to q > 0 every eps of time.

    Realises the restricted (no-crossing) evolution: each eps-step applies
    the exact QBM step and then zeroes the q < 0 half, weighting a grid
    point lying exactly on q = 0 by 1/2.  The result is unnormalised — the
    lost mass is the cumulative crossing probability.  t/eps must be an
    integer number of steps.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    steps_f = t / eps
    steps = round(steps_f)
    if steps < 1 or abs(steps_f - steps) > 1e-9 * max(1.0, steps):
        raise ValueError(f"t/eps = {steps_f!r} is not a whole number of steps")
    q_pts = w.q.points
    mask = (q_pts > 0.0).astype(float)
    on_boundary = np.isclose(q_pts, 0.0, atol=1e-12 * max(1.0, abs(w.q.hi)))
    mask[on_boundary] = 0.5
    out = w.with_values(w.values * mask[None, :])
    for _ in range(steps):
        out = propagate_wigner_qbm(out, eps, params, check_mass=False)
        out = out.with_values(out.values * mask[None, :])
    return out


# ---------------------------------------------------------------------------
# density-matrix propagation (rotated-coordinate kernel quadrature)


def _coherence_halfwidth(rho: DensityMatrixGrid, rel_floor: float = 1e-10) -> float:
    """Largest |x - y| at which the density matrix is non-negligible."""
    vals = np.abs(rho.values)
    peak = vals.max()
    if peak == 0.0:
        return rho.axis.step
    n = rho.axis.n
    width = 0
    for k in range(n - 1, -1, -1):
        if np.abs(np.diagonal(vals, offset=k)).max() > rel_floor * peak:
            width = k
            break
    return max(width, 1) * rho.axis.step


def _rotated_samples(rho: DensityMatrixGrid, big_x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Bicubic samples of rho at x = X + xi/2, y = X - xi/2 (meshed)."""
    ax = rho.axis
    xs = big_x[:, None] + 0.5 * xi[None, :]
    ys = big_x[:, None] - 0.5 * xi[None, :]
    ri = (xs - ax.lo) / ax.step
    ci = (ys - ax.lo) / ax.step
    out_re = ndimage.map_coordinates(rho.values.real, [ri, ci], order=3, mode="constant")
    out_im = ndimage.map_coordinates(rho.values.imag, [ri, ci], order=3, mode="constant")
    return out_re + 1j * out_im


_PHASE_STEP = 0.35  # max kernel-phase advance per quadrature cell (radians)
_MAX_INTERNAL = 6000


def _internal_axes(
    x_extent: float, xi_max: float, mu: float, dx: float
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature grids for the oscillatory rotated kernel.

    Spacings must resolve both the data (input grid scale) and the kernel
    phase mu * X * xi:  d_xi <= phase_step / (mu |X|_max) and
    dX <= phase_step / (mu xi_max).
    """
    d_big_x = min(dx, _PHASE_STEP / (mu * xi_max)) if xi_max > 0 else dx
    d_xi = min(2.0 * dx, _PHASE_STEP / (mu * x_extent)) if x_extent > 0 else 2.0 * dx
    n_big_x = int(math.ceil(2.0 * x_extent / d_big_x)) + 1
    n_xi = int(math.ceil(2.0 * xi_max / d_xi)) + 1
    if max(n_big_x, n_xi) > _MAX_INTERNAL:
        raise ValueError("grid too coarse for requested time")
    return (
        np.linspace(-x_extent, x_extent, n_big_x),
        np.linspace(-xi_max, xi_max, n_xi),
    )


def propagate_density_qbm(
    rho: DensityMatrixGrid, t: float, params: PhysParams
) -> DensityMatrixGrid:
    """Evolve a density matrix for time t with the QBM propagator.

    Quadrature of the exact kernel (negligible dissipation)

        J = (m / 2 pi hbar t) exp( (i m / 2 hbar t)[(x-x0)^2 - (y-y0)^2]
            - (D t / 3 hbar^2)[(x-y)^2 + (x-y)(x0-y0) + (x0-y0)^2] ),

    written in rotated coordinates X = (x+y)/2, xi = x - y where the phase
    factorises and the double integral becomes two complex matrix products.
    Internal quadrature grids adapt to the kernel phase m X xi / (hbar t);
    the result is returned on the input axis.
    """
    vals, axis = _propagate_density_raw(
        rho.values, rho.axis, t, params, hermitian=True
    )
    return DensityMatrixGrid(axis, vals, rho.hbar)


def _propagate_density_raw(
    values: np.ndarray,
    axis: Axis,
    t: float,
    params: PhysParams,
    hermitian: bool = False,
):
    """Kernel quadrature on raw (possibly one-sided-projected) pair states."""
    if t <= 0.0:
        raise ValueError(f"propagation time must be positive, got {t}")
    if params.gamma != 0.0:
        raise ValueError("density propagator requires negligible dissipation (gamma = 0)")
    hbar = params.hbar
    m = params.mass
    mu = m / (hbar * t)
    c = params.D * t / (3.0 * hbar * hbar)
    rho = DensityMatrixGrid(axis, values.astype(complex), hbar)

    x_extent = max(abs(axis.lo), abs(axis.hi))
    xi_in_max = _coherence_halfwidth(rho)
    # output coherence support: input support plus kernel damping cutoff
    if c > 0.0:
        xi_out_max = min(2.0 * x_extent, math.sqrt(41.0 / c) + xi_in_max)
    else:
        xi_out_max = 2.0 * x_extent
    big_x0, xi0 = _internal_axes(x_extent, xi_in_max, mu, axis.step)

    src = _rotated_samples(rho, big_x0, xi0)
    w_x = np.full(big_x0.size, big_x0[1] - big_x0[0])
    w_x[[0, -1]] *= 0.5
    w_xi = np.full(xi0.size, xi0[1] - xi0[0])
    w_xi[[0, -1]] *= 0.5
    m_src = src * np.exp(1j * mu * np.outer(big_x0, xi0) - c * xi0[None, :] ** 2)
    m_src *= np.outer(w_x, w_xi)

    # output grids chosen so rho(x_i, x_j) is an exact lookup:
    # X on half steps, xi on integer steps of the input axis.
    n = axis.n
    big_x_out = axis.lo + 0.5 * axis.step * np.arange(2 * n - 1)
    k_out = np.arange(-(n - 1), n)
    xi_out = axis.step * k_out
    live = np.abs(xi_out) <= xi_out_max
    xi_live = xi_out[live]

    e1 = np.exp(-1j * mu * np.outer(xi_live, big_x0))        # (xi_out, X0)
    p1 = e1 @ m_src                                          # (xi_out, xi0)
    qp = np.exp(-c * np.outer(xi0, xi_live)) * p1.T          # (xi0, xi_out)
    e2 = np.exp(-1j * mu * np.outer(big_x_out, xi0))         # (X, xi0)
    r0 = e2 @ qp                                             # (X, xi_out)
    r0 *= np.exp(1j * mu * np.outer(big_x_out, xi_live) - c * xi_live[None, :] ** 2)
    r0 *= m / (2.0 * math.pi * hbar * t)

    full = np.zeros((2 * n - 1, 2 * n - 1), dtype=complex)
    full[:, live] = r0
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    out = full[ii + jj, (ii - jj) + (n - 1)]
    if hermitian:
        out = 0.5 * (out + out.conj().T.copy())
    return out, axis


def propagated_diagonal(
    rho: DensityMatrixGrid,
    t: float,
    params: PhysParams,
) -> np.ndarray:
    """Diagonal of the evolved density matrix, without forming the full matrix.

    rho_t(x, x) = (m / 2 pi hbar t) int dX0 dxi0
        e^{-i mu (x - X0) xi0} e^{-c xi0^2} rho(X0 + xi0/2, X0 - xi0/2),

    mu = m/(hbar t), c = D t / 3 hbar^2.  Accurate for smooth (unprojected)
    states; a matrix with a sharp projector edge should go through
    :func:`propagate_density_split` instead, because the edge crosses the
    rotated quadrature lattice at an irrational offset and the accumulated
    edge-cell errors do not vanish with refinement.
    """
    if t <= 0.0:
        raise ValueError(f"propagation time must be positive, got {t}")
    if params.gamma != 0.0:
        raise ValueError("density propagator requires negligible dissipation (gamma = 0)")
    axis = rho.axis
    hbar, m = rho.hbar, params.mass
    mu = m / (hbar * t)
    c = params.D * t / (3.0 * hbar * hbar)
    x_extent = max(abs(axis.lo), abs(axis.hi))
    xi_max = _coherence_halfwidth(rho)
    big_x0, xi0 = _internal_axes(x_extent, xi_max, mu, axis.step)
    src = _rotated_samples(rho, big_x0, xi0)
    w_x = np.full(big_x0.size, big_x0[1] - big_x0[0])
    w_x[[0, -1]] *= 0.5
    w_xi = np.full(xi0.size, xi0[1] - xi0[0])
    w_xi[[0, -1]] *= 0.5
    inner = (w_x[:, None] * src * np.exp(1j * mu * np.outer(big_x0, xi0))).sum(axis=0)
    inner *= w_xi * np.exp(-c * xi0 ** 2)
    phase = np.exp(-1j * mu * np.outer(axis.points, xi0))
    diag = (phase @ inner) * m / (2.0 * math.pi * hbar * t)
    return np.real(diag)


def axis_straddling_zero(lo: float, hi: float, n: int) -> Axis:
    """Uniform axis covering [lo, hi] with x = 0 exactly mid-cell.

    Projection masks at the origin then split cleanly between samples, so
    no grid point needs a half weight.
    """
    if not (lo < 0.0 < hi):
        raise ValueError(f"range [{lo}, {hi}] must straddle zero")
    step = (hi - lo) / (n - 1)
    k = math.ceil(-lo / step - 0.5)
    return Axis(-(k + 0.5) * step, -(k + 0.5) * step + (n - 1) * step, n)


def propagate_density_split(
    rho: DensityMatrixGrid, t: float, params: PhysParams
) -> DensityMatrixGrid:
    """Spectrally exact density-matrix step (negligible dissipation).

    Uses the exact factorisation of the evolution into a free half-step, a
    Gaussian noise channel, and another free half-step: free steps are
    diagonal in the momentum representation, the momentum noise multiplies
    by exp(-v_p (x-y)^2 / 2 hbar^2) in position space, and the position
    noise is diagonal in momentum space as exp(-v_q (k_x + k_y)^2 / 2),
    with v_p = 2 D t and v_q = D t^3 / 6 m^2.  No splitting error — the
    factorisation is algebraically exact — only periodic wrap-around,
    which is checked for.

    Complements :func:`propagate_density_qbm`: that one is the literal
    kernel quadrature (auditable, slow), this one handles the long masked
    evolution chains.
    """
    vals = _propagate_density_split_raw(rho.values, rho.axis, t, params)
    return DensityMatrixGrid(rho.axis, vals, rho.hbar)


def _propagate_density_split_raw(
    values: np.ndarray, axis: Axis, t: float, params: PhysParams,
    wrap_check: bool = True,
) -> np.ndarray:
    if t < 0.0:
        raise ValueError(f"propagation time must be non-negative, got {t}")
    if params.gamma != 0.0:
        raise ValueError("density propagator requires negligible dissipation (gamma = 0)")
    if t == 0.0:
        return values.astype(complex, copy=True)
    hbar, m, d = params.hbar, params.mass, params.D
    k = 2.0 * math.pi * np.fft.fftfreq(axis.n, d=axis.step)
    half = np.exp(-1j * hbar * (0.5 * t) * (k[:, None] ** 2 - k[None, :] ** 2) / (2.0 * m))
    spec = np.fft.fft2(values)
    spec *= half
    if d > 0.0:
        v_q = d * t ** 3 / (6.0 * m * m)
        spec *= np.exp(-0.5 * v_q * (k[:, None] + k[None, :]) ** 2)
    mid = np.fft.ifft2(spec)
    if d > 0.0:
        v_p = 2.0 * d * t
        x = axis.points
        xi = x[:, None] - x[None, :]
        mid *= np.exp(-0.5 * v_p * (xi / hbar) ** 2)
    spec = np.fft.fft2(mid)
    spec *= half
    out = np.fft.ifft2(spec)
    if wrap_check:
        peak = np.abs(out).max()
        border = max(
            np.abs(out[:2, :]).max(), np.abs(out[-2:, :]).max(),
            np.abs(out[:, :2]).max(), np.abs(out[:, -2:]).max(),
        )
        if peak > 0.0 and border > 2e-3 * peak:
            raise ValueError("grid too small for requested time")
    return out


# ---------------------------------------------------------------------------
# reductions and export


def slice_at_q0(w: PhaseSpaceGrid) -> np.ndarray:
    """W(p, q=0) by linear interpolation between the bracketing q-columns."""
    q = w.q
    if not (q.lo <= 0.0 <= q.hi):
        raise ValueError(f"q = 0 outside grid [{q.lo}, {q.hi}]")
    f = q.index_of(0.0)
    j = min(int(math.floor(f)), q.n - 2)
    frac = f - j
    return (1.0 - frac) * w.values[:, j] + frac * w.values[:, j + 1]


def integrate_region(
    w: PhaseSpaceGrid,
    p_range: tuple[float, float] | None = None,
    q_range: tuple[float, float] | None = None,
) -> float:
    """Trapezoid integral over an axis-aligned sub-rectangle (grid-snapped)."""
    pv, qv = w.p.points, w.q.points
    pi = np.ones(w.p.n, bool) if p_range is None else (pv >= p_range[0]) & (pv <= p_range[1])
    qi = np.ones(w.q.n, bool) if q_range is None else (qv >= q_range[0]) & (qv <= q_range[1])
    sub = w.values[np.ix_(pi, qi)]
    if sub.shape[0] < 2 or sub.shape[1] < 2:
        return 0.0
    return float(np.trapezoid(np.trapezoid(sub, dx=w.q.step, axis=1), dx=w.p.step))


def export_phase_space_csv(w: PhaseSpaceGrid, path) -> None:
    """CSV export: axis metadata in '#' header lines, then p, q, W rows."""
    with open(path, "w", newline="\n") as fh:
        fh.write("# phase-space grid export\n")
        fh.write(f"# p_axis: lo={w.p.lo!r} hi={w.p.hi!r} n={w.p.n}\n")
        fh.write(f"# q_axis: lo={w.q.lo!r} hi={w.q.hi!r} n={w.q.n}\n")
        fh.write(f"# hbar: {w.hbar!r}\n")
        fh.write("p,q,w\n")
        for i, p in enumerate(w.p.points):
            for j, q in enumerate(w.q.points):
                fh.write(f"{float(p)!r},{float(q)!r},{float(w.values[i, j])!r}\n")
