"""Finite-size scaling analysis of diffusion data near the transition.

Around a localization transition at u_c, the diffusion coefficient
measured at fixed x = t / size^2 is a function of the single variable

    y = (u - u_c) * size^(1/nu),

so curves D(u) taken at different sizes collapse once u_c and nu are
right.  The scaling function is represented by a polynomial of degree
k_max and the parameters are estimated by weighted least squares:

    D_i = sum_k a_k y_i^k,   minimized in  chi^2 = sum_i r_i^2,
    r_i = (model_i - D_i) / sigma_i.

The problem is separable: for fixed (u_c, nu) the coefficients a_k solve
a linear system, so the search runs Nelder-Mead over (u_c, nu) only with
the linear solve nested inside.  Multi-start grids guard against the
local minima this landscape is known for.

sigma_star, the critical diffusion constant, is a_0 = D at y = 0.
Parameter errors come two ways: Gauss covariance from the analytic
Jacobian at the optimum, and a bootstrap that resamples members within
each size stratum (sizes are structural, never resampled away).
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import optimize

# Search box for the exponent; an optimum on the edge means the data do
# not determine nu, which is reported as non-convergence, not as a value.
NU_MIN = 0.3
NU_MAX = 50.0

K_RANGE_DEFAULT = (1, 4)


class ScalingError(RuntimeError):
    """Base class for scaling-analysis failures."""


class UnidentifiableError(ScalingError):
    """The data cannot constrain the scaling parameters at all."""


class ConvergenceError(ScalingError):
    """The optimizer failed to locate a usable minimum."""


class RankDeficiencyError(ScalingError):
    """The linear stage saw dependent columns (degenerate y values)."""


@dataclasses.dataclass(frozen=True)
class ScalingDataset:
    """Points (u_i, size_i, D_i, sigma_i) taken at fixed x = t / size^2."""

    u: np.ndarray
    size: np.ndarray
    d: np.ndarray
    sigma: np.ndarray
    x_ratio: float = 0.25

    def __post_init__(self) -> None:
        u, size, d, sigma = (
            np.asarray(self.u, dtype=float),
            np.asarray(self.size),
            np.asarray(self.d, dtype=float),
            np.asarray(self.sigma, dtype=float),
        )
        n = len(u)
        if not (len(size) == len(d) == len(sigma) == n) or n == 0:
            raise ValueError("dataset columns must be equal-length and non-empty")
        if np.unique(size).size < 2:
            raise UnidentifiableError(
                "finite-size scaling needs at least 2 distinct sizes"
            )
        if not np.all(sigma > 0.0):
            raise ValueError("all sigma must be positive")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "size", np.asarray(size, dtype=int))
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_points(self) -> int:
        return len(self.u)

    def sizes(self) -> np.ndarray:
        return np.unique(self.size)


@dataclasses.dataclass
class ScalingFit:
    """Fitted transition point, exponent and scaling function."""

    u_c: float
    nu: float
    coeffs: np.ndarray
    chi2: float
    dof: int
    k_max: int
    n_points: int
    cov: np.ndarray  # parameter order (u_c, nu, a_0 .. a_k)
    bootstrap_err: "BootstrapErrors | None" = None

    @property
    def sigma_star(self) -> float:
        """Critical diffusion constant, the scaling function at y = 0."""
        return float(self.coeffs[0])

    @property
    def chi2_dof(self) -> float:
        return self.chi2 / self.dof

    @property
    def err_u_c(self) -> float:
        return float(np.sqrt(self.cov[0, 0]))

    @property
    def err_nu(self) -> float:
        return float(np.sqrt(self.cov[1, 1]))

    @property
    def err_sigma_star(self) -> float:
        return float(np.sqrt(self.cov[2, 2]))


def scaling_variable(u, size, u_c: float, nu: float) -> np.ndarray:
    """y = (u - u_c) * size^(1/nu)."""
    return (np.asarray(u, dtype=float) - u_c) * np.asarray(size, dtype=float) ** (
        1.0 / nu
    )


def scaling_polynomial(y, coeffs) -> np.ndarray:
    """Scaling function sum_k a_k y^k (a_0 first)."""
    return np.polyval(np.asarray(coeffs)[::-1], np.asarray(y, dtype=float))


def scaling_model(u, size, u_c: float, nu: float, coeffs) -> np.ndarray:
    """Predicted D at (u, size) for the given transition parameters."""
    return scaling_polynomial(scaling_variable(u, size, u_c, nu), coeffs)


def _linear_stage(ds: ScalingDataset, u_c: float, nu: float, k_max: int):
    """Best coefficients and chi^2 at fixed (u_c, nu); raises on rank loss."""
    y = scaling_variable(ds.u, ds.size, u_c, nu)
    design = np.vander(y, k_max + 1, increasing=True) / ds.sigma[:, None]
    rhs = ds.d / ds.sigma
    coeffs, _, rank, _ = np.linalg.lstsq(design, rhs, rcond=None)
    if rank < k_max + 1:
        raise RankDeficiencyError(
            f"degenerate scaling variable: design rank {rank} < {k_max + 1}"
        )
    resid = design @ coeffs - rhs
    return coeffs, float(resid @ resid), y


def _objective(ds: ScalingDataset, k_max: int, u_lo: float, u_hi: float):
    span = max(u_hi - u_lo, 1e-6)

    def chi2_of(x):
        u_c, nu = x
        if not (NU_MIN <= nu <= NU_MAX):
            return 1e30 * (1.0 + abs(nu))
        if not (u_lo - 2.0 * span <= u_c <= u_hi + 2.0 * span):
            return 1e30 * (1.0 + abs(u_c))
        try:
            _, chi2, _ = _linear_stage(ds, u_c, nu, k_max)
        except RankDeficiencyError:
            return 1e30
        return chi2

    return chi2_of


def _starts(ds: ScalingDataset, nu_grid, u_c_grid):
    if u_c_grid is None:
        lo, hi = float(ds.u.min()), float(ds.u.max())
        mid = 0.5 * (lo + hi)
        width = hi - lo
        u_c_grid = (
            [mid] if width == 0.0 else [mid - 0.25 * width, mid, mid + 0.25 * width]
        )
    if nu_grid is None:
        nu_grid = [1.5, 2.0, 2.6, 3.2, 4.0]
    return [(float(uc), float(nu)) for uc in u_c_grid for nu in nu_grid]


def _jacobian(ds: ScalingDataset, u_c, nu, coeffs):
    """Analytic d(residual)/d(theta) at theta = (u_c, nu, a_0..a_k)."""
    y = scaling_variable(ds.u, ds.size, u_c, nu)
    k_max = len(coeffs) - 1
    powers = np.vander(y, k_max + 1, increasing=True)
    dpoly = np.polyval(np.polyder(np.asarray(coeffs)[::-1]), y)
    nf = ds.size.astype(float)
    dy_duc = -(nf ** (1.0 / nu))
    dy_dnu = y * np.log(nf) * (-1.0 / (nu * nu))
    cols = [dpoly * dy_duc, dpoly * dy_dnu] + [powers[:, j] for j in range(k_max + 1)]
    return np.stack(cols, axis=1) / ds.sigma[:, None]


def fit(
    dataset: ScalingDataset,
    k_max: int,
    *,
    nu_grid=None,
    u_c_grid=None,
    starts=None,
) -> ScalingFit:
    """Fit (u_c, nu, a_0..a_k) to the dataset by separable least squares.

    Parameters
    ----------
    dataset : ScalingDataset
    k_max : int
        Degree of the polynomial scaling function, 1..6.
    nu_grid, u_c_grid : sequences, optional
        Multi-start grids for the outer Nelder-Mead search; defaults span
        the data window and nu in [1.5, 4].
    starts : sequence of (u_c, nu), optional
        Explicit start list overriding the grids (used by the bootstrap
        to warm-start from the full-data optimum).

    Returns
    -------
    ScalingFit

    Raises
    ------
    UnidentifiableError
        Too few points for the parameter count, or u does not vary.
    RankDeficiencyError
        Degenerate design at the optimum.
    ConvergenceError
        No start reached a finite minimum, or the optimum ran into the
        nu search bounds / left the data window.
    """
    if not 1 <= k_max <= 6:
        raise ValueError(f"k_max must be in 1..6, got {k_max}")
    n_par = k_max + 3
    if dataset.n_points < n_par + 1:
        raise UnidentifiableError(
            f"{dataset.n_points} points cannot constrain {n_par} parameters"
        )
    if np.unique(dataset.u).size < 2:
        raise UnidentifiableError("control parameter u does not vary")
    u_lo, u_hi = float(dataset.u.min()), float(dataset.u.max())
    chi2_of = _objective(dataset, k_max, u_lo, u_hi)
    if starts is None:
        starts = _starts(dataset, nu_grid, u_c_grid)

    best = None
    for x0 in starts:
        res = optimize.minimize(
            chi2_of,
            np.asarray(x0, dtype=float),
            method="Nelder-Mead",
            options={"xatol": 1e-8, "fatol": 1e-9, "maxiter": 4000, "maxfev": 8000},
        )
        if best is None or res.fun < best.fun:
            best = res
    # polish the winner to relative 1e-10 in chi^2
    res = optimize.minimize(
        chi2_of,
        best.x,
        method="Nelder-Mead",
        options={
            "xatol": 1e-11,
            "fatol": 1e-10 * max(1.0, abs(best.fun)),
            "maxiter": 4000,
            "maxfev": 8000,
        },
    )
    if res.fun <= best.fun:
        best = res
    if not np.isfinite(best.fun) or best.fun >= 1e29:
        raise ConvergenceError("no start reached a finite chi^2 minimum")
    u_c, nu = float(best.x[0]), float(best.x[1])
    if not (NU_MIN * 1.01 < nu < NU_MAX * 0.99):
        raise ConvergenceError(f"exponent ran to the search bound (nu={nu:.3g})")
    span = max(u_hi - u_lo, 1e-6)
    if not (u_lo - span <= u_c <= u_hi + span):
        raise ConvergenceError(f"u_c={u_c:.6g} escaped the data window")

    coeffs, chi2, _ = _linear_stage(dataset, u_c, nu, k_max)
    jac = _jacobian(dataset, u_c, nu, coeffs)
    # Gauss covariance; pinv tolerates the mild ill-conditioning of
    # high-degree polynomial bases without inventing rank
    cov = np.linalg.pinv(jac.T @ jac, rcond=1e-13)
    dof = dataset.n_points - n_par
    if dof < 1:
        raise UnidentifiableError("no degrees of freedom left")
    return ScalingFit(
        u_c=u_c,
        nu=nu,
        coeffs=np.asarray(coeffs, dtype=float),
        chi2=chi2,
        dof=dof,
        k_max=k_max,
        n_points=dataset.n_points,
        cov=cov,
    )


@dataclasses.dataclass
class BootstrapErrors:
    """Bootstrap standard errors of the fitted parameters."""

    u_c: float
    nu: float
    sigma_star: float
    coeffs: np.ndarray
    n_boot: int
    n_failed: int


def bootstrap_errors(
    dataset: ScalingDataset,
    fit_result: ScalingFit,
    n_boot: int = 200,
    seed: int = 0,
) -> BootstrapErrors:
    """Stratified bootstrap: resample points within each size stratum.

    Sizes are design variables, so every replicate keeps all sizes and
    resamples (with replacement) only the points inside each stratum.
    Replicates are refit warm-started from the full-data optimum; a
    replicate that still fails is skipped, and more than 10 percent
    failures aborts.

    Raises
    ------
    ValueError
        If n_boot < 2 or a stratum holds fewer than 4 points (too few to
        resample meaningfully).
    ConvergenceError
        If more than 10 percent of replicates fail to refit.
    """
    if n_boot < 2:
        raise ValueError(f"n_boot must be >= 2, got {n_boot}")
    strata = [np.flatnonzero(dataset.size == s) for s in dataset.sizes()]
    for s, idx in zip(dataset.sizes(), strata):
        if len(idx) < 4:
            raise ValueError(
                f"size stratum {s} has {len(idx)} points; bootstrap needs >= 4"
            )
    rng = np.random.Generator(np.random.PCG64(seed))
    starts = [(fit_result.u_c, fit_result.nu)]
    samples = []
    n_failed = 0
    for _ in range(n_boot):
        take = np.concatenate(
            [idx[rng.integers(0, len(idx), size=len(idx))] for idx in strata]
        )
        ds_b = ScalingDataset(
            u=dataset.u[take],
            size=dataset.size[take],
            d=dataset.d[take],
            sigma=dataset.sigma[take],
            x_ratio=dataset.x_ratio,
        )
        try:
            fb = fit(ds_b, fit_result.k_max, starts=starts)
        except ScalingError:
            n_failed += 1
            continue
        samples.append((fb.u_c, fb.nu, *fb.coeffs))
    if n_failed > 0.1 * n_boot:
        raise ConvergenceError(
            f"bootstrap unstable: {n_failed}/{n_boot} replicates failed"
        )
    arr = np.asarray(samples)
    std = arr.std(axis=0, ddof=1)
    out = BootstrapErrors(
        u_c=float(std[0]),
        nu=float(std[1]),
        sigma_star=float(std[2]),
        coeffs=std[2:],
        n_boot=n_boot,
        n_failed=n_failed,
    )
    fit_result.bootstrap_err = out
    return out


def select_kmax(dataset: ScalingDataset, k_range=K_RANGE_DEFAULT, **fit_kw):
    """Pick the scaling-function degree by goodness of fit.

    Walks k upward and accepts the first degree whose chi^2/dof falls
    below 1 + 2*sqrt(2/dof) (one-sided two-sigma band of the chi^2
    distribution); if none qualifies, the degree with the smallest
    chi^2/dof wins.  A degree whose fit fails to converge is skipped
    (a too-stiff low order can diverge where a higher order is fine);
    the last error is re-raised only if every degree failed.  Returns
    (k, table) with table rows (k, chi2_dof).
    """
    k_lo, k_hi = int(k_range[0]), int(k_range[1])
    if not 1 <= k_lo <= k_hi <= 6:
        raise ValueError(f"k range must satisfy 1 <= lo <= hi <= 6, got {k_range}")
    table = []
    last_err = None
    for k in range(k_lo, k_hi + 1):
        try:
            f = fit(dataset, k, **fit_kw)
        except ScalingError as err:
            last_err = err
            continue
        table.append((k, f.chi2_dof))
        if f.chi2_dof < 1.0 + 2.0 * np.sqrt(2.0 / f.dof):
            return k, table
    if not table:
        raise last_err if last_err is not None else UnidentifiableError(
            "no degree could be fit"
        )
    best = min(table, key=lambda row: row[1])
    return best[0], table


def collapse_export(dataset: ScalingDataset, fit_result: ScalingFit):
    """Collapse coordinates (y_i, D_i, sigma_i, size_i) at the fitted params."""
    y = scaling_variable(dataset.u, dataset.size, fit_result.u_c, fit_result.nu)
    return y, dataset.d.copy(), dataset.sigma.copy(), dataset.size.copy()


def localization_length(delta_u, nu: float, xi0: float = 1.0):
    """Correlation length xi0 * |u - u_c|^(-nu), evaluated in log space.

    Computing exp(-nu * log|delta_u|) keeps tiny |delta_u| from
    overflowing prematurely and preserves accuracy over many decades.
    """
    delta = np.abs(np.asarray(delta_u, dtype=float))
    if np.any(delta == 0.0):
        raise ValueError("localization length diverges at delta_u = 0")
    return xi0 * np.exp(-nu * np.log(delta))
