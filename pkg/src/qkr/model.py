"""Spin-1/2 quantum kicked rotor: parameters and elementary operators.

One driving period applies a free rotation followed by an instantaneous
spin-orbit kick.  In the momentum eigenbasis |n> the free half multiplies
each amplitude by exp(-i h_e (n + q)^2), with q the conserved
quasimomentum.  The kick is diagonal in angle and acts on the spinor as

    U(theta1, theta2) = exp(-i V / h_e),
    V = (2 arctan(2 d) / d) * (d1 sx + d2 sy + d3 sz),

where d = |(d1, d2, d3)| and the field components are

    d1 = sin(theta1)
    d2 = sin(theta2)
    d3 = dz_factor * (mu - cos(theta1) - cos(theta2)).

The arctan prefactor is chosen so that tan(V/2) = 2 (d . sigma) exactly,
which makes the kick a Cayley transform of the hermitian hopping matrix
W = 2 d . sigma at h_e = 1; the mapping to a static hopping problem
rests on that identity and the test suite checks it numerically.

theta1 is the rotor angle conjugate to n.  theta2 is a drive phase: the
incommensurate sequence theta2(s) = omega s + alpha turns a second angle
degree of freedom into quenched disorder along the time axis.

Everything here is pure and broadcasts elementwise over numpy arrays;
`kick_rotation` is the vectorized workhorse the evolution engine uses,
`kick_matrix` / `w_matrix` build explicit 2x2 matrices for one site.
"""

from __future__ import annotations

import dataclasses

import numpy as np

TWO_PI = 2.0 * np.pi

# Incommensurate drive frequency; 1/sqrt(5) has continued fraction [2,4,4,...]
# so omega*s mod 2*pi never locks onto a short cycle.
OMEGA_DEFAULT = TWO_PI / np.sqrt(5.0)

# Below this |d| the rotation axis is ill-conditioned; sin(chi)/d is replaced
# by its d -> 0 limit 4/h_e (relative error < 1e-15 at the threshold).
SMALL_D = 1e-8

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Static model parameters for one simulation.

    h_e is the effective Planck constant; its inverse u = 1/h_e is the
    control parameter swept across the localization transition.  n_trunc
    sets the momentum cutoff: the state lives on n in [-n_trunc, n_trunc),
    2*n_trunc sites total, and n_trunc must be a power of two so the
    angle grid matches a radix-2 FFT.
    """

    h_e: float
    mu: float = 1.0
    omega: float = OMEGA_DEFAULT
    dz_factor: float = 0.8
    n_trunc: int = 128

    def __post_init__(self) -> None:
        if not self.h_e > 0.0:
            raise ValueError(f"h_e must be positive, got {self.h_e}")
        n = self.n_trunc
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"n_trunc must be a power of two >= 2, got {n}")

    @property
    def u(self) -> float:
        """Inverse effective Planck constant, the transition control knob."""
        return 1.0 / self.h_e

    @property
    def n_sites(self) -> int:
        """Number of momentum sites (= angle grid points), 2 * n_trunc."""
        return 2 * self.n_trunc

    def with_u(self, u: float) -> "ModelParams":
        """Copy of these parameters at a different inverse Planck constant."""
        return dataclasses.replace(self, h_e=1.0 / u)


@dataclasses.dataclass(frozen=True)
class DVector:
    """Kick field (d1, d2, d3) at one angle pair, with its norm."""

    d1: float
    d2: float
    d3: float
    norm: float


def canonical_angle(theta):
    """Map an angle to [0, 2*pi)."""
    return np.mod(theta, TWO_PI)


def d_vector(theta1: float, theta2: float, params: ModelParams) -> DVector:
    """Kick field at one angle pair (angles reduced mod 2*pi on entry)."""
    theta1 = canonical_angle(theta1)
    theta2 = canonical_angle(theta2)
    d1 = float(np.sin(theta1))
    d2 = float(np.sin(theta2))
    d3 = float(params.dz_factor * (params.mu - np.cos(theta1) - np.cos(theta2)))
    return DVector(d1, d2, d3, float(np.sqrt(d1 * d1 + d2 * d2 + d3 * d3)))


def pauli_dot(d1, d2, d3):
    """Stacked 2x2 matrices d . sigma for broadcastable components."""
    d1, d2, d3 = np.broadcast_arrays(d1, d2, d3)
    out = np.empty(d1.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = d3
    out[..., 0, 1] = d1 - 1j * np.asarray(d2)
    out[..., 1, 0] = d1 + 1j * np.asarray(d2)
    out[..., 1, 1] = -np.asarray(d3)
    return out


def kick_rotation(theta1, theta2, params: ModelParams):
    """Spinor rotation implementing one kick, as quaternion components.

    exp(-i V / h_e) rotates the spinor by chi = 2 arctan(2 d) / h_e about
    the unit axis d/|d|, i.e. U = cos(chi) - i sin(chi) (d . sigma) / d.

    Parameters
    ----------
    theta1, theta2 : array_like
        Angle pair(s); broadcast elementwise.
    params : ModelParams
        Supplies h_e, mu, dz_factor.

    Returns
    -------
    (c, v1, v2, v3) : tuple of ndarray
        c = cos(chi) and v_k = sin(chi) * d_k / d, so that
        U = c - i (v1 sx + v2 sy + v3 sz).  The d -> 0 limit is taken
        analytically below SMALL_D.
    """
    theta1 = canonical_angle(np.asarray(theta1, dtype=float))
    theta2 = canonical_angle(np.asarray(theta2, dtype=float))
    d1 = np.sin(theta1)
    d2 = np.sin(theta2)
    d3 = params.dz_factor * (params.mu - np.cos(theta1) - np.cos(theta2))
    dsq = d1 * d1 + d2 * d2 + d3 * d3
    d = np.sqrt(dsq)
    chi = (2.0 / params.h_e) * np.arctan(2.0 * d)
    c = np.cos(chi)
    small = d < SMALL_D
    safe = np.where(small, 1.0, d)
    coef = np.where(small, 4.0 / params.h_e, np.sin(chi) / safe)
    return c, coef * d1, coef * d2, coef * d3


def kick_matrix(theta1: float, theta2: float, params: ModelParams) -> np.ndarray:
    """One-site kick unitary exp(-i V / h_e) as an explicit 2x2 matrix."""
    c, v1, v2, v3 = kick_rotation(theta1, theta2, params)
    return c * IDENTITY_2 - 1j * pauli_dot(v1, v2, v3)


def free_phase(n, q: float, h_e: float):
    """Free-evolution phase exp(-i h_e (n + q)^2) for momentum index n."""
    shifted = np.asarray(n, dtype=float) + q
    return np.exp(-1j * h_e * shifted * shifted)


def w_matrix(theta1: float, theta2: float, params: ModelParams) -> np.ndarray:
    """Hermitian hopping matrix W = 2 d . sigma of the static counterpart.

    At h_e = 1 the kick satisfies exp(-i V) = (1 - i W)(1 + i W)^{-1};
    for general h_e the Cayley partner is tan(chi / 2) d . sigma / d with
    chi = 2 arctan(2 d) / h_e, which reduces to this matrix at h_e = 1.
    """
    dv = d_vector(theta1, theta2, params)
    return 2.0 * pauli_dot(dv.d1, dv.d2, dv.d3)


def w_matrix_general(theta1: float, theta2: float, params: ModelParams) -> np.ndarray:
    """Cayley partner tan(chi/2) * (d . sigma)/d of the kick at any h_e."""
    dv = d_vector(theta1, theta2, params)
    if dv.norm < SMALL_D:
        # tan(chi/2)/d -> 2/h_e as d -> 0
        return (2.0 / params.h_e) * pauli_dot(dv.d1, dv.d2, dv.d3)
    chi = (2.0 / params.h_e) * np.arctan(2.0 * dv.norm)
    return (np.tan(0.5 * chi) / dv.norm) * pauli_dot(dv.d1, dv.d2, dv.d3)
