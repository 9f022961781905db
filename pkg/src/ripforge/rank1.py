"""Closed-form kernels for rank-1 spurious points.

For vectors x, z the geometry is summarised by the length ratio
rho = |x|/|z|, the incidence angle phi between them, and
zeta = sin(theta), where theta is the angle between the error
e = svec(x x^T - z z^T) and the tangent space range(Xmat). Everything here
is checked numerically against the LMI formulation in :mod:`ripforge.lmi`.
"""

from dataclasses import dataclass

import numpy as np

from .lmi import KernelMatrix, LmiOperators, build_operators, DegenerateGeometry
from .symbasis import smat


@dataclass(frozen=True)
class Rank1Geometry:
    rho: float
    phi: float
    e_norm: float
    zeta: float
    theta: float
    tau: float
    z_norm: float = 1.0
    # sin(phi) in the numerator instead of sin^2(phi); diagnostic only
    zeta_linear_sine: float = float("nan")


def _vec(v):
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.any(v):
        raise DegenerateGeometry("x and z must be nonzero")
    return v


def geometry(x, z):
    x, z = _vec(x), _vec(z)
    nx, nz = np.linalg.norm(x), np.linalg.norm(z)
    rho = nx / nz
    cosphi = float(np.clip(x @ z / (nx * nz), -1.0, 1.0))
    phi = float(np.arccos(cosphi))
    # sin^2 via the rejection of z from x, accurate near phi = 0
    w = z - (x @ z) / (nx * nx) * x
    sin2 = min(1.0, float(w @ w) / (nz * nz))
    e_norm = float(np.sqrt(max(nx ** 4 + nz ** 4 - 2.0 * (x @ z) ** 2, 0.0)))
    denom = np.sqrt((rho ** 2 - 1.0) ** 2 + 2.0 * rho ** 2 * sin2)
    if denom == 0.0:
        zeta = 0.0
        zeta_lin = 0.0
    else:
        zeta = min(1.0, sin2 / denom)
        zeta_lin = np.sqrt(sin2) / denom
    theta = float(np.arcsin(zeta))
    tau = 2.0 * np.sqrt(rho ** 2 + rho ** -2) / zeta ** 2 if zeta > 0 else np.inf
    return Rank1Geometry(float(rho), phi, e_norm, float(zeta), theta, float(tau), float(nz), float(zeta_lin))


@dataclass(frozen=True)
class FocValues:
    cond_star: float
    delta_foc: float
    attainable: bool = True

    @property
    def eta_star(self):
        return 1.0 / self.cond_star


def foc_values(geom):
    """Best condition number of a kernel with L(H) = 0, and its RIP constant."""
    if geom.zeta <= 0.0:
        return FocValues(np.inf, 1.0, attainable=False)
    d = np.sqrt(max(0.0, 1.0 - geom.zeta ** 2))
    return FocValues((1.0 + d) / (1.0 - d), d)


@dataclass(frozen=True)
class SocValues:
    eta_lb: float
    mu: float
    delta_soc: float


def soc_values(geom, z_norm=None):
    if geom.zeta <= 0.0 or not np.isfinite(geom.rho) or geom.rho <= 0.0:
        raise DegenerateGeometry("second-order construction needs phi != 0 and finite rho > 0")
    z_norm = geom.z_norm if z_norm is None else z_norm
    foc = foc_values(geom)
    tau = geom.tau
    d = foc.delta_foc
    return SocValues(1.0 / ((1.0 + tau) * foc.cond_star), z_norm ** 2 / (1.0 + tau), (tau + d) / (1.0 + tau))


def _plane(ops):
    """Orthonormal u (along P_X e) and w (its residual) spanning the plane of e."""
    e = ops.e
    coef, *_ = np.linalg.lstsq(ops.Xmat, e, rcond=None)
    pe = ops.Xmat @ coef
    res = e - pe
    return pe, res


def construct_H0(x, z, check=True):
    """Kernel with L(H0) = 0 whose condition number is the first-order optimum.

    In the plane of u = P_X e/|P_X e| and w = (e - P_X e)/|e - P_X e| the kernel
    is eta I + (1 - eta) q q^T with q at angle (theta + pi)/2 from u, and the
    identity off the plane.
    """
    ops = build_operators(x, z)
    pe, res = _plane(ops)
    npe, nres = np.linalg.norm(pe), np.linalg.norm(res)
    e_norm = np.linalg.norm(ops.e)
    if e_norm == 0.0 or nres <= 1e-14 * e_norm:
        raise DegenerateGeometry("x and z are colinear: e lies in the tangent space")
    N = ops.N
    if npe <= 1e-15 * e_norm:
        # e already orthogonal to range(Xmat)
        return KernelMatrix(np.eye(N), ops.n)
    u, w = pe / npe, res / nres
    theta = np.arctan2(nres, npe)
    eta = (1.0 - np.cos(theta)) / (1.0 + np.cos(theta))
    psi = 0.5 * (theta + np.pi)
    q = np.cos(psi) * u + np.sin(psi) * w
    H = eta * (np.outer(u, u) + np.outer(w, w)) + (1.0 - eta) * np.outer(q, q)
    H += np.eye(N) - np.outer(u, u) - np.outer(w, w)
    H = 0.5 * (H + H.T)
    if check:
        Lh = ops.L(H)
        if np.linalg.norm(Lh) > 1e-10 * max(1.0, np.linalg.norm(ops.Xmat) * e_norm):
            raise ArithmeticError(f"construction failed: |L(H0)| = {np.linalg.norm(Lh):.3g}")
    return KernelMatrix(H, ops.n)


@dataclass(frozen=True, eq=False)
class HTauResult:
    kernel: KernelMatrix
    mu_achieved: float
    tau: float
    doublings: int


def _projector_off(e):
    return np.eye(e.size) - np.outer(e, e) / (e @ e)


def construct_H_tau(x, z, max_doublings=4):
    """(tau P_e_perp + H0)/(1 + tau), with lambda_min(M) measured, not assumed."""
    geom = geometry(x, z)
    if geom.zeta <= 0.0:
        raise DegenerateGeometry("x and z are colinear")
    ops = build_operators(x, z)
    H0 = construct_H0(x, z).H
    Pe = _projector_off(ops.e)
    tau = geom.tau
    for k in range(max_doublings + 1):
        H = (tau * Pe + H0) / (1.0 + tau)
        mu = float(np.linalg.eigvalsh(ops.M(H))[0])
        if mu > 0:
            if np.linalg.norm(ops.L(H)) > 1e-9 * max(1.0, np.linalg.norm(ops.e)):
                raise ArithmeticError("L(H_tau) is not zero")
            return HTauResult(KernelMatrix(H, ops.n), mu, tau, k)
        tau *= 2.0
    raise ArithmeticError(f"M(H_tau) not positive definite after {max_doublings} doublings of tau")


def trace_ratio(M):
    """tr(M_-)/tr(M_+) for the eigen-sign split M = M_+ - M_-."""
    M = np.asarray(M, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    if w.sum() < -1e-12 * max(1.0, np.abs(w).max()):
        raise ValueError("trace of M must be nonnegative")
    pos = w[w > 0].sum()
    if pos <= 0:
        raise ZeroDivisionError("M has no positive part")
    return float(-w[w < 0].sum() / pos)


def lt_adjoint_eigs(y, ops):
    """The two nonzero eigenvalues |Xy| |e| (cos theta_y +- 1) of L^T(y)."""
    if not isinstance(ops, LmiOperators):
        raise TypeError("ops must be LmiOperators")
    yv = np.asarray(y, dtype=float).reshape(-1, order="F")
    Xy = ops.Xmat @ yv
    nxy, ne = np.linalg.norm(Xy), np.linalg.norm(ops.e)
    if ne == 0.0:
        raise DegenerateGeometry("e = 0")
    if nxy == 0.0:
        raise ValueError("Xmat y = 0")
    cos = float(np.clip(ops.e @ Xy / (ne * nxy), -1.0, 1.0))
    return nxy * ne * (cos + 1.0), nxy * ne * (cos - 1.0)


@dataclass(frozen=True)
class SocBounds:
    mat_norm: float
    mat_bound: float
    xpx_min: float
    xpx_bound: float

    @property
    def holds(self):
        return self.mat_norm <= self.mat_bound * (1 + 1e-10) + 1e-12 and \
            self.xpx_min >= self.xpx_bound * (1 - 1e-10) - 1e-12


def lemma_soc_bounds(x, z, H0=None):
    """Spectral norm of smat(H0 e) and lambda_min(Xmat^T P_e_perp Xmat) with their bounds."""
    ops = build_operators(x, z)
    if np.linalg.norm(ops.e) == 0.0:
        raise DegenerateGeometry("e = 0")
    geom = geometry(x, z)
    H0 = construct_H0(x, z).H if H0 is None else np.asarray(getattr(H0, "H", H0))
    B = smat(H0 @ ops.e, ops.n)
    mat_norm = float(np.max(np.abs(np.linalg.eigvalsh(B))))
    Pe = _projector_off(ops.e)
    xpx = float(np.linalg.eigvalsh(ops.Xmat.T @ Pe @ ops.Xmat)[0])
    nx2 = float(np.sum(np.asarray(x, float) ** 2))
    return SocBounds(mat_norm, np.sqrt(1.0 + geom.rho ** 4) * geom.z_norm ** 2, xpx, 2.0 * nx2 * geom.zeta ** 2)
