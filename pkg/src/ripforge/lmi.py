"""Kernel-matrix formulation of first- and second-order optimality.

For a candidate x and ground truth z, with e = svec(x x^T - z z^T) and Xmat the
N x nr matrix of u -> svec(x u^T + u x^T), any measurement map whose Gram
matrix on the symmetric subspace is H gives

    grad f(x) = L(H) = 2 Xmat^T H e                       (as an n x r matrix)
    hess f(x) = 2 M(H),  M(H) = 2 [I_r (x) smat(H e)] + Xmat^T H Xmat

so zero gradient and a PSD Hessian are linear matrix inequalities in H.
Solving them, then factoring H, forges instances with a prescribed spurious
point.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import sdp
from .sensing import (CriticalityCertificate, SensingInstance, certify, restriction_map, rip_full,
                      rotation_complement)
from .symbasis import basis, smat, svec, svec_dim, sym_eye, sym_pairs

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
DELTA_LB_ITERS = 40


class DegenerateGeometry(ValueError):
    """x or z is zero, or the error e vanishes where a nonzero one is needed."""


class KernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Symmetric PSD Gram matrix on the n(n+1)/2-dimensional symmetric subspace."""

    H: np.ndarray
    n: int

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        N = svec_dim(self.n)
        if H.shape != (N, N):
            raise KernelError(f"kernel must be {N}x{N} for n={self.n}, got {H.shape}")
        if np.max(np.abs(H - H.T)) > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise KernelError("kernel is not symmetric")
        H = 0.5 * (H + H.T)
        w = np.linalg.eigvalsh(H)
        if w[0] < -1e-10 * max(w[-1], 0.0) - 1e-300:
            raise KernelError(f"kernel is indefinite (lambda_min = {w[0]:.3g})")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(self.H)

    @property
    def cond(self):
        w = self.eigenvalues
        return w[-1] / w[0] if w[0] > 0 else np.inf

    @classmethod
    def from_instance(cls, inst):
        return cls(inst.gram(), inst.n)


def eta_to_delta(eta):
    """RIP constant (1 - eta)/(1 + eta) of a kernel with eigenvalue ratio eta."""
    return (1.0 - eta) / (1.0 + eta)


@dataclass(frozen=True, eq=False)
class LmiOperators:
    """Error vector, symmetric-product matrix, and the maps L, M for a pair (x, z)."""

    x: np.ndarray
    z: np.ndarray
    e: np.ndarray
    Xmat: np.ndarray

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def r(self):
        return self.x.shape[1]

    @property
    def N(self):
        return self.e.size

    def L(self, H):
        """Gradient map, returned as an n x r matrix."""
        v = 2.0 * self.Xmat.T @ (H @ self.e)
        return v.reshape((self.n, self.r), order="F")

    def M(self, H):
        B = smat(H @ self.e, self.n)
        Mh = 2.0 * np.kron(np.eye(self.r), B) + self.Xmat.T @ H @ self.Xmat
        return 0.5 * (Mh + Mh.T)

    def L_adjoint(self, y):
        yv = np.asarray(y, dtype=float).reshape(-1, order="F")
        Xy = self.Xmat @ yv
        return np.outer(self.e, Xy) + np.outer(Xy, self.e)

    def M_adjoint(self, V):
        V = 0.5 * (V + V.T)
        n, r = self.n, self.r
        Vsum = sum(V[k * n:(k + 1) * n, k * n:(k + 1) * n] for k in range(r))
        v = svec(Vsum)
        return np.outer(v, self.e) + np.outer(self.e, v) + self.Xmat @ V @ self.Xmat.T

    def L_matrix(self):
        """Matrix of L acting on svec(H), shape (nr, P)."""
        i, j = sym_pairs(self.N)
        c = np.where(i == j, 0.5, 1.0 / np.sqrt(2.0))
        Xm, e = self.Xmat, self.e
        # <E_p, sym(Xmat_a e^T)> * 2 for basis element p = (i, j)
        return 2.0 * c * (Xm[i].T * e[j] + Xm[j].T * e[i])

    def M_matrix(self):
        """Matrix of M acting on svec(H), shape (svec_dim(nr), P)."""
        n, r, N = self.n, self.r, self.N
        i, j = sym_pairs(N)
        c = np.where(i == j, 0.5, 1.0 / np.sqrt(2.0))[:, None, None]
        Xm = self.Xmat
        quad = c * (Xm[i][:, :, None] * Xm[j][:, None, :] + Xm[j][:, :, None] * Xm[i][:, None, :])
        Eb = basis(n)
        lin = c * (self.e[j][:, None, None] * Eb[i] + self.e[i][:, None, None] * Eb[j])
        out = quad
        for k in range(r):
            out[:, k * n:(k + 1) * n, k * n:(k + 1) * n] += 2.0 * lin
        return svec(out).T


def _m_block(ops, mu, d):
    """Cone block for M(H) - mu I, taken on the complement of the rotation directions."""
    Mm = ops.M_matrix()
    k = ops.n * ops.r
    if ops.r > 1:
        Q = rotation_complement(ops.x)
        Mm = _congruence_matrix(Q) @ Mm
        k = Q.shape[1]
    return sdp.ConeBlock(k, -mu * sym_eye(k), _pad(Mm, d, 0), "M")


def _symmetric_product_matrix(x):
    n, r = x.shape
    cols = []
    for a in range(n * r):
        u = np.zeros(n * r)
        u[a] = 1.0
        u = u.reshape((n, r), order="F")
        cols.append(svec(x @ u.T + u @ x.T))
    return np.column_stack(cols)


def build_operators(x, z):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if z.ndim == 1:
        z = z[:, None]
    if x.shape != z.shape:
        raise ValueError(f"x has shape {x.shape} but z has shape {z.shape}")
    if not np.any(x) or not np.any(z):
        raise DegenerateGeometry("x and z must be nonzero")
    e = svec(x @ x.T - z @ z.T)
    return LmiOperators(x, z, e, _symmetric_product_matrix(x))


def error_is_degenerate(ops, tol=1e-12):
    scale = max(1.0, float(np.sum(ops.x ** 2)), float(np.sum(ops.z ** 2))) ** 2
    return float(np.linalg.norm(ops.e)) <= tol * scale


# -- SDP assembly ------------------------------------------------------------

def _identity_block(P, d, offset, eta_col=None, sign=1.0, const=None, name=""):
    """Block sign*H (+ eta column) with H = smat(y[offset:offset+P])."""
    N = int(round((np.sqrt(8 * P + 1) - 1) / 2))
    rows = np.arange(P)
    A = sp.csr_matrix((np.full(P, sign), (rows, offset + rows)), shape=(P, d))
    if eta_col is not None:
        idx, coef = eta_col
        A = (A + sp.csr_matrix((coef * sym_eye(N), (rows, np.full(P, idx))), shape=(P, d))).tocsr()
    const = np.zeros(P) if const is None else const
    return sdp.ConeBlock(N, const, A, name)


def _pad(Mat, d, offset):
    out = np.zeros((Mat.shape[0], d))
    out[:, offset:offset + Mat.shape[1]] = Mat
    return out


def _start(P, d, eta_index=None, eta0=0.25):
    y0 = np.zeros(d)
    y0[:P] = 0.5 * sym_eye(int(round((np.sqrt(8 * P + 1) - 1) / 2)))
    if eta_index is not None:
        y0[eta_index] = eta0
    return y0


def assemble_feasibility(ops, mu=0.0, bound=True):
    """L(H) = 0, M(H) - mu I PSD, H PSD (and H <= I when ``bound``), zero objective.

    The bound only fixes the scale of H; for mu = 0 it changes nothing.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    N = ops.N
    P = svec_dim(N)
    d = P
    if error_is_degenerate(ops):
        log.warning("degenerate geometry: e = 0, so x is the ground truth and not a spurious point")
    blocks = [_identity_block(P, d, 0, name="H")]
    if bound:
        blocks.append(_identity_block(P, d, 0, sign=-1.0, const=sym_eye(N), name="H_upper"))
    blocks.append(_m_block(ops, mu, d))
    return sdp.SdpProblem(d, np.zeros(d), ops.L_matrix(), np.zeros(ops.n * ops.r), tuple(blocks),
                          start=_start(P, d), layout={"H": slice(0, P)}, name="lmi_feasibility")


def assemble_opt(ops, mu=0.0, second_order=True):
    """maximize eta subject to eta I <= H <= I, L(H) = 0, M(H) - mu I PSD, eta >= 0.

    ``eta >= 0`` together with ``eta I <= H`` is the PSD constraint on H.
    With ``second_order=False`` the M block is dropped.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    N = ops.N
    P = svec_dim(N)
    d = P + 1
    if error_is_degenerate(ops):
        log.warning("degenerate geometry: e = 0, so x is the ground truth and not a spurious point")
    blocks = [
        _identity_block(P, d, 0, eta_col=(P, -1.0), name="H_lower"),
        _identity_block(P, d, 0, sign=-1.0, const=sym_eye(N), name="H_upper"),
        sdp.ConeBlock(1, np.zeros(1), sp.csr_matrix(([1.0], ([0], [P])), shape=(1, d)), "eta_nonneg"),
    ]
    if second_order:
        blocks.append(_m_block(ops, mu, d))
    obj = np.zeros(d)
    obj[P] = 1.0
    return sdp.SdpProblem(d, obj, _pad(ops.L_matrix(), d, 0), np.zeros(ops.n * ops.r), tuple(blocks),
                          start=_start(P, d, P), layout={"H": slice(0, P), "eta": slice(P, P + 1)},
                          name="lmi_opt")


def orthonormal_basis(V, tol=1e-10):
    """Orthonormal basis of range(V); raises if V is rank deficient."""
    V = np.asarray(V, dtype=float)
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    rank = int(np.sum(s > tol * max(s[0], 1e-300)))
    if rank < min(V.shape):
        raise DegenerateGeometry(f"[x, z] has rank {rank} < {min(V.shape)}")
    return U[:, :rank]


def _congruence_matrix(W):
    """Matrix of h -> svec(W^T smat(h) W), shape (svec_dim(W.shape[1]), svec_dim(W.shape[0]))."""
    i, j = sym_pairs(W.shape[0])
    c = np.where(i == j, 0.5, 1.0 / np.sqrt(2.0))[:, None, None]
    outer = c * (W[i][:, :, None] * W[j][:, None, :] + W[j][:, :, None] * W[i][:, None, :])
    return svec(outer).T


def assemble_delta_lb(ops, U=None, delta=None, h_cap=100.0):
    """Restricted-RIP lower-bound problem on {U Y U^T}.

    With ``delta=None`` returns the direct form: maximize eta subject to
    eta G <= W^T H W <= G, L(H) = 0, M(H) PSD, 0 <= H <= h_cap I, where
    delta_lb = (1 - eta)/(1 + eta). With a fixed ``delta`` returns the
    feasibility problem (1 - delta) G <= W^T H W <= (1 + delta) G used by the
    bisection driver. The cap on H keeps the feasible set bounded in the
    directions that W does not see.
    """
    if U is None:
        U = orthonormal_basis(np.hstack([ops.x, ops.z]))
    U = np.asarray(U, dtype=float)
    if np.max(np.abs(U.T @ U - np.eye(U.shape[1]))) > 1e-10:
        raise ValueError("U must have orthonormal columns")
    N = ops.N
    P = svec_dim(N)
    k = U.shape[1]
    W = restriction_map(U)
    G = W.T @ W
    kk = W.shape[1]
    WHW = _congruence_matrix(W)
    direct = delta is None
    d = P + 1 if direct else P
    k_nr = ops.n * ops.r
    blocks = [
        _identity_block(P, d, 0, name="H"),
        _identity_block(P, d, 0, sign=-1.0, const=h_cap * sym_eye(N), name="H_cap"),
        _m_block(ops, 0.0, d),
    ]
    if direct:
        lo = _pad(WHW, d, 0)
        lo[:, P] = -svec(G)
        blocks.append(sdp.ConeBlock(kk, np.zeros(svec_dim(kk)), lo, "rip_lower"))
        blocks.append(sdp.ConeBlock(kk, svec(G), -_pad(WHW, d, 0), "rip_upper"))
        blocks.append(sdp.ConeBlock(1, np.zeros(1), sp.csr_matrix(([1.0], ([0], [P])), shape=(1, d)),
                                    "eta_nonneg"))
        obj = np.zeros(d)
        obj[P] = 1.0
        layout = {"H": slice(0, P), "eta": slice(P, P + 1)}
        start = _start(P, d, P)
    else:
        blocks.append(sdp.ConeBlock(kk, -(1.0 - delta) * svec(G), _pad(WHW, d, 0), "rip_lower"))
        blocks.append(sdp.ConeBlock(kk, (1.0 + delta) * svec(G), -_pad(WHW, d, 0), "rip_upper"))
        obj = np.zeros(d)
        layout = {"H": slice(0, P)}
        start = _start(P, d)
    return sdp.SdpProblem(d, obj, _pad(ops.L_matrix(), d, 0), np.zeros(k_nr), tuple(blocks),
                          start=start, layout=layout, name="delta_lb")


def solve_delta_ub(ops, mu=0.0, tol=sdp.DEFAULT_TOL):
    """Upper bound on the threshold for this (x, z): (1 - eta*)/(1 + eta*)."""
    sol = sdp.solve(assemble_opt(ops, mu), tol=tol)
    return eta_to_delta(sol.objective), sol


def solve_delta_lb(ops, U=None, tol=sdp.DEFAULT_TOL, h_cap=100.0):
    """Lower bound from the direct min-delta problem."""
    sol = sdp.solve(assemble_delta_lb(ops, U, h_cap=h_cap), tol=tol)
    return eta_to_delta(sol.objective), sol


def delta_lb_bisection(ops, U=None, iters=DELTA_LB_ITERS, tol=sdp.DEFAULT_TOL, h_cap=100.0):
    """Lower bound by bisection on delta in [0, 1] over feasibility problems."""
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        res = sdp.feasibility(assemble_delta_lb(ops, U, delta=mid, h_cap=h_cap), margin=0.0, tol=tol)
        if res.feasible:
            hi = mid
        else:
            lo = mid
    return hi


def kernel_from_solution(problem, sol, n):
    N = svec_dim(n)
    H = smat(problem.variable(sol.y, "H"), N)
    w = np.linalg.eigvalsh(H)
    if w[0] < 0:
        # interior-point iterates can sit a hair outside the cone
        H = H - min(w[0], 0.0) * np.eye(N) if w[0] > -1e-7 * max(w[-1], 1.0) else H
    return KernelMatrix(H, n)


def factor_kernel(kernel, z, rank_tol=RANK_TOL):
    """Measurement matrices whose Gram form is ``kernel``; ground truth z.

    ``rank_tol`` bounds the negative eigenvalues accepted as round-off. Every
    eigenvalue above round-off level is kept, however small: dropping one would
    change the instance and its RIP constant.
    """
    H = kernel.H
    w, V = np.linalg.eigh(H)
    if w[0] < -rank_tol * max(w[-1], 0.0):
        raise KernelError(f"kernel is indefinite beyond tolerance (lambda_min = {w[0]:.3g})")
    keep = w > w.size * np.finfo(float).eps * w[-1]
    rows = (V[:, keep] * np.sqrt(w[keep])).T
    A = smat(rows[::-1], kernel.n)
    return SensingInstance.from_measurements(A, z)


@dataclass(frozen=True, eq=False)
class ForgeResult:
    kernel: KernelMatrix
    eta: float
    delta_n: float
    instance: SensingInstance
    x: np.ndarray
    certificate: CriticalityCertificate
    mu: float = 0.0
    solver_status: str = ""

    def to_dict(self, include_kernel=False):
        doc = {
            "instance": self.instance.to_dict(),
            "x": np.asarray(self.x).reshape(-1, order="F").tolist(),
            "eta": self.eta,
            "delta_n": self.delta_n,
            "mu": self.mu,
            "solver_status": self.solver_status,
            "certificate": self.certificate.to_dict(),
        }
        if include_kernel:
            doc["kernel"] = self.kernel.H.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        inst = SensingInstance.from_dict(doc["instance"])
        x = np.asarray(doc["x"], dtype=float).reshape((inst.n, inst.r), order="F")
        kernel = KernelMatrix(np.asarray(doc["kernel"]), inst.n) if "kernel" in doc \
            else KernelMatrix.from_instance(inst)
        eta = float(doc["eta"])
        delta = float(doc["delta_n"])
        if abs(delta - eta_to_delta(eta)) > 1e-14:
            raise ValueError("delta_n is inconsistent with eta")
        return cls(kernel, eta, delta, inst, x, CriticalityCertificate.from_dict(doc["certificate"]),
                   float(doc.get("mu", 0.0)), doc.get("solver_status", ""))

    def rescaled(self, c):
        """Same spurious point with measurements multiplied by c (kernel and mu by c^2)."""
        if not c > 0:
            raise ValueError("scale must be positive")
        inst = self.instance.scaled(c)
        mu = self.mu * c * c
        return ForgeResult(KernelMatrix(c * c * self.kernel.H, self.kernel.n), self.eta, self.delta_n, inst,
                           self.x, certify(inst, self.x, mu=mu), mu, self.solver_status)

    def save(self, path, include_kernel=False):
        Path(path).write_text(json.dumps(self.to_dict(include_kernel), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


class ForgeError(RuntimeError):
    pass


def forge_from_kernel(kernel, x, z, mu, solver_status=""):
    x = np.asarray(x, dtype=float).reshape(kernel.n, -1)
    z = np.asarray(z, dtype=float).reshape(kernel.n, -1)
    inst = factor_kernel(kernel, z)
    w = kernel.eigenvalues
    eta = float(w[0] / w[-1])
    cert = certify(inst, x, mu=mu)
    return ForgeResult(kernel, eta, eta_to_delta(eta), inst, x, cert, mu, solver_status)


def forge(x, z, mu=None, tol=sdp.DEFAULT_TOL):
    """Solve the conditioning LMI for (x, z), factor it, and certify x."""
    ops = build_operators(x, z)
    if error_is_degenerate(ops):
        raise DegenerateGeometry("x x^T equals z z^T; no spurious point to forge")
    if mu is None:
        mu = 1e-3 * float(np.sum(ops.z ** 2))
    prob = assemble_opt(ops, mu)
    sol = sdp.solve(prob, tol=tol)
    if sol.status != "optimal":
        raise ForgeError(f"SDP did not converge: {sol.status} ({sol.diagnostic})")
    kernel = kernel_from_solution(prob, sol, ops.n)
    res = forge_from_kernel(kernel, ops.x, ops.z, mu, sol.status)
    rip = rip_full(res.instance)
    if abs(rip.delta_full - res.delta_n) > 1e-6:
        raise ForgeError(f"recovered instance has delta {rip.delta_full} but kernel gives {res.delta_n}")
    return res


# -- full n^2-dimensional formulation, for checking the symmetric reduction ---

def full_space_operators(x, z):
    """(e, Xmat) in R^{n^2} coordinates (column-major vec)."""
    x = np.asarray(x, dtype=float).reshape(np.shape(x)[0], -1)
    z = np.asarray(z, dtype=float).reshape(x.shape)
    n, r = x.shape
    e = (x @ x.T - z @ z.T).reshape(-1, order="F")
    cols = []
    for a in range(n * r):
        u = np.zeros(n * r)
        u[a] = 1.0
        u = u.reshape((n, r), order="F")
        cols.append((x @ u.T + u @ x.T).reshape(-1, order="F"))
    return e, np.column_stack(cols)


def symmetric_embedding(n):
    """n^2 x N matrix whose columns are vec of the symmetric basis."""
    Eb = basis(n)
    return np.stack([E.reshape(-1, order="F") for E in Eb], axis=1)


def extend_to_full(H, n):
    """Extend a symmetric-subspace kernel by the identity on skew matrices."""
    Q = symmetric_embedding(n)
    return Q @ H @ Q.T + (np.eye(n * n) - Q @ Q.T)


def full_L(Hf, e, Xf, n, r):
    return (2.0 * Xf.T @ Hf @ e).reshape((n, r), order="F")


def full_M(Hf, e, Xf, n, r):
    B = (Hf @ e).reshape((n, n), order="F")
    return 2.0 * np.kron(np.eye(r), B.T) + Xf.T @ Hf @ Xf
