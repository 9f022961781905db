"""Matrix-sensing instances: objective, derivatives, RIP constants, certificates.

The objective of an instance with measurements A_1..A_m and ground truth
Z = z z^T is ``f(x) = sum_i (<A_i, x x^T> - b_i)^2`` over n x r matrices x.
Points and gradients are n x r arrays; the Hessian is indexed by the
column-major flattening of x.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .symbasis import smat, svec, svec_dim

EIG_TOL = 1e-10

VERDICTS = ("strict_local_min", "second_order_critical", "first_order_only", "not_critical", "global_min")


class ShapeError(ValueError):
    pass


class InstanceError(ValueError):
    pass


def _as_factor(x, n=None, r=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"expected an n x r matrix, got shape {x.shape}")
    if (n is not None and x.shape[0] != n) or (r is not None and x.shape[1] != r):
        raise ShapeError(f"point has shape {x.shape}, instance expects ({n}, {r})")
    if not np.all(np.isfinite(x)):
        raise ShapeError("point has non-finite entries")
    return x


@dataclass(frozen=True, eq=False)
class SensingInstance:
    """Symmetric measurements ``A`` (m, n, n), ground-truth factor ``z`` (n, r), data ``b``."""

    A: np.ndarray
    z: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        z = _as_factor(self.z)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise InstanceError(f"measurements must have shape (m, n, n), got {A.shape}")
        if A.shape[0] < 1:
            raise InstanceError("at least one measurement is required")
        if A.shape[1] != z.shape[0]:
            raise InstanceError(f"measurements are {A.shape[1]}x{A.shape[1]} but z has {z.shape[0]} rows")
        if b.shape != (A.shape[0],):
            raise InstanceError(f"data has length {b.size}, expected {A.shape[0]}")
        if not np.array_equal(A, A.transpose(0, 2, 1)):
            raise InstanceError("every measurement matrix must be exactly symmetric")
        resid = b - _measure(A, z @ z.T)
        bound = 1e-12 * np.linalg.norm(A, axis=(1, 2)) * np.sum(z * z) + 1e-300
        if np.any(np.abs(resid) > np.maximum(bound, 1e-15)):
            raise InstanceError("data b is inconsistent with <A_i, z z^T>")
        for arr in (A, z, b):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_measurements(cls, A, z):
        A = np.asarray(A, dtype=float)
        z = _as_factor(z)
        return cls(A, z, _measure(A, z @ z.T))

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def r(self):
        return self.z.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def Z(self):
        return self.z @ self.z.T

    def measure(self, X):
        """The vector [<A_1, X>, ..., <A_m, X>]."""
        return _measure(self.A, X)

    def rows(self):
        """Measurement matrix in symmetric-basis coordinates, shape (m, N)."""
        return svec(self.A)

    def gram(self):
        """Gram matrix of the measurement map on the symmetric subspace (N x N)."""
        R = self.rows()
        G = R.T @ R
        return 0.5 * (G + G.T)

    def scaled(self, c):
        return SensingInstance.from_measurements(c * self.A, self.z)

    def to_dict(self):
        return {
            "n": self.n,
            "r": self.r,
            "matrices": [Ai.reshape(-1).tolist() for Ai in self.A],
            "z": self.z.reshape(-1, order="F").tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            n, r = int(doc["n"]), int(doc["r"])
            A = np.array([np.asarray(Ai, dtype=float).reshape(n, n) for Ai in doc["matrices"]])
            z = np.asarray(doc["z"], dtype=float).reshape((n, r), order="F")
            b = np.asarray(doc["b"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise InstanceError(f"malformed instance document: {exc}") from exc
        if n < 1 or r < 1:
            raise InstanceError("n and r must be positive")
        return cls(A, z, b)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _measure(A, X):
    return np.tensordot(A, X, axes=([1, 2], [0, 1]))


def _check(inst, x):
    return _as_factor(x, inst.n, inst.r)


def residuals(inst, x):
    x = _check(inst, x)
    return inst.measure(x @ x.T) - inst.b


def objective_value(inst, x):
    res = residuals(inst, x)
    return float(res @ res)


def gradient(inst, x):
    """Gradient of f at x, an n x r matrix."""
    x = _check(inst, x)
    res = inst.measure(x @ x.T) - inst.b
    S = np.tensordot(res, inst.A + inst.A.transpose(0, 2, 1), axes=1)
    return 2.0 * S @ x


def hessian(inst, x):
    """True second derivative of f at x, shape (nr, nr), column-major ordering.

    For a direction u, vec(u)^T H vec(u) = sum_i 2 s_i^2 + 4 res_i q_i with
    s_i = <A_i, x u^T + u x^T> and q_i = <A_i, u u^T>.
    """
    x = _check(inst, x)
    n, r = x.shape
    res = inst.measure(x @ x.T) - inst.b
    # d/du_{ka} of <A_i, x u^T + u x^T> = 2 (A_i x)_{ka} for symmetric A_i
    J = 2.0 * (inst.A @ x).transpose(0, 2, 1).reshape(inst.m, n * r)
    H = 2.0 * J.T @ J
    S = np.tensordot(res, inst.A, axes=1)
    H += 4.0 * np.kron(np.eye(r), S)
    return 0.5 * (H + H.T)


def rotation_complement(x, tol=1e-12):
    """Orthonormal basis of the directions u orthogonal to every x @ Omega, Omega skew.

    f is constant along x -> x R for orthogonal R, so at any point with r >= 2
    the Hessian vanishes on {x Omega}. Second-order strictness is measured on
    the complement. For r = 1 this is the identity. Columns index vec(u) in
    column-major order.
    """
    x = _as_factor(x)
    n, r = x.shape
    if r == 1:
        return np.eye(n)
    gens = []
    for a in range(r):
        for b in range(a + 1, r):
            Om = np.zeros((r, r))
            Om[a, b], Om[b, a] = 1.0, -1.0
            gens.append((x @ Om).reshape(-1, order="F"))
    T = np.column_stack(gens)
    U, s, _ = np.linalg.svd(T, full_matrices=True)
    rank = int(np.sum(s > tol * max(s[0] if s.size else 0.0, 1e-300)))
    return U[:, rank:]


@dataclass(frozen=True)
class RipReport:
    lambda_min: float
    lambda_max: float
    gamma: float
    delta_full: float
    rank_deficient: bool = False

    @property
    def condition_number(self):
        return self.lambda_max / self.lambda_min if self.lambda_min > 0 else np.inf

    def to_dict(self):
        return {"lambda_min": self.lambda_min, "lambda_max": self.lambda_max, "gamma": self.gamma,
                "delta_full": self.delta_full, "rank_deficient": self.rank_deficient}


def rip_from_extremes(lo, hi, size=1, tol=None):
    """RIP report from the extreme eigenvalues of a size x size Gram matrix.

    lambda_min at or below the round-off level 10 * size * eps * lambda_max counts
    as rank deficiency (delta = 1).
    """
    tol = 10 * size * np.finfo(float).eps if tol is None else tol
    if hi <= 0:
        return RipReport(float(lo), float(hi), np.inf, 1.0, True)
    if lo <= tol * hi:
        return RipReport(float(lo), float(hi), 2.0 / (lo + hi), 1.0, True)
    return RipReport(float(lo), float(hi), 2.0 / (lo + hi), (hi - lo) / (hi + lo))


def rip_full(inst):
    """Full-rank RIP constant over symmetric matrices."""
    w = np.linalg.eigvalsh(inst.gram())
    return rip_from_extremes(w[0], w[-1], w.size)


def restriction_map(U):
    """Matrix W with W @ svec(Y) = svec(U Y U^T), for k x k symmetric Y."""
    n, k = U.shape
    E = smat(np.eye(svec_dim(k)), k)
    return svec(U @ E @ U.T).T


def rip_restricted_lower_bound(inst, U, tol=1e-10):
    """Smallest delta for which the RIP inequalities hold on {U Y U^T}.

    U must have orthonormal columns. The value lower-bounds the instance's
    rank-k RIP constant.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != inst.n:
        raise ShapeError(f"U must have {inst.n} rows")
    if np.max(np.abs(U.T @ U - np.eye(U.shape[1]))) > tol:
        raise ValueError("U must have orthonormal columns")
    W = restriction_map(U)
    Hr = W.T @ inst.gram() @ W
    G = W.T @ W
    w = sla.eigh(0.5 * (Hr + Hr.T), 0.5 * (G + G.T), eigvals_only=True)
    return rip_from_extremes(w[0], w[-1], w.size).delta_full


@dataclass(frozen=True)
class CriticalityCertificate:
    objective_value: float
    gradient_norm: float
    hessian_min_eig: float
    mu: float
    verdict: str
    tol_g: float = 0.0
    tol_f: float = 0.0

    def to_dict(self):
        return {"objective_value": self.objective_value, "gradient_norm": self.gradient_norm,
                "hessian_min_eig": self.hessian_min_eig, "mu": self.mu, "verdict": self.verdict,
                "tol_g": self.tol_g, "tol_f": self.tol_f}

    @classmethod
    def from_dict(cls, doc):
        if doc["verdict"] not in VERDICTS:
            raise ValueError(f"unknown verdict {doc['verdict']!r}")
        return cls(**{k: doc[k] for k in ("objective_value", "gradient_norm", "hessian_min_eig", "mu",
                                          "verdict", "tol_g", "tol_f") if k in doc})


def default_tolerances(inst):
    """(tol_g, tol_f): gradient norm and objective; the residual norm sqrt(f) gets the gradient's scale."""
    t = 1e-9 * (1.0 + float(np.linalg.norm(inst.b)))
    return t, t * t


def certify(inst, x, mu=0.0, tol_g=None, tol_f=None):
    """Classify x as a global minimum, strict local minimum, or critical point.

    For r >= 2 the Hessian eigenvalue is taken on the complement of the
    rotation directions x Omega, where f is flat at every point.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    dg, df = default_tolerances(inst)
    tol_g = dg if tol_g is None else tol_g
    tol_f = df if tol_f is None else tol_f
    fval = objective_value(inst, x)
    gnorm = float(np.linalg.norm(gradient(inst, x)))
    Hx = hessian(inst, x)
    if inst.r > 1:
        Q = rotation_complement(x)
        Hx = Q.T @ Hx @ Q
    w = np.linalg.eigvalsh(Hx)
    hmin = float(w[0])
    eig_tol = EIG_TOL * max(1.0, abs(w[-1]))
    if fval <= tol_f:
        verdict = "global_min"
    elif gnorm <= tol_g and mu > 0 and hmin >= mu:
        verdict = "strict_local_min"
    elif gnorm <= tol_g and hmin >= -eig_tol:
        verdict = "second_order_critical"
    elif gnorm <= tol_g:
        verdict = "first_order_only"
    else:
        verdict = "not_critical"
    return CriticalityCertificate(fval, gnorm, hmin, float(mu), verdict, float(tol_g), float(tol_f))


def example1_instance():
    """Three 2x2 measurements with RIP spectrum [1, 3] and a spurious point at (0, 1/sqrt 2)."""
    s = np.sqrt(1.5)
    A = np.array([
        [[np.sqrt(2.0), 0.0], [0.0, 1.0 / np.sqrt(2.0)]],
        [[0.0, s], [s, 0.0]],
        [[0.0, 0.0], [0.0, s]],
    ])
    return SensingInstance.from_measurements(A, np.array([[1.0], [0.0]]))


EXAMPLE1_SPURIOUS = np.array([[0.0], [1.0 / np.sqrt(2.0)]])
