"""Dense primal-dual interior-point solver for small linear matrix inequalities.

Problems are posed over a real vector ``y``::

    maximize    c @ y
    subject to  E @ y == f
                F_j(y) = smat(const_j + coeffs_j @ y)  is PSD, for each block j

Every block map is stored in the symmetric-basis coordinates of
:mod:`ripforge.symbasis`, so block inner products are plain dot products.
The dual problem is::

    minimize    sum_j <const_j, X_j> + f @ lam
    subject to  sum_j coeffs_j.T @ svec(X_j) - E.T @ lam == -c,  X_j PSD

The iteration is an infeasible-start path-following method with the HKM
search direction and a Mehrotra predictor-corrector step. Equality
constraints are kept exactly satisfied: the starting point is projected onto
the affine set ``E y = f`` and every Newton step lies in the null space of E.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .symbasis import smat, svec, svec_dim, sym_eye, sym_kron

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200


class SdpError(RuntimeError):
    """Raised for malformed problems."""


@dataclass(frozen=True, eq=False)
class ConeBlock:
    """Affine matrix-valued map ``y -> smat(const + coeffs @ y)`` required PSD."""

    size: int
    const: np.ndarray
    coeffs: object  # dense ndarray or scipy sparse matrix, shape (svec_dim(size), n_vars)
    name: str = ""

    def __post_init__(self):
        k = svec_dim(self.size)
        if np.shape(self.const) != (k,):
            raise SdpError(f"block {self.name!r}: constant has shape {np.shape(self.const)}, expected ({k},)")
        if self.coeffs.shape[0] != k:
            raise SdpError(f"block {self.name!r}: map has {self.coeffs.shape[0]} rows, expected {k}")

    def svec_value(self, y):
        return self.const + self.coeffs @ y

    def value(self, y):
        return smat(self.svec_value(y), self.size)

    def min_eig(self, y):
        return float(np.linalg.eigvalsh(self.value(y))[0])


@dataclass(frozen=True, eq=False)
class SdpProblem:
    n_vars: int
    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    blocks: tuple
    start: np.ndarray = None
    layout: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        d = self.n_vars
        if np.shape(self.objective) != (d,):
            raise SdpError("objective length does not match the number of variables")
        E = np.asarray(self.eq_matrix, dtype=float).reshape(-1, d)
        object.__setattr__(self, "eq_matrix", E)
        object.__setattr__(self, "eq_rhs", np.asarray(self.eq_rhs, dtype=float).reshape(E.shape[0]))
        for blk in self.blocks:
            if blk.coeffs.shape[1] != d:
                raise SdpError(f"block {blk.name!r} acts on {blk.coeffs.shape[1]} variables, expected {d}")
        if self.start is not None and np.shape(self.start) != (d,):
            raise SdpError("start point has the wrong length")

    def variable(self, y, name):
        """Slice of ``y`` registered under ``name`` in the layout."""
        return y[self.layout[name]]

    def block(self, name):
        for blk in self.blocks:
            if blk.name == name:
                return blk
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class SdpSolution:
    y: np.ndarray
    objective: float
    dual_objective: float
    eq_residual: float
    cone_min_eigs: tuple
    status: str  # "optimal" | "infeasible" | "max_iterations"
    iterations: int
    dual_blocks: tuple = ()
    diagnostic: str = ""

    @property
    def min_cone_eig(self):
        return min(self.cone_min_eigs) if self.cone_min_eigs else np.inf

    @property
    def ok(self):
        return self.status == "optimal"


@dataclass(frozen=True, eq=False)
class FeasibilityResult:
    feasible: bool
    witness: np.ndarray
    margin: float
    solution: SdpSolution


def _clean_equalities(E, f):
    """Replace ``E y = f`` by an equivalent system with orthonormal rows."""
    if E.shape[0] == 0:
        return E, f, 0.0
    U, s, Vt = np.linalg.svd(E, full_matrices=False)
    keep = s > 1e-12 * max(s[0], 1.0) if s.size else np.zeros(0, bool)
    Eo = Vt[keep]
    fo = (U[:, keep].T @ f) / s[keep]
    resid = np.linalg.norm(E @ (Eo.T @ fo) - f)
    return Eo, fo, resid


def _max_step(M, dM):
    """Largest a with M + a dM PSD (M positive definite); np.inf if unbounded."""
    if M.shape[0] == 1:
        return -M[0, 0] / dM[0, 0] if dM[0, 0] < 0 else np.inf
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        # roundoff pushed M to the boundary: rebuild a PD factor from its spectrum
        w, V = np.linalg.eigh(_sym(M))
        w = np.maximum(w, 1e-300 + 1e-15 * max(abs(w[-1]), 1e-300))
        L = V * np.sqrt(w)
        lam = np.linalg.eigvalsh(_sym(np.linalg.solve(L, np.linalg.solve(L, dM).T)))[0]
        return -1.0 / lam if lam < 0 else np.inf
    W = sla.solve_triangular(L, dM, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[0]
    return -1.0 / lam if lam < 0 else np.inf


def _factor_psd(S):
    """Solver for S u = v with S symmetric PSD and unit diagonal, regularized if needed."""
    d = S.shape[0]
    for reg in (1e-15, 1e-12, 1e-9):
        try:
            fac = sla.cho_factor(S + reg * np.eye(d), lower=True, check_finite=False)
            return lambda v, fac=fac: sla.cho_solve(fac, v, check_finite=False)
        except np.linalg.LinAlgError:
            pass
    w, V = np.linalg.eigh(S)
    w = np.maximum(w, 1e-9 * max(w[-1], 1e-300))
    return lambda v: V @ ((V.T @ v) / (w if v.ndim == 1 else w[:, None]))


def _congruence(A, K):
    """A.T @ K @ A for dense or sparse A."""
    if sp.issparse(A):
        T = np.asarray(A.T @ K)
        return np.asarray(A.T @ T.T)
    return A.T @ (K @ A)


def _sym(M):
    return 0.5 * (M + M.T)


class _TraceWriter:
    def __init__(self, target):
        self._own = False
        if target is None:
            self._w = None
            return
        if isinstance(target, (str, Path)):
            self._fh = open(target, "w", newline="")
            self._own = True
        else:
            self._fh = target
        self._w = csv.writer(self._fh)
        self._w.writerow(["iteration", "objective", "dual_objective", "gap", "primal_residual",
                          "dual_residual", "step_primal", "step_dual"])

    def row(self, *vals):
        if self._w is not None:
            self._w.writerow([vals[0]] + [f"{v:.17g}" for v in vals[1:]])

    def close(self):
        if self._own:
            self._fh.close()


def solve(problem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, trace=None):
    """Solve ``problem``; returns an :class:`SdpSolution`.

    ``trace`` may be a path or an open text file; one CSV row is written per
    iteration.
    """
    writer = _TraceWriter(trace)
    try:
        return _solve(problem, tol, max_iter, writer)
    finally:
        writer.close()


def _solve(problem, tol, max_iter, writer):
    c = np.asarray(problem.objective, dtype=float)
    d = problem.n_vars
    blocks = problem.blocks
    sizes = [b.size for b in blocks]
    nu = float(sum(sizes))
    A = [b.coeffs for b in blocks]
    F0 = [np.asarray(b.const, dtype=float) for b in blocks]
    eyes = [sym_eye(s) for s in sizes]

    E, f, eq_incons = _clean_equalities(problem.eq_matrix, problem.eq_rhs)
    if eq_incons > 1e-8 * (1.0 + np.linalg.norm(problem.eq_rhs)):
        return _finish(problem, np.zeros(d), "infeasible", 0, (),
                       f"inconsistent equality constraints (residual {eq_incons:.3g})", np.nan)

    y = np.zeros(d) if problem.start is None else np.array(problem.start, dtype=float)
    if E.shape[0]:
        y = y - E.T @ (E @ y - f)
    lam = np.zeros(E.shape[0])

    scale_F = 1.0 + max((np.linalg.norm(v) for v in F0), default=0.0)
    scale_c = 1.0 + np.linalg.norm(c)

    Z, X = [], []
    for j, blk in enumerate(blocks):
        Fy = smat(blk.svec_value(y), sizes[j])
        w = np.linalg.eigvalsh(Fy)
        top = max(1.0, abs(w[-1]))
        shift = max(0.0, 0.1 * top - w[0])
        Z.append(Fy + shift * np.eye(sizes[j]))
        X.append(np.eye(sizes[j]) * max(1.0, np.sqrt(scale_c)))

    status, diag = "max_iterations", ""
    it = 0
    best = None
    for it in range(1, max_iter + 1):
        zv = [svec(Zj) for Zj in Z]
        xv = [svec(Xj) for Xj in X]
        rp = [F0[j] + A[j] @ y - zv[j] for j in range(len(blocks))]
        rd = c - E.T @ lam
        for j in range(len(blocks)):
            rd = rd + A[j].T @ xv[j]
        gap = float(sum(xv[j] @ zv[j] for j in range(len(blocks))))
        mu = gap / nu
        pobj = float(c @ y)
        dobj = float(sum(F0[j] @ xv[j] for j in range(len(blocks))) + f @ lam)
        pinf = np.sqrt(sum(float(r @ r) for r in rp)) / scale_F
        dinf = np.linalg.norm(rd) / scale_c
        relgap = max(gap, abs(dobj - pobj)) / (1.0 + abs(pobj) + abs(dobj))

        if best is None or max(relgap, pinf, dinf) < best[0]:
            best = (max(relgap, pinf, dinf), y.copy(), [Xj.copy() for Xj in X])
        if relgap <= tol and pinf <= tol and dinf <= tol:
            writer.row(it, pobj, dobj, gap, pinf, dinf, 0.0, 0.0)
            status = "optimal"
            break

        trX = sum(np.trace(Xj) for Xj in X)
        if trX > 1e10 * (1.0 + nu) and dobj / trX < -1e-9 and dinf * scale_c / trX < 1e-9:
            status, diag = "infeasible", f"primal infeasible: dual ray with value {dobj / trX:.3g}"
            writer.row(it, pobj, dobj, gap, pinf, dinf, 0.0, 0.0)
            break
        ynorm = np.linalg.norm(y)
        if ynorm > 1e10 * (1.0 + np.linalg.norm(problem.start if problem.start is not None else 0.0)) \
                and pinf * scale_F / ynorm < 1e-9 and pobj / ynorm > 1e-9:
            status, diag = "infeasible", "dual infeasible: objective unbounded"
            writer.row(it, pobj, dobj, gap, pinf, dinf, 0.0, 0.0)
            break

        Zinv = []
        for Zj in Z:
            try:
                Lz = np.linalg.cholesky(Zj)
            except np.linalg.LinAlgError:
                w, V = np.linalg.eigh(Zj)
                w = np.maximum(w, 1e-15 * max(abs(w[-1]), 1e-300))
                Zinv.append(_sym((V / w) @ V.T))
                continue
            Li = sla.solve_triangular(Lz, np.eye(Zj.shape[0]), lower=True)
            Zinv.append(Li.T @ Li)
        S = np.zeros((d, d))
        for j in range(len(blocks)):
            S += _congruence(A[j], sym_kron(X[j], Zinv[j]))
        S = _sym(S)
        # Jacobi scaling keeps the factorization accurate when diag(S) spans many decades
        dsc = 1.0 / np.sqrt(np.maximum(np.diag(S), 1e-300))
        Ss = S * dsc[:, None] * dsc[None, :]
        Sfac = _factor_psd(Ss)

        def s_solve(rhs):
            scale = dsc if rhs.ndim == 1 else dsc[:, None]
            return scale * Sfac(scale * rhs)

        SinvEt = s_solve(E.T) if E.shape[0] else None
        if E.shape[0]:
            Mschur = _sym(E @ SinvEt)
            msc = 1.0 / np.sqrt(np.maximum(np.diag(Mschur), 1e-300))
            Mfac = _factor_psd(Mschur * msc[:, None] * msc[None, :])

        re = f - E @ y

        def schur_solve(h, re_):
            Sinvh = s_solve(h)
            if E.shape[0]:
                dlam = msc * Mfac(msc * (E @ Sinvh - re_))
                return Sinvh - SinvEt @ dlam, dlam
            return Sinvh, np.zeros(0)

        def expand(dy, R):
            dZ, dX = [], []
            for j in range(len(blocks)):
                dZj = smat(A[j] @ dy + rp[j], sizes[j])
                dZ.append(dZj)
                dX.append(_sym(smat(R[j], sizes[j]) - _sym(X[j] @ dZj @ Zinv[j])))
            return dZ, dX

        def direction(R):
            h = rd.copy()
            for j in range(len(blocks)):
                Kr = svec(X[j] @ smat(rp[j], sizes[j]) @ Zinv[j])
                h = h + A[j].T @ (R[j] - Kr)
            dy, dlam = schur_solve(h, re)
            dZ, dX = expand(dy, R)
            # refine against the unfactored dual equation
            for _ in range(2):
                res = -rd + E.T @ dlam
                for j in range(len(blocks)):
                    res = res - A[j].T @ svec(dX[j])
                if np.linalg.norm(res) <= 1e-3 * np.linalg.norm(rd) + 1e-15 * scale_c:
                    break
                ey, el = schur_solve(-res, re - E @ dy if E.shape[0] else re)
                dy, dlam = dy + ey, dlam + el
                dZ, dX = expand(dy, R)
            return dy, dlam, dZ, dX

        def steps(dZ, dX):
            ap = min([1.0] + [_max_step(Z[j], dZ[j]) for j in range(len(blocks))])
            ad = min([1.0] + [_max_step(X[j], dX[j]) for j in range(len(blocks))])
            return ap, ad

        # predictor
        R = [-xv[j] for j in range(len(blocks))]
        dy_a, _, dZ_a, dX_a = direction(R)
        ap, ad = steps(dZ_a, dX_a)
        mu_aff = sum(np.sum((X[j] + ad * dX_a[j]) * (Z[j] + ap * dZ_a[j])) for j in range(len(blocks))) / nu
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0
        if max(pinf, dinf) > 10.0 * relgap:
            # gap closing faster than feasibility: stay centred
            sigma = max(sigma, 0.5)
        elif max(pinf, dinf) > 1e-2 * max(relgap, tol):
            sigma = max(sigma, 0.1 * min(1.0, max(pinf, dinf)))

        # corrector
        R = [svec(sigma * mu * Zinv[j] - X[j] - _sym(dX_a[j] @ dZ_a[j] @ Zinv[j]))
             for j in range(len(blocks))]
        dy, dlam, dZ, dX = direction(R)
        ap, ad = steps(dZ, dX)
        gamma = 0.9 + 0.09 * min(ap, ad)
        ap = min(1.0, gamma * ap)
        ad = min(1.0, gamma * ad)

        y = y + ap * dy
        lam = lam + ad * dlam
        Z = [_sym(Z[j] + ap * dZ[j]) for j in range(len(blocks))]
        X = [_sym(X[j] + ad * dX[j]) for j in range(len(blocks))]
        writer.row(it, pobj, dobj, gap, pinf, dinf, ap, ad)
        log.debug("it %3d pobj %.10e dobj %.10e gap %.2e pinf %.2e dinf %.2e ap %.3f ad %.3f",
                  it, pobj, dobj, gap, pinf, dinf, ap, ad)
        if max(ap, ad) < 1e-12:
            diag = "step length collapsed"
            break

    if status == "max_iterations" and best is not None:
        diag = diag or f"best residual {best[0]:.3g}"
        y, X = best[1], best[2]
    return _finish(problem, y, status, it, X, diag, float(f @ lam) + float(
        sum(F0[j] @ svec(X[j]) for j in range(len(blocks)))))


def _finish(problem, y, status, it, X, diag, dobj):
    eqr = float(np.max(np.abs(problem.eq_matrix @ y - problem.eq_rhs))) if problem.eq_matrix.shape[0] else 0.0
    eigs = tuple(blk.min_eig(y) for blk in problem.blocks)
    return SdpSolution(y=y, objective=float(problem.objective @ y), dual_objective=dobj,
                       eq_residual=eqr, cone_min_eigs=eigs, status=status, iterations=it,
                       dual_blocks=tuple(X), diagnostic=diag)


def feasibility(problem, margin=0.0, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, trace=None):
    """Decide whether every block of ``problem`` can reach ``lambda_min >= margin``.

    Solves ``maximize t`` subject to ``F_j(y) - t I`` PSD for every block and the
    problem's equalities, with ``t`` capped at ``margin + 1``. The original
    objective is ignored.
    """
    d = problem.n_vars
    blocks = []
    for blk in problem.blocks:
        col = -sym_eye(blk.size)[:, None]
        coeffs = sp.hstack([blk.coeffs, sp.csr_matrix(col)], format="csr") if sp.issparse(blk.coeffs) \
            else np.hstack([blk.coeffs, col])
        blocks.append(ConeBlock(blk.size, blk.const, coeffs, blk.name))
    cap = np.zeros((1, d + 1))
    cap[0, d] = -1.0
    blocks.append(ConeBlock(1, np.array([margin + 1.0]), cap, "margin_cap"))
    y0 = np.zeros(d) if problem.start is None else np.asarray(problem.start, float)
    t0 = min(blk.min_eig(y0) for blk in problem.blocks) - 1.0
    obj = np.zeros(d + 1)
    obj[d] = 1.0
    aug = SdpProblem(d + 1, obj, np.hstack([problem.eq_matrix, np.zeros((problem.eq_matrix.shape[0], 1))]),
                     problem.eq_rhs, tuple(blocks), np.append(y0, min(t0, margin)),
                     dict(problem.layout, margin=slice(d, d + 1)), problem.name + ":feasibility")
    sol = solve(aug, tol=tol, max_iter=max_iter, trace=trace)
    witness = sol.y[:d]
    t = min(blk.min_eig(witness) for blk in problem.blocks) if problem.blocks else np.inf
    eq_ok = problem.eq_matrix.shape[0] == 0 or \
        np.max(np.abs(problem.eq_matrix @ witness - problem.eq_rhs)) <= tol * (1 + np.linalg.norm(problem.eq_rhs))
    feasible = bool(t >= margin - tol and eq_ok)
    return FeasibilityResult(feasible, witness if feasible else None, float(t), sol)
