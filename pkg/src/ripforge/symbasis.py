"""Orthonormal coordinates on the space of symmetric matrices.

A symmetric n x n matrix is stored as a vector of length n(n+1)/2 in the
basis E_ii, (E_ij + E_ji)/sqrt(2) (i < j), ordered like ``np.triu_indices``.
Frobenius inner products of matrices equal dot products of their vectors.
"""

from functools import lru_cache

import numpy as np

SQRT2 = np.sqrt(2.0)


def svec_dim(n):
    return n * (n + 1) // 2


@lru_cache(maxsize=None)
def _pairs(n):
    i, j = np.triu_indices(n)
    scale = np.where(i == j, 1.0, SQRT2)
    i.setflags(write=False)
    j.setflags(write=False)
    scale.setflags(write=False)
    return i, j, scale


def sym_pairs(n):
    """Index arrays (i, j), i <= j, of the basis elements."""
    i, j, _ = _pairs(n)
    return i, j


def svec(A):
    """Symmetric-basis coordinates of A (batched over leading axes).

    Only the symmetric part of A contributes.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    i, j, scale = _pairs(n)
    return 0.5 * (A[..., i, j] + A[..., j, i]) * scale


def smat(v, n=None):
    """Inverse of :func:`svec`; returns exactly symmetric matrices."""
    v = np.asarray(v, dtype=float)
    if n is None:
        n = int(round((np.sqrt(8 * v.shape[-1] + 1) - 1) / 2))
    if v.shape[-1] != svec_dim(n):
        raise ValueError(f"vector of length {v.shape[-1]} is not svec of a {n}x{n} matrix")
    i, j, scale = _pairs(n)
    out = np.zeros(v.shape[:-1] + (n, n))
    vals = v / scale
    out[..., i, j] = vals
    out[..., j, i] = vals
    return out


def basis(n):
    """Stack of the N orthonormal basis matrices, shape (N, n, n)."""
    return smat(np.eye(svec_dim(n)), n)


def sym_kron(X, Y):
    """Matrix of V -> sym(X V Y) in svec coordinates, for symmetric X, Y.

    Entry (p, q) with p = (i, j), q = (k, l) equals
    c_p c_q (X_ik Y_jl + X_jl Y_ik + X_il Y_jk + X_jk Y_il), where c is 1/2 on
    the diagonal and 1/sqrt(2) off it.
    """
    n = X.shape[0]
    i, j, scale = _pairs(n)
    c = np.where(i == j, 0.5, 1.0 / SQRT2)
    Xii = X[np.ix_(i, i)]
    K = Xii * Y[np.ix_(j, j)]
    del Xii
    K += X[np.ix_(j, j)] * Y[np.ix_(i, i)]
    K += X[np.ix_(i, j)] * Y[np.ix_(j, i)]
    K += X[np.ix_(j, i)] * Y[np.ix_(i, j)]
    K *= c[:, None]
    K *= c[None, :]
    return K


def sym_eye(n):
    """svec of the n x n identity."""
    i, j, _ = _pairs(n)
    return (i == j).astype(float)
