"""Small dense linear algebra used as the reference path for chain analysis."""

import numpy as np


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when elimination meets a pivot that is numerically zero."""

    def __init__(self, column, pivot):
        super().__init__(f"singular matrix: pivot {pivot:.3e} in column {column}")
        self.column = column
        self.pivot = pivot


def gauss_jordan_inverse(a, tol=1e-13):
    """Invert a square matrix by Gauss-Jordan elimination with partial pivoting.

    ``tol`` is relative to the largest absolute entry of ``a``.
    """
    a = np.array(a, dtype=float)
    n, m = a.shape
    if n != m:
        raise ValueError(f"expected a square matrix, got {a.shape}")
    aug = np.hstack([a, np.eye(n)])
    scale = max(np.abs(a).max(), 1.0) if n else 1.0
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) <= tol * scale:
            raise SingularMatrixError(col, aug[piv, col])
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        factors = aug[:, col].copy()
        factors[col] = 0.0
        aug -= np.outer(factors, aug[col])
    return aug[:, n:]


def gauss_solve(a, b, tol=1e-13):
    """Solve ``a x = b`` by elimination with partial pivoting (``b`` may be 2-D)."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    n = a.shape[0]
    aug = np.hstack([a, b])
    scale = max(np.abs(a).max(), 1.0) if n else 1.0
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) <= tol * scale:
            raise SingularMatrixError(col, aug[piv, col])
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col + 1:] -= np.outer(aug[col + 1:, col] / aug[col, col], aug[col])
    x = np.zeros_like(b)
    for row in range(n - 1, -1, -1):
        x[row] = (aug[row, n:] - aug[row, row + 1:n] @ x[row + 1:]) / aug[row, row]
    return x[:, 0] if vector else x
