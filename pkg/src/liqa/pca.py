"""Principal components by power iteration with deflation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, component: int, residual: float):
        super().__init__(f"power iteration for component {component} did not converge "
                         f"(residual {residual:.3e})")
        self.component = component
        self.residual = residual


@dataclass
class PCAResult:
    coords: np.ndarray          # [N, k]
    components: np.ndarray      # [k, D], unit rows
    eigenvalues: np.ndarray     # [k]
    explained: np.ndarray       # [k], fraction of total variance
    mean: np.ndarray            # [D]


def top_eigenpairs(cov: np.ndarray, k: int, tol: float = 1e-9, max_iter: int = 1000):
    """Leading ``k`` eigenpairs of a symmetric PSD matrix.

    Converged when ||C v - lambda v|| <= tol * max(lambda_1, tiny).
    """
    c = np.array(cov, dtype=np.float64)
    d = c.shape[0]
    vals, vecs = [], []
    ref = None
    for i in range(k):
        # Deterministic start: the column with the largest norm, plus a small
        # fixed tilt so it is never orthogonal to the target.
        start = c[:, int(np.argmax((c * c).sum(axis=0)))] + 1e-3 * np.linspace(1.0, 2.0, d)
        v = start / np.linalg.norm(start)
        lam, residual = 0.0, np.inf
        for _ in range(max_iter):
            w = c @ v
            lam = float(v @ w)
            scale = max(abs(ref if ref is not None else lam), 1e-300)
            residual = float(np.linalg.norm(w - lam * v))
            if residual <= tol * scale:
                break
            nw = np.linalg.norm(w)
            if nw == 0.0:
                residual = 0.0
                break
            v = w / nw
        else:
            raise ConvergenceError(i, residual)
        if ref is None:
            ref = lam
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        vals.append(lam)
        vecs.append(v)
        c = c - lam * np.outer(v, v)
    return np.array(vals), np.array(vecs)


def pca_project(x: np.ndarray, k: int = 2, tol: float = 1e-9, max_iter: int = 1000) -> PCAResult:
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n <= k:
        raise ValueError(f"need more rows than components (N={n}, k={k})")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    vals, vecs = top_eigenpairs(cov, k, tol, max_iter)
    total = float(np.trace(cov))
    explained = vals / total if total > 0 else np.zeros_like(vals)
    return PCAResult(coords=xc @ vecs.T, components=vecs, eigenvalues=vals,
                     explained=explained, mean=mean)
