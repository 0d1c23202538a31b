"""Vector field and temperature reconstruction from the eight resonances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .spin import (DEFAULT_CONSTANTS, DEFAULT_ORIENTATIONS, MODELS, frequency_jacobian)


class InsufficientDataError(ValueError):
    """Fewer than three valid axis projections."""


@dataclass
class ProjectionSet:
    """Per-class axial projections (nT) and temperature estimates (K)."""

    b_nv: np.ndarray
    dt: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.b_nv = np.asarray(self.b_nv, dtype=float)
        self.dt = np.asarray(self.dt, dtype=float)
        if self.valid is None:
            self.valid = np.isfinite(self.b_nv) & np.isfinite(self.dt)
        self.valid = np.asarray(self.valid, dtype=bool)

    @classmethod
    def from_frequencies(cls, freqs, constants=DEFAULT_CONSTANTS):
        """Invert each (minus, plus) pair of an interleaved 8-vector."""
        pairs = np.asarray(freqs, dtype=float).reshape(4, 2)
        fm, fp = pairs[:, 0], pairs[:, 1]
        b = (fp - fm) / (2 * constants.gamma)
        dt = (fp + fm - 2 * constants.delta) / (2 * constants.beta_t)
        return cls(b, dt)


@dataclass
class ReconResult:
    b: np.ndarray
    dt: float
    residual_norm: float
    residuals: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float
    model: str = "linear"

    @property
    def params(self):
        return np.append(self.b, self.dt)


def linear_reconstruct(p, orientations=DEFAULT_ORIENTATIONS):
    """Least-squares field from axis projections; ``dt`` is the valid mean."""
    mask = p.valid
    if mask.sum() < 3:
        raise InsufficientDataError(
            f"need at least 3 valid projections, got {int(mask.sum())}")
    axes = orientations.axes[mask]
    b, *_ = np.linalg.lstsq(axes, p.b_nv[mask], rcond=None)
    return b, float(np.mean(p.dt[mask]))


def nonlinear_reconstruct(freqs, init=None, model="linear", constants=DEFAULT_CONSTANTS,
                          orientations=DEFAULT_ORIENTATIONS, max_iter=100, gtol=1e-3,
                          lam0=1e-3):
    """Fit (b, dt) to eight measured centres by damped Gauss-Newton.

    Levenberg-Marquardt with diagonal scaling: damping is multiplied by 10
    after a rejected step and divided by 10 after an accepted one.
    Convergence is declared when the gradient, expressed in Hz per unit
    column norm of the Jacobian, drops below ``gtol``. Never raises on
    non-convergence; inspect ``converged``.
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")
    freqs = np.asarray(freqs, dtype=float).reshape(8)
    if init is None:
        init = linear_reconstruct(ProjectionSet.from_frequencies(freqs, constants), orientations)
    x = np.append(np.asarray(init[0], dtype=float), float(init[1]))

    def evaluate(x):
        f, jac = frequency_jacobian(x[:3], x[3], model, constants, orientations)
        return freqs - f, jac

    r, jac = evaluate(x)
    cost = r @ r
    lam = lam0
    converged = False
    gnorm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        scale = np.linalg.norm(jac, axis=0)
        scale[scale == 0] = 1.0
        grad = jac.T @ r
        gnorm = float(np.linalg.norm(grad / scale))
        if gnorm < gtol:
            converged = True
            it -= 1
            break
        jtj = jac.T @ jac
        while True:
            a = jtj + lam * np.diag(np.diag(jtj))
            step = np.linalg.solve(a, grad)
            x_new = x + step
            r_new, jac_new = evaluate(x_new)
            cost_new = r_new @ r_new
            if cost_new <= cost:
                x, r, jac, cost = x_new, r_new, jac_new, cost_new
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e12:
                break
        if lam > 1e12:
            break
    else:
        scale = np.linalg.norm(jac, axis=0)
        gnorm = float(np.linalg.norm((jac.T @ r) / scale))
        converged = gnorm < gtol
    return ReconResult(x[:3], float(x[3]), float(np.sqrt(cost)), r, converged, it, gnorm, model)


def redundancy_check(result, noise_hz):
    """Residual norm in units of its expected size for white noise ``noise_hz``.

    Eight measurements fit with four parameters leave four degrees of
    freedom, so clean data scores about 0 and pure noise about 1.
    """
    if not noise_hz > 0:
        raise ValueError("noise_hz must be positive")
    dof = result.residuals.size - 4
    return result.residual_norm / (noise_hz * np.sqrt(dof))


class FieldReconstructor(TransformerMixin, BaseEstimator):
    """Transformer from rows of eight centres (Hz) to (bx, by, bz, dt).

    Column order is interleaved per class: minus, plus for class 0, then
    class 1, and so on. ``fit`` only validates the input; the geometry is
    fixed by the crystal. After ``transform``, per-row diagnostics are in
    ``residual_norm_`` and ``converged_``.
    """

    def __init__(self, model="full", constants=None, max_iter=100, gtol=1e-3):
        self.model = model
        self.constants = constants
        self.max_iter = max_iter
        self.gtol = gtol

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != 8:
            raise ValueError(f"expected 8 frequency columns, got {X.shape[1]}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        self.constants_ = self.constants or DEFAULT_CONSTANTS
        self.n_features_in_ = 8
        return self

    def transform(self, X):
        check_is_fitted(self, "constants_")
        X = check_array(X)
        if X.shape[1] != 8:
            raise ValueError(f"expected 8 frequency columns, got {X.shape[1]}")
        out = np.empty((X.shape[0], 4))
        self.residual_norm_ = np.empty(X.shape[0])
        self.converged_ = np.empty(X.shape[0], dtype=bool)
        for k, row in enumerate(X):
            res = nonlinear_reconstruct(row, model=self.model, constants=self.constants_,
                                        max_iter=self.max_iter, gtol=self.gtol)
            out[k] = res.params
            self.residual_norm_[k] = res.residual_norm
            self.converged_[k] = res.converged
        return out

    def get_feature_names_out(self, input_features=None):
        return np.array(["bx_nt", "by_nt", "bz_nt", "dt_k"], dtype=object)
