"""Levenberg-Marquardt (damped Gauss-Newton) least squares.

Small dense problems only: the damped normal equations are formed and
solved directly. Damping uses Marquardt scaling by
the diagonal of J^T J and the Nielsen gain-ratio update. Every accepted step
strictly lowers the cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    jac: np.ndarray
    residual: np.ndarray
    n_iter: int
    converged: bool
    reason: str
    costs: list = field(default_factory=list)

    def covariance(self, scale_by_residual=True):
        """Parameter covariance from the local quadratic model.

        Scaled by the residual variance RSS / (m - n) unless the residuals
        are already normalized by known absolute errors.
        """
        jtj = self.jac.T @ self.jac
        cov = np.linalg.pinv(jtj, rcond=1e-15, hermitian=True)
        if scale_by_residual:
            m, n = self.jac.shape
            dof = max(m - n, 1)
            cov = cov * (2.0 * self.cost / dof)
        return cov


def levenberg_marquardt(fun, jac, x0, *, max_iter=200, gtol=1e-8, xtol=1e-10,
                        ftol=1e-15, lam0=1e-3) -> LMResult:
    """Minimize 0.5 * ||fun(x)||^2.

    Converges when the largest cosine between the residual and a Jacobian
    column drops below ``gtol``, when a step is shorter than
    ``xtol * (||x|| + xtol)``, or when an accepted step lowers the cost by
    less than ``ftol`` relative. ``converged`` is False if ``max_iter``
    iterations pass without meeting any of these.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is not finite at the starting point")
    cost = 0.5 * float(r @ r)
    J = np.asarray(jac(x), dtype=float)
    costs = [cost]
    mu = None
    nu = 2.0

    for it in range(1, max_iter + 1):
        g = J.T @ r
        col_norm = np.linalg.norm(J, axis=0)
        r_norm = np.sqrt(2 * cost)
        if r_norm == 0.0:
            return LMResult(x, cost, J, r, it - 1, True, "zero residual", costs)
        with np.errstate(divide="ignore", invalid="ignore"):
            cosines = np.where(col_norm > 0, np.abs(g) / (col_norm * r_norm), 0.0)
        if cosines.max() <= gtol:
            return LMResult(x, cost, J, r, it - 1, True, "gradient", costs)

        A = J.T @ J
        d = np.diag(A).copy()
        d[d <= 0] = 1.0
        if mu is None:
            mu = lam0

        while True:
            try:
                step = np.linalg.solve(A + mu * np.diag(d), -g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A + mu * np.diag(d), -g, rcond=None)[0]
            if np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol):
                return LMResult(x, cost, J, r, it, True, "step", costs)
            x_new = x + step
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            predicted = -(g @ step) - 0.5 * step @ (A @ step)
            rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
            if rho > 0 and cost_new < cost:
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e16:
                return LMResult(x, cost, J, r, it, True, "step", costs)

        rel_drop = (cost - cost_new) / cost if cost > 0 else 0.0
        x, r, cost = x_new, r_new, cost_new
        J = np.asarray(jac(x), dtype=float)
        costs.append(cost)
        mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
        nu = 2.0
        if rel_drop < ftol:
            return LMResult(x, cost, J, r, it, True, "cost", costs)

    return LMResult(x, cost, J, r, max_iter, False, "iteration cap", costs)
