"""Damped Newton iteration shared by the likelihood and mix fits.

``fgh(x, need_hess)`` returns (f, g) or (f, g, H).  Steps solve the
(ridged, if needed) Newton system with Armijo backtracking; the Hessian
is only recomputed at accepted points.
"""

from __future__ import annotations

import numpy as np

__all__ = ["damped_newton"]


def damped_newton(fgh, x0, max_iter=200, gtol=1e-9):
    """Minimize fgh; returns (x, n_iter, hessian, converged)."""
    x = np.asarray(x0, dtype=float)
    f, g, hess = fgh(x, True)
    it = 0
    while it < max_iter and np.max(np.abs(g)) > gtol:
        it += 1
        p = g.shape[0]
        ridge = 0.0
        scale = max(abs(np.trace(hess)) / p, 1e-8)
        for _ in range(12):
            try:
                step = np.linalg.solve(hess + ridge * np.eye(p), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and g @ step < 0:
                break
            ridge = scale * 1e-6 if ridge == 0.0 else ridge * 100.0
        else:
            step = -g
        slope = g @ step
        t = 1.0
        accepted = False
        for _ in range(40):
            fn, gn = fgh(x + t * step, False)[:2]
            if np.isfinite(fn) and fn <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        x = x + t * step
        f_prev = f
        f, g, hess = fgh(x, True)
        if f_prev - f <= 1e-14 * (abs(f_prev) + 1e-14):
            break  # objective converged to floating-point resolution
    return x, it, hess, bool(np.max(np.abs(g)) <= gtol)
