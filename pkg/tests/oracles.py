"""Closed-form Gaussian references for the linear denoiser fit, independent of the fitting code."""

import numpy as np


def pooled_posterior_coefficients(alpha_bar, lo, hi, sigma, tau=None):
    """Best linear (A, B) for z_y from features (z_t, z_0) when t ~ U{lo..hi-1}.

    z_y ~ N(0, sigma^2); z_t = sqrt(ab) z_y + sqrt(1 - ab) eta; z_0 = z_y + N(0, tau^2)
    (or z_0 = 0 when ``tau`` is None). The linear predictor with coefficients shared
    across the bucket minimises the pooled squared error, so it solves the normal
    equations built from second moments averaged over the bucket's steps.
    """
    ab = np.asarray(alpha_bar[lo:hi], dtype=np.float64)
    s2 = sigma ** 2
    e_tt = np.mean(ab * s2 + 1.0 - ab)
    e_ty = np.mean(np.sqrt(ab)) * s2
    if tau is None:
        return e_ty / e_tt, 0.0
    e_t0 = e_ty
    e_00 = s2 + tau ** 2
    gram = np.array([[e_tt, e_t0], [e_t0, e_00]])
    rhs = np.array([e_ty, s2])
    a, b = np.linalg.solve(gram, rhs)
    return float(a), float(b)


def posterior_mean_gain(alpha_bar_t, sigma):
    """Per-step coefficient of z_t in E[z_y | z_t] for z_y ~ N(0, sigma^2)."""
    return np.sqrt(alpha_bar_t) * sigma ** 2 / (alpha_bar_t * sigma ** 2 + 1.0 - alpha_bar_t)
