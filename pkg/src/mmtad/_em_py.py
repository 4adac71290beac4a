"""Pure numpy EM kernels for 2-D Gaussian mixtures (fallback for ``_em_core``)."""
import numpy as np

_LOG2PI = np.log(2.0 * np.pi)


def log_component_density(points, means, covs, weights):
    """``log(pi_m) + log N(s_n | mu_m, Sigma_m)`` as an ``(N, M)`` array."""
    a = covs[:, 0, 0]
    b = covs[:, 0, 1]
    d = covs[:, 1, 1]
    det = a * d - b * b
    du = points[:, 0:1] - means[None, :, 0]
    dv = points[:, 1:2] - means[None, :, 1]
    quad = (d * du * du - 2.0 * b * du * dv + a * dv * dv) / det
    return np.log(weights) - _LOG2PI - 0.5 * np.log(det) - 0.5 * quad


def estep(points, means, covs, weights):
    """Posterior responsibilities ``(N, M)`` and the total log-likelihood."""
    logp = log_component_density(points, means, covs, weights)
    top = logp.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
    resp = np.exp(logp - lse[:, None])
    return resp, float(lse.sum())


def mstep(points, resp):
    """Weighted statistics: ``(lambda_m, mu_m, Sigma_m)`` before any floor."""
    lam = resp.sum(axis=0)
    safe = np.where(lam > 0, lam, 1.0)
    means = (resp.T @ points) / safe[:, None]
    covs = np.empty((resp.shape[1], 2, 2))
    for m in range(resp.shape[1]):
        diff = points - means[m]
        covs[m] = (resp[:, m, None] * diff).T @ diff / safe[m]
    return lam, means, covs
