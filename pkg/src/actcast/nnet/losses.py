"""Classification and regression losses with analytic gradients.

Every log is floored at PROB_FLOOR so losses stay finite for any finite
logits; gradients are the exact softmax/one-hot forms.
"""

from __future__ import annotations

import numpy as np

PROB_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray,
                          weights: np.ndarray | None = None):
    """Weighted cross entropy over rows of logits.

    Returns (loss, dlogits).  loss = sum_i w_i * -log p_i[target_i] with
    default weights 1/N (a plain mean); dlogits is its exact gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    n, c = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"target index out of range [0, {c})")
    if weights is None:
        weights = np.full(n, 1.0 / n)
    else:
        weights = np.asarray(weights, dtype=np.float64)
    probs = softmax(logits)
    picked = probs[np.arange(n), targets]
    loss = float(np.sum(weights * -np.log(np.maximum(picked, PROB_FLOOR))))
    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits *= weights[:, None]
    return loss, dlogits


def expected_cross_entropy(mu: np.ndarray, sigma: np.ndarray, target: int,
                           n_samples: int, rng: np.random.Generator):
    """Monte-Carlo expected cross entropy over Gaussian logit samples.

    Logit vectors are drawn as mu + sigma * eps (reparameterized), so the
    returned gradients flow to both heads: (loss, dmu, dsigma).  Draws are
    antithetic (eps, -eps pairs) when n_samples is even, which halves the
    gradient variance.  With sigma = 0 every sample equals mu and the value
    collapses exactly to the point cross entropy.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != mu.shape:
        raise ValueError("mu and sigma shapes differ")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if n_samples % 2 == 0:
        half = rng.standard_normal((n_samples // 2,) + mu.shape)
        eps = np.concatenate([half, -half])
    else:
        eps = rng.standard_normal((n_samples,) + mu.shape)
    samples = mu[None, :] + sigma[None, :] * eps
    probs = softmax(samples)
    picked = probs[:, target]
    loss = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    dsamples = probs.copy()
    dsamples[:, target] -= 1.0
    dsamples /= n_samples
    dmu = dsamples.sum(axis=0)
    dsigma = (dsamples * eps).sum(axis=0)
    return loss, dmu, dsigma


def squared_log_error(pred_frac: float, true_frac: float):
    """(log pred - log true)^2 on duration fractions, with the same floor.

    Returns (loss, dloss/dpred_frac).
    """
    p = max(float(pred_frac), PROB_FLOOR)
    t = max(float(true_frac), PROB_FLOOR)
    diff = np.log(p) - np.log(t)
    return float(diff * diff), float(2.0 * diff / p)
