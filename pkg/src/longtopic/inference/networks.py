"""Per-stage variational encoders.

Each stage t owns one network g_t mapping
    [normalized BOW (V), covariates x_t (P), group encoding (E),
     previous variational mean (K)]
through a single tanh trunk (width H) to two affine heads: the mean head gives
mu_q in R^K, the scale head gives sigma_q = max(softplus(z), SIGMA_MIN), so
scales are strictly positive everywhere and exactly softplus(bias) at zero
weights. The previous-mean input is the recurrent path carrying temporal
information; at the first stage it is the prior eta0.

Counterfactual moments reuse the *same* network with the group encoding
replaced by a non-factual group, all other inputs (including the factual
previous mean) unchanged — so for two groups a double flip returns the factual
moments exactly.

All gradients here are hand-derived; `backward` returns both parameter
gradients and the input gradient so the training loop can chain stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from ..model import encode_groups, group_encoding_dim

SIGMA_MIN = 1e-4


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class PosteriorMoments:
    mu: np.ndarray     # (K,)
    sigma: np.ndarray  # (K,) strictly positive


@dataclass
class PosteriorSample:
    eta_q: np.ndarray  # (K,) = mu + eps * sigma
    eps: np.ndarray    # (K,) the standard-normal draw


def reparameterize(moments, eps):
    """eta_q = mu + eps * sigma, elementwise."""
    eps = np.asarray(eps, dtype=np.float64)
    return PosteriorSample(eta_q=moments.mu + eps * moments.sigma, eps=eps)


@dataclass
class StageEncoder:
    V: int
    P: int
    E: int
    K: int
    H: int
    Wh: np.ndarray  # (H, D), D = V + P + E + K
    bh: np.ndarray  # (H,)
    Wm: np.ndarray  # (K, H) mean head
    bm: np.ndarray  # (K,)
    Ws: np.ndarray  # (K, H) scale head
    bs: np.ndarray  # (K,)

    @property
    def in_dim(self):
        return self.V + self.P + self.E + self.K

    @classmethod
    def init(cls, V, P, E, K, H, rng=None, scale=0.01):
        rng = rng if rng is not None else np.random.default_rng(0)
        D = V + P + E + K
        return cls(
            V=V, P=P, E=E, K=K, H=H,
            Wh=scale * rng.standard_normal((H, D)), bh=np.zeros(H),
            Wm=scale * rng.standard_normal((K, H)), bm=np.zeros(K),
            Ws=scale * rng.standard_normal((K, H)), bs=np.zeros(K),
        )

    def param_items(self):
        return [("Wh", self.Wh), ("bh", self.bh), ("Wm", self.Wm),
                ("bm", self.bm), ("Ws", self.Ws), ("bs", self.bs)]

    def forward(self, inp):
        """inp (B, D) -> (mu (B, K), sigma (B, K), cache)."""
        inp = np.asarray(inp, dtype=np.float64)
        if inp.ndim != 2 or inp.shape[1] != self.in_dim:
            raise ShapeError(
                f"encoder input must be (B, {self.in_dim}); got {inp.shape}")
        h = np.tanh(inp @ self.Wh.T + self.bh)
        mu = h @ self.Wm.T + self.bm
        z = h @ self.Ws.T + self.bs
        raw = softplus(z)
        sigma = np.maximum(raw, SIGMA_MIN)
        return mu, sigma, (inp, h, z, raw)

    def backward(self, cache, gmu, gsigma):
        """Upstream (B, K) gradients on mu and sigma -> (input gradient (B, D),
        {param: grad}). The scale path has zero gradient where the floor binds."""
        inp, h, z, raw = cache
        gz = gsigma * sigmoid(z) * (raw > SIGMA_MIN)
        gh = gmu @ self.Wm + gz @ self.Ws
        gpre = gh * (1.0 - h * h)
        grads = {
            "Wh": gpre.T @ inp, "bh": gpre.sum(axis=0),
            "Wm": gmu.T @ h, "bm": gmu.sum(axis=0),
            "Ws": gz.T @ h, "bs": gz.sum(axis=0),
        }
        return gpre @ self.Wh, grads


@dataclass
class EncoderParams:
    """The full variational family: one StageEncoder per stage plus the group
    book-keeping shared by factual and counterfactual encoding."""

    stages: list
    n_groups: int

    @property
    def n_stages(self):
        return len(self.stages)

    @property
    def n_topics(self):
        return self.stages[0].K

    @classmethod
    def init(cls, V, P, K, T, n_groups, hidden=64, rng=None, scale=0.01):
        rng = rng if rng is not None else np.random.default_rng(0)
        E = group_encoding_dim(n_groups)
        stages = [StageEncoder.init(V, P, E, K, hidden, rng=rng, scale=scale)
                  for _ in range(T)]
        return cls(stages=stages, n_groups=n_groups)


def _encoder_input(w, x, y_enc, prev_mean):
    w = np.asarray(w, dtype=np.float64).ravel()
    total = w.sum()
    wn = w / total if total > 0 else w
    return np.concatenate(
        [wn, np.ravel(x), np.ravel(y_enc), np.ravel(prev_mean)])[None, :]


def encode(w, x, y, prev_mean, params, t):
    """Factual posterior moments for one document slice at stage t.

    w: raw counts (V,), normalized to relative frequencies internally;
    x: covariates (P,); y: the subject's group label; prev_mean: the previous
    stage's variational mean (eta0 at the first stage).
    """
    enc = params.stages[t]
    y_enc = encode_groups(np.array([y]), params.n_groups)[0]
    mu, sigma, _ = enc.forward(_encoder_input(w, x, y_enc, prev_mean))
    return PosteriorMoments(mu=mu[0], sigma=sigma[0])


def counterfactual_encode(w, x, y, prev_mean, params, t):
    """Moments under each non-factual group label (ascending), all other
    inputs unchanged. Exactly n_groups - 1 entries."""
    out = []
    for g in range(params.n_groups):
        if g == int(y):
            continue
        out.append(encode(w, x, g, prev_mean, params, t))
    return out
