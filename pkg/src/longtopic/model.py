"""Generative mathematics: time-consistent topics, transition priors, and the
collapsed word likelihood.

The generative story for one subject: unnormalized topics beta (V x K) are drawn
once and shared across stages; unnormalized proportions follow a chain
eta_t ~ N(f_t(eta_{t-1}, x_t, y), a2 * I) with eta_0 given; theta_t =
softmax(eta_t); and each word is drawn from the mixture theta_t . softmax_col(beta)^T
with the per-word topic assignment summed out, so a document is a single
multinomial over that V-simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus
from .errors import NumericError, ShapeError

PROB_FLOOR = 1e-12


def softmax(v, axis=-1):
    """Probability simplex from unbounded reals, max-subtracted for overflow
    safety. Raises NumericError on non-finite input."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("softmax input must be finite")
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def column_softmax(beta):
    """Per-column softmax of a V x K matrix: each column becomes a topic's
    distribution over words."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 2:
        raise ShapeError(f"beta must be V x K; got shape {beta.shape}")
    return softmax(beta, axis=0)


def collapsed_word_distribution(theta, beta):
    """Word distribution theta . softmax_col(beta)^T with the topic assignment
    collapsed; a convex combination of simplices, so itself a V-simplex."""
    theta = np.asarray(theta, dtype=np.float64)
    b = column_softmax(beta)
    if theta.shape != (b.shape[1],):
        raise ShapeError(
            f"theta has shape {theta.shape}, expected ({b.shape[1]},)")
    return b @ theta


def multinomial_log_likelihood(counts, theta, beta):
    """Sum_v counts_v * log p_v under the collapsed word distribution,
    probabilities floored at 1e-12 before the log (never -inf)."""
    counts = np.asarray(counts, dtype=np.float64)
    p = collapsed_word_distribution(theta, beta)
    if counts.shape != p.shape:
        raise ShapeError(
            f"counts has shape {counts.shape}, expected {p.shape}")
    return float(counts @ np.log(np.maximum(p, PROB_FLOOR)))


def group_encoding_dim(n_groups):
    """Width of the group encoding fed to transitions and encoders."""
    return 1 if n_groups == 2 else n_groups - 1


def encode_groups(groups, n_groups):
    """(N,) labels -> (N, E) encoding: +/-1 scalar for two groups, one-hot
    minus the last category otherwise."""
    groups = np.asarray(groups)
    if n_groups < 2:
        raise ShapeError("need at least two groups")
    if np.any(groups < 0) or np.any(groups >= n_groups):
        raise ShapeError("group label out of range")
    if n_groups == 2:
        return (2.0 * groups - 1.0).reshape(-1, 1)
    enc = np.zeros((groups.shape[0], n_groups - 1))
    for g in range(n_groups - 1):
        enc[groups == g, g] = 1.0
    return enc


@dataclass
class TransitionModel:
    """Per-stage transition f_t mapping [eta_prev (K), x_t (P), y-enc (E)] to
    the next prior mean in R^K. Affine by default; optionally one tanh hidden
    layer of width `hidden`."""

    K: int
    in_dim: int
    hidden: int = 0
    W: np.ndarray | None = None      # (K, D) when affine
    b: np.ndarray | None = None      # (K,)
    W1: np.ndarray | None = None     # (H, D) when hidden > 0
    b1: np.ndarray | None = None     # (H,)
    W2: np.ndarray | None = None     # (K, H)
    b2: np.ndarray | None = None     # (K,)

    @classmethod
    def init(cls, K, in_dim, hidden=0, rng=None, scale=0.01):
        rng = rng if rng is not None else np.random.default_rng(0)
        m = cls(K=K, in_dim=in_dim, hidden=hidden)
        if hidden > 0:
            m.W1 = scale * rng.standard_normal((hidden, in_dim))
            m.b1 = np.zeros(hidden)
            m.W2 = scale * rng.standard_normal((K, hidden))
            m.b2 = np.zeros(K)
        else:
            m.W = scale * rng.standard_normal((K, in_dim))
            m.b = np.zeros(K)
        return m

    def param_items(self):
        if self.hidden > 0:
            return [("W1", self.W1), ("b1", self.b1),
                    ("W2", self.W2), ("b2", self.b2)]
        return [("W", self.W), ("b", self.b)]

    def forward(self, inp):
        """inp (B, D) -> (out (B, K), cache)."""
        inp = np.asarray(inp, dtype=np.float64)
        if inp.ndim != 2 or inp.shape[1] != self.in_dim:
            raise ShapeError(
                f"transition input must be (B, {self.in_dim});"
                f" got {inp.shape}")
        if self.hidden > 0:
            h = np.tanh(inp @ self.W1.T + self.b1)
            out = h @ self.W2.T + self.b2
            return out, (inp, h)
        return inp @ self.W.T + self.b, (inp,)

    def backward(self, cache, g):
        """Upstream g (B, K) -> (input gradient (B, D), {param: grad})."""
        if self.hidden > 0:
            inp, h = cache
            gh = (g @ self.W2) * (1.0 - h * h)
            grads = {"W1": gh.T @ inp, "b1": gh.sum(axis=0),
                     "W2": g.T @ h, "b2": g.sum(axis=0)}
            return gh @ self.W1, grads
        (inp,) = cache
        grads = {"W": g.T @ inp, "b": g.sum(axis=0)}
        return g @ self.W, grads


def transition_mean(t, eta_prev, x_t, y_enc, model):
    """Prior mean mu0_t = f_t(eta_prev, x_t, y_enc) for a single subject.

    t is the 1-based stage index (t=1 pairs with eta_prev = eta0); it only
    labels the call, the mapping is carried by `model`.
    """
    if t < 1:
        raise ShapeError("stage index t must be >= 1")
    inp = np.concatenate([np.ravel(eta_prev), np.ravel(x_t), np.ravel(y_enc)])
    if inp.shape[0] != model.in_dim:
        raise ShapeError(
            f"concatenated input has dim {inp.shape[0]},"
            f" expected {model.in_dim}")
    out, _ = model.forward(inp[None, :])
    return out[0]


@dataclass
class GenerativeParams:
    """Parameters of the generative process.

    beta: unnormalized time-consistent topics (V x K); beta0_mean and delta2
    give the topic prior N(beta0, delta2 I); transitions hold f_t for each
    stage (a single shared model when share_across_stages); a2 is the
    proportion prior variance (sigma0 = sqrt(a2) is the scale used in KL
    terms); eta0 seeds the chain.
    """

    beta: np.ndarray
    transitions: list
    beta0_mean: np.ndarray | None = None
    delta2: float = 1.0
    a2: float = 1.0
    eta0: np.ndarray | None = None
    share_across_stages: bool = False

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.ndim != 2:
            raise ShapeError("beta must be V x K")
        V, K = self.beta.shape
        if self.beta0_mean is None:
            self.beta0_mean = np.zeros((V, K))
        self.beta0_mean = np.asarray(self.beta0_mean, dtype=np.float64)
        if self.beta0_mean.shape != (V, K):
            raise ShapeError("beta0_mean must match beta's shape")
        if self.eta0 is None:
            self.eta0 = np.zeros(K)
        self.eta0 = np.asarray(self.eta0, dtype=np.float64)
        if self.eta0.shape != (K,):
            raise ShapeError("eta0 must have K entries")
        if self.delta2 < 0 or self.a2 < 0:
            raise NumericError("variances must be nonnegative")

    @property
    def n_topics(self):
        return self.beta.shape[1]

    @property
    def n_stages(self):
        return len(self.transitions)

    @property
    def sigma0(self):
        return float(np.sqrt(self.a2))

    @classmethod
    def init(cls, V, K, T, P, n_groups, hidden=0, share_across_stages=False,
             rng=None, scale=0.01, a2=1.0, delta2=1.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        E = group_encoding_dim(n_groups)
        beta = scale * rng.standard_normal((V, K))
        n_models = 1 if share_across_stages else T
        models = [TransitionModel.init(K, K + P + E, hidden=hidden, rng=rng,
                                       scale=scale)
                  for _ in range(n_models)]
        transitions = models * T if share_across_stages else models
        return cls(beta=beta, transitions=transitions, delta2=delta2, a2=a2,
                   share_across_stages=share_across_stages)


def default_vocab(V):
    width = len(str(max(V - 1, 1)))
    return [f"w{v:0{width}d}" for v in range(V)]


def forward_sample(params, covariates, groups, count_range, seed, vocab=None):
    """Sample a corpus from the generative process.

    Draws beta once from N(beta0_mean, delta2 I), runs the eta chain with
    variance a2 (deterministic when delta2 = a2 = 0), then one multinomial
    document per (subject, stage) with totals uniform on the inclusive
    count_range. Bit-reproducible for a fixed seed.
    """
    covariates = np.asarray(covariates, dtype=np.float64)
    if covariates.ndim != 3:
        raise ShapeError("covariates must be (N, T, P)")
    N, T, P = covariates.shape
    if T != params.n_stages:
        raise ShapeError(
            f"covariates have {T} stages, transitions {params.n_stages}")
    groups = np.asarray(groups)
    G = max(2, int(groups.max()) + 1)
    yenc = encode_groups(groups, G)
    lo, hi = int(count_range[0]), int(count_range[1])
    if lo < 1 or hi < lo:
        raise ShapeError("count_range must satisfy 1 <= lo <= hi")

    rng = np.random.default_rng(seed)
    V, K = params.beta.shape
    beta = params.beta0_mean + np.sqrt(params.delta2) * rng.standard_normal(
        (V, K)) if params.delta2 > 0 else params.beta0_mean.copy()
    b = column_softmax(beta)

    eta = np.broadcast_to(params.eta0, (N, K)).copy()
    theta = np.zeros((T, N, K))
    for t in range(T):
        inp = np.concatenate([eta, covariates[:, t, :], yenc], axis=1)
        mu, _ = params.transitions[t].forward(inp)
        noise = rng.standard_normal((N, K)) if params.a2 > 0 else 0.0
        eta = mu + np.sqrt(params.a2) * noise
        theta[t] = softmax(eta, axis=1)

    totals = rng.integers(lo, hi + 1, size=(N, T))
    counts = np.zeros((N, T, V), dtype=np.int64)
    for i in range(N):
        for t in range(T):
            p = b @ theta[t, i]
            counts[i, t] = rng.multinomial(totals[i, t], p)
    vocab = vocab if vocab is not None else default_vocab(V)
    return Corpus.from_dense(counts, covariates, groups, vocab, n_groups=G)
