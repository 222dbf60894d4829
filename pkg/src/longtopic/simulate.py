"""Synthetic corpus generator with known ground truth.

Topics are banded over the word axis: topic k centers at word position
mu_k = floor(k * V / K) (1-based positions), carrying logit 1 +/- N(0,1) noise
inside the band |v - mu_k| <= V/(2K) and -4 outside, softmaxed per column and
shared across stages. With phi_drift > 0 the static construction is replaced by
a normal density on word positions whose spread grows with the stage,
sd_t = 1 + (t/T) * phi, so later stages get flatter topics.

Proportions follow a softmax recursion driven by (optionally basis-expanded)
covariates, the previous stage's proportions, and a group effect:
    f_{t,k} = gamma_main[t,k] . B(x_{i,t}) + gamma_prev[t] * theta_{t-1,i,k}
              + <group term>
with theta_0 uniform. For two groups the group term is y * gamma_group[t,k] .
B(x) with y in {-1,+1}; for G > 2 each group has its own coefficient vector,
centered so the G effects sum to zero.

Covariates start standard normal and evolve as a random walk with unit-variance
increments. Documents are single multinomials over theta . beta^T with totals
uniform on count_range. Everything is a pure function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import json
import numpy as np

from .corpus import Corpus
from .errors import ConfigError, IoError, ShapeError
from .model import default_vocab, softmax

BASIS_FUNCS = {
    "x": lambda x: x,
    "x2": lambda x: x ** 2,
    "x3": lambda x: x ** 3,
    "atan": np.arctan,
    "sign": np.sign,
}
DEFAULT_BASIS = ("x", "x2", "x3", "atan", "sign")


@dataclass
class SimConfig:
    n_subjects: int
    n_stages: int
    vocab_size: int
    n_topics: int
    n_covariates: int = 20
    n_groups: int = 2
    prior_kind: str = "linear"
    basis: tuple = DEFAULT_BASIS
    phi_drift: float = 0.0
    group_effect: bool = True
    count_range: tuple = (50, 150)
    seed: int = 0

    def __post_init__(self):
        self.basis = tuple(self.basis)
        self.count_range = (int(self.count_range[0]), int(self.count_range[1]))
        if self.n_topics < 1:
            raise ConfigError("n_topics must be >= 1")
        if self.vocab_size < self.n_topics:
            raise ConfigError("vocab_size must be >= n_topics")
        if self.n_stages < 1 or self.n_subjects < 1:
            raise ConfigError("need at least one stage and one subject")
        if self.n_covariates < 0 or self.n_groups < 2:
            raise ConfigError("n_covariates >= 0 and n_groups >= 2 required")
        if self.prior_kind not in ("linear", "nonlinear"):
            raise ConfigError(f"unknown prior_kind {self.prior_kind!r}")
        if self.phi_drift < 0:
            raise ConfigError("phi_drift must be >= 0")
        lo, hi = self.count_range
        if lo < 1 or hi < lo:
            raise ConfigError("count_range must satisfy 1 <= lo <= hi")
        unknown = [b for b in self.basis if b not in BASIS_FUNCS]
        if unknown:
            raise ConfigError(f"unknown basis functions {unknown}")

    @property
    def n_design_features(self):
        if self.prior_kind == "linear":
            return self.n_covariates
        return self.n_covariates * len(self.basis)


def expand_basis(cfg, x):
    """Apply the configured basis elementwise: (..., P) -> (..., F), feature
    blocks ordered by basis function. Identity in linear mode."""
    if cfg.prior_kind == "linear":
        return np.asarray(x, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([BASIS_FUNCS[b](x) for b in cfg.basis], axis=-1)


def topic_centers(V, K):
    """1-based band centers mu_k = floor(k * V / K), k = 1..K."""
    return np.floor(np.arange(1, K + 1) * V / K).astype(np.int64)


def sample_topics(cfg, rng=None):
    """(T, V, K) per-stage topic-word simplices (identical across stages when
    phi_drift = 0)."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    V, K, T = cfg.vocab_size, cfg.n_topics, cfg.n_stages
    centers = topic_centers(V, K)
    positions = np.arange(1, V + 1, dtype=np.float64)
    if cfg.phi_drift == 0:
        band = np.abs(positions[:, None] - centers[None, :]) <= V / (2.0 * K)
        m = np.where(band, 1.0, -4.0)
        z = m + rng.standard_normal((V, K))
        beta = softmax(z, axis=0)
        return np.repeat(beta[None, :, :], T, axis=0)
    out = np.zeros((T, V, K))
    for t in range(T):
        sd = 1.0 + ((t + 1) / T) * cfg.phi_drift
        dens = np.exp(-0.5 * ((positions[:, None] - centers[None, :]) / sd) ** 2)
        out[t] = dens / dens.sum(axis=0, keepdims=True)
    return out


def sample_metadata(cfg, rng=None):
    """Covariates (N, T, P): stage 1 iid N(0,1), then a unit-variance random
    walk; group labels uniform over 0..G-1."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    N, T, P = cfg.n_subjects, cfg.n_stages, cfg.n_covariates
    x = np.zeros((N, T, P))
    if P > 0:
        x[:, 0, :] = rng.standard_normal((N, P))
        for t in range(1, T):
            x[:, t, :] = x[:, t - 1, :] + rng.standard_normal((N, P))
    groups = rng.integers(0, cfg.n_groups, size=N)
    return x, groups


def draw_gamma(cfg, rng=None):
    """Regression coefficients, all iid N(0,1).

    main: (T, K, F); prev: (T,) scalar weight on theta_{t-1}; group: (T, K, F)
    for two groups, else (T, K, F, G) centered to sum to zero over groups.
    group_effect off zeroes the group block.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    T, K, F, G = cfg.n_stages, cfg.n_topics, cfg.n_design_features, cfg.n_groups
    gamma = {
        "main": rng.standard_normal((T, K, F)),
        "prev": rng.standard_normal(T),
    }
    if not cfg.group_effect:
        gamma["group"] = (np.zeros((T, K, F)) if G == 2
                          else np.zeros((T, K, F, G)))
    elif G == 2:
        gamma["group"] = rng.standard_normal((T, K, F))
    else:
        raw = rng.standard_normal((T, K, F, G))
        gamma["group"] = raw - raw.mean(axis=-1, keepdims=True)
    return gamma


def simulate_proportions(cfg, covariates, groups, gamma):
    """(T, N, K) proportion simplices from the softmax recursion; theta_0 is
    uniform 1/K."""
    covariates = np.asarray(covariates, dtype=np.float64)
    groups = np.asarray(groups)
    N, T, K = cfg.n_subjects, cfg.n_stages, cfg.n_topics
    if covariates.shape != (N, T, cfg.n_covariates):
        raise ShapeError(
            f"covariates must be ({N}, {T}, {cfg.n_covariates});"
            f" got {covariates.shape}")
    if groups.shape != (N,):
        raise ShapeError(f"groups must be ({N},); got {groups.shape}")
    F = cfg.n_design_features
    gm, gp, gg = gamma["main"], gamma["prev"], gamma["group"]
    gm = np.asarray(gm, dtype=np.float64)
    gp = np.asarray(gp, dtype=np.float64)
    gg = np.asarray(gg, dtype=np.float64)
    if gm.shape != (T, K, F) or gp.shape != (T,):
        raise ShapeError("gamma main/prev have unexpected shapes")
    expected_gg = (T, K, F) if cfg.n_groups == 2 else (T, K, F, cfg.n_groups)
    if gg.shape != expected_gg:
        raise ShapeError(
            f"gamma group must have shape {expected_gg}; got {gg.shape}")

    theta = np.zeros((T, N, K))
    prev = np.full((N, K), 1.0 / K)
    sign = 2.0 * groups - 1.0 if cfg.n_groups == 2 else None
    for t in range(T):
        bx = expand_basis(cfg, covariates[:, t, :])  # (N, F)
        f = bx @ gm[t].T + gp[t] * prev
        if cfg.n_groups == 2:
            f = f + sign[:, None] * (bx @ gg[t].T)
        else:
            f = f + np.einsum("kfn,nf->nk", gg[t][:, :, groups], bx)
        theta[t] = softmax(f, axis=1)
        prev = theta[t]
    return theta


def sample_documents(cfg, theta_true, beta_true, covariates, groups, rng=None):
    """One multinomial document per (subject, stage): total count uniform on
    count_range, word distribution theta_{t,i} . beta_t^T. Returns a Corpus
    (covariates get standardized inside)."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    N, T, V = cfg.n_subjects, cfg.n_stages, cfg.vocab_size
    theta_true = np.asarray(theta_true, dtype=np.float64)
    beta_true = np.asarray(beta_true, dtype=np.float64)
    if theta_true.shape != (T, N, cfg.n_topics):
        raise ShapeError(f"theta_true must be ({T}, {N}, {cfg.n_topics})")
    if beta_true.shape != (T, V, cfg.n_topics):
        raise ShapeError(f"beta_true must be ({T}, {V}, {cfg.n_topics})")
    lo, hi = cfg.count_range
    totals = rng.integers(lo, hi + 1, size=(N, T))
    counts = np.zeros((N, T, V), dtype=np.int64)
    for i in range(N):
        for t in range(T):
            p = beta_true[t] @ theta_true[t, i]
            counts[i, t] = rng.multinomial(totals[i, t], p)
    return Corpus.from_dense(counts, covariates, groups, default_vocab(V),
                             n_groups=cfg.n_groups)


@dataclass
class GroundTruth:
    beta_true: np.ndarray   # (T, V, K)
    theta_true: np.ndarray  # (T, N, K)
    gamma: dict

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (
            np.allclose(self.beta_true, other.beta_true, atol=1e-12)
            and np.allclose(self.theta_true, other.theta_true, atol=1e-12)
            and set(self.gamma) == set(other.gamma)
            and all(np.allclose(self.gamma[k], other.gamma[k], atol=1e-12)
                    for k in self.gamma)
        )


def simulate(cfg):
    """Full generator: (Corpus, GroundTruth), fully determined by cfg (and its
    seed). Draw order: topics, metadata, coefficients, documents."""
    rng = np.random.default_rng(cfg.seed)
    beta_true = sample_topics(cfg, rng)
    covariates, groups = sample_metadata(cfg, rng)
    gamma = draw_gamma(cfg, rng)
    theta_true = simulate_proportions(cfg, covariates, groups, gamma)
    corpus = sample_documents(cfg, theta_true, beta_true, covariates, groups,
                              rng)
    return corpus, GroundTruth(beta_true=beta_true, theta_true=theta_true,
                               gamma=gamma)


def save_truth(truth, fname):
    """Ground truth as JSON (nested lists); see load_truth."""
    obj = {
        "beta_true": truth.beta_true.tolist(),
        "theta_true": truth.theta_true.tolist(),
        "gamma": {k: np.asarray(v).tolist() for k, v in truth.gamma.items()},
    }
    try:
        with open(fname, "w", encoding="utf-8") as f:
            json.dump(obj, f, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {fname}: {e}") from e


def load_truth(fname):
    try:
        with open(fname, encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {fname}: {e}") from e
    except json.JSONDecodeError as e:
        raise IoError(f"{fname}: invalid JSON: {e}") from e
    return GroundTruth(
        beta_true=np.asarray(obj["beta_true"], dtype=np.float64),
        theta_true=np.asarray(obj["theta_true"], dtype=np.float64),
        gamma={k: np.asarray(v, dtype=np.float64)
               for k, v in obj["gamma"].items()},
    )
