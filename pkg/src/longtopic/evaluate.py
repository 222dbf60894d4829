"""Evaluation metrics: topic alignment, topic KL, UMass coherence, perplexity,
dominant-topic accuracy, and the group-recovery probe.

Estimated topic indices are arbitrary, so truth-dependent metrics first align
per stage by exhaustive permutation search (K <= 8), minimizing the mean
KL(beta_hat || beta_true) over topics; the same permutation is reused for
dominant accuracy. All metrics are pure functions of arrays plus, for
coherence/perplexity, the corpus counts.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDesign, IoError, ShapeError, TooManyTopics
from .model import PROB_FLOOR, softmax

MAX_ALIGN_TOPICS = 8


@dataclass
class MetricsReport:
    kl_topics: float | None
    coherence: float
    perplexity: float
    dominant_acc: float | None
    group_acc: float
    permutations: list | None  # per-stage topic orderings, None without truth

    def to_dict(self):
        return {
            "kl_topics": self.kl_topics,
            "coherence": self.coherence,
            "perplexity": self.perplexity,
            "dominant_acc": self.dominant_acc,
            "group_acc": self.group_acc,
            "permutations": self.permutations,
        }


def _as_stack(arr, name):
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3:
        raise ShapeError(f"{name} must be (T, V, K); got shape {a.shape}")
    return a


def _topic_kl_matrix(bh, bt):
    """cost[a, b] = KL(bh[:, a] || bt[:, b]) with the reference floored."""
    p = bh.T[:, None, :]                       # (K, 1, V)
    q = np.maximum(bt.T[None, :, :], PROB_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / q), 0.0)
    return terms.sum(axis=2)


def align_topics(beta_hat, beta_true):
    """Per-stage permutation perm with beta_hat[t][:, perm] matched to
    beta_true[t]; exhaustive search, ties to the lexicographically smallest
    permutation."""
    bh = _as_stack(beta_hat, "beta_hat")
    bt = _as_stack(beta_true, "beta_true")
    if bh.shape != bt.shape:
        raise ShapeError(
            f"shape mismatch: {bh.shape} vs {bt.shape}")
    T, V, K = bh.shape
    if K > MAX_ALIGN_TOPICS:
        raise TooManyTopics(
            f"alignment is exhaustive and capped at K = {MAX_ALIGN_TOPICS};"
            f" got K = {K}")
    perms = []
    for t in range(T):
        cost = _topic_kl_matrix(bh[t], bt[t])
        best, best_perm = np.inf, None
        for perm in itertools.permutations(range(K)):
            c = sum(cost[perm[k], k] for k in range(K))
            if c < best:  # strict: itertools yields ascending lexicographic
                best, best_perm = c, perm
        perms.append(list(best_perm))
    return perms


def apply_permutations(arr, perms):
    """Reorder the last axis of a (T, ..., K) stack stage by stage."""
    a = np.asarray(arr)
    return np.stack([a[t][..., perms[t]] for t in range(a.shape[0])])


def empirical_kl(beta_hat, beta_true):
    """(1/(T K)) sum over stages and topics of KL(beta_hat || beta_true),
    reference floored at 1e-12; call after alignment."""
    bh = _as_stack(beta_hat, "beta_hat")
    bt = _as_stack(beta_true, "beta_true")
    if bh.shape != bt.shape:
        raise ShapeError(f"shape mismatch: {bh.shape} vs {bt.shape}")
    T, V, K = bh.shape
    total = 0.0
    for t in range(T):
        cost = _topic_kl_matrix(bh[t], bt[t])
        total += float(np.trace(cost))
    return total / (T * K)


def top_words(beta_hat, top_n=15):
    """(T, K, top_n) word indices, most probable first; probability ties go to
    the lower word index."""
    bh = _as_stack(beta_hat, "beta_hat")
    T, V, K = bh.shape
    n = min(top_n, V)
    out = np.empty((T, K, n), dtype=np.int64)
    for t in range(T):
        order = np.argsort(-bh[t], axis=0, kind="stable")
        out[t] = order[:n].T
    return out


def umass_coherence(beta_hat, corpus, top_n=15):
    """Mean over (stage, topic) of sum_{i != j} log((D_t(v_i, v_j) + 1) /
    D_t(v_j)), where D_t counts stage-t documents containing the word(s);
    j-words absent from stage t are skipped."""
    bh = _as_stack(beta_hat, "beta_hat")
    T, V, K = bh.shape
    tops = top_words(bh, top_n)
    W = corpus.dense_counts()                   # (N, T, V)
    present = corpus.present
    total, cells = 0.0, 0
    for t in range(T):
        occ = (W[present[:, t], t] > 0)         # (N_t, V) word-in-doc flags
        doc_freq = occ.sum(axis=0)
        for k in range(K):
            words = tops[t, k]
            score = 0.0
            for i in words:
                for j in words:
                    if i == j or doc_freq[j] == 0:
                        continue
                    co = int(np.sum(occ[:, i] & occ[:, j]))
                    score += np.log((co + 1.0) / doc_freq[j])
            total += score
            cells += 1
    return total / cells


def perplexity(beta_hat, theta_hat, corpus):
    """(1/T) sum_t exp of the stage's mean per-word negative log-likelihood
    under theta_hat . beta_hat^T; probabilities floored at 1e-12. Missing
    cells are excluded from the stage mean."""
    bh = _as_stack(beta_hat, "beta_hat")
    th = np.asarray(theta_hat, dtype=np.float64)
    T, V, K = bh.shape
    if th.ndim != 3 or th.shape[0] != T or th.shape[2] != K:
        raise ShapeError(f"theta_hat must be (T, N, {K}); got {th.shape}")
    W = corpus.dense_counts()
    if W.shape[2] != V or W.shape[0] != th.shape[1]:
        raise ShapeError("corpus dimensions disagree with the model arrays")
    present = corpus.present
    out = 0.0
    for t in range(T):
        probs = th[t] @ bh[t].T                 # (N, V)
        logp = np.log(np.maximum(probs, PROB_FLOOR))
        cnt = W[:, t].sum(axis=1)
        mask = present[:, t]
        per_doc = -(W[:, t] * logp).sum(axis=1)[mask] / cnt[mask]
        out += np.exp(per_doc.mean())
    return float(out / T)


def dominant_accuracy(theta_hat, theta_true, mask=None):
    """Fraction of (stage, subject) cells whose largest-proportion topic
    matches; ties resolve to the lowest index on both sides. mask (T, N)
    restricts to observed cells."""
    th = np.asarray(theta_hat, dtype=np.float64)
    tt = np.asarray(theta_true, dtype=np.float64)
    if th.shape != tt.shape or th.ndim != 3:
        raise ShapeError(f"shape mismatch: {th.shape} vs {tt.shape}")
    hit = (th.argmax(axis=2) == tt.argmax(axis=2))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != hit.shape:
            raise ShapeError("mask must be (T, N)")
        if not mask.any():
            raise ShapeError("mask excludes every cell")
        hit = hit[mask]
    return float(np.mean(hit))


def group_accuracy(theta_hat, groups, mask=None, n_iter=500, step=0.1,
                   l2=1e-4):
    """In-sample accuracy of a softmax-regression probe of group labels on the
    pooled per-cell proportions.

    Full-batch gradient descent, zero init, L2 penalty on the weights (not
    the intercept). Constant features reduce to an intercept-only model whose
    accuracy is the majority-class share.
    """
    th = np.asarray(theta_hat, dtype=np.float64)
    if th.ndim != 3:
        raise ShapeError(f"theta_hat must be (T, N, K); got {th.shape}")
    T, N, K = th.shape
    groups = np.asarray(groups)
    if groups.shape != (N,):
        raise ShapeError("groups must be (N,)")
    G = max(2, int(groups.max()) + 1)
    X = th.reshape(T * N, K)
    y = np.tile(groups, T)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).reshape(T * N)
        X, y = X[keep], y[keep]
    n = X.shape[0]
    if n < G * K:
        raise DegenerateDesign(
            f"need at least G*K = {G * K} samples; got {n}")
    Y = np.zeros((n, G))
    Y[np.arange(n), y] = 1.0
    Wp = np.zeros((K, G))
    b = np.zeros(G)
    for _ in range(n_iter):
        p = softmax(X @ Wp + b, axis=1)
        r = (p - Y) / n
        Wp -= step * (X.T @ r + l2 * Wp)
        b -= step * r.sum(axis=0)
    pred = np.argmax(X @ Wp + b, axis=1)
    return float(np.mean(pred == y))


def full_report(fitted, corpus, truth=None):
    """Compose all metrics on one fitted model; alignment runs once and its
    permutations are shared by the truth-dependent metrics."""
    from .inference.trainer import infer_proportions

    beta_hat = fitted.stage_topics()
    theta_hat = infer_proportions(fitted, corpus)
    pres = corpus.present.T                      # (T, N)
    mask = None if pres.all() else pres
    coh = umass_coherence(beta_hat, corpus)
    perp = perplexity(beta_hat, theta_hat, corpus)
    gacc = group_accuracy(theta_hat, corpus.groups, mask=mask)
    if truth is None:
        return MetricsReport(kl_topics=None, coherence=coh, perplexity=perp,
                             dominant_acc=None, group_acc=gacc,
                             permutations=None)
    perms = align_topics(beta_hat, truth.beta_true)
    bh_al = apply_permutations(beta_hat, perms)
    th_al = apply_permutations(theta_hat, perms)
    kl = empirical_kl(bh_al, truth.beta_true)
    dacc = dominant_accuracy(th_al, truth.theta_true, mask=mask)
    return MetricsReport(kl_topics=kl, coherence=coh, perplexity=perp,
                         dominant_acc=dacc, group_acc=gacc,
                         permutations=perms)


def save_metrics(report, fname, config_echo=None):
    obj = report.to_dict()
    if config_echo is not None:
        obj["config"] = config_echo
    try:
        with open(fname, "w", encoding="utf-8") as f:
            json.dump(obj, f, sort_keys=True, indent=2)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {fname}: {e}") from e


def save_top_words(beta_hat, vocab, fname, top_n=15):
    tops = top_words(beta_hat, top_n)
    obj = [[[vocab[v] for v in tops[t, k]] for k in range(tops.shape[1])]
           for t in range(tops.shape[0])]
    try:
        with open(fname, "w", encoding="utf-8") as f:
            json.dump(obj, f, sort_keys=True, indent=2)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {fname}: {e}") from e
