"""The longitudinal variational objective and its exact gradients.

For each document i and stage t (writing q_t = N(mu_q, diag(sigma_q^2)) for the
encoded posterior and eta_{t,j} = mu_q + eps_{t,j} * sigma_q for the M
reparameterized samples), the minimized loss is

    (1/(N M)) sum_i sum_t sum_j [ KL(q_t || N(mu0_{t,j}, sigma0^2 I))
                                  - W_{i,t} . log(softmax(eta_{t,j}) B)
                                  - dist_weight * D_t(i) ]

where B is the column-softmaxed topic matrix, mu0_{1,j} = f_1(eta0, x_1, y) and
mu0_{t,j} = f_t(eta_{t-1,j}, x_t, y) for t >= 2 (the *same* sample stream is
reused for the prior propagation), and D_t(i) is the configured group distance
between the factual posterior and the counterfactual posteriors obtained by
re-encoding with each non-factual group label. D does not depend on j, so its
inner sum contributes with weight 1/N.

The first-stage KL is sample-free (mu0_1 does not involve eta), so the
composed objective at T=1 is exactly the single-stage negative ELBO; at later
stages the KL contribution is the shared-eps Monte-Carlo estimate of
E_{eta_{t-1} ~ q_{t-1}}[KL(q_t || p_t)], which is what the stage
decomposition of the evidence bound prescribes.

Gradients are hand-derived and propagated in reverse stage order. Paths into
stage t's moments: the stage-t KL and distance terms, the multinomial term
through eta_{t,j}, the stage-(t+1) prior mean through f_{t+1}(eta_{t,j}, ...),
and the stage-(t+1) encoder inputs (factual and counterfactual) through the
recurrent previous-mean slot. Missing cells keep the recurrent chain alive but
contribute no terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError, UnknownDistance
from ..model import PROB_FLOOR, column_softmax, encode_groups, softmax
from .terms import DISTANCE_KINDS, distance_with_grad


@dataclass
class Batch:
    counts: np.ndarray   # (B, T, V)
    wn: np.ndarray       # (B, T, V) rows normalized to relative frequencies
    x: np.ndarray        # (B, T, P)
    y_enc: np.ndarray    # (B, E) factual group encoding
    cf_encs: list        # C entries of (B, E), C = n_groups - 1
    present: np.ndarray  # (B, T) float 0/1
    indices: np.ndarray  # (B,) subject ids within the parent corpus

    @property
    def n_docs(self):
        return self.counts.shape[0]


class CorpusArrays:
    """Dense, encoder-ready views of a corpus, sliceable into batches."""

    def __init__(self, corpus):
        self.corpus = corpus
        W = corpus.dense_counts()
        totals = W.sum(axis=2, keepdims=True)
        self.counts = W
        self.wn = np.divide(W, totals, out=np.zeros_like(W),
                            where=totals > 0)
        self.x = corpus.covariates
        self.present = corpus.present.astype(np.float64)
        G = corpus.n_groups
        self.y_enc = encode_groups(corpus.groups, G)
        # counterfactual slot c holds each subject's c-th non-factual group
        self.cf_groups = np.empty((corpus.n_subjects, G - 1), dtype=np.int64)
        for i, y in enumerate(corpus.groups):
            self.cf_groups[i] = [g for g in range(G) if g != y]
        self.cf_encs = [encode_groups(self.cf_groups[:, c], G)
                        for c in range(G - 1)]

    def batch(self, idx):
        idx = np.asarray(idx)
        return Batch(
            counts=self.counts[idx], wn=self.wn[idx], x=self.x[idx],
            y_enc=self.y_enc[idx],
            cf_encs=[e[idx] for e in self.cf_encs],
            present=self.present[idx], indices=idx)


@dataclass
class LossResult:
    loss: float
    grads: dict | None
    components: dict  # per-stage arrays: "kl", "nll", "dist"; loss =
    #                   sum(kl) - sum(nll) - dist_weight * sum(dist)


def longitudinal_loss(batch, gen, enc, cfg, eps, want_grads=True,
                      stage_bcols=None):
    """Evaluate the objective (and, unless disabled, all parameter gradients)
    on one batch with an explicit eps tensor of shape (B, T, M, K).

    stage_bcols, when given, is a (T, V, K) stack of already-normalized
    per-stage topic matrices that replaces softmax_col(gen.beta) in the
    reconstruction term; grads then carry "bcols_stage" (the raw gradient with
    respect to each normalized matrix, for the caller to chain through its own
    parametrization) instead of "beta".
    """
    counts, wn, x = batch.counts, batch.wn, batch.x
    B, T, V = counts.shape
    K = gen.beta.shape[1]
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 4 or eps.shape[0] != B or eps.shape[1] != T \
            or eps.shape[3] != K:
        raise ShapeError(f"eps must be (B, {T}, M, {K}); got {eps.shape}")
    M = eps.shape[2]
    if T != gen.n_stages or T != enc.n_stages:
        raise ShapeError("stage counts disagree")
    s0 = gen.sigma0
    if not s0 > 0:
        raise NumericError("sigma0 must be positive for the KL term")
    kind, w_d = cfg.dist_kind, cfg.dist_weight
    if kind not in DISTANCE_KINDS:
        raise UnknownDistance(f"unknown distance kind {kind!r}")
    # a zero weight is exactly the "none" ablation: skip every
    # counterfactual pass, not just the final weighting
    use_dist = (kind != "none" and w_d != 0.0)
    C = len(batch.cf_encs) if use_dist else 0
    pm = batch.present
    scale = 1.0 / (B * M)
    if stage_bcols is None:
        bcols = column_softmax(gen.beta)
        stage_b = None
    else:
        stage_b = np.asarray(stage_bcols, dtype=np.float64)
        if stage_b.shape != (T, V, K):
            raise ShapeError(
                f"stage_bcols must be ({T}, {V}, {K}); got {stage_b.shape}")
        bcols = None

    # ---- forward ----------------------------------------------------------
    mu = [None] * T
    sg = [None] * T
    enc_caches = [None] * T
    mu_cf = [[None] * C for _ in range(T)]
    sg_cf = [[None] * C for _ in range(T)]
    cf_caches = [[None] * C for _ in range(T)]
    eta = [None] * T            # (B, M, K)
    theta = [None] * T          # (B, M, K)
    ratio = [None] * T          # (B, M, V) masked counts / probs
    mu0_first = None
    tr_cache_first = None
    mu0 = [None] * T            # t >= 1: (B, M, K)
    tr_caches = [[None] * M for _ in range(T)]
    dists = [None] * T

    kl_t = np.zeros(T)
    nll_t = np.zeros(T)
    dist_t = np.zeros(T)

    prev_mean = np.broadcast_to(gen.eta0, (B, K))
    eta0_tile = np.broadcast_to(gen.eta0, (B, K))
    for t in range(T):
        inp = np.concatenate([wn[:, t], x[:, t], batch.y_enc, prev_mean],
                             axis=1)
        mu[t], sg[t], enc_caches[t] = enc.stages[t].forward(inp)
        for c in range(C):
            inp_c = np.concatenate(
                [wn[:, t], x[:, t], batch.cf_encs[c], prev_mean], axis=1)
            mu_cf[t][c], sg_cf[t][c], cf_caches[t][c] = \
                enc.stages[t].forward(inp_c)
        eta[t] = mu[t][:, None, :] + eps[:, t] * sg[t][:, None, :]

        # prior means
        if t == 0:
            tin = np.concatenate([eta0_tile, x[:, 0], batch.y_enc], axis=1)
            mu0_first, tr_cache_first = gen.transitions[0].forward(tin)
            kl_rows = _kl_sum(mu[0], sg[0], mu0_first, s0)
            kl_t[0] = scale * M * float(pm[:, 0] @ kl_rows)
        else:
            mu0[t] = np.empty((B, M, K))
            acc = 0.0
            for j in range(M):
                tin = np.concatenate([eta[t - 1][:, j], x[:, t],
                                      batch.y_enc], axis=1)
                mu0[t][:, j], tr_caches[t][j] = gen.transitions[t].forward(tin)
                acc += float(pm[:, t] @ _kl_sum(mu[t], sg[t],
                                                mu0[t][:, j], s0))
            kl_t[t] = scale * acc

        # multinomial reconstruction
        theta[t] = softmax(eta[t], axis=2)
        bc = bcols if stage_b is None else stage_b[t]
        probs = theta[t] @ bc.T                          # (B, M, V)
        logp = np.log(np.maximum(probs, PROB_FLOOR))
        nll_t[t] = scale * float(
            (pm[:, t][:, None] * (counts[:, t][:, None, :] * logp).sum(
                axis=2)).sum())
        if want_grads:
            ratio[t] = np.divide(
                np.broadcast_to(counts[:, t][:, None, :], probs.shape),
                probs, out=np.zeros_like(probs), where=probs > PROB_FLOOR)

        # group distance (independent of j)
        if use_dist:
            d, dgmu, dgs, dgmu_c, dgs_c = distance_with_grad(
                kind, mu[t], sg[t], mu_cf[t], sg_cf[t])
            dists[t] = (dgmu, dgs, dgmu_c, dgs_c)
            dist_t[t] = float(pm[:, t] @ d) / B

        prev_mean = mu[t]

    loss = float(kl_t.sum() - nll_t.sum() - w_d * dist_t.sum())
    components = {"kl": kl_t, "nll": nll_t, "dist": dist_t}
    if not want_grads:
        return LossResult(loss=loss, grads=None, components=components)

    # ---- backward ---------------------------------------------------------
    grads = {}

    def add(key, val):
        if key in grads:
            grads[key] += val
        else:
            grads[key] = val

    def trans_key(t):
        return "trans" if gen.share_across_stages else f"trans{t}"

    if stage_b is None:
        gb_acc = np.zeros((V, K))
    else:
        gb_stage = np.zeros((T, V, K))
    pending_gmu = np.zeros((B, K))
    pending_geta = None  # (B, M, K) gradient into eta[t] from stage t+1
    for t in range(T - 1, -1, -1):
        gmu_t = pending_gmu
        gs_t = np.zeros((B, K))
        geta = pending_geta if pending_geta is not None \
            else np.zeros((B, M, K))
        geta_prev = np.zeros((B, M, K)) if t >= 1 else None

        # KL term: d/dmu_q = (mu_q - mu0)/s0^2, d/dsigma = -1/sg + sg/s0^2,
        # d/dmu0 = -(mu_q - mu0)/s0^2
        if t == 0:
            w = (scale * M) * pm[:, 0][:, None]
            diff = mu[0] - mu0_first
            gmu_t = gmu_t + w * diff / s0 ** 2
            gs_t += w * (-1.0 / sg[0] + sg[0] / s0 ** 2)
            gin, tg = gen.transitions[0].backward(
                tr_cache_first, -w * diff / s0 ** 2)
            for name, val in tg.items():
                add(f"{trans_key(0)}.{name}", val)
        else:
            w = scale * pm[:, t][:, None]
            gsig_common = -1.0 / sg[t] + sg[t] / s0 ** 2
            for j in range(M):
                diff = mu[t] - mu0[t][:, j]
                gmu_t = gmu_t + w * diff / s0 ** 2
                gs_t += w * gsig_common
                gin, tg = gen.transitions[t].backward(
                    tr_caches[t][j], -w * diff / s0 ** 2)
                for name, val in tg.items():
                    add(f"{trans_key(t)}.{name}", val)
                geta_prev[:, j] += gin[:, :K]

        # multinomial term through eta
        u = -scale * pm[:, t][:, None, None]          # (B, 1, 1)
        ur = u * ratio[t]                             # (B, M, V)
        bc = bcols if stage_b is None else stage_b[t]
        gtheta = ur @ bc                              # (B, M, K)
        if stage_b is None:
            gb_acc += np.einsum("bmv,bmk->vk", ur, theta[t])
        else:
            gb_stage[t] = np.einsum("bmv,bmk->vk", ur, theta[t])
        inner = (gtheta * theta[t]).sum(axis=2, keepdims=True)
        geta += theta[t] * (gtheta - inner)

        # distance term
        if use_dist:
            dgmu, dgs, dgmu_c, dgs_c = dists[t]
            uw = (-w_d / B) * pm[:, t][:, None]
            gmu_t = gmu_t + uw * dgmu
            gs_t += uw * dgs
        # route eta gradients into (mu, sigma)
        gmu_t = gmu_t + geta.sum(axis=1)
        gs_t += (geta * eps[:, t]).sum(axis=1)

        # encoder backward: factual, then counterfactuals (all share stage-t
        # parameters and the same recurrent previous-mean input)
        gin_f, eg = enc.stages[t].backward(enc_caches[t], gmu_t, gs_t)
        for name, val in eg.items():
            add(f"enc{t}.{name}", val)
        gprev = gin_f[:, -K:].copy()
        if use_dist:
            for c in range(C):
                gin_c, eg = enc.stages[t].backward(
                    cf_caches[t][c], uw * dgmu_c[c], uw * dgs_c[c])
                for name, val in eg.items():
                    add(f"enc{t}.{name}", val)
                gprev += gin_c[:, -K:]
        pending_gmu = gprev
        pending_geta = geta_prev

    # beta through the per-column softmax
    if stage_b is None:
        grads["beta"] = bcols * (gb_acc - (bcols * gb_acc).sum(axis=0,
                                                               keepdims=True))
    else:
        grads["bcols_stage"] = gb_stage
    return LossResult(loss=loss, grads=grads, components=components)


def _kl_sum(mu, s, mu0, s0):
    """(B,) KL rows against a shared scalar prior scale."""
    return np.sum(np.log(s0 / s) + (s ** 2 + (mu - mu0) ** 2)
                  / (2.0 * s0 ** 2) - 0.5, axis=1)
