"""Document/metadata data model, file formats, and validation.

A corpus is a balanced panel: N subjects observed over T stages, each (subject,
stage) cell holding one bag-of-words document over a fixed vocabulary of V words,
per-stage covariates (P features), and one group label per subject. Counts are
stored sparsely (word index -> count); dense tensors are materialized only inside
numeric kernels.

On-disk layout (one directory):
    vocab.txt   one word per line; line index = word index
    docs.jsonl  one JSON object per line:
                {"subject": i, "stage": t, "counts": {"<word_index>": count, ...}}
    meta.csv    header subject,stage,x0,...,x{P-1}; one row per (subject, stage)
    groups.csv  header subject,group; one row per subject

Covariates are standardized (per-feature zero mean, unit variance pooled over all
(i, t)) during construction, and the transform is recorded on the corpus. Saving
writes the standardized values, so re-standardizing on reload is a no-op and
load(save(c)) == c holds.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DuplicateDocument,
    FormatError,
    IoError,
    MissingDocument,
    MissingLabel,
    ShapeError,
    VocabMismatch,
)

VOCAB_FILE = "vocab.txt"
DOCS_FILE = "docs.jsonl"
META_FILE = "meta.csv"
GROUPS_FILE = "groups.csv"


@dataclass
class Corpus:
    n_subjects: int
    n_stages: int
    vocab_size: int
    n_groups: int
    n_features: int
    # docs[i][t] is a {word_index: count} map, or None for a missing cell
    docs: list
    covariates: np.ndarray  # (N, T, P) standardized
    groups: np.ndarray  # (N,) int labels in 0..G-1
    vocab: list
    present: np.ndarray  # (N, T) bool
    cov_center: np.ndarray  # (P,) recorded standardization offset
    cov_scale: np.ndarray  # (P,) recorded standardization scale
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, records, covariates, groups, vocab, allow_missing=False,
              n_groups=None):
        """Validate and assemble a corpus.

        records: iterable of (subject, stage, {word_index: count}).
        covariates: (N, T, P) array-like; groups: (N,) labels; vocab: V words.
        Validation is total: malformed input raises a named error, never returns
        a partially built corpus.
        """
        vocab = list(vocab)
        if not vocab:
            raise FormatError("vocabulary is empty")
        seen = set()
        for w in vocab:
            if not isinstance(w, str) or w == "" or "\n" in w or "\r" in w:
                raise FormatError(f"invalid vocabulary entry {w!r}")
            if w in seen:
                raise FormatError(f"duplicate vocabulary entry {w!r}")
            seen.add(w)
        V = len(vocab)

        groups = np.asarray(groups)
        if groups.ndim != 1 or groups.shape[0] < 1:
            raise ShapeError("groups must be a nonempty 1-d array")
        if not np.issubdtype(groups.dtype, np.integer):
            if np.any(groups != np.floor(groups)):
                raise FormatError("group labels must be integers")
            groups = groups.astype(np.int64)
        if np.any(groups < 0):
            raise FormatError("group labels must be nonnegative")
        N = groups.shape[0]
        G = max(2, int(groups.max()) + 1)
        if n_groups is not None:
            if n_groups < G:
                raise FormatError(
                    f"n_groups={n_groups} smaller than max label {groups.max()}")
            G = int(n_groups)

        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim != 3 or covariates.shape[0] != N:
            raise ShapeError(
                f"covariates must be (N, T, P); got {covariates.shape}")
        _, T, P = covariates.shape
        if T < 1:
            raise ShapeError("need at least one stage")
        if not np.all(np.isfinite(covariates)):
            raise FormatError("covariates contain non-finite values")

        docs = [[None] * T for _ in range(N)]
        for subject, stage, counts in records:
            if not (0 <= subject < N):
                raise MissingLabel(f"subject {subject} has no group label")
            if not (0 <= stage < T):
                raise FormatError(f"stage {stage} outside 0..{T - 1}")
            if docs[subject][stage] is not None:
                raise DuplicateDocument(
                    f"duplicate document for subject {subject}, stage {stage}")
            cell = {}
            for v, c in counts.items():
                try:
                    v = int(v)
                except (TypeError, ValueError) as e:
                    raise FormatError(f"bad word index {v!r}") from e
                if not (0 <= v < V):
                    raise VocabMismatch(
                        f"word index {v} outside vocabulary of size {V}")
                try:
                    ok = not isinstance(c, bool) and c == int(c)
                except (TypeError, ValueError):
                    ok = False
                if not ok:
                    raise FormatError(f"count for word {v} is not an integer")
                c = int(c)
                if c < 0:
                    raise FormatError(f"negative count for word {v}")
                if c > 0:
                    cell[v] = cell.get(v, 0) + c
            if not cell:
                raise FormatError(
                    f"document (subject {subject}, stage {stage}) has zero total"
                    " count")
            docs[subject][stage] = cell

        present = np.array(
            [[docs[i][t] is not None for t in range(T)] for i in range(N)],
            dtype=bool)
        if not present.any():
            raise FormatError("corpus has no documents")
        if not allow_missing and not present.all():
            i, t = np.argwhere(~present)[0]
            raise MissingDocument(
                f"no document for subject {i}, stage {t}"
                " (pass allow_missing to accept an unbalanced panel)")

        covariates, center, scale = _standardize(covariates)
        return cls(
            n_subjects=N, n_stages=T, vocab_size=V, n_groups=G, n_features=P,
            docs=docs, covariates=covariates, groups=groups, vocab=vocab,
            present=present, cov_center=center, cov_scale=scale)

    @classmethod
    def from_dense(cls, counts, covariates, groups, vocab, allow_missing=False,
                   n_groups=None):
        """Build from a dense (N, T, V) count tensor; zero-total cells are
        treated as missing."""
        counts = np.asarray(counts)
        if counts.ndim != 3:
            raise ShapeError(f"counts must be (N, T, V); got {counts.shape}")
        records = []
        N, T, _ = counts.shape
        for i in range(N):
            for t in range(T):
                row = counts[i, t]
                nz = np.nonzero(row)[0]
                if nz.size:
                    records.append(
                        (i, t, {int(v): int(row[v]) for v in nz}))
        return cls.build(records, covariates, groups, vocab,
                         allow_missing=allow_missing, n_groups=n_groups)

    # -- accessors ---------------------------------------------------------

    def dense_counts(self):
        """(N, T, V) float64 count tensor. Missing cells are all-zero rows."""
        if self._dense is None:
            W = np.zeros(
                (self.n_subjects, self.n_stages, self.vocab_size))
            for i in range(self.n_subjects):
                for t in range(self.n_stages):
                    cell = self.docs[i][t]
                    if cell:
                        W[i, t, list(cell.keys())] = list(cell.values())
            self._dense = W
        return self._dense

    def total_counts(self):
        """(N, T) total words per cell (0 where missing)."""
        return self.dense_counts().sum(axis=2)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.n_subjects == other.n_subjects
            and self.n_stages == other.n_stages
            and self.vocab_size == other.vocab_size
            and self.n_groups == other.n_groups
            and self.vocab == other.vocab
            and np.array_equal(self.groups, other.groups)
            and np.array_equal(self.present, other.present)
            and self.docs == other.docs
            and np.allclose(self.covariates, other.covariates,
                            rtol=1e-12, atol=1e-12)
        )


def _standardize(covariates):
    """Per-feature zero mean / unit variance pooled over all (i, t).

    Zero-variance features keep scale 1 so the transform stays invertible;
    applying the transform twice is a no-op up to float rounding.
    """
    N, T, P = covariates.shape
    flat = covariates.reshape(N * T, P)
    center = flat.mean(axis=0) if flat.size else np.zeros(P)
    scale = flat.std(axis=0) if flat.size else np.ones(P)
    scale = np.where(scale > 0, scale, 1.0)
    out = (covariates - center) / scale
    return out, center, scale


# -- file I/O ---------------------------------------------------------------


def load_corpus(path, allow_missing=False):
    """Read the four corpus files from a directory and validate.

    Dimensions are inferred: N from groups.csv, T and P from meta.csv, V from
    vocab.txt. meta.csv must cover the full N x T grid; only documents may be
    missing (and only with allow_missing).
    """
    vocab = _read_vocab(os.path.join(path, VOCAB_FILE))
    groups = _read_groups(os.path.join(path, GROUPS_FILE))
    covariates = _read_meta(os.path.join(path, META_FILE), len(groups))
    records = _read_docs(os.path.join(path, DOCS_FILE))
    return Corpus.build(records, covariates, groups, vocab,
                        allow_missing=allow_missing)


def save_corpus(corpus, path):
    """Write the four corpus files; load_corpus(save_corpus(c)) == c.

    Counts round-trip exactly; covariates to better than 12 significant digits
    (written with repr-faithful precision). Refuses an empty corpus.
    """
    if corpus.n_subjects < 1:
        raise IoError("refusing to save a corpus with no subjects")
    try:
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, VOCAB_FILE), "w", encoding="utf-8") as f:
            f.write("\n".join(corpus.vocab) + "\n")
        with open(os.path.join(path, DOCS_FILE), "w", encoding="utf-8") as f:
            for i in range(corpus.n_subjects):
                for t in range(corpus.n_stages):
                    cell = corpus.docs[i][t]
                    if cell is None:
                        continue
                    counts = {str(v): cell[v] for v in sorted(cell)}
                    f.write(json.dumps(
                        {"subject": i, "stage": t, "counts": counts}) + "\n")
        with open(os.path.join(path, META_FILE), "w", encoding="utf-8") as f:
            P = corpus.n_features
            f.write(",".join(["subject", "stage"]
                             + [f"x{p}" for p in range(P)]) + "\n")
            for i in range(corpus.n_subjects):
                for t in range(corpus.n_stages):
                    row = [str(i), str(t)] + [
                        format(x, ".17g") for x in corpus.covariates[i, t]]
                    f.write(",".join(row) + "\n")
        with open(os.path.join(path, GROUPS_FILE), "w", encoding="utf-8") as f:
            f.write("subject,group\n")
            for i in range(corpus.n_subjects):
                f.write(f"{i},{int(corpus.groups[i])}\n")
    except OSError as e:
        raise IoError(f"cannot write corpus to {path}: {e}") from e


def _read_lines(fname):
    try:
        with open(fname, encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise IoError(f"cannot read {fname}: {e}") from e


def _read_vocab(fname):
    words = _read_lines(fname)
    while words and words[-1] == "":
        words.pop()
    return words


def _read_groups(fname):
    lines = _read_lines(fname)
    if not lines or lines[0].strip() != "subject,group":
        raise FormatError(f"{fname}: expected header 'subject,group'")
    rows = {}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{fname} line {ln}: expected 2 fields")
        try:
            subject, group = int(parts[0]), int(parts[1])
        except ValueError as e:
            raise FormatError(f"{fname} line {ln}: {e}") from e
        if subject in rows:
            raise FormatError(f"{fname} line {ln}: duplicate subject {subject}")
        rows[subject] = group
    if not rows:
        raise FormatError(f"{fname}: no subjects")
    N = len(rows)
    if sorted(rows) != list(range(N)):
        raise FormatError(f"{fname}: subject ids must be 0..{N - 1}")
    return np.array([rows[i] for i in range(N)], dtype=np.int64)


def _read_meta(fname, n_subjects):
    lines = _read_lines(fname)
    if not lines:
        raise FormatError(f"{fname}: empty file")
    header = lines[0].split(",")
    if header[:2] != ["subject", "stage"]:
        raise FormatError(f"{fname}: header must start with 'subject,stage'")
    P = len(header) - 2
    rows = {}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != P + 2:
            raise FormatError(f"{fname} line {ln}: expected {P + 2} fields")
        try:
            subject, stage = int(parts[0]), int(parts[1])
            x = [float(p) for p in parts[2:]]
        except ValueError as e:
            raise FormatError(f"{fname} line {ln}: {e}") from e
        if not all(math.isfinite(v) for v in x):
            raise FormatError(f"{fname} line {ln}: non-finite covariate")
        if (subject, stage) in rows:
            raise FormatError(
                f"{fname} line {ln}: duplicate (subject, stage) "
                f"({subject}, {stage})")
        rows[(subject, stage)] = x
    if not rows:
        raise FormatError(f"{fname}: no rows")
    T = max(t for _, t in rows) + 1
    covariates = np.zeros((n_subjects, T, P))
    for i in range(n_subjects):
        for t in range(T):
            if (i, t) not in rows:
                raise FormatError(
                    f"{fname}: missing covariate row for subject {i},"
                    f" stage {t}")
            covariates[i, t] = rows[(i, t)]
    extra = [k for k in rows if k[0] >= n_subjects or k[1] < 0]
    if extra:
        raise FormatError(f"{fname}: row for unknown subject {extra[0][0]}")
    return covariates


def _read_docs(fname):
    records = []
    for ln, line in enumerate(_read_lines(fname), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{fname} line {ln}: {e}") from e
        if not isinstance(obj, dict) or not {"subject", "stage", "counts"} <= set(obj):
            raise FormatError(
                f"{fname} line {ln}: need subject/stage/counts fields")
        subject, stage, counts = obj["subject"], obj["stage"], obj["counts"]
        if (isinstance(subject, bool) or not isinstance(subject, int)
                or isinstance(stage, bool) or not isinstance(stage, int)):
            raise FormatError(f"{fname} line {ln}: subject/stage must be ints")
        if not isinstance(counts, dict):
            raise FormatError(f"{fname} line {ln}: counts must be an object")
        parsed = {}
        for k, v in counts.items():
            try:
                idx = int(k)
            except ValueError as e:
                raise FormatError(
                    f"{fname} line {ln}: bad word index {k!r}") from e
            if isinstance(v, bool) or not isinstance(v, int):
                raise FormatError(
                    f"{fname} line {ln}: count for word {k} must be an int")
            parsed[idx] = v
        records.append((subject, stage, parsed))
    return records
