"""Latent topic extraction from clicked documents via collapsed Gibbs LDA.

Training runs a collapsed Gibbs sampler over token-topic assignments and
estimates phi (topic-word) and theta (document-topic) by averaging
post-burn-in samples.  New documents are folded in against the frozen phi.
Everything is deterministic given the configured seed; fold-in for a
document derives its own RNG stream from (seed, doc_id) so inference order
does not matter.

Topic-model preprocessing (stopword removal, minimum document frequency)
applies only here; containment retrieval elsewhere uses raw tokens.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus_index import Document, tokenize

STOPWORDS = frozenset(
    """a about above after again against all am an and any are as at be because
    been before being below between both but by can did do does doing down
    during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more
    most my myself no nor not now of off on once only or other our ours
    ourselves out over own same she should so some such than that the their
    theirs them themselves then there these they this those through to too
    under until up very was we were what when where which while who whom why
    will with you your yours yourself yourselves""".split()
)


class TrainingDataError(ValueError):
    """The clicked-document corpus cannot support LDA training."""


@dataclass(frozen=True)
class LdaHyperparams:
    """Sampler configuration.

    ``dirichlet_alpha`` is the symmetric document-topic prior and defaults
    to 50 / num_topics when left as None; ``dirichlet_beta`` is the
    topic-word prior.  These are distinct from the profiles' decay_alpha.
    """

    num_topics: int = 300
    dirichlet_alpha: Optional[float] = None
    dirichlet_beta: float = 0.01
    gibbs_iterations: int = 500
    burn_in: int = 100
    sample_lag: int = 10
    infer_iterations: int = 100
    infer_burn_in: int = 50
    rng_seed: int = 13

    def __post_init__(self) -> None:
        if self.num_topics < 2:
            raise ValueError("num_topics must be >= 2")
        if self.dirichlet_alpha is not None and self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.dirichlet_beta <= 0:
            raise ValueError("dirichlet_beta must be positive")
        if not 0 <= self.burn_in < self.gibbs_iterations:
            raise ValueError("burn_in must be < gibbs_iterations")
        if self.sample_lag < 1:
            raise ValueError("sample_lag must be >= 1")
        if self.burn_in + self.sample_lag > self.gibbs_iterations:
            raise ValueError("no sample would be collected; lower burn_in or sample_lag")
        if not 0 <= self.infer_burn_in < self.infer_iterations:
            raise ValueError("infer_burn_in must be < infer_iterations")

    @property
    def alpha(self) -> float:
        if self.dirichlet_alpha is not None:
            return self.dirichlet_alpha
        return 50.0 / self.num_topics


def topic_tokens(text: str) -> list[str]:
    """Tokens as used by the topic model: tokenized, stopwords removed."""
    return [t for t in tokenize(text) if t not in STOPWORDS]


def build_vocabulary(token_lists: Sequence[Sequence[str]], min_df: int = 2) -> dict[str, int]:
    """Term -> index for terms appearing in at least min_df documents."""
    df: dict[str, int] = {}
    for tokens in token_lists:
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1
    kept = sorted(term for term, count in df.items() if count >= min_df)
    return {term: i for i, term in enumerate(kept)}


@dataclass
class TopicModel:
    """A trained LDA model plus per-document topic distributions."""

    phi: np.ndarray  # (K, V), rows sum to 1
    theta: dict[str, np.ndarray]  # doc_id -> (K,) distribution
    vocabulary: dict[str, int]
    hyper: LdaHyperparams
    trained_through: Optional[str] = None  # provenance label, e.g. "2012-W01"
    _phi_by_word: Optional[list[list[float]]] = field(default=None, repr=False)

    @property
    def num_topics(self) -> int:
        return self.phi.shape[0]

    def phi_by_word(self) -> list[list[float]]:
        """phi transposed into per-word topic rows (plain lists, for the
        fold-in inner loop)."""
        if self._phi_by_word is None:
            self._phi_by_word = [list(col) for col in self.phi.T]
        return self._phi_by_word


def _doc_rng(seed: int, doc_id: str) -> random.Random:
    # Stable across processes, unlike hash(); keyed so per-document
    # inference is order-independent.
    digest = hashlib.blake2b(doc_id.encode("utf-8"), digest_size=8).digest()
    return random.Random(seed ^ int.from_bytes(digest, "big"))


class GibbsSampler:
    """Collapsed Gibbs sampler over token-topic assignments.

    Counts are plain Python lists because the inner loop runs per token;
    numpy only enters when a sample is collected.  One `sweep` resamples
    every token once from its full conditional.
    """

    def __init__(
        self,
        docs: Sequence[Sequence[int]],
        num_topics: int,
        vocab_size: int,
        alpha: float,
        beta: float,
        rng: random.Random,
    ):
        self.docs = [list(ids) for ids in docs]
        self.K = num_topics
        self.V = vocab_size
        self.alpha = alpha
        self.beta = beta
        self.rng = rng
        self.n_dk = [[0] * num_topics for _ in docs]
        self.n_kw = [[0] * vocab_size for _ in range(num_topics)]
        self.n_k = [0] * num_topics
        self.assignments: list[list[int]] = []
        for d, ids in enumerate(self.docs):
            row = self.n_dk[d]
            zs = []
            for w in ids:
                k = rng.randrange(num_topics)
                zs.append(k)
                row[k] += 1
                self.n_kw[k][w] += 1
                self.n_k[k] += 1
            self.assignments.append(zs)

    def sweep(self) -> None:
        alpha = self.alpha
        beta = self.beta
        v_beta = self.V * beta
        n_kw = self.n_kw
        n_k = self.n_k
        rng = self.rng
        topics = range(self.K)
        cum = [0.0] * self.K
        for d, ids in enumerate(self.docs):
            row = self.n_dk[d]
            zs = self.assignments[d]
            for pos, w in enumerate(ids):
                k_old = zs[pos]
                row[k_old] -= 1
                n_kw[k_old][w] -= 1
                n_k[k_old] -= 1
                total = 0.0
                for k in topics:
                    total += (row[k] + alpha) * (n_kw[k][w] + beta) / (n_k[k] + v_beta)
                    cum[k] = total
                u = rng.random() * total
                k_new = 0
                while cum[k_new] < u:
                    k_new += 1
                zs[pos] = k_new
                row[k_new] += 1
                n_kw[k_new][w] += 1
                n_k[k_new] += 1

    def state(self) -> tuple[int, ...]:
        """The full assignment vector, for posterior checks on toy corpora."""
        return tuple(k for zs in self.assignments for k in zs)


def train_lda(clicked_docs: Sequence[Document], hyper: LdaHyperparams,
              trained_through: Optional[str] = None) -> TopicModel:
    """Collapsed Gibbs training on the clicked-document corpus.

    Documents that lose every token to preprocessing are excluded from the
    sampler (they still get a distribution later via fold-in).  phi and
    theta are averages over samples taken every sample_lag iterations
    after burn-in.
    """
    token_lists = [topic_tokens(doc.text) for doc in clicked_docs]
    vocabulary = build_vocabulary(token_lists, min_df=2)
    if not vocabulary:
        raise TrainingDataError("effective vocabulary is empty after preprocessing")

    doc_ids: list[str] = []
    docs: list[list[int]] = []
    for doc, tokens in zip(clicked_docs, token_lists):
        ids = [vocabulary[t] for t in tokens if t in vocabulary]
        if ids:
            doc_ids.append(doc.doc_id)
            docs.append(ids)
    if len(docs) < 2:
        raise TrainingDataError("need at least 2 documents with usable tokens")

    K = hyper.num_topics
    V = len(vocabulary)
    if K > V:
        raise TrainingDataError(f"num_topics {K} exceeds effective vocabulary size {V}")
    alpha = hyper.alpha
    beta = hyper.dirichlet_beta
    v_beta = V * beta

    sampler = GibbsSampler(docs, K, V, alpha, beta, random.Random(hyper.rng_seed))
    phi_acc = np.zeros((K, V), dtype=np.float64)
    theta_count_acc = [[0] * K for _ in docs]
    n_samples = 0
    for iteration in range(1, hyper.gibbs_iterations + 1):
        sampler.sweep()
        if iteration > hyper.burn_in and (iteration - hyper.burn_in) % hyper.sample_lag == 0:
            n_samples += 1
            kw = np.asarray(sampler.n_kw, dtype=np.float64)
            phi_acc += (kw + beta) / (kw.sum(axis=1, keepdims=True) + v_beta)
            for d in range(len(docs)):
                acc = theta_count_acc[d]
                row = sampler.n_dk[d]
                for k in range(K):
                    acc[k] += row[k]

    phi = phi_acc / n_samples
    theta: dict[str, np.ndarray] = {}
    for d, doc_id in enumerate(doc_ids):
        counts = np.asarray(theta_count_acc[d], dtype=np.float64) / n_samples
        theta[doc_id] = (counts + alpha) / (len(docs[d]) + K * alpha)

    return TopicModel(
        phi=phi,
        theta=theta,
        vocabulary=vocabulary,
        hyper=hyper,
        trained_through=trained_through,
    )


def _fold_in(model: TopicModel, ids: Sequence[int], rng: random.Random) -> np.ndarray:
    """Document-topic distribution for a token-id list with phi frozen."""
    hyper = model.hyper
    K = model.num_topics
    alpha = hyper.alpha
    if not ids:
        return np.full(K, 1.0 / K)
    phi_by_word = model.phi_by_word()
    counts = [0] * K
    zs = []
    for w in ids:
        k = rng.randrange(K)
        zs.append(k)
        counts[k] += 1

    acc = [0] * K
    n_samples = 0
    topics = range(K)
    cum = [0.0] * K
    for iteration in range(1, hyper.infer_iterations + 1):
        for pos, w in enumerate(ids):
            k_old = zs[pos]
            counts[k_old] -= 1
            phi_w = phi_by_word[w]
            total = 0.0
            for k in topics:
                total += (counts[k] + alpha) * phi_w[k]
                cum[k] = total
            u = rng.random() * total
            k_new = 0
            while cum[k_new] < u:
                k_new += 1
            zs[pos] = k_new
            counts[k_new] += 1
        if iteration > hyper.infer_burn_in:
            n_samples += 1
            for k in topics:
                acc[k] += counts[k]

    mean_counts = np.asarray(acc, dtype=np.float64) / n_samples
    return (mean_counts + alpha) / (len(ids) + K * alpha)


def infer_doc_topics(model: TopicModel, doc: Document) -> np.ndarray:
    """Fold a document into the trained model: resample its token-topic
    assignments with phi frozen and average the post-burn-in counts.

    Out-of-vocabulary tokens are ignored; a document with no known tokens
    gets the uniform distribution.
    """
    ids = [model.vocabulary[t] for t in topic_tokens(doc.text) if t in model.vocabulary]
    if not ids:
        return np.full(model.num_topics, 1.0 / model.num_topics)
    return _fold_in(model, ids, _doc_rng(model.hyper.rng_seed, doc.doc_id))


def perplexity(model: TopicModel, heldout_docs: Sequence[Document]) -> float:
    """exp of the negative mean held-out token log-likelihood.

    Token probability is p(w|d) = sum_z theta_z * phi_{z,w} with theta
    obtained by fold-in.  Scoring uses document completion: theta is
    folded in on a document's even-positioned tokens and only the odd
    ones are scored, so an over-fragmented model cannot adapt theta to
    the very tokens it is judged on.  Documents too short to split are
    scored whole against the fold-in prior.  Out-of-vocabulary tokens
    are excluded entirely.
    """
    if not heldout_docs:
        raise ValueError("held-out set is empty")
    log_sum = 0.0
    n_tokens = 0
    for doc in heldout_docs:
        ids = [model.vocabulary[t] for t in topic_tokens(doc.text) if t in model.vocabulary]
        if not ids:
            continue
        fold_ids = ids[0::2]
        score_ids = ids[1::2]
        if not score_ids:
            fold_ids, score_ids = [], ids
        theta = _fold_in(model, fold_ids, _doc_rng(model.hyper.rng_seed, doc.doc_id))
        probs = theta @ model.phi[:, score_ids]
        log_sum += float(np.sum(np.log(probs)))
        n_tokens += len(score_ids)
    if n_tokens == 0:
        raise ValueError("every held-out token is out of vocabulary")
    return math.exp(-log_sum / n_tokens)


def select_topic_count(
    clicked_docs: Sequence[Document],
    candidate_topic_counts: Sequence[int],
    hyper: LdaHyperparams,
    validation_fraction: float = 0.10,
) -> int:
    """Pick the topic count whose model has the lowest held-out perplexity.

    The validation split is a deterministic shuffle of the input; ties (or
    differences below 1e-12) go to the smaller count.
    """
    if not candidate_topic_counts:
        raise ValueError("no candidate topic counts")
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError("validation_fraction must be in (0, 1)")
    order = list(range(len(clicked_docs)))
    random.Random(hyper.rng_seed).shuffle(order)
    n_val = max(1, round(validation_fraction * len(clicked_docs)))
    val_docs = [clicked_docs[i] for i in order[:n_val]]
    train_docs = [clicked_docs[i] for i in order[n_val:]]

    best_k: Optional[int] = None
    best_perp = math.inf
    for k in sorted(set(candidate_topic_counts)):
        model = train_lda(train_docs, replace(hyper, num_topics=k))
        perp = perplexity(model, val_docs)
        if perp < best_perp - 1e-12:
            best_perp = perp
            best_k = k
    assert best_k is not None
    return best_k


def corpus_topic_distributions(
    model: TopicModel, docs: Sequence[Document]
) -> dict[str, np.ndarray]:
    """Topic distribution for every document: the training theta when the
    document was in the sampler, fold-in otherwise."""
    dists: dict[str, np.ndarray] = {}
    for doc in docs:
        known = model.theta.get(doc.doc_id)
        dists[doc.doc_id] = known if known is not None else infer_doc_topics(model, doc)
    return dists


FORMAT_HEADER = "intrasuggest-topic-model v1"


def save_topic_model(model: TopicModel, path: str | Path) -> None:
    """Versioned text serialization; floats are written with repr so the
    round-trip is exact."""
    terms = sorted(model.vocabulary, key=model.vocabulary.__getitem__)
    hyper = model.hyper
    with open(path, "w", encoding="utf-8") as out:
        out.write(FORMAT_HEADER + "\n")
        out.write(f"K {model.num_topics}\n")
        out.write(f"V {len(terms)}\n")
        out.write(f"D {len(model.theta)}\n")
        raw_alpha = "none" if hyper.dirichlet_alpha is None else repr(hyper.dirichlet_alpha)
        out.write(f"dirichlet_alpha {raw_alpha}\n")
        out.write(f"dirichlet_beta {hyper.dirichlet_beta!r}\n")
        out.write(f"gibbs_iterations {hyper.gibbs_iterations}\n")
        out.write(f"burn_in {hyper.burn_in}\n")
        out.write(f"sample_lag {hyper.sample_lag}\n")
        out.write(f"infer_iterations {hyper.infer_iterations}\n")
        out.write(f"infer_burn_in {hyper.infer_burn_in}\n")
        out.write(f"rng_seed {hyper.rng_seed}\n")
        out.write(f"trained_through {model.trained_through or 'none'}\n")
        out.write("vocabulary\n")
        for term in terms:
            out.write(term + "\n")
        out.write("phi\n")
        for row in model.phi:
            out.write(" ".join(repr(float(x)) for x in row) + "\n")
        out.write("theta\n")
        for doc_id in sorted(model.theta):
            values = " ".join(repr(float(x)) for x in model.theta[doc_id])
            out.write(f"{doc_id}\t{values}\n")
        out.write("end\n")


def load_topic_model(path: str | Path) -> TopicModel:
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0] != FORMAT_HEADER:
        raise ValueError(f"{path}: not a topic model file (bad header)")
    pos = 1

    def scalar(name: str) -> str:
        nonlocal pos
        key, _, value = lines[pos].partition(" ")
        if key != name:
            raise ValueError(f"{path}: expected {name!r} at line {pos + 1}")
        pos += 1
        return value

    k = int(scalar("K"))
    v = int(scalar("V"))
    d = int(scalar("D"))
    raw_alpha = scalar("dirichlet_alpha")
    dirichlet_alpha = None if raw_alpha == "none" else float(raw_alpha)
    dirichlet_beta = float(scalar("dirichlet_beta"))
    gibbs_iterations = int(scalar("gibbs_iterations"))
    burn_in = int(scalar("burn_in"))
    sample_lag = int(scalar("sample_lag"))
    infer_iterations = int(scalar("infer_iterations"))
    infer_burn_in = int(scalar("infer_burn_in"))
    rng_seed = int(scalar("rng_seed"))
    trained_through = scalar("trained_through")

    if lines[pos] != "vocabulary":
        raise ValueError(f"{path}: missing vocabulary block")
    pos += 1
    vocabulary = {lines[pos + i]: i for i in range(v)}
    pos += v

    if lines[pos] != "phi":
        raise ValueError(f"{path}: missing phi block")
    pos += 1
    phi = np.array(
        [[float(x) for x in lines[pos + i].split(" ")] for i in range(k)],
        dtype=np.float64,
    )
    pos += k

    if lines[pos] != "theta":
        raise ValueError(f"{path}: missing theta block")
    pos += 1
    theta: dict[str, np.ndarray] = {}
    for i in range(d):
        doc_id, _, values = lines[pos + i].partition("\t")
        theta[doc_id] = np.array([float(x) for x in values.split(" ")], dtype=np.float64)
    pos += d
    if lines[pos] != "end":
        raise ValueError(f"{path}: truncated file")

    hyper = LdaHyperparams(
        num_topics=k,
        dirichlet_alpha=dirichlet_alpha,
        dirichlet_beta=dirichlet_beta,
        gibbs_iterations=gibbs_iterations,
        burn_in=burn_in,
        sample_lag=sample_lag,
        infer_iterations=infer_iterations,
        infer_burn_in=infer_burn_in,
        rng_seed=rng_seed,
    )
    return TopicModel(
        phi=phi,
        theta=theta,
        vocabulary=vocabulary,
        hyper=hyper,
        trained_through=None if trained_through == "none" else trained_through,
    )
