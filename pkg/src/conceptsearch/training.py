"""Reference numeric implementations of the training objectives.

Three losses are implemented exactly as printed, with analytic gradients that
are verified against central finite differences:

* highlight focal loss over per-token probabilities ``p`` and labels ``y``::

      L_high = - sum_i [ alpha * (1-p_i)^gamma * y_i * log(p_i)
                         + (1-alpha) * p_i^gamma * (1-y_i) * log(1-p_i) ]

  With ``gamma = 0, alpha = 0.5`` this is exactly ``0.5 x`` the binary
  cross-entropy sum; the factor is asserted, not renormalized away.  The sum
  over tokens is kept as printed; batch averaging is the caller's choice.

* alignment InfoNCE over span cosines, one term per query concept ``a`` with
  positive similarity ``u_a`` and negative similarities ``v_ab``::

      L_align = sum_a -log( exp(u_a/tau)
                            / (exp(u_a/tau) + sum_b exp(v_ab/tau)) )

  computed in log-sum-exp form so it stays finite for logits up to
  ``|u/tau| = 700``.

* the total objective: the unweighted sum of code highlight loss, query
  highlight loss, and alignment loss.

Hard negatives are chosen per concept by the margin between the current
model's span cosine and a frozen reference text encoder's cosine over the
query text and the negative's natural-language description::

      score_b = cos(f(N_a), f(C_b)) - cos(g(N_a), g(d_b))

Gradients flow only through the current-model terms; the reference encoder is
a constant.  Candidates without a description cannot be scored and are
excluded with a diagnostic counter.

``toy_fit`` runs plain gradient descent on the total objective over a free
embedding table, as a desk-scale stand-in for encoder fine-tuning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from conceptsearch.embedding import EmbedProvider, cosine
from conceptsearch.query_analysis import sigmoid

DEFAULT_TAU = 0.1
DEFAULT_NEGATIVES = 50


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.5
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")


@dataclass
class LossReport:
    """A loss value with its analytic gradients and bookkeeping counters.

    ``gradients`` maps an input name to an array shaped like that input
    (ragged inputs map to lists of arrays).  ``per_concept`` carries the raw
    per-concept terms where the loss is a sum over concepts; ``value`` is the
    raw sum, ``mean_per_concept`` the per-concept mean.
    """

    value: float
    gradients: dict[str, object] = field(default_factory=dict)
    counters: dict[str, float] = field(default_factory=dict)
    per_concept: np.ndarray | None = None

    @property
    def mean_per_concept(self) -> float | None:
        if self.per_concept is None or self.per_concept.size == 0:
            return None
        return float(self.per_concept.mean())


class NegativeProvenance(str, Enum):
    INTRA_SAMPLE = "intra-sample"
    INTER_SAMPLE = "inter-sample"


@dataclass(frozen=True)
class NegativeCandidate:
    """A candidate negative code span: its embedding, where it came from, and
    the description used by the reference encoder (None when unavailable)."""

    embedding: np.ndarray
    provenance: NegativeProvenance
    description: str | None = None


@dataclass
class ConceptExample:
    """One concept's alignment inputs: spans from the current model plus the
    query text for the reference encoder."""

    query_text: str
    query_span: np.ndarray
    positive_span: np.ndarray
    negatives: tuple[NegativeCandidate, ...] = ()


@dataclass(frozen=True)
class SelectedNegatives:
    """Indices into a concept's candidates, hardest first."""

    indices: tuple[int, ...]
    scores: tuple[float, ...]
    skipped_no_description: int = 0


# --- focal highlight loss ------------------------------------------------------


def focal_loss(p: np.ndarray, y: np.ndarray, params: FocalParams) -> LossReport:
    """Focal loss sum over tokens with its gradient with respect to ``p``."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError("p and y are not parallel")
    if not np.all((p > 0.0) & (p < 1.0)):  # also rejects NaN
        raise ValueError("probabilities must lie strictly in (0, 1)")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")

    alpha, gamma = params.alpha, params.gamma
    one_minus_p = 1.0 - p
    pos = alpha * one_minus_p**gamma * y * np.log(p)
    neg = (1.0 - alpha) * p**gamma * (1.0 - y) * np.log(one_minus_p)
    value = float(-(pos + neg).sum())

    # p lies strictly inside (0, 1), so the gamma*(...)^(gamma-1) factors are
    # finite even at gamma = 0, where they vanish.
    grad = alpha * y * (
        gamma * one_minus_p ** (gamma - 1.0) * np.log(p) - one_minus_p**gamma / p
    ) + (1.0 - alpha) * (1.0 - y) * (
        -gamma * p ** (gamma - 1.0) * np.log(one_minus_p) + p**gamma / one_minus_p
    )

    return LossReport(
        value=value,
        gradients={"p": grad},
        counters={"tokens": float(p.size), "positives": float(y.sum())},
    )


# --- hard negative scoring and selection ------------------------------------------


def hardness_score(
    query_span: np.ndarray,
    candidate_span: np.ndarray,
    query_text: str,
    description: str,
    reference: EmbedProvider,
) -> float:
    """Current-model cosine minus frozen-reference cosine for one candidate."""
    current = cosine(query_span, candidate_span)
    ref = cosine(reference.embed_reference(query_text), reference.embed_reference(description))
    return current - ref


def select_hard_negatives(
    batch: Sequence[ConceptExample],
    k: int = DEFAULT_NEGATIVES,
    reference: EmbedProvider | None = None,
) -> list[SelectedNegatives]:
    """Per concept, the top-``k`` candidates by hardness, hardest first.

    Equal scores keep their original candidate order.  With fewer than ``k``
    candidates all are taken.  Candidates without a description are excluded.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if reference is None:
        raise ValueError("a reference provider is required to score hardness")

    ref_cache: dict[str, np.ndarray] = {}

    def ref_vec(text: str) -> np.ndarray:
        if text not in ref_cache:
            ref_cache[text] = reference.embed_reference(text)
        return ref_cache[text]

    selected: list[SelectedNegatives] = []
    for example in batch:
        scorable: list[int] = []
        scores: list[float] = []
        skipped = 0
        query_ref = ref_vec(example.query_text)
        for idx, cand in enumerate(example.negatives):
            if cand.description is None:
                skipped += 1
                continue
            current = cosine(example.query_span, cand.embedding)
            ref = cosine(query_ref, ref_vec(cand.description))
            scorable.append(idx)
            scores.append(current - ref)
        order = np.argsort(-np.asarray(scores), kind="stable") if scores else []
        top = [scorable[i] for i in order[:k]]
        selected.append(
            SelectedNegatives(
                indices=tuple(top),
                scores=tuple(scores[i] for i in order[:k]),
                skipped_no_description=skipped,
            )
        )
    return selected


# --- alignment InfoNCE loss ----------------------------------------------------


def _cosine_grads(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """cos(a, b) and its gradients with respect to a and b."""
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    value = float(np.dot(a, b) / (norm_a * norm_b))
    grad_a = (b / norm_b - value * a / norm_a) / norm_a
    grad_b = (a / norm_a - value * b / norm_b) / norm_b
    return value, grad_a, grad_b


def alignment_loss(
    batch: Sequence[ConceptExample],
    selection: Sequence[SelectedNegatives] | None = None,
    tau: float = DEFAULT_TAU,
) -> LossReport:
    """InfoNCE over span cosines, stabilized with log-sum-exp.

    ``selection`` restricts each concept to its selected negatives (all
    negatives participate when omitted).  Concepts left with zero negatives
    are skipped and counted, not errors.  Gradients are reported for every
    query span, positive span, and participating negative embedding.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")

    n = len(batch)
    per_concept = []
    skipped = 0
    dim = batch[0].query_span.shape[0] if batch else 0
    grad_query = [np.zeros(dim) for _ in range(n)]
    grad_positive = [np.zeros(dim) for _ in range(n)]
    grad_negatives: list[list[np.ndarray]] = [
        [np.zeros(dim) for _ in example.negatives] for example in batch
    ]

    for a, example in enumerate(batch):
        if selection is not None:
            neg_indices = list(selection[a].indices)
        else:
            neg_indices = list(range(len(example.negatives)))
        if not neg_indices:
            skipped += 1
            continue

        u, du_dq, du_dpos = _cosine_grads(example.query_span, example.positive_span)
        v: list[float] = []
        dv_dq: list[np.ndarray] = []
        dv_dneg: list[np.ndarray] = []
        for idx in neg_indices:
            value, dq, dneg = _cosine_grads(
                example.query_span, example.negatives[idx].embedding
            )
            v.append(value)
            dv_dq.append(dq)
            dv_dneg.append(dneg)

        logits = np.array([u] + v) / tau
        peak = logits.max()
        exp_shifted = np.exp(logits - peak)
        log_z = peak + np.log(exp_shifted.sum())
        loss_a = -logits[0] + log_z
        per_concept.append(loss_a)

        softmax = exp_shifted / exp_shifted.sum()
        dl_du = (softmax[0] - 1.0) / tau
        grad_query[a] = grad_query[a] + dl_du * du_dq
        grad_positive[a] = grad_positive[a] + dl_du * du_dpos
        for b, idx in enumerate(neg_indices):
            dl_dv = softmax[b + 1] / tau
            grad_query[a] = grad_query[a] + dl_dv * dv_dq[b]
            grad_negatives[a][idx] = grad_negatives[a][idx] + dl_dv * dv_dneg[b]

    per_concept_arr = np.array(per_concept, dtype=np.float64)
    return LossReport(
        value=float(per_concept_arr.sum()),
        gradients={
            "query_spans": np.array(grad_query) if n else np.zeros((0, dim)),
            "positive_spans": np.array(grad_positive) if n else np.zeros((0, dim)),
            "negative_spans": grad_negatives,
        },
        counters={
            "concepts": float(n),
            "skipped_no_negatives": float(skipped),
            "temperature": tau,
            "negatives_used": float(sum(len(g) for g in grad_negatives)),
        },
        per_concept=per_concept_arr,
    )


def total_loss(
    code_focal: LossReport, query_focal: LossReport, alignment: LossReport
) -> LossReport:
    """Unweighted sum of the three objectives.

    Component gradients are namespaced (they live on different inputs), so
    the total's gradient with respect to any input is exactly the component's.
    """
    for report in (code_focal, query_focal, alignment):
        if not np.isfinite(report.value):
            raise ValueError("component loss is not finite")
    return LossReport(
        value=code_focal.value + query_focal.value + alignment.value,
        gradients={
            "code": code_focal.gradients,
            "query": query_focal.gradients,
            "align": alignment.gradients,
        },
        counters={
            "code_tokens": code_focal.counters.get("tokens", 0.0),
            "query_tokens": query_focal.counters.get("tokens", 0.0),
            "concepts": alignment.counters.get("concepts", 0.0),
        },
    )


# --- finite-difference gradient checking ----------------------------------------


def numeric_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central finite differences of ``f`` at ``x``, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        up = f(x)
        xf[i] = orig - h
        down = f(x)
        xf[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case elementwise relative error.

    Entries below 1e-2 in magnitude are compared absolutely (scaled by the
    floor): central differences at h = 1e-5 on unit-scale losses carry
    ~1e-10 of roundoff noise, which would swamp a pure ratio for near-zero
    gradient entries while scale errors still show up at O(1) entries.
    """
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-2)
    return float((np.abs(analytic - numeric) / denom).max())


# --- desk-scale toy fit ----------------------------------------------------------


@dataclass(frozen=True)
class ToyConfig:
    n_concepts: int = 16
    dim: int = 32
    seed: int = 0
    tokens_per_span: int = 2
    filler_per_side: int = 8
    concepts_per_pair: int = 4
    k_negatives: int = DEFAULT_NEGATIVES
    tau: float = DEFAULT_TAU
    focal: FocalParams = field(default_factory=FocalParams)

    def __post_init__(self) -> None:
        if self.n_concepts < 2 or self.n_concepts > 64:
            raise ValueError("n_concepts must lie in 2..64")


@dataclass
class ToyDataset:
    """Synthetic alignment data over a free embedding table.

    Rows of ``embeddings`` are the trainable parameters.  Query rows come
    first (concept spans then filler), then code rows (concept spans then
    filler).  Heads and reference vectors are frozen."""

    config: ToyConfig
    embeddings: np.ndarray
    query_spans: list[list[int]]  # per concept, row indices
    code_spans: list[list[int]]
    query_labels: np.ndarray  # per query row
    code_labels: np.ndarray  # per code row
    query_rows: list[int]
    code_rows: list[int]
    pair_of_concept: list[int]
    query_texts: list[str]
    descriptions: list[str]
    query_head: tuple[np.ndarray, float]
    code_head: tuple[np.ndarray, float]


@dataclass
class ToyFitResult:
    embeddings: np.ndarray
    losses: list[float]
    diverged_at: int | None = None


def build_toy_dataset(config: ToyConfig, reference: EmbedProvider) -> ToyDataset:
    rng = np.random.default_rng(config.seed)
    per_span = config.tokens_per_span
    n = config.n_concepts

    n_query = n * per_span + config.filler_per_side
    n_code = n * per_span + config.filler_per_side
    embeddings = rng.standard_normal((n_query + n_code, config.dim))
    embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)

    query_spans = [list(range(a * per_span, (a + 1) * per_span)) for a in range(n)]
    code_spans = [
        list(range(n_query + a * per_span, n_query + (a + 1) * per_span))
        for a in range(n)
    ]
    query_labels = np.zeros(n_query)
    query_labels[: n * per_span] = 1.0
    code_labels = np.zeros(n_code)
    code_labels[: n * per_span] = 1.0

    head_rng = np.random.default_rng(config.seed + 1)
    query_head = (
        head_rng.standard_normal(config.dim) / np.sqrt(config.dim),
        0.0,
    )
    code_head = (
        head_rng.standard_normal(config.dim) / np.sqrt(config.dim),
        0.0,
    )

    return ToyDataset(
        config=config,
        embeddings=embeddings,
        query_spans=query_spans,
        code_spans=code_spans,
        query_labels=query_labels,
        code_labels=code_labels,
        query_rows=list(range(n_query)),
        code_rows=list(range(n_query, n_query + n_code)),
        pair_of_concept=[a // config.concepts_per_pair for a in range(n)],
        query_texts=[f"toy query concept {a}" for a in range(n)],
        descriptions=[f"toy code unit description {a}" for a in range(n)],
        query_head=query_head,
        code_head=code_head,
    )


def _toy_batch(dataset: ToyDataset, embeddings: np.ndarray) -> list[ConceptExample]:
    n = dataset.config.n_concepts
    batch = []
    for a in range(n):
        negatives = []
        for b in range(n):
            if b == a:
                continue
            provenance = (
                NegativeProvenance.INTRA_SAMPLE
                if dataset.pair_of_concept[b] == dataset.pair_of_concept[a]
                else NegativeProvenance.INTER_SAMPLE
            )
            negatives.append(
                NegativeCandidate(
                    embedding=embeddings[dataset.code_spans[b]].mean(axis=0),
                    provenance=provenance,
                    description=dataset.descriptions[b],
                )
            )
        batch.append(
            ConceptExample(
                query_text=dataset.query_texts[a],
                query_span=embeddings[dataset.query_spans[a]].mean(axis=0),
                positive_span=embeddings[dataset.code_spans[a]].mean(axis=0),
                negatives=tuple(negatives),
            )
        )
    return batch


def toy_objective(
    dataset: ToyDataset,
    embeddings: np.ndarray,
    selection: Sequence[SelectedNegatives] | None = None,
    reference: EmbedProvider | None = None,
) -> tuple[LossReport, np.ndarray]:
    """Total loss on the toy dataset and its gradient over the embedding table.

    With ``selection`` omitted, hard negatives are (re)selected for the
    current embeddings, which requires ``reference``.
    """
    config = dataset.config
    batch = _toy_batch(dataset, embeddings)
    if selection is None:
        selection = select_hard_negatives(batch, config.k_negatives, reference)

    wq, bq = dataset.query_head
    wc, bc = dataset.code_head
    q_rows = embeddings[dataset.query_rows]
    c_rows = embeddings[dataset.code_rows]
    p_query = np.clip(sigmoid(q_rows @ wq + bq), 1e-15, 1.0 - 1e-15)
    p_code = np.clip(sigmoid(c_rows @ wc + bc), 1e-15, 1.0 - 1e-15)

    query_report = focal_loss(p_query, dataset.query_labels, config.focal)
    code_report = focal_loss(p_code, dataset.code_labels, config.focal)
    align_report = alignment_loss(batch, selection, config.tau)
    report = total_loss(code_report, query_report, align_report)

    grad = np.zeros_like(embeddings)
    # focal: dL/drow = dL/dp * p*(1-p) * w
    dq = query_report.gradients["p"] * p_query * (1.0 - p_query)
    grad[dataset.query_rows] += np.outer(dq, wq)
    dc = code_report.gradients["p"] * p_code * (1.0 - p_code)
    grad[dataset.code_rows] += np.outer(dc, wc)

    # alignment: span means distribute gradients evenly over member rows
    n = config.n_concepts
    g_query = align_report.gradients["query_spans"]
    g_positive = align_report.gradients["positive_spans"]
    g_negatives = align_report.gradients["negative_spans"]
    for a in range(n):
        rows = dataset.query_spans[a]
        grad[rows] += g_query[a] / len(rows)
        rows = dataset.code_spans[a]
        grad[rows] += g_positive[a] / len(rows)
        neg_rowsets = [b for b in range(n) if b != a]
        for j, b in enumerate(neg_rowsets):
            rows = dataset.code_spans[b]
            grad[rows] += g_negatives[a][j] / len(rows)
    return report, grad


def toy_fit(
    dataset: ToyDataset,
    steps: int,
    learning_rate: float,
    reference: EmbedProvider,
) -> ToyFitResult:
    """Plain gradient descent on the total objective over the embedding table.

    Negatives are reselected every step from the current embeddings.  The
    per-step loss trajectory is returned; the run stops early and reports the
    step index if the loss turns non-finite.
    """
    embeddings = dataset.embeddings.copy()
    losses: list[float] = []
    for step in range(steps):
        if not np.all(np.isfinite(embeddings)):
            return ToyFitResult(embeddings=embeddings, losses=losses, diverged_at=step)
        report, grad = toy_objective(dataset, embeddings, reference=reference)
        if not np.isfinite(report.value):
            return ToyFitResult(embeddings=embeddings, losses=losses, diverged_at=step)
        losses.append(report.value)
        embeddings = embeddings - learning_rate * grad
    return ToyFitResult(embeddings=embeddings, losses=losses)


def positive_negative_margins(
    dataset: ToyDataset,
    embeddings: np.ndarray,
    reference: EmbedProvider,
) -> list[tuple[float, float]]:
    """Per concept: (positive cosine, best selected-negative cosine)."""
    batch = _toy_batch(dataset, embeddings)
    selection = select_hard_negatives(batch, dataset.config.k_negatives, reference)
    margins = []
    for example, sel in zip(batch, selection):
        positive = cosine(example.query_span, example.positive_span)
        hardest = max(
            cosine(example.query_span, example.negatives[idx].embedding)
            for idx in sel.indices
        )
        margins.append((positive, hardest))
    return margins
