"""Word-level feature matrices for encoding models.

Sources: ``frequency`` (add-one smoothed log relative frequency),
``surprisal`` (joined from a precomputed token feature table),
``semantic_distance`` (cosine distance between a word's embedding and the
pointwise mean of its preceding words' embeddings), ``static_embedding``,
``contextual_embedding`` (precomputed, one row per sentence/word position,
produced externally under the incremental-prefix convention), and
``constant`` (all ones, for intercept-only models).

Standardization is fit on explicitly supplied training rows only, so fold
protocols cannot leak dev/test statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingTable, TokenFeatureTable, TrialMeta

SOURCES = ("frequency", "surprisal", "semantic_distance",
           "static_embedding", "contextual_embedding", "constant")
EMBEDDING_SOURCES = ("static_embedding", "contextual_embedding")


@dataclass(frozen=True)
class FeatureSpec:
    """Ordered list of feature sources for one model variant."""

    sources: tuple[str, ...]

    def __post_init__(self):
        if not self.sources:
            raise ValueError("feature spec needs at least one source")
        unknown = [s for s in self.sources if s not in SOURCES]
        if unknown:
            raise ValueError(f"unknown feature sources {unknown}; known: {list(SOURCES)}")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError(f"duplicate sources in {self.sources}")
        if "constant" in self.sources and len(self.sources) > 1:
            raise ValueError("constant is mutually exclusive with all other sources")

    @property
    def embedding_sources(self) -> tuple[str, ...]:
        return tuple(s for s in self.sources if s in EMBEDDING_SOURCES)


@dataclass
class FeatureMatrix:
    """Trials x D named feature columns plus imputation flags per source."""

    values: np.ndarray
    names: list[str]
    imputed: dict[str, np.ndarray] = field(default_factory=dict)
    standardized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"feature matrix must be 2-dim, got shape {self.values.shape}")
        if self.values.shape[1] != len(self.names):
            raise ValueError(f"{len(self.names)} names for {self.values.shape[1]} columns")
        if np.isnan(self.values).any():
            raise ValueError("feature matrix contains NaN after construction")

    @property
    def n_trials(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def column_indices(self, prefix: str) -> np.ndarray:
        """Indices of columns named ``prefix`` or ``prefix.<i>``."""
        return np.array(
            [i for i, n in enumerate(self.names)
             if n == prefix or n.startswith(prefix + ".")],
            dtype=int,
        )

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(
            self.values[rows],
            list(self.names),
            {k: v[rows] for k, v in self.imputed.items()},
            self.standardized,
        )


@dataclass
class Standardizer:
    """Per-column centering/scaling fit on training rows; constant columns exempt."""

    mean: np.ndarray
    scale: np.ndarray
    names: list[str]


def fit_standardizer(matrix: FeatureMatrix, training_rows) -> Standardizer:
    rows = np.asarray(training_rows)
    if rows.size == 0:
        raise ValueError("cannot fit a standardizer on zero rows")
    sub = matrix.values[rows]
    mean = sub.mean(axis=0)
    sd = sub.std(axis=0)
    constant = sd == 0.0
    mean[constant] = 0.0
    scale = np.where(constant, 1.0, sd)
    return Standardizer(mean=mean, scale=scale, names=list(matrix.names))


def apply_standardizer(matrix: FeatureMatrix, std: Standardizer) -> FeatureMatrix:
    if std.names != matrix.names:
        raise ValueError(
            f"standardizer columns {std.names} do not match matrix columns {matrix.names}"
        )
    values = (matrix.values - std.mean) / std.scale
    return FeatureMatrix(values, list(matrix.names), dict(matrix.imputed), standardized=True)


# ---------------------------------------------------------------------------
# Individual sources
# ---------------------------------------------------------------------------


def frequency_feature(tokens: list[str], counts_table: dict[str, int]) -> np.ndarray:
    """Add-one smoothed log relative frequency: log((count+1) / (total+V))."""
    if not counts_table:
        raise ValueError("frequency counts table is empty")
    total = sum(counts_table.values())
    vocab = len(counts_table)
    denom = total + vocab
    return np.array([
        math.log((counts_table.get(tok, 0) + 1) / denom) for tok in tokens
    ])


def surprisal_feature(trials: list[TrialMeta], table: TokenFeatureTable,
                      column: str = "surprisal") -> np.ndarray:
    """Join per-token surprisal onto trials; values must be non-negative."""
    if not table.has_column(column):
        raise ValueError(f"token feature table has no {column!r} column")
    keys = [(m.sentence_id, m.word_position) for m in trials]
    values = table.rows_for(column, keys)
    values = np.asarray(values, dtype=np.float64).reshape(len(trials))
    negative = np.flatnonzero(values < 0)
    if negative.size:
        i = int(negative[0])
        raise ValueError(
            f"surprisal must be >= 0; trial {i} {keys[i]} has {values[i]}"
        )
    return values


def build_sentence_tokens(meta: list[TrialMeta]) -> dict[int, dict[int, str]]:
    """Map sentence_id -> word_position -> token from (unfiltered) metadata."""
    sentences: dict[int, dict[int, str]] = {}
    for m in meta:
        sentences.setdefault(m.sentence_id, {})[m.word_position] = m.token
    return sentences


def _embedding_or_none(table: EmbeddingTable, token: str) -> np.ndarray | None:
    vec = table.get(token)
    if vec is None or not np.any(vec):
        return None  # zero-norm vectors are treated as out-of-vocabulary
    return vec


def semantic_distance(trials: list[TrialMeta], embeddings: EmbeddingTable,
                      sentence_tokens: dict[int, dict[int, str]],
                      allow_first_word: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Cosine distance between each word and the mean of its preceding words.

    Out-of-vocabulary context words are skipped in the average; when the
    target word or the entire context is OOV the value is imputed with the
    mean distance over the non-imputed trials. Returns (distances, imputed).
    """
    raw = np.full(len(trials), np.nan)
    imputed = np.zeros(len(trials), dtype=bool)
    for i, m in enumerate(trials):
        if m.word_position < 2:
            if not allow_first_word:
                raise ValueError(
                    f"semantic distance needs word_position >= 2; trial {i} has "
                    f"position {m.word_position} (exclude first words upstream)"
                )
            imputed[i] = True
            continue
        positions = sentence_tokens.get(m.sentence_id, {})
        context = [
            _embedding_or_none(embeddings, positions[p])
            for p in range(1, m.word_position)
            if p in positions
        ]
        context = [v for v in context if v is not None]
        target = _embedding_or_none(embeddings, m.token)
        if target is None or not context:
            imputed[i] = True
            continue
        c = np.mean(context, axis=0)
        norm = np.linalg.norm(c) * np.linalg.norm(target)
        if norm == 0.0:
            imputed[i] = True
            continue
        raw[i] = 1.0 - float(c @ target) / norm
    valid = raw[~imputed]
    fill = float(valid.mean()) if valid.size else 1.0
    raw[imputed] = fill
    return np.clip(raw, 0.0, 2.0), imputed


def static_embedding_feature(trials: list[TrialMeta],
                             embeddings: EmbeddingTable) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial embedding lookup; OOV tokens get a zero vector and a flag."""
    block = np.zeros((len(trials), embeddings.dimension))
    imputed = np.zeros(len(trials), dtype=bool)
    for i, m in enumerate(trials):
        vec = embeddings.get(m.token)
        if vec is None:
            imputed[i] = True
        else:
            block[i] = vec
    return block, imputed


def contextual_embedding_feature(trials: list[TrialMeta], table: TokenFeatureTable,
                                 column: str = "contextual_embedding") -> np.ndarray:
    """Join precomputed contextual embeddings; missing rows are an error."""
    if not table.has_column(column):
        raise ValueError(f"token feature table has no {column!r} column")
    keys = [(m.sentence_id, m.word_position) for m in trials]
    block = table.rows_for(column, keys)
    if block.ndim == 1:
        block = block[:, None]
    return np.asarray(block, dtype=np.float64)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def assemble(spec: FeatureSpec, trials: list[TrialMeta], *,
             counts_table: dict[str, int] | None = None,
             token_features: TokenFeatureTable | None = None,
             embeddings: EmbeddingTable | None = None,
             sentence_tokens: dict[int, dict[int, str]] | None = None) -> FeatureMatrix:
    """Build the feature matrix for ``spec``, columns in source order."""
    blocks: list[np.ndarray] = []
    names: list[str] = []
    imputed: dict[str, np.ndarray] = {}

    def need(value, what):
        if value is None:
            raise ValueError(f"feature source needs {what}, which was not supplied")
        return value

    for source in spec.sources:
        if source == "constant":
            blocks.append(np.ones((len(trials), 1)))
            names.append("constant")
        elif source == "frequency":
            col = frequency_feature([m.token for m in trials], need(counts_table, "a counts table"))
            blocks.append(col[:, None])
            names.append("frequency")
        elif source == "surprisal":
            col = surprisal_feature(trials, need(token_features, "a token feature table"))
            blocks.append(col[:, None])
            names.append("surprisal")
        elif source == "semantic_distance":
            col, flags = semantic_distance(
                trials,
                need(embeddings, "an embedding table"),
                need(sentence_tokens, "sentence token sequences"),
            )
            blocks.append(col[:, None])
            names.append("semantic_distance")
            imputed["semantic_distance"] = flags
        elif source == "static_embedding":
            block, flags = static_embedding_feature(trials, need(embeddings, "an embedding table"))
            blocks.append(block)
            names.extend(f"static_embedding.{i}" for i in range(block.shape[1]))
            imputed["static_embedding"] = flags
        elif source == "contextual_embedding":
            block = contextual_embedding_feature(
                trials, need(token_features, "a token feature table"))
            blocks.append(block)
            names.extend(f"contextual_embedding.{i}" for i in range(block.shape[1]))
    values = np.hstack(blocks) if blocks else np.zeros((len(trials), 0))
    return FeatureMatrix(values, names, imputed)
