"""Synthetic ERP datasets with known ground truth.

Generation walks the real pipeline backwards: word-level tables (counts,
surprisal, static and contextual embeddings) are drawn from seeded
distributions; the driving feature columns are computed with the same
feature code the models use; true per-latent-channel interface weights map
them to latent codes; a fixed randomly-initialized decoder of the requested
architecture turns latents into epochs; Gaussian noise is added on top.
Because every stage is known, closed-form performance bounds are available
for any nested subset of the driving features.

Content and function word classes get distinct surprisal distributions so
class-level summaries have a detectable ground-truth gap. Artifact flags and
sentence-initial words are populated so filtering paths are exercised.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderParams, AutoencoderSpec, decode, init_params
from .checkpoint import save_checkpoint, load_checkpoint
from .data import (EmbeddingTable, ErpDataset, TokenFeatureTable, TrialMeta,
                   save_counts, save_embeddings, save_erp, save_token_features)
from .features import (contextual_embedding_feature, frequency_feature,
                       semantic_distance, static_embedding_feature,
                       surprisal_feature)

CONTENT_TAGS = ("NN", "VB", "JJ", "RB")
FUNCTION_TAGS = ("DT", "IN", "PR", "CC")


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 4
    n_sentences: int = 50
    words_per_sentence: int = 5
    n_channels: int = 32
    n_timepoints: int = 200
    sampling_rate_hz: float = 250.0
    epoch_start_ms: float = -100.0
    architecture: str = "beta"
    noise_sd: float = 1.0
    driving: tuple[str, ...] = ("frequency", "surprisal")
    drive_scales: tuple[float, ...] | None = None
    driven_latent_timepoints: tuple[int, ...] | None = None
    vocab_size: int = 60
    static_dim: int = 8
    contextual_dim: int = 12
    artifact_rate: float = 0.05
    latent_bias_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "n_sentences", "words_per_sentence",
                     "n_channels", "n_timepoints", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.drive_scales is not None and len(self.drive_scales) != len(self.driving):
            raise ValueError("drive_scales must align with driving sources")

    @property
    def epoch_end_ms(self) -> float:
        return self.epoch_start_ms + self.n_timepoints / self.sampling_rate_hz * 1000.0

    @property
    def n_trials(self) -> int:
        return self.n_subjects * self.n_sentences * self.words_per_sentence

    def scales(self) -> tuple[float, ...]:
        return self.drive_scales if self.drive_scales is not None else (1.0,) * len(self.driving)

    def to_json_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "n_sentences": self.n_sentences,
            "words_per_sentence": self.words_per_sentence,
            "n_channels": self.n_channels,
            "n_timepoints": self.n_timepoints,
            "sampling_rate_hz": self.sampling_rate_hz,
            "epoch_start_ms": self.epoch_start_ms,
            "architecture": self.architecture,
            "noise_sd": self.noise_sd,
            "driving": list(self.driving),
            "drive_scales": None if self.drive_scales is None else list(self.drive_scales),
            "driven_latent_timepoints": (
                None if self.driven_latent_timepoints is None
                else list(self.driven_latent_timepoints)),
            "vocab_size": self.vocab_size,
            "static_dim": self.static_dim,
            "contextual_dim": self.contextual_dim,
            "artifact_rate": self.artifact_rate,
            "latent_bias_sd": self.latent_bias_sd,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SynthConfig":
        kwargs = dict(d)
        kwargs["driving"] = tuple(kwargs.get("driving", ("frequency", "surprisal")))
        if kwargs.get("drive_scales") is not None:
            kwargs["drive_scales"] = tuple(kwargs["drive_scales"])
        if kwargs.get("driven_latent_timepoints") is not None:
            kwargs["driven_latent_timepoints"] = tuple(kwargs["driven_latent_timepoints"])
        return cls(**kwargs)


@dataclass
class GroundTruth:
    decoder: AutoencoderParams
    interface_weights: dict[str, np.ndarray]  # per driving source: (C, T_lat, d_s)
    latent_bias: np.ndarray  # (C, T_lat)
    latents: np.ndarray  # (n_trials, C, T_lat)
    driving_columns: dict[str, np.ndarray]  # standardized columns, (n_trials, d_s)
    noise_sd: float
    mse_floor: float  # noise variance
    driven_latent_timepoints: tuple[int, ...] | None = None


@dataclass
class SynthData:
    config: SynthConfig
    dataset: ErpDataset
    meta: list[TrialMeta]
    counts: dict[str, int]
    embeddings: EmbeddingTable
    token_features: TokenFeatureTable
    sentence_tokens: dict[int, dict[int, str]]
    ground_truth: GroundTruth


def _standardize_columns(block: np.ndarray) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    if block.ndim == 1:
        block = block[:, None]
    mean = block.mean(axis=0)
    sd = block.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    return (block - mean) / sd


def generate(config: SynthConfig) -> SynthData:
    """Deterministic synthetic generation; identical configs are bit-identical."""
    rng = np.random.default_rng(config.seed)

    # vocabulary: frequent ranks become function words
    tokens = [f"tok{i:03d}" for i in range(config.vocab_size)]
    counts = {
        tok: int(20000.0 / (rank + 1) ** 1.2) + 1 for rank, tok in enumerate(tokens)
    }
    n_function = max(1, int(0.4 * config.vocab_size))
    word_class = {
        tok: ("function" if rank < n_function else "content")
        for rank, tok in enumerate(tokens)
    }
    pos_tag = {}
    for rank, tok in enumerate(tokens):
        tags = FUNCTION_TAGS if word_class[tok] == "function" else CONTENT_TAGS
        pos_tag[tok] = tags[rank % len(tags)]

    # sentences shared by all subjects
    sentence_words = rng.integers(0, config.vocab_size,
                                  size=(config.n_sentences, config.words_per_sentence))
    sentence_tokens = {
        sid: {pos + 1: tokens[sentence_words[sid, pos]]
              for pos in range(config.words_per_sentence)}
        for sid in range(config.n_sentences)
    }

    # per-(sentence, position) tables: surprisal higher for content words
    keys = [(sid, pos + 1) for sid in range(config.n_sentences)
            for pos in range(config.words_per_sentence)]
    surprisal_vals = np.empty(len(keys))
    for i, (sid, pos) in enumerate(keys):
        tok = sentence_tokens[sid][pos]
        shift = 4.0 if word_class[tok] == "content" else 1.0
        surprisal_vals[i] = shift + rng.gamma(2.0, 1.0)
    contextual = rng.normal(size=(len(keys), config.contextual_dim))
    token_features = TokenFeatureTable(
        index={k: i for i, k in enumerate(keys)},
        columns={"surprisal": surprisal_vals, "contextual_embedding": contextual},
    )
    static_vectors = rng.normal(size=(config.vocab_size, config.static_dim))
    for rank, tok in enumerate(tokens):
        if word_class[tok] == "content":
            static_vectors[rank, 0] += 0.8
    embeddings = EmbeddingTable(
        config.static_dim, {tok: static_vectors[i] for i, tok in enumerate(tokens)})

    # trials: subjects x sentences x words, artifact flags populated
    meta: list[TrialMeta] = []
    artifact_draws = rng.uniform(size=config.n_trials)
    i = 0
    for s in range(config.n_subjects):
        subject = f"s{s:02d}"
        for sid in range(config.n_sentences):
            for pos in range(config.words_per_sentence):
                tok = sentence_tokens[sid][pos + 1]
                meta.append(TrialMeta(
                    subject_id=subject, sentence_id=sid, word_position=pos + 1,
                    token=tok, word_class=word_class[tok], pos_tag=pos_tag[tok],
                    artifact=bool(artifact_draws[i] < config.artifact_rate)))
                i += 1

    # driving columns, computed with the production feature code
    driving_columns: dict[str, np.ndarray] = {}
    for source in config.driving:
        if source == "frequency":
            col = frequency_feature([m.token for m in meta], counts)
        elif source == "surprisal":
            col = surprisal_feature(meta, token_features)
        elif source == "semantic_distance":
            col, _ = semantic_distance(meta, embeddings, sentence_tokens,
                                       allow_first_word=True)
        elif source == "static_embedding":
            col, _ = static_embedding_feature(meta, embeddings)
        elif source == "contextual_embedding":
            col = contextual_embedding_feature(meta, token_features)
        else:
            raise ValueError(f"unknown driving source {source!r}")
        driving_columns[source] = _standardize_columns(col)

    # true decoder and interface
    spec = AutoencoderSpec(config.architecture, False, config.n_channels,
                           config.n_timepoints)
    decoder = init_params(spec, seed=int(rng.integers(2**63)))
    c_lat, t_lat = decoder.plan.latent_channels, decoder.plan.latent_timepoints
    if config.driven_latent_timepoints is not None:
        bad = [t for t in config.driven_latent_timepoints if not 0 <= t < t_lat]
        if bad:
            raise ValueError(f"driven latent timepoints {bad} outside [0, {t_lat})")

    latents = np.zeros((config.n_trials, c_lat, t_lat))
    interface_weights: dict[str, np.ndarray] = {}
    for source, scale in zip(config.driving, config.scales()):
        cols = driving_columns[source]
        w = rng.normal(0.0, scale / np.sqrt(cols.shape[1]), size=(c_lat, t_lat, cols.shape[1]))
        if config.driven_latent_timepoints is not None:
            mask = np.zeros(t_lat, dtype=bool)
            mask[list(config.driven_latent_timepoints)] = True
            w[:, ~mask, :] = 0.0
        interface_weights[source] = w
        latents += np.einsum("ctd,nd->nct", w, cols, optimize=True)
    latent_bias = rng.normal(0.0, config.latent_bias_sd, size=(c_lat, t_lat))
    latents += latent_bias

    signal = decode(decoder, latents)
    noise = rng.standard_normal(signal.shape) * config.noise_sd
    dataset = ErpDataset(signal + noise, config.sampling_rate_hz,
                         config.epoch_start_ms, config.epoch_end_ms)

    truth = GroundTruth(
        decoder=decoder,
        interface_weights=interface_weights,
        latent_bias=latent_bias,
        latents=latents,
        driving_columns=driving_columns,
        noise_sd=config.noise_sd,
        mse_floor=config.noise_sd**2,
        driven_latent_timepoints=config.driven_latent_timepoints,
    )
    return SynthData(config, dataset, meta, counts, embeddings, token_features,
                     sentence_tokens, truth)


def signal_variance(config: SynthConfig) -> float:
    """Pooled variance of the noise-free signal for this config."""
    clean = generate(replace(config, noise_sd=0.0))
    return float(clean.dataset.data.var())


def calibrate_noise(config: SynthConfig, target_snr: float) -> SynthConfig:
    """Set noise_sd so that signal variance / noise variance == target_snr."""
    if target_snr <= 0:
        raise ValueError("target_snr must be positive")
    return replace(config, noise_sd=float(np.sqrt(signal_variance(config) / target_snr)))


# ---------------------------------------------------------------------------
# Closed-form performance bounds
# ---------------------------------------------------------------------------


def nested_subsets(driving: tuple[str, ...]) -> list[tuple[str, ...]]:
    return [tuple(driving[:i]) for i in range(len(driving) + 1)]


def _subset_key(subset: tuple[str, ...]) -> str:
    return "+".join(subset) if subset else "intercept"


def oracle_bounds(truth: GroundTruth, dataset: ErpDataset, subsets=None,
                  fit_rows=None, eval_rows=None) -> dict:
    """Best achievable MSE and r2 per nested driving-feature subset.

    For each subset the true latents are projected onto the feature span by
    closed-form normal equations (fit on ``fit_rows``), decoded with the true
    decoder, and scored on ``eval_rows``. Because the decoder is mildly
    nonlinear, raw projections can violate nesting by a hair; bounds are
    therefore the running minimum along the nested chain (any superset can
    realize a subset's map by zeroing the extra weights), and a flag records
    whether that correction fired.
    """
    n = truth.latents.shape[0]
    fit_rows = np.arange(n) if fit_rows is None else np.asarray(fit_rows)
    eval_rows = np.arange(n) if eval_rows is None else np.asarray(eval_rows)
    if subsets is None:
        subsets = nested_subsets(tuple(truth.driving_columns))

    z_flat = truth.latents.reshape(n, -1)
    x_eval = dataset.data[eval_rows]
    c_lat, t_lat = truth.latents.shape[1], truth.latents.shape[2]

    floor_pred = decode(truth.decoder, truth.latents[eval_rows])
    mse_floor = float(((floor_pred - x_eval) ** 2).mean())

    result: dict = {
        "mse_floor": mse_floor,
        "mse": {},
        "best_possible_r2_mod": {},
        "ridge_fallback": False,
        "monotonic_enforced": False,
    }
    raw: list[tuple[str, float]] = []
    for subset in subsets:
        blocks = [np.ones((n, 1))]
        blocks += [truth.driving_columns[s] for s in subset]
        f = np.hstack(blocks)
        ff = f[fit_rows]
        a = ff.T @ ff
        b = ff.T @ z_flat[fit_rows]
        try:
            if np.linalg.cond(a) > 1e12:
                raise np.linalg.LinAlgError("ill-conditioned")
            beta = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            beta = np.linalg.solve(a + 1e-8 * np.eye(a.shape[0]), b)
            result["ridge_fallback"] = True
        z_hat = (f[eval_rows] @ beta).reshape(len(eval_rows), c_lat, t_lat)
        pred = decode(truth.decoder, z_hat)
        raw.append((_subset_key(subset), float(((pred - x_eval) ** 2).mean())))

    running = np.inf
    for key, mse in raw:
        if mse > running:
            result["monotonic_enforced"] = True
        running = min(running, mse)
        result["mse"][key] = running
    mse_empty = result["mse"][_subset_key(subsets[0])]
    denom = mse_empty - mse_floor
    for key, mse in result["mse"].items():
        result["best_possible_r2_mod"][key] = (
            1.0 - (mse - mse_floor) / denom if denom > 0 else float("nan"))
    return result


# ---------------------------------------------------------------------------
# On-disk output (all dataio formats)
# ---------------------------------------------------------------------------


def write_dataset_dir(synth: SynthData, outdir, base: str = "data") -> None:
    """Write the dataset, tables and ground truth under ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    save_erp(out / base, synth.dataset, synth.meta)
    save_counts(out / "counts.tsv", synth.counts)
    save_embeddings(out / "embeddings.txt", synth.embeddings)
    save_token_features(out / "tokens.feat.tsv", synth.token_features)
    import json

    (out / "config.json").write_text(
        json.dumps(synth.config.to_json_dict(), indent=2, sort_keys=True) + "\n")
    truth = synth.ground_truth
    tensors: dict[str, np.ndarray] = {"latent_bias": truth.latent_bias,
                                      "latents": truth.latents}
    for s, w in truth.interface_weights.items():
        tensors[f"interface.{s}"] = w
    for s, cols in truth.driving_columns.items():
        tensors[f"columns.{s}"] = cols
    for name, t in truth.decoder.tensors.items():
        tensors[f"decoder.{name}"] = t
    save_checkpoint(out / "truth", "synth_truth", {
        "driving": list(truth.driving_columns),
        "noise_sd": truth.noise_sd,
        "mse_floor": truth.mse_floor,
        "driven_latent_timepoints": (
            None if truth.driven_latent_timepoints is None
            else list(truth.driven_latent_timepoints)),
        "decoder_spec": truth.decoder.spec.to_json_dict(),
        "decoder_plan": truth.decoder.plan.to_json_dict(),
    }, tensors)


def load_ground_truth(basepath) -> GroundTruth:
    """Reload a ground-truth checkpoint written by :func:`write_dataset_dir`."""
    from .autoencoder import LayerPlan

    _, meta, tensors = load_checkpoint(basepath, expect_kind="synth_truth")
    spec = AutoencoderSpec.from_json_dict(meta["decoder_spec"])
    plan = LayerPlan.from_json_dict(meta["decoder_plan"])
    decoder_tensors = {
        name[len("decoder."):]: t for name, t in tensors.items()
        if name.startswith("decoder.")
    }
    decoder = AutoencoderParams(spec, plan, decoder_tensors)
    return GroundTruth(
        decoder=decoder,
        interface_weights={s: tensors[f"interface.{s}"] for s in meta["driving"]},
        latent_bias=tensors["latent_bias"],
        latents=tensors["latents"],
        driving_columns={s: tensors[f"columns.{s}"] for s in meta["driving"]},
        noise_sd=float(meta["noise_sd"]),
        mse_floor=float(meta["mse_floor"]),
        driven_latent_timepoints=(
            None if meta["driven_latent_timepoints"] is None
            else tuple(meta["driven_latent_timepoints"])),
    )
