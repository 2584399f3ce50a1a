"""Autoregressive docid scoring: the contract plus a trainable reference model.

Decoding needs one capability: `next_logprobs(input_tokens, prefix)`, a
normalized log-distribution over the docid vocabulary (sentinel included)
given the query text and the docid tokens emitted so far. Any object with
that method plugs into the decoder. The built-in `LinearScorer` realizes
it as a hashed-feature log-linear model; its loss is convex, so training
behavior can be pinned down numerically instead of taken on faith.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from trieval.errors import ConfigError, ScorerError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01

_START_MARKER = "^"
_CHECKPOINT_VERSION = 1

# feature index -> occurrence count
FeatureVector = dict[int, int]


class PairLike(Protocol):
    """Anything trainable: tokenized input plus a target docid."""

    @property
    def input(self) -> tuple[str, ...]: ...

    @property
    def target(self) -> "_DocidLike": ...


class _DocidLike(Protocol):
    tokens: tuple[int, ...]
    doc_key: str


@dataclass(frozen=True)
class ScorerConfig:
    feature_dim: int = 2**18
    position_buckets: int = 8
    hash_seed: int = 0

    def __post_init__(self) -> None:
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.position_buckets < 1:
            raise ValueError("position_buckets must be >= 1")


def _hash_feature(feature: str, seed: int, dim: int) -> int:
    key = seed.to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "big") % dim


def input_features(input_tokens: Sequence[str], seed: int, dim: int) -> FeatureVector:
    """Unigram and bigram counts of the query text, hashed to [0, dim)."""
    feats: FeatureVector = {}
    for tok in input_tokens:
        idx = _hash_feature(f"u={tok}", seed, dim)
        feats[idx] = feats.get(idx, 0) + 1
    for left, right in zip(input_tokens, input_tokens[1:]):
        idx = _hash_feature(f"b={left} {right}", seed, dim)
        feats[idx] = feats.get(idx, 0) + 1
    return feats


def step_features(prefix: Sequence[int], seed: int, dim: int, positions: int) -> FeatureVector:
    """Decoder-state features: last emitted token (or start marker) + position."""
    last = f"prev={prefix[-1]}" if prefix else f"prev={_START_MARKER}"
    pos = f"pos={min(len(prefix), positions - 1)}"
    feats: FeatureVector = {}
    for feature in (last, pos):
        idx = _hash_feature(feature, seed, dim)
        feats[idx] = feats.get(idx, 0) + 1
    return feats


def featurize(
    input_tokens: Sequence[str],
    prefix: Sequence[int],
    seed: int,
    dim: int,
    positions: int,
) -> FeatureVector:
    feats = input_features(input_tokens, seed, dim)
    for idx, count in step_features(prefix, seed, dim, positions).items():
        feats[idx] = feats.get(idx, 0) + count
    return feats


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


class LinearScorer:
    """Log-linear next-token model over hashed (query, prefix) features.

    Weight rows are materialized on first touch; an untouched row is an
    all-zero row, so a freshly constructed scorer is exactly the uniform
    distribution. `vocab_size` counts the sentinel, i.e. it is the number
    of real docid tokens plus one, and the sentinel id is vocab_size - 1.
    """

    def __init__(self, vocab_size: int, config: ScorerConfig | None = None):
        if vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
        self.config = config or ScorerConfig()
        self.vocab_size = vocab_size
        # touched feature rows live in dense matrices; _slot_of maps a
        # feature index to its row slot, untouched rows stay implicit zeros
        self._slot_of: dict[int, int] = {}
        self._w = np.zeros((0, vocab_size))
        self._m = np.zeros((0, vocab_size), dtype=np.float32)
        self._v = np.zeros((0, vocab_size), dtype=np.float32)
        self._t = np.zeros(0, dtype=np.int64)
        self._version = 0
        self._input_cache: tuple[tuple[str, ...], int, np.ndarray] | None = None

    def _grow(self, need: int) -> None:
        cap = self._w.shape[0]
        if need <= cap:
            return
        extra = max(need, 2 * cap, 256) - cap
        self._w = np.vstack([self._w, np.zeros((extra, self.vocab_size))])
        self._m = np.vstack([self._m, np.zeros((extra, self.vocab_size), np.float32)])
        self._v = np.vstack([self._v, np.zeros((extra, self.vocab_size), np.float32)])
        self._t = np.concatenate([self._t, np.zeros(extra, np.int64)])

    def _slot(self, feature_idx: int) -> int:
        slot = self._slot_of.get(feature_idx)
        if slot is None:
            slot = len(self._slot_of)
            self._grow(slot + 1)
            self._slot_of[feature_idx] = slot
        return slot

    @classmethod
    def for_vocab(cls, vocab: Sequence[object], config: ScorerConfig | None = None) -> "LinearScorer":
        return cls(len(vocab) + 1, config)

    @property
    def sentinel_id(self) -> int:
        return self.vocab_size - 1

    @property
    def row_count(self) -> int:
        return len(self._slot_of)

    # --- forward --------------------------------------------------------

    def _base_logits(self, feats: FeatureVector) -> np.ndarray:
        slots, counts = [], []
        for idx, count in feats.items():
            slot = self._slot_of.get(idx)
            if slot is not None:
                slots.append(slot)
                counts.append(count)
        if not slots:
            return np.zeros(self.vocab_size)
        return np.asarray(counts, dtype=np.float64) @ self._w[slots]

    def _cached_base(self, input_tokens: Sequence[str]) -> np.ndarray:
        key = tuple(input_tokens)
        cached = self._input_cache
        if cached is not None and cached[0] == key and cached[1] == self._version:
            return cached[2]
        feats = input_features(key, self.config.hash_seed, self.config.feature_dim)
        base = self._base_logits(feats)
        self._input_cache = (key, self._version, base)
        return base

    def _check_prefix(self, prefix: Sequence[int]) -> None:
        for tok in prefix:
            if not 0 <= tok < self.sentinel_id:
                raise ConfigError(
                    f"prefix token id {tok} outside docid vocabulary "
                    f"[0, {self.sentinel_id})"
                )

    def next_logprobs(self, input_tokens: Sequence[str], prefix: Sequence[int]) -> np.ndarray:
        """Log-distribution over the next docid token, sentinel included."""
        self._check_prefix(prefix)
        cfg = self.config
        logits = self._cached_base(input_tokens).copy()
        for idx, count in step_features(prefix, cfg.hash_seed, cfg.feature_dim, cfg.position_buckets).items():
            slot = self._slot_of.get(idx)
            if slot is not None:
                logits += count * self._w[slot]
        return _log_softmax(logits)

    def _gold_logprobs(self, input_tokens: Sequence[str], target: Sequence[int]) -> list[float]:
        steps = list(target) + [self.sentinel_id]
        return [
            float(self.next_logprobs(input_tokens, target[:pos])[gold])
            for pos, gold in enumerate(steps)
        ]

    def sequence_score(self, input_tokens: Sequence[str], target: Sequence[int]) -> float:
        """Cumulative log-probability of a full docid plus its sentinel."""
        return math.fsum(self._gold_logprobs(input_tokens, target))

    def pair_loss(self, input_tokens: Sequence[str], target: Sequence[int]) -> float:
        """Teacher-forcing cross entropy, summed over target positions."""
        return math.fsum(-lp for lp in self._gold_logprobs(input_tokens, target))

    # --- training ---------------------------------------------------------

    def _forward_backward(
        self, in_feats: FeatureVector, target: Sequence[int]
    ) -> tuple[float, list[int], np.ndarray]:
        """Pair loss plus its gradient as (feature idxs, aligned row matrix)."""
        cfg = self.config
        base = self._base_logits(in_feats)
        steps = list(target) + [self.sentinel_id]
        sfeats_per_pos = [
            step_features(target[:pos], cfg.hash_seed, cfg.feature_dim, cfg.position_buckets)
            for pos in range(len(steps))
        ]
        grad_pos: dict[int, int] = {}
        for sfeats in sfeats_per_pos:
            for idx in sfeats:
                if idx not in grad_pos:
                    grad_pos[idx] = len(grad_pos)
        for idx in in_feats:
            if idx not in grad_pos:
                grad_pos[idx] = len(grad_pos)

        grad = np.zeros((len(grad_pos), self.vocab_size))
        delta_sum = np.zeros(self.vocab_size)
        loss_terms = []
        for gold, sfeats in zip(steps, sfeats_per_pos):
            logits = base.copy()
            for idx, count in sfeats.items():
                slot = self._slot_of.get(idx)
                if slot is not None:
                    logits += count * self._w[slot]
            logprobs = _log_softmax(logits)
            loss_terms.append(float(-logprobs[gold]))
            delta = np.exp(logprobs)
            delta[gold] -= 1.0
            delta_sum += delta
            for idx, count in sfeats.items():
                grad[grad_pos[idx]] += count * delta
        in_rows = [grad_pos[idx] for idx in in_feats]
        in_counts = np.fromiter(in_feats.values(), np.float64, len(in_feats))
        grad[in_rows] += np.outer(in_counts, delta_sum)
        return math.fsum(loss_terms), list(grad_pos), grad

    def pair_gradient(self, input_tokens: Sequence[str], target: Sequence[int]) -> dict[int, np.ndarray]:
        """d(pair_loss)/d(weights), one dense row per active feature index."""
        feats = input_features(tuple(input_tokens), self.config.hash_seed, self.config.feature_dim)
        _, idxs, grad = self._forward_backward(feats, target)
        return {idx: grad[r] for r, idx in enumerate(idxs)}

    def _apply_adamw(self, idxs: Sequence[int], grad: np.ndarray, lr: float) -> None:
        # decay is decoupled but lazy: a row decays only on steps that touch it
        order = np.argsort(idxs)
        grad = grad[order]
        slots = np.fromiter(
            (self._slot(idxs[i]) for i in order), np.int64, len(idxs)
        )
        # bias correction varies per row: each keeps its own update count
        t = self._t[slots] + 1
        self._t[slots] = t
        m = (ADAM_BETA1 * self._m[slots] + (1.0 - ADAM_BETA1) * grad).astype(np.float32)
        v = (ADAM_BETA2 * self._v[slots] + (1.0 - ADAM_BETA2) * grad * grad).astype(np.float32)
        m_hat = m.astype(np.float64) / (1.0 - np.power(ADAM_BETA1, t))[:, None]
        v_hat = v.astype(np.float64) / (1.0 - np.power(ADAM_BETA2, t))[:, None]
        w = self._w[slots]
        self._w[slots] = w - lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + WEIGHT_DECAY * w)
        self._m[slots] = m
        self._v[slots] = v
        self._version += 1

    def reset_optimizer(self) -> None:
        """Drop moment estimates; weights are untouched."""
        self._m[:] = 0
        self._v[:] = 0
        self._t[:] = 0

    def train(
        self, pairs: Sequence[PairLike], epochs: int, lr: float, seed: int
    ) -> list[float]:
        """AdamW on teacher-forcing cross entropy, one update per pair.

        Pair order is reshuffled each epoch from a generator seeded once,
        so (pairs, epochs, lr, seed) fully determine the final weights.
        Returns the mean pair loss of each epoch.
        """
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        if epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {epochs}")
        if not pairs and epochs > 0:
            raise ScorerError("cannot train on an empty pair list")
        for pair in pairs:
            for tok in pair.target.tokens:
                if not 0 <= tok < self.sentinel_id:
                    raise ScorerError(
                        f"training pair for document {pair.target.doc_key!r} has "
                        f"out-of-vocabulary token id {tok}"
                    )
        cfg = self.config
        feats = [
            input_features(tuple(p.input), cfg.hash_seed, cfg.feature_dim) for p in pairs
        ]
        rng = np.random.default_rng(seed)
        trace: list[float] = []
        for _ in range(epochs):
            losses = []
            for i in rng.permutation(len(pairs)):
                loss, idxs, grad = self._forward_backward(feats[i], pairs[i].target.tokens)
                self._apply_adamw(idxs, grad, lr)
                losses.append(loss)
            trace.append(math.fsum(losses) / len(losses))
        return trace

    # --- direct weight access (oracle tests poke single coordinates) -----

    def get_weight(self, feature_idx: int, token_id: int) -> float:
        slot = self._slot_of.get(feature_idx)
        return 0.0 if slot is None else float(self._w[slot, token_id])

    def set_weight(self, feature_idx: int, token_id: int, value: float) -> None:
        if not 0 <= feature_idx < self.config.feature_dim:
            raise ValueError(f"feature index {feature_idx} out of range")
        slot = self._slot(feature_idx)  # may reallocate _w; resolve first
        self._w[slot, token_id] = value
        self._version += 1

    # --- persistence ------------------------------------------------------

    def to_bytes(self) -> bytes:
        cfg = self.config
        out = bytearray()
        out += struct.pack(
            "<BQIIqI",
            _CHECKPOINT_VERSION,
            cfg.feature_dim,
            self.vocab_size,
            cfg.position_buckets,
            cfg.hash_seed,
            len(self._slot_of),
        )
        for idx in sorted(self._slot_of):
            out += struct.pack("<Q", idx)
            out += self._w[self._slot_of[idx]].astype("<f8").tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "LinearScorer":
        header = struct.calcsize("<BQIIqI")
        if len(data) < header:
            raise ScorerError("truncated scorer checkpoint")
        version, dim, vocab_size, positions, seed, n_rows = struct.unpack_from("<BQIIqI", data)
        if version != _CHECKPOINT_VERSION:
            raise ScorerError(f"unsupported scorer checkpoint version {version}")
        scorer = cls(
            vocab_size,
            ScorerConfig(feature_dim=dim, position_buckets=positions, hash_seed=seed),
        )
        scorer._grow(n_rows)
        pos = header
        row_bytes = vocab_size * 8
        for _ in range(n_rows):
            if pos + 8 + row_bytes > len(data):
                raise ScorerError("truncated scorer checkpoint row")
            (idx,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            slot = scorer._slot(idx)
            scorer._w[slot] = np.frombuffer(
                data, dtype="<f8", count=vocab_size, offset=pos
            )
            pos += row_bytes
        if pos != len(data):
            raise ScorerError(f"trailing bytes in scorer checkpoint ({len(data) - pos})")
        return scorer

    def weights_digest(self) -> str:
        """Stable hash of the weights, for cross-stage continuity checks."""
        return hashlib.blake2b(self.to_bytes(), digest_size=16).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "LinearScorer":
        return cls.from_bytes(Path(path).read_bytes())


def dump_loss_trace(path: str | Path, trace: Iterable[float]) -> None:
    """CSV loss trace, epochs numbered from 1."""
    lines = ["epoch,mean_loss"]
    lines += [f"{epoch},{loss!r}" for epoch, loss in enumerate(trace, start=1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_loss_trace(path: str | Path) -> list[float]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "epoch,mean_loss":
        raise ScorerError(f"malformed loss trace at {path}")
    return [float(line.split(",", 1)[1]) for line in lines[1:] if line]
