"""Deterministic synthetic accented-speech features and attack targets.

Each content word owns a fixed unit-norm prototype vector; an utterance
renders every word as a short run of frames, rotates them through the
accent's fixed linear map, and adds a little Gaussian noise. Attack
target transcriptions come from a separate lorem-ipsum vocabulary that
shares no words with the content vocabulary, so a targeted attack is
never accidentally "correct".

Everything is pure and seed-driven: the same (seed, config) always
yields byte-identical datasets and target sets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CONTENT_WORDS = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliett", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "yankee",
)

LOREM_WORDS = (
    "lorem", "ipsum", "dolor", "amet", "consectetur", "adipiscing", "elit",
    "sed", "eiusmod", "tempor", "incididunt", "labore", "dolore", "magna",
    "aliqua", "veniam",
)

DEFAULT_FEAT_DIM = 16
NOISE_SIGMA = 0.05
FRAMES_PER_WORD = (3, 6)  # inclusive range
_WORLD_SEED = 20240917  # fixes prototypes and accent maps across datasets


class DataError(Exception):
    pass


@dataclass(frozen=True)
class Vocab:
    """Word inventory shared by the generator and the model.

    Token ids: content words first, then lorem words, then blank / sos /
    eos / pad. Both word groups are model outputs (the attacker's targets
    must be expressible), but training transcripts only ever use content
    words, which keeps the overlap between benign and adversarial text
    exactly zero.
    """

    words: tuple[str, ...] = CONTENT_WORDS
    lorem_words: tuple[str, ...] = LOREM_WORDS

    def __post_init__(self):
        if set(self.words) & set(self.lorem_words):
            raise DataError("content and lorem vocabularies must be disjoint")

    @property
    def n_words(self) -> int:
        return len(self.words) + len(self.lorem_words)

    @property
    def blank(self) -> int:
        return self.n_words

    @property
    def sos(self) -> int:
        return self.n_words + 1

    @property
    def eos(self) -> int:
        return self.n_words + 2

    @property
    def pad(self) -> int:
        return self.n_words + 3

    @property
    def content_ids(self) -> range:
        return range(len(self.words))

    @property
    def lorem_ids(self) -> range:
        return range(len(self.words), self.n_words)

    def word(self, token_id: int) -> str:
        if token_id < len(self.words):
            return self.words[token_id]
        if token_id < self.n_words:
            return self.lorem_words[token_id - len(self.words)]
        raise DataError(f"token id {token_id} is not a word")

    def token_id(self, word: str) -> int:
        try:
            return self.words.index(word)
        except ValueError:
            pass
        try:
            return len(self.words) + self.lorem_words.index(word)
        except ValueError:
            raise DataError(f"unknown word {word!r}") from None

    def to_words(self, tokens: Sequence[int]) -> list[str]:
        return [self.word(t) for t in tokens]

    def to_ids(self, words: Sequence[str]) -> list[int]:
        return [self.token_id(w) for w in words]

    def hash(self) -> str:
        payload = "\x1f".join(self.words) + "\x1e" + "\x1f".join(self.lorem_words)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class FeatureWorld:
    """Fixed geometry of the feature space: prototypes and accent maps."""

    feat_dim: int
    prototypes: np.ndarray  # (n_content_words, F), unit rows
    accent_maps: np.ndarray  # (2, F, F), orthogonal

    @classmethod
    def default(cls, vocab: Vocab, feat_dim: int = DEFAULT_FEAT_DIM) -> "FeatureWorld":
        rng = np.random.default_rng([_WORLD_SEED, feat_dim])
        # prototypes share a strong common direction so the two accent
        # rotations displace every utterance consistently; the residual
        # word-specific parts keep the words themselves distinguishable
        common = rng.normal(size=feat_dim)
        common /= np.linalg.norm(common)
        protos = 1.5 * common + rng.normal(size=(len(vocab.words), feat_dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        maps = []
        for _ in range(2):
            q, _r = np.linalg.qr(rng.normal(size=(feat_dim, feat_dim)))
            maps.append(q)
        return cls(feat_dim=feat_dim, prototypes=protos,
                   accent_maps=np.stack(maps))


@dataclass(frozen=True)
class Utterance:
    id: str
    features: np.ndarray  # (T, F)
    transcript: tuple[int, ...]  # content-word ids
    accent: int  # 0 or 1

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class DatasetSplit:
    train: list[Utterance]
    valid: list[Utterance]
    test: list[Utterance]
    seed: int
    feat_dim: int = DEFAULT_FEAT_DIM

    def split(self, name: str) -> list[Utterance]:
        return {"train": self.train, "valid": self.valid, "test": self.test}[name]


def render_utterance(tokens: Sequence[int], accent: int, rng: np.random.Generator,
                     world: FeatureWorld, vocab: Vocab,
                     noise_sigma: float = NOISE_SIGMA) -> np.ndarray:
    """Emit 3..6 frames per word: accent-rotated prototype plus noise."""
    if not tokens:
        raise DataError("empty transcript")
    if accent not in (0, 1):
        raise DataError(f"accent must be 0 or 1, got {accent}")
    amap = world.accent_maps[accent]
    frames = []
    for tok in tokens:
        if tok not in vocab.content_ids:
            raise DataError(f"token id {tok} is not a content word")
        n = int(rng.integers(FRAMES_PER_WORD[0], FRAMES_PER_WORD[1] + 1))
        base = world.prototypes[tok] @ amap
        noise = rng.normal(scale=noise_sigma, size=(n, world.feat_dim)) if noise_sigma > 0 else 0.0
        frames.append(np.broadcast_to(base, (n, world.feat_dim)) + noise)
    return np.concatenate(frames, axis=0)


def _gen_split(name: str, n: int, len_range: tuple[int, int], seed: int,
               world: FeatureWorld, vocab: Vocab) -> list[Utterance]:
    rng = np.random.default_rng([seed, {"train": 1, "valid": 2, "test": 3}[name]])
    accents = np.array([i % 2 for i in range(n)])
    rng.shuffle(accents)
    utts = []
    for i in range(n):
        length = int(rng.integers(len_range[0], len_range[1] + 1))
        tokens = tuple(int(t) for t in rng.integers(0, len(vocab.words), size=length))
        feats = render_utterance(tokens, int(accents[i]), rng, world, vocab)
        utts.append(Utterance(id=f"{name}-{i:05d}", features=feats,
                              transcript=tokens, accent=int(accents[i])))
    return utts


def gen_dataset(seed: int, n_train: int = 2000, n_valid: int = 200,
                n_test: int = 200, len_range: tuple[int, int] = (2, 6),
                feat_dim: int = DEFAULT_FEAT_DIM,
                vocab: Vocab | None = None) -> DatasetSplit:
    """Three disjoint splits with balanced accents, deterministic per seed."""
    if min(n_train, n_valid, n_test) < 1:
        raise DataError("split sizes must be >= 1")
    vocab = vocab or Vocab()
    world = FeatureWorld.default(vocab, feat_dim)
    return DatasetSplit(
        train=_gen_split("train", n_train, len_range, seed, world, vocab),
        valid=_gen_split("valid", n_valid, len_range, seed, world, vocab),
        test=_gen_split("test", n_test, len_range, seed, world, vocab),
        seed=seed,
        feat_dim=feat_dim,
    )


def gen_adv_targets(seed: int, count: int = 12,
                    len_range: tuple[int, int] = (2, 6),
                    vocab: Vocab | None = None) -> list[tuple[int, ...]]:
    """Fixed lorem-ipsum transcriptions; lengths cycle through len_range."""
    vocab = vocab or Vocab()
    if not vocab.lorem_words:
        raise DataError("lorem vocabulary is empty")
    lengths = list(range(len_range[0], len_range[1] + 1))
    if count < len(lengths):
        raise DataError(f"need at least {len(lengths)} targets to cover {len_range}")
    rng = np.random.default_rng([seed, 4])
    lo = len(vocab.words)
    targets = []
    for i in range(count):
        length = lengths[i % len(lengths)]
        toks = tuple(int(lo + t) for t in rng.integers(0, len(vocab.lorem_words),
                                                       size=length))
        targets.append(toks)
    return targets


def select_adv_target(original: Sequence[int],
                      targets: Sequence[tuple[int, ...]]) -> tuple[int, ...]:
    """Pick the target whose length is closest to the original; first wins ties."""
    if not targets:
        raise DataError("no adversarial targets")
    best = min(range(len(targets)),
               key=lambda i: (abs(len(targets[i]) - len(original)), i))
    return tuple(targets[best])


# ---------------------------------------------------------------------------
# persistence: line-oriented text, byte-exact round trips


def _fmt(x: float) -> str:
    return repr(float(x))


def save_split(path, utts: Iterable[Utterance], feat_dim: int, seed: int,
               vocab: Vocab, split_name: str) -> None:
    lines = [f"toyspeech v1 F={feat_dim} vocab={vocab.hash()} seed={seed} split={split_name}"]
    for u in utts:
        lines.append(u.id)
        lines.append(str(u.accent))
        lines.append(" ".join(vocab.to_words(u.transcript)))
        lines.append(str(u.n_frames))
        for row in u.features:
            lines.append(" ".join(_fmt(v) for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_split(path, vocab: Vocab | None = None) -> tuple[list[Utterance], dict]:
    vocab = vocab or Vocab()
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "toyspeech" or head[1] != "v1":
        raise DataError(f"{path}: bad header {lines[0]!r}")
    meta = dict(kv.split("=", 1) for kv in head[2:])
    if meta["vocab"] != vocab.hash():
        raise DataError(f"{path}: vocab hash mismatch")
    feat_dim = int(meta["F"])
    utts = []
    i = 1
    while i < len(lines):
        if i + 4 > len(lines):
            raise DataError(f"{path}: truncated utterance header at line {i + 1}")
        uid = lines[i]
        accent = int(lines[i + 1])
        tokens = tuple(vocab.to_ids(lines[i + 2].split()))
        n = int(lines[i + 3])
        i += 4
        if i + n > len(lines):
            raise DataError(f"{path}: truncated features for {uid}")
        feats = np.array([[float(v) for v in lines[i + t].split()] for t in range(n)])
        if feats.shape != (n, feat_dim):
            raise DataError(f"{path}: bad feature shape for {uid}")
        i += n
        utts.append(Utterance(id=uid, features=feats, transcript=tokens,
                              accent=accent))
    return utts, {"feat_dim": feat_dim, "seed": int(meta["seed"]),
                  "split": meta["split"]}


def save_dataset(outdir, ds: DatasetSplit, vocab: Vocab | None = None) -> None:
    import os

    vocab = vocab or Vocab()
    os.makedirs(outdir, exist_ok=True)
    for name in ("train", "valid", "test"):
        save_split(os.path.join(outdir, f"{name}.txt"), ds.split(name),
                   ds.feat_dim, ds.seed, vocab, name)


def load_dataset(outdir, vocab: Vocab | None = None) -> DatasetSplit:
    import os

    vocab = vocab or Vocab()
    parts = {}
    meta = None
    for name in ("train", "valid", "test"):
        parts[name], meta = load_split(os.path.join(outdir, f"{name}.txt"), vocab)
    return DatasetSplit(train=parts["train"], valid=parts["valid"],
                        test=parts["test"], seed=meta["seed"],
                        feat_dim=meta["feat_dim"])


def save_targets(path, targets: Sequence[tuple[int, ...]], seed: int,
                 vocab: Vocab) -> None:
    lines = [f"toyspeech-targets v1 vocab={vocab.hash()} seed={seed}"]
    for t in targets:
        lines.append(" ".join(vocab.to_words(t)))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_targets(path, vocab: Vocab | None = None) -> list[tuple[int, ...]]:
    vocab = vocab or Vocab()
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("toyspeech-targets v1"):
        raise DataError(f"{path}: bad targets header")
    head = dict(kv.split("=", 1) for kv in lines[0].split()[2:])
    if head["vocab"] != vocab.hash():
        raise DataError(f"{path}: vocab hash mismatch")
    return [tuple(vocab.to_ids(line.split())) for line in lines[1:] if line]
