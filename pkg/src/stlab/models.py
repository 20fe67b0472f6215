"""Vocabularies and the two sequence modules: speech recognizer and translator.

The recognizer is an input projection plus a BLSTM stack with a CTC
head over characters. The translator is a shared token embedding, a
BLSTM (or single-head self-attention) encoder, and a unidirectional
LSTM decoder with dot-product cross-attention whose output projection
can be tied to the embedding table.

Decoder logits are strictly causal: inputs are shifted right by one
zero row, so logits[t] depends on target_ids[0..t-1] only. Training
therefore feeds [start, w1..wU, EOS] and masks position 0; greedy
generation replays the same shifted path step by step.

All forward methods take a leaves dict (name -> Tensor) built from the
ParameterStore, so callers control which groups carry gradients.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .errors import ConfigError, DataFormatError, ShapeError, VocabError

CHECKPOINT_FORMAT = "stlab-checkpoint"
CHECKPOINT_VERSION = 1

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SRC_TAG, TGT_TAG = "<src>", "<tgt>"
SPECIALS = (PAD, BOS, EOS, UNK, SRC_TAG, TGT_TAG)


class CharVocab:
    """Dense character ids; the CTC blank is one past the last character."""

    def __init__(self, chars: Sequence[str]):
        chars = list(chars)
        if not chars or len(set(chars)) != len(chars):
            raise VocabError("character set must be non-empty and unique")
        if any(len(c) != 1 for c in chars):
            raise VocabError("character symbols must be single characters")
        self._chars = chars
        self._ids = {c: i for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self._chars)

    @property
    def blank_id(self) -> int:
        return len(self._chars)

    @property
    def n_classes(self) -> int:
        return len(self._chars) + 1

    @property
    def symbols(self) -> list[str]:
        return list(self._chars)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._ids[c] for c in text]
        except KeyError as exc:
            raise VocabError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        if any(i < 0 or i >= len(self._chars) for i in ids):
            raise VocabError("character id out of range")
        return "".join(self._chars[i] for i in ids)


class TokenVocab:
    """Word-level tokens with reserved pad/bos/eos/unk and language tags."""

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if len(set(words)) != len(words):
            raise VocabError("duplicate words in vocabulary")
        if any(w in SPECIALS for w in words):
            raise VocabError("words may not collide with reserved symbols")
        self._tokens = list(SPECIALS) + words
        self._ids = {t: i for i, t in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabError(f"token {token!r} not in vocabulary") from None

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    def encode(self, words: Sequence[str], unk_ok: bool = False) -> list[int]:
        out = []
        for w in words:
            if w in self._ids:
                out.append(self._ids[w])
            elif unk_ok:
                out.append(self.unk_id)
            else:
                raise VocabError(f"token {w!r} not in vocabulary")
        return out

    def decode(self, ids: Sequence[int]) -> list[str]:
        self.validate_ids(ids)
        return [self._tokens[i] for i in ids]

    def validate_ids(self, ids: Sequence[int]) -> None:
        if any(i < 0 or i >= len(self._tokens) for i in ids):
            raise VocabError("token id out of range")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs; vocab contents live beside this in the checkpoint."""

    feature_dim: int
    hidden_dim: int = 32
    asr_layers: int = 2
    mt_encoder_layers: int = 1
    mt_encoder_kind: str = "blstm"
    adapter_layers: int = 3
    tie_output: bool = True
    decoder_start: str = BOS

    def validate(self) -> None:
        if self.hidden_dim < 2 or self.hidden_dim % 2:
            raise ConfigError("hidden_dim must be even and at least 2")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.mt_encoder_kind not in ("blstm", "attention"):
            raise ConfigError(f"unknown encoder kind {self.mt_encoder_kind!r}")
        if min(self.asr_layers, self.mt_encoder_layers, self.adapter_layers) < 1:
            raise ConfigError("layer counts must be positive")


GROUPS = ("asr", "mt_embedding", "mt_encoder", "mt_decoder", "adapter")


def _lstm_step(x, h, c, wx, wh, b):
    k = wh.shape[0]
    a = x @ wx + h @ wh + b
    gi = _sig(a[:k])
    gf = _sig(a[k : 2 * k])
    gc = np.tanh(a[2 * k : 3 * k])
    go = _sig(a[3 * k :])
    c2 = gf * c + gi * gc
    return go * np.tanh(c2), c2


def _sig(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _softmax_vec(x):
    e = np.exp(x - x.max())
    return e / e.sum()


class Model:
    """Parameter owner for the recognizer, translator, and adapter."""

    def __init__(
        self,
        config: ModelConfig,
        char_vocab: CharVocab,
        token_vocab: TokenVocab,
        seed: int | None = 0,
        _init: bool = True,
    ):
        config.validate()
        self.config = config
        self.char_vocab = char_vocab
        self.token_vocab = token_vocab
        self.store = ParameterStore()
        if _init:
            self._init_params(np.random.default_rng(seed))

    # -- parameter layout ---------------------------------------------------

    def _init_params(self, rng) -> None:
        cfg = self.config
        h = cfg.hidden_dim
        self._weight(rng, "asr.in.w", (cfg.feature_dim, h), "asr")
        self._bias("asr.in.b", (h,), "asr")
        for layer in range(cfg.asr_layers):
            self._blstm_params(rng, f"asr.blstm{layer}", h, "asr")
        self._weight(rng, "asr.ctc.w", (h, self.char_vocab.n_classes), "asr")
        self._bias("asr.ctc.b", (self.char_vocab.n_classes,), "asr")

        self._weight(rng, "mt.emb", (len(self.token_vocab), h), "mt_embedding")

        for layer in range(cfg.mt_encoder_layers):
            if cfg.mt_encoder_kind == "blstm":
                self._blstm_params(rng, f"mt.enc{layer}", h, "mt_encoder")
            else:
                for w in ("wq", "wk", "wv", "wo"):
                    self._weight(rng, f"mt.enc{layer}.{w}", (h, h), "mt_encoder")
                self._bias(f"mt.enc{layer}.b", (h,), "mt_encoder")

        self._weight(rng, "mt.dec.wx", (h, 4 * h), "mt_decoder")
        self._weight(rng, "mt.dec.wh", (h, 4 * h), "mt_decoder")
        self._lstm_bias("mt.dec.b", h, "mt_decoder")
        self._weight(rng, "mt.dec.comb.w", (2 * h, h), "mt_decoder")
        self._bias("mt.dec.comb.b", (h,), "mt_decoder")
        self._bias("mt.dec.out.b", (len(self.token_vocab),), "mt_decoder")
        if not cfg.tie_output:
            self._weight(rng, "mt.dec.out.w", (h, len(self.token_vocab)), "mt_decoder")

        for layer in range(cfg.adapter_layers):
            self._blstm_params(rng, f"adapter{layer}", h, "adapter")

    def _weight(self, rng, name, shape, group):
        self.store.register(name, rng.uniform(-0.1, 0.1, size=shape), group)

    def _bias(self, name, shape, group):
        self.store.register(name, np.zeros(shape), group)

    def _lstm_bias(self, name, k, group):
        b = np.zeros(4 * k)
        b[k : 2 * k] = 1.0  # forget gate starts open
        self.store.register(name, b, group)

    def _blstm_params(self, rng, prefix, width, group):
        k = width // 2
        for d in ("fwd", "bwd"):
            self._weight(rng, f"{prefix}.{d}.wx", (width, 4 * k), group)
            self._weight(rng, f"{prefix}.{d}.wh", (k, 4 * k), group)
            self._lstm_bias(f"{prefix}.{d}.b", k, group)

    def leaves(self, trainable_groups: Sequence[str] = ()) -> dict[str, Tensor]:
        return self.store.leaves(trainable_groups)

    # -- speech recognizer --------------------------------------------------

    def asr_forward(self, leaves: dict[str, Tensor], feats: Tensor) -> tuple[Tensor, Tensor]:
        """features (T, F) -> (hidden (T, H), ctc log-probs (T, V+1))."""
        if feats.data.ndim != 2 or feats.shape[1] != self.config.feature_dim:
            raise ShapeError(
                f"asr_forward: expected T x {self.config.feature_dim}, got {feats.shape}"
            )
        if feats.shape[0] == 0:
            raise ShapeError("asr_forward: empty feature matrix")
        h = ad.add(ad.matmul(feats, leaves["asr.in.w"]), leaves["asr.in.b"])
        for layer in range(self.config.asr_layers):
            h = self._blstm(leaves, f"asr.blstm{layer}", h)
        logits = ad.add(ad.matmul(h, leaves["asr.ctc.w"]), leaves["asr.ctc.b"])
        return h, ad.log_softmax_rows(logits)

    def _blstm(self, leaves, prefix, x):
        fwd = ad.lstm_sequence(
            x, leaves[f"{prefix}.fwd.wx"], leaves[f"{prefix}.fwd.wh"], leaves[f"{prefix}.fwd.b"]
        )
        bwd = ad.lstm_sequence(
            x,
            leaves[f"{prefix}.bwd.wx"],
            leaves[f"{prefix}.bwd.wh"],
            leaves[f"{prefix}.bwd.b"],
            reverse=True,
        )
        return ad.concat([fwd, bwd], axis=1)

    # -- translator ---------------------------------------------------------

    def mt_embed(self, leaves: dict[str, Tensor], token_ids: Sequence[int]) -> Tensor:
        self.token_vocab.validate_ids(token_ids)
        return ad.gather_rows(leaves["mt.emb"], token_ids)

    def mt_encode_states(self, leaves: dict[str, Tensor], states: Tensor) -> Tensor:
        """Encoder over externally supplied (S, H) vectors."""
        if states.data.ndim != 2 or states.shape[1] != self.config.hidden_dim:
            raise ShapeError(
                f"mt_encode_states: expected S x {self.config.hidden_dim}, got {states.shape}"
            )
        h = states
        for layer in range(self.config.mt_encoder_layers):
            if self.config.mt_encoder_kind == "blstm":
                h = self._blstm(leaves, f"mt.enc{layer}", h)
            else:
                h = self._self_attention(leaves, f"mt.enc{layer}", h)
        return h

    def _self_attention(self, leaves, prefix, x):
        q = ad.matmul(x, leaves[f"{prefix}.wq"])
        k = ad.matmul(x, leaves[f"{prefix}.wk"])
        v = ad.matmul(x, leaves[f"{prefix}.wv"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(self.config.hidden_dim))
        ctx = ad.matmul(ad.softmax_rows(scores), v)
        return ad.tanh(ad.add(ad.matmul(ctx, leaves[f"{prefix}.wo"]), leaves[f"{prefix}.b"]))

    def mt_encode(self, leaves: dict[str, Tensor], token_ids: Sequence[int]) -> Tensor:
        return self.mt_encode_states(leaves, self.mt_embed(leaves, token_ids))

    def mt_decode_teacher_forced(
        self, leaves: dict[str, Tensor], enc: Tensor, target_ids: Sequence[int]
    ) -> Tensor:
        """Strictly causal logits (U, |vocab|); row t sees target_ids[0..t-1]."""
        if len(target_ids) == 0:
            raise ShapeError("mt_decode_teacher_forced: empty target")
        self.token_vocab.validate_ids(target_ids)
        h = self.config.hidden_dim
        zero = Tensor(np.zeros((1, h)))
        if len(target_ids) > 1:
            shifted = ad.concat([zero, self.mt_embed(leaves, target_ids[:-1])], axis=0)
        else:
            shifted = zero
        states = ad.lstm_sequence(shifted, leaves["mt.dec.wx"], leaves["mt.dec.wh"], leaves["mt.dec.b"])
        scores = ad.scale(ad.matmul(states, ad.transpose(enc)), 1.0 / math.sqrt(h))
        ctx = ad.matmul(ad.softmax_rows(scores), enc)
        comb = ad.tanh(
            ad.add(ad.matmul(ad.concat([states, ctx], axis=1), leaves["mt.dec.comb.w"]), leaves["mt.dec.comb.b"])
        )
        if self.config.tie_output:
            proj = ad.matmul(comb, ad.transpose(leaves["mt.emb"]))
        else:
            proj = ad.matmul(comb, leaves["mt.dec.out.w"])
        return ad.add(proj, leaves["mt.dec.out.b"])

    def mt_generate_greedy(
        self, leaves: dict[str, Tensor], enc: Tensor, start_id: int, max_len: int
    ) -> list[int]:
        """Greedy decode; stops at EOS or max_len tokens (EOS not returned)."""
        if max_len < 1:
            raise ConfigError("max_len must be at least 1")
        self.token_vocab.validate_ids([start_id])
        if enc.shape[0] == 0:
            raise ShapeError("mt_generate_greedy: empty encoder states")
        h_dim = self.config.hidden_dim
        emb = leaves["mt.emb"].data
        wx, wh, b = leaves["mt.dec.wx"].data, leaves["mt.dec.wh"].data, leaves["mt.dec.b"].data
        comb_w, comb_b = leaves["mt.dec.comb.w"].data, leaves["mt.dec.comb.b"].data
        out_b = leaves["mt.dec.out.b"].data
        out_w = emb.T if self.config.tie_output else leaves["mt.dec.out.w"].data
        enc_t = enc.data
        scale = 1.0 / math.sqrt(h_dim)

        h = np.zeros(h_dim)
        c = np.zeros(h_dim)
        # replay the shifted path: the zero row precedes the start token
        h, c = _lstm_step(np.zeros(h_dim), h, c, wx, wh, b)
        out: list[int] = []
        next_in = emb[start_id]
        while len(out) < max_len:
            h, c = _lstm_step(next_in, h, c, wx, wh, b)
            attn = _softmax_vec((h @ enc_t.T) * scale)
            ctx = attn @ enc_t
            comb = np.tanh(np.concatenate([h, ctx]) @ comb_w + comb_b)
            logits = comb @ out_w + out_b
            tok = int(np.argmax(logits))
            if tok == self.token_vocab.eos_id:
                break
            out.append(tok)
            next_in = emb[tok]
        return out

    # -- adapter ------------------------------------------------------------

    def adapter_forward(self, leaves: dict[str, Tensor], states: Tensor) -> Tensor:
        if states.data.ndim != 2 or states.shape[1] != self.config.hidden_dim:
            raise ShapeError(
                f"adapter_forward: expected R x {self.config.hidden_dim}, got {states.shape}"
            )
        h = states
        for layer in range(self.config.adapter_layers):
            h = self._blstm(leaves, f"adapter{layer}", h)
        return h


# ---------------------------------------------------------------------------
# Checkpoint I/O: one JSON file, stable bytes for fixed seed and config.
# ---------------------------------------------------------------------------


def save_checkpoint(model: Model, path: str) -> None:
    params = {}
    for name in sorted(model.store.names()):
        arr = model.store.get(name)
        params[name] = {
            "group": model.store.group_of(name),
            "shape": list(arr.shape),
            "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
        }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "char_vocab": model.char_vocab.symbols,
        "token_vocab": model.token_vocab.tokens[len(SPECIALS) :],
        "params": params,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def load_checkpoint(path: str) -> Model:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError("not a model checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {doc.get('version')!r}")
    config = ModelConfig(**doc["config"])
    model = Model(
        config,
        CharVocab(doc["char_vocab"]),
        TokenVocab(doc["token_vocab"]),
        _init=False,
    )
    for name, entry in doc["params"].items():
        raw = base64.b64decode(entry["data"])
        arr = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"])
        model.store.register(name, arr, entry["group"])
    expected = Model(config, model.char_vocab, model.token_vocab, seed=0)
    if sorted(expected.store.names()) != sorted(model.store.names()):
        raise DataFormatError("checkpoint parameter names do not match its config")
    for name in expected.store.names():
        if expected.store.get(name).shape != model.store.get(name).shape:
            raise DataFormatError(f"checkpoint parameter {name} has wrong shape")
    return model
