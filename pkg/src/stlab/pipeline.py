"""Cascade and end-to-end composition of the recognizer and translator.

End-to-end path: recognizer hidden states -> (compression over greedy
CTC label runs) -> (adapter) -> (target-language tag row prepended) ->
translator encoder -> decoder. No gradient crosses the argmax path
choice; everything else is differentiable end to end.

Cascade path: greedy CTC transcript -> word tokenization -> translator
token ids (unknown words become UNK) -> greedy generation. An empty
transcript degenerates to a single-BOS source so generation always has
an encoder state to attend over.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import autodiff as ad
from . import metrics
from .autodiff import Tensor
from .ctc import SegmentMap, collapse, compress, greedy_path
from .data import Dataset
from .errors import ConfigError
from .models import TGT_TAG, Model

DEFAULT_MAX_LEN = 12


@dataclass(frozen=True)
class PipelineFlags:
    """End-to-end path switches; the cascade ignores all of these."""

    use_compression: bool = True
    use_adapter: bool = False
    use_target_forcing: bool = False
    drop_blank_segments: bool = False
    pool_excludes_tag: bool = False
    target_tag: str = TGT_TAG


def prepend_target(model: Model, leaves: dict[str, Tensor], states: Tensor, tag_id: int) -> Tensor:
    """Row 0 becomes the tag embedding; the states follow unchanged."""
    model.token_vocab.validate_ids([tag_id])
    tag_row = ad.gather_rows(leaves["mt.emb"], [tag_id])
    if states.shape[0] == 0:
        return tag_row
    return ad.concat([tag_row, states], axis=0)


class E2eModel:
    def __init__(self, model: Model, flags: PipelineFlags = PipelineFlags()):
        model.config.validate()
        self.model = model
        self.flags = flags
        self.tag_id = model.token_vocab.id_of(flags.target_tag)

    def encoder_input(
        self, leaves: dict[str, Tensor], feats: Tensor
    ) -> tuple[Tensor, SegmentMap | None]:
        """Speech front end up to (but excluding) the translator encoder."""
        m, flags = self.model, self.flags
        hidden, log_probs = m.asr_forward(leaves, feats)
        states, seg_map = hidden, None
        if flags.use_compression:
            labels = greedy_path(log_probs.data)
            states, seg_map = compress(
                hidden,
                labels,
                blank=m.char_vocab.blank_id,
                drop_blank_segments=flags.drop_blank_segments,
            )
        if flags.use_adapter:
            states = m.adapter_forward(leaves, states)
        if flags.use_target_forcing:
            states = prepend_target(m, leaves, states, self.tag_id)
        return states, seg_map

    def encode(self, leaves: dict[str, Tensor], feats: Tensor) -> Tensor:
        states, _ = self.encoder_input(leaves, feats)
        return self.model.mt_encode_states(leaves, states)

    def forward(
        self, leaves: dict[str, Tensor], feats: Tensor, target_ids: Sequence[int]
    ) -> Tensor:
        """Teacher-forced translation logits from speech features."""
        return self.model.mt_decode_teacher_forced(leaves, self.encode(leaves, feats), target_ids)

    def pooled_audio(self, leaves: dict[str, Tensor], feats: Tensor) -> Tensor:
        """Time-averaged translator-encoder output of the speech path."""
        enc = self.encode(leaves, feats)
        if self.flags.pool_excludes_tag and self.flags.use_target_forcing:
            if enc.shape[0] < 2:
                raise ConfigError("pool_excludes_tag needs at least one non-tag row")
            enc = ad.slice_rows(enc, 1, enc.shape[0])
        return metrics.pool_encoder_states(enc)

    def generate(
        self, leaves: dict[str, Tensor], feats: Tensor, max_len: int = DEFAULT_MAX_LEN
    ) -> list[int]:
        enc = self.encode(leaves, feats)
        start = self.model.token_vocab.id_of(self.model.config.decoder_start)
        return self.model.mt_generate_greedy(leaves, enc, start, max_len)


def pooled_text(model: Model, leaves: dict[str, Tensor], token_ids: Sequence[int]) -> Tensor:
    """Time-averaged translator-encoder output of a token sequence."""
    return metrics.pool_encoder_states(model.mt_encode(leaves, token_ids))


class CascadeModel:
    def __init__(self, model: Model):
        model.config.validate()
        self.model = model

    def transcribe(self, leaves: dict[str, Tensor], feats: Tensor) -> str:
        m = self.model
        _, log_probs = m.asr_forward(leaves, feats)
        chars = collapse(greedy_path(log_probs.data), m.char_vocab.blank_id)
        return m.char_vocab.decode(chars)

    def source_ids(self, transcript: str) -> list[int]:
        words = [w for w in transcript.split(" ") if w]
        ids = self.model.token_vocab.encode(words, unk_ok=True)
        return ids if ids else [self.model.token_vocab.bos_id]

    def translate(
        self, leaves: dict[str, Tensor], feats: Tensor, max_len: int = DEFAULT_MAX_LEN
    ) -> tuple[list[int], str]:
        """(translation token ids, intermediate transcript)."""
        m = self.model
        transcript = self.transcribe(leaves, feats)
        enc = m.mt_encode(leaves, self.source_ids(transcript))
        start = m.token_vocab.id_of(m.config.decoder_start)
        return m.mt_generate_greedy(leaves, enc, start, max_len), transcript


# ---------------------------------------------------------------------------
# Task evaluation over a dataset split.
# ---------------------------------------------------------------------------


def evaluate_asr(model: Model, dataset: Dataset) -> float:
    """Corpus word error rate of greedy CTC transcripts."""
    cascade = CascadeModel(model)
    leaves = model.leaves()
    edits = 0.0
    words = 0
    for ex in dataset.examples:
        ref = ex.transcript.split(" ")
        hyp = [w for w in cascade.transcribe(leaves, Tensor(ex.features)).split(" ") if w]
        edits += metrics.wer(ref, hyp) * len(ref)
        words += len(ref)
    return edits / words


def evaluate_mt(model: Model, dataset: Dataset, max_len: int = DEFAULT_MAX_LEN) -> float:
    """Corpus BLEU of text-to-text translation from reference transcripts."""
    leaves = model.leaves()
    start = model.token_vocab.id_of(model.config.decoder_start)
    refs, hyps = [], []
    for ex in dataset.examples:
        ids = model.token_vocab.encode(ex.transcript.split(" "))
        out = model.mt_generate_greedy(leaves, model.mt_encode(leaves, ids), start, max_len)
        hyps.append(model.token_vocab.decode(out))
        refs.append(list(ex.translation))
    return metrics.bleu(refs, hyps)


def evaluate_st_cascade(model: Model, dataset: Dataset, max_len: int = DEFAULT_MAX_LEN) -> float:
    """Corpus BLEU of the cascade speech-to-translation path."""
    cascade = CascadeModel(model)
    leaves = model.leaves()
    refs, hyps = [], []
    for ex in dataset.examples:
        out, _ = cascade.translate(leaves, Tensor(ex.features), max_len)
        hyps.append(model.token_vocab.decode(out))
        refs.append(list(ex.translation))
    return metrics.bleu(refs, hyps)


def evaluate_st_e2e(
    model: Model,
    dataset: Dataset,
    flags: PipelineFlags,
    max_len: int = DEFAULT_MAX_LEN,
) -> float:
    """Corpus BLEU of the end-to-end speech-to-translation path."""
    e2e = E2eModel(model, flags)
    leaves = model.leaves()
    refs, hyps = [], []
    for ex in dataset.examples:
        out = e2e.generate(leaves, Tensor(ex.features), max_len)
        hyps.append(model.token_vocab.decode(out))
        refs.append(list(ex.translation))
    return metrics.bleu(refs, hyps)
