"""Algorithms over the CTC output space: likelihood, forced alignment, alignment generation."""

from .align import (
    alignment_record,
    beam_search_align,
    best_path_align,
    collapse,
    esa_sample,
    prefix_beam_search,
    read_alignments,
    token_starts,
    trigger_mask,
    viterbi_align,
    viterbi_batch,
    write_alignments,
)
from .loss import ctc_grad_oracle, ctc_logprob, ctc_loss, is_feasible, required_frames
from .types import Alignment, EsaConfig, TriggerMask, Vocabulary

__all__ = [
    "Alignment",
    "EsaConfig",
    "TriggerMask",
    "Vocabulary",
    "alignment_record",
    "beam_search_align",
    "best_path_align",
    "collapse",
    "ctc_grad_oracle",
    "ctc_logprob",
    "ctc_loss",
    "esa_sample",
    "is_feasible",
    "prefix_beam_search",
    "read_alignments",
    "required_frames",
    "token_starts",
    "trigger_mask",
    "viterbi_align",
    "viterbi_batch",
    "write_alignments",
]
