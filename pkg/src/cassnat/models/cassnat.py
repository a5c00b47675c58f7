"""CTC-alignment-based non-autoregressive model: encoder -> TAEE -> SAD -> MAD -> token head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ctc.align import best_path_align, collapse, log_softmax_np, trigger_mask, viterbi_batch
from ..ctc.loss import ctc_loss
from ..nnet import NCM, TM, Linear, MadBlock, Module, SadBlock, Taee, ncm_mask
from ..numcore import Tensor, no_grad, ops
from .common import ctc_targets, feasible_rows, mask_blank, pad_ids, smoothed_nll
from .config import LossWeights, ModelConfig
from .encoder import Encoder, EncoderOutput


@dataclass
class DecoderOutput:
    logits: Tensor  # B x (U'+1) x V
    valid: np.ndarray  # B x (U'+1)
    mid_logits: Tensor | None
    taes: Tensor
    sad_out: Tensor
    mad_out: Tensor


def batch_trigger(alignments, frame_lengths, t_max: int, expansion: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-utterance trigger rows into B x (Umax+1) x T'max plus a token validity mask.

    Padded token rows look at frame 0 only; their outputs are ignored.
    """
    rows = [trigger_mask(np.asarray(a)[:n], expansion, n).attention_rows() for a, n in zip(alignments, frame_lengths)]
    u_max = max(r.shape[0] for r in rows)
    tm = np.zeros((len(rows), u_max, t_max), dtype=bool)
    valid = np.zeros((len(rows), u_max), dtype=bool)
    for i, r in enumerate(rows):
        tm[i, : r.shape[0], : r.shape[1]] = r
        valid[i, : r.shape[0]] = True
        tm[i, r.shape[0] :, 0] = True
    return tm, valid


class CassNat(Module):
    kind = "cassnat"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, weights: LossWeights | None = None):
        self.cfg = cfg
        self.weights = weights or LossWeights()
        self.encoder = Encoder(cfg, rng)
        self.taee = Taee(cfg.d_model, cfg.n_heads, rng, cfg.dropout)
        blk = cfg.block(cfg.dec_conv)
        self.sad = [SadBlock(cfg.d_model, cfg.n_heads, blk, rng, cfg.rel_pos_k, NCM) for _ in range(cfg.n_sad)]
        self.mad = [MadBlock(cfg.d_model, cfg.n_heads, blk, rng, cfg.rel_pos_k, cfg.mad_self_mask)
                    for _ in range(cfg.n_mad)]
        self.head = Linear(cfg.d_model, cfg.vocab_size, rng)
        self.mid_head = Linear(cfg.d_model, cfg.vocab_size, rng) if cfg.mad_tap else None

    def decode_from_encoder(self, enc: EncoderOutput, alignments, with_mid: bool = False) -> DecoderOutput:
        """Run TAEE, SAD and MAD given one alignment (over encoder frames) per row."""
        tm, valid = batch_trigger(alignments, enc.lengths, enc.h.shape[1], self.cfg.trigger_expansion)
        taes = self.taee(enc.h, tm)
        x = taes
        for block in self.sad:
            x = block(x, valid)
        sad_out = x
        src = tm if self.cfg.mad_src_mask == TM else ncm_mask(valid, enc.valid)
        mid = None
        for i, block in enumerate(self.mad, start=1):
            x = block(x, valid, enc.h, src)
            if with_mid and self.mid_head is not None and i == self.cfg.mad_tap:
                mid = mask_blank(self.mid_head(x), self.cfg.blank_id)
        logits = mask_blank(self.head(x), self.cfg.blank_id)
        return DecoderOutput(logits, valid, mid, taes, sad_out, x)

    def forward(self, features, lengths, alignments, with_mid: bool = False) -> tuple[EncoderOutput, DecoderOutput]:
        enc = self.encoder(features, lengths, with_mid=with_mid)
        return enc, self.decode_from_encoder(enc, alignments, with_mid)

    def loss(self, batch, ctc_only: bool = False) -> tuple[Tensor, dict]:
        cfg, w = self.cfg, self.weights
        enc = self.encoder(batch.features, batch.lengths, with_mid=True)
        tg, tl = ctc_targets(batch)
        ctc_f = ctc_loss(enc.ctc_logits, enc.lengths, tg, tl, cfg.blank_id)
        ok = feasible_rows(ctc_f.data)
        diag = {"skipped": int(len(batch) - len(ok))}
        ctc_f = ops.mean(ops.take(ctc_f, ok))
        diag["ctc_final"] = ctc_f.item()
        if enc.mid_ctc_logits is not None:
            ctc_m = ops.mean(ops.take(ctc_loss(enc.mid_ctc_logits, enc.lengths, tg, tl, cfg.blank_id), ok))
            diag["ctc_mid"] = ctc_m.item()
            ctc = ops.add(ops.scale(ctc_f, w.lambda_ctc), ops.scale(ctc_m, 1.0 - w.lambda_ctc))
        else:
            ctc = ctc_f
        diag["train_lper"] = float(np.mean([
            len(collapse(best_path_align(enc.ctc_logits.data[i, : enc.lengths[i]]), cfg.blank_id)) != tl[i]
            for i in range(len(batch))
        ]))
        total = ops.scale(ctc, w.lambda_ctc_global)
        if ctc_only or not np.isfinite(total.item()):
            return total, diag

        # the alignment is a constant for this step
        logp = log_softmax_np(enc.ctc_logits.data[ok])
        paths = viterbi_batch(logp, enc.lengths[ok], tg[ok], tl[ok], cfg.blank_id)
        sub = EncoderOutput(ops.take(enc.h, ok), enc.lengths[ok], enc.valid[ok], enc.ctc_logits, None)
        dec = self.decode_from_encoder(sub, paths, with_mid=True)
        outputs, _ = pad_ids([tg[i, : tl[i]].tolist() + [cfg.eos_id] for i in ok], cfg.eos_id)
        weights = dec.valid.astype(float)
        ce_f = ops.mean(smoothed_nll(dec.logits, outputs, weights, cfg.label_smoothing, cfg.blank_id))
        diag["ce_final"] = ce_f.item()
        if dec.mid_logits is not None:
            ce_m = ops.mean(smoothed_nll(dec.mid_logits, outputs, weights, cfg.label_smoothing, cfg.blank_id))
            diag["ce_mid"] = ce_m.item()
            ce = ops.add(ops.scale(ce_f, w.lambda_ce), ops.scale(ce_m, 1.0 - w.lambda_ce))
        else:
            ce = ce_f
        return ops.add(total, ce), diag

    # -- inference ------------------------------------------------------------------

    def encode(self, features: np.ndarray) -> EncoderOutput:
        with no_grad():
            return self.encoder(features[None], [features.shape[0]], with_mid=False)

    def decode_alignments(self, enc: EncoderOutput, alignments) -> tuple[list[list[int]], np.ndarray]:
        """Decode one encoded utterance under each candidate alignment, in one batch.

        Returns the hypotheses (per-position argmax, cut at the first EOS) and
        each candidate's decoder confidence, the summed max log-probability.
        The last position of every candidate is its EOS slot and is never
        emitted, so an alignment that collapses to nothing decodes to nothing.
        """
        n = len(alignments)
        with no_grad():
            tiled = EncoderOutput(Tensor(np.broadcast_to(enc.h.data, (n,) + enc.h.shape[1:]).copy()),
                                  np.repeat(enc.lengths, n), np.repeat(enc.valid, n, axis=0), enc.ctc_logits, None)
            dec = self.decode_from_encoder(tiled, alignments)
        return self._argmax(dec)

    def _argmax(self, dec: DecoderOutput) -> tuple[list[list[int]], np.ndarray]:
        x = dec.logits.data
        z = x - x.max(-1, keepdims=True)
        best = -np.log(np.exp(z).sum(-1))  # log-prob of the argmax
        ids = x.argmax(-1)
        out, conf = [], np.zeros(len(ids))
        for i in range(len(ids)):
            n = int(dec.valid[i].sum())
            row = ids[i, : n - 1].tolist()
            conf[i] = best[i, :n].sum()
            out.append(row[: row.index(self.cfg.eos_id)] if self.cfg.eos_id in row else row)
        return out, conf

    def bpa_batch(self, batch) -> list[list[int]]:
        """Decode a padded batch with best-path alignments (dev-set evaluation)."""
        with no_grad():
            enc = self.encoder(batch.features, batch.lengths, with_mid=False)
            alis = [best_path_align(enc.ctc_logits.data[i, : enc.lengths[i]]).ids for i in range(len(batch))]
            dec = self.decode_from_encoder(enc, alis)
        return self._argmax(dec)[0]
