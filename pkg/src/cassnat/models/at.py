"""Autoregressive baseline: conformer encoder with a CTC head plus a causal attention decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ctc.loss import ctc_loss
from ..errors import ContractError
from ..nnet import CM, Linear, MadBlock, Module, ncm_mask, param, sinusoidal
from ..numcore import Tensor, no_grad, ops
from .common import ctc_targets, feasible_rows, mask_blank, pad_ids, smoothed_nll, token_logprob
from .config import LossWeights, ModelConfig
from .encoder import Encoder, EncoderOutput


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float


class ATModel(Module):
    kind = "at"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, weights: LossWeights | None = None):
        self.cfg = cfg
        self.weights = weights or LossWeights()
        self.encoder = Encoder(cfg, rng)
        self.embed = param(rng.normal(scale=cfg.d_model ** -0.5, size=(cfg.vocab_size, cfg.d_model)))
        # no convolution here: a same-padded kernel would see future tokens
        self.blocks = [MadBlock(cfg.d_model, cfg.n_heads, cfg.block(False), rng, None, self_kind=CM)
                       for _ in range(cfg.n_at_dec)]
        self.head = Linear(cfg.d_model, cfg.vocab_size, rng)

    def decoder_logits(self, h: Tensor, frame_valid: np.ndarray, inputs: np.ndarray, in_valid: np.ndarray) -> Tensor:
        d = self.cfg.d_model
        x = ops.add(ops.scale(ops.embedding(self.embed, inputs), np.sqrt(d)), sinusoidal(inputs.shape[1], d))
        x = self.dropout(x, self.cfg.dropout)
        src = ncm_mask(in_valid, frame_valid)
        for block in self.blocks:
            x = block(x, in_valid, h, src)
        return mask_blank(self.head(x), self.cfg.blank_id)

    def _teacher_forcing(self, seqs):
        eos = self.cfg.eos_id
        inputs, in_valid = pad_ids([[eos] + list(s) for s in seqs], eos)
        outputs, _ = pad_ids([list(s) + [eos] for s in seqs], eos)
        return inputs, in_valid, outputs

    def loss(self, batch, ctc_only: bool = False) -> tuple[Tensor, dict]:
        if (batch.target_lengths == 0).any():
            raise ContractError("empty target")
        enc = self.encoder(batch.features, batch.lengths, with_mid=False)
        tg, tl = ctc_targets(batch)
        ctc = ctc_loss(enc.ctc_logits, enc.lengths, tg, tl, self.cfg.blank_id)
        ok = feasible_rows(ctc.data)
        skipped = len(batch) - len(ok)
        ctc_mean = ops.mean(ops.take(ctc, ok))
        diag = {"ctc_final": ctc_mean.item(), "skipped": skipped}
        if ctc_only:
            return ctc_mean, diag
        seqs = [batch.targets[i, : batch.target_lengths[i]].tolist() for i in ok]
        inputs, in_valid, outputs = self._teacher_forcing(seqs)
        h = ops.take(enc.h, ok)
        logits = self.decoder_logits(h, enc.valid[ok], inputs, in_valid)
        ce = ops.mean(smoothed_nll(logits, outputs, in_valid.astype(float), self.cfg.label_smoothing, self.cfg.blank_id))
        w = self.weights.at_ctc_weight
        total = ops.add(ops.scale(ctc_mean, w), ops.scale(ce, 1.0 - w))
        diag["ce_final"] = ce.item()
        return total, diag

    # -- inference ------------------------------------------------------------------

    def encode(self, features: np.ndarray) -> EncoderOutput:
        with no_grad():
            return self.encoder(features[None], [features.shape[0]], with_mid=False)

    def score_encoded(self, enc: EncoderOutput, hyps) -> np.ndarray:
        """Teacher-forced log P(hyp + EOS | X) for each hypothesis, in one batch."""
        if not hyps:
            return np.zeros(0)
        with no_grad():
            inputs, in_valid, outputs = self._teacher_forcing(hyps)
            n = len(hyps)
            h = Tensor(np.broadcast_to(enc.h.data, (n,) + enc.h.shape[1:]).copy())
            logits = self.decoder_logits(h, np.repeat(enc.valid, n, axis=0), inputs, in_valid)
            return token_logprob(logits, outputs, in_valid.astype(float))

    def score(self, features: np.ndarray, hyps) -> np.ndarray:
        return self.score_encoded(self.encode(features), [list(h) for h in hyps])

    def decode(self, features: np.ndarray, beam: int = 1, enc: EncoderOutput | None = None) -> Hypothesis:
        """Left-to-right search; the beam keeps the ``beam`` best expansions overall.

        Width 1 is exactly greedy decoding. Hypotheses stop at EOS or at
        2 T' tokens, where EOS is forced.
        """
        if beam < 1:
            raise ContractError("beam must be >= 1")
        enc = enc or self.encode(features)
        eos, v = self.cfg.eos_id, self.cfg.vocab_size
        max_len = 2 * int(enc.lengths[0])
        alive = [Hypothesis([], 0.0)]
        done: list[Hypothesis] = []
        with no_grad():
            for step in range(max_len + 1):
                n = len(alive)
                inputs, in_valid = pad_ids([[eos] + h.tokens for h in alive], eos)
                h = Tensor(np.broadcast_to(enc.h.data, (n,) + enc.h.shape[1:]).copy())
                logits = self.decoder_logits(h, np.repeat(enc.valid, n, axis=0), inputs, in_valid).data[:, -1]
                z = logits - logits.max(-1, keepdims=True)
                logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
                if step == max_len:
                    done += [Hypothesis(a.tokens, a.score + float(logp[i, eos])) for i, a in enumerate(alive)]
                    break
                cand = []
                for i, a in enumerate(alive):
                    for tok in range(v):
                        if tok != self.cfg.blank_id:
                            cand.append((a.score + float(logp[i, tok]), a.tokens, tok))
                cand.sort(key=lambda c: (-c[0], c[1], c[2]))
                alive = []
                for score, toks, tok in cand[:beam]:
                    if tok == eos:
                        done.append(Hypothesis(toks, score))
                    else:
                        alive.append(Hypothesis(toks + [tok], score))
                best_done = max((d.score for d in done), default=-np.inf)
                if not alive or best_done >= max(a.score for a in alive):
                    break
        done.sort(key=lambda d: (-d.score, d.tokens))
        return done[0]

    def greedy_batch(self, batch) -> list[list[int]]:
        """Greedy decoding of a whole padded batch at once (dev-set evaluation)."""
        eos = self.cfg.eos_id
        with no_grad():
            enc = self.encoder(batch.features, batch.lengths, with_mid=False)
            n = len(batch)
            seqs: list[list[int]] = [[] for _ in range(n)]
            active = np.ones(n, dtype=bool)
            limit = 2 * enc.lengths
            while active.any():
                inputs, in_valid = pad_ids([[eos] + s for s in seqs], eos)
                logits = self.decoder_logits(enc.h, enc.valid, inputs, in_valid).data
                for i in np.flatnonzero(active):
                    tok = int(logits[i, len(seqs[i])].argmax())
                    if tok == eos or len(seqs[i]) >= limit[i]:
                        active[i] = False
                    else:
                        seqs[i].append(tok)
        return seqs
