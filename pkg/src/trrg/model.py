"""Stage-2 report generation model: frozen encoders, trainable visual
mapper, clue injection, cross-modal interaction, and the decoder.

Ablation variants share this assembly:
  base      decoder conditions on mapped visual tokens only
  dci       visual tokens plus flattened weighted clue tokens (needs d == d_llm)
  dci_cmci  two-stream interaction, prefix [E^v; E^c], no consistency loss
  full      dci_cmci plus the disease-aware consistency loss
"""

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import ContractError
from .clues import encode_clue_bank, build_prompts, inject_clues
from .corpus import BOS, EOS, DiseaseCatalog
from .decoder import GenerationConfig, ReportDecoder, generate, lm_loss, total_loss
from .encoders import VisionEncoder, TextEncoder, VisualMapper, patch_rows, pool_expert_token
from .interaction import InteractionModule, dc_loss, flatten_clues


class ReportModel(nn.Module):
    def __init__(self, config, rng):
        if config.vocab_size <= 0:
            raise ContractError("config.vocab_size must be set from the corpus")
        self.vision = VisionEncoder(
            config.patch_size, config.n_patches, config.d, config.heads,
            config.encoder_depth, rng,
        )
        self.text = TextEncoder(
            config.vocab_size, config.max_text_len, config.d, config.heads,
            config.encoder_depth, rng,
        )
        self.mapper = VisualMapper(config.d, config.d_llm, rng)
        self.interaction = InteractionModule(config, rng)
        self.decoder = ReportDecoder(
            config.vocab_size, config.max_report_len, config.d_llm,
            config.heads, config.decoder_depth, rng,
        )
        self._config = config

    @property
    def config(self):
        return self._config

    def freeze_encoders(self):
        self.vision.freeze()
        self.text.freeze()

    def encoder_state(self):
        """Byte snapshot of every encoder parameter, for freeze auditing."""
        return {
            name: param.data.tobytes()
            for name, param in self.named_parameters().items()
            if name.startswith(("vision.", "text."))
        }

    def build_clue_bank(self, vocab, rng):
        prompts = build_prompts(DiseaseCatalog(), rng)
        return encode_clue_bank(prompts, self.text, vocab, self._config.r)

    def conditioning(self, pixels, bank):
        """Decoder prefix plus (E^v, E^c, weights, indices) where applicable."""
        cfg = self._config
        encoded = self.vision(pixels)
        patches = patch_rows(encoded)
        v_d = self.mapper(patches)
        if cfg.variant == "base":
            return v_d, None, None, None, None
        v_cls = pool_expert_token(patches)
        c_s, weights, indices = inject_clues(v_cls, bank, cfg.k)
        clue_tokens = flatten_clues(c_s)
        if cfg.variant == "dci":
            prefix = ag.concat([v_d, clue_tokens], axis=0)
            return prefix, None, None, weights, indices
        e_v, e_c = self.interaction(v_d, clue_tokens)
        prefix = ag.concat([e_v, e_c], axis=0)
        return prefix, e_v, e_c, weights, indices

    def study_losses(self, study, bank, vocab):
        """(lm, dc-or-None, position count) for one study."""
        prefix, e_v, e_c, _, _ = self.conditioning(study.pixels, bank)
        target = [BOS] + vocab.encode(study.report) + [EOS]
        lm = lm_loss(self.decoder, prefix, target)
        dc = None
        if self._config.variant == "full":
            dc = dc_loss(e_v, e_c)
        return lm, dc, len(target) - 1

    def generate_report(self, study, bank, vocab, gen_config=None):
        """Decode one report; returns (text, top-k clue names and weights)."""
        gen_config = gen_config or GenerationConfig()
        prefix, _, _, weights, indices = self.conditioning(study.pixels, bank)
        ids = generate(self.decoder, prefix, gen_config)
        clue_info = []
        if indices is not None:
            w = np.asarray(weights.data).reshape(-1)
            clue_info = [
                {"name": bank.prompts[i].disease, "weight": float(w[i])}
                for i in indices
            ]
        return vocab.decode(ids), clue_info


def finetune_step(studies, model, bank, vocab, optimizer):
    """One gradient step on the combined objective; returns (lm, dc, total).

    The language-modeling term is the mean over all non-pad target
    positions in the batch; the consistency term is the mean over studies.
    """
    lm_terms, dc_terms, weights = [], [], []
    for study in studies:
        lm, dc, count = model.study_losses(study, bank, vocab)
        lm_terms.append(ag.mul(lm, ag.Tensor(float(count))))
        weights.append(count)
        if dc is not None:
            dc_terms.append(dc)
    lm_batch = ag.mul(
        ag.tensor_sum(ag.concat([ag.reshape(t, (1,)) for t in lm_terms], axis=0)),
        ag.Tensor(1.0 / sum(weights)),
    )
    if dc_terms:
        dc_batch = ag.mean(
            ag.concat([ag.reshape(t, (1,)) for t in dc_terms], axis=0)
        )
    else:
        dc_batch = ag.Tensor(0.0)
    loss = total_loss(lm_batch, dc_batch)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return lm_batch.item(), dc_batch.item(), loss.item()
