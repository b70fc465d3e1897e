"""Release-gate gradient verification: every differentiable component is
checked against central finite differences at micro dimensions
(d = 8, L = 2, k = 1, one study), including the end-to-end fine-tuning
objective. All checks must come in under 1e-3 relative error.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, grad_check
from .config import ModelConfig
from .corpus import BOS, EOS, generate_study
from .decoder import lm_loss, total_loss
from .interaction import dc_loss
from .model import ReportModel
from .pretrain import ContrastiveBatch, contrastive_loss

THRESHOLD = 1e-3

_MICRO = dict(
    d=8, d_llm=8, heads=2, query_len=2, k=1, r=4, image_size=16, patch_size=8,
    max_text_len=12, max_report_len=48, encoder_depth=1, decoder_depth=1,
    vocab_size=11, seed=5,
)


def _rng(salt=0):
    return np.random.default_rng(1234 + salt)


def _rand(shape, salt=0):
    return Tensor(_rng(salt).normal(0.0, 1.0, size=shape))


def _op_checks():
    b = _rand((4, 3), salt=1)
    return [
        ("matmul", lambda x: ag.tensor_sum(ag.mul(ag.matmul(x, b), _rand((3, 3), salt=2))), (3, 4)),
        ("add", lambda x: ag.tensor_sum(ag.mul(ag.add(x, _rand((3, 3), salt=3)), _rand((3, 3), salt=19))), (3, 3)),
        ("mul", lambda x: ag.tensor_sum(ag.mul(ag.mul(x, _rand((3, 3), salt=4)), _rand((3, 3), salt=5))), (3, 3)),
        ("softmax", lambda x: ag.tensor_sum(ag.mul(ag.softmax(x, axis=-1), _rand((3, 5), salt=6))), (3, 5)),
        ("transpose", lambda x: ag.tensor_sum(ag.mul(ag.transpose(x), _rand((4, 3), salt=7))), (3, 4)),
        ("concat", lambda x: ag.tensor_sum(ag.mul(ag.concat([x, b], axis=0), _rand((7, 3), salt=8))), (3, 3)),
        ("mean", lambda x: ag.mean(ag.mul(x, x)), (4, 4)),
        ("l2_norm", lambda x: ag.l2_norm(x), (5,)),
        ("layer_norm", lambda x: ag.tensor_sum(
            ag.mul(ag.layer_norm(x, _rand((6,), salt=10), _rand((6,), salt=11)),
                   _rand((3, 6), salt=12))), (3, 6)),
        ("gelu", lambda x: ag.tensor_sum(ag.mul(ag.gelu(x), _rand((3, 4), salt=13))), (3, 4)),
        ("embedding_lookup", lambda x: ag.tensor_sum(
            ag.mul(ag.embedding_lookup(x, [0, 2, 2, 1]), _rand((4, 3), salt=14))), (4, 3)),
        ("cross_entropy_with_logits", lambda x: ag.mean(
            ag.cross_entropy_with_logits(x, [1, 0, 3])), (3, 4)),
        ("scaled_dot_attention", lambda x: ag.tensor_sum(
            ag.mul(ag.scaled_dot_attention(x, _rand((4, 5), salt=15), _rand((4, 6), salt=16)),
                   _rand((2, 6), salt=17))), (2, 5)),
        ("dc_loss", lambda x: dc_loss(x, _rand((2, 6), salt=18)), (2, 6)),
    ]


def _infonce_check():
    texts = _rand((2, 4), salt=21)

    def loss(x):
        return contrastive_loss(ContrastiveBatch(image=x, text=texts, tau=1.0))

    return ("infonce", loss, (2, 4))


def _micro_setup():
    config = ModelConfig(**_MICRO).validate()
    model = ReportModel(config, np.random.default_rng(config.seed))
    model.freeze_encoders()

    class Vocab:
        def encode(self, text):
            return [4, 5, 6, 7]

        id_to_token = [str(i) for i in range(_MICRO["vocab_size"])]

    vocab = Vocab()
    bank = model.build_clue_bank(vocab, np.random.default_rng(7))
    study = generate_study("micro", 3)
    study.pixels = study.pixels[:16, :16]
    return model, bank, vocab, study


def _finetune_loss_checks():
    model, bank, vocab, study = _micro_setup()
    target = [BOS, 4, 5, 6, 7, EOS]

    def objective():
        prefix, e_v, e_c, _, _ = model.conditioning(study.pixels, bank)
        return total_loss(lm_loss(model.decoder, prefix, target), dc_loss(e_v, e_c))

    checks = []
    probes = [
        ("finetune_loss/mapper", model.mapper.proj.w),
        ("finetune_loss/queries", model.interaction.queries),
        ("finetune_loss/stream_wq", model.interaction.visual_stream[0].attn.wq.w),
        ("finetune_loss/decoder_embed", model.decoder.tok.table),
        ("finetune_loss/decoder_out", model.decoder.out_proj.w),
    ]
    for name, param in probes:
        checks.append((name, lambda _x, _o=objective: _o(), param))
    return checks


@dataclass
class CheckResult:
    name: str
    error: float

    @property
    def passed(self):
        return self.error < THRESHOLD


def run_gradchecks():
    """Gradient-check every component; returns a list of CheckResult.

    Runs in the float64 oracle mode: the finite-difference side of deep
    composites is otherwise dominated by float32 evaluation noise. The op
    level is additionally verified at float32 by the unit tests.
    """
    results = []
    with ag.dtype_context(np.float64):
        for name, loss_fn, shape in _op_checks() + [_infonce_check()]:
            x = _rand(shape, salt=sum(name.encode()))
            results.append(CheckResult(name, grad_check(loss_fn, x)))
        for name, loss_fn, param in _finetune_loss_checks():
            results.append(CheckResult(name, grad_check(loss_fn, param)))
    return results
