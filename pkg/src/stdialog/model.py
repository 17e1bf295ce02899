"""Full model: parameter construction, forward pass, loss assembly.

One instance owns every learnable: text embedding tables, the conv
frontend, projection, CLS/SEP rows, both transformer stacks, the fusion
layer with modality embeddings, and the four objective heads.  Forward
runs one sample at a time; batches are gradient-accumulated by the
trainer, which is numerically identical to padded batching and keeps the
shape bookkeeping auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import frontend as fe
from .autodiff import Parameter, Tensor
from .encoders import (EncoderConfig, FusedRepresentation, encode_speech,
                       encode_text, fuse, init_conv_positional,
                       init_encoder_stack, init_transformer_layer)
from .masking import AcousticMaskConfig, MaskPlan, apply_mask_plan, \
    draw_mask_plan
from .objectives import (LossWeights, TppHead, cmam_loss, cmlm_loss,
                         crs_logits, crs_loss, init_tpp_head, joint_loss,
                         tpp_loss, tpp_predictions)
from .text import (TextMaskPlan, TokenizedInput, Vocab, WhitespaceTokenizer,
                   embed_text, mask_tokens, tokenize_sample)


@dataclass
class ModelConfig:
    d_h: int = 64
    vocab_size: int = 0
    max_text_len: int = 512
    text_layers: int = 2
    speech_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.0
    conv_pos_kernel: int = 7
    conv_pos_groups: int = 4
    fusion_ffn: bool = True
    tpp_max_seconds: float = 10.0
    init_scale: float = 0.02
    dtype: str = "float32"
    frontend: fe.FrontendConfig = field(default_factory=fe.desk_config)

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def encoder_config(self, num_layers: int) -> EncoderConfig:
        return EncoderConfig(num_layers=num_layers, d_h=self.d_h,
                             num_heads=self.num_heads, ffn_dim=self.ffn_dim,
                             dropout=self.dropout,
                             conv_pos_kernel=self.conv_pos_kernel,
                             conv_pos_groups=self.conv_pos_groups)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "d_h", "vocab_size", "max_text_len", "text_layers",
            "speech_layers", "num_heads", "ffn_dim", "dropout",
            "conv_pos_kernel", "conv_pos_groups", "fusion_ffn",
            "tpp_max_seconds", "init_scale", "dtype")}
        d["frontend"] = {
            "layers": [[s.channels, s.kernel, s.stride]
                       for s in self.frontend.layers],
            "sample_rate": self.frontend.sample_rate,
            "activation": self.frontend.activation,
            "ln_eps": self.frontend.ln_eps,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        front = d.pop("frontend")
        frontend = fe.FrontendConfig(
            layers=tuple(fe.ConvLayerSpec(c, k, s)
                         for c, k, s in front["layers"]),
            sample_rate=front["sample_rate"],
            activation=front.get("activation", "gelu"),
            ln_eps=front.get("ln_eps", 1e-5))
        return cls(frontend=frontend, **d)


@dataclass
class PreparedSample:
    """Everything one training forward needs, with randomness resolved."""
    tokenized: TokenizedInput
    input_token_ids: np.ndarray
    text_plan: TextMaskPlan | None
    crs_label: int | None
    wave_prev: np.ndarray
    wave_cur: np.ndarray
    acoustic_plan_prev: MaskPlan | None
    acoustic_plan_cur: MaskPlan | None
    cmam_turns: tuple = (True, True)


@dataclass
class ForwardResult:
    fused: FusedRepresentation
    cmam_target_prev: np.ndarray | None
    cmam_target_cur: np.ndarray | None


class SpeechTextModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.vocab_size < 5:
            raise ValueError(
                f"vocab_size {config.vocab_size} too small; build the "
                f"vocabulary before the model")
        self.config = config
        self.params: dict = {}
        dtype = config.np_dtype
        rng = np.random.default_rng((seed, 0))
        d_h = config.d_h

        def normal(name, shape, scale=None):
            scale = config.init_scale if scale is None else scale
            return self._register(
                name, (scale * rng.standard_normal(shape)).astype(dtype))

        def zeros(name, shape):
            return self._register(name, np.zeros(shape, dtype))

        def ones(name, shape):
            return self._register(name, np.ones(shape, dtype))

        # text embeddings
        self.token_table = normal("text.token_table",
                                  (config.vocab_size, d_h))
        self.position_table = normal("text.position_table",
                                     (config.max_text_len, d_h))
        self.segment_table = normal("text.segment_table", (2, d_h))
        # conv frontend
        self.conv_params = []
        c_in = 1
        for i, spec in enumerate(config.frontend.layers):
            w = normal(f"frontend.conv{i}.w", (spec.channels, c_in,
                                               spec.kernel), scale=0.1)
            b = zeros(f"frontend.conv{i}.b", spec.channels)
            self.conv_params.append((w, b))
            c_in = spec.channels
        feat = config.frontend.feature_dim
        self.extract_ln = (ones("frontend.ln.gain", feat),
                           zeros("frontend.ln.bias", feat))
        self.proj_ln = (ones("proj.ln.gain", feat), zeros("proj.ln.bias", feat))
        self.proj_w = normal("proj.w", (feat, d_h))
        self.proj_b = zeros("proj.b", d_h)
        self.cls_vec = normal("speech.cls", (d_h,))
        self.sep_vec = normal("speech.sep", (d_h,))
        # encoders + fusion
        self.text_cfg = config.encoder_config(config.text_layers)
        self.speech_cfg = config.encoder_config(config.speech_layers)
        self.fusion_cfg = config.encoder_config(1)
        scale = config.init_scale
        self.text_layers = init_encoder_stack(self.params, rng, "text.enc",
                                              self.text_cfg, dtype, scale)
        self.conv_pos = init_conv_positional(self.params, rng, "speech",
                                             self.speech_cfg, dtype, scale)
        self.speech_layers = init_encoder_stack(self.params, rng,
                                                "speech.enc", self.speech_cfg,
                                                dtype, scale)
        self.fusion_layer = init_transformer_layer(
            self.params, rng, "fusion.layer", d_h, config.ffn_dim, dtype,
            scale)
        self.modality_table = normal("fusion.modality_table", (2, d_h))
        # objective heads
        self.tpp_head = init_tpp_head(self.params, rng, d_h,
                                      config.tpp_max_seconds, dtype, scale)
        self.crs_w = normal("crs.w", (d_h, 4))
        self.crs_b = zeros("crs.b", 4)
        self.lm_w = normal("lm.w", (d_h, config.vocab_size))
        self.lm_b = zeros("lm.b", config.vocab_size)
        self.cmam_w = normal("cmam.w", (d_h, feat))
        self.cmam_b = zeros("cmam.b", feat)

    def _register(self, name: str, array: np.ndarray) -> Parameter:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        p = Parameter(array, name)
        self.params[name] = p
        return p

    def parameters(self) -> list:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # forward -----------------------------------------------------------

    def _speech_path(self, wave: np.ndarray, plan: MaskPlan | None,
                     want_targets: bool):
        feats = fe.extract_features(
            np.asarray(wave, dtype=self.config.np_dtype),
            self.config.frontend, self.conv_params, *self.extract_ln)
        targets = None
        if want_targets and plan is not None and plan.mask.any():
            targets = feats.data[plan.masked_indices()].copy()
        if plan is not None:
            feats = apply_mask_plan(feats, plan)
        projected = fe.project_features(feats, *self.proj_ln, self.proj_w,
                                        self.proj_b)
        return projected, targets

    def forward(self, prepared: PreparedSample, rng=None,
                capture_attention: bool = False) -> ForwardResult:
        tok = replace(prepared.tokenized, token_ids=prepared.input_token_ids)
        x = embed_text(tok, self.token_table, self.position_table,
                       self.segment_table, self.config.max_text_len)
        h_text = encode_text(x, self.text_layers, self.text_cfg, rng=rng)
        want_prev, want_cur = prepared.cmam_turns
        proj_prev, targets_prev = self._speech_path(
            prepared.wave_prev, prepared.acoustic_plan_prev, want_prev)
        proj_cur, targets_cur = self._speech_path(
            prepared.wave_cur, prepared.acoustic_plan_cur, want_cur)
        seq = fe.assemble_speech_sequence(proj_prev, proj_cur,
                                          self.cls_vec, self.sep_vec)
        h_speech = encode_speech(seq.features, self.conv_pos,
                                 self.speech_layers, self.speech_cfg, rng=rng)
        fused = fuse(h_text, h_speech, seq.m_prev, seq.m_cur,
                     self.modality_table, self.fusion_layer, self.fusion_cfg,
                     include_ffn=self.config.fusion_ffn, rng=rng,
                     capture_attention=capture_attention)
        return ForwardResult(fused=fused, cmam_target_prev=targets_prev,
                             cmam_target_cur=targets_cur)

    def compute_losses(self, prepared: PreparedSample,
                       weights: LossWeights = LossWeights(),
                       crs_enabled: bool = True, tpp_on_masked: bool = True,
                       rng=None, capture_attention: bool = False,
                       frozen_cmam_targets: tuple | None = None) -> dict:
        """Losses for one prepared sample.

        Reconstruction targets are stop-gradient constants of the step; pass
        ``frozen_cmam_targets`` (from a prior forward) when re-evaluating the
        same step's objective, e.g. under finite differences.
        """
        result = self.forward(prepared, rng=rng,
                              capture_attention=capture_attention)
        if frozen_cmam_targets is not None:
            result.cmam_target_prev, result.cmam_target_cur = \
                frozen_cmam_targets
        fused = result.fused
        boundaries = prepared.tokenized.word_boundaries
        if not tpp_on_masked and prepared.text_plan is not None:
            masked = set(prepared.text_plan.positions.tolist())
            boundaries = [b for b in boundaries
                          if b.first_token_index not in masked
                          and b.last_token_index not in masked]
        tpp = tpp_loss(fused, boundaries, self.tpp_head)
        crs = None
        if crs_enabled and prepared.crs_label is not None:
            crs = crs_loss(fused, prepared.crs_label, self.crs_w, self.crs_b)
        cmlm = cmlm_loss(fused, prepared.text_plan, self.lm_w, self.lm_b)
        want_prev, want_cur = prepared.cmam_turns
        cmam = cmam_loss(
            fused,
            prepared.acoustic_plan_prev if want_prev else None,
            prepared.acoustic_plan_cur if want_cur else None,
            result.cmam_target_prev, result.cmam_target_cur,
            self.cmam_w, self.cmam_b)
        total = joint_loss(tpp, crs, cmlm, cmam, weights)
        return {"tpp": tpp, "crs": crs, "cmlm": cmlm, "cmam": cmam,
                "joint": total, "fused": fused}

    # evaluation helpers --------------------------------------------------

    def eval_fused(self, sample, vocab: Vocab, tokenizer=None,
                   capture_attention: bool = False) -> FusedRepresentation:
        """Clean forward: no corruption, no masking, dropout ignored."""
        prepared = prepare_sample(sample, vocab, self.config,
                                  tokenizer=tokenizer, rng=None, train=False)
        return self.forward(
            prepared, capture_attention=capture_attention).fused

    def crs_predict(self, fused: FusedRepresentation) -> int:
        return int(np.argmax(crs_logits(fused, self.crs_w, self.crs_b)))

    def tpp_absolute_errors(self, fused: FusedRepresentation,
                            boundaries: list) -> np.ndarray:
        ps, pe, ts, te = tpp_predictions(fused, boundaries, self.tpp_head)
        return np.concatenate([np.abs(ps - ts), np.abs(pe - te)])


def prepare_sample(sample, vocab: Vocab, config: ModelConfig, *,
                   tokenizer=None, rng=None, train: bool = True,
                   crs_label: int | None = None,
                   text_mask_prob: float = 0.15,
                   text_corruption: tuple = (0.8, 0.1, 0.1),
                   acoustic_config: AcousticMaskConfig | None = None
                   ) -> PreparedSample:
    """Tokenize and draw all masking randomness for one (possibly
    corrupted) sample.  With train=False nothing is masked."""
    tokenizer = tokenizer or WhitespaceTokenizer()
    tokenized = tokenize_sample(sample, vocab, tokenizer,
                                max_len=config.max_text_len)
    text_plan = None
    input_ids = tokenized.token_ids
    plan_prev = plan_cur = None
    if train:
        if rng is None:
            raise ValueError("training preparation needs an rng")
        text_plan = mask_tokens(tokenized, vocab, rng, p=text_mask_prob,
                                corruption=text_corruption)
        input_ids = text_plan.apply(tokenized.token_ids, vocab)
        acfg = acoustic_config or AcousticMaskConfig()
        m_prev = config.frontend.output_length(len(sample.speech_prev))
        m_cur = config.frontend.output_length(len(sample.speech_cur))
        plan_prev = draw_mask_plan(m_prev, rng, acfg)
        plan_cur = draw_mask_plan(m_cur, rng, acfg)
    return PreparedSample(
        tokenized=tokenized,
        input_token_ids=input_ids,
        text_plan=text_plan,
        crs_label=crs_label,
        wave_prev=sample.speech_prev,
        wave_cur=sample.speech_cur,
        acoustic_plan_prev=plan_prev,
        acoustic_plan_cur=plan_cur,
        cmam_turns=sample.cmam_turns)
