"""Adapter fine-tuning: teach the masked LM to emit aligned substitutions.

One training step masks a random subset of subtoken positions, lets the
adapter-equipped masked LM predict a vocabulary distribution at each masked
position, forms the expected token embedding under that distribution, and
feeds the resulting differentiable embedding sequence to the frozen
classifier. The configured objective is computed from the classifier's
scores and pooled embeddings, and only adapter tensors receive updates; the
backbone fingerprint is verified unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .core import CampaignConfig, Example
from .distribution import GaussianStats
from .losses import (BatchLossInputs, LossTrace, loss_fce, loss_md, loss_msp,
                     loss_nce)
from .models import (TextEncoderModel, adapter_parameters, adapters_enabled,
                     attach_adapters, backbone_fingerprint, iter_adapters)
from .tokenizer import TokenizedText, WordTokenizer
from .victim import WhiteBoxVictim

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdapterConfig:
    """Low-rank adapter hyperparameters."""

    rank: int = 8
    scaling: float = 32.0
    dropout: float = 0.1
    targets: tuple[str, ...] = ("query", "value")

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.scaling <= 0:
            raise ValueError("scaling must be > 0")
        if not (0 <= self.dropout < 1):
            raise ValueError("dropout must be in [0, 1)")


@dataclass(frozen=True)
class MaskingPolicy:
    """How many positions to mask and with which random stream.

    Per example, between 1 and floor(max_mask_fraction * n) of the n maskable
    subtoken positions are replaced by the mask token (at least one position
    is always masked). Special tokens and the pair separator are never
    maskable.
    """

    max_mask_fraction: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.max_mask_fraction <= 1):
            raise ValueError("max_mask_fraction must be in (0, 1]")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class MaskedBatch:
    """Collated masked inputs; ``mask_positions`` marks replaced subtokens."""

    input_ids: torch.Tensor
    original_ids: torch.Tensor
    attention_mask: torch.Tensor
    mask_positions: torch.Tensor
    kept_indices: list[int]
    skipped_indices: list[int]


def mask_batch(batch: list[TokenizedText], tokenizer: WordTokenizer,
               policy: MaskingPolicy,
               rng: Optional[np.random.Generator] = None) -> MaskedBatch:
    """Apply the masking policy to a batch of tokenized examples.

    Examples without a single maskable position are skipped with a warning
    and reported in ``skipped_indices``.
    """
    if rng is None:
        rng = policy.rng()
    vocab = tokenizer.vocab
    kept: list[tuple[int, list[int], list[int]]] = []
    skipped: list[int] = []
    for i, tok in enumerate(batch):
        positions = tok.maskable_subtoken_positions(vocab)
        if not positions:
            logger.warning("example %d has no maskable positions; skipped", i)
            skipped.append(i)
            continue
        k_max = max(1, math.floor(policy.max_mask_fraction * len(positions)))
        k = int(rng.integers(1, k_max + 1))
        chosen = sorted(rng.choice(len(positions), size=k, replace=False).tolist())
        kept.append((i, list(tok.subtokens), [positions[c] for c in chosen]))
    if not kept:
        raise ValueError("every example in the batch lacked maskable positions")
    width = max(len(ids) for _, ids, _ in kept)
    n = len(kept)
    input_ids = torch.full((n, width), tokenizer.pad_id, dtype=torch.long)
    original_ids = torch.full((n, width), tokenizer.pad_id, dtype=torch.long)
    attention = torch.zeros(n, width, dtype=torch.long)
    mask_pos = torch.zeros(n, width, dtype=torch.bool)
    for row, (_, ids, chosen) in enumerate(kept):
        t = torch.tensor(ids, dtype=torch.long)
        original_ids[row, : len(ids)] = t
        input_ids[row, : len(ids)] = t
        attention[row, : len(ids)] = 1
        for pos in chosen:
            input_ids[row, pos] = tokenizer.mask_id
            mask_pos[row, pos] = True
    return MaskedBatch(
        input_ids=input_ids,
        original_ids=original_ids,
        attention_mask=attention,
        mask_positions=mask_pos,
        kept_indices=[i for i, _, _ in kept],
        skipped_indices=skipped,
    )


def expected_token_embeddings(probs: torch.Tensor, masked: MaskedBatch,
                              embedding_table: torch.Tensor) -> torch.Tensor:
    """Mix embedding rows by ``probs`` at masked positions, keep original
    token embeddings elsewhere. A one-hot distribution on the original token
    therefore reproduces the original embedding sequence exactly."""
    base = F.embedding(masked.original_ids, embedding_table)
    mixed = probs @ embedding_table
    return torch.where(masked.mask_positions.unsqueeze(-1), mixed, base)


def soft_adversarial_embedding(masked: MaskedBatch, model: TextEncoderModel,
                               temperature: float = 1.0) -> torch.Tensor:
    """Differentiable adversarial embedding sequence for a masked batch.

    Runs the masked LM with adapters enabled and replaces every masked
    position's embedding with the expectation of the embedding table under
    the predicted vocabulary distribution.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    with adapters_enabled(model, True):
        logits = model.mlm_logits(input_ids=masked.input_ids,
                                  attention_mask=masked.attention_mask)
    probs = torch.softmax(logits / temperature, dim=-1)
    return expected_token_embeddings(probs, masked, model.embedding_table())


@dataclass
class StepLosses:
    """Component and objective values of one training step (live tensors)."""

    msp: torch.Tensor
    md: torch.Tensor
    dal: torch.Tensor
    objective: torch.Tensor


def compute_step_losses(model: TextEncoderModel, masked: MaskedBatch,
                        gold: torch.Tensor, stats: GaussianStats,
                        config: CampaignConfig) -> StepLosses:
    """Forward one masked batch through both phases and evaluate the losses.

    The classifier pass runs with adapters disabled (the frozen model);
    gradients still flow into the adapters through the embedding mixture.
    """
    x_adv = soft_adversarial_embedding(masked, model, config.mlm_temperature)
    with adapters_enabled(model, False):
        logits, pooled = model.classify(inputs_embeds=x_adv,
                                        attention_mask=masked.attention_mask)
    if logits.shape[-1] != 2:
        raise ValueError("alignment fine-tuning currently supports binary tasks only")
    y_adv = 1 - gold
    inputs = BatchLossInputs(
        logit_orig=logits.gather(1, gold.unsqueeze(1)).squeeze(1),
        logit_adv=logits.gather(1, y_adv.unsqueeze(1)).squeeze(1),
        embeddings=pooled,
        stats=stats,
        reduction=config.reduction,
    )
    msp_term = loss_msp(inputs)
    md_term = loss_md(inputs)
    variant = config.loss_variant
    if variant == "dal":
        dal = msp_term + md_term
        objective = dal
    elif variant == "dal_no_msp":
        dal = md_term
        objective = dal
    elif variant == "dal_no_md":
        dal = msp_term
        objective = dal
    else:
        dal = msp_term + md_term
        if variant == "nce":
            objective = loss_nce(logits, gold, config.reduction)
        elif variant == "fce":
            objective = loss_fce(logits, gold, config.reduction)
        else:
            raise ValueError(f"unknown loss variant {variant!r}")
    return StepLosses(msp=msp_term, md=md_term, dal=dal, objective=objective)


@dataclass
class AdapterTrainState:
    """Trained adapter tensors plus everything needed to resume or audit."""

    adapter_state: dict[str, torch.Tensor]
    optimizer_state: dict
    epochs_completed: int
    trace: LossTrace
    backbone_fingerprint: str
    adapter_config: AdapterConfig = field(default_factory=AdapterConfig)

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "adapter_state": self.adapter_state,
                "optimizer_state": self.optimizer_state,
                "epochs_completed": self.epochs_completed,
                "trace": self.trace.to_json_dict(),
                "backbone_fingerprint": self.backbone_fingerprint,
                "adapter_config": {
                    "rank": self.adapter_config.rank,
                    "scaling": self.adapter_config.scaling,
                    "dropout": self.adapter_config.dropout,
                    "targets": list(self.adapter_config.targets),
                },
            },
            str(path),
        )

    @classmethod
    def load(cls, path: str | Path) -> "AdapterTrainState":
        d = torch.load(str(path), map_location="cpu", weights_only=True)
        ac = d["adapter_config"]
        return cls(
            adapter_state=d["adapter_state"],
            optimizer_state=d["optimizer_state"],
            epochs_completed=int(d["epochs_completed"]),
            trace=LossTrace.from_json_dict(d["trace"]),
            backbone_fingerprint=d["backbone_fingerprint"],
            adapter_config=AdapterConfig(
                rank=int(ac["rank"]), scaling=float(ac["scaling"]),
                dropout=float(ac["dropout"]), targets=tuple(ac["targets"]),
            ),
        )


def adapter_state_dict(model: TextEncoderModel) -> dict[str, torch.Tensor]:
    return {
        name: param.detach().clone()
        for name, param in model.named_parameters()
        if "lora_a" in name or "lora_b" in name
    }


def load_adapter_state(model: TextEncoderModel, state: AdapterTrainState) -> None:
    """Attach adapters if needed and restore trained tensors."""
    if not any(True for _ in iter_adapters(model)):
        ac = state.adapter_config
        attach_adapters(model, rank=ac.rank, scaling=ac.scaling,
                        dropout=ac.dropout, targets=ac.targets)
    missing = set(state.adapter_state)
    for name, param in model.named_parameters():
        if name in state.adapter_state:
            with torch.no_grad():
                param.copy_(state.adapter_state[name])
            missing.discard(name)
    if missing:
        raise ValueError(f"adapter tensors not found in model: {sorted(missing)}")


def _batches(order: np.ndarray, batch_size: int) -> Iterable[np.ndarray]:
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def finetune_dala(train_set: list[Example], victim: WhiteBoxVictim,
                  stats: GaussianStats, config: CampaignConfig) -> AdapterTrainState:
    """Train low-rank adapters on the victim's backbone with the configured
    objective.

    Attaches fresh adapters to ``victim.model`` (they must not already be
    attached so initialization stays under this function's seed), runs
    ``config.epochs`` epochs of shuffled batches, records every step in a
    LossTrace, and hard-fails if the frozen backbone fingerprint changes or
    the objective goes non-finite.
    """
    if not train_set:
        raise ValueError("empty training set")
    model = victim.model
    tokenizer = victim.tokenizer
    if any(True for _ in iter_adapters(model)):
        raise ValueError("model already has adapters attached")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    adapter_cfg = AdapterConfig(rank=config.adapter_rank,
                                scaling=config.adapter_scaling,
                                dropout=config.adapter_dropout)
    attach_adapters(model, rank=adapter_cfg.rank, scaling=adapter_cfg.scaling,
                    dropout=adapter_cfg.dropout, targets=adapter_cfg.targets)
    fingerprint_before = backbone_fingerprint(model)

    policy = MaskingPolicy(max_mask_fraction=config.max_mask_fraction, seed=config.seed)
    tokenized = [tokenizer.encode_words(ex.attack_words()) for ex in train_set]
    labels = np.array([ex.gold_label for ex in train_set], dtype=np.int64)

    optimizer = torch.optim.Adam(adapter_parameters(model),
                                 lr=config.resolved_learning_rate())
    trace = LossTrace()
    batch_size = config.resolved_batch_size()
    step = 0
    model.train()
    for _ in range(config.epochs):
        order = rng.permutation(len(train_set))
        for idx in _batches(order, batch_size):
            masked = mask_batch([tokenized[i] for i in idx], tokenizer, policy, rng)
            gold = torch.from_numpy(labels[idx][masked.kept_indices])
            losses = compute_step_losses(model, masked, gold, stats, config)
            if not torch.isfinite(losses.objective):
                raise RuntimeError(f"non-finite loss at step {step}; aborting")
            optimizer.zero_grad()
            losses.objective.backward()
            optimizer.step()
            trace.append(step, losses.msp.item(), losses.md.item(),
                         losses.dal.item(), losses.objective.item())
            step += 1
        if backbone_fingerprint(model) != fingerprint_before:
            raise RuntimeError("frozen backbone changed during adapter training")
    model.eval()
    return AdapterTrainState(
        adapter_state=adapter_state_dict(model),
        optimizer_state=optimizer.state_dict(),
        epochs_completed=config.epochs,
        trace=trace,
        backbone_fingerprint=fingerprint_before,
        adapter_config=adapter_cfg,
    )
