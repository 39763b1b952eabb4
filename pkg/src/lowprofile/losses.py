"""Differentiable training objectives for the adapter fine-tuning phase.

The alignment objective has two parts. The confidence part pushes the
classifier score of the flipped label above the score of the original label
through a two-way softmax on the raw class scores. The distance part pulls
the pooled adversarial embedding toward the training distribution by
penalizing the log of its Mahalanobis distance. Their unweighted sum is the
full objective; ablation flags can drop either part. Two comparison
objectives, negated cross-entropy and flipped-label cross-entropy, share
the same batch interface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn.functional as F

from .distribution import GaussianStats

MD_FLOOR = 1e-12


@dataclass
class BatchLossInputs:
    """Per-example quantities one loss step needs.

    ``logit_orig``/``logit_adv`` are the classifier's raw scores of the
    original and flipped labels given the adversarial embeddings;
    ``embeddings`` are the pooled adversarial representations the distance
    term operates on.
    """

    logit_orig: torch.Tensor
    logit_adv: torch.Tensor
    embeddings: torch.Tensor
    stats: Optional[GaussianStats] = None
    reduction: str = "mean"

    def __post_init__(self):
        if self.logit_orig.shape != self.logit_adv.shape:
            raise ValueError("logit_orig and logit_adv must have equal shape")
        if self.embeddings.shape[0] != self.logit_orig.shape[0]:
            raise ValueError("embeddings batch size must match logits")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")


def _reduce(values: torch.Tensor, reduction: str) -> torch.Tensor:
    return values.mean() if reduction == "mean" else values.sum()


def loss_msp(inputs: BatchLossInputs) -> torch.Tensor:
    """Two-way softmax weight of the original label: sigmoid(s_orig - s_adv).

    Strictly decreasing in (s_adv - s_orig), per-example value in (0, 1),
    invariant to shifting both scores by a constant.
    """
    if torch.isnan(inputs.logit_orig).any() or torch.isnan(inputs.logit_adv).any():
        raise ValueError("loss_msp got NaN logits")
    per_example = torch.sigmoid(inputs.logit_orig - inputs.logit_adv)
    return _reduce(per_example, inputs.reduction)


def loss_md(inputs: BatchLossInputs) -> torch.Tensor:
    """log sqrt of the Mahalanobis quadratic form, floored for stability.

    The floor keeps the value finite when an embedding coincides with the
    training mean, where the bare log sqrt would be singular.
    """
    if inputs.stats is None:
        raise ValueError("loss_md needs fitted GaussianStats")
    emb = inputs.embeddings
    if emb.shape[-1] != inputs.stats.dim:
        raise ValueError(
            f"embedding dim {emb.shape[-1]} does not match stats dim {inputs.stats.dim}"
        )
    mu = torch.as_tensor(inputs.stats.mu, dtype=emb.dtype, device=emb.device)
    sigma_inv = torch.as_tensor(inputs.stats.sigma_inv, dtype=emb.dtype, device=emb.device)
    delta = emb - mu
    quad = torch.einsum("bi,ij,bj->b", delta, sigma_inv, delta)
    per_example = torch.log(torch.sqrt(quad + MD_FLOOR))
    return _reduce(per_example, inputs.reduction)


def loss_dal(inputs: BatchLossInputs, include_msp: bool = True,
             include_md: bool = True) -> torch.Tensor:
    """Unweighted sum of the confidence and distance terms.

    The ablation flags zero out a term entirely (it is then not computed),
    matching the with/without comparison runs.
    """
    total = None
    if include_msp:
        total = loss_msp(inputs)
    if include_md:
        term = loss_md(inputs)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("loss_dal with both terms ablated is empty")
    return total


def loss_nce(logits: torch.Tensor, gold: torch.Tensor,
             reduction: str = "mean") -> torch.Tensor:
    """Negated cross-entropy of the gold labels (comparison objective)."""
    return -F.cross_entropy(logits, gold, reduction=reduction)


def loss_fce(logits: torch.Tensor, gold: torch.Tensor,
             reduction: str = "mean") -> torch.Tensor:
    """Cross-entropy of flipped labels; defined for binary tasks only."""
    if logits.shape[-1] != 2:
        raise ValueError("loss_fce requires a binary label set")
    return F.cross_entropy(logits, 1 - gold, reduction=reduction)


@dataclass
class LossTrace:
    """Per-step values of the component and total losses during fine-tuning.

    ``objective`` is the value actually optimized (equals ``dal`` for the
    alignment variants, the comparison loss otherwise).
    """

    steps: list[int] = field(default_factory=list)
    msp: list[float] = field(default_factory=list)
    md: list[float] = field(default_factory=list)
    dal: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)

    def append(self, step: int, msp_value: float, md_value: float,
               dal_value: float, objective_value: float) -> None:
        if self.steps and step <= self.steps[-1]:
            raise ValueError("trace steps must be strictly increasing")
        self.steps.append(step)
        self.msp.append(msp_value)
        self.md.append(md_value)
        self.dal.append(dal_value)
        self.objective.append(objective_value)

    def __len__(self) -> int:
        return len(self.steps)

    def export(self, directory: str | Path, prefix: str = "loss") -> list[Path]:
        """Write one two-column (step, value) text file per component."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, series in (("msp", self.msp), ("md", self.md),
                             ("dal", self.dal), ("objective", self.objective)):
            path = directory / f"{prefix}_{name}.txt"
            with path.open("w", encoding="utf-8") as fh:
                for step, value in zip(self.steps, series):
                    fh.write(f"{step}\t{value!r}\n")
            written.append(path)
        return written

    def to_json_dict(self) -> dict:
        return {
            "steps": self.steps,
            "msp": self.msp,
            "md": self.md,
            "dal": self.dal,
            "objective": self.objective,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LossTrace":
        return cls(
            steps=list(d["steps"]),
            msp=list(d["msp"]),
            md=list(d["md"]),
            dal=list(d["dal"]),
            objective=list(d["objective"]),
        )
