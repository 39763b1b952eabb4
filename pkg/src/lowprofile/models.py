"""Compact transformer encoder with classification and masked-LM heads.

One encoder serves both tasks: the classification head consumes a pooled
first-token representation, and the masked-LM head decodes per-position
vocabulary scores against the tied embedding table. Low-rank adapters can be
attached to named attention projections; the base weights stay frozen and an
``enabled`` switch gates the adapter path, so the same module tree acts as
the frozen classifier (adapters off) and the tunable masked LM (adapters on).
"""

from __future__ import annotations

import hashlib
import math
from contextlib import contextmanager
from dataclasses import dataclass, asdict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tokenizer import Vocabulary, WordTokenizer

ATTENTION_PROJECTIONS = ("query", "key", "value", "output")


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_labels: int = 2
    dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    ffn_dim: int = 64
    max_positions: int = 128


class SelfAttention(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        if cfg.dim % cfg.num_heads:
            raise ValueError("dim must be divisible by num_heads")
        self.num_heads = cfg.num_heads
        self.head_dim = cfg.dim // cfg.num_heads
        self.query = nn.Linear(cfg.dim, cfg.dim)
        self.key = nn.Linear(cfg.dim, cfg.dim)
        self.value = nn.Linear(cfg.dim, cfg.dim)
        self.output = nn.Linear(cfg.dim, cfg.dim)

    def forward(self, x: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        def split(proj):
            return proj.view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        # attention_mask: [b, t], 1 for real positions; block attention to padding
        key_mask = attention_mask[:, None, None, :]
        scores = scores.masked_fill(key_mask == 0, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        ctx = (weights @ v).transpose(1, 2).reshape(b, t, d)
        return self.output(ctx)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.attention = SelfAttention(cfg)
        self.attn_norm = nn.LayerNorm(cfg.dim)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.dim),
        )
        self.ffn_norm = nn.LayerNorm(cfg.dim)

    def forward(self, x, attention_mask):
        x = x + self.attention(self.attn_norm(x), attention_mask)
        x = x + self.ffn(self.ffn_norm(x))
        return x


class TextEncoderModel(nn.Module):
    """Encoder plus pooled classifier head and tied masked-LM decoder."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.position_embedding = nn.Embedding(cfg.max_positions, cfg.dim)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.final_norm = nn.LayerNorm(cfg.dim)
        # Classification head: tanh pooler on the first token, then logits.
        self.pooler = nn.Linear(cfg.dim, cfg.dim)
        self.classifier = nn.Linear(cfg.dim, cfg.num_labels)
        # Masked-LM head: small transform, decoder tied to the embedding table.
        self.mlm_transform = nn.Linear(cfg.dim, cfg.dim)
        self.mlm_norm = nn.LayerNorm(cfg.dim)
        self.mlm_bias = nn.Parameter(torch.zeros(cfg.vocab_size))

    def embedding_table(self) -> torch.Tensor:
        return self.token_embedding.weight

    def encode(self, input_ids: torch.Tensor | None = None,
               inputs_embeds: torch.Tensor | None = None,
               attention_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Hidden states [b, t, d]; ``inputs_embeds`` replaces the token
        embedding lookup, positions are added either way."""
        if (input_ids is None) == (inputs_embeds is None):
            raise ValueError("pass exactly one of input_ids / inputs_embeds")
        if inputs_embeds is None:
            inputs_embeds = self.token_embedding(input_ids)
        b, t, _ = inputs_embeds.shape
        if t > self.cfg.max_positions:
            raise ValueError(f"sequence length {t} exceeds max {self.cfg.max_positions}")
        if attention_mask is None:
            attention_mask = torch.ones(b, t, dtype=torch.long, device=inputs_embeds.device)
        positions = torch.arange(t, device=inputs_embeds.device)
        x = inputs_embeds + self.position_embedding(positions)[None]
        for layer in self.layers:
            x = layer(x, attention_mask)
        return self.final_norm(x)

    def pool(self, hidden: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.pooler(hidden[:, 0]))

    def classify(self, input_ids=None, inputs_embeds=None, attention_mask=None
                 ) -> tuple[torch.Tensor, torch.Tensor]:
        """(logits [b, num_labels], pooled [b, d])."""
        hidden = self.encode(input_ids, inputs_embeds, attention_mask)
        pooled = self.pool(hidden)
        return self.classifier(pooled), pooled

    def mlm_logits(self, input_ids=None, inputs_embeds=None, attention_mask=None
                   ) -> torch.Tensor:
        """Per-position vocabulary scores [b, t, vocab]."""
        hidden = self.encode(input_ids, inputs_embeds, attention_mask)
        h = self.mlm_norm(F.gelu(self.mlm_transform(hidden)))
        return h @ self.embedding_table().t() + self.mlm_bias


class LoRALinear(nn.Module):
    """Frozen linear layer plus a gated low-rank update path.

    The update contributes ``scaling / rank * (dropout(x) A^T) B^T`` when
    enabled and exactly nothing when disabled, so disabling reproduces the
    base layer bit for bit.
    """

    def __init__(self, base: nn.Linear, rank: int, scaling: float, dropout: float):
        super().__init__()
        if rank < 1:
            raise ValueError("adapter rank must be >= 1")
        if scaling <= 0:
            raise ValueError("adapter scaling must be > 0")
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.scale = scaling / rank
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))
        self.lora_dropout = nn.Dropout(dropout)
        self.enabled = False

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.base(x)
        if self.enabled:
            update = self.lora_dropout(x) @ self.lora_a.t() @ self.lora_b.t()
            out = out + self.scale * update
        return out


def attach_adapters(model: TextEncoderModel, rank: int, scaling: float,
                    dropout: float, targets: tuple[str, ...] = ("query", "value")
                    ) -> list[LoRALinear]:
    """Wrap the named attention projections of every layer with adapters.

    All base parameters of the model are frozen; only the adapter tensors
    stay trainable. Returns the attached modules (disabled initially).
    """
    unknown = set(targets) - set(ATTENTION_PROJECTIONS)
    if unknown:
        raise ValueError(f"unknown adapter targets {sorted(unknown)}")
    for p in model.parameters():
        p.requires_grad_(False)
    attached = []
    for layer in model.layers:
        for name in targets:
            base = getattr(layer.attention, name)
            if isinstance(base, LoRALinear):
                raise ValueError("adapters already attached")
            wrapped = LoRALinear(base, rank=rank, scaling=scaling, dropout=dropout)
            setattr(layer.attention, name, wrapped)
            attached.append(wrapped)
    return attached


def iter_adapters(model: nn.Module):
    for module in model.modules():
        if isinstance(module, LoRALinear):
            yield module


def adapter_parameters(model: nn.Module) -> list[nn.Parameter]:
    params = []
    for module in iter_adapters(model):
        params.extend([module.lora_a, module.lora_b])
    return params


@contextmanager
def adapters_enabled(model: nn.Module, enabled: bool = True):
    """Temporarily switch the adapter paths on or off."""
    adapters = list(iter_adapters(model))
    previous = [a.enabled for a in adapters]
    for a in adapters:
        a.enabled = enabled
    try:
        yield model
    finally:
        for a, prev in zip(adapters, previous):
            a.enabled = prev


def backbone_fingerprint(model: nn.Module) -> str:
    """SHA-256 over all non-adapter parameters, keyed by qualified name.

    Adapter tensors (``lora_a`` / ``lora_b``) are excluded so the fingerprint
    stays constant across adapter training and changes on any base update.
    """
    entries = []
    for name, param in model.named_parameters():
        if "lora_a" in name or "lora_b" in name:
            continue
        # Wrapping a projection renames its params ("...query.weight" becomes
        # "...query.base.weight"); normalize so attaching adapters alone does
        # not change the fingerprint.
        entries.append((name.replace(".base.", "."), param))
    digest = hashlib.sha256()
    for name, param in sorted(entries, key=lambda kv: kv[0]):
        digest.update(name.encode())
        digest.update(param.detach().cpu().contiguous().to(torch.float32).numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(model: TextEncoderModel, vocab: Vocabulary, path: str | Path) -> None:
    torch.save(
        {
            "config": asdict(model.cfg),
            "vocab": vocab.to_dict(),
            "state_dict": model.state_dict(),
        },
        str(path),
    )


def load_checkpoint(path: str | Path) -> tuple[TextEncoderModel, WordTokenizer]:
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    cfg = EncoderConfig(**payload["config"])
    model = TextEncoderModel(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    vocab = Vocabulary.from_dict(payload["vocab"])
    return model, WordTokenizer(vocab)
