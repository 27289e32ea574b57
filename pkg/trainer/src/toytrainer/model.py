"""Byte-level tiny causal language model (well under 10M parameters)."""
from __future__ import annotations

import torch
from torch import nn

PAD_ID = 256
VOCAB_SIZE = 257  # 256 byte values + padding


class TinyByteLM(nn.Module):
    def __init__(self, d_model: int = 64, n_heads: int = 4, n_layers: int = 2,
                 d_ff: int = 128, max_len: int = 256):
        super().__init__()
        self.max_len = max_len
        self.tok = nn.Embedding(VOCAB_SIZE, d_model, padding_idx=PAD_ID)
        self.pos = nn.Embedding(max_len, d_model)
        layer = nn.TransformerEncoderLayer(
            d_model=d_model, nhead=n_heads, dim_feedforward=d_ff,
            batch_first=True, dropout=0.0, norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=n_layers,
                                            enable_nested_tensor=False)
        self.head = nn.Linear(d_model, VOCAB_SIZE)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        seq_len = ids.shape[1]
        positions = torch.arange(seq_len, device=ids.device)
        x = self.tok(ids) + self.pos(positions)
        causal = torch.triu(
            torch.ones(seq_len, seq_len, dtype=torch.bool, device=ids.device), diagonal=1
        )
        x = self.blocks(x, mask=causal, src_key_padding_mask=ids.eq(PAD_ID))
        return self.head(x)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def encode(prompt: str, completion: str, max_len: int) -> tuple[list[int], int]:
    """Byte-encode prompt+completion, keeping the completion and as much of
    the prompt tail as fits.  Returns (ids, completion_start_index)."""
    comp = list(completion.encode("utf-8"))[: max_len - 2]
    budget = max_len - len(comp)
    prom = list(prompt.encode("utf-8"))[-budget:]
    return prom + comp, len(prom)


def batchify(encoded: list[tuple[list[int], int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a batch; labels are -100 everywhere except completion positions."""
    width = max(len(ids) for ids, _ in encoded)
    ids_out = torch.full((len(encoded), width), PAD_ID, dtype=torch.long)
    labels = torch.full((len(encoded), width), -100, dtype=torch.long)
    for i, (ids, comp_start) in enumerate(encoded):
        ids_out[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        labels[i, comp_start: len(ids)] = torch.tensor(ids[comp_start:], dtype=torch.long)
    return ids_out, labels


def sequence_logprobs(model: nn.Module, ids: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Sum of next-token log-probabilities over labeled positions, per row."""
    logits = model(ids)[:, :-1]
    targets = labels[:, 1:]
    logp = torch.log_softmax(logits, dim=-1)
    mask = targets.ne(-100)
    safe = targets.clamp(min=0)
    picked = logp.gather(-1, safe.unsqueeze(-1)).squeeze(-1)
    return (picked * mask).sum(dim=-1)


__all__ = ["TinyByteLM", "PAD_ID", "VOCAB_SIZE", "encode", "batchify",
           "sequence_logprobs"]
