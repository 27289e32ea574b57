"""SFT and DPO training loops for the tiny byte-level model.

``run_sft`` trains for a fixed number of epochs and must end with a lower
training loss than it started with; ``run_dpo`` runs an exact number of
optimization steps and must end with a higher mean implicit reward margin
(chosen minus rejected) than it started with.  Both write a key-value
time-series metrics file and a checkpoint.
"""
from __future__ import annotations

import copy
import math
import random
from dataclasses import dataclass
from pathlib import Path

import torch
from torch.nn import functional as F

from .data import load_pairs, load_sft
from .model import TinyByteLM, batchify, encode, sequence_logprobs


class NonFiniteLoss(Exception):
    pass


@dataclass(frozen=True)
class ToyTrainConfig:
    sft_epochs: int = 1
    dpo_steps: int = 50
    model_size: str = "tiny"
    seed: int = 0
    lr: float = 1e-3
    # defaults below are harness choices, recorded in the metrics file
    dpo_beta: float = 0.1
    batch_size: int = 8
    max_len: int = 192

    def __post_init__(self):
        if self.model_size != "tiny":
            raise ValueError(f"unsupported model size {self.model_size!r}")
        if self.sft_epochs < 1:
            raise ValueError("sft_epochs must be >= 1")


def write_metrics(path: str | Path, rows: list[tuple[int, str, float]]) -> None:
    lines = [f"step={step} key={key} value={value:.6f}" for step, key, value in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics(path: str | Path) -> list[tuple[int, str, float]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        fields = dict(part.split("=", 1) for part in line.split())
        rows.append((int(fields["step"]), fields["key"], float(fields["value"])))
    return rows


def _seed_everything(seed: int) -> None:
    random.seed(seed)
    torch.manual_seed(seed)


def _sft_batches(records, cfg: ToyTrainConfig, rng: random.Random):
    order = list(range(len(records)))
    rng.shuffle(order)
    for start in range(0, len(order), cfg.batch_size):
        chunk = [records[i] for i in order[start: start + cfg.batch_size]]
        yield batchify([encode(r.prompt, r.completion, cfg.max_len) for r in chunk])


def _mean_sft_loss(model, records, cfg: ToyTrainConfig) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for ids, labels in _sft_batches(records, cfg, random.Random(0)):
            logits = model(ids)[:, :-1]
            loss = F.cross_entropy(
                logits.reshape(-1, logits.shape[-1]), labels[:, 1:].reshape(-1),
                ignore_index=-100,
            )
            total += loss.item() * ids.shape[0]
            count += ids.shape[0]
    model.train()
    return total / count


def run_sft(dataset_path: str | Path, cfg: ToyTrainConfig,
            out_dir: str | Path) -> Path:
    """Train the toy model on an SFT JSONL file; returns the metrics path."""
    records = load_sft(dataset_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _seed_everything(cfg.seed)

    model = TinyByteLM(max_len=cfg.max_len)
    assert model.num_parameters() <= 10_000_000
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr)

    rows: list[tuple[int, str, float]] = []
    initial_loss = _mean_sft_loss(model, records, cfg)
    rows.append((0, "sft_initial_loss", initial_loss))

    step = 0
    for epoch in range(1, cfg.sft_epochs + 1):
        for ids, labels in _sft_batches(records, cfg, random.Random(cfg.seed + epoch)):
            step += 1
            logits = model(ids)[:, :-1]
            loss = F.cross_entropy(
                logits.reshape(-1, logits.shape[-1]), labels[:, 1:].reshape(-1),
                ignore_index=-100,
            )
            if not math.isfinite(loss.item()):
                raise NonFiniteLoss(f"sft loss diverged at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            rows.append((step, "sft_loss", loss.item()))

    final_loss = _mean_sft_loss(model, records, cfg)
    rows.append((step, "sft_final_loss", final_loss))
    if not final_loss < initial_loss:
        raise NonFiniteLoss(
            f"sft did not reduce the loss ({initial_loss:.4f} -> {final_loss:.4f})"
        )

    torch.save(model.state_dict(), out_dir / "sft_checkpoint.pt")
    metrics_path = out_dir / "sft_metrics.txt"
    write_metrics(metrics_path, rows)
    return metrics_path


def _pair_margin(policy, reference, batch, cfg: ToyTrainConfig) -> torch.Tensor:
    """Per-pair implicit reward margin beta*((c - c_ref) - (r - r_ref))."""
    chosen_ids, chosen_labels = batchify(
        [encode(p.prompt, p.chosen, cfg.max_len) for p in batch])
    rejected_ids, rejected_labels = batchify(
        [encode(p.prompt, p.rejected, cfg.max_len) for p in batch])
    pol_c = sequence_logprobs(policy, chosen_ids, chosen_labels)
    pol_r = sequence_logprobs(policy, rejected_ids, rejected_labels)
    with torch.no_grad():
        ref_c = sequence_logprobs(reference, chosen_ids, chosen_labels)
        ref_r = sequence_logprobs(reference, rejected_ids, rejected_labels)
    return cfg.dpo_beta * ((pol_c - ref_c) - (pol_r - ref_r))


def _mean_margin(policy, reference, pairs, cfg: ToyTrainConfig) -> float:
    policy.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(pairs), cfg.batch_size):
            batch = pairs[start: start + cfg.batch_size]
            total += _pair_margin(policy, reference, batch, cfg).sum().item()
            count += len(batch)
    policy.train()
    return total / count


def run_dpo(pairs_path: str | Path, checkpoint: str | Path,
            cfg: ToyTrainConfig, out_dir: str | Path) -> Path:
    """Run exactly ``cfg.dpo_steps`` preference-optimization steps."""
    if cfg.dpo_steps < 1:
        raise ValueError("dpo_steps must be >= 1")
    pairs = load_pairs(pairs_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _seed_everything(cfg.seed)

    policy = TinyByteLM(max_len=cfg.max_len)
    policy.load_state_dict(torch.load(checkpoint, weights_only=True))
    reference = copy.deepcopy(policy)
    reference.eval()
    for p in reference.parameters():
        p.requires_grad_(False)
    optimizer = torch.optim.AdamW(policy.parameters(), lr=cfg.lr)

    rows: list[tuple[int, str, float]] = []
    start_margin = _mean_margin(policy, reference, pairs, cfg)
    rows.append((0, "dpo_initial_margin", start_margin))

    rng = random.Random(cfg.seed)
    for step in range(1, cfg.dpo_steps + 1):
        batch = [pairs[rng.randrange(len(pairs))] for _ in range(cfg.batch_size)]
        margin = _pair_margin(policy, reference, batch, cfg)
        loss = -F.logsigmoid(margin).mean()
        if not math.isfinite(loss.item()):
            raise NonFiniteLoss(f"dpo loss diverged at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        rows.append((step, "dpo_loss", loss.item()))
        rows.append((step, "dpo_batch_margin", margin.mean().item()))

    end_margin = _mean_margin(policy, reference, pairs, cfg)
    rows.append((cfg.dpo_steps, "dpo_final_margin", end_margin))
    if not end_margin > start_margin:
        raise NonFiniteLoss(
            f"dpo did not increase the margin ({start_margin:.4f} -> {end_margin:.4f})"
        )

    torch.save(policy.state_dict(), out_dir / "dpo_checkpoint.pt")
    metrics_path = out_dir / "dpo_metrics.txt"
    write_metrics(metrics_path, rows)
    return metrics_path


__all__ = ["ToyTrainConfig", "NonFiniteLoss", "run_sft", "run_dpo",
           "write_metrics", "read_metrics"]
