"""Toy-scale training harness for the exported alignment JSONL datasets."""
from .data import EmptyDataset, PairRecord, SchemaMismatch, SftRecord, load_pairs, load_sft
from .model import PAD_ID, VOCAB_SIZE, TinyByteLM
from .train import NonFiniteLoss, ToyTrainConfig, read_metrics, run_dpo, run_sft, write_metrics

__version__ = "0.1.0"

__all__ = [
    "SftRecord", "PairRecord", "SchemaMismatch", "EmptyDataset",
    "load_sft", "load_pairs",
    "TinyByteLM", "PAD_ID", "VOCAB_SIZE",
    "ToyTrainConfig", "NonFiniteLoss", "run_sft", "run_dpo",
    "write_metrics", "read_metrics",
]
