"""Desk-scale benchmark for defences against textual adversarial attacks."""

from .autodiff import Node, backward
from .attacks import AttackBudget, AttackResult, Victim, attack_textbugger, attack_textfooler, brute_force_attack
from .data import Example, SynonymTable, Vocabulary, build_synonym_table, build_vocab, synth_dataset, tokenize
from .defences import ALS, PGD, SLS, TAVAT, TTSO, Baseline, FreeLB, Flooding, TrainConfig, TTSOpp, train
from .metrics import accuracy_under_attack, apdr, attack_success_rate, avg_queries, clean_accuracy, pdr
from .model import TextClassifier

__version__ = "0.1.0"

__all__ = [
    "Node",
    "backward",
    "AttackBudget",
    "AttackResult",
    "Victim",
    "attack_textbugger",
    "attack_textfooler",
    "brute_force_attack",
    "Example",
    "SynonymTable",
    "Vocabulary",
    "build_synonym_table",
    "build_vocab",
    "synth_dataset",
    "tokenize",
    "ALS",
    "PGD",
    "SLS",
    "TAVAT",
    "TTSO",
    "Baseline",
    "FreeLB",
    "Flooding",
    "TrainConfig",
    "TTSOpp",
    "train",
    "accuracy_under_attack",
    "apdr",
    "attack_success_rate",
    "avg_queries",
    "clean_accuracy",
    "pdr",
    "TextClassifier",
]
