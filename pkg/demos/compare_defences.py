"""Train a few defences on the synthetic corpus and print their robustness.

    python demos/compare_defences.py [seed]
"""

import sys

from textdefence import defences
from textdefence.experiment import AttackSpec, evaluate_attacks, fit, prepare

DATASET = {"kind": "synth", "n": 2000, "vocab_size": 200, "noise": 0.05}
CANDIDATES = [{"kind": "baseline"}, {"kind": "ttso", "T": 10.0}, {"kind": "ttsopp"}, {"kind": "pgd"}]


def main(seed: int = 0) -> None:
    prep = prepare(DATASET, {}, seed)
    specs = [AttackSpec("textfooler"), AttackSpec("textbugger")]
    print(f"{'defence':<10}{'Acc':>8}{'Aua TF':>9}{'Aua TB':>9}{'Apdr':>8}")
    for cfg in CANDIDATES:
        result, resolved, _ = fit(prep, cfg, None, None, seed)
        rows, _ = evaluate_attacks(result.model, prep, specs, defences.defence_name(resolved))
        by = {r.attack: r for r in rows}
        print(f"{defences.defence_name(resolved):<10}{by['TextFooler'].acc:8.2f}"
              f"{by['TextFooler'].aua:9.2f}{by['TextBugger'].aua:9.2f}{by['apdr'].pdr:8.2f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
