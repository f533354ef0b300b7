"""Show a single greedy word-substitution attack, word by word."""

from textdefence import attacks, data, defences
from textdefence.experiment import fit, prepare

prep = prepare({"kind": "synth", "n": 2000}, {"k": 10}, seed=0)
result, _, _ = fit(prep, {"kind": "baseline"}, None, None, seed=0)
victim = attacks.Victim(result.model, prep.vocab)

for ex in prep.splits.test[:20]:
    words = data.split_words(ex.text_a)
    res = attacks.attack_textfooler(victim, words, ex.label, prep.synonyms)
    if res.success:
        break

print("label    ", ex.label)
print("original ", " ".join(words))
print("perturbed", " ".join(w if w == o else f"[{w}]" for w, o in zip(res.perturbed, words)))
print(f"prediction {res.original_pred} -> {res.final_pred} after {res.queries} queries, "
      f"{res.words_changed} word(s) changed")
print("validation accuracy", round(100 * defences.accuracy(result.model, prep.validation), 2))
