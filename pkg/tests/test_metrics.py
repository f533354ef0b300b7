import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from published_rows import ROWS
from textdefence import metrics as M
from textdefence.metrics import AttackRecord as R


def log(n_correct_flipped, n_correct_held, n_wrong, queries=10):
    """Attack log with the given outcome counts (labels all 1)."""
    return ([R(1, 1, True, queries)] * n_correct_flipped + [R(1, 1, False, queries)] * n_correct_held
            + [R(1, 0, False, 1)] * n_wrong)


@st.composite
def attack_logs(draw):
    n = draw(st.integers(1, 60))
    out = []
    for _ in range(n):
        correct = draw(st.booleans())
        out.append(R(1, 1 if correct else 0, correct and draw(st.booleans()), draw(st.integers(1, 500))))
    return out


# hand counts ----------------------------------------------------------------

def test_clean_accuracy_counts():
    assert M.clean_accuracy(log(0, 5, 0)) == 100.0
    assert M.clean_accuracy(log(0, 0, 5)) == 0.0
    assert M.clean_accuracy(log(3, 5, 2)) == 80.0
    with pytest.raises(ValueError):
        M.clean_accuracy([])


def test_accuracy_under_attack_counts():
    assert M.accuracy_under_attack(log(0, 8, 2)) == M.clean_accuracy(log(0, 8, 2))
    assert M.accuracy_under_attack(log(8, 0, 2)) == 0.0
    assert M.accuracy_under_attack(log(6, 2, 2)) == 20.0


def test_attack_success_rate_counts():
    assert M.attack_success_rate(log(6, 2, 2)) == 75.0
    assert M.attack_success_rate(log(0, 8, 2)) == 0.0
    with pytest.raises(ValueError):
        M.attack_success_rate(log(0, 0, 3))


def test_avg_queries_uses_successes_only():
    assert M.avg_queries([R(1, 1, True, 40)]) == 40.0
    recs = [R(1, 1, True, 10), R(1, 1, True, 30), R(1, 1, False, 999), R(1, 0, False, 1)]
    assert M.avg_queries(recs) == 20.0
    assert M.avg_queries(log(0, 4, 1)) is None


def test_success_on_a_clean_error_is_rejected():
    with pytest.raises(ValueError):
        R(1, 0, True, 5)


# published arithmetic --------------------------------------------------------

def test_pdr_reproduces_published_rows():
    # SST2, BERT-base, no defence
    assert M.pdr(91.54, 6.59) == pytest.approx(92.80, abs=0.01)
    assert M.pdr(91.54, 28.08) == pytest.approx(69.33, abs=0.01)
    assert M.pdr(91.54, 91.54) == 0.0
    with pytest.raises(ValueError):
        M.pdr(0.0, 0.0)


def test_asr_from_published_accuracies():
    assert 100 * (1 - 6.59 / 91.54) == pytest.approx(92.80, abs=0.05)


def test_apdr_reproduces_published_rows():
    assert M.apdr([92.80, 69.33]) == pytest.approx(81.06, abs=0.05)
    assert M.apdr([49.58]) == 49.58
    # SST2, BERT-base, TTSO
    ttso = next(r for r in ROWS if r[:3] == ("BERT-base", "SST2", "TTSO"))
    acc, tf_aua, tb_aua, published = ttso[3], ttso[4], ttso[7], ttso[10]
    assert M.apdr([M.pdr(acc, tf_aua), M.pdr(acc, tb_aua)]) == pytest.approx(published, abs=0.05)
    with pytest.raises(ValueError):
        M.apdr([])


@pytest.mark.parametrize("row", ROWS, ids=lambda r: "-".join(r[:3]))
def test_every_published_row_is_consistent(row):
    _, _, _, acc, tf_aua, tf_asr, _, tb_aua, tb_asr, _, published_apdr = row
    assert M.pdr(acc, tf_aua) == pytest.approx(tf_asr, abs=0.05)
    assert M.pdr(acc, tb_aua) == pytest.approx(tb_asr, abs=0.05)
    assert M.apdr([M.pdr(acc, tf_aua), M.pdr(acc, tb_aua)]) == pytest.approx(published_apdr, abs=0.05)


# protocol ---------------------------------------------------------------------

@given(attack_logs())
def test_protocol_identity(recs):
    acc = M.clean_accuracy(recs)
    aua = M.accuracy_under_attack(recs)
    if acc == 0:
        return
    asr = M.attack_success_rate(recs)
    assert abs(M.pdr(acc, aua) - asr) < 1e-9
    assert abs(M.pdr_from_records(recs) - asr) < 1e-9
    assert abs(aua - acc * (1 - asr / 100)) < 1e-9


@given(attack_logs(), st.randoms(use_true_random=False))
def test_metrics_ignore_record_order(recs, rnd):
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert M.clean_accuracy(recs) == M.clean_accuracy(shuffled)
    assert M.accuracy_under_attack(recs) == M.accuracy_under_attack(shuffled)
    q, q_shuffled = M.avg_queries(recs), M.avg_queries(shuffled)
    assert (q is None and q_shuffled is None) or q == pytest.approx(q_shuffled, abs=1e-12)


@given(attack_logs())
def test_one_more_success_never_helps_the_defender(recs):
    held = [i for i, r in enumerate(recs) if r.clean_correct and not r.success]
    if not held:
        return
    worse = list(recs)
    worse[held[0]] = R(1, 1, True, 5)
    assert M.accuracy_under_attack(worse) <= M.accuracy_under_attack(recs)
    assert M.attack_success_rate(worse) >= M.attack_success_rate(recs)


def test_subsampled_sets_need_an_explicit_flag():
    ds = M.AttackedDataset(log(1, 1, 0), subsampled=True)
    for f in (M.clean_accuracy, M.accuracy_under_attack, M.attack_success_rate, M.avg_queries):
        with pytest.raises(M.SubsampleError):
            f(ds)
        f(ds, allow_subsample=True)
    with pytest.raises(M.SubsampleError):
        M.evaluate(ds, "d", "m", "x", "a")
    full = M.AttackedDataset(log(1, 1, 0))
    assert M.clean_accuracy(full) == 100.0


# records and CSV ---------------------------------------------------------------

def test_eval_record_ranges():
    with pytest.raises(ValueError):
        M.EvalRecord("d", "m", "x", "a", acc=101.0)
    with pytest.raises(ValueError):
        M.EvalRecord("d", "m", "x", "a", acc=50.0, aua=60.0)


def test_evaluate_and_summary_rows():
    tf = M.evaluate(log(6, 2, 2, queries=30), "synth", "m", "TTSO", "TextFooler")
    tb = M.evaluate(log(2, 6, 2, queries=50), "synth", "m", "TTSO", "TextBugger")
    assert (tf.acc, tf.aua, tf.asr, tf.avgq) == (80.0, 20.0, 75.0, 30.0)
    assert tf.pdr == pytest.approx(tf.asr, abs=1e-9)
    rows = M.with_summaries([tf, tb])
    assert [r.attack for r in rows] == ["TextFooler", "TextBugger", M.APDR_ROW]
    assert rows[-1].pdr == pytest.approx((75.0 + 25.0) / 2, abs=1e-9)
    assert M.with_summaries(rows) == rows


def test_evaluate_when_nothing_is_correct():
    row = M.evaluate(log(0, 0, 4), "d", "m", "x", "a")
    assert (row.acc, row.aua, row.asr, row.avgq) == (0.0, 0.0, 0.0, None)


def test_csv_round_trip(tmp_path):
    rng = random.Random(0)
    rows = []
    for defence in ("Baseline", "TTSO"):
        for attack in ("TextFooler", "TextBugger"):
            recs = log(rng.randint(0, 5), rng.randint(1, 5), rng.randint(0, 3), rng.randint(1, 90))
            rows.append(M.evaluate(recs, "synth", "meanpool", defence, attack))
    rows = M.with_summaries(rows)
    path = tmp_path / "eval.csv"
    M.write_csv(path, rows)
    assert path.read_text().splitlines()[0] == ",".join(M.CSV_FIELDS)
    assert M.read_csv(path) == rows
    M.write_csv(tmp_path / "again.csv", M.read_csv(path))
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_csv_header_is_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        M.read_csv(path)
