import itertools
import json
import math
import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cplm.errors import BenchmarkParseError, ContractViolation, EmptyCorpusError
from cplm.evaluation import (
    CATEGORY_ORDER,
    OVERALL,
    CategoryScore,
    EvalReport,
    MinimalPair,
    ScoredPair,
    build_report,
    compare_reports,
    convert_alternating,
    load_benchmark,
    merge_reports,
    report_columns,
    score_pair,
    score_pairs,
    significance_marker,
    write_report_csv,
    z_test_proportions,
)
from cplm.model import ModelConfig, TransformerLM
from cplm.tokenizer import SPECIAL_TOKENS, Tokenizer


def scored(cat, good, bad, sub=""):
    return ScoredPair(MinimalPair(cat, sub, f"g {cat} {sub}", f"b {cat} {sub}"), good, bad)


def test_pair_invariants():
    with pytest.raises(ContractViolation):
        MinimalPair("X", "", "same", "same")
    with pytest.raises(ContractViolation):
        MinimalPair("X", "", "", "bad")


@pytest.mark.parametrize("good,bad,correct", [(-5.0, -6.0, True), (-6.0, -5.0, False), (-5.0, -5.0, False)])
def test_pair_decision(good, bad, correct):
    assert scored("A", good, bad).correct is correct


def test_report_macro_average():
    results = [scored("A", -1, -2), scored("A", -2, -1)] + [scored("B", -1, -2)] * 7 + [scored("B", -2, -1)] * 3
    rep = build_report(results, "m")
    assert rep.per_category["A"] == CategoryScore(0.5, 2, 1)
    assert rep.overall == pytest.approx(0.6)
    assert build_report([scored("A", -1, -2)] * 3).overall == 1.0


def test_skipped_pairs_counted_apart():
    pair = MinimalPair("A", "", "x y", "y x")
    rep = build_report([ScoredPair(pair, None, None, skipped=True), scored("A", -1, -2)])
    assert rep.per_category["A"] == CategoryScore(1.0, 1, 1, 1)


def test_columns_follow_published_order():
    rep = build_report([scored(c, -1, -2) for c in reversed(CATEGORY_ORDER)])
    assert report_columns([rep]) == [OVERALL] + list(CATEGORY_ORDER)
    assert len(CATEGORY_ORDER) == 13


def test_load_benchmark(tmp_path):
    p = tmp_path / "b.jsonl"
    p.write_text(json.dumps({"category": "case", "subcategory": "subjective_pronoun",
                             "good": "i brought the wolf my hill .", "bad": "the wolf brought i my hill ."}) + "\n")
    pairs = load_benchmark(p)
    assert len(pairs) == 1 and pairs[0].category == "CASE"


def test_benchmark_errors(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(EmptyCorpusError, match="empty benchmark"):
        load_benchmark(tmp_path / "e.jsonl")
    (tmp_path / "m.jsonl").write_text('{"category": "A", "good": "a b", "bad": "b a"}\n{"category": "A"}\n')
    with pytest.raises(BenchmarkParseError) as info:
        load_benchmark(tmp_path / "m.jsonl")
    assert info.value.line_no == 2


def test_duplicate_pairs_warn_and_stay(tmp_path):
    line = json.dumps({"category": "A", "good": "a b", "bad": "b a"}) + "\n"
    (tmp_path / "d.jsonl").write_text(line * 2)
    with pytest.warns(UserWarning, match="duplicate"):
        assert len(load_benchmark(tmp_path / "d.jsonl")) == 2


def test_many_subcategories(tmp_path):
    with open(tmp_path / "big.jsonl", "w") as fh:
        for sub in range(23):
            for i in range(2000):
                fh.write(json.dumps({"category": "C", "subcategory": f"s{sub}", "good": f"g {i}", "bad": f"b {i}"}) + "\n")
    assert len(load_benchmark(tmp_path / "big.jsonl")) == 46000


def test_alternating_converter(tmp_path):
    (tmp_path / "alt.txt").write_text("bad one .\ngood one .\nbad two .\ngood two .\n")
    pairs = convert_alternating(tmp_path / "alt.txt", "npi", "only")
    assert [(p.good, p.bad) for p in pairs] == [("good one .", "bad one ."), ("good two .", "bad two .")]
    assert convert_alternating(tmp_path / "alt.txt", "npi", good_first=True)[0].good == "bad one ."


# z-test -----------------------------------------------------------------

def test_z_equal_proportions():
    t = z_test_proportions(50, 100, 50, 100)
    assert t.z == 0 and t.p_two_sided == 1.0 and not t.significant


def test_z_closed_form():
    ca, cb, n = 1244, 1130, 2000  # 0.622 and 0.565
    t = z_test_proportions(ca, n, cb, n)
    p = (ca + cb) / (2 * n)
    z = (0.622 - 0.565) / math.sqrt(p * (1 - p) * (2 / n))
    assert t.z == pytest.approx(z, abs=1e-12)
    assert t.z == pytest.approx(3.66, abs=0.01)
    assert t.p_two_sided == pytest.approx(math.erfc(z / math.sqrt(2)), rel=1e-9)
    assert t.significant


def test_z_degenerate():
    t = z_test_proportions(10, 10, 20, 20)
    assert t.degenerate and t.z is None and not t.significant
    assert z_test_proportions(0, 10, 0, 5).degenerate


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 500), st.integers(1, 500), st.data())
def test_z_antisymmetric(na, nb, data):
    ca, cb = data.draw(st.integers(0, na)), data.draw(st.integers(0, nb))
    ab, ba = z_test_proportions(ca, na, cb, nb), z_test_proportions(cb, nb, ca, na)
    assert ab.p_two_sided == pytest.approx(ba.p_two_sided, abs=1e-15)
    if not ab.degenerate:
        assert ab.z == pytest.approx(-ba.z, abs=1e-12)


def test_markers_follow_the_test():
    sig = z_test_proportions(1244, 2000, 1130, 2000)
    assert significance_marker(sig, +0.057) == "*"
    assert significance_marker(sig, -0.057) == "†"
    assert significance_marker(z_test_proportions(50, 100, 52, 100), 0.02) == ""


def test_compare_pools_overall_counts():
    a = EvalReport({"X": CategoryScore(0.9, 100, 90), "Y": CategoryScore(0.5, 100, 50)})
    b = EvalReport({"X": CategoryScore(0.5, 100, 50), "Y": CategoryScore(0.5, 100, 50)})
    tests = compare_reports(a, b)
    assert tests["X"].significant and not tests["Y"].significant
    assert tests[OVERALL] == z_test_proportions(140, 200, 100, 200)


def test_self_comparison_has_no_markers():
    a = EvalReport({"X": CategoryScore(0.7, 100, 70)})
    assert all(not t.significant for t in compare_reports(a, a).values())


def test_merge_sums_counts():
    r1 = EvalReport({"X": CategoryScore(0.5, 10, 5)}, seed_set=[0])
    r2 = EvalReport({"X": CategoryScore(0.7, 10, 7)}, seed_set=[1])
    merged = merge_reports([r1, r2], "m")
    assert merged.per_category["X"] == CategoryScore(0.6, 20, 12)
    assert merged.seed_set == [0, 1]


def test_report_csv(tmp_path):
    rep = EvalReport({"S-V AGR": CategoryScore(0.625, 8, 5), "D-N AGR": CategoryScore(1.0, 2, 2)}, "NoLimit")
    write_report_csv([rep], tmp_path / "r.csv", markers={"NoLimit": {"S-V AGR": "*"}})
    assert (tmp_path / "r.csv").read_text() == "model,OVERALL,D-N AGR,S-V AGR\nNoLimit,81.2,100.0,62.5*\n"
    assert EvalReport.from_json(rep.to_json()) == rep


# scoring against an exhaustive bigram oracle ------------------------------

WORDS = ("a", "b", "c")


def bigram_transformer(log_table):
    """A transformer whose next-token distribution depends only on the current token.

    Blocks are zeroed so the residual stream is the one-hot token embedding;
    the final layer norm maps e_i to (e_i - 1/d) / s, and an extra dimension
    carrying minus the column sum makes the head read back column i.
    """
    V = log_table.shape[0]
    d = V + 1
    cfg = ModelConfig(n_layers=1, n_heads=1, d_model=d, vocab_size=V, max_seq_len=8, dropout=0.0,
                      positional="none", tied_embeddings=False)
    m = TransformerLM(cfg).double().eval()
    s = math.sqrt((1 / d) * (1 - 1 / d) + m.ln_f.eps)
    with torch.no_grad():
        for p in m.blocks.parameters():
            p.zero_()
        m.tok_emb.weight.copy_(torch.eye(V, d, dtype=torch.float64))
        W = torch.zeros(V, d, dtype=torch.float64)
        W[:, :V] = s * torch.as_tensor(log_table).T
        W[:, V] = -W[:, :V].sum(dim=1)
        m.lm_head.weight.copy_(W)
    return m


def test_bigram_oracle_agrees_exhaustively():
    rng = np.random.default_rng(0)
    tok = Tokenizer(SPECIAL_TOKENS + WORDS)
    V = len(tok)
    probs = rng.dirichlet(np.ones(V), size=V)  # row i: P(next | i)
    log_table = np.log(probs)
    model = bigram_transformer(log_table)

    def oracle(sentence):
        ids = [tok.bos_id] + [tok.vocab[w] for w in sentence] + [tok.eos_id]
        return sum(log_table[a, b] for a, b in zip(ids, ids[1:]))

    sentences = [s for n in range(1, 5) for s in itertools.product(WORDS, repeat=n)]
    exact = {s: oracle(s) for s in sentences}
    pairs = [MinimalPair("X", "", " ".join(g), " ".join(b)) for g, b in itertools.permutations(sentences, 2)]
    results = score_pairs(model, tok, pairs)
    assert len(results) == 120 * 119
    for r, (g, b) in zip(results, itertools.permutations(sentences, 2)):
        assert r.logp_good == pytest.approx(exact[g], abs=1e-9)
        # sentences with the same bigram multiset tie exactly; ties score incorrect
        assert r.correct == (exact[g] > exact[b] + 1e-9)
    single = score_pair(model, tok, MinimalPair("X", "", "a b", "b a"))
    assert single.logp_good == pytest.approx(exact[("a", "b")], abs=1e-9)


def test_swap_antisymmetry_and_duplication_invariance():
    rng = np.random.default_rng(1)
    tok = Tokenizer(SPECIAL_TOKENS + WORDS)
    model = bigram_transformer(np.log(rng.dirichlet(np.ones(len(tok)), size=len(tok))))
    sentences = [" ".join(s) for n in (2, 3) for s in itertools.product(WORDS, repeat=n)]
    pairs = [MinimalPair("A" if i % 2 else "B", "", g, b)
             for i, (g, b) in enumerate(zip(sentences, sentences[1:] + sentences[:1]))]
    rep = build_report(score_pairs(model, tok, pairs))
    flipped = build_report(score_pairs(model, tok, [p.swapped() for p in pairs]))
    for cat, c in rep.per_category.items():
        assert flipped.per_category[cat].accuracy == pytest.approx(1 - c.accuracy)
    doubled = build_report(score_pairs(model, tok, pairs + pairs))
    assert doubled.overall == pytest.approx(rep.overall)


def test_overlength_pairs_skipped(tiny_tok):
    from conftest import tiny_model

    m = tiny_model(vocab=len(tiny_tok), max_seq_len=5)
    res = score_pairs(m, tiny_tok, [MinimalPair("X", "", "the cat sat . .", "the cat sat ."),
                                    MinimalPair("X", "", "the cat", "cat the")], [1.0, 0.5])
    assert res[0].skipped and not res[1].skipped
    assert build_report(res).per_category["X"].n_skipped == 1


def test_benchmark_lowercased_before_scoring(tiny_tok):
    from conftest import tiny_model

    m = tiny_model(vocab=len(tiny_tok))
    a = score_pair(m, tiny_tok, MinimalPair("X", "", "The Cat sat", "Cat the sat"), [1.0, 0.5])
    b = score_pair(m, tiny_tok, MinimalPair("X", "", "the cat sat", "cat the sat"), [1.0, 0.5])
    assert a.logp_good == b.logp_good
