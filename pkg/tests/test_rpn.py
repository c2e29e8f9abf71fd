import numpy as np
import pytest

from config import CONFIG
from errors import ConfigError, DivisionByZeroSignal, GeneratorStuckError, MalformedExpressionError, ParseError
from rpn import (
    NUM_SYMBOLS,
    DatasetSpec,
    Expression,
    Rng,
    Token,
    answer_statistics,
    evaluate,
    format_expression,
    generate_expression,
    generate_split,
    make_batch,
    parse_line,
    read_dataset,
    subexpression,
    tree_evaluate,
    write_dataset,
    write_expressions,
)


# ── PRNG ────────────────────────────────────────────────────────────────────

def test_splitmix64_reference_stream():
    rng = Rng(1234567)
    assert [rng.next_u64() for _ in range(5)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
        4593380528125082431,
        16408922859458223821,
    ]
    seeded = Rng(42)
    assert [seeded.next_u64(), seeded.next_u64()] == [13679457532755275413, 2949826092126892291]
    assert Rng(0).next_u64() == 0xE220A8397B1DCDAF


def test_next_below_and_next_float_ranges():
    rng = Rng(9)
    draws = [rng.next_below(10) for _ in range(2000)]
    assert set(draws) == set(range(10))
    floats = [rng.next_float() for _ in range(1000)]
    assert all(0.0 <= f < 1.0 for f in floats)
    with pytest.raises(ValueError):
        rng.next_below(0)


# ── Evaluation ──────────────────────────────────────────────────────────────

@pytest.mark.parametrize("text,expected", [
    ("2 3 4 + *", [7.0, 14.0]),
    ("0.4 0.8 /", [0.5]),
    ("0.3 0.0 +", [0.3]),
    ("3 4 5 + -", [9.0, -6.0]),
])
def test_evaluate_examples(text, expected):
    assert evaluate(text) == expected
    assert tree_evaluate(text) == expected


@pytest.mark.parametrize("text", ["1 +", "1 2", "1 2 3 +", "+"])
def test_malformed_expressions(text):
    with pytest.raises(MalformedExpressionError):
        evaluate(text)


def test_division_by_exact_zero_signals():
    with pytest.raises(DivisionByZeroSignal):
        evaluate("0.5 0.0 /")
    assert evaluate("0.5 0.1 /")[0] == pytest.approx(5.0)


def test_stack_and_tree_evaluators_agree_bitwise():
    rng = Rng(2024)
    for i in range(10_000):
        expr = generate_expression(rng, 1 + i % 12)
        assert evaluate(expr.tokens) == tree_evaluate(expr.tokens) == list(expr.answers)


def test_subproblem_k_is_the_central_crop():
    rng = Rng(11)
    for _ in range(200):
        expr = generate_expression(rng, 6)
        for k in range(expr.n):
            crop = subexpression(expr, k)
            assert len(crop) == 2 * (k + 1) + 1
            assert evaluate(crop)[-1] == expr.answers[k]
            assert tree_evaluate(crop)[-1] == expr.answers[k]


# ── Generation ──────────────────────────────────────────────────────────────

def test_generated_layout_and_bound():
    rng = Rng(CONFIG.SEED)
    for _ in range(500):
        expr = generate_expression(rng, 10)
        assert all(t.is_num for t in expr.tokens[:11])
        assert not any(t.is_num for t in expr.tokens[11:])
        assert max(abs(a) for a in expr.answers) <= 100.0


def test_generation_is_deterministic_per_seed():
    first = generate_expression(Rng(42), 10)
    assert first == generate_expression(Rng(42), 10)
    assert first.text == "0.3 0.1 0.8 0.4 0.0 0.2 0.5 0.8 0.5 0.4 0.7 * * / + * - - / + +"
    assert format_expression(first).split(" | ")[1] == (
        "0.27999999999999997 0.13999999999999999 5.714285714285715 6.214285714285715 "
        "1.242857142857143 -1.242857142857143 1.6428571428571432 0.48695652173913034 "
        "0.5869565217391304 0.8869565217391304"
    )

def test_first_training_line_at_seed_42(tmp_path):
    write_dataset(DatasetSpec(n=10, counts=(2, 1, 1, 1), seed=42, gen_n=10), str(tmp_path))
    first = (tmp_path / "train.rpn").read_text().splitlines()[0]
    assert first == (
        "0.8 0.7 0.2 0.6 0.1 0.3 0.2 0.6 0.9 0.6 0.4 + * + + * - - / - / | "
        "1.0 0.9 1.5 1.7 0.51 -0.41000000000000003 1.01 0.19801980198019803 "
        "0.501980198019802 1.5936883629191323"
    )


def test_generator_stuck_raises():
    with pytest.raises(GeneratorStuckError):
        generate_expression(Rng(1), 10, bound=-1.0, max_resamples=50)


def test_generate_n_must_be_positive():
    with pytest.raises(ConfigError):
        generate_expression(Rng(1), 0)


def test_splits_are_deterministic_and_distinct():
    spec = DatasetSpec(n=4, counts=(30, 10, 10, 5), seed=99, gen_n=7)
    train = generate_split(spec, 0)
    assert train == generate_split(spec, 0)
    assert train != generate_split(spec, 1, count=30)
    assert len(train) == 30 and all(e.n == 4 for e in train)
    gen = generate_split(spec, 3)
    assert len(gen) == 5 and all(e.n == 7 for e in gen)


def test_block_parallel_generation_matches_serial(monkeypatch):
    monkeypatch.setattr(CONFIG, "GEN_BLOCK_SIZE", 8)
    spec = DatasetSpec(n=3, counts=(40, 4, 4, 4), seed=5)
    assert generate_split(spec, 0, workers=2) == generate_split(spec, 0, workers=1)


def test_dataset_spec_validation():
    with pytest.raises(ConfigError):
        DatasetSpec(counts=(1, 2, 3))
    with pytest.raises(ConfigError):
        DatasetSpec(counts=(1, 0, 3, 4))


# ── Serialization ───────────────────────────────────────────────────────────

def test_single_division_line():
    assert format_expression(Expression.parse("0.4 0.8 /")) == "0.4 0.8 / | 0.5"


def test_round_trip_preserves_tokens_and_answers(tmp_path):
    rng = Rng(3)
    expressions = [generate_expression(rng, 1 + i % 5) for i in range(1000)]
    path = str(tmp_path / "round.rpn")
    write_expressions(path, expressions)
    assert read_dataset(path) == expressions


def test_write_dataset_is_byte_reproducible(tmp_path):
    spec = DatasetSpec(n=2, counts=(20, 5, 5, 5), seed=42, gen_n=4)
    a, b = tmp_path / "a", tmp_path / "b"
    written = write_dataset(spec, str(a))
    write_dataset(spec, str(b))
    assert sorted(written) == ["gen4.rpn", "test.rpn", "train.rpn", "val.rpn"]
    for name in written:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_empty_file_reads_as_empty_list(tmp_path):
    path = tmp_path / "empty.rpn"
    path.write_text("")
    assert read_dataset(str(path)) == []


@pytest.mark.parametrize("bad_line", [
    "0.4 0.8 / 0.5",
    "0.4 0.8 ^ | 0.5",
    "0.4 0.8 / | 0.5 0.7",
    "0.4 / 0.8 | 0.5",
    "0.4 0.8 / | half",
    "0.4 0.8 / | 99.0",
    "0.4 0.0 / | 0.0",
    "0.1 0.2 0.3 + - | 0.5 0.4",
])
def test_malformed_line_reports_line_number(tmp_path, bad_line):
    path = tmp_path / "bad.rpn"
    path.write_text(f"0.1 0.2 + | 0.30000000000000004\n{bad_line}\n")
    with pytest.raises(ParseError) as info:
        read_dataset(str(path))
    assert info.value.line_number == 2


def test_token_vocabulary():
    assert [Token.parse(s).vocab_index for s in NUM_SYMBOLS] == list(range(10))
    assert [Token.parse(s).vocab_index for s in "+-*/"] == [10, 11, 12, 13]
    with pytest.raises(MalformedExpressionError):
        Token("NUM", num_index=10)


def test_parse_line_keeps_stored_answers():
    expr = parse_line("0.1 0.2 + | 0.30000000000000004")
    assert expr.answers == (0.1 + 0.2,)


# ── Statistics / batching ───────────────────────────────────────────────────

def test_answer_statistics_skip():
    exprs = [Expression.parse("0.1 0.2 0.3 + +"), Expression.parse("0.5 0.5 0.5 * -")]
    full = answer_statistics(exprs)
    tail = answer_statistics(exprs, skip=1)
    assert full["count"] == 4 and tail["count"] == 2
    assert tail["mean"] == pytest.approx((0.6 + 0.25) / 2)
    assert np.isnan(answer_statistics(exprs, skip=5)["mean"])


def test_make_batch_requires_equal_n():
    with pytest.raises(MalformedExpressionError):
        make_batch([Expression.parse("0.1 0.2 +"), Expression.parse("0.1 0.2 0.3 + +")])
    batch = make_batch([Expression.parse("0.1 0.2 +"), Expression.parse("0.3 0.4 /")])
    assert batch.nums.shape == (2, 2) and batch.ops.tolist() == [[0], [3]]
    assert batch.vocab.tolist() == [[1, 2, 10], [3, 4, 13]]
