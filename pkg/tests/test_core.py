import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from attnedit.core import (
    AmbiguityError,
    AttentionStore,
    EditSpec,
    InvalidRangeError,
    MapKey,
    MisalignmentError,
    StoreError,
    ValidationError,
    WordTokenizer,
    align_edit_words,
    build_schedule,
    normalize_whitespace,
)
from attnedit.core.store import MAGIC


def test_schedule_default_thirty_steps():
    s = build_schedule()
    assert s.num_steps == 30
    assert s.alphas_cumprod[0] == 1.0


def test_schedule_single_step():
    s = build_schedule(1, 0.5, 0.5)
    assert s.alphas_cumprod.tolist() == [1.0, 0.5]


def test_schedule_three_steps_hand_product():
    s = build_schedule(3, 0.1, 0.3)
    np.testing.assert_allclose(s.alphas_cumprod, [1.0, 0.9, 0.72, 0.504], rtol=0, atol=1e-15)


@pytest.mark.parametrize("T,b0,b1", [(0, 0.1, 0.2), (3, 0.0, 0.2), (3, 0.3, 0.2), (3, 0.1, 1.0), (-1, 0.1, 0.2)])
def test_schedule_rejects_bad_ranges(T, b0, b1):
    with pytest.raises(InvalidRangeError):
        build_schedule(T, b0, b1)


@settings(max_examples=200, deadline=None)
@given(
    T=st.integers(1, 200),
    b0=st.floats(1e-6, 0.5),
    span=st.floats(0.0, 0.49),
    train=st.one_of(st.none(), st.integers(200, 2000)),
)
def test_schedule_strictly_decreasing_from_one(T, b0, span, train):
    b1 = min(b0 + span, 0.999)
    n = T if train is None else train
    betas = np.linspace(b0, b1, n) if train is None else np.linspace(b0**0.5, b1**0.5, n) ** 2
    assume(np.log1p(-betas).sum() > -700)  # representable in float64
    s = build_schedule(T, b0, b1, train_steps=train)
    a = s.alphas_cumprod
    assert a[0] == 1.0
    assert np.all(np.diff(a) < 0)
    assert np.all((a > 0) & (a <= 1))
    assert a.size == T + 1


def test_schedule_underflow_is_an_error():
    with pytest.raises(InvalidRangeError, match="underflow"):
        build_schedule(2000, 0.5, 0.9)


def test_subsampled_schedule_uses_training_stride():
    s = build_schedule(30, train_steps=1000)
    assert s.timesteps[1] == 1 and s.timesteps[-1] == 29 * 33 + 1
    assert s.alphas_cumprod[-1] < 0.1


# -- tokenizer -------------------------------------------------------------

@pytest.mark.parametrize("text", [
    "a boat on the lake",
    "a white fox on the grass.",
    "A man, riding a skateboard!",
    "  extraordinarily   long   prompt words  ",
])
def test_tokenizer_round_trip(text):
    tok = WordTokenizer()
    p = tok.encode(text)
    assert normalize_whitespace(tok.decode(p.token_ids)) == normalize_whitespace(text)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.from_regex(r"[a-z]{1,14}[,.]?", fullmatch=True), min_size=1, max_size=12))
def test_tokenizer_round_trip_random(words):
    tok = WordTokenizer()
    text = " ".join(words)
    assert normalize_whitespace(tok.decode(tok.encode(text).token_ids)) == normalize_whitespace(text)


def test_word_spans_are_ordered_and_disjoint(tok):
    p = tok.encode("a kayaking adventure, on the lake")
    spans = p.word_spans
    assert [s.word for s in spans] == ["a", "kayaking", "adventure", "on", "the", "lake"]
    assert len(spans[1]) == 2  # split into pieces
    for a, b in zip(spans, spans[1:]):
        assert a.stop <= b.start
    assert spans[0].start >= 1 and spans[-1].stop <= len(p) - 1


def test_context_length_enforced():
    tok = WordTokenizer(context_length=5)
    with pytest.raises(ValidationError):
        tok.encode("one two three four")


def test_ids_are_stable_across_instances():
    assert WordTokenizer().encode("a boat").token_ids == WordTokenizer().encode("a boat").token_ids


# -- alignment -------------------------------------------------------------

def test_align_boat_kayak(tok):
    src, edit = tok.encode("a boat on the lake"), tok.encode("a kayak on the lake")
    spec = align_edit_words(src, edit, [("boat", "kayak")])
    assert spec.N == 1
    assert spec.pairs == (((2, 3), (2, 3)),)
    idx = spec.edit_to_src()
    assert idx[2] == -1
    assert [i for i in range(len(edit)) if i != 2] == [int(idx[i]) for i in range(len(edit)) if i != 2]


def test_align_identical_prompts_no_pairs(tok):
    p = tok.encode("a boat on the lake")
    spec = align_edit_words(p, p, [])
    assert spec.N == 0
    assert spec.edit_to_src().tolist() == list(range(len(p)))


def test_align_three_pairs(fox_duck):
    _, _, spec = fox_duck
    assert spec.N == 3


def test_align_ambiguous_word(tok):
    src, edit = tok.encode("a dog and a dog"), tok.encode("a cat and a dog")
    with pytest.raises(AmbiguityError):
        align_edit_words(src, edit, [("dog", "cat")])


def test_align_misaligned_rest(tok):
    src, edit = tok.encode("a boat on the lake"), tok.encode("a kayak on a river")
    with pytest.raises(MisalignmentError):
        align_edit_words(src, edit, [("boat", "kayak")])


def test_align_rejects_insertions(tok):
    src, edit = tok.encode("a boat on the lake"), tok.encode("a red boat on the lake")
    with pytest.raises(MisalignmentError):
        align_edit_words(src, edit, [])


def test_align_missing_word(tok):
    src, edit = tok.encode("a boat"), tok.encode("a kayak")
    with pytest.raises(ValidationError):
        align_edit_words(src, edit, [("ship", "kayak")])


def test_unequal_span_lengths_need_cross(tok):
    src, edit = tok.encode("a cat on the sofa"), tok.encode("a leopard on the sofa")
    spec = align_edit_words(src, edit, [("cat", "leopard")])
    assert spec.pairs == (((2, 3), (2, 4)),)
    assert spec.edit_to_src().tolist() == [0, 1, -1, -1, 3, 4, 5, 6]
    with pytest.raises(MisalignmentError):
        align_edit_words(src, edit, [("cat", "leopard")], enable_cross=False, enable_spatial=False)


def test_spatial_requires_cross():
    with pytest.raises(ValidationError):
        EditSpec((), 3, 3, enable_cross=False, enable_spatial=True)


@pytest.mark.parametrize("pairs", [
    [("boat", "kayak")],
    [("boat", "kayak"), ("lake", "river")],
    [("a", "one"), ("lake", "seashore")],
])
def test_align_mirror(tok, pairs):
    src, edit = tok.encode("a boat on the lake"), tok.encode(
        "a boat on the lake".replace("boat", dict(pairs).get("boat", "boat"))
        .replace("lake", dict(pairs).get("lake", "lake")).replace("a ", dict(pairs).get("a", "a") + " ", 1))
    fwd = align_edit_words(src, edit, pairs)
    back = align_edit_words(edit, src, [(e, s) for s, e in reversed(pairs)])
    assert back == fwd.mirrored()


# -- store -----------------------------------------------------------------

def _random_store(seed=0, T=3, layers=2, K=2):
    rng = np.random.default_rng(seed)
    store = AttentionStore("ab" * 32, "cd" * 32, K, T, "ef" * 32)
    for t in range(1, T + 1):
        for layer in range(layers):
            for k in range(K):
                for kind, keys in (("cross", 5), ("spatial_temporal", 8)):
                    m = rng.random((2, 4, keys)).astype(np.float32)
                    store.add(MapKey(t, layer, kind, k), m / m.sum(-1, keepdims=True))
    return store.freeze()


def test_store_round_trip_bit_exact(tmp_path):
    store = _random_store()
    path = tmp_path / "s.atn"
    store.save(path)
    back = AttentionStore.load(path)
    assert back == store
    assert path.read_bytes()[: len(MAGIC)] == b"ATNSTORE1"
    back.save(tmp_path / "s2.atn")
    assert (tmp_path / "s2.atn").read_bytes() == path.read_bytes()
    for key, m in store.items():
        assert back[key].tobytes() == m.tobytes()


def test_store_completeness():
    store = _random_store(T=3, layers=2, K=2)
    store.check_complete(3, [0, 1], 2)
    assert len(store) == 3 * 2 * 2 * 2
    with pytest.raises(StoreError):
        store.check_complete(4, [0, 1], 2)


def test_store_append_only():
    store = AttentionStore()
    store.add((1, 0, "cross", 0), np.ones((1, 1, 1)))
    with pytest.raises(StoreError):
        store.add((1, 0, "cross", 0), np.ones((1, 1, 1)))
    store.freeze()
    with pytest.raises(StoreError):
        store.add((2, 0, "cross", 0), np.ones((1, 1, 1)))


@pytest.mark.parametrize("damage", ["magic", "truncate", "trailing"])
def test_store_rejects_damaged_files(damage):
    data = _random_store().to_bytes()
    if damage == "magic":
        data = b"X" + data[1:]
    elif damage == "truncate":
        data = data[:-3]
    else:
        data = data + b"\0"
    with pytest.raises(StoreError):
        AttentionStore.from_bytes(data)
