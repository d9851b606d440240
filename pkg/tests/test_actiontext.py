import numpy as np
import pytest

from courtside import numerics as N
from courtside.actiontext import (
    EOS_ID,
    PAD_ID,
    UNK_ID,
    AggregatorConfig,
    Vocabulary,
    encode_action_batch,
    encode_actions,
    freeze_pad_row,
    init_aggregator,
    tokenize,
)
from courtside.numerics import Tape, Tensor, make_rng
from courtside.stateseq import ActionTrack, PropertyLayout, PropertySpec


def small_layout():
    return PropertyLayout(
        properties=(
            PropertySpec("a.position", "a", 2, "position"),
            PropertySpec("b.position", "b", 2, "position"),
        ),
        actionable=("a", "b"),
    )


VOCAB = Vocabulary(words=("left", "moves", "player", "right", "w"))
CFG = AggregatorConfig(layers=1, heads=2, width=32, out_dim=16, max_tokens=8)


def test_tokenize_rules():
    assert tokenize("", VOCAB) == [EOS_ID]
    assert tokenize("Moves LEFT", VOCAB) == tokenize("moves left", VOCAB)
    assert tokenize("zzz-unknown", VOCAB) == [UNK_ID, EOS_ID]
    assert tokenize("player moves right", VOCAB)[-1] == EOS_ID


def test_vocabulary_roundtrip(tmp_path):
    VOCAB.save(tmp_path / "vocab.txt")
    loaded = Vocabulary.load(tmp_path / "vocab.txt")
    assert loaded == VOCAB
    assert loaded.id_of("left") == 3
    assert loaded.id_of("nope") == UNK_ID
    assert loaded.size == 8


def test_vocabulary_from_corpus_sorted_unique():
    v = Vocabulary.from_corpus(["B a", "a c"])
    assert v.words == ("a", "b", "c")


def test_encode_masked_cells_are_zero():
    rng = make_rng(0)
    params = init_aggregator(VOCAB.size, CFG, rng)
    lay = small_layout()
    track = ActionTrack(lay, [["moves left", "moves right"], ["", "player"]])
    m_a = np.array([[1, 0], [0, 1]], dtype=np.float32)
    emb = encode_actions(track, m_a, params, CFG, VOCAB).data
    assert emb.shape == (2, 2, 16)
    assert np.all(emb[0, 1] == 0.0)
    assert np.all(emb[1, 0] == 0.0)
    assert np.any(emb[0, 0] != 0.0)
    assert np.any(emb[1, 1] != 0.0)


def test_all_masked_gives_all_zeros():
    rng = make_rng(1)
    params = init_aggregator(VOCAB.size, CFG, rng)
    track = ActionTrack(small_layout(), [["", ""], ["", ""]])
    emb = encode_actions(track, np.zeros((2, 2), dtype=np.float32), params, CFG, VOCAB).data
    assert np.all(emb == 0.0)


def test_identical_strings_identical_embeddings_across_cells():
    rng = make_rng(2)
    params = init_aggregator(VOCAB.size, CFG, rng)
    track = ActionTrack(small_layout(), [["moves left", "moves left"], ["moves left", "w"]])
    m_a = np.ones((2, 2), dtype=np.float32)
    emb = encode_actions(track, m_a, params, CFG, VOCAB).data
    np.testing.assert_array_equal(emb[0, 0], emb[0, 1])
    np.testing.assert_array_equal(emb[0, 0], emb[1, 0])
    assert not np.array_equal(emb[0, 0], emb[1, 1])


def test_batch_order_does_not_change_cells():
    rng = make_rng(3)
    params = init_aggregator(VOCAB.size, CFG, rng)
    lay = small_layout()
    t1 = ActionTrack(lay, [["moves left", "w"], ["player", "right"]])
    t2 = ActionTrack(lay, [["w w", "left"], ["moves right", "w"]])
    m = np.ones((2, 2, 2), dtype=np.float32)
    both = encode_action_batch([t1, t2], m, params, CFG, VOCAB).data
    solo = encode_actions(t1, m[0], params, CFG, VOCAB).data
    np.testing.assert_allclose(both[0], solo, atol=1e-6)


def test_length_sensitivity_w_vs_ww():
    rng = make_rng(4)
    params = init_aggregator(VOCAB.size, CFG, rng)
    lay = small_layout()
    track = ActionTrack(lay, [["w", "w w"], ["", ""]])
    m_a = np.array([[1, 1], [0, 0]], dtype=np.float32)
    emb = encode_actions(track, m_a, params, CFG, VOCAB).data
    assert np.linalg.norm(emb[0, 0] - emb[0, 1]) > 0.0


def test_overlong_sentence_names_cell():
    rng = make_rng(5)
    params = init_aggregator(VOCAB.size, CFG, rng)
    track = ActionTrack(small_layout(), [["w " * 20, ""], ["", ""]])
    m_a = np.array([[1, 0], [0, 0]], dtype=np.float32)
    with pytest.raises(ValueError, match=r"agent 0, t 0"):
        encode_actions(track, m_a, params, CFG, VOCAB)


def test_pad_row_init_and_freeze():
    rng = make_rng(6)
    params = init_aggregator(VOCAB.size, CFG, rng)
    assert np.all(params["agg.embed"].data[PAD_ID] == 0.0)
    grads = {"agg.embed": np.ones_like(params["agg.embed"].data)}
    freeze_pad_row(grads)
    assert np.all(grads["agg.embed"][PAD_ID] == 0.0)
    assert np.all(grads["agg.embed"][EOS_ID] == 1.0)


def test_gradient_reaches_embeddings_and_aggregator():
    rng = make_rng(7)
    params = init_aggregator(VOCAB.size, CFG, rng)
    track = ActionTrack(small_layout(), [["moves left", "w"], ["player", ""]])
    m_a = np.array([[1, 1], [1, 0]], dtype=np.float32)
    with Tape() as tape:
        emb = encode_actions(track, m_a, params, CFG, VOCAB)
        loss = N.sum_(N.mul(emb, emb))
    grads = N.backward(loss, tape, list(params.values()))
    by_name = {k: grads[v] for k, v in params.items()}
    assert np.any(by_name["agg.embed"] != 0.0)
    assert np.any(by_name["agg.blk0.attn.wq.w"] != 0.0)
    assert np.any(by_name["agg.out.w"] != 0.0)
    assert np.all(by_name["agg.embed"][PAD_ID] == 0.0)
