import numpy as np
import pytest

from loadcast import baseline as B
from loadcast import language as L
from loadcast.decoding import advance, init_state
from loadcast.instances import Instance
from loadcast.oracle import SolutionDescription, check_description
from oracles import central_difference


def test_feature_and_output_sizes(default10, toy):
    # railcar counts + container counts + committed counts per output token
    assert B.feature_size(default10) == 10 + 2 + 157 == 169
    assert B.sizes_for(default10) == (169, 256, 256, 157)
    assert B.feature_size(toy) == 2 + 2 + 14


def test_expansion_example(toy):
    src = L.encode_input(Instance((2, 2), (6, 2)), toy)
    p7, p3 = 7, 3
    ex = B.transform_dataset([(src, (p3, p7, 12))], toy)
    assert ex.labels.tolist() == [3, 7, 12]
    committed = ex.features[:, 4:]
    assert committed[0].sum() == 0
    assert committed[1].tolist() == np.eye(14, dtype=int)[p3].tolist()
    assert committed[2, p3] == 1 and committed[2, p7] == 1
    assert ex.features[:, :4].tolist() == [[2, 2, 6, 2]] * 3


def test_blank_expansion(toy):
    src = L.encode_input(Instance((0, 1), (0, 0)), toy)
    ex = B.transform_dataset([(src, (13, 12))], toy)
    assert ex.labels.tolist() == [13, 12]


def test_expansion_count_and_prefix_consistency(toy, toy_pairs):
    pairs = toy_pairs[:300]
    ex = B.transform_dataset(pairs, toy)
    assert len(ex) == sum(len(t) for _, t in pairs)
    tb_types = np.array([p.railcar_type for p in toy.patterns])
    tb_counts = np.array([p.counts for p in toy.patterns])
    k = 0
    for src, tgt in pairs:
        x = L.decode_input(src, toy)
        state = init_state(x)
        committed = np.zeros(14, dtype=int)
        for tok in tgt:
            assert ex.features[k, 4:].tolist() == committed.tolist()
            # committed counts and decoder remainders describe the same state
            used_r = np.bincount(tb_types, weights=committed[:12], minlength=2)
            used_c = committed[:12] @ tb_counts
            assert tuple(np.array(x.railcars) - used_r) == state.railcars
            assert tuple(np.array(x.containers) - used_c) == state.containers
            committed[tok] += 1
            state = advance(state, tok, toy)
            k += 1


def test_malformed_target(toy):
    src = L.encode_input(Instance((1, 0), (1, 0)), toy)
    with pytest.raises(L.TokenSyntaxError):
        B.transform_dataset([(src, (0, 13, 12))], toy)
    with pytest.raises(ValueError, match="infeasible"):
        B.transform_dataset([(src, (2, 12))], toy)


def test_expanded_file_roundtrip(tmp_path, toy, toy_pairs):
    ex = B.transform_dataset(toy_pairs[:50], toy)
    B.write_expanded(ex, tmp_path / "e.txt", toy)
    line = (tmp_path / "e.txt").read_text().splitlines()[0]
    feats, label = line.split("\t")
    assert len(feats.split()) == 18 and label.startswith(("pat", "BLANK"))
    f, y = B.read_expanded(tmp_path / "e.txt", toy)
    assert np.array_equal(f, ex.features) and np.array_equal(y, ex.labels)


def test_mlp_forward(toy):
    p = B.init_params(B.sizes_for(toy, (8, 8)), np.random.default_rng(0))
    x = np.arange(18)
    out = p and B.mlp_forward(p, x)
    assert abs(out.sum() - 1) < 1e-12
    assert np.array_equal(out, B.mlp_forward(p, x))
    zero = B.BaselineParams(p.sizes, {k: np.zeros_like(v) for k, v in p.blocks.items()})
    assert np.allclose(B.mlp_forward(zero, x), 1 / 14, atol=1e-15)
    with pytest.raises(ValueError):
        B.mlp_forward(p, np.arange(5))


@pytest.mark.parametrize("with_dropout", [False, True])
def test_gradients_match_finite_differences(toy, toy_pairs, with_dropout):
    p = B.init_params(B.sizes_for(toy, (6, 5)), np.random.default_rng(1))
    rng = np.random.default_rng(2)
    for v in p.blocks.values():
        v += rng.normal(0, 0.3, v.shape)
    ex = B.transform_dataset(toy_pairs[:4], toy)
    drops = [(rng.random((len(ex), h)) < 0.7) / 0.7 for h in (6, 5)] if with_dropout else None
    _, g = B.loss_and_gradients(p, ex, drops)
    for name in p.names():
        fd = central_difference(lambda: B.loss_and_gradients(p, ex, drops)[0], p.blocks[name])
        err = np.linalg.norm(g[name] - fd) / max(np.linalg.norm(g[name]) + np.linalg.norm(fd), 1e-12)
        assert err < 1e-3, name


def test_empty_batch(toy):
    p = B.init_params(B.sizes_for(toy, (4,)), np.random.default_rng(0))
    with pytest.raises(ValueError):
        B.loss_and_gradients(p, B.transform_dataset([], toy))


def test_training_decreases_and_reproducible(toy, toy_pairs):
    cfg = B.BaselineConfig(hidden=(64, 64), max_epochs=3, patience=3)
    _, h1 = B.train_baseline(toy_pairs[:5000], toy_pairs[5000:6000], toy, cfg)
    v = [r.valid_loss for r in h1]
    assert v[0] > v[1] > v[2]
    _, h2 = B.train_baseline(toy_pairs[:5000], toy_pairs[5000:6000], toy, cfg)
    assert [(r.train_loss, r.valid_loss) for r in h1] == [(r.train_loss, r.valid_loss) for r in h2]


def test_generation(toy):
    p = B.init_params(B.sizes_for(toy, (8,)), np.random.default_rng(3))
    assert B.generate(p, Instance((0, 0), (0, 0)), toy) == SolutionDescription()
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = Instance(tuple(int(v) for v in rng.integers(0, 5, 2)), tuple(int(v) for v in rng.integers(0, 12, 2)))
        check_description(x, B.generate(p, x, toy, width=int(rng.integers(1, 6))), toy)


def test_scorer_matches_forward(toy):
    from loadcast.decoding import beam_search_scored

    p = B.init_params(B.sizes_for(toy, (8,)), np.random.default_rng(4))
    x = Instance((2, 1), (5, 3))
    hyp = beam_search_scored(B.BaselineScorer(p, toy), x, toy, width=4)
    src = L.encode_input(x, toy)
    ex = B.transform_dataset([(src, hyp.tokens)], toy)
    nll, _ = B.loss_and_gradients(p, ex)
    assert -nll * len(ex) == pytest.approx(hyp.logprob, abs=1e-9)


def test_single_pattern_subcase(toy):
    x = Instance((1, 0), (1, 1))
    src = L.encode_input(x, toy)
    tgt = (toy.find_pattern(0, (1, 1)).global_index, 12)
    cfg = B.BaselineConfig(hidden=(16,), max_epochs=60, patience=60, dropout=0.0, batch_size=8)
    params, _ = B.train_baseline([(src, tgt)] * 32, [(src, tgt)] * 4, toy, cfg)
    assert B.generate(params, x, toy) == SolutionDescription.of([tgt[0]])
