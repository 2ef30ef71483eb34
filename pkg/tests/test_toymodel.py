import math

import numpy as np
import pytest
import torch

from finegrain_vlp.errors import VocabMismatch
from finegrain_vlp.linguistics import select_rewrite_candidates, tag_sentence
from finegrain_vlp.rewriter import derive_seed, rewrite_sentence
from finegrain_vlp.tokenizer import IGNORE_INDEX, load_vocab, tokenize
from finegrain_vlp.toymodel.corpus import (
    COLORS,
    SHAPES,
    ToyScene,
    build_toy_vocab,
    caption_for,
    decode_symbol,
    generate_toy_corpus,
    noisy_caption,
    symbol_id,
    toy_vocab_path,
    world_words,
)
from finegrain_vlp.toymodel.model import encode_pair, new_model
from finegrain_vlp.toymodel.train import (
    GradientDescent,
    Switches,
    TrainConfig,
    build_batch,
    chance_rlm_accuracy,
    compute_losses,
    eval_retrieval,
    eval_rlm,
    load_checkpoint,
    recall_then_rerank,
    rlm_accuracy,
    save_checkpoint,
    sum_terms,
    train_run,
)

TINY = dict(n_train=64, n_eval=16, batch_size=16, dim=16, proj_dim=8, ffn_dim=16, queue_size=32, epochs=2, eval_every=1)


def tiny_model(vocab, seed=0):
    return new_model(vocab, dim=16, proj_dim=8, ffn_dim=16, init_seed=seed)


class TestCorpus:
    def test_deterministic(self):
        assert generate_toy_corpus(0, 4, 2) == generate_toy_corpus(0, 4, 2)
        assert len(generate_toy_corpus(0, 4, 2)[0]) == 4

    def test_world_size(self):
        assert len(SHAPES) >= 8 and len(COLORS) >= 5

    def test_captions_match_scenes(self):
        train, evalset = generate_toy_corpus(1, 300, 100)
        for s in train + evalset:
            assert s.caption == caption_for(s.groups)
            assert sorted(s.visual_tokens) == sorted(symbol_id(*g) for g in s.groups)
            for g in s.groups:
                assert decode_symbol(symbol_id(*g)) == g
        caps = [s.caption for s in evalset]
        assert len(set(caps)) == len(caps)
        assert not {s.key for s in train} & {s.key for s in evalset}

    def test_noise(self):
        rng = np.random.default_rng(0)
        assert noisy_caption("two red dogs", 0.0, rng) == "two red dogs"
        out = noisy_caption("two red dogs and one cat", 0.99, rng)
        assert 1 <= len(out.split()) <= 6

    def test_every_caption_has_a_candidate(self, mini_graph):
        train, _ = generate_toy_corpus(2, 400, 1)
        for s in train:
            assert select_rewrite_candidates(tag_sentence(s.caption, mini_graph), mini_graph), s.caption

    def test_every_world_content_word_has_substitutes(self, mini_graph):
        for word in world_words():
            tagged = tag_sentence(word, mini_graph)
            assert bool(select_rewrite_candidates(tagged, mini_graph)) == (word != "and"), word

    def test_shipped_vocab_is_current(self, mini_graph):
        assert load_vocab(toy_vocab_path()).tokens == tuple(build_toy_vocab(mini_graph))

    def test_rewrites_tokenize_without_unk(self, mini_graph, toy_vocab):
        train, _ = generate_toy_corpus(4, 200, 1)
        for i, s in enumerate(train):
            res = rewrite_sentence(s.caption, mini_graph, seed=i)
            assert "[UNK]" not in tokenize(res.rewritten_text, toy_vocab).tokens


class TestEncodePair:
    def test_zero_embeddings_equal_similarities(self, toy_vocab):
        model = tiny_model(toy_vocab)
        with torch.no_grad():
            model.uni.txt_emb.weight.zero_()
            model.uni.pos_emb.zero_()
        scene = generate_toy_corpus(0, 1, 1)[0][0]
        enc = encode_pair(model, scene, tokenize(scene.caption, toy_vocab))
        sims = enc.token_projs @ enc.image_proj
        assert torch.allclose(sims, sims[0].expand_as(sims), atol=1e-14)

    def test_visual_permutation_invariance(self, toy_vocab):
        model = tiny_model(toy_vocab, seed=1)
        scene = next(s for s in generate_toy_corpus(0, 50, 1)[0] if len(s.groups) == 3)
        flipped = ToyScene(scene.groups, scene.caption, tuple(reversed(scene.visual_tokens)))
        seq = tokenize(scene.caption, toy_vocab)
        a, b = encode_pair(model, scene, seq), encode_pair(model, flipped, seq)
        assert torch.allclose(a.image_proj, b.image_proj, atol=1e-14)
        assert torch.allclose(a.fused, b.fused, atol=1e-12)

    def test_deterministic_and_normalized(self, toy_vocab):
        model = tiny_model(toy_vocab)
        scene = generate_toy_corpus(0, 1, 1)[0][0]
        seq = tokenize(scene.caption, toy_vocab)
        a, b = encode_pair(model, scene, seq), encode_pair(model, scene, seq)
        assert torch.equal(a.fused, b.fused) and torch.equal(a.text_proj, b.text_proj)
        assert abs(float(a.image_proj.norm()) - 1) < 1e-12 and abs(float(a.text_proj.norm()) - 1) < 1e-12

    def test_vocab_mismatch(self, toy_vocab, small_vocab):
        model = tiny_model(toy_vocab)
        scene = generate_toy_corpus(0, 1, 1)[0][0]
        with pytest.raises(VocabMismatch):
            encode_pair(model, scene, tokenize("the dog", small_vocab), vocab=small_vocab)
        with pytest.raises(VocabMismatch):
            encode_pair(tiny_model(small_vocab), scene, tokenize(scene.caption, toy_vocab))

    def test_momentum_copy_matches_shapes(self, toy_vocab):
        model = tiny_model(toy_vocab)
        online = dict(model.uni.named_parameters())
        for name, p in model.uni_m.named_parameters():
            assert p.shape == online[name].shape and not p.requires_grad


def brute_force_recall(sim, score, k_recall, k):
    """Per-query loop restatement of recall-then-rerank."""
    n = len(sim)
    hits = {"i2t": 0, "t2i": 0}
    for q in range(n):
        for direction in hits:
            row = sim[q] if direction == "i2t" else sim[:, q]
            short = sorted(range(n), key=lambda c: (-row[c], c))[:k_recall]
            pair = (lambda c: score[q, c]) if direction == "i2t" else (lambda c: score[c, q])
            ranked = sorted(short, key=lambda c: -pair(c))
            hits[direction] += q in ranked[:k]
    return {d: h / n for d, h in hits.items()}


class TestRecallThenRerank:
    def test_identity_oracle(self):
        n = 30
        out = recall_then_rerank(np.eye(n), lambda i, t: np.zeros(len(i)), k_recall=10)
        assert out["r1_i2t"] == out["r1_t2i"] == 1.0

    def test_exhaustive_recall_lets_rerank_fix_everything(self):
        rng = np.random.default_rng(0)
        n = 25
        sim = rng.normal(size=(n, n))
        out = recall_then_rerank(sim, lambda i, t: (i == t).astype(float), k_recall=n)
        assert out["r1_i2t"] == out["r1_t2i"] == 1.0

    def test_small_shortlist_can_exclude_partner(self):
        n = 10
        sim = -np.eye(n)  # the true partner always ranks last
        out = recall_then_rerank(sim, lambda i, t: (i == t).astype(float), k_recall=3, ks=(1, 3))
        assert out["r1_i2t"] == 0.0 and out["r3_t2i"] == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n, kr = 20, 6
        sim, score = rng.normal(size=(n, n)), rng.normal(size=(n, n))
        out = recall_then_rerank(sim, lambda i, t: score[i, t], k_recall=kr, ks=(1, 5))
        for k in (1, 5):
            ref = brute_force_recall(sim, score, kr, k)
            assert out[f"r{k}_i2t"] == ref["i2t"] and out[f"r{k}_t2i"] == ref["t2i"]

    def test_k_recall_too_small(self):
        with pytest.raises(ValueError):
            recall_then_rerank(np.eye(20), lambda i, t: np.zeros(len(i)), k_recall=4)

    def test_untrained_model_is_at_chance(self, toy_vocab):
        _, evalset = generate_toy_corpus(7, 1, 200)
        r1 = [eval_retrieval(tiny_model(toy_vocab, seed=s), evalset, toy_vocab)["r1_i2t"] for s in range(5)]
        # chance is 1/200; five seeds give a mean with standard error near 0.0022
        assert np.mean(r1) < 0.02

    def test_rejects_duplicate_captions(self, toy_vocab):
        scene = generate_toy_corpus(0, 1, 1)[0][0]
        with pytest.raises(ValueError):
            eval_retrieval(tiny_model(toy_vocab), [scene, scene], toy_vocab)


class TestRlmAccuracy:
    def test_uniform_logits_at_chance(self):
        rng = np.random.default_rng(0)
        n = 20_000
        mask = np.zeros((n, 8), bool)
        mask[:, 1:6] = True
        targets = rng.integers(1, 6, size=n)
        acc = rlm_accuracy(np.zeros((n, 8)), mask, targets, seed=1)
        assert abs(acc - 0.2) < 0.01

    def test_oracle(self):
        targets = np.array([1, 3, 2])
        logits = np.zeros((3, 5))
        logits[np.arange(3), targets] = 1.0
        assert rlm_accuracy(logits, np.ones((3, 5), bool), targets) == 1.0

    def test_truncated_samples_excluded(self, toy_vocab, mini_graph):
        scene = generate_toy_corpus(0, 1, 1)[0][0]
        # only "dog" (word 29) is a candidate, and it falls past the 30-token cut
        long = ToyScene(scene.groups, " ".join(["and"] * 29 + ["dog"]), scene.visual_tokens)
        model = tiny_model(toy_vocab)
        assert math.isnan(eval_rlm(model, [long], toy_vocab, mini_graph))
        assert math.isnan(chance_rlm_accuracy([long], toy_vocab, mini_graph))
        assert not math.isnan(eval_rlm(model, [long, scene], toy_vocab, mini_graph))


def _batch(vocab, graph, n=6, seed=0, hsr="wordnet"):
    train, _ = generate_toy_corpus(seed, n, 1)
    return build_batch(train, [s.caption for s in train], vocab, graph, hsr=hsr, seed=seed, mask_rate=0.15)


class TestBatch:
    def test_forced_mask_on_original_caption(self, toy_vocab, mini_graph):
        train, _ = generate_toy_corpus(0, 8, 1)
        batch = build_batch(train, [s.caption for s in train], toy_vocab, mini_graph, seed=3, mask_rate=0.0)
        assert len(batch.rw_rows) == 8
        for k, row in enumerate(batch.rw_rows):
            labeled = np.flatnonzero(batch.mlm_labels[row] != IGNORE_INDEX)
            assert len(labeled) >= 1
            # the labels reconstruct the original caption's tokens
            assert np.array_equal(batch.mlm_labels[row][labeled], batch.ids[row].numpy()[labeled])
            assert batch.rw_word_mask[k, batch.rlm_pos[k]]

    def test_no_candidate_rows_skip_refined_terms(self, toy_vocab, mini_graph):
        train, _ = generate_toy_corpus(0, 3, 1)
        caps = [train[0].caption, "and and", train[2].caption]
        batch = build_batch(train, caps, toy_vocab, mini_graph, seed=0)
        assert list(batch.rw_rows) == [0, 2] and batch.n_skipped == 1

    def test_hsr_off(self, toy_vocab, mini_graph):
        batch = _batch(toy_vocab, mini_graph, hsr="off")
        assert len(batch.rw_rows) == 0
        terms, _ = compute_losses(tiny_model(toy_vocab), batch, Switches())
        assert terms["ritc"] is None and terms["rlm"] is None and terms["ritm"] is not None

    def test_deterministic(self, toy_vocab, mini_graph):
        a, b = _batch(toy_vocab, mini_graph, seed=5), _batch(toy_vocab, mini_graph, seed=5)
        assert torch.equal(a.mlm_ids, b.mlm_ids) and torch.equal(a.rw_ids, b.rw_ids)


def _grads(model, batch, switches, frozen, only=None):
    """Terms and parameter gradients of their sum, or of term *only*."""
    terms, _ = compute_losses(model, batch, switches, **frozen)
    model.zero_grad()
    (sum_terms(terms) if only is None else terms[only]).backward()
    grads = {n: torch.zeros_like(p) if p.grad is None else p.grad.clone() for n, p in model.named_parameters() if p.requires_grad}
    return terms, grads


class TestAblation:
    @pytest.mark.parametrize("name", ["ritc", "ritm", "rlm"])
    def test_switch_removes_exactly_one_term(self, toy_vocab, mini_graph, name):
        model = tiny_model(toy_vocab, seed=3)
        batch = _batch(toy_vocab, mini_graph, n=8, seed=1)
        frozen = {"negatives": (np.roll(np.arange(8), 1), np.roll(np.arange(8), 2)),
                  "img_queue": np.zeros((0, 8)), "txt_queue": np.zeros((0, 8))}
        full_terms, g_full = _grads(model, batch, Switches(), frozen)
        off_terms, g_off = _grads(model, batch, Switches(**{name: False}), frozen)
        _, g_term = _grads(model, batch, Switches(), frozen, only=name)
        assert off_terms[name] is None and full_terms[name] is not None
        for other in ("itc", "mlm") + tuple(k for k in ("ritc", "ritm", "rlm") if k != name):
            assert torch.equal(full_terms[other], off_terms[other])
        # one gradient-descent step: the parameter delta difference is exactly -lr * grad(term)
        lr = 0.1
        for n in g_full:
            delta_full, delta_off = -lr * g_full[n], -lr * g_off[n]
            assert torch.allclose(delta_full - delta_off, -lr * g_term[n], atol=1e-12), n
        assert any(g.abs().max() > 0 for g in g_term.values())

    def test_no_rlm_run_reports_absent(self, toy_vocab, mini_graph):
        res = train_run(TrainConfig(**{**TINY, "epochs": 1, "use_rlm": False}), mini_graph, toy_vocab)
        row = res.timeline[0]
        assert row["rlm"] is None
        assert abs(row["total"] - sum(row[k] for k in ("itc", "ritc", "ritm", "mlm"))) < 1e-9


class TestTraining:
    def test_lr_zero_freezes_model(self, toy_vocab, mini_graph):
        cfg = TrainConfig(**{**TINY, "epochs": 1, "lr": 0.0, "weight_decay": 0.0, "optimizer": "gd"})
        res = train_run(cfg, mini_graph, toy_vocab)
        fresh = new_model(toy_vocab, dim=16, proj_dim=8, ffn_dim=16, init_seed=0)
        trained = res.model.state_arrays()
        for k, v in fresh.state_arrays().items():
            if k.startswith("uni_m."):
                # m * x + (1 - m) * x rounds to within an ulp of x
                np.testing.assert_allclose(trained[k], v, rtol=1e-14, atol=1e-15, err_msg=k)
            else:
                assert np.array_equal(v, trained[k]), k
        again = train_run(cfg, mini_graph, toy_vocab)
        assert res.final == again.final

    def test_gradient_descent_decay(self, toy_vocab):
        model = tiny_model(toy_vocab)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        opt = GradientDescent(model, lr=0.5, weight_decay=0.1)
        opt.zero_grad()
        opt.step()
        for n, p in model.named_parameters():
            if not p.requires_grad:
                continue
            factor = 0.95 if p.dim() >= 2 else 1.0
            assert torch.allclose(p, before[n] * factor), n

    def test_deterministic_run(self, toy_vocab, mini_graph):
        a = train_run(TrainConfig(**TINY), mini_graph, toy_vocab)
        b = train_run(TrainConfig(**TINY), mini_graph, toy_vocab)
        assert a.timeline == b.timeline and a.final == b.final

    def test_timeline_schema(self, toy_vocab, mini_graph):
        rows = []
        res = train_run(TrainConfig(**TINY), mini_graph, toy_vocab, log=rows.append, log_steps=True)
        epochs = [r for r in rows if r["kind"] == "epoch"]
        assert len(epochs) == 2 and len(rows) == 2 + 2 * 4
        for key in ("epoch", "step", "itc", "ritc", "ritm", "mlm", "rlm", "total", "r1_i2t", "r1_t2i", "rlm_acc"):
            assert key in epochs[0]
        assert set(res.final) >= {"r1_i2t", "r5_t2i", "r10_i2t", "rlm_acc", "rlm_chance"}

    def test_momentum_features_are_unit_norm(self, toy_vocab, mini_graph):
        model = tiny_model(toy_vocab)
        _, aux = compute_losses(model, _batch(toy_vocab, mini_graph), Switches())
        for feats in (aux["vm"], aux["tm"]):
            assert torch.allclose(feats.norm(dim=1), torch.ones(len(feats), dtype=feats.dtype), atol=1e-12)

    def test_momentum_update(self, toy_vocab):
        model = tiny_model(toy_vocab)
        with torch.no_grad():
            for p in model.uni.parameters():
                p.add_(1.0)
        before = {n: p.clone() for n, p in model.uni_m.named_parameters()}
        model.update_momentum(0.9)
        for n, p in model.uni_m.named_parameters():
            online = dict(model.uni.named_parameters())[n]
            assert torch.allclose(p, 0.9 * before[n] + 0.1 * online)

    def test_checkpoint_round_trip(self, tmp_path, toy_vocab, mini_graph):
        res = train_run(TrainConfig(**{**TINY, "epochs": 1}), mini_graph, toy_vocab)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, res.model, res.config)
        model, cfg = load_checkpoint(path)
        assert cfg == res.config
        for k, v in res.model.state_arrays().items():
            assert np.array_equal(v, model.state_arrays()[k])
        _, evalset = generate_toy_corpus(0, TINY["n_train"], TINY["n_eval"])
        assert eval_retrieval(model, evalset, toy_vocab) == eval_retrieval(res.model, evalset, toy_vocab)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(hsr="bogus")
        with pytest.raises(ValueError):
            TrainConfig(batch_size=1)
        assert TrainConfig(epochs=10, noisy_fraction=0.8).noisy_epochs == 8
        assert TrainConfig.from_dict({**TrainConfig().to_dict(), "unknown": 1}) == TrainConfig()

    def test_random_hsr_run(self, toy_vocab, mini_graph):
        res = train_run(TrainConfig(**{**TINY, "epochs": 1, "hsr": "random"}), mini_graph, toy_vocab)
        assert res.timeline[0]["rlm"] is not None

    def test_derived_seeds_are_streams(self):
        assert derive_seed(0, 2, 0, 1) != derive_seed(0, 3, 0, 1)
