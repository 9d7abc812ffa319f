"""Tests for the toy self-critical captioner: policy, beam decoding,
rewards, the policy-gradient update, and the caption quality counters."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacmetric import scst as sc
from pacmetric.scoring import ScoreConfig, pac_score, ref_pac_score


def tiny_policy(seed=0, vocab=("A", "B", "</s>"), dim=2, max_len=2,
                scale=0.7, eos="</s>"):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(len(vocab), dim))
    theta = scale * rng.normal(size=(2 * dim, len(vocab)))
    return sc.ToyPolicy(vocab=tuple(vocab), token_embed=emb, theta=theta,
                        max_len=max_len, eos_token=eos)


def all_sequences(n_vocab, eos, max_len):
    """Every index sequence the decoder can emit: it stops at the end
    marker or at max_len, whichever comes first."""
    out = []

    def grow(prefix):
        for v in range(n_vocab):
            cur = prefix + (v,)
            if (eos is not None and v == eos) or len(cur) == max_len:
                out.append(cur)
            else:
                grow(cur)

    grow(())
    return out


def ref_log_prob(token_embed, theta, img, idx):
    """Sequence log-probability recomputed with its own softmax.

    Works in whatever dtype theta carries so a complex perturbation
    differentiates through it exactly.
    """
    d = token_embed.shape[1]
    total = 0.0
    for k, v in enumerate(idx):
        if k == 0:
            ctx = np.zeros(d)
        else:
            ctx = np.mean(token_embed[list(idx[:k])], axis=0)
        z = np.concatenate([img, ctx]) @ theta
        z = z - np.max(z.real)
        total = total + z[v] - np.log(np.sum(np.exp(z)))
    return total


def logp_grad(policy, img, tokens):
    """d log p / d theta, extracted through the public gradient op."""
    return sc.scst_gradient(policy, img, [tuple(tokens)], [0.0], 1.0)


def fd_grad(f, theta, h=1e-6):
    g = np.zeros(theta.shape)
    for i in range(theta.shape[0]):
        for j in range(theta.shape[1]):
            tp = theta.copy()
            tp[i, j] += h
            tm = theta.copy()
            tm[i, j] -= h
            g[i, j] = (f(tp) - f(tm)) / (2 * h)
    return g


def rel_err(got, want):
    denom = max(float(np.linalg.norm(want)), 1e-12)
    return float(np.linalg.norm(got - want)) / denom


class TestToyPolicy:
    def test_validation(self):
        emb = np.zeros((2, 2))
        theta = np.zeros((4, 2))
        with pytest.raises(ValueError, match="at least two"):
            sc.ToyPolicy(vocab=("A",), token_embed=np.zeros((1, 2)),
                         theta=theta, max_len=1)
        with pytest.raises(ValueError, match="unique"):
            sc.ToyPolicy(vocab=("A", "A"), token_embed=emb, theta=theta,
                         max_len=1)
        with pytest.raises(ValueError, match="token_embed"):
            sc.ToyPolicy(vocab=("A", "B"), token_embed=np.zeros((3, 2)),
                         theta=theta, max_len=1)
        with pytest.raises(ValueError, match="theta"):
            sc.ToyPolicy(vocab=("A", "B"), token_embed=emb,
                         theta=np.zeros((3, 2)), max_len=1)
        with pytest.raises(ValueError, match="finite"):
            sc.ToyPolicy(vocab=("A", "B"), token_embed=emb,
                         theta=np.full((4, 2), np.nan), max_len=1)
        with pytest.raises(ValueError, match="max_len"):
            sc.ToyPolicy(vocab=("A", "B"), token_embed=emb, theta=theta,
                         max_len=0)

    def test_parameters_are_read_only(self):
        pol = tiny_policy()
        with pytest.raises(ValueError):
            pol.theta[0, 0] = 1.0
        with pytest.raises(ValueError):
            pol.token_embed[0, 0] = 1.0

    def test_eos_index(self):
        assert tiny_policy().eos_index == 2
        no_eos = tiny_policy(vocab=("A", "B"), eos=None)
        assert no_eos.eos_index is None
        # naming an end marker that is not in the vocab means no marker
        missing = tiny_policy(vocab=("A", "B"), eos="</s>")
        assert missing.eos_index is None

    def test_token_index(self):
        pol = tiny_policy()
        assert pol.token_index("B") == 1
        with pytest.raises(ValueError, match="not in the vocabulary"):
            pol.token_index("zebra")

    @given(st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_step_probabilities_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        n_vocab = int(rng.integers(2, 6))
        dim = int(rng.integers(1, 5))
        vocab = tuple(f"w{i}" for i in range(n_vocab))
        pol = sc.ToyPolicy(
            vocab=vocab,
            token_embed=rng.normal(size=(n_vocab, dim)),
            theta=5.0 * rng.normal(size=(2 * dim, n_vocab)),
            max_len=3,
            eos_token=None,
        )
        img = rng.normal(size=dim)
        prefix = [int(rng.integers(0, n_vocab))
                  for _ in range(int(rng.integers(0, 3)))]
        lp = sc.step_log_probs(pol, img, prefix)
        assert np.all(np.isfinite(lp))
        assert abs(float(np.sum(np.exp(lp))) - 1.0) <= 1e-9


class TestSequenceLogProb:
    def test_matches_independent_softmax(self):
        pol = tiny_policy(seed=5)
        rng = np.random.default_rng(9)
        img = rng.normal(size=pol.embed_dim)
        for toks in [("A",), ("B", "A"), ("A", "</s>"), ("</s>",)]:
            idx = [pol.vocab.index(t) for t in toks]
            want = ref_log_prob(pol.token_embed, pol.theta, img, idx)
            got = sc.sequence_log_prob(pol, img, toks)
            assert got == pytest.approx(float(want), abs=1e-12)

    def test_rejects_bad_sequences(self):
        pol = tiny_policy()
        img = np.zeros(pol.embed_dim)
        with pytest.raises(ValueError, match="non-empty"):
            sc.sequence_log_prob(pol, img, ())
        with pytest.raises(ValueError, match="max_len"):
            sc.sequence_log_prob(pol, img, ("A", "B", "A"))
        with pytest.raises(ValueError, match="final token"):
            sc.sequence_log_prob(pol, img, ("</s>", "A"))
        with pytest.raises(ValueError, match="not in the vocabulary"):
            sc.sequence_log_prob(pol, img, ("A", "zebra"))

    def test_rejects_bad_image(self):
        pol = tiny_policy()
        with pytest.raises(ValueError, match="shape"):
            sc.sequence_log_prob(pol, np.zeros(3), ("A",))
        with pytest.raises(ValueError, match="finite"):
            sc.sequence_log_prob(pol, np.full(2, np.inf), ("A",))


class TestXentLoss:
    def test_uniform_logits_value(self):
        rng = np.random.default_rng(0)
        vocab = ("a", "b", "c", "</s>")
        pol = sc.ToyPolicy(vocab=vocab,
                           token_embed=rng.normal(size=(4, 3)),
                           theta=np.zeros((6, 4)), max_len=2)
        loss = sc.xent_loss(pol, rng.normal(size=3), ("a", "</s>"))
        assert loss == pytest.approx(2.0 * math.log(4.0), abs=1e-12)
        per_tok = sc.xent_loss_per_token(pol, rng.normal(size=3),
                                         ("a", "</s>"))
        assert per_tok == pytest.approx(math.log(4.0), abs=1e-12)

    def test_confident_policy_has_zero_loss(self):
        # logit margins large enough that float64 rounds each step
        # probability to exactly 1
        emb = np.array([[1.0], [0.0]])
        theta = np.zeros((2, 2))
        theta[0, 0] = 1000.0  # image drives "A" at the first step
        theta[1, 1] = 2000.0  # context e_A drives the end marker next
        pol = sc.ToyPolicy(vocab=("A", "</s>"), token_embed=emb,
                           theta=theta, max_len=2)
        assert sc.xent_loss(pol, np.array([1.0]), ("A", "</s>")) == 0.0

    def test_random_fixture_matches_per_step_recomputation(self):
        pol = tiny_policy(seed=11)
        rng = np.random.default_rng(12)
        img = rng.normal(size=pol.embed_dim)
        toks = ("B", "</s>")
        idx = [pol.vocab.index(t) for t in toks]
        want = -float(ref_log_prob(pol.token_embed, pol.theta, img, idx))
        assert sc.xent_loss(pol, img, toks) == pytest.approx(want, abs=1e-12)

    def test_requires_end_marker(self):
        pol = tiny_policy()
        img = np.zeros(pol.embed_dim)
        with pytest.raises(ValueError, match="end with the end marker"):
            sc.xent_loss(pol, img, ("A", "B"))
        no_eos = tiny_policy(vocab=("A", "B"), eos=None)
        with pytest.raises(ValueError, match="needs an end marker"):
            sc.xent_loss(no_eos, np.zeros(2), ("A", "B"))

    def test_gradient_matches_finite_differences(self):
        worst = 0.0
        for trial in range(20):
            rng = np.random.default_rng(300 + trial)
            n_vocab = int(rng.integers(3, 6))
            dim = int(rng.integers(1, 4))
            vocab = tuple(f"w{i}" for i in range(n_vocab - 1)) + ("</s>",)
            pol = sc.ToyPolicy(
                vocab=vocab,
                token_embed=rng.normal(size=(n_vocab, dim)),
                theta=0.8 * rng.normal(size=(2 * dim, n_vocab)),
                max_len=3,
                eos_token="</s>",
            )
            img = rng.normal(size=dim)
            length = int(rng.integers(1, 4))
            toks = tuple(vocab[int(rng.integers(0, n_vocab - 1))]
                         for _ in range(length - 1)) + ("</s>",)
            got = sc.xent_grad(pol, img, toks)
            want = fd_grad(
                lambda th: sc.xent_loss(pol.with_theta(th), img, toks),
                pol.theta)
            worst = max(worst, rel_err(got, want))
        assert worst < 1e-5

    def test_loss_decreases_under_gradient_descent(self):
        pol = tiny_policy(seed=21, scale=0.3)
        rng = np.random.default_rng(22)
        img = rng.normal(size=pol.embed_dim)
        toks = ("A", "B")[:1] + ("</s>",)
        losses = [sc.xent_loss(pol, img, toks)]
        for _ in range(5000):
            if losses[-1] < 1e-3:
                break
            pol = sc.xent_pretrain(pol, [(img, toks)], lr=0.5, steps=1)
            losses.append(sc.xent_loss(pol, img, toks))
        assert losses[-1] < 1e-3
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_pretrain_validation(self):
        pol = tiny_policy()
        with pytest.raises(ValueError, match="at least one"):
            sc.xent_pretrain(pol, [], lr=0.1, steps=1)
        with pytest.raises(ValueError, match="lr"):
            sc.xent_pretrain(pol, [(np.zeros(2), ("A", "</s>"))],
                             lr=0.0, steps=1)


class TestBeamSearch:
    def test_enumerates_tiny_instance(self):
        pol = tiny_policy(seed=1)
        rng = np.random.default_rng(2)
        img = rng.normal(size=pol.embed_dim)
        beams = sc.beam_search(pol, img, 9)
        assert len(beams) == 7  # the whole sequence tree
        scored = []
        for idx in all_sequences(pol.vocab_size, pol.eos_index, pol.max_len):
            toks = tuple(pol.vocab[i] for i in idx)
            lp = float(ref_log_prob(pol.token_embed, pol.theta, img, idx))
            scored.append((toks, lp))
        scored.sort(key=lambda e: (-e[1], e[0]))
        assert [b.tokens for b in beams] == [toks for toks, _ in scored]
        for got, (_, lp) in zip(beams, scored):
            assert got.log_prob == pytest.approx(lp, abs=1e-12)

    def test_truncated_beam_is_prefix_of_enumeration(self):
        pol = tiny_policy(seed=31)
        img = np.random.default_rng(32).normal(size=pol.embed_dim)
        full = sc.beam_search(pol, img, 9)
        top3 = sc.beam_search(pol, img, 3)
        assert [b.tokens for b in top3] == [b.tokens for b in full[:3]]

    def test_exact_ties_break_lexicographically(self):
        rng = np.random.default_rng(4)
        pol = sc.ToyPolicy(vocab=("A", "B", "</s>"),
                           token_embed=rng.normal(size=(3, 2)),
                           theta=np.zeros((4, 3)), max_len=2)
        beams = sc.beam_search(pol, np.zeros(2), 9)
        # uniform steps: the single-step sequence outranks the rest,
        # and the six tied two-step sequences sort by token strings
        assert [b.tokens for b in beams] == [
            ("</s>",),
            ("A", "</s>"), ("A", "A"), ("A", "B"),
            ("B", "</s>"), ("B", "A"), ("B", "B"),
        ]

    def test_deterministic_policy(self):
        emb = np.zeros((3, 1))
        theta = np.zeros((2, 3))
        theta[0, 1] = 50.0  # any image pushes "B" every step
        pol = sc.ToyPolicy(vocab=("A", "B", "</s>"), token_embed=emb,
                           theta=theta, max_len=2)
        img = np.array([1.0])
        assert sc.beam_search(pol, img, 9)[0].tokens == ("B", "B")
        assert sc.beam_search(pol, img, 1)[0].tokens == ("B", "B")

    def test_width_one_is_greedy(self):
        pol = tiny_policy(seed=41)
        img = np.random.default_rng(42).normal(size=pol.embed_dim)
        prefix: list[int] = []
        for _ in range(pol.max_len):
            lp = sc.step_log_probs(pol, img, prefix)
            nxt = int(np.argmax(lp))
            prefix.append(nxt)
            if nxt == pol.eos_index:
                break
        want = tuple(pol.vocab[i] for i in prefix)
        assert sc.beam_search(pol, img, 1)[0].tokens == want

    def test_rejects_bad_width(self):
        pol = tiny_policy()
        with pytest.raises(ValueError, match="beam_size"):
            sc.beam_search(pol, np.zeros(2), 0)


class TestReward:
    def test_identity_caption_scores_full_weight(self):
        emb = np.array([[0.6, 0.8], [1.0, 0.0], [0.0, 1.0]])
        pol = sc.ToyPolicy(vocab=("dog", "cat", "</s>"), token_embed=emb,
                           theta=np.zeros((4, 3)), max_len=2)
        img = np.array([0.6, 0.8])
        got = sc.reward(pol, img, ("dog",), ScoreConfig(w=2.5))
        assert got == pytest.approx(2.5, abs=1e-12)

    def test_orthogonal_caption_scores_zero(self):
        emb = np.array([[1.0, 0.0], [0.0, 1.0]])
        pol = sc.ToyPolicy(vocab=("dog", "cat"), token_embed=emb,
                           theta=np.zeros((4, 2)), max_len=2,
                           eos_token=None)
        assert sc.reward(pol, np.array([0.0, 1.0]), ("dog",),
                         ScoreConfig(w=2.5)) == 0.0

    def test_reference_variant_matches_scoring_module(self):
        pol = tiny_policy(seed=51, vocab=("x", "y", "z", "</s>"), dim=3)
        rng = np.random.default_rng(52)
        img = rng.normal(size=3)
        img /= np.linalg.norm(img)
        cfg = ScoreConfig(w=2.5)
        cand = ("x", "y")
        refs = [("y",), ("z", "x")]
        want = ref_pac_score(
            img,
            sc.caption_embedding(pol, cand),
            [sc.caption_embedding(pol, r) for r in refs],
            cfg,
        )
        got = sc.reward(pol, img, cand, cfg, refs=refs)
        assert got == pytest.approx(want, abs=1e-12)
        plain = sc.reward(pol, img, cand, cfg)
        assert plain == pytest.approx(pac_score(
            img, sc.caption_embedding(pol, cand), cfg), abs=1e-12)

    def test_caption_embedding_strips_marker_and_normalizes(self):
        pol = tiny_policy(seed=61)
        with_marker = sc.caption_embedding(pol, ("A", "B", "</s>"))
        without = sc.caption_embedding(pol, ("A", "B"))
        assert np.allclose(with_marker, without, atol=1e-15)
        assert np.linalg.norm(without) == pytest.approx(1.0, abs=1e-12)

    def test_caption_embedding_rejects_degenerate_captions(self):
        pol = tiny_policy()
        with pytest.raises(ValueError, match="no content"):
            sc.caption_embedding(pol, ("</s>",))
        opposed = sc.ToyPolicy(vocab=("p", "q"),
                               token_embed=np.array([[1.0, 0.0],
                                                     [-1.0, 0.0]]),
                               theta=np.zeros((4, 2)), max_len=2,
                               eos_token=None)
        with pytest.raises(ValueError, match="zero norm"):
            sc.caption_embedding(opposed, ("p", "q"))

    def test_strip_end_marker(self):
        pol = tiny_policy()
        assert sc.strip_end_marker(pol, ("A", "</s>")) == ("A",)
        assert sc.strip_end_marker(pol, ("A", "B")) == ("A", "B")
        no_eos = tiny_policy(vocab=("A", "B"), eos=None)
        assert sc.strip_end_marker(no_eos, ("A", "B")) == ("A", "B")


class TestBaseline:
    def test_examples(self):
        assert sc.baseline([1.0, 0.0]) == 0.5
        assert sc.baseline([0.7, 0.7, 0.7]) == pytest.approx(0.7, abs=1e-15)
        assert sc.baseline([0.2, 0.4, 0.9]) == pytest.approx(0.5, abs=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError, match="at least one"):
            sc.baseline([])
        with pytest.raises(ValueError, match="finite"):
            sc.baseline([0.5, math.nan])


class TestScstGradient:
    def test_worked_two_token_value_is_exact(self):
        # two tokens, one step, flat logits; rewards 1 and 0 against a
        # 0.5 baseline pull the first token's image weight by exactly
        # a quarter
        pol = sc.ToyPolicy(vocab=("A", "B"), token_embed=np.zeros((2, 1)),
                           theta=np.zeros((2, 2)), max_len=1,
                           eos_token=None)
        img = np.array([1.0])
        g = sc.scst_gradient(pol, img, [("A",), ("B",)], [1.0, 0.0], 0.5)
        assert g[0, 0] == -0.25
        assert g[0, 1] == 0.25
        # the context row never fires on one-step sequences
        assert np.all(g[1] == 0.0)

    def test_zero_advantage_means_zero_gradient(self):
        pol = tiny_policy(seed=71)
        img = np.random.default_rng(72).normal(size=pol.embed_dim)
        beams = [b.tokens for b in sc.beam_search(pol, img, 3)]
        g = sc.scst_gradient(pol, img, beams, [0.4] * len(beams), 0.4)
        assert np.all(g == 0.0)

    def test_matches_finite_differences(self):
        worst = 0.0
        for trial in range(20):
            rng = np.random.default_rng(500 + trial)
            n_vocab = int(rng.integers(2, 5))
            dim = int(rng.integers(1, 4))
            vocab = tuple(f"w{i}" for i in range(n_vocab - 1)) + ("</s>",)
            pol = sc.ToyPolicy(
                vocab=vocab,
                token_embed=rng.normal(size=(n_vocab, dim)),
                theta=0.8 * rng.normal(size=(2 * dim, n_vocab)),
                max_len=2,
                eos_token="</s>",
            )
            img = rng.normal(size=dim)
            beams = [b.tokens for b in sc.beam_search(pol, img, 4)]
            rewards = list(rng.uniform(0.0, 2.0, size=len(beams)))
            base = float(np.mean(rewards))

            def loss(th):
                p = pol.with_theta(th)
                return -sum(
                    (r - base) * sc.sequence_log_prob(p, img, toks)
                    for toks, r in zip(beams, rewards)
                ) / len(beams)

            got = sc.scst_gradient(pol, img, beams, rewards, base)
            worst = max(worst, rel_err(got, fd_grad(loss, pol.theta)))
        assert worst < 1e-5

    def test_invariant_under_beam_permutation(self):
        pol = tiny_policy(seed=81)
        rng = np.random.default_rng(82)
        img = rng.normal(size=pol.embed_dim)
        beams = [b.tokens for b in sc.beam_search(pol, img, 5)]
        rewards = list(rng.uniform(0.0, 1.0, size=len(beams)))
        base = 0.3
        g = sc.scst_gradient(pol, img, beams, rewards, base)
        for _ in range(5):
            order = rng.permutation(len(beams))
            g2 = sc.scst_gradient(pol, img, [beams[i] for i in order],
                                  [rewards[i] for i in order], base)
            assert np.allclose(g, g2, atol=1e-12)

    def test_validation(self):
        pol = tiny_policy()
        img = np.zeros(2)
        with pytest.raises(ValueError, match="at least one"):
            sc.scst_gradient(pol, img, [], [], 0.0)
        with pytest.raises(ValueError, match="beams but"):
            sc.scst_gradient(pol, img, [("A",)], [1.0, 2.0], 0.0)
        with pytest.raises(ValueError, match="baseline"):
            sc.scst_gradient(pol, img, [("A",)], [1.0], math.inf)
        with pytest.raises(ValueError, match="rewards must be finite"):
            sc.scst_gradient(pol, img, [("A",)], [math.nan], 0.0)


class TestExactExpectation:
    """The averaged estimator agrees with the true gradient of the
    expected reward on fully enumerable instances, with and without
    the baseline."""

    @staticmethod
    def exact_grad(pol, img, seqs, rewards):
        # complex-step differentiation of the enumerated expectation:
        # exact to machine precision and independent of the hand-coded
        # gradient
        emb = pol.token_embed
        h = 1e-30
        g = np.zeros(pol.theta.shape)
        base = pol.theta.astype(complex)
        for i in range(g.shape[0]):
            for j in range(g.shape[1]):
                t = base.copy()
                t[i, j] += 1j * h
                val = sum(
                    r * np.exp(ref_log_prob(emb, t, img, s))
                    for s, r in zip(seqs, rewards)
                )
                g[i, j] = val.imag / h
        return g

    @pytest.mark.parametrize("seed,vocab,eos", [
        (1, ("A", "B", "</s>"), "</s>"),
        (2, ("A", "B"), None),
        (3, ("A", "B", "C"), None),
    ])
    def test_reinforce_matches_exact_gradient(self, seed, vocab, eos):
        pol = tiny_policy(seed=seed, vocab=vocab, eos=eos)
        rng = np.random.default_rng(1000 + seed)
        img = rng.normal(size=pol.embed_dim)
        seqs = all_sequences(pol.vocab_size, pol.eos_index, pol.max_len)
        rewards = list(rng.uniform(0.0, 2.0, size=len(seqs)))

        probs = [float(np.exp(ref_log_prob(pol.token_embed, pol.theta,
                                           img, s))) for s in seqs]
        assert abs(sum(probs) - 1.0) <= 1e-12  # the tree is exhaustive

        def estimator_expectation(b):
            g = np.zeros(pol.theta.shape)
            for s, p, r in zip(seqs, probs, rewards):
                toks = tuple(pol.vocab[i] for i in s)
                g += p * (r - b) * logp_grad(pol, img, toks)
            return g

        no_base = estimator_expectation(0.0)
        with_base = estimator_expectation(float(np.mean(rewards)))
        exact = self.exact_grad(pol, img, seqs, rewards)
        assert float(np.max(np.abs(no_base - exact))) <= 1e-10
        assert float(np.max(np.abs(with_base - exact))) <= 1e-10
        assert float(np.max(np.abs(with_base - no_base))) <= 1e-10


class TestScstTrain:
    @staticmethod
    def one_step_world():
        pol = sc.ToyPolicy(vocab=("A", "B"), token_embed=np.zeros((2, 1)),
                           theta=np.zeros((2, 2)), max_len=1,
                           eos_token=None)
        img = np.array([1.0])

        def reward_fn(image, content):
            return 1.0 if content == ("A",) else 0.0

        return pol, img, reward_fn

    def test_rewarded_caption_probability_rises_monotonically(self):
        pol, img, reward_fn = self.one_step_world()
        # small enough that the winner stays below float saturation
        cfg = sc.ScstConfig(beam_size=2, lr=0.05)
        probs = [0.5]
        cur = pol
        for _ in range(200):
            cur = sc.scst_train(cur, [img], cfg, reward_fn, steps=1).policy
            probs.append(float(np.exp(sc.step_log_probs(cur, img, ())[0])))
        assert all(b > a for a, b in zip(probs, probs[1:]))
        # flat logits keep the update constant, so the weight grows
        # linearly: a quarter of the learning rate per step
        assert cur.theta[0, 0] == pytest.approx(0.25 * 0.05 * 200, abs=1e-9)
        assert cur.theta[0, 1] == pytest.approx(-0.25 * 0.05 * 200, abs=1e-9)

    def test_zero_learning_rate_changes_nothing(self):
        pol, img, reward_fn = self.one_step_world()
        cfg = sc.ScstConfig(beam_size=2, lr=0.0)
        out = sc.scst_train(pol, [img], cfg, reward_fn, steps=10)
        assert np.array_equal(out.policy.theta, pol.theta)
        assert out.curve == tuple([0.5] * 10)

    def test_curve_tracks_beam_mean(self):
        pol, img, reward_fn = self.one_step_world()
        cfg = sc.ScstConfig(beam_size=2, lr=0.5)
        out = sc.scst_train(pol, [img], cfg, reward_fn, steps=3)
        assert out.curve == tuple([0.5] * 3)  # both beams always decoded

    def test_seeded_rerun_reproduces_curve(self):
        world = sc.demo_world(seed=7, n_pairs=2)
        pre = sc.xent_pretrain(world.policy, world.xe_examples, lr=0.5,
                               steps=50)
        cfg = sc.ScstConfig(beam_size=5, lr=0.5, seed=7)
        score_cfg = ScoreConfig(w=2.5)

        def reward_fn(image, content):
            return sc.reward(pre, image, content, score_cfg)

        a = sc.scst_train(pre, world.train_images, cfg, reward_fn, steps=25)
        b = sc.scst_train(pre, world.train_images, cfg, reward_fn, steps=25)
        assert a.curve == b.curve
        assert np.array_equal(a.policy.theta, b.policy.theta)

    def test_empty_content_gets_zero_reward(self):
        # an end-marker-only decode must not reach the reward function
        rng = np.random.default_rng(90)
        emb = rng.normal(size=(3, 2))
        theta = np.zeros((4, 3))
        theta[0, 2] = 50.0  # image drives the end marker immediately
        pol = sc.ToyPolicy(vocab=("A", "B", "</s>"), token_embed=emb,
                           theta=theta, max_len=2)
        seen = []

        def reward_fn(image, content):
            seen.append(content)
            assert len(content) > 0
            return 1.0

        img = np.array([1.0, 0.0])
        out = sc.scst_train(pol, [img], sc.ScstConfig(beam_size=1, lr=0.1),
                            reward_fn, steps=1)
        assert out.curve == (0.0,)
        assert seen == []

    def test_validation(self):
        pol, img, reward_fn = self.one_step_world()
        cfg = sc.ScstConfig(beam_size=2, lr=0.5)
        with pytest.raises(ValueError, match="at least one"):
            sc.scst_train(pol, [], cfg, reward_fn, steps=1)
        with pytest.raises(ValueError, match="steps"):
            sc.scst_train(pol, [img], cfg, reward_fn, steps=-1)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="beam_size"):
            sc.ScstConfig(beam_size=0)
        with pytest.raises(ValueError, match="lr"):
            sc.ScstConfig(lr=-0.1)
        assert sc.ScstConfig(lr=0.0).lr == 0.0


class TestRepN:
    def test_examples(self):
        assert sc.rep_n(["a dog and a dog"], 1) == 2.0
        assert sc.rep_n(["a dog and a dog"], 2) == 1.0  # "a dog" twice
        assert sc.rep_n(["the quick brown fox"], 1) == 0.0
        assert sc.rep_n(["hi there"], 5) == 0.0

    def test_token_lists_and_strings_agree(self):
        assert sc.rep_n([("a", "dog", "and", "a", "dog")], 1) == \
            sc.rep_n(["a dog and a dog"], 1)

    def test_averages_over_captions(self):
        caps = ["a a a", "b c d"]
        assert sc.rep_n(caps, 1) == pytest.approx(1.0)

    def test_permutation_invariant(self):
        caps = ["a a b", "c d", "e e e e"]
        want = sc.rep_n(caps, 1)
        assert sc.rep_n(caps[::-1], 1) == want
        assert sc.rep_n([caps[1], caps[0], caps[2]], 1) == want

    def test_validation(self):
        with pytest.raises(ValueError, match="n must"):
            sc.rep_n(["a"], 0)
        with pytest.raises(ValueError, match="at least one"):
            sc.rep_n([], 1)


class TestIncorrectEndings:
    @staticmethod
    def cfg(words=("a", "and", "of", "to")):
        return sc.GrammarConfig(stoplist=frozenset(words))

    def test_examples(self):
        assert sc.pct_incorrect_endings(["a cat on a"], self.cfg()) == \
            sc.EndingsResult(100.0, 0)
        assert sc.pct_incorrect_endings(["a cat"], self.cfg()) == \
            sc.EndingsResult(0.0, 0)
        mixed = ["a cat", "the dog barked", "nice view", "close to"]
        assert sc.pct_incorrect_endings(mixed, self.cfg()).percentage == 25.0

    def test_trailing_punctuation_is_stripped(self):
        assert sc.pct_incorrect_endings(["next to."], self.cfg()) == \
            sc.EndingsResult(100.0, 0)
        assert sc.pct_incorrect_endings(["a cat !"], self.cfg()) == \
            sc.EndingsResult(0.0, 0)
        assert sc.pct_incorrect_endings(["A CAT ON A."], self.cfg()) == \
            sc.EndingsResult(100.0, 0)

    def test_empty_caption_counts_and_is_flagged(self):
        got = sc.pct_incorrect_endings(["", "a cat"], self.cfg())
        assert got == sc.EndingsResult(50.0, 1)
        only_punct = sc.pct_incorrect_endings(["..."], self.cfg())
        assert only_punct == sc.EndingsResult(100.0, 1)

    def test_permutation_invariant(self):
        caps = ["a cat", "close to", "", "good dog"]
        want = sc.pct_incorrect_endings(caps, self.cfg())
        got = sc.pct_incorrect_endings(caps[::-1], self.cfg())
        assert got == want

    def test_validation(self):
        with pytest.raises(ValueError, match="at least one"):
            sc.pct_incorrect_endings([], self.cfg())
        with pytest.raises(ValueError, match="stoplist"):
            sc.GrammarConfig(stoplist=frozenset())
        with pytest.raises(ValueError, match="lowercase"):
            sc.GrammarConfig(stoplist=frozenset({"The"}))
        with pytest.raises(ValueError, match="max_n"):
            sc.GrammarConfig(stoplist=frozenset({"a"}), max_n=0)


class TestStoplist:
    def test_packaged_default(self):
        words = sc.load_stoplist()
        assert {"a", "the", "and", "of", "to", "with"} <= words
        assert all(w == w.lower() for w in words)
        assert not any(w.startswith("#") for w in words)

    def test_override_file(self, tmp_path):
        f = tmp_path / "stop.txt"
        f.write_text("# heading\nFoo\n\nbar\n", encoding="utf-8")
        assert sc.load_stoplist(str(f)) == frozenset({"foo", "bar"})

    def test_empty_file_rejected(self, tmp_path):
        f = tmp_path / "stop.txt"
        f.write_text("# nothing here\n\n", encoding="utf-8")
        with pytest.raises(ValueError, match="no words"):
            sc.load_stoplist(str(f))


class TestDemo:
    def test_world_geometry(self):
        world = sc.demo_world(seed=3)
        emb = world.policy.token_embed
        assert np.allclose(emb @ emb.T, np.eye(len(emb)), atol=1e-10)
        assert len(world.train_images) == len(world.heldout_images)
        for train, held in zip(world.train_images, world.heldout_images):
            assert np.linalg.norm(train) == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.norm(held) == pytest.approx(1.0, abs=1e-12)
            assert not np.allclose(train, held)
        # two single-topic references per training view
        assert len(world.xe_examples) == 2 * len(world.train_images)
        flat = [t for pair in world.train_topics for t in pair]
        assert len(set(flat)) == len(flat)

    def test_world_validation(self):
        with pytest.raises(ValueError, match="at least two"):
            sc.demo_world(n_pairs=1)
        with pytest.raises(ValueError, match="noise"):
            sc.demo_world(noise=1.5)

    def test_demo_meets_targets(self):
        report = sc.run_scst_demo(seed=0)
        gain = (report.mean_reward_end - report.mean_reward_start) \
            / abs(report.mean_reward_start)
        assert gain >= 0.20
        assert report.rep1_end <= report.rep1_start
        assert report.pct_bad_endings_end <= report.pct_bad_endings_start
        assert len(report.curve) == 200
        # every held-out caption names both topics of its scene
        world = sc.demo_world(seed=0)
        for caption, topics in zip(report.captions_end,
                                   world.heldout_topics):
            assert sorted(caption) == sorted(topics)

    def test_demo_is_deterministic(self):
        a = sc.run_scst_demo(seed=1, scst_steps=30, xe_steps=60)
        b = sc.run_scst_demo(seed=1, scst_steps=30, xe_steps=60)
        assert a.curve == b.curve
        assert a.captions_end == b.captions_end
