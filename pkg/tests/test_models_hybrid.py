import numpy as np
import pytest
import torch

from ssmd.core import Ordering, SequenceSpec, make_reveal_state, make_rng, sample_ordering
from ssmd.models.hybrid import HybridConfig, HybridModel
from ssmd.models.masks import build_attention_masks
from ssmd.schedule import NoiseSchedule
from ssmd.train import sample_mask_config

SPEC = SequenceSpec(S=5, D=6)


@pytest.fixture(scope="module")
def model():
    return HybridModel(SPEC, HybridConfig(embed_dim=16, n_heads=2), seed=0)


@pytest.fixture(scope="module")
def trainedish():
    """Model with a randomized (non-zero) causal path, so target != draft."""
    m = HybridModel(SPEC, HybridConfig(embed_dim=16, n_heads=2), seed=1)
    g = torch.Generator().manual_seed(99)
    with torch.no_grad():
        for name, p in m.net.named_parameters():
            if m.net.causal_param_names() and name.startswith(("head_c.", "c_blocks.")):
                p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return m


def random_state(rng, i=None):
    x = rng.integers(0, SPEC.S, SPEC.D)
    order = sample_ordering(rng, SPEC.D)
    if i is None:
        i = int(rng.integers(0, SPEC.D))
    return make_reveal_state(SPEC, x, order, i)


class TestAttentionMasks:
    def test_left_to_right(self):
        nc, c = build_attention_masks(Ordering(np.array([0, 1])))
        assert nc.all()
        assert c.tolist() == [[True, False], [True, True]]

    def test_paper_permutation_example(self):
        # ordering [5,4,1,3,2,0]: position 2 has rank 4, attends to the 5
        # positions with rank <= 4 (itself plus 4 earlier ones)
        order = Ordering(np.array([5, 4, 1, 3, 2, 0]))
        nc, c = build_attention_masks(order)
        assert nc.all()
        assert c[2].sum() == 5
        rank = order.rank()
        for q in range(6):
            for k in range(6):
                assert c[q, k] == (rank[k] <= rank[q])

    def test_non_causal_always_dense(self):
        rng = make_rng(0)
        for _ in range(5):
            nc, _ = build_attention_masks(sample_ordering(rng, 7))
            assert nc.all()


class TestDraftPass:
    def test_rows_normalized(self, model):
        rng = make_rng(10)
        state = random_state(rng, i=2)
        rows, _ = model.draft_pass(state, horizon=4)
        assert rows.shape == (4, SPEC.S)
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-9)

    def test_deterministic(self, model):
        state = random_state(make_rng(11), i=1)
        r1, _ = model.draft_pass(state, horizon=3)
        r2, _ = model.draft_pass(state, horizon=3)
        np.testing.assert_array_equal(r1, r2)

    def test_masked_values_do_not_leak(self, model):
        # two full sequences that agree on revealed positions give identical
        # draft rows: masked inputs enter only as the mask embedding
        rng = make_rng(12)
        order = sample_ordering(rng, SPEC.D)
        i = 2
        a = rng.integers(0, SPEC.S, SPEC.D)
        b = a.copy()
        b[order.perm[i:]] = rng.integers(0, SPEC.S, SPEC.D - i)
        sa = make_reveal_state(SPEC, a, order, i)
        sb = make_reveal_state(SPEC, b, order, i)
        ra, _ = model.draft_pass(sa, horizon=SPEC.D - i)
        rb, _ = model.draft_pass(sb, horizon=SPEC.D - i)
        np.testing.assert_array_equal(ra, rb)


class TestTargetRows:
    def test_zero_init_target_equals_draft_exactly(self, model):
        rng = make_rng(13)
        for _ in range(5):
            state = random_state(rng)
            i = state.revealed_count
            hor = SPEC.D - i
            rows, cache = model.draft_pass(state, horizon=hor)
            drafted = rng.integers(0, SPEC.S, hor)
            targets = model.target_rows(cache, drafted, i, SPEC.D)
            np.testing.assert_array_equal(rows, targets)

    def test_first_slot_is_draft_even_when_trained(self, trainedish):
        rng = make_rng(14)
        state = random_state(rng, i=1)
        rows, cache = trainedish.draft_pass(state, horizon=5)
        targets = trainedish.target_rows(cache, rng.integers(0, SPEC.S, 5), 1, 6)
        np.testing.assert_array_equal(targets[0], rows[0])
        # later slots genuinely differ for this model
        assert np.abs(targets[1:] - rows[1:]).max() > 1e-6

    def test_target_causality_probes(self, trainedish):
        rng = make_rng(15)
        for _ in range(20):
            state = random_state(rng, i=int(rng.integers(0, SPEC.D - 1)))
            i = state.revealed_count
            hor = SPEC.D - i
            _, cache = trainedish.draft_pass(state, horizon=hor)
            drafted = rng.integers(0, SPEC.S, hor)
            d = int(rng.integers(i, SPEC.D))
            base = trainedish.target_rows(cache, drafted, d, d + 1)
            tampered = drafted.copy()
            tampered[d - i :] = rng.integers(0, SPEC.S, SPEC.D - d)
            probe = trainedish.target_rows(cache, tampered, d, d + 1)
            np.testing.assert_array_equal(base, probe)

    def test_changing_earlier_draft_changes_later_rows(self, trainedish):
        rng = make_rng(16)
        state = random_state(rng, i=0)
        _, cache = trainedish.draft_pass(state, horizon=SPEC.D)
        drafted = rng.integers(0, SPEC.S, SPEC.D)
        base = trainedish.target_rows(cache, drafted, 0, SPEC.D)
        tampered = drafted.copy()
        tampered[1] = (tampered[1] + 1) % SPEC.S
        probe = trainedish.target_rows(cache, tampered, 0, SPEC.D)
        assert np.abs(base[2:] - probe[2:]).max() > 1e-9


class TestGradients:
    def test_finite_difference_small(self):
        from ssmd.train import finite_difference_check

        rng = make_rng(17)
        net = HybridModel(SPEC, HybridConfig(embed_dim=16, n_heads=2), seed=3).net
        sched = NoiseSchedule("cosine")
        B = 3
        x = rng.integers(0, SPEC.S, (B, SPEC.D))
        perms = np.empty((B, SPEC.D), dtype=np.int64)
        iis = np.empty(B, dtype=np.int64)
        for b in range(B):
            while True:
                sig, i = sample_mask_config(rng, SPEC.D, sched)
                if i < SPEC.D:
                    break
            perms[b], iis[b] = sig.perm, i
        errs = finite_difference_check(net, x, perms, iis, rng, coords_per_block=3)
        assert errs, "no parameter blocks checked"
        worst = max(errs.values())
        assert worst < 1e-4, errs

    def test_frozen_noncausal_gradients(self):
        from ssmd.train import TrainConfig, make_optimizer, loss_eq9_batch

        model = HybridModel(SPEC, HybridConfig(embed_dim=16, n_heads=2), seed=4)
        make_optimizer(model, TrainConfig(freeze_noncausal=True))
        rng = make_rng(18)
        x = torch.from_numpy(rng.integers(0, SPEC.S, (2, SPEC.D)))
        perms = torch.from_numpy(
            np.stack([sample_ordering(rng, SPEC.D).perm for _ in range(2)])
        )
        iis = torch.from_numpy(np.array([1, 2]))
        nc, c = loss_eq9_batch(model.net, x, perms, iis)
        (nc + c).backward()
        causal = model.net.causal_param_names()
        got_causal_grad = False
        for name, p in model.net.named_parameters():
            if name in causal:
                got_causal_grad = got_causal_grad or (
                    p.grad is not None and p.grad.abs().sum() > 0
                )
            else:
                assert p.grad is None or p.grad.abs().sum() == 0
        assert got_causal_grad


class TestCheckpoint:
    def test_hybrid_roundtrip(self, tmp_path, trainedish):
        from ssmd.models.checkpoint import load_model, save_model

        path = tmp_path / "m.ckpt"
        save_model(trainedish, path)
        loaded = load_model(path)
        rng = make_rng(19)
        state = random_state(rng, i=2)
        r1, c1 = trainedish.draft_pass(state, horizon=4)
        r2, c2 = loaded.draft_pass(state, horizon=4)
        np.testing.assert_array_equal(r1, r2)
        drafted = rng.integers(0, SPEC.S, 4)
        np.testing.assert_array_equal(
            trainedish.target_rows(c1, drafted, 2, 6), loaded.target_rows(c2, drafted, 2, 6)
        )
        assert (tmp_path / "m.ckpt.json").exists()

    def test_tabular_roundtrip(self, tmp_path):
        from ssmd.models.checkpoint import load_model, save_model
        from ssmd.models.tabular import TabularModel

        m = TabularModel.random(SequenceSpec(S=3, D=3), make_rng(20), draft_mode="perturbed", eps=0.1)
        save_model(m, tmp_path / "t.ckpt")
        loaded = load_model(tmp_path / "t.ckpt")
        np.testing.assert_array_equal(m.joint, loaded.joint)
        assert loaded.draft_mode == "perturbed"
        assert loaded.eps == 0.1

    def test_bad_magic_rejected(self, tmp_path):
        from ssmd.models.checkpoint import CheckpointError, load_model

        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTCKPT")
        with pytest.raises(CheckpointError):
            load_model(p)
