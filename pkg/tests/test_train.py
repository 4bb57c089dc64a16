import numpy as np
import pytest

from grnn import tensor as T
from grnn.cell import GrnnConfig, init_weights, zero_weights
from grnn.data import SynthSpec, VideoSequence, degrade, synth_clips, synth_generate
from grnn.errors import NonFiniteError
from grnn.metrics import psnr
from grnn.train import (AdamState, TrainConfig, adam_step, evaluate, l1_loss, loss_and_grads,
                        lr_at_epoch, train_loop)


TOY = GrnnConfig(scale=4, channels=16, num_res_blocks=1)


@pytest.fixture
def rng():
    return np.random.default_rng(17)


class TestSchedule:
    def test_reference_values(self):
        cfg = TrainConfig()
        assert lr_at_epoch(0, cfg) == 1e-4
        assert lr_at_epoch(9, cfg) == 1e-4
        assert lr_at_epoch(10, cfg) == pytest.approx(1e-5, rel=1e-12)
        assert lr_at_epoch(25, cfg) == pytest.approx(1e-6, rel=1e-12)

    def test_formula_over_range(self):
        cfg = TrainConfig()
        for e in range(81):
            assert lr_at_epoch(e, cfg) == pytest.approx(1e-4 * 0.1 ** (e // 10), rel=1e-12)

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            lr_at_epoch(-1, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch=0)
        with pytest.raises(ValueError):
            TrainConfig(lr0=0.0)
        assert TrainConfig(epochs=3, steps_per_epoch=7).total_steps == 21


class TestAdam:
    def params(self, rng):
        return {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal(4)}

    def test_zero_gradient_no_decay_is_noop(self, rng):
        p = self.params(rng)
        state = AdamState.zeros_like(p, lr=1e-2)
        new, st = adam_step(p, {k: np.zeros_like(v) for k, v in p.items()}, state)
        for k in p:
            np.testing.assert_array_equal(new[k], p[k])
        assert st.t == 1

    def test_first_step_is_signed_lr(self, rng):
        p = self.params(rng)
        g = {k: rng.standard_normal(v.shape) for k, v in p.items()}
        new, _ = adam_step(p, g, AdamState.zeros_like(p, lr=1e-3))
        for k in p:
            np.testing.assert_allclose(new[k] - p[k], -1e-3 * np.sign(g[k]), atol=1e-6 * 1e-3 + 1e-12)

    def test_decoupled_decay(self, rng):
        p = self.params(rng)
        zero = {k: np.zeros_like(v) for k, v in p.items()}
        new, _ = adam_step(p, zero, AdamState.zeros_like(p, lr=0.1, weight_decay=0.5))
        for k in p:
            np.testing.assert_allclose(new[k], p[k] * (1 - 0.1 * 0.5), rtol=1e-12)

    def test_bias_correction_matches_reference(self, rng):
        """Three steps against a hand-unrolled update."""
        p0 = rng.standard_normal(5)
        gs = [rng.standard_normal(5) for _ in range(3)]
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        p, state = {"p": p0}, AdamState.zeros_like({"p": p0}, lr=lr)
        ref, m, v = p0.copy(), np.zeros(5), np.zeros(5)
        for t, g in enumerate(gs, start=1):
            p, state = adam_step(p, {"p": g}, state)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ref = ref - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        np.testing.assert_allclose(p["p"], ref, rtol=1e-12)

    def test_inputs_untouched(self, rng):
        p = self.params(rng)
        copy = {k: v.copy() for k, v in p.items()}
        state = AdamState.zeros_like(p, lr=1e-2)
        adam_step(p, {k: np.ones_like(v) for k, v in p.items()}, state)
        assert state.t == 0 and not state.m["a"].any()
        for k in p:
            np.testing.assert_array_equal(p[k], copy[k])

    def test_missing_gradient(self, rng):
        p = self.params(rng)
        with pytest.raises(KeyError):
            adam_step(p, {"a": np.zeros((3, 2))}, AdamState.zeros_like(p))

    def test_dtype_preserved(self):
        p = {"w": np.ones(3, np.float32)}
        new, st = adam_step(p, {"w": np.ones(3)}, AdamState.zeros_like(p, lr=1e-3))
        assert new["w"].dtype == np.float32 and st.m["w"].dtype == np.float32


class TestLoss:
    def test_l1(self):
        a = np.zeros((1, 3, 2, 2))
        b = np.full((1, 3, 2, 2), 0.25)
        assert l1_loss(a, b) == 0.25
        assert l1_loss(a, a) == 0.0

    def test_grads_cover_all_params(self, rng):
        w = init_weights(TOY, seed=1)
        lr = [rng.random((2, 3, 4, 4)).astype(np.float32) for _ in range(2)]
        hr = [rng.random((2, 3, 16, 16)).astype(np.float32) for _ in range(2)]
        loss, grads = loss_and_grads(w, TOY, lr, hr)
        assert loss > 0
        assert set(grads) == set(w.named())
        # only the reconstruction head is reachable while it is still zero
        assert np.abs(grads["recon_head.weight"]).max() > 0


def _tiny_tcfg(**kw):
    base = dict(epochs=2, steps_per_epoch=3, lr0=1e-3, clip_length=2, patch_size=16, batch=2, seed=0)
    return TrainConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def clips():
    return synth_clips(2, frames=3, size=32, seed=0)


class TestTrainLoop:
    def test_zero_steps_keeps_weights(self, clips):
        w = init_weights(TOY, seed=2)
        res = train_loop(w, TOY, clips, _tiny_tcfg(), steps=0)
        assert res.log == []
        for k, v in w.named().items():
            assert res.weights.named()[k].tobytes() == v.tobytes()

    def test_zero_weights_do_not_move_without_gradient(self, clips):
        # all-zero weights: every relu is dead and only the heads see a gradient
        w = zero_weights(TOY)
        res = train_loop(w, TOY, clips, _tiny_tcfg(weight_decay=0.0), steps=2)
        named = res.weights.named()
        assert not named["fusion.primary.weight"].any()
        assert not named["trunk.0.conv1.weight"].any()

    def test_records(self, clips):
        seen = []
        epochs = []
        res = train_loop(init_weights(TOY), TOY, clips, _tiny_tcfg(), val={"v": clips[0]},
                         on_record=seen.append, on_epoch=lambda e, w: epochs.append(e))
        assert len(res.log) == 6 and seen == res.log
        assert [r["step"] for r in res.log] == list(range(6))
        assert [r["epoch"] for r in res.log] == [0, 0, 0, 1, 1, 1]
        assert epochs == [0, 1]
        assert res.log[2]["val_psnr"] is not None and res.log[1]["val_psnr"] is None
        assert all(np.isfinite(r["loss"]) for r in res.log)

    def test_deterministic(self, clips):
        a = train_loop(init_weights(TOY), TOY, clips, _tiny_tcfg(), steps=3)
        b = train_loop(init_weights(TOY), TOY, clips, _tiny_tcfg(), steps=3)
        assert [r["loss"] for r in a.log] == [r["loss"] for r in b.log]
        for k, v in a.weights.named().items():
            assert v.tobytes() == b.weights.named()[k].tobytes()

    def test_rejects_bad_geometry(self, clips):
        with pytest.raises(ValueError):
            train_loop(init_weights(TOY), TOY, clips, _tiny_tcfg(patch_size=18))
        with pytest.raises(ValueError):
            train_loop(init_weights(TOY), TOY, clips, _tiny_tcfg(clip_length=5))
        with pytest.raises(ValueError):
            train_loop(init_weights(TOY), TOY, clips, _tiny_tcfg(patch_size=48))

    def test_divergence_aborts(self, clips):
        w = init_weights(TOY).map(lambda k, v: np.full_like(v, 1e37) if k.startswith("recon") else v,
                                  TOY)
        with pytest.raises(NonFiniteError):
            with np.errstate(all="ignore"):
                train_loop(w, TOY, clips, _tiny_tcfg(), steps=3)

    def test_overfits_single_clip(self):
        cfg = GrnnConfig(scale=4, channels=32, num_res_blocks=3)
        clip = synth_generate(SynthSpec("moving-bars", 4, 32, (1.0, 0.0), seed=3))
        tcfg = TrainConfig(epochs=3, steps_per_epoch=100, lr0=1e-3, weight_decay=0.0,
                           clip_length=4, patch_size=32, batch=1, seed=0)
        res = train_loop(init_weights(cfg, seed=0), cfg, [clip], tcfg)
        losses = [r["loss"] for r in res.log]
        assert losses[-1] < 0.02
        assert np.median(losses[200:]) < np.median(losses[:100])


class TestEvaluate:
    def test_zero_weights_equal_bicubic(self):
        hr = synth_generate(SynthSpec("random-texture-translate", 3, 32, seed=1))
        rep = evaluate(zero_weights(TOY), TOY, {"clip": hr})
        lr = degrade(hr, 4)
        expect = [psnr(np.clip(T.bicubic_resize(l, 4), 0, 1), h) for l, h in zip(lr, hr)]
        assert rep.psnr == pytest.approx(expect, abs=1e-12)
        assert list(rep.rows) == ["clip"]

    def test_pairs_accepted(self):
        hr = synth_generate(SynthSpec("drifting-checker", 2, 32, seed=1))
        lr = degrade(hr, 4)
        a = evaluate(zero_weights(TOY), TOY, {"c": (lr, hr)}, skip_first=1)
        b = evaluate(zero_weights(TOY), TOY, {"c": hr}, skip_first=1)
        assert a.psnr == b.psnr and len(a.psnr) == 1

    def test_pair_length_mismatch(self):
        hr = synth_generate(SynthSpec("drifting-checker", 2, 32, seed=1))
        lr = VideoSequence(degrade(hr, 4).frames[:1], role="LR")
        with pytest.raises(ValueError):
            evaluate(zero_weights(TOY), TOY, {"c": (lr, hr)})
