import numpy as np
import pytest

from sapd.config import RunConfig
from sapd.data import generate_scenes
from sapd.training import CHECKPOINT_NAME, METRICS_NAME, Schedule, Trainer, TrainingDiverged, train

TINY = {
    "model.width": 8,
    "model.stem_width": 4,
    "selection.width": 4,
    "train.train_count": 16,
    "train.batch_size": 4,
    "train.epochs": 2,
    "train.warmup_iters": 2,
}


@pytest.fixture(scope="module")
def cfg():
    return RunConfig().replace(**TINY)


@pytest.fixture(scope="module")
def batch():
    return generate_scenes(4, seed=9)


class TestSchedule:
    def test_default_shape(self):
        s = Schedule(RunConfig().train, 2000)
        assert s.total_iters == 2000
        assert s.phase(999) == 1 and s.phase(1000) == 2
        assert s.lr(0) == pytest.approx(0.01 / 3)
        assert s.lr(100) == pytest.approx(0.01)
        assert s.lr(1499) == pytest.approx(0.01) and s.lr(1500) == pytest.approx(0.001)
        assert s.lr(1832) == pytest.approx(0.001) and s.lr(1833) == pytest.approx(0.0001)

    def test_warmup_monotone(self):
        s = Schedule(RunConfig().train, 2000)
        lrs = [s.lr(i) for i in range(101)]
        assert all(a < b for a, b in zip(lrs, lrs[1:100]))

    def test_single_epoch_stays_in_phase_one(self, cfg):
        s = Schedule(cfg.replace(**{"train.epochs": 1}).train, 16)
        assert all(s.phase(i) == 1 for i in range(s.total_iters))


class TestTrainer:
    def test_zero_lr_keeps_parameters(self, cfg, batch):
        tr = Trainer(cfg)
        before = {k: v.copy() for k, v in tr.params.items()}
        for phase in (1, 2, 2):
            tr.step(batch, phase, 0.0)
        for k in before:
            np.testing.assert_array_equal(tr.params[k], before[k])

    @pytest.mark.parametrize("phase", [1, 2])
    def test_step_decreases_loss(self, cfg, batch, phase):
        tr = Trainer(cfg)
        before = tr.compute(batch, phase, with_grads=False)[0].breakdown.total
        tr.step(batch, phase, 1e-3)
        after = tr.compute(batch, phase, with_grads=False)[0].breakdown.total
        assert after < before

    def test_phase_two_uses_soft_weights(self, cfg, batch):
        tr = Trainer(cfg)
        one = tr.compute(batch, 1, with_grads=False)[0]
        two = tr.compute(batch, 2, with_grads=False)[0]
        # phase 2 multiplies positives by selection probabilities (< 1)
        assert two.breakdown.positive_weight_sum < one.breakdown.positive_weight_sum
        assert two.breakdown.num_positives >= one.breakdown.num_positives

    def test_without_selection(self, cfg, batch):
        tr = Trainer(cfg.replace(**{"train.soft_select": False}))
        res, grads = tr.compute(batch, 2)
        assert res.breakdown.select_net == 0.0
        assert not any(k.startswith("sel.") for k in grads)

    def test_checkpoint_round_trip(self, cfg, tmp_path, batch):
        tr = Trainer(cfg)
        tr.step(batch, 1, 1e-2)
        tr.save(tmp_path / "c.sapd")
        other = Trainer(cfg, seed=7)
        other.load(tmp_path / "c.sapd")
        for k in tr.params:
            np.testing.assert_array_equal(tr.params[k], other.params[k])

    def test_checkpoint_shape_mismatch(self, cfg, tmp_path):
        Trainer(cfg).save(tmp_path / "c.sapd")
        with pytest.raises(ValueError):
            Trainer(cfg.replace(**{"model.width": 16})).load(tmp_path / "c.sapd")


class TestTrain:
    def test_outputs_and_determinism(self, cfg, tmp_path):
        _, rows = train(cfg, out_dir=tmp_path / "a")
        train(cfg, out_dir=tmp_path / "b")
        assert len(rows) == 8
        assert [r["phase"] for r in rows] == [1] * 4 + [2] * 4
        for name in (METRICS_NAME, CHECKPOINT_NAME):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        header = (tmp_path / "a" / METRICS_NAME).read_text().splitlines()[0]
        assert header == "iter,total,cls,loc,select,pos_weight_sum,phase,lr"

    def test_seed_changes_run(self, cfg):
        _, a = train(cfg, seed=0)
        _, b = train(cfg, seed=1)
        assert a[0]["total"] != b[0]["total"]

    def test_divergence_guard(self, cfg):
        with pytest.raises(TrainingDiverged):
            train(cfg.replace(**{"train.divergence_factor": 1e-6}))
