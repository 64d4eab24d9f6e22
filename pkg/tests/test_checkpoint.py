"""Checkpoint format tests: bit-exact round trips and error taxonomy."""

import dataclasses

import numpy as np
import pytest

from miclab.checkpoint import (CHECKPOINT_MAGIC, FORMAT_VERSION, load_checkpoint,
                               peek_checkpoint, save_checkpoint)
from miclab.config import ExperimentConfig, config_to_dict
from miclab.errors import CheckpointError
from miclab.models import ArchSpec
from miclab.rng import get_state
from miclab.synthworlds import SplitData
from miclab.uda import LossWeights, MicConfig, train

ARCH = ArchSpec(task="seg", widths=(4, 8), num_classes=4)


def tiny_datasets(seed=0, n=6, res=8, c=4):
    rng = np.random.default_rng(seed)

    def split(with_labels=True):
        imgs = rng.uniform(0, 1, size=(n, 3, res, res))
        labs = rng.integers(0, c, size=(n, res, res)) if with_labels else None
        return SplitData(images=imgs, labels=labs, manifest={})

    return {"source/train": split(), "source/val": split(),
            "target/train": split(), "target/val": split()}


def tiny_config(**over):
    base = dict(seed=0, host="self_training", steps=3, batch_source=2,
                batch_target=2, lr=0.05, eval_interval=3, widths=(4, 8),
                mic=MicConfig(patch=4, ratio=0.5, tau=0.2))
    base.update(over)
    return ExperimentConfig(**base)


def trained_state(cfg=None):
    cfg = cfg or tiny_config()
    return cfg, train(cfg, tiny_datasets(), ARCH)


class TestRoundTrip:
    def test_state_survives_exactly(self, tmp_path):
        cfg, state = trained_state()
        p = str(tmp_path / "c.ckpt")
        save_checkpoint(p, state, config_to_dict(cfg), ARCH)
        back, cfg_dict = load_checkpoint(p)
        assert back.step == state.step
        assert cfg_dict == config_to_dict(cfg)
        for (n1, p1), (n2, p2) in zip(state.student.named(), back.student.named()):
            assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
        for (_, t1), (_, t2) in zip(state.teacher.model.named(),
                                    back.teacher.model.named()):
            assert t1.data.tobytes() == t2.data.tobytes()
        assert back.teacher.update_count == state.teacher.update_count
        v1, v2 = state.opt.state_dict(), back.opt.state_dict()
        assert set(v1) == set(v2)
        assert all(v1[k].tobytes() == v2[k].tobytes() for k in v1)
        for name in state.rngs:
            assert get_state(back.rngs[name]) == get_state(state.rngs[name])

    def test_save_load_save_byte_identical(self, tmp_path):
        cfg, state = trained_state()
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(p1, state, config_to_dict(cfg), ARCH)
        back, _ = load_checkpoint(p1)
        save_checkpoint(p2, back, config_to_dict(cfg), ARCH)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_adversarial_disc_included(self, tmp_path):
        cfg, state = trained_state(tiny_config(host="adversarial",
                                               mic=MicConfig(enabled=False),
                                               weights=LossWeights(lambda_m=0.0)))
        p = str(tmp_path / "adv.ckpt")
        save_checkpoint(p, state, config_to_dict(cfg), ARCH)
        back, _ = load_checkpoint(p)
        assert back.disc is not None
        for (_, d1), (_, d2) in zip(state.disc.named(), back.disc.named()):
            assert d1.data.tobytes() == d2.data.tobytes()

    def test_peek_reads_step_without_blocks(self, tmp_path):
        cfg, state = trained_state()
        p = str(tmp_path / "c.ckpt")
        save_checkpoint(p, state, config_to_dict(cfg), ARCH)
        meta = peek_checkpoint(p)
        assert meta["step"] == 3
        assert meta["arch"] == ARCH.to_dict()


class TestResume:
    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg6 = tiny_config(steps=6, eval_interval=3)
        straight = train(cfg6, tiny_datasets(), ARCH)

        cfg3 = dataclasses.replace(cfg6, steps=3)
        half = train(cfg3, tiny_datasets(), ARCH)
        p = str(tmp_path / "half.ckpt")
        save_checkpoint(p, half, config_to_dict(cfg3), ARCH)
        resumed, _ = load_checkpoint(p)
        final = train(cfg6, tiny_datasets(), ARCH, start_state=resumed)

        for (_, a), (_, b) in zip(straight.student.named(), final.student.named()):
            assert a.data.tobytes() == b.data.tobytes()
        want = [r for r in straight.records if r["step"] == 6]
        got = [r for r in final.records if r["step"] == 6]
        assert want == got


class TestErrorTaxonomy:
    def fresh(self, tmp_path):
        cfg, state = trained_state()
        p = str(tmp_path / "c.ckpt")
        save_checkpoint(p, state, config_to_dict(cfg), ARCH)
        return p

    def test_bad_magic(self, tmp_path):
        p = self.fresh(tmp_path)
        raw = bytearray(open(p, "rb").read())
        raw[:8] = b"NOTMAGIC"
        open(p, "wb").write(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_version_mismatch(self, tmp_path):
        p = self.fresh(tmp_path)
        raw = bytearray(open(p, "rb").read())
        raw[8:12] = np.uint32(FORMAT_VERSION + 1).tobytes()
        open(p, "wb").write(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_truncated_blocks(self, tmp_path):
        p = self.fresh(tmp_path)
        raw = open(p, "rb").read()
        open(p, "wb").write(raw[:-16])
        with pytest.raises(IOError):
            load_checkpoint(p)

    def test_truncated_header(self, tmp_path):
        p = self.fresh(tmp_path)
        open(p, "wb").write(CHECKPOINT_MAGIC + b"\x01")
        with pytest.raises(IOError):
            load_checkpoint(p)

    def test_trailing_garbage(self, tmp_path):
        p = self.fresh(tmp_path)
        with open(p, "ab") as fh:
            fh.write(b"junk")
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IOError):
            load_checkpoint(str(tmp_path / "absent.ckpt"))
