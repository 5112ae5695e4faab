import math

import numpy as np
import pytest

import virt

TINY = {
    "model.hidden_dim": "8",
    "model.ffn_dim": "16",
    "model.vocab_size": "16",
    "model.max_len_x": "4",
    "model.max_len_y": "4",
    "train.batch_size": "8",
    "train.teacher_epochs": "1",
    "train.student_epochs": "1",
}


def tiny_config(**extra):
    overrides = dict(TINY)
    overrides.update(extra)
    return virt.RunConfig(overrides)


def test_generators_are_deterministic():
    a = virt.gen_keymatch(50, 16, 3, max_len_x=4, max_len_y=4)
    assert a == virt.gen_keymatch(50, 16, 3, max_len_x=4, max_len_y=4)
    assert {label for _, _, label in a} == {0, 1}
    for x, y, label in virt.gen_overlap(50, 16, 4, max_len_x=4, max_len_y=4):
        assert 1 <= len(x) <= 4 and 1 <= len(y) <= 4


def test_virt_loss_hand_example():
    student = [([np.array([[1.0, 0.0]])], [np.ones((2, 1))])]
    teacher = [([np.array([[0.5, 0.5]])], [np.ones((2, 1))])]
    assert virt.virt_loss(student, teacher, 1, 2, [1]) == pytest.approx(math.sqrt(2) / 4, abs=1e-12)
    assert virt.virt_loss(teacher, teacher, 1, 2, [1]) == 0.0


def test_select_layers_and_errors():
    assert virt.select_layers("skip:2", 4) == [1, 3]
    with pytest.raises(virt.VirtError, match="config"):
        virt.select_layers("first:5", 4)
    with pytest.raises(virt.VirtError):
        virt.RunConfig({"model.depth": "2"})


def test_teacher_maps_and_cached_student_logits():
    c = tiny_config()
    teacher = virt.CrossEncoder(c, 1)
    maps = teacher.target_maps([2, 3, 4], [5, 6])
    assert len(maps) == 2
    xy, yx = maps[0]
    assert xy[0].shape == (3, 2) and yx[0].shape == (2, 3)
    np.testing.assert_allclose(xy[0].sum(axis=1), 1.0, atol=1e-12)
    student = virt.DualEncoder(c, 2)
    assert np.array_equal(student.logits([2, 3], [4]), student.cached_logits([2, 3], [4]))


def test_training_roundtrip(tmp_path):
    c = tiny_config()
    train = virt.gen_keymatch(40, 16, 1, max_len_x=4, max_len_y=4)
    dev = virt.gen_keymatch(20, 16, 2, max_len_x=4, max_len_y=4)
    teacher, history = virt.train_teacher(c, train, dev, 5)
    assert history.startswith("epoch,split,metric,value")
    student, _, calls = virt.train_student(c, teacher, train, dev, 5)
    assert calls == len(train)
    path = str(tmp_path / "student.ckpt")
    student.save(path)
    loaded = virt.DualEncoder.load(path)
    assert np.array_equal(loaded.logits([2, 3], [4]), student.logits([2, 3], [4]))
    result = loaded.evaluate(dev)
    assert result["count"] == 20 and 0.0 <= result["accuracy"] <= 1.0
    with pytest.raises(virt.VirtError, match="contract"):
        virt.train_student(c, None, train, dev, 5)


def test_auc_and_latency_sanity():
    assert virt.auc_roc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75
    r = virt.bench_latency(tiny_config(), candidates=1, repetitions=3)
    assert r["speedup"] > 0 and r["precompute_ms"] > 0
