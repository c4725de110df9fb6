import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atsed.augment import AugmentConfig
from atsed.labels import EventList
from atsed.models import CRNN, AtBackboneConfig, CrnnConfig, Posteriors
from atsed.numerics.tensor import Tensor, backward, no_grad
from atsed.training.data import ClipSet
from atsed.training.losses import AflConfig, afl_loss, bce_loss, consistency_loss
from atsed.training.ssl import (SslConfig, ict_term, make_teacher, update_teacher,
                                warmup_coefficient)
from atsed.training.trainer import (StageData, StageRecipe, StageTrainer, TrainConfig, macro_f1,
                                    train_stage1, train_stage2)

VOCAB = ["Cat", "Dog", "Speech"]


# -- supervised losses --------------------------------------------------------------

def test_bce_examples():
    assert float(bce_loss(np.ones(4), np.ones(4)).data) < 1e-6
    assert math.isclose(float(bce_loss(np.array([0.5]), np.array([1.0])).data), math.log(2), abs_tol=1e-12)


def test_afl_examples():
    got = float(afl_loss(np.array([0.5]), np.array([1.0]), AflConfig(1.0, 0.0)).data)
    assert math.isclose(got, 0.5 * math.log(2), abs_tol=1e-12)
    AflConfig(0.625, 1.0)
    with pytest.raises(ValueError):
        AflConfig(-0.1, 1.0)


pairs_st = st.integers(0, 2**31 - 1).map(lambda s: (
    np.random.default_rng(s).uniform(0, 1, size=(4, 5)),
    np.random.default_rng(s + 1).uniform(0, 1, size=(4, 5))))


@settings(max_examples=200, deadline=None)
@given(pairs_st)
def test_afl_zero_exponents_is_bce(pair):
    p, y = pair
    a = float(afl_loss(p, y, AflConfig(0.0, 0.0)).data)
    b = float(bce_loss(p, y).data)
    assert abs(a - b) < 1e-12


@settings(max_examples=200, deadline=None)
@given(pairs_st)
def test_bce_symmetry(pair):
    p, y = pair
    assert abs(float(bce_loss(p, y).data) - float(bce_loss(1 - p, 1 - y).data)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 3), st.floats(0, 3))
def test_afl_nonnegative_and_zero_at_targets(seed, gamma, zeta):
    rng = np.random.default_rng(seed)
    y = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
    cfg = AflConfig(gamma, zeta)
    assert float(afl_loss(rng.uniform(size=(3, 4)), y, cfg).data) >= 0
    # p == y up to the probability clamp
    assert float(afl_loss(y, y, cfg).data) < 1e-6


def test_afl_backward_oracle():
    # d/dp of -(1-p)^g ln p at y=1
    p0, g = 0.3, 0.625
    p = Tensor(np.array([p0]), requires_grad=True)
    backward(afl_loss(p, np.array([1.0]), AflConfig(g, 1.0)))
    ref = g * (1 - p0) ** (g - 1) * math.log(p0) - (1 - p0) ** g / p0
    assert math.isclose(float(p.grad[0]), ref, rel_tol=1e-10)


# -- consistency and ICT ----------------------------------------------------------------

def post(frame, clip):
    return Posteriors(Tensor(np.asarray(frame, float)), Tensor(np.asarray(clip, float)))


def test_consistency_examples():
    rng = np.random.default_rng(0)
    f, c = rng.uniform(size=(2, 5, 3)), rng.uniform(size=(2, 3))
    assert float(consistency_loss(post(f, c), post(f, c)).data) == 0.0
    got = float(consistency_loss(post(f, c), post(f + 0.2, c + 0.2)).data)
    assert math.isclose(got, 0.04, abs_tol=1e-12)


def tiny_crnn(seed=0):
    cfg = CrnnConfig(n_mels=4, conv_filters=[2, 2], pool=[(2, 2), (2, 1)], gru_hidden=3, n_classes=3,
                     dropout=0.0)
    return CRNN(cfg, np.random.default_rng(seed))


def test_consistency_gradient_reaches_student_only():
    student = tiny_crnn(0)
    teacher = tiny_crnn(1)
    for p in teacher.parameters():
        p.requires_grad = True
    x = np.random.default_rng(2).normal(size=(2, 8, 4))
    backward(consistency_loss(student(x), teacher(x)))
    assert all(p.grad is None or not np.any(p.grad) for p in teacher.parameters())
    assert any(p.grad is not None and np.any(p.grad) for p in student.parameters())


def ict_oracle(x1, x2, lam, student, teacher):
    with no_grad():
        t1, t2 = teacher(x1), teacher(x2)
        s = student(lam * x1 + (1 - lam) * x2)
    tf = lam * t1.frame.data + (1 - lam) * t2.frame.data
    tc = lam * t1.clip.data + (1 - lam) * t2.clip.data
    sq = ((s.frame.data - tf) ** 2).sum() + ((s.clip.data - tc) ** 2).sum()
    return sq / (tf.size + tc.size)


def test_ict_term_cases():
    student, teacher = tiny_crnn(0).eval(), tiny_crnn(1).eval()
    rng = np.random.default_rng(3)
    x1, x2 = rng.normal(size=(2, 8, 4)), rng.normal(size=(2, 8, 4))
    plain = float(consistency_loss(student(x1), teacher(x1)).data)
    assert math.isclose(float(ict_term(x1, x2, 1.0, student, teacher).data), plain, rel_tol=1e-12)
    assert math.isclose(float(ict_term(x1, x1, 0.37, student, teacher).data), plain, rel_tol=1e-9)
    for lam in (0.2, 0.55, 0.9):
        got = float(ict_term(x1, x2, lam, student, teacher).data)
        assert math.isclose(got, ict_oracle(x1, x2, lam, student, teacher), rel_tol=1e-12)


def test_teacher_is_frozen_copy_and_ema():
    student = tiny_crnn(0)
    teacher = make_teacher(student)
    assert all(not p.requires_grad for p in teacher.parameters())
    before = [p.data.copy() for p in teacher.parameters()]
    for p in student.parameters():
        p.data = p.data + 1.0
    update_teacher(teacher, student, 0.9, step=100)
    for b, t in zip(before, teacher.parameters()):
        np.testing.assert_allclose(t.data, b + 0.1, atol=1e-12)


# -- warmup ----------------------------------------------------------------------

def test_warmup_examples():
    assert math.isclose(warmup_coefficient(0, 50), math.exp(-5), rel_tol=1e-12)
    assert warmup_coefficient(50, 50) == 1.0
    assert warmup_coefficient(80, 50) == 1.0
    assert warmup_coefficient(0, 0) == 1.0
    with pytest.raises(ValueError):
        warmup_coefficient(-1, 50)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 200), st.floats(0, 200), st.integers(0, 100))
def test_warmup_monotone_and_bounded(a, b, w):
    lo, hi = sorted((a, b))
    assert 0 <= warmup_coefficient(lo, w) <= warmup_coefficient(hi, w) <= 1


def test_ssl_config_validation():
    with pytest.raises(ValueError):
        SslConfig(ema_decay=1.5)
    with pytest.raises(ValueError):
        SslConfig(warmup_epochs=-1)


# -- trainer ---------------------------------------------------------------------

T_IN = 128


def feats(n, seed):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(T_IN, 64)) for _ in range(n)]


def multi_hot(n, seed):
    y = (np.random.default_rng(seed).uniform(size=(n, 3)) > 0.5).astype(float)
    return y


def stage1_data(n_unlabeled=4):
    strong_events = [EventList(f"s{i}", [("Dog", 0.5, 3.0)]) for i in range(4)]
    return StageData(VOCAB,
                     ClipSet([f"s{i}" for i in range(4)], feats(4, 1), multi_hot(4, 1), strong_events),
                     ClipSet([f"w{i}" for i in range(4)], feats(4, 2), multi_hot(4, 2)),
                     ClipSet([f"u{i}" for i in range(n_unlabeled)], feats(n_unlabeled, 3)),
                     ClipSet([f"v{i}" for i in range(3)], feats(3, 4), multi_hot(3, 4)))


def stage1_recipe():
    arch = {"kind": "at", **AtBackboneConfig(channels=[2] * 6, gru_hidden=2, n_classes=3).__dict__}
    return StageRecipe(1, arch, augment=AugmentConfig.stage1())


def test_stage1_is_deterministic():
    ssl = SslConfig(warmup_epochs=1)
    runs = [train_stage1(stage1_data(), stage1_recipe(), ssl, TrainConfig(epochs=2, batch_size=8, seed=5))
            for _ in range(2)]
    assert runs[0].history == runs[1].history
    for a, b in zip(runs[0].model.parameters(), runs[1].model.parameters()):
        assert a.data.tobytes() == b.data.tobytes()


def test_consistency_term_after_warmup():
    res = train_stage1(stage1_data(), stage1_recipe(), SslConfig(warmup_epochs=0),
                       TrainConfig(epochs=1, batch_size=8))
    assert res.history[0]["consistency"] > 0
    assert res.history[0]["ict"] > 0


def test_zero_learning_rate_step_keeps_parameters():
    trainer = StageTrainer(stage1_data(), stage1_recipe(), SslConfig(warmup_epochs=0),
                           TrainConfig(epochs=1, batch_size=8, lr=0.0))
    before = [p.data.copy() for p in trainer.model.parameters()]
    trainer.train_step(0)
    for b, p in zip(before, trainer.model.parameters()):
        np.testing.assert_array_equal(p.data, b)


def test_stage1_needs_labeled_source():
    data = stage1_data()
    empty = ClipSet([], [], np.zeros((0, 3)))
    data = StageData(VOCAB, empty, ClipSet([], [], np.zeros((0, 3))), data.third)
    with pytest.raises(ValueError, match="labeled"):
        StageTrainer(data, stage1_recipe(), SslConfig(), TrainConfig(epochs=1))


def test_recipe_source_validation():
    with pytest.raises(ValueError):
        StageRecipe(1, {}, sources=("pseudo-weak",))
    with pytest.raises(ValueError):
        StageRecipe(2, {}, sources=("weakified",))
    with pytest.raises(ValueError):
        StageRecipe(2, {}, loss="hinge")


def stage2_data(pseudo_labeled):
    rng = np.random.default_rng(0)
    strong = [EventList(f"s{i}", [("Cat", 1.0, 4.0), ("Speech", 6.0, 8.0)]) for i in range(4)]
    third_labels = multi_hot(4, 9) if pseudo_labeled else None
    return StageData(VOCAB,
                     ClipSet([f"s{i}" for i in range(4)], [rng.normal(size=(T_IN, 128)) for _ in range(4)],
                             multi_hot(4, 7), strong),
                     ClipSet([f"w{i}" for i in range(4)], [rng.normal(size=(T_IN, 128)) for _ in range(4)],
                             multi_hot(4, 8)),
                     ClipSet([f"p{i}" for i in range(4)], [rng.normal(size=(T_IN, 128)) for _ in range(4)],
                             third_labels))


def stage2_recipe():
    cfg = CrnnConfig(conv_filters=[2] * 7, gru_hidden=2, n_classes=3, fdy=True)
    return StageRecipe(2, {"kind": "fdy_crnn", **cfg.__dict__}, sources=("strong", "weak", "pseudo-weak"),
                       augment=AugmentConfig.stage2(), loss="afl", afl=AflConfig(0.625, 1.0))


def test_pseudo_weak_source_only_changes_clip_term_count():
    cfg = TrainConfig(epochs=1, batch_size=8, seed=1)
    with_pseudo = train_stage2(stage2_data(True), stage2_recipe(), SslConfig(warmup_epochs=0), cfg)
    without = train_stage2(stage2_data(False), stage2_recipe(), SslConfig(warmup_epochs=0), cfg)
    a, b = with_pseudo.history[0], without.history[0]
    assert a["n_frame_terms"] == b["n_frame_terms"] == 2
    assert a["n_clip_terms"] == 6 and b["n_clip_terms"] == 2
    assert a["frame_loss"] > 0


def test_f1_helpers():
    truth = np.array([[1, 0, 1], [0, 1, 0]])
    assert macro_f1(truth, truth) == 1.0
    assert macro_f1(np.zeros((2, 3)), np.zeros((2, 3))) == 1.0
    assert macro_f1(np.array([[1, 0, 0], [0, 0, 0]]), truth) == pytest.approx((1.0 + 0.0 + 0.0) / 3)
