import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_confusion, naive_boundary, naive_overlap, naive_wce
from rangesam.autodiff import Tensor
from rangesam.autodiff.gradcheck import check_gradients
from rangesam.kitti import CLASS_NAMES, IGNORE
from rangesam.losses import (boundary_loss, boundary_mask, class_weights_from_freq, dice_loss,
                             downsample_target, iou_loss, label_frequencies, total_loss, wce_loss)
from rangesam.metrics import ConfusionMatrix, format_table, miou, to_json


def rand_case(seed, B=2, C=4, H=5, W=6, ignore_frac=0.2, dtype=np.float64):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(B, C, H, W)).astype(dtype)
    target = rng.integers(0, C, size=(B, H, W))
    target[rng.random((B, H, W)) < ignore_frac] = IGNORE
    return logits, target


def confident(target, C, margin=30.0):
    t = np.where(target == IGNORE, 0, target)
    logits = np.zeros((t.shape[0], C) + t.shape[1:])
    np.put_along_axis(logits, t[:, None], margin, axis=1)
    return logits


# -- weighted CE ------------------------------------------------------------------
def test_wce_uniform_logits_is_log19():
    target = np.random.default_rng(0).integers(0, 19, size=(1, 8, 16))
    loss = wce_loss(np.zeros((1, 19, 8, 16), np.float32), target).item()
    assert abs(loss - math.log(19)) <= 1e-4


def test_wce_confident_correct_is_zero():
    _, target = rand_case(1)
    assert wce_loss(confident(target, 4), target).item() < 1e-10


def test_wce_doubling_weight_doubles_class_share():
    logits = np.array([[[[0.3, -0.2]], [[1.0, 0.5]]]])  # (1,2,1,2)
    target = np.array([[[0, 1]]])
    lp = logits[0, :, 0] - np.log(np.exp(logits[0, :, 0]).sum(axis=0))
    base = wce_loss(logits, target, [1.0, 1.0]).item()
    dbl = wce_loss(logits, target, [2.0, 1.0]).item()
    assert base == pytest.approx(-(lp[0, 0] + lp[1, 1]) / 2)
    assert dbl - base == pytest.approx(-lp[0, 0] / 2)


@pytest.mark.parametrize("seed", range(4))
def test_wce_matches_oracle(seed):
    logits, target = rand_case(seed)
    w = np.random.default_rng(seed + 10).uniform(0.5, 2.0, size=4)
    assert wce_loss(logits, target, w).item() == pytest.approx(naive_wce(logits, target, w), rel=1e-12)


def test_all_ignore_gives_zero_loss_and_grad():
    target = np.full((1, 3, 4), IGNORE)
    for fn in (wce_loss, dice_loss, iou_loss, boundary_loss):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 5, 3, 4)), requires_grad=True)
        loss = fn(x, target)
        loss.backward()
        assert loss.item() == 0.0
        assert np.all(x.grad == 0)


def test_shape_and_range_errors():
    with pytest.raises(ValueError):
        wce_loss(np.zeros((1, 3, 4, 4)), np.zeros((1, 4, 5), int))
    with pytest.raises(ValueError):
        wce_loss(np.zeros((1, 3, 4, 4)), np.full((1, 4, 4), 3))
    with pytest.raises(ValueError):
        wce_loss(np.zeros((1, 3, 4, 4)), np.zeros((1, 4, 4), int), weights=[1, 1])


# -- dice / iou ---------------------------------------------------------------------
def test_dice_iou_perfect_and_disjoint():
    _, target = rand_case(2)
    good = confident(target, 4)
    assert dice_loss(good, target).item() <= 1e-6
    assert iou_loss(good, target).item() <= 1e-6
    wrong = confident(np.where(target == IGNORE, IGNORE, (target + 1) % 4), 4)
    assert dice_loss(wrong, target).item() == pytest.approx(1.0, abs=1e-6)
    assert iou_loss(wrong, target).item() == pytest.approx(1.0, abs=1e-6)


def test_dice_iou_half_probabilities_closed_form():
    target = np.array([[[0, 1], [1, 1]]])
    logits = np.zeros((1, 2, 2, 2))
    eps = 1e-6
    # class 0: I=0.5, P=2, Y=1 ; class 1: I=1.5, P=2, Y=3
    dice = [2 * 0.5 / (3 + eps), 2 * 1.5 / (5 + eps)]
    iou = [0.5 / (2.5 + eps), 1.5 / (3.5 + eps)]
    assert dice_loss(logits, target).item() == pytest.approx(1 - np.mean(dice), rel=1e-12)
    assert iou_loss(logits, target).item() == pytest.approx(1 - np.mean(iou), rel=1e-12)
    assert (dice_loss(logits, target).item(), iou_loss(logits, target).item()) == pytest.approx(
        naive_overlap(logits, target), rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_dice_iou_match_oracle(seed):
    logits, target = rand_case(seed, C=5)
    d, i = naive_overlap(logits, target)
    assert dice_loss(logits, target).item() == pytest.approx(d, rel=1e-12)
    assert iou_loss(logits, target).item() == pytest.approx(i, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dice_iou_bounded(seed):
    logits, target = rand_case(seed, C=3)
    logits *= 5
    for fn in (dice_loss, iou_loss):
        v = fn(logits, target).item()
        assert -1e-12 <= v <= 1 + 1e-6


# -- boundary ------------------------------------------------------------------------
def test_boundary_constant_target_is_zero():
    target = np.full((1, 4, 6), 2)
    assert not boundary_mask(target).any()
    assert boundary_loss(np.random.default_rng(0).normal(size=(1, 3, 4, 6)), target).item() == 0.0


def test_boundary_half_plane_marks_two_rows():
    target = np.zeros((1, 6, 5), int)
    target[:, 3:] = 1
    edge = boundary_mask(target)
    assert edge[0, 2].all() and edge[0, 3].all()
    assert edge.sum() == 10
    logits = np.random.default_rng(1).normal(size=(1, 2, 6, 5))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    expected = -(lp[0, 0, 2].sum() + lp[0, 1, 3].sum()) / 10
    assert boundary_loss(logits, target).item() == pytest.approx(expected, rel=1e-12)


def test_boundary_ignores_ignore_neighbours():
    target = np.array([[[0, IGNORE, 0], [0, 0, 0]]])
    assert not boundary_mask(target).any()


@pytest.mark.parametrize("seed", range(3))
def test_boundary_matches_oracle(seed):
    logits, target = rand_case(seed, C=3, H=6, W=7)
    assert boundary_loss(logits, target).item() == pytest.approx(naive_boundary(logits, target), rel=1e-12)


def test_perfect_prediction_losses_small():
    _, target = rand_case(5, C=4, H=8, W=8, ignore_frac=0.1)
    logits = confident(target, 4, margin=20.0)
    for fn in (dice_loss, iou_loss, boundary_loss, wce_loss):
        assert 0 <= fn(logits, target).item() <= 1e-3


# -- total ------------------------------------------------------------------------------
def test_total_selector_is_plain_wce():
    logits, target = rand_case(6)
    total = total_loss(logits, [], target, lambdas=(1, 0, 0, 0)).item()
    assert total == wce_loss(logits, target).item()


def test_total_matches_independent_sum():
    rng = np.random.default_rng(7)
    C, H, W = 3, 8, 16
    target = rng.integers(0, C, size=(2, H, W))
    target[rng.random(target.shape) < 0.1] = IGNORE
    main = rng.normal(size=(2, C, H, W))
    aux = [rng.normal(size=(2, C, H >> s, W >> s)) for s in range(4)]
    w = rng.uniform(0.5, 2, size=C)

    def four(lg, t):
        d, i = naive_overlap(lg, t)
        return naive_wce(lg, t, w) + d + naive_boundary(lg, t) + i

    expected = four(main, target) + 0.4 * sum(four(a, target[:, ::H // a.shape[2], ::W // a.shape[3]])
                                              for a in aux)
    got, log = total_loss(main, aux, target, w, return_terms=True)
    assert abs(got.item() - expected) <= 1e-6
    assert set(log) >= {"wce", "dice", "boundary", "iou", "aux0", "aux3", "total"}


def test_total_perfect_prediction_near_zero():
    rng = np.random.default_rng(8)
    target = rng.integers(0, 3, size=(1, 8, 8))
    main = confident(target, 3)
    aux = [confident(downsample_target(target, (8 >> s, 8 >> s)), 3) for s in range(4)]
    assert total_loss(main, aux, target).item() <= 1e-3


def test_ignore_positions_do_not_affect_losses():
    logits, target = rand_case(9, ignore_frac=0.4)
    other = logits.copy()
    b, h, w = np.nonzero(target == IGNORE)
    other[b, :, h, w] += np.random.default_rng(0).normal(scale=5, size=(len(b), 4))
    for fn in (wce_loss, dice_loss, iou_loss, boundary_loss):
        assert fn(logits, target).item() == fn(other, target).item()


@pytest.mark.parametrize("fn", [wce_loss, dice_loss, iou_loss, boundary_loss])
def test_loss_gradients(fn):
    logits, target = rand_case(10, C=3, H=4, W=5)
    x = Tensor(logits, requires_grad=True)
    err = check_gradients(lambda: fn(x, target, [1.0, 2.0, 0.5]) if fn is wce_loss else fn(x, target), [x])[0]
    assert err <= 1e-4


def test_downsample_target_nearest():
    t = np.arange(16).reshape(1, 4, 4)
    np.testing.assert_array_equal(downsample_target(t, (2, 2))[0], [[0, 2], [8, 10]])
    with pytest.raises(ValueError):
        downsample_target(t, (3, 3))


# -- class weights ------------------------------------------------------------------------
def test_class_weights_uniform():
    np.testing.assert_allclose(class_weights_from_freq(np.full(19, 1 / 19)), 1.0)


def test_class_weights_sqrt_scaling():
    f = np.array([0.5, 0.005, 0.495])
    raw = 1 / np.sqrt(f + 1e-4)
    w = class_weights_from_freq(f)
    assert raw[1] / raw[0] == pytest.approx(10, rel=0.02)
    assert w[1] / w[0] == pytest.approx(raw[1] / raw[0])
    assert w.mean() == pytest.approx(1.0)


def test_class_weights_zero_frequency_finite():
    w = class_weights_from_freq([10, 0, 5])
    assert np.all(np.isfinite(w)) and np.all(w > 0)


def test_label_frequencies_skips_ignore():
    np.testing.assert_array_equal(label_frequencies([0, 1, 1, IGNORE, 2], 4), [1, 2, 1, 0])


# -- metrics ----------------------------------------------------------------------------------
def test_miou_diagonal():
    m = np.diag([5, 0, 3])
    r = miou(m)
    assert r.mean == 1.0 and np.isnan(r.per_class[1]) and not r.empty


def test_miou_two_class_third():
    r = miou(np.array([[1, 1], [1, 1]]))
    np.testing.assert_allclose(r.per_class, [1 / 3, 1 / 3])
    assert r.mean == pytest.approx(1 / 3)


def test_miou_empty_flagged():
    r = miou(np.zeros((19, 19)))
    assert r.empty and r.mean == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_miou_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    m = rng.integers(0, 20, size=(6, 6))
    perm = rng.permutation(6)
    a, b = miou(m), miou(m[np.ix_(perm, perm)])
    assert a.mean == pytest.approx(b.mean, rel=1e-12)
    np.testing.assert_allclose(a.per_class[perm], b.per_class)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_confusion_matches_oracle_and_merges(seed, parts):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 19, size=500)
    gt[rng.random(500) < 0.2] = IGNORE
    pred = rng.integers(0, 19, size=500)
    whole = ConfusionMatrix().update(gt, pred)
    np.testing.assert_array_equal(whole.m, exhaustive_confusion(gt, pred, 19))
    cuts = np.sort(rng.integers(0, 500, size=parts - 1))
    acc = ConfusionMatrix()
    for g, p in zip(np.split(gt, cuts), np.split(pred, cuts)):
        acc = acc + ConfusionMatrix().update(g, p)
    np.testing.assert_array_equal(acc.m, whole.m)


def test_confusion_rejects_bad_prediction():
    with pytest.raises(ValueError):
        ConfusionMatrix(3).update([0, 1], [0, 5])


def test_report_has_19_columns_plus_miou():
    r = miou(np.diag(np.arange(19) + 1))
    text = format_table(r)
    header = [h.strip() for h in text.splitlines()[0].split("|")]
    assert header[1:-1] == list(CLASS_NAMES) and header[-1] == "mIoU"
    assert text.splitlines()[2].split("|")[-1].strip() == "100.0"
    js = to_json(r, np.diag(np.arange(19) + 1))
    assert '"miou": 1.0' in js
