import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.integrate import quad

from sinf.autodiff import Tensor, gradient_check
from sinf.geometry import AABB, iou3d
from sinf.losses import LossError, kl_loss, layout_loss, match_slots, total_loss
from sinf.model import LayoutSlots


def slots_from(centers, scales, logits):
    return LayoutSlots(Tensor(np.asarray(centers, float)), Tensor(np.log(np.asarray(scales, float))),
                       Tensor(np.asarray(logits, float)))


def random_slots(rng, m=12):
    return slots_from(rng.uniform(-0.5, 0.5, (m, 3)), rng.uniform(0.05, 0.3, (m, 3)), rng.normal(size=m))


def random_boxes(rng, n):
    lo = rng.uniform(-0.5, 0.3, (n, 3))
    return [AABB(a, a + rng.uniform(0.05, 0.3, 3)) for a in lo]


# -- KL --------------------------------------------------------------------------

def test_kl_zero_at_standard_normal():
    assert float(kl_loss(np.zeros(5), np.zeros(5)).data) == 0.0


def test_kl_unit_mean():
    assert float(kl_loss(np.array([1.0]), np.array([0.0])).data) == 0.5


def kl_quadrature(mu, logvar):
    sd = math.exp(0.5 * logvar)

    def integrand(x):
        logq = -0.5 * ((x - mu) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)
        logp = -0.5 * x * x - 0.5 * math.log(2 * math.pi)
        return math.exp(logq) * (logq - logp)
    return quad(integrand, mu - 40 * sd, mu + 40 * sd, limit=200, epsabs=1e-12)[0]


def test_kl_matches_quadrature():
    rng = np.random.default_rng(0)
    mean, logvar = rng.normal(size=4), rng.uniform(-1.5, 1.0, 4)
    expect = sum(kl_quadrature(m, lv) for m, lv in zip(mean, logvar))
    assert abs(float(kl_loss(mean, logvar).data) - expect) < 1e-4


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, 4, elements=st.floats(-5, 5)), hnp.arrays(np.float64, 4, elements=st.floats(-5, 5)))
def test_kl_nonnegative(mean, logvar):
    val = float(kl_loss(mean, logvar).data)
    assert val >= 0
    if val == 0:
        assert np.allclose(mean, 0, atol=1e-7) and np.allclose(logvar, 0, atol=1e-3)


def test_kl_shape_mismatch():
    with pytest.raises(LossError):
        kl_loss(np.zeros(3), np.zeros(4))


# -- matching --------------------------------------------------------------------

def test_single_object_goes_to_nearest_slot():
    slots = slots_from([[0, 0, 0], [0.3, 0, 0], [-0.3, 0, 0]], np.full((3, 3), 0.1), np.zeros(3))
    box = AABB([0.2, -0.1, -0.1], [0.35, 0.1, 0.1])
    assert match_slots(slots, [box]) == [(1, 0)]


def test_matching_permutation_invariant():
    rng = np.random.default_rng(1)
    slots, boxes = random_slots(rng), random_boxes(rng, 5)
    base = {(s, tuple(boxes[g].lo)) for s, g in match_slots(slots, boxes)}
    perm = rng.permutation(5)
    shuffled = [boxes[i] for i in perm]
    again = {(s, tuple(shuffled[g].lo)) for s, g in match_slots(slots, shuffled)}
    assert base == again


def brute_match(centers, slot_centers):
    best, arg = np.inf, None
    cost = np.linalg.norm(centers[:, None] - slot_centers[None], axis=2)
    for perm in itertools.permutations(range(len(slot_centers)), len(centers)):
        c = sum(cost[g, s] for g, s in enumerate(perm))
        if c < best - 1e-12:
            best, arg = c, perm
    return [(s, g) for g, s in enumerate(arg)]


def test_matching_matches_exhaustive_search():
    rng = np.random.default_rng(2)
    for _ in range(3):
        slots, boxes = random_slots(rng), random_boxes(rng, 5)
        centers = np.array([b.center for b in boxes])
        assert match_slots(slots, boxes) == brute_match(centers, slots.center.data)


def test_matching_tie_break_lowest_indices():
    slots = slots_from(np.zeros((4, 3)), np.full((4, 3), 0.1), np.zeros(4))
    boxes = [AABB([-0.1] * 3, [0.1] * 3)] * 3
    assert match_slots(slots, boxes) == [(0, 0), (1, 1), (2, 2)]


def test_matching_capacity_and_empty():
    rng = np.random.default_rng(3)
    with pytest.raises(LossError, match="slots"):
        match_slots(random_slots(rng, 2), random_boxes(rng, 3))
    with pytest.raises(LossError):
        match_slots(random_slots(rng, 2), [])


# -- layout loss ------------------------------------------------------------------

def test_layout_loss_perfect_slots():
    rng = np.random.default_rng(4)
    boxes = random_boxes(rng, 3)
    centers = [b.center for b in boxes] + [[0, 0, 0]]
    scales = [b.extent / 2 for b in boxes] + [[0.1] * 3]
    slots = slots_from(centers, scales, [30, 30, 30, -30])
    assert float(layout_loss(slots, boxes, match_slots(slots, boxes)).data) < 1e-6


def test_layout_loss_disjoint_iou_term_is_one():
    slots = slots_from([[0.4, 0.4, 0.4], [0.3, 0.4, 0.4]], np.full((2, 3), 0.02), [-30.0, 30.0])
    boxes = [AABB([-0.5] * 3, [-0.3] * 3)]
    val = float(layout_loss(slots, boxes, match_slots(slots, boxes)).data)
    assert abs(val - 1.0) < 1e-12


def test_layout_loss_matches_per_pair_sum():
    rng = np.random.default_rng(5)
    slots, boxes = random_slots(rng), random_boxes(rng, 4)
    matching = match_slots(slots, boxes)
    lo, hi = slots.boxes()
    iou = sum(1 - iou3d(AABB(lo[s], hi[s]), boxes[g]) for s, g in matching) / len(matching)
    matched = {s for s, _ in matching}
    bce = 0.0
    for k, x in enumerate(slots.presence.data):
        p = 1 / (1 + math.exp(-x))
        bce -= math.log(p) if k in matched else math.log(1 - p)
    expect = iou + bce / slots.M
    assert abs(float(layout_loss(slots, boxes, matching).data) - expect) < 1e-12


def test_layout_loss_gradient():
    rng = np.random.default_rng(6)
    slots, boxes = random_slots(rng), random_boxes(rng, 4)
    matching = match_slots(slots, boxes)
    for s, g in matching:  # overlapping boxes give a nonzero IoU gradient
        slots.center.data[s] = boxes[g].center + 0.02
    c0 = slots.center.data.copy()

    def f(c):
        return layout_loss(LayoutSlots(c, slots.log_scale, slots.presence), boxes, matching)
    assert gradient_check(f, c0, eps=1e-7) < 1e-5


# -- total ---------------------------------------------------------------------------

def test_total_loss_zero():
    assert float(total_loss(Tensor(0.0), Tensor(0.0), Tensor(0.0)).data) == 0.0


def test_total_loss_default_alpha():
    assert float(total_loss(Tensor(1e4), Tensor(0.0), Tensor(0.0)).data) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 10), st.floats(0, 10), st.floats(1e-6, 1))
def test_total_loss_linear_form(kl, rd, lo, alpha):
    got = float(total_loss(Tensor(kl), Tensor(rd), Tensor(lo), alpha).data)
    assert abs(got - (alpha * kl + rd + lo)) <= 1e-12 * max(1.0, abs(got))


def test_total_loss_names_non_finite_component():
    with pytest.raises(LossError, match="render"):
        total_loss(Tensor(0.0), Tensor(np.nan), Tensor(0.0))
    with pytest.raises(LossError, match="layout"):
        total_loss(Tensor(0.0), Tensor(0.0), Tensor(np.inf))
