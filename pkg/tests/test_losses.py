import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cabkws import losses as L
from cabkws.errors import ConfigError, ShapeError

# -- brute-force oracles: every exp term materialised in explicit loops ------------


def _dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def oracle_contrastive(u, v, y, tau, paired):
    n = len(y)
    total, count = 0.0, 0
    for i in range(n):
        cand = [a for a in range(n) if paired or a != i]
        pos = [p for p in cand if y[p] == y[i]]
        if not pos:
            continue
        denom = sum(math.exp(_dot(u[i], v[a]) / tau) for a in cand)
        term = 0.0
        for p in pos:
            term += -math.log(math.exp(_dot(u[i], v[p]) / tau) / denom)
        total += term / len(pos)
        count += 1
    return total / count


def oracle_self(z, pair_of, tau):
    n = len(z)
    total = 0.0
    for i in range(n):
        denom = sum(math.exp(_dot(z[i], z[a]) / tau) for a in range(n) if a != i)
        total += -math.log(math.exp(_dot(z[i], z[pair_of[i]]) / tau) / denom)
    return total / n


def _unit(rng, n, d=8):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _labels_with_pair(rng, n):
    y = rng.integers(0, max(1, n // 2), size=n)
    y[1] = y[0]
    return y


def _random_involution(rng, n):
    perm = rng.permutation(n)
    pair = np.empty(n, dtype=int)
    for a, b in zip(perm[0::2], perm[1::2]):
        pair[a], pair[b] = b, a
    return pair


# -- oracle agreement on random batches -------------------------------------------------


def test_l_self_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.choice(np.arange(2, 17, 2)))
        z, pair, tau = _unit(rng, n), _random_involution(rng, n), float(rng.uniform(0.05, 2))
        assert abs(L.l_self(z, pair, tau) - oracle_self(z, pair, tau)) <= 1e-10


def test_l_sup_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 17))
        z, y, tau = _unit(rng, n), _labels_with_pair(rng, n), float(rng.uniform(0.05, 2))
        assert abs(L.l_sup(z, y, tau) - oracle_contrastive(z, z, y, tau, False)) <= 1e-10


@pytest.mark.parametrize("paired", [False, True])
def test_l_z_and_l_theta_match_oracle(paired):
    rng = np.random.default_rng(2 + paired)
    for _ in range(100):
        n = int(rng.integers(2, 17))
        z, theta = _unit(rng, n), _unit(rng, n)
        y = np.arange(n) if paired else _labels_with_pair(rng, n)
        tau = float(rng.uniform(0.05, 2))
        assert abs(L.l_z(z, theta, y, tau, paired) - oracle_contrastive(z, theta, y, tau, paired)) <= 1e-10
        assert abs(L.l_theta(z, theta, y, tau, paired) - oracle_contrastive(theta, z, y, tau, paired)) <= 1e-10


# -- hand cases -----------------------------------------------------------------------


def test_l_self_two_identical_vectors_is_zero():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert L.l_self(z, [1, 0], 1.0) == pytest.approx(0.0, abs=1e-15)


def test_l_self_two_orthogonal_pairs():
    e1, e2 = np.eye(2)
    z = np.array([e1, e1, e2, e2])
    # each anchor: exp(1) / (exp(1) + 2 exp(0)) -> ln(1 + 2/e)
    assert L.l_self(z, [1, 0, 3, 2], 1.0) == pytest.approx(math.log(1 + 2 / math.e), abs=1e-9)
    assert L.l_self(z, [1, 0, 3, 2], 1.0) == pytest.approx(0.551445, abs=1e-6)


def test_l_sup_orthonormal_three_samples():
    z = np.eye(3)
    assert L.l_sup(z, [0, 0, 1], 1.0) == pytest.approx(math.log(2), abs=1e-9)
    assert L.l_sup(z, [0, 0, 1], 1.0) == pytest.approx(0.693147, abs=1e-6)


def test_l_z_reduces_to_l_sup_when_anchors_equal_z():
    z = np.eye(3)
    assert L.l_z(z, z, [0, 0, 1], 1.0) == pytest.approx(math.log(2), abs=1e-9)


def test_l_sup_all_same_label_identical_vectors():
    z = np.tile([[0.6, 0.8]], (4, 1))
    # every candidate is a positive with the same logit: -log(1/3) averaged with weight 1/3 each
    assert L.l_sup(z, [0, 0, 0, 0], 1.0) == pytest.approx(math.log(3), abs=1e-12)


def test_l_sup_single_positive_identical_is_zero():
    z = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert L.l_sup(z, [0, 0], 0.1) == pytest.approx(0.0, abs=1e-12)


def test_paired_symmetric_construction_gives_equal_directions():
    rng = np.random.default_rng(5)
    z = _unit(rng, 6)
    y = np.arange(6)
    assert L.l_z(z, z, y, 0.1, paired=True) == pytest.approx(L.l_theta(z, z, y, 0.1, paired=True), abs=1e-12)
    assert L.l_dual(z, z, y, 0.1, paired=True) == pytest.approx(2 * L.l_z(z, z, y, 0.1, paired=True), abs=1e-12)


def test_empty_positive_sets_are_skipped_or_rejected():
    z = np.eye(3)
    # anchor 2 has no positive and must not contribute
    assert L.l_sup(z, [0, 0, 1], 1.0) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        L.l_sup(z, [0, 1, 2], 1.0)
    with pytest.raises(ValueError):
        L.l_sup(z[:1], [0], 1.0)
    with pytest.raises(ValueError):
        L.l_self(z[:2], [0, 1], 1.0)  # fixed points
    with pytest.raises(ValueError):
        L.l_sup(z, [0, 0, 1], 0.0)


# -- invariances ----------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_contrastive_permutation_and_scale_invariance(n, seed, c):
    rng = np.random.default_rng(seed)
    z, theta = _unit(rng, n), _unit(rng, n)
    y = _labels_with_pair(rng, n)
    tau = 0.2
    perm = rng.permutation(n)
    for f in (
        lambda z, t, y, tau: L.l_sup(z, y, tau),
        lambda z, t, y, tau: L.l_z(z, t, y, tau),
        lambda z, t, y, tau: L.l_theta(z, t, y, tau),
    ):
        base = f(z, theta, y, tau)
        assert abs(f(z[perm], theta[perm], y[perm], tau) - base) <= 1e-12
        # scaling every dot product by c and tau by c changes nothing
        assert abs(f(z * np.sqrt(c), theta * np.sqrt(c), y, tau * c) - base) <= 1e-9


def test_temperature_halving_equals_doubled_dots():
    rng = np.random.default_rng(7)
    z, theta = _unit(rng, 5), _unit(rng, 5)
    y = [0, 0, 1, 1, 2]
    assert L.l_z(z, theta, y, 0.05) == pytest.approx(L.l_z(2 * z, theta, y, 0.1), abs=1e-12)
    assert L.l_theta(z, theta, y, 0.05) == pytest.approx(L.l_theta(z, 2 * theta, y, 0.1), abs=1e-12)


# -- cross-entropy ----------------------------------------------------------------------


def test_ce_uniform_logits():
    assert L.ce_loss(np.zeros((3, 12)), [0, 5, 11]) == pytest.approx(math.log(12), abs=1e-12)
    assert L.ce_loss(np.zeros((1, 12)), [0]) == pytest.approx(2.484907, abs=1e-6)


def test_ce_confident_and_mean():
    logits = np.zeros((2, 4))
    logits[0, 1] = 1000.0
    assert L.ce_loss(logits[:1], [1]) == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 5))
    l1, l2 = L.ce_loss(a[:1], [3]), L.ce_loss(a[1:], [0])
    assert L.ce_loss(a, [3, 0]) == pytest.approx((l1 + l2) / 2, abs=1e-14)


def test_ce_label_range():
    with pytest.raises(ValueError):
        L.ce_loss(np.zeros((1, 3)), [3])
    with pytest.raises(ValueError):
        L.ce_loss(np.zeros((1, 3)), [-1])


def test_ce_grad_closed_form():
    rng = np.random.default_rng(1)
    logits = rng.normal(size=(4, 6))
    y = np.array([0, 5, 2, 2])
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    p[np.arange(4), y] -= 1
    assert np.allclose(L.ce_loss_grad(logits, y), p / 4, atol=1e-15)


# -- regression terms -----------------------------------------------------------------


def test_l_sim_values():
    e = np.random.default_rng(0).normal(size=(3, 800))
    assert L.l_sim(e, e) == 0.0
    assert L.l_sim(e, e + 0.1) == pytest.approx(0.01, abs=1e-12)
    one = np.zeros((1, 800))
    one[0, 0] = 1
    assert L.l_sim(one, np.zeros((1, 800))) == pytest.approx(1 / 800, abs=1e-15)
    with pytest.raises(ShapeError):
        L.l_sim(np.zeros((1, 800)), np.zeros((1, 799)))


def test_l_sim_grad_closed_form():
    rng = np.random.default_rng(2)
    e, ea = rng.normal(size=(1, 800)), rng.normal(size=(1, 800))
    assert np.allclose(L.l_sim_grad(e, ea), (2 / 800) * (e - ea), atol=1e-16)


def test_l_x_values():
    x = np.stack([np.zeros(40), np.full(40, 2.0)])
    assert L.mean_fbank(x) == pytest.approx(np.ones(40))
    assert L.l_x(x[None], np.zeros((1, 40))) == pytest.approx(1.0, abs=1e-14)
    frame = np.arange(40.0)
    assert np.array_equal(L.mean_fbank(frame[None]), frame)
    assert L.l_x(x[None], L.mean_fbank(x)[None]) == 0.0


def test_l_x_ignores_padded_frames():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 10, 40))
    padded = x.copy()
    padded[0, 6:] = 0.0
    rec = rng.normal(size=(2, 40))
    expected = np.mean((np.stack([x[0, :6].mean(0), x[1].mean(0)]) - rec) ** 2)
    assert L.l_x(padded, rec, [6, 10]) == pytest.approx(expected, abs=1e-14)
    with pytest.raises(ValueError):
        L.l_x(padded, rec, [0, 10])
    with pytest.raises(ShapeError):
        L.l_x(padded, rec[:, :39], [6, 10])


def test_l_ul_composition():
    assert L.l_ul(1, 2, 2, 3) == pytest.approx(1.3, abs=1e-12)
    assert L.l_ul(0, 0, 0, 0) == 0.0
    w = (0.8, 0.05, 0.05, 0.0)
    assert L.l_ul(1, 2, 2, 3, w) == L.l_ul(1, 2, 2, 100, w)
    with pytest.raises(ConfigError):
        L.l_ul(1, 1, 1, 1, (0.8, -0.05, 0.05, 0.1))
    with pytest.raises(ValueError):
        L.l_ul(float("nan"), 1, 1, 1)


def test_regression_terms_non_negative_and_zero_only_on_equality():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 40))
    b = a.copy()
    b[1, 7] += 1e-3
    assert L.l_sim(a, b) > 0 and L.l_sim(a, a) == 0


# -- gradients vs central differences --------------------------------------------------


def _numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def _rel(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))


@pytest.mark.parametrize("paired", [False, True])
def test_contrastive_gradients(paired):
    rng = np.random.default_rng(8)
    n = 6
    u, v = rng.normal(size=(n, 5)), rng.normal(size=(n, 5))
    y = np.arange(n) if paired else np.array([0, 0, 1, 1, 2, 0])
    dz, dth = L.l_z_grad(u, v, y, 0.3, paired)
    assert _rel(dz, _numeric_grad(lambda: L.l_z(u, v, y, 0.3, paired), u)) <= 1e-4
    assert _rel(dth, _numeric_grad(lambda: L.l_z(u, v, y, 0.3, paired), v)) <= 1e-4
    dz, dth = L.l_theta_grad(u, v, y, 0.3, paired)
    assert _rel(dz, _numeric_grad(lambda: L.l_theta(u, v, y, 0.3, paired), u)) <= 1e-4
    assert _rel(dth, _numeric_grad(lambda: L.l_theta(u, v, y, 0.3, paired), v)) <= 1e-4


def test_sup_and_self_gradients():
    rng = np.random.default_rng(9)
    z = rng.normal(size=(6, 4))
    y = np.array([0, 1, 0, 1, 2, 2])
    assert _rel(L.l_sup_grad(z, y, 0.5), _numeric_grad(lambda: L.l_sup(z, y, 0.5), z)) <= 1e-4
    pair = np.array([1, 0, 3, 2, 5, 4])
    assert _rel(L.l_self_grad(z, pair, 0.5), _numeric_grad(lambda: L.l_self(z, pair, 0.5), z)) <= 1e-4


def test_regression_and_ce_gradients():
    rng = np.random.default_rng(10)
    e, ea = rng.normal(size=(3, 7)), rng.normal(size=(3, 7))
    assert _rel(L.l_sim_grad(e, ea), _numeric_grad(lambda: L.l_sim(e, ea), e)) <= 1e-4
    x = rng.normal(size=(3, 5, 7))
    rec = rng.normal(size=(3, 7))
    nf = [5, 3, 4]
    assert _rel(L.l_x_grad(x, rec, nf), _numeric_grad(lambda: L.l_x(x, rec, nf), rec)) <= 1e-4
    logits = rng.normal(size=(4, 5))
    y = [1, 0, 4, 4]
    assert _rel(L.ce_loss_grad(logits, y), _numeric_grad(lambda: L.ce_loss(logits, y), logits)) <= 1e-4


def test_l2_normalize_and_backward():
    rng = np.random.default_rng(11)
    e = rng.normal(size=(4, 6))
    z = L.l2_normalize(e)
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)
    w = rng.normal(size=(4, 6))
    num = _numeric_grad(lambda: float(np.sum(L.l2_normalize(e) * w)), e)
    assert _rel(L.l2_normalize_backward(w, e), num) <= 1e-4
    assert np.array_equal(L.l2_normalize(np.zeros((1, 3))), np.zeros((1, 3)))


def test_breakdown_dict_keys():
    bd = L.LossBreakdown(l_z=1.0, l_theta=2.0, l_dual=3.0)
    assert list(bd.to_dict()) == ["l_sim", "l_x", "l_x_aug", "l_z", "l_theta", "l_dual", "l_ul", "l_ce"]
