import logging

import numpy as np
import pytest

from meshforge.errors import NumericError
from meshforge.gradcheck import check_gradient
from meshforge.losses_opt import (
    AdamState,
    LossLog,
    LossWeights,
    adam_step,
    depth_loss,
    photometric_loss,
    read_loss_csv,
    silhouette_loss,
    total_loss,
)


def test_silhouette_examples():
    S = np.ones((4, 5))
    assert silhouette_loss(S, S)[0] == 0.0
    val, g = silhouette_loss(S, np.zeros((4, 5)))
    assert val == 1.0
    np.testing.assert_allclose(g, -2.0 / 20)


def test_silhouette_shape_mismatch():
    with pytest.raises(ValueError):
        silhouette_loss(np.ones((2, 2)), np.ones((2, 3)))


def test_depth_examples():
    D = np.zeros((3, 3))
    valid = np.zeros((3, 3))
    D[1, 1], valid[1, 1] = 2.0, 1.0
    Dh = np.ones((3, 3))
    val, g = depth_loss(D, valid, Dh, np.ones((3, 3)))
    assert val == 1.0 and g[1, 1] == -1.0 and np.count_nonzero(g) == 1
    assert depth_loss(D, valid, D, np.ones((3, 3)))[0] == 0.0
    # empty valid & covered set
    assert depth_loss(D, valid, Dh, np.zeros((3, 3))) == (0.0, pytest.approx(np.zeros((3, 3))))


def test_depth_l2_mode():
    D, Dh = np.array([[1.0, 3.0]]), np.array([[2.0, 1.0]])
    val, g = depth_loss(D, np.ones((1, 2)), Dh, np.ones((1, 2)), kind="L2")
    assert val == 2.5
    np.testing.assert_allclose(g, [[1.0, -2.0]])


def test_photometric_examples(caplog):
    I = np.zeros((1, 2, 3))
    Ih = I.copy()
    Ih[0, 0, 0], Ih[0, 1, 0] = 0.5, -0.5
    val, g = photometric_loss(I, Ih, np.ones((1, 2)))
    assert val == 0.5
    assert np.all(np.abs(g[g != 0]) == 0.5)
    assert photometric_loss(I, I, np.ones((1, 2)))[0] == 0.0
    with caplog.at_level(logging.WARNING):
        assert photometric_loss(I, Ih, np.zeros((1, 2)))[0] == 0.0
    assert "empty region" in caplog.text


def test_losses_match_finite_differences():
    rng = np.random.default_rng(0)
    S, Sh = rng.random((6, 7)), rng.random((6, 7))
    D, Dh = rng.random((6, 7)) + 1, rng.random((6, 7)) + 1
    valid, cov = rng.random((6, 7)) > 0.3, rng.random((6, 7)) > 0.2
    I, Ih = rng.random((6, 7, 3)), rng.random((6, 7, 3))
    region = rng.random((6, 7)) > 0.4
    cases = [
        (lambda x: silhouette_loss(S, x.reshape(6, 7))[0], silhouette_loss(S, Sh)[1], Sh),
        (lambda x: silhouette_loss(S, x.reshape(6, 7), "L1")[0], silhouette_loss(S, Sh, "L1")[1], Sh),
        (lambda x: depth_loss(D, valid, x.reshape(6, 7), cov)[0], depth_loss(D, valid, Dh, cov)[1], Dh),
        (lambda x: depth_loss(D, valid, x.reshape(6, 7), cov, "L2")[0], depth_loss(D, valid, Dh, cov, "L2")[1], Dh),
        (lambda x: photometric_loss(I, x.reshape(6, 7, 3), region)[0], photometric_loss(I, Ih, region)[1], Ih),
    ]
    for f, g, x in cases:
        rep = check_gradient(f, g.ravel(), x.ravel(), 1e-7)
        assert rep.max_rel_error < 1e-6, rep


def test_losses_nonnegative():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.random((2, 4, 4))
        assert silhouette_loss(a, b)[0] >= 0
        assert depth_loss(a, np.ones((4, 4)), b, np.ones((4, 4)))[0] >= 0
        assert photometric_loss(rng.random((4, 4, 3)), rng.random((4, 4, 3)), np.ones((4, 4)))[0] >= 0


def test_total_loss():
    w = LossWeights(5, 10, 30)
    assert total_loss(1, 1, 1, w) == 45
    assert total_loss(3.0, 2.0, 7.0, LossWeights(0, 0, 0)) == 0
    assert total_loss(2, 0, 0, w) == 2 * total_loss(1, 0, 0, w)


def test_weights_nonnegative():
    with pytest.raises(ValueError):
        LossWeights(-1, 0, 0)


def test_adam_zero_gradient_keeps_parameters():
    x = np.array([1.0, -2.0, 3.0])
    st = AdamState(0.1)
    for _ in range(50):
        adam_step(x, np.zeros(3), st)
    np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])


def test_adam_first_step():
    x = np.zeros(3)
    g = np.array([2.0, -0.5, 1e-3])
    adam_step(x, g, AdamState(0.01))
    # bias-corrected m/sqrt(v) = g/|g| at step 1
    np.testing.assert_allclose(x, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_quadratic_bowl():
    x = np.array([1.0, -0.7, 0.4])
    st = AdamState(1e-2)
    for step in range(2000):
        adam_step(x, 2 * x, st)
        if np.abs(x).max() < 1e-3:
            break
    assert np.abs(x).max() < 1e-3


def test_adam_nan_names_block():
    with pytest.raises(NumericError, match="texture"):
        adam_step(np.zeros(2), np.array([0.0, np.nan]), AdamState(0.1, name="texture"))
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(3), AdamState(0.1))


def test_loss_log_csv(tmp_path):
    log = LossLog(tmp_path / "l.csv")
    log.append(1, 0.5, 0.25, 0.125, 7.0)
    log.append(2, 0.1, 0.2, 0.3, 1.0 / 3.0)
    text = (tmp_path / "l.csv").read_text().splitlines()
    assert text[0] == "epoch,L_c,L_s,L_d,total"
    rows = read_loss_csv(tmp_path / "l.csv")
    assert rows[1, 4] == 1.0 / 3.0  # repr round-trips exactly
    with pytest.raises(NumericError):
        log.append(3, np.nan, 0, 0, 0)
