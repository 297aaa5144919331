import numpy as np
import pytest

from lowrank_wd.linalg import singular_values
from lowrank_wd.network import (TwoLayerNet, activation_margin, activation_pattern, forward,
                                forward_masked, grad_params, kaiming_init, load_checkpoint,
                                save_checkpoint)

H = 1e-6


def small_net():
    return TwoLayerNet([[1.0, 2.0]], [[1.0], [-1.0]], [0.0, 0.0])


def central_diff(f, arr, h=H):
    """Central differences of scalar ``f()`` with respect to every entry of ``arr`` (mutated in place)."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        keep = arr[idx]
        arr[idx] = keep + h
        up = f()
        arr[idx] = keep - h
        down = f()
        arr[idx] = keep
        out[idx] = (up - down) / (2 * h)
    return out


def seeded_case(seed, m=8, n=5, min_margin=1e-3):
    rng = np.random.default_rng(seed)
    net = TwoLayerNet(rng.normal(size=(1, m)), rng.normal(size=(m, n)), rng.normal(size=m))
    while True:
        x = rng.normal(size=n)
        if activation_margin(net, x) > min_margin:
            return net, x


def test_forward_examples():
    net = small_net()
    assert forward(net, [1.0]) == 1.0
    zero_u = TwoLayerNet(np.zeros((1, 3)), np.ones((3, 2)), np.ones(3))
    assert forward(zero_u, [0.3, -2.0]) == 0.0
    dead = TwoLayerNet(np.ones((1, 2)), -np.eye(2), np.zeros(2))
    assert forward(dead, [1.0, 2.0]) == 0.0


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(small_net(), [1.0, 2.0])


def test_network_shape_validation():
    with pytest.raises(ValueError):
        TwoLayerNet(np.ones((1, 3)), np.ones((2, 2)), np.ones(2))
    with pytest.raises(ValueError):
        TwoLayerNet(np.ones((2, 2)), np.ones((2, 2)), np.ones(2))
    with pytest.raises(ValueError):
        TwoLayerNet(np.ones((1, 2)), [[np.nan, 1.0], [1.0, 1.0]], np.ones(2))


def test_sigma_form_equals_masked_form():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        net = TwoLayerNet(rng.normal(size=(1, 7)), rng.normal(size=(7, 4)), rng.normal(size=7))
        x = rng.normal(size=4)
        assert forward(net, x) == pytest.approx(forward_masked(net, x), rel=1e-14, abs=1e-14)


def test_activation_pattern_examples():
    net = TwoLayerNet([[1.0, 1.0]], [[1.0], [-1.0]], [0.0, 0.0])
    np.testing.assert_array_equal(activation_pattern(net, [0.0]), [False, False])
    np.testing.assert_array_equal(activation_pattern(net, [1.0]), [True, False])


def test_activation_margin_examples():
    net = small_net()
    assert activation_margin(net, [1.0]) == 1.0
    assert activation_margin(net, [0.0]) == 0.0


def test_pattern_stable_under_small_perturbations():
    for seed in range(10):
        net, x = seeded_case(seed)
        mu = activation_margin(net, x)
        base = activation_pattern(net, x)
        rng = np.random.default_rng(1000 + seed)
        radius = 0.9 * mu / np.linalg.norm(x)
        for _ in range(100):
            d = rng.normal(size=net.V.shape)
            d *= radius * rng.uniform() / singular_values(d)[0]
            moved = TwoLayerNet(net.U, net.V + d, net.b)
            np.testing.assert_array_equal(activation_pattern(moved, x), base)
            # margin can shrink by at most ‖ΔV‖₂‖x‖₂
            assert activation_margin(moved, x) >= mu - singular_values(d)[0] * np.linalg.norm(x) - 1e-12


def test_grad_params_hand_example():
    net = TwoLayerNet([[1.0]], [[1.0]], [0.0])
    g = grad_params(net, [2.0], 1.0)
    np.testing.assert_array_equal(g.dV, [[2.0]])
    np.testing.assert_array_equal(g.dU, [[2.0]])
    np.testing.assert_array_equal(g.db, [1.0])


def test_grad_params_zero_residual():
    net, x = seeded_case(3)
    g = grad_params(net, x, 0.0)
    assert not np.any(g.dU) and not np.any(g.dV) and not np.any(g.db)


def test_grad_params_matches_finite_differences():
    for seed in range(10):
        net, x = seeded_case(seed)
        residual = 0.7
        g = grad_params(net, x, residual)
        for name, analytic in (("U", g.dU), ("V", g.dV), ("b", g.db)):
            arr = getattr(net, name)
            fd = residual * central_diff(lambda: forward(net, x), arr)
            np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-8)


def test_single_sample_gradient_is_rank_one():
    for seed in range(20):
        net, x = seeded_case(seed, m=12, n=6)
        dv = grad_params(net, x, 1.3).dV
        sv = singular_values(dv)
        assert sv[1] / sv[0] < 1e-14


def test_kaiming_init():
    a = kaiming_init(16, 4, seed=3)
    b = kaiming_init(16, 4, seed=3)
    assert not np.any(a.b)
    for name in ("U", "V", "b"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    big = kaiming_init(1000, 100, seed=0)
    assert np.var(big.V) == pytest.approx(2 / 100, rel=0.05)
    assert np.var(big.U) == pytest.approx(2 / 1000, rel=0.15)
    with pytest.raises(ValueError):
        kaiming_init(0, 3)


def test_checkpoint_roundtrip_exact(tmp_path):
    net = kaiming_init(7, 3, seed=11)
    net.b[:] = np.random.default_rng(0).normal(size=7) * 1e-300
    path = tmp_path / "net.txt"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    for name in ("U", "V", "b"):
        assert getattr(back, name).tobytes() == getattr(net, name).tobytes()
    assert path.read_text().splitlines()[0] == "7 3"


def test_checkpoint_rejects_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2\n1 2\n1 2\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)
