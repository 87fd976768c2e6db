import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomgs.density import (SPLIT_DIVISOR, DensityConfig, DensityReport, atom_scale_at, density_step,
                            reset_opacity, should_atomize, should_clone, should_prune, should_split, split,
                            split_threshold, sync_atom_scales, write_proliferation_log)
from atomgs.fixtures import front_camera
from atomgs.losses import l1_loss
from atomgs.rasterizer import render, render_backward
from atomgs.scene import GaussianSet, concat, inverse_sigmoid, sigmoid
from atomgs.trainer import Adam

CFG = DensityConfig(atomize_until=1000, warmup_until=1000)


def gaussians(scales, opacities, grads=None, atoms=None):
    n = len(scales)
    g = GaussianSet(np.arange(3 * n, dtype=float).reshape(n, 3), np.tile([1.0, 0, 0, 0], (n, 1)),
                    np.log(np.asarray(scales, dtype=float)), inverse_sigmoid(np.asarray(opacities, dtype=float)),
                    np.zeros((n, 1, 3)), is_atom=atoms)
    if grads is not None:
        g.grad_accum[:] = grads
        g.grad_count[:] = 1.0
    return g


def test_atom_scale_schedule():
    cfg = DensityConfig(atomize_until=800, final_proportion=0.5)
    assert atom_scale_at(0, 1.0, cfg) == 1.0
    assert atom_scale_at(800, 1.0, cfg) == pytest.approx(0.5)
    assert atom_scale_at(400, 3.0, DensityConfig(atomize_until=800, final_proportion=0.25)) == pytest.approx(1.5)
    vals = [atom_scale_at(i, 2.0, cfg) for i in range(0, 1200, 7)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert atom_scale_at(900, 2.0, cfg) == atom_scale_at(5000, 2.0, cfg) == atom_scale_at(800, 2.0, cfg)


def test_split_threshold_ramp():
    cfg = DensityConfig(warmup_until=7000, split_grad_threshold=0.002)
    assert split_threshold(3500, cfg) == pytest.approx(0.001)
    assert split_threshold(7000, cfg) == 0.002 and split_threshold(20000, cfg) == 0.002
    vals = [split_threshold(i, cfg) for i in range(0, 9000, 50)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_prune_rule():
    cfg = DensityConfig()
    small = np.full((1, 3), 1e-3)
    assert should_prune(inverse_sigmoid([0.004]), small, cfg, 1.0)[0]
    assert not should_prune(inverse_sigmoid([0.9]), small, cfg, 1.0)[0]
    assert should_prune(inverse_sigmoid([0.4]), small, DensityConfig(prune_opacity_threshold=0.5), 1.0)[0]
    big = np.array([[0.2, 0.01, 0.01]])
    assert should_prune(inverse_sigmoid([0.9]), big, cfg, 1.0)[0]
    assert not should_prune(inverse_sigmoid([0.9]), big, cfg, 1.0, check_size=False)[0]


def test_clone_rule():
    cfg = DensityConfig(clone_grad_threshold=0.002)
    assert should_clone([0.003], cfg)[0] and not should_clone([0.0], cfg)[0]
    g = density_step(gaussians([[50.0, 50, 50]], [0.9], [0.003]), 5000, 0.01, cfg, 1e6, np.random.default_rng(0))
    assert g.report.cloned == 1  # size plays no part


def test_split_rule():
    cfg = DensityConfig(split_grad_threshold=0.002, warmup_until=7000)
    s = 0.1
    assert should_split([0.0015], [[0.3, 0.05, 0.05]], 3500, s, cfg)[0]
    assert not should_split([1.0], [[0.1, 0.1, 0.05]], 3500, s, cfg)[0]
    assert not should_split([0.0019], [[0.3, 0.3, 0.3]], 7000, s, cfg)[0]


def test_atomize_rule():
    s = 0.1
    assert should_atomize([[0.05, 0.2, 0.3]], 10, s, CFG)[0]
    assert not should_atomize([[0.11, 0.2, 0.2]], 10, s, CFG)[0]
    assert not should_atomize([[0.05, 0.2, 0.3]], 1000, s, CFG)[0]


def test_split_children(rng):
    parent = gaussians([[0.4, 0.2, 0.1]], [0.7])
    kids = split(parent, [0], rng)
    assert kids.count == 2
    np.testing.assert_allclose(kids.scales, np.tile([0.4, 0.2, 0.1], (2, 1)) / SPLIT_DIVISOR)
    np.testing.assert_array_equal(kids.opacities_raw, parent.opacities_raw[[0, 0]])


def test_split_samples_parent_density():
    sigma = 0.3
    parent = gaussians([[sigma] * 3], [0.7])
    kids = split(parent.select(np.zeros(5000, int)), np.arange(5000), np.random.default_rng(7))
    mean = kids.positions.mean(axis=0)
    assert np.all(np.abs(mean - parent.positions[0]) < 3 * sigma / 100)
    np.testing.assert_allclose(kids.positions.std(axis=0), sigma, rtol=0.03)


def six_gaussian_fixture():
    s = 0.1
    scales = [[0.3, 0.3, 0.3],     # pruned: transparent
              [s, s, s],           # cloned: an atom with a large gradient (atoms never split)
              [0.3, 0.2, 0.2],     # split: gradient above the ramped split bar but below the clone bar
              [0.05, 0.3, 0.3],    # atomized
              [0.3, 0.3, 0.2],     # bystanders
              [0.4, 0.2, 0.3]]
    return gaussians(scales, [0.001, 0.9, 0.9, 0.9, 0.9, 0.9], [0.0, 0.003, 0.0015, 0.0, 0.0, 0.0],
                     atoms=[False, True, False, False, False, False]), s


def test_one_of_each_rule():
    scene, s = six_gaussian_fixture()
    cfg = DensityConfig(atomize_until=7000, warmup_until=7000)
    res = density_step(scene, 3500, s, cfg, scene_radius=10.0, rng=np.random.default_rng(0))
    r = res.report
    assert (r.pruned, r.cloned, r.split, r.atomized) == (1, 1, 1, 1)
    assert res.scene.count == 6 - 1 + 1 + 1
    assert res.scene.is_atom.sum() == 3  # the old atom, its clone, the new atom
    np.testing.assert_array_equal(res.origin, [1, 3, 4, 5, 1, 2, 2])
    np.testing.assert_array_equal(res.fresh, [False] * 4 + [True] * 3)
    assert not res.scene.grad_accum.any() and not res.scene.grad_count.any()


def test_quiet_population_only_atomizes():
    scene = gaussians([[0.3] * 3, [0.05, 0.4, 0.4]], [0.9, 0.9], [0.0, 0.0])
    r = density_step(scene, 10, 0.1, CFG, 10.0, np.random.default_rng(0)).report
    assert (r.pruned, r.cloned, r.split, r.atomized) == (0, 0, 0, 1)


def random_population(seed, n):
    r = np.random.default_rng(seed)
    g = gaussians(r.uniform(0.02, 0.4, (n, 3)), r.uniform(0.001, 0.99, n), r.uniform(0, 0.004, n),
                  atoms=r.uniform(size=n) < 0.2)
    return g


@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 2500))
def test_step_invariants(seed, n, it):
    scene = random_population(seed, n)
    s = 0.1
    sync_atom_scales(scene, s)
    res = density_step(scene, it, s, CFG, 10.0, np.random.default_rng(seed))
    r = res.report
    assert res.scene.count == n - r.pruned + r.cloned + r.split
    survivors = res.scene.select(np.nonzero(~res.fresh)[0])
    if it < CFG.atomize_until:
        assert np.all(survivors.is_atom | (survivors.scales.min(axis=1) > s))
    kids = res.scene.select(np.nonzero(res.fresh)[0])
    assert not kids.grad_accum.any()
    split_parents = res.origin[res.fresh][r.cloned:]  # clones come first, then the split children
    assert not scene.is_atom[split_parents].any()


def test_infinite_thresholds_leave_scene_unchanged():
    scene = random_population(3, 25)
    scene.is_atom[:] = False
    before = scene.copy()
    cfg = DensityConfig(clone_grad_threshold=np.inf, split_grad_threshold=np.inf, prune_opacity_threshold=0.0,
                        scale_cap=np.inf, atomize_until=1, warmup_until=1)
    res = density_step(scene, 5000, 0.1, cfg, 10.0, np.random.default_rng(0))
    for k, v in before.params().items():
        np.testing.assert_array_equal(res.scene.params()[k], v)
    np.testing.assert_array_equal(res.scene.is_atom, before.is_atom)


def test_sync_moves_only_atoms():
    scene = gaussians([[0.2] * 3, [0.3] * 3], [0.5, 0.5], atoms=[True, False])
    sync_atom_scales(scene, 0.07)
    np.testing.assert_allclose(scene.scales, [[0.07] * 3, [0.3] * 3])


def test_reset_opacity_clamps():
    scene = gaussians([[0.1] * 3] * 2, [0.9, 0.005])
    reset_opacity(scene)
    np.testing.assert_allclose(sigmoid(scene.opacities_raw), [0.01, 0.005])


def test_reset_then_prune_removes_unneeded_gaussians():
    """A Gaussian the target does not contain fades after a reset and is removed by the next prune."""
    cam = front_camera(24, 24)
    wanted = GaussianSet([[-0.6, 0, 4.0]], [[1, 0, 0, 0]], np.log([[0.4] * 3]), [3.0], [[[1.0, 0.5, 0.2]]])
    extra = GaussianSet([[0.6, 0, 4.0]], [[1, 0, 0, 0]], np.log([[0.4] * 3]), [3.0], [[[0.1, 1.0, 1.0]]])
    target = render(wanted, cam).rgb
    scene = concat(wanted, extra)
    reset_opacity(scene)
    opt = Adam({"opacities_raw": scene.opacities_raw})
    for _ in range(150):
        out = render(scene, cam)
        _, g = l1_loss(out.rgb, target)
        grads = render_backward(out, g)
        opt.step({"opacities_raw": scene.opacities_raw}, {"opacities_raw": grads.opacities_raw},
                 {"opacities_raw": 0.05})
    assert sigmoid(scene.opacities_raw[0]) > 0.5 and sigmoid(scene.opacities_raw[1]) < 0.005
    res = density_step(scene, 100, 1e-3, DensityConfig(), 10.0, np.random.default_rng(0))
    assert res.report.pruned == 1 and res.scene.count == 1
    np.testing.assert_array_equal(res.scene.positions, wanted.positions)


def test_proliferation_log(tmp_path):
    path = tmp_path / "p.csv"
    write_proliferation_log(path, [DensityReport(100, 10, 1, 2, 3, 4), DensityReport(200, 14)])
    rows = list(csv.DictReader(open(path)))
    assert rows[0] == {"iteration": "100", "count": "10", "pruned": "1", "cloned": "2", "split": "3",
                       "atomized": "4"}
    assert rows[1]["count"] == "14"


def test_config_validation():
    for bad in ({"clone_grad_threshold": 0}, {"atomize_until": 0}, {"final_proportion": 0.0},
                {"final_proportion": 1.5}, {"prune_opacity_threshold": -1}):
        with pytest.raises(ValueError):
            DensityConfig(**bad)
