import math

import numpy as np
import pytest

import dampedkam.attractor as att
from dampedkam.attractor import (AttractorCloud, ScanSpec, SeedSpec, bifurcation_scan, cloud_exactness,
                                 evolve_cloud, evolve_section, graph_distance, graph_test, perturbation_test)
from dampedkam.errors import DomainError
from dampedkam.flow import example_system
from dampedkam.model import TrigPoly

SIN = TrigPoly((0.0,), (1.0,))


def _cloud(points):
    return AttractorCloud(np.asarray(points, float), 1.0, None)


def test_graph_test_examples():
    x = np.linspace(0, 2 * np.pi, 5000)
    v = graph_test(_cloud(np.c_[x, np.sin(x)]))
    # detrended spread of a curve is its curvature term, about width^2 max|P''| / 8
    width = 2 * np.pi / 128
    assert v.is_graph and v.max_vertical_spread < width ** 2 / 4
    s = np.linspace(0, 2 * np.pi, 5000)
    circle = np.c_[np.pi + np.cos(s), np.sin(s)]
    v = graph_test(_cloud(circle))
    assert not v.is_graph and v.max_vertical_spread == pytest.approx(2.0, abs=0.01)
    assert v.empty_bins > 0
    assert graph_test(_cloud([[1.0, 2.0]])).is_graph
    with pytest.raises(DomainError):
        graph_test(_cloud([[1.0, 2.0]]), bins=16)
    with pytest.raises(DomainError):
        _cloud(np.zeros((0, 2)))


def test_cloud_near_kam_torus_converges_to_it():
    sys = example_system("fig1")
    cloud = evolve_cloud(sys, SeedSpec((0, 2 * np.pi), (-0.1, 0.1), 16, 3, around=SIN), T=30.0)
    assert np.max(np.abs(cloud.points[:, 1] - np.sin(cloud.points[:, 0]))) <= 1e-3
    assert cloud.excluded == 0
    assert graph_test(cloud).is_graph
    assert abs(cloud_exactness(cloud)) < 1e-3


def test_cloud_near_pendulum_sink():
    sys = example_system("pendulum")
    cloud = evolve_cloud(sys, SeedSpec((math.pi - 0.3, math.pi + 0.3), (-0.3, 0.3), 5, 5), T=30.0)
    assert np.max(np.abs(cloud.points[:, 0] - math.pi)) <= 1e-3
    assert np.max(np.abs(cloud.points[:, 1])) <= 1e-3


def test_empty_seed_rectangle():
    with pytest.raises(DomainError):
        evolve_cloud(example_system("fig1"), SeedSpec(nx=0), T=1.0)


def test_section_finds_kam_graph_and_pendulum_saddle_loop():
    torus = evolve_section(example_system("fig1"), 30.0)
    assert np.max(np.abs(torus.points[:, 1] - np.sin(torus.points[:, 0]))) < 1e-6
    assert graph_test(torus).is_graph
    pend = evolve_section(example_system("pendulum"), 30.0)
    v = graph_test(pend)
    assert not v.is_graph and v.max_vertical_spread > 0.5


def test_section_is_deterministic():
    sys = example_system("fig2_interp", alpha=0.3)
    a = evolve_section(sys, 5.0)
    b = evolve_section(sys, 5.0)
    np.testing.assert_array_equal(a.points, b.points)


def test_seeding_density_does_not_flip_clear_verdicts():
    sys = example_system("fig1")
    coarse = evolve_cloud(sys, SeedSpec((0, 2 * np.pi), (-0.2, 0.2), 32, 3, around=SIN), T=30.0)
    fine = evolve_cloud(sys, SeedSpec((0, 2 * np.pi), (-0.2, 0.2), 64, 6, around=SIN), T=30.0)
    vc, vf = graph_test(coarse), graph_test(fine)
    assert vc.is_graph == vf.is_graph
    assert vf.max_vertical_spread <= max(2 * vc.max_vertical_spread, 1e-6)


@pytest.mark.parametrize("graph_above", [True, False])
def test_bisection_logic(monkeypatch, graph_above):
    threshold = 0.3141

    def fake(sys, scan, T):
        is_graph = (sys > threshold) == graph_above
        return att.GraphVerdict(is_graph, 0.0 if is_graph else 1.0, 128, 0, np.zeros(128))

    monkeypatch.setattr(att, "attractor_verdict", fake)
    res = bifurcation_scan(lambda a: a, (0.0, 1.0), ScanSpec(depth=10))
    lo, hi = res.bracket
    assert hi - lo <= 2.0 ** -10 and lo <= threshold <= hi
    assert res.verdict_low is (not graph_above) and res.verdict_high is graph_above


def test_constant_family_has_no_bifurcation():
    res = bifurcation_scan(lambda a: example_system("fig1"), (0.0, 1.0), ScanSpec(coarse=3))
    assert res.alpha_star is None and res.message == "no bifurcation in range"
    assert res.verdict_low and res.verdict_high


def test_unperturbed_attractor_sits_on_the_torus():
    sys = example_system("fig1")
    rep = perturbation_test(sys, TrigPoly((0.0, 0.1)), [0.0], SIN, T=30.0,
                            seeds=SeedSpec((0, 2 * np.pi), (-0.1, 0.1), 64, 3, around=SIN))[0]
    assert rep.is_graph and abs(rep.exactness) < 1e-3
    # every cloud point lies on the torus: the distance is half the largest sampling gap plus the graph resolution
    cloud = evolve_cloud(sys, SeedSpec((0, 2 * np.pi), (-0.1, 0.1), 64, 3, around=SIN), T=30.0)
    xs = np.sort(np.mod(cloud.points[:, 0], 2 * np.pi))
    gap = np.max(np.diff(np.append(xs, xs[0] + 2 * np.pi)))
    assert rep.distance <= 0.5 * gap * math.sqrt(2) + 1e-3


def test_graph_distance_wraps_around():
    x = np.linspace(0, 2 * np.pi, 1000, endpoint=False) + 2 * np.pi  # lifted by one period
    d = graph_distance(_cloud(np.c_[x, np.sin(x)]), SIN)
    assert d < 1e-2
