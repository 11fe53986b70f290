import math
from dataclasses import replace

import numpy as np
import pytest

from shapegrowth.errors import DegenerateGeometry, IntervalTooShort, TopologyError
from shapegrowth.geometry import (LATERAL_ANGLES, Centerline, analyze_mesh, build_sections,
                                  build_splines, clip_segment, curvature_lines, extract_centerline,
                                  growth_rate, lateral_splines, local_features, max_diameter,
                                  plane_section)
from shapegrowth.mesh import RigidTransform, SurfaceMesh
from shapegrowth.phantom import CohortSpec, PhantomParams, generate_phantom, sample_cohort

from conftest import random_rotation, unit_cube


@pytest.fixture(scope="module")
def cyl(cylinder):
    mesh, gt = cylinder
    return mesh, gt, analyze_mesh(mesh)


@pytest.fixture(scope="module")
def tor(torus):
    mesh, gt = torus
    return mesh, gt, analyze_mesh(mesh)


def test_cylinder_centerline_on_axis(cyl):
    _, gt, a = cyl
    cl = a.centerline
    # the sweep path is the x axis to ~1e-13 mm
    assert np.abs(cl.points[:, 1:]).max() < 0.05
    assert cl.radii == pytest.approx(10.0, abs=0.1)
    np.testing.assert_allclose(np.linalg.norm(cl.tangents, axis=1), 1.0, atol=1e-9)
    assert np.all(np.diff(cl.arclength) > 0)


def test_torus_centerline_on_arc(tor):
    _, _, a = tor
    # arc of radius 30 about (0, 30, 0) in the z = 0 plane
    p = a.centerline.points
    r = np.linalg.norm(p[:, :2] - np.array([0.0, 30.0]), axis=1)
    assert np.abs(r - 30.0).max() < 0.15
    assert np.abs(p[:, 2]).max() < 0.15


def test_closed_surface_rejected():
    with pytest.raises(TopologyError):
        extract_centerline(unit_cube())


def test_cylinder_features(cyl):
    _, _, a = cyl
    f = a.features
    assert f.DCR == pytest.approx(0.2, rel=0.02)
    assert f.EILR == pytest.approx(1.0, rel=0.01)
    assert f.T == pytest.approx(1.0, rel=0.02)
    assert f.D == pytest.approx(20.0, abs=0.2)
    assert f.T >= 1.0 - 1e-6


def test_torus_features(tor):
    _, _, a = tor
    assert a.features.EILR == pytest.approx(2.0, rel=0.02)
    assert a.features.T == pytest.approx(math.pi / (2 * math.sqrt(2)), rel=0.02)


def test_splines_on_sections(tor):
    mesh, _, a = tor
    sections = build_sections(mesh, a.centerline)
    assert len(sections) == 100
    splines = a.splines
    for curve in splines.ordered():
        assert curve.shape == (100, 3)
        off = [abs(np.dot(curve[l] - s.origin, s.normal)) for l, s in enumerate(sections)]
        assert max(off) < 1e-6


def test_cylinder_splines_straight(cyl):
    _, _, a = cyl
    for curve in a.splines.ordered():
        r = np.linalg.norm(curve[:, 1:], axis=1)
        assert r == pytest.approx(10.0, abs=0.1)
        # parallel to the axis: the transverse position does not drift
        assert np.ptp(curve[:, 1:], axis=0).max() < 0.1


def test_lateral_angles(tor):
    mesh, _, a = tor
    sections = build_sections(mesh, a.centerline)
    icl, ecl = curvature_lines(sections, a.centerline)
    s = lateral_splines(sections, a.centerline, ecl, icl)

    def angle(l, p):
        sec = sections[l]
        e = ecl[l] - sec.origin
        e -= np.dot(e, sec.normal) * sec.normal
        f = np.cross(sec.normal, e)
        v = p - sec.origin
        return np.degrees(np.arctan2(np.dot(v, f) / np.linalg.norm(f), np.dot(v, e) / np.linalg.norm(e))) % 360

    for l in (0, 37, 99):
        got = [angle(l, s.laterals[k, l]) for k in range(len(LATERAL_ANGLES))]
        assert got == pytest.approx(list(LATERAL_ANGLES), abs=1e-6)
        # ICL sits opposite the ECL
        assert angle(l, icl[l]) == pytest.approx(180.0, abs=1e-6)


def test_splines_deterministic(tor):
    mesh, _, a = tor
    again = build_splines(mesh, a.centerline)
    assert again.as_array().tobytes() == a.splines.as_array().tobytes()


def test_section_degenerate_plane(cylinder):
    mesh, _ = cylinder
    # planes containing the axis cut the tube in two open lines
    x = np.linspace(10, 90, 5)
    pts = np.stack([x, np.zeros(5), np.zeros(5)], axis=1)
    tan = np.tile([0.0, 1.0, 0.0], (5, 1))
    bad = Centerline(pts, tan, np.full(5, 10.0), x - x[0])
    with pytest.raises(DegenerateGeometry):
        build_sections(mesh, bad, n=3)


def test_plane_section_circle(cylinder):
    mesh, _ = cylinder
    comps = plane_section(mesh, np.array([50.0, 0, 0]), np.array([1.0, 0, 0]))
    assert len(comps) == 1 and comps[0][1]
    r = np.linalg.norm(comps[0][0][:, 1:], axis=1)
    assert r == pytest.approx(10.0, abs=0.1)


def test_clip_identity(cyl):
    mesh, _, a = cyl
    out, cl = clip_segment(mesh, a.centerline, 0.0, 1.0)
    assert out.area == pytest.approx(mesh.area, rel=1e-6)
    assert cl.length == pytest.approx(a.centerline.length, rel=1e-9)


def test_clip_half_cylinder(cyl):
    mesh, _, a = cyl
    out, cl = clip_segment(mesh, a.centerline, 0.25, 0.75)
    assert cl.length == pytest.approx(50.0, abs=0.5)
    assert len(out.boundary_loops) == 2
    # the clipped tube is itself a valid input
    assert extract_centerline(out).length == pytest.approx(50.0, abs=0.5)


@pytest.mark.parametrize("a,b", [(0.5, 0.5), (0.7, 0.2), (-0.1, 0.5), (0.2, 1.2)])
def test_clip_bad_bounds(cyl, a, b):
    mesh, _, an = cyl
    with pytest.raises(ValueError):
        clip_segment(mesh, an.centerline, a, b)


def test_analyze_with_clip(tor):
    mesh, _, _ = tor
    a = analyze_mesh(mesh, clip=(0.1, 0.9))
    assert a.features.L_C == pytest.approx(0.8 * 15 * math.pi, rel=0.01)


def test_max_diameter_values(cyl):
    _, _, a = cyl
    assert max_diameter(a.centerline) == pytest.approx(20.0, abs=0.2)
    p = PhantomParams(base_radius=15.0, bulge_amplitude=10.0, bulge_width=0.15)
    assert max_diameter(extract_centerline(generate_phantom(p)[0])) == pytest.approx(50.0, abs=0.5)


def test_max_diameter_location_invariant():
    d = []
    for s0 in (0.2, 0.8):
        p = PhantomParams(base_radius=15.0, bulge_amplitude=10.0, bulge_width=0.15, bulge_center=s0)
        d.append(max_diameter(extract_centerline(generate_phantom(p)[0])))
    assert abs(d[0] - d[1]) < 0.5


def test_local_features_formulae(tor):
    _, _, a = tor
    f = local_features(a.centerline, a.splines)
    cl = a.centerline
    assert f.DCR == pytest.approx(f.D / cl.length, rel=1e-12)
    assert f.T == pytest.approx(cl.length / np.linalg.norm(cl.points[-1] - cl.points[0]), rel=1e-12)
    ecl = np.linalg.norm(np.diff(a.splines.ecl, axis=0), axis=1).sum()
    icl = np.linalg.norm(np.diff(a.splines.icl, axis=0), axis=1).sum()
    assert f.EILR == pytest.approx(ecl / icl, rel=1e-12)


def test_features_rigid_invariant(default_phantom):
    mesh, _ = default_phantom
    ref = analyze_mesh(mesh).features.as_dict()
    rng = np.random.default_rng(4)
    for _ in range(2):
        T = RigidTransform(random_rotation(rng), rng.uniform(-50, 50, 3))
        got = analyze_mesh(mesh.transformed(T)).features.as_dict()
        for k in ref:
            assert got[k] == pytest.approx(ref[k], rel=1e-3), k


def test_features_scale_invariant(default_phantom):
    mesh, _ = default_phantom
    ref = analyze_mesh(mesh).features
    k = 1.6
    got = analyze_mesh(mesh.with_vertices(mesh.vertices * k)).features
    assert got.D == pytest.approx(k * ref.D, rel=1e-3)
    assert got.L_C == pytest.approx(k * ref.L_C, rel=1e-3)
    for name in ("DCR", "EILR", "T"):
        assert getattr(got, name) == pytest.approx(getattr(ref, name), rel=1e-3), name


def test_features_match_truth_random_draws():
    # wider than the cohort ranges, helical bend included
    spec = CohortSpec(n=50, ranges={"arc_angle": (1.2, 2.6), "bulge_amplitude": (0.0, 10.0),
                                    "bulge_center": (0.3, 0.7), "base_radius": (12.0, 18.0),
                                    "out_of_plane_bend": (0.0, 0.15)})
    worst = {}
    for e in sample_cohort(spec, seed=11):
        mesh, gt = generate_phantom(e.params)
        f = analyze_mesh(mesh).features
        for name, truth in (("D", gt.D_true), ("L_C", gt.L_C_true), ("T", gt.T_true),
                            ("DCR", gt.DCR_true), ("EILR", gt.EILR_true)):
            rel = abs(getattr(f, name) - truth) / truth
            worst[name] = max(worst.get(name, 0.0), rel)
        assert f.T >= 1.0 - 1e-6
        assert f.EILR >= 1.0
    assert max(worst.values()) < 0.02, worst


def test_cohort_mean_plausibility():
    # a phantom set near the reference cohort means
    p = PhantomParams(arc_angle=2.15, arc_radius=45.0, base_radius=18.0, bulge_amplitude=6.0)
    f = analyze_mesh(generate_phantom(p)[0]).features
    assert f.DCR == pytest.approx(0.496, rel=0.05)
    assert f.EILR == pytest.approx(2.336, rel=0.2)
    assert f.T == pytest.approx(1.213, rel=0.05)


@pytest.mark.parametrize("d1,d2,dt,gr", [(50, 52, 20, 0.1), (49.4, 51.9, 18, 0.1389), (50, 49, 10, -0.1)])
def test_growth_rate(d1, d2, dt, gr):
    assert growth_rate(d1, d2, dt) == pytest.approx(gr, abs=1e-4)


def test_growth_rate_short_interval():
    with pytest.raises(IntervalTooShort):
        growth_rate(50, 52, 5)
