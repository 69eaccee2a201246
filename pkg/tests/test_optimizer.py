import dataclasses

import numpy as np
import pytest
import scipy.linalg

from conftest import random_psd, scene_setup, viewpoint_batch
from locreg.core import invert, transform_points
from locreg.features import CorrespondenceSet, FeatureCloud, FeatureConfig, make_plane
from locreg.localizability import Category, detect
from locreg.optimizer import (
    LPICP,
    NONE,
    ROTATION,
    TRANSLATION,
    ZHANG,
    RankDeficient,
    SingularKKT,
    SolverConfig,
    assemble_constraints,
    gn_step,
    lift,
    lift_value,
    local_icp,
    register,
    solution_remap,
    solve_kkt,
)


def nullspace_oracle(H, b, D):
    """Minimize 0.5 x'Hx - b'x subject to Dx = 0 in a basis of null(D)."""
    Z = scipy.linalg.null_space(D)
    y = np.linalg.solve(Z.T @ H @ Z, Z.T @ b)
    return Z @ y


def random_orthonormal_rows(rng, k):
    Q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    return Q[:, :k].T


def map_subsample_features(kind, step=3, corner_gap=0.5):
    """Scan features that are an exact subsample of the map, seen from the viewpoint.

    Edge samples near crease endpoints are left out: there the nearest map
    edge points come from two creases and the fitted line is a blend.
    """
    scene, fmap, _ = scene_setup(kind)
    back = invert(scene.viewpoint)
    edge = fmap.edge.points[::step]
    ends = np.array([e for crease in scene.creases for e in crease])
    keep = np.linalg.norm(edge[:, None] - ends[None], axis=2).min(axis=1) > corner_gap
    return scene, fmap, FeatureCloud(transform_points(back, edge[keep]), transform_points(back, fmap.planar.points[::step]))


# -- local ICP


def floor_offset_corrs(pose, n=60, seed=0):
    rng = np.random.default_rng(seed)
    # true scan points lie on z = 0; the estimate puts them at +0.2
    truth = np.column_stack([rng.uniform(-5, 5, (n, 2)), np.zeros(n)])
    return CorrespondenceSet.from_list(
        [make_plane(p, q, [0, 0, 1], pose) for p, q in zip(truth, truth + [0.3, -0.1, 0])]
    )


def test_local_icp_plane_offset():
    pose = np.array([0, 0, 0, 0, 0, 0.2])
    corrs = floor_offset_corrs(pose)
    dt = local_icp(corrs, pose, TRANSLATION, direction=np.array([0, 0, 1.0]))
    assert dt @ [0, 0, 1] == pytest.approx(-0.2, abs=1e-6)
    # minimum-norm: nothing along the unconstrained in-plane axes
    assert np.allclose(dt[:2], 0, atol=1e-12)


def test_local_icp_yaw_only_subset():
    # vertical walls sampled at sensor height constrain only yaw
    rng = np.random.default_rng(1)
    ys = rng.uniform(-4, 4, 40)
    xs = rng.uniform(-4, 4, 40)
    truth = [([5.0, y, 0.0], [1, 0, 0]) for y in ys] + [([x, 5.0, 0.0], [0, 1, 0]) for x in xs]
    pose = np.array([0, 0, 0.05, 0, 0, 0])
    corrs = CorrespondenceSet.from_list([make_plane(p, p, n, pose) for p, n in truth])
    dr = local_icp(corrs, pose, ROTATION, direction=np.array([0, 0, 1.0]))
    assert dr[2] == pytest.approx(-0.05, abs=1e-4)
    with pytest.raises(RankDeficient):
        local_icp(corrs, pose, ROTATION, direction=np.array([1.0, 0, 0]))


def test_local_icp_fixed_point():
    pose = np.array([0.1, -0.05, 0.2, 1, 2, 0.5])
    rng = np.random.default_rng(2)
    p = rng.uniform(-5, 5, (50, 3))
    n = rng.normal(size=(50, 3))
    corrs = CorrespondenceSet.from_list([make_plane(a, transform_points(pose, a)[0], m, pose) for a, m in zip(p, n)])
    assert np.abs(local_icp(corrs, pose, TRANSLATION)).max() < 1e-9
    assert np.abs(local_icp(corrs, pose, ROTATION)).max() < 1e-9


def test_local_icp_empty_subset():
    with pytest.raises(RankDeficient):
        local_icp(CorrespondenceSet.empty(), np.zeros(6), TRANSLATION)


# -- lifting


def test_lift_examples():
    assert np.array_equal(lift([1, 0, 0], ROTATION), [1, 0, 0, 0, 0, 0])
    assert np.array_equal(lift([0, 0, 1], TRANSLATION), [0, 0, 0, 0, 0, 1])
    v, w = np.array([0.2, -0.4, 0.1]), np.array([1.0, 2.0, -3.0])
    for block in (ROTATION, TRANSLATION):
        assert lift(v, block) @ lift_value(w, block) == pytest.approx(v @ w)
    assert lift(v, ROTATION) @ lift(w, TRANSLATION) == 0
    with pytest.raises(ValueError):
        lift(v, "scale")


# -- constraint assembly


def test_assemble_all_full():
    scene, corrs, ev = viewpoint_batch("cuberoom")
    soft, D = assemble_constraints(detect(ev), corrs, scene.viewpoint)
    assert soft == [] and D.shape == (0, 6)


def test_assemble_single_none_direction():
    scene, corrs, ev = viewpoint_batch("corridor")
    r = detect(ev)
    assert r.none_dirs == [5]
    soft, D = assemble_constraints(r, corrs, scene.viewpoint)
    assert soft == []
    assert np.array_equal(D, r.basis.lifted(5)[None])
    assert np.linalg.norm(D[0]) == pytest.approx(1, abs=1e-9)


@pytest.mark.parametrize("L_u,mu", [(20.0, 5.0), (15.0, 5.0), (10.0, 2.0)])
def test_assemble_partial_weight_rule(L_u, mu):
    scene, corrs, ev = viewpoint_batch("cuberoom")
    r = detect(ev)
    cats = list(r.categories)
    cats[4] = Category.PARTIAL
    L = r.L_u.copy()
    L[4] = L_u
    soft, D = assemble_constraints(dataclasses.replace(r, categories=cats, L_u=L), corrs, scene.viewpoint)
    assert D.shape == (0, 6) and len(soft) == 1
    s = soft[0]
    assert s.mu == mu and s.direction == 4
    assert np.array_equal(s.v, r.basis.lifted(4))
    assert np.all(s.v[:3] == 0) and np.linalg.norm(s.v) == pytest.approx(1, abs=1e-9)
    # at the true pose the subset is already aligned
    assert abs(s.target) < 1e-6


# -- KKT


def test_solve_kkt_examples():
    dx, lam = solve_kkt(2 * np.eye(6), np.full(6, 2.0))
    assert np.allclose(dx, 1, atol=1e-15) and lam.shape == (0,)
    dx, lam = solve_kkt(2 * np.eye(6), 2 * np.eye(6)[0], np.eye(6)[:1])
    assert np.allclose(dx, 0, atol=1e-15)
    assert lam.shape == (1,)


def test_solve_kkt_matches_null_space_oracle():
    rng = np.random.default_rng(3)
    worst_feas = worst_err = 0.0
    for _ in range(1000):
        H = random_psd(rng, 6) + 0.1 * np.eye(6)
        b = rng.normal(size=6)
        D = random_orthonormal_rows(rng, rng.integers(1, 6))
        dx, _ = solve_kkt(H, b, D)
        worst_feas = max(worst_feas, np.abs(D @ dx).max())
        worst_err = max(worst_err, np.abs(dx - nullspace_oracle(H, b, D)).max())
    assert worst_feas < 1e-10
    assert worst_err < 1e-9


def test_solve_kkt_without_constraints_is_plain_gn():
    rng = np.random.default_rng(4)
    for _ in range(200):
        H = random_psd(rng, 6) + 0.1 * np.eye(6)
        b = rng.normal(size=6)
        assert np.abs(solve_kkt(H, b)[0] - np.linalg.solve(H, b)).max() < 1e-12 * max(1, np.abs(np.linalg.solve(H, b)).max())


def test_solve_kkt_singular():
    H = np.diag([1.0, 1, 1, 1, 1, 0])
    with pytest.raises(SingularKKT):
        solve_kkt(H, np.ones(6))
    # covering the null direction makes it solvable
    dx, _ = solve_kkt(H, np.ones(6), np.eye(6)[5:])
    assert np.allclose(dx, [1, 1, 1, 1, 1, 0])
    # gn_step falls back to the minimum-norm step
    assert np.allclose(gn_step(H, np.ones(6)), [1, 1, 1, 1, 1, 0])


def test_soft_term_alone_hits_target():
    # single quadratic pull mu (v'dx - v'dx0)^2 with no data term
    v = np.zeros(6)
    v[4] = 1.0
    dx0 = 0.37 * v
    for mu in (0.1, 2.0, 50.0):
        H = 2 * mu * np.outer(v, v)
        b = 2 * mu * np.outer(v, v) @ dx0
        D = np.delete(np.eye(6), 4, axis=0)
        dx, _ = solve_kkt(H, b, D)
        assert v @ dx == pytest.approx(0.37, abs=1e-12)


# -- remapping


def test_solution_remap_examples():
    rng = np.random.default_rng(5)
    H = random_psd(rng, 6)
    dx = rng.normal(size=6)
    assert np.allclose(solution_remap(H, dx, np.zeros(6, bool)), dx, atol=1e-12)
    assert np.allclose(solution_remap(H, dx, np.ones(6, bool)), 0, atol=1e-12)
    flags = np.zeros(6, bool)
    flags[0] = True
    _, V = np.linalg.eigh(H)
    out = solution_remap(H, dx, flags)
    assert abs(V[:, 0] @ out) < 1e-9


# -- registration


def test_register_fixed_point():
    scene, fmap, fc = map_subsample_features("cuberoom")
    res = register(fc, fmap, scene.viewpoint)
    assert res.converged and res.iterations == 1
    assert np.abs(res.x - scene.viewpoint).max() < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_register_cuberoom_recovers_perturbation(seed):
    scene, fmap, fc = scene_setup("cuberoom")
    rng = np.random.default_rng(seed)
    x0 = scene.viewpoint + np.r_[rng.choice([-1, 1], 3) * 0.05, rng.choice([-1, 1], 3) * 0.1]
    res = register(fc, fmap, x0)
    assert res.converged and res.iterations <= 30
    err = res.x - scene.viewpoint
    assert np.abs(err[:3]).max() < 1e-3 and np.abs(err[3:]).max() < 1e-3


def test_register_corridor_holds_axis():
    scene, fmap, fc = scene_setup("corridor")
    x0 = scene.viewpoint + np.array([0, 0, 0, 0.3, 0, 0])
    res = register(fc, fmap, x0)
    assert res.k_n == 1 and res.constraint_residual < 1e-10
    axis = np.array([1.0, 0, 0])
    assert abs((res.x - x0)[3:] @ axis) < 1e-9
    assert np.abs((res.x - scene.viewpoint)[4:]).max() < 1e-2
    assert np.abs((res.x - scene.viewpoint)[:3]).max() < 1e-2


def test_register_all_full_matches_plain_gn():
    scene, fmap, fc = scene_setup("cuberoom")
    x0 = scene.viewpoint + np.array([0.02, -0.03, 0.04, 0.1, -0.08, 0.05])
    a = register(fc, fmap, x0, LPICP)
    b = register(fc, fmap, x0, NONE)
    assert a.k_n == 0 and a.k_p == 0
    assert a.iterations == b.iterations
    assert np.abs(a.x - b.x).max() < 1e-12


@pytest.mark.parametrize("kind", ["cuberoom", "corridor", "plane", "tunnel"])
def test_register_cost_does_not_increase(kind):
    scene, fmap, fc = scene_setup(kind)
    x0 = scene.viewpoint + np.array([0.01, -0.01, 0.02, 0.05, 0.05, -0.04])
    res = register(fc, fmap, x0)
    costs = [r.cost for r in res.trace]
    assert all(c1 <= c0 + 1e-9 for c0, c1 in zip(costs, costs[1:]))


def test_register_deterministic():
    scene, fmap, fc = scene_setup("corridor")
    x0 = scene.viewpoint + np.array([0.01, 0.02, -0.01, 0.2, 0.05, 0.03])
    a, b = register(fc, fmap, x0), register(fc, fmap, x0)
    assert a.x.tobytes() == b.x.tobytes()
    assert [r.cost for r in a.trace] == [r.cost for r in b.trace]


def test_register_zhang_freezes_flagged_directions():
    scene, fmap, fc = scene_setup("corridor")
    x0 = scene.viewpoint + np.array([0, 0, 0, 0.3, 0.05, 0])
    res = register(fc, fmap, x0, ZHANG)
    assert res.zhang_flags is not None and res.zhang_flags.sum() == 1
    assert abs(res.x[3] - x0[3]) < 1e-6
    assert abs(res.x[4] - scene.viewpoint[4]) < 1e-2


def test_register_errors():
    scene, fmap, fc = scene_setup("cuberoom")
    with pytest.raises(ValueError):
        register(fc, fmap, scene.viewpoint, "magic")
    far = scene.viewpoint + np.array([0, 0, 0, 500, 0, 0])
    res = register(fc, fmap, far)
    assert res.error == "NoCorrespondences" and not res.converged
    assert np.array_equal(res.x, far)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(mu_low=6.0)
    with pytest.raises(ValueError):
        SolverConfig(step_tol_rot=0.0)


def test_feature_config_passes_through():
    scene, fmap, fc = scene_setup("cuberoom")
    tight = FeatureConfig(max_corr_dist=1e-9)
    res = register(fc, fmap, scene.viewpoint + np.array([0, 0, 0, 0.5, 0, 0]), feature_cfg=tight)
    assert res.error == "NoCorrespondences"
