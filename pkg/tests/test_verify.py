"""Manufactured solutions, operator-property checks, and spectral estimates."""

import numpy as np
import pytest

from exstokes.geometry import GAMMA, MeshHierarchy, build_cube_annulus
from exstokes import quadrature as qd, verify as vf


@pytest.fixture(scope="module")
def hier():
    return MeshHierarchy(build_cube_annulus(level=0), 3)


@pytest.fixture(scope="module")
def exact():
    return vf.stokeslet_manufactured([0.1, -0.05, 0.13], [1.0, 0.5, -0.25])


def test_fd_oracle_validates_stokeslet(exact):
    rep = vf.finite_difference_residuals(exact, seed=0)
    assert rep["momentum_max"] < 1e-5
    assert rep["divergence_max"] < 1e-7


def test_source_near_boundary_rejected():
    with pytest.raises(ValueError):
        vf.StokesletSolution([0.48, 0.0, 0.0], [1.0, 0.0, 0.0])


def test_velocity_gradient_matches_finite_differences(exact):
    # independent route: central differences of the closed-form velocity
    pts = vf._fd_sample_points(seed=3, n=5)
    h = 1e-5
    g = exact.velocity_gradient(pts)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (exact.velocity(pts + e) - exact.velocity(pts - e)) / (2 * h)
        assert np.abs(g[:, :, k] - fd).max() < 1e-6


def test_pressure_far_field_decay(exact):
    # p ~ 1/r^2 up to an O(x0/r) offset correction
    x = np.array([[30.0, 9.0, 6.0]])
    ratio = exact.pressure(x)[0] / exact.pressure(2 * x)[0]
    assert abs(ratio - 4.0) < 0.1


def test_traction_force_balance(hier, exact):
    # momentum balance: the traction integrated over a surface enclosing the
    # point force equals minus the force strength (outward normal)
    surf = hier.surface(GAMMA, 2)
    lam, w = qd.tri_rule(6)
    tot = np.zeros(3)
    for f in range(surf.num_tris):
        tri = surf.vertices[surf.tris[f]]
        pts = lam @ tri
        tr = exact.traction(pts, surf.normals[f])
        tot += surf.areas[f] * (w @ tr)
    assert np.abs(tot + exact.a).max() < 1e-3


def test_operator_checks_all_pass(hier):
    checks = vf.operator_checks(hier)
    failing = {k: v for k, v in checks.items() if not v["passed"]}
    assert not failing, failing


def test_run_convergence_structure(hier, exact):
    table = vf.run_convergence("CH_Dirichlet", hier, [0], exact=exact)
    row = table["rows"][0]
    assert row["residual"] <= 1e-9
    for key in ("sigma_l2", "u_l2", "chi_l2", "p_l2", "phi_energy"):
        assert row[key] > 0
    assert row["h"] == 1.5


def test_run_convergence_needs_data_for_homogeneous_kinds(hier):
    with pytest.raises(ValueError):
        vf.run_convergence("JN_NeumannHomog", hier, [0])


def test_cross_formulation_zero_force(hier):
    out = vf.cross_formulation_check(hier, [0],
                                     f=lambda p: np.zeros_like(p))
    row = out["rows"][0]
    assert row["sigma_discrepancy"] < 1e-12
    assert row["u_discrepancy"] < 1e-12


def test_kernel_coercivity_dense_and_lanczos_agree(hier):
    dense = vf.kernel_coercivity_check("CH_NeumannHomog", hier, 0,
                                       trace_ratio=1)
    lancz = vf.kernel_coercivity_check("CH_NeumannHomog", hier, 0,
                                       trace_ratio=1, dense_limit=0)
    assert dense["method"] == "dense" and lancz["method"] == "lanczos"
    assert dense["min_eig"] > 0
    assert abs(dense["min_eig"] - lancz["min_eig"]) < 1e-8 * dense["min_eig"]


def test_shear_transform_restores_coercivity(hier):
    rep = vf.kernel_coercivity_check("CH_Dirichlet", hier, 0, trace_ratio=1)
    assert rep["min_eig"] > 0
    assert rep["delta"] is not None
    # the shear composition widens the (marginal) coercivity margin of the
    # plain symmetric part by orders of magnitude
    raw = vf.kernel_coercivity_check("CH_Dirichlet", hier, 0, trace_ratio=1,
                                     use_transform=False)
    assert rep["min_eig"] > 10 * abs(raw["min_eig"])


def test_infsup_estimate_is_level_robust(hier):
    betas = [vf.discrete_infsup_estimate("CH_NeumannHomog", hier, level,
                                         trace_ratio=1)["beta"]
             for level in (0, 1)]
    assert all(0 < b < 1 for b in betas)
    assert abs(betas[1] - betas[0]) < 0.2 * betas[0]


def test_rates_helper():
    assert np.allclose(vf._rates([4.0, 2.0, 1.0]), [1.0, 1.0])
