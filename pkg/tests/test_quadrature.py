"""Simplex rules and singular triangle-pair rules."""

from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exstokes import quadrature as qd


def integrate_pair(kern, VX, VY, case, order):
    """sum_q w_q k(x_q, y_q) * (2 area_x)(2 area_y)."""
    bx, by, w = qd.pair_rule(case, order)
    X = bx @ VX
    Y = by @ VY
    ax = 0.5 * np.linalg.norm(np.cross(VX[1] - VX[0], VX[2] - VX[0]))
    ay = 0.5 * np.linalg.norm(np.cross(VY[1] - VY[0], VY[2] - VY[0]))
    return (w * kern(X, Y)).sum() * 4.0 * ax * ay


def invr(X, Y):
    return 1.0 / np.linalg.norm(X - Y, axis=1)


TRI = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
TRI_EDGE = np.array([[0.0, 0, 0], [1, 0, 0], [0.3, -1.1, 0.2]])   # shares edge 0-1
TRI_VERT = np.array([[0.0, 0, 0], [-1, 0.2, 0], [-0.3, -1, 0.5]])  # shares vertex 0


# ---------------------------------------------------------------- simplex rules

def test_tri_rule_monomial_exactness():
    for d in range(1, 11):
        lam, w = qd.tri_rule(d)
        assert np.all(w > 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        x, y = lam[:, 1], lam[:, 2]
        for a in range(d + 1):
            for b in range(d + 1 - a):
                val = (w * x**a * y**b).sum() * 0.5
                exact = factorial(a) * factorial(b) / factorial(a + b + 2)
                assert val == pytest.approx(exact, abs=1e-13)


def test_tet_rule_monomial_exactness():
    for d in range(1, 11):
        lam, w = qd.tet_rule(d)
        assert np.all(w > 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        x, y, z = lam[:, 1], lam[:, 2], lam[:, 3]
        for a in range(d + 1):
            for b in range(d + 1 - a):
                for c in range(d + 1 - a - b):
                    val = (w * x**a * y**b * z**c).sum() / 6.0
                    exact = (factorial(a) * factorial(b) * factorial(c)
                             / factorial(a + b + c + 3))
                    assert val == pytest.approx(exact, abs=1e-13)


def test_named_simplex_values():
    lam, w = qd.tet_rule(1)
    assert (w / 6.0).sum() == pytest.approx(1.0 / 6.0, abs=1e-15)
    lam, w = qd.tri_rule(1)
    assert (w * lam[:, 1]).sum() * 0.5 == pytest.approx(1.0 / 6.0, abs=1e-15)
    lam, w = qd.tri_rule(2)
    assert (w * lam[:, 1] * lam[:, 2]).sum() * 0.5 == pytest.approx(1.0 / 24.0, abs=1e-15)


def test_rule_degree_bounds():
    with pytest.raises(ValueError):
        qd.tri_rule(0)
    with pytest.raises(ValueError):
        qd.tet_rule(-3)


# ------------------------------------------------------------------ pair rules

@pytest.mark.parametrize("case,VY", [(qd.COINCIDENT, TRI), (qd.EDGE, TRI_EDGE),
                                     (qd.VERTEX, TRI_VERT)])
def test_pair_weights_positive_and_sum_quarter(case, VY):
    bx, by, w = qd.pair_rule(case, 6)
    assert np.all(w > 0)
    # reference measure of the path-simplex pair
    assert w.sum() == pytest.approx(0.25, abs=1e-13)
    assert bx.min() > -1e-12 and bx.max() < 1 + 1e-12
    assert by.min() > -1e-12 and by.max() < 1 + 1e-12


@pytest.mark.parametrize("case,VY", [(qd.COINCIDENT, TRI), (qd.EDGE, TRI_EDGE),
                                     (qd.VERTEX, TRI_VERT)])
def test_pair_rules_exact_for_smooth_kernels(case, VY):
    def poly(X, Y):
        return 1 + X[:, 0] * Y[:, 1] + X[:, 1] ** 2 - Y[:, 2] + (X[:, 0] - Y[:, 0]) ** 2

    ref = integrate_pair(poly, TRI, VY, qd.SEPARATED, 12)
    got = integrate_pair(poly, TRI, VY, case, 8)
    assert got == pytest.approx(ref, rel=1e-13)

    const = integrate_pair(lambda X, Y: np.ones(len(X)), TRI, VY, case, 4)
    ax = 0.5 * np.linalg.norm(np.cross(TRI[1] - TRI[0], TRI[2] - TRI[0]))
    ay = 0.5 * np.linalg.norm(np.cross(VY[1] - VY[0], VY[2] - VY[0]))
    assert const == pytest.approx(ax * ay, rel=1e-13)


def test_coincident_invr_self_convergence():
    vals = [integrate_pair(invr, TRI, TRI, qd.COINCIDENT, n) for n in (4, 6, 8, 10)]
    diffs = np.abs(np.diff(vals)) / np.abs(vals[-1])
    assert np.all(np.diff(diffs) < 0)                       # monotone convergence
    assert abs(vals[2] - vals[3]) / abs(vals[3]) < 1e-6     # order 8 vs order 10


def test_coincident_invr_against_self_similar_reference():
    # the red children of the unit right triangle are four half-scale similar
    # copies; 1/r scales child coincident integrals by (1/2)^3, so
    # I = 4*(1/8)*I + (touching child pairs) => I = 2 * sum(touching pairs),
    # an independent route through the edge/vertex rules.
    V = TRI
    m01, m02, m12 = (V[0] + V[1]) / 2, (V[0] + V[2]) / 2, (V[1] + V[2]) / 2
    ch = [np.array([V[0], m01, m02]), np.array([m01, V[1], m12]),
          np.array([m02, m12, V[2]]), np.array([m01, m12, m02])]

    def gids(T, table):
        out = []
        for p in T:
            key = tuple(np.round(p * 2 ** 20).astype(int))
            out.append(table.setdefault(key, len(table)))
        return tuple(out)

    table = {}
    ids = [gids(T, table) for T in ch]
    J = 0.0
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            case, px, py = qd.classify_pair(ids[i], ids[j])
            J += integrate_pair(invr, ch[i][list(px)], ch[j][list(py)], case, 12)
    I_ref = 2.0 * J
    I = integrate_pair(invr, TRI, TRI, qd.COINCIDENT, 8)
    assert I == pytest.approx(I_ref, rel=1e-7)


@pytest.mark.parametrize("case,VY", [(qd.EDGE, TRI_EDGE), (qd.VERTEX, TRI_VERT)])
def test_touching_invr_subdivision_consistency(case, VY):
    # one level of red subdivision: every child pair is integrable by the same
    # family of rules; the total must match the parent-pair value
    def children(V):
        m01, m02, m12 = (V[0] + V[1]) / 2, (V[0] + V[2]) / 2, (V[1] + V[2]) / 2
        return [np.array([V[0], m01, m02]), np.array([m01, V[1], m12]),
                np.array([m02, m12, V[2]]), np.array([m01, m12, m02])]

    def gids(T, table):
        out = []
        for p in T:
            key = tuple(np.round(p * 2 ** 20).astype(int))
            out.append(table.setdefault(key, len(table)))
        return tuple(out)

    table = {}
    chx = children(TRI)
    chy = children(VY)
    idx = [gids(T, table) for T in chx]
    idy = [gids(T, table) for T in chy]
    total = 0.0
    for i in range(4):
        for j in range(4):
            c, px, py = qd.classify_pair(idx[i], idy[j])
            total += integrate_pair(invr, chx[i][list(px)], chy[j][list(py)], c, 10)
    parent = integrate_pair(invr, TRI, VY, case, 10)
    assert total == pytest.approx(parent, rel=1e-8)


def test_separated_far_pair_matches_centroid_approximation():
    d = 10.0  # >= 5 diameters away
    VY = TRI + np.array([d, 0.3, 0.4])
    got = integrate_pair(invr, TRI, VY, qd.SEPARATED, 6)
    cx = TRI.mean(axis=0)
    cy = VY.mean(axis=0)
    approx = 0.5 * 0.5 / np.linalg.norm(cx - cy)
    assert got == pytest.approx(approx, rel=0.05)


def test_classification_from_shared_vertices():
    assert qd.classify_pair((1, 2, 3), (1, 2, 3))[0] == qd.COINCIDENT
    assert qd.classify_pair((1, 2, 3), (2, 1, 9))[0] == qd.EDGE
    assert qd.classify_pair((1, 2, 3), (7, 3, 9))[0] == qd.VERTEX
    assert qd.classify_pair((1, 2, 3), (7, 8, 9))[0] == qd.SEPARATED


@settings(max_examples=20, deadline=None)
@given(permx=st.permutations([0, 1, 2]), permy=st.permutations([0, 1, 2]))
def test_pair_value_invariant_under_vertex_relabeling(permx, permy):
    # assembled entries must not depend on how triangle vertices are listed
    table = {}

    def gids(T):
        out = []
        for p in T:
            key = tuple(np.round(p * 2 ** 20).astype(int))
            out.append(table.setdefault(key, len(table)))
        return tuple(out)

    for VY in (TRI_EDGE, TRI_VERT):
        VX2 = TRI[list(permx)]
        VY2 = VY[list(permy)]
        c1, p1, q1 = qd.classify_pair(gids(TRI), gids(VY))
        c2, p2, q2 = qd.classify_pair(gids(VX2), gids(VY2))
        assert c1 == c2
        a = integrate_pair(invr, TRI[list(p1)], VY[list(q1)], c1, 8)
        b = integrate_pair(invr, VX2[list(p2)], VY2[list(q2)], c2, 8)
        assert b == pytest.approx(a, rel=1e-12)
