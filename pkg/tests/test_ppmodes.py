"""Sparse block fields, tent witnesses and the edge-mode ladder."""

import numpy as np
import pytest

from lawe_spectra import discrete, ppmodes
from lawe_spectra.errors import ValidationError


@pytest.fixture(scope="module")
def dsp():
    return ppmodes.construct_dsp(n=3000)


@pytest.fixture(scope="module")
def edge_modes(dsp):
    pd = ppmodes.theorem_model(dsp)
    op = discrete.assemble_jacobi(pd, dsp.extent, i_start=1)
    return op, ppmodes.detect_edge_eigenvalues(op, dsp)


def test_block_layout(dsp):
    assert dsp.blocks[:4] == ((6, 4), (15, 4), (26, 4), (41, 4))
    assert dsp.m_max == 70
    assert dsp.extent == 2939
    for m, (s, L) in enumerate(dsp.blocks, start=1):
        assert L >= 4 and L % 2 == 0
        assert s > dsp.spacing * m ** (dsp.p + 1.0)
    # at least two empty shells between consecutive blocks
    for (s0, L0), (s1, _) in zip(dsp.blocks, dsp.blocks[1:]):
        assert s1 - (s0 + L0) >= 3


def test_construct_validation():
    with pytest.raises(ValidationError, match="1/2 < alpha < 1"):
        ppmodes.construct_dsp(alpha=1.2, n=100)
    with pytest.raises(ValidationError, match="1/3 < p"):
        ppmodes.construct_dsp(p=0.2, n=100)
    with pytest.raises(ValidationError, match="spacing must be positive"):
        ppmodes.construct_dsp(spacing=0.0, n=100)
    with pytest.raises(ValidationError, match="give m_max or n"):
        ppmodes.construct_dsp()
    with pytest.raises(ValidationError, match="no block fits"):
        ppmodes.construct_dsp(n=8)


def test_tent_witness_geometry(dsp):
    i, t = dsp.tent(1)
    s, L = dsp.blocks[0]
    assert np.array_equal(i, np.arange(s, s + L + 1))
    assert t[0] == 0.0 and t[-1] == 0.0
    assert t.max() == 1.0
    # L = 4 tent is (0, 1/2, 1, 1/2, 0)
    assert dsp.tent_norm_sq(1) == pytest.approx(1.5)
    assert dsp.tent_difference_sq(1) == pytest.approx(1.0)


def test_field_support(dsp):
    g = dsp.field(200)
    on = np.zeros(201, dtype=bool)
    for s, L in dsp.blocks:
        if s + L > 200:
            break
        on[s:s + L + 1] = True
        i = np.arange(s, s + L + 1)
        assert np.allclose(g[i], i.astype(float) ** -0.8)
    assert np.all(g[~on] == 0.0)
    assert np.all(np.abs(g) <= 6.0 ** -0.8)


def test_theorem_model_normalization(dsp):
    pd = ppmodes.theorem_model(dsp)
    sp = pd.scaling
    # G = 1/kappa makes the limit coupling exactly one
    assert sp.lambda_star == pytest.approx(1.0 / 1.6)
    assert sp.interval == pytest.approx((-2.0, 2.0))
    # canonical strength b = c/(Lambda_star*(4+zeta)) = 0.32
    base = 0.8
    s, L = dsp.blocks[0]
    i = np.arange(s, s + L + 1)
    bump = pd.gamma.scaled[i] - base
    assert np.allclose(bump, 0.32 * i.astype(float) ** -0.8, rtol=1e-12)
    with pytest.raises(ValidationError, match="binding must be"):
        ppmodes.theorem_model(dsp, binding="neutral")


def test_ladder_below_lower_edge(edge_modes):
    op, em = edge_modes
    assert em.edge == -2.0
    assert em.count == 41
    assert np.all(em.values < -2.0)
    assert em.values[0] == pytest.approx(-2.1915055, abs=1e-5)
    assert em.values[1] == pytest.approx(-2.0876219, abs=1e-5)
    assert em.values[2] == pytest.approx(-2.0461394, abs=1e-5)
    # ascending eigenvalues means decreasing depths
    assert np.all(np.diff(em.depths) <= 0)


def test_ladder_fit(edge_modes):
    _, em = edge_modes
    slope, r2 = em.ladder_fit()
    assert slope == pytest.approx(-1.4467, abs=2e-3)
    assert r2 == pytest.approx(0.9869, abs=2e-3)
    # sorting by detection order instead of block steepens the tail
    slope_det, r2_det = em.ladder_fit(indexing="detected")
    assert slope_det < slope
    assert 0.9 < r2_det <= 1.0
    with pytest.raises(ValidationError, match="indexing must be"):
        em.ladder_fit(indexing="sorted")


def test_mode_localization(edge_modes):
    _, em = edge_modes
    assert em.blocks[0] == 1
    assert em.in_block[0] == pytest.approx(0.9539, abs=1e-3)
    # only the deepest well traps 90 percent of its mode at this depth
    assert np.count_nonzero(em.in_block >= 0.9) == 1
    # raw displacements blow up at the surface for every detected mode
    assert not np.any(em.dr_bounded)


def test_rayleigh_quotients_do_not_certify(edge_modes):
    op, _ = edge_modes
    dsp = ppmodes.construct_dsp(n=3000)
    q = ppmodes.rayleigh_quotients(op, dsp, edge=-2.0)
    assert q.shape == (dsp.m_max,)
    # the tent kinetic cost m**-2p dominates the well strength
    # m**(-alpha*(p+1)) at these parameters, for every single block
    assert np.all(q > 0)
    assert q.min() == pytest.approx(0.11442, abs=1e-4)


def test_rayleigh_matches_dense_quadratic_form(edge_modes):
    op, _ = edge_modes
    dsp = ppmodes.construct_dsp(n=3000)
    q = ppmodes.rayleigh_quotients(op, dsp, edge=-2.0)
    m = 3
    i, t = dsp.tent(m)
    x = np.zeros(op.n)
    x[i - op.i_start] = t
    dense = np.diag(op.diag) + np.diag(op.offdiag, 1) + np.diag(op.offdiag, -1)
    direct = float(x @ dense @ x) / float(x @ x) + 2.0
    assert q[m - 1] == pytest.approx(direct, rel=1e-12)


def test_rayleigh_rejects_out_of_section_block(dsp):
    pd = ppmodes.theorem_model(dsp)
    small = discrete.assemble_jacobi(pd, 50, i_start=1)
    with pytest.raises(ValidationError, match="outside the section"):
        ppmodes.rayleigh_quotients(small, dsp, edge=-2.0)


def test_repulsive_field_binds_nothing(dsp):
    pd = ppmodes.theorem_model(dsp, binding="repulsive")
    op = discrete.assemble_jacobi(pd, dsp.extent, i_start=1)
    em = ppmodes.detect_edge_eigenvalues(op, dsp)
    assert em.count == 0
    with pytest.raises(ValidationError, match="at least three modes"):
        em.ladder_fit()
