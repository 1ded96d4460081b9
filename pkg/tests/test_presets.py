import numpy as np
import pytest

from hypospde.brackets import hormander_verdict
from hypospde.presets import PRESETS, get_preset, list_presets, ns2d
from hypospde.problem import ProblemSpec
from hypospde.tensor import evaluate


def test_table_has_every_family():
    rows = list_presets()
    assert len(rows) >= 6
    names = {r[0] for r in rows}
    assert {"ou-1mode", "ou-2mode", "ou-2mode-degenerate", "burgers-n", "rd-cubic-n", "ks-n",
            "ns2d-4forced"} <= names


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    P = get_preset(name)
    assert isinstance(P, ProblemSpec)
    assert P.is_exact
    assert all(e > 0 for e in P.eigenvalues)
    assert list(P.eigenvalues) == sorted(P.eigenvalues)


def test_unknown_preset():
    with pytest.raises(KeyError):
        get_preset("heat")


@pytest.mark.parametrize("cutoff", [2, 3, 4])
def test_ns_enstrophy_identity(cutoff):
    # <u, B(u, u)> = 0: the vorticity nonlinearity conserves enstrophy
    P = ns2d(cutoff=cutoff)
    B = P.nonlinearity.term(2).to_float()
    rng = np.random.default_rng(cutoff)
    for _ in range(100):
        u = rng.normal(size=P.dim)
        assert abs(u @ evaluate(B, u)) <= 1e-12 * max(1.0, np.linalg.norm(u) ** 3)


def test_burgers_energy_identity():
    P = get_preset("burgers-n", n=6)
    B = P.nonlinearity.term(2).to_float()
    rng = np.random.default_rng(0)
    for _ in range(100):
        u = rng.normal(size=6)
        assert abs(u @ evaluate(B, u)) <= 1e-12 * np.linalg.norm(u) ** 3


def test_degenerate_presets_are_deficient():
    assert hormander_verdict(get_preset("ou-2mode-degenerate"), 4).verdict == "DEFICIENT"
    assert hormander_verdict(get_preset("ou-2mode"), 1).verdict == "SPANS"
    assert hormander_verdict(get_preset("ks-n"), 8).verdict == "SPANS"
    assert hormander_verdict(get_preset("burgers-n"), 8).verdict == "SPANS"
