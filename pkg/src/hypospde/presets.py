"""Named Galerkin truncations used by the harness and the test-suite.

All preset data are exact rationals so the bracket engine can certify its
verdicts; simulation converts to floats.

Bases (every basis function in one preset has the same L2 norm, so the
coefficient inner product is proportional to the L2 inner product):

* ``burgers``/``ks``: ``sin(kx)`` on ``[0, pi]``, Dirichlet, ``k = 1..n``.
* ``rd-cubic``: ``sin((2k-1)x)`` on ``[0, pi/2]``, Dirichlet at 0 and
  Neumann at ``pi/2``.
* ``rd-cubic-dirichlet``: ``sin(kx)`` on ``[0, pi]``.  The even modes form
  an unforced invariant subspace when only mode 1 is forced.
* ``ns2d``: ``cos(k.x)``, ``sin(k.x)`` on the 2-torus for ``k`` in the upper
  half lattice with ``0 < |k| <= cutoff``; vorticity formulation.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement, product

from .problem import ProblemSpec
from .tensor import PolyMap, PolySum, diagonal

__all__ = ["PRESETS", "get_preset", "list_presets", "ns2d", "burgers", "ks", "rd_cubic",
           "rd_cubic_dirichlet", "ou"]


def _unit(n, k, scale=1):
    v = [Fraction(0)] * n
    v[k] = Fraction(scale)
    return tuple(v)


def ou(eigenvalues, noise, horizon=1, name="ou") -> ProblemSpec:
    n = len(eigenvalues)
    return ProblemSpec(tuple(Fraction(x) for x in eigenvalues), PolySum([], dim=n),
                       noise, horizon=horizon, name=name)


def _burgers_map(n: int, strength) -> PolyMap:
    # -(u u_x) projected on sin(ix): (i/4) sum_{j,k} u_j u_k ([|j-k| = i] - [j+k = i])
    coeffs = defaultdict(Fraction)
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            for k in range(j, n + 1):
                c = Fraction(i, 4) * (int(abs(j - k) == i) - int(j + k == i))
                if c:
                    coeffs[(i - 1, (j - 1, k - 1))] += strength * c
    return PolyMap(2, n, coeffs)


def burgers(n: int = 4, nu=Fraction(1, 10), sigma=3, forced=(1,), horizon=1) -> ProblemSpec:
    """Viscous Burgers ``u_t = nu u_xx - u u_x`` with noise on the ``forced`` sine modes."""
    lams = tuple(Fraction(nu) * k * k for k in range(1, n + 1))
    B = _burgers_map(n, Fraction(1))
    noise = tuple(_unit(n, k - 1, sigma) for k in forced)
    return ProblemSpec(lams, PolySum([B], dim=n), noise, horizon=horizon, name=f"burgers-{n}")


def ks(n: int = 4, sigma=10, forced=(1,), horizon=1, length=2) -> ProblemSpec:
    """Kuramoto-Sivashinsky ``u_t = -u_xxxx - u_xx - u u_x`` on ``[0, length pi]``.

    Mode ``k`` has wavenumber ``kappa = k / length``.  ``A`` keeps the
    positive ``kappa^4`` part; the destabilizing ``+kappa^2`` goes in the
    degree-1 correction so every eigenvalue of ``A`` stays positive.
    """
    kap = [Fraction(k, 1) / Fraction(length) for k in range(1, n + 1)]
    lams = tuple(x ** 4 for x in kap)
    lin = diagonal([x * x for x in kap])
    B = _burgers_map(n, 1 / Fraction(length))
    noise = tuple(_unit(n, k - 1, sigma) for k in forced)
    return ProblemSpec(lams, PolySum([B], dim=n), noise, horizon=horizon, linear=lin, name=f"ks-{n}")


def _cubic_map(freqs, strength) -> PolyMap:
    """Galerkin projection of ``-strength * u^3`` on ``sin(a_k x)`` with odd ``a_k`` over ``[0, pi/2]``.

    Expanding each sine in exponentials, only frequency-zero products
    survive on this interval: the tensor entry is ``-(strength/8) *
    sum(s1 s2 s3 s4)`` over sign patterns with ``s . a = 0``.
    """
    n = len(freqs)
    coeffs = {}
    for i in range(n):
        for J in _multisets(n, 3):
            a = (freqs[i],) + tuple(freqs[j] for j in J)
            total = 0
            for s in product((1, -1), repeat=4):
                if sum(si * ai for si, ai in zip(s, a)) == 0:
                    total += s[0] * s[1] * s[2] * s[3]
            if total:
                coeffs[(i, J)] = -Fraction(strength) * Fraction(total, 8)
    return PolyMap(3, n, coeffs)


def _dirichlet_cubic_map(n, strength) -> PolyMap:
    # sin(kx) on [0, pi]: int of a product of four sines is (pi/16) sum over
    # zero-frequency sign patterns; normalized by the mode norm pi/2.
    coeffs = {}
    for i in range(n):
        for J in _multisets(n, 3):
            a = (i + 1,) + tuple(j + 1 for j in J)
            total = 0
            for s in product((1, -1), repeat=4):
                if sum(si * ai for si, ai in zip(s, a)) == 0:
                    total += s[0] * s[1] * s[2] * s[3]
            if total:
                coeffs[(i, J)] = -Fraction(strength) * Fraction(total, 8)
    return PolyMap(3, n, coeffs)


def _multisets(n, k):
    return combinations_with_replacement(range(n), k)


def rd_cubic(n: int = 4, nu=Fraction(1, 50), strength=4, sigma=5, forced=(1,), horizon=1) -> ProblemSpec:
    """Reaction-diffusion ``u_t = nu u_xx - strength u^3`` on the odd-sine basis."""
    freqs = [2 * k - 1 for k in range(1, n + 1)]
    lams = tuple(Fraction(nu) * f * f for f in freqs)
    F = _cubic_map(freqs, strength)
    noise = tuple(_unit(n, k - 1, sigma) for k in forced)
    return ProblemSpec(lams, PolySum([F], dim=n), noise, horizon=horizon, name=f"rd-cubic-{n}")


def rd_cubic_dirichlet(n: int = 4, nu=Fraction(1, 50), strength=4, sigma=5, forced=(1,), horizon=1) -> ProblemSpec:
    """Same reaction on ``sin(kx)``, ``[0, pi]``; forcing odd modes leaves the even ones unreachable."""
    lams = tuple(Fraction(nu) * k * k for k in range(1, n + 1))
    F = _dirichlet_cubic_map(n, strength)
    noise = tuple(_unit(n, k - 1, sigma) for k in forced)
    return ProblemSpec(lams, PolySum([F], dim=n), noise, horizon=horizon,
                       name=f"rd-cubic-dirichlet-{n}")


# -- 2D Navier-Stokes, vorticity form ----------------------------------------------
NS_STANDARD_FORCING = ((1, 0), (1, 1))
NS_AXIS_FORCING = ((1, 0),)


def _half_lattice(cutoff2):
    ks = []
    r = int(cutoff2 ** 0.5) + 1
    for k1 in range(0, r + 1):
        for k2 in range(-r, r + 1):
            if k1 == 0 and k2 <= 0:
                continue
            if k1 * k1 + k2 * k2 <= cutoff2:
                ks.append((k1, k2))
    ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k))
    return ks


def _canonical(m):
    """Map a wavevector to the half lattice; returns (k, sign of sin)."""
    if m[0] > 0 or (m[0] == 0 and m[1] > 0):
        return m, 1
    return (-m[0], -m[1]), -1


def ns2d_modes(cutoff2):
    """Mode labels ``(kind, k)`` in eigenvalue order, kind in {'c', 's'}."""
    return [(kind, k) for k in _half_lattice(cutoff2) for kind in ("c", "s")]


def _ns_product(f, g):
    """``-(u_f . grad g)`` for basis functions f, g as {(kind, m): coeff} (unprojected)."""
    (kf, j), (kg, l) = f, g
    j2 = j[0] ** 2 + j[1] ** 2
    cross = Fraction(-j[1] * l[0] + j[0] * l[1], j2)  # (j_perp . l) / |j|^2
    plus = (j[0] + l[0], j[1] + l[1])
    minus = (j[0] - l[0], j[1] - l[1])
    out = defaultdict(Fraction)
    if kf == "c" and kg == "c":  # -(cross) sin_j sin_l
        out[("c", minus)] += -cross / 2
        out[("c", plus)] += cross / 2
    elif kf == "c" and kg == "s":  # (cross) sin_j cos_l
        out[("s", plus)] += cross / 2
        out[("s", minus)] += cross / 2
    elif kf == "s" and kg == "c":  # (cross) cos_j sin_l
        out[("s", plus)] += cross / 2
        out[("s", minus)] += -cross / 2
    else:  # -(cross) cos_j cos_l
        out[("c", minus)] += -cross / 2
        out[("c", plus)] += -cross / 2
    return out


def ns2d_bilinear(cutoff2) -> PolyMap:
    """Symmetrized, truncated vorticity nonlinearity on the real Fourier basis."""
    modes = ns2d_modes(cutoff2)
    index = {m: i for i, m in enumerate(modes)}
    n = len(modes)
    coeffs = defaultdict(Fraction)
    for p, f in enumerate(modes):
        for q, g in enumerate(modes):
            for (kind, m), c in _ns_product(f, g).items():
                if m == (0, 0) or c == 0:
                    continue
                mk, sgn = _canonical(m)
                if kind == "s":
                    c = c * sgn
                i = index.get((kind, mk))
                if i is None:
                    continue  # outside the truncation
                # tensor entry of the symmetric part: (B(e_p,e_q) + B(e_q,e_p)) / 2
                coeffs[(i, tuple(sorted((p, q))))] += c / 2 if p != q else c
    return PolyMap(2, n, coeffs)


def ns2d(cutoff=4, nu=Fraction(1, 10), sigma=1, forcing=NS_STANDARD_FORCING, horizon=1,
         cutoff2=None) -> ProblemSpec:
    """2D stochastic Navier-Stokes in vorticity form, modes ``0 < |k| <= cutoff``.

    ``forcing`` lists wavevectors; each one forces its cosine and sine mode.
    """
    cutoff2 = cutoff * cutoff if cutoff2 is None else cutoff2
    modes = ns2d_modes(cutoff2)
    index = {m: i for i, m in enumerate(modes)}
    n = len(modes)
    lams = tuple(Fraction(nu) * (k[0] ** 2 + k[1] ** 2) for _, k in modes)
    noise = []
    for k in forcing:
        k, _ = _canonical(tuple(k))
        for kind in ("c", "s"):
            noise.append(_unit(n, index[(kind, k)], sigma))
    B = ns2d_bilinear(cutoff2)
    labels = tuple(f"{kind}({k[0]},{k[1]})" for kind, k in modes)
    return ProblemSpec(lams, PolySum([B], dim=n), tuple(noise), horizon=horizon,
                       name=f"ns2d-{cutoff2}", mode_labels=labels)


# -- registry --------------------------------------------------------------------
@dataclass(frozen=True)
class PresetInfo:
    name: str
    builder: object
    description: str
    depth: int  # bracket depth the harness uses by default
    target: int | None = None  # rank target, None = full dim

    def build(self, **kw) -> ProblemSpec:
        return self.builder(**kw)


PRESETS = {
    "ou-1mode": PresetInfo("ou-1mode", lambda **kw: ou([1], [(1,)], name="ou-1mode", **kw),
                           "1-mode Ornstein-Uhlenbeck, A = 1, q = 1", 1),
    "ou-2mode": PresetInfo("ou-2mode", lambda **kw: ou([1, 2], [(1, 0), (0, 1)], name="ou-2mode", **kw),
                           "2-mode diagonal Ornstein-Uhlenbeck, A = diag(1, 2), Q = I", 1),
    "ou-2mode-degenerate": PresetInfo(
        "ou-2mode-degenerate",
        lambda **kw: ou([1, 2], [(1, 0)], name="ou-2mode-degenerate", **kw),
        "diagonal OU forced on mode 1 only; mode 2 unreachable", 2),
    "burgers-n": PresetInfo("burgers-n", burgers, "viscous Burgers, sine basis, forced on mode 1", 8),
    "rd-cubic-n": PresetInfo("rd-cubic-n", rd_cubic,
                             "cubic reaction-diffusion, odd-sine basis, forced on mode 1", 10),
    "rd-cubic-dirichlet-n": PresetInfo(
        "rd-cubic-dirichlet-n", rd_cubic_dirichlet,
        "cubic reaction-diffusion, Dirichlet sine basis, forced on mode 1 (even modes decoupled)", 10),
    "ks-n": PresetInfo("ks-n", ks, "Kuramoto-Sivashinsky, A = k^4, +k^2 as linear correction", 8),
    "ns2d-k": PresetInfo("ns2d-k", ns2d,
                         "2D Navier-Stokes vorticity, |k| <= cutoff, forced on (1,0), (1,1)", 6),
    "ns2d-4forced": PresetInfo("ns2d-4forced", lambda **kw: ns2d(**{"cutoff": 4, **kw}),
                               "2D Navier-Stokes, |k| <= 4, cos/sin of (1,0) and (1,1) forced (4 noises)", 6),
    "ns2d-axis": PresetInfo("ns2d-axis", lambda **kw: ns2d(forcing=NS_AXIS_FORCING, **kw),
                            "2D Navier-Stokes forced on the (1,0) pair only", 6),
}


def get_preset(name: str, **params) -> ProblemSpec:
    try:
        info = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
    return info.build(**params)


def list_presets() -> list:
    """Rows ``(name, description, default depth)``."""
    return [(p.name, p.description, p.depth) for p in PRESETS.values()]
