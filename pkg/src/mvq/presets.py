"""Named parameter sets covering the four root classes of the free dynamics.

All use ``theta = 1e-4`` and ``k`` inside ``[1e-19, 1e-3]``. They were found
by a grid search over ``(nu, k)`` around the stable-real point, keeping the
first point of each class; :func:`search_presets` repeats that search and
``tests/test_presets.py`` checks the classification of every entry.
"""

from __future__ import annotations

from dataclasses import replace

from .dynamics import DynamicsParams, reset_thresholds
from .stability import classify, prop_coef_check

THETA = 1e-4

PRESETS = {
    # satisfies every sufficient condition for stable, aperiodic dynamics
    "stable-real": DynamicsParams(theta=THETA, mu=5.0, nu=1.5e-8, gamma1=1e-4, gamma2=2.0, k=1e-18),
    # k above the reality bound: damped oscillations
    "stable-complex": DynamicsParams(theta=THETA, mu=5.0, nu=1.5e-8, gamma1=1e-4, gamma2=2.0, k=1e-17),
    # nu above theta * gamma1 * gamma2: a positive real root
    "unstable-real": DynamicsParams(theta=THETA, mu=5.0, nu=3e-8, gamma1=1e-4, gamma2=2.0, k=1e-18),
    "unstable-complex": DynamicsParams(theta=THETA, mu=5.0, nu=3e-8, gamma1=1e-4, gamma2=2.0, k=1e-16),
}

LAMBDA_M_GRID = (0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2)


def preset(name: str, n: int = 5, **overrides) -> DynamicsParams:
    """A preset with reset thresholds ``300 n`` and optional field overrides."""
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, eps=reset_thresholds(n), **overrides)


def search_presets(theta=THETA, mu=5.0, gamma1=1e-4, gamma2=2.0,
                   nus=(1.5e-8, 3e-8), ks=(1e-19, 1e-18, 1e-17, 1e-16, 1e-15)):
    """First ``(nu, k)`` grid point of each root class, stable-real required to be certified."""
    found = {}
    for nu in nus:
        for k in ks:
            p = DynamicsParams(theta=theta, mu=mu, nu=nu, gamma1=gamma1, gamma2=gamma2, k=k)
            kind = classify(p)
            if kind == "stable-real" and not prop_coef_check(theta, mu, nu, gamma1, gamma2, k).certified:
                continue
            found.setdefault(kind, p)
    return found
