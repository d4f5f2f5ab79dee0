"""Global-local shrinkage on weight deviations from their tree-implied means.

The deviation variance of coefficient j factors as tau_j = lambda * psi_j
with sqrt(lambda) and sqrt(psi_j) each half-Cauchy C+(0, 1), so the implied
scale sqrt(tau_j) is a product of two half-Cauchy variables.  Sampling uses
the inverse-gamma auxiliary representation: x = (half-Cauchy)^2 is equivalent
to x | a ~ iG(1/2, 1/a) with a ~ iG(1/2, 1), which makes every full
conditional inverse-gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataShapeError
from .rng import _gen

VARIANCE_FLOOR = 1e-12
VARIANCE_CEILING = 1e8


@dataclass
class HorseshoeState:
    """Factors of the deviation variances tau_j = lambda_global * psi_local[j]."""

    lambda_global: float
    psi_local: np.ndarray
    aux_global: float
    aux_local: np.ndarray

    @staticmethod
    def initial(n: int) -> "HorseshoeState":
        return HorseshoeState(1.0, np.ones(n), 1.0, np.ones(n))

    @property
    def tau(self) -> np.ndarray:
        return np.clip(self.lambda_global * self.psi_local, VARIANCE_FLOOR, VARIANCE_CEILING)


def gibbs_update_horseshoe(state: HorseshoeState, deviations: np.ndarray | None, rng) -> HorseshoeState:
    """One Gibbs scan of (lambda, psi, auxiliaries), in place.

    ``deviations`` holds the centered coefficients whose variances are being
    learned: shape (J,) for one deviation per coefficient, or (n, J) when J
    coefficients pool n deviations each (the time-varying case pools the T
    per-period deviations of every agent).  ``None`` runs the prior-only scan,
    whose stationary law is the half-Cauchy product prior itself.
    """
    g = _gen(rng)
    J = state.psi_local.size

    if deviations is None:
        ssq = np.zeros(J)
        counts = np.zeros(J)
    else:
        dev = np.asarray(deviations, dtype=np.float64)
        if dev.ndim == 1:
            if dev.size != J:
                raise DataShapeError(f"expected {J} deviations, got {dev.size}")
            ssq = dev ** 2
            counts = np.ones(J)
        elif dev.ndim == 2:
            if dev.shape[1] != J:
                raise DataShapeError(f"expected {J} deviation columns, got {dev.shape[1]}")
            ssq = np.sum(dev ** 2, axis=0)
            counts = np.full(J, dev.shape[0], dtype=np.float64)
        else:
            raise DataShapeError("deviations must be (J,) or (n, J)")

    lam = np.clip(state.lambda_global, VARIANCE_FLOOR, VARIANCE_CEILING)

    # psi_j | . ~ iG(1/2 + n_j/2, 1/aux_j + ssq_j / (2 lambda))
    shape_psi = 0.5 + 0.5 * counts
    scale_psi = 1.0 / state.aux_local + ssq / (2.0 * lam)
    psi = scale_psi / g.gamma(shape_psi, 1.0)
    psi = np.clip(psi, VARIANCE_FLOOR, VARIANCE_CEILING)

    # lambda | . ~ iG((1 + sum n_j)/2, 1/aux + sum_j ssq_j / (2 psi_j))
    shape_lam = 0.5 * (1.0 + counts.sum())
    scale_lam = 1.0 / state.aux_global + float(np.sum(ssq / (2.0 * psi)))
    lam = float(np.clip(scale_lam / g.gamma(shape_lam, 1.0), VARIANCE_FLOOR, VARIANCE_CEILING))

    # auxiliaries: a | x ~ iG(1, 1 + 1/x)
    aux_local = (1.0 + 1.0 / psi) / g.gamma(1.0, 1.0, size=J)
    aux_global = float((1.0 + 1.0 / lam) / g.gamma(1.0, 1.0))

    state.psi_local = psi
    state.lambda_global = lam
    state.aux_local = aux_local
    state.aux_global = aux_global
    return state
