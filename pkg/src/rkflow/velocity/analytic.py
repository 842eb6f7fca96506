"""Velocity fields with closed-form flows, used as oracles for the solvers."""

from __future__ import annotations

import numpy as np

from .base import FieldError, VelocityField


class ConstantField(VelocityField):
    has_exact_solution = True

    def __init__(self, c=1.0):
        self.c = np.asarray(c, dtype=float)
        self.lipschitz = 0.0

    def _eval(self, z, t, condition, guidance, hook):
        return np.broadcast_to(self.c, z.shape).copy()

    def exact_solution(self, z0, t):
        return np.asarray(z0, dtype=float) + self.c * t


class LinearScalarField(VelocityField):
    """``v = lam * z``; the flow is ``z0 * exp(lam * t)``."""

    has_exact_solution = True

    def __init__(self, lam=1.0):
        self.lam = float(lam)
        self.lipschitz = abs(self.lam)

    def _eval(self, z, t, condition, guidance, hook):
        return self.lam * z

    def exact_solution(self, z0, t):
        return np.asarray(z0, dtype=float) * np.exp(self.lam * t)


class TimePolyField(VelocityField):
    """``v = sum_k coeffs[k] * t**k``, independent of ``z``."""

    has_exact_solution = True

    def __init__(self, coeffs=(1.0,)):
        self.coeffs = [float(p) for p in coeffs]
        if not self.coeffs:
            raise FieldError("time_poly needs at least one coefficient")
        self.lipschitz = 0.0

    def _eval(self, z, t, condition, guidance, hook):
        val = sum(p * t**k for k, p in enumerate(self.coeffs))
        return np.full(z.shape, val)

    def exact_solution(self, z0, t):
        integral = sum(p * t ** (k + 1) / (k + 1) for k, p in enumerate(self.coeffs))
        return np.asarray(z0, dtype=float) + integral


class LogisticField(VelocityField):
    """``v = z (1 - z)``; Lipschitz constant 1 on ``[0, 1]``."""

    has_exact_solution = True
    lipschitz = 1.0

    def _eval(self, z, t, condition, guidance, hook):
        return z * (1.0 - z)

    def exact_solution(self, z0, t):
        z0 = np.asarray(z0, dtype=float)
        if np.any((z0 <= 0) | (z0 >= 1)):
            raise FieldError("logistic exact solution needs z0 in (0, 1)")
        e = np.exp(t)
        return z0 * e / (1.0 - z0 + z0 * e)


class GaussToGaussField(VelocityField):
    """Marginal rectified-flow velocity between ``N(mu0, sigma0^2)`` at ``t = 0``
    and ``N(0, 1)`` at ``t = 1``, applied independently per coordinate.

    With ``Z_t = t Z_1 + (1 - t) Z_0`` the pair ``(Z_1 - Z_0, Z_t)`` is jointly
    Gaussian, so the conditional expectation is affine in ``z``::

        v(z, t) = -mu0 + k(t) * (z - (1 - t) mu0),
        k(t) = (t - (1 - t) sigma0^2) / (t^2 + (1 - t)^2 sigma0^2)

    The flow keeps the standardized coordinate fixed:
    ``z(t) = (1 - t) mu0 + s(t) (z0 - mu0) / sigma0`` with ``s(t)^2`` the
    variance of ``Z_t``.
    """

    has_exact_solution = True

    def __init__(self, mu0=0.0, sigma0=1.0):
        self.mu0 = float(mu0)
        self.sigma0 = float(sigma0)
        if not self.sigma0 > 0:
            raise FieldError("gauss_to_gauss needs sigma0 > 0")
        ts = np.linspace(0.0, 1.0, 2001)
        self.lipschitz = float(np.max(np.abs(self._gain(ts))))

    def _var(self, t):
        return t**2 + (1 - t) ** 2 * self.sigma0**2

    def _gain(self, t):
        return (t - (1 - t) * self.sigma0**2) / self._var(t)

    def _eval(self, z, t, condition, guidance, hook):
        return -self.mu0 + self._gain(t) * (z - (1 - t) * self.mu0)

    def exact_solution(self, z0, t):
        xi = (np.asarray(z0, dtype=float) - self.mu0) / self.sigma0
        return (1 - t) * self.mu0 + np.sqrt(self._var(t)) * xi


_KINDS = {
    "constant": (ConstantField, {"c"}),
    "linear_scalar": (LinearScalarField, {"lam"}),
    "time_poly": (TimePolyField, {"coeffs"}),
    "logistic": (LogisticField, set()),
    "gauss_to_gauss": (GaussToGaussField, {"mu0", "sigma0"}),
}


def make_analytic_field(kind, **params):
    try:
        cls, allowed = _KINDS[kind]
    except KeyError:
        raise FieldError(f"unknown analytic field {kind!r}; choose from {sorted(_KINDS)}") from None
    extra = set(params) - allowed
    if extra:
        raise FieldError(f"{kind}: unexpected parameters {sorted(extra)}")
    return cls(**params)
