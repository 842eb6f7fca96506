from __future__ import annotations

import numpy as np

T_MIN, T_MAX = -0.1, 1.1


class FieldError(ValueError):
    pass


class VelocityField:
    """Base class for ``v(z, t, condition, guidance)``.

    Subclasses implement :meth:`_eval`. ``lipschitz`` is a Lipschitz
    constant in ``z`` (``None`` if unknown) and :meth:`exact_solution`, when
    available, maps a state at ``t = 0`` to the exact state at time ``t``.
    """

    lipschitz: float | None = None
    has_exact_solution = False

    def __call__(self, z, t, condition=None, guidance=1.0, hook=None):
        t = float(t)
        if not (T_MIN <= t <= T_MAX):
            raise FieldError(f"time {t} outside accepted range [{T_MIN}, {T_MAX}]")
        z = np.asarray(z, dtype=float)
        out = self._eval(z, t, condition, float(guidance), hook)
        return np.asarray(out, dtype=float).reshape(z.shape)

    def _eval(self, z, t, condition, guidance, hook):
        raise NotImplementedError

    def exact_solution(self, z0, t):
        raise NotImplementedError(f"{type(self).__name__} has no closed-form solution")


def estimate_lipschitz(field, z, t=0.5, condition=None, guidance=1.0, n_probes=1000, eps=1e-6, seed=0):
    """Largest finite-difference quotient ``|v(z + eps u) - v(z)| / eps`` over unit probes ``u``."""
    rng = np.random.default_rng(seed)
    z = np.asarray(z, dtype=float)
    base = field(z, t, condition, guidance)
    best = 0.0
    for _ in range(n_probes):
        u = rng.standard_normal(z.shape)
        u /= np.linalg.norm(u)
        q = np.linalg.norm(field(z + eps * u, t, condition, guidance) - base) / eps
        best = max(best, float(q))
    return best
