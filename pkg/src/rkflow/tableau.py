"""Explicit Butcher tableaus: registry, validation, order classification and I/O."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONSISTENCY_TOL = 1e-8
ORDER_TOL = 1e-7
MAX_ORDER = 4


class TableauError(ValueError):
    """Raised for unknown tableau names or malformed tableau files."""


class TableauWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    """Coefficients ``(a, b, c)`` of an explicit Runge-Kutta scheme with ``r`` stages.

    ``a`` is stored as an ``r x r`` float array; only its strictly lower
    triangle is meaningful for an explicit scheme.
    """

    name: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        r = b.shape[0]
        if r < 1:
            raise TableauError(f"{self.name}: tableau needs at least one stage")
        if a.shape != (r, r):
            raise TableauError(f"{self.name}: a has shape {a.shape}, expected ({r}, {r})")
        if c.shape[0] != r:
            raise TableauError(f"{self.name}: len(c)={c.shape[0]} but len(b)={r}")
        for arr in (a, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def r(self) -> int:
        return self.b.shape[0]

    @property
    def stages(self) -> int:
        return self.r

    def __eq__(self, other):
        if not isinstance(other, ButcherTableau):
            return NotImplemented
        return (
            self.name == other.name
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
        )

    def __hash__(self):
        return hash((self.name, self.a.tobytes(), self.b.tobytes(), self.c.tobytes()))

    def __repr__(self):
        return f"ButcherTableau(name={self.name!r}, r={self.r})"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "r": self.r,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
        }


@dataclass(frozen=True)
class OrderReport:
    name: str
    satisfied_order: int
    condition_residuals: list

    def residual(self, label: str) -> float:
        return dict(self.condition_residuals)[label]


def _t(name, a, b, c):
    return ButcherTableau(name, a, b, c)


# Coefficients are the printed fractions written as float literals.
_REGISTRY = {
    t.name: t
    for t in [
        _t("euler", [[0.0]], [1.0], [0.0]),
        _t("rf_solver", [[0, 0], [1 / 2, 0]], [3 / 4, 1 / 4], [0, 1 / 2]),
        _t("fireflow_midpoint", [[0, 0], [1 / 2, 0]], [0, 1], [0, 1 / 2]),
        _t("heun2", [[0, 0], [1, 0]], [1 / 2, 1 / 2], [0, 1]),
        _t("midpoint2", [[0, 0], [1 / 2, 0]], [0, 1], [0, 1 / 2]),
        _t("ralston2", [[0, 0], [2 / 3, 0]], [1 / 4, 3 / 4], [0, 2 / 3]),
        _t(
            "kutta3",
            [[0, 0, 0], [1 / 2, 0, 0], [-1, 2, 0]],
            [1 / 6, 2 / 3, 1 / 6],
            [0, 1 / 2, 1],
        ),
        _t(
            "heun3",
            [[0, 0, 0], [1 / 3, 0, 0], [0, 2 / 3, 0]],
            [1 / 4, 0, 3 / 4],
            [0, 1 / 3, 2 / 3],
        ),
        _t(
            "ralston3",
            [[0, 0, 0], [1 / 2, 0, 0], [0, 3 / 4, 0]],
            [2 / 9, 1 / 3, 4 / 9],
            [0, 1 / 2, 3 / 4],
        ),
        _t(
            "houwen3",
            [[0, 0, 0], [8 / 15, 0, 0], [1 / 4, 5 / 12, 0]],
            [1 / 4, 0, 3 / 4],
            [0, 8 / 15, 2 / 3],
        ),
        _t(
            "ssprk3",
            [[0, 0, 0], [1, 0, 0], [1 / 4, 1 / 4, 0]],
            [1 / 6, 1 / 6, 2 / 3],
            [0, 1, 1 / 2],
        ),
        _t(
            "classic4",
            [[0, 0, 0, 0], [1 / 2, 0, 0, 0], [0, 1 / 2, 0, 0], [0, 0, 1, 0]],
            [1 / 6, 1 / 3, 1 / 3, 1 / 6],
            [0, 1 / 2, 1 / 2, 1],
        ),
        _t(
            "three_eighths4",
            [[0, 0, 0, 0], [1 / 3, 0, 0, 0], [-1 / 3, 1, 0, 0], [1, -1, 1, 0]],
            [1 / 8, 3 / 8, 3 / 8, 1 / 8],
            [0, 1 / 3, 2 / 3, 1],
        ),
        _t(
            "ralston4",
            [
                [0, 0, 0, 0],
                [0.4, 0, 0, 0],
                [0.29697761, 0.15875964, 0, 0],
                [0.21810040, -3.05096516, 3.83286476, 0],
            ],
            [0.17476028, -0.55148066, 1.20553560, 0.17118478],
            [0, 0.4, 0.45573725, 1],
        ),
    ]
}

# Order each scheme is published as; rf_solver is labelled second order but
# its weights only satisfy the first-order condition.
ADVERTISED_ORDER = {
    "euler": 1,
    "rf_solver": 2,
    "fireflow_midpoint": 2,
    "heun2": 2,
    "midpoint2": 2,
    "ralston2": 2,
    "kutta3": 3,
    "heun3": 3,
    "ralston3": 3,
    "houwen3": 3,
    "ssprk3": 3,
    "classic4": 4,
    "three_eighths4": 4,
    "ralston4": 4,
}


def registry_names() -> list[str]:
    return list(_REGISTRY)


def registry_get(name: str) -> ButcherTableau:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise TableauError(
            f"unknown tableau {name!r}; valid names: {', '.join(_REGISTRY)}"
        ) from None


def validate_tableau(tab: ButcherTableau) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    r = tab.r
    upper = np.triu(tab.a)
    for s, j in zip(*np.nonzero(upper)):
        out.append(f"a[{s + 1},{j + 1}] = {tab.a[s, j]!r} is on/above the diagonal (not explicit)")
    res = float(np.sum(tab.b) - 1.0)
    if abs(res) > CONSISTENCY_TOL:
        out.append(f"weight sum: sum(b) - 1 = {res:.3g} (residual {abs(res):.3g})")
    for s in range(r):
        res = float(np.sum(tab.a[s]) - tab.c[s])
        if abs(res) > CONSISTENCY_TOL:
            out.append(f"row sum stage {s + 1}: sum(a[{s + 1},:]) - c[{s + 1}] = {res:.3g}")
    if tab.c[0] != 0.0:
        out.append(f"c[1] = {tab.c[0]!r}, must be 0")
    return out


def order_conditions(tab: ButcherTableau) -> list[tuple[str, int, float]]:
    """Residuals of the rooted-tree order conditions up to fourth order."""
    a, b, c = tab.a, tab.b, tab.c
    ac = a @ c
    conds = [
        ("sum b = 1", 1, b.sum() - 1.0),
        ("sum b c = 1/2", 2, b @ c - 1 / 2),
        ("sum b c^2 = 1/3", 3, b @ c**2 - 1 / 3),
        ("sum b a c = 1/6", 3, b @ ac - 1 / 6),
        ("sum b c^3 = 1/4", 4, b @ c**3 - 1 / 4),
        ("sum b c a c = 1/8", 4, (b * c) @ ac - 1 / 8),
        ("sum b a c^2 = 1/12", 4, b @ (a @ c**2) - 1 / 12),
        ("sum b a a c = 1/24", 4, b @ (a @ ac) - 1 / 24),
    ]
    return [(label, p, float(res)) for label, p, res in conds]


def classify_order(tab: ButcherTableau) -> OrderReport:
    problems = validate_tableau(tab)
    if problems:
        raise TableauError(f"cannot classify invalid tableau {tab.name!r}: {problems}")
    conds = order_conditions(tab)
    order = 0
    for p in range(1, MAX_ORDER + 1):
        if all(abs(res) < ORDER_TOL for _, q, res in conds if q == p):
            order = p
        else:
            break
    return OrderReport(tab.name, order, [(label, res) for label, _, res in conds])


def save_tableau(tab: ButcherTableau, path) -> None:
    Path(path).write_text(json.dumps(tab.to_dict(), indent=2) + "\n")


def _require(obj, key, kind, path):
    if key not in obj:
        raise TableauError(f"{path}: missing field {key!r}")
    val = obj[key]
    if kind == "int":
        if not isinstance(val, int) or isinstance(val, bool):
            raise TableauError(f"{path}: field 'r' must be an integer, got {val!r}")
    return val


def _as_vector(val, key, path):
    if not isinstance(val, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in val
    ):
        raise TableauError(f"{path}: field {key!r} must be a list of numbers")
    return val


def load_tableau(path) -> ButcherTableau:
    """Read a JSON tableau file ``{name, r, a, b, c}``.

    Invariant violations do not raise; they are emitted as
    :class:`TableauWarning` and attached to ``tableau.warnings``.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TableauError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise TableauError(f"{path}: top level must be an object")
    unknown = set(obj) - {"name", "r", "a", "b", "c"}
    if unknown:
        raise TableauError(f"{path}: unknown fields {sorted(unknown)}")
    name = _require(obj, "name", "str", path)
    r = _require(obj, "r", "int", path)
    a = _require(obj, "a", "list", path)
    b = _as_vector(_require(obj, "b", "list", path), "b", path)
    c = _as_vector(_require(obj, "c", "list", path), "c", path)
    if r < 1:
        raise TableauError(f"{path}: r must be >= 1, got {r}")
    if len(b) != r:
        raise TableauError(f"{path}: dimension mismatch, r={r} but b has {len(b)} weights")
    if len(c) != r:
        raise TableauError(f"{path}: dimension mismatch, r={r} but c has {len(c)} nodes")
    if not isinstance(a, list) or len(a) != r:
        raise TableauError(f"{path}: dimension mismatch, a must have {r} rows")
    for i, row in enumerate(a):
        _as_vector(row, f"a[{i}]", path)
        if len(row) != r:
            raise TableauError(f"{path}: dimension mismatch, a[{i}] has {len(row)} entries, expected {r}")
    tab = ButcherTableau(str(name), a, b, c)
    problems = validate_tableau(tab)
    for msg in problems:
        warnings.warn(f"{path}: {msg}", TableauWarning, stacklevel=2)
    object.__setattr__(tab, "warnings", tuple(problems))
    return tab


def resolve_tableau(spec) -> ButcherTableau:
    """Accept a tableau instance, a registry name, or a path to a JSON file."""
    if isinstance(spec, ButcherTableau):
        return spec
    spec = str(spec)
    if spec in _REGISTRY:
        return _REGISTRY[spec]
    if Path(spec).is_file():
        return load_tableau(spec)
    return registry_get(spec)
