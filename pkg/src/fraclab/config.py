"""
Experiment configuration.

A config is a YAML file parsed into nested dataclasses. Every section has a
``from_dict(data, path)`` classmethod that validates its keys and reports
problems as :class:`~fraclab.errors.ConfigError` tagged with the full key
path (``domains.W1.radius``), and a ``to_dict()`` that serializes it back, so
that parse -> serialize -> parse is idempotent.

Missing keys take the defaults in :mod:`fraclab.lab_vars`; a config file only
needs to state what differs from :func:`default_config`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from . import lab_vars
from .dnmap import ExteriorDictionary, make_dictionary
from .errors import ConfigError, FracLabError
from .geometry import BumpSpec, Geometry, Label, NodeSet, bump, make_nodeset
from .grid import Grid, GridFunction
from .pdo import (
    ForwardProblem,
    PDOCoefficients,
    dump_coefficient,
    gaussian_coefficient,
    polynomial_coefficient,
)
from .recover import RecoveryConfig
from .utils import alpha_key, alpha_order, parse_alpha

logger = logging.getLogger("fraclab.config")

DOMAIN_LABELS = (Label.OMEGA.value, Label.W1.value, Label.W2.value)
FAMILIES = ("gaussian", "polynomial", "dump")

# keys each coefficient family accepts besides ``family`` and ``collar``
_FAMILY_KEYS = {
    "gaussian": ("center", "width", "amplitude"),
    "polynomial": ("coefficients",),
    "dump": ("path",),
}

DEFAULTS: dict[str, Any] = {
    "domains": {
        "Omega": {"shape": "ball", "center": 0.0, "radius": 1.0},
        "W1": {"shape": "ball", "center": -1.5, "radius": 0.4},
        "W2": {"shape": "ball", "center": 1.5, "radius": 0.4},
    },
    # by order; placed on the first axis
    "coefficients": {
        0: {"family": "gaussian", "center": 0.3, "width": 0.15, "amplitude": 1.0},
        1: {"family": "gaussian", "center": -0.2, "width": 0.15, "amplitude": 0.5},
    },
}


# validation helpers


def _join(path: str, key: Any) -> str:
    return f"{path}.{key}" if path else str(key)


def _mapping(data: Any, path: str) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
    return data


def _reject_unknown(data: dict, allowed, path: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(_join(path, key), f"unknown key; expected one of {sorted(allowed)}")


def _keys_of(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _number(
    value: Any,
    path: str,
    kind: type = float,
    positive: bool = False,
    minimum: float | None = None,
    optional: bool = False,
):
    if value is None:
        if optional:
            return None
        raise ConfigError(path, "a value is required")
    if isinstance(value, str):
        # YAML 1.1 reads 1e-8 (no dot) as a string
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(path, f"expected a number, got {value!r}") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, f"must be finite, got {value}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(path, f"expected an integer, got {value}")
        value = int(value)
    else:
        value = float(value)
    if positive and value <= 0:
        raise ConfigError(path, f"must be positive, got {value}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return value


def _flag(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true or false, got {value!r}")
    return value


def _choice(value: Any, path: str, choices) -> str:
    if value not in choices:
        raise ConfigError(path, f"expected one of {list(choices)}, got {value!r}")
    return str(value)


def _vector(value: Any, path: str, n: int, optional: bool = False) -> list[float] | None:
    """A point or per-axis length; scalars are broadcast to all ``n`` axes."""
    if value is None and optional:
        return None
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ConfigError(path, f"expected {n} entries, got {len(value)}")
        return [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]
    return [_number(value, path)] * n


def _wrap(path: str, func, *args, **kwargs):
    """Call ``func`` and re-raise library errors as ConfigError at ``path``."""
    try:
        return func(*args, **kwargs)
    except ConfigError:
        raise
    except (FracLabError, ValueError, OSError) as e:
        raise ConfigError(path, str(e)) from e


# sections


@dataclass
class GridSpec:
    n: int = 1
    N: int = 128
    L: float = 2.0

    @classmethod
    def from_dict(cls, data: Any, path: str = "grid") -> GridSpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()
        spec = cls(
            n=_number(data.get("n", d.n), _join(path, "n"), kind=int),
            N=_number(data.get("N", d.N), _join(path, "N"), kind=int),
            L=_number(data.get("L", d.L), _join(path, "L"), positive=True),
        )
        _wrap(path, spec.build)
        return spec

    def build(self) -> Grid:
        return Grid(self.n, self.N, self.L)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ShapeSpec:
    """Ball (``radius``) or box (``half_widths``) node set."""

    shape: str = "ball"
    center: list[float] = field(default_factory=lambda: [0.0])
    radius: float | None = 1.0
    half_widths: list[float] | None = None

    @classmethod
    def from_dict(cls, data: Any, path: str, n: int) -> ShapeSpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        shape = _choice(data.get("shape", "ball"), _join(path, "shape"), ("ball", "box"))
        center = _vector(data.get("center", 0.0), _join(path, "center"), n)
        if shape == "ball":
            if data.get("half_widths") is not None:
                raise ConfigError(_join(path, "half_widths"), "not used by a ball")
            radius = _number(data.get("radius"), _join(path, "radius"), positive=True)
            return cls(shape, center, radius, None)
        if data.get("radius") is not None:
            raise ConfigError(_join(path, "radius"), "not used by a box")
        half_widths = _vector(data.get("half_widths"), _join(path, "half_widths"), n)
        for i, w in enumerate(half_widths):
            if w <= 0:
                raise ConfigError(f"{path}.half_widths[{i}]", f"must be positive, got {w}")
        return cls(shape, center, None, half_widths)

    def nodeset(self, grid: Grid, label: str) -> NodeSet:
        return make_nodeset(
            grid,
            self.shape,
            self.center,
            radius=self.radius,
            half_widths=self.half_widths,
            label=label,
        )

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"shape": self.shape, "center": list(self.center)}
        if self.shape == "ball":
            out["radius"] = self.radius
        else:
            out["half_widths"] = list(self.half_widths)
        return out


@dataclass
class CoefficientSpec:
    """One coefficient a_α: a Gaussian, a polynomial Σ c_β x^β, or a binary grid dump.

    Gaussians and polynomials are multiplied by the Ω cutoff with collar ``collar``
    (default 8h); dumps are taken as they are and must already vanish outside Ω.
    """

    family: str = "gaussian"
    center: list[float] | None = None
    width: float | None = None
    amplitude: float = 1.0
    coefficients: dict[str, float] | None = None
    path: str | None = None
    collar: float | None = None

    @classmethod
    def from_dict(cls, data: Any, path: str, n: int) -> CoefficientSpec:
        data = _mapping(data, path)
        family = _choice(data.get("family", "gaussian"), _join(path, "family"), FAMILIES)
        allowed = ("family", *_FAMILY_KEYS[family])
        if family != "dump":
            allowed += ("collar",)
        _reject_unknown(data, allowed, path)
        collar = _number(data.get("collar"), _join(path, "collar"), positive=True, optional=True)
        if family == "gaussian":
            return cls(
                family,
                center=_vector(data.get("center", 0.0), _join(path, "center"), n),
                width=_number(data.get("width"), _join(path, "width"), positive=True),
                amplitude=_number(data.get("amplitude", 1.0), _join(path, "amplitude")),
                collar=collar,
            )
        if family == "polynomial":
            terms = _mapping(data.get("coefficients"), _join(path, "coefficients"))
            if not terms:
                raise ConfigError(_join(path, "coefficients"), "at least one term is required")
            parsed = {}
            for key, c in terms.items():
                key_path = _join(_join(path, "coefficients"), key)
                beta = _wrap(key_path, parse_alpha, key, n)
                parsed[alpha_key(beta)] = _number(c, key_path)
            return cls(family, coefficients=parsed, collar=collar)
        dump_path = data.get("path")
        if not isinstance(dump_path, str) or not dump_path:
            raise ConfigError(_join(path, "path"), f"expected a file path, got {dump_path!r}")
        return cls(family, path=dump_path)

    def build(self, omega: NodeSet) -> GridFunction:
        if self.family == "gaussian":
            return gaussian_coefficient(omega, self.center, self.width, self.amplitude, self.collar)
        if self.family == "polynomial":
            terms = {parse_alpha(k, omega.grid.n): c for k, c in self.coefficients.items()}
            return polynomial_coefficient(omega, terms, self.collar)
        return dump_coefficient(self.path, omega.grid)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"family": self.family}
        for key in _FAMILY_KEYS[self.family]:
            value = getattr(self, key)
            out[key] = dict(value) if isinstance(value, dict) else value
        if self.collar is not None:
            out["collar"] = self.collar
        return out


@dataclass
class DictionarySpec:
    radius: float | None = None
    stride: int = lab_vars.DICT_STRIDE
    normalize: bool = True

    @classmethod
    def from_dict(cls, data: Any, path: str = "dictionary") -> DictionarySpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()
        return cls(
            radius=_number(data.get("radius"), _join(path, "radius"), positive=True, optional=True),
            stride=_number(
                data.get("stride", d.stride), _join(path, "stride"), kind=int, minimum=1
            ),
            normalize=_flag(data.get("normalize", d.normalize), _join(path, "normalize")),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolverSpec:
    method: str = "auto"
    dense_tol: float = lab_vars.DENSE_TOL
    iterative_tol: float = lab_vars.ITERATIVE_TOL
    max_condition: float = lab_vars.MAX_CONDITION

    @classmethod
    def from_dict(cls, data: Any, path: str = "solver") -> SolverSpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()
        return cls(
            method=_choice(
                data.get("method", d.method), _join(path, "method"), ("auto", "dense", "iterative")
            ),
            dense_tol=_number(
                data.get("dense_tol", d.dense_tol), _join(path, "dense_tol"), positive=True
            ),
            iterative_tol=_number(
                data.get("iterative_tol", d.iterative_tol),
                _join(path, "iterative_tol"),
                positive=True,
            ),
            max_condition=_number(
                data.get("max_condition", d.max_condition),
                _join(path, "max_condition"),
                positive=True,
            ),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BumpConfig:
    """Unit-mass bump owned by a labelled set; centre and radius default to the set's
    centre and half its radius (or smallest half-width)."""

    host: str = Label.W1.value
    center: list[float] | None = None
    radius: float | None = None

    @classmethod
    def from_dict(cls, data: Any, path: str, n: int, host: str) -> BumpConfig:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        return cls(
            host=_choice(data.get("host", host), _join(path, "host"), DOMAIN_LABELS),
            center=_vector(data.get("center"), _join(path, "center"), n, optional=True),
            radius=_number(data.get("radius"), _join(path, "radius"), positive=True, optional=True),
        )

    def build(self, geometry: Geometry) -> GridFunction:
        host = geometry[self.host]
        center = host.center if self.center is None else self.center
        if self.radius is not None:
            radius = self.radius
        elif host.shape == "ball":
            radius = 0.5 * host.radius
        else:
            radius = 0.5 * min(host.half_widths)
        return bump(BumpSpec(tuple(center), radius), host)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardSpec:
    datum: BumpConfig = field(default_factory=BumpConfig)
    manufactured: bool = False
    length_scale: float = 0.2

    @classmethod
    def from_dict(cls, data: Any, path: str, n: int) -> ForwardSpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()
        return cls(
            datum=BumpConfig.from_dict(data.get("datum"), _join(path, "datum"), n, Label.W1.value),
            manufactured=_flag(
                data.get("manufactured", d.manufactured), _join(path, "manufactured")
            ),
            length_scale=_number(
                data.get("length_scale", d.length_scale), _join(path, "length_scale"), positive=True
            ),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RungeSpec:
    """Nested-dictionary Runge study; ``sizes`` are prefix lengths of one dictionary."""

    host: str = Label.W1.value
    sizes: list[int] = field(default_factory=lambda: [8, 16, 32])
    lam_reg: float | None = 0.0
    norm: str = "hs"
    adjoint: bool = False
    target: BumpConfig = field(default_factory=lambda: BumpConfig(host=Label.OMEGA.value))

    @classmethod
    def from_dict(cls, data: Any, path: str, n: int) -> RungeSpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()
        sizes = data.get("sizes", d.sizes)
        if not isinstance(sizes, list) or not sizes:
            raise ConfigError(_join(path, "sizes"), f"expected a non-empty list, got {sizes!r}")
        sizes = [_number(k, f"{path}.sizes[{i}]", kind=int, minimum=1) for i, k in enumerate(sizes)]
        if sizes != sorted(set(sizes)):
            raise ConfigError(
                _join(path, "sizes"), f"sizes must be strictly increasing, got {sizes}"
            )
        target = BumpConfig.from_dict(
            data.get("target"), _join(path, "target"), n, Label.OMEGA.value
        )
        if target.host != Label.OMEGA.value:
            raise ConfigError(_join(path, "target.host"), "Runge targets must live in Omega")
        hosts = (Label.W1.value, Label.W2.value)
        host = _choice(data.get("host", d.host), _join(path, "host"), hosts)
        return cls(
            host=host,
            sizes=sizes,
            lam_reg=_number(
                data.get("lam_reg", d.lam_reg), _join(path, "lam_reg"), minimum=0.0, optional=True
            ),
            norm=_choice(data.get("norm", d.norm), _join(path, "norm"), ("hs", "l2")),
            adjoint=_flag(data.get("adjoint", d.adjoint), _join(path, "adjoint")),
            target=target,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AlessandriniSpec:
    """Randomized identity checks: ``draws`` cases with P1 ≠ P2 and ``pairs`` with P1 = P2."""

    draws: int = 10
    pairs: int = 5
    amplitude: float = 0.3
    length_scale: float = 0.2

    @classmethod
    def from_dict(cls, data: Any, path: str = "alessandrini") -> AlessandriniSpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()
        return cls(
            draws=_number(data.get("draws", d.draws), _join(path, "draws"), kind=int, minimum=0),
            pairs=_number(data.get("pairs", d.pairs), _join(path, "pairs"), kind=int, minimum=0),
            amplitude=_number(
                data.get("amplitude", d.amplitude), _join(path, "amplitude"), positive=True
            ),
            length_scale=_number(
                data.get("length_scale", d.length_scale), _join(path, "length_scale"), positive=True
            ),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RecoverSpec:
    mode: str = "dn"
    rho: float | None = None
    cutoff_width: float | None = None
    lam_reg: float | None = None
    norm: str = "hs"
    peel: bool = True
    fixed_point_sweeps: int = lab_vars.FIXED_POINT_SWEEPS
    runge_tolerance: float = lab_vars.RUNGE_FLAG_TOL
    error_tolerance: float = lab_vars.RECOVERY_ERROR_TOL
    reverse_ties: bool = False

    @classmethod
    def from_dict(cls, data: Any, path: str = "recover") -> RecoverSpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()

        def length(key):
            return _number(data.get(key), _join(path, key), positive=True, optional=True)

        return cls(
            mode=_choice(data.get("mode", d.mode), _join(path, "mode"), ("dn", "oracle")),
            rho=length("rho"),
            cutoff_width=length("cutoff_width"),
            lam_reg=_number(
                data.get("lam_reg"), _join(path, "lam_reg"), minimum=0.0, optional=True
            ),
            norm=_choice(data.get("norm", d.norm), _join(path, "norm"), ("hs", "l2")),
            peel=_flag(data.get("peel", d.peel), _join(path, "peel")),
            fixed_point_sweeps=_number(
                data.get("fixed_point_sweeps", d.fixed_point_sweeps),
                _join(path, "fixed_point_sweeps"),
                kind=int,
                minimum=0,
            ),
            runge_tolerance=_number(
                data.get("runge_tolerance", d.runge_tolerance),
                _join(path, "runge_tolerance"),
                positive=True,
            ),
            error_tolerance=_number(
                data.get("error_tolerance", d.error_tolerance),
                _join(path, "error_tolerance"),
                positive=True,
            ),
            reverse_ties=_flag(
                data.get("reverse_ties", d.reverse_ties), _join(path, "reverse_ties")
            ),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VerifySpec:
    suites: list[str] = field(default_factory=lambda: list(lab_vars.VERIFY_SUITES))
    samples: int = 20

    @classmethod
    def from_dict(cls, data: Any, path: str = "verify") -> VerifySpec:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()
        suites = data.get("suites", d.suites)
        if not isinstance(suites, list):
            raise ConfigError(_join(path, "suites"), f"expected a list, got {suites!r}")
        for i, name in enumerate(suites):
            _choice(name, f"{path}.suites[{i}]", lab_vars.VERIFY_SUITES)
        return cls(
            suites=list(suites),
            samples=_number(
                data.get("samples", d.samples), _join(path, "samples"), kind=int, minimum=1
            ),
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _default_coefficients(n: int, m: int) -> dict:
    return {
        alpha_key((order,) + (0,) * (n - 1)): spec
        for order, spec in DEFAULTS["coefficients"].items()
        if order <= m
    }


def _coefficient_specs(data: Any, path: str, n: int, m: int) -> dict[str, CoefficientSpec]:
    out = {}
    for key, spec in _mapping(data, path).items():
        key_path = _join(path, key)
        alpha = _wrap(key_path, parse_alpha, key, n)
        if alpha_order(alpha) > m:
            raise ConfigError(key_path, f"|α| = {alpha_order(alpha)} exceeds m = {m}")
        out[alpha_key(alpha)] = CoefficientSpec.from_dict(spec, key_path, n)
    return out


@dataclass
class ExperimentConfig:
    """Full experiment description; build it with :meth:`from_dict` or :func:`load_config`."""

    grid: GridSpec = field(default_factory=GridSpec)
    s: float = 0.7
    m: int = 1
    lambda_shift: float = 0.0
    delta: float = lab_vars.DEFAULT_DELTA
    seed: int = 1234
    separation: float | None = None
    domains: dict[str, ShapeSpec] = field(default_factory=dict)
    coefficients: dict[str, CoefficientSpec] = field(default_factory=dict)
    reference: dict[str, CoefficientSpec] = field(default_factory=dict)
    dictionary: DictionarySpec = field(default_factory=DictionarySpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    forward: ForwardSpec = field(default_factory=ForwardSpec)
    runge: RungeSpec = field(default_factory=RungeSpec)
    alessandrini: AlessandriniSpec = field(default_factory=AlessandriniSpec)
    recover: RecoverSpec = field(default_factory=RecoverSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)

    @classmethod
    def from_dict(cls, data: Any, path: str = "") -> ExperimentConfig:
        data = _mapping(data, path)
        _reject_unknown(data, _keys_of(cls), path)
        d = cls()
        grid = GridSpec.from_dict(data.get("grid"), _join(path, "grid"))
        n = grid.n

        s = _number(data.get("s", d.s), _join(path, "s"), positive=True)
        if s == round(s):
            raise ConfigError(_join(path, "s"), f"s = {s:g} must be non-integer")
        m = _number(data.get("m", d.m), _join(path, "m"), kind=int, minimum=0)
        if m >= 2 * s:
            raise ConfigError(_join(path, "m"), f"m = {m} must satisfy m < 2s = {2 * s:g}")

        domains_data = _mapping(data.get("domains", DEFAULTS["domains"]), _join(path, "domains"))
        _reject_unknown(domains_data, DOMAIN_LABELS, _join(path, "domains"))
        domains = {}
        for label in DOMAIN_LABELS:
            if label not in domains_data:
                raise ConfigError(_join(path, f"domains.{label}"), "required")
            key_path = _join(path, f"domains.{label}")
            domains[label] = ShapeSpec.from_dict(domains_data[label], key_path, n)

        cfg = cls(
            grid=grid,
            s=s,
            m=m,
            lambda_shift=_number(
                data.get("lambda_shift", d.lambda_shift), _join(path, "lambda_shift")
            ),
            delta=_number(data.get("delta", d.delta), _join(path, "delta"), positive=True),
            seed=_number(data.get("seed", d.seed), _join(path, "seed"), kind=int, minimum=0),
            separation=_number(
                data.get("separation"), _join(path, "separation"), positive=True, optional=True
            ),
            domains=domains,
            coefficients=_coefficient_specs(
                data.get("coefficients", _default_coefficients(n, m)),
                _join(path, "coefficients"),
                n,
                m,
            ),
            reference=_coefficient_specs(data.get("reference"), _join(path, "reference"), n, m),
            dictionary=DictionarySpec.from_dict(data.get("dictionary"), _join(path, "dictionary")),
            solver=SolverSpec.from_dict(data.get("solver"), _join(path, "solver")),
            forward=ForwardSpec.from_dict(data.get("forward"), _join(path, "forward"), n),
            runge=RungeSpec.from_dict(data.get("runge"), _join(path, "runge"), n),
            alessandrini=AlessandriniSpec.from_dict(
                data.get("alessandrini"), _join(path, "alessandrini")
            ),
            recover=RecoverSpec.from_dict(data.get("recover"), _join(path, "recover")),
            verify=VerifySpec.from_dict(data.get("verify"), _join(path, "verify")),
        )
        # empty or overlapping sets
        cfg.geometry(grid.build())
        return cfg

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "s": self.s,
            "m": self.m,
            "lambda_shift": self.lambda_shift,
            "delta": self.delta,
            "seed": self.seed,
            "separation": self.separation,
            "domains": {k: v.to_dict() for k, v in self.domains.items()},
            "coefficients": {k: v.to_dict() for k, v in self.coefficients.items()},
            "reference": {k: v.to_dict() for k, v in self.reference.items()},
            "dictionary": self.dictionary.to_dict(),
            "solver": self.solver.to_dict(),
            "forward": self.forward.to_dict(),
            "runge": self.runge.to_dict(),
            "alessandrini": self.alessandrini.to_dict(),
            "recover": self.recover.to_dict(),
            "verify": self.verify.to_dict(),
        }

    def geometry(self, grid: Grid) -> Geometry:
        geometry = Geometry(grid, self.separation)
        for label in DOMAIN_LABELS:
            path = f"domains.{label}"
            nodeset = _wrap(path, self.domains[label].nodeset, grid, label)
            _wrap(path, geometry.register, nodeset)
        return geometry

    def _coefficients(
        self, specs: dict[str, CoefficientSpec], omega: NodeSet, path: str
    ) -> PDOCoefficients:
        entries = {}
        for key, spec in specs.items():
            entries[parse_alpha(key, omega.grid.n)] = _wrap(_join(path, key), spec.build, omega)
        return PDOCoefficients(omega.grid, self.m, entries)

    def _problem(self, coeffs: PDOCoefficients, omega: NodeSet, path: str) -> ForwardProblem:
        return _wrap(
            path,
            ForwardProblem,
            omega.grid,
            self.s,
            coeffs,
            omega,
            lam=self.lambda_shift,
            method=self.solver.method,
            dense_tol=self.solver.dense_tol,
            iterative_tol=self.solver.iterative_tol,
            max_condition=self.solver.max_condition,
        )

    def build(self) -> Experiment:
        grid = _wrap("grid", self.grid.build)
        geometry = self.geometry(grid)
        omega = geometry.omega
        coeffs = self._coefficients(self.coefficients, omega, "coefficients")
        problem = self._problem(coeffs, omega, "coefficients")
        reference_coeffs = self._coefficients(self.reference, omega, "reference")
        reference = self._problem(reference_coeffs, omega, "reference")
        logger.debug(f"Built experiment on {grid}: #Ω = {omega.count}, m = {self.m}, s = {self.s}")
        return Experiment(self, grid, geometry, problem, reference)


@dataclass(frozen=True, eq=False)
class Experiment:
    """Built objects of a config: grid, labelled sets, the unknown and reference problems."""

    config: ExperimentConfig
    grid: Grid
    geometry: Geometry
    problem: ForwardProblem
    reference: ForwardProblem

    @property
    def omega(self) -> NodeSet:
        return self.geometry.omega

    def dictionary(self, label: str, stride: int | None = None) -> ExteriorDictionary:
        spec = self.config.dictionary
        stride = spec.stride if stride is None else stride
        return _wrap(
            "dictionary",
            make_dictionary,
            self.geometry[label],
            radius=spec.radius,
            stride=stride,
            normalize=spec.normalize,
        )

    def bump(self, spec: BumpConfig, path: str) -> GridFunction:
        return _wrap(path, spec.build, self.geometry)

    def recovery_config(self, progress: bool = False) -> RecoveryConfig:
        spec = self.config.recover
        return RecoveryConfig(
            m=self.config.m,
            rho=spec.rho,
            cutoff_width=spec.cutoff_width,
            lam_reg=spec.lam_reg,
            norm=spec.norm,
            peel=spec.peel,
            fixed_point_sweeps=spec.fixed_point_sweeps,
            runge_tolerance=spec.runge_tolerance,
            reverse_ties=spec.reverse_ties,
            progress=progress,
        )

    def coarsened(self, max_size: int) -> Experiment:
        """The same experiment on the finest grid with N^n <= ``max_size`` (halving N)."""
        N = self.grid.N
        while N**self.grid.n > max_size and N // 2 >= 16 and (N // 2) % 2 == 0:
            N //= 2
        if N == self.grid.N:
            return self
        logger.info(f"Coarsening grid from N = {self.grid.N} to N = {N}")
        return replace(self.config, grid=replace(self.config.grid, N=N)).build()


def default_config() -> ExperimentConfig:
    return ExperimentConfig.from_dict({})


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open() as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e.strerror}") from e
    except yaml.YAMLError as e:
        raise ConfigError(str(path), f"invalid YAML: {e}") from e
    cfg = ExperimentConfig.from_dict(data)
    logger.info(f"Loaded config {path}")
    return cfg


def dump_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
    return path
