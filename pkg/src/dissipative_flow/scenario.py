"""Scenario configuration: INI files with one section per component.

A scenario fixes the domain, initial data, constitutive model, and all
numerical knobs of one simulation.  Validation errors name the offending
entry as ``section.key``.
"""

from dataclasses import asdict, dataclass, fields, replace
import configparser
import hashlib
import io

import numpy as np

from .continuity import regularize_initial_density
from .exceptions import ConfigurationError
from .momentum import MomentumConfig, project_momentum
from .rheology import MollifierSpec, PotentialSpec, mollify
from .tensor_core import GalerkinBasis, Grid

DENSITY_PROFILES = ("constant", "cosine", "random_smooth", "tabulated")
MOMENTUM_PROFILES = ("rest", "single_mode", "random_smooth")

# INI layout: attribute -> (section, key)
LAYOUT = {
    "dim": ("scenario", "dim"),
    "cells": ("scenario", "cells"),
    "modes": ("scenario", "modes"),
    "t_end": ("scenario", "t_end"),
    "outputs": ("scenario", "outputs"),
    "seed": ("scenario", "seed"),
    "density_profile": ("density", "profile"),
    "density_mean": ("density", "mean"),
    "density_amplitude": ("density", "amplitude"),
    "density_values": ("density", "values"),
    "momentum_profile": ("momentum", "profile"),
    "momentum_amplitude": ("momentum", "amplitude"),
    "momentum_mode": ("momentum", "mode"),
    "a": ("pressure", "a"),
    "variant": ("rheology", "variant"),
    "mu": ("rheology", "mu"),
    "lam": ("rheology", "lam"),
    "q": ("rheology", "q"),
    "coercivity_offset": ("rheology", "c"),
    "custom": ("rheology", "custom"),
    "table_radii": ("rheology", "table_radii"),
    "table_values": ("rheology", "table_values"),
    "delta": ("rheology", "delta"),
    "mollifier_nodes": ("rheology", "mollifier_nodes"),
    "eps": ("continuity", "eps"),
    "window_length": ("picard", "window_length"),
    "window_nodes": ("picard", "window_nodes"),
    "max_iterations": ("picard", "max_iterations"),
    "tolerance": ("picard", "tolerance"),
    "c_audit": ("audit", "c_audit"),
}


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


@dataclass(frozen=True)
class Scenario:
    dim: int = 1
    cells: int = 64
    modes: int = 8
    t_end: float = 0.5
    outputs: int = 16
    seed: int = 0
    density_profile: str = "cosine"
    density_mean: float = 2.0
    density_amplitude: float = 0.2
    density_values: tuple = ()
    momentum_profile: str = "single_mode"
    momentum_amplitude: float = 0.5
    momentum_mode: int = 1
    a: float = 1.0
    variant: str = "quadratic"
    mu: float = 0.02
    lam: float = 0.0
    q: float = 2.0
    coercivity_offset: float = 0.0
    custom: str = ""
    table_radii: tuple = ()
    table_values: tuple = ()
    delta: float = 0.1
    mollifier_nodes: int = 15
    eps: float = 0.05
    window_length: float = None
    window_nodes: int = 16
    max_iterations: int = 100
    tolerance: float = 1e-9
    c_audit: float = 10.0

    def __post_init__(self):
        def bad(attr, msg):
            section, key = LAYOUT[attr]
            raise ConfigurationError(msg, f"{section}.{key}")

        if self.dim not in (1, 2):
            bad("dim", f"must be 1 or 2, got {self.dim}")
        if self.cells < 4:
            bad("cells", f"must be at least 4, got {self.cells}")
        if self.modes < 1:
            bad("modes", "must be at least 1")
        if not self.t_end > 0:
            bad("t_end", f"must be positive, got {self.t_end}")
        if self.outputs < 1:
            bad("outputs", "must be at least 1")
        if self.seed < 0:
            bad("seed", "must be non-negative")
        if self.density_profile not in DENSITY_PROFILES:
            bad("density_profile", f"unknown profile {self.density_profile!r}")
        if not self.density_mean > 0:
            bad("density_mean", "must be positive")
        if not 0 <= self.density_amplitude < 1:
            bad("density_amplitude", "must lie in [0, 1) to keep the density positive")
        if self.density_profile == "tabulated" and len(self.density_values) != self.cells**self.dim:
            bad("density_values", f"needs {self.cells**self.dim} values")
        if self.momentum_profile not in MOMENTUM_PROFILES:
            bad("momentum_profile", f"unknown profile {self.momentum_profile!r}")
        if not 1 <= self.momentum_mode <= self.modes:
            bad("momentum_mode", f"must lie in 1..{self.modes}")
        if not self.a > 0:
            bad("a", f"must be positive, got {self.a}")
        if not self.delta > 0:
            bad("delta", f"must be positive, got {self.delta}")
        if not self.eps >= 0:
            bad("eps", f"must be non-negative, got {self.eps}")
        if self.window_length is not None and not self.window_length > 0:
            bad("window_length", "must be positive or 'auto'")
        if self.window_nodes < 1:
            bad("window_nodes", "must be at least 1")
        if self.max_iterations < 1:
            bad("max_iterations", "must be at least 1")
        if not self.tolerance > 0:
            bad("tolerance", "must be positive")
        if not self.c_audit > 0:
            bad("c_audit", "must be positive")
        try:
            self.spec()
        except ConfigurationError as exc:
            attr = {"variant": "variant", "mu": "mu", "lam": "lam", "q": "q", "c": "coercivity_offset",
                    "func": "custom", "table": "table_values", "dim": "dim"}.get(exc.field, "variant")
            msg = str(exc).split(": ", 1)[-1]
            bad(attr, msg)
        modes = GalerkinBasis(self.dim, self.modes).max_wavenumber
        if modes >= self.cells:
            bad("cells", f"too coarse for wavenumber {modes}")

    # -- INI round trip ------------------------------------------------------
    @classmethod
    def from_ini(cls, source):
        """Parse a path or an INI string."""
        parser = configparser.ConfigParser()
        text = source
        if "\n" not in str(source):
            try:
                with open(source) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigurationError(f"cannot read {source}: {exc}") from exc
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed configuration: {exc}") from exc
        return cls.from_parser(parser)

    @classmethod
    def from_parser(cls, parser):
        known = {(s, k) for s, k in LAYOUT.values()}
        for section in parser.sections():
            if section == "sweep":
                continue
            for key in parser[section]:
                if (section, key) not in known:
                    raise ConfigurationError("unknown entry", f"{section}.{key}")
        kwargs = {}
        types = {f.name: f.default for f in fields(cls)}
        for attr, (section, key) in LAYOUT.items():
            if not parser.has_option(section, key):
                continue
            raw = parser.get(section, key).strip()
            default = types[attr]
            try:
                if attr == "window_length":
                    kwargs[attr] = None if raw.lower() == "auto" else float(raw)
                elif isinstance(default, tuple):
                    kwargs[attr] = _floats(raw)
                elif isinstance(default, bool):
                    kwargs[attr] = parser.getboolean(section, key)
                elif isinstance(default, int):
                    kwargs[attr] = int(raw)
                elif isinstance(default, float):
                    kwargs[attr] = float(raw)
                else:
                    kwargs[attr] = raw
            except ValueError as exc:
                raise ConfigurationError(f"cannot parse {raw!r}", f"{section}.{key}") from exc
        return cls(**kwargs)

    def to_ini(self):
        """Canonical INI text (every entry, fixed order)."""
        parser = configparser.ConfigParser()
        for attr, (section, key) in LAYOUT.items():
            if not parser.has_section(section):
                parser.add_section(section)
            value = getattr(self, attr)
            if attr == "window_length" and value is None:
                text = "auto"
            elif isinstance(value, tuple):
                text = ", ".join(repr(float(v)) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            parser.set(section, key, text)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self):
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def with_params(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return asdict(self)

    # -- builders ----------------------------------------------------------
    def grid(self):
        return Grid(self.dim, self.cells)

    def basis(self):
        return GalerkinBasis(self.dim, self.modes)

    def spec(self):
        if self.variant == "quadratic":
            return PotentialSpec.quadratic(self.mu, self.lam, self.dim)
        if self.variant == "power_law":
            return PotentialSpec.power_law(self.mu, self.q, self.lam, self.dim, self.coercivity_offset)
        if self.variant == "custom":
            return PotentialSpec.custom(self.custom, self.dim, self.mu, self.q, self.coercivity_offset)
        return PotentialSpec.tabulated(self.table_radii, self.table_values, self.dim, self.q,
                                       self.coercivity_offset)

    def potential(self):
        return mollify(self.spec(), MollifierSpec(self.delta, self.mollifier_nodes))

    def momentum_config(self):
        return MomentumConfig(
            a=self.a, eps=self.eps, window_length=self.window_length,
            window_nodes=self.window_nodes, max_picard=self.max_iterations,
            picard_tol=self.tolerance,
        )

    def _rng(self):
        return np.random.default_rng(self.seed)

    def initial_density(self):
        """Cell values of the initial density after clamping to ``[1/n, n]``."""
        grid = self.grid()
        x = grid.centers
        if self.density_profile == "constant":
            rho = np.full(grid.size, self.density_mean)
        elif self.density_profile == "cosine":
            rho = self.density_mean * (1 + self.density_amplitude * np.prod(np.cos(np.pi * x), axis=1))
        elif self.density_profile == "random_smooth":
            rng = np.random.default_rng([self.seed, 1])
            shape = np.zeros(grid.size)
            for k in range(1, 4):
                shape += rng.uniform(-1, 1) * np.prod(np.cos(k * np.pi * x), axis=1) / k
            shape /= max(1.0, float(np.max(np.abs(shape))))
            rho = self.density_mean * (1 + self.density_amplitude * shape)
        else:
            rho = np.asarray(self.density_values, dtype=float)
        return regularize_initial_density(rho, max(self.modes, 1))

    def initial_momentum(self, rho=None):
        """Momentum field ``(cells, d)``: ``rho`` times a sine-mode velocity."""
        grid = self.grid()
        basis = self.basis()
        rho = self.initial_density() if rho is None else rho
        if self.momentum_profile == "rest":
            return np.zeros((grid.size, grid.dim))
        W = basis.values(grid.centers)
        if self.momentum_profile == "single_mode":
            u = self.momentum_amplitude * W[self.momentum_mode - 1]
        else:
            rng = np.random.default_rng([self.seed, 2])
            count = min(basis.n_modes, 2 * self.dim)
            coeffs = rng.uniform(-1, 1, count) / np.arange(1, count + 1)
            u = self.momentum_amplitude * np.einsum("i,ipa->pa", coeffs, W[:count])
        return rho[:, None] * u

    def initial_data(self):
        """Columns ``[rho, m_1, ..., m_d]`` at the cell centres."""
        rho = self.initial_density()
        return np.column_stack([rho, self.initial_momentum(rho)])

    def m0_star(self):
        return project_momentum(self.initial_momentum(), self.basis(), self.grid())


REST = """
[scenario]
dim = 1
cells = 64
modes = 4
t_end = 0.5
[density]
profile = constant
mean = 2.0
[momentum]
profile = rest
"""

SINGLE_MODE = """
[scenario]
dim = 1
cells = 64
modes = 8
t_end = 0.5
[density]
profile = cosine
mean = 2.0
amplitude = 0.1
[momentum]
profile = single_mode
amplitude = 0.5
[rheology]
variant = quadratic
mu = 0.02
delta = 0.1
[continuity]
eps = 0.05
"""

PRESETS = {"rest": REST, "single_mode": SINGLE_MODE}


def preset(name):
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return Scenario.from_ini(PRESETS[name])
