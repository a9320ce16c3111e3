"""
Run configuration for the benchmark programs.

A run is fully described by one INI file:

    [domain]          x_minus, x_plus
    [background]      kappa2
    [region NAME]     x0, x1, z0, z1, kappa2   (any number, in order)
    [exterior]        kappa_minus, kappa_plus
    [discretization]  n_z, n_x
    [preconditioner]  n_z, n_x, kbar, boundary_refinement, n_z_list, compare_uniform
    [solver]          method, tol, restart, maxit
    [resinv]          sigma, gamma0, v0, seed, outer_tol, max_outer,
                      inner_policy, inner_tol, inner_c, start_sweeps
    [scaling]         sizes, n_z_list, methods, max_seconds, max_unknowns
    [output]          dir
    [cache]           path

Individual keys may be overridden with "section.key=value" strings.
"""

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

from wepsmw.discretization import DiscreteProblem
from wepsmw.generic import ConfigError, GridTooCoarse, OddGridRequired
from wepsmw.geometry import Region, WaveguideGeometry
from wepsmw.resinv import InnerPolicy, ResinvSettings

WORKERS_ENV: str = "WEPSMW_WORKERS"

_METHODS = ("gmres", "bicgstab")


def parse_complex(text: str) -> complex:
    """
    Parse "a+bj", "a+bi" or a plain real number.
    """
    cleaned = text.strip().replace(" ", "").replace("i", "j")
    try:
        return complex(cleaned)
    except ValueError:
        raise ConfigError(f"{text!r} is not a complex number") from None


def parse_list(text: str, kind=int) -> List:
    """
    Parse a comma separated list; an empty string is an empty list.
    """
    try:
        return [kind(item) for item in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{text!r} is not a list of {kind.__name__}") from None


def apply_overrides(parser: configparser.ConfigParser, overrides: Iterable[str]) -> None:
    """
    Apply "section.key=value" overrides to a parsed configuration.
    """
    for override in overrides:
        name, sep, value = override.partition("=")
        section, dot, key = name.strip().rpartition(".")
        if not sep or not dot or not section or not key:
            raise ConfigError(f"override {override!r} is not of the form section.key=value")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())


@dataclass
class RunConfig:
    """
    Validated settings of one benchmark run.
    """

    geometry: WaveguideGeometry
    n_z: int
    n_x: int
    coarse_n_z: int = 21
    coarse_n_x: int = 25
    kbar: Optional[float] = None
    boundary_refinement: bool = True
    coarse_n_z_list: List[int] = field(default_factory=list)
    compare_uniform: bool = False
    method: str = "gmres"
    tol: float = 1e-10
    restart: int = 100
    maxit: int = 1000
    sigma: complex = complex(-0.5, -0.4)
    gamma0: Optional[complex] = None
    v0: str = "default"
    seed: int = 0
    outer_tol: float = 1e-10
    max_outer: int = 50
    inner_policy: InnerPolicy = InnerPolicy.FIXED
    inner_tol: float = 1e-12
    inner_c: float = 0.1
    start_sweeps: int = 2
    sizes: List[int] = field(default_factory=list)
    scaling_n_z_list: List[int] = field(default_factory=list)
    scaling_methods: List[str] = field(default_factory=lambda: ["gmres"])
    max_seconds: float = 3600.0
    max_unknowns: int = 5_000_000
    out_dir: str = "results"
    cache_path: Optional[str] = None
    workers: int = 1

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        """
        Reject settings no run could use.
        """
        if self.n_z % 2 == 0:
            raise OddGridRequired(f"discretization.n_z = {self.n_z} must be odd")
        if self.n_x < 2:
            raise ConfigError(f"discretization.n_x = {self.n_x} must be at least 2")
        for coarse in [self.coarse_n_z] + self.coarse_n_z_list:
            if not 1 <= coarse <= self.n_z:
                raise GridTooCoarse(
                    f"preconditioner.n_z = {coarse} must lie in [1, n_z = {self.n_z}]"
                )
        expected = self.coarse_n_z + 4 if self.boundary_refinement else self.coarse_n_z
        if self.coarse_n_x != expected:
            raise ConfigError(
                f"preconditioner.n_x = {self.coarse_n_x} does not match the layout "
                f"(expected {expected})"
            )
        if self.sigma.real >= 0:
            raise ConfigError(f"resinv.sigma = {self.sigma} must have a negative real part")
        if self.gamma0 is not None and self.gamma0.real >= 0:
            raise ConfigError(f"resinv.gamma0 = {self.gamma0} must have a negative real part")
        for method in [self.method] + self.scaling_methods:
            if method not in _METHODS:
                raise ConfigError(f"unknown solver method {method!r}")
        if self.v0 not in ("default", "random"):
            raise ConfigError(f"resinv.v0 = {self.v0!r} must be 'default' or 'random'")
        if self.tol < 0 or self.outer_tol <= 0 or self.inner_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.restart < 1 or self.maxit < 1 or self.max_outer < 1:
            raise ConfigError("restart, maxit and max_outer must be positive")
        if self.start_sweeps < 0:
            raise ConfigError(f"resinv.start_sweeps = {self.start_sweeps} must be non-negative")
        if self.workers < 1:
            raise ConfigError(f"workers = {self.workers} must be positive")
        for size in self.sizes:
            if size % 2 == 0:
                raise OddGridRequired(f"scaling size n_z = {size} must be odd")

    @property
    def coarse_list(self) -> List[int]:
        return self.coarse_n_z_list or [self.coarse_n_z]

    def problem(self) -> DiscreteProblem:
        return DiscreteProblem(self.geometry, self.n_z, self.n_x, self.kbar)

    def settings(self, method: Optional[str] = None) -> ResinvSettings:
        return ResinvSettings(
            solver=method or self.method,
            restart=self.restart,
            maxit=self.maxit,
            inner_tol=self.inner_tol,
            inner_c=self.inner_c,
            start_sweeps=self.start_sweeps,
            coarse_n_z=self.coarse_n_z,
            boundary_refinement=self.boundary_refinement,
            workers=self.workers,
        )

    def resized(
        self, n_z: int, coarse_n_z: Optional[int] = None, n_x: Optional[int] = None
    ) -> "RunConfig":
        """
        Copy with another fine grid (n_x defaults to n_z + 4) and coarse grid.
        """
        coarse = self.coarse_n_z if coarse_n_z is None else coarse_n_z
        return dataclasses.replace(
            self,
            n_z=n_z,
            n_x=n_z + 4 if n_x is None else n_x,
            coarse_n_z=coarse,
            coarse_n_x=coarse + 4 if self.boundary_refinement else coarse,
            coarse_n_z_list=[],
        )


def _geometry(parser: configparser.ConfigParser) -> WaveguideGeometry:
    regions = []
    for section in parser.sections():
        kind, _, name = section.partition(" ")
        if kind != "region":
            continue
        item = parser[section]
        regions.append(
            Region(
                item.getfloat("x0"),
                item.getfloat("x1"),
                item.getfloat("z0", 0.0),
                item.getfloat("z1", 1.0),
                item.getfloat("kappa2"),
                name=name.strip(),
            )
        )
    return WaveguideGeometry(
        parser.getfloat("domain", "x_minus"),
        parser.getfloat("domain", "x_plus"),
        parser.getfloat("background", "kappa2"),
        parser.getfloat("exterior", "kappa_minus"),
        parser.getfloat("exterior", "kappa_plus"),
        regions,
    )


def _flag(text: str) -> bool:
    value = str(text).strip().lower()
    if value not in configparser.ConfigParser.BOOLEAN_STATES:
        raise ConfigError(f"{text!r} is not a boolean")
    return configparser.ConfigParser.BOOLEAN_STATES[value]


def _workers(explicit: Optional[int]) -> int:
    if explicit is not None:
        return explicit
    try:
        return int(os.environ.get(WORKERS_ENV, 1))
    except ValueError:
        raise ConfigError(
            f"{WORKERS_ENV} = {os.environ[WORKERS_ENV]!r} is not an integer"
        ) from None


def parse_config(
    parser: configparser.ConfigParser,
    workers: Optional[int] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> RunConfig:
    """
    Build a RunConfig from an already parsed (and overridden) INI file.
    """
    try:
        geometry = _geometry(parser)
        disc = parser["discretization"] if parser.has_section("discretization") else {}
        n_z = int(disc.get("n_z", 105))
        n_x = int(disc.get("n_x", n_z + 4))

        pre = parser["preconditioner"] if parser.has_section("preconditioner") else {}
        refinement = _flag(pre.get("boundary_refinement", "true"))
        coarse_n_z = int(pre.get("n_z", 21))
        coarse_n_x = int(pre.get("n_x", coarse_n_z + 4 if refinement else coarse_n_z))
        kbar_text = str(pre.get("kbar", "mean")).strip()
        kbar = None if kbar_text == "mean" else float(kbar_text)

        solver = parser["solver"] if parser.has_section("solver") else {}
        res = parser["resinv"] if parser.has_section("resinv") else {}
        scaling = parser["scaling"] if parser.has_section("scaling") else {}
        gamma0 = str(res.get("gamma0", "sigma")).strip()

        return RunConfig(
            geometry=geometry,
            n_z=n_z,
            n_x=n_x,
            coarse_n_z=coarse_n_z,
            coarse_n_x=coarse_n_x,
            kbar=kbar,
            boundary_refinement=refinement,
            coarse_n_z_list=parse_list(str(pre.get("n_z_list", ""))),
            compare_uniform=_flag(pre.get("compare_uniform", "false")),
            method=str(solver.get("method", "gmres")).strip(),
            tol=float(solver.get("tol", 1e-10)),
            restart=int(solver.get("restart", 100)),
            maxit=int(solver.get("maxit", 1000)),
            sigma=parse_complex(str(res.get("sigma", "-0.5-0.4j"))),
            gamma0=None if gamma0 == "sigma" else parse_complex(gamma0),
            v0=str(res.get("v0", "default")).strip(),
            seed=int(res.get("seed", 0)) if seed is None else seed,
            outer_tol=float(res.get("outer_tol", 1e-10)),
            max_outer=int(res.get("max_outer", 50)),
            inner_policy=InnerPolicy(str(res.get("inner_policy", "fixed")).strip()),
            inner_tol=float(res.get("inner_tol", 1e-12)),
            inner_c=float(res.get("inner_c", 0.1)),
            start_sweeps=int(res.get("start_sweeps", 2)),
            sizes=parse_list(str(scaling.get("sizes", ""))),
            scaling_n_z_list=parse_list(str(scaling.get("n_z_list", ""))),
            scaling_methods=parse_list(str(scaling.get("methods", "gmres")), str),
            max_seconds=float(scaling.get("max_seconds", 3600.0)),
            max_unknowns=int(scaling.get("max_unknowns", 5_000_000)),
            out_dir=out_dir or parser.get("output", "dir", fallback="results"),
            cache_path=parser.get("cache", "path", fallback=None) or None,
            workers=_workers(workers),
        )
    except (configparser.Error, KeyError, TypeError) as e:
        raise ConfigError(f"incomplete configuration: {e}") from None
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid configuration value: {e}") from None


def load_config(
    path: str,
    overrides: Sequence[str] = (),
    workers: Optional[int] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> RunConfig:
    """
    Read, override and validate the configuration file at `path`.
    """
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as handle:
        parser.read_file(handle)
    apply_overrides(parser, overrides)
    return parse_config(parser, workers, seed, out_dir)
