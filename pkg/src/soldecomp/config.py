"""Run configuration: JSON parsing, validation and the built-in presets."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Union

import numpy as np

from .decomposition import decompose
from .exceptions import InvalidArgumentError
from .grid import Grid
from .operator import CgConfig, CoefficientField
from .problems import Box
from .schemes import BLOCK_SCHEMES, SCHEMES, THREE_LEVEL_SCHEMES, default_sigma, stability_threshold

__all__ = ["RunConfig", "Finding", "ConfigError", "load_config", "parse_config", "validate", "PRESETS", "preset_configs"]

MODES = ("single_run", "convergence_study", "theorem_check")
WEIGHTED_FAMILY = ("implicit", "cn", "weighted", "vector")


class ConfigError(InvalidArgumentError):
    """Configuration cannot be parsed into a :class:`RunConfig`."""


@dataclass
class GridSpec:
    n1: int = 64
    n2: int = 64
    l1: float = 1.0
    l2: float = 1.0


@dataclass
class CoefficientSpec:
    k: Union[float, str] = 1.0
    c: Union[float, str] = 1.0
    f: list = field(default_factory=lambda: [{"box": [0.5, 0.75, 0.0, 0.75], "value": 25.0}])


@dataclass
class TimeSpec:
    T: float = 0.1
    N: Union[int, list] = 100
    sigma: Optional[float] = None


@dataclass
class DecompositionSpec:
    parts1: int = 2
    parts2: int = 2
    flavor: str = "non_overlapping"
    layers: int = 1
    coloring: str = "none"


@dataclass
class SolverSpec:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_iter: int = 10000


@dataclass
class OutputSpec:
    report: str = "report.csv"
    convergence: str = "convergence.csv"
    checkpoints: Optional[list] = None
    dump_solution: bool = False
    dump_error: bool = False
    dump_decomposition: bool = False
    dump_operator: bool = False


@dataclass
class RunConfig:
    """Everything needed to reproduce one experiment."""

    name: str = "run"
    mode: str = "single_run"
    scheme: str = "implicit"
    grid: GridSpec = field(default_factory=GridSpec)
    coefficients: CoefficientSpec = field(default_factory=CoefficientSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    decomposition: Optional[DecompositionSpec] = None
    solver: SolverSpec = field(default_factory=SolverSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    reference_oversample: int = 64
    description: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def n_list(self) -> list[int]:
        n = self.time.N
        return list(n) if isinstance(n, (list, tuple)) else [n]

    def build_grid(self) -> Grid:
        g = self.grid
        return Grid(g.n1, g.n2, g.l1, g.l2)

    def build_coefficients(self) -> CoefficientField:
        return CoefficientField(_coefficient(self.coefficients.k), _coefficient(self.coefficients.c))

    def build_boxes(self) -> list[Box]:
        return [Box(*map(float, item["box"]), float(item["value"])) for item in self.coefficients.f]

    def build_decomposition(self, grid: Grid):
        d = self.decomposition
        if d is None:
            return None
        return decompose(grid, d.parts1, d.parts2, d.flavor, d.layers, d.coloring)

    def build_solver(self) -> CgConfig:
        s = self.solver
        return CgConfig(s.rel_tol, s.abs_tol, s.max_iter)


_SAFE_NAMES = {
    name: getattr(np, name) for name in ("sin", "cos", "exp", "sqrt", "log", "abs", "tanh", "pi", "where", "minimum", "maximum")
}


def _coefficient(value):
    """Numbers pass through; strings are numpy expressions in ``x1`` and ``x2``."""
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        code = compile(value, "<coefficient>", "eval")
        for name in code.co_names:
            if name not in _SAFE_NAMES and name not in ("x1", "x2"):
                raise ConfigError(f"name {name!r} not allowed in coefficient expression {value!r}")

        def coef(x1, x2):
            return eval(code, {"__builtins__": {}}, {**_SAFE_NAMES, "x1": x1, "x2": x2})

        return coef
    raise ConfigError(f"coefficient must be a number or an expression string, got {value!r}")


_SECTIONS = {
    "grid": GridSpec,
    "coefficients": CoefficientSpec,
    "time": TimeSpec,
    "decomposition": DecompositionSpec,
    "solver": SolverSpec,
    "outputs": OutputSpec,
}


def parse_config(data: dict) -> RunConfig:
    """Build a :class:`RunConfig` from a dict; a run manifest's ``config`` entry is accepted too."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    data = copy.deepcopy(data)
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if value is None and key == "decomposition":
                kwargs[key] = None
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            cls = _SECTIONS[key]
            unknown = set(value) - set(cls.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"{key}: unknown field(s) {', '.join(sorted(unknown))}")
            kwargs[key] = cls(**value)
        elif key in ("name", "mode", "scheme", "reference_oversample", "description"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown top-level field {key!r}")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    return parse_config(data)


@dataclass(frozen=True)
class Finding:
    level: str  # "error" or "warning"
    where: str
    message: str

    def __str__(self):
        return f"{self.level}: {self.where}: {self.message}"


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _positive_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x > 0


def validate(config: RunConfig) -> list[Finding]:
    """Errors block execution, warnings (weights below stability thresholds) do not."""
    out: list[Finding] = []

    def error(where, msg):
        out.append(Finding("error", where, msg))

    def warning(where, msg):
        out.append(Finding("warning", where, msg))

    if config.mode not in MODES:
        error("mode", f"must be one of {', '.join(MODES)}, got {config.mode!r}")
    if config.scheme not in SCHEMES:
        error("scheme", f"must be one of {', '.join(SCHEMES)}, got {config.scheme!r}")

    g = config.grid
    for key in ("n1", "n2"):
        if not _is_int(getattr(g, key)) or getattr(g, key) < 1:
            error(f"grid.{key}", "must be a positive integer")
    for key in ("l1", "l2"):
        if not _positive_number(getattr(g, key)):
            error(f"grid.{key}", "must be a positive length")

    for key in ("k", "c"):
        try:
            _coefficient(getattr(config.coefficients, key))
        except (ConfigError, SyntaxError) as exc:
            error(f"coefficients.{key}", str(exc))
    if not isinstance(config.coefficients.f, list):
        error("coefficients.f", "must be a list of {box, value} objects")
    else:
        for n, item in enumerate(config.coefficients.f):
            try:
                if len(item["box"]) != 4:
                    raise ValueError("box needs four numbers")
                Box(*map(float, item["box"]), float(item["value"]))
            except (KeyError, TypeError, ValueError, InvalidArgumentError) as exc:
                error(f"coefficients.f[{n}]", f"invalid box: {exc}")

    t = config.time
    if not _positive_number(t.T):
        error("time.T", "must be positive")
    n_list = config.n_list
    if not n_list or not all(_is_int(n) and n >= 1 for n in n_list):
        error("time.N", "step counts must be positive integers")
        n_list = []
    elif config.mode == "convergence_study":
        if len(n_list) < 2 or any(b != 2 * a for a, b in zip(n_list, n_list[1:])):
            error("time.N", "a convergence study needs a doubling list of at least two step counts")
    elif len(n_list) != 1:
        error("time.N", f"mode {config.mode!r} takes a single step count")

    decomposition = None
    if config.scheme in BLOCK_SCHEMES and config.decomposition is None:
        error("decomposition", f"scheme {config.scheme!r} requires a decomposition")
    if config.decomposition is not None and not any(f.where.startswith("grid") for f in out):
        try:
            decomposition = config.build_decomposition(config.build_grid())
        except (InvalidArgumentError, TypeError) as exc:
            error("decomposition", str(exc))

    s = config.solver
    if not (_positive_number(s.rel_tol) and _positive_number(s.abs_tol)):
        error("solver", "tolerances must be positive")
    if not _is_int(s.max_iter) or s.max_iter < 1:
        error("solver.max_iter", "must be a positive integer")
    if not _is_int(config.reference_oversample) or config.reference_oversample < 1:
        error("reference_oversample", "must be a positive integer")

    if config.scheme in SCHEMES:
        p = decomposition.p if decomposition is not None else 1
        sigma = t.sigma if t.sigma is not None else default_sigma(config.scheme, p)
        if t.sigma is not None:
            if not isinstance(t.sigma, (int, float)) or not math.isfinite(t.sigma) or t.sigma < 0:
                error("time.sigma", "must be a non-negative number")
                sigma = None
            elif config.scheme in WEIGHTED_FAMILY and t.sigma > 1:
                error("time.sigma", "two-level weights must lie in [0, 1]")
            elif config.scheme == "atm":
                warning("time.sigma", "ignored by the alternating-triangular scheme")
        threshold = stability_threshold(config.scheme, p)
        if sigma is not None and threshold is not None and sigma < threshold:
            if config.scheme in WEIGHTED_FAMILY:
                bound = "1/2"
            elif config.scheme == "three_level":
                bound = "1/4"
            elif config.scheme == "ei_diag":
                bound = f"p/2 = {threshold:g}"
            else:
                bound = f"p/4 = {threshold:g}"
            warning("time.sigma", f"sigma = {sigma:g} < {bound}: unconditional stability estimate not applicable")

    if config.mode == "theorem_check" and config.scheme in THREE_LEVEL_SCHEMES and n_list and n_list[0] < 2:
        error("time.N", "three-level schemes need at least two steps")

    cps = config.outputs.checkpoints
    if cps is not None and n_list and _positive_number(t.T):
        coarse_tau = t.T / min(n_list)
        for n, c in enumerate(cps):
            if not isinstance(c, (int, float)) or c <= 0 or c > t.T * (1 + 1e-12):
                error(f"outputs.checkpoints[{n}]", f"{c!r} outside (0, T]")
            elif abs(round(c / coarse_tau) * coarse_tau - c) > 1e-9 * max(1.0, c):
                error(f"outputs.checkpoints[{n}]", f"{c!r} is not a multiple of tau = {coarse_tau:g}")
    return out


def _preset_base(**overrides) -> dict:
    base = {
        "grid": {"n1": 64, "n2": 64, "l1": 1.0, "l2": 1.0},
        "coefficients": {"k": 1.0, "c": 1.0, "f": [{"box": [0.5, 0.75, 0.0, 0.75], "value": 25.0}]},
        "time": {"T": 0.1, "N": 100, "sigma": None},
    }
    base.update(overrides)
    return base


RED_BLACK = {"parts1": 2, "parts2": 2, "flavor": "non_overlapping", "layers": 1, "coloring": "red_black"}
STUDY_N = [25, 50, 100, 200, 400, 800]
SNAPSHOTS = [0.025, 0.05, 0.075, 0.1]


def _study(name, scheme, n, sigma=None, decomposition=None, description=""):
    return _preset_base(
        name=name,
        mode="convergence_study",
        scheme=scheme,
        grid={"n1": n, "n2": n, "l1": 1.0, "l2": 1.0},
        time={"T": 0.1, "N": STUDY_N, "sigma": sigma},
        decomposition=decomposition,
        description=description,
    )


def _presets() -> dict[str, list[dict]]:
    fig9 = []
    for steps in (50, 100):
        for n in (32, 64, 128):
            fig9.append(
                _preset_base(
                    name=f"n{n}_N{steps}",
                    mode="single_run",
                    scheme="three_level_diag",
                    grid={"n1": n, "n2": n, "l1": 1.0, "l2": 1.0},
                    time={"T": 0.1, "N": steps, "sigma": 0.5},
                    decomposition=dict(RED_BLACK),
                    outputs={"checkpoints": [round(0.1 * k / steps, 12) for k in range(1, steps + 1)]},
                    description="three-level decomposition scheme, error history on several space grids",
                )
            )
    return {
        "paper-fig3": [
            _preset_base(
                name="solution_128",
                mode="single_run",
                scheme="implicit",
                grid={"n1": 128, "n2": 128, "l1": 1.0, "l2": 1.0},
                outputs={"checkpoints": SNAPSHOTS, "dump_solution": True},
                description="solution snapshots at four evenly spaced times (a choice)",
            )
        ],
        "paper-fig4": [_study(f"implicit_{n}", "implicit", n, 1.0, description="implicit scheme accuracy") for n in (64, 128)],
        "paper-fig5": [
            _study(f"three_level_{n}", "three_level", n, 0.25, description="three-level scheme accuracy") for n in (64, 128)
        ],
        "paper-fig7": [
            _study(f"ei_diag_{n}", "ei_diag", n, 1.0, dict(RED_BLACK), "two-level decomposition scheme accuracy")
            for n in (64, 128)
        ],
        "paper-fig8": [
            _study(f"three_level_diag_{n}", "three_level_diag", n, 0.5, dict(RED_BLACK), "three-level decomposition scheme accuracy")
            for n in (64, 128)
        ],
        "paper-fig9": fig9,
        "paper-fig10": [
            _preset_base(
                name="error_100",
                mode="single_run",
                scheme="three_level_diag",
                grid={"n1": 100, "n2": 100, "l1": 1.0, "l2": 1.0},
                time={"T": 0.1, "N": 100, "sigma": 0.5},
                decomposition=dict(RED_BLACK),
                outputs={"checkpoints": SNAPSHOTS, "dump_error": True, "dump_decomposition": True},
                description="error fields of the three-level decomposition scheme; snapshot times are a choice",
            )
        ],
        "theorems": [
            _preset_base(
                name=f"{scheme}",
                mode="theorem_check",
                scheme=scheme,
                time={"T": 0.1, "N": 100, "sigma": sigma},
                decomposition=dict(RED_BLACK) if scheme in BLOCK_SCHEMES else None,
                description="energy estimate monitor at the threshold weight",
            )
            for scheme, sigma in [
                ("cn", 0.5),
                ("vector", 0.5),
                ("ei_diag", 1.0),
                ("atm", None),
                ("three_level", 0.25),
                ("three_level_diag", 0.5),
            ]
        ],
    }


PRESETS = tuple(_presets())


def preset_configs(name: str) -> list[RunConfig]:
    presets = _presets()
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(presets)}")
    return [parse_config(d) for d in presets[name]]
