"""
Experiment configuration files

Plain `key = value` lines with `#` comments and `[section]` headers.
Coefficients use the `family{param=value,...}` syntax, for example
`rho = shifted_power{c=1, alpha=2}`; tuples are written `(x, y)` and
angles may be given as multiples of pi (`3*pi/4`).
"""
import logging
import math
import re
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .config import THEOREM_HYPOTHESES
from .errors import ConfigParseError, FieldError
from .fields import (
    CoefficientSet,
    MatrixField,
    ScalarField,
    block_matrix_field,
    constant_field,
    constant_matrix_field,
    directional_field,
    disk_bubble_field,
    exp_inverse_density,
    gaussian_density,
    identity_matrix_field,
    linear_phase,
    paraboloid_phase,
    polynomial_field,
    power_density,
    quadratic_density,
    quadratic_field,
    quadratic_potential,
    rotating_matrix_field,
    saddle_phase,
    shifted_power_density,
    sine_product_field,
)
from .geometry import Mesh, make_disk_mesh, make_interval, make_polygon_mesh, rectangle_vertices, refinement_chain

logger = logging.getLogger(__name__)

_SECTION = re.compile(r"^\[\s*([A-Za-z_]\w*)\s*\]$")
_ASSIGNMENT = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(.*)$")
_FAMILY = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\{(.*)\})?\s*$")
_TUPLE = re.compile(r"\(([^()]*)\)")
_PI = re.compile(r"^(-?\d*\.?\d*)\s*\*?\s*pi(?:\s*/\s*(\d+\.?\d*))?$")

# Sections whose keys form nested models
NESTED_SECTIONS = ("domain", "coefficients")


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------

def _scalar(token: str) -> Any:
    token = token.strip()
    lowered = token.lower()
    if lowered in ("none", "null", ""):
        return None
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    match = _PI.match(lowered.replace(" ", ""))
    if match:
        factor = match.group(1)
        factor = -1.0 if factor == "-" else float(factor) if factor else 1.0
        divisor = float(match.group(2)) if match.group(2) else 1.0
        return factor * math.pi / divisor
    return token


def parse_value(raw: str) -> Any:
    """Family specs stay strings; tuples become lists of lists; commas make flat lists"""
    raw = raw.strip()
    if "{" in raw:
        return raw
    if "(" in raw:
        return [[_scalar(part) for part in group.split(",")] for group in _TUPLE.findall(raw)]
    if "," in raw:
        return [_scalar(part) for part in raw.split(",")]
    return _scalar(raw)


def parse_family(spec: str) -> Tuple[str, Dict[str, Any]]:
    """'name{a=1, b=x}' -> ('name', {'a': 1, 'b': 'x'})"""
    match = _FAMILY.match(spec)
    if not match:
        raise FieldError(f"malformed family specification '{spec}'")
    name, body = match.group(1), match.group(2)
    params: Dict[str, Any] = {}
    if body and body.strip():
        for item in body.split(","):
            if "=" not in item:
                raise FieldError(f"parameter '{item.strip()}' in '{spec}' is not of the form key=value")
            key, value = item.split("=", 1)
            params[key.strip()] = _scalar(value)
    return name, params


def _unit(params: Dict[str, Any], default: Tuple[float, float] = (1.0, 0.0)) -> List[float]:
    vector = [float(params.get("xi1", default[0])), float(params.get("xi2", default[1]))]
    norm = math.hypot(*vector)
    if norm == 0:
        raise FieldError("direction (xi1, xi2) is zero")
    return [v / norm for v in vector]


def _center(params: Dict[str, Any]) -> Optional[List[float]]:
    if "cx" not in params and "cy" not in params:
        return None
    return [float(params.get("cx", 0.0)), float(params.get("cy", 0.0))]


def _coefficients(params: Dict[str, Any]) -> List[float]:
    indices = sorted(int(key[1:]) for key in params if re.fullmatch(r"c\d+", key))
    if not indices:
        raise FieldError("polynomial needs coefficients c0, c1, ...")
    return [float(params.get(f"c{i}", 0.0)) for i in range(indices[-1] + 1)]


# origin-singular families take their default guard radius from the mesh
SCALAR_FAMILIES: Dict[str, Callable[[Dict[str, Any], Optional[Mesh]], ScalarField]] = {
    "constant": lambda p, mesh: constant_field(float(p.get("value", 1.0))),
    "power": lambda p, mesh: power_density(float(p["alpha"]), p.get("delta"), domain=mesh),
    "shifted_power": lambda p, mesh: shifted_power_density(
        float(p.get("c", 1.0)), float(p["alpha"]), p.get("delta"), domain=mesh
    ),
    "quadratic": lambda p, mesh: quadratic_field(float(p.get("offset", 0.0)), float(p.get("scale", 1.0)), _center(p)),
    "quadratic_density": lambda p, mesh: quadratic_density(float(p.get("c", 1.0)), float(p.get("scale", 1.0))),
    "quadratic_potential": lambda p, mesh: quadratic_potential(_center(p), float(p.get("scale", 1.0))),
    "gaussian": lambda p, mesh: gaussian_density(float(p["scale"])),
    "polynomial": lambda p, mesh: polynomial_field(_coefficients(p)),
    "directional": lambda p, mesh: directional_field(str(p.get("profile", "exp")), _unit(p)),
    "exp_inverse": lambda p, mesh: exp_inverse_density(p.get("delta"), domain=mesh),
}

MATRIX_FAMILIES: Dict[str, Callable[[Dict[str, Any]], MatrixField]] = {
    "identity": lambda p: identity_matrix_field(int(p.get("dimension", 2))),
    "constant_matrix": lambda p: constant_matrix_field(
        [[float(p["a11"]), float(p.get("a12", 0.0))], [float(p.get("a12", 0.0)), float(p["a22"])]]
    ),
    "block": lambda p: block_matrix_field(
        float(p.get("leading", 1.0)),
        directional_field(str(p.get("profile", "one_plus_half_sin_square")), _unit(p, (0.0, 1.0))),
    ),
    "rotating": lambda p: rotating_matrix_field(
        (float(p.get("low", 1.0)), float(p.get("high", 2.0))), float(p.get("rate", 1.0))
    ),
}

# "harmonic" is built from the mesh by the runner
PHASE_FAMILIES: Dict[str, Optional[Callable[[Dict[str, Any]], ScalarField]]] = {
    "saddle": lambda p: saddle_phase(float(p.get("rotation", 0.0))),
    "linear": lambda p: linear_phase(_unit(p)),
    "paraboloid": lambda p: paraboloid_phase(),
    "harmonic": None,
}

IBP_FUNCTIONS = ("sine_product", "disk_bubble")


def build_scalar(spec: str, mesh: Optional[Mesh] = None) -> ScalarField:
    name, params = parse_family(spec)
    if name not in SCALAR_FAMILIES:
        raise FieldError(f"unknown field family '{name}'; known: {sorted(SCALAR_FAMILIES)}")
    try:
        return SCALAR_FAMILIES[name](params, mesh)
    except KeyError as exc:
        raise FieldError(f"field family '{name}' is missing parameter {exc}") from exc


def build_matrix(spec: str) -> MatrixField:
    name, params = parse_family(spec)
    if name not in MATRIX_FAMILIES:
        raise FieldError(f"unknown matrix family '{name}'; known: {sorted(MATRIX_FAMILIES)}")
    try:
        return MATRIX_FAMILIES[name](params)
    except KeyError as exc:
        raise FieldError(f"matrix family '{name}' is missing parameter {exc}") from exc


def _check_family(spec: Optional[str], registry: Dict[str, Any], kind: str) -> Optional[str]:
    if spec is None:
        return None
    name, _ = parse_family(spec)
    if name not in registry:
        raise ValueError(f"unknown {kind} family '{name}'; known: {sorted(registry)}")
    return spec


def _unwrap_vector(value: Any) -> Any:
    """A single '(x, y)' tuple parses as [[x, y]]"""
    if isinstance(value, list) and len(value) == 1 and isinstance(value[0], list):
        return value[0]
    return value


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class DomainSpec(BaseModel):
    """Domain geometry and its refinement levels"""
    kind: Literal["interval", "rectangle", "polygon", "disk"]
    bounds: Optional[List[float]] = None
    vertices: Optional[List[List[float]]] = None
    center: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    radius: float = Field(default=1.0, gt=0)
    target_h: float = Field(default=0.25, gt=0)
    n_elements: int = Field(default=16, ge=2)
    levels: int = Field(default=3, ge=1)

    model_config = {"extra": "forbid"}

    @field_validator("bounds", "center", mode="before")
    @classmethod
    def _single_tuple(cls, value):
        return _unwrap_vector(value)

    @model_validator(mode="after")
    def _geometry_present(self):
        if self.kind == "interval" and (self.bounds is None or len(self.bounds) != 2):
            raise ValueError("interval domains need bounds = a, b")
        if self.kind == "rectangle" and (self.bounds is None or len(self.bounds) != 4):
            raise ValueError("rectangle domains need bounds = x0, y0, x1, y1")
        if self.kind == "polygon" and (not self.vertices or len(self.vertices) < 3):
            raise ValueError("polygon domains need at least three vertices")
        return self

    @property
    def dimension(self) -> int:
        return 1 if self.kind == "interval" else 2

    def build_mesh(self, target_h: Optional[float] = None) -> Mesh:
        h = self.target_h if target_h is None else target_h
        if self.kind == "interval":
            a, b = self.bounds
            n = self.n_elements if target_h is None else max(2, math.ceil((b - a) / h))
            return make_interval(a, b, n)
        if self.kind == "rectangle":
            return make_polygon_mesh(rectangle_vertices(*self.bounds), h)
        if self.kind == "polygon":
            return make_polygon_mesh(self.vertices, h)
        return make_disk_mesh(self.center, self.radius, h)

    def nested_meshes(self) -> List[Mesh]:
        """The coarse mesh and its red refinements"""
        return refinement_chain(self.build_mesh(), self.levels)

    def remeshed(self) -> List[Mesh]:
        """Independent meshes with halved target size; disks then follow the circle more closely"""
        return [self.build_mesh(self.target_h / 2**level) for level in range(self.levels)]


class CoefficientSpec(BaseModel):
    """rho, V and A as family specifications"""
    rho: str = "constant{value=1}"
    V: Optional[str] = None
    A: Optional[str] = None

    model_config = {"extra": "forbid"}

    @field_validator("rho", "V")
    @classmethod
    def _known_scalar(cls, value):
        return _check_family(value, SCALAR_FAMILIES, "field")

    @field_validator("A")
    @classmethod
    def _known_matrix(cls, value):
        return _check_family(value, MATRIX_FAMILIES, "matrix")

    def build(self, mesh: Optional[Mesh] = None) -> CoefficientSet:
        """Coefficient fields; `mesh` supplies guard radii for origin-singular families"""
        return CoefficientSet(
            rho=build_scalar(self.rho, mesh),
            V=None if self.V is None else build_scalar(self.V, mesh),
            A=None if self.A is None else build_matrix(self.A),
        )


Task = Literal["solve", "check", "verify", "certify", "ibp", "disk_comparison", "polya_1d"]


class ExperimentConfig(BaseModel):
    """One experiment: domain, coefficients, the task and where results go"""
    name: str
    task: Task = "verify"
    theorem: str = "trivial"
    domain: DomainSpec
    coefficients: CoefficientSpec = Field(default_factory=CoefficientSpec)

    # inequalities mu_{k+r} <= lambda_k as (k, r)
    pairs: List[Tuple[int, int]] = Field(default_factory=lambda: [(1, 1)])
    count: int = Field(default=6, ge=1)
    bc: List[Literal["dirichlet", "neumann"]] = Field(default_factory=lambda: ["dirichlet", "neumann"])
    expected_verdict: Optional[str] = None

    # certificates and hypotheses
    trial_kind: Literal["plane_wave", "derivative"] = "plane_wave"
    phase: Optional[str] = None
    rotations: List[float] = Field(default_factory=lambda: [0.0])
    directions: Optional[List[List[float]]] = None
    invariant_basis: Optional[List[List[float]]] = None
    basepoint: Optional[List[float]] = None
    # certify runs also report the extrapolated margin of each pair; other tasks ignore it
    verify_margin: bool = False

    # integration by parts
    ibp_function: Optional[Literal["sine_product", "disk_bubble"]] = None
    ibp_direction: List[float] = Field(default_factory=lambda: [1.0, 0.0])

    grid_n: Optional[int] = Field(default=None, ge=10)
    quadrature_order: Optional[int] = Field(default=None, ge=1, le=5)
    sample_count: Optional[int] = Field(default=None, ge=1)

    output_json: Optional[str] = None
    output_csv: Optional[str] = None
    output_plot_data: Optional[str] = None

    model_config = {"extra": "forbid"}

    @field_validator("theorem")
    @classmethod
    def _known_theorem(cls, value):
        if value not in THEOREM_HYPOTHESES:
            raise ValueError(f"unknown theorem '{value}'; known: {sorted(THEOREM_HYPOTHESES)}")
        return value

    @field_validator("phase")
    @classmethod
    def _known_phase(cls, value):
        return _check_family(value, PHASE_FAMILIES, "phase")

    @field_validator("pairs", mode="before")
    @classmethod
    def _pairs(cls, value):
        if isinstance(value, list) and value and not isinstance(value[0], (list, tuple)):
            return [value]
        return value

    @field_validator("rotations", "bc", mode="before")
    @classmethod
    def _listify(cls, value):
        return value if isinstance(value, list) else [value]

    @field_validator("ibp_direction", "basepoint", mode="before")
    @classmethod
    def _single_tuple(cls, value):
        return _unwrap_vector(value)

    @model_validator(mode="after")
    def _indices(self):
        for k, r in self.pairs:
            if k < 1 or r < 0:
                raise ValueError(f"pair ({k}, {r}) needs k >= 1 and r >= 0")
        if self.task == "ibp" and self.ibp_function is None:
            raise ValueError("ibp experiments need ibp_function")
        if self.task == "polya_1d" and self.domain.kind != "interval":
            raise ValueError("polya_1d experiments run on an interval")
        return self

    def build_phase(self) -> Optional[ScalarField]:
        """The configured phase; None for no phase or for the mesh-built harmonic phase"""
        if self.phase is None:
            return None
        name, params = parse_family(self.phase)
        factory = PHASE_FAMILIES[name]
        return None if factory is None else factory(params)

    @property
    def wants_harmonic_phase(self) -> bool:
        return self.phase is not None and parse_family(self.phase)[0] == "harmonic"

    def build_ibp_function(self) -> ScalarField:
        if self.ibp_function is None:
            raise FieldError("no ibp_function configured")
        if self.ibp_function == "sine_product":
            if self.domain.kind != "rectangle":
                raise FieldError("the sine product vanishes on rectangle boundaries only")
            return sine_product_field(self.domain.bounds)
        if self.domain.kind != "disk":
            raise FieldError("the disk bubble vanishes on disk boundaries only")
        return disk_bubble_field(self.domain.center, self.domain.radius)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_experiment_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse configuration text; every failure raises ConfigParseError with its line"""
    data: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {section: {} for section in NESTED_SECTIONS}
    key_lines: Dict[Tuple[str, ...], int] = {}
    section: Optional[str] = None

    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        header = _SECTION.match(line)
        if header:
            section = header.group(1).lower()
            continue
        assignment = _ASSIGNMENT.match(line)
        if not assignment:
            raise ConfigParseError(f"{source}: expected 'key = value', got '{raw.strip()}'", number)
        key, value = assignment.group(1), parse_value(assignment.group(2))

        if section in NESTED_SECTIONS:
            target, loc = nested[section], (section, key)
        elif section == "output":
            key = f"output_{key}"
            target, loc = data, (key,)
        else:
            target, loc = data, (key,)
        if loc in key_lines:
            raise ConfigParseError(f"{source}: duplicate key '{'.'.join(loc)}' (first on line {key_lines[loc]})", number)
        target[key] = value
        key_lines[loc] = number

    for name in NESTED_SECTIONS:
        if nested[name]:
            data[name] = nested[name]

    try:
        experiment = ExperimentConfig(**data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = tuple(str(part) for part in first["loc"] if not isinstance(part, int))
        line = None
        for size in range(len(loc), 0, -1):
            if loc[:size] in key_lines:
                line = key_lines[loc[:size]]
                break
        where = ".".join(loc) or "config"
        raise ConfigParseError(f"{source}: {where}: {first['msg']}", line) from exc
    except FieldError as exc:
        raise ConfigParseError(f"{source}: {exc}", None) from exc

    logger.debug(f"Parsed experiment '{experiment.name}' ({experiment.task}) from {source}")
    return experiment


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}", None) from exc
    return parse_experiment_config(text, source=str(path))
