"""Plain-text run configuration: ``key = value`` lines, ``#`` starts a comment.

Every problem found is collected with its line number and reported together
in one ``ConfigError``; nothing is computed from a config that failed.
"""

from dataclasses import dataclass, field, fields
import math

from .capacity import Disk, DomainMask, Rect, Union
from .surfaces import SurfaceModel
from .validation import ValidationError, is_power_of_two

COMMANDS = ("sample", "kernel", "capacity", "sup-tail", "hole", "embed-check")
MODELS = {"torus": "torus", "rectangle": "rectangle", "dirichlet-rectangle": "rectangle"}


class ConfigError(ValueError):
    """Aggregated configuration diagnostics; ``errors`` is a list of ``(line, message)``."""

    def __init__(self, errors):
        self.errors = list(errors)
        text = "\n".join(f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors)
        super().__init__(text)


@dataclass
class RunConfig:
    command: str
    model: str = "torus"
    side: float = None
    L: float = None
    L_grid: tuple = None
    alpha: float = None
    mask: object = None
    region: object = None
    seed: int = 0
    samples: int = 1000
    resolution: int = None
    method: str = "plain"
    threshold: float = None
    eta: float = 0.1
    delta: float = 0.3
    tol: float = 1e-8
    pairs: int = 200
    out: str = "."
    threads: int = 1
    text: str = field(default="", repr=False)

    def surface(self):
        if self.model == "torus":
            return SurfaceModel.torus() if self.side is None else SurfaceModel.torus(self.side)
        return SurfaceModel.rectangle() if self.side is None else SurfaceModel.rectangle(self.side)

    def build_mask(self, resolution, model=None):
        model = model or self.surface()
        return DomainMask.from_shape(model, resolution, self.mask, self.region)

    def canonical(self):
        """Normalized text used for hashing; independent of comments and spacing."""
        parts = []
        for f in fields(self):
            if f.name == "text":
                continue
            parts.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(parts)


# value parsers: each returns the value or raises ValueError with a message


def _float(s):
    try:
        v = float(s)
    except ValueError:
        raise ValueError(f"expected a number, got {s!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _positive(s):
    v = _float(s)
    if v <= 0:
        raise ValueError(f"must be > 0, got {s}")
    return v


def _int(s, minimum=None):
    try:
        v = int(s, 10)
    except ValueError:
        raise ValueError(f"expected an integer, got {s!r}") from None
    if minimum is not None and v < minimum:
        raise ValueError(f"must be >= {minimum}, got {v}")
    return v


def _seed(s):
    v = _int(s, 0)
    if v >= 2**64:
        raise ValueError("must fit in 64 bits")
    return v


def _resolution(s):
    v = _int(s, 2)
    if not is_power_of_two(v):
        raise ValueError(f"must be a power of two, got {v}")
    return v


def _choice(options):
    def parse(s):
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}; got {s!r}")
        return s

    return parse


def _alpha(s):
    v = _float(s)
    if not 0 <= v < 1:
        raise ValueError(f"alpha must lie in (0, 1) ([0, 1) for embed-check), got {s}")
    return v


def _L_grid(s):
    vals = tuple(_positive(p.strip()) for p in s.split(",") if p.strip())
    if not vals:
        raise ValueError("L_grid needs at least one value")
    return vals


_SHAPE_KEYS = {"disk": ("cx", "cy", "r"), "rect": ("x0", "y0", "x1", "y1")}


def parse_shape(s):
    """``disk cx=.. cy=.. r=..`` or ``rect x0=.. y0=.. x1=.. y1=..``, joined by ``|`` for unions.

    Coordinates are relative to the model sides (0 to 1).
    """
    parts = []
    for piece in s.split("|"):
        tokens = piece.split()
        if not tokens:
            raise ValueError("empty shape in mask")
        kind = tokens[0]
        if kind not in _SHAPE_KEYS:
            raise ValueError(f"unknown shape {kind!r}; use disk or rect")
        got = {}
        for tok in tokens[1:]:
            if "=" not in tok:
                raise ValueError(f"expected name=value in shape, got {tok!r}")
            k, v = tok.split("=", 1)
            if k not in _SHAPE_KEYS[kind]:
                raise ValueError(f"{kind} has no parameter {k!r}")
            got[k] = _float(v)
        missing = [k for k in _SHAPE_KEYS[kind] if k not in got]
        if missing:
            raise ValueError(f"{kind} is missing {', '.join(missing)}")
        if kind == "disk":
            if got["r"] <= 0:
                raise ValueError("disk radius must be > 0")
            parts.append(Disk(got["cx"], got["cy"], got["r"]))
        else:
            if not (got["x0"] < got["x1"] and got["y0"] < got["y1"]):
                raise ValueError("rect needs x0 < x1 and y0 < y1")
            parts.append(Rect(got["x0"], got["y0"], got["x1"], got["y1"]))
    return parts[0] if len(parts) == 1 else Union(tuple(parts))


_PARSERS = {
    "command": _choice(COMMANDS),
    "model": _choice(tuple(MODELS)),
    "side": _positive,
    "L": _positive,
    "L_grid": _L_grid,
    "alpha": _alpha,
    "mask": parse_shape,
    "region": parse_shape,
    "seed": _seed,
    "samples": lambda s: _int(s, 1),
    "resolution": _resolution,
    "method": _choice(("plain", "importance")),
    "threshold": _float,
    "eta": _float,
    "delta": _positive,
    "tol": _positive,
    "pairs": lambda s: _int(s, 1),
    "out": lambda s: s,
    "threads": lambda s: _int(s, 1),
}


def parse_config(text):
    """Parse and validate a run configuration; raises ``ConfigError`` listing every problem."""
    errors = []
    values, where = {}, {}
    if not isinstance(text, str):
        raise ConfigError([(0, "config must be text")])
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append((ln, f"expected key=value, got {line!r}"))
            continue
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _PARSERS:
            errors.append((ln, f"unknown key {key!r}"))
            continue
        if key in where:
            errors.append((ln, f"duplicate key {key!r} (first set on line {where[key]})"))
            continue
        where[key] = ln
        try:
            values[key] = _PARSERS[key](val)
        except (ValueError, ArithmeticError, TypeError) as exc:
            errors.append((ln, f"{key}: {exc}"))
    if "model" in values:
        values["model"] = MODELS[values["model"]]
    errors += _required(values, where)
    if errors:
        raise ConfigError(errors)
    cfg = RunConfig(**values, text=text)
    errors += _semantic(cfg, where)
    if errors:
        raise ConfigError(errors)
    return cfg


def _required(v, where):
    errs = []
    cmd = v.get("command")
    if cmd is None:
        if "command" not in where:
            errs.append((0, f"missing required key 'command' (one of {', '.join(COMMANDS)})"))
        return errs
    wanted = {
        "sample": ["L"],
        "sup-tail": ["L"],
        "hole": ["L", "mask"],
        "embed-check": ["L"],
        "capacity": ["mask"],
        "kernel": [],
    }[cmd]
    for key in wanted:
        if key not in v and key not in where:
            errs.append((0, f"command {cmd} requires key '{key}'"))
    if cmd == "kernel" and not {"L", "L_grid"} & (set(v) | set(where)):
        errs.append((0, "command kernel requires 'L' or 'L_grid'"))
    return errs


def default_resolution(cfg, model=None):
    """Grid resolution a command runs at when none is configured."""
    from .experiments import hole_resolution

    model = model or cfg.surface()
    if cfg.resolution is not None:
        return cfg.resolution
    if cfg.command == "hole":
        return hole_resolution(model, cfg.L)
    if cfg.command == "capacity":
        return 256
    if cfg.command in ("sample", "sup-tail"):
        return model.min_resolution(cfg.L) * (2 if cfg.command == "sup-tail" else 1)
    return None


def _semantic(cfg, where):
    from .experiments import hole_resolution

    errs = []
    cmd = cfg.command
    if cfg.alpha is not None and cfg.alpha == 0 and cmd != "embed-check":
        errs.append((where["alpha"], "alpha must lie in (0, 1) for this command"))
    if cfg.region is not None and cfg.model == "torus":
        errs.append((where["region"], "region applies to the rectangle model only"))
    if cmd == "embed-check" and not cfg.delta < 1 / (2 * math.sqrt(2)):
        errs.append((where.get("delta", 0), "delta must lie in (0, 1/(2 sqrt 2))"))
    if cmd == "sup-tail" and cfg.samples < 100:
        errs.append((where.get("samples", 0), "sup-tail needs samples >= 100"))
    model = cfg.surface()
    res = default_resolution(cfg, model)
    if cfg.resolution is not None and cmd in ("sample", "sup-tail", "hole"):
        need = model.min_resolution(cfg.L) * (4 if cmd == "hole" else 1)
        if cfg.resolution < need:
            what = "4x the alias-free minimum" if cmd == "hole" else "the alias-free minimum"
            errs.append(
                (where["resolution"], f"resolution {cfg.resolution} is below {what} ({need})")
            )
            return errs
    if cfg.mask is not None and cmd in ("capacity", "hole"):
        try:
            cfg.build_mask(res, model)
        except ValidationError as exc:
            errs.append((where["mask"], f"mask: {exc}"))
    return errs
