"""Plain-text run configuration: ``key = value`` lines, ``#`` comments.

Values from the file are overridden by command-line flags. Every error
names the line (or flag) it came from. The effective configuration is
written back in the same format, so a provenance file can be fed to the
CLI again to repeat a run exactly.
"""
import dataclasses
import typing
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from . import __version__
from .bdf import coefficients
from .flow_solver import SCHEMES

PROBLEMS = ("manufactured", "pure_mcf", "tumour")
FORCINGS = ("linear", "half_square")
PRESETS = ("manufactured_sphere", "tumour_g30", "tumour_g300", "pure_mcf_sphere")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str = "manufactured"
    forcing: str = "linear"
    scheme: str = "coupled"
    q: int = 2
    tau: float = 0.05
    T: float = 1.0
    t0: float = 0.0
    level: int = 2
    frequency: int = 0  # overrides level when positive
    k: int = 2
    seed: int = 0
    output: str = "out"
    output_every: int = 1
    tol: float = 1e-10
    startup: str = "cascade"
    # exact-solution problems
    eps: float = 1.0
    R0: float = 1.0
    R1: float = 2.0
    # convergence study
    tau0: float = 0.2
    n_taus: int = 5
    time_frequency: int = 11
    frequencies: tuple = (4, 6, 8, 11)
    space_tau: float = 0.0015625
    # tumour model
    gamma: float = 30.0
    d: float = 10.0
    a: float = 0.1
    b: float = 0.9
    delta: float = 0.1
    amplitude: float = 0.01
    pre_T: float = 5.0
    pre_tau: float = 0.0015625
    snapshot_times: tuple = (5.0, 6.0, 7.0, 8.0)

    def validate(self, where=None):
        """Raise ConfigError naming the origin of the first offending key."""
        where = where or {}

        def fail(key, msg):
            raise ConfigError(f"{where.get(key, 'default')}: {key}: {msg}")

        choices = {"problem": PROBLEMS, "forcing": FORCINGS, "scheme": SCHEMES,
                   "startup": ("cascade", "exact")}
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                fail(key, f"must be one of {', '.join(allowed)}")
        try:
            coefficients(self.q)
        except ValueError as exc:
            fail("q", str(exc))
        for key in ("tau", "tol", "tau0", "space_tau", "pre_tau", "eps", "R0", "R1",
                    "gamma", "d", "a", "b", "delta"):
            if not getattr(self, key) > 0:
                fail(key, "must be positive")
        if not self.tol < 1:
            fail("tol", "must be below 1")
        if self.T - self.t0 < self.tau * (1 - 1e-9):
            fail("T", "must be at least one step after t0")
        if self.k not in (1, 2):
            fail("k", "element degree must be 1 or 2")
        for key in ("level", "frequency", "amplitude", "seed", "pre_T"):
            if getattr(self, key) < 0:
                fail(key, "must be non-negative")
        for key in ("output_every", "n_taus", "time_frequency"):
            if getattr(self, key) < 1:
                fail(key, "must be at least 1")
        if not self.frequencies or min(self.frequencies) < 1:
            fail("frequencies", "need positive mesh frequencies")
        return self

    @property
    def mesh_frequency(self):
        return self.frequency if self.frequency > 0 else 2 ** self.level

    @property
    def taus(self):
        return [self.tau0 / 2**j for j in range(self.n_taus)]


_TYPES = typing.get_type_hints(RunConfig)


def keys():
    return [f.name for f in fields(RunConfig)]


def _element_type(name):
    return int if name == "frequencies" else float


def parse_value(key, text):
    """Convert the textual value of ``key`` to its declared type."""
    kind = _TYPES[key]
    text = text.strip()
    if not text:
        raise ValueError("empty value")
    if kind is tuple:
        conv = _element_type(key)
        return tuple(conv(item) for item in text.replace(" ", "").split(",") if item)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def format_value(value):
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_pairs(text, origin="<config>"):
    """``{key: (raw value, 'origin:line')}`` from config text."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{origin}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{where}: unknown key {key!r}")
        pairs[key] = (value, where)
    return pairs


def resolve_path(name):
    """A config path, or the name of a shipped preset."""
    path = Path(name)
    if path.exists():
        return path
    stem = path.name[:-4] if path.name.endswith(".cfg") else path.name
    if stem in PRESETS:
        return resources.files("forced_mcf") / "presets" / f"{stem}.cfg"
    raise ConfigError(f"{name}: no such config file or preset")


def parse_config(path=None, overrides=None):
    """Build a validated RunConfig from an optional file and flag overrides.

    ``overrides`` maps keys to raw strings (as given on the command line).
    """
    pairs = {}
    if path is not None:
        p = resolve_path(path)
        pairs = read_pairs(p.read_text(), str(path))
    for key, value in (overrides or {}).items():
        if key not in _TYPES:
            raise ConfigError(f"--{key}: unknown key {key!r}")
        pairs[key] = (str(value), f"--{key}")
    values, where = {}, {}
    for key, (raw, origin) in pairs.items():
        try:
            values[key] = parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{origin}: {key}: malformed value {raw!r} ({exc})") from None
        where[key] = origin
    return RunConfig(**values).validate(where)


def dumps(cfg, header=()):
    lines = [f"# {h}" for h in header]
    lines += [f"{f.name} = {format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def write_provenance(cfg, directory, command, extra=()):
    """Write ``effective.cfg`` into ``directory``; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "effective.cfg"
    header = [f"forced_mcf {__version__}", f"command: {command}", *extra]
    path.write_text(dumps(cfg, header))
    return path


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes).validate()
