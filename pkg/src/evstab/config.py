"""Plain-text key = value run configuration.

Lines are ``key = value`` with ``#`` comments; every knob has a default and
the fully resolved configuration is echoed into the run report so results
can be reproduced from the report alone.  Parsing collects all problems
instead of stopping at the first.
"""

from dataclasses import dataclass, fields, asdict

from .errors import ConfigurationError

_MODES = ("singfree", "shell")
_FAMILIES = ("polytrope", "king")


@dataclass
class RunConfig:
    mode: str = ""                  # required: singfree | shell
    family: str = "polytrope"
    k: float = 1.0
    l: float = 0.0
    L0: float = 0.0
    delta: float = 1.0
    M: float = 1.0                  # shell: central mass
    E_intermediate: float = 0.98    # shell: level-energy parameter
    eta0: float = -1.0              # shell: activation width; <= 0 -> auto
    y0: float = 0.1                 # singfree: central value of y

    # numerical knobs
    n_theta: int = 384
    n_L: int = 24
    n_E: int = 32
    basis_n_E: int = 8
    basis_n_L: int = 8
    include_profile_generator: bool = True
    n_radial_nodes: int = 160
    single_well_n_L: int = 64
    verdict_tol: float = 1e-3
    hlr_gate: float = 1e-6

    # artifact emission
    output_dir: str = "out"
    emit_csv: bool = True
    emit_json: bool = True
    emit_plots: bool = True

    def validate(self):
        problems = []
        if self.mode not in _MODES:
            problems.append(f"mode = {self.mode!r} must be one of {_MODES}"
                            if self.mode else "missing required key 'mode'")
        if self.family not in _FAMILIES:
            problems.append(f"family = {self.family!r} must be one of {_FAMILIES}")
        if not 0 <= self.k:
            problems.append(f"k = {self.k} must be nonnegative")
        if self.l < -0.5:
            problems.append(f"l = {self.l} violates l >= -1/2")
        if self.L0 < 0:
            problems.append(f"L0 = {self.L0} must be nonnegative")
        if self.delta < 0:
            problems.append(f"delta = {self.delta} must be nonnegative")
        if self.mode == "shell" and self.M <= 0:
            problems.append(f"M = {self.M} must be positive in shell mode")
        if self.mode == "shell" and not (0 < self.E_intermediate < 1):
            problems.append(f"E_intermediate = {self.E_intermediate} must lie in ]0, 1[")
        if self.mode == "singfree" and self.y0 <= 0:
            problems.append(f"y0 = {self.y0} must be positive")
        for name in ("n_theta", "n_L", "n_E", "basis_n_E", "basis_n_L",
                     "n_radial_nodes", "single_well_n_L"):
            if getattr(self, name) < 1:
                problems.append(f"{name} = {getattr(self, name)} must be positive")
        if self.n_theta % 2:
            problems.append(f"n_theta = {self.n_theta} must be even")
        if not 0 < self.verdict_tol < 1:
            problems.append(f"verdict_tol = {self.verdict_tol} must lie in ]0, 1[")
        if problems:
            raise ConfigurationError(problems)
        return self

    def resolved(self) -> dict:
        """Every knob, fully resolved, for the reproducibility echo."""
        return asdict(self)


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "on": True,
               "false": False, "no": False, "0": False, "off": False}


def parse_config(path) -> RunConfig:
    """Parse and validate a configuration file, reporting all errors at once."""
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}")

    field_types = {f.name: f.type for f in fields(RunConfig)}
    cfg = RunConfig()
    problems = []
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {ln}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in field_types:
            problems.append(f"line {ln}: unknown key {key!r}")
            continue
        ftype = field_types[key]
        try:
            if ftype in ("bool", bool):
                if value.lower() not in _BOOL_WORDS:
                    raise ValueError(f"not a boolean: {value!r}")
                parsed = _BOOL_WORDS[value.lower()]
            elif ftype in ("int", int):
                parsed = int(value)
            elif ftype in ("float", float):
                parsed = float(value)
            else:
                parsed = value
        except ValueError as exc:
            problems.append(f"line {ln}: bad value for {key}: {exc}")
            continue
        setattr(cfg, key, parsed)
    if problems:
        raise ConfigurationError(problems)
    return cfg.validate()
