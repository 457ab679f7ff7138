"""Run configuration: YAML loading, static validation and construction of run objects.

A configuration is a nested mapping with the blocks ``model``, ``grid``,
``forcing``, ``wigner``, ``oracle``, ``check`` and ``outputs``.  Only
``model`` and ``grid`` are required.  :func:`validate` inspects a raw
mapping and returns every problem it finds, each tagged with the dotted path
of the offending field; :func:`load_config` turns a valid mapping into a
:class:`RunConfig`.

Time-dependent coefficients (forcing strengths) are written either as a
number or as ``{offset, amplitude, frequency, phase}``, meaning
``offset + amplitude * sin(frequency * t + phase)``.
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bath import Family, SpectralModel
from .errors import ConfigError
from .grid import TimeGrid
from .master import ForcingKind, ForcingSpec
from .propagator import STEP_LIMIT

BLOCKS = ("model", "grid", "forcing", "wigner", "oracle", "check", "outputs")
MODEL_FIELDS = {"family", "gamma0", "cutoff", "temperature", "mass", "omega"}
MODEL_REQUIRED = ("family", "gamma0", "temperature", "omega")
GRID_FIELDS = {"t_max", "dt", "master_dt"}
FORCING_FIELDS = {"kind", "force", "matrix", "k1", "k2", "terms", "classical_characteristics_only",
                  "contraction_sign"}
WIGNER_FIELDS = {"x_window", "p_window", "nx", "np", "mean", "covariance", "stride", "generator",
                 "accuracy", "t_end"}
ORACLE_FIELDS = {"n", "seed", "times", "vprime", "chunk", "pairs"}
CHECK_FIELDS = {"spring", "force"}
OUTPUT_FIELDS = {"directory", "snapshots", "coarse", "plots"}
PROFILE_FIELDS = {"offset", "amplitude", "frequency", "phase"}


@dataclass
class Diagnostic:
    """One validation finding."""

    level: str
    path: str
    message: str

    def __str__(self):
        return f"{self.level}: {self.path}: {self.message}"


class _Collector:
    def __init__(self):
        self.items = []

    def error(self, path, message):
        self.items.append(Diagnostic("error", path, message))

    def warning(self, path, message):
        self.items.append(Diagnostic("warning", path, message))


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _number(diag, block, name, path, required=False, positive=False, nonnegative=False):
    if name not in block:
        if required:
            diag.error(f"{path}.{name}", "missing required field")
        return None
    v = block[name]
    if not _is_number(v):
        diag.error(f"{path}.{name}", f"expected a number, got {v!r}")
        return None
    if positive and not v > 0:
        diag.error(f"{path}.{name}", f"must be > 0 (got {v})")
    if nonnegative and not v >= 0:
        diag.error(f"{path}.{name}", f"must be >= 0 (got {v})")
    return float(v)


def _unknown(diag, block, allowed, path):
    for key in block:
        if key not in allowed:
            diag.error(f"{path}.{key}", f"unknown field (allowed: {', '.join(sorted(allowed))})")


def _mapping(diag, raw, name):
    block = raw.get(name)
    if block is None:
        return None
    if not isinstance(block, dict):
        diag.error(name, "expected a mapping")
        return None
    return block


def _multiple(value, step):
    ratio = value / step
    return abs(ratio - round(ratio)) < 1e-6 * max(1.0, ratio)


def _check_profile(diag, value, path):
    if _is_number(value):
        return
    if isinstance(value, dict):
        _unknown(diag, value, PROFILE_FIELDS, path)
        for key, v in value.items():
            if key in PROFILE_FIELDS and not _is_number(v):
                diag.error(f"{path}.{key}", f"expected a number, got {v!r}")
        return
    diag.error(path, "expected a number or {offset, amplitude, frequency, phase}")


def _check_window(diag, value, path):
    if not (isinstance(value, (list, tuple)) and len(value) == 2 and all(map(_is_number, value))):
        diag.error(path, "expected [lower, upper]")
        return None
    if not value[0] < value[1]:
        diag.error(path, f"lower bound must be below upper bound (got {value})")
        return None
    return float(value[0]), float(value[1])


def validate(raw):
    """Static checks of a raw configuration mapping.

    Never touches the filesystem.  Problems are collected, not raised.

    Returns
    -------
    list of Diagnostic
        Empty for a well-formed configuration.  ``error`` entries make the
        configuration unusable; ``warning`` entries flag likely trouble.
    """
    diag = _Collector()
    if not isinstance(raw, dict):
        diag.error("<root>", "configuration must be a mapping")
        return diag.items
    _unknown(diag, raw, set(BLOCKS), "<root>")

    model = _mapping(diag, raw, "model")
    if model is None and "model" not in raw:
        diag.error("model", "missing required block")
    rate = None
    if model is not None:
        _unknown(diag, model, MODEL_FIELDS, "model")
        family = model.get("family")
        if family is None:
            diag.error("model.family", "missing required field")
        elif family not in {f.value for f in Family}:
            diag.error("model.family", f"unknown family {family!r} (use {', '.join(f.value for f in Family)})")
        g0 = _number(diag, model, "gamma0", "model", required=True, nonnegative=True)
        _number(diag, model, "temperature", "model", required=True, nonnegative=True)
        w = _number(diag, model, "omega", "model", required=True, nonnegative=True)
        _number(diag, model, "mass", "model", positive=True)
        lam = _number(diag, model, "cutoff", "model", required=family not in (None, "local"), positive=True)
        rates = [v for v in (w, g0, lam if family != "local" else None) if v is not None]
        rate = max(rates) if rates else None

    grid = _mapping(diag, raw, "grid")
    if grid is None and "grid" not in raw:
        diag.error("grid", "missing required block")
    dt = t_max = None
    if grid is not None:
        _unknown(diag, grid, GRID_FIELDS, "grid")
        t_max = _number(diag, grid, "t_max", "grid", required=True, positive=True)
        dt = _number(diag, grid, "dt", "grid", required=True, positive=True)
        mdt = _number(diag, grid, "master_dt", "grid", positive=True)
        if dt and t_max and not _multiple(t_max, dt):
            diag.error("grid.t_max", f"t_max={t_max} is not a multiple of dt={dt}")
        if dt and mdt and not _multiple(mdt, dt):
            diag.error("grid.master_dt", f"master_dt={mdt} is not a multiple of dt={dt}")
        if dt and rate:
            bound = STEP_LIMIT / rate
            if dt > bound * (1 + 1e-12):
                diag.warning(
                    "grid.dt",
                    f"dt={dt:g} exceeds the step bound dt <= {STEP_LIMIT:g}/max(omega, gamma0, cutoff) = "
                    f"{bound:.4g}; propagator stages will refuse to run",
                )

    def on_grid(value, path):
        if dt and t_max and _is_number(value):
            if not (0 <= value <= t_max * (1 + 1e-12) and _multiple(value, dt)):
                diag.error(path, f"time {value} is not on the grid (dt={dt}, t_max={t_max})")

    forcing = _mapping(diag, raw, "forcing")
    if forcing is not None:
        _unknown(diag, forcing, FORCING_FIELDS, "forcing")
        kind = forcing.get("kind")
        kinds = {k.value for k in ForcingKind}
        if kind not in kinds:
            diag.error("forcing.kind", f"expected one of {', '.join(sorted(kinds))}, got {kind!r}")
        needed = {"external": "force", "linear": "matrix", "quadratic": "k1", "cubic": "k2",
                  "polynomial": "terms"}.get(kind)
        if needed and needed not in forcing:
            diag.error(f"forcing.{needed}", f"missing required field for kind {kind!r}")
        if kind == "external" and "force" in forcing:
            f = forcing["force"]
            if not (isinstance(f, list) and len(f) == 2):
                diag.error("forcing.force", "expected [F_x, F_p]")
            else:
                for i, v in enumerate(f):
                    _check_profile(diag, v, f"forcing.force[{i}]")
        if kind == "linear" and "matrix" in forcing:
            mat = forcing["matrix"]
            if not (isinstance(mat, list) and len(mat) == 2 and all(isinstance(r, list) and len(r) == 2 for r in mat)):
                diag.error("forcing.matrix", "expected a 2x2 nested list")
            else:
                for i in range(2):
                    for j in range(2):
                        _check_profile(diag, mat[i][j], f"forcing.matrix[{i}][{j}]")
        for name in ("k1", "k2"):
            if name in forcing:
                _check_profile(diag, forcing[name], f"forcing.{name}")
        if kind == "polynomial" and "terms" in forcing:
            terms = forcing["terms"]
            if not isinstance(terms, list) or not terms:
                diag.error("forcing.terms", "expected a non-empty list of {d, b, coefficient}")
            else:
                for i, term in enumerate(terms):
                    path = f"forcing.terms[{i}]"
                    if not isinstance(term, dict):
                        diag.error(path, "expected {d, b, coefficient}")
                        continue
                    _unknown(diag, term, {"d", "b", "coefficient"}, path)
                    d, b = term.get("d"), term.get("b")
                    if not (isinstance(d, int) and isinstance(b, int) and d >= 0 and b >= 0):
                        diag.error(path, "d and b must be non-negative integers")
                    elif d < 1 and b < 1:
                        diag.error(path, "needs d >= 1 or b >= 1")
                    if "coefficient" not in term:
                        diag.error(f"{path}.coefficient", "missing required field")
                    else:
                        _check_profile(diag, term["coefficient"], f"{path}.coefficient")
        sign = forcing.get("contraction_sign", 1)
        if sign not in (1, -1):
            diag.error("forcing.contraction_sign", "must be +1 or -1")

    wig = _mapping(diag, raw, "wigner")
    if wig is not None:
        _unknown(diag, wig, WIGNER_FIELDS, "wigner")
        windows = [_check_window(diag, wig[k], f"wigner.{k}") if k in wig else None for k in ("x_window", "p_window")]
        for name in ("nx", "np", "stride"):
            if name in wig and not (isinstance(wig[name], int) and wig[name] >= (8 if name != "stride" else 1)):
                diag.error(f"wigner.{name}", f"expected an integer >= {8 if name != 'stride' else 1}")
        mean = wig.get("mean", [0.0, 0.0])
        if not (isinstance(mean, list) and len(mean) == 2 and all(map(_is_number, mean))):
            diag.error("wigner.mean", "expected [x, p]")
            mean = None
        cov = wig.get("covariance")
        if cov is None:
            diag.error("wigner.covariance", "missing required field")
        else:
            try:
                c = np.array(cov, dtype=float)
                ok = c.shape == (2, 2) and np.allclose(c, c.T) and np.all(np.linalg.eigvalsh(c) > 0)
            except (TypeError, ValueError):
                ok = False
            if not ok:
                diag.error("wigner.covariance", "expected a symmetric positive definite 2x2 matrix")
            elif mean is not None:
                sd = np.sqrt(np.diag(c))
                for axis, win in enumerate(windows):
                    name = "x_window" if axis == 0 else "p_window"
                    if win is not None and (win[0] > mean[axis] - 6 * sd[axis] or win[1] < mean[axis] + 6 * sd[axis]):
                        diag.error(f"wigner.{name}", "window does not cover the initial mean +- 6 standard deviations")
        if wig.get("generator", "L0") not in ("L0", "L0+L1"):
            diag.error("wigner.generator", "expected 'L0' or 'L0+L1'")
        if wig.get("generator") == "L0+L1" and forcing is None:
            diag.error("wigner.generator", "'L0+L1' needs a forcing block")
        if wig.get("accuracy", 4) not in (2, 4):
            diag.error("wigner.accuracy", "expected 2 or 4")
        if "t_end" in wig:
            on_grid(wig["t_end"], "wigner.t_end")

    orc = _mapping(diag, raw, "oracle")
    if orc is not None:
        _unknown(diag, orc, ORACLE_FIELDS, "oracle")
        for name in ("n", "chunk"):
            if name in orc and not (isinstance(orc[name], int) and orc[name] >= 2):
                diag.error(f"oracle.{name}", "expected an integer >= 2")
        if "seed" in orc and not (isinstance(orc["seed"], int) and orc["seed"] >= 0):
            diag.error("oracle.seed", "expected a non-negative integer")
        for i, t in enumerate(orc.get("times", [])):
            on_grid(t, f"oracle.times[{i}]")
        for i, pair in enumerate(orc.get("pairs", [])):
            if not (isinstance(pair, list) and len(pair) == 2):
                diag.error(f"oracle.pairs[{i}]", "expected [t1, t2]")
                continue
            for j, t in enumerate(pair):
                on_grid(t, f"oracle.pairs[{i}][{j}]")
        vp = orc.get("vprime")
        if vp is not None and not (isinstance(vp, list) and vp and all(map(_is_number, vp))):
            diag.error("oracle.vprime", "expected polynomial coefficients [c0, c1, ...]")

    chk = _mapping(diag, raw, "check")
    if chk is not None:
        _unknown(diag, chk, CHECK_FIELDS, "check")
        _number(diag, chk, "spring", "check")
        if "force" in chk:
            f = chk["force"]
            if not (isinstance(f, list) and len(f) == 2):
                diag.error("check.force", "expected [F_x, F_p]")
            else:
                for i, v in enumerate(f):
                    _check_profile(diag, v, f"check.force[{i}]")

    out = _mapping(diag, raw, "outputs")
    if out is not None:
        _unknown(diag, out, OUTPUT_FIELDS, "outputs")
        if "directory" in out and not isinstance(out["directory"], str):
            diag.error("outputs.directory", "expected a path string")
        if "coarse" in out and not (isinstance(out["coarse"], int) and out["coarse"] >= 1):
            diag.error("outputs.coarse", "expected an integer >= 1")
        for name in ("snapshots", "plots"):
            if name in out and not isinstance(out[name], bool):
                diag.error(f"outputs.{name}", "expected true or false")
    return diag.items


def profile(value, t):
    """Evaluate a coefficient profile (number or sine spec) on times ``t``."""
    t = np.asarray(t, dtype=float)
    if _is_number(value):
        return np.full_like(t, float(value))
    return value.get("offset", 0.0) + value.get("amplitude", 0.0) * np.sin(
        value.get("frequency", 0.0) * t + value.get("phase", 0.0)
    )


def config_hash(raw):
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RunConfig:
    """Validated configuration with the run objects built from it.

    Attributes
    ----------
    raw : dict
        The configuration mapping (after command-line overrides); echoed
        into the manifest.
    warnings : list of Diagnostic
    """

    raw: dict
    model: SpectralModel
    grid: TimeGrid
    master_stride: int
    forcing: dict = None
    wigner: dict = None
    oracle: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def hash(self):
        return config_hash(self.raw)

    @property
    def seed(self):
        return self.oracle.get("seed", 0)

    def forcing_spec(self):
        """The :class:`ForcingSpec` of the forcing block (``None`` if absent)."""
        if self.forcing is None:
            return None
        f, t, n1 = self.forcing, self.grid.t, len(self.grid)
        kind = f["kind"]
        if kind == "external":
            values = np.stack([profile(v, t) for v in f["force"]], axis=1)
        elif kind == "linear":
            values = np.empty((n1, 2, 2))
            for i in range(2):
                for j in range(2):
                    values[:, i, j] = profile(f["matrix"][i][j], t)
        elif kind == "quadratic":
            values = profile(f["k1"], t)
        elif kind == "cubic":
            values = profile(f["k2"], t)
        else:
            values = [(term["d"], term["b"], profile(term["coefficient"], t)) for term in f["terms"]]
        return ForcingSpec(kind, values, bool(f.get("classical_characteristics_only", False)))

    @property
    def contraction_sign(self):
        return float((self.forcing or {}).get("contraction_sign", 1))

    def check_force(self):
        """External force for the consistency suite (``None`` selects the default drive)."""
        if "force" not in self.check:
            return None
        return np.stack([profile(v, self.grid.t) for v in self.check["force"]], axis=1)


def read_config(path):
    """Parse a YAML configuration file into a mapping."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration {path} is not valid YAML: {exc}") from exc
    return {} if raw is None else raw


def build_config(raw, seed=None):
    """Validate ``raw`` and build a :class:`RunConfig`.

    Parameters
    ----------
    seed : int, optional
        Overrides ``oracle.seed``.

    Raises
    ------
    ConfigError
        Listing every error diagnostic.
    """
    raw = copy.deepcopy(raw)
    if seed is not None and isinstance(raw, dict):
        raw.setdefault("oracle", {})
        if isinstance(raw["oracle"], dict):
            raw["oracle"]["seed"] = int(seed)
    diags = validate(raw)
    errors = [str(d) for d in diags if d.level == "error"]
    if errors:
        raise ConfigError(errors)
    m = raw["model"]
    model = SpectralModel(
        m["family"], float(m["gamma0"]), float(m.get("cutoff", 1.0)), float(m["temperature"]),
        float(m.get("mass", 1.0)), float(m["omega"]),
    )
    g = raw["grid"]
    grid = TimeGrid.from_tmax(float(g["t_max"]), float(g["dt"]))
    stride = int(round(float(g.get("master_dt", g["dt"])) / float(g["dt"])))
    return RunConfig(
        raw=raw, model=model, grid=grid, master_stride=stride, forcing=raw.get("forcing"),
        wigner=raw.get("wigner"), oracle=raw.get("oracle") or {}, check=raw.get("check") or {},
        outputs=raw.get("outputs") or {}, warnings=[d for d in diags if d.level == "warning"],
    )


def load_config(path, seed=None):
    """Read, validate and build a configuration file."""
    return build_config(read_config(Path(path)), seed)
