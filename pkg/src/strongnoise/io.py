"""Flat configuration documents and CSV output.

A configuration is an INI-like text with three sections::

    [chain]
    mode = discrete          # or continuous
    d = 2
    lambda = 0.5, 0.5; 0.5, 0.5
    a = 0, 1
    h = 0, 1
    nu = 0.5, 0.5            # optional, defaults to the stationary law

    [noise]
    kind = gaussian          # or cauchy
    params = scale=1.0       # optional

    [run]
    sigmas = 5, 10, 20
    epsilons = 0.1, 0.03, 0.01
    horizon = 100000
    burn_in = 10000
    trials = 20
    dt = 0.001
    seed = 7

Unknown sections or keys and repeated keys are errors.  ``configparser``
is not used because it cannot report the line of an offending value.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields

import numpy as np

from .experiments import ExperimentConfig, SweepRow, WeakRow
from .markov import is_ergodic, stationary_distribution
from .model import ModelError, noise_model, validate_chain

SCHEMA = {
    "chain": {"mode", "d", "lambda", "a", "h", "nu"},
    "noise": {"kind", "params"},
    "run": {"sigmas", "epsilons", "horizon", "burn_in", "trials", "dt", "seed"},
}
REQUIRED = {("chain", k) for k in ("mode", "d", "lambda", "a", "h")}
COMMAND_REQUIRED = {
    "sweep": {("run", "sigmas")},
    "weak-sweep": {("run", "sigmas"), ("run", "epsilons")},
}

SWEEP_COLUMNS = (
    "sigma", "n_samples", "mse_hat", "mse_stderr", "map_hat", "map_stderr",
    "mse_gap_scaled", "mse_gap_stderr", "map_gap_scaled", "map_gap_stderr",
    "pred_mse_gap", "pred_map_gap",
)
WEAK_COLUMNS = tuple(f.name for f in fields(WeakRow))


class ConfigError(ModelError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


@dataclass
class _Entry:
    value: str
    line: int
    column: int


def _tokenize(text: str) -> dict[str, dict[str, _Entry]]:
    doc: dict[str, dict[str, _Entry]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", lineno, 1)
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, raw.index("[") + 1)
            if section in doc:
                raise ConfigError(f"duplicate section [{section}]", lineno, raw.index("[") + 1)
            doc[section] = {}
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno, 1)
        if section is None:
            raise ConfigError("key outside of any section", lineno, 1)
        key, value = line.split("=", 1)
        key = key.strip()
        col = raw.index("=") + 2 + (len(value) - len(value.lstrip()))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, raw.index(key) + 1)
        if key in doc[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}] (first on line {doc[section][key].line})",
                              lineno, raw.index(key) + 1)
        doc[section][key] = _Entry(value.strip(), lineno, col)
    return doc


def _number(text: str, entry: _Entry, kind=float):
    try:
        v = kind(text)
    except ValueError:
        # integers written as 1e5 are accepted when exact
        if kind is int:
            try:
                f = float(text)
            except ValueError:
                f = math.nan
            if f.is_integer():
                return int(f)
        raise ConfigError(f"malformed number {text.strip()!r}", entry.line, entry.column) from None
    if kind is float and not math.isfinite(v):
        raise ConfigError(f"non-finite number {text.strip()!r}", entry.line, entry.column)
    return v


def _vector(entry: _Entry, kind=float) -> list:
    if not entry.value:
        return []
    return [_number(tok, entry, kind) for tok in entry.value.split(",")]


def _matrix(entry: _Entry, d: int) -> np.ndarray:
    rows = [r for r in entry.value.split(";")]
    if len(rows) != d:
        raise ConfigError(f"lambda has {len(rows)} rows, expected d={d}", entry.line, entry.column)
    out = []
    for i, r in enumerate(rows, start=1):
        vals = [_number(tok, entry) for tok in r.split(",")]
        if len(vals) != d:
            raise ConfigError(f"lambda row {i} has {len(vals)} entries, expected d={d}", entry.line, entry.column)
        out.append(vals)
    return np.asarray(out)


def _params(entry: _Entry) -> dict[str, float]:
    out = {}
    for tok in filter(None, (t.strip() for t in entry.value.split(","))):
        if "=" not in tok:
            raise ConfigError(f"noise parameter {tok!r} is not 'name=value'", entry.line, entry.column)
        k, v = (s.strip() for s in tok.split("=", 1))
        if k != "scale":
            raise ConfigError(f"unknown noise parameter {k!r}", entry.line, entry.column)
        out[k] = _number(v, entry)
    return out


def parse_config(text: str, command: str | None = None) -> ExperimentConfig:
    """Parse and fully validate a configuration document."""
    doc = _tokenize(text)
    need = REQUIRED | COMMAND_REQUIRED.get(command or "", set())
    for sec, key in sorted(need):
        if key not in doc.get(sec, {}):
            raise ConfigError(f"missing required key {key!r} in [{sec}]")
    ch = doc["chain"]
    mode = ch["mode"].value
    if mode not in ("discrete", "continuous"):
        raise ConfigError(f"mode must be 'discrete' or 'continuous', got {mode!r}", ch["mode"].line, ch["mode"].column)
    d = _number(ch["d"].value, ch["d"], int)
    if d < 1:
        raise ConfigError("d must be at least 1", ch["d"].line, ch["d"].column)
    L = _matrix(ch["lambda"], d)
    vecs = {}
    for key in ("a", "h", "nu"):
        if key in ch:
            vecs[key] = _vector(ch[key])
            if len(vecs[key]) != d:
                raise ConfigError(f"{key} has {len(vecs[key])} entries, expected d={d}", ch[key].line, ch[key].column)
    try:
        if "nu" in vecs:
            chain = validate_chain(mode, L, vecs["a"], vecs["h"], vecs["nu"])
        else:
            chain = validate_chain(mode, L, vecs["a"], vecs["h"], np.full(d, 1.0 / d))
            if is_ergodic(chain).ergodic:
                chain = chain.replace(nu=stationary_distribution(chain))
    except ModelError as exc:
        raise ConfigError(str(exc), ch["lambda"].line) from None

    nz = doc.get("noise", {})
    kind = nz["kind"].value if "kind" in nz else "gaussian"
    params = _params(nz["params"]) if "params" in nz else {}
    try:
        noise = noise_model(kind, params.get("scale", 1.0))
    except ModelError as exc:
        e = nz.get("kind")
        raise ConfigError(str(exc), e.line if e else None, e.column if e else None) from None

    run = doc.get("run", {})
    kw = {}
    if "sigmas" in run:
        kw["sigmas"] = tuple(_vector(run["sigmas"]))
    if "epsilons" in run:
        kw["epsilons"] = tuple(_vector(run["epsilons"]))
    for key, kind_ in (("horizon", float), ("burn_in", float), ("trials", int), ("dt", float), ("seed", int)):
        if key in run:
            kw[key] = _number(run[key].value, run[key], kind_)
    if mode == "discrete":
        for key in ("horizon", "burn_in"):
            if key in kw:
                if not float(kw[key]).is_integer():
                    raise ConfigError(f"{key} must be a whole number of steps", run[key].line, run[key].column)
                kw[key] = int(kw[key])
    try:
        return ExperimentConfig(chain=chain, noise=noise, **kw)
    except ModelError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str, command: str | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), command)


# --- CSV ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def _csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


def _write_atomic(text: str, destination) -> None:
    if hasattr(destination, "write"):
        destination.write(text)
        return
    target = os.fspath(destination)
    folder = os.path.dirname(os.path.abspath(target))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_csv(rows: list[SweepRow], destination=None) -> str:
    """Render sweep rows (17 significant digits); also write them if asked."""
    text = _csv_text(rows, SWEEP_COLUMNS)
    if destination is not None:
        _write_atomic(text, destination)
    return text


def emit_weak_csv(rows: list[WeakRow], destination=None) -> str:
    text = _csv_text(rows, WEAK_COLUMNS)
    if destination is not None:
        _write_atomic(text, destination)
    return text


def read_csv(text: str) -> list[SweepRow]:
    """Inverse of :func:`emit_csv`."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != SWEEP_COLUMNS:
        raise ModelError(f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        vals = {c: (int(v) if c == "n_samples" else float(v)) for c, v in zip(header, rec)}
        rows.append(SweepRow(**vals))
    return rows
