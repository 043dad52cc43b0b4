"""Declarative sweep configuration (INI: flat key-value pairs under sections).

::

    [input]
    source = synthetic          ; synthetic | mtx | csv | store
    path = data.mtx             ; mtx / csv / store sources
    labels = labels.txt         ; one integer label per line (mtx / csv / store)
    n = 5000                    ; synthetic sources
    p = 400
    rank = 60
    n_classes = 2
    noise_sd = 0.3
    seed = 0

    [pipeline]
    normalization = dense       ; sparse | dense | none
    column_kinds = continuous   ; continuous | infer
    methods = rp, ls_rpca
    ks = 5, 10, 20, 40
    oversampling = minimal      ; comma list of minimal | double | fixed:N
    seeds = 0, 1, 2, 3, 4
    folds = 5                   ; 1 selects an 80/20 holdout
    root_seed = 0
    slice_rows = 1024
    fit_rows =                  ; optional cap on rows used to fit projections
    omega_seeds = independent   ; independent | shared
    reg = 1.0
    max_iter = 500
    tol = 1e-6

    [output]
    dir = results

Everything is validated in :func:`load_config` before any data is touched.
Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .normalize import MODES as NORM_MODES
from .rpca import METHODS, parse_oversample, resolve_kbar

SOURCES = ("synthetic", "mtx", "csv", "store")

_ALLOWED = {
    "input": {"source", "path", "labels", "n", "p", "rank", "n_classes", "noise_sd", "seed"},
    "pipeline": {
        "normalization", "column_kinds", "methods", "ks", "oversampling", "seeds", "folds",
        "root_seed", "slice_rows", "fit_rows", "omega_seeds", "reg", "max_iter", "tol",
    },
    "output": {"dir"},
}


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    p: int
    rank: int
    n_classes: int
    noise_sd: float
    seed: int


@dataclass(frozen=True)
class PipelineConfig:
    source: str
    output_dir: Path
    path: Path | None = None
    labels: Path | None = None
    synthetic: SyntheticSpec | None = None
    normalization: str = "dense"
    column_kinds: str = "continuous"
    methods: tuple = ("rp", "ls_rpca")
    ks: tuple = (5, 10, 20, 40)
    oversampling: tuple = ("minimal",)
    seeds: tuple = (0,)
    folds: int = 5
    root_seed: int = 0
    slice_rows: int = 1024
    fit_rows: int | None = None
    omega_seeds: str = "independent"
    reg: float = 1.0
    max_iter: int = 500
    tol: float = 1e-6

    def sweep_kwargs(self) -> dict:
        return {
            "ks": list(self.ks),
            "methods": list(self.methods),
            "oversampling_modes": list(self.oversampling),
            "n_folds": self.folds,
            "seeds": list(self.seeds),
            "root_seed": self.root_seed,
            "norm_mode": self.normalization,
            "column_kinds": "infer" if self.column_kinds == "infer" else None,
            "reg": self.reg,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "slice_rows": self.slice_rows,
            "fit_rows": self.fit_rows,
            "omega_seeds": self.omega_seeds,
        }


def _get(section, key, conv, default=None, required=False):
    raw = section.get(key, fallback=None)
    if raw is None or raw.strip() == "":
        if required:
            raise ConfigError(f"[{section.name}] {key} is required")
        return default
    try:
        return conv(raw.strip())
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from None


def _int_list(raw):
    return tuple(int(t) for t in raw.replace(",", " ").split())


def _str_list(raw):
    return tuple(t for t in raw.replace(",", " ").split())


def load_config(path) -> PipelineConfig:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_parser(cp, base=path.parent)


def config_from_parser(cp: configparser.ConfigParser, base=Path(".")) -> PipelineConfig:
    base = Path(base)
    unknown_sections = set(cp.sections()) - set(_ALLOWED)
    if unknown_sections:
        raise ConfigError(f"unknown section(s): {sorted(unknown_sections)}")
    for name in cp.sections():
        extra = set(cp[name].keys()) - _ALLOWED[name]
        if extra:
            raise ConfigError(f"unknown key(s) in [{name}]: {sorted(extra)}")
    for name in ("input", "output"):
        if not cp.has_section(name):
            raise ConfigError(f"missing [{name}] section")
    inp, out = cp["input"], cp["output"]
    pipe = cp["pipeline"] if cp.has_section("pipeline") else cp[cp.default_section]

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    source = _get(inp, "source", str, required=True)
    if source not in SOURCES:
        raise ConfigError(f"[input] source must be one of {SOURCES}, got {source!r}")
    synthetic = None
    data_path = labels = None
    if source == "synthetic":
        synthetic = SyntheticSpec(
            n=_get(inp, "n", int, required=True),
            p=_get(inp, "p", int, required=True),
            rank=_get(inp, "rank", int, required=True),
            n_classes=_get(inp, "n_classes", int, 2),
            noise_sd=_get(inp, "noise_sd", float, 0.0),
            seed=_get(inp, "seed", int, 0),
        )
        s = synthetic
        if min(s.n, s.p, s.rank, s.n_classes) < 1 or s.rank > min(s.n, s.p) or s.noise_sd < 0:
            raise ConfigError(f"invalid synthetic spec {s}")
        if s.n_classes < 2:
            raise ConfigError("synthetic data needs at least two classes")
    else:
        data_path = resolve(_get(inp, "path", str, required=True))
        labels = _get(inp, "labels", str)
        labels = resolve(labels) if labels else None
        if labels is None and source != "store":
            raise ConfigError(f"[input] labels is required for source {source!r}")

    normalization = _get(pipe, "normalization", str, "dense")
    if normalization not in NORM_MODES:
        raise ConfigError(f"normalization must be one of {NORM_MODES}")
    column_kinds = _get(pipe, "column_kinds", str, "continuous")
    if column_kinds not in ("continuous", "infer"):
        raise ConfigError("column_kinds must be 'continuous' or 'infer'")
    methods = _get(pipe, "methods", _str_list, ("rp", "ls_rpca"))
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s) {bad}; choose from {METHODS}")
    ks = _get(pipe, "ks", _int_list, (5, 10, 20, 40))
    if not ks or min(ks) < 1:
        raise ConfigError("ks must be a nonempty list of positive integers")
    if synthetic is not None and max(ks) > synthetic.p:
        raise ConfigError(f"K={max(ks)} exceeds P={synthetic.p}")
    try:
        oversampling = tuple(parse_oversample(m) for m in _get(pipe, "oversampling", _str_list, ("minimal",)))
        for k in ks:
            for m in oversampling:
                resolve_kbar(k, m)
    except ValueError as exc:
        raise ConfigError(f"[pipeline] oversampling: {exc}") from None
    folds = _get(pipe, "folds", int, 5)
    if folds < 1:
        raise ConfigError("folds must be >= 1")
    seeds = _get(pipe, "seeds", _int_list, (0,))
    if not seeds:
        raise ConfigError("seeds must be nonempty")
    slice_rows = _get(pipe, "slice_rows", int, 1024)
    max_kbar = max(resolve_kbar(k, m) for k in ks for m in oversampling)
    if slice_rows < max_kbar:
        raise ConfigError(f"slice_rows={slice_rows} is smaller than the largest K-bar={max_kbar}")
    fit_rows = _get(pipe, "fit_rows", int)
    if fit_rows is not None and fit_rows < max_kbar:
        raise ConfigError(f"fit_rows={fit_rows} is smaller than the largest K-bar={max_kbar}")
    omega_seeds = _get(pipe, "omega_seeds", str, "independent")
    if omega_seeds not in ("independent", "shared"):
        raise ConfigError("omega_seeds must be 'independent' or 'shared'")
    reg = _get(pipe, "reg", float, 1.0)
    max_iter = _get(pipe, "max_iter", int, 500)
    tol = _get(pipe, "tol", float, 1e-6)
    if reg <= 0 or max_iter < 1 or tol <= 0:
        raise ConfigError("reg and tol must be positive, max_iter >= 1")

    return PipelineConfig(
        source=source,
        output_dir=resolve(_get(out, "dir", str, required=True)),
        path=data_path,
        labels=labels,
        synthetic=synthetic,
        normalization=normalization,
        column_kinds=column_kinds,
        methods=methods,
        ks=ks,
        oversampling=oversampling,
        seeds=seeds,
        folds=folds,
        root_seed=_get(pipe, "root_seed", int, 0),
        slice_rows=slice_rows,
        fit_rows=fit_rows,
        omega_seeds=omega_seeds,
        reg=reg,
        max_iter=max_iter,
        tol=tol,
    )
