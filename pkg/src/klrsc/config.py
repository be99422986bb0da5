"""Run configuration: one flat record of every tunable, plus the file parser.

The config file format is deliberately dumb::

    # comment
    p = 3
    mode = KLRSC+AR

Unknown keys, unparsable values and invariant violations raise
:class:`ConfigError` carrying the offending line number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

MODES = ("SC", "LRSC", "KLRSC", "KLRSC+AR")


class ConfigError(ValueError):
    """Raised for malformed or invalid configuration input."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        self.detail = message
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float = 1.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ConfigError(f"kernel bandwidth must be positive, got {self.bandwidth}", "sigma_g")


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the augmented-Lagrangian coding solver."""

    lambda1: float = 0.07
    lambda2: float = 0.07
    rho: float = 1.5
    tol: float = 1e-5
    max_iter: int = 100
    kernel: KernelSpec | None = field(default_factory=KernelSpec)  # None = linear kernel
    sc_iters: int = 200
    u_floor: float = 1e3

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative", "lambda1")
        if not self.rho > 1:
            raise ConfigError(f"rho must exceed 1, got {self.rho}", "rho")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol}", "tol")
        if self.max_iter < 1 or self.sc_iters < 1:
            raise ConfigError("iteration caps must be positive", "max_iter")
        if not self.u_floor > 0:
            raise ConfigError("u_floor must be positive", "u_floor")


@dataclass(frozen=True)
class RefineConfig:
    """Back-projection / autoregressive refinement parameters."""

    alpha: float = 0.05
    beta: float = 0.01
    tau: float = 0.5
    max_iter: int = 300
    tol: float = 1e-6
    data_weight: float = 1.0  # multiplies the data-fidelity term

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}", "tau")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative", "alpha")
        if not self.data_weight > 0:
            raise ConfigError("data weight must be positive", "data_norm")
        if self.max_iter < 0:
            raise ConfigError("refine_iters must be non-negative", "refine_iters")


@dataclass(frozen=True)
class SrConfig:
    p: float = 3.0
    s: float = 1.25
    n_layers: int = 4
    patch_size: int = 7
    overlap: int = 5
    k_dict: int = 60
    k_nonlocal: int = 20
    lambda1: float = 0.07
    lambda2: float = 0.07
    rho: float = 1.5
    tol: float = 1e-5
    max_iter: int = 100
    sigma_g: float = 1.0
    sc_iters: int = 200
    u_floor: float = 1e3
    tau: float = 0.5
    alpha: float = 0.05
    beta: float = 0.01
    refine_iters: int = 300
    refine_tol: float = 1e-6
    ar_eta: float = 0.01
    ar_neighbors: int = 10
    blur_sigma: float = 1.6
    blur_size: int = 7
    bicubic_a: float = -0.5
    flat_eps: float = 1e-8
    recon_scale: str = "intensity"
    refine_anchor: str = "merged"
    data_norm: str = "area"
    mode: str = "KLRSC+AR"
    chunk: int = 512
    threads: int = 0

    def __post_init__(self):
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}", key)

        if not self.p > 1:
            bad("p", f"total factor must exceed 1, got {self.p}")
        if not self.s > 1:
            bad("s", f"step factor must exceed 1, got {self.s}")
        for key in ("n_layers", "patch_size", "k_dict", "ar_neighbors", "chunk", "blur_size"):
            if getattr(self, key) < 1:
                bad(key, f"must be positive, got {getattr(self, key)}")
        if self.k_nonlocal < 0:
            bad("k_nonlocal", "must be non-negative")
        if not 0 <= self.overlap < self.patch_size:
            bad("overlap", f"need 0 <= overlap < patch_size, got {self.overlap}")
        if self.patch_size < 3:
            bad("patch_size", "gradient features need patches of at least 3x3")
        if self.blur_size % 2 == 0:
            bad("blur_size", "must be odd")
        if not self.blur_sigma > 0:
            bad("blur_sigma", "must be positive")
        if self.mode not in MODES:
            bad("mode", f"must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.recon_scale not in ("intensity", "gradient"):
            bad("recon_scale", "must be 'intensity' or 'gradient'")
        if self.refine_anchor not in ("merged", "interpolated"):
            bad("refine_anchor", "must be 'merged' or 'interpolated'")
        if self.data_norm not in ("area", "plain"):
            bad("data_norm", "must be 'area' or 'plain'")
        if self.ar_eta < 0:
            bad("ar_eta", "must be non-negative")
        if self.threads < 0:
            bad("threads", "must be non-negative")
        # nested records validate the rest
        self.solver
        self.refine

    @property
    def solver(self) -> SolverConfig:
        kernel = KernelSpec(self.sigma_g) if self.mode.startswith("KLRSC") else None
        return SolverConfig(
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            rho=self.rho,
            tol=self.tol,
            max_iter=self.max_iter,
            kernel=kernel,
            sc_iters=self.sc_iters,
            u_floor=self.u_floor,
        )

    @property
    def refine(self) -> RefineConfig:
        ar = self.mode.endswith("+AR")
        return RefineConfig(
            alpha=self.alpha if ar else 0.0,
            beta=self.beta if ar else 0.0,
            tau=self.tau,
            max_iter=self.refine_iters,
            tol=self.refine_tol,
        )

    @property
    def use_ar(self) -> bool:
        return self.mode.endswith("+AR")

    def replace(self, **changes) -> "SrConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(SrConfig)}
_ALIASES = {"N_D": "n_layers", "K_D": "k_dict", "K_N": "k_nonlocal", "sigma": "blur_sigma"}


def _coerce(key: str, raw: str, line: int | None):
    name = _ALIASES.get(key, key)
    if name not in _FIELDS:
        raise ConfigError(f"unknown key {key!r}", key, line)
    kind = type(getattr(SrConfig(), name))
    try:
        if kind is int:
            value = int(raw)
        elif kind is float:
            value = float(raw)
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}", key, line) from None
    return name, value


def _parse_lines(lines: Iterable[tuple[int | None, str]]) -> tuple[dict, dict]:
    values: dict = {}
    lines_of: dict = {}
    for lineno, text in lines:
        text = text.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"expected 'key = value', got {text!r}", None, lineno)
        key, raw = (t.strip() for t in text.split("=", 1))
        name, value = _coerce(key, raw, lineno)
        values[name] = value
        lines_of[name] = lineno
    return values, lines_of


def _build(values: dict, lines_of: dict, base: SrConfig | None = None) -> SrConfig:
    try:
        return dataclasses.replace(base or SrConfig(), **values)
    except ConfigError as exc:
        raise ConfigError(exc.detail, exc.key, lines_of.get(exc.key)) from None


def parse_config(text: str, base: SrConfig | None = None) -> SrConfig:
    values, lines_of = _parse_lines(enumerate(text.splitlines(), start=1))
    return _build(values, lines_of, base)


def load_config(path: str | Path, base: SrConfig | None = None) -> SrConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


def apply_overrides(cfg: SrConfig, overrides: Iterable[str]) -> SrConfig:
    """Apply ``key=value`` strings in order; later ones win."""
    values, lines_of = _parse_lines((None, o) for o in overrides)
    return _build(values, lines_of, cfg)


def dump_config(cfg: SrConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(SrConfig))
