"""Run configuration: one JSON file plus command-line overrides."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .ingest import CUMULATIVE, FLAT
from .methods import ALL_METHODS, METHODS, MethodConfig
from .pflm import EFFECTIVE_DF, LITERAL


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    n_basis: int = 20
    order: int = 4
    threshold: float = 0.95
    pls_folds: int = 5
    pls_max_components: int = 10
    pls_components: object = "cv"
    kappa_grid: list | None = None
    bic_criterion: str = EFFECTIVE_DF
    rf_mode: str = FLAT
    causal: bool = False
    n_train: int = 200
    market: str = "SPX"
    methods: list | None = None
    ticks: str | None = None
    yields: str | None = None
    sectors: str | None = None
    characteristics: str | None = None
    output: str = "out"

    def method_config(self) -> MethodConfig:
        return MethodConfig(
            n_basis=self.n_basis,
            order=self.order,
            threshold=self.threshold,
            pls_components=self.pls_components,
            pls_folds=self.pls_folds,
            pls_max_components=self.pls_max_components,
            kappa_grid=None if self.kappa_grid is None else tuple(self.kappa_grid),
            bic_criterion=self.bic_criterion,
            causal=self.causal,
        )

    @property
    def method_list(self) -> list[str]:
        return list(METHODS if self.methods is None else self.methods)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


_TYPES = {f.name: f for f in fields(RunConfig)}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(rf'"{re.escape(key)}"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def validate(cfg: RunConfig) -> list[tuple[str, str]]:
    """(field, message) pairs for every invalid field."""
    bad = []

    def check(name, ok, msg):
        if not ok:
            bad.append((name, msg))

    check("n_basis", _is_int(cfg.n_basis) and cfg.n_basis >= 2, "must be an integer >= 2")
    check("order", _is_int(cfg.order) and 2 <= cfg.order <= (cfg.n_basis if _is_int(cfg.n_basis) else 0),
          "must be an integer with 2 <= order <= n_basis")
    check("threshold", _is_num(cfg.threshold) and 0 < cfg.threshold <= 1, "must lie in (0, 1]")
    check("pls_folds", _is_int(cfg.pls_folds) and cfg.pls_folds >= 2, "must be an integer >= 2")
    check("pls_max_components", _is_int(cfg.pls_max_components) and cfg.pls_max_components >= 1,
          "must be an integer >= 1")
    check("pls_components", cfg.pls_components in ("cv", "full") or (_is_int(cfg.pls_components) and cfg.pls_components >= 1),
          'must be "cv", "full" or a positive integer')
    if cfg.kappa_grid is not None:
        check("kappa_grid", isinstance(cfg.kappa_grid, list) and len(cfg.kappa_grid) > 0
              and all(_is_num(k) and k >= 0 for k in cfg.kappa_grid), "must be a non-empty list of non-negative numbers")
    check("bic_criterion", cfg.bic_criterion in (EFFECTIVE_DF, LITERAL), f"must be {EFFECTIVE_DF!r} or {LITERAL!r}")
    check("rf_mode", cfg.rf_mode in (FLAT, CUMULATIVE), f"must be {FLAT!r} or {CUMULATIVE!r}")
    check("causal", isinstance(cfg.causal, bool), "must be true or false")
    check("n_train", _is_int(cfg.n_train) and cfg.n_train >= 1, "must be a positive integer")
    check("market", isinstance(cfg.market, str) and cfg.market != "", "must be a non-empty symbol")
    if cfg.methods is not None:
        check("methods", isinstance(cfg.methods, list) and len(cfg.methods) > 0
              and all(m in ALL_METHODS for m in cfg.methods), f"must be a non-empty list drawn from {list(ALL_METHODS)}")
    for name in ("ticks", "yields", "sectors", "characteristics", "output"):
        v = getattr(cfg, name)
        check(name, v is None or isinstance(v, str), "must be a path string")
    return bad


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read the JSON file (if any), apply non-None overrides, validate.

    Errors name the offending field and, for file values, its line.
    """
    data, text, origin = {}, "", "defaults"
    if path is not None:
        origin = str(path)
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}:1: top level must be an object")
        for key in data:
            if key not in _TYPES:
                raise ConfigError(f"{path}:{_line_of(text, key)}: unknown field {key!r}")
    from_file = set(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
            from_file.discard(key)
    cfg = RunConfig(**data)
    problems = validate(cfg)
    if problems:
        msgs = []
        for name, msg in problems:
            where = f"{origin}:{_line_of(text, name)}" if name in from_file else "command line"
            msgs.append(f"{where}: field {name!r} {msg} (got {getattr(cfg, name)!r})")
        raise ConfigError("; ".join(msgs))
    return cfg
