"""Flat ``key=value`` configuration files.

Model keys (``n_entities``, ``space_l``, ...) and run keys (``seed``,
``n_steps``, ...) are bare; balancer and emulator settings are prefixed with
``balancer.`` and ``emu.``.  ``#`` starts a comment.  Scenario files reuse
the same syntax and add ``[run]`` section headers.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from .balancer import BalancerConfig
from .engine import RunConfig
from .model import ModelConfig
from .transport.emu import EmuConfig

BALANCER_MODES = {"ALL_ON": True, "ALL_OFF": False}
RUN_KEYS = ("seed", "n_steps", "placement", "bootstrap_timeout_s", "step_timeout_s")


class ConfigError(ValueError):
    pass


def parse_sections(text: str, source: str = "<config>") -> List[Tuple[str, Dict[str, str]]]:
    """Split into ``[(section_name, {key: raw_value})]``; the first entry is
    the unnamed preamble."""
    sections: List[Tuple[str, Dict[str, str]]] = [("", {})]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            sections.append((line[1:-1].strip(), {}))
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        sections[-1][1][key.strip()] = value.strip()
    return sections


def parse_kv(text: str, source: str = "<config>") -> Dict[str, str]:
    sections = parse_sections(text, source)
    if len(sections) > 1:
        raise ConfigError(f"{source}: section headers are not allowed here")
    return sections[0][1]


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def _build(cls, kv: Dict[str, str], prefix: str = ""):
    base = cls()
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        if key in kv:
            kwargs[f.name] = _coerce(kv[key], getattr(base, f.name), key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


@dataclass
class LoadedConfig:
    run: RunConfig
    emu: EmuConfig = field(default_factory=EmuConfig)
    extra: Dict[str, str] = field(default_factory=dict)


def build_config(kv: Dict[str, str], allow_extra=()) -> LoadedConfig:
    kv = dict(kv)
    if "balancer" in kv:
        mode = kv.pop("balancer").upper()
        if mode not in BALANCER_MODES:
            raise ConfigError(f"balancer must be ALL_ON or ALL_OFF, got {mode!r}")
        kv.setdefault("balancer.enabled", str(BALANCER_MODES[mode]))
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    known = set(RUN_KEYS) | model_keys
    known |= {"balancer." + f.name for f in dataclasses.fields(BalancerConfig)}
    known |= {"emu." + f.name for f in dataclasses.fields(EmuConfig)}
    extra = {k: v for k, v in kv.items() if k not in known}
    unknown = sorted(k for k in extra if k not in allow_extra)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    model = _build(ModelConfig, kv)
    bal = _build(BalancerConfig, kv, "balancer.")
    emu = _build(EmuConfig, kv, "emu.")
    run_kwargs = {}
    defaults = RunConfig()
    for key in RUN_KEYS:
        if key in kv:
            run_kwargs[key] = _coerce(kv[key], getattr(defaults, key), key)
    try:
        run = RunConfig(model=model, balancer=bal, **run_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return LoadedConfig(run, emu, extra)


def load_config(path: str | Path) -> LoadedConfig:
    p = Path(path)
    return build_config(parse_kv(p.read_text(encoding="utf-8"), str(p)))
