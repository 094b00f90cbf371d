"""Run bookkeeping: labeled seed fan-out, artifact directory layout, TOML
configuration, and the write-once manifest recording every resolved tunable.

Every workflow writes one directory under the artifact root (``runs/`` or
$STEPSTONE_OUT) holding manifest.json, config.toml, and its CSV/JSONL/SVG
outputs, so any result can be traced to the exact seed and config that made
it and re-executed byte-identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence, Union

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

import numpy as np

from .sim import ConfigError

ARTIFACT_ROOT_ENV = "STEPSTONE_OUT"
MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.toml"


def component_seed(master: int, label: str) -> np.random.SeedSequence:
    """Child seed stream for one named component of a run.

    The label enters through a hash, so adding a new component never shifts
    the streams handed to existing ones.
    """
    tag = int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "big")
    return np.random.SeedSequence([int(master), tag])


def component_seed_int(master: int, label: str) -> int:
    """Single integer seed for modules that take one (trainers, eval suites)."""
    return int(component_seed(master, label).generate_state(1)[0])


def artifact_root() -> Path:
    return Path(os.environ.get(ARTIFACT_ROOT_ENV, "runs"))


def make_run_dir(command: str, out: Optional[str] = None) -> Path:
    """Create and return the output directory for one workflow invocation.

    --out pins the directory exactly; otherwise runs/<timestamp>-<command>
    under the artifact root, suffixed if the second-resolution name is taken.
    """
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        return path
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = artifact_root() / f"{stamp}-{command}"
    path = base
    k = 1
    while path.exists():
        k += 1
        path = Path(f"{base}-{k}")
    path.mkdir(parents=True)
    return path


def file_sha256(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- config -----------------------------------------------------------------------


def load_toml(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"bad TOML in {path}: {e}")


def apply_config(cfg, mapping: Mapping[str, Any]):
    """Overlay a mapping onto a dataclass config, rejecting unknown keys.

    Nested mappings recurse into dataclass-valued fields, so a [reward]
    table lands on TrainConfig.reward.
    """
    names = {f.name for f in dataclasses.fields(cfg)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kwargs: Dict[str, Any] = {}
    for key, value in mapping.items():
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current) and isinstance(value, Mapping):
            value = apply_config(current, value)
        kwargs[key] = value
    return dataclasses.replace(cfg, **kwargs)


def config_dict(cfg) -> Dict[str, Any]:
    """Dataclass config as a plain JSON/TOML-ready dict."""
    out = dataclasses.asdict(cfg)

    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.generic):
            return v.item()
        return v

    return clean(out)


def _toml_scalar(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")


def dump_toml(mapping: Mapping[str, Any]) -> str:
    """Serialize a config dict (scalars, lists, one table level) to TOML.

    Round-trips through tomllib; only the shapes config_dict emits are
    supported.  None-valued keys are omitted (TOML has no null).
    """
    lines = []
    tables = []
    for key, value in mapping.items():
        if value is None:
            continue
        if isinstance(value, Mapping):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_toml_scalar(value)}")
    for name, table in tables:
        lines.append("")
        lines.append(f"[{name}]")
        for key, value in table.items():
            if value is None:
                continue
            if isinstance(value, Mapping):
                raise ConfigError("config nesting deeper than one table")
            lines.append(f"{key} = {_toml_scalar(value)}")
    return "\n".join(lines) + "\n"


def write_config(run_dir: Union[str, Path], cfg_mapping: Mapping[str, Any]) -> Path:
    path = Path(run_dir) / CONFIG_NAME
    path.write_text(dump_toml(cfg_mapping))
    return path


# -- manifest ---------------------------------------------------------------------


def _code_version() -> str:
    try:
        from importlib.metadata import version

        return version("stepstone")
    except Exception:  # pragma: no cover - uninstalled tree
        return "0+unknown"


def build_manifest(command: str, config: Mapping[str, Any], master_seed: int, *,
                   inputs: Iterable[Union[str, Path]] = (),
                   outputs: Iterable[Union[str, Path]] = (),
                   wall_clock_s: float = 0.0,
                   samples: int = 0) -> Dict[str, Any]:
    """Assemble the run record: full resolved config plus input hashes."""
    return {
        "command": command,
        "config": dict(config),
        "master_seed": int(master_seed),
        "code_version": _code_version(),
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        "wall_clock_s": float(wall_clock_s),
        "samples": int(samples),
    }


def write_manifest(run_dir: Union[str, Path], manifest: Mapping[str, Any]) -> Path:
    """Write manifest.json; refuses to overwrite (one manifest per run dir)."""
    path = Path(run_dir) / MANIFEST_NAME
    if path.exists():
        raise ConfigError(f"{path} exists; manifests are write-once")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def append_manifest(run_dir: Union[str, Path], extra: Mapping[str, Any]) -> Path:
    """Add new top-level keys to an existing manifest (append-only)."""
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"no manifest at {path}")
    current = json.loads(path.read_text())
    clash = sorted(set(extra) & set(current))
    if clash:
        raise ConfigError(f"manifest keys are append-only, already set: {clash}")
    current.update(extra)
    path.write_text(json.dumps(current, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(run_dir: Union[str, Path]) -> Dict[str, Any]:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"no manifest at {path}")
    return json.loads(path.read_text())
