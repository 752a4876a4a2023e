"""Run configuration: config-file loading and flag/file/default resolution.

Every CLI flag has a config-file equivalent under the same key (dashes as
underscores). Resolution order is flag, then file, then built-in default,
and the effective result is printed at startup so runs are reproducible.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_CONFIG = "MEDIFLOW_CONFIG"

REQUIRED_KEYS = {
    "serve": (),
    "seed-data": ("data_dir",),
    "device": ("server_url", "username", "password", "mac", "patient_id"),
    "fleet": ("server_url", "devices"),
    "bench-load": ("server_url", "users", "duration_s"),
    "bench-accuracy": ("volume_ml", "rate_ml_h"),
}


@dataclass(frozen=True)
class RunConfig:
    """One validated, fully resolved invocation."""

    mode: str
    options: dict

    def validate(self) -> None:
        missing = [k for k in REQUIRED_KEYS.get(self.mode, ())
                   if self.options.get(k) in (None, "")]
        if missing:
            raise ValueError(f"{self.mode} requires: {', '.join(missing)}")

    def printable(self) -> str:
        body = json.dumps(self.options, sort_keys=True, default=str)
        return f"effective config [{self.mode}]: {body}"


def load_config_file(path: str | Path) -> dict:
    """Parse a TOML or JSON config file into a flat key dict."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".json":
        data = json.loads(raw)
    else:
        data = tomllib.loads(raw.decode("utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a table/object: {path}")
    return data


def find_config(explicit: str | None) -> dict:
    """Config from --config flag, else $MEDIFLOW_CONFIG, else empty."""
    path = explicit or os.environ.get(ENV_CONFIG)
    if not path:
        return {}
    return load_config_file(path)


def resolve(args, file_cfg: dict, key: str, default):
    """Flag value beats file value beats default. argparse unset is None."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in file_cfg:
        return file_cfg[key]
    return default
