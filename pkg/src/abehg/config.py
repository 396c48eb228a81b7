"""Service configuration, read from a small TOML file.

Example::

    bind = "127.0.0.1:8750"            # serve-all
    authz_bind = "127.0.0.1:8751"      # serve-authz
    resource_bind = "127.0.0.1:8752"   # serve-resource
    authz_url = "http://127.0.0.1:8751"
    resource_url = "http://127.0.0.1:8752"
    storage_dir = "records"
    public_key = "keys/abehg.gpk"
    master_key = "keys/abehg.msk"
    token_lifetime = 3600
    service_secret = "change-me"

Relative paths resolve against the config file's directory.  The URLs default
to ``http://<bind>`` so a single ``serve-all`` needs neither.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_VAR = "ABEHG_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    bind: str = "127.0.0.1:8750"
    authz_bind: str | None = None
    resource_bind: str | None = None
    authz_url: str | None = None
    resource_url: str | None = None
    storage_dir: str = "records"
    public_key: str = "abehg.gpk"
    master_key: str = "abehg.msk"
    token_lifetime: int = 3600
    refresh_lifetime: int = 14 * 24 * 3600
    service_secret: str | None = None
    max_record_bytes: int = 64 * 1024 * 1024

    @property
    def authz_base(self) -> str:
        return (self.authz_url or f"http://{self.authz_bind or self.bind}").rstrip("/")

    @property
    def resource_base(self) -> str:
        return (self.resource_url or f"http://{self.resource_bind or self.bind}").rstrip("/")


def parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) < 65536:
        raise ConfigError(f"bind address {bind!r} is not host:port")
    return host.strip("[]"), int(port)


def resolve_config_path(path: str | None) -> str | None:
    return path or os.environ.get(ENV_VAR)


def load_config(path: str | os.PathLike | None) -> Config:
    path = resolve_config_path(path)
    if path is None:
        raise ConfigError(f"no config file given (use --config or set {ENV_VAR})")
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from None

    known = {f.name: f for f in fields(Config)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = Config()
    for key, value in raw.items():
        default = getattr(cfg, key)
        expect = int if isinstance(default, int) else str
        if not isinstance(value, expect) or isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be {expect.__name__}")
        setattr(cfg, key, value)

    base = path.resolve().parent
    for key in ("storage_dir", "public_key", "master_key"):
        value = Path(getattr(cfg, key))
        setattr(cfg, key, str(value if value.is_absolute() else base / value))
    for key in ("bind", "authz_bind", "resource_bind"):
        if getattr(cfg, key) is not None:
            parse_bind(getattr(cfg, key))
    if cfg.token_lifetime <= 0 or cfg.refresh_lifetime <= 0:
        raise ConfigError("token lifetimes must be positive")
    return cfg
