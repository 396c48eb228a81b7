"""``abehg`` command-line entry point.

Exit codes: 0 success, 1 other failure, 2 usage or parse error,
3 policy not satisfied, 4 key material missing.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import socket
import sys
from pathlib import Path

from . import bench, cpabe, envelope, group
from .config import ConfigError, load_config, parse_bind
from .errors import AbehgError, AuthenticationFailure, MalformedArtifact, PolicyNotSatisfied, PolicyParseError
from .policy import attribute_set, parse_policy

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DENIED, EXIT_NO_KEY = 0, 1, 2, 3, 4

log = logging.getLogger("abehg")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_FAIL):
        super().__init__(message)
        self.code = code


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", EXIT_USAGE) from None


def _write(path: str, data: bytes, private: bool = False) -> None:
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    if private:
        fd = os.open(p, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
    else:
        p.write_bytes(data)


def _load(path: str, kind: str):
    return cpabe.deserialize_artifact(_read(path), expect=kind)


# -- crypto subcommands ----------------------------------------------------

def cmd_setup(args) -> int:
    pk, mk = cpabe.setup()
    _write(args.out_pk, cpabe.serialize_artifact(pk))
    _write(args.out_msk, cpabe.serialize_artifact(mk), private=True)
    return EXIT_OK


def cmd_keygen(args) -> int:
    pk = _load(args.pk, "cpabe.public_key")
    mk = _load(args.msk, "cpabe.master_key")
    cpabe.check_master_key(pk, mk)
    attrs = attribute_set(args.attrs)
    if not attrs:
        raise CliError("--attrs must name at least one attribute", EXIT_USAGE)
    _write(args.out, cpabe.serialize_artifact(cpabe.keygen(pk, mk, attrs)), private=True)
    return EXIT_OK


def cmd_enc(args) -> int:
    tree = parse_policy(args.policy)
    pk = _load(args.pk, "cpabe.public_key")
    meta = envelope.RecordMeta(content_type=args.content_type, owner_id=args.owner_id)
    env = envelope.seal(pk, tree, _read(args.infile), meta)
    _write(args.out, envelope.serialize_envelope(env))
    return EXIT_OK


def cmd_dec(args) -> int:
    pk = _load(args.pk, "cpabe.public_key")
    sk = _load(args.key, "cpabe.private_key")
    env = envelope.deserialize_envelope(_read(args.infile))
    _write(args.out, envelope.open_envelope(pk, sk, env))
    return EXIT_OK


# -- services --------------------------------------------------------------

def _bind_socket(bind: str) -> socket.socket:
    host, port = parse_bind(bind)
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise CliError(f"cannot bind {bind}: {exc.strerror}", EXIT_FAIL) from None
    sock.listen(128)
    sock.set_inheritable(True)
    return sock


def _load_keys(cfg):
    for path in (cfg.public_key, cfg.master_key):
        if not Path(path).is_file():
            raise CliError(f"key file {path} is missing; run `abehg setup` first", EXIT_NO_KEY)
    pk = _load(cfg.public_key, "cpabe.public_key")
    mk = _load(cfg.master_key, "cpabe.master_key")
    cpabe.check_master_key(pk, mk)
    return pk, mk


def build_services(role: str, cfg):
    """Construct the app for ``serve-all``, ``serve-authz`` or ``serve-resource``."""
    from .authz import AuthorizationServer
    from .resource import DirectoryBackend, ResourceServer
    from .web import RemoteAuthz, create_app

    entropy = group.SystemEntropy()
    group.require_secure(entropy)
    secret = cfg.service_secret
    authz = resource = None
    if role in ("all", "authz"):
        if role == "authz" and not secret:
            raise CliError("serve-authz needs service_secret in the config", EXIT_USAGE)
        authz = AuthorizationServer(token_lifetime=cfg.token_lifetime, refresh_lifetime=cfg.refresh_lifetime)
    if role in ("all", "resource"):
        pk, mk = _load_keys(cfg)
        if role == "all":
            directory = authz
        else:
            if not secret:
                raise CliError("serve-resource needs service_secret in the config", EXIT_USAGE)
            directory = RemoteAuthz(cfg.authz_base, secret)
        resource = ResourceServer(directory, pk, mk, DirectoryBackend(cfg.storage_dir), entropy=entropy)
    app = create_app(authz, resource, service_secret=secret or secrets.token_urlsafe(32),
                     max_body=cfg.max_record_bytes)
    return app


def cmd_serve(args) -> int:
    import uvicorn

    role = args.command.removeprefix("serve-")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    bind = {"all": cfg.bind, "authz": cfg.authz_bind or cfg.bind,
            "resource": cfg.resource_bind or cfg.bind}[role]
    app = build_services(role, cfg)
    sock = _bind_socket(bind)
    server = uvicorn.Server(uvicorn.Config(app, log_level=args.log_level, access_log=False))
    print(f"abehg {args.command} listening on http://{bind}", file=sys.stderr, flush=True)
    try:
        server.run(sockets=[sock])
    except KeyboardInterrupt:
        pass
    finally:
        sock.close()
    return EXIT_OK


# -- demo and benchmark ----------------------------------------------------

def cmd_demo(args) -> int:
    from .demo import POLICY_T, SAMPLE_RECORD, USER_SETS, format_entry, run_demo

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    if args.attrs:
        attrs = [a for a in args.attrs.split(",") if a.strip()]
    else:
        attrs = USER_SETS[args.user]
    record = _read(args.infile) if args.infile else SAMPLE_RECORD

    def emit(entry):
        print(json.dumps(entry) if args.json else format_entry(entry), flush=True)

    result = run_demo(cfg.authz_base, cfg.resource_base, attrs, record, args.policy or POLICY_T,
                      expire_token=args.expire_token, emit=emit)
    if not result.ok:
        print(f"demo failed at step {result.failed_step}", file=sys.stderr)
    return result.exit_code


def cmd_bench(args) -> int:
    def progress(trial):
        print(f"round {trial}/{args.trials} done", file=sys.stderr, flush=True)

    rows = bench.bench_run(args.max_attrs, args.trials, args.out, progress=None if args.quiet else progress)
    _print_fits(bench.fit_linear(rows), args.json)
    return EXIT_OK


def cmd_fit(args) -> int:
    _print_fits(bench.fit_linear(bench.read_csv(args.infile)), args.json)
    return EXIT_OK


def _print_fits(fits, as_json: bool) -> None:
    for phase in bench.PHASES:
        f = fits.get(phase)
        if f is None:
            continue
        if as_json:
            print(json.dumps({"phase": phase, "slope_us_per_attr": f.slope, "intercept_us": f.intercept,
                              "r_squared": f.r_squared,
                              "median_us": {str(k): v for k, v in f.medians.items()}}))
        else:
            print(f"{phase:8s} slope={f.slope:10.1f} us/attr  intercept={f.intercept:10.1f} us  "
                  f"r2={f.r_squared:.4f}")


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abehg", description="CP-ABE + OAuth 2.0 health-record sharing toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("setup", help="generate the public and master keys")
    s.add_argument("--out-pk", required=True)
    s.add_argument("--out-msk", required=True)
    s.set_defaults(func=cmd_setup)

    s = sub.add_parser("keygen", help="issue a private key for an attribute set")
    s.add_argument("--pk", required=True)
    s.add_argument("--msk", required=True)
    s.add_argument("--attrs", required=True, help='comma-separated, e.g. "position:doctor,university:amu"')
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("enc", help="seal a file under a policy")
    s.add_argument("--pk", required=True)
    s.add_argument("--policy", required=True, help="postfix (a b 2of2) or infix (a AND b) policy")
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--content-type", default="application/octet-stream")
    s.add_argument("--owner-id", default="")
    s.set_defaults(func=cmd_enc)

    s = sub.add_parser("dec", help="open a sealed file with a private key")
    s.add_argument("--pk", required=True)
    s.add_argument("--key", required=True)
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dec)

    for name in ("serve-authz", "serve-resource", "serve-all"):
        s = sub.add_parser(name, help=f"run the {name[6:]} HTTP service")
        s.add_argument("--config")
        s.add_argument("--log-level", default="warning")
        s.set_defaults(func=cmd_serve)

    s = sub.add_parser("demo", help="replay the owner/user protocol against running servers")
    s.add_argument("--config")
    s.add_argument("--user", choices=("S0", "S1", "S2"), default="S0")
    s.add_argument("--attrs", help="explicit comma-separated attribute set (overrides --user)")
    s.add_argument("--policy")
    s.add_argument("--in", dest="infile")
    s.add_argument("--expire-token", action="store_true", help="invalidate the access token before DU-8")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_demo)

    s = sub.add_parser("bench", help="time keygen/encrypt/decrypt against attribute count")
    s.add_argument("--max-attrs", type=int, default=10)
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--out")
    s.add_argument("--json", action="store_true")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("fit", help="fit linear trends to a benchmark CSV")
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_fit)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"abehg: {exc}", file=sys.stderr)
        return exc.code
    except PolicyParseError as exc:
        print(f"abehg: policy parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PolicyNotSatisfied:
        print("abehg: policy not satisfied by the key's attributes", file=sys.stderr)
        return EXIT_DENIED
    except AuthenticationFailure as exc:
        print(f"abehg: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except MalformedArtifact as exc:
        print(f"abehg: malformed input: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (AbehgError, ValueError) as exc:
        print(f"abehg: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ValueError) and not isinstance(exc, AbehgError) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
