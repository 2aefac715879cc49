"""Command-line entry point.

    pufkex ttp keygen [--seed HEX] [--out FILE]
    pufkex enroll --variant A [--seed HEX] [--device-seed HEX] [--noise P] [--out FILE]
    pufkex session --variant A [--seed HEX] [--device-seed HEX] [--noise P] [--ephemeral-upgrade]
    pufkex attack --scenario fake-device --variant D [--seed HEX]
    pufkex accounting --mode paper|measured [--variant A]
    pufkex registry serve --port N --log-path FILE --ttp-key FILE

Exit status: 0 success/confirmed, 1 abort or attack detected, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
from pathlib import Path

from . import accounting
from .curve25519 import SigningKeyPair
from .harness import SCENARIOS, Scenario, build_world, derive_seed, eavesdrop_audit, run_scenario
from .identity import encode_cert
from .protocol import EnrollmentFailed, Variant, run_session
from .registry import Registry, RegistryClient, RegistryServer
from .symmetric import sha256

log = logging.getLogger("pufkex")


def _hex_int(text: str) -> int:
    try:
        return int(text, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a hexadecimal integer, got {text!r}") from None


def _probability(text: str) -> float:
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= p < 0.5:
        raise argparse.ArgumentTypeError("noise probability must lie in [0, 0.5)")
    return p


def _address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _fingerprint(key: bytes | None) -> str:
    return sha256(key)[:8].hex() if key is not None else "none"


def _load_ttp(path: str | None) -> SigningKeyPair | None:
    if path is None:
        return None
    data = json.loads(Path(path).read_text())
    kp = SigningKeyPair.from_seed(bytes.fromhex(data["seed"]))
    if "public" in data and bytes.fromhex(data["public"]) != kp.public:
        raise SystemExit(f"{path}: public key does not match seed")
    return kp


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(64)
        print(f"seed={args.seed:x}")
    return args.seed


def _add_world_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", type=str.upper, choices=[v.value for v in Variant], required=True)
    p.add_argument("--seed", type=_hex_int, help="master seed (hex); random if omitted")
    p.add_argument("--device-seed", type=_hex_int, help="PUF identity seed (hex)")
    p.add_argument("--noise", type=_probability, default=0.15, help="PUF bit-flip probability")
    p.add_argument("--ttp-key", help="TTP key file written by 'ttp keygen'")
    p.add_argument("--registry", type=_address, help="HOST:PORT of a running registry (variants A, C)")
    p.add_argument("--ephemeral-upgrade", action="store_true", help="A/B: server signs a fresh DH key per session")


def _world(args):
    registry = None
    if args.registry is not None:
        if args.ttp_key is None:
            raise SystemExit("--registry needs --ttp-key matching the registry's TTP")
        registry = RegistryClient(*args.registry)
    return build_world(
        args.variant,
        _seed(args),
        args.noise,
        device_seed=args.device_seed,
        ephemeral_upgrade=args.ephemeral_upgrade,
        registry=registry,
        ttp_keypair=_load_ttp(args.ttp_key),
    )


def cmd_ttp_keygen(args) -> int:
    seed = derive_seed(args.seed, "ttp") if args.seed is not None else secrets.token_bytes(32)
    kp = SigningKeyPair.from_seed(seed)
    doc = json.dumps({"seed": kp.seed.hex(), "public": kp.public.hex()}, indent=2)
    if args.out:
        Path(args.out).write_text(doc + "\n")
    print(f"ttp_public={kp.public.hex()}")
    return 0


def cmd_enroll(args) -> int:
    try:
        world = _world(args)
    except EnrollmentFailed as exc:
        print(f"enrollment failed: {exc}", file=sys.stderr)
        return 1
    cert = world.device_cert
    print(f"variant={world.variant.value}")
    print(f"device_id={cert.id.hex()}")
    print(f"device_public={cert.pk.hex()}")
    print(f"helper_data_bytes={len(cert.hd)}")
    print(f"ttp_public={world.ttp.public.hex()}")
    print(f"stage1_transfers={len(world.enrollment.log)}")
    print(f"device_nvm_bits={world.device.nvm.bits()}")
    if args.out:
        Path(args.out).write_text(encode_cert(cert).hex() + "\n")
    return 0


def cmd_session(args) -> int:
    world = _world(args)
    result = run_session(world.variant, world.server, world.device)
    print(f"variant={world.variant.value}")
    print(f"server_key_fingerprint={_fingerprint(result.server_key)}")
    print(f"device_key_fingerprint={_fingerprint(result.device_key)}")
    print(f"keys_match={str(result.keys_match).lower()}")
    print(f"confirmed={str(result.confirmed).lower()}")
    print(f"stage2_transfers={len(result.log)}")
    if result.abort_reason is not None:
        print(f"abort_reason={result.abort_reason.value}")
        print(f"aborted_by={result.aborted_by}")
    return 0 if result.confirmed and result.keys_match else 1


def cmd_attack(args) -> int:
    scenario = Scenario(
        args.scenario,
        Variant(args.variant),
        seed=_seed(args),
        noise=args.noise,
        tamper_index=args.tamper_index,
        tamper_bit=args.tamper_bit,
        ephemeral_upgrade=args.ephemeral_upgrade,
    )
    outcome = run_scenario(scenario)
    for line in outcome.report_lines():
        print(line)
    ok = outcome.confirmed and outcome.keys_match
    if args.scenario == "eavesdrop":
        ok = ok and eavesdrop_audit(outcome)
    return 0 if ok else 1


def cmd_accounting(args) -> int:
    variants = [Variant(args.variant)] if args.variant else list(Variant)
    columns = {}
    for v in variants:
        if args.mode == "paper":
            columns[v] = accounting.figures(v)
        else:
            world = build_world(v, args.seed or 0)
            result = run_session(v, world.server, world.device)
            log_ = world.enrollment.log + result.channel.log
            columns[v] = accounting.figures(v, "measured", log_, world.device.nvm.bits())
    print(accounting.format_table(columns))
    return 0


def cmd_registry_serve(args) -> int:
    kp = _load_ttp(args.ttp_key)
    pk = kp.public if kp is not None else bytes.fromhex(args.ttp_public)
    registry = Registry(pk, args.log_path)
    with RegistryServer(registry, args.host, args.port) as server:
        print(f"registry listening on {args.host}:{server.port}", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pufkex", description="PUF-rooted ECDH authentication simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ttp = sub.add_parser("ttp", help="trusted third party tools").add_subparsers(dest="action", required=True)
    keygen = ttp.add_parser("keygen", help="create a TTP signing key")
    keygen.add_argument("--seed", type=_hex_int)
    keygen.add_argument("--out")
    keygen.set_defaults(func=cmd_ttp_keygen)

    enroll = sub.add_parser("enroll", help="Stage I: enroll a simulated device (and server for A/B)")
    _add_world_flags(enroll)
    enroll.add_argument("--out", help="write the device certificate (hex TLV) here")
    enroll.set_defaults(func=cmd_enroll)

    session = sub.add_parser("session", help="enroll, then run one Stage II session")
    _add_world_flags(session)
    session.set_defaults(func=cmd_session)

    attack = sub.add_parser("attack", help="run an adversary scenario")
    attack.add_argument("--scenario", choices=SCENARIOS, required=True)
    attack.add_argument("--variant", type=str.upper, choices=[v.value for v in Variant], required=True)
    attack.add_argument("--seed", type=_hex_int)
    attack.add_argument("--noise", type=_probability, default=0.15)
    attack.add_argument("--tamper-index", type=int)
    attack.add_argument("--tamper-bit", type=int)
    attack.add_argument("--ephemeral-upgrade", action="store_true")
    attack.set_defaults(func=cmd_attack)

    acct = sub.add_parser("accounting", help="transfer/NVM table per variant")
    acct.add_argument("--mode", choices=("paper", "measured"), default="paper")
    acct.add_argument("--variant", type=str.upper, choices=[v.value for v in Variant])
    acct.add_argument("--seed", type=_hex_int)
    acct.set_defaults(func=cmd_accounting)

    reg = sub.add_parser("registry", help="certificate registry service").add_subparsers(dest="action", required=True)
    serve = reg.add_parser("serve")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=0)
    serve.add_argument("--log-path", required=True)
    key = serve.add_mutually_exclusive_group(required=True)
    key.add_argument("--ttp-key")
    key.add_argument("--ttp-public")
    serve.set_defaults(func=cmd_registry_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
