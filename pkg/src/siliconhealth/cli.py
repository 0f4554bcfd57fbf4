"""Command-line entry point: ``siliconhealth <command> ...``.

Exit status: 0 success, 1 domain failure, 2 usage or configuration error.
``watermark extract`` and ``watermark verify`` use 0 for recovered and
verified, 3 for recovered with the image content changed, 1 for
unrecoverable.
"""

import argparse
import csv
import io
import json
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, SiliconHealthError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_TAMPERED = 0, 1, 2, 3


class UsageError(ConfigError):
    pass


def _emit(obj, as_json: bool, out=None):
    out = out or sys.stdout
    if as_json:
        out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    elif isinstance(obj, dict):
        width = max((len(k) for k in obj), default=0)
        for k, v in obj.items():
            out.write(f"{k:<{width}}  {v}\n")
    else:
        out.write(f"{obj}\n")


def _merged(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    opts = dict(defaults)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        opts.update(loaded)
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
    return opts


# -- device registry files ------------------------------------------------

def _device_to_json(device, facility: str) -> dict:
    d = asdict(device)
    d["device_id"] = device.device_id.hex()
    d["device_secret"] = device.device_secret.hex()
    d["facility"] = facility
    return d


def load_registry(path):
    """Returns (DeviceRegistry, {facility name: device})."""
    from .dhf import DeviceProfile, DeviceRegistry

    registry, by_facility = DeviceRegistry(), {}
    p = Path(path)
    if not p.exists():
        return registry, by_facility
    for d in json.loads(p.read_text("utf-8"))["devices"]:
        d = dict(d)
        facility = d.pop("facility")
        device = DeviceProfile(**{**d, "device_id": bytes.fromhex(d["device_id"]),
                                  "device_secret": bytes.fromhex(d["device_secret"])})
        registry.register(device)
        by_facility[facility] = device
    return registry, by_facility


def save_registry(path, by_facility: dict):
    devices = [_device_to_json(dev, name) for name, dev in sorted(by_facility.items())]
    Path(path).write_text(json.dumps({"devices": devices}, indent=2, sort_keys=True) + "\n")


def _facility_device(by_facility, facility: str):
    try:
        return by_facility[facility]
    except KeyError:
        raise ConfigError(f"no device registered for facility {facility!r}") from None


def _facility_name(by_facility, facility_id: bytes) -> str:
    from .netsim import facility_id_for

    for name in by_facility:
        if facility_id_for(name) == facility_id:
            return name
    raise ConfigError(f"ledger facility {facility_id.hex()} has no registered device")


# -- validate-dhf ---------------------------------------------------------

DHF_DEFAULTS = dict(model="lv06", n=100, d=64, scale=256, seed=0, power=None, proof_time=None, timing="fixed")


def cmd_validate_dhf(args) -> int:
    from .dhf import generate_proof, make_device, proof_timing, verify_proof, DeviceRegistry
    from .hashcore import Difficulty, expected_attempts

    o = _merged(args, DHF_DEFAULTS)
    if o["n"] < 0:
        raise ConfigError("n must be >= 0")
    try:
        difficulty = Difficulty(int(o["d"]), int(o["scale"]))
        rng = np.random.default_rng(int(o["seed"]))
        overrides = {"power_watts": float(o["power"])} if o["power"] is not None else {}
        device = make_device(o["model"], rng, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    registry = DeviceRegistry()
    registry.register(device)
    attempts, seconds, joules, rates = [], [], [], []
    accepted = 0
    for i in range(int(o["n"])):
        digest = rng.bytes(32)
        proof, timing = generate_proof(device, digest, difficulty, 1_700_000_000 + i, rng)
        if o["proof_time"] is not None and o["timing"] == "fixed":
            timing = proof_timing(device, timing.attempts, timing.attempts / float(o["proof_time"]))
        elif o["proof_time"] is not None:
            timing = proof_timing(device, timing.attempts,
                                  expected_attempts(difficulty) / float(o["proof_time"]))
        accepted += bool(verify_proof(proof, digest, registry, difficulty))
        attempts.append(timing.attempts)
        seconds.append(timing.elapsed_seconds)
        joules.append(timing.energy_joules)
        rates.append(timing.attempts / timing.elapsed_seconds)

    def cv(x):
        x = np.asarray(x, dtype=float)
        return float(x.std(ddof=1) / x.mean()) if len(x) > 1 else None

    n = int(o["n"])
    report = {
        "total_proofs_generated": n,
        "verification_rate": accepted / n if n else None,
        "average_proof_time_s": float(np.mean(seconds)) if n else None,
        "energy_per_proof_j": float(np.mean(joules)) if n else None,
        "efficiency_mh_per_w": device.hashes_per_watt / 1e6,
        "hash_rate_stability_cv": cv(rates) if n else None,
        "attempts_mean": float(np.mean(attempts)) if n else None,
        "attempts_cv": cv(attempts) if n else None,
        "expected_attempts": expected_attempts(difficulty),
        "device_model": device.model,
        "difficulty": {"d": difficulty.d, "scale": difficulty.scale},
        "seed": int(o["seed"]),
    }
    _emit(report, args.json)
    return EXIT_OK if not n or accepted == n else EXIT_FAIL


# -- simulate -------------------------------------------------------------

def _simulate_one(config, out_dir, stem):
    from .netsim import run_scenario

    bundle = run_scenario(config)
    if out_dir is not None:
        bundle.write(out_dir, stem)
    return bundle.summary_json


def _scenario(args):
    from .netsim import ScenarioConfig, clinic_week

    if args.scenario is not None and args.scenario_file is not None:
        raise UsageError("give either a built-in --scenario or a scenario file, not both")
    if args.scenario_file is not None:
        try:
            config = ScenarioConfig.load(args.scenario_file)
        except OSError as exc:
            raise SiliconHealthError(f"io-error: {exc}") from exc
    elif args.scenario in (None, "clinic-week"):
        config = clinic_week()
    else:
        raise UsageError(f"unknown built-in scenario {args.scenario!r}")
    if args.horizon is not None:
        config.horizon_days = args.horizon
    if args.drain is not None:
        config.drain_days = args.drain
    return config.validate()


def cmd_simulate(args) -> int:
    from dataclasses import replace

    base = _scenario(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed if args.seed is not None
                                                                         else base.seed]
    configs = [(replace(base, seed=s), args.out, f"{args.stem}_seed{s}" if len(seeds) > 1 else args.stem)
               for s in seeds]
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            summaries = list(pool.map(_simulate_one, *zip(*configs)))
    else:
        summaries = [_simulate_one(*c) for c in configs]
    converged = True
    if args.json:
        if len(summaries) == 1:
            sys.stdout.write(summaries[0])
        else:
            _emit([json.loads(t) for t in summaries], True)
    for text in summaries:
        summary = json.loads(text)
        converged &= summary["converged"] and summary["zero_record_loss"]
        if not args.json:
            keys = ("scenario", "seed", "records_created", "records_at_apex", "converged", "zero_record_loss",
                    "max_staleness_seconds", "bandwidth_violations", "out_of_window_deliveries")
            _emit({k: summary[k] for k in keys}, False)
    return EXIT_OK if converged else EXIT_FAIL


# -- ledger ---------------------------------------------------------------

def _open_ledger(path, registry):
    from .ledger import Ledger

    try:
        return Ledger.load(path, registry)
    except FileNotFoundError as exc:
        raise SiliconHealthError(f"io-error: {exc}") from exc


def cmd_ledger(args) -> int:
    from .dhf import generate_proof, make_device
    from .hashcore import Difficulty
    from .ledger import Ledger
    from .netsim import facility_id_for
    from .records import FLAG_EMERGENCY, FLAG_REFERRAL, HealthRecord, RecordType, leaf_hash, make_record_id
    from .hashcore import sha256

    registry, by_facility = load_registry(args.registry)
    if args.action == "init":
        if Path(args.ledger).exists() and not args.force:
            raise UsageError(f"{args.ledger} exists (use --force to overwrite)")
        rng = np.random.default_rng(args.seed)
        if args.facility not in by_facility:
            by_facility[args.facility] = make_device(args.model, rng)
            save_registry(args.registry, by_facility)
        ledger = Ledger(facility_id_for(args.facility), registry, Difficulty(args.d, args.scale))
        ledger.save(args.ledger)
        _emit({"ledger": args.ledger, "facility": args.facility, "facility_id": ledger.facility_id.hex(),
               "device_id": by_facility[args.facility].device_id.hex(), "root": ledger.root.hex()}, args.json)
        return EXIT_OK

    ledger = _open_ledger(args.ledger, registry)
    if args.action == "append":
        name = _facility_name(by_facility, ledger.facility_id)
        device = by_facility[name]
        rng = np.random.default_rng(args.seed)
        now = int(args.time if args.time is not None else time.time())
        seq = ledger.facility_count(ledger.facility_id) + 1
        flags = (FLAG_EMERGENCY if args.emergency else 0) | (FLAG_REFERRAL if args.referral else 0)
        patient = bytes.fromhex(args.patient) if args.patient else sha256(rng.bytes(16))
        record = HealthRecord(make_record_id(ledger.facility_id, seq), patient, ledger.facility_id,
                              RecordType[args.type.upper()], now, flags, args.birth_year, args.text.encode())
        difficulty = ledger.min_difficulty or Difficulty(args.d, args.scale)
        proof, timing = generate_proof(device, leaf_hash(record), difficulty, now, rng)
        ledger.append_record(record, proof)
        ledger.save(args.ledger)
        _emit({"record_id": record.record_id.hex(), "nonce": proof.header.nonce,
               "proof_hash": proof.proof_hash.hex(), "root": ledger.root.hex()}, args.json)
        return EXIT_OK
    if args.action == "verify":
        _emit({"ok": True, "records": len(ledger), "root": ledger.root.hex(),
               "quarantined": len(ledger.quarantine)}, args.json)
        return EXIT_OK
    if args.action == "history":
        rid = bytes.fromhex(args.record_id)
        rows = [{"version": e.version, "editor_device": e.editor_device.hex(), "edited_at": e.edited_at,
                 "previous_leaf": e.previous_leaf.hex(), "new_leaf": e.new_leaf.hex()}
                for e in ledger.history(rid)]
        if args.json:
            _emit(rows, True)
        else:
            for r in rows:
                print(f"v{r['version']}  {r['edited_at']}  {r['editor_device']}  {r['new_leaf']}")
        return EXIT_OK
    if args.action == "list":
        rows = [{"record_id": r.record_id.hex(), "created_at": r.created_at, "flags": r.flags, "text": r.text}
                for r in ledger.records()]
        if args.json:
            _emit(rows, True)
        else:
            for r in rows:
                print(f"{r['record_id']}  {r['created_at']}  {r['flags']}  {r['text']}")
        return EXIT_OK
    raise UsageError(f"unknown ledger action {args.action!r}")


# -- sync -----------------------------------------------------------------

def cmd_sync(args) -> int:
    from .netsim import SKEW_ALLOWANCE
    from .syncproto import Channel, SyncEndpoint, SyncError, run_sync

    registry, by_facility = load_registry(args.registry)
    rng = np.random.default_rng(args.seed)
    la, lb = _open_ledger(args.a, registry), _open_ledger(args.b, registry)
    ea = SyncEndpoint(la, by_facility[_facility_name(by_facility, la.facility_id)],
                      np.random.default_rng(rng.integers(1 << 63)), skew_allowance=SKEW_ALLOWANCE, name="A")
    eb = SyncEndpoint(lb, by_facility[_facility_name(by_facility, lb.facility_id)],
                      np.random.default_rng(rng.integers(1 << 63)), skew_allowance=SKEW_ALLOWANCE, name="B")
    start = float(args.time if args.time is not None else time.time())
    channel = Channel(args.bandwidth, args.latency, start + args.window, args.loss, rng, start=start)
    error = None
    try:
        report = run_sync(ea, eb, channel, args.direction)
    except SyncError as exc:
        report, error = exc.report, exc
    la.save(args.a)
    lb.save(args.b)
    if args.transcript:
        Path(args.transcript).write_bytes(b"".join(
            bytes([ord(sender)]) + len(raw).to_bytes(4, "big") + raw for sender, raw in channel.transcript))
    out = {k: v for k, v in asdict(report).items() if k != "transfers"}
    out["transferred"] = [rid.hex() for rid in report.transferred_ids]
    _emit(out, args.json)
    if error is not None:
        print(f"sync interrupted: {error}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# -- watermark ------------------------------------------------------------

def _read_image(path):
    from .watermark import read_pgm

    try:
        return read_pgm(path)
    except FileNotFoundError as exc:
        raise SiliconHealthError(f"io-error: {exc}") from exc


def _wm_key(args, by_facility=None) -> bytes:
    from .netsim import facility_id_for

    if args.key:
        key = bytes.fromhex(args.key)
        if len(key) != 8:
            raise UsageError("--key must be 8 bytes of hex")
        return key
    if args.facility:
        return facility_id_for(args.facility)
    raise UsageError("give --key or --facility")


def _extract_status(args, quiet: bool) -> int:
    from .watermark import AllCopiesFailed, extract

    image = _read_image(args.input)
    try:
        result = extract(image, args.redundancy, _wm_key(args))
    except AllCopiesFailed as exc:
        if args.json:
            _emit({"status": "unrecoverable", "error": str(exc)}, True)
        else:
            print(f"unrecoverable: {exc}", file=sys.stderr)
        return EXIT_FAIL
    status = EXIT_OK if result.content_verified else EXIT_TAMPERED
    if not quiet:
        info = {"payload": result.payload.describe(), "payload_hex": result.payload.to_bytes().hex(),
                "content_verified": result.content_verified, "method": result.method,
                "copy_index": result.copy_index, "corrections": result.corrections}
        if args.json:
            _emit(info, True)
        else:
            for k, v in result.payload.describe().items():
                print(f"{k:<20}{v}")
            print(f"{'payload_hex':<20}{info['payload_hex']}")
            print(f"{'content_verified':<20}{result.content_verified}")
            print(f"{'decoded_by':<20}{result.method}"
                  + (f" {result.copy_index}" if result.copy_index is not None else "")
                  + f" ({result.corrections} corrections)")
    else:
        verdict = "verified" if status == EXIT_OK else "content-tampered"
        _emit({"status": verdict} if args.json else verdict, args.json)
    return status


def _batch(args) -> int:
    from .watermark import AllCopiesFailed, embed, extract, make_payload, recovery_rate, read_pgm
    from .dhf import make_device
    from .hashcore import Difficulty

    files = sorted(Path(args.input).glob("*.pgm")) if Path(args.input).is_dir() else [Path(args.input)]
    if not files:
        raise SiliconHealthError(f"io-error: no .pgm files under {args.input}")
    key = _wm_key(args)
    rng = np.random.default_rng(args.seed)
    device = make_device("lv06", rng)
    specs = []
    for item in args.damage.split(","):
        kind, _, amount = item.partition(":")
        specs.append((kind.strip(), float(amount)))
    rows, failures = [], 0
    for i, path in enumerate(files):
        image = read_pgm(path)
        payload, _ = make_payload(image, device, key, rng.bytes(32), 1_700_000_000 + i, Difficulty(1, 256), rng)
        try:
            got = extract(embed(image, payload, args.redundancy, key), args.redundancy, key)
            roundtrip = got.payload == payload and got.content_verified
        except (AllCopiesFailed, SiliconHealthError):
            roundtrip = False
        failures += not roundtrip
        row = {"image": path.name, "roundtrip": roundtrip}
        for kind, amount in specs:
            row[f"{kind}({amount:g})"] = recovery_rate(image, payload, kind, amount, args.redundancy, key,
                                                       args.trials, args.seed)
        rows.append(row)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.json:
        _emit({"trials": args.trials, "redundancy": args.redundancy, "rows": rows}, True)
    else:
        sys.stdout.write(buf.getvalue())
    if args.out:
        Path(args.out).write_text(buf.getvalue())
    if failures:
        print(f"{failures} of {len(files)} images failed the undamaged round trip", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


def cmd_watermark(args) -> int:
    from .dhf import generate_proof
    from .hashcore import Difficulty, sha256
    from .watermark import damage, embed, make_payload, write_pgm

    if args.action == "embed":
        if not args.output:
            raise UsageError("embed needs an output path")
        _, by_facility = load_registry(args.registry)
        device = _facility_device(by_facility, args.facility)
        from .netsim import facility_id_for

        image = _read_image(args.input)
        rng = np.random.default_rng(args.seed)
        patient = bytes.fromhex(args.patient) if args.patient else sha256(rng.bytes(16))
        now = int(args.time if args.time is not None else time.time())
        payload, proof = make_payload(image, device, facility_id_for(args.facility), patient, now,
                                      Difficulty(args.d, args.scale), rng)
        write_pgm(args.output, embed(image, payload, args.redundancy, _wm_key(args)))
        _emit({"output": args.output, "payload_hex": payload.to_bytes().hex(),
               "proof_nonce": proof.header.nonce}, args.json)
        return EXIT_OK
    if args.action == "extract":
        return _extract_status(args, quiet=False)
    if args.action == "verify":
        return _extract_status(args, quiet=True)
    if args.action == "damage":
        if not args.output:
            raise UsageError("damage needs an output path")
        write_pgm(args.output, damage(_read_image(args.input), args.kind, args.amount, args.seed))
        _emit({"output": args.output, "kind": args.kind, "amount": args.amount, "seed": args.seed}, args.json)
        return EXIT_OK
    if args.action == "batch":
        return _batch(args)
    raise UsageError(f"unknown watermark action {args.action!r}")


# -- identity -------------------------------------------------------------

def _pepper(args) -> bytes:
    if args.pepper_file:
        return Path(args.pepper_file).read_bytes()
    if args.pepper:
        return bytes.fromhex(args.pepper)
    raise UsageError("give --pepper or --pepper-file")


def cmd_identity(args) -> int:
    from .identity import (Demographics, FamilyGraph, IdentityStore, QrCardPayload, Relation,
                           demographic_match, derive_pseudonym, issue_qr)
    from .netsim import facility_id_for

    if args.action == "pseudonym":
        try:
            template = Path(args.template).read_bytes()
        except FileNotFoundError as exc:
            raise SiliconHealthError(f"io-error: {exc}") from exc
        try:
            pseudonym = derive_pseudonym(template, _pepper(args)).hex()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        _emit({"pseudonym": pseudonym} if args.json else pseudonym, args.json)
        return EXIT_OK
    if args.action == "qr":
        if args.parse:
            q = QrCardPayload.from_text(args.parse)
            _emit({"version": q.version, "pseudonym": q.pseudonym.hex(), "facility_id": q.facility_id.hex(),
                   "issue_date": q.issue_date}, args.json)
        else:
            q = issue_qr(bytes.fromhex(args.pseudonym), facility_id_for(args.facility), args.date)
            text = q.to_text(args.encoding)
            _emit({"encoding": args.encoding, "text": text, "bytes": len(q.to_bytes())} if args.json else text,
                  args.json)
        return EXIT_OK
    if args.action == "link":
        path = Path(args.graph)
        graph = FamilyGraph.from_bytes(path.read_bytes()) if path.exists() else FamilyGraph()
        graph.link_family(bytes.fromhex(args.child), bytes.fromhex(args.guardian), Relation[args.relation.upper()])
        path.write_bytes(graph.to_bytes())
        household = [m.hex() for m in graph.household(bytes.fromhex(args.child))]
        _emit({"household": household} if args.json else "\n".join(household), args.json)
        return EXIT_OK
    if args.action in ("enroll", "match"):
        path = Path(args.store)
        store = IdentityStore.from_bytes(path.read_bytes(), args.tier) if path.exists() else IdentityStore(args.tier)
        if args.action == "enroll":
            store.add(bytes.fromhex(args.pseudonym), Demographics(args.name, args.birth_year, args.village))
            path.write_bytes(store.to_bytes())
            _emit({"identities": len(store)} if args.json else f"{len(store)} identities", args.json)
            return EXIT_OK
        query = {"name": args.name, "birth_year": args.birth_year, "village_code": args.village}
        rows = [{"pseudonym": c.pseudonym.hex(), "score": c.score, "matched": list(c.matched),
                 "uncertain": c.uncertain} for c in demographic_match(query, store)]
        if args.json:
            _emit(rows, True)
        else:
            for r in rows:
                flag = "uncertain" if r["uncertain"] else "certain"
                print(f"{r['pseudonym']}  {r['score']:.1f}  {','.join(r['matched'])}  {flag}")
        return EXIT_OK
    raise UsageError(f"unknown identity action {args.action!r}")


# -- query ----------------------------------------------------------------

def cmd_query(args) -> int:
    from .query import SynonymDictionary, expand, retrieve

    registry, _ = load_registry(args.registry)
    ledger = _open_ledger(args.ledger, registry)
    dictionary = SynonymDictionary.load(args.dictionary)
    terms = expand(args.text, dictionary)
    result = retrieve(terms, ledger)
    if args.json:
        _emit({"expanded": sorted(terms), "results": result.as_json()}, True)
    else:
        print("expanded: " + ", ".join(sorted(terms)))
        for h in result:
            print(f"{h.score}  {h.record_id.hex()}  {h.created_at}  {','.join(h.matched_terms)}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="siliconhealth", description=__doc__.splitlines()[0])
    p.add_argument("--json", action="store_true", help="machine-readable output")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate-dhf", help="generate and verify N proofs on a simulated device")
    v.add_argument("--config", help="JSON file with any of the flag names as keys")
    v.add_argument("--model")
    v.add_argument("-n", "--n", type=int)
    v.add_argument("--d", type=int)
    v.add_argument("--scale", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--power", type=float, help="override device power draw (W)")
    v.add_argument("--proof-time", dest="proof_time", type=float,
                   help="charge each proof this many seconds (see --timing)")
    v.add_argument("--timing", choices=("fixed", "expected"),
                   help="with --proof-time: every proof takes exactly that long (fixed, default), "
                        "or the hashrate is scaled so the mean matches (expected)")
    v.set_defaults(func=cmd_validate_dhf)

    s = sub.add_parser("simulate", help="run a network scenario and write metrics")
    s.add_argument("scenario_file", nargs="?", help="scenario script or .json config")
    s.add_argument("--scenario", help="built-in scenario name (clinic-week)")
    s.add_argument("--seed", type=int)
    s.add_argument("--seeds", help="comma-separated seeds for a batch run")
    s.add_argument("--jobs", type=int, default=1, help="parallel processes for a batch run")
    s.add_argument("--horizon", type=float, help="override horizon days")
    s.add_argument("--drain", type=float, help="override drain days")
    s.add_argument("--out", help="directory for the CSV and JSON outputs")
    s.add_argument("--stem", default="metrics")
    s.set_defaults(func=cmd_simulate)

    lg = sub.add_parser("ledger", help="manage ledger files")
    lg.add_argument("action", choices=("init", "append", "verify", "history", "list"))
    lg.add_argument("ledger")
    lg.add_argument("record_id", nargs="?", help="record id (hex) for history")
    lg.add_argument("--registry", default="devices.json")
    lg.add_argument("--facility", help="facility name (init)")
    lg.add_argument("--model", default="lv06")
    lg.add_argument("--d", type=int, default=16)
    lg.add_argument("--scale", type=int, default=256)
    lg.add_argument("--seed", type=int)
    lg.add_argument("--force", action="store_true")
    lg.add_argument("--text", default="")
    lg.add_argument("--type", default="visit")
    lg.add_argument("--patient", help="patient pseudonym (hex)")
    lg.add_argument("--birth-year", dest="birth_year", type=int, default=0)
    lg.add_argument("--emergency", action="store_true")
    lg.add_argument("--referral", action="store_true")
    lg.add_argument("--time", type=float, help="timestamp override (Unix seconds)")
    lg.set_defaults(func=cmd_ledger)

    sy = sub.add_parser("sync", help="synchronize two ledger files over a simulated link")
    sy.add_argument("a")
    sy.add_argument("b")
    sy.add_argument("--registry", default="devices.json")
    sy.add_argument("--bandwidth", type=float, default=9600.0)
    sy.add_argument("--latency", type=float, default=0.3)
    sy.add_argument("--window", type=float, default=1800.0, help="window length in seconds")
    sy.add_argument("--loss", type=float, default=0.0)
    sy.add_argument("--direction", choices=("both", "push"), default="both")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--time", type=float)
    sy.add_argument("--transcript", help="write every frame to this file")
    sy.set_defaults(func=cmd_sync)

    w = sub.add_parser("watermark", help="embed/extract/damage/verify/batch on PGM images")
    w.add_argument("action", choices=("embed", "extract", "damage", "verify", "batch"))
    w.add_argument("input")
    w.add_argument("output", nargs="?")
    w.add_argument("--registry", default="devices.json")
    w.add_argument("--facility")
    w.add_argument("--key", help="8-byte hex key (default: the facility id)")
    w.add_argument("-R", "--redundancy", type=int, default=3)
    w.add_argument("--patient")
    w.add_argument("--time", type=float)
    w.add_argument("--d", type=int, default=16)
    w.add_argument("--scale", type=int, default=256)
    w.add_argument("--kind", default="pixel_noise", choices=("lsb_noise", "pixel_noise", "crop_edge"))
    w.add_argument("--amount", type=float, default=0.3)
    w.add_argument("--damage", default="pixel_noise:0.30,pixel_noise:0.40,crop_edge:0.10,crop_edge:0.20",
                   help="batch damage list kind:amount,...")
    w.add_argument("--trials", type=int, default=100)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", help="batch: also write the CSV table here")
    w.set_defaults(func=cmd_watermark)

    i = sub.add_parser("identity", help="pseudonyms, QR payloads, family links, demographic match")
    i.add_argument("action", choices=("pseudonym", "qr", "link", "enroll", "match"))
    i.add_argument("--template")
    i.add_argument("--pepper", help="hex")
    i.add_argument("--pepper-file", dest="pepper_file")
    i.add_argument("--pseudonym")
    i.add_argument("--facility")
    i.add_argument("--date", type=int, default=0)
    i.add_argument("--encoding", choices=("base32", "hex"), default="base32")
    i.add_argument("--parse", help="QR text to decode")
    i.add_argument("--graph", default="family.bin")
    i.add_argument("--child")
    i.add_argument("--guardian")
    i.add_argument("--relation", default="guardian")
    i.add_argument("--store", default="identities.bin")
    i.add_argument("--tier", type=int, default=2)
    i.add_argument("--name")
    i.add_argument("--birth-year", dest="birth_year", type=int)
    i.add_argument("--village")
    i.set_defaults(func=cmd_identity)

    q = sub.add_parser("query", help="expand a query and rank ledger records")
    q.add_argument("ledger")
    q.add_argument("text")
    q.add_argument("--registry", default="devices.json")
    q.add_argument("--dictionary")
    q.set_defaults(func=cmd_query)
    return p


def main(argv=None) -> int:
    warnings.filterwarnings("ignore", message=".*TBB.*")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SiliconHealthError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
