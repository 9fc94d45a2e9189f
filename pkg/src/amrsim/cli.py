"""Command-line front end.

Subcommands: simulate, read, sweep, bill, serve. Exit codes are
documented and distinct:

    0  success
    1  runtime fault (I/O, bind failure, simulation error)
    2  scenario/config parse or validation error (argparse uses 2 too)
    3  domain errors: NOT_REGISTERED, NO_BASELINE
    4  meter UNREACHABLE

Addresses are decimal, or hex with an 0x prefix.
"""

from __future__ import annotations

import argparse
import json
import sys

from .billing import NoBaselineError, bill_period, flat_tariff, load_tariff
from .headend import JsonlSink, NotRegisteredError, ReadingStore, load_store
from .meter import TraceError
from .netsim import SimulationError
from .scenario import ScenarioError, World, build_world, load_scenario

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_UNREACHABLE = 4


def _parse_address(text: str) -> int:
    try:
        return int(text, 16) if text.lower().startswith("0x") else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad address {text!r}") from None


def _emit_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, separators=(",", ":")))


def _open_store(path: str | None) -> ReadingStore:
    if path is None:
        return ReadingStore()
    import os
    if os.path.exists(path):
        return load_store(path, sink=JsonlSink(path))
    return ReadingStore(JsonlSink(path))


def _build(args, store: ReadingStore, log_enabled: bool = False) -> World:
    cfg = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "link", None) is not None:
        cfg.link = args.link
    if getattr(args, "loss", None) is not None:
        cfg.loss = args.loss
    if getattr(args, "meters", None) is not None:
        cfg.meters = args.meters
    return build_world(cfg, store=store, log_enabled=log_enabled)


def _record_lines(rec) -> str:
    return (f"meter {rec.address:#010x} register={rec.register}"
            f" energy={rec.to_dict()['energy_kwh']} kWh"
            f" t={rec.sim_time!r} attempts={rec.attempt_count}"
            f" flags={rec.status_flags:#04x}")


def cmd_simulate(args) -> int:
    store = _open_store(args.store)
    world = _build(args, store, log_enabled=args.log is not None)
    world.run_workload()
    report = world.final_sweep()
    world.sim.run_until_idle()

    if args.log is not None:
        with open(args.log, "w", encoding="utf-8") as fh:
            for line in world.sim.event_log:
                fh.write(line + "\n")

    if args.csv is not None:
        with open(args.csv, "w", encoding="utf-8") as fh:
            world.headend.store.export_csv(fh)

    reports = world.sweep_reports
    anomalies = world.headend.store.anomalies
    if args.json:
        _emit_json({
            "scenario": args.scenario,
            "seed": world.cfg.seed,
            "meters": world.cfg.meters,
            "sweeps": [r.to_dict() for r in reports],
            "records": world.headend.store.record_count(),
            "anomalies": [a.to_dict() for a in anomalies],
        })
    else:
        for i, r in enumerate(reports):
            print(f"sweep {i}: read {r.read_count}/{r.attempted}"
                  f" unreachable={len(r.unreachable)}"
                  f" elapsed={r.elapsed!r}s sim")
        print(f"records stored: {world.headend.store.record_count()}")
        print(f"anomalies: {len(anomalies)}")
        for a in anomalies[:20]:
            print(f"  {a.kind} meter={a.address:#010x} t={a.sim_time!r} {a.detail}")
    store.flush()
    return EXIT_OK


def cmd_read(args) -> int:
    if args.url:
        return _remote_read(args)
    store = _open_store(args.store)
    world = _build(args, store)
    world.run_workload()
    try:
        rec = world.headend.read_now(args.address)
    except NotRegisteredError as e:
        _fail(args, "NOT_REGISTERED", str(e))
        return EXIT_DOMAIN
    store.flush()
    if rec is None:
        _fail(args, "UNREACHABLE",
              f"meter {args.address:#010x} did not respond")
        return EXIT_UNREACHABLE
    if args.json:
        _emit_json({"result": "ok", "reading": rec.to_dict()})
    else:
        print(_record_lines(rec))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.url:
        return _remote_sweep(args)
    store = _open_store(args.store)
    world = _build(args, store)
    world.run_workload()
    report = world.headend.sweep_now()
    store.flush()
    if args.json:
        _emit_json({"result": "ok", "report": report.to_dict()})
    else:
        print(f"read {report.read_count}/{report.attempted}"
              f" unreachable={len(report.unreachable)}"
              f" elapsed={report.elapsed!r}s sim")
    return EXIT_OK


def cmd_bill(args) -> int:
    if args.url:
        return _remote_bill(args)
    if args.store is None:
        print("bill needs --store (readings history) or --url", file=sys.stderr)
        return EXIT_CONFIG
    import os
    if not os.path.exists(args.store):
        _fail(args, "NO_BASELINE", f"store {args.store} does not exist")
        return EXIT_DOMAIN
    store = load_store(args.store)
    tariff = load_tariff(args.tariff) if args.tariff else flat_tariff()
    try:
        bill = bill_period(store, args.address, args.start, args.end, tariff)
    except NoBaselineError as e:
        _fail(args, "NO_BASELINE", str(e))
        return EXIT_DOMAIN
    store_sink = JsonlSink(args.store)
    try:
        store._sink = store_sink
        store.add_bill(bill)
    finally:
        store_sink.close()
    if args.csv is not None:
        from .billing import bills_to_csv
        with open(args.csv, "w", encoding="utf-8") as fh:
            bills_to_csv(store.bills, fh)
    if args.json:
        _emit_json({"result": "ok", "bill": bill.to_dict()})
    else:
        _print_bill(bill)
    return EXIT_OK


def _print_bill(bill) -> None:
    print(f"bill for meter {bill.address:#010x}"
          f" period [{bill.t_start!r}, {bill.t_end!r}]")
    d = bill.to_dict()
    print(f"  consumption: {d['consumption_kwh']} kWh")
    for ln in d["lines"]:
        bound = ln["upper_kwh"] if ln["upper_kwh"] is not None else "rest"
        print(f"  slab up to {bound}: {ln['kwh']} kWh @ {ln['rate']} = {ln['amount']}")
    print(f"  fixed charge: {d['fixed_charge']}")
    print(f"  total: {d['total']} {d['currency']}")


def cmd_serve(args) -> int:
    from .service import run_service
    store = _open_store(args.store)
    world = _build(args, store)
    host, _, port = args.bind.rpartition(":")
    try:
        port = int(port)
    except ValueError:
        print(f"bad bind address {args.bind!r}", file=sys.stderr)
        return EXIT_CONFIG
    tariff = load_tariff(args.tariff) if args.tariff else flat_tariff()
    try:
        run_service(world, host or "127.0.0.1", port, store=store,
                    tariff=tariff, time_scale=args.time_scale,
                    snapshot_path=args.snapshot)
    except OSError as e:
        print(f"bind failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _fail(args, code: str, message: str) -> None:
    if args.json:
        _emit_json({"result": "error", "error": {"code": code, "message": message}})
    else:
        print(f"{code}: {message}", file=sys.stderr)


# -- remote mode (talks to a running serve instance) ---------------------


def _api(url: str, method: str, path: str, body=None):
    import urllib.error
    import urllib.request
    req = urllib.request.Request(
        url.rstrip("/") + path, method=method,
        data=None if body is None else json.dumps(body).encode(),
        headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read().decode())


def _remote_read(args) -> int:
    status, payload = _api(args.url, "POST", f"/api/meters/{args.address}/read")
    if args.json:
        _emit_json(payload)
    if status == 404:
        if not args.json:
            print(f"NOT_REGISTERED: {payload['error']['message']}", file=sys.stderr)
        return EXIT_DOMAIN
    if payload.get("result") == "unreachable":
        if not args.json:
            print(f"UNREACHABLE: meter {args.address:#010x}", file=sys.stderr)
        return EXIT_UNREACHABLE
    if status != 200:
        return EXIT_RUNTIME
    if not args.json:
        print(json.dumps(payload["reading"], sort_keys=True))
    return EXIT_OK


def _remote_sweep(args) -> int:
    status, payload = _api(args.url, "POST", "/api/sweep", {"wait": True})
    if args.json:
        _emit_json(payload)
    elif status == 200:
        r = payload["report"]
        print(f"read {r['read_count']}/{r['attempted']}"
              f" unreachable={len(r['unreachable'])}")
    return EXIT_OK if status == 200 else EXIT_RUNTIME


def _remote_bill(args) -> int:
    status, payload = _api(args.url, "POST", f"/api/meters/{args.address}/bill",
                           {"start": args.start, "end": args.end})
    if args.json:
        _emit_json(payload)
    if status == 409:
        if not args.json:
            print(f"NO_BASELINE: {payload['error']['message']}", file=sys.stderr)
        return EXIT_DOMAIN
    if status == 404:
        if not args.json:
            print(f"NOT_REGISTERED: {payload['error']['message']}", file=sys.stderr)
        return EXIT_DOMAIN
    if status != 200:
        return EXIT_RUNTIME
    if not args.json:
        print(json.dumps(payload["bill"], sort_keys=True))
    return EXIT_OK


# -- argument wiring -------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, scenario_required=True) -> None:
    if scenario_required:
        p.add_argument("scenario", help="scenario file path")
    else:
        p.add_argument("--scenario", help="scenario file path")
    p.add_argument("--seed", type=int, help="override scenario seed")
    p.add_argument("--link", choices=["wimax", "uhf", "plc"],
                   help="override link preset")
    p.add_argument("--loss", type=float, help="override loss probability")
    p.add_argument("--meters", type=int, help="override meter count")
    p.add_argument("--json", action="store_true",
                   help="structured output (schema-stable)")
    p.add_argument("--store", help="JSONL reading store to append to")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amrsim", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario to completion")
    _add_common(p)
    p.add_argument("--log", help="write the deterministic event log here")
    p.add_argument("--csv", help="export readings as CSV")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("read", help="on-demand read of one meter")
    p.add_argument("address", type=_parse_address)
    _add_common(p, scenario_required=False)
    p.add_argument("--url", help="talk to a running serve instance instead")
    p.set_defaults(fn=cmd_read)

    p = sub.add_parser("sweep", help="poll every registered meter once")
    _add_common(p, scenario_required=False)
    p.add_argument("--url", help="talk to a running serve instance instead")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bill", help="bill a meter for a period")
    p.add_argument("address", type=_parse_address)
    p.add_argument("--start", type=float, required=True)
    p.add_argument("--end", type=float, required=True)
    p.add_argument("--tariff", help="tariff file (defaults to flat 1.00/kWh)")
    p.add_argument("--store", help="JSONL reading store")
    p.add_argument("--csv", help="export all stored bills as summary CSV")
    p.add_argument("--url", help="talk to a running serve instance instead")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_bill)

    p = sub.add_parser("serve", help="run the head-end service + console API")
    _add_common(p)
    p.add_argument("--bind", default="127.0.0.1:8800", help="host:port")
    p.add_argument("--time-scale", type=float, default=1.0,
                   help="sim seconds per wall second")
    p.add_argument("--tariff", help="tariff file for /bill endpoints")
    p.add_argument("--snapshot", help="write a store snapshot here on shutdown")
    p.set_defaults(fn=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.fn in (cmd_read, cmd_sweep) and not args.url and not args.scenario:
        print("need --scenario or --url", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except (ScenarioError, TraceError) as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as e:
        print(f"simulation fault: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
