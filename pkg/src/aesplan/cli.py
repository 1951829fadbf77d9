"""Command line entry point (``aes``).

Exit status is 0 when every run finished without invariant violations, 1
when any violation (or flag mismatch) was recorded and 2 for bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from aesplan.errors import AesError

log = logging.getLogger("aesplan")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer, got {text}")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _print_run(res):
    m = res.metrics
    status = "ok" if res.ok and not res.flag_check.get("mismatches") else "FAIL"
    print(f"{res.config.name}: {status}  cycles={m.n_cycles} hours={m.hours:.3f} total={m.total:.2f}s "
          f"fill={m.fill_rate:.1f}% interventions={m.interventions} wall={res.wall_seconds:.1f}s")
    for v in res.violations:
        print(f"  violation: {v}")
    for f in res.flag_check.get("mismatches", []):
        print(f"  flag mismatch: {f} expected {res.flag_check['expected'][f]}, observed {res.flag_check['observed'][f]}")


def _failed(res):
    return bool(res.violations or res.flag_check.get("mismatches"))


def cmd_run(args):
    from aesplan.harness import load_scenario, run_scenario

    config = load_scenario(args.scenario)
    res = run_scenario(config, seed=args.seed, cycles=args.cycles, hours=args.hours, out_dir=args.out)
    _print_run(res)
    if args.out:
        print(f"outputs written to {args.out}")
    return 1 if _failed(res) else 0


def _matrix_one(job):
    from aesplan.harness import load_bundled, run_scenario

    i, seed, cycles, out = job
    config = load_bundled(i)
    out_dir = os.path.join(out, f"scenario{i}") if out else None
    res = run_scenario(config, seed=seed, cycles=cycles, out_dir=out_dir)
    return {"index": i, "name": config.name, "violations": res.violations, "flag_check": res.flag_check,
            "summary": res.metrics.summary(), "wall": res.wall_seconds}


def cmd_matrix(args):
    from aesplan.harness.scenario import bundled_scenario_names

    jobs = [(i, args.seed, args.cycles, args.out) for i in range(1, len(bundled_scenario_names()) + 1)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_matrix_one, jobs))
    else:
        results = [_matrix_one(j) for j in jobs]
    failed = 0
    print(f"{'scenario':<44}{'TM':>6}{'OA':>6}{'W':>6}  status")
    for r in results:
        obs = r["flag_check"]["observed"]
        cells = "".join(f"{'Y' if obs[f] else 'N':>6}" for f in ("terrain_manipulation", "obstacle_avoidance", "water"))
        bad = bool(r["violations"] or r["flag_check"]["mismatches"])
        failed += bad
        print(f"{r['name']:<44}{cells}  {'FAIL' if bad else 'ok'}")
        for v in r["violations"]:
            print(f"  violation: {v}")
        for f in r["flag_check"]["mismatches"]:
            print(f"  flag mismatch: {f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "matrix.json"), "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
    print(f"{len(results) - failed}/{len(results)} scenarios conform")
    return 1 if failed else 0


def cmd_learn_weights(args):
    from aesplan.motion.irl import IrlParams, learn_weights
    from aesplan.motion.trajectory import load_demo_dir

    demos = load_demo_dir(args.demos)
    if not demos:
        raise AesError(f"no trajectory CSV files in {args.demos}")
    weights = learn_weights(demos, samples_per_demo=args.samples, rng_seed=args.seed,
                            params=IrlParams(reg=args.reg))
    print(json.dumps(weights.to_json()))
    if args.out:
        weights.save(args.out)
        print(f"weights written to {args.out}")
    return 0


def cmd_train_selector(args):
    from aesplan.selection import SelectionNet, TrainParams, read_demos_jsonl, train

    demos = read_demos_jsonl(args.demos)
    net = SelectionNet.init(seed=args.seed)
    net, curve = train(net, demos, TrainParams(epochs=args.epochs))
    print(f"demos={len(demos)} epochs={args.epochs} loss {curve[0]:.6g} -> {curve[-1]:.6g}")
    if args.out:
        net.save(args.out)
        print(f"selector written to {args.out}")
    return 0


def cmd_synth_demos(args):
    from aesplan.harness.defaults import motion_demos, selector_demos
    from aesplan.selection import write_demos_jsonl

    os.makedirs(args.out, exist_ok=True)
    traj_dir = os.path.join(args.out, "trajectories")
    os.makedirs(traj_dir, exist_ok=True)
    for k, demo in enumerate(motion_demos(n=args.trajectories, seed=args.seed)):
        demo.to_csv(os.path.join(traj_dir, f"demo_{k:03d}.csv"))
    demos = selector_demos(n_maps=args.maps, seed=args.seed)
    write_demos_jsonl(os.path.join(args.out, "selector_demos.jsonl"), demos)
    print(f"{args.trajectories} trajectory demos in {traj_dir}, {len(demos)} selector demos in "
          f"{os.path.join(args.out, 'selector_demos.jsonl')}")
    return 0


def cmd_build_defaults(args):
    from aesplan.harness.defaults import build_selector, build_weights

    os.makedirs(args.out, exist_ok=True)
    weights = build_weights(seed=args.seed)
    weights.save(os.path.join(args.out, "pattern_weights.json"))
    net, curve = build_selector(seed=args.seed, epochs=args.epochs)
    net.save(os.path.join(args.out, "selector_default.json"))
    print(f"weights {weights.w.round(4).tolist()}; selector loss {curve[0]:.4g} -> {curve[-1]:.4g}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="aes", description="Excavation planning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=_u64, default=None, help="defaults to the scenario's seed")
    r.add_argument("--cycles", type=_positive, default=None)
    r.add_argument("--hours", type=float, default=None, help="simulated-time budget instead of a cycle count")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("matrix", help="run all bundled scenarios and check their flags")
    m.add_argument("--seed", type=_u64, default=None)
    m.add_argument("--cycles", type=_positive, default=None)
    m.add_argument("--out", default=None)
    m.add_argument("--jobs", type=_positive, default=1)
    m.set_defaults(func=cmd_matrix)

    lw = sub.add_parser("learn-weights", help="learn pattern weights from trajectory CSVs")
    lw.add_argument("--demos", required=True)
    lw.add_argument("--samples", type=_positive, default=50)
    lw.add_argument("--reg", type=float, default=1e-3)
    lw.add_argument("--seed", type=_u64, default=0)
    lw.add_argument("--out", default=None)
    lw.set_defaults(func=cmd_learn_weights)

    ts = sub.add_parser("train-selector", help="train the target selection net on JSONL demos")
    ts.add_argument("--demos", required=True)
    ts.add_argument("--epochs", type=_positive, default=2000)
    ts.add_argument("--seed", type=_u64, default=0)
    ts.add_argument("--out", default=None)
    ts.set_defaults(func=cmd_train_selector)

    sd = sub.add_parser("synth-demos", help="write synthetic demos for learn-weights and train-selector")
    sd.add_argument("--out", required=True)
    sd.add_argument("--trajectories", type=_positive, default=8)
    sd.add_argument("--maps", type=_positive, default=10)
    sd.add_argument("--seed", type=_u64, default=0)
    sd.set_defaults(func=cmd_synth_demos)

    bd = sub.add_parser("build-defaults", help="rebuild the shipped selector and weights")
    bd.add_argument("--out", required=True)
    bd.add_argument("--epochs", type=_positive, default=3000)
    bd.add_argument("--seed", type=_u64, default=0)
    bd.set_defaults(func=cmd_build_defaults)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (AesError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
