"""``herdsim`` command line: run, report, convert."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__, _backend
from .config import ConfigError, ExperimentConfig, load

MANIFEST = "manifest.json"
SUMMARY = "summary.txt"
CONFIG_COPY = "config.yaml"

log = logging.getLogger("herdsim")


def atomic_write(path: Path, data: bytes) -> None:
    """Write via a temporary file in the target directory and rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _configure(args) -> None:
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    threads = getattr(args, "threads", None)
    if threads is not None:
        _backend.set_num_threads(threads)


def cmd_run(args) -> int:
    from .experiments import run

    try:
        cfg = load(args.config)
    except ConfigError as err:
        print(f"herdsim: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"herdsim: cannot read config: {err}", file=sys.stderr)
        return 2
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    if overrides:
        try:
            cfg = ExperimentConfig.model_validate({**cfg.canonical(), **overrides})
        except Exception as err:  # pydantic error on a bad --seed
            print(f"herdsim: invalid override: {err}", file=sys.stderr)
            return 2
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        print(f"herdsim: cannot create output directory {out}: {err}", file=sys.stderr)
        return 2

    t0 = time.perf_counter()
    try:
        result = run(cfg)
    except Exception as err:
        log.debug("run failed", exc_info=True)
        print(f"herdsim: {cfg.experiment} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0

    artifacts = {}
    for name, data in sorted(result.artifacts.items()):
        atomic_write(out / name, data)
        artifacts[name] = {"path": name, "sha256": _sha256(data), "bytes": len(data)}
    summary = result.summary(cfg)
    atomic_write(out / SUMMARY, summary.encode("utf-8"))
    atomic_write(out / CONFIG_COPY, cfg.to_yaml().encode("utf-8"))
    manifest = {
        "schema_version": cfg.schema_version,
        "toolkit_version": __version__,
        "experiment": cfg.experiment,
        "config_hash": cfg.content_hash(),
        "seed": cfg.seed,
        "seed_ledger": result.seeds,
        "backend": _backend.name(),
        "threads": _backend.get_num_threads(),
        "wall_clock_seconds": round(wall, 3),
        "artifacts": artifacts,
        "summary": SUMMARY,
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in result.checks],
    }
    atomic_write(out / MANIFEST, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    sys.stdout.write(summary)
    return 0


def build_report(manifest_path: Path) -> tuple[str, bool]:
    """Summary text and overall success for a recorded run."""
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST
    man = json.loads(manifest_path.read_text(encoding="utf-8"))
    root = manifest_path.parent
    lines = [f"experiment: {man['experiment']}", f"config_hash: {man['config_hash']}", f"seed: {man['seed']}"]
    gaps = []
    for name, meta in sorted(man["artifacts"].items()):
        p = root / meta["path"]
        if not p.exists():
            gaps.append(f"MISSING artifact {meta['path']}")
        elif _sha256(p.read_bytes()) != meta["sha256"]:
            gaps.append(f"MODIFIED artifact {meta['path']} (hash mismatch)")
    for c in man["checks"]:
        lines.append(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    lines += gaps
    n_fail = sum(not c["passed"] for c in man["checks"])
    if gaps:
        lines.append(f"result: incomplete, {len(gaps)} artifact(s) unavailable")
    elif n_fail:
        lines.append(f"result: {n_fail} check(s) failed")
    else:
        lines.append("result: all checks passed")
    return "\n".join(lines) + "\n", not gaps and n_fail == 0


def cmd_report(args) -> int:
    path = Path(args.manifest)
    try:
        text, ok = build_report(path)
    except (OSError, ValueError, KeyError) as err:
        print(f"herdsim: cannot read manifest {path}: {err}", file=sys.stderr)
        return 2
    sys.stdout.write(text)
    return 0 if ok else 1


def cmd_convert(args) -> int:
    from .particles import Trajectory

    src, dst = Path(args.input), Path(args.output)
    try:
        if src.suffix == ".bin":
            traj = Trajectory.from_binary(src)
        elif src.suffix == ".csv":
            traj = Trajectory.from_csv(src)
        else:
            raise ValueError("input must end in .bin or .csv")
        if dst.suffix == ".csv":
            atomic_write(dst, traj.to_csv().encode("utf-8"))
        elif dst.suffix == ".bin":
            import io

            buf = io.BytesIO()
            traj.to_binary(buf)
            atomic_write(dst, buf.getvalue())
        else:
            raise ValueError("output must end in .bin or .csv")
    except (OSError, ValueError) as err:
        print(f"herdsim: convert failed: {err}", file=sys.stderr)
        return 1
    return 0


def _threads_default() -> int | None:
    raw = os.environ.get("HERDSIM_THREADS")
    return int(raw) if raw and raw.isdigit() and int(raw) > 0 else None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="herdsim", description="Noisy herd simulation and sparse control experiments.")
    p.add_argument("--version", action="version", version=f"herdsim {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="count", default=0, help="repeat for debug output")
    common.add_argument("--threads", type=int, default=_threads_default(),
                        help="worker threads for the kernels (default: $HERDSIM_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run the experiment named in a config file")
    r.add_argument("--config", required=True, help="YAML or JSON experiment config")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--seed", type=int, help="master seed (overrides seed)")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", parents=[common], help="print pass/fail for a finished run")
    rep.add_argument("manifest", help="manifest.json or the run directory")
    rep.set_defaults(func=cmd_report)

    c = sub.add_parser("convert", parents=[common], help="convert trajectories between .bin and .csv")
    c.add_argument("input")
    c.add_argument("output")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("herdsim: --threads must be >= 1", file=sys.stderr)
        return 2
    _configure(args)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
