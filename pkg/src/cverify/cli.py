"""Command-line front end: verify / monitor / conformal verbs.

Experiment settings live in a flat TOML file mirrored one-to-one by CLI
flags (a flag overrides the file).  Every failure is reported as a
single-line JSON diagnostic on stderr; exit codes are 0 (done), 2 (bad
config or formula), 3 (the simulator made the run impossible).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import re
import shlex
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from .conformal import conf_int
from .partition import (
    FAILED,
    PartitionConfig,
    root_region,
    verify,
)
from .regress import Dataset
from .report import fmt_float, write_outputs
from .signals import ParamBox, Signal, truncated_gaussian, uniform
from .sim import DimensionMismatch, SimFailure, builtin, external
from .stl import boolean_sat, parse, robustness

log = logging.getLogger("cverify")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIM = 3


# ---------------------------------------------------------------------------
# RunConfig and its TOML round trip
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a verify run needs, in plain serializable fields."""

    spec: str
    box: tuple  # ((lo, hi), ...) one pair per parameter
    model: Optional[str] = None
    sim_cmd: Optional[str] = None
    dist: str = "uniform"  # or "gaussian"
    dist_mean: Optional[tuple] = None
    dist_stddev: Optional[tuple] = None
    alpha: float = 0.05
    sims_per_region: int = 100
    reg: str = "gp"
    strategy: str = "greatest-uncertainty"
    delta_frac: Optional[tuple] = None
    delta_min: Optional[float] = None
    max_regions: int = 512
    seed: int = 0
    delta_min_policy: str = "unknown"
    out_dir: str = "out"
    workers: int = 1
    sim_timeout: float = 60.0

    def __post_init__(self):
        box = tuple(
            (float(pair[0]), float(pair[1])) for pair in self.box
        )
        if not box:
            raise ValueError("box must have at least one axis")
        self.box = box
        if self.delta_frac is not None:
            if np.isscalar(self.delta_frac):
                self.delta_frac = (float(self.delta_frac),)
            else:
                self.delta_frac = tuple(float(v) for v in self.delta_frac)
        if self.delta_frac is None and self.delta_min is None:
            self.delta_frac = (0.1,)  # default stop rule: 10% per axis
        if self.delta_frac is not None and self.delta_min is not None:
            raise ValueError("set at most one of delta_frac / delta_min")
        if self.dist_mean is not None:
            self.dist_mean = tuple(float(v) for v in self.dist_mean)
        if self.dist_stddev is not None:
            self.dist_stddev = tuple(float(v) for v in self.dist_stddev)
        if (self.model is None) == (self.sim_cmd is None):
            raise ValueError("set exactly one of model / sim_cmd")
        if self.dist not in ("uniform", "gaussian"):
            raise ValueError(f"unknown distribution {self.dist!r}")
        if self.dist == "gaussian" and (
            self.dist_mean is None or self.dist_stddev is None
        ):
            raise ValueError("gaussian distribution needs dist_mean/dist_stddev")

    def param_box(self) -> ParamBox:
        lower = [p[0] for p in self.box]
        upper = [p[1] for p in self.box]
        return ParamBox(lower=lower, upper=upper)

    def distribution(self):
        box = self.param_box()
        if self.dist == "uniform":
            return uniform(box)
        return truncated_gaussian(self.dist_mean, self.dist_stddev, box)

    def partition_config(self) -> PartitionConfig:
        return PartitionConfig(
            alpha=self.alpha,
            sims_per_region=self.sims_per_region,
            reg=self.reg,
            strategy=self.strategy,
            delta_frac=self.delta_frac,
            delta_min=self.delta_min,
            max_regions=self.max_regions,
            seed=self.seed,
            delta_min_policy=self.delta_min_policy,
            workers=self.workers,
        )


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)  # TOML basic strings escape like JSON
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        s = repr(v)  # shortest round-trip; tomli reparses it exactly
        return s if any(c in s for c in ".einf") else s + ".0"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot render {type(v).__name__} to TOML")


def render_config(cfg: RunConfig) -> str:
    """Flat TOML document; parse_config() inverts it exactly."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def parse_config(text: str) -> RunConfig:
    data = tomllib.loads(text)
    unknown = set(data) - _FIELD_NAMES
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data)


def load_config(path: str) -> RunConfig:
    with open(path, "rb") as fh:
        text = fh.read().decode()
    return parse_config(text)


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def run_verify(cfg: RunConfig) -> int:
    phi = parse(cfg.spec)
    box = cfg.param_box()
    root = root_region(box, cfg.distribution())
    pcfg = cfg.partition_config()

    if cfg.model is not None:
        sim = builtin(cfg.model)
        closer = None
    else:
        sim = external(shlex.split(cfg.sim_cmd), timeout=cfg.sim_timeout)
        closer = sim
        if sim.k != box.dim:
            raise DimensionMismatch(
                f"external sim takes {sim.k} parameters, box has {box.dim}"
            )
    try:
        result = verify(sim, phi, root, pcfg)
    finally:
        if closer is not None:
            closer.close()

    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.toml"), "w") as fh:
        fh.write(render_config(cfg))
    paths = write_outputs(result, box, cfg.out_dir)
    counts = {}
    for lr in result.regions:
        counts[lr.verdict] = counts.get(lr.verdict, 0) + 1
    log.info(
        "verify done: %d regions %s, %d sims, exhausted=%s -> %s",
        len(result.regions), counts, result.total_sims, result.exhausted,
        cfg.out_dir,
    )
    print(json.dumps({
        "regions": len(result.regions),
        "verdicts": counts,
        "total_sims": result.total_sims,
        "exhausted": result.exhausted,
        "out_dir": cfg.out_dir,
        "files": [os.path.basename(p) for p in paths],
    }))

    processed = sum(lr.sims_used > 0 for lr in result.regions)
    failed = counts.get(FAILED, 0)
    if failed and processed == 0:
        # the simulator never produced a usable region: treat as aborted
        _diagnose(SimFailure("every region failed to simulate"))
        return EXIT_SIM
    return EXIT_OK


def read_trace(path: str) -> Signal:
    """CSV with header time,x0,x1,... -> Signal."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise ValueError(f"empty trace file {path!r}")
    header = [c.strip() for c in rows[0]]
    if header[0] != "time" or any(
        h != f"x{i}" for i, h in enumerate(header[1:])
    ):
        raise ValueError(
            f"trace header must be time,x0,x1,...; got {','.join(header)}"
        )
    body = [[float(c) for c in row] for row in rows[1:] if row]
    if not body:
        raise ValueError(f"trace {path!r} has no samples")
    arr = np.asarray(body, dtype=float)
    if arr.shape[1] != len(header):
        raise ValueError("trace rows disagree with header width")
    return Signal(times=arr[:, 0], values=arr[:, 1:])


def run_monitor(trace_path: str, spec_text: str) -> int:
    phi = parse(spec_text)
    sig = read_trace(trace_path)
    rho = robustness(phi, sig)
    sat = boolean_sat(phi, sig)
    print(
        '{"robustness": %s, "satisfied": %s}'
        % (fmt_float(rho), "true" if sat else "false")
    )
    return EXIT_OK


def read_samples(path: str):
    """CSV of (theta..., rho) float rows; a non-numeric first line is a header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [row for row in rows if row]
    if not rows:
        raise ValueError(f"empty sample file {path!r}")
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
    arr = np.asarray([[float(c) for c in row] for row in rows], dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError("need rows of at least (theta, rho)")
    return arr[:, :-1], arr[:, -1]


def run_conformal(data_path: str, alpha: float, reg: str, seed: int) -> int:
    thetas, rhos = read_samples(data_path)
    cm = conf_int(Dataset(thetas, rhos), alpha, reg=reg, seed=seed)
    mu = cm.surrogate.predict_batch(thetas)
    print(json.dumps({
        "alpha": alpha,
        "reg": reg,
        "m": cm.m,
        "k": cm.k,
        "d": float(fmt_float(cm.d)),
        "mu_hat": {
            "min": float(fmt_float(mu.min())),
            "mean": float(fmt_float(mu.mean())),
            "max": float(fmt_float(mu.max())),
        },
    }))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def parse_box(text: str) -> tuple:
    """"l0:u0,l1:u1" -> ((l0, u0), (l1, u1))."""
    pairs = []
    for part in text.split(","):
        bits = part.split(":")
        if len(bits) != 2:
            raise ValueError(f"box axis {part!r} is not lo:hi")
        pairs.append((float(bits[0]), float(bits[1])))
    return tuple(pairs)


def parse_fracs(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="cverify",
        description="statistical verification of black-box models against "
        "temporal-logic specs",
    )
    sub = top.add_subparsers(dest="verb", required=True)

    v = sub.add_parser("verify", help="partition a parameter box into "
                       "Safe/Unsafe/Unknown regions")
    # box strings like "-1:1,-1:1" start with "-" but are values, not flags
    v._negative_number_matcher = re.compile(r"^-\d")
    v.add_argument("--config", help="TOML file with RunConfig fields")
    v.add_argument("--model", help="bundled simulator: vdp | mountain-car")
    v.add_argument("--sim-cmd", help="external simulator command line")
    v.add_argument("--spec", help="temporal-logic formula text")
    v.add_argument("--box", help='parameter box "l0:u0,l1:u1,..."')
    v.add_argument("--alpha", type=float)
    v.add_argument("--sims-per-region", type=int)
    v.add_argument("--reg", help="surrogate: gp | poly1 | poly2 | mlp")
    v.add_argument("--strategy",
                   help="naive | greatest-uncertainty | root-split")
    v.add_argument("--delta-frac", help='stop fractions "0.1" or "0.1,0.2"')
    v.add_argument("--delta-min", type=float, help="absolute stop diameter")
    v.add_argument("--max-regions", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--policy", dest="delta_min_policy",
                   help="unknown | counterexample-unsafe")
    v.add_argument("--out-dir")
    v.add_argument("--workers", type=int)
    v.add_argument("--sim-timeout", type=float)

    m = sub.add_parser("monitor", help="robustness of one recorded trace")
    m.add_argument("--trace", required=True, help="CSV with header time,x0,...")
    m.add_argument("--spec", required=True)

    c = sub.add_parser("conformal", help="fit a conformal band to samples")
    c.add_argument("--data", required=True, help="CSV of theta...,rho rows")
    c.add_argument("--alpha", type=float, required=True)
    c.add_argument("--reg", default="gp")
    c.add_argument("--seed", type=int, default=0)
    return top


_FLAG_FIELDS = (
    "model", "sim_cmd", "spec", "box", "alpha", "sims_per_region", "reg",
    "strategy", "delta_frac", "delta_min", "max_regions", "seed",
    "delta_min_policy", "out_dir", "workers", "sim_timeout",
)


def _assemble_verify_config(args) -> RunConfig:
    values = {}
    if args.config:
        file_cfg = load_config(args.config)
        values = {
            f.name: getattr(file_cfg, f.name)
            for f in dataclasses.fields(RunConfig)
        }
    for name in _FLAG_FIELDS:
        flag = getattr(args, name, None)
        if flag is None:
            continue
        if name == "box":
            flag = parse_box(flag)
        elif name == "delta_frac":
            flag = parse_fracs(flag)
        values[name] = flag
    # a stop rule on the command line replaces the file's stop rule
    if args.delta_frac is not None and args.delta_min is None:
        values.pop("delta_min", None)
    if args.delta_min is not None and args.delta_frac is None:
        values.pop("delta_frac", None)
    if "spec" not in values or values.get("spec") is None:
        raise ValueError("a spec is required (--spec or config file)")
    if "box" not in values or values.get("box") is None:
        raise ValueError("a box is required (--box or config file)")
    return RunConfig(**values)


def _diagnose(exc: BaseException):
    info = {"error": type(exc).__name__, "message": str(exc)}
    position = getattr(exc, "position", None)
    if position is not None:
        info["position"] = position
    expected = getattr(exc, "expected", None)
    if expected:
        info["expected"] = sorted(expected)
    print(json.dumps(info), file=sys.stderr)


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CVERIFY_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "verify":
            return run_verify(_assemble_verify_config(args))
        if args.verb == "monitor":
            return run_monitor(args.trace, args.spec)
        return run_conformal(args.data, args.alpha, args.reg, args.seed)
    except SimFailure as exc:
        _diagnose(exc)
        return EXIT_SIM
    except (ValueError, OSError, tomllib.TOMLDecodeError) as exc:
        _diagnose(exc)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())