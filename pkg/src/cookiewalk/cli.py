"""Command-line entry point: ``cookiewalk <subcommand> --config cfg.json``.

Exit codes: 0 success, 1 verdict disagreement (``verify``), 2 invalid
config, 3 ellipticity refused (``verify``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, rng
from .branching import curves_from_batch, merge_batches, munu_batch, nu_exact, theta
from .coins import CoinField
from .env import EnvironmentLaw, check_ellipticity, delta
from .renewal import (PathSimulator, analyze, estimate_no_backtrack, estimate_sigma2_clt,
                      estimate_speed, simulate_paths, write_bt_samples, write_cycle_table)
from .stats import EllipticityRefused, RegimeBudget, verify_regime
from .tree import excursion_to_tree, random_geometric_tree, tree_to_excursion
from .walk import NotAnExcursion, run_walk

EXIT_OK, EXIT_DISAGREE, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3

KEYS = ("environment", "seed", "horizon", "replicates", "margin", "guard_level",
        "tail_cut", "level", "output_dir")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    law: EnvironmentLaw
    seed: int
    horizon: int = 1000
    replicates: int = 1000
    margin: int = 1000
    guard_level: int = 50
    tail_cut: float = 1e-12
    level: float = 0.95
    output_dir: str = "out"
    raw: dict | None = None

    @property
    def digest(self) -> str:
        # where outputs land does not change them
        body = {k: v for k, v in (self.raw or {}).items() if k != "output_dir"}
        canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def header(self, command: str) -> str:
        return (f"cookiewalk {__version__} {command} config_sha256={self.digest} "
                f"seed={self.seed}")


def _positive_int(raw, key):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
        raise ConfigError(f"{key} must be a positive integer")
    return v


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key in ("environment", "seed"):
        if key not in raw:
            raise ConfigError(f"missing config key {key!r}")
    try:
        law = EnvironmentLaw.from_entries(raw["environment"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"environment: {exc}") from exc
    seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    kw = {}
    for key in ("horizon", "replicates", "guard_level"):
        if key in raw:
            kw[key] = _positive_int(raw, key)
    if "margin" in raw:
        m = raw["margin"]
        if isinstance(m, bool) or not isinstance(m, int) or m < 0:
            raise ConfigError("margin must be a nonnegative integer")
        kw["margin"] = m
    if "tail_cut" in raw:
        t = raw["tail_cut"]
        if not isinstance(t, (int, float)) or not 0 < t <= 1e-6:
            raise ConfigError("tail_cut must lie in (0, 1e-6]")
        kw["tail_cut"] = float(t)
    if "level" in raw:
        lv = raw["level"]
        if not isinstance(lv, (int, float)) or not 0 < lv < 1:
            raise ConfigError("level must lie in (0, 1)")
        kw["level"] = float(lv)
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
            raise ConfigError("output_dir must be a nonempty string")
        kw["output_dir"] = raw["output_dir"]
    return ExperimentConfig(law, seed, raw=raw, **kw)


def load_config(path: str) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(raw)


def _out(cfg: ExperimentConfig, name: str) -> Path:
    d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _write_report(cfg: ExperimentConfig, command: str, name: str, text: str) -> None:
    body = f"# {cfg.header(command)}\n{text}"
    _out(cfg, name).write_text(body)
    sys.stdout.write(body)


# ------------------------------------------------------------------ subcommands

def cmd_delta(cfg, args) -> int:
    law = cfg.law
    lines = [f"delta={delta(law)!r}",
             f"theta_forward={theta(nu_exact(law, 'forward', cfg.tail_cut))!r}",
             f"theta_backward={theta(nu_exact(law, 'backward', cfg.tail_cut))!r}",
             f"elliptic={check_ellipticity(law)}"]
    _write_report(cfg, "delta", "delta.txt", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_walk(cfg, args) -> int:
    with open(_out(cfg, "walk.csv"), "w") as fh:
        fh.write(f"# {cfg.header('walk')}\n")
        fh.write("path_id,n,X_n\n")
        sim = PathSimulator(cfg.law, cfg.seed, cfg.horizon)
        for r in range(cfg.replicates):
            xs = sim.path(r)
            fh.writelines(f"{r},{n},{x}\n" for n, x in enumerate(xs.tolist()))
    return EXIT_OK


def cmd_tree_roundtrip(cfg, args) -> int:
    ok = bad = censored = 0
    for r in range(cfg.replicates):
        tree = random_geometric_tree(np.random.default_rng([cfg.seed, rng.TREE, r]))
        if excursion_to_tree(tree_to_excursion(tree)) == tree:
            ok += 1
        else:
            bad += 1
        path = run_walk(CoinField(cfg.law, cfg.seed, r), 0, cfg.horizon)
        try:
            tree = excursion_to_tree(path)
        except NotAnExcursion:
            censored += 1
            continue
        back = tree_to_excursion(tree)
        t0 = back.horizon
        first = path.positions[: t0 + 1]
        if first[1] < 0:
            first = -first
        if np.array_equal(back.positions, first):
            ok += 1
        else:
            bad += 1
    text = f"pass={ok}\nfail={bad}\ncensored_excursions={censored}\n"
    _write_report(cfg, "tree-roundtrip", "tree_roundtrip.txt", text)
    return EXIT_OK if bad == 0 else EXIT_DISAGREE


def cmd_nu(cfg, args) -> int:
    nu = nu_exact(cfg.law, args.direction, cfg.tail_cut)
    with open(_out(cfg, f"nu_{args.direction}.csv"), "w") as fh:
        nu.to_csv(fh, cfg.header("nu"))
    return EXIT_OK


def cmd_branching(cfg, args) -> int:
    nu = nu_exact(cfg.law, args.direction, cfg.tail_cut)
    chunk = 100_000
    parts = [munu_batch(nu, cfg.horizon, min(chunk, cfg.replicates - a), cfg.seed, a)
             for a in range(0, cfg.replicates, chunk)]
    curves = curves_from_batch(merge_batches(parts), cfg.level)
    with open(_out(cfg, f"branching_{args.direction}.csv"), "w") as fh:
        curves.to_csv(fh, cfg.header("branching"))
    return EXIT_OK


def cmd_renewal(cfg, args) -> int:
    batch = simulate_paths(cfg.law, cfg.seed, cfg.replicates, cfg.horizon, cfg.margin,
                           args.workers)
    nb = estimate_no_backtrack(cfg.law, cfg.seed, cfg.replicates, cfg.horizon, cfg.guard_level)
    lines = []
    try:
        sp = estimate_speed(batch, cfg.level, nb)
        lines += [f"cycles={sp.n_cycles}", f"v_hat={sp.v_hat!r}", f"v_se={sp.se!r}",
                  f"v_ci=({sp.ci_lo!r}, {sp.ci_hi!r})", f"mean_XH_over_H={sp.direct!r}",
                  f"mean_space={sp.mean_space!r}", f"mean_time={sp.mean_time!r}",
                  f"p_no_backtrack={nb.p_hat!r}", f"inv_p_no_backtrack={sp.inv_p_escape!r}"]
        try:
            s = estimate_sigma2_clt(batch, sp.v_hat)
            lines += [f"sigma2_cycles={s.sigma2_cycles!r}", f"sigma2_paths={s.sigma2_paths!r}",
                      f"ks_normal={s.ks_stat!r}", f"ks_crit_1pct={s.ks_crit_1pct!r}",
                      f"degenerate={s.degenerate}"]
        except ValueError as exc:
            lines.append(f"sigma2=unavailable ({exc})")
    except ValueError as exc:
        lines.append(f"v_hat=unavailable ({exc})")
        sp = None
    lines.append("note=first cycle of each path excluded; sigma2 uses the plug-in v_hat")

    sim = PathSimulator(cfg.law, cfg.seed, cfg.horizon)
    keep = min(cfg.replicates, args.table_paths)
    reports, bt = [], []
    for r in range(keep):
        xs = sim.path(r)
        reports.append(analyze(xs, cfg.margin, r))
        bt.append((r, xs.copy()))
    with open(_out(cfg, "cycles.csv"), "w") as fh:
        write_cycle_table(reports, fh, cfg.header("renewal"))
    if sp is not None:
        ts = np.round(np.linspace(0.0, 1.0, 101), 2)
        with open(_out(cfg, "bt.csv"), "w") as fh:
            write_bt_samples(bt, sp.v_hat, cfg.horizon, ts, fh, cfg.header("renewal"))
    _write_report(cfg, "renewal", "renewal.txt", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_verify(cfg, args) -> int:
    b = RegimeBudget(seed=cfg.seed, margin=cfg.margin, guard_level=cfg.guard_level,
                     level=cfg.level, workers=args.workers)
    raw = cfg.raw or {}
    if "horizon" in raw:
        b = replace(b, speed_horizon=cfg.horizon)
    if "replicates" in raw:
        b = replace(b, return_paths=cfg.replicates)
    try:
        v = verify_regime(cfg.law, b)
    except EllipticityRefused as exc:
        _write_report(cfg, "verify", "verify.txt", f"refused={exc}\n")
        return EXIT_REFUSED
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _write_report(cfg, "verify", "verify.txt", v.report())
    return EXIT_OK if v.all_agree else EXIT_DISAGREE


COMMANDS = {"delta": cmd_delta, "walk": cmd_walk, "tree-roundtrip": cmd_tree_roundtrip,
            "branching": cmd_branching, "nu": cmd_nu, "renewal": cmd_renewal,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cookiewalk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cookiewalk {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--workers", type=int, default=1,
                        help="worker threads; outputs do not depend on it")
        if name in ("nu", "branching"):
            sp.add_argument("--direction", choices=("forward", "backward"), default="forward")
        if name == "renewal":
            sp.add_argument("--table-paths", type=int, default=20,
                            help="paths written to the cycle and B_t^n tables")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
