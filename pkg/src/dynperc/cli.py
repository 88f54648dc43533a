"""Command-line front end.

Every command writes CSV: ``#`` metadata lines (build id, RNG, config echo),
a header row, then data rows. Replicas draw independent PCG64 streams
spawned from one SeedSequence, and results are always written in replica
order, whatever the number of workers.

Exit codes: 0 success, 2 usage or parameter error, 3 internal assertion
failure (for example a coupled pair losing its order).
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numba
import numpy as np

from . import __version__
from . import analytic as an
from .couplings import (
    SCENARIOS,
    disparity_batch,
    event_decomposition,
    gap_samples,
    monotone_p_pair,
    stationary_gap_samples,
)
from .estimators import (
    batch_speed,
    dichotomy_sign_test,
    expected_verdict,
    fit_exponential,
    regen_speed,
)
from .walker import RegenerationBlocks, far_edge_marginal, occupancy_fractions, run_plain, run_regen

__all__ = ["main", "build_parser", "read_config", "spawn_seeds", "RNG_NAME", "BUILD_ID"]

RNG_NAME = "PCG64/SeedSequence"
BUILD_ID = f"artifact-{__version__} numpy-{np.__version__} numba-{numba.__version__}"


class UsageError(Exception):
    """Bad parameters or input; reported with exit code 2."""


# ---------------------------------------------------------------- plumbing


def spawn_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Per-replica substreams, deterministic in (seed, replica index)."""
    return np.random.SeedSequence(seed).spawn(n)


def _default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def _fan_out(fn: Callable, args: list[tuple], workers: int) -> list:
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
        futures = [pool.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class _Out:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.buf = io.StringIO()
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.buf.write(f"# build: {BUILD_ID}\n")
        self.buf.write(f"# rng: {RNG_NAME}\n")
        for k, v in sorted(vars(args).items()):
            if k in ("func", "output", "config", "workers"):
                continue
            self.buf.write(f"# config.{k}={_fmt(v)}\n")

    def row(self, *values) -> None:
        self.writer.writerow([_fmt(v) for v in values])

    def comment(self, text: str) -> None:
        self.buf.write(f"# {text}\n")

    def flush(self) -> None:
        text = self.buf.getvalue()
        if self.args.output in (None, "-"):
            sys.stdout.write(text)
        else:
            with open(self.args.output, "w", encoding="utf-8") as fh:
                fh.write(text)


def _params(a: argparse.Namespace) -> an.Params:
    return an.Params(a.d, a.p, a.mu, a.lam)


# ---------------------------------------------------------------- workers


def _plain_replica(params: an.Params, horizon: float, batches: int, prune: bool, ss: np.random.SeedSequence):
    run = run_plain(params, horizon, ss, batches=batches, prune=prune)
    return run.state, run.batch_positions


def _regen_replica(params: an.Params, blocks: int, ss: np.random.SeedSequence) -> RegenerationBlocks:
    return run_regen(params, blocks, ss)


def _seed_label(seed: int, i: int) -> str:
    return f"{seed}/{i}"


# ---------------------------------------------------------------- commands


def cmd_formulas(a: argparse.Namespace, out: _Out) -> None:
    prm = _params(a)
    mu, p, lam = prm.mu, prm.p, prm.lam
    out.row("quantity", "value")
    f, b, o = prm.direction_probabilities()
    out.row("prob_forward", f)
    out.row("prob_backward", b)
    out.row("prob_each_orthogonal", o)
    if not prm.totally_asymmetric:
        out.row("z_lambda", an.z_lambda(prm))
    out.row("tarwdp_speed", an.tarwdp_speed(mu, p))
    out.row("c_mu_p", an.c_mu_p(mu, p))
    if prm.d == 1 and not prm.totally_asymmetric:
        out.row("speed_1d_order2", an.speed_expansion_1d(mu, p, lam))
    chain = an.projection_chain(mu, p)
    for (left, right), x in zip(an.STATE_ORDER, chain.stationary):
        out.row(f"stationary_{left}{right}", x)
    out.row("left_open_probability", an.left_open_probability(mu, p))
    out.row("expected_tau1", an.expected_tau1(mu))
    for s in SCENARIOS:
        out.row(f"gap_{s}", an.gap_scenario_expectation(s, mu, p))
    for s in SCENARIOS:
        out.row(f"gap_{s}_exact", an.gap_scenario_expectation_exact(s, mu, p))
    out.row("c_consistency_residual", an.c_consistency_residual(mu, p))
    out.row("speed_disparity_0_1", an.speed_disparity(mu, p, 0.0, 1.0))
    sx, sy = an.crossing_time_means(mu, p, 0.0, 1.0)
    out.row("crossing_mean_x_0_1", sx)
    out.row("crossing_mean_y_0_1", sy)
    out.row("critical_mu", an.critical_mu(p))
    if prm.d >= 2:
        out.row("c1", an.c1_coefficient(prm.d, mu, p))
    for n in (1, 2, 3):
        out.row(f"gamma_vs_exp_{n}", an.gamma_vs_exp(n, mu))
    if prm.d == 1 and 1.0 <= lam < math.inf:
        out.row("p_e1_k1", an.p_e1_prediction(mu, lam, 1))


def cmd_simulate(a: argparse.Namespace, out: _Out) -> None:
    prm = _params(a)
    if a.replicas < 1:
        raise UsageError("replicas must be >= 1")
    seeds = spawn_seeds(a.seed, a.replicas)
    out.row("replica", "seed", "events", "displacement", "time", "speed", "std_error",
            "forward_attempts", "backward_attempts", "orthogonal_attempts", "blocks", "mean_dt")
    if a.mode == "plain":
        if not a.horizon > 0:
            raise UsageError("horizon must be positive")
        res = _fan_out(_plain_replica, [(prm, a.horizon, a.batches, a.prune, s) for s in seeds], a.workers)
        bpos = []
        for i, (st, bp) in enumerate(res):
            est = batch_speed(bp, a.horizon, st.attempts)
            out.row(i, _seed_label(a.seed, i), st.attempts, st.pos[0], a.horizon, st.pos[0] / a.horizon,
                    est.std_error, st.forward_attempts, st.backward_attempts, st.orthogonal_attempts, "", "")
            bpos.append(bp)
        pooled = batch_speed(np.array(bpos), a.horizon, sum(st.attempts for st, _ in res))
        out.row("pooled", a.seed, pooled.budget, "", a.horizon * a.replicas, pooled.value, pooled.std_error,
                "", "", "", "", "")
    else:
        if a.blocks < 30:
            raise UsageError("blocks must be >= 30")
        res = _fan_out(_regen_replica, [(prm, a.blocks, s) for s in seeds], a.workers)
        for i, blk in enumerate(res):
            est = regen_speed(blk)
            out.row(i, _seed_label(a.seed, i), int(blk.attempts.sum()), int(blk.dx.sum()), float(blk.dt.sum()),
                    est.value, est.std_error, int(blk.attempts.sum() - blk.backward_attempts.sum()
                                                  - blk.orthogonal_attempts.sum()),
                    int(blk.backward_attempts.sum()), int(blk.orthogonal_attempts.sum()), len(blk),
                    float(blk.dt.mean()))
        allb = RegenerationBlocks.concat(res)
        est = regen_speed(allb)
        out.row("pooled", a.seed, est.budget, int(allb.dx.sum()), float(allb.dt.sum()), est.value, est.std_error,
                "", "", "", len(allb), float(allb.dt.mean()))
        out.comment(f"mean_dt_std_error={float(allb.dt.std(ddof=1) / math.sqrt(len(allb)))!r}")


def cmd_stationary(a: argparse.Namespace, out: _Out) -> None:
    prm = _params(a)
    if prm.d != 1 or not prm.totally_asymmetric:
        raise UsageError("stationary needs d = 1 and lam = inf")
    if not (a.inspection_rate > 0 and a.inspections >= 1000):
        raise UsageError("need inspection_rate > 0 and inspections >= 1000")
    ss_walk, ss_far = spawn_seeds(a.seed, 2)
    horizon = a.burn_in + a.inspections / a.inspection_rate
    run = run_plain(prm, horizon, ss_walk, inspection_rate=a.inspection_rate)
    frac = occupancy_fractions(run.occupancy, a.burn_in)
    theory = an.projection_chain(prm.mu, prm.p).stationary
    n = int(np.sum(run.occupancy.t >= a.burn_in))
    out.row("quantity", "estimate", "std_error", "theory", "samples")
    for (left, right), f, x in zip(an.STATE_ORDER, frac, theory):
        out.row(f"occupancy_{left}{right}", f, math.sqrt(f * (1 - f) / n), x, n)
    if a.far_edge >= 1 and a.far_reps >= 1:
        m = far_edge_marginal(prm, a.far_edge, a.far_reps, ss_far)
        out.row(f"far_edge_{a.far_edge}", m, math.sqrt(max(m * (1 - m), 1e-300) / a.far_reps), prm.p, a.far_reps)


def _mean_row(out: _Out, name: str, x: np.ndarray, ref) -> None:
    se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    out.row(name, float(x.mean()), se, "" if ref is None else ref, len(x))


def cmd_coupling(a: argparse.Namespace, out: _Out) -> None:
    an._check_mu_p(a.mu, a.p)
    if a.reps < 1:
        raise UsageError("reps must be >= 1")
    out.row("quantity", "mean", "std_error", "reference", "n")
    if a.kind == "disparity":
        if not 0.0 <= a.p1 <= a.p2 <= 1.0:
            raise UsageError("need 0 <= p1 <= p2 <= 1")
        b = disparity_batch(a.mu, a.p, a.p1, a.p2, a.horizon, a.reps, a.seed)
        ref = an.speed_disparity(a.mu, a.p, a.p1, a.p2) if a.p1 < a.p2 else 0.0
        means = an.crossing_time_means(a.mu, a.p, a.p1, a.p2) if a.p1 < a.p2 else (None, None)
        _mean_row(out, "final_gap", b.final_gap.astype(float), ref)
        _mean_row(out, "s_x", b.s_x, means[0])
        _mean_row(out, "s_y", b.s_y, means[1])
        out.row("order_violations", 0, 0.0, 0, len(b))
    elif a.kind == "gap":
        for s, ss in zip(SCENARIOS, spawn_seeds(a.seed, len(SCENARIOS))):
            x = gap_samples(s, a.mu, a.p, a.reps, ss)
            _mean_row(out, f"S_{s}", x, an.gap_scenario_expectation(s, a.mu, a.p))
    elif a.kind == "mixture":
        _, x = stationary_gap_samples(a.mu, a.p, a.reps, a.seed)
        _mean_row(out, "S_stationary", x, an.c_mu_p(a.mu, a.p))
    else:  # monotone
        lo, hi = monotone_p_pair(a.mu, a.p, min(a.p + a.dp, 1.0 - 1e-12), a.horizon, a.seed)
        out.row("x_low", lo, 0.0, "", 1)
        out.row("x_high", hi, 0.0, "", 1)
        out.row("order_violations", 0, 0.0, 0, 1)


def cmd_events(a: argparse.Namespace, out: _Out) -> None:
    an._check_mu_p(a.mu, a.p)
    e0, e1, e2 = event_decomposition(a.mu, a.p, a.lam, a.k, a.reps, a.seed)
    pred = an.p_e1_prediction(a.mu, a.lam, a.k)
    out.row("event", "frequency", "std_error", "prediction", "n")
    for name, f, ref in (("E0", e0, ""), ("E1", e1, pred), ("E2", e2, "")):
        out.row(name, f, math.sqrt(f * (1 - f) / a.reps), ref, a.reps)


def _read_fit_csv(path: str) -> list[tuple[float, float, float]]:
    try:
        fh = open(path, encoding="utf-8") if path != "-" else sys.stdin
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    rows: list[tuple[float, float, float]] = []
    header_seen = False
    with fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            cells = [c.strip() for c in s.split(",")]
            if not header_seen:
                header_seen = True
                if [c.lower() for c in cells[:3]] == ["lambda", "speed", "sigma"]:
                    continue
            if len(cells) != 3:
                raise UsageError(f"{path}:{lineno}: expected 3 fields (lambda,speed,sigma), got {len(cells)}")
            try:
                rows.append((float(cells[0]), float(cells[1]), float(cells[2])))
            except ValueError:
                raise UsageError(f"{path}:{lineno}: non-numeric field in {s!r}") from None
    if len(rows) < 3:
        raise UsageError(f"{path}: need at least 3 data rows, got {len(rows)}")
    return rows


def cmd_fit(a: argparse.Namespace, out: _Out) -> None:
    fit = fit_exponential(_read_fit_csv(a.input))
    se = fit.std_errors
    out.row("quantity", "value", "std_error", "z")
    for name, v, s in zip(("a0", "a1", "a2"), fit.coefficients, se):
        out.row(name, v, s, v / s)
    out.row("verdict", dichotomy_sign_test(fit, a.mu, a.p), "", "")
    if a.mu is not None and a.p is not None:
        out.row("expected_verdict", expected_verdict(a.mu, a.p), "", "")


# ---------------------------------------------------------------- parser


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _model_args(sp: argparse.ArgumentParser, lam_default: float = math.inf) -> None:
    sp.add_argument("--d", type=int, default=1, help="lattice dimension")
    sp.add_argument("--mu", type=float, default=1.0, help="edge refresh rate")
    sp.add_argument("--p", type=float, default=0.5, help="open probability")
    sp.add_argument("--lam", type=float, default=lam_default, help="bias (inf for totally asymmetric)")


def _common(sp: argparse.ArgumentParser, seeded: bool = True) -> None:
    if seeded:
        sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--output", "-o", default=None, help="CSV path (default stdout)")
    sp.add_argument("--config", default=None, help="key=value file; explicit flags take precedence")
    sp.add_argument("--workers", type=int, default=_default_workers())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynperc", description="Biased random walk on dynamical percolation.")
    ap.add_argument("--version", action="version", version=BUILD_ID)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("formulas", help="closed-form quantities")
    _model_args(sp, lam_default=2.0)
    _common(sp, seeded=False)
    sp.set_defaults(func=cmd_formulas)

    sp = sub.add_parser("simulate", help="plain or regeneration-mode speed runs")
    _model_args(sp)
    sp.add_argument("--mode", choices=("plain", "regen"), default="plain")
    sp.add_argument("--horizon", type=float, default=1e4)
    sp.add_argument("--blocks", type=int, default=10_000)
    sp.add_argument("--replicas", type=int, default=1)
    sp.add_argument("--batches", type=int, default=10)
    sp.add_argument("--prune", action="store_true")
    _common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("stationary", help="occupancy of the two adjacent edges")
    _model_args(sp)
    sp.add_argument("--inspections", type=int, default=1_000_000)
    sp.add_argument("--inspection-rate", type=float, default=1.0)
    sp.add_argument("--burn-in", type=float, default=100.0)
    sp.add_argument("--far-edge", type=int, default=2)
    sp.add_argument("--far-reps", type=int, default=100_000)
    _common(sp)
    sp.set_defaults(func=cmd_stationary)

    sp = sub.add_parser("coupling", help="two-walker coupled experiments")
    sp.add_argument("--kind", choices=("disparity", "gap", "mixture", "monotone"), default="disparity")
    sp.add_argument("--mu", type=float, default=1.0)
    sp.add_argument("--p", type=float, default=0.5)
    sp.add_argument("--p1", type=float, default=0.0)
    sp.add_argument("--p2", type=float, default=1.0)
    sp.add_argument("--dp", type=float, default=0.1, help="p gap for --kind monotone")
    sp.add_argument("--horizon", type=float, default=50.0)
    sp.add_argument("--reps", type=int, default=100_000)
    _common(sp)
    sp.set_defaults(func=cmd_coupling)

    sp = sub.add_parser("events", help="backward-attempt classification of k-block super-blocks")
    sp.add_argument("--mu", type=float, default=1.0)
    sp.add_argument("--p", type=float, default=0.5)
    sp.add_argument("--lam", type=float, default=3.0)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--reps", type=int, default=100_000)
    _common(sp)
    sp.set_defaults(func=cmd_events)

    sp = sub.add_parser("fit", help="fit a0 + a1 e^-lam + a2 e^-2lam to (lambda,speed,sigma) rows")
    sp.add_argument("input", help="CSV with lambda,speed,sigma rows ('-' for stdin)")
    sp.add_argument("--mu", type=float, default=None)
    sp.add_argument("--p", type=float, default=None)
    _common(sp, seeded=False)
    sp.set_defaults(func=cmd_fit)
    return ap


def read_config(path: str) -> list[str]:
    """Turn a key=value file into flags (``horizon=1e5`` becomes ``--horizon 1e5``)."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    flags: list[str] = []
    for lineno, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (x.strip() for x in s.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            flags.append(flag)
        elif value.lower() not in ("false", "no", "off"):
            flags += [flag, value]
    return flags


def _with_config(argv: list[str]) -> list[str]:
    if "--config" not in argv and not any(x.startswith("--config=") for x in argv):
        return argv
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not argv or argv[0].startswith("-"):
        return argv
    # config flags go right after the subcommand, so explicit flags win
    return [argv[0], *read_config(known.config), *argv[1:]]


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _with_config(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        out = _Out(args)
        args.func(args, out)
        out.flush()
    except AssertionError as exc:  # includes CouplingViolation
        print(f"assertion failed: {exc}", file=sys.stderr)
        return 3
    except (UsageError, ValueError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
