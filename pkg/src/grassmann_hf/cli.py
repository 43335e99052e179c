"""Command-line driver: load a GFI file, pick a starting guess, run one
optimizer and write a CSV trace and a key-value report.

Exit codes: 0 converged, 1 bad input, 2 iteration limit, 3 numerical failure.
"""
import argparse
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines, optim
from .errors import GrassmannHFError, ShapeError, UsageError
from .gfi import load_integrals
from .hf import HFCost, IntegralSet, SpinPair, core_orbitals, energy
from .manifold import GrassmannPoint, ProductPoint, random_point, reorthonormalize, riemannian_gradient
from .optim import OptTrace, Status, StopCriteria

logger = logging.getLogger(__name__)

ALGORITHMS = ("rgd", "rnr", "rcg-fr", "rcg-pr", "nrlm", "scf", "hybrid")
DEFAULT_STEP = {"rgd": 0.02, "rcg-fr": 0.01, "rcg-pr": 0.07, "hybrid": 0.01}
DEFAULT_MAX_ITER = {"rgd": 1000, "rcg-fr": 300, "rcg-pr": 300, "hybrid": 300,
                    "rnr": 50, "nrlm": 50, "scf": 100}
EXIT_CODES = {Status.CONVERGED_GRAD: 0, Status.CONVERGED_VAL: 0,
              Status.MAX_ITER: 2, Status.NUMERICAL_FAILURE: 3}
EXIT_BAD_INPUT = 1


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "hybrid"
    step_size: Optional[float] = None
    max_iter: Optional[int] = None
    tol_grad: float = 1e-8
    tol_val: float = 1e-10
    switch_grad_tol: float = 1e-3
    diis_window: int = 2
    guess: str = "core"
    seed: int = 0
    trace_path: Optional[str] = None
    report_path: Optional[str] = None
    orbitals_path: Optional[str] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        if self.step_size is not None and not self.step_size > 0:
            raise UsageError("step size must be positive")
        if self.max_iter is not None and self.max_iter <= 0:
            raise UsageError("max_iter must be positive")
        if not (self.tol_grad > 0 and self.tol_val > 0):
            raise UsageError("tolerances must be positive")
        if not self.switch_grad_tol > self.tol_grad:
            raise UsageError("switch_grad_tol must exceed tol_grad")
        if self.diis_window < 0:
            raise UsageError("diis_window must be non-negative")
        if self.guess not in ("core", "random") and not self.guess.startswith("file:"):
            raise UsageError(f"guess must be core, random or file:<path>, got {self.guess!r}")

    @property
    def effective_step(self):
        return self.step_size if self.step_size is not None else DEFAULT_STEP.get(self.algorithm)

    @property
    def effective_max_iter(self):
        return self.max_iter if self.max_iter is not None else DEFAULT_MAX_ITER[self.algorithm]

    def criteria(self):
        return StopCriteria(self.effective_max_iter, self.tol_grad, self.tol_val)


@dataclass
class RunReport:
    algorithm: str
    status: str
    final_energy: float
    electronic_energy: float
    iterations: int
    final_grad_norm: float
    riemannian_grad_norm: float
    switch_iteration: Optional[int]
    wall_time: float
    message: str = ""
    config: dict = field(default_factory=dict)

    @property
    def exit_code(self):
        return EXIT_CODES[Status(self.status)]

    def to_text(self):
        keys = ("algorithm", "status", "final_energy", "electronic_energy", "iterations",
                "final_grad_norm", "riemannian_grad_norm", "switch_iteration", "wall_time", "message")
        lines = [f"{k} = {_fmt(getattr(self, k))}" for k in keys]
        lines += [f"config.{k} = {_fmt(v)}" for k, v in self.config.items()]
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_trace(path, trace: OptTrace):
    """CSV trace; wall-clock times are left out so reruns are byte-identical."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iter,energy,grad_norm,step_norm,phase\n")
        for r in trace.records:
            fh.write(f"{r.k},{r.energy!r},{r.grad_norm!r},{r.step_norm!r},{r.phase}\n")


def make_guess(ints: IntegralSet, mode="core", seed=0) -> SpinPair:
    metric = ints.metric
    if mode == "core":
        _, V = core_orbitals(ints)
        return SpinPair(V[:, :ints.n_alpha].copy(), V[:, :ints.n_beta].copy())
    if mode == "random":
        Ca = random_point(metric, ints.n_alpha, [seed, 0]).C
        Cb = random_point(metric, ints.n_beta, [seed, 1]).C
        return SpinPair(Ca, Cb)
    if mode.startswith("file:"):
        path = mode[len("file:"):]
        with np.load(path) as data:
            try:
                Ca, Cb = data["C_alpha"], data["C_beta"]
            except KeyError as exc:
                raise UsageError(f"{path}: guess file needs arrays C_alpha and C_beta") from exc
        for name, C, n in (("C_alpha", Ca, ints.n_alpha), ("C_beta", Cb, ints.n_beta)):
            if C.shape != (ints.d, n):
                raise ShapeError(f"{path}: {name} has shape {C.shape}, expected {(ints.d, n)}")
        pts = [reorthonormalize(GrassmannPoint(metric, C, check=False)) for C in (Ca, Cb)]
        return SpinPair(pts[0].C, pts[1].C)
    raise UsageError(f"unknown guess mode {mode!r}")


def _riemannian_norm(ints, pair):
    cost = HFCost(ints)
    total = 0.0
    for C, G in zip(pair, cost.euclidean_gradient(*pair)):
        eta = riemannian_gradient(GrassmannPoint(ints.metric, C, check=False), G).eta
        total += float(np.sum(eta * (ints.S @ eta)))
    return math.sqrt(max(total, 0.0))


def run(config: RunConfig, ints: IntegralSet):
    """Run one optimization; returns ``(report, pair, trace)``."""
    t0 = time.perf_counter()
    cost = HFCost(ints)
    guess = make_guess(ints, config.guess, config.seed)
    metric = ints.metric
    x0 = ProductPoint(GrassmannPoint(metric, guess.C_alpha), GrassmannPoint(metric, guess.C_beta))
    crit = config.criteria()
    alg = config.algorithm
    logger.info("running %s (d=%d, na=%d, nb=%d)", alg, ints.d, ints.n_alpha, ints.n_beta)
    if alg == "rgd":
        x, trace = optim.rgd(cost, x0, config.effective_step, crit)
    elif alg in ("rcg-fr", "rcg-pr"):
        x, trace = optim.rcg(cost, x0, config.effective_step, alg[-2:].upper(), crit)
    elif alg == "rnr":
        x, trace = optim.rnr(cost, x0, crit)
    elif alg == "hybrid":
        cfg = optim.HybridConfig(cg_step=config.effective_step, switch_grad_tol=config.switch_grad_tol,
                                 crit=crit, nr_max_iter=DEFAULT_MAX_ITER["rnr"])
        x, trace = optim.hybrid(cost, x0, cfg)
    elif alg == "nrlm":
        pair, _, trace = baselines.nrlm(cost, tuple(guess), crit=crit)
        x = None
    else:
        pair, trace = baselines.scf_diis(ints, guess, config.diis_window, crit)
        x = None
    if x is not None:
        pair = SpinPair(x.first.C, x.second.C)
    elif trace.status is not Status.NUMERICAL_FAILURE:
        # NRLM iterates are only feasible to the solver tolerance
        pair = SpinPair(*(reorthonormalize(GrassmannPoint(metric, C, check=False)).C for C in pair))
    E = energy(pair, ints)
    report = RunReport(
        algorithm=alg,
        status=trace.status.value,
        final_energy=E,
        electronic_energy=E - ints.e_nuc,
        iterations=trace.iterations,
        final_grad_norm=trace.final.grad_norm,
        riemannian_grad_norm=_riemannian_norm(ints, pair) if math.isfinite(E) else math.nan,
        switch_iteration=trace.switch_iteration,
        wall_time=time.perf_counter() - t0,
        message=trace.message,
        config={k: v for k, v in asdict(config).items()
                if k not in ("trace_path", "report_path", "orbitals_path")},
    )
    report.config["step_size"] = config.effective_step
    report.config["max_iter"] = config.effective_max_iter
    if config.trace_path:
        write_trace(config.trace_path, trace)
    if config.report_path:
        Path(config.report_path).write_text(report.to_text(), encoding="utf-8")
    if config.orbitals_path:
        np.savez(config.orbitals_path, C_alpha=pair.C_alpha, C_beta=pair.C_beta)
    return report, pair, trace


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse's own exit code 2 would collide with the iteration-limit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_BAD_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="grassmann-hf", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("integrals", nargs="?", help="GFI integral file")
    p.add_argument("--algorithm", default="hybrid", choices=ALGORITHMS)
    p.add_argument("--step-size", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol-grad", type=float, default=1e-8)
    p.add_argument("--tol-val", type=float, default=1e-10)
    p.add_argument("--switch-grad-tol", type=float, default=1e-3)
    p.add_argument("--diis-window", type=int, default=2)
    p.add_argument("--guess", default="core", help="core, random or file:<path.npz>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="CSV trace output path")
    p.add_argument("--report", help="key-value report output path")
    p.add_argument("--save-orbitals", help="write final orbitals as .npz")
    p.add_argument("--batch", help="run every *.gfi file in this directory")
    p.add_argument("--workers", type=int, default=None, help="batch worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config_from_args(args, **overrides):
    cfg = RunConfig(algorithm=args.algorithm, step_size=args.step_size, max_iter=args.max_iter,
                    tol_grad=args.tol_grad, tol_val=args.tol_val,
                    switch_grad_tol=args.switch_grad_tol, diis_window=args.diis_window,
                    guess=args.guess, seed=args.seed, trace_path=args.trace,
                    report_path=args.report, orbitals_path=args.save_orbitals)
    return replace(cfg, **overrides)


def _run_file(path, cfg: RunConfig):
    try:
        report, _, _ = run(cfg, load_integrals(path))
    except GrassmannHFError as exc:
        return str(path), EXIT_BAD_INPUT, f"error: {exc}"
    return str(path), report.exit_code, f"{report.status} E={report.final_energy!r} iter={report.iterations}"


def _run_batch(args):
    folder = Path(args.batch)
    files = sorted(folder.glob("*.gfi"))
    if not files:
        print(f"no .gfi files in {folder}", file=sys.stderr)
        return EXIT_BAD_INPUT
    jobs = []
    for f in files:
        jobs.append(_config_from_args(
            args,
            trace_path=str(f.with_suffix(".trace.csv")),
            report_path=str(f.with_suffix(".report.txt")),
            orbitals_path=str(f.with_suffix(".orbitals.npz")) if args.save_orbitals else None))
    worst = 0
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        for path, code, summary in pool.map(_run_file, files, jobs):
            print(f"{path}: {summary}")
            worst = max(worst, code)
    return worst


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.batch:
            if args.integrals or args.trace or args.report:
                raise UsageError("--batch writes per-file outputs; drop the file argument, --trace and --report")
            _config_from_args(args)
            return _run_batch(args)
        if not args.integrals:
            raise UsageError("an integral file (or --batch DIR) is required")
        cfg = _config_from_args(args)
        report, _, _ = run(cfg, load_integrals(args.integrals))
    except (GrassmannHFError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    sys.stdout.write(report.to_text())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
