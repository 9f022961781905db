"""Experiment drivers: Example 1 checks, instance forging, SGD runs, delta search.

``run(spec)`` executes one experiment, writes its JSON summary (and CSV when
asked), and returns an exit status: 0 ok, 1 an acceptance check failed,
2 invalid input, 3 solver failure.
"""

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import sdp
from .lmi import (DegenerateGeometry, ForgeError, ForgeResult, build_operators, error_is_degenerate, forge,
                  orthonormal_basis, solve_delta_lb, solve_delta_ub)
from .sensing import (EXAMPLE1_SPURIOUS, InstanceError, SensingInstance, ShapeError, certify, example1_instance,
                      gradient, hessian, objective_value, rip_full)
from .sgd import SgdConfig, failure_rate_experiment, gamma_sweep, histogram_modes

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ASSERT, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3
KINDS = ("verify_example1", "forge", "sgd_histogram", "gamma_sweep", "delta_search")
MAX_FORGE_N = 16
MAX_SEARCH_N = 12
EXAMPLE1_BAND = (0.08, 0.16)

__all__ = ["ExperimentSpec", "DeltaSearchReport", "example1_instance", "forge_instance", "delta_search",
           "verify_example1", "load_instance", "run"]


class InvalidSpec(ValueError):
    pass


@dataclass
class ExperimentSpec:
    kind: str
    n: int = 12
    r: int = 1
    seed: int = 0
    recipe: str = "bad"
    normalize: str = "lambda_min"
    instance: str = None
    xloc: str = None
    trials: int = 10000
    steps: int = 1000
    lr: float = 1e-3
    momentum: float = 0.9
    gammas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    mode: str = None
    samples: int = 50
    time_budget: float = None
    out: str = None
    csv: str = None
    hist_csv: str = None

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown experiment kind {self.kind!r}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")
        if self.kind == "forge":
            _check_dims(self.n, self.r, MAX_FORGE_N)
            if self.recipe not in ("good", "bad"):
                raise InvalidSpec(f"unknown recipe {self.recipe!r}")
            if self.recipe == "good" and self.r != 1:
                raise InvalidSpec("the good recipe is rank 1")
            if self.normalize not in ("lambda_min", "none"):
                raise InvalidSpec(f"unknown normalization {self.normalize!r}")
        if self.kind == "delta_search":
            _check_dims(self.n, self.r, MAX_SEARCH_N)
            if self.samples < 1:
                raise InvalidSpec("samples must be positive")
            if self.time_budget is not None and self.time_budget <= 0:
                raise InvalidSpec("time budget must be positive")
        if self.kind in ("sgd_histogram", "gamma_sweep"):
            if self.trials < 1 or self.steps < 1:
                raise InvalidSpec("trials and steps must be positive")
            if not (self.lr > 0 and 0 <= self.momentum < 1):
                raise InvalidSpec("need lr > 0 and momentum in [0, 1)")
            if self.mode not in (None, "success_below", "failure_above"):
                raise InvalidSpec(f"unknown mode {self.mode!r}")
        if self.kind == "gamma_sweep":
            if self.instance is None:
                raise InvalidSpec("gamma_sweep needs --instance")
            if not self.gammas or any(not 0.0 <= g <= 1.0 for g in self.gammas):
                raise InvalidSpec("gammas must lie in [0, 1]")
        return self


def _check_dims(n, r, nmax):
    if not 1 <= r <= 2:
        raise InvalidSpec("rank r must be 1 or 2")
    if n > nmax:
        raise InvalidSpec(f"dimension exceeds supported range (n = {n} > {nmax})")
    if n < 2 or n < r:
        raise InvalidSpec("need n >= max(2, r)")


@dataclass
class DeltaSearchReport:
    n: int
    r: int
    seed: int
    samples: list = field(default_factory=list)
    skipped: int = 0
    wall_clock: float = 0.0
    solver_tol: float = sdp.DEFAULT_TOL

    @property
    def min_delta_ub(self):
        return min((s["delta_ub"] for s in self.samples), default=float("nan"))

    @property
    def min_delta_lb(self):
        return min((s["delta_lb"] for s in self.samples), default=float("nan"))

    def consistent(self):
        return all(s["delta_lb"] <= s["delta_ub"] + 2 * self.solver_tol for s in self.samples)

    def to_dict(self):
        return {"n": self.n, "r": self.r, "seed": self.seed, "samples": self.samples,
                "min_delta_ub": self.min_delta_ub, "min_delta_lb": self.min_delta_lb,
                "skipped": self.skipped, "wall_clock": self.wall_clock, "solver_tol": self.solver_tol}

    @classmethod
    def from_dict(cls, doc):
        rep = cls(int(doc["n"]), int(doc["r"]), int(doc["seed"]), list(doc["samples"]), int(doc["skipped"]),
                  float(doc["wall_clock"]), float(doc.get("solver_tol", sdp.DEFAULT_TOL)))
        for key in ("min_delta_ub", "min_delta_lb"):
            if rep.samples and not np.isclose(getattr(rep, key), doc[key], rtol=0, atol=0):
                raise ValueError(f"{key} does not match the samples")
        return rep


def sample_pair(rng, n, r, recipe):
    """(x, z) for the bad (rho^2 ~ 4) or good (rho^2 = 1/2, x orthogonal to z) recipe."""
    if recipe == "bad":
        x = rng.standard_normal((n, r))
        z = rng.standard_normal((n, r))
        z = z / np.sqrt(np.linalg.norm(z @ z.T))
        x = x * np.sqrt(4.0 / np.linalg.norm(x @ x.T))
        return x, z
    if recipe == "good":
        x = rng.standard_normal((n, 1))
        z = rng.standard_normal((n, 1))
        z = z / np.linalg.norm(z)
        x = x - z * (z.T @ x)
        x = x * np.sqrt(0.5) / np.linalg.norm(x)
        return x, z
    raise ValueError(f"unknown recipe {recipe!r}")


def normalize_lambda_min(res):
    """Rescale so the smallest eigenvalue of the kernel is 1, as in Example 1."""
    lo = float(res.kernel.eigenvalues[0])
    if lo <= 0:
        raise ForgeError("kernel is singular; cannot normalize")
    return res.rescaled(1.0 / np.sqrt(lo))


def forge_instance(n, r, seed, recipe="bad", normalize="lambda_min", mu=None):
    """Sample (x, z) per the recipe, forge an instance with x spurious, certify it."""
    ExperimentSpec("forge", n=n, r=r, seed=seed, recipe=recipe, normalize=normalize).validate()
    rng = np.random.default_rng(seed)
    x, z = sample_pair(rng, n, r, recipe)
    res = forge(x, z, mu=mu)
    if normalize == "lambda_min":
        res = normalize_lambda_min(res)
    if res.certificate.verdict != "strict_local_min":
        raise ForgeError(f"forged point certified as {res.certificate.verdict}")
    if abs(rip_full(res.instance).delta_full - res.delta_n) > 1e-6:
        raise ForgeError("recovered instance does not have the solved RIP constant")
    return res


def delta_search(n, r, samples=50, seed=0, time_budget=None, tol=sdp.DEFAULT_TOL):
    """delta_ub (mu = 0) and delta_lb (U = orthonormalized [x, z]) over Gaussian samples."""
    _check_dims(n, r, MAX_SEARCH_N)
    rng = np.random.default_rng(seed)
    rep = DeltaSearchReport(n, r, seed, solver_tol=tol)
    t0 = time.perf_counter()
    for k in range(samples):
        if time_budget is not None and time.perf_counter() - t0 > time_budget:
            log.info("time budget reached after %d samples", k)
            break
        x = rng.standard_normal((n, r))
        z = rng.standard_normal((n, r))
        if not _add_sample(rep, k, x, z, tol):
            rep.skipped += 1
    rep.wall_clock = time.perf_counter() - t0
    return rep


def _add_sample(rep, k, x, z, tol):
    try:
        ops = build_operators(x, z)
        if error_is_degenerate(ops):
            raise DegenerateGeometry("x x^T = z z^T")
        U = orthonormal_basis(np.hstack([ops.x, ops.z]))
    except DegenerateGeometry as exc:
        log.warning("sample %d skipped: degenerate geometry (%s)", k, exc)
        return False
    ub, sol_ub = solve_delta_ub(ops, 0.0, tol=tol)
    lb, sol_lb = solve_delta_lb(ops, U, tol=tol)
    if sol_ub.status != "optimal" or sol_lb.status != "optimal":
        log.warning("sample %d skipped: solver status %s / %s", k, sol_ub.status, sol_lb.status)
        return False
    rep.samples.append({"index": k, "x": ops.x.reshape(-1, order="F").tolist(),
                        "z": ops.z.reshape(-1, order="F").tolist(), "delta_ub": ub, "delta_lb": lb})
    return True


def verify_example1(tol=1e-10):
    """Example 1 values and whether each matches to ``tol``."""
    inst = example1_instance()
    x = EXAMPLE1_SPURIOUS
    f = objective_value(inst, x)
    g = gradient(inst, x)
    H = hessian(inst, x)
    rip = rip_full(inst)
    cert = certify(inst, x)
    cert_z = certify(inst, inst.z)
    checks = {
        "objective": abs(f - 1.5) <= tol,
        "gradient": float(np.max(np.abs(g))) <= tol,
        "hessian": float(np.max(np.abs(H - np.diag([0.0, 8.0])))) <= tol,
        "rip_spectrum": abs(rip.lambda_min - 1.0) <= tol and abs(rip.lambda_max - 3.0) <= tol,
        "delta": abs(rip.delta_full - 0.5) <= tol,
        "spurious_verdict": cert.verdict == "second_order_critical",
        "ground_truth_verdict": cert_z.verdict == "global_min",
    }
    checks = {k: bool(v) for k, v in checks.items()}
    return {"objective": f, "gradient": g.tolist(), "hessian": H.tolist(), "rip": rip.to_dict(),
            "certificate": cert.to_dict(), "ground_truth_certificate": cert_z.to_dict(), "checks": checks,
            "passed": all(checks.values())}


def load_instance(path):
    """A SensingInstance, or a forge bundle (instance plus x). Returns (instance, x or None)."""
    doc = json.loads(Path(path).read_text())
    if "instance" in doc:
        res = ForgeResult.from_dict(doc)
        return res.instance, res.x
    return SensingInstance.from_dict(doc), None


def _load_point(path, inst):
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc["x"]
    return np.asarray(doc, dtype=float).reshape((inst.n, inst.r), order="F")


def _write_json(path, doc):
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=1))


def _run_verify(spec):
    doc = verify_example1()
    _write_json(spec.out, doc)
    return (EXIT_OK if doc["passed"] else EXIT_ASSERT), doc


def _run_forge(spec):
    res = forge_instance(spec.n, spec.r, spec.seed, spec.recipe, spec.normalize)
    doc = res.to_dict()
    _write_json(spec.out, doc)
    return EXIT_OK, {"eta": res.eta, "delta_n": res.delta_n, "verdict": res.certificate.verdict,
                     "m": res.instance.m}


def _run_histogram(spec):
    if spec.instance is None:
        inst, is_example1 = example1_instance(), True
    else:
        inst, _ = load_instance(spec.instance)
        is_example1 = False
    cfg = SgdConfig(spec.lr, spec.momentum, spec.steps, spec.seed)
    summ = failure_rate_experiment(inst, cfg, spec.trials, spec.mode or "failure_above", csv_path=spec.csv)
    doc = summ.to_dict()
    doc["modes"] = histogram_modes(summ.hist_edges, summ.hist_counts)
    if spec.hist_csv is not None:
        with open(spec.hist_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(summ.hist_edges[:-1], summ.hist_edges[1:], summ.hist_counts):
                w.writerow([float(lo), float(hi), int(c)])
    status = EXIT_OK
    if is_example1:
        lo, hi = EXAMPLE1_BAND
        doc["check_failure_band"] = bool(lo <= summ.failure_rate <= hi)
        if not doc["check_failure_band"]:
            status = EXIT_ASSERT
    _write_json(spec.out, doc)
    return status, {"failure_rate": summ.failure_rate, "half_width": summ.half_width, "modes": doc["modes"]}


def _run_sweep(spec):
    inst, x_loc = load_instance(spec.instance)
    if spec.xloc is not None:
        x_loc = _load_point(spec.xloc, inst)
    if x_loc is None:
        raise InvalidSpec("no x_loc: pass --xloc or a forge bundle")
    cfg = SgdConfig(spec.lr, spec.momentum, spec.steps, spec.seed)
    summ = gamma_sweep(inst, x_loc, spec.gammas, cfg, spec.trials, spec.mode or "success_below", csv_path=spec.csv)
    doc = summ.to_dict()
    _write_json(spec.out, doc)
    return EXIT_OK, {"bands": doc["bands"]}


def _run_search(spec):
    rep = delta_search(spec.n, spec.r, spec.samples, spec.seed, spec.time_budget)
    doc = rep.to_dict()
    _write_json(spec.out, doc)
    status = EXIT_OK if rep.consistent() else EXIT_ASSERT
    return status, {"min_delta_ub": rep.min_delta_ub, "min_delta_lb": rep.min_delta_lb,
                    "completed": len(rep.samples), "skipped": rep.skipped}


_RUNNERS = {"verify_example1": _run_verify, "forge": _run_forge, "sgd_histogram": _run_histogram,
            "gamma_sweep": _run_sweep, "delta_search": _run_search}


def run(spec):
    """Execute an experiment. Returns (exit_status, short result dict)."""
    try:
        spec.validate()
        return _RUNNERS[spec.kind](spec)
    except (InvalidSpec, InstanceError, ShapeError, DegenerateGeometry, FileNotFoundError,
            json.JSONDecodeError, KeyError) as exc:
        return EXIT_INPUT, {"error": type(exc).__name__, "message": str(exc)}
    except (ForgeError, sdp.SdpError) as exc:
        return EXIT_SOLVER, {"error": type(exc).__name__, "message": str(exc)}
    except ValueError as exc:
        return EXIT_INPUT, {"error": type(exc).__name__, "message": str(exc)}


def spec_dict(spec):
    return asdict(spec)
