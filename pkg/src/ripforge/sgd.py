"""Stochastic gradient descent with heavy-ball momentum on sensing instances.

Each step samples one measurement uniformly with replacement and moves along
its gradient ``g = 2 r_i (A_i + A_i^T) x``. Every trial owns a Philox stream
keyed by ``(master_seed, trial_index)``: the stream first yields the Gaussian
initialization, then the measurement indices. Trials are run in vectorized
chunks, and a trial's result does not depend on the chunk it lands in.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sensing import _as_factor, certify

SUCCESS_TOL = 0.01
FAILURE_TOL = 0.5
DIVERGENCE_FACTOR = 1e6
HIST_BINS = 100
CHUNK = 2048

_GOOD_VERDICTS = ("strict_local_min", "second_order_critical", "global_min")


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    momentum: float = 0.9
    steps: int = 1000
    master_seed: int = 0
    init_scheme: str = "gaussian"
    gamma: float = 1.0
    x_loc: np.ndarray = None
    batch_size: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if int(self.steps) != self.steps or self.steps <= 0:
            raise ValueError("steps must be a positive integer")
        if self.batch_size != 1:
            raise ValueError("only batch_size = 1 is supported")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.init_scheme not in ("gaussian", "interpolated"):
            raise ValueError(f"unknown init_scheme {self.init_scheme!r}")
        if self.init_scheme == "interpolated":
            if self.x_loc is None:
                raise ValueError("interpolated init needs x_loc")
            if not 0.0 <= self.gamma <= 1.0:
                raise ValueError("gamma must lie in [0, 1]")
            object.__setattr__(self, "x_loc", _as_factor(self.x_loc))

    def with_gamma(self, gamma, x_loc=None):
        x_loc = self.x_loc if x_loc is None else x_loc
        return SgdConfig(self.learning_rate, self.momentum, self.steps, self.master_seed,
                         "interpolated", float(gamma), x_loc)

    def to_dict(self):
        doc = {"learning_rate": self.learning_rate, "momentum": self.momentum, "steps": int(self.steps),
               "master_seed": int(self.master_seed), "init_scheme": self.init_scheme, "batch_size": 1}
        if self.init_scheme == "interpolated":
            doc["gamma"] = self.gamma
        return doc


@dataclass(frozen=True, eq=False)
class TrialRecord:
    trial_index: int
    final_x: np.ndarray
    final_abs_error: float
    final_rel_error: float
    succeeded: bool
    diverged: bool = False


def trial_rng(master_seed, trial_index):
    """Counter-based generator for one trial."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(trial_index)])))


def _draws(inst, config, trial_indices):
    n, r = inst.n, inst.r
    W = np.empty((len(trial_indices), n, r))
    idx = np.empty((len(trial_indices), int(config.steps)), dtype=np.int64)
    for k, t in enumerate(trial_indices):
        g = trial_rng(config.master_seed, t)
        W[k] = g.standard_normal((n, r))
        idx[k] = g.integers(0, inst.m, size=int(config.steps))
    return W, idx


def _run_chunk(inst, config, trial_indices, x0=None):
    W, idx = _draws(inst, config, trial_indices)
    if x0 is not None:
        x = np.broadcast_to(_as_factor(x0, inst.n, inst.r), W.shape).copy()
    elif config.init_scheme == "interpolated":
        x = config.gamma * W + (1.0 - config.gamma) * config.x_loc
    else:
        x = W
    A, b = np.asarray(inst.A), np.asarray(inst.b)
    v = np.zeros_like(x)
    alpha, beta = config.learning_rate, config.momentum
    limit = (DIVERGENCE_FACTOR * np.linalg.norm(inst.z)) ** 2
    diverged = np.zeros(len(trial_indices), dtype=bool)
    for s in range(int(config.steps)):
        i = idx[:, s]
        Ax = A[i] @ x
        res = np.sum(Ax * x, axis=(1, 2)) - b[i]
        g = 4.0 * res[:, None, None] * Ax
        v = beta * v - alpha * g
        x_new = x + v
        nrm = np.sum(x_new * x_new, axis=(1, 2))
        bad = ~(nrm <= limit)
        if bad.any():
            diverged |= bad
        # frozen trials keep their last finite iterate
        x = np.where(diverged[:, None, None], x, x_new)
        v = np.where(diverged[:, None, None], 0.0, v)
    return x, diverged


def _errors(inst, x, diverged):
    Z = inst.Z
    nz = np.linalg.norm(Z)
    D = x @ x.transpose(0, 2, 1) - Z
    abs_err = np.sqrt(np.sum(D * D, axis=(1, 2)))
    abs_err = np.where(diverged, np.inf, abs_err)
    return abs_err, abs_err / nz


def classify(record, mode="failure_above"):
    """True for a success.

    ``success_below``: success iff rel_error < 0.01. ``failure_above``: failure
    iff rel_error > 0.5; records between the two thresholds are counted as
    failures in both modes. A mode may be a name or a ``(name, threshold)``
    pair.
    """
    name, thr = _mode(mode)
    rel = record if np.isscalar(record) else record.final_rel_error
    if not np.isfinite(rel):
        return False
    if name == "success_below":
        return bool(rel < thr)
    if rel > thr:
        return False
    return bool(rel < SUCCESS_TOL)


def _mode(mode):
    if isinstance(mode, str):
        name, thr = mode, None
    else:
        name, thr = mode
    if name == "success_below":
        return name, SUCCESS_TOL if thr is None else float(thr)
    if name == "failure_above":
        return name, FAILURE_TOL if thr is None else float(thr)
    raise ValueError(f"unknown classification mode {mode!r}")


def _classify_array(rel, mode):
    name, thr = _mode(mode)
    ok = np.isfinite(rel) & (rel < (thr if name == "success_below" else SUCCESS_TOL))
    if name == "failure_above":
        ok &= ~(rel > thr)
    return ok


def run_trials(inst, config, trials, mode="failure_above", start=0, x0=None, chunk=CHUNK):
    """Final iterates and errors for trials start..start+trials-1 (arrays, not records)."""
    xs, absr, rels, divs = [], [], [], []
    indices = np.arange(start, start + trials)
    for lo in range(0, trials, chunk):
        ti = indices[lo:lo + chunk]
        x, dv = _run_chunk(inst, config, ti, x0)
        a, rl = _errors(inst, x, dv)
        xs.append(x)
        absr.append(a)
        rels.append(rl)
        divs.append(dv)
    if not xs:
        shape = (0, inst.n, inst.r)
        return indices, np.zeros(shape), np.zeros(0), np.zeros(0), np.zeros(0, bool), np.zeros(0, bool)
    x, a, rl, dv = np.concatenate(xs), np.concatenate(absr), np.concatenate(rels), np.concatenate(divs)
    return indices, x, a, rl, dv, _classify_array(rl, mode)


def sgd_run(inst, config, trial_index, mode="failure_above", x0=None):
    """One trial; identical to the same trial inside any batch."""
    _, x, a, rl, dv, ok = run_trials(inst, config, 1, mode, start=trial_index, x0=x0)
    return TrialRecord(int(trial_index), x[0], float(a[0]), float(rl[0]), bool(ok[0]), bool(dv[0]))


def binomial_half_width(p, trials):
    return 3.0 * np.sqrt(p * (1.0 - p) / trials) if trials else 0.0


@dataclass
class ExperimentSummary:
    trials: int
    failure_count: int
    mode: str = "failure_above"
    diverged_count: int = 0
    between_count: int = 0
    hist_edges: np.ndarray = None
    hist_counts: np.ndarray = None
    bands: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def failure_rate(self):
        return self.failure_count / self.trials if self.trials else 0.0

    @property
    def half_width(self):
        return binomial_half_width(self.failure_rate, self.trials)

    def to_dict(self):
        doc = {"trials": self.trials, "failure_count": self.failure_count, "failure_rate": self.failure_rate,
               "half_width_3sigma": self.half_width, "mode": self.mode, "diverged_count": self.diverged_count,
               "between_count": self.between_count, "config": self.config}
        if self.hist_counts is not None:
            doc["histogram"] = {"edges": np.asarray(self.hist_edges).tolist(),
                                "counts": np.asarray(self.hist_counts).astype(int).tolist()}
        if self.bands:
            doc["bands"] = self.bands
        return doc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def histogram(abs_err, z_frob, bins=HIST_BINS):
    """Counts on [0, 2 |Z|_F]; larger (or infinite) errors land in the last bin."""
    edges = np.linspace(0.0, 2.0 * z_frob, bins + 1)
    clipped = np.minimum(np.nan_to_num(abs_err, nan=np.inf, posinf=np.inf), edges[-1])
    counts, _ = np.histogram(clipped, bins=edges)
    return edges, counts


def histogram_modes(edges, counts, k=2):
    """Centres of the k tallest local maxima of a histogram."""
    c = np.asarray(counts, dtype=float)
    padded = np.concatenate([[-1.0], c, [-1.0]])
    peaks = [i for i in range(len(c)) if c[i] > 0 and padded[i + 1] >= padded[i] and padded[i + 1] > padded[i + 2]]
    peaks.sort(key=lambda i: -c[i])
    centres = 0.5 * (edges[:-1] + edges[1:])
    return sorted(float(centres[i]) for i in peaks[:k])


def _csv_rows(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def failure_rate_experiment(inst, config, trials, mode="failure_above", csv_path=None):
    """Gaussian-initialized trials, histogram of final absolute error, failure rate."""
    if config.init_scheme != "gaussian":
        raise ValueError("failure_rate_experiment uses Gaussian initialization")
    idx, _, a, rl, dv, ok = run_trials(inst, config, int(trials), mode)
    edges, counts = histogram(a, float(np.linalg.norm(inst.Z)))
    between = int(np.sum((rl >= SUCCESS_TOL) & (rl <= FAILURE_TOL)))
    if csv_path is not None:
        _csv_rows(csv_path, zip(idx.tolist(), a.tolist(), rl.tolist(), ok.tolist()),
                  ["trial_index", "final_abs_error", "final_rel_error", "succeeded"])
    return ExperimentSummary(int(trials), int(np.sum(~ok)), _mode(mode)[0], int(dv.sum()), between,
                             edges, counts, [], config.to_dict())


def quantile_band(values):
    v = np.asarray(values, dtype=float)
    # interpolating towards an infinite (diverged) value would give nan
    big = np.finfo(float).max / 4
    q = np.quantile(np.minimum(np.nan_to_num(v, nan=np.inf), big), [0.0, 0.05, 0.5, 0.95, 1.0])
    q = np.where(q >= big, np.inf, q)
    return dict(zip(("min", "q05", "median", "q95", "max"), map(float, q)))


def gamma_sweep(inst, x_loc, gammas, config, trials_per_gamma, mode="success_below", csv_path=None,
                check=True):
    """Quantile bands of the final relative error for x = gamma w + (1 - gamma) x_loc.

    Every gamma reuses trial indices 0..trials-1, so the draws of w are shared
    across the sweep.
    """
    x_loc = _as_factor(x_loc, inst.n, inst.r)
    if check:
        verdict = certify(inst, x_loc).verdict
        if verdict not in _GOOD_VERDICTS:
            raise ValueError(f"x_loc is not a second-order critical point (verdict {verdict})")
    bands, rows = [], []
    total = fails = divs = between = 0
    for gam in gammas:
        cfg = config.with_gamma(gam, x_loc)
        idx, _, a, rl, dv, ok = run_trials(inst, cfg, int(trials_per_gamma), mode)
        band = quantile_band(rl)
        band.update(gamma=float(gam), failure_count=int(np.sum(~ok)),
                    failure_rate=float(np.mean(~ok)) if len(ok) else 0.0, trials=int(trials_per_gamma))
        bands.append(band)
        total += len(ok)
        fails += int(np.sum(~ok))
        divs += int(dv.sum())
        between += int(np.sum((rl >= SUCCESS_TOL) & (rl <= FAILURE_TOL)))
        rows.extend(zip([float(gam)] * len(idx), idx.tolist(), a.tolist(), rl.tolist(), ok.tolist()))
    if csv_path is not None:
        _csv_rows(csv_path, rows, ["gamma", "trial_index", "final_abs_error", "final_rel_error", "succeeded"])
    cfg = config.to_dict()
    cfg.pop("gamma", None)
    return ExperimentSummary(total, fails, _mode(mode)[0], divs, between, None, None, bands, cfg)
