"""Monte Carlo experiment runner, FLOP accounting and CSV persistence.

Randomness: trial ``t`` of an experiment with seed ``s`` draws its channel,
activity, codeword indices and unit-variance noise from
``default_rng([s, t])`` and its channel-error matrix from
``default_rng([s, t, 1])``.  Every SNR point and every channel-error level
reuses these draws (noise is scaled, the error matrix is scaled), so all
curves are paired across detectors, SNR and error level.  Trials are
processed in fixed-size chunks, which keeps the output independent of the
number of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import RankDeficientError, _bsp_core, oracle_lse
from .detect import DetectorConfig, detect
from .dynamic import CASE_LABELS, MODES, detect_frames
from .model import (
    Codebook,
    SystemConfig,
    assemble_channel_matrix,
    draw_channel,
    example_codebook,
    generate_frame,
    load_codebook,
    noise_variance,
    structural_mask,
)
from .solvers import AdmmConfig, solve_batch, write_trace
from .support import demap_batch

__all__ = [
    "DETECTORS",
    "ExperimentSpec",
    "MetricRow",
    "TrialData",
    "run_experiment",
    "run_cee_sweep",
    "run_convergence_trace",
    "convergence_study",
    "count_flops",
    "alg1_flops",
    "bsp_iteration_flops",
    "draw_trials",
    "parse_config",
    "load_config",
    "write_rows",
    "read_rows",
    "summarize_records",
]

DETECTORS = ("oracle_lse", "oracle_admm", "fsj_admm_scma", "fsj_admm_dcma", "bsp", "dynamic_alg2")
CHUNK = 200
SER_NOTE = ("# ser: symbol errors / symbols of truly active users (a missed user counts all its "
            "symbols as errors, false alarms do not enter ser); aer: (missed + false-alarm users) / J "
            "per slot; noise variance = 10^(-snr_db/10)")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one Monte Carlo sweep.

    ``detector`` may name several detectors separated by commas; they are
    evaluated on identical trials.  ``delta_cee`` may likewise hold several
    channel-error levels.
    """

    system: SystemConfig = field(default_factory=SystemConfig)
    solver: AdmmConfig = field(default_factory=AdmmConfig)
    detector: str = "fsj_admm_dcma"
    snr_grid: tuple = (0.0, 4.0, 8.0, 12.0, 16.0)
    trials: int = 100
    delta_cee: tuple = (0.0,)
    output_path: str | None = None
    codebook: str = "dense"
    alpha_fsj: float = 0.5
    T_bsp: int = 10
    mode: str = "auto"
    known_sparsity: bool = False
    trial_log: str | None = None
    frame_log: str | None = None
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.snr_grid) == 0:
            raise ValueError("snr_grid must be nonempty")
        for d in self.detectors:
            if d not in DETECTORS:
                raise ValueError(f"unknown detector {d!r}; choose from {DETECTORS}")
        if any(d < 0 for d in self.delta_cee):
            raise ValueError("delta_cee values must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "snr_grid", tuple(float(s) for s in self.snr_grid))
        object.__setattr__(self, "delta_cee", tuple(float(d) for d in np.atleast_1d(self.delta_cee)))

    @property
    def detectors(self) -> tuple:
        return tuple(d.strip() for d in self.detector.split(",") if d.strip())


@dataclass(frozen=True)
class MetricRow:
    detector: str
    snr_db: float
    delta: float
    ser: float
    aer: float
    support_exact_rate: float
    mean_iterations: float
    flops: int
    trials: int
    symbols: int
    failures: int

    @property
    def ser_stderr(self) -> float:
        """Binomial standard error of ``ser``."""
        if self.symbols == 0:
            return 0.0
        return math.sqrt(max(self.ser * (1 - self.ser), 0.0) / self.symbols)


# -- FLOP accounting ---------------------------------------------------------


def alg1_flops(J: int, K: int, N_r: int, T: int) -> int:
    """Operation count of one solve-and-threshold detection of a single slot."""
    m, n = N_r * K, K * J
    return m * n**2 + n**3 + m * n + T * (2 * n + n**2)


def bsp_iteration_flops(J: int, K: int, N_r: int, S_l: int, merged: int | None = None) -> int:
    """Operation count of one block subspace pursuit iteration (merged set of ``2 S_l`` users)."""
    merged = 2 * S_l if merged is None else merged
    return ((J * K**2 * N_r + J * K + K)
            + ((merged * K) ** 3 + 2 * K * N_r * (merged * K) ** 2)
            + (K * J + J)
            + ((S_l * K) ** 3 + 2 * K * N_r * (S_l * K) ** 2)
            + (K * N_r) * (K * J))


def count_flops(detector: str, J: int, K: int, N_r: int, T: int, L: int = 1, S_l: int = 2,
                T_bsp: int = 10, mode: str = "auto") -> int:
    """Closed-form operation count of ``detector`` for one frame of ``L`` slots.

    The two-step frame detector costs ``L`` single-slot detections when it
    stops after step i (``mode="case1"``) and ``2L`` otherwise; ``auto``
    reports the ``2L`` upper bound.  The support-aware least-squares
    baseline is counted as one restricted solve per slot.
    """
    if detector not in DETECTORS:
        raise ValueError(f"unknown detector {detector!r}")
    if detector in ("oracle_admm", "fsj_admm_scma", "fsj_admm_dcma"):
        return L * alg1_flops(J, K, N_r, T)
    if detector == "dynamic_alg2":
        return (1 if mode == "case1" else 2) * L * alg1_flops(J, K, N_r, T)
    if detector == "bsp":
        return L * T_bsp * bsp_iteration_flops(J, K, N_r, S_l)
    a = S_l * K
    return L * (a**3 + 2 * K * N_r * a**2)


def spec_flops(spec: ExperimentSpec, detector: str) -> int:
    s = spec.system
    return count_flops(detector, s.J, s.K, s.N_r, spec.solver.T, s.L, s.S_l, spec.T_bsp, spec.mode)


# -- trial generation ----------------------------------------------------------


def resolve_codebook(name: str, J: int | None = None, K: int | None = None) -> Codebook:
    if name in ("sparse", "dense", "scma", "dcma"):
        cb = example_codebook(name)
    else:
        cb = load_codebook(name)
    if (J is not None and cb.J != J) or (K is not None and cb.K != K):
        raise ValueError(f"codebook is {cb.J}x{cb.K}, system expects {J}x{K}")
    return cb


@dataclass
class TrialData:
    """Ground truth and unit-scale randomness for a block of trials.

    ``H`` has shape ``(B, L, m, n)``; ``noise`` and ``omega`` are CN(0, 1)
    draws to be scaled by the SNR and channel-error level.
    """

    H: np.ndarray
    x: np.ndarray
    noise: np.ndarray
    omega: np.ndarray
    mask: np.ndarray
    sym: np.ndarray
    trial_ids: np.ndarray

    def observe(self, snr_db: float) -> np.ndarray:
        r = np.einsum("blmn,bln->blm", self.H, self.x)
        return r + math.sqrt(noise_variance(snr_db)) * self.noise

    def channel_estimate(self, delta: float) -> np.ndarray:
        if delta == 0:
            return self.H
        return self.H + delta * self.omega


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def draw_trials(system: SystemConfig, cb: Codebook, start: int, stop: int) -> TrialData:
    """Generate trials ``start..stop-1`` of an experiment."""
    J, K, N_r, L = system.J, system.K, system.N_r, system.L
    m, n = N_r * K, J * K
    smask = structural_mask(J, N_r, K)
    B = stop - start
    H = np.empty((B, L, m, n), complex)
    x = np.empty((B, L, n), complex)
    noise = np.empty((B, L, m), complex)
    omega = np.empty((B, L, m, n), complex)
    mask = np.zeros((B, L, J), bool)
    sym = np.full((B, L, J), -1, int)
    for i, t in enumerate(range(start, stop)):
        rng = np.random.default_rng([system.seed, t])
        if system.redraw_channel:
            H[i] = [assemble_channel_matrix(draw_channel(J, N_r, K, rng)) for _ in range(L)]
        else:
            H[i] = assemble_channel_matrix(draw_channel(J, N_r, K, rng))
        frame = generate_frame(system, cb, rng)
        x[i] = frame.x_slots
        for l, (sup, syms) in enumerate(zip(frame.supports, frame.symbols)):
            for j in sup:
                mask[i, l, j] = True
                sym[i, l, j] = syms[j]
        noise[i] = _cn(rng, (L, m))
        rng_cee = np.random.default_rng([system.seed, t, 1])
        n_omega = L if system.redraw_channel else 1
        om = _cn(rng_cee, (n_omega, m, n)) * smask
        omega[i] = om if system.redraw_channel else om[0]
    return TrialData(H, x, noise, omega, mask, sym, np.arange(start, stop))


# -- detection and scoring -----------------------------------------------------

# record columns
_REC = ("symbol_errors", "symbols", "missed", "false_alarm", "exact", "iterations", "flagged")


def _score(true_mask, true_sym, det_mask, det_sym, iterations, flagged):
    det_mask = det_mask & ~flagged[..., None]
    wrong = true_mask & (~det_mask | (det_sym != true_sym))
    rec = np.stack([
        wrong.sum(-1),
        true_mask.sum(-1),
        (true_mask & ~det_mask).sum(-1),
        (det_mask & ~true_mask).sum(-1),
        np.all(det_mask == true_mask, axis=-1),
        iterations,
        flagged,
    ], axis=-1).astype(np.int64)
    return rec


def _detector_config(spec: ExperimentSpec, detector: str) -> tuple[DetectorConfig, str]:
    codebook = {"fsj_admm_scma": "sparse", "fsj_admm_dcma": "dense"}.get(detector, spec.codebook)
    sparse = codebook in ("sparse", "scma") or (
        codebook not in ("dense", "dcma") and resolve_codebook(codebook).kind == "sparse")
    variant = "sparse-group" if sparse and spec.solver.alpha2 > 0 else "group"
    return DetectorConfig(spec.solver, variant, spec.alpha_fsj), codebook


def _run_detector(detector, spec, data: TrialData, r, Hd, cb, det_cfg):
    """Return ``(det_mask, det_sym, iterations, flagged, extra)`` with ``(B, L, ...)`` shapes."""
    B, L, m = r.shape
    n = Hd.shape[-1]
    J, K = cb.J, cb.K
    S = spec.system.S_l
    extra = {}
    if detector in ("oracle_lse", "bsp"):
        x_hat = np.zeros((B, L, n), complex)
        det_mask = np.zeros((B, L, J), bool)
        iters = np.zeros((B, L), int)
        flagged = np.zeros((B, L), bool)
        for b in range(B):
            for l in range(L):
                try:
                    if detector == "oracle_lse":
                        sup = frozenset(int(j) for j in np.flatnonzero(data.mask[b, l]))
                        x_hat[b, l] = oracle_lse(r[b, l], Hd[b, l], sup, K)
                    else:
                        sup, x_hat[b, l], iters[b, l] = _bsp_core(r[b, l], Hd[b, l], S, spec.T_bsp, K)
                    det_mask[b, l, list(sup)] = True
                except RankDeficientError:
                    flagged[b, l] = True
        return det_mask, demap_batch(x_hat, cb), iters, flagged, extra
    if detector == "dynamic_alg2":
        sparsity = S if spec.known_sparsity else None
        est = detect_frames(r, Hd, det_cfg, cb, spec.mode, sparsity)
        extra["labels"] = est.labels
        return est.final_mask, est.final_sym, est.iterations, est.flagged, extra
    sparsity = S if detector == "oracle_admm" else None
    det = detect(r.reshape(B * L, m), Hd.reshape(B * L, m, n), det_cfg, K, sparsity)
    x_hat = det.x_hat.reshape(B, L, n)
    return (det.mask.reshape(B, L, J), demap_batch(x_hat, cb), det.iterations.reshape(B, L),
            det.failed.reshape(B, L), extra)


def _simulate_chunk(spec: ExperimentSpec, start: int, stop: int):
    """Records for trials ``start..stop-1``: ``{(detector, snr, delta): (B, L, 7) array}``."""
    out = {}
    frames = []
    data_by_cb = {}
    for detector in spec.detectors:
        det_cfg, cb_name = _detector_config(spec, detector)
        if cb_name not in data_by_cb:
            cb = resolve_codebook(cb_name, spec.system.J, spec.system.K)
            data_by_cb[cb_name] = (cb, draw_trials(spec.system, cb, start, stop))
        cb, data = data_by_cb[cb_name]
        for delta in spec.delta_cee:
            Hd = data.channel_estimate(delta)
            for snr in spec.snr_grid:
                r = data.observe(snr)
                det_mask, det_sym, iters, flagged, extra = _run_detector(
                    detector, spec, data, r, Hd, cb, det_cfg)
                rec = _score(data.mask, data.sym, det_mask, det_sym, iters, flagged)
                out[(detector, snr, delta)] = rec
                if detector == "dynamic_alg2" and spec.frame_log:
                    frames.append((snr, delta, data, det_mask, rec, extra["labels"]))
    return out, _frame_rows(frames)


def _fmt_set(mask_row) -> str:
    return ";".join(str(int(j)) for j in np.flatnonzero(mask_row))


def _frame_rows(frames):
    rows = []
    for snr, delta, data, det_mask, rec, labels in frames:
        B, L = det_mask.shape[:2]
        for b in range(B):
            for l in range(L):
                rows.append([int(data.trial_ids[b]), l, repr(snr), repr(delta), CASE_LABELS[int(labels[b])],
                             _fmt_set(data.mask[b, l]), _fmt_set(det_mask[b, l]), int(rec[b, l, 0])])
    return rows


def summarize_records(detector: str, snr: float, delta: float, rec: np.ndarray, J: int,
                      flops: int, trials: int) -> MetricRow:
    """Collapse per-slot records into one :class:`MetricRow`."""
    rec = rec.reshape(-1, len(_REC))
    symbols = int(rec[:, 1].sum())
    slots = rec.shape[0]
    return MetricRow(
        detector=detector,
        snr_db=float(snr),
        delta=float(delta),
        ser=float(rec[:, 0].sum() / symbols) if symbols else 0.0,
        aer=float((rec[:, 2].sum() + rec[:, 3].sum()) / (J * slots)),
        support_exact_rate=float(rec[:, 4].mean()),
        mean_iterations=float(rec[:, 5].mean()),
        flops=int(flops),
        trials=int(trials),
        symbols=symbols,
        failures=int(rec[:, 6].sum()),
    )


def _chunk_job(args):
    spec, start, stop = args
    return _simulate_chunk(spec, start, stop)


def _collect(spec: ExperimentSpec):
    bounds = [(s, min(s + CHUNK, spec.trials)) for s in range(0, spec.trials, CHUNK)]
    jobs = [(spec, a, b) for a, b in bounds]
    if spec.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.threads) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    keys = list(parts[0][0])
    records = {k: np.concatenate([p[0][k] for p in parts]) for k in keys}
    frame_rows = [row for p in parts for row in p[1]]
    return keys, records, frame_rows


def run_experiment(spec: ExperimentSpec) -> list:
    """Run the sweep described by ``spec`` and return one row per (detector, delta, SNR).

    Writes the summary CSV to ``spec.output_path`` and, when configured,
    the per-trial and per-frame logs.
    """
    keys, records, frame_rows = _collect(spec)
    rows = [summarize_records(d, snr, delta, records[(d, snr, delta)], spec.system.J,
                              spec_flops(spec, d), spec.trials)
            for d, snr, delta in keys]
    if spec.output_path:
        write_rows(rows, spec.output_path)
    if spec.trial_log:
        _write_trial_log(spec.trial_log, keys, records)
    if spec.frame_log:
        _write_csv(spec.frame_log, ["trial", "slot", "snr_db", "delta", "case_label", "true_support",
                                    "detected_support", "symbol_errors"], frame_rows)
    return rows


def run_cee_sweep(spec: ExperimentSpec, deltas=(0.0, 0.05, 0.1, 0.2)) -> list:
    """Run ``spec`` at each channel-error level; rows are grouped by level."""
    return run_experiment(replace(spec, delta_cee=tuple(deltas)))


def _write_csv(path, header, rows, note=None):
    buf = io.StringIO()
    if note:
        buf.write(note + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _write_trial_log(path, keys, records):
    rows = []
    for d, snr, delta in keys:
        rec = records[(d, snr, delta)]
        for t in range(rec.shape[0]):
            for l in range(rec.shape[1]):
                rows.append([d, repr(snr), repr(delta), t, l] + [int(v) for v in rec[t, l]])
    _write_csv(path, ["detector", "snr_db", "delta", "trial", "slot"] + list(_REC), rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_rows(rows, path) -> None:
    """Write metric rows as CSV (leading ``#`` line documents the metrics)."""
    header = [f.name for f in fields(MetricRow)]
    _write_csv(path, header, [[_fmt(getattr(r, h)) for h in header] for r in rows], SER_NOTE)


def read_rows(path) -> list:
    """Read a CSV written by :func:`write_rows`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    out = []
    types = {f.name: f.type for f in fields(MetricRow)}
    for rec in csv.DictReader(lines):
        kw = {}
        for k, v in rec.items():
            t = types[k]
            kw[k] = v if t == "str" else (int(v) if t == "int" else float(v))
        out.append(MetricRow(**kw))
    return out


# -- convergence ---------------------------------------------------------------


def _one_shot_batch(spec: ExperimentSpec, snr: float, trials: int):
    cb = resolve_codebook(_detector_config(spec, spec.detectors[0])[1], spec.system.J, spec.system.K)
    data = draw_trials(replace(spec.system, L=1), cb, 0, trials)
    r = data.observe(snr)[:, 0]
    H = data.channel_estimate(spec.delta_cee[0])[:, 0]
    return r, H, cb


def convergence_study(spec: ExperimentSpec, snr: float | None = None, within: int = 50):
    """Fraction of trials whose residual test passes within ``within`` iterations.

    Returns ``(fraction, solution)`` where ``solution`` is the batched
    solver output for all ``spec.trials`` trials.
    """
    snr = spec.snr_grid[0] if snr is None else snr
    r, H, cb = _one_shot_batch(spec, snr, spec.trials)
    det_cfg, _ = _detector_config(spec, spec.detectors[0])
    sol = solve_batch(det_cfg.variant, r, H, spec.solver, cb.K)
    ok = sol.converged & (sol.iterations <= within)
    return float(ok.mean()), sol


def run_convergence_trace(spec: ExperimentSpec, path, snr: float | None = None, trial: int = 0):
    """Solve one trial with tracing and write the per-iteration CSV to ``path``."""
    snr = spec.snr_grid[0] if snr is None else snr
    r, H, cb = _one_shot_batch(spec, snr, trial + 1)
    det_cfg, _ = _detector_config(spec, spec.detectors[0])
    sol = solve_batch(det_cfg.variant, r[trial:trial + 1], H[trial:trial + 1], spec.solver, cb.K)
    state = sol.state(0)
    write_trace(state, path)
    return state, sol.report(0)


# -- configuration files -------------------------------------------------------

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(value: str, typ):
    if typ in (bool, "bool"):
        if value.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {value!r}")
        return _BOOL[value.lower()]
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def _field_types(cls):
    return {f.name: f.type for f in fields(cls)}


def parse_config(text: str, seed: int | None = None, threads: int | None = None) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from ``key=value`` lines.

    Keys are ``system.<field>``, ``solver.<field>`` and
    ``experiment.<field>``; list values (``snr_grid``, ``delta_cee``) are
    comma separated.  Blank lines and ``#`` comments are ignored.
    """
    groups = {"system": {}, "solver": {}, "experiment": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in groups or not name:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        groups[section][name] = value

    def build(cls, values, lists=()):
        types = _field_types(cls)
        kw = {}
        for name, value in values.items():
            if name not in types:
                raise ValueError(f"unknown {cls.__name__} field {name!r}")
            if name in lists:
                kw[name] = tuple(float(v) for v in value.split(",") if v.strip())
            else:
                t = types[name]
                t = t.split("|")[0].strip() if isinstance(t, str) else t
                kw[name] = _coerce(value, t)
        return kw

    sys_kw = build(SystemConfig, groups["system"])
    if seed is not None:
        sys_kw["seed"] = seed
    exp_kw = build(ExperimentSpec, {k: v for k, v in groups["experiment"].items()},
                   lists=("snr_grid", "delta_cee"))
    for bad in ("system", "solver"):
        if bad in exp_kw:
            raise ValueError(f"experiment.{bad} is not a valid key")
    if threads is not None:
        exp_kw["threads"] = threads
    return ExperimentSpec(system=SystemConfig(**sys_kw), solver=AdmmConfig(**build(AdmmConfig, groups["solver"])),
                          **exp_kw)


def load_config(path, **overrides) -> ExperimentSpec:
    return parse_config(Path(path).read_text(), **overrides)


def spec_to_config(spec: ExperimentSpec) -> str:
    """Inverse of :func:`parse_config` (output paths included)."""
    lines = []
    for section, obj in (("system", spec.system), ("solver", spec.solver)):
        for k, v in asdict(obj).items():
            lines.append(f"{section}.{k} = {v}")
    for f in fields(ExperimentSpec):
        if f.name in ("system", "solver"):
            continue
        v = getattr(spec, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"experiment.{f.name} = {v}")
    return "\n".join(lines) + "\n"
