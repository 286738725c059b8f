"""Monte Carlo experiment runner: config parsing, trials, metrics and CSV.

Configs are INI files. ``[experiment]`` selects the scenario, algorithms,
SNR sweep, trial count, seed and output path; the scenario section
(``[synthetic]``, ``[ofdm]`` or ``[sc]``) and the ``[skts]`` / ``[rt]``
sections override the corresponding dataclass defaults.

Each trial draws its data from ``SeedSequence([seed, trial])``, so every SNR
point of a trial reuses the same random draws and every algorithm sees the
same data.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import conventional_ks, omp_block, oracle_ks
from .em import SktsConfig, run_skts
from .realtime import RtConfig, run_rt_skts
from .scenarios import (
    OfdmConfig,
    ScConfig,
    ScenarioBlock,
    SyntheticConfig,
    generate_ofdm,
    generate_sc,
    generate_synthetic,
)

log = logging.getLogger(__name__)

MSE_FLOOR_DB = -200.0
CSV_COLUMNS = ("scenario", "algorithm", "snr_db", "trial", "block", "mse_db", "support_recovered", "runtime_ms")

ALGORITHMS = {
    "skts": "block sKTS: EM over the support with greedy tree search",
    "rt-skts": "real-time sKTS: cascaded forward filters, MSE after warm-up",
    "conventional-ks": "Kalman smoother with every entry active",
    "oracle-ks": "Kalman smoother given the true support",
    "omp": "orthogonal matching pursuit on each snapshot",
}
SCENARIOS = {"synthetic": SyntheticConfig, "ofdm": OfdmConfig, "sc": ScConfig}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    algorithms: tuple[str, ...]
    snr_db: tuple[float, ...]
    trials: int = 1
    seed: int = 0
    output: str = "results.csv"
    workers: int = 1
    timing: bool = False
    scenario_cfg: object = None
    skts: dict = field(default_factory=dict)
    rt: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if not self.algorithms:
            raise ConfigError("algorithm list is empty")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {sorted(ALGORITHMS)}")
        if not self.snr_db:
            raise ConfigError("snr_db sweep is empty")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.scenario_cfg is None:
            object.__setattr__(self, "scenario_cfg", SCENARIOS[self.scenario]())
        # build once so bad values surface at load time
        self.skts_config()
        self.rt_config()

    @property
    def sparsity(self) -> int:
        return self.scenario_cfg.K

    def skts_config(self) -> SktsConfig:
        try:
            return SktsConfig(**{"sparsity": self.sparsity, **self.skts})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[skts]: {exc}") from None

    def rt_config(self) -> RtConfig:
        try:
            return RtConfig(**{"sparsity": self.sparsity, **self.rt})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[rt]: {exc}") from None

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    algorithm: str
    snr_db: float
    trial: int
    block: int
    mse_db: float  # nan marks a failed run
    support_recovered: bool | None
    runtime_ms: float | None

    def csv_fields(self) -> list[str]:
        return [
            self.scenario,
            self.algorithm,
            _fmt(self.snr_db),
            str(self.trial),
            str(self.block),
            _fmt(self.mse_db),
            "" if self.support_recovered is None else str(bool(self.support_recovered)).lower(),
            "" if self.runtime_ms is None else _fmt(self.runtime_ms),
        ]


def _fmt(x: float) -> str:
    return "nan" if np.isnan(x) else format(float(x), ".6g")


def compute_mse_db(truth, estimate) -> float:
    """``10 log10(sum ||h_n - h_hat_n||^2 / sum ||h_n||^2)``, floored at -200 dB."""
    h = np.asarray(truth)
    e = np.asarray(estimate)
    if h.shape != e.shape:
        raise ValueError(f"truth {h.shape} and estimate {e.shape} differ in shape")
    energy = float(np.sum(np.abs(h) ** 2))
    if energy <= 0:
        raise ValueError("truth has zero energy")
    err = float(np.sum(np.abs(h - e) ** 2))
    if err == 0:
        return MSE_FLOOR_DB
    return max(MSE_FLOOR_DB, 10.0 * np.log10(err / energy))


def mean_mse_db(values) -> float:
    """Average in the linear domain, report in dB (nan entries skipped)."""
    v = np.asarray([x for x in values if not np.isnan(x)], dtype=float)
    if v.size == 0:
        return float("nan")
    return float(10.0 * np.log10(np.mean(10.0 ** (v / 10.0))))


# ---------------------------------------------------------------------------
# config parsing


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(text: str, kind):
    return tuple(kind(x.strip()) for x in text.replace(";", ",").split(",") if x.strip())


def _optional(kind):
    return lambda text: None if text.strip().lower() in ("", "none") else kind(text)


_SPECIAL = {
    "sparsity": int,
    "schedule": _optional(lambda t: _parse_list(t, int)),
    "max_iterations": _optional(int),
    "drop_fraction": _optional(float),
}


def _convert_section(section, target, name: str) -> dict:
    """Convert the keys of ``section`` using the defaults of dataclass ``target``."""
    defaults = {f.name: f.default for f in dataclasses.fields(target)}
    out = {}
    for key, text in section.items():
        if key not in defaults:
            raise ConfigError(f"[{name}]: unknown key {key!r}")
        default = defaults[key]
        try:
            if key in _SPECIAL:
                out[key] = _SPECIAL[key](text)
            elif isinstance(default, bool):
                out[key] = _parse_bool(text)
            elif isinstance(default, int):
                out[key] = int(text)
            elif isinstance(default, float):
                out[key] = float(text)
            else:
                out[key] = text.strip()
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return out


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # field names such as M and N are case sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    known = {"experiment", "skts", "rt", *SCENARIOS}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    exp = dict(cp["experiment"])
    allowed = {"scenario", "algorithms", "snr_db", "trials", "seed", "output", "workers", "timing"}
    for key in exp:
        if key not in allowed:
            raise ConfigError(f"[experiment]: unknown key {key!r}")
    try:
        scenario = exp.get("scenario", "synthetic").strip()
        algorithms = _parse_list(exp.get("algorithms", "skts"), str)
        snr = _parse_list(exp.get("snr_db", "20"), float)
        trials = int(exp.get("trials", "1"))
        seed = int(exp.get("seed", "0"))
        workers = int(exp.get("workers", "1"))
        timing = _parse_bool(exp.get("timing", "false"))
    except ValueError as exc:
        raise ConfigError(f"[experiment]: {exc}") from None
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    target = SCENARIOS[scenario]
    scen_kw = _convert_section(cp[scenario], target, scenario) if cp.has_section(scenario) else {}
    try:
        scen_cfg = target(**scen_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{scenario}]: {exc}") from None
    skts = _convert_section(cp["skts"], SktsConfig, "skts") if cp.has_section("skts") else {}
    rt = _convert_section(cp["rt"], RtConfig, "rt") if cp.has_section("rt") else {}
    return ExperimentConfig(
        scenario, algorithms, snr, trials, seed, exp.get("output", "results.csv").strip(), workers, timing,
        scen_cfg, skts, rt,
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# running


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def generate_blocks(cfg: ExperimentConfig, snr_db: float, rng: np.random.Generator) -> list[ScenarioBlock]:
    if cfg.scenario == "synthetic":
        return generate_synthetic(cfg.scenario_cfg, snr_db, rng).blocks()
    if cfg.scenario == "ofdm":
        return generate_ofdm(cfg.scenario_cfg, snr_db, rng)
    return generate_sc(cfg.scenario_cfg, snr_db, rng)


def _oracle_support(sb: ScenarioBlock):
    if sb.true_support is not None:
        return sb.true_support
    return sb.extras["fade"].support


def run_algorithm(name: str, sb: ScenarioBlock, cfg: ExperimentConfig):
    """Return ``(estimate, mse_db)`` of one algorithm on one block."""
    model, block = sb.model, sb.block
    if name == "skts":
        est = run_skts(model, block, cfg.skts_config())
    elif name == "rt-skts":
        rt = cfg.rt_config()
        est = run_rt_skts(model, block, rt)
        warm = min(rt.warmup_len, block.length - 1)
        mse = compute_mse_db(sb.h[warm:], est.h_hat[warm:])
        est.diagnostics["support_for_metric"] = est.diagnostics["final_support"]
        return est, mse
    elif name == "conventional-ks":
        est = conventional_ks(model, block)
    elif name == "oracle-ks":
        est = oracle_ks(model, block, _oracle_support(sb))
    elif name == "omp":
        est = omp_block(block, cfg.sparsity)
    else:
        raise ValueError(f"unknown algorithm {name!r}")
    return est, compute_mse_db(sb.h, est.h_hat)


def run_trial(cfg: ExperimentConfig, trial: int) -> list[ResultRow]:
    """All SNR points of one trial; the generator restarts from the same seed
    at every SNR (common random numbers)."""
    rows = []
    for snr in cfg.snr_db:
        blocks = generate_blocks(cfg, snr, trial_rng(cfg.seed, trial))
        for i, sb in enumerate(blocks):
            for name in cfg.algorithms:
                t0 = time.perf_counter()
                try:
                    est, mse = run_algorithm(name, sb, cfg)
                except Exception as exc:
                    log.error("%s failed (snr=%g, trial=%d, block=%d): %s", name, snr, trial, i, exc)
                    log.debug("traceback", exc_info=True)
                    rows.append(ResultRow(cfg.scenario, name, snr, trial, i, float("nan"), None, None))
                    continue
                ms = (time.perf_counter() - t0) * 1e3 if cfg.timing else None
                recovered = None
                if sb.true_support is not None:
                    found = est.diagnostics.get("support_for_metric", est.support)
                    recovered = found == sb.true_support
                rows.append(ResultRow(cfg.scenario, name, snr, trial, i, mse, recovered, ms))
    return rows


def _order(rows: list[ResultRow]) -> list[ResultRow]:
    snr_pos = {}
    alg_pos = {}
    for r in rows:
        snr_pos.setdefault(r.snr_db, len(snr_pos))
        alg_pos.setdefault(r.algorithm, len(alg_pos))
    return sorted(rows, key=lambda r: (snr_pos[r.snr_db], r.trial, r.block, alg_pos[r.algorithm]))


def run_rows(cfg: ExperimentConfig) -> list[ResultRow]:
    """Run every trial, in parallel when ``workers > 1``, and merge rows in
    (snr, trial, block, algorithm) order."""
    trials = range(cfg.trials)
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(run_trial, [cfg] * cfg.trials, trials))
    else:
        chunks = [run_trial(cfg, t) for t in trials]
    return _order([r for chunk in chunks for r in chunk])


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def summarize(rows: list[ResultRow]) -> dict[tuple[str, float], float]:
    """Mean MSE (dB, linear-domain average) per (algorithm, snr)."""
    groups: dict[tuple[str, float], list[float]] = {}
    for r in rows:
        groups.setdefault((r.algorithm, r.snr_db), []).append(r.mse_db)
    return {k: mean_mse_db(v) for k, v in groups.items()}


def format_summary(rows: list[ResultRow]) -> str:
    table = summarize(rows)
    algs = list(dict.fromkeys(r.algorithm for r in rows))
    snrs = list(dict.fromkeys(r.snr_db for r in rows))
    width = max([len("algorithm")] + [len(a) for a in algs])
    lines = ["mean MSE [dB]", "algorithm".ljust(width) + "".join(f"{_fmt(s) + ' dB':>12}" for s in snrs)]
    for a in algs:
        lines.append(a.ljust(width) + "".join(f"{table[(a, s)]:>12.2f}" for s in snrs))
    failed = sum(np.isnan(r.mse_db) for r in rows)
    lines.append(f"{len(rows)} rows, {failed} failed")
    return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig, output: str | Path | None = None) -> list[ResultRow]:
    """Run the sweep, write the CSV and return the rows."""
    rows = run_rows(cfg)
    path = Path(output if output is not None else cfg.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows), encoding="utf-8")
    return rows
