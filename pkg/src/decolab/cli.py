"""
Scenario runner: ``decolab <subcommand> [--config FILE] [--seed N] [--out DIR] [--format csv|json|both]``.

Parameters come from built-in defaults, then a flat ``key = value`` config
file, then command-line flags (flags win). Every run writes
``<subcommand>.csv`` and/or ``<subcommand>.json`` into ``--out``.

Exit codes
----------
0  success, all self-checks passed
2  invalid configuration or parameters (one JSON line on stderr)
3  numerical instability (one JSON line on stderr, with a suggested dt)
4  scenario ran but a self-check failed
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import einselection as es
from . import hilbert as hb
from . import measurement as ms
from . import qbm
from . import spinbath as sb
from . import wigner as wg
from .errors import DecolabError, NumericalInstability, ValidationError

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_INVALID, EXIT_INSTABILITY, EXIT_SELF_CHECK = 0, 2, 3, 4
SEED_MAX = 2 ** 64 - 1


class ConfigError(ValidationError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def make_rng(seed: int) -> np.random.Generator:
    """Philox4x64 counter-based generator; the stream depends only on ``seed``."""
    return np.random.Generator(np.random.Philox(seed))


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Param:
    name: str
    kind: Callable[[str], Any]
    default: Any
    help: str = ""
    choices: tuple | None = None

    def parse(self, raw) -> Any:
        if not isinstance(raw, str):
            return raw
        try:
            value = self.kind(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {self.name!r}: {exc}", self.name) from None
        if self.choices is not None and value not in self.choices:
            raise ConfigError(f"{self.name!r} must be one of {list(self.choices)}, got {value!r}", self.name)
        return value


@dataclass
class Outcome:
    """What a scenario hands back to the runner."""

    csv_header: list[str]
    csv_rows: np.ndarray
    results: dict
    checks: dict[str, bool]
    extra_files: dict[str, Callable[[Path], None]] | None = None


# Scenarios


def run_measure(p: dict, rng: np.random.Generator) -> Outcome:
    n = p["n_outcomes"]
    if n < 2:
        raise ConfigError("n_outcomes must be at least 2", "n_outcomes")
    model = ms.MeasurementModel.random(n, rng)
    psi = hb.random_state([n], rng)
    env = ms.EnvironmentModel.orthonormal(n, p["dim_env"] or None, rng)

    c = model.coefficients(psi)
    born = np.array([pr for _, pr in ms.born_probabilities(model, psi)])
    pre = ms.premeasure(model, psi)
    readout = ms.pointer_readout(model, pre)
    chain = ms.chain_with_environment(model, env, psi)
    reduced = ms.reduce(pre.projector(), ms.pointer_projectors(model))
    diff = float(np.max(np.abs(chain.reduced_sa.matrix - reduced.matrix)))

    results = {
        "eigenvalues": [float(x) for x in model.eigenvalues],
        "amplitudes": [[float(x.real), float(x.imag)] for x in c],
        "probabilities": [float(x) for x in born],
        "pointer_probabilities": [float(x) for x in readout],
        "reduced_sa": hb.matrix_to_json(chain.reduced_sa.matrix),
        "purity_premeasured": hb.purity(pre.projector()),
        "purity_reduced": hb.purity(chain.reduced_sa),
        "chain_vs_reduction_max_diff": diff,
    }
    checks = {
        "probabilities_sum_to_one": abs(float(born.sum()) - 1) <= 1e-12,
        "pointer_readout_matches_born": float(np.max(np.abs(readout - born))) <= 1e-12,
        "chain_equals_reduction": diff <= 1e-12,
        "purity_not_increased": results["purity_reduced"] <= results["purity_premeasured"] + 1e-12,
    }
    rows = np.column_stack([np.arange(n), model.eigenvalues, c.real, c.imag, born, readout])
    header = ["outcome", "eigenvalue", "re_c", "im_c", "probability", "pointer_probability"]
    return Outcome(header, rows, results, checks)


def run_spinbath(p: dict, rng: np.random.Generator) -> Outcome:
    if p["t_points"] < 2:
        raise ConfigError("t_points must be at least 2", "t_points")
    if p["t_max"] <= 0:
        raise ConfigError("t_max must be positive", "t_max")
    model = sb.SpinBathModel.random(
        p["n"], rng, amplitudes=p["amplitudes"], coupling_range=(p["coupling_min"], p["coupling_max"])
    )
    t = np.linspace(0.0, p["t_max"], p["t_points"])
    z = sb.decoherence_factor(model, t)
    mag2 = sb.decoherence_factor_mag2(model, t)

    # window [T, 2T] skips the initial |z| = 1 peak
    window = p["avg_window"] / float(np.min(np.abs(model.couplings)))
    analytic = sb.mean_square_z(model)
    empirical = sb.time_average_mag2(model, window, p["avg_samples"], t_start=window)
    checks = {
        "abs_z_at_most_one": bool(np.all(np.abs(z) <= 1 + 1e-12)),
        "mag2_closed_form_matches": float(np.max(np.abs(np.abs(z) ** 2 - mag2))) <= 1e-12,
        "z_at_zero_is_one": abs(z[0] - 1) <= 1e-12,
    }
    if model.n <= 8:
        times = t[:: max(1, t.size // 10)]
        brute = sb.brute_force_reduced_density(model, times)
        closed = [sb.reduced_density(model, s).matrix for s in times]
        err = max(float(np.max(np.abs(b.matrix - c))) for b, c in zip(brute, closed))
        checks["brute_force_matches"] = err <= 1e-10
    results = {
        "couplings": [float(g) for g in model.couplings],
        "mean_square_analytic": analytic,
        "mean_square_empirical": empirical,
        "empirical_over_analytic": empirical / analytic,
        "average_window": [window, 2 * window],
        "average_samples": p["avg_samples"],
    }
    rows = np.column_stack([t, z.real, z.imag, mag2])
    return Outcome(["t", "re_z", "im_z", "abs_z2"], rows, results, checks)


def _parse_blocks(text: str, n_sys: int) -> list[int] | None:
    if not text:
        return None
    try:
        sizes = [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"blocks must be comma-separated integers, got {text!r}", "blocks") from None
    if sum(sizes) != n_sys or min(sizes) < 1:
        raise ConfigError(f"blocks {sizes} must be positive and add up to n_sys={n_sys}", "blocks")
    return sizes


def run_einselect(p: dict, rng: np.random.Generator) -> Outcome:
    n_sys = p["n_sys"]
    if n_sys < 2:
        raise ConfigError("n_sys must be at least 2", "n_sys")
    blocks = _parse_blocks(p["blocks"], n_sys)
    model = es.DiagonalCouplingModel.random(n_sys, p["n_env"], rng, p["equal_weights"], blocks)
    partition = es.coherent_partition(model)
    lam = es.pointer_observable(partition, np.arange(len(partition.blocks), dtype=float))
    h_int = es.interaction_hamiltonian(model)
    h_tot = es.total_hamiltonian(model)
    comm_int = es.commutator_norm(lam, h_int)
    comm_tot = es.commutator_norm(lam, h_tot)

    t = np.linspace(0.0, p["t_max"], p["t_points"])
    pairs = [(m, n) for m in range(n_sys) for n in range(m + 1, n_sys)]
    cols = [np.abs(es.correlation_amplitude(model, m, n, t)) for m, n in pairs]

    # Monte Carlo long-time average over random times in [0, T]
    t_rand = rng.uniform(0.0, p["avg_window"], p["avg_samples"])
    delta2 = {}
    for m, n in pairs:
        emp = float(np.mean(np.abs(es.correlation_amplitude(model, m, n, t_rand)) ** 2))
        delta2[f"{m},{n}"] = {"analytic": es.mean_square_correlation(model, m, n), "empirical": emp}

    psi = es.evolve_state(model, p["t_max"])
    rho_direct = hb.partial_trace(psi.projector(), [0]).matrix
    rho_closed = es.rho_matrix_elements(model, p["t_max"])
    results = {
        "partition": [list(b) for b in partition.blocks],
        "delta2": delta2,
        "commutator_norm_interaction": comm_int,
        "commutator_norm_total": comm_tot,
        "reduced_density_max_diff": float(np.max(np.abs(rho_direct - rho_closed))),
    }
    checks = {
        "pointer_commutes_with_interaction": comm_int <= 1e-12,
        "pointer_compatible_with_partition": es.check_observable_compatibility(partition, lam),
        "closed_form_matches_evolution": results["reduced_density_max_diff"] <= 1e-12,
    }
    header = ["t"] + [f"abs_z_{m}_{n}" for m, n in pairs]
    return Outcome(header, np.column_stack([t] + cols), results, checks)


def run_qbm(p: dict, rng: np.random.Generator) -> Outcome:
    params = qbm.QbmParams(mass=p["mass"], omega=p["omega"], gamma=p["gamma"], theta=p["theta"])
    spec = qbm.CatStateSpec(p["separation"], p["width"])
    rho0 = qbm.init_cat_state(spec, p["q_min"], p["q_max"], p["size"])
    traj = list(qbm.evolve_master_equation(rho0, params, p["dt"], p["steps"], output_stride=p["output_stride"]))

    t = np.array([r.t for r in traj])
    trace_err = np.array([abs(r.trace() - 1) for r in traj])
    purity = np.array([r.purity() for r in traj])
    herm = max(r.hermiticity_error() for r in traj)
    peaks = np.array([qbm.offdiag_peak_norm(r, spec) for r in traj])

    predicted = params.predicted_tau_d(spec.separation)
    window = p["fit_window"] * predicted
    use = t <= window + 1e-12 * max(1.0, window)
    fitted = qbm.fit_decoherence_rate(np.column_stack([t[use], peaks[use]])) if use.sum() >= 5 else math.nan
    ratio = fitted / predicted if math.isfinite(fitted) and math.isfinite(predicted) else math.nan

    final = traj[-1]
    results = {
        "tau_d_fitted": fitted,
        "tau_d_predicted": predicted,
        "fitted_over_predicted": ratio,
        "fit_points": int(use.sum()),
        "fit_window": window,
        "diffusion": params.diffusion,
        "stability_limit": qbm.stability_limit(rho0, params),
        "max_trace_error": float(trace_err.max()),
        "max_hermiticity_error": float(herm),
        "final_purity": float(purity[-1]),
    }
    checks = {
        "trace_preserved": results["max_trace_error"] <= 1e-10,
        "hermiticity_preserved": herm <= 1e-10,
        "purity_non_increasing": bool(np.all(np.diff(purity) <= 1e-12)),
    }
    if math.isfinite(ratio):
        checks["tau_d_within_10_percent"] = abs(ratio - 1) <= 0.10

    def save_rho(out: Path):
        np.savez(out / "qbm_rho.npz", values=final.values, q_min=final.q_min, q_max=final.q_max, t=final.t)

    rows = np.column_stack([t, trace_err, purity, peaks])
    return Outcome(["t", "trace_error", "purity", "offdiag_peak_norm"], rows, results, checks, {"qbm_rho.npz": save_rho})


def load_rho(path: str) -> qbm.GridDensityMatrix:
    try:
        with np.load(path) as data:
            return qbm.GridDensityMatrix(data["values"], float(data["q_min"]), float(data["q_max"]), float(data["t"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read density grid from {path!r}: {exc}", "rho_file") from None


def run_wigner(p: dict, rng: np.random.Generator) -> Outcome:
    src = p["source"]
    if src == "file":
        if not p["rho_file"]:
            raise ConfigError("source=file needs rho_file", "rho_file")
        rho = load_rho(p["rho_file"])
    elif src == "cat":
        rho = qbm.init_cat_state(qbm.CatStateSpec(p["separation"], p["width"]), p["q_min"], p["q_max"], p["size"])
    else:
        q = qbm.grid_points(p["q_min"], p["q_max"], p["size"])
        psi = wg.packet_wavefunction(q, p["q0"], p["p0"], p["width"])
        rho = qbm.GridDensityMatrix.from_wavefunction(psi, p["q_min"], p["q_max"])

    w = wg.wigner_of_density(rho)
    pos, mom = wg.marginals(w)
    direct_mom = wg.momentum_density(rho, w.p)
    pos_res = float(np.max(np.abs(pos - rho.diagonal())))
    mom_res = float(np.max(np.abs(mom - direct_mom)))
    norm = w.normalization()
    results = {
        "normalization": norm,
        "negativity_volume": wg.negativity_volume(w),
        "position_marginal_residual": pos_res,
        "momentum_marginal_residual": mom_res,
        "centroid": list(w.centroid()),
        "grid": {"size": int(w.q.size), "dq": w.dq, "dp": w.dp, "t": w.t},
    }
    checks = {
        "normalized": abs(norm - rho.trace().real) <= 1e-6,
        "position_marginal": pos_res <= 1e-8,
        "momentum_marginal": mom_res <= 1e-8,
    }
    qq, pp = np.meshgrid(w.q, w.p, indexing="ij")
    rows = np.column_stack([qq.ravel(), pp.ravel(), w.values.ravel()])
    return Outcome(["q", "p", "W"], rows, results, checks)


def run_taud(p: dict, rng: np.random.Generator) -> Outcome:
    res = qbm.tau_d_si(p["T"], p["mass_g"] * 1e-3, p["dq_cm"] * 1e-2, p["tau_r"])
    results = {"lambda_db_m": res.lambda_db_m, "tau_d_s": res.tau_d_s, "ratio": res.ratio}
    checks = {"ratio_below_one": res.ratio < 1, "consistent": math.isclose(res.tau_d_s, res.ratio * p["tau_r"])}
    rows = np.array([[p["T"], p["mass_g"], p["dq_cm"], p["tau_r"], res.lambda_db_m, res.tau_d_s, res.ratio]])
    header = ["T_K", "mass_g", "dq_cm", "tau_r_s", "lambda_db_m", "tau_d_s", "ratio"]
    return Outcome(header, rows, results, checks)


@dataclass(frozen=True)
class Subcommand:
    run: Callable[[dict, np.random.Generator], Outcome]
    params: tuple[Param, ...]
    help: str


SUBCOMMANDS: dict[str, Subcommand] = {
    "measure": Subcommand(run_measure, (
        Param("n_outcomes", int, 3, "number of measurement outcomes"),
        Param("dim_env", int, 0, "environment dimension (0: n_outcomes + 1)"),
    ), "random premeasurement, environment chain and reduction"),
    "spinbath": Subcommand(run_spinbath, (
        Param("n", int, 8, "number of bath spins"),
        Param("amplitudes", str, "equal", "bath spin states", ("equal", "random")),
        Param("t_max", float, 50.0, "end of the output time grid"),
        Param("t_points", int, 501, "points in the output time grid"),
        Param("coupling_min", float, 0.5),
        Param("coupling_max", float, 1.5),
        Param("avg_window", float, 1000.0, "averaging window T in units of 1/min(g)"),
        Param("avg_samples", int, 200001, "samples in the long-time average"),
    ), "exactly solvable spin-bath decoherence factor"),
    "einselect": Subcommand(run_einselect, (
        Param("n_sys", int, 3),
        Param("n_env", int, 100),
        Param("blocks", str, "", "comma-separated coherent block sizes"),
        Param("equal_weights", _parse_bool, True, "equal environment weights"),
        Param("t_max", float, 50.0),
        Param("t_points", int, 201),
        Param("avg_window", float, 1e4, "long-time average window"),
        Param("avg_samples", int, 20000),
    ), "diagonal coupling model, coherent subspaces and pointer observables"),
    "qbm": Subcommand(run_qbm, (
        Param("mass", float, 1.0),
        Param("omega", float, 0.0),
        Param("gamma", float, 0.02),
        Param("theta", float, 1.5625),
        Param("separation", float, 8.0),
        Param("width", float, 1.0),
        Param("size", int, 256),
        Param("q_min", float, -12.0),
        Param("q_max", float, 12.0),
        Param("dt", float, 0.005),
        Param("steps", int, 50),
        Param("output_stride", int, 1),
        Param("fit_window", float, 0.1, "fit peaks for t <= fit_window * predicted tau_D"),
    ), "high-temperature Brownian motion master equation for a cat state"),
    "wigner": Subcommand(run_wigner, (
        Param("source", str, "packet", "initial state", ("packet", "cat", "file")),
        Param("rho_file", str, "", "npz written by the qbm subcommand"),
        Param("q0", float, 0.0),
        Param("p0", float, 0.0),
        Param("width", float, 1.0),
        Param("separation", float, 8.0),
        Param("size", int, 256),
        Param("q_min", float, -16.0),
        Param("q_max", float, 16.0),
    ), "Wigner transform, marginals and negativity"),
    "taud": Subcommand(run_taud, (
        Param("T", float, 300.0, "temperature in K"),
        Param("mass_g", float, 1.0, "mass in grams"),
        Param("dq_cm", float, 1.0, "separation in cm"),
        Param("tau_r", float, 1.0, "relaxation time in s"),
    ), "decoherence time in SI units"),
}


# Config and output


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not 'key = value': {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_parameters(sub: str, config: dict[str, str], flags: dict[str, Any]) -> tuple[dict, int]:
    """Merge defaults, config and flags; returns (parameters, seed)."""
    table = {p.name: p for p in SUBCOMMANDS[sub].params}
    values = {name: p.default for name, p in table.items()}
    seed_raw: Any = 0
    for key, raw in config.items():
        if key == "seed":
            seed_raw = raw
        elif key in table:
            values[key] = table[key].parse(raw)
        else:
            raise ConfigError(f"unknown config key {key!r} for {sub}", key)
    for key, raw in flags.items():
        if raw is None:
            continue
        if key == "seed":
            seed_raw = raw
        else:
            values[key] = table[key].parse(raw)
    try:
        seed = int(seed_raw)
    except ValueError:
        raise ConfigError(f"seed must be an integer, got {seed_raw!r}", "seed") from None
    if not 0 <= seed <= SEED_MAX:
        raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
    return values, seed


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_csv(path: Path, header: list[str], rows: np.ndarray):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, rows, fmt="%.17g", delimiter=",")


def schema_path(sub: str) -> Path:
    return Path(__file__).parent / "schemas" / f"{sub}.schema.json"


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value parameter file")
    common.add_argument("--seed", help="unsigned 64-bit seed for the Philox generator")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=("csv", "json", "both"), default="both")

    parser = argparse.ArgumentParser(prog="decolab", description="Decoherence model scenarios.")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name, sub in SUBCOMMANDS.items():
        sp = subs.add_parser(name, parents=[common], help=sub.help)
        for prm in sub.params:
            text = f"{prm.help} (default: {prm.default!r})" if prm.help else f"default: {prm.default!r}"
            sp.add_argument("--" + prm.name.replace("_", "-"), dest=prm.name, default=None, help=text)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    sub = args.subcommand
    flags = {p.name: getattr(args, p.name) for p in SUBCOMMANDS[sub].params}
    flags["seed"] = args.seed
    start = time.perf_counter()
    try:
        config = read_config(args.config) if args.config else {}
        params, seed = resolve_parameters(sub, config, flags)
        outcome = SUBCOMMANDS[sub].run(params, make_rng(seed))
    except ConfigError as exc:
        return _fail(EXIT_INVALID, "invalid_config", str(exc), key=exc.key)
    except NumericalInstability as exc:
        return _fail(EXIT_INSTABILITY, "numerical_instability", str(exc), suggested_dt=exc.suggested_dt)
    except (DecolabError, ValueError) as exc:
        return _fail(EXIT_INVALID, "invalid_parameters", str(exc))
    elapsed = time.perf_counter() - start

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checks = {k: bool(v) for k, v in outcome.checks.items()}
    if args.format in ("csv", "both"):
        write_csv(out / f"{sub}.csv", outcome.csv_header, outcome.csv_rows)
    if args.format in ("json", "both"):
        summary = {
            "schema_version": SCHEMA_VERSION,
            "module": sub,
            "parameters": params,
            "seed": seed,
            "rng": "philox4x64",
            "wall_clock_s": elapsed,
            "self_checks": checks,
            "passed": all(checks.values()),
            "results": outcome.results,
        }
        text = json.dumps(_json_safe(summary), indent=2, allow_nan=False)
        (out / f"{sub}.json").write_text(text + "\n", encoding="utf-8")
    for _, writer in (outcome.extra_files or {}).items():
        writer(out)
    return EXIT_OK if all(checks.values()) else EXIT_SELF_CHECK


if __name__ == "__main__":
    sys.exit(main())
