"""Run one configured experiment and persist its artifacts.

Outputs are staged in a hidden sibling directory and moved into place only
after every file has been written, so a failed run leaves nothing behind.
Every file carries the config hash; a directory that already holds output
of a different config is refused.
"""
from __future__ import annotations

import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .classical import MhModel, build_pm_kernel, rejection_rate, run_mh_chain
from .config import ConfigError, ExperimentConfig
from .core import retention_rate, sample, thermal_distribution, tv_distance
from .diagnostics import (
    CostModelInputs,
    diagnostics_report,
    n_mix_bound,
    sigma_opt,
    t_mix,
    t_mix_minimized,
)
from .errors import ValidationError
from .halting import HaltingParams, cost_accuracy_model, halting_table, simulate_halting
from .imprecise import (
    ClassicalSpamModel,
    ImpreciseConfig,
    ImpreciseModel,
    ImpreciseSampler,
    batch_means_se,
)
from .quantum import (
    DiagonalHamiltonian,
    QuantumSampler,
    QuantumSpamModel,
    basis_state,
    classical_spam_from_quantum,
    diagonalize,
    eigen_population_fidelity,
    typical_spam_builder,
)
from .rng import make_stream
from .verify import ALL_CHECKS, configured_balance, verify_suite

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2
MANIFEST = "manifest.json"


# ----------------------------------------------------------------------------
# model construction
# ----------------------------------------------------------------------------

def _quantum_spam(opts: dict, dim: int, seed: int) -> QuantumSpamModel:
    kind = opts.get("type", "typical")
    if kind == "idle":
        return QuantumSpamModel.idle(dim)
    if kind == "explicit":
        k_o = cfgmod.complex_array(opts.get("k_o"), "spam.k_o", 3)
        u_c = cfgmod.complex_array(opts.get("u_c"), "spam.u_c", 3)
        return cfgmod.wrap("spam", QuantumSpamModel, k_o, u_c)
    if kind == "typical":
        basis = opts.get("basis", "identity")
        if basis == "identity":
            mat = np.eye(dim, dtype=complex)
        elif basis == "random":
            from scipy.stats import unitary_group
            gen = make_stream(int(opts.get("basis_seed", seed)), 0, "spam-basis")
            mat = unitary_group.rvs(dim, random_state=gen)
        else:
            mat = cfgmod.complex_array(basis, "spam.basis", 2)
        obs = opts.get("obs_size")
        if not isinstance(obs, int):
            raise ConfigError("spam.obs_size", "required integer")
        return cfgmod.wrap("spam", typical_spam_builder, mat, int(opts.get("j", 0)), obs)
    raise ConfigError("spam.type", f"unknown SPAM type '{kind}'")


def _classical_spam(opts: dict, size: int, seed: int) -> ClassicalSpamModel:
    kind = opts.get("type", "direct")
    if kind == "direct":
        return ClassicalSpamModel.direct(size)
    if kind == "idle":
        return ClassicalSpamModel.idle(size)
    if kind == "tables":
        try:
            p_o = np.asarray(opts["p_o"], dtype=float)
            p_c = np.asarray(opts["p_c"], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise ConfigError("spam", "tables need numeric p_o and p_c") from None
        return cfgmod.wrap("spam", ClassicalSpamModel, p_o, p_c)
    if kind in ("typical", "explicit"):
        q = _quantum_spam(opts, size, seed)
        return cfgmod.wrap("spam", classical_spam_from_quantum, q)
    raise ConfigError("spam.type", f"unknown SPAM type '{kind}'")


@dataclass
class Setup:
    energy: np.ndarray
    beta: float
    driver: np.ndarray
    sigma: float = 0.0
    n_max: int = 1
    spam: object = None


def build_setup(cfg: ExperimentConfig) -> Setup:
    beta = cfgmod.model_beta(cfg)
    model = cfg.require("model")
    if cfg.mode == "quantum" and "hamiltonian" in model:
        h = cfgmod.complex_array(model["hamiltonian"], "model.hamiltonian", 2)
        sig = cfgmod.sigma(cfg)
        spam = _quantum_spam(cfg.get("spam", {"type": "idle"}), h.shape[0], cfg.seed)
        ham, spam, _ = cfgmod.wrap("model.hamiltonian", diagonalize, h, sig, spam)
        energy = ham.energy
    else:
        energy = cfgmod.model_energies(cfg)
    if cfg.mode == "classical":
        driver = cfgmod.driver_matrix(cfg, energy.size)
        cfgmod.wrap("driver", MhModel, energy, beta, driver)
        return Setup(energy, beta, driver)
    sig = cfgmod.sigma(cfg)
    n_max = int(cfg.require("n_max"))
    opts = cfg.get("spam", {"type": "direct"} if cfg.mode == "imprecise" else {"type": "idle"})
    if cfg.mode == "imprecise":
        spam = _classical_spam(opts, energy.size, cfg.seed)
    elif "hamiltonian" not in model:
        spam = _quantum_spam(opts, energy.size, cfg.seed)
    obs = spam.obs_size
    driver = cfgmod.driver_matrix(cfg, obs)
    cfgmod.wrap("driver", ImpreciseConfig, sig, n_max, driver, beta)
    if cfg.mode == "quantum" and sig <= 0:
        raise ConfigError("sigma", "quantum mode needs sigma > 0")
    dim = spam.size if isinstance(spam, ClassicalSpamModel) else spam.dim
    if dim != energy.size:
        raise ConfigError("spam", "SPAM dimension does not match the number of energies")
    return Setup(energy, beta, driver, sig, n_max, spam)


# ----------------------------------------------------------------------------
# formatting
# ----------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _header_lines(cfg: ExperimentConfig, extra: str = "") -> list[str]:
    lines = [f"# qmhlab {__version__}", f"# config_hash {cfg.config_hash}",
             f"# mode {cfg.mode} seed {cfg.seed}"]
    if extra:
        lines.append(f"# {extra}")
    return lines


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def _start_state(cfg: ExperimentConfig, p: np.ndarray, chain: int) -> int:
    start = cfg.get("start", "thermal")
    if start == "thermal":
        return sample(p, make_stream(cfg.seed, chain, "start"))
    if isinstance(start, int) and 0 <= start < p.size:
        return start
    raise ConfigError("start", "must be 'thermal' or a state index")


# ----------------------------------------------------------------------------
# chain workers (top level so they can run in worker processes)
# ----------------------------------------------------------------------------

def _classical_chain(cfg: ExperimentConfig, setup: Setup, chain: int):
    model = MhModel(setup.energy, setup.beta, setup.driver)
    rng = make_stream(cfg.seed, chain, "chain")
    a0 = _start_state(cfg, model.thermal(), chain)
    burn = int(cfg.get("burn_in", 0))
    steps = int(cfg.get("steps"))
    states, props, acc = run_mh_chain(model, a0, burn + steps, rng)
    lines = _header_lines(cfg, f"chain {chain}") + ["step,state,proposal,accepted"]
    for t in range(burn, burn + steps):
        lines.append(f"{t},{states[t]},{props[t]},{int(acc[t])}")
    return "\n".join(lines) + "\n", states[burn:], acc[burn:]


def _record_line(step: int, rec, oracle: bool, hidden=None, fidelity=None) -> str:
    out = {"step": step, "n": rec.halted_at, "truncated": bool(rec.truncated),
           "trajectory": rec.trajectory.to_pairs()}
    if oracle and hidden is not None:
        out["hidden_state"] = int(hidden)
    if oracle and fidelity is not None:
        out["state_fidelity"] = fidelity
    return json.dumps(out, sort_keys=True)


def _meta_line(cfg: ExperimentConfig, chain: int) -> str:
    return json.dumps({"meta": {"qmhlab": __version__, "config_hash": cfg.config_hash,
                                "mode": cfg.mode, "seed": cfg.seed, "chain": chain,
                                "oracle_mode": bool(cfg.get("oracle_mode", False)),
                                "order": "trajectory pairs [observation, energy], oldest first"}},
                      sort_keys=True)


def _imprecise_chain(cfg: ExperimentConfig, setup: Setup, chain: int):
    model = ImpreciseModel(setup.energy, setup.spam)
    icfg = ImpreciseConfig(setup.sigma, setup.n_max, setup.driver, setup.beta)
    sampler = ImpreciseSampler(model, icfg)
    rng = make_stream(cfg.seed, chain, "chain")
    a = _start_state(cfg, thermal_distribution(setup.energy, setup.beta), chain)
    oracle = bool(cfg.get("oracle_mode", False))
    burn, steps = int(cfg.get("burn_in", 0)), int(cfg.get("steps"))
    for _ in range(burn):
        a = sampler.step(a, rng).final_state
    lines = [_meta_line(cfg, chain)]
    records = []
    for t in range(steps):
        rec = sampler.step(a, rng)
        a = rec.final_state
        records.append(rec)
        lines.append(_record_line(burn + t, rec, oracle, hidden=a))
    return "\n".join(lines) + "\n", records


def _quantum_chain(cfg: ExperimentConfig, setup: Setup, chain: int):
    ham = DiagonalHamiltonian(setup.energy, setup.sigma)
    icfg = ImpreciseConfig(setup.sigma, setup.n_max, setup.driver, setup.beta)
    sampler = QuantumSampler(ham, setup.spam, icfg)
    rng = make_stream(cfg.seed, chain, "chain")
    psi = basis_state(ham.dim, _start_state(cfg, thermal_distribution(setup.energy, setup.beta), chain))
    oracle = bool(cfg.get("oracle_mode", False))
    burn, steps = int(cfg.get("burn_in", 0)), int(cfg.get("steps"))
    for _ in range(burn):
        _, psi = sampler.step(psi, rng)
    lines = [_meta_line(cfg, chain)]
    records = []
    for t in range(steps):
        rec, psi = sampler.step(psi, rng)
        records.append(rec)
        fid = eigen_population_fidelity(psi) if oracle else None
        lines.append(_record_line(burn + t, rec, oracle, fidelity=fid))
    return "\n".join(lines) + "\n", records


_WORKERS = {"classical": _classical_chain, "imprecise": _imprecise_chain, "quantum": _quantum_chain}


def _call_worker(args):
    mode, cfg, setup, chain = args
    return _WORKERS[mode](cfg, setup, chain)


def _max_workers() -> int:
    env = os.environ.get("QMHLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("QMHLAB_THREADS", "must be an integer") from None
    return os.cpu_count() or 1


def _run_chains(cfg: ExperimentConfig, setup: Setup):
    chains = int(cfg.get("chains", 1))
    jobs = [(cfg.mode, cfg, setup, c) for c in range(chains)]
    workers = min(chains, _max_workers())
    if workers <= 1:
        return [_call_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call_worker, jobs))


# ----------------------------------------------------------------------------
# modes
# ----------------------------------------------------------------------------

def _trace_name(stem: str, ext: str, chain: int, chains: int) -> str:
    return f"{stem}.{ext}" if chains == 1 else f"{stem}_chain{chain}.{ext}"


def _run_classical(cfg, stage: Path, plots: bool) -> dict:
    setup = build_setup(cfg)
    results = _run_chains(cfg, setup)
    chains = len(results)
    model = MhModel(setup.energy, setup.beta, setup.driver)
    for c, (text, _, _) in enumerate(results):
        (stage / _trace_name("trace", "csv", c, chains)).write_text(text)
    states = np.concatenate([r[1] for r in results])
    acc = np.concatenate([r[2] for r in results])
    p = model.thermal()
    energies = setup.energy[states]
    freq = np.bincount(states, minlength=model.size) / states.size
    summary = {
        "acceptance_rate": float(acc.mean()),
        "mean_energy": float(energies.mean()),
        "se_energy": batch_means_se(energies),
        "empirical_tv": tv_distance(freq, p),
        "exact": {"mean_energy": float(setup.energy @ p),
                  "retention_rate": retention_rate(build_pm_kernel(model)),
                  "rejection_rate": rejection_rate(model).rejection_rate},
    }
    if plots:
        from .plotting import plot_state_occupation
        plot_state_occupation(states, p, stage / "occupation.png", cfg.config_hash)
    return summary


def _observable(cfg, obs_size: int):
    vals = cfg.get("observable")
    if vals is None:
        return lambda i: float(i)
    if not isinstance(vals, list) or len(vals) != obs_size:
        raise ConfigError("observable", f"must list {obs_size} values, one per observation")
    return lambda i: float(vals[i])


def _chain_summary(cfg, setup, records, obs_size: int, exact: dict) -> dict:
    f = _observable(cfg, obs_size)
    fv = np.array([f(int(r.trajectory.obs[1])) for r in records])
    wv = np.array([r.trajectory.omega[0] for r in records])
    lengths = np.array([r.halted_at for r in records])
    hist = np.bincount(lengths, minlength=setup.n_max + 1)[1:]
    try:
        diag = diagnostics_report(records, obs_size, setup.beta, setup.sigma, float(cfg.get("sigma0", 0.0)))
    except ValidationError as exc:
        diag = {"skipped": str(exc)}
    return {
        "mean_f": float(fv.mean()), "se_f": batch_means_se(fv),
        "mean_omega": float(wv.mean()), "se_omega": batch_means_se(wv),
        "var_omega": float(wv.var(ddof=1)) if wv.size > 1 else 0.0,
        "eps_tilde": float(np.mean([r.truncated for r in records])),
        "halting_histogram": {"n": list(range(1, setup.n_max + 1)), "count": hist.tolist()},
        "exact": exact,
        "diagnostics": diag,
    }


def _run_trajectories(cfg, stage: Path, plots: bool) -> dict:
    setup = build_setup(cfg)
    results = _run_chains(cfg, setup)
    chains = len(results)
    for c, (text, _) in enumerate(results):
        (stage / _trace_name("trajectories", "jsonl", c, chains)).write_text(text)
    records = [r for _, recs in results for r in recs]
    obs_size = setup.spam.obs_size
    f = _observable(cfg, obs_size)
    if cfg.mode == "imprecise":
        from .imprecise import exact_observables
        ex = exact_observables(ImpreciseModel(setup.energy, setup.spam), setup.beta, setup.sigma, f)
    else:
        from .quantum import quantum_observables
        ex = quantum_observables(DiagonalHamiltonian(setup.energy, setup.sigma), setup.spam, setup.beta, f)
    exact = {"mu_f": ex.mu_f, "mu_omega": ex.mu_omega, "var_omega": ex.var_omega}
    summary = _chain_summary(cfg, setup, records, obs_size, exact)
    if plots:
        from .plotting import plot_loop_lengths
        plot_loop_lengths([r.halted_at for r in records], setup.n_max, stage / "loop_lengths.png",
                          cfg.config_hash)
    return summary


def _run_halting(cfg, stage: Path, plots: bool) -> dict:
    h = cfg.require("halting")
    try:
        delta = float(h["delta"])
        n_max = int(h.get("n_max", 20))
        runs = int(h.get("runs", 100_000))
        params = HaltingParams(delta, n_max)
    except (TypeError, ValueError) as exc:
        raise ConfigError("halting", str(exc)) from None
    emp = simulate_halting(params, runs, make_stream(cfg.seed, 0, "halting")) if runs > 0 else None
    table = halting_table(delta, n_max) if delta > 0 else None
    lines = _header_lines(cfg, f"delta {_fmt(delta)} runs {runs}") + ["n,p_halt,t_n,s_n,empirical_p,SE"]
    for k in range(n_max):
        n = k + 1
        if table is not None:
            row = [_fmt(table.p_halt[k]), _fmt(table.tails[k]), _fmt(table.s_values[n])]
        else:
            row = ["1.0" if n == 1 else "0.0", "1.0" if n == 1 else "0.0", "1.0"]
        e = [_fmt(emp.p_halt[k]), _fmt(emp.se[k])] if emp is not None else ["", ""]
        lines.append(",".join([str(n)] + row + e))
    (stage / "halting.csv").write_text("\n".join(lines) + "\n")
    summary = {"delta": delta, "n_max": n_max, "runs": runs}
    if table is not None and emp is not None:
        z = (emp.p_halt - table.p_halt) / np.where(emp.se > 0, emp.se, np.inf)
        summary["max_abs_z"] = float(np.abs(z).max())
        summary["within_4se"] = bool(np.all(np.abs(emp.p_halt - table.p_halt) <= 4 * emp.se + 1e-12))
    if plots and table is not None:
        from .plotting import plot_halting
        plot_halting(np.arange(1, n_max + 1), table.p_halt, None if emp is None else emp.p_halt,
                     None if emp is None else emp.se, stage / "halting.png", cfg.config_hash)
    return summary


def _run_verify(cfg, stage: Path, plots: bool) -> dict:
    opts = cfg.get("verify", {})
    checks = opts.get("checks", list(ALL_CHECKS))
    if not isinstance(checks, list):
        raise ConfigError("verify.checks", "must be a list")
    try:
        report = verify_suite(checks, cfg.seed, opts.get("trials"), bool(opts.get("mutation", False)))
    except ValidationError as exc:
        raise ConfigError("verify.checks", str(exc)) from None
    out = report.to_dict()
    if "model" in cfg.raw and checks:
        energy = cfgmod.model_energies(cfg)
        driver = cfgmod.driver_matrix(cfg, energy.size)
        res = cfgmod.wrap("model", configured_balance, energy, cfgmod.model_beta(cfg), driver)
        out["checks"].append(res.to_dict())
        out["passed"] = out["passed"] and res.passed
    (stage / "verify.json").write_text(_json({"config_hash": cfg.config_hash, **out}))
    return out


def _run_cost(cfg, stage: Path, plots: bool) -> dict:
    c = cfg.require("cost")
    try:
        inputs = CostModelInputs(float(c["omega_tilde"]), float(c["eps_tilde"]), float(c["beta"]),
                                 float(c["sigma"]), float(c.get("sigma0", 0.0)))
    except ValidationError as exc:
        raise ConfigError("cost", str(exc)) from None
    s_opt, t_max = sigma_opt(inputs.beta, inputs.eps_tilde)
    ca = cost_accuracy_model(inputs.beta, inputs.sigma, inputs.eps_tilde, c.get("n_max"), inputs.sigma0)
    out = {
        "kind": "model",
        "n_mix_bound": n_mix_bound(inputs.omega_tilde),
        "t_mix": t_mix(inputs),
        "sigma_opt": s_opt,
        "t_max": t_max,
        "t_mix_minimized": t_mix_minimized(inputs.beta, inputs.eps_tilde, inputs.omega_tilde, inputs.sigma0),
        "n_halt_from_eps": ca.n_halt_from_eps,
        "eps_from_nmax": ca.eps_from_nmax,
        "n_halt_from_nmax": ca.n_halt_from_nmax,
        "in_asymptotic_regime": ca.in_regime,
    }
    (stage / "cost.json").write_text(_json({"config_hash": cfg.config_hash, **out}))
    return out


_MODES = {"classical": _run_classical, "imprecise": _run_trajectories, "quantum": _run_trajectories,
          "halting": _run_halting, "verify": _run_verify, "cost": _run_cost}


# ----------------------------------------------------------------------------
# output directory handling
# ----------------------------------------------------------------------------

def _check_provenance(out: Path, config_hash: str) -> None:
    if not out.exists():
        return
    if not out.is_dir():
        raise ConfigError("output_dir", f"{out} exists and is not a directory")
    entries = [p for p in out.iterdir() if not p.name.startswith(".")]
    if not entries:
        return
    manifest = out / MANIFEST
    if not manifest.is_file():
        raise ConfigError("output_dir", f"{out} holds files that were not written by qmhlab")
    try:
        prior = json.loads(manifest.read_text()).get("config_hash")
    except json.JSONDecodeError:
        prior = None
    if prior != config_hash:
        raise ConfigError("output_dir", f"{out} holds output of a different config ({prior})")


def run(cfg: ExperimentConfig, out_dir=None, plots: bool | None = None) -> tuple[int, dict]:
    """Run ``cfg`` and write its artifacts; returns ``(exit_code, summary)``."""
    out = Path(out_dir) if out_dir is not None else (cfg.output_dir or Path("qmhlab_out") / cfg.mode)
    if plots is None:
        plots = bool(cfg.get("plots", True))
    _check_provenance(out, cfg.config_hash)
    stage = out.parent / f".{out.name}.partial"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        summary = _MODES[cfg.mode](cfg, stage, plots)
        meta = {"config_hash": cfg.config_hash, "qmhlab": __version__, "mode": cfg.mode, "seed": cfg.seed}
        (stage / "summary.json").write_text(_json({**meta, "summary": summary}))
        files = sorted(p.name for p in stage.iterdir())
        (stage / MANIFEST).write_text(_json({**meta, "files": files + [MANIFEST], "config": cfg.raw}))
        out.mkdir(parents=True, exist_ok=True)
        for p in stage.iterdir():
            os.replace(p, out / p.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    code = EXIT_OK
    if cfg.mode == "verify" and not summary.get("passed", False):
        code = EXIT_VERIFY
    return code, summary
