"""Experiment driver: configs, runs, metrics files, checkpoints and summaries.

A config is an INI file. ``[experiment]`` names the scenario, the solvers,
the seeds and the output directory; ``[env]``, ``[gdm]``, ``[ppo]``,
``[env_penalty]`` and ``[train_penalty]`` override the matching dataclass
defaults. A run writes, under the output directory::

    metrics/<solver>_seed<seed>.csv      one row per episode
    menus/<solver>_seed<seed>.csv        final menu for every evaluation state
    checkpoints/<solver>_seed<seed>.json learned solvers only
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import glob as _glob
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import GridSpec, complete_info_optimum, greedy_menu, random_menu
from .contract import PenaltyPolicy, check_ir, is_feasible, provider_expected_utility
from .env import ConfigError, EnvConfig, env_step
from .freshness import TimingModel
from .gdm import (
    DiffusionSchedule,
    GdmAgent,
    TrainConfig,
    evaluate_policy,
    evaluation_states,
    gdm_policy,
    train,
)
from .ppo import PpoAgent, PpoConfig, ppo_policy, train_ppo
from .tensorlite import DenseNet, NumericError

log = logging.getLogger(__name__)

SOLVERS = ("gdm", "ppo", "greedy", "random", "complete-info")
LEARNED = ("gdm", "ppo")
METRICS_COLUMNS = ("run_id", "solver", "seed", "episode", "train_reward",
                   "eval_reward", "feasible_rate", "wall_clock")
MENU_COLUMNS = ("state", "type", "delta", "probability", "frequency", "reward",
                "feasible")
CHECKPOINT_VERSION = 1
SEED_ENV_VAR = "FRESHCONTRACT_SEED"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class CheckpointError(ValueError):
    """A checkpoint is unreadable, corrupt, or belongs to another setting."""


class SchemaError(ValueError):
    """A metrics file does not carry the expected columns."""


# ---------------------------------------------------------------- configs


@dataclass
class ExperimentConfig:
    name: str
    env: EnvConfig
    solvers: tuple
    gdm: TrainConfig = field(default_factory=TrainConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seeds: tuple = (0,)
    output_dir: Path = Path("runs")
    eval_states: int = 200
    eval_seed: int = 12345

    def __post_init__(self):
        self.solvers = tuple(self.solvers)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.output_dir = Path(self.output_dir)
        if not self.solvers:
            raise ConfigError("[experiment] solvers: at least one solver is required")
        for s in self.solvers:
            if s not in SOLVERS:
                raise ConfigError(f"[experiment] solvers: unknown solver {s!r}")
        if not self.seeds:
            raise ConfigError("[experiment] seeds: at least one seed is required")
        if self.eval_states < 1:
            raise ConfigError("[experiment] eval_states must be positive")


def _parse_tuple(text: str):
    """``"1 6; 13 18"`` -> ``((1.0, 6.0), (13.0, 18.0))``; ``"1, 2"`` -> ``(1.0, 2.0)``."""
    if ";" in text:
        return tuple(_parse_tuple(part) for part in text.split(";") if part.strip())
    return tuple(float(x) for x in text.replace(",", " ").split())


def _convert(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "yes", "no", "1", "0"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("true", "yes", "1")
    if isinstance(default, int):
        return int(float(raw)) if float(raw).is_integer() else int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        value = _parse_tuple(raw)
        if default and all(isinstance(x, int) for x in default):
            return tuple(int(x) for x in value)
        return value
    if isinstance(default, str):
        return raw.strip()
    raise ValueError("not settable here; use the dedicated section")


def _section_overrides(parser, section, cls, skip=()):
    if not parser.has_section(section):
        return {}
    defaults = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key in skip:
            continue
        if key not in defaults:
            raise ConfigError(f"[{section}] {key}: unknown field")
        f = defaults[key]
        default = (f.default if f.default is not dataclasses.MISSING
                   else f.default_factory())
        try:
            out[key] = _convert(raw, default)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return out


def _penalty(parser, section):
    if not parser.has_section(section):
        return None
    return PenaltyPolicy(**_section_overrides(parser, section, PenaltyPolicy))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse config text; every problem surfaces as :class:`ConfigError`."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if not parser.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    known = {"experiment", "env", "gdm", "ppo", "env_penalty", "train_penalty"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{source}: unknown section [{section}]")
    exp = parser["experiment"]
    try:
        env_kw = _section_overrides(parser, "env", EnvConfig, skip=("slot_length",))
        if parser.has_option("env", "slot_length"):
            env_kw["timing"] = TimingModel.from_slot_length(
                float(parser.get("env", "slot_length")))
        env_policy = _penalty(parser, "env_penalty")
        if env_policy is not None:
            env_kw["penalty_policy"] = env_policy
        env = EnvConfig(**env_kw)

        gdm_kw = _section_overrides(parser, "gdm", TrainConfig)
        ppo_kw = _section_overrides(parser, "ppo", PpoConfig)
        train_policy = _penalty(parser, "train_penalty")
        if train_policy is not None:
            gdm_kw["penalty_policy"] = train_policy
            ppo_kw["penalty_policy"] = train_policy
        eval_states = exp.getint("eval_states", 200)
        eval_seed = exp.getint("eval_seed", 12345)
        for kw in (gdm_kw, ppo_kw):
            kw.setdefault("eval_states", eval_states)
            kw.setdefault("eval_seed", eval_seed)

        solvers = [s.strip() for s in exp.get("solvers", "").split(",") if s.strip()]
        seeds = [int(s) for s in exp.get("seeds", "0").replace(",", " ").split()]
        return ExperimentConfig(
            name=exp.get("name", Path(source).stem),
            env=env,
            solvers=solvers,
            gdm=TrainConfig(**gdm_kw),
            ppo=PpoConfig(**ppo_kw),
            seeds=seeds,
            output_dir=exp.get("output_dir", f"runs/{Path(source).stem}"),
            eval_states=eval_states,
            eval_seed=eval_seed,
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def seeds_from_env(default):
    """Seeds from ``FRESHCONTRACT_SEED`` (comma or space separated) if it is set."""
    raw = os.environ.get(SEED_ENV_VAR, "").strip()
    if not raw:
        return tuple(default)
    try:
        return tuple(int(s) for s in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV_VAR}={raw!r} is not a list of integers") from exc


# ------------------------------------------------------------ checkpoints


def _net_to_dict(net: DenseNet):
    return {
        "sizes": net.sizes,
        "activations": net.activations,
        "weights": [W.tolist() for W in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _net_from_dict(d):
    return DenseNet.from_layers(
        [(W, b, a) for W, b, a in zip(d["weights"], d["biases"], d["activations"])]
    )


def _agent_header(agent):
    if isinstance(agent, GdmAgent):
        return {
            "kind": "gdm",
            "state_dim": agent.state_dim,
            "action_dim": agent.action_dim,
            "hidden": list(agent.hidden),
            "time_dim": agent.time_dim,
            "schedule": agent.schedule.noise_levels.tolist(),
            "exploration_noise": agent.exploration_noise,
            "discount": agent.discount,
            "reward_scale": agent.reward_scale,
            "presquash_reg": agent.presquash_reg,
        }
    if isinstance(agent, PpoAgent):
        return {
            "kind": "ppo",
            "state_dim": agent.state_dim,
            "action_dim": agent.action_dim,
            "hidden": list(agent.hidden),
            "clip_ratio": agent.clip_ratio,
            "gae_lambda": agent.gae_lambda,
            "discount": agent.discount,
            "reward_scale": agent.reward_scale,
            "log_std": agent.log_std.tolist(),
        }
    raise TypeError(f"cannot checkpoint a {type(agent).__name__}")


def config_fingerprint(header) -> str:
    """Hash of the settings a checkpoint depends on (everything but the weights)."""
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def checkpoint_document(agent) -> dict:
    header = _agent_header(agent)
    return {
        "version": CHECKPOINT_VERSION,
        "fingerprint": config_fingerprint(header),
        "header": header,
        "networks": {k: _net_to_dict(n) for k, n in agent.networks().items()},
    }


def save_checkpoint(agent, path):
    """Write ``agent`` as JSON; floats are stored with round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = checkpoint_document(agent)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1))
    return path


def load_checkpoint(path, env_config: EnvConfig | None = None):
    """Rebuild the agent stored at ``path``.

    With ``env_config`` the stored dimensions must match that setting's
    number of holder types, otherwise the checkpoint is refused.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot parse checkpoint {path}: {exc}") from exc
    try:
        version, header, nets = doc["version"], doc["header"], doc["networks"]
        stored = doc["fingerprint"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: missing checkpoint field {exc}") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if config_fingerprint(header) != stored:
        raise CheckpointError(f"{path}: fingerprint does not match the stored settings")
    if env_config is not None:
        want = (env_config.state_dim, env_config.action_dim)
        got = (header["state_dim"], header["action_dim"])
        if want != got:
            raise CheckpointError(
                f"{path}: checkpoint was trained for K={got[1] // 2} holder types, "
                f"this setting has K={env_config.K}"
            )
    try:
        networks = {k: _net_from_dict(v) for k, v in nets.items()}
        if header["kind"] == "gdm":
            schedule = DiffusionSchedule(np.array(header["schedule"]))
            agent = GdmAgent(header["state_dim"], header["action_dim"], schedule,
                             hidden=tuple(header["hidden"]), time_dim=header["time_dim"],
                             exploration_noise=header["exploration_noise"],
                             discount=header["discount"],
                             reward_scale=header["reward_scale"],
                             presquash_reg=header["presquash_reg"],
                             rng=np.random.default_rng(0))
        elif header["kind"] == "ppo":
            agent = PpoAgent(header["state_dim"], header["action_dim"],
                             tuple(header["hidden"]), header["clip_ratio"],
                             header["gae_lambda"], header["discount"],
                             reward_scale=header["reward_scale"],
                             rng=np.random.default_rng(0))
            agent.log_std = np.array(header["log_std"], dtype=float)
        else:
            raise CheckpointError(f"{path}: unknown agent kind {header['kind']!r}")
        expected = set(agent.networks())
        if set(networks) != expected:
            raise CheckpointError(f"{path}: expected networks {sorted(expected)}")
        for name, net in networks.items():
            if not net.same_architecture(agent.networks()[name]):
                raise CheckpointError(f"{path}: network {name!r} has the wrong shape")
            setattr(agent, name, net)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc
    return agent


# ------------------------------------------------------------------- runs


def run_id(solver: str, seed: int) -> str:
    return f"{solver}_seed{seed}"


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_metrics(path, rid, solver, seed, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for r in records:
            w.writerow([rid, solver, seed, r["episode"], _fmt(r["train_reward"]),
                        _fmt(r["eval_reward"]), _fmt(r["feasible_rate"]),
                        _fmt(r["wall_clock"])])


def write_menus(path, states, menus):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MENU_COLUMNS)
        for i, (state, menu) in enumerate(zip(states, menus)):
            pop = state.population()
            ok = int(is_feasible(menu, pop))
            for k, (d, q, f, r) in enumerate(zip(pop.deltas, pop.probabilities,
                                                 menu.frequencies, menu.rewards)):
                w.writerow([i, k, _fmt(d), _fmt(q), _fmt(f), _fmt(r), ok])


def _baseline_menus(solver, cfg: ExperimentConfig, states, seed):
    env = cfg.env
    grid = GridSpec(f_bounds=env.f_bounds, r_bounds=env.r_bounds)
    if solver == "complete-info":
        return [complete_info_optimum(s, env.provider_for(s), grid)[0] for s in states]
    if solver == "greedy":
        return [greedy_menu(s, env.provider_for(s), grid) for s in states]
    rng = np.random.default_rng(seed)
    return [random_menu(s, env, rng) for s in states]


def _evaluate_menus(cfg: ExperimentConfig, states, menus, observable=False):
    """Mean reward and feasible rate; ``observable`` types need IR only."""
    env = cfg.env
    if observable:
        rewards = [provider_expected_utility(m, s.population(), env.provider_for(s))
                   for s, m in zip(states, menus)]
        feasible = [all(check_ir(m, s.population())) for s, m in zip(states, menus)]
    else:
        rewards = [env_step(s, m, env.provider_for(s), env.penalty_policy)
                   for s, m in zip(states, menus)]
        feasible = [is_feasible(m, s.population()) for s, m in zip(states, menus)]
    return float(np.mean(rewards)), float(np.mean(feasible))


def run_solver(cfg: ExperimentConfig, solver: str, seed: int, records=None):
    """Run one (solver, seed) pair; returns ``(records, menus, agent)``.

    ``records`` collects the per-episode rows as they are produced, so a
    caller still holds the partial series when training fails.
    """
    records = [] if records is None else records
    states = evaluation_states(cfg.env, cfg.eval_states, cfg.eval_seed)
    start = time.perf_counter()
    if solver in LEARNED:
        if solver == "gdm":
            tc = dataclasses.replace(cfg.gdm, seed=seed)
            result = train(cfg.env, tc, progress=records.append)
            policy = gdm_policy(result.agent)
        else:
            pc = dataclasses.replace(cfg.ppo, seed=seed)
            result = train_ppo(cfg.env, pc, progress=records.append)
            policy = ppo_policy(result.agent)
        ev = evaluate_policy(policy, cfg.env, states, cfg.eval_seed)
        return records, ev["menus"], result.agent
    menus = _baseline_menus(solver, cfg, states, seed)
    mean, rate = _evaluate_menus(cfg, states, menus, observable=solver == "complete-info")
    records.append({"episode": 0, "train_reward": float("nan"), "eval_reward": mean,
                    "feasible_rate": rate, "wall_clock": time.perf_counter() - start})
    return records, menus, None


def execute(cfg: ExperimentConfig) -> int:
    """Run every (solver, seed) pair of a parsed config; returns an exit code."""
    out = cfg.output_dir
    states = evaluation_states(cfg.env, cfg.eval_states, cfg.eval_seed)
    for solver in cfg.solvers:
        for seed in cfg.seeds:
            rid = run_id(solver, seed)
            records = []
            log.info("running %s", rid)
            try:
                records, menus, agent = run_solver(cfg, solver, seed, records)
            except (NumericError, FloatingPointError) as exc:
                log.error("%s: numeric failure: %s", rid, exc)
                write_metrics(out / "metrics" / f"{rid}.partial.csv", rid, solver, seed,
                              records)
                return EXIT_NUMERIC
            write_metrics(out / "metrics" / f"{rid}.csv", rid, solver, seed, records)
            write_menus(out / "menus" / f"{rid}.csv", states, menus)
            if agent is not None:
                save_checkpoint(agent, out / "checkpoints" / f"{rid}.json")
    return EXIT_OK


def run_experiment(config_path) -> int:
    """Parse, validate and run a config file; returns the process exit code."""
    try:
        cfg = load_config(config_path)
        cfg.seeds = seeds_from_env(cfg.seeds)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot create output directory: %s", exc)
        return EXIT_CONFIG
    return execute(cfg)


# -------------------------------------------------------------- summaries


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = tuple(reader.fieldnames or ())
        if cols != METRICS_COLUMNS:
            missing = [c for c in METRICS_COLUMNS if c not in cols]
            extra = [c for c in cols if c not in METRICS_COLUMNS]
            raise SchemaError(
                f"{path}: unexpected columns (missing {missing}, unexpected {extra})"
            )
        return list(reader)


def _menu_means(metrics_path):
    menu_path = Path(metrics_path).parent.parent / "menus" / Path(metrics_path).name
    if not menu_path.exists():
        return None
    with open(menu_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    K = 1 + max(int(r["type"]) for r in rows)
    f = np.zeros(K)
    r_ = np.zeros(K)
    n = np.zeros(K)
    for row in rows:
        k = int(row["type"])
        f[k] += float(row["frequency"])
        r_[k] += float(row["reward"])
        n[k] += 1
    return f / n, r_ / n


SUMMARY_COLUMNS = ("solver", "runs", "eval_mean", "eval_std", "feasible_mean")


def summarize(paths):
    """Per-solver final evaluation reward across runs, plus mean menu per type.

    Returns a list of row dicts; extra columns ``f_k`` and ``R_k`` hold the
    mean inferred menu where menus sit next to the metrics files.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("summarize needs at least one metrics file")
    finals = {}
    menus = {}
    for p in paths:
        rows = read_metrics(p)
        if not rows:
            raise SchemaError(f"{p}: no rows")
        solver = rows[0]["solver"]
        last = [r for r in rows if r["eval_reward"] != "nan"][-1]
        finals.setdefault(solver, []).append(
            (float(last["eval_reward"]), float(last["feasible_rate"])))
        mm = _menu_means(p)
        if mm is not None:
            menus.setdefault(solver, []).append(mm)
    table = []
    for solver in sorted(finals):
        vals = np.array([v for v, _ in finals[solver]])
        rates = np.array([r for _, r in finals[solver]])
        row = {"solver": solver, "runs": len(vals), "eval_mean": float(vals.mean()),
               "eval_std": float(vals.std()), "feasible_mean": float(rates.mean())}
        if solver in menus:
            f = np.mean([m[0] for m in menus[solver]], axis=0)
            r = np.mean([m[1] for m in menus[solver]], axis=0)
            for k in range(f.size):
                row[f"f_{k}"] = float(f[k])
                row[f"R_{k}"] = float(r[k])
        table.append(row)
    return table


def format_table(table) -> str:
    cols = list(SUMMARY_COLUMNS)
    for row in table:
        cols.extend(c for c in row if c not in cols)
    lines = [",".join(cols)]
    for row in table:
        cells = []
        for c in cols:
            v = row.get(c, "")
            cells.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines)


def expand_globs(patterns):
    paths = []
    for pat in patterns:
        hits = sorted(_glob.glob(str(pat)))
        paths.extend(hits if hits else [pat])
    return [p for p in paths if not str(p).endswith(".partial.csv")]

