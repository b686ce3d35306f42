"""
Evaluation of agents over sequences of doors, the summary statistics reported for each comparison
and the CSV reports written for them.
"""
import csv
import math
import os
import subprocess

from dataclasses import dataclass, field, fields

import numpy as np

from hinge.rl.adaptation import load_adaptation
from hinge.rl.agents import AdaptiveAgent, BasePolicyAgent, EndToEndAgent, SixDofAgent
from hinge.rl.doorsim import DoorSimulator, write_trajectory
from hinge.rl.encoder_vae import load_vae
from hinge.rl.envdomain import PARAM_RANGES, env_hash, narrow_ranges, sample_env
from hinge.rl.errors import ExperimentError
from hinge.rl.kinematics import twist_from_action
from hinge.rl.logger import HingeLogger
from hinge.rl.policy_ppo import load_policy, reward, reward_6dof

logger = HingeLogger.getLogger()

EVAL_MIN_SPEED = 0.18


def percentile(data, p):
    """
    Nearest-rank percentile: the sorted value at rank ceil(p / 100 * N).
    """
    values = np.asarray(data, dtype=float).reshape(-1)
    if values.size == 0:
        raise ExperimentError("Percentile of empty data.")
    if not 0.0 <= p <= 100.0:
        raise ExperimentError(f"Percentile must lie in [0, 100], got {p}.")
    return float(np.percentile(values, p, method="inverted_cdf"))


def evaluation_ranges(eval_min_speed=EVAL_MIN_SPEED, ranges=PARAM_RANGES):
    """
    Door ranges for evaluation, the speed row limited to speeds fast enough to pass the success angle
    within one episode. A minimum speed of zero keeps the full row.
    """
    if eval_min_speed <= 0.0:
        return ranges
    low, high = ranges.bounds["target_speed"]
    return narrow_ranges(ranges, target_speed=(low, min(high, -eval_min_speed)))


@dataclass
class EpisodeRecord:
    env_hash: str
    success: bool
    r_errors: np.ndarray
    theta_errors: np.ndarray
    velocity_errors: np.ndarray
    force_norms: np.ndarray
    torque_norms: np.ndarray
    rewards: np.ndarray
    rows: list = field(default_factory=list)


@dataclass
class MetricsReport:
    success_rate: float
    r_error_mean: float
    r_error_p90: float
    theta_error_mean: float
    theta_error_p90: float
    velocity_error_mean: float
    velocity_error_p90: float
    force_mean: float
    force_max: float
    force_p50: float
    force_p90: float
    torque_mean: float
    torque_max: float
    torque_p50: float
    torque_p90: float
    episodes: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ExperimentError(f"Success rate {self.success_rate} outside [0, 1].")
        for name in ("force", "torque"):
            p50, p90, top = (getattr(self, f"{name}_{key}") for key in ("p50", "p90", "max"))
            if not p50 <= p90 <= top:
                raise ExperimentError(f"{name} percentiles are not monotone: {p50}, {p90}, {top}.")


def run_episode(agent, simulator, e, rng, weights=None, keep_rows=False):
    """
    Run *agent* on door *e* until the episode ends.

    :return: EpisodeRecord.
    """
    observation = simulator.reset(e, rng)
    if agent.privileged:
        agent.set_privileged(e, simulator.ground_truth())
    agent.reset(observation, e.target_speed)

    r_errors, theta_errors, velocity_errors, force_norms, torque_norms, rewards, rows = ([] for _ in range(7))
    done = False
    while not done:
        r, theta = simulator.ground_truth()
        twist, action = agent.act(observation)
        ideal = twist_from_action(r, theta, e.target_speed)
        observation, done, _ = simulator.step(twist)
        wrench = observation.wrench()
        if agent.action_dim == 2:
            r_errors.append(abs(action[0] - r))
            theta_errors.append(abs(action[1] - theta))
            step_reward = reward(r, theta, action[0], action[1], wrench, weights)
        else:
            step_reward = reward_6dof(twist, ideal, wrench, theta, weights)
        velocity_errors.append(float(np.linalg.norm(twist.vector() - ideal.vector())))
        force_norms.append(float(np.linalg.norm(wrench.force)))
        torque_norms.append(float(np.linalg.norm(wrench.torque)))
        rewards.append(step_reward)
        if keep_rows:
            rows.append((observation.step_index, observation.door_angle, observation.s.copy(), action, step_reward))

    return EpisodeRecord(env_hash(e), simulator.success(), np.array(r_errors), np.array(theta_errors),
                         np.array(velocity_errors), np.array(force_norms), np.array(torque_norms), np.array(rewards),
                         rows)


def evaluation_doors(episodes, seed, ranges):
    rng = np.random.default_rng(seed)
    return [sample_env(rng, ranges) for _ in range(episodes)]


def evaluate(agent, episodes=20, seed=0, ranges=None, sim_config=None, per_episode=False, weights=None,
             keep_rows=False):
    """
    Evaluate *agent* on a door sequence fixed by *seed*, so every agent evaluated with the same seed
    sees the same doors.

    :param per_episode: Average each episode first instead of pooling all steps.
    :return: Tuple of (MetricsReport, list of EpisodeRecord).
    """
    if episodes < 1:
        raise ExperimentError("Evaluation needs at least one episode.")
    ranges = evaluation_ranges() if ranges is None else ranges
    simulator = DoorSimulator(sim_config)
    records = []
    for index, e in enumerate(evaluation_doors(episodes, seed, ranges)):
        records.append(run_episode(agent, simulator, e, np.random.default_rng([seed, index]), weights, keep_rows))

    report = summarize(records, seed, agent.action_dim, per_episode)
    logger.info(f"{type(agent).__name__}: success {report.success_rate:.2f}, |r error| {report.r_error_mean:.4f}, "
                f"|theta error| {report.theta_error_mean:.4f}, force {report.force_mean:.3f} N, "
                f"torque {report.torque_mean:.3f} N m")
    return report, records


def summarize(records, seed, action_dim=2, per_episode=False):
    def gather(name):
        if per_episode:
            return np.array([getattr(record, name).mean() for record in records])
        return np.concatenate([getattr(record, name) for record in records])

    def mean_and_p90(name):
        if action_dim != 2:
            return math.nan, math.nan
        values = gather(name)
        return float(values.mean()), percentile(values, 90)

    r_mean, r_p90 = mean_and_p90("r_errors")
    theta_mean, theta_p90 = mean_and_p90("theta_errors")
    velocity = gather("velocity_errors")
    force = gather("force_norms")
    torque = gather("torque_norms")
    return MetricsReport(
        success_rate=float(np.mean([record.success for record in records])),
        r_error_mean=r_mean, r_error_p90=r_p90,
        theta_error_mean=theta_mean, theta_error_p90=theta_p90,
        velocity_error_mean=float(velocity.mean()), velocity_error_p90=percentile(velocity, 90),
        force_mean=float(force.mean()), force_max=float(force.max()),
        force_p50=percentile(force, 50), force_p90=percentile(force, 90),
        torque_mean=float(torque.mean()), torque_max=float(torque.max()),
        torque_p50=percentile(torque, 50), torque_p90=percentile(torque, 90),
        episodes=len(records), seed=seed)


def git_revision():
    try:
        result = subprocess.run(["git", "rev-parse", "HEAD"], cwd=os.path.dirname(os.path.abspath(__file__)),
                                capture_output=True, text=True, check=True)
        return result.stdout.strip() or "unknown"
    except (OSError, subprocess.CalledProcessError):
        return "unknown"


def header_block(experiment, table, config_digest, seed, door_hashes=None):
    lines = [
        f"# experiment: {experiment}",
        f"# table: {table}",
        f"# config_hash: {config_digest}",
        f"# seed: {seed}",
        f"# git_revision: {git_revision()}",
    ]
    if door_hashes:
        lines.append(f"# doors: {' '.join(door_hashes)}")
    return "".join(line + "\n" for line in lines)


def _format(value):
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_rows_csv(filename, rows, header=""):
    """
    Write a list of *dict* rows sharing the same keys, such as a training curve.
    """
    with open(filename, 'w', newline='') as f:
        f.write(header)
        writer = csv.writer(f)
        if not rows:
            return
        names = list(rows[0])
        writer.writerow(names)
        for row in rows:
            writer.writerow([_format(row[name]) for name in names])


def write_metrics_csv(filename, reports, header=""):
    """
    One row per named MetricsReport.

    :param reports: *dict* of arm name to MetricsReport, written in insertion order.
    """
    with open(filename, 'w', newline='') as f:
        f.write(header)
        writer = csv.writer(f)
        names = [item.name for item in fields(MetricsReport)]
        writer.writerow(["arm"] + names)
        for arm, report in reports.items():
            writer.writerow([arm] + [_format(getattr(report, name)) for name in names])


def write_comparison_csv(filename, reports, header=""):
    """
    Metrics as rows and arms as columns, the side-by-side layout of the comparison tables.
    """
    arms = list(reports)
    with open(filename, 'w', newline='') as f:
        f.write(header)
        writer = csv.writer(f)
        writer.writerow(["metric"] + arms)
        for name in (item.name for item in fields(MetricsReport)):
            writer.writerow([name] + [_format(getattr(reports[arm], name)) for arm in arms])


def write_episode_csv(filename, records_by_arm, header=""):
    """
    One row per episode per arm with the episode means, ready for box plots.
    """
    with open(filename, 'w', newline='') as f:
        f.write(header)
        writer = csv.writer(f)
        writer.writerow(["arm", "episode", "env_hash", "success", "r_error_mean", "theta_error_mean",
                         "force_mean", "torque_mean"])
        for arm, records in records_by_arm.items():
            for index, record in enumerate(records):
                r_mean = record.r_errors.mean() if record.r_errors.size else math.nan
                theta_mean = record.theta_errors.mean() if record.theta_errors.size else math.nan
                writer.writerow([arm, index, record.env_hash, int(record.success), _format(float(r_mean)),
                                 _format(float(theta_mean)), _format(float(record.force_norms.mean())),
                                 _format(float(record.torque_norms.mean()))])


def write_episode_trajectory(filename, record, action_dim=2, header=""):
    write_trajectory(filename, record.rows, action_dim, header)


@dataclass
class Experiment:
    """
    A named comparison: its table identifier and, per arm, the checkpoints it loads.
    """
    name: str
    table: str
    arms: tuple


EXPERIMENTS = {
    "sd_vs_dr": Experiment("sd_vs_dr", "single_door_vs_domain_randomization",
                           (("single_door", "single_door_policy"), ("domain_randomized", "policy"))),
    "we_vs_woe": Experiment("we_vs_woe", "with_encoder_vs_without_encoder",
                            (("with_encoder", "policy"), ("without_encoder", "no_encoder_policy"))),
    "2dof_vs_6dof": Experiment("2dof_vs_6dof", "two_dof_vs_six_dof",
                               (("six_dof", "six_dof_policy"), ("two_dof", "policy"))),
    "ap_vs_fap": Experiment("ap_vs_fap", "adaptive_vs_finetuned_adaptive",
                            (("bp", "policy"), ("ap", "adaptation"), ("fap", "finetuned_adaptation"))),
    "rtheta_vs_velocity": Experiment("rtheta_vs_velocity", "rtheta_supervised_vs_velocity_supervised",
                                     (("rtheta", "policy"), ("velocity", "velocity_policy"))),
}


@dataclass
class ExperimentSpec:
    name: str
    checkpoints: dict
    episodes: int = 20
    seed: int = 0
    eval_min_speed: float = EVAL_MIN_SPEED
    per_episode: bool = False
    sample_latent: bool = True

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ExperimentError(f"Unknown experiment {self.name}, expected one of {', '.join(EXPERIMENTS)}.")
        if self.episodes < 1:
            raise ExperimentError("Experiments need at least one episode per arm.")

    def experiment(self):
        return EXPERIMENTS[self.name]

    def required_checkpoints(self):
        keys = [key for _, key in self.experiment().arms] + ["encoder"]
        if self.name == "ap_vs_fap":
            keys.append("policy")
        return sorted(set(keys))

    def checkpoint(self, key):
        path = self.checkpoints.get(key)
        if path is None or not os.path.isfile(path):
            raise ExperimentError(f"Experiment {self.name} needs the {key} checkpoint, got {path}.")
        return path

    def check(self):
        for key in self.required_checkpoints():
            self.checkpoint(key)


def build_agents(spec):
    """
    Load the checkpoints of every arm of *spec* and wrap them in agents.

    :return: *dict* of arm name to Agent, in the experiment's arm order.
    """
    spec.check()
    encoder = load_vae(spec.checkpoint("encoder"))
    agents = {}
    for index, (arm, key) in enumerate(spec.experiment().arms):
        rng = np.random.default_rng([spec.seed, 1000 + index])
        if key in ("adaptation", "finetuned_adaptation"):
            agents[arm] = AdaptiveAgent(load_adaptation(spec.checkpoint(key)), load_policy(spec.checkpoint("policy")),
                                        rng, spec.sample_latent)
            continue
        policy = load_policy(spec.checkpoint(key))
        if policy.end_to_end:
            agents[arm] = EndToEndAgent(policy)
        elif policy.action_dim == 6:
            agents[arm] = SixDofAgent(policy, encoder)
        else:
            agents[arm] = BasePolicyAgent(policy, encoder)
    return agents


def run_ablation(spec, agents=None, sim_config=None):
    """
    Evaluate every arm of *spec* on the same door sequence.

    :param agents: Optional prebuilt agents keyed by arm, otherwise loaded from the checkpoints.
    :return: Tuple of (*dict* arm to MetricsReport, *dict* arm to EpisodeRecord list).
    """
    agents = build_agents(spec) if agents is None else agents
    ranges = evaluation_ranges(spec.eval_min_speed)
    reports, records = {}, {}
    for arm, agent in agents.items():
        logger.info(f"Experiment {spec.name}: evaluating {arm}")
        reports[arm], records[arm] = evaluate(agent, spec.episodes, spec.seed, ranges, sim_config, spec.per_episode)

    hashes = [[record.env_hash for record in arm_records] for arm_records in records.values()]
    if any(h != hashes[0] for h in hashes):
        raise ExperimentError(f"Arms of {spec.name} saw different door sequences.")
    return reports, records


def compare_bp_ap_fap(spec, agents=None, sim_config=None):
    """
    Base policy, adaptive policy and fine-tuned adaptive policy on identical doors.

    :return: Tuple of (*dict* of the three MetricsReport, *dict* of their EpisodeRecord lists).
    """
    if spec.name != "ap_vs_fap":
        raise ExperimentError(f"The base/adaptive/fine-tuned comparison runs as ap_vs_fap, got {spec.name}.")
    return run_ablation(spec, agents, sim_config)
