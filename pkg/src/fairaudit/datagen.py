"""Synthetic federation generation and experiment orchestration.

The generator produces per-participant datasets with controlled protected
attribute prevalence and a tunable ground-truth parity gap; the experiment
runner wires generation, aggregation, verification, release, and the
attack harness together and writes all artifacts to disk. Reported
ground-truth metrics always come from the brute-force oracle, never from
the generator's target parameter.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import commitments as cm
from . import crypto
from . import fairness as fs
from . import netsim
from . import privacy
from . import protocol as proto


class ConfigError(Exception):
    pass


class LowerBoundViolationError(ConfigError):
    """The target epsilon is below the verification lower bound."""


@dataclass(frozen=True)
class FederationConfig:
    n_participants: int = 10
    records_min: int = 100
    records_max: int = 500
    n_attributes: int = 1
    prevalence_low: float = 0.05
    prevalence_high: float = 0.45
    base_positive_rate: float = 0.5
    score_disparity: float = 0.0  # target gap in positive-score rates
    seed: int = 0

    def __post_init__(self):
        if self.n_participants < 1:
            raise ConfigError("need at least one participant")
        if not 1 <= self.records_min <= self.records_max:
            raise ConfigError("records range must satisfy 1 <= min <= max")
        if not 1 <= self.n_attributes <= 3:
            raise ConfigError("n_attributes must be in [1, 3]")
        if not 0 < self.prevalence_low <= self.prevalence_high < 1:
            raise ConfigError("prevalence range must lie inside (0, 1)")
        if not 0 < self.base_positive_rate < 1:
            raise ConfigError("base positive rate must lie inside (0, 1)")
        if not -1.0 <= self.score_disparity <= 1.0:
            raise ConfigError("score_disparity must lie in [-1, 1]")


def _group_score_rates(disparity: float) -> tuple[float, float]:
    half = disparity / 2
    lo, hi = 0.5 - half, 0.5 + half
    shift = max(0.0, -lo) - max(0.0, hi - 1.0)
    return lo + shift, hi + shift


def generate_federation(cfg: FederationConfig) -> list[fs.Dataset]:
    """Deterministic per-seed federation with exact-count minority fractions.

    Group a = 1 receives positive scores at rate 0.5 + disparity/2, group
    a = 0 at 0.5 - disparity/2, so the pooled parity gap at threshold 0.5
    approximates score_disparity.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    rate0, rate1 = _group_score_rates(cfg.score_disparity)
    datasets = []
    for _ in range(cfg.n_participants):
        m = int(rng.integers(cfg.records_min, cfg.records_max + 1))
        prevalence = float(rng.uniform(cfg.prevalence_low, cfg.prevalence_high))
        # exact minority count keeps every empirical fraction inside the range
        k = int(round(m * prevalence))
        k = min(max(k, math.ceil(cfg.prevalence_low * m)),
                math.floor(cfg.prevalence_high * m))
        first = np.zeros(m, dtype=np.int64)
        first[rng.permutation(m)[:k]] = 1
        attrs = np.empty((m, cfg.n_attributes), dtype=np.int64)
        attrs[:, 0] = first
        for j in range(1, cfg.n_attributes):
            attrs[:, j] = rng.integers(0, 2, m)
        labels = (rng.random(m) < cfg.base_positive_rate).astype(np.int64)
        positive_rate = np.where(attrs[:, 0] == 1, rate1, rate0)
        is_positive = rng.random(m) < positive_rate
        scores = np.where(is_positive,
                          0.55 + 0.45 * rng.random(m),
                          0.45 * rng.random(m))
        # 4-dim per-(a, y) Gaussian features; unused by the score oracle
        centers = attrs[:, 0] * 2.0 + labels
        features = rng.normal(0.0, 1.0, (m, 4)) + centers[:, None]
        datasets.append(fs.Dataset(labels=labels, attributes=attrs,
                                   scores=scores, features=features))
    return datasets


@dataclass(frozen=True)
class ExperimentConfig:
    federation: FederationConfig
    sigma: float = 1.0
    epsilon_target: float | None = None
    tau: float | None = None
    delta: float = 1e-6
    delta_prime: float = 1e-6
    delta_fair: float = 0.05
    threshold_k: int = 3
    trustees: int = 5
    batch_size: int = 4
    key_bits: int = 512
    rounds_T: int = 1
    verified: bool = False
    defense: privacy.DefenseConfig | None = None
    adversary: netsim.AdversaryConfig | None = None
    attack: netsim.AttackScenario | None = None
    attack_trials: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if not 1 <= self.threshold_k <= self.trustees:
            raise ConfigError("need 1 <= threshold_k <= trustees")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.rounds_T < 0:
            raise ConfigError("rounds_T must be >= 0")
        if self.adversary is not None:
            self.adversary.validate(self.federation.n_participants)

    def to_json(self) -> str:
        obj = asdict(self)
        if self.adversary is not None:
            obj["adversary"]["corrupted"] = sorted(self.adversary.corrupted)
        return json.dumps(obj, sort_keys=True)

    @classmethod
    def from_json(cls, data: str) -> "ExperimentConfig":
        obj = json.loads(data)
        obj["federation"] = FederationConfig(**obj["federation"])
        if obj.get("defense") is not None:
            obj["defense"] = privacy.DefenseConfig(**obj["defense"])
        if obj.get("adversary") is not None:
            adv = obj["adversary"]
            adv["corrupted"] = frozenset(adv["corrupted"])
            obj["adversary"] = netsim.AdversaryConfig(**adv)
        if obj.get("attack") is not None:
            obj["attack"] = netsim.AttackScenario(**obj["attack"])
        return cls(**obj)


def validate_lower_bound(cfg: ExperimentConfig, n0: int, n1: int) -> float:
    """Reject configs whose target epsilon cannot verify parity within tau."""
    if cfg.tau is None or cfg.epsilon_target is None:
        return 0.0
    bound = privacy.verification_lower_bound(cfg.tau, max(n0, 1), max(n1, 1))
    if cfg.epsilon_target < bound:
        raise LowerBoundViolationError(
            f"epsilon target {cfg.epsilon_target} is below the verification "
            f"lower bound {bound:.6g} for tau={cfg.tau}, min group {min(n0, n1)}"
        )
    return bound


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


@dataclass
class ExperimentResult:
    report: fs.FairnessReport
    counters: proto.OpCounters
    verified_result: proto.VerifiedResult | None
    artifacts: dict


def run_experiment(cfg: ExperimentConfig, output_dir: str | Path) -> ExperimentResult:
    """End-to-end run writing report JSON, op-counter CSV, transcript JSONL,
    and (when enabled) the attack CSV. Deterministic per (config, seed)."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    datasets = generate_federation(cfg.federation)
    pooled = fs.pool_datasets(datasets)
    truth = fs.brute_force_metrics(pooled)
    yhat_groups = pooled.attributes[:, 0]
    n0 = int(np.sum(yhat_groups == 0))
    n1 = int(np.sum(yhat_groups == 1))
    lower_bound = validate_lower_bound(cfg, n0, n1)

    stats = [fs.extract_local_stats(d) for d in datasets]
    noise = privacy.NoiseSpec(scale_sigma=cfg.sigma)
    pk, sk = crypto.keygen(cfg.key_bits, random.Random(cfg.seed))
    shares = crypto.share_key(sk, cfg.threshold_k, cfg.trustees,
                              random.Random(cfg.seed + 1))

    snapshot = {
        "sigma": cfg.sigma,
        "rounds_T": cfg.rounds_T,
        "delta": cfg.delta,
        "local_epsilon": noise.local_epsilon,
        "lower_bound": lower_bound,
    }
    if cfg.rounds_T > 0 and cfg.sigma > 0:
        snapshot["protocol_epsilon"] = privacy.protocol_epsilon(
            cfg.sigma, cfg.federation.n_participants, cfg.rounds_T, cfg.delta
        )

    verified_result = None
    if cfg.verified:
        claims = [proto.ParticipantClaim(stats=s) for s in stats]
        if cfg.adversary is not None:
            claims = netsim.apply_adversary(cfg.adversary, claims)
        ck = cm.default_commitment_key()
        verified_result = proto.run_verified_aggregation(
            claims, noise, pk, shares, ck, seed=cfg.seed
        )
        counters = verified_result.counters
        if not verified_result.success:
            _write_json(out / "report.json", {
                "aborted": True,
                "aborted_party": verified_result.aborted_party,
                "abort_reason": verified_result.abort_reason,
            })
            _write_csv(out / "opcounts.csv", [counters.as_dict()])
            return ExperimentResult(report=None, counters=counters,
                                    verified_result=verified_result,
                                    artifacts={"report": str(out / "report.json")})
        agg = verified_result.aggregate
        report = fs.build_report(agg, sigma=cfg.sigma,
                                 n_participants=cfg.federation.n_participants,
                                 delta_fair=cfg.delta_fair,
                                 privacy_snapshot=snapshot)
        if not verified_result.consistency_ok:
            report.notes.append("consistency extension flagged a committed/encrypted mismatch")
        submissions, _ = proto.prepare_submissions(stats, noise, pk, seed=cfg.seed)
    else:
        agg, report, counters = proto.run_secure_aggregation(
            stats, noise, pk, shares, seed=cfg.seed,
            delta_fair=cfg.delta_fair, privacy_snapshot=snapshot,
        )
        submissions, _ = proto.prepare_submissions(stats, noise, pk, seed=cfg.seed)

    plan = proto.plan_tree(cfg.federation.n_participants, cfg.batch_size)
    tree = proto.run_batched_verification(submissions, plan, pk, proto.OpCounters())
    proto.verify_tree_replay(tree, pk, tree.counters)

    if cfg.defense is not None:
        release_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 1)))
        released, pre = proto.release_metric(report.dp_violation, cfg.defense, release_rng)
        report.released_dp = released
        report.released_dp_pre_clamp = pre

    # transcript: deterministic delivery trace of the submission round
    model = netsim.NetworkModel(jitter_seed=cfg.seed)
    envelopes = [
        netsim.Envelope(
            send_time_ms=0.0, sender=sub.sender,
            receiver=cfg.federation.n_participants,
            message=proto.ProtocolMessage(
                kind=proto.KIND_STAT_SUBMISSION, sender=sub.sender,
                logical_timestamp=sub.sender,
                payload=proto.ciphertexts_payload(sub.ciphertexts),
            ),
        )
        for sub in submissions
    ]
    trace = netsim.schedule(envelopes, model)
    with open(out / "transcript.jsonl", "w") as fh:
        for event in trace:
            line = json.loads(event.message.to_jsonl())
            line["deliver_time_ms"] = format(event.deliver_time_ms, ".9g")
            line["receiver"] = event.receiver
            fh.write(json.dumps(line, sort_keys=True) + "\n")
        for node in tree.all_nodes:
            fh.write(json.dumps({
                "kind": "tree_token", "level": node.level, "node": node.index,
                "token_hex": node.token.hex(),
            }, sort_keys=True) + "\n")

    report_obj = json.loads(report.to_json())
    report_obj["ground_truth"] = {
        "dp_violation": truth.dp,
        "eo_violation": truth.eo,
        "n0": n0,
        "n1": n1,
    }
    report_obj["tree"] = {
        "batch_size": cfg.batch_size,
        "levels": plan.level_count,
        "additions_per_statistic": tree.counters.homomorphic_additions // proto.N_STATS,
        "rounds": tree.counters.rounds,
        "verification_ops": tree.counters.verification_ops,
    }
    _write_json(out / "report.json", report_obj)

    op_rows = [dict(stage="aggregation", **counters.as_dict()),
               dict(stage="tree_verification", **tree.counters.as_dict())]
    _write_csv(out / "opcounts.csv", op_rows)

    artifacts = {
        "report": str(out / "report.json"),
        "opcounts": str(out / "opcounts.csv"),
        "transcript": str(out / "transcript.jsonl"),
    }

    if cfg.attack is not None and cfg.attack_trials > 0:
        result = netsim.run_attribute_inference(cfg.attack, cfg.attack_trials,
                                                seed=cfg.seed)
        _write_csv(out / "attack.csv", result.rows())
        _write_json(out / "attack_summary.json", {
            "trials": result.trials,
            "success_rate": result.success_rate,
            "binomial_stderr": netsim.binomial_stderr(result.trials),
        })
        artifacts["attack"] = str(out / "attack.csv")

    return ExperimentResult(report=report, counters=counters,
                            verified_result=verified_result, artifacts=artifacts)


# --- presets ---

TREE_SCALING_SIZES = (10, 30, 50, 100)
TRADEOFF_EPSILONS = (0.25, 0.5, 0.75, 1.0, 1.5, 2.0)


def _clone_submissions(pk: crypto.PublicKey, n: int, seed: int) -> list[proto.Submission]:
    """n structurally distinct submissions sharing one ciphertext vector;
    sufficient for op counting, which never inspects plaintexts."""
    rng = np.random.default_rng(seed)
    ds = fs.Dataset(labels=rng.integers(0, 2, 50),
                    attributes=rng.integers(0, 2, (50, 1)),
                    scores=rng.random(50))
    stats = fs.extract_local_stats(ds)
    base, _ = proto.prepare_submissions([stats], privacy.NoiseSpec(scale_sigma=0.0),
                                        pk, seed=seed)
    template = base[0]
    return [
        proto.Submission(sender=i, ciphertexts=list(template.ciphertexts),
                         noised_units=template.noised_units,
                         true_counts=template.true_counts,
                         sample_size=template.sample_size)
        for i in range(n)
    ]


def tree_scaling_rows(pk: crypto.PublicKey, sizes=TREE_SCALING_SIZES,
                      batch_size: int = 4, seed: int = 0) -> list[dict]:
    rows = []
    for n in sizes:
        subs = _clone_submissions(pk, n, seed)
        plan = proto.plan_tree(n, batch_size)
        tree = proto.run_batched_verification(subs, plan, pk)
        proto.verify_tree_replay(tree, pk, tree.counters)
        naive = proto.naive_pairwise_verification(subs)
        rows.append({
            "n": n,
            "batch_size": batch_size,
            "additions_per_statistic": tree.counters.homomorphic_additions // proto.N_STATS,
            "rounds": tree.counters.rounds,
            "verification_ops": tree.counters.verification_ops,
            "naive_verification_ops": naive.verification_ops,
            "naive_to_batched_ratio": naive.verification_ops / tree.counters.verification_ops,
        })
    return rows


def run_preset_tree_scaling(output_dir: str | Path, seed: int = 0,
                            key_bits: int = 512, batch_size: int = 4) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pk, _ = crypto.keygen(key_bits, random.Random(seed))
    rows = tree_scaling_rows(pk, batch_size=batch_size, seed=seed)
    path = out / "tree_scaling.csv"
    _write_csv(path, rows)
    return path


def tradeoff_rows(seed: int = 0, epsilons=TRADEOFF_EPSILONS, reps: int = 200,
                  fed: FederationConfig | None = None) -> list[dict]:
    """Mean released-metric error per epsilon, with common random numbers:
    the same unit Laplace draws are rescaled for every epsilon so the error
    column is monotone non-increasing by construction of the mechanism."""
    fed = fed or FederationConfig(n_participants=20, records_min=500,
                                  records_max=1000, score_disparity=0.2,
                                  seed=seed)
    datasets = generate_federation(fed)
    pooled = fs.pool_datasets(datasets)
    truth = fs.brute_force_metrics(pooled).dp
    counts = fs.sum_statistics([fs.extract_local_stats(d) for d in datasets])
    fp = 10**6
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    unit_noise = rng.laplace(0.0, 1.0, (reps, proto.N_STATS))
    rows = []
    for eps in epsilons:
        sigma = 1.0 / eps
        errors = []
        for r in range(reps):
            noised = counts.ravel() * fp + np.rint(unit_noise[r] * sigma * fp).astype(np.int64)
            agg = fs.AggregateStatistics(
                noised_fixed_point=noised.reshape(2, 2, 2), fixed_point_scale=fp
            )
            errors.append(abs(fs.dp_violation(agg, allow_degenerate=True) - truth))
        rows.append({
            "epsilon": eps,
            "sigma": sigma,
            "mean_abs_error": float(np.mean(errors)),
            "reps": reps,
            "ground_truth_dp": truth,
        })
    return rows


def run_preset_tradeoff(output_dir: str | Path, seed: int = 0,
                        reps: int = 200) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = tradeoff_rows(seed=seed, reps=reps)
    path = out / "tradeoff.csv"
    _write_csv(path, rows)
    return path
