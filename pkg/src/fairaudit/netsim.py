"""Deterministic network simulation and adversary harness.

Covers latency/bandwidth scheduling with per-link FIFO delivery,
honest-but-curious transcript capture with a structural view-minimality
check, malicious participant strategies, and the attribute-inference
attack against released fairness metrics together with its calibrated
noise defense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import protocol as proto


class ConfigRejectedError(Exception):
    """Adversary or network configuration violates the threat model."""


HONEST_BUT_CURIOUS = "honest_but_curious"
MALICIOUS = "malicious"

STRATEGY_INFLATE = "inflate_count"
STRATEGY_OUT_OF_RANGE = "out_of_range"
STRATEGY_CAPTURE = "transcript_capture"

_STRATEGIES = (STRATEGY_INFLATE, STRATEGY_OUT_OF_RANGE, STRATEGY_CAPTURE)


@dataclass(frozen=True)
class NetworkModel:
    mean_rtt_ms: float = 50.0
    bandwidth_bits_per_s: float = 1e9
    jitter_seed: int = 0
    jitter_fraction: float = 0.2  # jitter ~ Uniform[0, fraction * rtt]

    def __post_init__(self):
        if self.mean_rtt_ms < 0 or self.bandwidth_bits_per_s <= 0:
            raise ConfigRejectedError("rtt must be >= 0 and bandwidth positive")
        if self.jitter_fraction < 0:
            raise ConfigRejectedError("jitter fraction must be >= 0")


@dataclass(frozen=True)
class Envelope:
    send_time_ms: float
    sender: int
    receiver: int
    message: proto.ProtocolMessage


@dataclass(frozen=True)
class DeliveryEvent:
    deliver_time_ms: float
    sender: int
    receiver: int
    message: proto.ProtocolMessage


def schedule(
    envelopes: list[Envelope],
    model: NetworkModel,
    counters: proto.OpCounters | None = None,
) -> list[DeliveryEvent]:
    """Deterministic delivery trace: latency = rtt/2 + size/bandwidth + jitter,
    FIFO per ordered (sender, receiver) pair."""
    counters = counters or proto.OpCounters()
    rng = np.random.default_rng(model.jitter_seed)
    ordered = sorted(enumerate(envelopes), key=lambda e: (e[1].send_time_ms, e[0]))
    last_arrival: dict[tuple[int, int], float] = {}
    events = []
    for seq, env in ordered:
        size_bytes = len(proto.serialize_message(env.message))
        latency = (
            model.mean_rtt_ms / 2
            + size_bytes * 8 / model.bandwidth_bits_per_s * 1000
            + float(rng.uniform(0.0, model.jitter_fraction * model.mean_rtt_ms))
        )
        link = (env.sender, env.receiver)
        arrival = max(last_arrival.get(link, 0.0), env.send_time_ms + latency)
        last_arrival[link] = arrival
        counters.messages_sent += 1
        counters.bytes_sent += size_bytes
        events.append(
            (arrival, seq, DeliveryEvent(deliver_time_ms=arrival, sender=env.sender,
                                         receiver=env.receiver, message=env.message))
        )
    events.sort(key=lambda e: (e[0], e[1]))
    return [e[2] for e in events]


@dataclass(frozen=True)
class AdversaryConfig:
    model: str
    corrupted: frozenset
    strategy: str = STRATEGY_CAPTURE
    inflate_amount: int = 0

    def validate(self, n: int) -> None:
        if self.model not in (HONEST_BUT_CURIOUS, MALICIOUS):
            raise ConfigRejectedError(f"unknown adversary model {self.model!r}")
        if self.strategy not in _STRATEGIES:
            raise ConfigRejectedError(f"unknown strategy {self.strategy!r}")
        if any(not 0 <= i < n for i in self.corrupted):
            raise ConfigRejectedError("corrupted index out of range")
        t = len(self.corrupted)
        if self.model == HONEST_BUT_CURIOUS:
            if not t < n / 2:
                raise ConfigRejectedError(f"honest-but-curious requires t < n/2, got t={t}, n={n}")
            if self.strategy != STRATEGY_CAPTURE:
                raise ConfigRejectedError("honest-but-curious parties follow the protocol")
        else:
            if not t < n / 3:
                raise ConfigRejectedError(f"malicious requires t < n/3, got t={t}, n={n}")


def apply_adversary(
    config: AdversaryConfig, claims: list[proto.ParticipantClaim]
) -> list[proto.ParticipantClaim]:
    """Rewrite corrupted parties' claims according to the configured strategy.

    inflate_count keeps the commitments truthful but encrypts inflated counts
    (in range, so only the decryption-time consistency check can flag it);
    out_of_range claims one statistic as sample_size + 1; transcript_capture
    leaves behavior unchanged.
    """
    config.validate(len(claims))
    if config.strategy == STRATEGY_CAPTURE:
        return list(claims)
    out = []
    for i, claim in enumerate(claims):
        if i not in config.corrupted:
            out.append(claim)
            continue
        flat = claim.stats.counts.ravel().copy()
        if config.strategy == STRATEGY_INFLATE:
            lied = flat.copy()
            lied[0] = min(int(lied[0]) + config.inflate_amount, claim.bound)
            out.append(proto.ParticipantClaim(stats=claim.stats, encrypted_counts=lied))
        else:  # out_of_range
            lied = flat.copy()
            lied[0] = claim.bound + 1
            out.append(
                proto.ParticipantClaim(
                    stats=claim.stats, committed_counts=lied, encrypted_counts=lied
                )
            )
    return out


@dataclass
class TranscriptCapture:
    """Messages visible to the corrupted coalition, recorded verbatim."""

    config: AdversaryConfig
    captured: list = field(default_factory=list)

    def observe(self, message: proto.ProtocolMessage) -> None:
        self.captured.append(message)


_VISIBLE_KINDS = {
    proto.KIND_STAT_SUBMISSION,
    proto.KIND_COMMITMENT_BROADCAST,
    proto.KIND_PARTIAL_DECRYPTION,
    proto.KIND_TREE_FORWARD,
    proto.KIND_ABORT,
}


def assert_view_minimality(
    capture: TranscriptCapture,
    honest_plaintexts: list[int],
    fixed_point_scale: int,
) -> None:
    """Structural check: the corrupted view carries only protocol messages
    and none of them embed an honest party's plaintext statistic.

    Plaintexts travel fixed-point encoded, so the check scans payloads for
    each honest count's little-endian fixed-point byte string.
    """
    needles = []
    for count in honest_plaintexts:
        scaled = count * fixed_point_scale
        if scaled > 0:
            needles.append(scaled.to_bytes((scaled.bit_length() + 7) // 8, "little"))
    for msg in capture.captured:
        if msg.kind not in _VISIBLE_KINDS:
            raise AssertionError(f"unexpected message kind {msg.kind} in corrupted view")
        for needle in needles:
            if len(needle) >= 3 and needle in msg.payload:
                raise AssertionError(
                    "corrupted view leaks an honest plaintext statistic"
                )


# --- attribute-inference attack on released metric histories ---


@dataclass(frozen=True)
class AttackScenario:
    """Worst-case release pipeline for the metric-history attack.

    The target's attribute bit toggles the minority group's positive count
    by one, moving the true parity gap by 1/minority_total per hypothesis.
    """

    minority_total: int = 10
    minority_pos_base: int = 5
    majority_total: int = 1000
    majority_pos: int = 500
    sigma_count: float = 1.0
    rounds_T: int = 100
    sigma_def: float = 0.0

    def __post_init__(self):
        if self.rounds_T < 0:
            raise ConfigRejectedError("rounds_T must be >= 0")
        if self.minority_total < 1 or self.majority_total < 1:
            raise ConfigRejectedError("group totals must be >= 1")


@dataclass(frozen=True)
class AttackHistory:
    released: tuple
    target_index: int
    truth_bit: int  # simulator-only ground truth


@dataclass
class AttackResult:
    success_rate: float
    trials: int
    guesses: np.ndarray
    truths: np.ndarray

    def rows(self) -> list[dict]:
        return [
            {
                "trial": t,
                "guess": int(g),
                "truth": int(b),
                "success": int(g == b),
            }
            for t, (g, b) in enumerate(zip(self.guesses, self.truths))
        ]


def _simulate_releases(
    scenario: AttackScenario, bit, shape, rng: np.random.Generator
) -> np.ndarray:
    """Released metric sequence under hypothesis `bit` (broadcastable)."""
    s = scenario.sigma_count
    pos0 = scenario.minority_pos_base + bit + rng.laplace(0.0, s, shape)
    tot0 = scenario.minority_total + rng.laplace(0.0, s, shape)
    pos1 = scenario.majority_pos + rng.laplace(0.0, s, shape)
    tot1 = scenario.majority_total + rng.laplace(0.0, s, shape)
    obs = np.abs(pos0 / np.maximum(tot0, 1e-6) - pos1 / np.maximum(tot1, 1e-6))
    if scenario.sigma_def > 0:
        obs = obs + rng.laplace(0.0, scenario.sigma_def, shape)
    return np.clip(obs, 0.0, 1.0)


def run_attribute_inference(
    scenario: AttackScenario,
    trials: int,
    seed: int,
    calibration_draws: int = 500,
) -> AttackResult:
    """Likelihood-threshold attacker over released metric histories.

    The attacker re-runs the release pipeline under both hypotheses to
    estimate the per-hypothesis mean release, then guesses the hypothesis
    whose mean is closer to the observed history's mean. With an empty
    history (T = 0) the guess is a fair coin, so success is 0.5 in
    expectation.
    """
    if trials < 1:
        raise ConfigRejectedError("need at least one trial")
    rng = np.random.default_rng(seed)
    truths = rng.integers(0, 2, trials)
    if scenario.rounds_T == 0:
        guesses = rng.integers(0, 2, trials)
        return AttackResult(
            success_rate=float(np.mean(guesses == truths)),
            trials=trials, guesses=guesses, truths=truths,
        )

    mu = [
        float(_simulate_releases(scenario, h, (calibration_draws, scenario.rounds_T), rng).mean())
        for h in (0, 1)
    ]
    obs = _simulate_releases(scenario, truths[:, None], (trials, scenario.rounds_T), rng)
    means = obs.mean(axis=1)
    guesses = (np.abs(means - mu[1]) < np.abs(means - mu[0])).astype(np.int64)
    return AttackResult(
        success_rate=float(np.mean(guesses == truths)),
        trials=trials, guesses=guesses, truths=truths,
    )


def binomial_stderr(trials: int) -> float:
    return (0.25 / trials) ** 0.5
