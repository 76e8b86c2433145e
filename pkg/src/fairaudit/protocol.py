"""The three aggregation protocols as orchestrated message flows.

Phase 1 (secure aggregation): participants noise their 8 counts, encrypt,
the aggregator folds ciphertexts homomorphically, and a k-of-n quorum
threshold-decrypts the totals.

Phase 2 (batched tree verification): the same ciphertexts are summed
through a batched binary tree; each node emits a transcript-hash token
binding (level, node, child tokens, ciphertext bytes) so replays detect
tampering at the exact node.

Phase 3 (verified aggregation): participants additionally commit to their
claimed statistics with range proofs; any out-of-range claim aborts the
run naming the offender. At decryption time the decrypted totals are
checked against the aggregate commitment opening, which flags in-range
claims whose encrypted value differs from the committed one.

Noise is injected exactly once per run; all three phases consume the same
noised ciphertexts.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import commitments as cm
from . import crypto
from . import fairness as fs
from .privacy import NoiseSpec, DefenseConfig, sample_discrete_laplace

DS_TREE_TOKEN = b"fairaudit/tree-token/v1"
DS_LEAF_INPUT = b"fairaudit/tree-leaf-input/v1"

KIND_STAT_SUBMISSION = 1
KIND_COMMITMENT_BROADCAST = 2
KIND_PARTIAL_DECRYPTION = 3
KIND_ABORT = 4
KIND_TREE_FORWARD = 5

KIND_NAMES = {
    KIND_STAT_SUBMISSION: "stat_submission",
    KIND_COMMITMENT_BROADCAST: "commitment_broadcast",
    KIND_PARTIAL_DECRYPTION: "partial_decryption",
    KIND_ABORT: "abort",
    KIND_TREE_FORWARD: "tree_forward",
}

N_STATS = 8  # (a, y, yhat) cells, ravel order


class ProtocolError(Exception):
    pass


class TokenMismatchError(ProtocolError):
    def __init__(self, level: int, node: int):
        super().__init__(f"verification token mismatch at level {level}, node {node}")
        self.level = level
        self.index = node


class AbortError(ProtocolError):
    def __init__(self, accused: int, reason: str):
        super().__init__(f"abort naming participant {accused}: {reason}")
        self.accused = accused
        self.reason = reason


@dataclass
class OpCounters:
    homomorphic_additions: int = 0
    encryptions: int = 0
    decryptions: int = 0
    partial_decryptions: int = 0
    proofs_generated: int = 0
    proofs_verified: int = 0
    verification_ops: int = 0
    messages_sent: int = 0
    bytes_sent: int = 0
    rounds: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ProtocolMessage:
    kind: int
    sender: int
    logical_timestamp: int
    payload: bytes

    def to_jsonl(self) -> str:
        return json.dumps(
            {
                "kind": KIND_NAMES[self.kind],
                "sender": self.sender,
                "logical_timestamp": self.logical_timestamp,
                "payload_hex": self.payload.hex(),
            },
            sort_keys=True,
        )


def serialize_message(msg: ProtocolMessage) -> bytes:
    head = struct.pack("<BIQ", msg.kind, msg.sender, msg.logical_timestamp)
    return head + struct.pack("<I", len(msg.payload)) + msg.payload


def deserialize_message(data: bytes) -> ProtocolMessage:
    if len(data) < 17:
        raise ProtocolError("truncated message")
    kind, sender, ts = struct.unpack_from("<BIQ", data, 0)
    (plen,) = struct.unpack_from("<I", data, 13)
    payload = data[17 : 17 + plen]
    if len(payload) != plen or 17 + plen != len(data):
        raise ProtocolError("message length mismatch")
    if kind not in KIND_NAMES:
        raise ProtocolError(f"unknown message kind {kind}")
    return ProtocolMessage(kind=kind, sender=sender, logical_timestamp=ts, payload=payload)


def _pack_ints(values: list[int]) -> bytes:
    out = bytearray(struct.pack("<I", len(values)))
    for v in values:
        raw = v.to_bytes((v.bit_length() + 7) // 8 or 1, "little")
        out += struct.pack("<I", len(raw)) + raw
    return bytes(out)


def ciphertexts_payload(cts: list[crypto.Ciphertext]) -> bytes:
    return _pack_ints([c.value for c in cts])


@dataclass
class Submission:
    """One participant's noised, encrypted statistic vector."""

    sender: int
    ciphertexts: list[crypto.Ciphertext]
    noised_units: np.ndarray      # (8,) int64 fixed-point, simulator ground truth
    true_counts: np.ndarray       # (8,) int64
    sample_size: int


def derive_party_rngs(seed: int, n: int) -> list[tuple[np.random.Generator, random.Random]]:
    """Per-party (numpy, stdlib) rng streams from one master seed."""
    ss = np.random.SeedSequence(seed)
    out = []
    for child in ss.spawn(n):
        np_rng = np.random.default_rng(child)
        py_rng = random.Random(int.from_bytes(child.generate_state(4).tobytes(), "little"))
        out.append((np_rng, py_rng))
    return out


def prepare_submissions(
    stats: list[fs.LocalStatistics],
    noise: NoiseSpec,
    pk: crypto.PublicKey,
    seed: int,
    counters: OpCounters | None = None,
) -> tuple[list[Submission], OpCounters]:
    counters = counters or OpCounters()
    rngs = derive_party_rngs(seed, len(stats))
    submissions = []
    for i, (local, (np_rng, py_rng)) in enumerate(zip(stats, rngs)):
        flat = local.counts.ravel()
        noise_units = sample_discrete_laplace(
            noise.scale_sigma, noise.fixed_point_scale, np_rng, size=N_STATS
        )
        noised = flat * noise.fixed_point_scale + noise_units
        cts = []
        for value in noised.tolist():
            pt = crypto.encode_raw_signed(pk, int(value), noise.fixed_point_scale)
            cts.append(crypto.encrypt(pk, pt, py_rng))
            counters.encryptions += 1
        msg = ProtocolMessage(
            kind=KIND_STAT_SUBMISSION,
            sender=i,
            logical_timestamp=i,
            payload=ciphertexts_payload(cts),
        )
        counters.messages_sent += 1
        counters.bytes_sent += len(serialize_message(msg))
        submissions.append(
            Submission(
                sender=i,
                ciphertexts=cts,
                noised_units=noised,
                true_counts=flat.copy(),
                sample_size=local.sample_size,
            )
        )
    return submissions, counters


def fold_ciphertexts(
    pk: crypto.PublicKey,
    submissions: list[Submission],
    counters: OpCounters,
) -> list[crypto.Ciphertext]:
    totals = list(submissions[0].ciphertexts)
    for sub in submissions[1:]:
        for s in range(N_STATS):
            totals[s] = crypto.add_ct(pk, totals[s], sub.ciphertexts[s])
            counters.homomorphic_additions += 1
    return totals


def threshold_decrypt_totals(
    pk: crypto.PublicKey,
    shares: list[crypto.KeyShare],
    totals: list[crypto.Ciphertext],
    fixed_point_scale: int,
    counters: OpCounters,
) -> np.ndarray:
    if not shares:
        raise crypto.ThresholdError("no key shares supplied")
    k = shares[0].threshold_k
    quorum = shares[:k]
    decrypted = []
    for ct in totals:
        parts = []
        for share in quorum:
            parts.append(crypto.partial_decrypt(share, ct))
            counters.partial_decryptions += 1
            msg = ProtocolMessage(
                kind=KIND_PARTIAL_DECRYPTION,
                sender=share.index,
                logical_timestamp=0,
                payload=_pack_ints([parts[-1].value]),
            )
            counters.messages_sent += 1
            counters.bytes_sent += len(serialize_message(msg))
        pt = crypto.combine(pk, parts, scale=fixed_point_scale)
        counters.decryptions += 1
        value = pt.raw if pt.raw <= pk.modulus // 2 else pt.raw - pk.modulus
        decrypted.append(value)
    return np.array(decrypted, dtype=np.int64)


def aggregate_from_decrypted(
    decrypted_units: np.ndarray,
    submissions: list[Submission],
    fixed_point_scale: int,
) -> fs.AggregateStatistics:
    true_counts = np.sum([s.true_counts for s in submissions], axis=0)
    return fs.AggregateStatistics(
        noised_fixed_point=decrypted_units.reshape(2, 2, 2),
        fixed_point_scale=fixed_point_scale,
        true_counts=true_counts.reshape(2, 2, 2),
    )


def run_secure_aggregation(
    stats: list[fs.LocalStatistics],
    noise: NoiseSpec,
    pk: crypto.PublicKey,
    shares: list[crypto.KeyShare],
    seed: int,
    delta_fair: float | None = None,
    privacy_snapshot: dict | None = None,
) -> tuple[fs.AggregateStatistics, fs.FairnessReport, OpCounters]:
    """Single-aggregator path: noise, encrypt, fold, threshold-decrypt."""
    if not stats:
        raise ProtocolError("need at least one participant")
    counters = OpCounters()
    submissions, counters = prepare_submissions(stats, noise, pk, seed, counters)
    totals = fold_ciphertexts(pk, submissions, counters)
    decrypted = threshold_decrypt_totals(
        pk, shares, totals, noise.fixed_point_scale, counters
    )
    counters.rounds = 2  # submission round + decryption round
    agg = aggregate_from_decrypted(decrypted, submissions, noise.fixed_point_scale)
    report = fs.build_report(
        agg,
        sigma=noise.scale_sigma,
        n_participants=len(stats),
        delta_fair=delta_fair,
        privacy_snapshot=privacy_snapshot,
    )
    return agg, report, counters


# --- batched tree verification ---


@dataclass(frozen=True)
class TreePlan:
    n_participants: int
    batch_size: int
    batches: tuple[tuple[int, ...], ...]
    level_count: int


def plan_tree(n: int, batch_size: int) -> TreePlan:
    if n < 1 or batch_size < 1:
        raise ProtocolError("n and batch size must be >= 1")
    batches = tuple(
        tuple(range(i, min(i + batch_size, n))) for i in range(0, n, batch_size)
    )
    n_batches = len(batches)
    level_count = max(0, math.ceil(math.log2(n_batches))) if n_batches > 1 else 0
    return TreePlan(
        n_participants=n,
        batch_size=batch_size,
        batches=batches,
        level_count=level_count,
    )


@dataclass
class TreeNode:
    level: int
    index: int
    ciphertexts: list[crypto.Ciphertext]
    token: bytes
    children: list["TreeNode"] = field(default_factory=list)


def _node_token(level: int, index: int, child_tokens: list[bytes],
                cts: list[crypto.Ciphertext]) -> bytes:
    h = hashlib.sha256()
    h.update(DS_TREE_TOKEN)
    h.update(struct.pack("<II", level, index))
    for t in child_tokens:
        h.update(t)
    h.update(ciphertexts_payload(cts))
    return h.digest()


def _leaf_input_token(sender: int, cts: list[crypto.Ciphertext]) -> bytes:
    h = hashlib.sha256()
    h.update(DS_LEAF_INPUT)
    h.update(struct.pack("<I", sender))
    h.update(ciphertexts_payload(cts))
    return h.digest()


@dataclass
class TreeResult:
    totals: list[crypto.Ciphertext]
    root: TreeNode
    all_nodes: list[TreeNode]
    counters: OpCounters


def run_batched_verification(
    submissions: list[Submission],
    plan: TreePlan,
    pk: crypto.PublicKey,
    counters: OpCounters | None = None,
) -> TreeResult:
    """Tree-structured aggregation with per-node transcript tokens.

    Uses n - 1 homomorphic additions per statistic and level_count + 1
    communication rounds. Odd node counts promote a unary carry node
    unchanged (still emitting a token).
    """
    if plan.n_participants != len(submissions):
        raise ProtocolError("plan does not match participant count")
    counters = counters or OpCounters()

    # leaf round: intra-batch folds
    nodes: list[TreeNode] = []
    all_nodes: list[TreeNode] = []
    for b_idx, batch in enumerate(plan.batches):
        members = [submissions[i] for i in batch]
        cts = list(members[0].ciphertexts)
        for sub in members[1:]:
            for s in range(N_STATS):
                cts[s] = crypto.add_ct(pk, cts[s], sub.ciphertexts[s])
                counters.homomorphic_additions += 1
        child_tokens = [_leaf_input_token(m.sender, m.ciphertexts) for m in members]
        token = _node_token(0, b_idx, child_tokens, cts)
        counters.verification_ops += 1  # token generation
        node = TreeNode(level=0, index=b_idx, ciphertexts=cts, token=token)
        nodes.append(node)
        all_nodes.append(node)
    counters.rounds += 1

    level = 0
    while len(nodes) > 1:
        level += 1
        next_nodes = []
        for j in range(0, len(nodes), 2):
            pair = nodes[j : j + 2]
            if len(pair) == 2:
                cts = []
                for s in range(N_STATS):
                    cts.append(crypto.add_ct(pk, pair[0].ciphertexts[s], pair[1].ciphertexts[s]))
                    counters.homomorphic_additions += 1
            else:
                cts = list(pair[0].ciphertexts)  # unary carry, promoted unchanged
            token = _node_token(level, j // 2, [c.token for c in pair], cts)
            counters.verification_ops += 1
            node = TreeNode(level=level, index=j // 2, ciphertexts=cts,
                            token=token, children=pair)
            msg = ProtocolMessage(
                kind=KIND_TREE_FORWARD,
                sender=pair[0].index,
                logical_timestamp=level,
                payload=struct.pack("<II", level, j // 2) + ciphertexts_payload(cts) + token,
            )
            counters.messages_sent += 1
            counters.bytes_sent += len(serialize_message(msg))
            next_nodes.append(node)
            all_nodes.append(node)
        nodes = next_nodes
        counters.rounds += 1

    assert level == plan.level_count, "tree depth must match the plan"
    root = nodes[0]
    return TreeResult(totals=root.ciphertexts, root=root, all_nodes=all_nodes,
                      counters=counters)


def verify_tree_replay(result: TreeResult, pk: crypto.PublicKey,
                       counters: OpCounters | None = None) -> None:
    """Recompute every internal node from its children; mismatch names the node."""
    counters = counters or OpCounters()
    for node in result.all_nodes:
        counters.verification_ops += 1
        if not node.children:
            continue  # leaf folds are bound via the leaf-input tokens
        if len(node.children) == 2:
            expected = [
                crypto.add_ct(pk, node.children[0].ciphertexts[s],
                              node.children[1].ciphertexts[s])
                for s in range(N_STATS)
            ]
        else:
            expected = node.children[0].ciphertexts
        if [c.value for c in expected] != [c.value for c in node.ciphertexts]:
            raise TokenMismatchError(node.level, node.index)
        token = _node_token(node.level, node.index,
                            [c.token for c in node.children], node.ciphertexts)
        if token != node.token:
            raise TokenMismatchError(node.level, node.index)


def naive_pairwise_verification(submissions: list[Submission],
                                counters: OpCounters | None = None) -> OpCounters:
    """O(n^2) baseline foil: pairwise cross-checks of submission digests."""
    counters = counters or OpCounters()
    digests = [_leaf_input_token(s.sender, s.ciphertexts) for s in submissions]
    for i in range(len(digests)):
        for j in range(i + 1, len(digests)):
            counters.verification_ops += 1
            if digests[i] == digests[j]:  # distinct senders must differ
                raise ProtocolError("duplicate submission detected")
    return counters


# --- verified aggregation with malicious detection (commitments + proofs) ---


@dataclass
class ParticipantClaim:
    """True statistics plus what the party actually commits to and encrypts."""

    stats: fs.LocalStatistics
    committed_counts: np.ndarray | None = None  # (8,) claimed in commitments
    encrypted_counts: np.ndarray | None = None  # (8,) claimed inside ciphertexts

    def __post_init__(self):
        flat = self.stats.counts.ravel()
        if self.committed_counts is None:
            self.committed_counts = flat.copy()
        self.committed_counts = np.asarray(self.committed_counts, dtype=np.int64)
        if self.encrypted_counts is None:
            self.encrypted_counts = self.committed_counts.copy()
        self.encrypted_counts = np.asarray(self.encrypted_counts, dtype=np.int64)

    @property
    def bound(self) -> int:
        return self.stats.sample_size


@dataclass
class VerifiedResult:
    success: bool
    aborted_party: int | None
    abort_reason: str | None
    aggregate: fs.AggregateStatistics | None
    consistency_ok: bool | None
    counters: OpCounters


def _forged_range_proof(ck, value, blinding, bound, rng) -> cm.RangeProof:
    """Adversarial proof bytes for an out-of-range claim: reuse the honest
    prover on the value reduced into range (the blinding no longer matches)."""
    reduced = value % (bound + 1)
    return cm.prove_range(ck, reduced, blinding, bound, rng)


def run_verified_aggregation(
    claims: list[ParticipantClaim],
    noise: NoiseSpec,
    pk: crypto.PublicKey,
    shares: list[crypto.KeyShare],
    ck: cm.CommitmentKey,
    seed: int,
) -> VerifiedResult:
    """Commitment phase, range-proof verification with abort, aggregation,
    threshold decryption, and the commitment-vs-ciphertext consistency check."""
    if not claims:
        raise ProtocolError("need at least one participant")
    counters = OpCounters()
    n = len(claims)
    rngs = derive_party_rngs(seed, n)
    fp = noise.fixed_point_scale
    q = ck.group_order

    per_party = []
    for i, (claim, (np_rng, py_rng)) in enumerate(zip(claims, rngs)):
        noise_units = sample_discrete_laplace(noise.scale_sigma, fp, np_rng, size=N_STATS)
        noised = claim.encrypted_counts * fp + noise_units
        cts = []
        for value in noised.tolist():
            pt = crypto.encode_raw_signed(pk, int(value), fp)
            cts.append(crypto.encrypt(pk, pt, py_rng))
            counters.encryptions += 1

        coms, proofs, blinds = [], [], []
        noise_coms, noise_blinds = [], []
        for s in range(N_STATS):
            value = int(claim.committed_counts[s])
            r = cm.random_blinding(ck, py_rng)
            blinds.append(r)
            coms.append(cm.commit(ck, value % q, r))
            if 0 <= value <= claim.bound:
                proofs.append(cm.prove_range(ck, value, r, claim.bound, py_rng))
            else:
                proofs.append(_forged_range_proof(ck, value, r, claim.bound, py_rng))
            counters.proofs_generated += 1
            # commitment to the fixed-point noise term, for the consistency check
            rho = cm.random_blinding(ck, py_rng)
            noise_blinds.append(rho)
            noise_coms.append(cm.commit(ck, int(noise_units[s]) % q, rho))

        payload = b"".join(cm.serialize_commitment(c) for c in coms + noise_coms)
        payload += b"".join(cm.serialize_range_proof(p) for p in proofs)
        msg = ProtocolMessage(
            kind=KIND_COMMITMENT_BROADCAST, sender=i, logical_timestamp=i, payload=payload
        )
        counters.messages_sent += 1
        counters.bytes_sent += len(serialize_message(msg))
        per_party.append(
            dict(cts=cts, noised=noised, coms=coms, proofs=proofs, blinds=blinds,
                 noise_coms=noise_coms, noise_blinds=noise_blinds)
        )

    # verification phase: abort at the lowest-indexed offender
    for i, (claim, party) in enumerate(zip(claims, per_party)):
        for s in range(N_STATS):
            counters.proofs_verified += 1
            if not cm.verify_range(ck, party["coms"][s], party["proofs"][s], claim.bound):
                msg = ProtocolMessage(
                    kind=KIND_ABORT, sender=i, logical_timestamp=0,
                    payload=struct.pack("<II", i, s),
                )
                counters.messages_sent += 1
                counters.bytes_sent += len(serialize_message(msg))
                return VerifiedResult(
                    success=False, aborted_party=i,
                    abort_reason=f"range proof rejected for statistic {s}",
                    aggregate=None, consistency_ok=None, counters=counters,
                )

    submissions = [
        Submission(
            sender=i,
            ciphertexts=party["cts"],
            noised_units=party["noised"],
            true_counts=claims[i].stats.counts.ravel().copy(),
            sample_size=claims[i].stats.sample_size,
        )
        for i, party in enumerate(per_party)
    ]
    totals = fold_ciphertexts(pk, submissions, counters)
    decrypted = threshold_decrypt_totals(pk, shares, totals, fp, counters)
    agg = aggregate_from_decrypted(decrypted, submissions, fp)

    # consistency extension: the decrypted totals must match the opening of
    # (prod Com_i)^fp * prod ComNoise_i under the revealed blinding sums
    consistency_ok = True
    for s in range(N_STATS):
        com_agg = cm.aggregate_commitments([p["coms"][s] for p in per_party], ck)
        noise_agg = cm.aggregate_commitments([p["noise_coms"][s] for p in per_party], ck)
        scaled = cm.Commitment(
            value=crypto.powmod(com_agg.value, fp, ck.group_modulus)
            * noise_agg.value % ck.group_modulus
        )
        blind_total = sum(p["blinds"][s] for p in per_party) * fp \
            + sum(p["noise_blinds"][s] for p in per_party)
        expected = cm.commit(ck, int(decrypted[s]) % q, blind_total % q)
        counters.verification_ops += 1
        if scaled != expected:
            consistency_ok = False
    counters.rounds = 3  # commit/prove, aggregate, decrypt+check

    return VerifiedResult(
        success=True, aborted_party=None, abort_reason=None,
        aggregate=agg, consistency_ok=consistency_ok, counters=counters,
    )


def release_metric(
    value: float, defense: DefenseConfig | None, rng: np.random.Generator
) -> tuple[float, float]:
    """Defense-noised public release: value + Lap(sigma_def), clamped to [0, 1].

    Returns (released, pre_clamp).
    """
    sigma = 0.0 if defense is None else defense.sigma_def
    if sigma < 0:
        raise ProtocolError("sigma_def must be >= 0")
    pre = value if sigma == 0.0 else value + float(rng.laplace(0.0, sigma))
    return min(1.0, max(0.0, pre)), pre
