"""Command-line entry point: keygen, generate, run, attack, bench, verify-config."""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

import numpy as np

from . import crypto
from . import datagen as dg
from . import fairness as fs
from . import netsim
from . import privacy


def _error_json(code: str, message: str) -> str:
    return json.dumps({"error": code, "message": message}, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairaudit",
        description="Verifiable fairness auditing over encrypted federated statistics",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", type=Path, help="experiment config JSON")
    parser.add_argument("--output", type=Path, default=Path("fairaudit-out"))
    parser.add_argument("--key-bits", type=int, default=512)
    parser.add_argument("--participants", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--sigma", type=float, default=None)
    parser.add_argument("--rounds", type=int, default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    keygen = sub.add_parser("keygen", help="generate a threshold keypair")
    keygen.add_argument("--threshold-k", type=int, default=3)
    keygen.add_argument("--trustees", type=int, default=5)

    sub.add_parser("generate", help="generate a synthetic federation")

    run = sub.add_parser("run", help="run an experiment or preset")
    run.add_argument("--preset", choices=["tree-scaling", "tradeoff"], default=None)
    run.add_argument("--verified", action="store_true",
                     help="use the commitment-verified aggregation path")

    attack = sub.add_parser("attack", help="run the attribute-inference harness")
    attack.add_argument("--trials", type=int, default=2000)
    attack.add_argument("--sigma-def", type=float, default=0.0)
    attack.add_argument("--attack-rounds", type=int, default=100)

    sub.add_parser("bench", help="tree-scaling op-count benchmark")
    sub.add_parser("verify-config", help="validate an experiment config file")
    return parser


def _load_or_build_config(args) -> dg.ExperimentConfig:
    if args.config is not None:
        cfg = dg.ExperimentConfig.from_json(args.config.read_text())
    else:
        cfg = dg.ExperimentConfig(
            federation=dg.FederationConfig(seed=args.seed), seed=args.seed
        )
    fed = cfg.federation
    overrides = {}
    if args.participants is not None:
        fed = dg.FederationConfig(**{**fed.__dict__, "n_participants": args.participants})
        overrides["federation"] = fed
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.sigma is not None:
        overrides["sigma"] = args.sigma
    if args.rounds is not None:
        overrides["rounds_T"] = args.rounds
    if args.key_bits is not None:
        overrides["key_bits"] = args.key_bits
    if getattr(args, "verified", False):
        overrides["verified"] = True
    if overrides:
        cfg = dg.ExperimentConfig(**{**cfg.__dict__, **overrides})
    return cfg


def cmd_keygen(args) -> int:
    args.output.mkdir(parents=True, exist_ok=True)
    pk, sk = crypto.keygen(args.key_bits, random.Random(args.seed))
    shares = crypto.share_key(sk, args.threshold_k, args.trustees,
                              random.Random(args.seed + 1))
    (args.output / "public_key.json").write_text(pk.to_json() + "\n")
    (args.output / "secret_key.json").write_text(sk.to_json() + "\n")
    (args.output / "key_shares.json").write_text(crypto.shares_to_json(shares) + "\n")
    print(json.dumps({"key_bits": args.key_bits,
                      "threshold_k": args.threshold_k,
                      "trustees": args.trustees,
                      "output": str(args.output)}, sort_keys=True))
    return 0


def cmd_generate(args) -> int:
    cfg = _load_or_build_config(args).federation
    args.output.mkdir(parents=True, exist_ok=True)
    datasets = dg.generate_federation(cfg)
    pooled = fs.pool_datasets(datasets)
    truth = fs.brute_force_metrics_sorted(pooled)
    np.savez(args.output / "federation.npz", **{
        f"party{i}_{name}": getattr(d, name)
        for i, d in enumerate(datasets)
        for name in ("labels", "attributes", "scores")
    })
    meta = {
        "config": json.loads(json.dumps(cfg.__dict__)),
        "participants": [
            {"records": d.sample_size,
             "minority_fraction": float(d.attributes[:, 0].mean())}
            for d in datasets
        ],
        "ground_truth": {"dp_violation": truth.dp, "eo_violation": truth.eo},
    }
    (args.output / "federation.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n"
    )
    print(json.dumps({"records": pooled.sample_size,
                      "ground_truth_dp": truth.dp}, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    if args.preset == "tree-scaling":
        path = dg.run_preset_tree_scaling(args.output, seed=args.seed,
                                          key_bits=args.key_bits,
                                          batch_size=args.batch_size or 4)
        print(json.dumps({"preset": "tree-scaling", "csv": str(path)}, sort_keys=True))
        return 0
    if args.preset == "tradeoff":
        path = dg.run_preset_tradeoff(args.output, seed=args.seed)
        print(json.dumps({"preset": "tradeoff", "csv": str(path)}, sort_keys=True))
        return 0
    cfg = _load_or_build_config(args)
    result = dg.run_experiment(cfg, args.output)
    summary = {"artifacts": result.artifacts}
    if result.report is not None:
        summary["dp_violation"] = result.report.dp_violation
        summary["eo_violation"] = result.report.eo_violation
    if result.verified_result is not None and not result.verified_result.success:
        summary["aborted_party"] = result.verified_result.aborted_party
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_attack(args) -> int:
    scenario = netsim.AttackScenario(rounds_T=args.attack_rounds,
                                     sigma_def=args.sigma_def)
    result = netsim.run_attribute_inference(scenario, args.trials, seed=args.seed)
    args.output.mkdir(parents=True, exist_ok=True)
    dg._write_csv(args.output / "attack.csv", result.rows())
    summary = {
        "trials": result.trials,
        "success_rate": result.success_rate,
        "binomial_stderr": netsim.binomial_stderr(result.trials),
        "sigma_def": args.sigma_def,
        "csv": str(args.output / "attack.csv"),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    path = dg.run_preset_tree_scaling(args.output, seed=args.seed,
                                      key_bits=args.key_bits,
                                      batch_size=args.batch_size or 4)
    print(json.dumps({"csv": str(path)}, sort_keys=True))
    return 0


def cmd_verify_config(args) -> int:
    if args.config is None:
        print(_error_json("missing-config", "--config is required"))
        return 2
    cfg = dg.ExperimentConfig.from_json(args.config.read_text())
    datasets = dg.generate_federation(cfg.federation)
    pooled = fs.pool_datasets(datasets)
    groups = pooled.attributes[:, 0]
    n0 = int(np.sum(groups == 0))
    n1 = int(np.sum(groups == 1))
    bound = dg.validate_lower_bound(cfg, n0, n1)
    print(json.dumps({"valid": True, "lower_bound": bound,
                      "n0": n0, "n1": n1}, sort_keys=True))
    return 0


_COMMANDS = {
    "keygen": cmd_keygen,
    "generate": cmd_generate,
    "run": cmd_run,
    "attack": cmd_attack,
    "bench": cmd_bench,
    "verify-config": cmd_verify_config,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except dg.LowerBoundViolationError as exc:
        print(_error_json("lower-bound-violation", str(exc)))
        return 3
    except (dg.ConfigError, netsim.ConfigRejectedError, crypto.CryptoError,
            fs.FairnessError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(_error_json(type(exc).__name__, str(exc)))
        return 2


if __name__ == "__main__":
    sys.exit(main())
