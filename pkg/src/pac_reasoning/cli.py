"""Command line: split -> score -> calibrate -> route -> evaluate, plus simulate."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

from . import __version__
from .calibration import ThresholdPolicy, calibrate
from .core import RiskBudget, RoutingDecision, efficiency_metrics, empirical_risk
from .exceptions import (
    ConfigError,
    IncompleteRecordError,
    IngestionError,
    PACError,
    PolicyMismatchError,
    SamplingError,
    TransportError,
)
from .gateway.cache import CompletionCache
from .gateway.client import ChatClient
from .gateway.config import load_endpoints
from .gateway.data import ingest_dataset, iter_jsonl, prompt_to_dict, read_prompts, read_records, write_jsonl, write_records
from .gateway.pipeline import EXTRACTORS, LOSS_KINDS, ExpertOracle, score_prompts
from .routing import CachedExpert, TestItem, check_score_kind, route
from .simulation import coverage_experiment, load_scenario, run_reps, with_overrides
from .ucb import BOUND_KINDS, SamplingPlan

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INFEASIBLE = 2
EXIT_TRANSPORT = 3
EXIT_CONFIG = 4

log = logging.getLogger("pac_reasoning")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, args: argparse.Namespace, inputs, outputs, **extra: Any) -> None:
    """Everything needed to rerun ``command``; no timestamps so reruns are byte-identical."""
    manifest = {
        "command": command,
        "tool_version": __version__,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"},
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None and Path(p).exists()},
        "outputs": {str(p): _sha256(p) for p in outputs if p is not None and Path(p).exists()},
        **extra,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def _clients(config_path, roles):
    if config_path is None:
        return {r: None for r in roles}
    eps = load_endpoints(config_path)
    cache = CompletionCache(eps.cache_dir)
    out = {}
    for role in roles:
        cfg = getattr(eps, role)
        out[role] = ChatClient(cfg, cache) if cfg is not None else None
    return out


# ---------------------------------------------------------------------- split


def cmd_split(args) -> int:
    cal, test = ingest_dataset(args.input, args.cal_size, args.test_size, args.seed)
    write_jsonl(args.cal_out, (prompt_to_dict(p) for p in cal))
    write_jsonl(args.test_out, (prompt_to_dict(p) for p in test))
    write_manifest(
        _manifest_path(args.cal_out), "split", args, [args.input], [args.cal_out, args.test_out], seeds=[args.seed]
    )
    print(f"calibration: {len(cal)}  test: {len(test)}")
    return EXIT_OK


# ---------------------------------------------------------------------- score


def cmd_score(args) -> int:
    items = read_prompts(args.input)
    clients = _clients(args.config, ["nonthinking"]) if items else {"nonthinking": None}
    client = clients["nonthinking"]
    if items and client is None:
        raise ConfigError("the endpoint config has no [nonthinking] section")
    records = score_prompts(items, client, args.score_kind, args.n_trials) if items else []
    write_records(args.output, records)
    write_manifest(_manifest_path(args.output), "score", args, [args.input, args.config], [args.output])
    flagged = sum(any(f.startswith("verbalized_unparsed") for f in r.flags) for r in records)
    print(f"scored {len(records)} prompts ({args.score_kind}); {flagged} with unparsed verbalized trials")
    return EXIT_OK


# ------------------------------------------------------------------ calibrate


def _loss_upper(args) -> float:
    if args.loss_upper is not None:
        return args.loss_upper
    return 2.0 if args.loss == "semantic" else 1.0


def _oracle(records, args) -> ExpertOracle:
    roles = ["thinking"] + (["embedding"] if args.loss == "semantic" else [])
    needs_endpoint = any(r.loss is None for r in records)
    if needs_endpoint and args.config is None:
        raise ConfigError("some records have no expert answer; pass --config with a [thinking] endpoint")
    clients = _clients(args.config, roles) if needs_endpoint else {r: None for r in roles}
    return ExpertOracle(
        records,
        clients.get("thinking"),
        args.loss,
        embedder=clients.get("embedding"),
        extractor=EXTRACTORS[args.extractor],
    )


def cmd_calibrate(args) -> int:
    records = read_records(args.records)
    if not records:
        raise IngestionError("no calibration records")
    kinds = {r.score_kind for r in records if r.score_kind is not None}
    if len(kinds) > 1:
        raise PolicyMismatchError(f"calibration records mix score kinds {sorted(kinds)}")
    budget = RiskBudget(args.epsilon, args.alpha, 0.0, _loss_upper(args))
    for r in records:
        r.check_loss_range(budget)
    m = args.m if args.m is not None else int(round(len(records) / args.pi))
    plan = SamplingPlan(args.pi, m, args.seed)
    oracle = _oracle(records, args)
    res = calibrate(records, oracle.loss, budget, plan, args.bound, score_kind=next(iter(kinds), None))
    res.policy.save(args.output)

    if args.labeled_out:
        write_records(args.labeled_out, oracle.updated_records())
    if not args.quiet:
        print(f"{'u':>10} {'mean':>10} {'ucb':>10}")
        for u, mu, b in res.curve.rows():
            print(f"{u:10.6f} {mu:10.6f} {b:10.6f}")
    if res.curve.degenerate.any():
        log.warning("%d grid points have zero sample variance", int(res.curve.degenerate.sum()))
    p = res.policy
    print(
        f"threshold={p.threshold:.6f} feasible={p.feasible} bound={p.bound_kind} "
        f"epsilon={p.epsilon} alpha={p.alpha} m={p.m} expert_queries={res.samples.n_queries}"
    )
    write_manifest(
        _manifest_path(args.output),
        "calibrate",
        args,
        [args.records, args.config],
        [args.output, args.labeled_out],
        seeds=[args.seed],
        policy_digest=hashlib.sha256(p.to_json().encode()).hexdigest(),
    )
    return EXIT_OK if p.feasible else EXIT_INFEASIBLE


# ---------------------------------------------------------------------- route


def _report(decisions, records, losses) -> dict[str, Any]:
    n = len(decisions)
    ecp = 100.0 * sum(d.used_expert for d in decisions) / n
    try:
        rep = efficiency_metrics(decisions, records).to_dict()
    except IncompleteRecordError:
        rep = {"ecp_percent": ecp, "stp_percent": None, "n_test": n}
    try:
        rep["empirical_risk"] = empirical_risk(decisions, losses)
    except IncompleteRecordError:
        rep["empirical_risk"] = None
    rep["n_failed"] = sum(d.failed for d in decisions)
    rep["threshold"] = decisions[0].threshold
    return rep


def cmd_route(args) -> int:
    policy = ThresholdPolicy.load(args.policy)
    records = read_records(args.test)
    if not records:
        raise IngestionError("no test records")
    items = [TestItem.from_record(r, r.prompt or "") for r in records]
    check_score_kind(policy, items)
    needs_expert = args.query_reference or any(r.uncertainty >= policy.threshold for r in records)
    oracle = _oracle(records, args) if needs_expert else None
    expert = CachedExpert(oracle.answer) if oracle else CachedExpert(lambda rid: ("", 0))
    result = route(items, policy, expert, max_parallel=args.max_parallel)

    # reference token counts learnt from routing fill in missing expert_tokens
    filled = []
    for r in records:
        if r.expert_tokens is None and r.id in result.expert_tokens:
            r = replace(r, expert_tokens=result.expert_tokens[r.id])
        filled.append(r)
    losses = {r.id: r.loss for r in records if r.loss is not None}
    if args.query_reference and oracle is not None:
        for d in result.decisions:
            if not d.used_expert and d.id not in losses:
                losses[d.id] = oracle.loss(d.id)
    write_jsonl(args.decisions, (d.to_dict() for d in result.decisions))
    report = _report(result.decisions, filled, losses)
    report["feasible"] = policy.feasible
    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(
        _manifest_path(args.report),
        "route",
        args,
        [args.test, args.policy, args.config],
        [args.decisions, args.report],
        policy_digest=_sha256(args.policy),
    )
    print(json.dumps(report, sort_keys=True))
    if result.failures:
        log.error("%d expert calls failed: %s", len(result.failures), ", ".join(result.failures))
        return EXIT_TRANSPORT
    return EXIT_OK


def cmd_evaluate(args) -> int:
    decisions = [RoutingDecision.from_dict(obj) for _, obj in iter_jsonl(args.decisions)]
    if not decisions:
        raise IngestionError("no decisions to evaluate")
    records = read_records(args.records)
    losses = {r.id: r.loss for r in records if r.loss is not None}
    report = _report(decisions, records, losses)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    print(text, end="")
    return EXIT_OK


# ------------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    overrides = {}
    if args.bound:
        overrides["bound_kind"] = args.bound
    if args.reps:
        overrides["reps"] = args.reps
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if overrides:
        scenario = with_overrides(scenario, **overrides)
    report = coverage_experiment(scenario, run_reps(scenario, n_jobs=args.n_jobs))
    print(report.to_table(), end="")
    if args.json:
        Path(args.json).write_text(report.to_json())
        write_manifest(_manifest_path(args.json), "simulate", args, [args.scenario], [args.json])
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pac-route", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", help="seeded calibration/test split of a prompt JSONL file")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--cal-size", type=int, required=True)
    s.add_argument("--test-size", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cal-out", type=Path, required=True)
    s.add_argument("--test-out", type=Path, required=True)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("score", help="answer prompts with the nonthinking model and score uncertainty")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--config", type=Path)
    s.add_argument("--score-kind", choices=["logits", "verbalized"], default="logits")
    s.add_argument("--n-trials", type=int, default=10)
    s.add_argument("--output", type=Path, required=True)
    s.set_defaults(func=cmd_score)

    def loss_flags(s):
        s.add_argument("--config", type=Path, help="endpoint config; needed when records lack losses")
        s.add_argument("--loss", choices=LOSS_KINDS, default="binary")
        s.add_argument("--loss-upper", type=float, help="loss upper bound (default 1 binary, 2 semantic)")
        s.add_argument("--extractor", choices=sorted(EXTRACTORS), default="identity")

    s = sub.add_parser("calibrate", help="pick the threshold from calibration records")
    s.add_argument("--records", type=Path, required=True)
    s.add_argument("--epsilon", type=float, required=True)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--pi", type=float, default=0.5)
    s.add_argument("--m", type=int, help="number of samples (default n / pi)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bound", choices=BOUND_KINDS, default="clt")
    s.add_argument("--output", type=Path, required=True)
    s.add_argument("--labeled-out", type=Path, help="records with sampled expert answers filled in")
    s.add_argument("--quiet", action="store_true", help="do not print the UCB curve")
    loss_flags(s)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("route", help="apply a policy to test records")
    s.add_argument("--test", type=Path, required=True)
    s.add_argument("--policy", type=Path, required=True)
    s.add_argument("--decisions", type=Path, required=True)
    s.add_argument("--report", type=Path, required=True)
    s.add_argument("--max-parallel", type=int, default=1)
    s.add_argument(
        "--query-reference",
        action="store_true",
        help="also query the expert for cheap-routed items so the empirical risk can be reported",
    )
    loss_flags(s)
    s.set_defaults(func=cmd_route)

    s = sub.add_parser("evaluate", help="recompute the efficiency report from decisions")
    s.add_argument("--decisions", type=Path, required=True)
    s.add_argument("--records", type=Path, required=True)
    s.add_argument("--report", type=Path)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="Monte Carlo check of the guarantees on a synthetic scenario")
    s.add_argument("scenario", type=Path)
    s.add_argument("--bound", choices=BOUND_KINDS)
    s.add_argument("--reps", type=int)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--json", type=Path, help="write the coverage report as JSON")
    s.add_argument("--n-jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (TransportError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ConfigError, IngestionError, PolicyMismatchError, IncompleteRecordError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PACError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
