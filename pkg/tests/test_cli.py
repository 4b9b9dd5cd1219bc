import json

import httpx
import numpy as np
import pytest

from pac_reasoning import cli
from pac_reasoning.calibration import ThresholdPolicy
from pac_reasoning.gateway.client import ChatClient
from pac_reasoning.gateway.data import write_jsonl, write_records

from .conftest import FakeOpenAI, make_records


@pytest.fixture
def labeled(tmp_path):
    rng = np.random.default_rng(11)
    u = rng.beta(2, 5, 300)
    losses = (rng.random(300) < 0.5 * u).astype(float)
    path = tmp_path / "cal.jsonl"
    write_records(path, make_records(u, losses))
    return path


@pytest.fixture
def test_records(tmp_path):
    rng = np.random.default_rng(12)
    u = rng.beta(2, 5, 100)
    losses = (rng.random(100) < 0.5 * u).astype(float)
    path = tmp_path / "test.jsonl"
    write_records(path, make_records(u, losses, expert_tokens=1000, cheap_tokens=300))
    return path


@pytest.fixture
def endpoint(tmp_path, monkeypatch):
    server = FakeOpenAI()
    monkeypatch.setattr(
        cli, "ChatClient", lambda cfg, cache: ChatClient(cfg, cache, transport=httpx.MockTransport(server))
    )
    cfg = tmp_path / "endpoints.toml"
    cfg.write_text(
        '[nonthinking]\nbase_url = "http://fake/v1"\nmodel_name = "small"\napi_key_env = ""\n'
        '[thinking]\nbase_url = "http://fake/v1"\nmodel_name = "big"\napi_key_env = ""\n'
    )
    return cfg, server


def _calibrate(records, out, *extra):
    return cli.main(["calibrate", "--records", str(records), "--output", str(out), "--quiet", *extra])


class TestSplitAndScore:
    def test_split(self, tmp_path, capsys):
        write_jsonl(tmp_path / "all.jsonl", ({"id": i, "prompt": f"p{i}"} for i in range(10)))
        code = cli.main(["split", "--input", str(tmp_path / "all.jsonl"), "--cal-size", "6", "--test-size", "4",
                         "--cal-out", str(tmp_path / "c.jsonl"), "--test-out", str(tmp_path / "t.jsonl")])
        assert code == 0
        assert len((tmp_path / "c.jsonl").read_text().splitlines()) == 6
        assert (tmp_path / "c.jsonl.manifest.json").exists()

    def test_score_empty_input(self, tmp_path):
        (tmp_path / "p.jsonl").write_text("")
        assert cli.main(["score", "--input", str(tmp_path / "p.jsonl"), "--output", str(tmp_path / "r.jsonl")]) == 0
        assert (tmp_path / "r.jsonl").read_text() == ""

    def test_score_warm_cache_identical(self, tmp_path, endpoint):
        cfg, server = endpoint
        write_jsonl(tmp_path / "p.jsonl", ({"id": str(i), "prompt": f"q{i}", "gold": "42"} for i in range(5)))
        args = ["score", "--input", str(tmp_path / "p.jsonl"), "--config", str(cfg), "--output"]
        assert cli.main(args + [str(tmp_path / "a.jsonl")]) == 0
        n = len(server.requests)
        assert cli.main(args + [str(tmp_path / "b.jsonl")]) == 0
        assert len(server.requests) == n
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_score_transport_failure(self, tmp_path, endpoint):
        cfg, server = endpoint
        server.failures = [400]
        write_jsonl(tmp_path / "p.jsonl", [{"id": "a", "prompt": "q"}])
        code = cli.main(["score", "--input", str(tmp_path / "p.jsonl"), "--config", str(cfg),
                         "--output", str(tmp_path / "r.jsonl")])
        assert code == cli.EXIT_TRANSPORT

    def test_bad_config(self, tmp_path):
        write_jsonl(tmp_path / "p.jsonl", [{"id": "a", "prompt": "q"}])
        (tmp_path / "e.toml").write_text("[[")
        code = cli.main(["score", "--input", str(tmp_path / "p.jsonl"), "--config", str(tmp_path / "e.toml"),
                         "--output", str(tmp_path / "r.jsonl")])
        assert code == cli.EXIT_CONFIG


class TestCalibrate:
    def test_writes_policy_and_manifest(self, labeled, tmp_path, capsys):
        assert _calibrate(labeled, tmp_path / "p.json", "--epsilon", "0.1", "--seed", "1") == 0
        policy = ThresholdPolicy.load(tmp_path / "p.json")
        assert policy.feasible and policy.score_kind == "logits" and policy.m == 600
        manifest = json.loads((tmp_path / "p.json.manifest.json").read_text())
        assert manifest["seeds"] == [1] and str(labeled) in manifest["inputs"]
        assert "threshold=" in capsys.readouterr().out

    def test_prints_curve(self, labeled, tmp_path, capsys):
        cli.main(["calibrate", "--records", str(labeled), "--output", str(tmp_path / "p.json"), "--epsilon", "0.1"])
        out = capsys.readouterr().out
        assert out.splitlines()[0].split() == ["u", "mean", "ucb"]

    def test_byte_identical(self, labeled, tmp_path):
        for name in ("a", "b"):
            _calibrate(labeled, tmp_path / f"{name}.json", "--epsilon", "0.08", "--seed", "5")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_epsilon_one_takes_max(self, labeled, tmp_path):
        _calibrate(labeled, tmp_path / "p.json", "--epsilon", "1.0")
        u = [json.loads(line)["uncertainty"] for line in labeled.read_text().splitlines()]
        assert ThresholdPolicy.load(tmp_path / "p.json").threshold == max(u)

    def test_infeasible_exit_code(self, labeled, tmp_path):
        code = _calibrate(labeled, tmp_path / "p.json", "--epsilon", "0.01", "--bound", "hoeffding")
        assert code == cli.EXIT_INFEASIBLE
        assert not ThresholdPolicy.load(tmp_path / "p.json").feasible

    def test_unlabeled_needs_config(self, tmp_path):
        write_records(tmp_path / "r.jsonl", make_records([0.1, 0.2]))
        assert _calibrate(tmp_path / "r.jsonl", tmp_path / "p.json", "--epsilon", "0.1") == cli.EXIT_CONFIG

    def test_queries_expert_and_labels(self, tmp_path, endpoint):
        cfg, server = endpoint
        write_records(tmp_path / "r.jsonl", make_records(np.linspace(0.05, 0.95, 20)))
        code = _calibrate(tmp_path / "r.jsonl", tmp_path / "p.json", "--epsilon", "0.5", "--config", str(cfg),
                          "--labeled-out", str(tmp_path / "l.jsonl"))
        assert code in (0, 2)
        labeled = [json.loads(x) for x in (tmp_path / "l.jsonl").read_text().splitlines()]
        n_labeled = sum("loss" in r for r in labeled)
        assert 0 < n_labeled == len(server.requests)


class TestRouteAndEvaluate:
    def _policy(self, tmp_path, threshold=0.3, feasible=True, kind="logits"):
        p = ThresholdPolicy(threshold, feasible, "clt", 0.05, 0.08, 10, 0, "d", score_kind=kind)
        p.save(tmp_path / "policy.json")
        return tmp_path / "policy.json"

    def _route(self, test, policy, tmp_path, *extra):
        return cli.main(["route", "--test", str(test), "--policy", str(policy), "--decisions",
                         str(tmp_path / "d.jsonl"), "--report", str(tmp_path / "report.json"), *extra])

    def test_report_matches_evaluate(self, test_records, tmp_path, capsys):
        assert self._route(test_records, self._policy(tmp_path), tmp_path) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        cli.main(["evaluate", "--decisions", str(tmp_path / "d.jsonl"), "--records", str(test_records),
                  "--report", str(tmp_path / "again.json")])
        again = json.loads((tmp_path / "again.json").read_text())
        assert {k: report[k] for k in again} == again

    def test_report_oracle(self, test_records, tmp_path):
        self._route(test_records, self._policy(tmp_path, 0.3), tmp_path)
        report = json.loads((tmp_path / "report.json").read_text())
        recs = [json.loads(x) for x in test_records.read_text().splitlines()]
        hot = np.array([r["uncertainty"] >= 0.3 for r in recs])
        losses = np.array([r["loss"] for r in recs])
        assert report["ecp_percent"] == pytest.approx(100 * hot.mean())
        assert report["stp_percent"] == pytest.approx(100 * (1 - np.mean(0.3 + hot)))
        assert report["empirical_risk"] == pytest.approx(np.mean(losses * ~hot))

    def test_infeasible_policy_all_expert(self, test_records, tmp_path):
        self._route(test_records, self._policy(tmp_path, 0.0, feasible=False), tmp_path)
        assert json.loads((tmp_path / "report.json").read_text())["ecp_percent"] == 100.0

    def test_score_kind_mismatch(self, test_records, tmp_path):
        code = self._route(test_records, self._policy(tmp_path, kind="verbalized"), tmp_path)
        assert code == cli.EXIT_CONFIG and not (tmp_path / "d.jsonl").exists()

    def test_routes_through_endpoint(self, tmp_path, endpoint):
        cfg, server = endpoint
        write_records(tmp_path / "t.jsonl", make_records([0.1, 0.5, 0.9], expert_tokens=None))
        code = self._route(tmp_path / "t.jsonl", self._policy(tmp_path, 0.4), tmp_path, "--config", str(cfg))
        assert code == 0 and len(server.requests) == 2
        decisions = [json.loads(x) for x in (tmp_path / "d.jsonl").read_text().splitlines()]
        assert [d["used_expert"] for d in decisions] == [False, True, True]
        assert json.loads((tmp_path / "report.json").read_text())["stp_percent"] is None

    def test_expert_failure_exit_code(self, tmp_path, endpoint):
        cfg, server = endpoint
        server.failures = [400]
        write_records(tmp_path / "t.jsonl", make_records([0.9]))
        code = self._route(tmp_path / "t.jsonl", self._policy(tmp_path, 0.4), tmp_path, "--config", str(cfg))
        assert code == cli.EXIT_TRANSPORT
        assert json.loads((tmp_path / "d.jsonl").read_text())["failed"] is True


class TestSimulate:
    def _scenario(self, tmp_path):
        path = tmp_path / "s.toml"
        path.write_text(
            'name = "tiny"\nn_cal = 60\nn_test = 60\nreps = 1\n[budget]\nepsilon = 0.1\nalpha = 0.05\n'
            '[uncertainty]\nlaw = "beta"\na = 2.0\nb = 5.0\n[loss]\nlaw = "bernoulli_sigmoid"\n'
        )
        return path

    def test_single_rep_skips_checks(self, tmp_path, capsys):
        assert cli.main(["simulate", str(self._scenario(tmp_path))]) == 0
        assert "checks skipped" in capsys.readouterr().out

    def test_json_deterministic(self, tmp_path):
        s = self._scenario(tmp_path)
        for name in ("a", "b"):
            cli.main(["simulate", str(s), "--reps", "3", "--bound", "clt", "--json", str(tmp_path / f"{name}.json")])
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_invalid_scenario(self, tmp_path):
        (tmp_path / "bad.toml").write_text('bound = "bernstein"\n')
        assert cli.main(["simulate", str(tmp_path / "bad.toml")]) == cli.EXIT_CONFIG
