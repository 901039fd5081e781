from __future__ import annotations

import hashlib
import json
import subprocess
import sys

import pytest

from loopsoup import cli


def test_minimal_config_accepted():
    c = cli.parse_config('{"kind": "theta", "version": 1, "alpha": 2.0}')
    assert c.kind == "theta" and c.d == 3 and c.m == 2


def test_config_round_trip():
    c = cli.parse_config('{"kind": "slab", "widths": [2, 4], "n": 6, "seed": 9}')
    assert cli.config_from_dict(json.loads(json.dumps(c.to_dict()))) == c


@pytest.mark.parametrize("raw, needle", [
    ({"kind": "alpha-c", "d": 2}, "d >= 3"),
    ({"kind": "theta", "alpha": 1.0, "m": 3}, "even"),
    ({"kind": "theta", "alpha": 1.0, "colour": "red"}, "unknown key"),
    ({"kind": "theta", "alpha": 1.0, "version": 2}, "version"),
    ({"kind": "sample"}, "needs alpha"),
    ({"kind": "theta", "alpha": "one"}, "finite number"),
])
def test_config_rejections(raw, needle):
    with pytest.raises(cli.ConfigError) as exc:
        cli.config_from_dict(raw)
    assert any(needle in v for v in exc.value.violations)


def test_all_violations_reported(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"kind": "theta", "alpha": 1.0, "m": 3, "d": 2, "bogus": 1}))
    assert cli.main(["theta", "--config", str(p)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.count("config error") == 3


def test_syntax_error_and_kind_mismatch(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert cli.main(["theta", "--config", str(p)]) == cli.EXIT_CONFIG
    p.write_text('{"kind": "slab"}')
    assert cli.main(["theta", "--config", str(p)]) == cli.EXIT_CONFIG


def _hashes(d):
    return {f.name: hashlib.sha256(f.read_bytes()).hexdigest()
            for f in sorted(d.iterdir()) if f.name != "run_log.json"}


def test_deterministic_outputs_and_manifest_reference(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "theta", "alphas": [1.0, 4.0], "n": 2, "replicas": 40, "seed": 3}))
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["theta", "--config", str(cfg), "--out", str(a)]) == 0
    assert cli.main(["theta", "--config", str(cfg), "--out", str(b), "--workers", "2"]) == 0
    assert _hashes(a) == _hashes(b)
    ref = hashlib.sha256((a / "manifest.json").read_bytes()).hexdigest()
    first = (a / "theta.csv").read_text().splitlines()[0]
    assert first == f"# manifest_sha256={ref}"
    log = json.loads((a / "run_log.json").read_text())
    assert log["manifest_sha256"] == ref and "wall_clock_s" in log
    man = json.loads((a / "manifest.json").read_text())
    assert man["config"]["seed"] == 3 and "out" not in man["config"]
    assert "epsilon_tail" in man and "seed_streams" in man


def test_seed_changes_output(tmp_path):
    base = ["sample", "--replicas", "2"]
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "sample", "alpha": 3.0, "n": 2}))
    assert cli.main(base + ["--config", str(cfg), "--out", str(tmp_path / "s0"), "--seed", "0"]) == 0
    assert cli.main(base + ["--config", str(cfg), "--out", str(tmp_path / "s1"), "--seed", "1"]) == 0
    a = (tmp_path / "s0" / "soup.ndjson").read_text()
    assert a != (tmp_path / "s1" / "soup.ndjson").read_text()
    assert json.loads(a.splitlines()[0])["meta"]["manifest_sha256"]


def test_oracle_validate_exit_zero(tmp_path):
    assert cli.main(["oracle-validate", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "oracle.csv").read_text().splitlines()
    assert rows[1] == "check,passed,detail"
    assert all(r.split(",")[1] == "1" for r in rows[2:])


def test_runtime_value_error_exits_3(tmp_path):
    # an isolated origin has no ball of radius 2
    c = cli.config_from_dict({"kind": "regular-ball", "alpha": 0.0, "r": 2, "n": 2, "out": str(tmp_path)})
    res = cli.run(c)
    assert res.status == cli.EXIT_MARGIN and "ValueError" in res.flags[0]
    assert json.loads((tmp_path / "run_log.json").read_text())["status"] == cli.EXIT_MARGIN


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "loopsoup", "theta", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == cli.EXIT_CONFIG and "needs alpha" in r.stderr
