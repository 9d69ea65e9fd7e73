import csv
import io
import json
import subprocess
import sys

import pytest

from pipedraft import cli
from pipedraft.core import EngineFault
from pipedraft.metrics import METRICS_COLUMNS, SWEEP_COLUMNS

PAIR = """\
schema_version = 1
seed = 42
max_tokens = 1500
modes = ["autoregressive", "speculative_sync", "pipespec_async"]

[[stages]]
latency = 1.0

[[stages]]
latency = 10.0
acceptance = 0.8

[mode_overrides.speculative_sync]
lookahead = 8
window = 8
"""

TRIPLE = """\
schema_version = 1
seed = 3
max_tokens = 1500
modes = ["speculative_sync", "pipespec_async"]

[[stages]]
latency = 1.0

[[stages]]
latency = 10.0
acceptance = 0.9

[[stages]]
latency = 70.0
acceptance = 0.9

[mode_overrides.speculative_sync]
lookahead = 8
"""


@pytest.fixture
def pair_cfg(tmp_path):
    p = tmp_path / "pair.toml"
    p.write_text(PAIR)
    return p


@pytest.fixture
def triple_cfg(tmp_path):
    p = tmp_path / "triple.toml"
    p.write_text(TRIPLE)
    return p


def invoke(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


# analytic -------------------------------------------------------------------


def test_analytic_report(capsys):
    code, out, _ = invoke(capsys, "analytic", "--alpha", 0.8, "--gamma", 4, "--speed-ratio", 10)
    assert code == 0
    r = json.loads(out)
    assert r["rho_steady"] == pytest.approx(0.5434, abs=1e-4)
    assert r["expected_tokens"] == pytest.approx(2.283, abs=1e-3)


def test_analytic_zero_alpha(capsys):
    code, out, _ = invoke(capsys, "analytic", "--alpha", 0, "--gamma", 8)
    r = json.loads(out)
    assert code == 0 and r["expected_tokens"] == 1.0 and r["sd_speedup"] < 1.0


@pytest.mark.parametrize(
    "argv, bound",
    [
        (["--alpha", "1.2", "--gamma", "4"], "--alpha"),
        (["--alpha", "-0.5", "--gamma", "4"], "--alpha"),
        (["--alpha", "0.5", "--gamma", "-1"], "--gamma"),
        (["--alpha", "0.5", "--gamma", "2", "--speed-ratio", "0"], "--speed-ratio"),
        (["--alpha", "0.5"], "--gamma"),
    ],
)
def test_analytic_domain_errors(capsys, argv, bound):
    code, _, err = invoke(capsys, "analytic", *argv)
    assert code == 2 and bound in err


def test_analytic_grid(capsys, tmp_path):
    out = tmp_path / "grid.csv"
    assert invoke(capsys, "analytic", "--grid", "--speed-ratio", 4, "--out", out)[0] == 0
    rows = read_csv(out.read_text())
    assert len(rows) == 19 * 16
    assert tuple(rows[0]) == cli.ANALYTIC_COLUMNS
    assert all(float(r["pipespec_rate"]) > 1 for r in rows)


# simulate / compare -----------------------------------------------------------


def test_simulate_writes_outputs(capsys, pair_cfg, tmp_path):
    out = tmp_path / "run"
    assert invoke(capsys, "simulate", "--config", pair_cfg, "--out", out, "--emit-events")[0] == 0
    summary = json.loads((out / "summary.json").read_text())
    assert [b["mode"] for b in summary["runs"]] == ["autoregressive", "speculative_sync", "pipespec_async"]
    rows = read_csv((out / "metrics.csv").read_text())
    assert tuple(rows[0]) == METRICS_COLUMNS
    hist = read_csv((out / "histogram.csv").read_text())
    assert tuple(hist[0]) == cli.HISTOGRAM_COLUMNS
    for mode in ("autoregressive", "speculative_sync", "pipespec_async"):
        assert (out / f"events-{mode}.jsonl").exists()


def test_simulate_is_byte_identical(capsys, pair_cfg, tmp_path):
    for name in ("a", "b"):
        assert invoke(capsys, "simulate", "--config", pair_cfg, "--out", tmp_path / name, "--emit-events")[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_pair_speedup_ordering(capsys, pair_cfg):
    code, out, _ = invoke(capsys, "simulate", "--config", pair_cfg)
    speed = {b["mode"]: b["metrics"]["speedup_vs_ar"] for b in json.loads(out)["runs"]}
    assert speed["autoregressive"] == 1.0
    assert speed["pipespec_async"] > speed["speculative_sync"] > 1.0


def test_compare_runs_every_mode(capsys, triple_cfg):
    code, out, _ = invoke(capsys, "compare", "--config", triple_cfg)
    runs = json.loads(out)["runs"]
    assert code == 0 and [b["mode"] for b in runs] == ["autoregressive", "speculative_sync", "pipespec_async"]
    assert len({b["final_digest"] for b in runs}) == 1


def test_seed_override(capsys, pair_cfg):
    a = json.loads(invoke(capsys, "simulate", "--config", pair_cfg)[1])
    b = json.loads(invoke(capsys, "simulate", "--config", pair_cfg, "--seed", 7)[1])
    assert b["seed"] == 7
    assert a["runs"][0]["final_digest"] != b["runs"][0]["final_digest"]


def test_invalid_config_diagnostics(capsys, tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(PAIR.replace("seed = 42", "seed = 42\nturbo = true"))
    code, _, err = invoke(capsys, "simulate", "--config", p)
    assert code == 2 and "turbo" in err
    code, _, err = invoke(capsys, "simulate", "--config", tmp_path / "nope.toml")
    assert code == 2
    assert invoke(capsys, "simulate")[0] == 2


def test_emit_events_needs_out(capsys, pair_cfg):
    assert invoke(capsys, "simulate", "--config", pair_cfg, "--emit-events")[0] == 2


def test_engine_fault_exit_code(capsys, pair_cfg, monkeypatch):
    def boom(*a, **k):
        raise EngineFault("rollback target beyond buffer")

    monkeypatch.setattr(cli, "run", boom)
    assert invoke(capsys, "simulate", "--config", pair_cfg)[0] == 3


# sweep ----------------------------------------------------------------------


def sweep_rows(capsys, cfg, axis, values):
    code, out, _ = invoke(capsys, "sweep", "--config", cfg, "--axis", axis, "--values", values)
    assert code == 0
    rows = read_csv(out)
    assert tuple(rows[0]) == SWEEP_COLUMNS
    return rows


def column(rows, mode, key="time_per_token"):
    return [float(r[key]) for r in rows if r["mode"] == mode]


def test_sweep_lookahead_shapes(capsys, triple_cfg):
    rows = sweep_rows(capsys, triple_cfg, "lookahead", "1,8,30")
    sd = column(rows, "speculative_sync")
    assert sd[0] > sd[1] < sd[2]
    assert [r["value"] for r in rows[:3]] == ["1", "8", "30"]


def test_sweep_depth(capsys, triple_cfg):
    rows = sweep_rows(capsys, triple_cfg, "depth", "2,3")
    ps = column(rows, "pipespec_async", "speedup")
    assert ps[1] > ps[0]


def test_sweep_alpha_monotone(capsys, pair_cfg):
    rows = sweep_rows(capsys, pair_cfg, "alpha", "0.1,0.3,0.5,0.7,0.9")
    ps = column(rows, "pipespec_async", "speedup")
    assert ps == sorted(ps)


def test_sweep_usage_errors(capsys, pair_cfg):
    with pytest.raises(SystemExit) as exc:
        cli.main(["sweep", "--config", str(pair_cfg), "--axis", "width", "--values", "1"])
    assert exc.value.code == 2
    capsys.readouterr()
    assert invoke(capsys, "sweep", "--config", pair_cfg, "--axis", "alpha")[0] == 2
    assert invoke(capsys, "sweep", "--config", pair_cfg, "--axis", "alpha", "--values", "x")[0] == 2
    assert invoke(capsys, "sweep", "--config", pair_cfg, "--axis", "lookahead", "--values", "1.5")[0] == 2


def test_sweep_values_from_config(capsys, tmp_path):
    p = tmp_path / "s.toml"
    p.write_text(PAIR + '\n[sweep]\naxis = "gamma"\nvalues = [2, 4]\n')
    code, out, _ = invoke(capsys, "sweep", "--config", p)
    assert code == 0 and len(read_csv(out)) == 6


# replay ---------------------------------------------------------------------


def test_replay_reconstructs_runs(capsys, pair_cfg, tmp_path):
    out = tmp_path / "run"
    invoke(capsys, "simulate", "--config", pair_cfg, "--out", out, "--emit-events")
    summary = json.loads((out / "summary.json").read_text())
    for block in summary["runs"]:
        code, text, _ = invoke(capsys, "replay", out / f"events-{block['mode']}.jsonl")
        r = json.loads(text)
        assert code == 0
        assert r["final_digest"] == block["final_digest"]
        m = block["metrics"]
        assert r["accept_histogram"] == m["accept_histogram"]
        assert r["busy_fraction"] == m["busy_fraction"]
        assert r["rollbacks"] == m["rollbacks"]
        assert r["time_per_token"] == m["time_per_token"]


def test_replay_errors(capsys, pair_cfg, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert invoke(capsys, "replay", empty)[0] == 2
    out = tmp_path / "run"
    invoke(capsys, "simulate", "--config", pair_cfg, "--out", out, "--emit-events")
    lines = (out / "events-pipespec_async.jsonl").read_text().splitlines()
    cut = tmp_path / "cut.jsonl"
    cut.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
    code, _, err = invoke(capsys, "replay", cut)
    assert code != 0 and "truncated" in err
    assert invoke(capsys, "replay", tmp_path / "missing.jsonl")[0] == 2
    assert invoke(capsys, "replay")[0] == 2


def test_console_entry_point(pair_cfg):
    proc = subprocess.run(
        [sys.executable, "-m", "pipedraft.cli", "analytic", "--alpha", "2", "--gamma", "1"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2 and "--alpha" in proc.stderr
