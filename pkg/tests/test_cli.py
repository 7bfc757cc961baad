import json

import pytest

from cookiewalk.cli import (EXIT_CONFIG, EXIT_OK, EXIT_REFUSED, ConfigError, main,
                            parse_config)

PLACEBO = [{"weight": 1.0, "probs": [0.5]}]


def run(tmp_path, command, cfg, *extra):
    cfg = {"output_dir": str(tmp_path / "out"), **cfg}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return main([command, "--config", str(path), *extra])


@pytest.mark.parametrize("raw", [
    {"seed": 1},
    {"environment": PLACEBO},
    {"environment": PLACEBO, "seed": 1, "horizn": 10},
    {"environment": PLACEBO, "seed": -1},
    {"environment": PLACEBO, "seed": 1, "horizon": 0},
    {"environment": PLACEBO, "seed": 1, "level": 1.5},
    {"environment": PLACEBO, "seed": 1, "tail_cut": 0.1},
    {"environment": [{"weight": 1.0, "probs": [1.2]}], "seed": 1},
    {"environment": [{"weight": 0.5, "probs": [0.5]}], "seed": 1},
])
def test_bad_configs_rejected(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_bad_config_exit_code(tmp_path, capsys):
    assert run(tmp_path, "delta", {"environment": PLACEBO, "seed": 1, "bogus": 1}) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(["delta", "--config", str(bad)]) == EXIT_CONFIG


def test_config_digest_stable():
    a = parse_config({"environment": PLACEBO, "seed": 4, "horizon": 10})
    b = parse_config({"horizon": 10, "seed": 4, "environment": PLACEBO})
    assert a.digest == b.digest and len(a.digest) == 16
    moved = parse_config({"environment": PLACEBO, "seed": 4, "horizon": 10, "output_dir": "x"})
    assert moved.digest == a.digest
    assert a.header("walk").startswith("cookiewalk 0.1.0 walk config_sha256=")


def test_delta_placebo(tmp_path, capsys):
    assert run(tmp_path, "delta", {"environment": PLACEBO, "seed": 1}) == EXIT_OK
    text = (tmp_path / "out" / "delta.txt").read_text()
    assert text.startswith("# cookiewalk 0.1.0 delta config_sha256=")
    assert "delta=0.0\n" in text
    assert "delta=0.0" in capsys.readouterr().out


def test_nu_rows(tmp_path):
    pile = [{"weight": 1.0, "probs": [0.75]}]
    assert run(tmp_path, "nu", {"environment": pile, "seed": 1}) == EXIT_OK
    rows = (tmp_path / "out" / "nu_forward.csv").read_text().splitlines()
    assert rows[1] == "k,pmf"
    got = [float(v) for r in rows[2:5] for v in r.split(",")]
    assert got == pytest.approx([-1, 0.25, 0, 0.375, 1, 0.1875], rel=1e-12)


def test_walk_csv(tmp_path):
    cfg = {"environment": PLACEBO, "seed": 2, "horizon": 5, "replicates": 3}
    assert run(tmp_path, "walk", cfg) == EXIT_OK
    rows = (tmp_path / "out" / "walk.csv").read_text().splitlines()
    assert rows[1] == "path_id,n,X_n"
    assert len(rows) == 2 + 3 * 6
    assert rows[2] == "0,0,0"


def test_tree_roundtrip(tmp_path):
    cfg = {"environment": PLACEBO, "seed": 2, "horizon": 2000, "replicates": 50}
    assert run(tmp_path, "tree-roundtrip", cfg) == EXIT_OK
    assert "fail=0" in (tmp_path / "out" / "tree_roundtrip.txt").read_text()


def test_branching_curves(tmp_path):
    cfg = {"environment": PLACEBO, "seed": 2, "horizon": 20, "replicates": 1000}
    assert run(tmp_path, "branching", cfg, "--direction", "backward") == EXIT_OK
    rows = (tmp_path / "out" / "branching_backward.csv").read_text().splitlines()
    assert rows[0].startswith("# cookiewalk")
    assert len(rows) > 20


def test_verify_refused(tmp_path):
    cfg = {"environment": [{"weight": 1.0, "probs": [1.0]}], "seed": 1}
    assert run(tmp_path, "verify", cfg) == EXIT_REFUSED
    assert "refused=" in (tmp_path / "out" / "verify.txt").read_text()


def test_renewal_outputs_independent_of_workers(tmp_path):
    cfg = {"environment": [{"weight": 1.0, "probs": [0.875] * 4}], "seed": 5,
           "horizon": 3000, "replicates": 200, "margin": 200}
    outs = []
    for w in ("1", "3"):
        d = tmp_path / w
        d.mkdir()
        assert run(d, "renewal", cfg, "--workers", w) == EXIT_OK
        outs.append({n: (d / "out" / n).read_bytes()
                     for n in ("renewal.txt", "cycles.csv", "bt.csv")})
    assert outs[0] == outs[1]
    assert b"v_hat=" in outs[0]["renewal.txt"]
