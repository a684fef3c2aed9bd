import json
import math
import subprocess
import sys

import numpy as np
import pytest

from gmeasure.cli import CONFIG_TAG, REPORT_TAG, ConfigError, digest, dispatch, main, validate

TABLE1 = {"kind": "table", "columns": [[0.4, 0.6], [0.7, 0.3]]}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, command, cfg, *extra, capsys=None):
    code = main([command, "--config", write(tmp_path, cfg), *extra])
    out = capsys.readouterr() if capsys else None
    return code, out


def test_check_square_holds(tmp_path, capsys):
    cfg = {"schema": CONFIG_TAG, "variations": {"power": {"K": 1.0, "alpha": 0.6}}, "condition": {"kind": "square"}}
    code, out = run(tmp_path, "check", cfg, capsys=capsys)
    report = json.loads(out.out)
    assert code == 0
    assert report["schema"] == REPORT_TAG
    assert report["result"]["status"] == "holds_at_horizon"


def test_check_square_fails(tmp_path, capsys):
    cfg = {"schema": CONFIG_TAG, "variations": {"power": {"K": 1.0, "alpha": 0.5}}, "condition": {"kind": "square"},
           "horizon": {"terms": 10**5}}
    code, _ = run(tmp_path, "check", cfg, capsys=capsys)
    assert code == 1


def test_check_main_inconclusive(tmp_path, capsys):
    cfg = {"schema": CONFIG_TAG, "variations": {"power": {"K": 0.5, "alpha": 0.5}}, "condition": {"kind": "main"},
           "blocks": {"strategy": "geometric", "c": 2}}
    code, out = run(tmp_path, "check", cfg, capsys=capsys)
    report = json.loads(out.out)
    assert code == 2
    assert report["result"]["witness"]["sum_verdict"] == "diverges"


def test_check_with_validity_table(tmp_path, capsys):
    cfg = {"schema": CONFIG_TAG, "g": TABLE1, "condition": {"kind": "main"}, "blocks": {"strategy": "unit", "M": 200},
           "rates": {"source": "from_rho"}, "horizon": {"terms": 200}}
    out_dir = tmp_path / "out"
    code, _ = run(tmp_path, "check", cfg, "--out", str(out_dir), capsys=capsys)
    assert code in (0, 2)
    rows = (out_dir / "validity.csv").read_text().splitlines()
    assert rows[0].split(",")[:3] == ["ell", "B_ell", "b_ell"]
    assert len(rows) == 201
    assert json.loads((out_dir / "report.json").read_text())["result"]["validity"]["all_valid"]


def test_renewal_single_level(tmp_path, capsys):
    cfg = {"schema": CONFIG_TAG, "blocks": {"strategy": "manual", "b": [1]},
           "rates": {"source": "manual", "r": [math.log(2)]}, "horizon": {"steps": 50}}
    out_dir = tmp_path / "out"
    code, out = run(tmp_path, "renewal", cfg, "--out", str(out_dir), capsys=capsys)
    res = json.loads(out.out)["result"]
    assert code == 0
    assert res["limit"] == pytest.approx(1.5, abs=1e-12)
    assert res["A_N"] == pytest.approx(1.5, abs=1e-12)
    lines = (out_dir / "renewal.csv").read_bytes().split(b"\r\n")
    assert lines[0] == b"n,A_n"
    assert lines[1] == b"0,1"
    assert float(lines[2].split(b",")[1]) == pytest.approx(1.5)


def test_blocks_from_variations(tmp_path, capsys):
    cfg = {"schema": CONFIG_TAG, "variations": {"geometric": {"v0": 1.0, "ratio": 2**-0.5}},
           "blocks": {"strategy": "unit", "M": 30}, "rates": {"source": "from_s"}}
    out_dir = tmp_path / "out"
    code, out = run(tmp_path, "blocks", cfg, "--out", str(out_dir), capsys=capsys)
    assert code == 0
    rows = [line.split(",") for line in (out_dir / "blocks.csv").read_text().splitlines()[1:]]
    prefix = np.array([float(r[-1]) for r in rows])
    assert np.all(np.diff(prefix) < 0)
    assert json.loads(out.out)["result"]["delta_bar"] == pytest.approx(prefix[-1])


def test_hellinger_table1(tmp_path, capsys):
    cfg = {"schema": CONFIG_TAG, "g": TABLE1, "hellinger": {"B": [0, 1], "b": [1, 2]}}
    code, out = run(tmp_path, "hellinger", cfg, capsys=capsys)
    res = json.loads(out.out)["result"]
    assert code == 0 and res["orderings_hold"] and res["pairs"] == 4


def test_iterate_table1(tmp_path, capsys):
    cfg = {"schema": CONFIG_TAG, "g": TABLE1, "iterate": {"nu1": [1], "nu2": [0]}, "horizon": {"n_max": 20}}
    code, out = run(tmp_path, "iterate", cfg, capsys=capsys)
    assert code == 0
    assert json.loads(out.out)["result"]["final_distance"] < 1e-3


def couple_cfg():
    return {"schema": CONFIG_TAG, "g": TABLE1, "g_tilde": {"kind": "table", "columns": [[0.4, 0.6], [0.7 - 0.3 * math.expm1(0.02), 0.3 * math.exp(0.02)]]},
            "blocks": {"strategy": "unit", "M": 10}, "rates": {"source": "from_rho"},
            "horizon": {"steps": 1000, "trials": 4}}


def test_couple_needs_seed(tmp_path, capsys):
    code, out = run(tmp_path, "couple", couple_cfg(), capsys=capsys)
    assert code == 3
    assert "seed" in out.err


def test_couple_is_deterministic(tmp_path, capsys):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    code_a, _ = run(tmp_path, "couple", couple_cfg(), "--seed", "42", "--out", str(a_dir), capsys=capsys)
    code_b, _ = run(tmp_path, "couple", couple_cfg(), "--seed", "42", "--out", str(b_dir), capsys=capsys)
    assert code_a == code_b == 0
    assert (a_dir / "report.json").read_bytes() == (b_dir / "report.json").read_bytes()
    assert (a_dir / "couple.csv").read_bytes() == (b_dir / "couple.csv").read_bytes()


def test_digest_is_key_order_free():
    a = {"schema": CONFIG_TAG, "seed": 1, "g": TABLE1}
    b = {"g": TABLE1, "seed": 1, "schema": CONFIG_TAG}
    assert digest(a) == digest(b)
    assert digest(a) != digest(dict(a, seed=2))
    _, report, _, _ = dispatch("iterate", dict(a, iterate={"nu1": [0], "nu2": [1]}))
    assert report["config_digest"] == digest(report["config"])


@pytest.mark.parametrize("cfg, field", [
    ({"variations": {"power": {"K": 1, "alpha": 1}}}, "<root>"),
    ({"schema": CONFIG_TAG, "bogus": 1}, "<root>"),
    ({"schema": CONFIG_TAG, "blocks": {"strategy": "geometric", "c": 0.5}}, "blocks/c"),
    ({"schema": CONFIG_TAG, "seed": -1}, "seed"),
    ({"schema": CONFIG_TAG, "rates": {"source": "manual", "r": [-1.0]}}, "rates/r/0"),
])
def test_schema_rejects(cfg, field):
    with pytest.raises(ConfigError) as info:
        validate(cfg)
    assert info.value.field == field


def test_invalid_inputs_exit_3(tmp_path, capsys):
    bad_table = {"schema": CONFIG_TAG, "g": {"kind": "table", "columns": [[0.5, 0.6]]}, "hellinger": {"B": [0], "b": [1]}}
    assert run(tmp_path, "hellinger", bad_table, capsys=capsys)[0] == 3
    no_blocks = {"schema": CONFIG_TAG, "rates": {"source": "manual", "r": [1.0]}}
    code, out = run(tmp_path, "renewal", no_blocks, capsys=capsys)
    assert code == 3 and "blocks" in out.err
    nan_path = tmp_path / "nan.json"
    nan_path.write_text('{"schema": "%s", "seed": NaN}' % CONFIG_TAG)
    assert main(["check", "--config", str(nan_path)]) == 3
    assert main(["check", "--config", str(tmp_path / "missing.json")]) == 3


def test_module_entry_point(tmp_path):
    cfg = {"schema": CONFIG_TAG, "blocks": {"strategy": "manual", "b": [1, 1]},
           "rates": {"source": "manual", "r": [math.log(2), math.log(2)]}, "horizon": {"steps": 1000}}
    proc = subprocess.run([sys.executable, "-m", "gmeasure", "renewal", "--config", write(tmp_path, cfg)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["result"]["limit"] == pytest.approx(7 / 6, abs=1e-12)
