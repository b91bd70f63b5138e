import json
import math
from pathlib import Path

import pytest

from cmjsim.cli import main


GW2 = """
[model]
kind = "galton_watson"
probs = [0.0, 0.0, 1.0]

[experiment]
horizons = [1.0, 2.0, 3.0]
replicas = 5
master_seed = 7
simulate_time = 3.0
output_dir = "{out}"
"""

GW_SUB = """
[model]
kind = "galton_watson"
probs = [0.55, 0.0, 0.45]
"""

POI_BINARY = """
[model]
kind = "poisson"
a = 2.0
b = -1

[experiment]
replicas = 5
master_seed = 12
simulate_count = 50
output_dir = "{out}"
"""

RRT_FRINGE = """
[model]
kind = "poisson"
a = 1.0
b = 0

[characteristic]
kind = "fringe"
pattern = "()"

[experiment]
horizons = [5.0]
replicas = 120
master_seed = 12
patterns = ["()"]
output_dir = "{out}"
"""

GW_CLT = """
[model]
kind = "galton_watson"
probs = [0.1, 0.3, 0.6]

[characteristic]
kind = "fringe"
pattern = "()"

[experiment]
replicas = 400
master_seed = 5
clt_t = 7.0
clt_t_big = 10.0
output_dir = "{out}"

[tolerances]
sigma_budget = 800
"""

GW_MART = """
[model]
kind = "galton_watson"
probs = [0.1, 0.3, 0.6]

[experiment]
horizons = [2.0, 4.0]
replicas = 1200
master_seed = 9
output_dir = "{out}"
"""


def write_cfg(tmp_path, template, name="cfg.toml"):
    out = tmp_path / "out"
    cfg = tmp_path / name
    cfg.write_text(template.format(out=out))
    return cfg, out


def test_spectral_command(tmp_path, capsys):
    cfg, out = write_cfg(tmp_path, GW2)
    assert main(["spectral", "--config", str(cfg)]) == 0
    report = json.loads((out / "spectral.json").read_text())
    assert report["alpha"] == pytest.approx(math.log(2), abs=1e-10)
    assert report["beta"] == pytest.approx(1.0, abs=1e-10)
    assert len(report["roots"]) == 1


def test_spectral_poisson_values(tmp_path):
    cfg, out = write_cfg(tmp_path, POI_BINARY)
    assert main(["spectral", "--config", str(cfg)]) == 0
    report = json.loads((out / "spectral.json").read_text())
    assert report["alpha"] == pytest.approx(1.0, abs=1e-9)
    assert report["beta"] == pytest.approx(0.5, abs=1e-12)


def test_spectral_subcritical_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(GW_SUB)
    assert main(["spectral", "--config", str(cfg)]) == 2
    assert "A.2" in capsys.readouterr().err


def test_usage_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[model]\nkind = 'unknown'\n")
    assert main(["spectral", "--config", str(cfg)]) == 1


def test_simulate_deterministic_rows(tmp_path):
    cfg, out = write_cfg(tmp_path, GW2)
    assert main(["simulate", "--config", str(cfg)]) == 0
    rows = (out / "population.csv").read_text().strip().split("\n")
    assert len(rows) == 16  # header + 15 nodes


def test_simulate_idempotent(tmp_path):
    cfg, out = write_cfg(tmp_path, GW2)
    main(["simulate", "--config", str(cfg)])
    first = (out / "population.csv").read_bytes()
    main(["simulate", "--config", str(cfg)])
    assert (out / "population.csv").read_bytes() == first


def test_simulate_weight_threshold(tmp_path):
    cfg, out = write_cfg(tmp_path, POI_BINARY)
    assert main(["simulate", "--config", str(cfg)]) == 0
    rows = (out / "population.csv").read_text().strip().split("\n")
    assert len(rows) == 51  # header + exactly 50 nodes


def test_fringe_command_prediction(tmp_path):
    cfg, out = write_cfg(tmp_path, RRT_FRINGE)
    assert main(["fringe", "--config", str(cfg)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["predictions"]["fringe()"] == pytest.approx(0.5, rel=1e-8)
    assert report["passed"]


def test_lln_command(tmp_path):
    cfg, out = write_cfg(tmp_path, RRT_FRINGE)
    assert main(["lln", "--config", str(cfg)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"]
    assert (out / "lln.csv").exists()


def test_clt_command_and_negative_control(tmp_path):
    cfg, out = write_cfg(tmp_path, GW_CLT)
    assert main(["clt", "--config", str(cfg)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["ks_p_value"] > 1e-4
    assert (out / "replicas.csv").exists()
    assert (out / "sigma_points.csv").exists()
    assert main(
        ["clt", "--config", str(cfg), "--inject-aalpha-bias", "0.1"]
    ) == 0
    biased = json.loads((out / "report.json").read_text())
    assert biased["ks_p_value"] < 1e-6
    assert not biased["passed"]


DEGENERATE_CLT = """
[model]
kind = "galton_watson"
probs = [0.0, 0.0, 1.0]

[characteristic]
kind = "indicator"

[experiment]
replicas = 20
master_seed = 5
clt_t = 4.0
clt_t_big = 6.0
output_dir = "{out}"

[tolerances]
sigma_budget = 50
"""

MIXTURE_CLT = """
[model]
kind = "fragmentation"
components = [{{weight = 0.5, v = [0.5, 0.5]}}, {{weight = 0.5, v = [0.3, 0.7]}}]

[characteristic]
kind = "fringe"
pattern = "()"

[experiment]
replicas = 20
master_seed = 5
clt_t = 4.0
clt_t_big = 6.0
output_dir = "{out}"
"""


def test_clt_degenerate_exit_code(tmp_path):
    cfg, out = write_cfg(tmp_path, DEGENERATE_CLT)
    assert main(["clt", "--config", str(cfg)]) == 3
    report = json.loads((out / "report.json").read_text())
    assert report["degenerate"]
    assert report["passed"] is None


def test_clt_extra_roots_refused(tmp_path, capsys):
    cfg, out = write_cfg(tmp_path, MIXTURE_CLT)
    assert main(["clt", "--config", str(cfg)]) == 3
    assert "root" in capsys.readouterr().err


def test_martingales_command(tmp_path):
    cfg, out = write_cfg(tmp_path, GW_MART)
    assert main(["martingales", "--config", str(cfg)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"]
    assert (out / "trace_w.csv").exists()
    assert (out / "trace_biggins.csv").exists()


def test_seed_override_changes_outputs(tmp_path):
    cfg, out = write_cfg(tmp_path, POI_BINARY)
    main(["simulate", "--config", str(cfg), "--seed", "12"])
    base = (out / "population.csv").read_bytes()
    main(["simulate", "--config", str(cfg), "--seed", "13"])
    assert (out / "population.csv").read_bytes() != base


def test_simulate_extinct_threshold_is_an_error(tmp_path, capsys):
    cfg, out = write_cfg(tmp_path, POI_BINARY)
    # seed 7 draws zero children for the root: the threshold is unreachable
    assert main(["simulate", "--config", str(cfg), "--seed", "7"]) == 1
    assert "extinct" in capsys.readouterr().err


def test_resource_cap_exit_code(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        """
[model]
kind = "galton_watson"
probs = [0.0, 0.0, 1.0]

[experiment]
simulate_time = 25.0
node_cap = 5000
output_dir = "{}"
""".format(tmp_path / "out")
    )
    assert main(["simulate", "--config", str(cfg)]) == 4
    assert "cap" in capsys.readouterr().err
