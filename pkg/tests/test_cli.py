import json

import numpy as np
import pytest

from timedtr import io
from timedtr.cli import main


def pipeline(root):
    root.mkdir()
    data, post = root / "data", root / "post.json"
    assert main(["simulate-cohort", "--n", "30", "--seed", "3", "--out", str(data)]) == 0
    cfg = root / "fit.json"
    cfg.write_text(json.dumps({"iters": 10, "burnin": 4, "thin": 3, "seed": 1}))
    assert main(["fit", "--data", str(data), "--config", str(cfg), "--out", str(post),
                 "--trace-out", str(root / "trace.csv")]) == 0
    patient = root / "patient.json"
    patient.write_text(json.dumps({"id": "S1", "y0": 5.0,
                                   "covariates": {"age_donor": 0.1, "dgf": 0, "bmi": -0.07}}))
    assert main(["optimize", "--posterior", str(post), "--patient-covariates", str(patient),
                 "--steps", "3", "--seed", "4", "--out", str(root / "policy.json")]) == 0
    assert main(["evaluate-policy", "--posterior", str(post), "--patient-covariates", str(patient),
                 "--policy", str(root / "policy.json"), "--reps", "10", "--seed", "5",
                 "--out", str(root / "r_opt.csv")]) == 0
    assert main(["evaluate-policy", "--posterior", str(post), "--patient-covariates", str(patient),
                 "--policy", "fixed:91", "--reps", "10", "--seed", "5",
                 "--out", str(root / "r_fixed.csv")]) == 0
    return root


OUTPUTS = ["data/patients.csv", "data/visits.csv", "data/outcomes.csv", "data/truths.json",
           "post.json", "trace.csv", "policy.json", "policy.csv", "r_opt.csv", "r_fixed.csv"]


def test_pipeline_is_byte_deterministic(tmp_path, capsys):
    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    for name in OUTPUTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    capsys.readouterr()
    assert main(["waic", "--posterior", str(a / "post.json")]) == 0
    out = capsys.readouterr().out.strip()
    post = io.load_posterior(a / "post.json")
    from timedtr.joint import waic
    assert float(out) == waic(post.pointwise)
    assert len((a / "policy.csv").read_text().splitlines()) == 3 + 2


def test_bad_inputs_fail_cleanly(tmp_path, capsys):
    (tmp_path / "data").mkdir()
    assert main(["fit", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "p.json")]) == 2
    assert "file not found" in capsys.readouterr().err
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"iters": 10, "burnin": 10}))
    with pytest.raises(SystemExit):
        main(["fit", "--data", str(tmp_path / "data"), "--config", str(cfg),
              "--out", str(tmp_path / "p.json")])
    cfg.write_text(json.dumps({"iterations": 10}))
    with pytest.raises(SystemExit):
        main(["fit", "--data", str(tmp_path / "data"), "--config", str(cfg),
              "--out", str(tmp_path / "p.json")])
    with pytest.raises(SystemExit):
        main(["optimize", "--posterior", "x.json"])
