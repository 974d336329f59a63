"""Reading and writing cohorts, posterior draws and optimization reports.

Dataset layout (one directory, UTF-8 CSV with exact headers):

    patients.csv   id, <covariate columns>
    visits.csv     id, t_days, y_log_lab, d_log_dose
    outcomes.csv   id, t_tilde_days, delta

plus an optional ``covariates.json`` sidecar holding the standardization
moments of the covariates. JSON artifacts carry a schema version.
"""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .inference import PARAM_ORDER, PosteriorDraws
from .joint import ModelVariant, PatientRecord
from .params import PolicyParams
from .policy import OptResult

SCHEMA_VERSION = 1
VISIT_HEADER = ["id", "t_days", "y_log_lab", "d_log_dose"]
OUTCOME_HEADER = ["id", "t_tilde_days", "delta"]
SIDECAR = "covariates.json"


class DatasetError(ValueError):
    """Raised with every problem found while parsing a dataset, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid dataset:\n" + "\n".join(problems))


class SchemaError(ValueError):
    pass


def fmt(v: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    return "%.17g" % v


@dataclass
class DatasetBundle:
    records: list[PatientRecord]
    covariate_names: list[str]
    covariate_stats: dict | None = None


# --------------------------------------------------------------------------
# datasets


def write_dataset(records: list[PatientRecord], out_dir, covariate_names: list[str],
                  covariate_stats: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "patients.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", *covariate_names])
        for r in records:
            w.writerow([r.id, *map(fmt, r.x)])
    with open(out / "visits.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(VISIT_HEADER)
        for r in records:
            for t, y, d in zip(r.t, r.labs, r.d):
                w.writerow([r.id, fmt(t), fmt(y), fmt(d)])
    with open(out / "outcomes.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(OUTCOME_HEADER)
        for r in records:
            w.writerow([r.id, fmt(r.T_tilde), r.delta])
    if covariate_stats is not None:
        (out / SIDECAR).write_text(json.dumps(covariate_stats, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")


def _read_rows(path: Path, problems: list[str], expected: list[str] | None = None):
    if not path.exists():
        problems.append(f"{path}: file not found")
        return None, []
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        problems.append(f"{path}:1: missing header")
        return None, []
    header = [h.strip() for h in rows[0]]
    if expected is not None and header != expected:
        problems.append(f"{path}:1: header {header} does not match {expected}")
        return None, []
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            problems.append(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            continue
        body.append((lineno, [c.strip() for c in row]))
    return header, body


def _number(text: str, where: str, problems: list[str]) -> float | None:
    try:
        v = float(text)
    except ValueError:
        problems.append(f"{where}: not a number: {text!r}")
        return None
    if not math.isfinite(v):
        problems.append(f"{where}: non-finite value {text!r}")
        return None
    return v


def load_dataset(path, covariate_names: list[str] | None = None) -> DatasetBundle:
    """Parse and validate a dataset directory.

    Every problem found is reported together, each as ``file:line: message``.
    """
    root = Path(path)
    problems: list[str] = []
    pat_path, vis_path, out_path = root / "patients.csv", root / "visits.csv", root / "outcomes.csv"
    header, prow = _read_rows(pat_path, problems)
    if header is not None:
        if header[0] != "id" or len(header) < 1:
            problems.append(f"{pat_path}:1: first column must be 'id'")
        elif covariate_names is not None and header[1:] != list(covariate_names):
            problems.append(f"{pat_path}:1: covariate columns {header[1:]} do not match "
                            f"{list(covariate_names)}")
    names = header[1:] if header else []
    _, vrow = _read_rows(vis_path, problems, VISIT_HEADER)
    _, orow = _read_rows(out_path, problems, OUTCOME_HEADER)

    covs: dict[str, np.ndarray] = {}
    order: list[str] = []
    for lineno, row in prow:
        where = f"{pat_path}:{lineno}"
        pid = row[0]
        if not pid:
            problems.append(f"{where}: missing id")
            continue
        if pid in covs:
            problems.append(f"{where}: duplicate id {pid}")
            continue
        vals = [_number(c, where, problems) for c in row[1:]]
        if any(v is None for v in vals):
            continue
        covs[pid] = np.array(vals, dtype=np.float64)
        order.append(pid)

    visits: dict[str, list] = defaultdict(list)
    for lineno, row in vrow:
        where = f"{vis_path}:{lineno}"
        pid = row[0]
        if pid not in covs:
            problems.append(f"{where}: unknown patient id {pid!r}")
            continue
        vals = [_number(c, where, problems) for c in row[1:]]
        if any(v is None for v in vals):
            continue
        if visits[pid] and vals[0] <= visits[pid][-1][1][0]:
            problems.append(f"{where}: visit times for {pid} are not strictly increasing")
            continue
        visits[pid].append((lineno, vals))

    outcomes: dict[str, tuple] = {}
    for lineno, row in orow:
        where = f"{out_path}:{lineno}"
        pid = row[0]
        if pid not in covs:
            problems.append(f"{where}: unknown patient id {pid!r}")
            continue
        if pid in outcomes:
            problems.append(f"{where}: duplicate outcome for {pid}")
            continue
        T = _number(row[1], where, problems)
        if row[2] not in ("0", "1"):
            problems.append(f"{where}: delta must be 0 or 1, got {row[2]!r}")
            continue
        if T is None:
            continue
        outcomes[pid] = (lineno, T, int(row[2]))

    records = []
    for pid in order:
        v = visits.get(pid, [])
        if not v:
            problems.append(f"{vis_path}: patient {pid} has no visits (a t_days = 0 row is required)")
            continue
        if v[0][1][0] != 0.0:
            problems.append(f"{vis_path}:{v[0][0]}: first visit of {pid} must be at t_days = 0")
            continue
        if pid not in outcomes:
            problems.append(f"{out_path}: patient {pid} has no outcome row")
            continue
        lineno, T, delta = outcomes[pid]
        arr = np.array([vals for _, vals in v])
        if arr[-1, 0] > T or not T > 0:
            problems.append(f"{out_path}:{lineno}: t_tilde_days for {pid} precedes its last visit "
                            "or is not positive")
            continue
        records.append(PatientRecord(id=pid, x=covs[pid], t=arr[:, 0], d=arr[:, 2],
                                     labs=arr[:, 1], T_tilde=T, delta=delta))
    if problems:
        raise DatasetError(problems)
    stats = None
    if (root / SIDECAR).exists():
        stats = json.loads((root / SIDECAR).read_text(encoding="utf-8"))
    return DatasetBundle(records=records, covariate_names=list(names), covariate_stats=stats)


# --------------------------------------------------------------------------
# JSON artifacts


def _dump(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load(path, kind: str) -> dict:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema version {version!r} is not supported "
                          f"(expected {SCHEMA_VERSION})")
    if d.get("kind") != kind:
        raise SchemaError(f"{path}: expected a {kind} artifact, found {d.get('kind')!r}")
    return d


def posterior_to_dict(post: PosteriorDraws) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "posterior",
        "variant": ModelVariant(post.variant).value,
        "ids": list(post.ids),
        "covariate_names": list(post.covariate_names),
        "config": post.config,
        "acceptance": post.acceptance,
        "params": {k: np.asarray(post.params[k]).tolist() for k in PARAM_ORDER},
        "pointwise": np.asarray(post.pointwise).tolist(),
    }


def posterior_from_dict(d: dict) -> PosteriorDraws:
    missing = [k for k in PARAM_ORDER if k not in d["params"]]
    if missing:
        raise SchemaError(f"posterior is missing parameters {missing}")
    params = {k: np.asarray(d["params"][k], dtype=np.float64) for k in PARAM_ORDER}
    return PosteriorDraws(params=params, pointwise=np.asarray(d["pointwise"], dtype=np.float64),
                          acceptance=d["acceptance"], ids=list(d["ids"]),
                          variant=ModelVariant(d["variant"]),
                          covariate_names=list(d.get("covariate_names", [])),
                          config=d.get("config", {}))


def save_posterior(post: PosteriorDraws, path) -> None:
    _dump(posterior_to_dict(post), path)


def load_posterior(path) -> PosteriorDraws:
    return posterior_from_dict(_load(path, "posterior"))


def policy_to_dict(theta: PolicyParams) -> dict:
    return {"nu1": theta.nu1, "nu2": theta.nu2, "mu": theta.mu,
            "beta_d": theta.beta_d.tolist(), "sigma_d2": theta.sigma_d2}


def policy_from_dict(d: dict) -> PolicyParams:
    return PolicyParams(nu1=d["nu1"], nu2=d["nu2"], mu=d["mu"], beta_d=d["beta_d"],
                        sigma_d2=d["sigma_d2"])


def save_policy_report(result: OptResult, theta0: PolicyParams, path, meta: dict | None = None) -> None:
    """Optimization report: best policy, starting policy and the full trace."""
    _dump({
        "schema_version": SCHEMA_VERSION,
        "kind": "policy",
        "policy": policy_to_dict(result.theta_best),
        "theta0": policy_to_dict(theta0),
        "best_index": result.best_index,
        "best_mean_reward": result.best_reward,
        "improvement": result.improvement,
        "mean_rewards": result.mean_rewards.tolist(),
        "grad_norms": result.grad_norms.tolist(),
        "thetas": result.thetas.tolist(),
        "coordinates": theta0.coordinate_names(),
        "n_capped": result.n_capped,
        "meta": meta or {},
    }, path)


def load_policy(path) -> PolicyParams:
    return policy_from_dict(_load(path, "policy")["policy"])


def write_reward_curve(result: OptResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "mean_reward"])
        for m, g in enumerate(result.mean_rewards, start=1):
            w.writerow([m, fmt(g)])


def _flat_names(post: PosteriorDraws) -> list[tuple[str, tuple]]:
    cols = []
    for name in PARAM_ORDER:
        a = np.asarray(post.params[name])
        if a.ndim == 1:
            cols.append((name, ()))
        else:
            for idx in np.ndindex(*a.shape[1:]):
                cols.append((name + "".join(f"[{i}]" for i in idx), idx))
    return cols


def write_trace(post: PosteriorDraws, path) -> None:
    """One row per retained draw, one column per scalar parameter."""
    cols = _flat_names(post)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["draw", *[c for c, _ in cols]])
        for k in range(post.n_draws):
            row = [k]
            for c, idx in cols:
                name = c.split("[")[0]
                row.append(fmt(float(np.asarray(post.params[name])[(k, *idx)])))
            w.writerow(row)


def write_rewards(path, rewards, medians, visits) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["rep", "reward", "median_survival_days", "visits"])
        for i, (r, m, v) in enumerate(zip(rewards, medians, visits)):
            w.writerow([i, fmt(r), fmt(m), int(v)])
