"""Long-format choice CSVs, the JSON run configuration and file hashing.

A run configuration is a JSON object::

    {
      "kernel": "MNR",
      "base_alternative": 4,
      "alternatives": [1, 2, 3, 4],
      "alternative_names": ["car", "bus", "rail", "walk"],
      "utility": {
        "asc": [1, 2, 3],
        "generic": ["time", "cost"],
        "specific": {"age_bus": {"column": "age", "alternatives": [2]}}
      },
      "dof_groups": null,
      "priors": {"b0_precision": 0.01, "rho": null, "S_scale": 1.0, "alpha0": 2.0, "beta0": 0.1},
      "chains": {"total_iterations": 300000, "warmup": 200000, "thin": 10, "n_chains": 1, "seed": 0},
      "prediction": {"n_posterior_draws": 200, "n_error_draws": 256, "seed": 0},
      "scenarios": ["alt=2,attr=time,change=+10%"]
    }

``generic`` columns get one coefficient shared by all alternatives.
``specific`` coefficients take their values from ``column`` for the listed
alternatives and zero elsewhere, which also covers individual-specific
variables. Every key is optional except ``utility``; CLI flags override keys.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgument
from .gibbs import ChainConfig
from .model import ModelSpec, PriorSpec, build_dataset
from .predictive import PredictionConfig, Scenario

DEFAULTS = {
    "kernel": "MNP",
    "base_alternative": None,
    "alternatives": None,
    "alternative_names": None,
    "utility": {"asc": [], "generic": [], "specific": {}},
    "dof_groups": None,
    "priors": {"b0_precision": 0.01, "rho": None, "S_scale": 1.0, "alpha0": 2.0, "beta0": 0.1},
    "chains": {"total_iterations": 300_000, "warmup": 200_000, "thin": 10, "n_chains": 1, "seed": 0},
    "prediction": {"n_posterior_draws": 200, "n_error_draws": 256, "seed": 0},
    "scenarios": [],
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the JSON file, then ``overrides`` (a nested dict)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise InvalidArgument(f"{path}: configuration must be a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise InvalidArgument(f"{path}: unknown configuration keys {sorted(unknown)}")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def save_config(cfg, path):
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def chain_config(cfg):
    return ChainConfig(**cfg["chains"])


def prediction_config(cfg):
    return PredictionConfig(**cfg["prediction"])


def scenarios_from_config(cfg):
    return [Scenario.parse(s) if isinstance(s, str) else Scenario(**s) for s in cfg.get("scenarios", [])]


def model_spec(cfg, J, K):
    pri = cfg["priors"]
    S = float(pri.get("S_scale", 1.0)) * np.eye(J - 1)
    priors = PriorSpec(
        zeta0=np.zeros(K),
        B0=float(pri["b0_precision"]) * np.eye(K),
        rho=float(J + 1 if pri.get("rho") is None else pri["rho"]),
        S=S,
        alpha0=float(pri["alpha0"]),
        beta0=float(pri["beta0"]),
    )
    groups = cfg.get("dof_groups")
    return ModelSpec(cfg["kernel"], priors, tuple(groups) if groups else None)


# -- long-format data ---------------------------------------------------------

def read_long_csv(path):
    """Rows of a long-format file as (obs ids, alt ids, chosen flags, {column: values})."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = list(reader)
    required = ["obs_id", "alt_id", "chosen"]
    if header[:3] != required:
        raise DataError(f"{path}: first columns must be {','.join(required)}, got {','.join(header[:3])}")
    try:
        table = np.array([[float(v) for v in r] for r in rows], float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    if table.size == 0:
        raise DataError(f"{path} has no data rows")
    columns = {name: table[:, 3 + k] for k, name in enumerate(header[3:])}
    return table[:, 0].astype(np.int64), table[:, 1].astype(np.int64), table[:, 2], columns


def dataset_from_long(path, cfg):
    """Build the differenced dataset described by ``cfg['utility']`` from a long-format CSV."""
    obs_id, alt_id, chosen, columns = read_long_csv(path)
    alternatives = cfg.get("alternatives") or sorted(set(alt_id.tolist()))
    J = len(alternatives)
    alt_pos = {a: j for j, a in enumerate(alternatives)}
    obs_order = list(dict.fromkeys(obs_id.tolist()))
    N = len(obs_order)
    obs_pos = {o: i for i, o in enumerate(obs_order)}
    if len(obs_id) != N * J:
        raise DataError(f"expected {N * J} rows for {N} observations and {J} alternatives, got {len(obs_id)}")
    try:
        row_i = np.array([obs_pos[o] for o in obs_id])
        row_j = np.array([alt_pos[a] for a in alt_id])
    except KeyError as exc:
        raise DataError(f"alternative {exc.args[0]} is not in the configured choice set") from None
    seen = np.zeros((N, J), dtype=np.int64)
    np.add.at(seen, (row_i, row_j), 1)
    if np.any(seen != 1):
        i, j = np.argwhere(seen != 1)[0]
        raise DataError(f"observation {obs_order[i]} has {seen[i, j]} rows for alternative {alternatives[j]}",
                        row=int(i))
    chosen_mat = np.zeros((N, J))
    chosen_mat[row_i, row_j] = chosen
    bad = np.flatnonzero(chosen_mat.sum(axis=1) != 1)
    if bad.size:
        raise DataError(f"observation {obs_order[bad[0]]} must have exactly one chosen alternative",
                        row=int(bad[0]))
    y = chosen_mat.argmax(axis=1) + 1

    util = _merge(DEFAULTS["utility"], cfg.get("utility") or {})
    blocks, names = [], []
    for col in util["generic"]:
        blocks.append(_column(columns, col, row_i, row_j, N, J))
        names.append(col)
    for name, entry in util["specific"].items():
        vals = _column(columns, entry["column"], row_i, row_j, N, J)
        mask = np.zeros(J)
        for a in entry["alternatives"]:
            if a not in alt_pos:
                raise InvalidArgument(f"specific coefficient {name!r}: unknown alternative {a}")
            mask[alt_pos[a]] = 1.0
        blocks.append(vals * mask)
        names.append(name)
    obs = np.stack(blocks, axis=2) if blocks else np.zeros((N, J, 0))
    base = cfg.get("base_alternative") or alternatives[-1]
    if base not in alt_pos:
        raise InvalidArgument(f"base alternative {base} is not in the choice set {alternatives}")
    asc = [alt_pos[a] + 1 for a in util["asc"]]
    names_alt = cfg.get("alternative_names") or [str(a) for a in alternatives]
    return build_dataset(obs, y, alt_pos[base] + 1, asc, tuple(names_alt), tuple(names)), np.array(obs_order)


def _column(columns, name, row_i, row_j, N, J):
    if name not in columns:
        raise InvalidArgument(f"column {name!r} not found; available: {sorted(columns)}")
    out = np.full((N, J), np.nan)
    out[row_i, row_j] = columns[name]
    return out


def write_long_csv(dataset, path, obs_ids=None):
    """Write observed attributes (ASC columns omitted) in long format."""
    if dataset.attributes is None:
        raise InvalidArgument("dataset has no undifferenced attributes to write")
    n_asc = sum(1 for n in dataset.coef_names if n.startswith("asc_"))
    names = dataset.coef_names[n_asc:]
    attrs = dataset.attributes[:, :, n_asc:]
    ids = np.arange(1, dataset.N + 1) if obs_ids is None else obs_ids
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["obs_id", "alt_id", "chosen", *names])
        for i in range(dataset.N):
            for j in range(dataset.J):
                writer.writerow([int(ids[i]), j + 1, int(dataset.y[i] == j + 1),
                                 *(repr(float(v)) for v in attrs[i, j])])


def write_matrix_csv(path, matrix, header, row_ids=None, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((["obs_id"] if row_ids is not None else []) + list(header))
        for i, row in enumerate(np.asarray(matrix, float)):
            lead = [int(row_ids[i])] if row_ids is not None else []
            writer.writerow(lead + [repr(float(v)) for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    skip = 1 if header[0] == "obs_id" else 0
    ids = np.array([int(r[0]) for r in body]) if skip else None
    return header[skip:], np.array([[float(v) for v in r[skip:]] for r in body]), ids


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def inputs_hash(paths):
    """Combined digest of several input files (order-sensitive)."""
    h = hashlib.sha256()
    for p in paths:
        h.update(sha256_file(p).encode())
    return h.hexdigest()
