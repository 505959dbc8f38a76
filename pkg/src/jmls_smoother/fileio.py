"""Reading and writing models, datasets and smoothed mixtures.

Model file (JSON)::

    {
      "n": 1, "p": 1, "q": 1, "m": 2,
      "timing": "switch-after-prediction",
      "modes": [{"A": [[0.9]], "B": [[0.1]], "C": [[0.9]], "D": [[0.05]],
                 "Q": [[0.45]], "R": [[0.5]]}, ...],
      "T": [[0.6, 0.4], [0.4, 0.6]],
      "prior": [{"mode": 1, "weight": 0.5, "mean": [0.0], "cov": [[1.0]]}, ...]
    }

Matrices are nested row-major lists. ``T`` is stored column by column:
``T[j]`` lists ``P(z[k+1] = i | z[k] = j)`` over ``i``. Mode numbers in files
are 1-based. ``prior`` is optional.

Dataset file (CSV): header ``t, u_1..u_p, y_1..y_q`` followed optionally by
``x_1..x_n`` and ``z``. ``t`` runs from 1 to ``N``.

Mixture file (CSV): a comment line ``# n=<n> m=<m> N=<N>``, a header, then
one record per (k, mode, component) with the log-weight, the mean and the
row-major covariance. Floats are written with ``repr`` so a file read back
reproduces the arrays bit for bit.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ModelError
from .mixture import GaussianMixture, GaussianSet
from .model import Dataset, JmlsModel, ModeParams, Timing

__all__ = [
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
    "save_dataset",
    "load_dataset",
    "save_mixtures",
    "load_mixtures",
    "save_mode_marginals",
]

_MATRICES = ("A", "B", "C", "D", "Q", "R")


def _fmt(v) -> str:
    return repr(float(v))


def model_to_dict(model: JmlsModel, prior: GaussianMixture | None = None) -> dict:
    """Plain-data form of a model (and optional prior) following the model file schema."""
    out = {
        "n": model.n,
        "p": model.p,
        "q": model.q,
        "m": model.m,
        "timing": model.timing.value,
        "modes": [{name: getattr(mp, name).tolist() for name in _MATRICES} for mp in model.modes],
        "T": model.T.T.tolist(),
    }
    if prior is not None:
        comps = []
        for z, s in enumerate(prior.modes):
            for i in range(len(s)):
                comps.append({
                    "mode": z + 1,
                    "weight": float(np.exp(s.log_weight[i])),
                    "mean": s.mean[i].tolist(),
                    "cov": s.cov[i].tolist(),
                })
        out["prior"] = comps
    return out


def model_from_dict(doc: dict) -> tuple[JmlsModel, GaussianMixture | None]:
    """Inverse of :func:`model_to_dict`; checks the declared dimensions."""
    try:
        modes = tuple(ModeParams(**{name: mode[name] for name in _MATRICES}) for mode in doc["modes"])
        model = JmlsModel(modes, np.asarray(doc["T"], dtype=float).T, Timing(doc.get("timing", Timing.AFTER.value)))
    except KeyError as exc:
        raise ModelError(f"model file is missing the field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ModelError(f"malformed model file: {exc}") from exc
    for key in ("n", "p", "q", "m"):
        if key in doc and int(doc[key]) != getattr(model, key):
            raise ModelError(f"declared {key}={doc[key]} but the matrices give {getattr(model, key)}")
    prior = None
    if doc.get("prior"):
        buckets: list[list] = [[] for _ in range(model.m)]
        for comp in doc["prior"]:
            z = int(comp.get("mode", 1))
            if not 1 <= z <= model.m:
                raise ModelError(f"prior component refers to mode {z} of {model.m}")
            buckets[z - 1].append(comp)
        sets = []
        n = model.n
        for bucket in buckets:
            if not bucket:
                sets.append(GaussianSet.empty(n))
                continue
            w = np.array([float(c["weight"]) for c in bucket])
            if np.any(w < 0):
                raise ModelError("prior weights must be non-negative")
            with np.errstate(divide="ignore"):
                lw = np.log(w)
            mean = np.array([np.asarray(c["mean"], dtype=float).reshape(n) for c in bucket])
            cov = np.array([np.asarray(c["cov"], dtype=float).reshape(n, n) for c in bucket])
            sets.append(GaussianSet(lw, mean, cov))
        prior = GaussianMixture(tuple(sets))
    return model, prior


def save_model(path: str | Path, model: JmlsModel, prior: GaussianMixture | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, prior), indent=2) + "\n")


def load_model(path: str | Path) -> tuple[JmlsModel, GaussianMixture | None]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)


def save_dataset(path: str | Path, data: Dataset) -> None:
    p, q = data.u.shape[1], data.y.shape[1]
    header = ["t"] + [f"u_{i + 1}" for i in range(p)] + [f"y_{i + 1}" for i in range(q)]
    if data.x is not None:
        header += [f"x_{i + 1}" for i in range(data.x.shape[1])]
    if data.z is not None:
        header.append("z")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(data.N):
            row = [str(k + 1)] + [_fmt(v) for v in data.u[k]] + [_fmt(v) for v in data.y[k]]
            if data.x is not None:
                row += [_fmt(v) for v in data.x[k]]
            if data.z is not None:
                row.append(str(int(data.z[k]) + 1))
            w.writerow(row)


def _columns(header: Sequence[str], prefix: str) -> list[int]:
    pat = re.compile(rf"{prefix}_(\d+)$")
    found = sorted((int(m.group(1)), i) for i, h in enumerate(header) if (m := pat.match(h.strip())))
    if [num for num, _ in found] != list(range(1, len(found) + 1)):
        raise ModelError(f"columns {prefix}_1..{prefix}_k must be numbered consecutively")
    return [i for _, i in found]


def load_dataset(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ModelError(f"{path}: empty dataset file")
    header, body = rows[0], rows[1:]
    if not body:
        raise ModelError(f"{path}: dataset has no samples")
    try:
        table = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ModelError(f"{path}: non-numeric entry ({exc})") from exc
    if table.shape[1] != len(header):
        raise ModelError(f"{path}: rows and header have different lengths")
    ucols, ycols, xcols = (_columns(header, c) for c in ("u", "y", "x"))
    if not ycols:
        raise ModelError(f"{path}: no y_1 column")
    names = [h.strip() for h in header]
    u = table[:, ucols] if ucols else np.zeros((len(table), 0))
    x = table[:, xcols] if xcols else None
    z = table[:, names.index("z")].astype(int) - 1 if "z" in names else None
    return Dataset(u=u, y=table[:, ycols], x=x, z=z)


def save_mixtures(path: str | Path, mixtures: Sequence[GaussianMixture]) -> None:
    """Write one mixture per step ``k`` (1-based in the file)."""
    if not mixtures:
        raise ModelError("nothing to write")
    n, m = mixtures[0].dim, len(mixtures[0].modes)
    header = (["k", "mode", "component", "log_weight"] + [f"mean_{i + 1}" for i in range(n)]
              + [f"cov_{i + 1}{j + 1}" for i in range(n) for j in range(n)])
    with open(path, "w", newline="") as fh:
        fh.write(f"# n={n} m={m} N={len(mixtures)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for k, mix in enumerate(mixtures):
            for z, s in enumerate(mix.modes):
                for c in range(len(s)):
                    w.writerow([str(k + 1), str(z + 1), str(c + 1), _fmt(s.log_weight[c])]
                               + [_fmt(v) for v in s.mean[c]]
                               + [_fmt(v) for v in s.cov[c].reshape(-1)])


def load_mixtures(path: str | Path) -> list[GaussianMixture]:
    """Inverse of :func:`save_mixtures`."""
    with open(path, newline="") as fh:
        first = fh.readline()
        meta = dict(re.findall(r"(\w+)=(\d+)", first))
        if not first.startswith("#") or not {"n", "m", "N"} <= meta.keys():
            raise ModelError(f"{path}: missing '# n=.. m=.. N=..' header line")
        n, m, N = int(meta["n"]), int(meta["m"]), int(meta["N"])
        reader = csv.reader(fh)
        next(reader, None)
        rows = [r for r in reader if r]
    width = 4 + n + n * n
    table = np.array([[float(v) for v in r] for r in rows]) if rows else np.zeros((0, width))
    if table.shape[1] != width:
        raise ModelError(f"{path}: expected {width} columns for n={n}")
    ks, zs = table[:, 0].astype(int), table[:, 1].astype(int)
    if np.any((ks < 1) | (ks > N)) or np.any((zs < 1) | (zs > m)):
        raise ModelError(f"{path}: step or mode index out of range")
    out = []
    for k in range(1, N + 1):
        sets = []
        for z in range(1, m + 1):
            sel = table[(ks == k) & (zs == z)]
            sel = sel[np.argsort(sel[:, 2], kind="stable")]
            sets.append(GaussianSet(sel[:, 3].copy(), sel[:, 4:4 + n].copy(),
                                    sel[:, 4 + n:].reshape(-1, n, n).copy()))
        out.append(GaussianMixture(tuple(sets)))
    return out


def save_mode_marginals(path: str | Path, marginals: Sequence[np.ndarray]) -> None:
    """One row per step: ``k`` then ``P(z_k = i | y)`` for every mode."""
    m = len(marginals[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"p_mode{z + 1}" for z in range(m)])
        for k, row in enumerate(marginals):
            w.writerow([str(k + 1)] + [_fmt(v) for v in row])
