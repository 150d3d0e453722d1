"""File formats: atomic writes, kernel records, ensemble files."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np

from .kernel import GaussianKernel
from .paths import PathEnsemble, TimeGrid


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def kernel_record(kernel):
    return kernel.to_dict()


def kernel_from_record(record):
    return GaussianKernel.from_dict(record)


def save_ensemble_npz(path, ens):
    buf = io.BytesIO()
    np.savez(
        buf,
        values=ens.values,
        log_weights=ens.log_weights,
        times=ens.grid.times,
        x=np.asarray(ens.x, dtype=float),
        seed=np.array(ens.seed),
        dim=np.array(ens.dim),
    )
    atomic_write(path, buf.getvalue())


def load_ensemble_npz(path, ops=None):
    with np.load(path) as z:
        return PathEnsemble(TimeGrid(z["times"]), z["x"], z["values"], z["log_weights"],
                            int(z["seed"]), ops)


def ensemble_csv(ens):
    """CSV with a commented header (dims, grid, seed); one row per sample."""
    n, m = ens.dim, ens.values.shape[1]
    buf = io.StringIO()
    buf.write(f"# dim={n}\n# seed={ens.seed}\n")
    buf.write("# grid=" + ",".join(repr(float(t)) for t in ens.grid.times) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "log_weight"] + [f"v_{i}_{j}" for i in range(m) for j in range(n)])
    for k in range(ens.N):
        w.writerow([k, repr(float(ens.log_weights[k]))] + [repr(float(v)) for v in ens.values[k].ravel()])
    return buf.getvalue()


def load_ensemble_csv(text, ops=None):
    meta, rows = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        elif line:
            rows.append(line)
    n = int(meta["dim"])
    grid = TimeGrid([float(v) for v in meta["grid"].split(",")])
    body = list(csv.reader(rows[1:]))
    logw = np.array([float(r[1]) for r in body])
    values = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), -1, n)
    x = values[0, 0] if len(body) else np.zeros(n)
    return PathEnsemble(grid, x, values, logw, int(meta["seed"]), ops)
