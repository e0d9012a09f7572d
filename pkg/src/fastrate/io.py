"""File formats: tabular MDP text files, weight vectors, datasets and result tables.

Floats in CSV files are written with ``repr`` so they round-trip exactly.
Binary weight files are an 8-byte little-endian unsigned length followed
by that many little-endian float64 values.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, StructureError
from .fqi import Dataset
from .mdp import TabularMDP

MC_DATASET_HEADER = ["p", "v", "f", "r", "p_next", "v_next"]
TABULAR_DATASET_HEADER = ["h", "s", "a", "r", "s_next"]


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if not isinstance(x, str) else x for x in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path} is empty")
    return rows[0], rows[1:]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# weights


def write_weights_bin(path, w: np.ndarray) -> None:
    w = np.ascontiguousarray(w, dtype="<f8").ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", w.size))
        fh.write(w.tobytes())


def read_weights_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError("weight file is truncated")
    (n,) = struct.unpack("<Q", raw[:8])
    if len(raw) != 8 + 8 * n:
        raise DataError("weight file length does not match its header")
    return np.frombuffer(raw[8:], dtype="<f8").astype(float)


def write_weights_csv(path, w: np.ndarray) -> None:
    write_csv(path, ["index", "weight"], enumerate(np.asarray(w, dtype=float)))


def read_weights_csv(path) -> np.ndarray:
    header, rows = read_csv(path)
    if header != ["index", "weight"]:
        raise DataError("unexpected weight CSV header")
    return np.array([float(r[1]) for r in rows])


# datasets


def write_mc_dataset(path, data: Dataset) -> None:
    cols = np.column_stack([data.states, data.actions, data.rewards, data.next_states])
    write_csv(path, MC_DATASET_HEADER, cols.tolist())


def read_mc_dataset(path) -> Dataset:
    header, rows = read_csv(path)
    if header != MC_DATASET_HEADER:
        raise DataError("unexpected Mountain Car dataset header")
    a = np.array(rows, dtype=float)
    return Dataset(a[:, 0:2], a[:, 2], a[:, 3], a[:, 4:6])


def write_tabular_dataset(path, per_stage: list) -> None:
    rows = []
    for d in per_stage:
        for s, a, r, s2 in zip(d.states, d.actions, d.rewards, d.next_states):
            rows.append([int(d.stage), int(s), int(a), float(r), int(s2)])
    write_csv(path, TABULAR_DATASET_HEADER, rows)


def read_tabular_dataset(path) -> list:
    header, rows = read_csv(path)
    if header != TABULAR_DATASET_HEADER:
        raise DataError("unexpected tabular dataset header")
    by_h: dict[int, list] = {}
    for h, s, a, r, s2 in rows:
        by_h.setdefault(int(h), []).append((int(s), int(a), float(r), int(s2)))
    out = []
    for h in sorted(by_h):
        s, a, r, s2 = map(np.array, zip(*by_h[h]))
        out.append(Dataset(s, a, r, s2, h))
    return out


# tabular MDP text format


def write_mdp(path, mdp: TabularMDP) -> None:
    """Header ``H S A`` then ``mu s p``, ``r h s a value`` and ``P h s a s' p`` lines (h 1-based)."""
    H, S, A = mdp.rewards.shape
    lines = [f"{H} {S} {A}"]
    lines += [f"mu {s} {fmt(p)}" for s, p in enumerate(mdp.initial_dist)]
    for h in range(H):
        for s in range(S):
            for a in range(A):
                lines.append(f"r {h + 1} {s} {a} {fmt(mdp.rewards[h, s, a])}")
    for h in range(H - 1):
        for s in range(S):
            for a in range(A):
                for t in range(S):
                    p = mdp.transitions[h, s, a, t]
                    if p != 0.0:
                        lines.append(f"P {h + 1} {s} {a} {t} {fmt(p)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _idx(x: str, n: int, lo: int = 0) -> int:
    i = int(x)
    if not lo <= i < n:
        raise StructureError(f"index {i} outside {lo}..{n - 1}")
    return i


def read_mdp(path) -> TabularMDP:
    """Inverse of ``write_mdp``.  Missing ``mu`` lines mean a uniform initial distribution."""
    tokens = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not tokens or len(tokens[0]) != 3:
        raise StructureError("first line must be 'H S A'")
    H, S, A = (int(x) for x in tokens[0])
    r = np.zeros((H, S, A))
    P = np.zeros((H - 1, S, A, S))
    mu = np.zeros(S)
    seen_mu = False
    for t in tokens[1:]:
        if t[0] == "r" and len(t) == 5:
            r[_idx(t[1], H + 1, 1) - 1, _idx(t[2], S), _idx(t[3], A)] = float(t[4])
        elif t[0] == "P" and len(t) == 6:
            P[_idx(t[1], H, 1) - 1, _idx(t[2], S), _idx(t[3], A), _idx(t[4], S)] = float(t[5])
        elif t[0] == "mu" and len(t) == 3:
            mu[_idx(t[1], S)] = float(t[2])
            seen_mu = True
        else:
            raise StructureError(f"unrecognized line: {' '.join(t)}")
    if not seen_mu:
        mu[:] = 1.0 / S
    return TabularMDP(P, r, mu)
