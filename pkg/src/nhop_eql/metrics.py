# Per-iteration training records with a stable CSV layout.
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

CSV_SCHEMA_COMMENT = "# nhop-eql metrics v1"


@dataclass
class MetricsLog:
    """Append-only per-iteration record of a training run.

    Columns: iteration t, update ratio u_t, the K ensemble weights, APE of
    the instantaneous greedy policy (nan when no reference Q* was given),
    the ensemble error at each probe cell, and optionally the per-learner
    errors at each probe cell.
    """

    num_learners: int
    probe_cells: tuple[tuple[int, int], ...] = ()
    seed: int = 0
    config_hash: str = ""
    track_learner_errors: bool = False
    incomplete: bool = False
    wall_time: float = 0.0
    _t: list[int] = field(default_factory=list, repr=False)
    _u: list[float] = field(default_factory=list, repr=False)
    _w: list[np.ndarray] = field(default_factory=list, repr=False)
    _ape: list[float] = field(default_factory=list, repr=False)
    _ens_err: list[np.ndarray] = field(default_factory=list, repr=False)
    _lrn_err: list[np.ndarray] = field(default_factory=list, repr=False)

    def append(self, t, u, w, ape=np.nan, ensemble_err=None, learner_err=None):
        if self._t and t <= self._t[-1]:
            raise ValueError("iteration indices must be strictly increasing")
        self._t.append(int(t))
        self._u.append(float(u))
        self._w.append(np.array(w, dtype=float))
        self._ape.append(float(ape))
        n_probes = len(self.probe_cells)
        self._ens_err.append(
            np.full(n_probes, np.nan) if ensemble_err is None else np.asarray(ensemble_err, float)
        )
        if self.track_learner_errors:
            self._lrn_err.append(
                np.full((self.num_learners, n_probes), np.nan)
                if learner_err is None
                else np.asarray(learner_err, float)
            )

    def __len__(self) -> int:
        return len(self._t)

    @property
    def iterations(self) -> np.ndarray:
        return np.asarray(self._t, dtype=int)

    @property
    def update_ratios(self) -> np.ndarray:
        return np.asarray(self._u)

    @property
    def weights(self) -> np.ndarray:
        """(T, K) weight trajectory."""
        return np.stack(self._w) if self._w else np.empty((0, self.num_learners))

    @property
    def ape(self) -> np.ndarray:
        return np.asarray(self._ape)

    @property
    def ensemble_errors(self) -> np.ndarray:
        """(T, n_probes) instantaneous ensemble-iterate errors."""
        if self._ens_err:
            return np.stack(self._ens_err)
        return np.empty((0, len(self.probe_cells)))

    @property
    def learner_errors(self) -> np.ndarray:
        """(T, K, n_probes) per-learner errors (empty unless tracked)."""
        if self._lrn_err:
            return np.stack(self._lrn_err)
        return np.empty((0, self.num_learners, len(self.probe_cells)))

    def header_columns(self) -> list[str]:
        cols = ["t", "u"]
        cols += [f"w{k+1}" for k in range(self.num_learners)]
        cols += ["ape"]
        cols += [f"e_s{s}a{a}" for s, a in self.probe_cells]
        if self.track_learner_errors:
            cols += [
                f"x{k+1}_s{s}a{a}"
                for k in range(self.num_learners)
                for s, a in self.probe_cells
            ]
        return cols

    def to_csv(self, path) -> None:
        """Write atomically (temp file + rename) with a versioned header."""
        lines = [
            CSV_SCHEMA_COMMENT,
            f"# seed={self.seed} config_hash={self.config_hash} "
            f"incomplete={int(self.incomplete)}",
            ",".join(self.header_columns()),
        ]
        w = self.weights
        ens = self.ensemble_errors
        lrn = self.learner_errors
        for i, t in enumerate(self._t):
            row = [str(t), _fmt(self._u[i])]
            row += [_fmt(x) for x in w[i]]
            row.append(_fmt(self._ape[i]))
            row += [_fmt(x) for x in ens[i]]
            if self.track_learner_errors:
                row += [_fmt(x) for x in lrn[i].ravel()]
            lines.append(",".join(row))
        atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
