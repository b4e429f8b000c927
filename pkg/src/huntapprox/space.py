"""Finite state spaces with an adjoined cemetery point.

States of ``E`` are addressed by dense indices ``0..n-1``; the cemetery
``Delta`` always sits at index ``n`` in arrays over ``E_Delta``. Functions on
``E`` are plain 1-d arrays and vanish at ``Delta`` once extended.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigError

__all__ = [
    "StateSpace",
    "integrate",
    "h_inner",
    "extend_to_cemetery",
    "as_mask",
    "load_space_file",
    "parse_space_text",
]


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Point set ``E`` with weights ``m`` and reference function ``phi``.

    Parameters
    ----------
    m : array_like of shape (n,)
        Strictly positive mass of every state.
    phi : array_like of shape (n,) or float, optional
        Reference function with values in ``(0, 1]``. Defaults to the
        constant 1.
    labels : sequence of str, optional
        Unique state names; defaults to ``"0", "1", ...``.
    """

    m: np.ndarray
    phi: np.ndarray | float | None = None
    labels: tuple = field(default=())

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        if m.ndim != 1 or m.size == 0:
            raise ValueError("m must be a non-empty 1-d array")
        n = m.size
        phi = np.ones(n) if self.phi is None else np.asarray(self.phi, dtype=float)
        if phi.ndim == 0:
            phi = np.full(n, float(phi))
        if phi.shape != (n,):
            raise ValueError(f"phi has shape {phi.shape}, expected ({n},)")
        labels = tuple(str(s) for s in self.labels) if self.labels else tuple(str(i) for i in range(n))
        if len(labels) != n:
            raise ValueError(f"{len(labels)} labels for {n} states")
        if len(set(labels)) != n:
            raise ValueError("state labels must be unique")
        for i in range(n):
            if not (np.isfinite(m[i]) and m[i] > 0):
                raise ValueError(f"m must be > 0 at state {labels[i]!r}, got {float(m[i])!r}")
            if not (np.isfinite(phi[i]) and 0 < phi[i] <= 1):
                raise ValueError(f"phi must lie in (0, 1] at state {labels[i]!r}, got {float(phi[i])!r}")
        object.__setattr__(self, "m", _frozen(m))
        object.__setattr__(self, "phi", _frozen(phi))
        object.__setattr__(self, "labels", labels)
        if not math.isfinite(float(phi @ m)):
            raise ValueError("phi is not integrable against m")

    @classmethod
    def uniform(cls, n: int, mass: float = 1.0, phi=None) -> "StateSpace":
        return cls(m=np.full(n, float(mass)), phi=phi)

    @property
    def n_states(self) -> int:
        return self.m.size

    @property
    def cemetery_index(self) -> int:
        return self.m.size

    def with_phi(self, phi) -> "StateSpace":
        return StateSpace(m=self.m, phi=phi, labels=self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise KeyError(f"unknown state label {label!r}") from None


def _check_fn(f, sp: StateSpace, name="f") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (sp.n_states,):
        raise ValueError(f"{name} has shape {f.shape}, space has {sp.n_states} states")
    return f


def integrate(f, sp: StateSpace) -> float:
    """Return ``sum_x f(x) m(x)``."""
    return float(_check_fn(f, sp) @ sp.m)


def h_inner(f, g, sp: StateSpace) -> float:
    """Inner product of ``L^2(E, m)``."""
    f = _check_fn(f, sp, "f")
    g = _check_fn(g, sp, "g")
    return float(np.sum(f * g * sp.m))


def extend_to_cemetery(f) -> np.ndarray:
    """Append the value 0 at the cemetery index."""
    f = np.asarray(f, dtype=float)
    return np.append(f, 0.0)


def as_mask(U, n: int) -> np.ndarray:
    """Boolean mask of a subset of ``E`` given as mask, index list or None."""
    if U is None:
        return np.zeros(n, dtype=bool)
    arr = np.asarray(U)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValueError(f"mask has shape {arr.shape}, expected ({n},)")
        return arr.copy()
    idx = arr.astype(int).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"set indices out of range for {n} states")
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return mask


def parse_space_text(text: str, source: str = "<space>") -> StateSpace:
    """Parse a space definition: CSV records ``label,m,phi``.

    Blank lines and lines starting with ``#`` are skipped. The first
    non-comment line must be the header ``label,m,phi``. Errors carry the
    offending line number.
    """
    labels: list[str] = []
    ms: list[float] = []
    phis: list[float] = []
    header_seen = False
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in next(csv.reader([line]))]
        if not header_seen:
            if cells != ["label", "m", "phi"]:
                raise ConfigError(f"{source}:{lineno}: expected header 'label,m,phi', got {line!r}")
            header_seen = True
            continue
        if len(cells) != 3:
            raise ConfigError(f"{source}:{lineno}: expected 3 fields, got {len(cells)}")
        label, m_s, phi_s = cells
        if not label:
            raise ConfigError(f"{source}:{lineno}: empty label")
        if label in labels:
            raise ConfigError(f"{source}:{lineno}: duplicate label {label!r}")
        try:
            m_v, phi_v = float(m_s), float(phi_s)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: m and phi must be numbers") from None
        if not (math.isfinite(m_v) and m_v > 0):
            raise ConfigError(f"{source}:{lineno}: state {label!r}: m must be > 0")
        if not (math.isfinite(phi_v) and 0 < phi_v <= 1):
            raise ConfigError(f"{source}:{lineno}: state {label!r}: phi must lie in (0, 1]")
        labels.append(label)
        ms.append(m_v)
        phis.append(phi_v)
    if not header_seen:
        raise ConfigError(f"{source}: missing header 'label,m,phi'")
    if not labels:
        raise ConfigError(f"{source}: no states defined")
    return StateSpace(m=np.array(ms), phi=np.array(phis), labels=tuple(labels))


def load_space_file(path) -> StateSpace:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read space file ({exc.strerror})") from None
    return parse_space_text(text, source=str(path))


def space_to_text(sp: StateSpace, labels: Sequence[str] | None = None) -> str:
    rows = ["label,m,phi"]
    for lab, m, p in zip(labels or sp.labels, sp.m, sp.phi):
        rows.append(f"{lab},{float(m):.17g},{float(p):.17g}")
    return "\n".join(rows) + "\n"
