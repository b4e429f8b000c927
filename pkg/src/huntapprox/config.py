"""Experiment configuration files.

A config is a YAML document with the top-level sections ``model``, ``space``,
``grids``, ``sets``, ``probes``, ``mc``, ``tolerances``, ``output`` and the
optional per-subcommand sections ``yosida``, ``simulate`` and ``exit_bound``. Unknown keys
are errors. Every error names the file, the line and the dotted field path,
e.g. ``ref.yaml:12: mc.seed: required field missing``. The full grammar is
documented in ``docs/config.md``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigError
from .kernels import DEFAULT_ALPHA_GRID, SubMarkovGenerator
from .models import (
    cell_centers,
    example_models,
    model_absorbed_diffusion,
    model_birth_death,
    model_reducible,
    model_space_time_transport,
)
from .potential import E_N_L_GRID
from .space import StateSpace, load_space_file
from .yosida import DEFAULT_BETA_GRID

__all__ = ["ExperimentConfig", "Grids", "MCBudget", "Tolerances", "load_config", "parse_config", "TOLERANCE_RANGES"]

#: default value and admissible closed range of every tolerance
TOLERANCE_RANGES = {
    "excessive": (1e-9, 1e-15, 1e-3),
    "reduite": (1e-10, 1e-15, 1e-4),
    "tail": (1e-13, 1e-16, 1e-3),
    "threshold": (1e-12, 1e-15, 1e-2),
    "n_sigma": (4.0, 1.0, 10.0),
}


# --- YAML with line numbers ----------------------------------------------------

class _LDict(dict):
    """Mapping that remembers the line of every key."""

    def __init__(self, line: int):
        super().__init__()
        self.line = line
        self.lines: dict = {}


class _LList(list):
    def __init__(self, line: int):
        super().__init__()
        self.line = line
        self.lines: list = []


class _Loader(yaml.SafeLoader):
    source = "<config>"


def _construct_map(loader: _Loader, node):
    loader.flatten_mapping(node)
    out = _LDict(node.start_mark.line + 1)
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        line = k_node.start_mark.line + 1
        if key in out:
            raise ConfigError(f"{loader.source}:{line}: duplicate key {key!r}")
        out[key] = loader.construct_object(v_node, deep=True)
        out.lines[key] = line
    return out


def _construct_seq(loader: _Loader, node):
    out = _LList(node.start_mark.line + 1)
    for item in node.value:
        out.append(loader.construct_object(item, deep=True))
        out.lines.append(item.start_mark.line + 1)
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


# --- field readers -------------------------------------------------------------

class _Ctx:
    """Cursor into the parsed document used for error locations."""

    def __init__(self, source: str, node, path: str, line: int):
        self.source = source
        self.node = node
        self.path = path
        self.line = line

    def fail(self, msg: str, line: int | None = None):
        raise ConfigError(f"{self.source}:{line or self.line}: {self.path}: {msg}")

    def child(self, key, required: bool = False):
        if not isinstance(self.node, dict):
            self.fail("expected a mapping")
        path = f"{self.path}.{key}" if self.path else str(key)
        if key not in self.node:
            if required:
                raise ConfigError(f"{self.source}:{self.line}: {path}: required field missing")
            return None
        line = self.node.lines.get(key, self.line) if isinstance(self.node, _LDict) else self.line
        return _Ctx(self.source, self.node[key], path, line)

    def items(self):
        lines = getattr(self.node, "lines", [self.line] * len(self.node))
        return [_Ctx(self.source, v, f"{self.path}[{i}]", lines[i]) for i, v in enumerate(self.node)]

    def keys_only(self, allowed):
        if not isinstance(self.node, dict):
            self.fail("expected a mapping")
        for k in self.node:
            if k not in allowed:
                line = self.node.lines.get(k, self.line) if isinstance(self.node, _LDict) else self.line
                where = f"{self.path}.{k}" if self.path else str(k)
                raise ConfigError(f"{self.source}:{line}: {where}: unknown key (allowed: {', '.join(sorted(allowed))})")

    # scalar readers; YAML 1.1 reads "1e-9" as a string, so numbers may arrive as text
    def number(self, lo=-math.inf, hi=math.inf, lo_open=False) -> float:
        v = self.node
        if isinstance(v, bool):
            self.fail("expected a number, got a boolean")
        try:
            x = float(v)
        except (TypeError, ValueError):
            self.fail(f"expected a number, got {v!r}")
        if not math.isfinite(x):
            self.fail("must be finite")
        if x < lo or x > hi or (lo_open and x == lo):
            rng = f"{'(' if lo_open else '['}{lo:g}, {hi:g}]"
            self.fail(f"value {x:g} outside {rng}")
        return x

    def integer(self, lo=-math.inf, hi=math.inf) -> int:
        v = self.node
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"expected an integer, got {v!r}")
        if v < lo or v > hi:
            self.fail(f"value {v} outside [{lo}, {hi}]")
        return int(v)

    def string(self, choices=None) -> str:
        if not isinstance(self.node, str):
            self.fail(f"expected a string, got {self.node!r}")
        if choices is not None and self.node not in choices:
            self.fail(f"{self.node!r} is not one of {', '.join(choices)}")
        return self.node

    def vector(self, n: int | None = None, **kw) -> np.ndarray:
        if not isinstance(self.node, list):
            self.fail("expected a list of numbers")
        vals = [c.number(**kw) for c in self.items()]
        if n is not None and len(vals) != n:
            self.fail(f"expected {n} values, got {len(vals)}")
        return np.array(vals, dtype=float)

    def scalar_or_vector(self, n: int, **kw) -> np.ndarray:
        if isinstance(self.node, list):
            return self.vector(n, **kw)
        return np.full(n, self.number(**kw))

    def grid(self) -> np.ndarray:
        g = self.vector(lo=0.0, lo_open=True)
        if g.size == 0:
            self.fail("grid must be nonempty")
        if np.any(np.diff(g) <= 0):
            self.fail("grid must be strictly increasing")
        return g


# --- sections ------------------------------------------------------------------

@dataclass(frozen=True)
class Grids:
    alpha: np.ndarray
    beta: np.ndarray
    l: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class MCBudget:
    paths: int
    horizon: float
    seed: int


@dataclass(frozen=True)
class Tolerances:
    excessive: float
    reduite: float
    tail: float
    threshold: float
    n_sigma: float

    def scaled(self, factor: float) -> "Tolerances":
        """All tolerances times ``factor``; ``n_sigma`` is a confidence level and stays."""
        return Tolerances(self.excessive * factor, self.reduite * factor, self.tail * factor,
                          self.threshold * factor, self.n_sigma)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description.

    ``data`` is the document as plain Python data; its canonical JSON form
    is what :attr:`config_hash` digests.
    """

    source: str
    data: dict
    model_kind: str
    generator: SubMarkovGenerator
    space: StateSpace
    position: np.ndarray
    grids: Grids
    set_sequence: list
    capacity_sets: list
    probes: list
    mc: MCBudget
    tolerances: Tolerances
    output_dir: str | None
    yosida_f: np.ndarray
    simulate_beta: float
    simulate_start: int
    simulate_dump: int
    exit_betas: np.ndarray = field(default=None)
    base_dir: Path = field(default=Path("."))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ExperimentConfig(**kw)


_MODEL_KEYS: dict[str, set] = {
    "killing": {"rate"},
    "two_state": {"rate"},
    "birth_death": {"n", "birth", "death", "killing"},
    "absorbed_diffusion": {"n", "drift", "diffusion"},
    "space_time_transport": {"layers", "base"},
    "reducible": {"blocks"},
    "matrix": {"rates"},
    "example": {"name", "seed"},
}


def _build_model(ctx: _Ctx) -> tuple[str, SubMarkovGenerator, np.ndarray, StateSpace | None]:
    kind = ctx.child("kind", required=True).string(sorted(_MODEL_KEYS))
    ctx.keys_only(_MODEL_KEYS[kind] | {"kind"})

    def linspace(n):
        return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)

    try:
        if kind in ("killing", "two_state"):
            c = ctx.child("rate")
            r = 1.0 if c is None else c.number(lo=0.0, lo_open=True)
            L = [[-r]] if kind == "killing" else [[-r, r], [r, -r]]
            gen = SubMarkovGenerator(L)
            return kind, gen, linspace(gen.n_states), None
        if kind == "birth_death":
            n = ctx.child("n", required=True).integer(1, 4096)
            get = lambda key, size: (np.zeros(size) if ctx.child(key) is None
                                     else ctx.child(key).scalar_or_vector(size, lo=0.0))
            gen = model_birth_death(n, get("birth", n - 1), get("death", n - 1), get("killing", n))
            return kind, gen, linspace(n), None
        if kind == "absorbed_diffusion":
            n = ctx.child("n", required=True).integer(2, 4096)
            x = cell_centers(n)
            d = ctx.child("drift")
            if d is None:
                drift = np.zeros(n)
            elif isinstance(d.node, dict):
                d.keys_only({"sine"})
                drift = d.child("sine", required=True).number() * np.sin(2 * np.pi * x)
            else:
                drift = d.scalar_or_vector(n)
            diff = ctx.child("diffusion", required=True).scalar_or_vector(n, lo=0.0, lo_open=True)
            return kind, model_absorbed_diffusion(drift, diff, n), x, None
        if kind == "space_time_transport":
            layers = ctx.child("layers", required=True).integer(2, 1024)
            _, base, _, _ = _build_model(ctx.child("base", required=True))
            n0 = base.n_states
            pos = np.repeat(np.arange(layers), n0) / (layers - 1)
            return kind, model_space_time_transport(base, layers), pos, None
        if kind == "reducible":
            bc = ctx.child("blocks", required=True)
            if not isinstance(bc.node, list) or not bc.node:
                bc.fail("expected a nonempty list of models")
            gens = [_build_model(c)[1] for c in bc.items()]
            gen = model_reducible(gens)
            return kind, gen, linspace(gen.n_states), None
        if kind == "matrix":
            rc = ctx.child("rates", required=True)
            if not isinstance(rc.node, list) or not rc.node:
                rc.fail("expected a square list of rows")
            rows = [r.vector() for r in rc.items()]
            if any(r.size != len(rows) for r in rows):
                rc.fail("rate matrix must be square")
            gen = SubMarkovGenerator(np.array(rows))
            return kind, gen, linspace(gen.n_states), None
        # example
        seed_c = ctx.child("seed")
        models = example_models(0 if seed_c is None else seed_c.integer(0))
        name = ctx.child("name", required=True).string(sorted(models))
        mdl = models[name]
        return kind, mdl.generator, mdl.position, mdl.space
    except ConfigError:
        raise
    except ValueError as exc:
        ctx.fail(str(exc))


def _build_space(ctx: _Ctx | None, n: int, default: StateSpace | None, base_dir: Path) -> StateSpace:
    if ctx is None:
        return default if default is not None else StateSpace.uniform(n, 1.0 / n)
    ctx.keys_only({"m", "phi", "file"})
    fc = ctx.child("file")
    if fc is not None:
        if ctx.child("m") is not None or ctx.child("phi") is not None:
            fc.fail("'file' excludes 'm' and 'phi'")
        path = Path(fc.string())
        sp = load_space_file(path if path.is_absolute() else base_dir / path)
        if sp.n_states != n:
            fc.fail(f"space file defines {sp.n_states} states, model has {n}")
        return sp
    mc = ctx.child("m")
    if mc is None:
        m = default.m if default is not None else np.full(n, 1.0 / n)
    elif mc.node == "uniform":
        m = np.full(n, 1.0 / n)
    else:
        m = mc.scalar_or_vector(n)
    pc = ctx.child("phi")
    phi = (default.phi if default is not None else None) if pc is None else pc.scalar_or_vector(n)
    try:
        return StateSpace(m=m, phi=phi)
    except ValueError as exc:
        bad = pc if (pc is not None and "phi" in str(exc)) else (mc or ctx)
        bad.fail(str(exc))


def _build_set(ctx: _Ctx, n: int, position: np.ndarray) -> np.ndarray:
    v = ctx.node
    if v in ("all", "empty"):
        return np.full(n, v == "all")
    if isinstance(v, list):
        idx = [c.integer(0, n - 1) for c in ctx.items()]
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
        return mask
    if isinstance(v, dict):
        ctx.keys_only({"above", "below"})
        mask = np.ones(n, dtype=bool)
        a, b = ctx.child("above"), ctx.child("below")
        if a is None and b is None:
            ctx.fail("predicate needs 'above' and/or 'below'")
        if a is not None:
            mask &= position > a.number()
        if b is not None:
            mask &= position < b.number()
        return mask
    ctx.fail("a set is 'all', 'empty', a list of state indices or a predicate {above, below}")


def _set_list(ctx: _Ctx, n: int, position: np.ndarray) -> list:
    if not isinstance(ctx.node, list) or not ctx.node:
        ctx.fail("expected a nonempty list of sets")
    return [_build_set(c, n, position) for c in ctx.items()]


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    """Parse and validate config text; raises :class:`ConfigError` with ``source:line: field: ...``."""
    loader_cls = type("_SourceLoader", (_Loader,), {"source": source})
    try:
        doc = yaml.load(text, Loader=loader_cls)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"{source}:{line}: YAML syntax error: {exc.problem}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    base_dir = Path(".") if base_dir is None else Path(base_dir)
    root = _Ctx(source, doc, "", 1)
    root.keys_only({"model", "space", "grids", "sets", "probes", "mc", "tolerances", "output", "yosida", "simulate",
                    "exit_bound"})

    kind, gen, position, default_space = _build_model(root.child("model", required=True))
    n = gen.n_states
    space = _build_space(root.child("space"), n, default_space, base_dir)

    gc = root.child("grids", required=True)
    gc.keys_only({"alpha", "beta", "l", "t"})
    pick = lambda key, default: default if gc.child(key) is None else gc.child(key).grid()
    grids = Grids(pick("alpha", DEFAULT_ALPHA_GRID), pick("beta", DEFAULT_BETA_GRID), pick("l", E_N_L_GRID),
                  gc.child("t", required=True).grid())

    sc = root.child("sets", required=True)
    sc.keys_only({"sequence", "capacity"})
    seq_c = sc.child("sequence", required=True)
    sequence = _set_list(seq_c, n, position)
    for k, (a, b) in enumerate(zip(sequence, sequence[1:])):
        if np.any(b & ~a):
            line = seq_c.node.lines[k + 1]
            seq_c.fail(f"sets must be decreasing: entry {k + 1} is not contained in entry {k}", line)
    cap_c = sc.child("capacity")
    cap_sets = sequence if cap_c is None else _set_list(cap_c, n, position)

    pc = root.child("probes", required=True)
    if not isinstance(pc.node, list) or not pc.node:
        pc.fail("expected a nonempty list of state indices")
    probes = [c.integer(0, n - 1) for c in pc.items()]

    mcc = root.child("mc", required=True)
    mcc.keys_only({"paths", "horizon", "seed"})
    mc = MCBudget(
        mcc.child("paths", required=True).integer(1, 10**8),
        mcc.child("horizon", required=True).number(lo=0.0, lo_open=True),
        mcc.child("seed", required=True).integer(0, 2**63 - 1),
    )

    tc = root.child("tolerances")
    tol_vals = {}
    if tc is not None:
        tc.keys_only(set(TOLERANCE_RANGES))
    for key, (default, lo, hi) in TOLERANCE_RANGES.items():
        c = tc.child(key) if tc is not None else None
        tol_vals[key] = default if c is None else c.number(lo, hi)
    tolerances = Tolerances(**tol_vals)

    oc = root.child("output")
    out_dir = None
    if oc is not None:
        oc.keys_only({"dir"})
        dc = oc.child("dir")
        out_dir = None if dc is None else dc.string()

    yc = root.child("yosida")
    f = np.cos(np.pi * position) + 1.5
    if yc is not None:
        yc.keys_only({"f"})
        fc = yc.child("f")
        if fc is not None:
            if isinstance(fc.node, list):
                f = fc.vector(n)
            else:
                name = fc.string(["cos", "ones", "position"])
                f = {"cos": f, "ones": np.ones(n), "position": np.asarray(position, float)}[name]

    smc = root.child("simulate")
    sim_beta, sim_start, sim_dump = float(grids.beta[0]), probes[0], 100
    if smc is not None:
        smc.keys_only({"beta", "start", "dump_paths"})
        if smc.child("beta") is not None:
            sim_beta = smc.child("beta").number(lo=0.0, lo_open=True)
        if smc.child("start") is not None:
            sim_start = smc.child("start").integer(0, n - 1)
        if smc.child("dump_paths") is not None:
            sim_dump = smc.child("dump_paths").integer(0, 10**6)

    ec = root.child("exit_bound")
    exit_betas = grids.beta
    if ec is not None:
        ec.keys_only({"beta"})
        bc = ec.child("beta", required=True)
        exit_betas = bc.grid()
        if exit_betas.min() < 2:
            bc.fail("the exit-time bound needs beta >= 2")

    return ExperimentConfig(
        source=source,
        data=_plain(doc),
        model_kind=kind,
        generator=gen,
        space=space,
        position=np.asarray(position, dtype=float),
        grids=grids,
        set_sequence=sequence,
        capacity_sets=cap_sets,
        probes=probes,
        mc=mc,
        tolerances=tolerances,
        output_dir=out_dir,
        yosida_f=np.asarray(f, dtype=float),
        simulate_beta=sim_beta,
        simulate_start=sim_start,
        simulate_dump=sim_dump,
        exit_betas=exit_betas,
        base_dir=base_dir,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read config ({exc.strerror})") from None
    return parse_config(text, source=str(path), base_dir=path.parent)
