"""Declarative YAML scenarios: parsing, validation and shipped presets.

A scenario mirrors the model symbols directly::

    name: tandem
    seed: 7
    nodes: [a, b]
    classes:
      - {name: job, complexity: MapReduce, gamma_surj: 1.0, k: 1.0}
    beta: {a: {job: 0.5}}          # missing entries are zero
    mu: 1.0                         # scalar, per-node list/map, or node -> class map
    routing:
      transfer:
        - {from: a, class: job, to: b, to_class: job, p: 1.0}
      # depart: optional explicit departure probabilities; rows must then sum to 1
      # source: optional {class: {node: share}}; splits the class's total beta

A class gives either ``gamma_surj`` or a ``function`` block (alphabets, table
rows ``[x1, ..., xn, y]`` and a ``joint`` pmf or ``uniform``), from which the
surjectivity is computed. Optional sections: ``threshold``, ``sweep``,
``simulation``, ``solver``, ``compare`` and ``example``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ScenarioError
from .flownet import NetworkSpec, RoutingPolicy, validate_routing
from .graph import FunctionSpec, Pmf, function_surjectivity
from .queueing import Complexity, DelayMode

PRESETS = ("fig4", "fig5_case1", "fig6_case2", "example1", "example2", "mm1", "tandem", "mixed3")

_TOP_KEYS = {
    "name", "seed", "description", "delay_mode", "nodes", "classes", "beta", "mu", "chi",
    "routing", "threshold", "sweep", "simulation", "solver", "example", "compare",
}


class _Map(dict):
    lines: dict


class _Seq(list):
    lines: list


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ScenarioError(f"line {key_node.start_mark.line + 1}: duplicate key {key!r}")
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_object(child, deep=True) for child in node.value)
    out.lines = [child.start_mark.line + 1 for child in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


def _line(container, key) -> str:
    try:
        return f"line {container.lines[key]}: "
    except (AttributeError, KeyError, IndexError, TypeError):
        return ""


@dataclass
class Scenario:
    name: str
    seed: int
    network: NetworkSpec | None
    functions: dict = field(default_factory=dict)
    surjectivity: dict = field(default_factory=dict)
    threshold: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    example: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    source: str = ""

    def require_network(self) -> NetworkSpec:
        if self.network is None:
            raise ScenarioError(f"scenario {self.name!r} defines no network")
        return self.network


class _Ctx:
    def __init__(self):
        self.errors: list[str] = []

    def fail(self, container, key, msg):
        self.errors.append(f"{_line(container, key)}{msg}")


def _num(ctx, container, key, what, default=None, positive=False, nonneg=False):
    if key not in container:
        return default
    value = container[key]
    try:
        x = float(value)
    except (TypeError, ValueError):
        ctx.fail(container, key, f"{what}: expected a number, got {value!r}")
        return default
    if positive and not x > 0:
        ctx.fail(container, key, f"{what}: must be positive, got {x}")
    if nonneg and x < 0:
        ctx.fail(container, key, f"{what}: must be nonnegative, got {x}")
    return x


def _names(ctx, doc, key, kind):
    raw = doc.get(key)
    if isinstance(raw, int) and not isinstance(raw, bool) and raw > 0:
        return [f"{kind[0]}{i}" for i in range(raw)]
    if isinstance(raw, list) and raw:
        if key == "classes":
            names = []
            for i, entry in enumerate(raw):
                if not isinstance(entry, dict) or "name" not in entry:
                    ctx.fail(raw, i, f"classes[{i}]: each class needs a name")
                    names.append(f"c{i}")
                else:
                    names.append(str(entry["name"]))
        else:
            names = [str(x) for x in raw]
        if len(set(names)) != len(names):
            ctx.fail(doc, key, f"{key}: names must be unique")
        return names
    ctx.fail(doc, key, f"{key}: expected a nonempty list or a positive count")
    return []


def _grid(ctx, container, key, nodes, classes, what, default, positive=False):
    """Read a (V, C) array from scalar, per-node list/map, matrix, or nested map."""
    V, C = len(nodes), len(classes)
    out = np.full((V, C), np.nan if default is None else float(default))
    if key not in container or container[key] is None:
        return None if default is None else out
    raw = container[key]

    def put(v, c, value, holder, hkey):
        try:
            x = float(value)
        except (TypeError, ValueError):
            ctx.fail(holder, hkey, f"{what}: expected a number, got {value!r}")
            return
        if positive and not x > 0:
            ctx.fail(holder, hkey, f"{what}: must be positive, got {x}")
        elif x < 0:
            ctx.fail(holder, hkey, f"{what}: must be nonnegative, got {x}")
        out[v, c] = x

    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        for v in range(V):
            for c in range(C):
                put(v, c, raw, container, key)
    elif isinstance(raw, list):
        if len(raw) != V:
            ctx.fail(container, key, f"{what}: expected {V} per-node entries, got {len(raw)}")
            return out
        for v, row in enumerate(raw):
            if isinstance(row, list):
                if len(row) != C:
                    ctx.fail(raw, v, f"{what}[{v}]: expected {C} per-class entries, got {len(row)}")
                    continue
                for c, x in enumerate(row):
                    put(v, c, x, raw, v)
            else:
                for c in range(C):
                    put(v, c, row, raw, v)
    elif isinstance(raw, dict):
        for node, entry in raw.items():
            if str(node) not in nodes:
                ctx.fail(raw, node, f"{what}: unknown node {node!r}")
                continue
            v = nodes.index(str(node))
            if isinstance(entry, dict):
                for cls, x in entry.items():
                    if str(cls) not in classes:
                        ctx.fail(entry, cls, f"{what}: unknown class {cls!r} at node {node!r}")
                        continue
                    put(v, classes.index(str(cls)), x, entry, cls)
            else:
                for c in range(C):
                    put(v, c, entry, raw, node)
    else:
        ctx.fail(container, key, f"{what}: unsupported value {raw!r}")
    return out


def _function(ctx, cls_entry, cname):
    block = cls_entry["function"]
    if not isinstance(block, dict):
        ctx.fail(cls_entry, "function", f"class {cname!r}: function must be a mapping")
        return None
    for key in ("alphabets", "table"):
        if key not in block:
            ctx.fail(cls_entry, "function", f"class {cname!r}: function needs {key!r}")
            return None
    alphabets = [tuple(a) for a in block["alphabets"]]
    n = len(alphabets)
    table = {}
    for i, row in enumerate(block["table"]):
        if not isinstance(row, list) or len(row) != n + 1:
            ctx.fail(block["table"], i, f"class {cname!r}: table row {i} must list {n} inputs and one output")
            continue
        table[tuple(row[:n])] = row[n]
    joint_raw = block.get("joint", "uniform")
    try:
        if joint_raw == "uniform":
            joint = None
        else:
            pts, w = [], []
            for row in joint_raw:
                pts.append(tuple(row[:n]))
                w.append(float(row[n]))
            joint = Pmf.from_weights(pts, w)
        missing = [x for x in itertools.product(*alphabets) if x not in table]
        if missing and joint is None:
            ctx.fail(block, "table", f"class {cname!r}: table misses inputs such as {missing[0]!r}")
            return None
        if joint is None:
            joint = Pmf.uniform(list(itertools.product(*alphabets)))
        return FunctionSpec(alphabets=tuple(alphabets), table=table, joint=joint)
    except (ValueError, TypeError, KeyError) as exc:
        ctx.fail(cls_entry, "function", f"class {cname!r}: {exc}")
        return None


def _routing(ctx, doc, nodes, classes):
    V, C = len(nodes), len(classes)
    raw = doc.get("routing") or {}
    if not isinstance(raw, dict):
        ctx.fail(doc, "routing", "routing must be a mapping")
        return RoutingPolicy.no_routing(V, C)
    transfer = np.zeros((V, C, V, C))

    def locate(entry, nkey, ckey, where):
        node, cls = str(entry.get(nkey)), str(entry.get(ckey))
        if node not in nodes:
            ctx.fail(entry, nkey, f"{where}: unknown node {node!r}")
            return None
        if cls not in classes:
            ctx.fail(entry, ckey, f"{where}: unknown class {cls!r}")
            return None
        return nodes.index(node), classes.index(cls)

    entries = raw.get("transfer") or []
    for i, entry in enumerate(entries):
        where = f"routing.transfer[{i}]"
        if not isinstance(entry, dict):
            ctx.fail(entries, i, f"{where}: expected a mapping")
            continue
        src = locate(entry, "from", "class", where)
        dst = locate({"to": entry.get("to"), "to_class": entry.get("to_class", entry.get("class"))}, "to", "to_class", where)
        p = _num(ctx, entry, "p", f"{where}.p", default=None)
        if src is None or dst is None or p is None:
            continue
        transfer[src + dst] += p

    depart = None
    if "depart" in raw:
        depart = np.zeros((V, C))
        for i, entry in enumerate(raw["depart"] or []):
            where = f"routing.depart[{i}]"
            loc = locate(entry, "node", "class", where) if isinstance(entry, dict) else None
            p = _num(ctx, entry, "p", f"{where}.p") if isinstance(entry, dict) else None
            if loc is not None and p is not None:
                depart[loc] = p

    source = None
    if "source" in raw:
        source = np.zeros((C, V))
        smap = raw["source"]
        for cls, split in (smap or {}).items():
            if str(cls) not in classes:
                ctx.fail(smap, cls, f"routing.source: unknown class {cls!r}")
                continue
            for node, p in (split or {}).items():
                if str(node) not in nodes:
                    ctx.fail(split, node, f"routing.source.{cls}: unknown node {node!r}")
                    continue
                source[classes.index(str(cls)), nodes.index(str(node))] = float(p)

    if depart is None:
        depart = np.clip(1.0 - transfer.sum(axis=(2, 3)), 0.0, None)
        over = transfer.sum(axis=(2, 3)) > 1 + 1e-9
        for v, c in zip(*np.nonzero(over)):
            ctx.fail(doc, "routing", f"routing row (node {nodes[v]!r}, class {classes[c]!r}): transfer probabilities sum to {transfer[v, c].sum():.12g} > 1")
    policy = RoutingPolicy(transfer, depart, source)
    for msg in validate_routing(policy):
        for v, name in enumerate(nodes):
            msg = msg.replace(f"node {v} ", f"node {name!r} ")
        for c, name in enumerate(classes):
            msg = msg.replace(f"class {c}:", f"class {name!r}:").replace(f"class {c} ", f"class {name!r} ")
        ctx.fail(doc, "routing", f"routing: {msg}")
    return policy


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: YAML parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    ctx = _Ctx()
    for key in doc:
        if key not in _TOP_KEYS:
            ctx.fail(doc, key, f"unknown key {key!r}")
    name = str(doc.get("name", Path(source).stem))
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        ctx.fail(doc, "seed", f"seed must be a nonnegative integer, got {seed!r}")
        seed = 0

    example = dict(doc.get("example") or {})
    network = None
    functions, surj = {}, {}
    if "nodes" in doc or "classes" in doc or not example:
        nodes = _names(ctx, doc, "nodes", "v")
        classes = _names(ctx, doc, "classes", "c")
        if ctx.errors:
            raise ScenarioError(f"{source}: invalid scenario", ctx.errors)
        cls_entries = doc["classes"] if isinstance(doc["classes"], list) else [{} for _ in classes]
        gammas, comps, ks = [], [], []
        for i, (cname, entry) in enumerate(zip(classes, cls_entries)):
            try:
                comps.append(Complexity.parse(entry.get("complexity", "MapReduce")))
            except ValueError as exc:
                ctx.fail(entry, "complexity", f"class {cname!r}: {exc}")
                comps.append(Complexity.MAPREDUCE)
            ks.append(_num(ctx, entry, "k", f"class {cname!r} k", default=1.0, nonneg=True))
            has_g, has_f = "gamma_surj" in entry, "function" in entry
            if has_g == has_f:
                ctx.fail(cls_entries, i, f"class {cname!r}: give exactly one of gamma_surj or function")
                gammas.append(1.0)
                continue
            if has_g:
                g = _num(ctx, entry, "gamma_surj", f"class {cname!r} gamma_surj", default=1.0)
                if not 0 <= g <= 1:
                    ctx.fail(entry, "gamma_surj", f"class {cname!r}: gamma_surj must lie in [0, 1], got {g}")
                gammas.append(g)
                continue
            spec = _function(ctx, entry, cname)
            if spec is None:
                gammas.append(1.0)
                continue
            src = entry["function"].get("source")
            try:
                info = function_surjectivity(spec, source_index=src)
            except ValueError as exc:
                ctx.fail(entry, "function", f"class {cname!r}: {exc}")
                gammas.append(1.0)
                continue
            functions[cname] = spec
            surj[cname] = info
            gammas.append(float(info["surjectivity"]))

        beta = _grid(ctx, doc, "beta", nodes, classes, "beta", 0.0)
        if "mu" not in doc:
            ctx.fail(doc, "name", "mu is required")
        mu = _grid(ctx, doc, "mu", nodes, classes, "mu", 1.0, positive=True)
        chi = _grid(ctx, doc, "chi", nodes, classes, "chi", None, positive=True)
        if chi is not None:
            chi = np.where(np.isnan(chi), np.inf, chi)  # no compute stage where unset
        # explicit k maps override the per-class value
        k = np.tile(np.array(ks, dtype=float), (len(nodes), 1))
        policy = _routing(ctx, doc, nodes, classes)
        if policy.source is not None:
            # a source split redistributes each class's total external rate
            for c in range(len(classes)):
                if policy.source[c].sum() > 0:
                    beta[:, c] = beta[:, c].sum() * policy.source[c]
        mode = doc.get("delay_mode", "additive")
        try:
            mode = DelayMode(mode)
        except ValueError:
            ctx.fail(doc, "delay_mode", f"delay_mode must be additive or pipelined, got {mode!r}")
            mode = DelayMode.ADDITIVE
        if not ctx.errors:
            try:
                network = NetworkSpec(
                    beta=beta, mu=mu, gamma_surj=np.array(gammas), routing=policy, k=k, chi=chi,
                    complexity=tuple(comps), delay_mode=mode, node_names=nodes, class_names=classes,
                )
            except ValueError as exc:
                ctx.errors.append(str(exc))

    sections = {}
    for key in ("threshold", "sweep", "simulation", "solver", "compare"):
        val = doc.get(key) or {}
        if not isinstance(val, dict):
            ctx.fail(doc, key, f"{key} must be a mapping")
            val = {}
        sections[key] = dict(val)
    sw = sections["sweep"]
    if sw:
        from .optimizer import SWEEP_PARAMETERS

        if sw.get("parameter") not in SWEEP_PARAMETERS:
            ctx.fail(doc["sweep"], "parameter", f"sweep.parameter must be one of {SWEEP_PARAMETERS}")
    if example and example.get("kind") not in ("bisection_allocation", "classification_split"):
        ctx.fail(doc["example"], "kind", "example.kind must be bisection_allocation or classification_split")

    if ctx.errors:
        raise ScenarioError(f"{source}: invalid scenario", ctx.errors)
    return Scenario(
        name=name, seed=seed, network=network, functions=functions, surjectivity=surj,
        threshold=sections["threshold"], sweep=sw, simulation=sections["simulation"],
        solver=sections["solver"], example=example, compare=sections["compare"], source=source,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario: {exc.strerror}") from exc
    return parse_scenario(text, str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("compflow").joinpath("presets").joinpath(f"{name}.yaml").read_text()


def load_preset(name: str) -> Scenario:
    return parse_scenario(preset_text(name), f"preset:{name}")


def expand_grid(spec) -> list[float]:
    """A grid from an explicit list or ``{start, stop, num}`` / ``{values: [...]}``."""
    if spec is None:
        return []
    if isinstance(spec, (list, tuple)):
        return [float(x) for x in spec]
    if isinstance(spec, dict):
        if "values" in spec:
            return [float(x) for x in spec["values"]]
        if spec.get("log"):
            return list(np.logspace(np.log10(spec["start"]), np.log10(spec["stop"]), int(spec["num"])))
        return list(np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"])))
    return [float(spec)]
