"""Engine-agnostic graph construction, resolution, and validation.

A :class:`GraphSpec` declares nodes, objects, environment-facing action
and observation channels, and the directed edges between them.  Objects
stand in for anything living inside a particular engine: resolving a
spec against an engine replaces each object with that engine's subgraph
while leaving everything else untouched, so the agnostic portion of the
graph is identical whichever engine runs it.

Edge attributes mirror the connection semantics used throughout the
package: ``delay`` shifts the channel's message schedule in simulated
time, ``window`` sets how many recent payloads the consumer callback
sees, and ``skip`` marks the edge as the cycle-breaking input of a
dependency loop.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigurationError, GraphValidationError
from .protocol import Rate, timing as make_timing
from .runtime import ChannelSpec, NodeLogic, NodeSpec

__all__ = [
    "Endpoint",
    "EdgeSpec",
    "NodeDecl",
    "ObjectDecl",
    "EngineDecl",
    "GraphSpec",
    "ObjectType",
    "Subgraph",
    "ConcreteGraph",
    "Diagnostic",
    "register_node_kind",
    "register_object_type",
    "node_kind_factory",
    "resolve",
    "validate",
    "ensure_valid",
]

ENV_NODE = "env"

# ---------------------------------------------------------------------------
# Endpoints and declarations


@dataclass(frozen=True)
class Endpoint:
    """One attachable point: a node port, object channel, action, or observation."""

    kind: str  # action | observation | node_in | node_out | sensor | actuator
    owner: str  # node or object name; empty for actions/observations
    port: str

    def __str__(self) -> str:
        if self.kind == "action":
            return f"action:{self.port}"
        if self.kind == "observation":
            return f"obs:{self.port}"
        if self.kind in ("sensor", "actuator"):
            return f"{self.kind}:{self.owner}.{self.port}"
        return f"node:{self.owner}.{self.port}"


def parse_endpoint(text: str, position: str) -> Endpoint:
    """Parse ``prefix:owner.port`` strings; position is 'source' or 'target'."""
    if ":" not in text:
        raise ConfigurationError(f"endpoint {text!r} needs a 'kind:' prefix")
    prefix, _, rest = text.partition(":")
    if prefix == "action":
        return Endpoint("action", "", rest)
    if prefix == "obs":
        return Endpoint("observation", "", rest)
    if prefix in ("node", "sensor", "actuator"):
        owner, dot, port = rest.partition(".")
        if not dot or not owner or not port:
            raise ConfigurationError(f"endpoint {text!r} must name owner.port")
        if prefix == "node":
            kind = "node_out" if position == "source" else "node_in"
            return Endpoint(kind, owner, port)
        return Endpoint(prefix, owner, port)
    raise ConfigurationError(f"endpoint {text!r} has unknown prefix {prefix!r}")


@dataclass(frozen=True)
class EdgeSpec:
    """One directed connection with its timing/window attributes."""

    source: str
    target: str
    delay: float = 0.0
    window: int = 1
    skip: bool = False
    default: Any = None

    def __post_init__(self):
        if self.delay < 0:
            raise ConfigurationError(f"edge {self.source}->{self.target}: delay must be >= 0")
        if self.window < 1:
            raise ConfigurationError(f"edge {self.source}->{self.target}: window must be >= 1")


@dataclass(frozen=True)
class NodeDecl:
    """Declaration of one processing node."""

    name: str
    rate: float
    kind: str
    config: dict = field(default_factory=dict, compare=True, hash=False)
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    states: tuple[str, ...] = ()
    role: str = "node"  # node | engine | env

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "states", tuple(self.states))


@dataclass(frozen=True)
class ObjectDecl:
    """Declaration of one engine-backed object instance."""

    name: str
    type: str
    config: dict = field(default_factory=dict, compare=True, hash=False)


@dataclass(frozen=True)
class EngineDecl:
    """Per-engine settings carried in the graph file."""

    rate: float
    params: dict = field(default_factory=dict, compare=True, hash=False)


# ---------------------------------------------------------------------------
# Registries


_NODE_KINDS: dict[str, Callable[[dict], NodeLogic]] = {}
_OBJECT_TYPES: dict[str, "ObjectType"] = {}


def register_node_kind(kind: str, factory: Callable[[dict], NodeLogic]) -> None:
    _NODE_KINDS[kind] = factory


def node_kind_factory(kind: str) -> Callable[[dict], NodeLogic]:
    if kind not in _NODE_KINDS:
        raise ConfigurationError(f"unknown node kind {kind!r}")
    return _NODE_KINDS[kind]


@dataclass
class Subgraph:
    """An engine-specific expansion of one object."""

    nodes: list[NodeDecl]
    edges: list[EdgeSpec]
    sensor_map: dict[str, str]  # object sensor port -> concrete "node:" source
    actuator_map: dict[str, str]  # object actuator port -> concrete "node:" target


@dataclass
class ObjectType:
    """Agnostic channel declaration plus per-engine subgraph factories.

    ``sensors``/``actuators`` map channel names to their rates; factories
    receive the object declaration and the engine declaration and return
    the subgraph realizing those channels under that engine.
    """

    name: str
    sensors: dict[str, float]
    actuators: dict[str, float]
    factories: dict[str, Callable[[ObjectDecl, EngineDecl], Subgraph]] = field(
        default_factory=dict
    )

    def supports(self, engine_id: str) -> bool:
        return engine_id in self.factories


def register_object_type(obj_type: ObjectType) -> None:
    _OBJECT_TYPES[obj_type.name] = obj_type


def object_type(name: str) -> ObjectType:
    if name not in _OBJECT_TYPES:
        raise ConfigurationError(f"unknown object type {name!r}")
    return _OBJECT_TYPES[name]


# ---------------------------------------------------------------------------
# GraphSpec


@dataclass
class GraphSpec:
    """Mutable builder for the engine-agnostic graph."""

    env_rate: float = 1.0
    nodes: list[NodeDecl] = field(default_factory=list)
    objects: list[ObjectDecl] = field(default_factory=list)
    edges: list[EdgeSpec] = field(default_factory=list)
    actions: list[str] = field(default_factory=list)
    observations: list[str] = field(default_factory=list)
    engines: dict[str, EngineDecl] = field(default_factory=dict)

    # -- construction -----------------------------------------------------

    def add_node(self, decl: NodeDecl) -> NodeDecl:
        if decl.name == ENV_NODE:
            raise ConfigurationError(f"node name {ENV_NODE!r} is reserved")
        if any(n.name == decl.name for n in self.nodes) or any(
            o.name == decl.name for o in self.objects
        ):
            raise ConfigurationError(f"duplicate name {decl.name!r}")
        self.nodes.append(decl)
        return decl

    def add_object(self, decl: ObjectDecl) -> ObjectDecl:
        object_type(decl.type)  # must be registered
        if any(n.name == decl.name for n in self.nodes) or any(
            o.name == decl.name for o in self.objects
        ):
            raise ConfigurationError(f"duplicate name {decl.name!r}")
        self.objects.append(decl)
        return decl

    def connect(
        self,
        source: str | None = None,
        target: str | None = None,
        action: str | None = None,
        observation: str | None = None,
        delay: float = 0.0,
        window: int = 1,
        skip: bool = False,
        default: Any = None,
    ) -> EdgeSpec:
        """Record one edge; endpoints are checked eagerly.

        Exactly one of ``source``/``action`` and one of
        ``target``/``observation`` must be given.
        """
        if (source is None) == (action is None):
            raise ConfigurationError("connect() needs exactly one of source=/action=")
        if (target is None) == (observation is None):
            raise ConfigurationError("connect() needs exactly one of target=/observation=")

        if action is not None:
            if action not in self.actions:
                self.actions.append(action)
            src = Endpoint("action", "", action)
        else:
            src = parse_endpoint(source, "source")
            self._check_endpoint(src)
        if observation is not None:
            if observation in self.observations:
                raise ConfigurationError(
                    f"observation {observation!r} already has a source"
                )
            self.observations.append(observation)
            dst = Endpoint("observation", "", observation)
        else:
            dst = parse_endpoint(target, "target")
            self._check_endpoint(dst)

        edge = EdgeSpec(str(src), str(dst), delay, window, skip, default)
        if any((e.source, e.target) == (edge.source, edge.target) for e in self.edges):
            raise ConfigurationError(f"duplicate edge {edge.source} -> {edge.target}")
        if dst.kind in ("node_in", "actuator"):
            taken = [e for e in self.edges if e.target == edge.target]
            if taken:
                raise ConfigurationError(
                    f"target {edge.target} already fed by {taken[0].source}"
                )
        self.edges.append(edge)
        return edge

    def _check_endpoint(self, ep: Endpoint) -> None:
        if ep.kind in ("node_in", "node_out"):
            decl = next((n for n in self.nodes if n.name == ep.owner), None)
            if decl is None:
                raise ConfigurationError(f"unknown node {ep.owner!r} in endpoint {ep}")
            ports = decl.inputs if ep.kind == "node_in" else decl.outputs
            if ep.port not in ports:
                raise ConfigurationError(
                    f"node {ep.owner!r} has no {'input' if ep.kind == 'node_in' else 'output'} "
                    f"port {ep.port!r}"
                )
        elif ep.kind in ("sensor", "actuator"):
            decl = next((o for o in self.objects if o.name == ep.owner), None)
            if decl is None:
                raise ConfigurationError(f"unknown object {ep.owner!r} in endpoint {ep}")
            channels = object_type(decl.type)
            table = channels.sensors if ep.kind == "sensor" else channels.actuators
            if ep.port not in table:
                raise ConfigurationError(
                    f"object {ep.owner!r} declares no {ep.kind} {ep.port!r}"
                )

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "env": {"rate": self.env_rate},
            "nodes": [asdict(n) for n in self.nodes],
            "objects": [asdict(o) for o in self.objects],
            "edges": [asdict(e) for e in self.edges],
            "actions": list(self.actions),
            "observations": list(self.observations),
            "engines": {k: asdict(v) for k, v in self.engines.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GraphSpec":
        if data.get("version") != 1:
            raise ConfigurationError(f"unsupported graph schema version {data.get('version')!r}")
        spec = cls(env_rate=data["env"]["rate"])
        for n in data.get("nodes", []):
            spec.nodes.append(NodeDecl(**{**n, "inputs": tuple(n.get("inputs", ())),
                                          "outputs": tuple(n.get("outputs", ())),
                                          "states": tuple(n.get("states", ()))}))
        for o in data.get("objects", []):
            spec.objects.append(ObjectDecl(**o))
        for e in data.get("edges", []):
            spec.edges.append(EdgeSpec(**e))
        spec.actions = list(data.get("actions", []))
        spec.observations = list(data.get("observations", []))
        spec.engines = {k: EngineDecl(**v) for k, v in data.get("engines", {}).items()}
        return spec

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GraphSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Resolution


@dataclass
class ConcreteEdge:
    source_node: str
    source_port: str
    target_node: str
    channel: str
    delay: float
    window: int
    skip: bool
    default: Any
    origin: str  # agnostic | object:<name>
    agnostic_form: str  # "<source> -> <target>" with object channels unexpanded

    def key(self) -> tuple:
        return (self.source_node, self.source_port, self.target_node, self.channel)


@dataclass
class ConcreteNode:
    decl: NodeDecl
    origin: str

    @property
    def name(self) -> str:
        return self.decl.name


@dataclass
class ConcreteGraph:
    """A runnable graph: plain nodes and channels, objects expanded."""

    engine_id: str
    env_rate: float
    nodes: dict[str, ConcreteNode]
    edges: list[ConcreteEdge]
    actions: list[str]
    observations: list[str]
    engine: EngineDecl

    @property
    def engine_node(self) -> str | None:
        for node in self.nodes.values():
            if node.decl.role == "engine":
                return node.name
        return None

    def node_rate(self, name: str) -> float:
        return self.nodes[name].decl.rate

    def inbound(self, name: str) -> list[ConcreteEdge]:
        return [e for e in self.edges if e.target_node == name]

    def build_node_specs(self) -> dict[str, NodeSpec]:
        """Derive per-node runtime specs (channel timings) from the wiring."""
        specs = {}
        for name, node in self.nodes.items():
            channels = []
            for e in self.inbound(name):
                channels.append(
                    ChannelSpec(
                        name=e.channel,
                        timing=make_timing(
                            node.decl.rate,
                            self.node_rate(e.source_node),
                            e.delay,
                            cyclic=e.skip,
                        ),
                        window=e.window,
                        default=e.default,
                    )
                )
            specs[name] = NodeSpec(
                name=name,
                rate=Rate(node.decl.rate),
                inputs=tuple(channels),
                outputs=tuple(node.decl.outputs),
                states=tuple(node.decl.states),
            )
        return specs

    def snapshot(self, agnostic_only: bool = False) -> str:
        """Stable structural listing used by tests and docs.

        With ``agnostic_only`` the listing covers the engine-independent
        portion: object-internal nodes and edges are dropped, and edges
        touching object channels are rendered with their declared sensor
        and actuator names rather than the engine-specific expansion.
        """
        lines = []
        for name in sorted(self.nodes):
            node = self.nodes[name]
            if agnostic_only and node.origin != "agnostic":
                continue
            decl = node.decl
            lines.append(
                f"node {name} rate={decl.rate:g} kind={decl.kind} role={decl.role}"
            )
        edges = self.edges
        if agnostic_only:
            edges = [e for e in edges if e.origin == "agnostic"]
            rendered_edges = sorted(
                (e.agnostic_form, e.delay, e.window, e.skip) for e in edges
            )
        else:
            rendered_edges = sorted(
                (
                    f"{e.source_node}.{e.source_port} -> {e.target_node}.{e.channel}",
                    e.delay,
                    e.window,
                    e.skip,
                )
                for e in edges
            )
        for rendered, delay, window, skip in rendered_edges:
            lines.append(f"edge {rendered} delay={delay:g} window={window} skip={skip}")
        return "\n".join(lines) + "\n"


def resolve(graph: GraphSpec, engine_id: str) -> ConcreteGraph:
    """Expand every object into its subgraph for ``engine_id``."""
    engine_decl = graph.engines.get(engine_id)
    if engine_decl is None:
        raise ConfigurationError(
            f"graph declares no engine {engine_id!r}; available: {sorted(graph.engines)}"
        )
    for obj in graph.objects:
        otype = object_type(obj.type)
        if not otype.supports(engine_id):
            raise ConfigurationError(
                f"object {obj.name!r} (type {obj.type!r}) does not support engine "
                f"{engine_id!r}; available: {sorted(otype.factories)}"
            )

    nodes: dict[str, ConcreteNode] = {}
    edges: list[ConcreteEdge] = []

    env_inputs = tuple(graph.observations)
    env_decl = NodeDecl(
        name=ENV_NODE,
        rate=graph.env_rate,
        kind="env",
        inputs=env_inputs,
        outputs=tuple(graph.actions),
        role="env",
    )
    nodes[ENV_NODE] = ConcreteNode(env_decl, "agnostic")
    for decl in graph.nodes:
        nodes[decl.name] = ConcreteNode(decl, "agnostic")

    sensor_sources: dict[tuple[str, str], tuple[str, str]] = {}
    actuator_targets: dict[tuple[str, str], tuple[str, str]] = {}

    for obj in graph.objects:
        otype = object_type(obj.type)
        sub = otype.factories[engine_id](obj, engine_decl)
        origin = f"object:{obj.name}"
        for decl in sub.nodes:
            if decl.name in nodes:
                raise ConfigurationError(
                    f"object {obj.name!r} subgraph reuses node name {decl.name!r}"
                )
            nodes[decl.name] = ConcreteNode(decl, origin)
        for port, rate in otype.sensors.items():
            if port not in sub.sensor_map:
                raise ConfigurationError(
                    f"object {obj.name!r}: engine {engine_id!r} subgraph does not "
                    f"expose sensor {port!r}"
                )
            ep = parse_endpoint(sub.sensor_map[port], "source")
            provider = next((d for d in sub.nodes if d.name == ep.owner), None)
            if provider is None:
                raise ConfigurationError(
                    f"object {obj.name!r}: sensor {port!r} maps to unknown node {ep.owner!r}"
                )
            src_rate = provider.rate
            if src_rate != rate:
                raise ConfigurationError(
                    f"object {obj.name!r} sensor {port!r}: declared rate {rate:g}, "
                    f"engine {engine_id!r} provides {src_rate:g}"
                )
            sensor_sources[(obj.name, port)] = (ep.owner, ep.port)
        for port, rate in otype.actuators.items():
            if port not in sub.actuator_map:
                raise ConfigurationError(
                    f"object {obj.name!r}: engine {engine_id!r} subgraph does not "
                    f"expose actuator {port!r}"
                )
            ep = parse_endpoint(sub.actuator_map[port], "target")
            actuator_targets[(obj.name, port)] = (ep.owner, ep.port)
        for e in sub.edges:
            src = parse_endpoint(e.source, "source")
            dst = parse_endpoint(e.target, "target")
            edges.append(
                ConcreteEdge(
                    src.owner, src.port, dst.owner, dst.port,
                    e.delay, e.window, e.skip, e.default,
                    origin, f"{e.source} -> {e.target}",
                )
            )

    for e in graph.edges:
        src = _decompose(graph, e.source, "source")
        dst = _decompose(graph, e.target, "target")
        if src.kind == "action":
            source_node, source_port = ENV_NODE, src.port
        elif src.kind == "sensor":
            source_node, source_port = sensor_sources[(src.owner, src.port)]
        else:
            source_node, source_port = src.owner, src.port
        if dst.kind == "observation":
            target_node, channel = ENV_NODE, dst.port
        elif dst.kind == "actuator":
            target_node, channel = actuator_targets[(dst.owner, dst.port)]
        else:
            target_node, channel = dst.owner, dst.port
        edges.append(
            ConcreteEdge(
                source_node, source_port, target_node, channel,
                e.delay, e.window, e.skip, e.default,
                "agnostic", f"{e.source} -> {e.target}",
            )
        )

    return ConcreteGraph(
        engine_id=engine_id,
        env_rate=graph.env_rate,
        nodes=nodes,
        edges=edges,
        actions=list(graph.actions),
        observations=list(graph.observations),
        engine=engine_decl,
    )


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Diagnostic:
    code: str
    severity: str  # error | warning
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


def validate(graph: ConcreteGraph) -> list[Diagnostic]:
    """Machine-readable diagnostics; empty list means the graph is runnable."""
    diags: list[Diagnostic] = []

    produced_ports = set()
    for name, node in graph.nodes.items():
        decl = node.decl
        if not decl.rate > 0:
            diags.append(
                Diagnostic("NODE_BAD_RATE", "error", f"node {name!r} has rate {decl.rate!r}")
            )
        inbound = graph.inbound(name)
        if not inbound:
            diags.append(
                Diagnostic("NODE_NO_INPUT", "error", f"node {name!r} has no input channel")
            )
        seen_channels = set()
        for e in inbound:
            if e.channel in seen_channels:
                diags.append(
                    Diagnostic(
                        "CHANNEL_MULTI_SOURCE",
                        "error",
                        f"node {name!r} channel {e.channel!r} has multiple producers",
                    )
                )
            seen_channels.add(e.channel)
            if e.skip and e.default is None:
                diags.append(
                    Diagnostic(
                        "CYCLIC_NO_DEFAULT",
                        "error",
                        f"cycle-breaking channel {e.source_node}.{e.source_port} -> "
                        f"{name}.{e.channel} declares no default payload for callback 0",
                    )
                )
            ratio = graph.node_rate(e.source_node) / decl.rate
            if ratio > 100:
                diags.append(
                    Diagnostic(
                        "RATE_RATIO",
                        "warning",
                        f"channel into {name!r} has producer/consumer rate ratio "
                        f"{ratio:.0f} (> 100), likely a mistake",
                    )
                )
        for port in decl.outputs:
            produced_ports.add((name, port))

    for e in graph.edges:
        if e.source_node in graph.nodes:
            src_decl = graph.nodes[e.source_node].decl
            if e.source_port not in src_decl.outputs:
                diags.append(
                    Diagnostic(
                        "UNKNOWN_ENDPOINT",
                        "error",
                        f"edge references missing output {e.source_node}.{e.source_port}",
                    )
                )
        else:
            diags.append(
                Diagnostic(
                    "UNKNOWN_ENDPOINT", "error", f"edge references missing node {e.source_node!r}"
                )
            )
        if e.target_node not in graph.nodes:
            diags.append(
                Diagnostic(
                    "UNKNOWN_ENDPOINT", "error", f"edge references missing node {e.target_node!r}"
                )
            )

    consumed_ports = {(e.source_node, e.source_port) for e in graph.edges}
    for name, port in sorted(produced_ports - consumed_ports):
        if graph.nodes[name].decl.role != "env":
            diags.append(
                Diagnostic(
                    "DANGLING_OUTPUT", "warning", f"output {name}.{port} has no consumer"
                )
            )

    if not graph.observations:
        diags.append(Diagnostic("ENV_NO_OBSERVATION", "error", "graph declares no observation"))
    for action in graph.actions:
        if not any(
            e.source_node == ENV_NODE and e.source_port == action for e in graph.edges
        ):
            diags.append(
                Diagnostic("ACTION_NO_TARGET", "error", f"action {action!r} reaches no node")
            )

    diags.extend(_cycle_diagnostics(graph))
    return diags


def _cycle_diagnostics(graph: ConcreteGraph) -> list[Diagnostic]:
    """Every directed cycle must contain at least one skip edge."""
    adjacency: dict[str, set[str]] = {name: set() for name in graph.nodes}
    for e in graph.edges:
        if not e.skip and e.source_node in adjacency and e.target_node in adjacency:
            adjacency[e.source_node].add(e.target_node)

    # Iterative DFS cycle search on the non-skip subgraph.
    WHITE, GREY, BLACK = 0, 1, 2
    color = {name: WHITE for name in adjacency}
    parent: dict[str, str] = {}
    cycle: list[str] | None = None
    for root in sorted(adjacency):
        if color[root] != WHITE or cycle:
            continue
        stack = [(root, iter(sorted(adjacency[root])))]
        color[root] = GREY
        while stack and not cycle:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    parent[nxt] = node
                    stack.append((nxt, iter(sorted(adjacency[nxt]))))
                    advanced = True
                    break
                if color[nxt] == GREY:
                    path = [node]
                    while path[-1] != nxt:
                        path.append(parent[path[-1]])
                    cycle = list(reversed(path))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack.pop()
    if not cycle:
        return []
    edges_in_cycle = [
        f"{a} -> {b}" for a, b in zip(cycle, cycle[1:] + cycle[:1])
    ]
    return [
        Diagnostic(
            "CYCLE_WITHOUT_SKIP",
            "error",
            "dependency cycle with no skip edge: " + ", ".join(edges_in_cycle),
        )
    ]


def ensure_valid(graph: ConcreteGraph) -> ConcreteGraph:
    problems = [d for d in validate(graph) if d.severity == "error"]
    if problems:
        raise GraphValidationError(problems)
    return graph
