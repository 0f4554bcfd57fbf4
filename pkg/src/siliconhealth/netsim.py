"""Deterministic discrete-event simulation of the tiered facility network.

Time is simulated seconds from the scenario start; absolute timestamps
add :data:`EPOCH`.  Children initiate every sync toward their parent.
With ``replicate_down`` (the default) the child also pulls the parent's
records, so all replicas converge; without it traffic only flows upward.
"""

import csv
import heapq
import io
import json
import math
import shlex
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dhf import DEVICE_MODELS, TIER_DEFAULT_MODEL, DeviceProfile, DeviceRegistry, generate_proof, \
    make_device, proof_timing
from .errors import ConfigError, SiliconHealthError
from .hashcore import Difficulty, expected_attempts, sha256
from .identity import Demographics, FamilyGraph, IdentityStore, MIN_IDENTITY_TIER, derive_pseudonym
from .ledger import Ledger, StaleWrite
from .query import SynonymDictionary, search
from .records import FLAG_EMERGENCY, FLAG_REFERRAL, HealthRecord, RecordType, leaf_hash, make_record_id
from .syncproto import AckStatus, Channel, SyncEndpoint, SyncError, run_sync

EPOCH = 1_700_000_000
DAY = 86400
SKEW_RANGE = 30.0
# Verifiers must absorb two opposite worst-case clock offsets plus slack.
SKEW_ALLOWANCE = 2 * SKEW_RANGE + 5.0


class SimError(SiliconHealthError):
    pass


class MalformedTopology(ConfigError):
    pass


class InfeasiblePattern(ConfigError):
    pass


class ScriptError(ConfigError):
    pass


# -- topology ---------------------------------------------------------------

@dataclass(frozen=True)
class NodeSpec:
    name: str
    tier: int
    parent: Optional[str] = None
    model: Optional[str] = None


@dataclass(frozen=True)
class TopologySpec:
    nodes: Tuple[NodeSpec, ...]

    def __post_init__(self):
        validate_topology(self)

    @property
    def apex(self) -> NodeSpec:
        return max(self.nodes, key=lambda n: n.tier)

    def by_name(self) -> Dict[str, NodeSpec]:
        return {n.name: n for n in self.nodes}

    def links(self) -> List[Tuple[str, str]]:
        return [(n.name, n.parent) for n in self.nodes if n.parent is not None]

    def tier(self, name: str) -> int:
        return self.by_name()[name].tier

    def parent(self, name: str) -> Optional[str]:
        return self.by_name()[name].parent

    @classmethod
    def district(cls, clinics: int = 10) -> "TopologySpec":
        nodes = [NodeSpec("district", 2)] + [NodeSpec(f"clinic{i:02d}", 1, "district") for i in range(clinics)]
        return cls(tuple(nodes))

    @classmethod
    def clinic_pair(cls) -> "TopologySpec":
        return cls((NodeSpec("center", 2), NodeSpec("clinic", 1, "center")))

    @classmethod
    def four_tier(cls) -> "TopologySpec":
        return cls((NodeSpec("regional", 3), NodeSpec("urban", 2, "regional"),
                    NodeSpec("clinic", 1, "urban"), NodeSpec("mobile", 0, "clinic")))


def validate_topology(spec: TopologySpec):
    if not spec.nodes:
        raise MalformedTopology("topology has no nodes")
    names = [n.name for n in spec.nodes]
    if len(set(names)) != len(names):
        raise MalformedTopology("duplicate node names")
    by_name = {n.name: n for n in spec.nodes}
    top = max(n.tier for n in spec.nodes)
    apexes = [n for n in spec.nodes if n.tier == top]
    if len(apexes) != 1:
        raise MalformedTopology(f"expected exactly one tier-{top} apex, found {len(apexes)}")
    for n in spec.nodes:
        if not 0 <= n.tier <= 3:
            raise MalformedTopology(f"{n.name}: tier must be 0..3")
        if n.model is not None and n.model not in DEVICE_MODELS:
            raise MalformedTopology(f"{n.name}: unknown device model {n.model!r}")
        if n.tier == top:
            if n.parent is not None:
                raise MalformedTopology(f"{n.name}: the apex cannot have a parent")
            continue
        if n.parent is None:
            raise MalformedTopology(f"{n.name}: tier-{n.tier} node has no parent")
        parent = by_name.get(n.parent)
        if parent is None:
            raise MalformedTopology(f"{n.name}: unknown parent {n.parent!r}")
        if parent.tier != n.tier + 1:
            raise MalformedTopology(f"{n.name}: parent must be tier {n.tier + 1}, got {parent.tier}")


def random_topology(rng: np.random.Generator, max_nodes: int = 20, max_link_tiers: int = 3) -> TopologySpec:
    """A random valid hierarchy with at most ``max_nodes`` nodes."""
    top = int(rng.integers(1, max_link_tiers + 1))
    nodes = [NodeSpec("n00", top)]
    levels = {top: ["n00"]}
    target = int(rng.integers(2, max_nodes + 1))
    tier = top - 1
    while tier >= 0 and len(nodes) < target:
        room = target - len(nodes)
        count = int(rng.integers(1, max(2, min(room, 3 * len(levels[tier + 1])) + 1)))
        count = min(count, room) if tier > 0 else room
        levels[tier] = []
        for _ in range(count):
            name = f"n{len(nodes):02d}"
            parent = levels[tier + 1][int(rng.integers(0, len(levels[tier + 1])))]
            nodes.append(NodeSpec(name, tier, parent))
            levels[tier].append(name)
        tier -= 1
    return TopologySpec(tuple(nodes))


def facility_id_for(name: str) -> bytes:
    return sha256(b"facility:" + name.encode())[:8]


# -- windows ----------------------------------------------------------------

@dataclass(frozen=True)
class WindowPattern:
    min_per_day: int = 2
    max_per_day: int = 3
    min_minutes: float = 15.0
    max_minutes: float = 30.0

    def validate(self):
        if not 0 <= self.min_per_day <= self.max_per_day:
            raise InfeasiblePattern("window counts must satisfy 0 <= min <= max")
        if not 0 < self.min_minutes <= self.max_minutes:
            raise InfeasiblePattern("window durations must satisfy 0 < min <= max")
        if self.max_per_day * self.max_minutes * 60 > DAY:
            raise InfeasiblePattern("windows cannot fit in a day")


@dataclass(frozen=True)
class Window:
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


def schedule_windows(pattern: WindowPattern, days: int, rng: np.random.Generator,
                     offset_days: int = 0) -> List[Window]:
    """Per day: a uniform count, uniform durations, and uniform non-overlapping starts."""
    pattern.validate()
    out = []
    for day in range(offset_days, offset_days + days):
        k = int(rng.integers(pattern.min_per_day, pattern.max_per_day + 1))
        if k == 0:
            continue
        durations = rng.uniform(pattern.min_minutes, pattern.max_minutes, k) * 60
        slack = DAY - durations.sum()
        gaps = np.sort(rng.uniform(0, slack, k))
        start = day * DAY
        cum = 0.0
        for g, d in zip(gaps, durations):
            out.append(Window(float(start + g + cum), float(d)))
            cum += d
    return out


# -- nodes and links --------------------------------------------------------

@dataclass
class EnergyMeter:
    joules: float = 0.0
    active_seconds: float = 0.0
    proof_joules: List[float] = field(default_factory=list)

    def add_proof(self, joules: float, seconds: float):
        self.joules += joules
        self.active_seconds += seconds
        self.proof_joules.append(joules)


@dataclass
class SimNode:
    name: str
    facility_id: bytes
    tier: int
    device: DeviceProfile
    ledger: Ledger
    parent: Optional[str]
    clock_skew: float
    endpoint: SyncEndpoint
    family: FamilyGraph = field(default_factory=FamilyGraph)
    identities: Optional[IdentityStore] = None
    energy: EnergyMeter = field(default_factory=EnergyMeter)
    next_seq: int = 1

    def persist(self, directory) -> List[Path]:
        """Write this node's durable state; identity mappings only exist at tier >= 2."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / f"{self.name}.ledger", d / f"{self.name}.family"]
        self.ledger.save(paths[0])
        paths[1].write_bytes(self.family.to_bytes())
        if self.identities is not None:
            paths.append(d / f"{self.name}.identity")
            paths[-1].write_bytes(self.identities.to_bytes())
        return paths


@dataclass
class LinkConfig:
    bandwidth_min: float = 9600.0
    bandwidth_max: float = 14400.0
    latency: float = 0.3
    loss: float = 0.01
    pattern: WindowPattern = field(default_factory=WindowPattern)


@dataclass
class SimLink:
    child: str
    parent: str
    bandwidth_bps: float
    windows: List[Window]
    loss: float
    latency: float
    bytes_per_window: Dict[int, int] = field(default_factory=dict)
    deliveries: List[Tuple[float, int]] = field(default_factory=list)
    busy_until: float = 0.0

    @property
    def endpoints(self) -> Tuple[str, str]:
        return self.child, self.parent

    def capacity(self, window: Window) -> float:
        return self.bandwidth_bps * window.duration / 8


# -- scenario config ----------------------------------------------------------

@dataclass(frozen=True)
class Workload:
    target: str           # node name, "tier:<n>" or "leaves"
    per_day: float
    emergency: float = 0.05
    referral: float = 0.10
    updates_per_day: float = 0.0


@dataclass(frozen=True)
class ExplicitRecord:
    node: str
    at: float             # simulated seconds
    emergency: bool = False
    referral: bool = False
    text: str = ""


@dataclass(frozen=True)
class OfflineSpan:
    node: str
    start: float
    end: float


@dataclass(frozen=True)
class QueryEvent:
    node: str
    at: float
    text: str


@dataclass
class ScenarioConfig:
    topology: TopologySpec = field(default_factory=TopologySpec.clinic_pair)
    link: LinkConfig = field(default_factory=LinkConfig)
    # links whose child is tier >= backhaul_tier use the backhaul settings
    backhaul_tier: int = 2
    backhaul: LinkConfig = field(default_factory=lambda: LinkConfig(
        256_000.0, 256_000.0, 0.1, 0.0, WindowPattern(24, 24, 10.0, 10.0)))
    difficulty: Difficulty = Difficulty(16, 256)
    workloads: Tuple[Workload, ...] = ()
    records: Tuple[ExplicitRecord, ...] = ()
    offline: Tuple[OfflineSpan, ...] = ()
    queries: Tuple[QueryEvent, ...] = ()
    horizon_days: float = 7.0
    drain_days: float = 2.0
    seed: int = 0
    replicate_down: bool = True
    uptime_hours: float = 24.0
    resync_seconds: float = 300.0
    retry_seconds: float = 10.0
    # after the drain, keep adding whole days of windows until roots agree
    settle_days: int = 0
    name: str = "scenario"

    def validate(self):
        if self.horizon_days <= 0:
            raise ConfigError("horizon must be positive")
        if self.drain_days < 0:
            raise ConfigError("drain must be non-negative")
        if self.settle_days < 0:
            raise ConfigError("settle_days must be non-negative")
        if not 0 < self.uptime_hours <= 24:
            raise ConfigError("uptime_hours must be in (0, 24]")
        for lc in (self.link, self.backhaul):
            lc.pattern.validate()
            if not 0 < lc.bandwidth_min <= lc.bandwidth_max:
                raise ConfigError("bandwidth bounds must satisfy 0 < min <= max")
            if not 0 <= lc.loss < 1:
                raise ConfigError("loss must be in [0, 1)")
        names = self.topology.by_name()
        for item in (*self.records, *self.offline, *self.queries):
            if item.node not in names:
                raise ConfigError(f"unknown node {item.node!r}")
        for w in self.workloads:
            if w.per_day < 0 or w.updates_per_day < 0:
                raise ConfigError("workload rates must be non-negative")
            _workload_nodes(w, self.topology)
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        try:
            return _config_from_dict(data).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        text = Path(path).read_text("utf-8")
        if Path(path).suffix == ".json":
            try:
                return cls.from_dict(json.loads(text))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return parse_script(text)


def _config_from_dict(data: dict) -> ScenarioConfig:
    cfg = ScenarioConfig()
    topo = data.get("topology")
    if isinstance(topo, dict) and "district" in topo:
        cfg.topology = TopologySpec.district(int(topo["district"]))
    elif isinstance(topo, str):
        cfg.topology = _named_topology(topo)
    elif topo is not None:
        cfg.topology = TopologySpec(tuple(NodeSpec(n["name"], int(n["tier"]), n.get("parent"), n.get("model"))
                                          for n in topo))

    def link_cfg(d, base):
        if d is None:
            return base
        pat = d.get("windows", {})
        return LinkConfig(float(d.get("bandwidth_min", base.bandwidth_min)),
                          float(d.get("bandwidth_max", base.bandwidth_max)),
                          float(d.get("latency", base.latency)), float(d.get("loss", base.loss)),
                          WindowPattern(int(pat.get("min_per_day", base.pattern.min_per_day)),
                                        int(pat.get("max_per_day", base.pattern.max_per_day)),
                                        float(pat.get("min_minutes", base.pattern.min_minutes)),
                                        float(pat.get("max_minutes", base.pattern.max_minutes))))

    cfg.link = link_cfg(data.get("link"), cfg.link)
    cfg.backhaul = link_cfg(data.get("backhaul"), cfg.backhaul)
    if "difficulty" in data:
        d = data["difficulty"]
        cfg.difficulty = Difficulty(int(d["d"]), int(d.get("scale", 256)))
    cfg.workloads = tuple(Workload(**w) for w in data.get("workloads", ()))
    cfg.records = tuple(ExplicitRecord(r["node"], float(r["day"]) * DAY, bool(r.get("emergency", False)),
                                       bool(r.get("referral", False)), r.get("text", ""))
                        for r in data.get("records", ()))
    cfg.offline = tuple(OfflineSpan(o["node"], float(o["from_day"]) * DAY, float(o["to_day"]) * DAY)
                        for o in data.get("offline", ()))
    cfg.queries = tuple(QueryEvent(q["node"], float(q["day"]) * DAY, q["text"]) for q in data.get("queries", ()))
    for key in ("horizon_days", "drain_days", "uptime_hours", "resync_seconds", "retry_seconds"):
        if key in data:
            setattr(cfg, key, float(data[key]))
    for key in ("seed", "settle_days"):
        if key in data:
            setattr(cfg, key, int(data[key]))
    if "replicate_down" in data:
        cfg.replicate_down = bool(data["replicate_down"])
    cfg.name = str(data.get("name", cfg.name))
    return cfg


def _named_topology(name: str) -> TopologySpec:
    try:
        return {"pair": TopologySpec.clinic_pair, "four-tier": TopologySpec.four_tier,
                "district": TopologySpec.district}[name]()
    except KeyError:
        raise ConfigError(f"unknown topology {name!r}") from None


SCRIPT_GRAMMAR = """\
Scenario scripts: one directive per line, '#' starts a comment.

  name <text>
  seed <int>
  horizon <days>
  drain <days>
  settle <max extra days>
  topology pair | four-tier | district [<clinics>]
  node <name> <tier> [<parent>|-] [<model>]
  link bandwidth <min> [<max>] | loss <p> | latency <s> | windows <min>/<max> <minutes-min>/<minutes-max>
  backhaul (same options as link)
  difficulty <d> [<scale>]
  workload <node|tier:N|leaves> <records/day> [emergency=<p>] [referral=<p>] [updates=<n/day>]
  record <node> <day> [emergency] [referral] [text="..."]
  offline <node> <from-day> <to-day>
  query <node> <day> <text...>
  uptime <hours/day>
  replicate-down on|off
"""


def parse_script(text: str) -> ScenarioConfig:
    cfg = ScenarioConfig()
    nodes: List[NodeSpec] = []
    workloads, records, offline, queries = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            words = shlex.split(line)
            cmd, args = words[0], words[1:]
            if cmd == "name":
                cfg.name = " ".join(args)
            elif cmd == "seed":
                cfg.seed = int(args[0])
            elif cmd == "horizon":
                cfg.horizon_days = float(args[0])
            elif cmd == "drain":
                cfg.drain_days = float(args[0])
            elif cmd == "settle":
                cfg.settle_days = int(args[0])
            elif cmd == "topology":
                cfg.topology = (TopologySpec.district(int(args[1])) if args[0] == "district" and len(args) > 1
                                else _named_topology(args[0]))
            elif cmd == "node":
                parent = args[2] if len(args) > 2 and args[2] != "-" else None
                nodes.append(NodeSpec(args[0], int(args[1]), parent, args[3] if len(args) > 3 else None))
            elif cmd in ("link", "backhaul"):
                attr = "link" if cmd == "link" else "backhaul"
                setattr(cfg, attr, _link_directive(getattr(cfg, attr), args))
            elif cmd == "difficulty":
                cfg.difficulty = Difficulty(int(args[0]), int(args[1]) if len(args) > 1 else 256)
            elif cmd == "workload":
                opts = dict(a.split("=", 1) for a in args[2:])
                workloads.append(Workload(args[0], float(args[1]), float(opts.get("emergency", 0.05)),
                                          float(opts.get("referral", 0.10)), float(opts.get("updates", 0.0))))
            elif cmd == "record":
                flags = set(a for a in args[2:] if "=" not in a)
                opts = dict(a.split("=", 1) for a in args[2:] if "=" in a)
                records.append(ExplicitRecord(args[0], float(args[1]) * DAY, "emergency" in flags,
                                              "referral" in flags, opts.get("text", "")))
            elif cmd == "offline":
                offline.append(OfflineSpan(args[0], float(args[1]) * DAY, float(args[2]) * DAY))
            elif cmd == "query":
                queries.append(QueryEvent(args[0], float(args[1]) * DAY, " ".join(args[2:])))
            elif cmd == "uptime":
                cfg.uptime_hours = float(args[0])
            elif cmd == "replicate-down":
                cfg.replicate_down = args[0] in ("on", "true", "yes", "1")
            else:
                raise ScriptError(f"unknown directive {cmd!r}")
        except ConfigError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from exc
        except (IndexError, ValueError, SiliconHealthError) as exc:
            raise ScriptError(f"line {lineno}: cannot parse {raw.strip()!r}: {exc}") from exc
    cfg.workloads, cfg.records = tuple(workloads), tuple(records)
    cfg.offline, cfg.queries = tuple(offline), tuple(queries)
    try:
        if nodes:
            cfg.topology = TopologySpec(tuple(nodes))
        return cfg.validate()
    except ScriptError:
        raise
    except ConfigError as exc:
        raise ScriptError(f"script: {exc}") from exc


def _link_directive(base: LinkConfig, args) -> LinkConfig:
    key = args[0]
    if key == "bandwidth":
        lo = float(args[1])
        return replace(base, bandwidth_min=lo, bandwidth_max=float(args[2]) if len(args) > 2 else lo)
    if key == "loss":
        return replace(base, loss=float(args[1]))
    if key == "latency":
        return replace(base, latency=float(args[1]))
    if key == "windows":
        kmin, kmax = (int(x) for x in args[1].split("/"))
        mmin, mmax = (float(x) for x in args[2].split("/"))
        return replace(base, pattern=WindowPattern(kmin, kmax, mmin, mmax))
    raise ScriptError(f"unknown link option {key!r}")


def _workload_nodes(w: Workload, topo: TopologySpec) -> List[str]:
    if w.target == "leaves":
        parents = {n.parent for n in topo.nodes}
        return [n.name for n in topo.nodes if n.name not in parents]
    if w.target.startswith("tier:"):
        t = int(w.target[5:])
        return [n.name for n in topo.nodes if n.tier == t]
    if w.target not in topo.by_name():
        raise ConfigError(f"workload targets unknown node {w.target!r}")
    return [w.target]


# -- record content -----------------------------------------------------------

_PHRASES = ("fever and cough", "bp 130/85 checked", "malaria rapid test positive", "blood pressure review",
            "hypertension history noted", "diarrhoea with dehydration, ors given", "measles vaccination",
            "tb screening", "antenatal care visit", "paracetamol dispensed", "amoxicillin course",
            "anaemia, hb low", "referral to district for x-ray", "diabetes follow-up", "pneumonia suspected")


def _record_text(rng: np.random.Generator) -> str:
    k = int(rng.integers(1, 4))
    return "; ".join(_PHRASES[i] for i in rng.choice(len(_PHRASES), k, replace=False))


# -- simulator ----------------------------------------------------------------

@dataclass
class MetricsBundle:
    events_csv: str
    latency_csv: str
    summary: dict

    @property
    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"

    def write(self, directory, stem: str = "metrics") -> List[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / f"{stem}_events.csv", d / f"{stem}_latency.csv", d / f"{stem}_summary.json"]
        paths[0].write_text(self.events_csv)
        paths[1].write_text(self.latency_csv)
        paths[2].write_text(self.summary_json)
        return paths


@dataclass
class _Stat:
    count: int = 0
    bytes: int = 0
    records: int = 0
    energy_joules: float = 0.0


class Simulator:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.registry = DeviceRegistry()
        self.nodes: Dict[str, SimNode] = {}
        self.links: List[SimLink] = []
        self.now = 0.0
        self.settle_days_used = 0
        self._queue: List[tuple] = []
        self._seq = 0
        self.stats: Dict[str, _Stat] = {}
        self.created: Dict[bytes, Tuple[str, float]] = {}
        self.apex_arrival: Dict[bytes, float] = {}
        self.hops: Dict[bytes, int] = {}
        self.query_log: List[dict] = []
        self.violations = {"bandwidth": 0, "out_of_window": 0}
        self.report_bytes = 0
        self._build()

    # construction
    def _build(self):
        cfg = self.config
        for spec in cfg.topology.nodes:
            model = spec.model or TIER_DEFAULT_MODEL[spec.tier]
            device = make_device(model, self.rng, device_id=sha256(b"device:" + spec.name.encode())[:8])
            self.registry.register(device)
        for spec in cfg.topology.nodes:
            fid = facility_id_for(spec.name)
            device = self.registry.get(sha256(b"device:" + spec.name.encode())[:8])
            ledger = Ledger(fid, self.registry, cfg.difficulty)
            skew = float(self.rng.uniform(-SKEW_RANGE, SKEW_RANGE))
            endpoint = SyncEndpoint(ledger, device, np.random.default_rng(self.rng.integers(1 << 63)),
                                    clock_offset=EPOCH + skew, skew_allowance=SKEW_ALLOWANCE, name=spec.name)
            identities = IdentityStore(spec.tier) if spec.tier >= MIN_IDENTITY_TIER else None
            self.nodes[spec.name] = SimNode(spec.name, fid, spec.tier, device, ledger, spec.parent, skew,
                                            endpoint, identities=identities)
        days = int(math.ceil(cfg.horizon_days + cfg.drain_days))
        for child, parent in cfg.topology.links():
            lc = cfg.backhaul if self.nodes[child].tier >= cfg.backhaul_tier else cfg.link
            bw = float(self.rng.uniform(lc.bandwidth_min, lc.bandwidth_max))
            windows = schedule_windows(lc.pattern, days, self.rng)
            self.links.append(SimLink(child, parent, bw, windows, lc.loss, lc.latency))
        self.apex = cfg.topology.apex.name
        self.pepper = self.rng.bytes(32)

    def _push(self, t: float, kind: str, *payload):
        heapq.heappush(self._queue, (t, self._seq, kind, payload))
        self._seq += 1

    def _stat(self, name: str) -> _Stat:
        return self.stats.setdefault(name, _Stat())

    def node_up(self, name: str, t: float) -> bool:
        for span in self.config.offline:
            if span.node == name and span.start <= t < span.end:
                return False
        hours = self.config.uptime_hours
        return hours >= 24 or (t % DAY) < hours * 3600

    def _up_until(self, name: str, t: float) -> float:
        end = float("inf") if self.config.uptime_hours >= 24 else (t // DAY) * DAY + self.config.uptime_hours * 3600
        for span in self.config.offline:
            if span.node == name and span.start > t:
                end = min(end, span.start)
        return end

    # workload
    def _schedule_workload(self):
        cfg = self.config
        horizon = cfg.horizon_days * DAY
        for w in cfg.workloads:
            for name in _workload_nodes(w, cfg.topology):
                for day in range(int(math.ceil(cfg.horizon_days))):
                    span = min(DAY, horizon - day * DAY)
                    n = int(round(w.per_day * span / DAY))
                    up = min(span, cfg.uptime_hours * 3600)
                    for t in np.sort(self.rng.uniform(0, up, n)):
                        em = bool(self.rng.random() < w.emergency)
                        ref = bool(self.rng.random() < w.referral)
                        self._push(day * DAY + float(t), "create", name, em, ref, "")
                    nu = int(self.rng.poisson(w.updates_per_day * span / DAY)) if w.updates_per_day else 0
                    for t in np.sort(self.rng.uniform(0, up, nu)):
                        self._push(day * DAY + float(t), "update", name)
        for r in cfg.records:
            self._push(r.at, "create", r.node, r.emergency, r.referral, r.text)
        for q in cfg.queries:
            self._push(q.at, "query", q.node, q.text)
        for i, link in enumerate(self.links):
            for j, w in enumerate(link.windows):
                self._push(w.start, "window", i, j)

    def _proof(self, node: SimNode, record: HealthRecord):
        now = int(EPOCH + self.now + node.clock_skew)
        proof, timing = generate_proof(node.device, leaf_hash(record), self.config.difficulty, now, self.rng)
        node.energy.add_proof(timing.energy_joules, timing.elapsed_seconds)
        return proof, timing

    def _create(self, name: str, emergency: bool, referral: bool, text: str):
        node = self.nodes[name]
        rid = make_record_id(node.facility_id, node.next_seq)
        node.next_seq += 1
        flags = (FLAG_EMERGENCY if emergency else 0) | (FLAG_REFERRAL if referral else 0)
        pseudonym = derive_pseudonym(self.rng.bytes(32), self.pepper)
        birth_year = int(self.rng.integers(1940, 2025))
        home = self._identity_home(name)
        if home is not None:
            home.identities.add(pseudonym, Demographics(f"patient-{pseudonym[:4].hex()}", birth_year, name))
        record = HealthRecord(rid, pseudonym, node.facility_id,
                              RecordType(int(self.rng.integers(0, len(RecordType)))),
                              int(EPOCH + self.now + node.clock_skew), flags,
                              birth_year, (text or _record_text(self.rng)).encode())
        proof, timing = self._proof(node, record)
        node.ledger.append_record(record, proof)
        self.created[rid] = (name, self.now)
        if name == self.apex:
            self.apex_arrival[rid] = self.now
            self.hops[rid] = 0
        st = self._stat("record_created")
        st.count += 1
        st.records += 1
        st.energy_joules += timing.energy_joules

    def _identity_home(self, name: str) -> Optional[SimNode]:
        """Nearest node at or above ``name`` allowed to hold identity mappings, if any."""
        node = self.nodes[name]
        while node.identities is None:
            if node.parent is None:
                return None
            node = self.nodes[node.parent]
        return node

    def _update(self, name: str):
        node = self.nodes[name]
        ids = list(node.ledger.record_ids())
        if not ids:
            return
        old = node.ledger.get(ids[int(self.rng.integers(0, len(ids)))])
        record = replace(old, payload=old.payload + b"; amended")
        proof, timing = self._proof(node, record)
        try:
            node.ledger.update_record(record, proof)
            st = self._stat("record_updated")
        except StaleWrite:
            st = self._stat("update_refused")
        st.count += 1
        st.records += 1
        st.energy_joules += timing.energy_joules

    def _query(self, name: str, text: str):
        facility, hops = name, 0
        dictionary = self._dictionary()
        while facility is not None:
            result = search(text, self.nodes[facility].ledger, dictionary)
            if len(result):
                break
            facility, hops = self.nodes[facility].parent, hops + 1
        found = facility is not None
        self.query_log.append({"node": name, "time": self.now, "text": text, "answered_by": facility,
                               "hops": hops, "hits": len(result) if found else 0})
        st = self._stat("query")
        st.count += 1
        st.records += len(result) if found else 0

    def _dictionary(self):
        if not hasattr(self, "_dict"):
            self._dict = SynonymDictionary.load()
        return self._dict

    # sync
    def _window(self, li: int, wi: int):
        link = self.links[li]
        window = link.windows[wi]
        if self.now < link.busy_until:
            self._push(link.busy_until, "window", li, wi)
            return
        if self.now >= window.end:
            return
        if not (self.node_up(link.child, self.now) and self.node_up(link.parent, self.now)):
            return
        end = min(window.end, self._up_until(link.child, self.now), self._up_until(link.parent, self.now))
        child, parent = self.nodes[link.child], self.nodes[link.parent]
        channel = Channel(link.bandwidth_bps, link.latency, end, link.loss, self.rng, start=self.now)
        direction = "both" if self.config.replicate_down else "push"
        try:
            report = run_sync(child.endpoint, parent.endpoint, channel, direction)
            outcome = "sync_converged" if report.converged else "sync_completed"
        except SyncError as exc:
            report = exc.report
            outcome = {"WindowClosed": "sync_window_closed", "MessageLost": "sync_message_lost",
                       "AuthFailed": "sync_auth_failed"}.get(type(exc).__name__, "sync_error")
        self._account(link, wi, window, channel, report, outcome)
        link.busy_until = channel.now
        if outcome == "sync_message_lost":
            nxt = channel.now + self.config.retry_seconds
        elif outcome in ("sync_converged", "sync_completed"):
            nxt = channel.now + self.config.resync_seconds
        else:
            nxt = None
        if nxt is not None and nxt < window.end:
            self._push(nxt, "window", li, wi)

    def _account(self, link: SimLink, wi: int, window: Window, channel: Channel, report, outcome: str):
        total = report.bytes_sent + report.bytes_received
        self.report_bytes += total
        for d in channel.log:
            link.bytes_per_window[wi] = link.bytes_per_window.get(wi, 0) + d.nbytes
            link.deliveries.append((d.time, d.nbytes))
            if not window.start <= d.time <= window.end:
                self.violations["out_of_window"] += 1
        if link.bytes_per_window.get(wi, 0) > link.capacity(window):
            self.violations["bandwidth"] += 1
        st = self._stat(outcome)
        st.count += 1
        st.bytes += total
        st.records += report.records_transferred
        moved = self._stat("record_transfer")
        for rid, arrival, direction, status in report.transfers:
            moved.count += 1
            if status == AckStatus.QUARANTINED:
                self._stat("record_quarantined").count += 1
            receiver = link.parent if direction == "A>B" else link.child
            if status == AckStatus.ACCEPTED and receiver == self.apex and rid not in self.apex_arrival:
                self.apex_arrival[rid] = arrival
                self.hops[rid] = self._depth_of(self.created[rid][0]) if rid in self.created else 0

    def _depth_of(self, name: str) -> int:
        hops = 0
        while self.nodes[name].parent is not None:
            name = self.nodes[name].parent
            hops += 1
        return hops

    # run
    def run(self) -> MetricsBundle:
        self._schedule_workload()
        end = (self.config.horizon_days + self.config.drain_days) * DAY
        self._advance(end)
        day = int(math.ceil(end / DAY))
        while self.settle_days_used < self.config.settle_days and len(set(self.roots().values())) > 1:
            self._add_window_day(day)
            day += 1
            self.settle_days_used += 1
            end = day * DAY
            self._advance(end)
        return self.metrics()

    def _advance(self, end: float):
        handlers = {"create": self._create, "update": self._update, "query": self._query, "window": self._window}
        while self._queue and self._queue[0][0] <= end:
            t, _, kind, payload = heapq.heappop(self._queue)
            self.now = t
            handlers[kind](*payload)
        self.now = end

    def _add_window_day(self, day: int):
        for i, link in enumerate(self.links):
            lc = self.config.backhaul if self.nodes[link.child].tier >= self.config.backhaul_tier else self.config.link
            for w in schedule_windows(lc.pattern, 1, self.rng, offset_days=day):
                link.windows.append(w)
                self._push(w.start, "window", i, len(link.windows) - 1)

    def roots(self) -> Dict[str, bytes]:
        return {name: n.ledger.root for name, n in self.nodes.items()}

    def metrics(self) -> MetricsBundle:
        events = io.StringIO()
        w = csv.writer(events, lineterminator="\n")
        w.writerow(["event_class", "count", "bytes", "records", "energy_joules"])
        for name in sorted(self.stats):
            s = self.stats[name]
            w.writerow([name, s.count, s.bytes, s.records, f"{s.energy_joules:.6f}"])
        latency = io.StringIO()
        w = csv.writer(latency, lineterminator="\n")
        w.writerow(["record_id", "origin", "created_at", "reached_apex_at", "latency_seconds", "hops"])
        latencies = []
        for rid in sorted(self.created):
            origin, t0 = self.created[rid]
            t1 = self.apex_arrival.get(rid)
            lat = None if t1 is None else t1 - t0
            if lat is not None:
                latencies.append(lat)
            w.writerow([rid.hex(), origin, f"{t0:.3f}", "" if t1 is None else f"{t1:.3f}",
                        "" if lat is None else f"{lat:.3f}", self.hops.get(rid, "")])
        apex = self.nodes[self.apex].ledger
        missing = [rid for rid in self.created if rid not in apex]
        stale_versions = sum(1 for n in self.nodes.values() for rid in n.ledger.record_ids()
                             if rid in apex and apex.current(rid).leaf != n.ledger.current(rid).leaf
                             and apex.current(rid).key < n.ledger.current(rid).key)
        roots = self.roots()
        horizon_end = self.now
        link_bytes = sum(n for l in self.links for _, n in l.deliveries)
        staleness = [self.apex_arrival[r] - t0 if r in self.apex_arrival else horizon_end - t0
                     for r, (_, t0) in self.created.items()]
        summary = {
            "scenario": self.config.name,
            "seed": self.config.seed,
            "horizon_days": self.config.horizon_days,
            "drain_days": self.config.drain_days,
            "settle_days_used": self.settle_days_used,
            "nodes": len(self.nodes),
            "links": len(self.links),
            "windows": sum(len(l.windows) for l in self.links),
            "records_created": len(self.created),
            "records_at_apex": len(self.created) - len(missing),
            "zero_record_loss": not missing and stale_versions == 0,
            "converged": len(set(roots.values())) == 1,
            "roots": {k: v.hex() for k, v in sorted(roots.items())},
            "max_staleness_seconds": round(max(staleness), 3) if staleness else 0.0,
            "mean_latency_seconds": round(float(np.mean(latencies)), 3) if latencies else None,
            "bandwidth_violations": self.violations["bandwidth"],
            "out_of_window_deliveries": self.violations["out_of_window"],
            "link_bytes": link_bytes,
            "byte_conservation": link_bytes == self.report_bytes,
            "energy_joules": {k: round(n.energy.joules, 9) for k, n in sorted(self.nodes.items())},
            "quarantined": sum(len(n.ledger.quarantine) for n in self.nodes.values()),
            "queries": self.query_log,
        }
        return MetricsBundle(events.getvalue(), latency.getvalue(), summary)


def build_topology(spec, config: Optional[ScenarioConfig] = None) -> Simulator:
    """Instantiate a simulator for ``spec`` (a TopologySpec or a list of NodeSpec)."""
    if not isinstance(spec, TopologySpec):
        spec = TopologySpec(tuple(spec))
    config = replace(config or ScenarioConfig(), topology=spec)
    return Simulator(config)


def run_scenario(config: ScenarioConfig) -> MetricsBundle:
    return Simulator(config).run()


def clinic_week(seed: int = 0, bandwidth: float = 9600.0, records_per_day: float = 20.0) -> ScenarioConfig:
    """One clinic and its parent, 2 windows/day at a fixed 2G rate, 7 days of writes."""
    link = LinkConfig(bandwidth, bandwidth, 0.3, 0.01, WindowPattern(2, 2, 15.0, 30.0))
    return ScenarioConfig(topology=TopologySpec.clinic_pair(), link=link,
                          workloads=(Workload("clinic", records_per_day),), horizon_days=7.0,
                          drain_days=1.0, seed=seed, name="clinic-week")


# -- energy -----------------------------------------------------------------

@dataclass(frozen=True)
class EnergyStats:
    n: int
    mean_joules: float
    cv_joules: float
    mean_seconds: float
    mean_attempts: float
    cv_attempts: float
    total_joules: float
    total_seconds: float


def _cv(x: np.ndarray) -> float:
    m = float(np.mean(x))
    return float(np.std(x, ddof=1) / m) if len(x) > 1 and m else 0.0


def measure_proof_energy(device: DeviceProfile, n: int, difficulty: Difficulty, rng: np.random.Generator,
                         timing: str = "measured", mean_proof_time: Optional[float] = None) -> EnergyStats:
    """Generate ``n`` proofs over random digests and account their energy.

    timing="measured" uses the device's drawn hashrate; "expected" rescales
    the hashrate so the expected proof time equals ``mean_proof_time``;
    "fixed" charges exactly ``mean_proof_time`` per proof.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if timing != "measured" and mean_proof_time is None:
        raise ValueError(f"timing={timing!r} needs mean_proof_time")
    attempts, seconds, joules = np.zeros(n), np.zeros(n), np.zeros(n)
    for i in range(n):
        proof, t = generate_proof(device, rng.bytes(32), difficulty, EPOCH, rng)
        if timing == "expected":
            t = proof_timing(device, t.attempts, expected_attempts(difficulty) / mean_proof_time)
        elif timing == "fixed":
            t = proof_timing(device, t.attempts, t.attempts / mean_proof_time)
        elif timing != "measured":
            raise ValueError(f"unknown timing mode {timing!r}")
        attempts[i], seconds[i], joules[i] = t.attempts, t.elapsed_seconds, t.energy_joules
    return EnergyStats(n, float(joules.mean()), _cv(joules), float(seconds.mean()), float(attempts.mean()),
                       _cv(attempts), float(joules.sum()), float(seconds.sum()))
