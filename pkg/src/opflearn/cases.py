"""Power-network case model: types, validation, parsing, and serialization.

A case file describes buses with default loads, branches (reactance and flow
limit), generators (operating range and quadratic cost), and one slack bus.
Two on-disk formats are supported: a JSON schema native to this package and a
subset of the MATPOWER text format (``mpc.bus`` / ``mpc.gen`` / ``mpc.branch``
/ ``mpc.gencost`` blocks).

Internally bus ids are remapped to dense 0-based indices; the original ids are
kept on each record so files can be written back unchanged. All electrical
computation elsewhere in the package works in per-unit on ``base_mva``;
megawatts appear only in this module and at CLI boundaries.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable

logger = logging.getLogger(__name__)

CASE_FORMAT_JSON = "json"
CASE_FORMAT_MATPOWER = "matpower"

_JSON_SCHEMA_KEYS = {"base_mva", "buses", "branches", "generators", "slack_bus"}


class CaseError(Exception):
    """Base class for case-file problems."""


class CaseSyntaxError(CaseError):
    """Malformed case text. Carries a 1-based line and column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class CaseValidationError(CaseError):
    """A structurally well-formed case violates a model invariant."""


class DisconnectedNetworkError(CaseValidationError):
    """The branch graph does not connect all buses."""


@dataclass(frozen=True)
class Bus:
    index: int
    original_id: int
    load_mw: float


@dataclass(frozen=True)
class Branch:
    index: int
    from_bus: int
    to_bus: int
    reactance_pu: float
    limit_mw: float


@dataclass(frozen=True)
class Generator:
    index: int
    bus: int
    p_min_mw: float
    p_max_mw: float
    cost: tuple[float, float, float]  # (quadratic, linear, constant) in MW units


@dataclass(frozen=True)
class GridCase:
    """Validated electrical description of one power network."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    slack_bus: int  # internal bus index

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def slack_gen_index(self) -> int:
        """Index (into ``generators``) of the generator at the slack bus."""
        for g in self.generators:
            if g.bus == self.slack_bus:
                return g.index
        raise CaseValidationError("slack bus hosts no generator")

    def default_loads_mw(self) -> list[float]:
        return [b.load_mw for b in self.buses]

    def load_bus_count(self) -> int:
        """Number of buses with positive default load."""
        return sum(1 for b in self.buses if b.load_mw > 0.0)

    def bus_index(self, original_id: int) -> int:
        for b in self.buses:
            if b.original_id == original_id:
                return b.index
        raise KeyError(f"unknown bus id {original_id}")


def _check_finite(name: str, value: float) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise CaseValidationError(f"{name} must be finite, got {value!r}")
    return v


def _connected(n_bus: int, edges: Iterable[tuple[int, int]]) -> bool:
    if n_bus == 0:
        return False
    adj: list[list[int]] = [[] for _ in range(n_bus)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = [False] * n_bus
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                stack.append(v)
    return count == n_bus


def build_case(
    base_mva: float,
    buses: list[tuple[int, float]],
    branches: list[tuple[int, int, float, float]],
    generators: list[tuple[int, float, float, tuple[float, float, float]]],
    slack_bus_id: int,
) -> GridCase:
    """Assemble and validate a GridCase from raw records keyed by original bus id.

    ``buses`` holds (id, load_mw); ``branches`` (from_id, to_id, x_pu, limit_mw);
    ``generators`` (bus_id, p_min_mw, p_max_mw, (c2, c1, c0)). Raises
    CaseValidationError naming the violated invariant.
    """
    if not buses:
        raise CaseValidationError("case has no buses")
    base = _check_finite("base_mva", base_mva)
    if base <= 0:
        raise CaseValidationError(f"base_mva must be positive, got {base}")

    ids = [int(b[0]) for b in buses]
    if len(set(ids)) != len(ids):
        raise CaseValidationError("duplicate bus ids in case")
    id_to_index = {bid: i for i, bid in enumerate(ids)}

    bus_records = tuple(
        Bus(index=i, original_id=int(bid), load_mw=_check_finite(f"load at bus {bid}", load))
        for i, (bid, load) in enumerate(buses)
    )

    branch_records = []
    for k, (f_id, t_id, x, limit) in enumerate(branches):
        if f_id not in id_to_index or t_id not in id_to_index:
            raise CaseValidationError(f"branch {k} references unknown bus ({f_id}, {t_id})")
        if f_id == t_id:
            raise CaseValidationError(f"branch {k} is a self-loop at bus {f_id}")
        x = _check_finite(f"reactance of branch {k}", x)
        limit = _check_finite(f"flow limit of branch {k}", limit)
        if x <= 0:
            raise CaseValidationError(
                f"branch {k} ({f_id}-{t_id}) has non-positive reactance {x}"
            )
        if limit <= 0:
            raise CaseValidationError(
                f"branch {k} ({f_id}-{t_id}) has non-positive flow limit {limit}"
            )
        branch_records.append(
            Branch(index=k, from_bus=id_to_index[f_id], to_bus=id_to_index[t_id],
                   reactance_pu=x, limit_mw=limit)
        )

    gen_records = []
    seen_gen_buses: set[int] = set()
    for g, (bus_id, p_min, p_max, cost) in enumerate(generators):
        if bus_id not in id_to_index:
            raise CaseValidationError(f"generator {g} references unknown bus {bus_id}")
        if bus_id in seen_gen_buses:
            raise CaseValidationError(
                f"generator {g} duplicates bus {bus_id}; one generator per bus is supported"
            )
        seen_gen_buses.add(bus_id)
        p_min = _check_finite(f"p_min of generator {g}", p_min)
        p_max = _check_finite(f"p_max of generator {g}", p_max)
        if p_min > p_max:
            raise CaseValidationError(
                f"generator {g} at bus {bus_id} has p_min {p_min} > p_max {p_max}"
            )
        c = tuple(_check_finite(f"cost coefficient of generator {g}", ci) for ci in cost)
        if len(c) != 3:
            raise CaseValidationError(f"generator {g} needs 3 cost coefficients, got {len(c)}")
        gen_records.append(
            Generator(index=g, bus=id_to_index[bus_id], p_min_mw=p_min, p_max_mw=p_max, cost=c)
        )
    if not gen_records:
        raise CaseValidationError("case has no generators")

    if slack_bus_id not in id_to_index:
        raise CaseValidationError(f"slack bus id {slack_bus_id} not among buses")
    slack = id_to_index[slack_bus_id]
    if slack not in {g.bus for g in gen_records}:
        raise CaseValidationError(f"slack bus {slack_bus_id} hosts no generator")

    if not _connected(len(bus_records), [(br.from_bus, br.to_bus) for br in branch_records]):
        raise DisconnectedNetworkError("branch graph is not connected")

    return GridCase(
        base_mva=base,
        buses=bus_records,
        branches=tuple(branch_records),
        generators=tuple(gen_records),
        slack_bus=slack,
    )


# ---------------------------------------------------------------------------
# JSON format
# ---------------------------------------------------------------------------

def parse_case_json(text: str) -> GridCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseSyntaxError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(doc, dict):
        raise CaseSyntaxError("top-level JSON value must be an object")
    missing = _JSON_SCHEMA_KEYS - doc.keys()
    if missing:
        raise CaseSyntaxError(f"missing required keys: {sorted(missing)}")
    extra = doc.keys() - _JSON_SCHEMA_KEYS
    if extra:
        logger.warning("ignoring unknown case keys: %s", sorted(extra))

    def need(record: dict, key: str, where: str):
        if key not in record:
            raise CaseSyntaxError(f"{where} record is missing key {key!r}")
        return record[key]

    buses = [
        (int(need(b, "id", "bus")), float(need(b, "load_mw", "bus")))
        for b in doc["buses"]
    ]
    branches = [
        (
            int(need(br, "from", "branch")),
            int(need(br, "to", "branch")),
            float(need(br, "reactance_pu", "branch")),
            float(need(br, "limit_mw", "branch")),
        )
        for br in doc["branches"]
    ]
    generators = [
        (
            int(need(g, "bus", "generator")),
            float(need(g, "p_min_mw", "generator")),
            float(need(g, "p_max_mw", "generator")),
            tuple(float(c) for c in need(g, "cost", "generator")),
        )
        for g in doc["generators"]
    ]
    return build_case(float(doc["base_mva"]), buses, branches, generators, int(doc["slack_bus"]))


def case_to_dict(case: GridCase) -> dict:
    """Plain-dict form of a case using original bus ids (the JSON schema)."""
    ids = [b.original_id for b in case.buses]
    return {
        "base_mva": case.base_mva,
        "buses": [{"id": b.original_id, "load_mw": b.load_mw} for b in case.buses],
        "branches": [
            {
                "from": ids[br.from_bus],
                "to": ids[br.to_bus],
                "reactance_pu": br.reactance_pu,
                "limit_mw": br.limit_mw,
            }
            for br in case.branches
        ],
        "generators": [
            {
                "bus": ids[g.bus],
                "p_min_mw": g.p_min_mw,
                "p_max_mw": g.p_max_mw,
                "cost": list(g.cost),
            }
            for g in case.generators
        ],
        "slack_bus": ids[case.slack_bus],
    }


def serialize_case(case: GridCase) -> str:
    return json.dumps(case_to_dict(case), indent=2, sort_keys=True) + "\n"


def case_hash(case: GridCase) -> str:
    """Stable content hash of a case (used to pin models/datasets to a grid)."""
    canonical = json.dumps(case_to_dict(case), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# MATPOWER subset
# ---------------------------------------------------------------------------

# Accepted blocks and the 1-based columns read from each (MATPOWER conventions).
_MATPOWER_BLOCKS = ("bus", "gen", "branch", "gencost")
_BUS_TYPE_SLACK = 3


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _parse_matpower_matrix(
    lines: list[str], start: int, name: str
) -> tuple[list[list[float]], int]:
    """Parse ``mpc.<name> = [ ... ];`` starting at ``lines[start]``.

    Returns the numeric rows and the index of the line after the block.
    """
    rows: list[list[float]] = []
    i = start
    header = _strip_comment(lines[i])
    body = header.split("=", 1)[1]
    if "[" not in body:
        raise CaseSyntaxError(f"expected '[' after mpc.{name} =", i + 1)
    buf = body.split("[", 1)[1]
    closed = False
    while True:
        segment, closed = (buf.split("]", 1)[0], True) if "]" in buf else (buf, False)
        for stmt in segment.split(";"):
            tokens = stmt.replace(",", " ").split()
            if not tokens:
                continue
            try:
                rows.append([float(t) for t in tokens])
            except ValueError as exc:
                bad = next(t for t in tokens if not _is_number(t))
                col = lines[i].find(bad) + 1
                raise CaseSyntaxError(
                    f"invalid number {bad!r} in mpc.{name}", i + 1, col if col > 0 else None
                ) from exc
        if closed:
            return rows, i + 1
        i += 1
        if i >= len(lines):
            raise CaseSyntaxError(f"unterminated mpc.{name} block (missing ])", start + 1)
        buf = _strip_comment(lines[i])


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def parse_case_matpower(text: str) -> GridCase:
    """Parse the MATPOWER subset: baseMVA plus the bus/gen/branch/gencost blocks.

    Any other ``mpc.*`` assignment is ignored with a warning. Columns read are
    bus: (bus_i, type, Pd); gen: (bus, Pmax, Pmin); branch: (fbus, tbus, x,
    rateA); gencost: (model=2, n=3, c2, c1, c0).
    """
    lines = text.splitlines()
    blocks: dict[str, list[list[float]]] = {}
    base_mva: float | None = None
    i = 0
    while i < len(lines):
        stripped = _strip_comment(lines[i]).strip()
        if not stripped.startswith("mpc."):
            i += 1
            continue
        tail = stripped[len("mpc."):]
        name = tail.split("=", 1)[0].strip()
        if name == "baseMVA":
            value = tail.split("=", 1)[1].strip().rstrip(";").strip()
            if not _is_number(value):
                raise CaseSyntaxError(f"invalid mpc.baseMVA value {value!r}", i + 1)
            base_mva = float(value)
            i += 1
        elif name in _MATPOWER_BLOCKS:
            if name in blocks:
                raise CaseSyntaxError(f"duplicate mpc.{name} block", i + 1)
            blocks[name], i = _parse_matpower_matrix(lines, i, name)
        else:
            logger.warning("ignoring unsupported MATPOWER field mpc.%s (line %d)", name, i + 1)
            if "[" in stripped and "]" not in stripped:
                # Skip to the end of the unsupported matrix block.
                while i < len(lines) and "]" not in _strip_comment(lines[i]):
                    i += 1
            i += 1

    missing = [b for b in _MATPOWER_BLOCKS if b not in blocks]
    if missing:
        raise CaseSyntaxError(f"missing MATPOWER blocks: {missing}")
    if base_mva is None:
        logger.warning("mpc.baseMVA missing; defaulting to 100")
        base_mva = 100.0

    buses = []
    slack_ids = []
    for r, row in enumerate(blocks["bus"]):
        if len(row) < 3:
            raise CaseSyntaxError(f"bus row {r + 1} has fewer than 3 columns")
        bus_id = int(row[0])
        buses.append((bus_id, float(row[2])))
        if int(row[1]) == _BUS_TYPE_SLACK:
            slack_ids.append(bus_id)
    if len(slack_ids) != 1:
        raise CaseValidationError(
            f"exactly one slack bus (type {_BUS_TYPE_SLACK}) required, found {len(slack_ids)}"
        )

    gen_rows = blocks["gen"]
    cost_rows = blocks["gencost"]
    if len(cost_rows) != len(gen_rows):
        raise CaseValidationError(
            f"gencost has {len(cost_rows)} rows but gen has {len(gen_rows)}"
        )
    generators = []
    for r, (grow, crow) in enumerate(zip(gen_rows, cost_rows)):
        if len(grow) < 10:
            raise CaseSyntaxError(f"gen row {r + 1} has fewer than 10 columns")
        if len(crow) < 7:
            raise CaseSyntaxError(f"gencost row {r + 1} has fewer than 7 columns")
        if int(crow[0]) != 2:
            raise CaseValidationError(
                f"gencost row {r + 1}: only polynomial cost model 2 is supported"
            )
        if int(crow[3]) != 3:
            raise CaseValidationError(
                f"gencost row {r + 1}: exactly 3 polynomial coefficients required"
            )
        generators.append(
            (int(grow[0]), float(grow[9]), float(grow[8]), (crow[4], crow[5], crow[6]))
        )

    branches = []
    for r, row in enumerate(blocks["branch"]):
        if len(row) < 6:
            raise CaseSyntaxError(f"branch row {r + 1} has fewer than 6 columns")
        branches.append((int(row[0]), int(row[1]), float(row[3]), float(row[5])))

    return build_case(base_mva, buses, branches, generators, slack_ids[0])


def parse_case(text: str, fmt: str) -> GridCase:
    """Parse case text in the given format (``"json"`` or ``"matpower"``)."""
    if fmt == CASE_FORMAT_JSON:
        return parse_case_json(text)
    if fmt in (CASE_FORMAT_MATPOWER, "matpower-subset"):
        return parse_case_matpower(text)
    raise ValueError(f"unknown case format {fmt!r}")


def detect_format(path: str) -> str:
    return CASE_FORMAT_MATPOWER if str(path).endswith(".m") else CASE_FORMAT_JSON


def load_case(path: str, fmt: str | None = None) -> GridCase:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_case(text, fmt or detect_format(path))


# ---------------------------------------------------------------------------
# Scenario overlays
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Overlay:
    """Declarative case adjustment for congestion scenarios.

    ``load_scale`` multiplies every default load, ``limit_scale`` every branch
    flow limit; ``branch_limits_mw`` overrides individual limits by branch
    position; ``sampler_range`` suggests a load-sampling range to the CLI.
    """

    load_scale: float = 1.0
    limit_scale: float = 1.0
    branch_limits_mw: dict[int, float] | None = None
    sampler_range: tuple[float, float] | None = None

    @staticmethod
    def from_dict(doc: dict) -> "Overlay":
        known = {"load_scale", "limit_scale", "branch_limits_mw", "sampler_range"}
        extra = doc.keys() - known
        if extra:
            logger.warning("ignoring unknown overlay keys: %s", sorted(extra))
        rng = doc.get("sampler_range")
        return Overlay(
            load_scale=float(doc.get("load_scale", 1.0)),
            limit_scale=float(doc.get("limit_scale", 1.0)),
            branch_limits_mw={int(k): float(v) for k, v in doc.get("branch_limits_mw", {}).items()}
            or None,
            sampler_range=(float(rng[0]), float(rng[1])) if rng is not None else None,
        )


def load_overlay(path: str) -> Overlay:
    with open(path, "r", encoding="utf-8") as fh:
        return Overlay.from_dict(json.load(fh))


def apply_overlay(case: GridCase, overlay: Overlay) -> GridCase:
    """Return a new validated case with the overlay's scalings applied."""
    buses = tuple(replace(b, load_mw=b.load_mw * overlay.load_scale) for b in case.buses)
    branches = []
    for br in case.branches:
        limit = br.limit_mw * overlay.limit_scale
        if overlay.branch_limits_mw and br.index in overlay.branch_limits_mw:
            limit = overlay.branch_limits_mw[br.index]
        branches.append(replace(br, limit_mw=limit))
    adjusted = replace(case, buses=buses, branches=tuple(branches))
    # Re-validate through the raw-record path so invariant errors name the culprit.
    return build_case(
        adjusted.base_mva,
        [(b.original_id, b.load_mw) for b in adjusted.buses],
        [
            (
                case.buses[br.from_bus].original_id,
                case.buses[br.to_bus].original_id,
                br.reactance_pu,
                br.limit_mw,
            )
            for br in adjusted.branches
        ],
        [
            (case.buses[g.bus].original_id, g.p_min_mw, g.p_max_mw, g.cost)
            for g in adjusted.generators
        ],
        case.buses[case.slack_bus].original_id,
    )
