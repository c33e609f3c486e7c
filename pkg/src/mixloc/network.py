"""Network model: nodes, sensing graph, and local measurement synthesis.

A network is a set of 3-D nodes. Anchors know their global positions; free
nodes do not. Every node carries one sensor class and measures its neighbors
in its own local frame, whose orientation relative to the global frame is an
unknown rotation:

- ``relpos``:   relative position of each neighbor, in the local frame
- ``distance``: distance to each neighbor
- ``bearing``:  unit direction to each neighbor, in the local frame
- ``angle``:    interior angle between each pair of neighbors, in [0, pi]
- ``ratio``:    ratio of distances to each pair of neighbors

Angles, distances and ratios are frame-invariant; relative positions and
bearings are expressed in the measuring node's frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .errors import InsufficientMeasurementsError
from .geometry import points_colinear

SENSOR_CLASSES = ("relpos", "distance", "bearing", "angle", "ratio")

RELPOS, DISTANCE, BEARING, ANGLE, RATIO = SENSOR_CLASSES


def rotation_from_quaternion(q) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion (normalized internally)."""
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        raise ValueError("quaternion must have four components (w, x, y, z)")
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise ValueError("zero quaternion has no rotation")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quaternion_from_rotation(R) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, with w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        w = 0.5 * np.sqrt(1.0 + t)
        s = 0.25 / w
        q = np.array([w, s * (R[2, 1] - R[1, 2]), s * (R[0, 2] - R[2, 0]), s * (R[1, 0] - R[0, 1])])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0))
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / (2 * r)
        q[1 + i] = 0.5 * r
        q[1 + j] = (R[j, i] + R[i, j]) / (2 * r)
        q[1 + k] = (R[k, i] + R[i, k]) / (2 * r)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation drawn uniformly over SO(3) via a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    return rotation_from_quaternion(q)


@dataclass(frozen=True)
class NodeSpec:
    """One node: id, true position, role, sensor class, local-frame rotation.

    ``rotation`` maps local-frame coordinates to global ones. ``quaternion``
    optionally records the (w, x, y, z) form used to build the rotation so a
    scenario file round-trips without re-deriving it.
    """

    id: int
    position: np.ndarray
    role: str
    sensor: str
    rotation: np.ndarray = None
    quaternion: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,):
            raise ValueError(f"node {self.id}: position must be a 3-vector")
        object.__setattr__(self, "position", pos)
        if self.role not in ("anchor", "free"):
            raise ValueError(f"node {self.id}: role must be 'anchor' or 'free'")
        if self.sensor not in SENSOR_CLASSES:
            raise ValueError(f"node {self.id}: unknown sensor class {self.sensor!r}")
        rot = self.rotation
        if rot is None:
            if self.quaternion is not None:
                rot = rotation_from_quaternion(self.quaternion)
            else:
                rot = np.eye(3)
        rot = np.asarray(rot, dtype=float)
        if rot.shape != (3, 3):
            raise ValueError(f"node {self.id}: rotation must be 3x3")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-12):
            raise ValueError(f"node {self.id}: rotation is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise ValueError(f"node {self.id}: rotation must be proper (det +1)")
        object.__setattr__(self, "rotation", rot)
        if self.quaternion is not None:
            q = np.asarray(self.quaternion, dtype=float)
            object.__setattr__(self, "quaternion", q)
        pos.setflags(write=False)
        rot.setflags(write=False)

    @property
    def is_anchor(self) -> bool:
        return self.role == "anchor"


class Network:
    """Immutable node set plus undirected sensing graph.

    Node ids are contiguous from 0 with all anchors ordered before all free
    nodes. Edges are undirected; an edge means each endpoint can measure the
    other (and they can communicate).
    """

    def __init__(self, nodes: Iterable[NodeSpec], edges: Iterable[tuple[int, int]]):
        self.nodes: tuple[NodeSpec, ...] = tuple(nodes)
        n = len(self.nodes)
        for expect, node in enumerate(self.nodes):
            if node.id != expect:
                raise ValueError("node ids must be contiguous from 0 and sorted")
        roles = [node.role for node in self.nodes]
        n_a = sum(1 for r in roles if r == "anchor")
        if any(r == "anchor" for r in roles[n_a:]):
            raise ValueError("anchors must precede all free nodes")
        self.n = n
        self.n_anchors = n_a
        self.n_free = n - n_a
        seen: set[tuple[int, int]] = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) references unknown node")
            seen.add((min(i, j), max(i, j)))
        self.edges: frozenset[tuple[int, int]] = frozenset(seen)
        nbrs: dict[int, list[int]] = {i: [] for i in range(n)}
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        self._neighbors = {i: tuple(sorted(v)) for i, v in nbrs.items()}

    def neighbors(self, i: int) -> tuple[int, ...]:
        try:
            return self._neighbors[i]
        except KeyError:
            raise ValueError(f"unknown node id {i}") from None

    def is_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    @property
    def anchor_ids(self) -> range:
        return range(self.n_anchors)

    @property
    def free_ids(self) -> range:
        return range(self.n_anchors, self.n)

    def positions(self) -> np.ndarray:
        """True positions as an (n, 3) array."""
        return np.array([node.position for node in self.nodes])

    def anchor_positions(self) -> np.ndarray:
        return self.positions()[: self.n_anchors]

    def free_positions(self) -> np.ndarray:
        return self.positions()[self.n_anchors :]

    def diameter(self) -> float:
        p = self.positions()
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        return float(d.max()) if self.n > 1 else 0.0


@dataclass(frozen=True)
class NoiseSpec:
    """Per-class measurement noise.

    Gaussian mode (default): each sigma is the standard deviation of additive
    zero-mean noise for that class. Bearings are perturbed before
    re-normalization, angles are clamped to [0, pi], distances and ratios are
    clamped positive.

    Fixed-offset mode: ``offsets`` maps (owner id, entry key) to an additive
    delta applied verbatim to that entry; sigmas are ignored. This supports
    replaying worked examples with known perturbations.
    """

    relpos: float = 0.0
    distance: float = 0.0
    bearing: float = 0.0
    angle: float = 0.0
    ratio: float = 0.0
    seed: int | None = None
    offsets: Mapping | None = None

    def __post_init__(self):
        for name in SENSOR_CLASSES:
            if getattr(self, name) < 0:
                raise ValueError(f"negative sigma for {name}")

    def sigma_for(self, kind: str) -> float:
        return float(getattr(self, kind))

    @property
    def is_fixed_offset(self) -> bool:
        return self.offsets is not None

    @property
    def active(self) -> bool:
        return self.is_fixed_offset or any(self.sigma_for(k) > 0 for k in SENSOR_CLASSES)


@dataclass(frozen=True)
class MeasurementSet:
    """All measurements one node takes of its neighbors.

    ``entries`` is keyed by neighbor id for relpos/distance/bearing and by an
    ordered neighbor pair (j, k) with j < k for angle/ratio. A ratio entry
    (j, k) holds d_ij / d_ik for owner i.
    """

    owner: int
    kind: str
    entries: dict
    noise_seed: object = None

    def __post_init__(self):
        if self.kind not in SENSOR_CLASSES:
            raise ValueError(f"unknown measurement kind {self.kind!r}")

    def neighbor_ids(self) -> set[int]:
        ids: set[int] = set()
        for key in self.entries:
            if isinstance(key, tuple):
                ids.update(key)
            else:
                ids.add(key)
        return ids


def relative_position(net: Network, i: int, j: int) -> np.ndarray:
    """Global-frame displacement from node i to node j."""
    if i == j:
        raise ValueError("relative position of a node to itself is undefined")
    if not (0 <= i < net.n and 0 <= j < net.n):
        raise ValueError(f"unknown node id in ({i}, {j})")
    return net.nodes[j].position - net.nodes[i].position


def _sorted_pairs(ids: Iterable[int]) -> list[tuple[int, int]]:
    ids = sorted(ids)
    return [(a, b) for idx, a in enumerate(ids) for b in ids[idx + 1 :]]


def synthesize_measurements(net: Network, i: int, noise: NoiseSpec | None = None) -> MeasurementSet:
    """Generate node i's measurements of its neighbors, per its sensor class.

    Parameters
    ----------
    net : Network
    i : int
        Measuring node.
    noise : NoiseSpec, optional
        When given and active, noise is applied via :func:`inject_noise` with
        a per-node stream derived from ``noise.seed`` so runs reproduce.
    """
    node = net.nodes[i]
    nbrs = net.neighbors(i)
    if not nbrs:
        raise InsufficientMeasurementsError(f"node {i} has no neighbors to measure")
    if node.sensor in (ANGLE, RATIO) and len(nbrs) < 2:
        raise InsufficientMeasurementsError(
            f"node {i} needs two neighbors for {node.sensor} measurements"
        )
    to_local = node.rotation.T
    entries: dict = {}
    if node.sensor == RELPOS:
        for j in nbrs:
            entries[j] = to_local @ relative_position(net, i, j)
    elif node.sensor == DISTANCE:
        for j in nbrs:
            entries[j] = float(np.linalg.norm(relative_position(net, i, j)))
    elif node.sensor == BEARING:
        for j in nbrs:
            e = to_local @ relative_position(net, i, j)
            entries[j] = e / np.linalg.norm(e)
    elif node.sensor == ANGLE:
        units = {}
        for j in nbrs:
            e = relative_position(net, i, j)
            units[j] = e / np.linalg.norm(e)
        for j, k in _sorted_pairs(nbrs):
            c = float(np.clip(units[j] @ units[k], -1.0, 1.0))
            entries[(j, k)] = float(np.arccos(c))
    elif node.sensor == RATIO:
        dists = {j: float(np.linalg.norm(relative_position(net, i, j))) for j in nbrs}
        for j, k in _sorted_pairs(nbrs):
            entries[(j, k)] = dists[j] / dists[k]
    clean = MeasurementSet(owner=i, kind=node.sensor, entries=entries)
    if noise is not None and noise.active:
        seed = None if noise.seed is None else [int(noise.seed), i]
        return inject_noise(clean, noise, seed=seed)
    return clean


def inject_noise(measurements: MeasurementSet, spec: NoiseSpec, seed=None) -> MeasurementSet:
    """Apply per-class noise to a measurement set.

    Gaussian mode draws from ``numpy.random.default_rng(seed)`` in sorted
    entry order, so identical seeds give identical outputs. Fixed-offset mode
    adds ``spec.offsets[(owner, key)]`` to matching entries and ignores seeds.
    """
    kind = measurements.kind
    keys = sorted(measurements.entries)
    if spec.is_fixed_offset:
        entries = {}
        for key in keys:
            value = measurements.entries[key]
            delta = spec.offsets.get((measurements.owner, key))
            if delta is None:
                entries[key] = value
            elif isinstance(value, np.ndarray):
                entries[key] = value + np.asarray(delta, dtype=float)
            else:
                entries[key] = float(value) + float(delta)
        entries = _postprocess(kind, entries)
        return MeasurementSet(measurements.owner, kind, entries, noise_seed=seed)
    sigma = spec.sigma_for(kind)
    if sigma == 0.0:
        return MeasurementSet(measurements.owner, kind, dict(measurements.entries), noise_seed=seed)
    rng = np.random.default_rng(seed)
    entries = {}
    for key in keys:
        value = measurements.entries[key]
        if isinstance(value, np.ndarray):
            entries[key] = value + rng.normal(scale=sigma, size=3)
        else:
            entries[key] = float(value) + float(rng.normal(scale=sigma))
    entries = _postprocess(kind, entries)
    return MeasurementSet(measurements.owner, kind, entries, noise_seed=seed)


def _postprocess(kind: str, entries: dict) -> dict:
    # keep noisy values inside each class's admissible range
    if kind == BEARING:
        return {k: v / np.linalg.norm(v) for k, v in entries.items()}
    if kind == ANGLE:
        return {k: float(np.clip(v, 0.0, np.pi)) for k, v in entries.items()}
    if kind in (DISTANCE, RATIO):
        return {k: max(float(v), 1e-12) for k, v in entries.items()}
    return entries


def synthesize_all(net: Network, noise: NoiseSpec | None = None) -> dict[int, MeasurementSet]:
    """Measurements for every node keyed by id."""
    return {i: synthesize_measurements(net, i, noise) for i in range(net.n)}


@dataclass(frozen=True)
class Violation:
    kind: str
    nodes: tuple[int, ...]
    message: str


def validate_assumptions(net: Network, colinear_tol: float = 1e-9) -> list[Violation]:
    """Check the structural assumptions the constraint builder relies on.

    Returns an empty list iff: no two nodes are collocated; every anchor has
    at least two anchor neighbors that are themselves adjacent; and every
    free node has at least four mutually adjacent neighbors forming a
    non-colinear point set.
    """
    out: list[Violation] = []
    p = net.positions()
    if net.n > 1:
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        scale = max(float(d.max()), 1.0)
        for i in range(net.n):
            for j in range(i + 1, net.n):
                if d[i, j] < 1e-9 * scale:
                    out.append(
                        Violation("collocated", (i, j), f"nodes {i} and {j} share a position")
                    )
    for i in net.anchor_ids:
        anchor_nbrs = [j for j in net.neighbors(i) if j < net.n_anchors]
        ok = any(
            net.is_edge(a, b) for idx, a in enumerate(anchor_nbrs) for b in anchor_nbrs[idx + 1 :]
        )
        if not ok:
            out.append(
                Violation(
                    "anchor_triple",
                    (i,),
                    f"anchor {i} lacks two mutually adjacent anchor neighbors",
                )
            )
    for i in net.free_ids:
        nbrs = net.neighbors(i)
        found_clique = False
        found_spread = False
        for quad in combinations(nbrs, 4):
            if not all(net.is_edge(a, b) for a, b in combinations(quad, 2)):
                continue
            found_clique = True
            if not points_colinear(p[list(quad)], colinear_tol):
                found_spread = True
                break
        if not found_clique:
            out.append(
                Violation(
                    "free_neighborhood",
                    (i,),
                    f"free node {i} has no four mutually adjacent neighbors",
                )
            )
        elif not found_spread:
            out.append(
                Violation(
                    "colinear_neighborhood",
                    (i,),
                    f"free node {i}: every usable neighbor quadruple is colinear",
                )
            )
    return out


# --- scenario (de)serialization -------------------------------------------

def network_to_json(net: Network, noise: NoiseSpec | None = None) -> dict:
    """Plain-dict scenario form: nodes, edges, and optional noise."""
    nodes = []
    for node in net.nodes:
        q = node.quaternion
        if q is None:
            q = quaternion_from_rotation(node.rotation)
        nodes.append(
            {
                "id": node.id,
                "xyz": [float(v) for v in node.position],
                "role": node.role,
                "sensor": node.sensor,
                "quaternion": [float(v) for v in q],
            }
        )
    doc = {
        "nodes": nodes,
        "edges": sorted([min(i, j), max(i, j)] for i, j in net.edges),
    }
    if noise is not None:
        block: dict = {"sigmas": {k: noise.sigma_for(k) for k in SENSOR_CLASSES}}
        if noise.seed is not None:
            block["seed"] = int(noise.seed)
        if noise.offsets is not None:
            block["mode"] = "fixed-offset"
            offs = []
            for (owner, key), delta in sorted(
                noise.offsets.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))
            ):
                entry_key = list(key) if isinstance(key, tuple) else [key]
                if isinstance(delta, (list, tuple, np.ndarray)):
                    delta_out = [float(v) for v in delta]
                else:
                    delta_out = float(delta)
                offs.append({"node": owner, "key": entry_key, "delta": delta_out})
            block["offsets"] = offs
        else:
            block["mode"] = "gaussian"
        doc["noise"] = block
    return doc


def network_from_json(doc: Mapping) -> tuple[Network, NoiseSpec | None]:
    nodes = []
    for row in sorted(doc["nodes"], key=lambda r: r["id"]):
        nodes.append(
            NodeSpec(
                id=int(row["id"]),
                position=np.asarray(row["xyz"], dtype=float),
                role=row["role"],
                sensor=row["sensor"],
                quaternion=np.asarray(row["quaternion"], dtype=float)
                if "quaternion" in row
                else None,
            )
        )
    net = Network(nodes, [(int(i), int(j)) for i, j in doc["edges"]])
    noise = None
    if "noise" in doc:
        block = doc["noise"]
        sigmas = block.get("sigmas", {})
        offsets = None
        if block.get("mode") == "fixed-offset":
            offsets = {}
            for row in block.get("offsets", []):
                key = row["key"]
                key = tuple(key) if len(key) > 1 else key[0]
                delta = row["delta"]
                offsets[(int(row["node"]), key)] = (
                    np.asarray(delta, dtype=float) if isinstance(delta, list) else float(delta)
                )
        noise = NoiseSpec(
            relpos=float(sigmas.get("relpos", 0.0)),
            distance=float(sigmas.get("distance", 0.0)),
            bearing=float(sigmas.get("bearing", 0.0)),
            angle=float(sigmas.get("angle", 0.0)),
            ratio=float(sigmas.get("ratio", 0.0)),
            seed=int(block["seed"]) if "seed" in block else None,
            offsets=offsets,
        )
    return net, noise


def save_scenario(path, net: Network, noise: NoiseSpec | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_json(net, noise), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> tuple[Network, NoiseSpec | None]:
    with open(path) as fh:
        return network_from_json(json.load(fh))
