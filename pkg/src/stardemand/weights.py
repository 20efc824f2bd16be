"""Neighborhood weight stacks for spatio-temporal regression.

A stack is an ordered collection of row-normalized k x k matrices; lag 0
is always the identity (each zone is its own order-0 neighborhood), lag
l >= 1 holds the l-th ring of neighbors for each origin zone.

Two ring schemes are provided: centroid-distance ranking and adjacency
hop count (BFS on a shared-boundary graph).
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

SCHEME_CENTROID = "centroid"
SCHEME_ADJACENCY = "adjacency"

ROW_SUM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class WeightStack:
    """Row-normalized neighborhood matrices W(0)..W(eta_max - 1)."""

    matrices: tuple[np.ndarray, ...]
    scheme: str
    zone_ids: tuple[str, ...]

    @property
    def eta_max(self) -> int:
        return len(self.matrices)

    @property
    def k(self) -> int:
        return len(self.zone_ids)


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected zone adjacency; edges are pairs of zone ids."""

    zone_ids: tuple[str, ...]
    edges: frozenset[frozenset]

    def neighbors(self, zone_id: str) -> list[str]:
        out = []
        for e in self.edges:
            if zone_id in e:
                (other,) = e - {zone_id}
                out.append(other)
        return sorted(out)


def make_adjacency(zone_ids: Sequence[str], edges: Iterable[tuple[str, str]]) -> AdjacencyGraph:
    zone_ids = tuple(str(z) for z in zone_ids)
    known = set(zone_ids)
    norm = set()
    for a, b in edges:
        a, b = str(a), str(b)
        if a == b:
            raise DataError(f"self-loop on zone {a}")
        if a not in known or b not in known:
            raise DataError(f"edge ({a}, {b}) references unknown zone")
        norm.add(frozenset((a, b)))
    return AdjacencyGraph(zone_ids=zone_ids, edges=frozenset(norm))


def row_normalize(matrix: np.ndarray) -> np.ndarray:
    """Divide each nonzero row by its sum; zero rows pass through."""
    matrix = np.asarray(matrix, dtype=float)
    if np.any(matrix < 0):
        raise DataError("negative entry in weight matrix")
    sums = matrix.sum(axis=1, keepdims=True)
    safe = np.where(sums > 0, sums, 1.0)
    return matrix / safe


def _stack_from_rings(rings_per_zone, zone_ids, eta_max, scheme) -> WeightStack:
    """rings_per_zone[i] is a list of rings (lists of zone indices) for lag 1.."""
    k = len(zone_ids)
    mats = [np.eye(k)]
    for lag in range(1, eta_max):
        m = np.zeros((k, k))
        for i, rings in enumerate(rings_per_zone):
            if lag - 1 < len(rings):
                for j in rings[lag - 1]:
                    m[i, j] = 1.0
        mats.append(row_normalize(m))
    return WeightStack(
        matrices=tuple(_frozen(m) for m in mats),
        scheme=scheme,
        zone_ids=tuple(zone_ids),
    )


def centroid_rings(zones, eta_max: int) -> WeightStack:
    """Ring stack from centroid-distance ranking.

    For each origin the other k-1 zones are sorted by ascending centroid
    distance (ties by zone id) and partitioned into eta_max - 1 contiguous
    groups whose sizes differ by at most one; earlier groups take the
    extra element.
    """
    zone_ids = [z.zone_id for z in zones]
    k = len(zone_ids)
    if k < 1:
        raise DataError("need at least one zone")
    if eta_max < 1:
        raise DataError("eta_max must be >= 1")
    if eta_max - 1 > k - 1:
        raise DataError(f"eta_max={eta_max} needs at least {eta_max - 1} other zones, have {k - 1}")

    cents = np.array([z.centroid for z in zones], dtype=float)
    rings_per_zone = []
    n_rings = eta_max - 1
    for i in range(k):
        others = [j for j in range(k) if j != i]
        d = np.hypot(*(cents[others] - cents[i]).T) if others else np.array([])
        ranked = sorted(zip(others, d), key=lambda t: (t[1], zone_ids[t[0]]))
        order = [j for j, _ in ranked]
        rings = []
        if n_rings:
            base, extra = divmod(len(order), n_rings)
            pos = 0
            for r in range(n_rings):
                size = base + (1 if r < extra else 0)
                rings.append(order[pos:pos + size])
                pos += size
        rings_per_zone.append(rings)
    return _stack_from_rings(rings_per_zone, zone_ids, eta_max, SCHEME_CENTROID)


def adjacency_rings(graph: AdjacencyGraph, eta_max: int) -> WeightStack:
    """Ring stack from BFS hop distance on the adjacency graph.

    Zones at hop l populate ring l for 1 <= l <= eta_max - 1; unreachable
    zones and hops >= eta_max get zero weight (empty rings stay all-zero).
    """
    if eta_max < 1:
        raise DataError("eta_max must be >= 1")
    zone_ids = graph.zone_ids
    index = {z: i for i, z in enumerate(zone_ids)}
    nbrs = {z: [index[n] for n in graph.neighbors(z)] for z in zone_ids}

    rings_per_zone = []
    for i, origin in enumerate(zone_ids):
        hops = {i: 0}
        q = deque([i])
        while q:
            cur = q.popleft()
            for nb in nbrs[zone_ids[cur]]:
                if nb not in hops:
                    hops[nb] = hops[cur] + 1
                    q.append(nb)
        rings = [[] for _ in range(eta_max - 1)]
        for j, h in hops.items():
            if 1 <= h <= eta_max - 1:
                rings[h - 1].append(j)
        rings_per_zone.append([sorted(r) for r in rings])
    return _stack_from_rings(rings_per_zone, zone_ids, eta_max, SCHEME_ADJACENCY)


def validate_stack(stack: WeightStack, k: int | None = None) -> list[dict]:
    """Check every stack invariant; returns one diagnostic dict per check."""
    if k is None:
        k = stack.k
    report = []

    def add(check, ok, detail=""):
        report.append({"check": check, "ok": bool(ok), "detail": detail})

    shapes_ok = all(m.shape == (k, k) for m in stack.matrices)
    add("shape", shapes_ok, "" if shapes_ok else f"expected {k}x{k} matrices")
    if not shapes_ok:
        return report

    add("w0_identity", np.array_equal(stack.matrices[0], np.eye(k)),
        "W0 not identity" if not np.array_equal(stack.matrices[0], np.eye(k)) else "")

    neg = [(l, tuple(np.argwhere(m < 0)[0])) for l, m in enumerate(stack.matrices) if np.any(m < 0)]
    add("nonnegative", not neg, f"negative entries at {neg}" if neg else "")

    bad_rows = []
    for l, m in enumerate(stack.matrices):
        sums = m.sum(axis=1)
        for i, s in enumerate(sums):
            if s != 0 and abs(s - 1.0) > ROW_SUM_TOL:
                bad_rows.append((l, i, float(s)))
    add("row_sum", not bad_rows, f"rows not summing to 0 or 1: {bad_rows}" if bad_rows else "")

    overlaps = []
    for i in range(k):
        seen = set()
        for l in range(1, stack.eta_max):
            hit = set(np.flatnonzero(stack.matrices[l][i] > 0))
            if hit & seen:
                overlaps.append((i, l, sorted(hit & seen)))
            seen |= hit
    add("disjoint_rings", not overlaps,
        f"zones in multiple rings: {overlaps}" if overlaps else "")
    return report


# -- serialization ------------------------------------------------------

def write_stack(stack: WeightStack, directory) -> None:
    """One k x k CSV per lag plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for l, m in enumerate(stack.matrices):
        with open(directory / f"w{l}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            for row in m:
                w.writerow([repr(float(v)) for v in row])
    manifest = {
        "scheme": stack.scheme,
        "eta_max": stack.eta_max,
        "zone_ids": list(stack.zone_ids),
        "files": [f"w{l}.csv" for l in range(stack.eta_max)],
    }
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def read_stack(directory) -> WeightStack:
    directory = Path(directory)
    try:
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read stack manifest in {directory}: {e}") from None
    mats = []
    for name in manifest["files"]:
        with open(directory / name, newline="") as fh:
            mats.append(np.array([[float(x) for x in row] for row in csv.reader(fh)]))
    return WeightStack(
        matrices=tuple(_frozen(m) for m in mats),
        scheme=manifest["scheme"],
        zone_ids=tuple(manifest["zone_ids"]),
    )


def read_adjacency_csv(path, zone_ids: Sequence[str]) -> AdjacencyGraph:
    """Edge list CSV `zone_a,zone_b` (header optional)."""
    edges = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip() == "zone_a":
                continue
            if len(row) < 2:
                raise DataError(f"{path}: bad adjacency row {row}")
            edges.append((row[0].strip(), row[1].strip()))
    return make_adjacency(zone_ids, edges)
