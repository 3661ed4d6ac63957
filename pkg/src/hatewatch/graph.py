"""Directed channel graph built from mentions and forwards.

A directed edge (A, B) exists when some message in channel A mentions B or is
forwarded from B. Edge weights count occurrences; structural statistics use
the unweighted edge set.
"""

from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .archive import Archive, Channel

EDGE_CSV = "edge-csv"
GRAPHML = "graphml"

_GRAPHML_NS = "http://graphml.graphdrawing.org/xmlns"


@dataclass
class ChannelGraph:
    nodes: set[str] = field(default_factory=set)
    edges: dict[tuple[str, str], int] = field(default_factory=dict)
    node_features: Optional[dict[str, tuple[float, ...]]] = None

    def __post_init__(self):
        for (src, dst), w in self.edges.items():
            if src == dst:
                raise ValueError(f"self-loop on {src!r}")
            if src not in self.nodes or dst not in self.nodes:
                raise ValueError(f"edge endpoint outside node set: ({src}, {dst})")
            if w < 1:
                raise ValueError(f"edge weight must be >= 1, got {w}")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def out_neighbors(self, node: str) -> list[str]:
        return sorted(dst for (src, dst) in self.edges if src == node)

    def in_neighbors(self, node: str) -> list[str]:
        return sorted(src for (src, dst) in self.edges if dst == node)

    def adjacency_lists(self) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
        """(out-neighbors, in-neighbors) per node, sorted for determinism."""
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        inc: dict[str, list[str]] = {n: [] for n in self.nodes}
        for src, dst in sorted(self.edges):
            out[src].append(dst)
            inc[dst].append(src)
        return out, inc


@dataclass(frozen=True)
class GraphStats:
    n_nodes: int
    n_edges: int
    density: float
    avg_in_degree: float
    avg_out_degree: float

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "n_edges": self.n_edges,
            "density": self.density,
            "avg_in_degree": self.avg_in_degree,
            "avg_out_degree": self.avg_out_degree,
        }


NodeFilter = Callable[[Channel], bool]


def build_graph(
    archive: Archive, node_filter: NodeFilter = lambda c: True
) -> ChannelGraph:
    """Accumulate mention/forward edges between channels passing the filter.

    References to channels outside the filtered node set are dropped (no stub
    nodes); self-references never create edges.
    """
    nodes = {
        cid for cid, ch in archive.channels.items() if node_filter(ch)
    }
    edges: dict[tuple[str, str], int] = {}
    for cid in sorted(nodes):
        for msg in archive.messages.get(cid, []):
            targets = list(msg.mentions)
            if msg.forwarded_from is not None:
                targets.append(msg.forwarded_from)
            for dst in targets:
                if dst == cid or dst not in nodes:
                    continue
                edges[(cid, dst)] = edges.get((cid, dst), 0) + 1
    return ChannelGraph(nodes=nodes, edges=edges)


def graph_stats(graph: ChannelGraph) -> GraphStats:
    n, m = graph.n_nodes, graph.n_edges
    if n < 2:
        raise ValueError("density undefined for fewer than 2 nodes")
    return GraphStats(
        n_nodes=n,
        n_edges=m,
        density=m / (n * (n - 1)),
        avg_in_degree=m / n,
        avg_out_degree=m / n,
    )


def density_for(n_nodes: int, n_edges: int) -> float:
    if n_nodes < 2:
        raise ValueError("density undefined for fewer than 2 nodes")
    return n_edges / (n_nodes * (n_nodes - 1))


def first_degree_network(graph: ChannelGraph, seeds: Iterable[str]) -> set[str]:
    """Non-seed nodes with an edge to or from any seed."""
    seed_set = set(seeds)
    unknown = seed_set - graph.nodes
    if unknown:
        raise ValueError(f"seeds not in graph: {sorted(unknown)}")
    out = set()
    for src, dst in graph.edges:
        if src in seed_set and dst not in seed_set:
            out.add(dst)
        elif dst in seed_set and src not in seed_set:
            out.add(src)
    return out


def export_graph(graph: ChannelGraph, fmt: str = EDGE_CSV) -> str:
    """Canonical export: nodes and edges in lexicographic order."""
    if fmt == EDGE_CSV:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["src", "dst", "weight"])
        for src, dst in sorted(graph.edges):
            writer.writerow([src, dst, graph.edges[(src, dst)]])
        return buf.getvalue()
    if fmt == GRAPHML:
        return _to_graphml(graph)
    raise ValueError(f"unknown graph format: {fmt!r}")


def import_graph(data: str, fmt: str = EDGE_CSV) -> ChannelGraph:
    if fmt == EDGE_CSV:
        nodes = set()
        edges = {}
        for row in csv.DictReader(io.StringIO(data)):
            src, dst, w = row["src"], row["dst"], int(row["weight"])
            nodes.update((src, dst))
            edges[(src, dst)] = w
        return ChannelGraph(nodes=nodes, edges=edges)
    if fmt == GRAPHML:
        return _from_graphml(data)
    raise ValueError(f"unknown graph format: {fmt!r}")


def _to_graphml(graph: ChannelGraph) -> str:
    root = ET.Element("graphml", xmlns=_GRAPHML_NS)
    key = ET.SubElement(root, "key")
    key.set("id", "weight")
    key.set("for", "edge")
    key.set("attr.name", "weight")
    key.set("attr.type", "int")
    g = ET.SubElement(root, "graph", id="channels", edgedefault="directed")
    for node in sorted(graph.nodes):
        ET.SubElement(g, "node", id=node)
    for src, dst in sorted(graph.edges):
        e = ET.SubElement(g, "edge", source=src, target=dst)
        d = ET.SubElement(e, "data", key="weight")
        d.text = str(graph.edges[(src, dst)])
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


def _from_graphml(data: str) -> ChannelGraph:
    root = ET.fromstring(data)
    ns = {"g": _GRAPHML_NS}
    nodes = set()
    edges = {}
    for node in root.iterfind(".//g:node", ns):
        nodes.add(node.get("id"))
    for edge in root.iterfind(".//g:edge", ns):
        src, dst = edge.get("source"), edge.get("target")
        weight_el = edge.find("g:data[@key='weight']", ns)
        weight = int(weight_el.text) if weight_el is not None else 1
        edges[(src, dst)] = weight
    return ChannelGraph(nodes=nodes, edges=edges)
