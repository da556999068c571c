"""Immutable knowledge-graph store, A* shortest-path search, and
path-splicing sequence augmentation.

Triple files are TSV rows head_external_id, relation_name, tail_external_id.
Edges keep their direction for the graph-convolution module but are
traversed both ways by the path search: conversational relatedness is
symmetric even where the underlying relation is not.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

from .corpus import UserSequence, Vocab


class KgError(ValueError):
    pass


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass
class KnowledgeGraph:
    triples: list[Triple]
    relations: dict[str, int]                  # relation name -> dense id
    neighbors: dict[int, list[int]]            # undirected, deduped, sorted
    in_edges: dict[int, list[tuple[int, int]]] # tail -> [(head, relation)]
    dropped_triples: int = 0

    @property
    def triple_count(self) -> int:
        return len(self.triples)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def __contains__(self, entity: int) -> bool:
        return entity in self.neighbors


def build_graph(triples: list[tuple[int, str, int]],
                dropped: int = 0) -> KnowledgeGraph:
    relations: dict[str, int] = {}
    unique: dict[tuple[int, int, int], Triple] = {}
    neighbor_sets: dict[int, set[int]] = {}
    for head, rel_name, tail in triples:
        rel = relations.setdefault(rel_name, len(relations))
        if head == tail:
            continue
        key = (head, rel, tail)
        if key in unique:
            continue
        unique[key] = Triple(head, rel, tail)
        neighbor_sets.setdefault(head, set()).add(tail)
        neighbor_sets.setdefault(tail, set()).add(head)
    in_edges: dict[int, list[tuple[int, int]]] = {}
    for t in unique.values():
        in_edges.setdefault(t.tail, []).append((t.head, t.relation))
    neighbors = {e: sorted(s) for e, s in neighbor_sets.items()}
    return KnowledgeGraph(list(unique.values()), relations, neighbors,
                          in_edges, dropped)


def load_triples(path, vocab: Vocab) -> KnowledgeGraph:
    """Build the graph from a TSV file; triples whose endpoints are not in
    the vocabulary are dropped and counted."""
    rows: list[tuple[int, str, int]] = []
    dropped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KgError(f"{path}:{lineno}: expected 3 tab-separated columns")
            head = vocab.id_of.get(parts[0])
            tail = vocab.id_of.get(parts[2])
            if head is None or tail is None:
                dropped += 1
                continue
            rows.append((head, parts[1], tail))
    return build_graph(rows, dropped)


def shortest_path_astar(g: KnowledgeGraph, src: int, dst: int,
                        max_hops: int) -> list[int] | None:
    """Minimum-hop path from src to dst, endpoints inclusive.

    Best-first search on f(x) = g(x) + h(x) with unit edge costs and the
    only admissible heuristic available on an unweighted graph, h(x) = 0.
    Among equal-length paths the lexicographically smallest entity-id path
    is returned; None when no path exists within max_hops edges.
    """
    if src not in g or dst not in g:
        raise KgError("path endpoints must be present in the graph")
    if src == dst:
        return [src]
    if max_hops < 1:
        return None
    # search backwards from dst so the settled costs are remaining distances,
    # which lets the forward reconstruction pick the smallest next id
    dist = {dst: 0}
    frontier = [(0, dst)]  # (f, node); h = 0 so f = g
    while frontier:
        f, node = heapq.heappop(frontier)
        if f > dist.get(node, f):
            continue
        if node == src:
            break
        if f >= max_hops:
            continue
        for nbr in g.neighbors.get(node, ()):
            cost = f + 1
            if cost < dist.get(nbr, max_hops + 1):
                dist[nbr] = cost
                heapq.heappush(frontier, (cost, nbr))
    if dist.get(src, max_hops + 1) > max_hops:
        return None
    path = [src]
    node = src
    while node != dst:
        remaining = dist[node]
        node = min(n for n in g.neighbors[node] if dist.get(n) == remaining - 1)
        path.append(node)
    return path


def augment_sequence(g: KnowledgeGraph, seq: UserSequence,
                     max_hops: int) -> UserSequence:
    """Splice shortest-path interiors between every pair of neighboring
    elements; pairs without a path within max_hops stay untouched.

    Inserted entities are context-only bridges, never Cloze targets, and
    ground-truth positions are remapped onto the longer sequence.
    """
    if len(seq.elements) <= 1:
        return seq
    truths = set(seq.ground_truth)
    elements: list[int] = []
    inserted: list[bool] = []
    new_truths: list[int] = []
    for i, ent in enumerate(seq.elements):
        if i > 0:
            prev = seq.elements[i - 1]
            if prev in g and ent in g:
                path = shortest_path_astar(g, prev, ent, max_hops)
                if path is not None:
                    for bridge in path[1:-1]:
                        elements.append(bridge)
                        inserted.append(True)
        if i in truths:
            new_truths.append(len(elements))
        elements.append(ent)
        inserted.append(seq.inserted[i])
    return replace(seq, elements=elements, ground_truth=new_truths,
                   inserted=inserted)
