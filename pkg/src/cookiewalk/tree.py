"""Bijection between finite right excursions and ordered rooted trees.

Each upcrossing of edge ``(k, k+1)`` is a particle of generation ``k``; its
children are the upcrossings of ``(k+1, k+2)`` made before the walk comes
back down across ``(k, k+1)``.  Trees are stored as ordered child counts
per generation, which is all the structure the bijection needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .walk import NotAnExcursion, WalkPath, _check_excursion


class MalformedTree(ValueError):
    pass


@dataclass(frozen=True)
class ExcursionTree:
    """``children[k][j]`` = offspring count of particle ``j`` in generation ``k``."""

    children: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        ch = tuple(tuple(int(c) for c in gen) for gen in self.children)
        object.__setattr__(self, "children", ch)
        if not ch or len(ch[0]) != 1:
            raise MalformedTree("generation 0 must hold exactly the root")
        for k, gen in enumerate(ch):
            if any(c < 0 for c in gen):
                raise MalformedTree("negative child count")
            nxt = len(ch[k + 1]) if k + 1 < len(ch) else 0
            if sum(gen) != nxt:
                raise MalformedTree(f"generation {k} has {sum(gen)} children but "
                                    f"generation {k + 1} has {nxt} particles")
            if len(gen) == 0:
                raise MalformedTree("empty generation before the terminator")

    @property
    def generations(self) -> list[int]:
        """Generation sizes ``g_0 = 1, ..., g_m = 0``."""
        return [len(g) for g in self.children] + [0]

    @property
    def size(self) -> int:
        return sum(len(g) for g in self.children)


def excursion_to_tree(path: WalkPath) -> ExcursionTree:
    """Tree of a finite excursion; left excursions are reflected first."""
    x = path.positions
    if x.size >= 2 and x[0] == 0 and x[1] == -1:
        path = path.reflected()
    T0 = _check_excursion(path)
    xs = path.positions[: T0 + 1].tolist()
    children: list[list[int]] = []
    open_node: list[int] = []  # open_node[k]: index of the current particle in generation k
    for a, b in zip(xs, xs[1:]):
        if b == a + 1:
            k = a
            if k == len(children):
                children.append([])
            children[k].append(0)
            if k > 0:
                children[k - 1][open_node[k - 1]] += 1
            if k == len(open_node):
                open_node.append(0)
            open_node[k] = len(children[k]) - 1
    return ExcursionTree(tuple(tuple(g) for g in children))


def tree_to_excursion(tree: ExcursionTree) -> WalkPath:
    """Preorder ant walk: up on first use of an edge, down on its last."""
    ch = tree.children
    # first child index of particle j in generation k+1
    first = [np.concatenate(([0], np.cumsum(g)[:-1])).astype(int).tolist() for g in ch]
    xs = [0, 1]
    stack = [(0, 0, 0)]  # (generation, particle, next child to visit)
    while stack:
        k, j, c = stack[-1]
        if c < ch[k][j]:
            stack[-1] = (k, j, c + 1)
            xs.append(xs[-1] + 1)
            stack.append((k + 1, first[k][j] + c, 0))
        else:
            stack.pop()
            xs.append(xs[-1] - 1)
    return WalkPath(0, np.array(xs, dtype=np.int64))


def random_geometric_tree(rng: np.random.Generator, max_size: int = 10_000) -> ExcursionTree:
    """Galton-Watson tree with Geom(1/2) offspring, resampled until it is
    finite and has at most ``max_size`` particles."""
    while True:
        children = []
        g = 1
        total = 0
        while g > 0 and total <= max_size:
            counts = rng.geometric(0.5, size=g) - 1
            children.append(tuple(counts.tolist()))
            total += g
            g = int(counts.sum())
        if g == 0 and total <= max_size:
            return ExcursionTree(tuple(children))


__all__ = ["ExcursionTree", "MalformedTree", "NotAnExcursion", "excursion_to_tree",
           "tree_to_excursion", "random_geometric_tree"]
