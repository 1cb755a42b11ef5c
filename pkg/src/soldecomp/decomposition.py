"""Subdomain decompositions of a grid and the block operators they induce.

A decomposition splits the node set into rectangular geometric blocks
(optionally widened by whole node layers so that neighbours overlap) and then
groups blocks into subdomains.  Without colouring each block is a subdomain;
with red-black colouring the blocks of one checkerboard colour form a single
consolidated subdomain, giving ``p = 2``.

Restriction multiplies by ``m(x) ** -0.5`` where ``m`` counts the subdomains
holding a node, and extension is its adjoint, so that
``sum_a R_a^* R_a = I``.  Block vectors are stored as one flat array that
concatenates the subdomain components in subdomain order.
"""

from __future__ import annotations

import csv
from concurrent.futures import Executor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Optional

import numpy as np
import scipy.sparse as sps

from .exceptions import InvalidArgumentError
from .grid import Grid, GridFunction
from .operator import CgConfig, EllipticOperator, solve_shifted

__all__ = [
    "Block",
    "Decomposition",
    "BlockVector",
    "BlockOperator",
    "decompose",
    "restrict",
    "extend",
    "apply_block_full",
    "apply_block_diag",
    "apply_block_lower",
    "apply_block_upper",
    "write_decomposition_csv",
]

Flavor = Literal["non_overlapping", "overlapping"]
Coloring = Literal["none", "red_black"]


@dataclass(frozen=True)
class Block:
    """Geometric block: 0-based half-open index ranges ``[i0, i1) x [j0, j1)``."""

    position: tuple[int, int]
    i0: int
    i1: int
    j0: int
    j1: int

    def nodes(self, grid: Grid) -> np.ndarray:
        i = np.arange(self.i0, self.i1)
        j = np.arange(self.j0, self.j1)
        return (i[None, :] + grid.n1 * j[:, None]).ravel()

    @property
    def size(self) -> int:
        return (self.i1 - self.i0) * (self.j1 - self.j0)

    def couples_with(self, other: Block) -> bool:
        """True if the blocks share a node or a five-point stencil edge."""

        def overlap(a0, a1, b0, b1):
            return a0 < b1 and b0 < a1

        def touch(a0, a1, b0, b1):
            return a1 == b0 or b1 == a0

        oi = overlap(self.i0, self.i1, other.i0, other.i1)
        oj = overlap(self.j0, self.j1, other.j0, other.j1)
        ti = touch(self.i0, self.i1, other.i0, other.i1)
        tj = touch(self.j0, self.j1, other.j0, other.j1)
        return (oi and oj) or (oi and tj) or (ti and oj)


def _split(n: int, parts: int, name: str) -> list[tuple[int, int]]:
    if int(parts) != parts or parts < 1:
        raise InvalidArgumentError(f"{name} must be a positive integer, got {parts!r}")
    size = n // parts
    if size == 0:
        raise InvalidArgumentError(f"cannot split {n} nodes into {parts} non-empty parts")
    bounds = [(k * size, (k + 1) * size) for k in range(parts - 1)]
    bounds.append(((parts - 1) * size, n))
    return bounds


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Subdomain node sets with multiplicity weights on a grid.

    Attributes
    ----------
    grid : Grid
    parts : tuple of int
        Number of geometric blocks per direction.
    flavor : {"non_overlapping", "overlapping"}
    layers : int
        Overlap width in node layers (0 without overlap).
    coloring : {"none", "red_black"}
    blocks : list of Block
        Geometric blocks in block row-major order.
    members : list of tuple of int
        Block ids forming each subdomain, in subdomain order.
    """

    grid: Grid
    parts: tuple[int, int]
    flavor: str
    layers: int
    coloring: str
    blocks: list[Block] = field(repr=False)
    members: list[tuple[int, ...]] = field(repr=False)

    @property
    def p(self) -> int:
        return len(self.members)

    @cached_property
    def subdomain_nodes(self) -> list[np.ndarray]:
        return [np.concatenate([self.blocks[b].nodes(self.grid) for b in m]) for m in self.members]

    @cached_property
    def multiplicity(self) -> np.ndarray:
        m = np.zeros(self.grid.size, dtype=np.int64)
        for nodes in self.subdomain_nodes:
            np.add.at(m, nodes, 1)
        return m

    @cached_property
    def weights(self) -> list[np.ndarray]:
        scale = 1.0 / np.sqrt(self.multiplicity)
        return [scale[nodes] for nodes in self.subdomain_nodes]

    @cached_property
    def sizes(self) -> list[int]:
        return [len(nodes) for nodes in self.subdomain_nodes]

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def total_size(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def _flat_nodes(self) -> np.ndarray:
        return np.concatenate(self.subdomain_nodes)

    @cached_property
    def _flat_weights(self) -> np.ndarray:
        return np.concatenate(self.weights)

    @cached_property
    def member_slices(self) -> list[list[slice]]:
        """Per subdomain, the slice of each member block inside the component."""
        out = []
        for m in self.members:
            start, slices = 0, []
            for b in m:
                slices.append(slice(start, start + self.blocks[b].size))
                start += self.blocks[b].size
            out.append(slices)
        return out

    def component(self, data: np.ndarray, alpha: int) -> np.ndarray:
        return data[self.offsets[alpha] : self.offsets[alpha + 1]]

    def restrict(self, v: np.ndarray) -> np.ndarray:
        """Flat block data ``(R_1 v, ..., R_p v)``."""
        return self._flat_weights * np.asarray(v)[self._flat_nodes]

    def extend(self, data: np.ndarray) -> np.ndarray:
        """``sum_a R_a^* v_a`` with a fixed (sequential) reduction order."""
        return np.bincount(self._flat_nodes, weights=self._flat_weights * data, minlength=self.grid.size)

    def restrict_component(self, v: np.ndarray, alpha: int) -> np.ndarray:
        return self.weights[alpha] * np.asarray(v)[self.subdomain_nodes[alpha]]

    def extend_component(self, v_alpha: np.ndarray, alpha: int) -> np.ndarray:
        out = np.zeros(self.grid.size)
        out[self.subdomain_nodes[alpha]] = self.weights[alpha] * v_alpha
        return out

    def inner(self, x: np.ndarray, y: np.ndarray) -> float:
        """Product of the direct-sum space: sum of the subdomain products."""
        return float(np.sum(x * y) * self.grid.cell_area)

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(self.inner(x, x)))

    def zeros(self) -> BlockVector:
        return BlockVector(self, np.zeros(self.total_size))

    def block_labels(self) -> np.ndarray:
        """Index of the (first) geometric block containing each node, for plotting."""
        labels = np.full(self.grid.size, -1)
        for b, block in enumerate(self.blocks):
            nodes = block.nodes(self.grid)
            labels[nodes[labels[nodes] < 0]] = b
        return labels


def decompose(
    grid: Grid,
    parts1: int,
    parts2: int,
    flavor: Flavor = "non_overlapping",
    layers: int = 1,
    coloring: Coloring = "none",
) -> Decomposition:
    """Split ``grid`` into ``parts1 x parts2`` blocks and group them into subdomains.

    Blocks get ``n // parts`` nodes per direction, the last one taking the
    remainder.  ``flavor="overlapping"`` widens every block by ``layers`` node
    rows/columns towards each neighbour.  ``coloring="red_black"`` merges
    same-colour blocks of the checkerboard, colour 0 (holding block (1, 1))
    first.
    """
    if flavor not in ("non_overlapping", "overlapping"):
        raise InvalidArgumentError(f"unknown flavor {flavor!r}")
    if coloring not in ("none", "red_black"):
        raise InvalidArgumentError(f"unknown coloring {coloring!r}")
    xs = _split(grid.n1, parts1, "parts1")
    ys = _split(grid.n2, parts2, "parts2")
    if flavor == "overlapping":
        if int(layers) != layers or layers < 1:
            raise InvalidArgumentError(f"overlap layers must be a positive integer, got {layers!r}")
        layers = int(layers)

        def widen(bounds, n):
            if len(bounds) == 1:
                return bounds
            out = [(max(a - layers, 0), min(b + layers, n)) for a, b in bounds]
            if any(a == 0 and b == n for a, b in out):
                raise InvalidArgumentError(f"overlap of {layers} layers makes a block span the whole direction")
            return out

        xs, ys = widen(xs, grid.n1), widen(ys, grid.n2)
    else:
        layers = 0

    blocks = [
        Block((b1, b2), i0, i1, j0, j1)
        for b2, (j0, j1) in enumerate(ys)
        for b1, (i0, i1) in enumerate(xs)
    ]
    if coloring == "none":
        members = [(b,) for b in range(len(blocks))]
    else:
        if len(blocks) < 2:
            raise InvalidArgumentError("red_black coloring needs at least two blocks")
        members = []
        for color in (0, 1):
            group = tuple(b for b, blk in enumerate(blocks) if sum(blk.position) % 2 == color)
            for x, a in enumerate(group):
                for b in group[x + 1 :]:
                    if blocks[a].couples_with(blocks[b]):
                        raise InvalidArgumentError(
                            f"blocks {blocks[a].position} and {blocks[b].position} share colour {color} "
                            "but are coupled by the stencil"
                        )
            members.append(group)
    return Decomposition(grid, (int(parts1), int(parts2)), flavor, layers, coloring, blocks, members)


class BlockVector:
    """Element ``(v_1, ..., v_p)`` of the direct sum of subdomain spaces."""

    __slots__ = ("decomposition", "data")

    def __init__(self, decomposition: Decomposition, data):
        data = np.asarray(data, dtype=float)
        if data.shape != (decomposition.total_size,):
            raise InvalidArgumentError(
                f"block data of shape {data.shape} does not match decomposition size {decomposition.total_size}"
            )
        self.decomposition = decomposition
        self.data = data

    @classmethod
    def from_components(cls, decomposition: Decomposition, components) -> BlockVector:
        components = list(components)
        if len(components) != decomposition.p:
            raise InvalidArgumentError(f"expected {decomposition.p} components, got {len(components)}")
        for alpha, (comp, size) in enumerate(zip(components, decomposition.sizes)):
            if np.shape(comp) != (size,):
                raise InvalidArgumentError(f"component {alpha} has shape {np.shape(comp)}, expected ({size},)")
        return cls(decomposition, np.concatenate(components))

    @property
    def components(self) -> list[np.ndarray]:
        return [self.decomposition.component(self.data, a) for a in range(self.decomposition.p)]

    def __getitem__(self, alpha: int) -> np.ndarray:
        return self.decomposition.component(self.data, alpha)

    def __len__(self) -> int:
        return self.decomposition.p

    def _other(self, other) -> np.ndarray:
        if not isinstance(other, BlockVector) or other.decomposition is not self.decomposition:
            raise InvalidArgumentError("block vectors belong to different decompositions")
        return other.data

    def __add__(self, other):
        return BlockVector(self.decomposition, self.data + self._other(other))

    def __sub__(self, other):
        return BlockVector(self.decomposition, self.data - self._other(other))

    def __mul__(self, scalar):
        return BlockVector(self.decomposition, self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return BlockVector(self.decomposition, -self.data)

    def inner(self, other: BlockVector) -> float:
        return self.decomposition.inner(self.data, self._other(other))

    def norm(self) -> float:
        return self.decomposition.norm(self.data)

    def __repr__(self):
        return f"BlockVector(p={self.decomposition.p}, sizes={self.decomposition.sizes})"


def _check_grid(decomposition: Decomposition, v: GridFunction) -> None:
    if decomposition.grid != v.grid:
        raise InvalidArgumentError(f"grid mismatch: {decomposition.grid} vs {v.grid}")


def restrict(decomposition: Decomposition, v: GridFunction) -> BlockVector:
    _check_grid(decomposition, v)
    return BlockVector(decomposition, decomposition.restrict(v.values))


def extend(decomposition: Decomposition, vb: BlockVector) -> GridFunction:
    if vb.decomposition is not decomposition:
        raise InvalidArgumentError("block vector belongs to a different decomposition")
    return GridFunction(decomposition.grid, decomposition.extend(vb.data))


class BlockOperator:
    """Views of the operator matrix ``{R_a A R_b^*}`` on flat block data.

    The full matrix and its triangular halves are applied matrix-free through
    extend, matvec and restrict.  The diagonal blocks ``R_a A R_a^*`` are kept
    as sparse sub-matrices, one per geometric member block, because the block
    solves need them at every CG iteration.
    """

    def __init__(self, decomposition: Decomposition, operator: EllipticOperator):
        if decomposition.grid != operator.grid:
            raise InvalidArgumentError(f"grid mismatch: {decomposition.grid} vs {operator.grid}")
        self.decomposition = decomposition
        self.operator = operator

    @property
    def p(self) -> int:
        return self.decomposition.p

    @cached_property
    def _member_blocks(self) -> list[list[tuple[sps.csr_matrix, np.ndarray]]]:
        d, a = self.decomposition, self.operator.matrix
        out = []
        for alpha in range(d.p):
            nodes, w = d.subdomain_nodes[alpha], d.weights[alpha]
            per_member = []
            for sl in d.member_slices[alpha]:
                wm = sps.diags(w[sl])
                sub = (wm @ a[nodes[sl]][:, nodes[sl]] @ wm).tocsr()
                per_member.append((sub, sub.diagonal()))
            out.append(per_member)
        return out

    def full(self, data: np.ndarray) -> np.ndarray:
        d = self.decomposition
        return d.restrict(self.operator.apply(d.extend(data)))

    def diag_component(self, data_alpha: np.ndarray, alpha: int) -> np.ndarray:
        out = np.empty_like(data_alpha)
        for sl, (sub, _) in zip(self.decomposition.member_slices[alpha], self._member_blocks[alpha]):
            out[sl] = sub @ data_alpha[sl]
        return out

    def diag(self, data: np.ndarray) -> np.ndarray:
        d = self.decomposition
        return np.concatenate([self.diag_component(d.component(data, a), a) for a in range(d.p)])

    def diag_matrix_free(self, data: np.ndarray) -> np.ndarray:
        """Reference form of :meth:`diag` through single-component extension."""
        d = self.decomposition
        return np.concatenate(
            [
                d.restrict_component(self.operator.apply(d.extend_component(d.component(data, a), a)), a)
                for a in range(d.p)
            ]
        )

    def coupling(self, alpha: int, partial: np.ndarray) -> np.ndarray:
        """``R_a A g`` for a grid vector ``g`` (typically a partial extension)."""
        return self.decomposition.restrict_component(self.operator.apply(partial), alpha)

    def lower(self, data: np.ndarray) -> np.ndarray:
        """Strictly lower blocks plus half the diagonal."""
        d = self.decomposition
        out, partial = [], np.zeros(d.grid.size)
        for a in range(d.p):
            comp = d.component(data, a)
            out.append(self.coupling(a, partial) + 0.5 * self.diag_component(comp, a))
            partial += d.extend_component(comp, a)
        return np.concatenate(out)

    def upper(self, data: np.ndarray) -> np.ndarray:
        """Strictly upper blocks plus half the diagonal."""
        d = self.decomposition
        out, partial = [None] * d.p, np.zeros(d.grid.size)
        for a in reversed(range(d.p)):
            comp = d.component(data, a)
            out[a] = self.coupling(a, partial) + 0.5 * self.diag_component(comp, a)
            partial += d.extend_component(comp, a)
        return np.concatenate(out)

    def solve_diag_component(
        self,
        alpha: int,
        gamma: float,
        rhs: np.ndarray,
        x0: Optional[np.ndarray] = None,
        cfg: Optional[CgConfig] = None,
        executor: Optional[Executor] = None,
    ) -> np.ndarray:
        """Solve ``(I + gamma R_a A R_a^*) x = rhs``; member blocks are independent."""
        slices = self.decomposition.member_slices[alpha]
        members = self._member_blocks[alpha]

        def solve(k):
            sub, diag = members[k]
            sl = slices[k]
            return solve_shifted(
                sub.__matmul__, gamma, rhs[sl], None if x0 is None else x0[sl], cfg, diagonal=diag
            )

        if executor is None or len(slices) == 1:
            parts = [solve(k) for k in range(len(slices))]
        else:
            parts = list(executor.map(solve, range(len(slices))))
        return np.concatenate(parts)

    def solve_diag(
        self,
        gamma: float,
        rhs: np.ndarray,
        x0: Optional[np.ndarray] = None,
        cfg: Optional[CgConfig] = None,
        executor: Optional[Executor] = None,
    ) -> np.ndarray:
        """Solve ``(I + gamma A_0) x = rhs`` with every member block solved independently."""
        d = self.decomposition
        jobs = [
            (a, k)
            for a in range(d.p)
            for k in range(len(d.member_slices[a]))
        ]

        def solve(job):
            a, k = job
            sub, diag = self._member_blocks[a][k]
            sl = d.member_slices[a][k]
            r = d.component(rhs, a)[sl]
            g = None if x0 is None else d.component(x0, a)[sl]
            return solve_shifted(sub.__matmul__, gamma, r, g, cfg, diagonal=diag)

        results = list(executor.map(solve, jobs)) if executor is not None else [solve(j) for j in jobs]
        return np.concatenate(results)

    def full_diagonal(self) -> np.ndarray:
        """Diagonal of the full block matrix, used for Jacobi preconditioning."""
        d = self.decomposition
        diag = self.operator.diagonal
        return np.concatenate([w**2 * diag[nodes] for nodes, w in zip(d.subdomain_nodes, d.weights)])


def _block_op(decomposition, operator, vb: BlockVector) -> tuple[BlockOperator, np.ndarray]:
    if vb.decomposition is not decomposition:
        raise InvalidArgumentError("block vector belongs to a different decomposition")
    return BlockOperator(decomposition, operator), vb.data


def apply_block_full(decomposition: Decomposition, operator: EllipticOperator, vb: BlockVector) -> BlockVector:
    op, data = _block_op(decomposition, operator, vb)
    return BlockVector(decomposition, op.full(data))


def apply_block_diag(decomposition: Decomposition, operator: EllipticOperator, vb: BlockVector) -> BlockVector:
    op, data = _block_op(decomposition, operator, vb)
    return BlockVector(decomposition, op.diag_matrix_free(data))


def apply_block_lower(decomposition: Decomposition, operator: EllipticOperator, vb: BlockVector) -> BlockVector:
    op, data = _block_op(decomposition, operator, vb)
    return BlockVector(decomposition, op.lower(data))


def apply_block_upper(decomposition: Decomposition, operator: EllipticOperator, vb: BlockVector) -> BlockVector:
    op, data = _block_op(decomposition, operator, vb)
    return BlockVector(decomposition, op.upper(data))


def write_decomposition_csv(path, decomposition: Decomposition) -> None:
    """Write ``alpha,i,j,m,weight`` rows (1-based subdomain and node indices)."""
    d = decomposition
    i, j = d.grid.node_indices()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "i", "j", "m", "weight"])
        for alpha, (nodes, w) in enumerate(zip(d.subdomain_nodes, d.weights)):
            for node, weight in zip(nodes, w):
                writer.writerow([alpha + 1, int(i[node]), int(j[node]), int(d.multiplicity[node]), repr(float(weight))])
