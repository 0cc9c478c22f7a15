"""Gradient blocking, same-shape stacking, and reassembly.

A layer of shape (m, n) is split into B x B blocks over the divisible
region (row-major block order) plus ragged remainder blocks along the
right and bottom edges, which keep their natural shapes.  Every entry
belongs to exactly one block and reassembly is exact.

Preconditioner blocks that share a square shape can be stacked into one
(N, B', B') tensor and solved in a single batched call; stacking changes
performance, never results.  Group membership is sorted by
(layer id, side, block index), so the grouping is independent of the
order in which layers are supplied.

One-dimensional (normalization-style) layers of a common length are
stacked into column-vector chunks of shape (B, 1) whose left
preconditioners are B x B; a trailing ragged chunk gets its own group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

Span = tuple[tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class PartitionLayout:
    """Shape-level description of a blocked layer (no data)."""

    layer_shape: tuple[int, int]
    block_size: int
    full_spans: tuple[Span, ...]
    remainder_spans: tuple[Span, ...]

    @property
    def block_spans(self) -> tuple[Span, ...]:
        return self.full_spans + self.remainder_spans

    @property
    def num_blocks(self) -> int:
        return len(self.full_spans) + len(self.remainder_spans)


@dataclass
class BlockPartition:
    """A blocked gradient: layout plus the block data."""

    layout: PartitionLayout
    full_blocks: np.ndarray  # (N, B, B), N = len(layout.full_spans)
    remainder_blocks: tuple[tuple[Span, np.ndarray], ...]

    def blocks(self) -> Iterator[tuple[Span, np.ndarray]]:
        """All blocks in canonical order: full row-major, then remainders."""
        for i, span in enumerate(self.layout.full_spans):
            yield span, self.full_blocks[i]
        yield from self.remainder_blocks


def partition_layout(shape: tuple[int, int], block_size: int) -> PartitionLayout:
    m, n = shape
    b = block_size
    if b < 1:
        raise ValueError("block size must be >= 1")
    n_m, n_n = m // b, n // b
    full = tuple(
        ((i * b, (i + 1) * b), (j * b, (j + 1) * b))
        for i in range(n_m)
        for j in range(n_n)
    )
    cells_m = -(-m // b)
    cells_n = -(-n // b)
    rest = tuple(
        ((i * b, min((i + 1) * b, m)), (j * b, min((j + 1) * b, n)))
        for i in range(cells_m)
        for j in range(cells_n)
        if i >= n_m or j >= n_n
    )
    return PartitionLayout(layer_shape=(m, n), block_size=b, full_spans=full, remainder_spans=rest)


def partition(g: np.ndarray, block_size: int) -> BlockPartition:
    """Split a gradient matrix into full B x B blocks plus ragged edges."""
    layout = partition_layout(g.shape, block_size)
    b = block_size
    if layout.full_spans:
        full = np.empty((len(layout.full_spans), b, b))
        for i, ((r0, r1), (c0, c1)) in enumerate(layout.full_spans):
            full[i] = g[r0:r1, c0:c1]
    else:
        full = np.empty((0, b, b))
    rest = tuple(
        (span, g[span[0][0]:span[0][1], span[1][0]:span[1][1]].copy())
        for span in layout.remainder_spans
    )
    return BlockPartition(layout=layout, full_blocks=full, remainder_blocks=rest)


def reassemble(p: BlockPartition | PartitionLayout, blocks: Iterable[tuple[Span, np.ndarray]]) -> np.ndarray:
    """Rebuild the layer matrix from (span, block) pairs in any order."""
    layout = p.layout if isinstance(p, BlockPartition) else p
    expected = set(layout.block_spans)
    out = np.empty(layout.layer_shape)
    seen: set[Span] = set()
    for span, data in blocks:
        if span not in expected:
            raise ValueError(f"unknown block span {span}")
        if span in seen:
            raise ValueError(f"duplicate block span {span}")
        (r0, r1), (c0, c1) = span
        if data.shape != (r1 - r0, c1 - c0):
            raise ValueError(f"block at {span} has shape {data.shape}, expected {(r1 - r0, c1 - c0)}")
        out[r0:r1, c0:c1] = data
        seen.add(span)
    missing = expected - seen
    if missing:
        raise ValueError(f"missing blocks for spans {sorted(missing)}")
    return out


def preconditioner_shapes(
    p: BlockPartition | PartitionLayout,
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Left/right preconditioner shapes per block, in canonical block order."""
    layout = p.layout if isinstance(p, BlockPartition) else p
    left, right = [], []
    for (r0, r1), (c0, c1) in layout.block_spans:
        left.append((r1 - r0, r1 - r0))
        right.append((c1 - c0, c1 - c0))
    return left, right


@dataclass(frozen=True)
class GroupMember:
    layer_id: int
    side: str  # "L" or "R"
    block_index: int


@dataclass
class StackGroup:
    """Same-shaped preconditioner blocks gathered into one batch."""

    dim: int
    members: tuple[GroupMember, ...]
    tensor: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.members), self.dim, self.dim)

    def materialize(self) -> np.ndarray:
        if self.tensor is None:
            self.tensor = np.zeros(self.shape)
        return self.tensor


_SIDE_ORDER = {"L": 0, "R": 1}


def build_stack_groups(
    partitions: Sequence[BlockPartition | PartitionLayout]
    | Sequence[tuple[int, BlockPartition | PartitionLayout]],
    allocate: bool = True,
) -> list[StackGroup]:
    """Group all left/right preconditioner blocks by their square dimension.

    Layers may be given as a plain sequence (ids are list positions) or as
    explicit (layer_id, layout) pairs; membership order depends only on the
    ids, so shuffling the input does not change the grouping.
    """
    entries: list[tuple[int, PartitionLayout]] = []
    for pos, item in enumerate(partitions):
        if isinstance(item, tuple):
            layer_id, p = item
        else:
            layer_id, p = pos, item
        layout = p.layout if isinstance(p, BlockPartition) else p
        entries.append((layer_id, layout))

    by_dim: dict[int, list[GroupMember]] = {}
    for layer_id, layout in entries:
        for idx, ((r0, r1), (c0, c1)) in enumerate(layout.block_spans):
            by_dim.setdefault(r1 - r0, []).append(GroupMember(layer_id, "L", idx))
            by_dim.setdefault(c1 - c0, []).append(GroupMember(layer_id, "R", idx))

    groups = []
    for dim in sorted(by_dim):
        members = tuple(
            sorted(by_dim[dim], key=lambda m: (m.layer_id, _SIDE_ORDER[m.side], m.block_index))
        )
        group = StackGroup(dim=dim, members=members)
        if allocate:
            group.materialize()
        groups.append(group)
    return groups


@dataclass
class NormLayerStack:
    """Column-vector chunks of same-length 1-D layers, plus scatter metadata."""

    num_layers: int
    length: int
    block_size: int
    full: np.ndarray               # (num_layers * (length // B), B, 1)
    rest: np.ndarray | None        # (num_layers, length % B, 1) when B does not divide length
    chunks_per_layer: int = field(init=False)

    def __post_init__(self) -> None:
        self.chunks_per_layer = self.length // self.block_size + (1 if self.length % self.block_size else 0)


def stack_norm_layers(layers: Sequence[np.ndarray], block_size: int) -> NormLayerStack:
    """Stack same-length 1-D layers into (B, 1) gradient chunks."""
    if not layers:
        raise ValueError("no layers to stack")
    length = layers[0].shape[0]
    for v in layers:
        if v.ndim != 1 or v.shape[0] != length:
            raise ValueError("all stacked layers must be 1-D with a common length")
    b = block_size
    if b < 1:
        raise ValueError("block size must be >= 1")
    n_full = length // b
    rem = length % b
    full = np.empty((len(layers) * n_full, b, 1))
    for i, v in enumerate(layers):
        for j in range(n_full):
            full[i * n_full + j, :, 0] = v[j * b:(j + 1) * b]
    rest = None
    if rem:
        rest = np.empty((len(layers), rem, 1))
        for i, v in enumerate(layers):
            rest[i, :, 0] = v[n_full * b:]
    return NormLayerStack(num_layers=len(layers), length=length, block_size=b, full=full, rest=rest)


def scatter_norm_layers(stack: NormLayerStack) -> list[np.ndarray]:
    """Inverse of stack_norm_layers for the chunk values currently held."""
    b = stack.block_size
    n_full = stack.length // b
    out = []
    for i in range(stack.num_layers):
        v = np.empty(stack.length)
        for j in range(n_full):
            v[j * b:(j + 1) * b] = stack.full[i * n_full + j, :, 0]
        if stack.rest is not None:
            v[n_full * b:] = stack.rest[i, :, 0]
        out.append(v)
    return out
