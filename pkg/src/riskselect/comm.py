"""Selective block transmission with exact bandwidth accounting."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .core import CellMask, GridSpec, Heatmap, OccupancyGrid

DEFAULT_TAU = 0.1
DEFAULT_BLOCK = 4
DEFAULT_BYTES_PER_CELL = 4
DEFAULT_HEADER_BYTES = 4

MAGIC = b"RISEBLK1"
_HEADER = struct.Struct("<8sII")
_BLOCK_HEAD = struct.Struct("<HH")


@dataclass(frozen=True)
class Block:
    row: int
    col: int
    payload: Tuple[int, ...]


@dataclass(frozen=True)
class FeatureBlockSet:
    block_size: int
    blocks: Tuple[Block, ...]
    source_spec: GridSpec

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        n = self.block_size * self.block_size
        coords = [(b.row, b.col) for b in self.blocks]
        if len(set(coords)) != len(coords):
            raise ValueError("duplicate block coordinates")
        if any(len(b.payload) != n for b in self.blocks):
            raise ValueError(f"block payloads must hold {n} values")

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def block_cols(self) -> int:
        return self.source_spec.cols // self.block_size

    def block_id(self, b: Block) -> int:
        return b.row * self.block_cols + b.col

    def coverage(self) -> np.ndarray:
        """Boolean raster of the cells carried by this set."""
        out = np.zeros(self.source_spec.shape, dtype=bool)
        s = self.block_size
        for b in self.blocks:
            out[b.row * s:(b.row + 1) * s, b.col * s:(b.col + 1) * s] = True
        return out


@dataclass(frozen=True)
class CommStats:
    cells_sent: int
    cells_total: int
    bytes_sent: int

    @property
    def volume_log2(self) -> Optional[float]:
        return math.log2(self.bytes_sent * 8) if self.bytes_sent > 0 else None

    @property
    def percent_exact(self) -> Fraction:
        return Fraction(100 * self.cells_sent, self.cells_total) if self.cells_total else Fraction(0)

    @property
    def percent_of_full(self) -> float:
        return float(self.percent_exact)

    def __add__(self, other: "CommStats") -> "CommStats":
        return CommStats(self.cells_sent + other.cells_sent, self.cells_total + other.cells_total,
                         self.bytes_sent + other.bytes_sent)


@dataclass(frozen=True)
class ChannelModel:
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must lie in [0, 1]")


def build_mask(heatmap: Heatmap, tau: float) -> CellMask:
    return CellMask(heatmap.spec, heatmap.cells >= tau)


def blockify(mask: CellMask, occupancy: OccupancyGrid, block_size: int = DEFAULT_BLOCK) -> FeatureBlockSet:
    """Select every block touching the mask, carrying its full occupancy payload."""
    mask.same_spec(occupancy)
    rows, cols = mask.spec.shape
    if block_size < 1 or rows % block_size or cols % block_size:
        raise ValueError(f"grid {rows}x{cols} is not divisible by block size {block_size}")
    br, bc = rows // block_size, cols // block_size
    touched = mask.cells.reshape(br, block_size, bc, block_size).any(axis=(1, 3))
    tiles = occupancy.cells.reshape(br, block_size, bc, block_size)
    blocks = [Block(int(r), int(c), tuple(int(v) for v in tiles[r, :, c, :].ravel()))
              for r, c in zip(*np.nonzero(touched))]  # nonzero is row-major
    return FeatureBlockSet(block_size, tuple(blocks), mask.spec)


def comm_volume(blocks: FeatureBlockSet, bytes_per_cell: int = DEFAULT_BYTES_PER_CELL,
                header_bytes: int = DEFAULT_HEADER_BYTES) -> CommStats:
    per_block = blocks.block_size * blocks.block_size
    n = len(blocks)
    spec = blocks.source_spec
    return CommStats(n * per_block, spec.rows * spec.cols, n * (per_block * bytes_per_cell + header_bytes))


def transmit(blocks: FeatureBlockSet, channel: ChannelModel = ChannelModel()) -> FeatureBlockSet:
    """Drop each block independently; the draw depends only on (seed, block id)."""
    if channel.drop_probability == 0.0:
        return blocks
    kept = []
    for b in blocks.blocks:
        u = np.random.default_rng((channel.seed ^ blocks.block_id(b)) & 0xFFFFFFFFFFFFFFFF).random()
        if u >= channel.drop_probability:
            kept.append(b)
    return FeatureBlockSet(blocks.block_size, tuple(kept), blocks.source_spec)


# --- wire format ------------------------------------------------------------

def encode_blocks(blocks: FeatureBlockSet) -> bytes:
    n = blocks.block_size * blocks.block_size
    payload_fmt = struct.Struct(f"<{n}I")
    parts = [_HEADER.pack(MAGIC, blocks.block_size, len(blocks))]
    for b in blocks.blocks:
        parts.append(_BLOCK_HEAD.pack(b.row, b.col))
        parts.append(payload_fmt.pack(*b.payload))
    return b"".join(parts)


def decode_blocks(data: bytes, spec: GridSpec) -> FeatureBlockSet:
    if len(data) < _HEADER.size:
        raise ValueError("truncated block stream header")
    magic, block_size, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    n = block_size * block_size
    payload_fmt = struct.Struct(f"<{n}I")
    stride = _BLOCK_HEAD.size + payload_fmt.size
    if len(data) != _HEADER.size + count * stride:
        raise ValueError(f"block stream length {len(data)} does not match {count} blocks of {block_size}x{block_size}")
    blocks = []
    off = _HEADER.size
    for _ in range(count):
        row, col = _BLOCK_HEAD.unpack_from(data, off)
        payload = payload_fmt.unpack_from(data, off + _BLOCK_HEAD.size)
        blocks.append(Block(row, col, payload))
        off += stride
    return FeatureBlockSet(block_size, tuple(blocks), spec)


def save_blocks(blocks: FeatureBlockSet, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_blocks(blocks))


def load_blocks(path: Union[str, Path], spec: GridSpec) -> FeatureBlockSet:
    return decode_blocks(Path(path).read_bytes(), spec)
