"""Sparsity block identifiers and pruning masks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple


class BlockId(NamedTuple):
    """One filter ``W[layer][output_map, input_map]``.

    Fully-connected layers have a single input map, so ``input_map`` is
    always 0 there and the block is the incoming weight row of one unit.
    """

    layer: int
    input_map: int
    output_map: int

    def __str__(self):
        return f"{self.layer},{self.input_map},{self.output_map}"


@dataclass(frozen=True)
class Mask:
    pruned: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "pruned", frozenset(BlockId(*b) for b in self.pruned))

    @classmethod
    def of(cls, blocks: Iterable) -> "Mask":
        return cls(frozenset(blocks))

    def __len__(self):
        return len(self.pruned)

    def __contains__(self, block):
        return BlockId(*block) in self.pruned

    def __or__(self, other: "Mask") -> "Mask":
        return Mask(self.pruned | other.pruned)

    def layers(self) -> set:
        return {b.layer for b in self.pruned}

    def for_layer(self, layer: int) -> list:
        return sorted(b for b in self.pruned if b.layer == layer)

    def to_text(self) -> str:
        """Export as sorted ``layer,input_map,output_map`` lines."""
        return "".join(f"{b}\n" for b in sorted(self.pruned))

    @classmethod
    def from_text(cls, text: str) -> "Mask":
        blocks = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"mask line {lineno}: expected 'layer,input_map,output_map', got {line!r}")
            blocks.append(BlockId(*(int(p) for p in parts)))
        return cls.of(blocks)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Mask":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())
