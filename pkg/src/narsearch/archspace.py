"""Architecture search space: operator vocabulary, skip topology, and the
architecture-vector encoding with its text/JSON serialization.

An architecture is a per-node operator index plus a bit per candidate skip
edge. Candidate edges connect node j to any node t at least two positions
earlier (t <= j-2), so a chain network plus optional long-range skips. All
types here are immutable; operators are opaque labels whose semantics only
the toy supernet assigns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


class ArchSpaceError(ValueError):
    """Base class for search-space and encoding errors."""


class MalformedVectorError(ArchSpaceError):
    """Text does not look like a bracketed comma-separated integer list."""


class OperatorIndexError(ArchSpaceError):
    """An operator index falls outside [0, K)."""


class VectorLengthError(ArchSpaceError):
    """The vector length disagrees with the node count."""


@dataclass(frozen=True)
class OperatorDescriptor:
    name: str
    parametric: bool


@dataclass(frozen=True)
class OperatorVocabulary:
    """Ordered operator candidates; index in `entries` is the encoding."""

    entries: tuple[OperatorDescriptor, ...]

    def __post_init__(self):
        if len(self.entries) < 2:
            raise ArchSpaceError("vocabulary needs at least 2 operators")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ArchSpaceError(f"duplicate operator names: {names}")

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)


def _vocab(*pairs: tuple[str, bool]) -> OperatorVocabulary:
    return OperatorVocabulary(tuple(OperatorDescriptor(n, p) for n, p in pairs))


# Full candidate set: convolution-like ops are parametric, pooling ops are not.
DEFAULT_VOCAB = _vocab(
    ("conv3x3", True),
    ("conv5x5", True),
    ("depthwise3x3", True),
    ("depthwise5x5", True),
    ("max3x3", False),
    ("avg3x3", False),
)

# Reduced set for refining conv3x3-only baselines: candidates with no more
# parameters than the baseline operator. Index order matches the 0..3 encoding
# used in architecture-vector tables.
FACE_VOCAB = _vocab(
    ("conv3x3", True),
    ("depthwise3x3", True),
    ("max3x3", False),
    ("avg3x3", False),
)

VOCAB_PRESETS = {"default6": DEFAULT_VOCAB, "face4": FACE_VOCAB}


@dataclass(frozen=True)
class SkipTopology:
    """Candidate skip edges (t, j), 1-based nodes, ordered by (j, t)."""

    n_nodes: int
    candidate_edges: tuple[tuple[int, int], ...]

    @property
    def n_edges(self) -> int:
        return len(self.candidate_edges)


def candidate_edges(n_nodes: int) -> SkipTopology:
    """Build the canonical skip topology for `n_nodes` chained nodes.

    Node j can receive a skip from node t whenever t <= j-2, so nodes 1 and 2
    have no incoming candidates and the count is (n-1)(n-2)/2.
    """
    if n_nodes < 1:
        raise ArchSpaceError(f"n_nodes must be >= 1, got {n_nodes}")
    edges = tuple((t, j) for j in range(3, n_nodes + 1) for t in range(1, j - 1))
    return SkipTopology(n_nodes, edges)


@dataclass(frozen=True)
class SearchSpaceSpec:
    vocab: OperatorVocabulary
    topology: SkipTopology
    frozen_skips: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.frozen_skips is not None:
            if len(self.frozen_skips) != self.topology.n_edges:
                raise ArchSpaceError(
                    f"frozen_skips has {len(self.frozen_skips)} bits, "
                    f"topology has {self.topology.n_edges} candidate edges"
                )
            if any(b not in (0, 1) for b in self.frozen_skips):
                raise ArchSpaceError("frozen_skips bits must be 0 or 1")

    @property
    def n_nodes(self) -> int:
        return self.topology.n_nodes

    @property
    def n_ops(self) -> int:
        return self.vocab.size

    @property
    def n_edges(self) -> int:
        return self.topology.n_edges

    @property
    def fixed_skip(self) -> bool:
        return self.frozen_skips is not None


def make_space(
    n_nodes: int,
    vocab: OperatorVocabulary = DEFAULT_VOCAB,
    frozen_skips: tuple[int, ...] | None = None,
) -> SearchSpaceSpec:
    return SearchSpaceSpec(vocab, candidate_edges(n_nodes), frozen_skips)


def residual_skip_mask(topology: SkipTopology) -> tuple[int, ...]:
    """Mask with a skip over exactly one node: edges (j-2, j) set, rest clear.

    Emulates the skip pattern of a plain residual chain as a frozen-skip
    starting point.
    """
    return tuple(1 if t == j - 2 else 0 for (t, j) in topology.candidate_edges)


SKIP_MASK_PRESETS = {"residual": residual_skip_mask, "none": lambda topo: (0,) * topo.n_edges}


@dataclass(frozen=True)
class ArchitectureVector:
    """Per-node operator indices plus skip bits aligned with candidate edges."""

    ops: tuple[int, ...]
    skips: tuple[int, ...]


def cardinality(spec: SearchSpaceSpec) -> tuple[int, int]:
    """Exact (operator_count, skip_count) of the space, as Python ints.

    operator_count = K^n; skip_count = 2^edges, or 1 when skips are frozen.
    """
    op_count = spec.n_ops ** spec.n_nodes
    skip_count = 1 if spec.fixed_skip else 2 ** spec.n_edges
    return op_count, skip_count


def parse_arch_vector(text: str, spec: SearchSpaceSpec) -> ArchitectureVector:
    """Parse the bracketed text format, e.g. "[0,1,2,0]".

    The text carries operators only; skips are taken from the spec's frozen
    mask when present, otherwise all clear. Whitespace is tolerated anywhere.
    """
    stripped = "".join(text.split())
    if not (stripped.startswith("[") and stripped.endswith("]")):
        raise MalformedVectorError(f"expected bracketed vector, got {text!r}")
    body = stripped[1:-1]
    if body == "":
        ops: tuple[int, ...] = ()
    else:
        parts = body.split(",")
        try:
            ops = tuple(int(p) for p in parts)
        except ValueError:
            raise MalformedVectorError(f"non-integer entry in {text!r}") from None
    if len(ops) != spec.n_nodes:
        raise VectorLengthError(
            f"vector has {len(ops)} entries, space has {spec.n_nodes} nodes"
        )
    for i, k in enumerate(ops):
        if not 0 <= k < spec.n_ops:
            raise OperatorIndexError(
                f"operator index {k} at node {i + 1} out of range [0, {spec.n_ops})"
            )
    skips = spec.frozen_skips if spec.fixed_skip else (0,) * spec.n_edges
    return ArchitectureVector(ops, skips)


def serialize_arch_vector(arch: ArchitectureVector) -> str:
    """Render the ops component in the bracketed text format."""
    return "[" + ",".join(str(k) for k in arch.ops) + "]"


def validate(arch: ArchitectureVector, spec: SearchSpaceSpec) -> list[str]:
    """Return every invariant violation found; empty list means valid."""
    violations = []
    if len(arch.ops) != spec.n_nodes:
        violations.append(
            f"ops length {len(arch.ops)} != node count {spec.n_nodes}"
        )
    for i, k in enumerate(arch.ops):
        if not 0 <= k < spec.n_ops:
            violations.append(f"operator index {k} at node {i + 1} out of range")
    n_edges = spec.n_edges
    if len(arch.skips) > n_edges:
        violations.append(
            f"illegal edge: {len(arch.skips) - n_edges} skip bit(s) beyond the "
            f"{n_edges} candidate edges"
        )
    elif len(arch.skips) < n_edges:
        violations.append(f"missing skip bits: {len(arch.skips)} of {n_edges}")
    if any(b not in (0, 1) for b in arch.skips):
        violations.append("skip bits must be 0 or 1")
    if spec.fixed_skip and tuple(arch.skips) != tuple(spec.frozen_skips):
        violations.append("skips differ from the frozen mask in fixed-skip mode")
    return violations


def skips_to_hex(bits: tuple[int, ...]) -> str:
    """Pack skip bits to lowercase hex, bit i at byte i//8, LSB-first."""
    n = len(bits)
    buf = bytearray((n + 7) // 8)
    for i, b in enumerate(bits):
        if b:
            buf[i // 8] |= 1 << (i % 8)
    return buf.hex()


def skips_from_hex(text: str, n_edges: int) -> tuple[int, ...]:
    if len(text) != 2 * ((n_edges + 7) // 8):
        raise ArchSpaceError(
            f"hex skip mask {text!r} has wrong length for {n_edges} edges"
        )
    buf = bytes.fromhex(text)
    bits = tuple((buf[i // 8] >> (i % 8)) & 1 for i in range(n_edges))
    return bits


def arch_to_json(arch: ArchitectureVector) -> dict:
    return {"ops": serialize_arch_vector(arch), "skips": skips_to_hex(arch.skips)}


def arch_from_json(obj: dict, spec: SearchSpaceSpec) -> ArchitectureVector:
    base = parse_arch_vector(obj["ops"], spec)
    skips = skips_from_hex(obj["skips"], spec.n_edges)
    return ArchitectureVector(base.ops, skips)


def space_to_json(spec: SearchSpaceSpec) -> dict:
    return {
        "n_nodes": spec.n_nodes,
        "operators": [{"name": e.name, "parametric": e.parametric} for e in spec.vocab.entries],
        "frozen_skips": None if spec.frozen_skips is None else skips_to_hex(spec.frozen_skips),
    }


def space_from_json(obj: dict) -> SearchSpaceSpec:
    vocab = OperatorVocabulary(
        tuple(OperatorDescriptor(o["name"], bool(o["parametric"])) for o in obj["operators"])
    )
    topo = candidate_edges(int(obj["n_nodes"]))
    frozen = obj.get("frozen_skips")
    skips = None if frozen is None else skips_from_hex(frozen, topo.n_edges)
    return SearchSpaceSpec(vocab, topo, skips)


def space_to_json_str(spec: SearchSpaceSpec) -> str:
    return json.dumps(space_to_json(spec), sort_keys=True)
