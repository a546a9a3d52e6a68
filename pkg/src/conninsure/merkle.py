"""Padded, order-randomized Merkle tree over a cycle's vouchers.

The tree always has exactly N = |C| leaves: real vouchers are topped up
with pseudorandom padding vouchers and the whole set is permuted, so the
committed root and any single audit path reveal only the list size.  The
tree is fully regenerable from (seed, real vouchers, N), letting the
client discard it after submission.

Leaf digest: h(0x00 || voucher encoding); internal node: h(0x01 || L || R).
A tree of arbitrary size n splits at the largest power of two strictly
below n, log-structured.
"""

from dataclasses import dataclass, field

from .crypto import hash_h, prf
from .errors import CapacityError, NotFoundError, ParameterError
from .model import PAD_DOMAIN, InclusionProof, Voucher
from .wire import u32

_LEAF_PREFIX = b"\x00"
_NODE_PREFIX = b"\x01"


def leaf_digest(voucher: Voucher) -> bytes:
    return hash_h(_LEAF_PREFIX + voucher.to_bytes())


def node_digest(left: bytes, right: bytes) -> bytes:
    return hash_h(_NODE_PREFIX + left + right)


def _split(n: int) -> int:
    """Largest power of two strictly less than n (n >= 2)."""
    return 1 << (n - 1).bit_length() - 1


class _PrfStream:
    """Deterministic byte stream PRF(seed, label || counter)."""

    def __init__(self, seed: bytes, label: bytes):
        self._seed = seed
        self._label = label
        self._counter = 0
        self._buf = b""

    def take(self, n: int) -> bytes:
        while len(self._buf) < n:
            self._buf += prf(self._seed, self._label + u32(self._counter))
            self._counter += 1
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection sampling."""
        bits = (bound - 1).bit_length() or 1
        nbytes = (bits + 7) // 8
        shift = nbytes * 8 - bits
        while True:
            v = int.from_bytes(self.take(nbytes), "big") >> shift
            if v < bound:
                return v


def pad_voucher(customer: int, cycleid: bytes, seed: bytes, index: int) -> Voucher:
    """Format-valid filler leaf; the domain is unresolvable by construction."""
    return Voucher(customer, PAD_DOMAIN, cycleid, prf(seed, b"pad" + u32(index)))


def permutation(n: int, seed: bytes) -> list[int]:
    """Seed-derived uniform permutation (Fisher-Yates over a PRF stream)."""
    stream = _PrfStream(seed, b"perm")
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = stream.below(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


@dataclass
class PaddedMerkleTree:
    n: int
    seed: bytes
    root: bytes
    leaves: list[bytes]
    _positions: dict = field(repr=False, default_factory=dict)
    _nodes: dict = field(repr=False, default_factory=dict)


def build_tree(
    vouchers: list[Voucher],
    n: int,
    seed: bytes,
    customer: int,
    cycleid: bytes,
) -> PaddedMerkleTree:
    """Build the padded tree for one cycle.

    n must equal the cycle's certificate-list size; it bounds the real
    voucher count and fixes the leaf count regardless of it.
    """
    if n < 1:
        raise ParameterError("tree must have at least one leaf")
    if len(vouchers) > n:
        raise CapacityError(f"{len(vouchers)} vouchers exceed capacity {n}")
    for v in vouchers:
        if v.customer != customer or v.cycleid != cycleid:
            raise ParameterError("voucher does not belong to this cycle")

    entries = list(vouchers) + [
        pad_voucher(customer, cycleid, seed, i) for i in range(n - len(vouchers))
    ]
    order = permutation(n, seed)
    ordered = [None] * n
    for src, dst in enumerate(order):
        ordered[dst] = entries[src]

    leaves = [leaf_digest(v) for v in ordered]
    nodes: dict = {}

    def build(lo: int, hi: int) -> bytes:
        if hi - lo == 1:
            return leaves[lo]
        k = _split(hi - lo)
        digest = node_digest(build(lo, lo + k), build(lo + k, hi))
        nodes[(lo, hi)] = digest
        return digest

    root = build(0, n)
    positions = {
        vouchers[i].to_bytes(): order[i] for i in range(len(vouchers))
    }
    return PaddedMerkleTree(n, seed, root, leaves, positions, nodes)


def prove_inclusion(tree: PaddedMerkleTree, voucher: Voucher) -> InclusionProof:
    """Audit path for a real (non-padding) leaf."""
    pos = tree._positions.get(voucher.to_bytes())
    if pos is None:
        raise NotFoundError("voucher is not a real leaf of this tree")

    def subtree(lo: int, hi: int) -> bytes:
        if hi - lo == 1:
            return tree.leaves[lo]
        return tree._nodes[(lo, hi)]

    path = []
    lo, hi = 0, tree.n
    while hi - lo > 1:
        k = _split(hi - lo)
        if pos < lo + k:
            path.append((subtree(lo + k, hi), False))
            hi = lo + k
        else:
            path.append((subtree(lo, lo + k), True))
            lo = lo + k
    path.reverse()
    return InclusionProof(leaf_index=pos, path=tuple(path))


def verify_inclusion(root: bytes, leaf: bytes, proof: InclusionProof) -> bool:
    """Recompute the root from a leaf digest and its audit path."""
    acc = leaf
    for sibling, sibling_is_left in proof.path:
        acc = node_digest(sibling, acc) if sibling_is_left else node_digest(acc, sibling)
    return acc == root
