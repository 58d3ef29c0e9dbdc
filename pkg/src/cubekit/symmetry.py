"""Finite right-angle rotation groups of the cube.

All groups are enumerated from the 48 signed permutation matrices of size 3,
keeping the 24 with determinant +1. Elements are stored as exact integer
matrices; group tables are derived, never hand-written.

Canonical order: identity first, then lexicographic by the flattened matrix.
``compose(a, b)`` is the matrix product ``a @ b``, i.e. ``b`` applied first.
"""
from __future__ import annotations

import csv
import enum
import functools
import io
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

IDENTITY = np.eye(3, dtype=np.int64)


class GroupKind(str, enum.Enum):
    """Supported rotation groups.

    ``C1`` is the trivial group; it turns the group layers into ordinary
    convolutions and is used for the non-equivariant baseline.
    """

    C1 = "C1"
    V = "V"
    T4 = "T4"
    S4 = "S4"

    @classmethod
    def parse(cls, value: "GroupKind | str") -> "GroupKind":
        if isinstance(value, GroupKind):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown group kind {value!r}; expected one of {valid}") from None

    @property
    def expected_order(self) -> int:
        return {"C1": 1, "V": 4, "T4": 12, "S4": 24}[self.value]


@dataclass(frozen=True)
class RotationElement:
    """A right-angle rotation as a 3x3 signed permutation matrix."""

    matrix: tuple[tuple[int, ...], ...]
    index: int

    @property
    def array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=np.int64)

    def axes_and_signs(self) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
        """For each output axis ``i``, the source axis ``j`` and the sign of ``R[i, j]``."""
        m = self.array
        axes = tuple(int(np.flatnonzero(row)[0]) for row in m)
        signs = tuple(int(m[i, j]) for i, j in enumerate(axes))
        return axes, signs  # type: ignore[return-value]


def _as_key(m: np.ndarray) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(v) for v in row) for row in m)


def signed_permutation_matrices() -> list[np.ndarray]:
    """All 48 signed 3x3 permutation matrices."""
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.zeros((3, 3), dtype=np.int64)
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            out.append(m)
    return out


def _det3(m: np.ndarray) -> int:
    # exact integer determinant
    return int(
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def _rot90(axis: int) -> np.ndarray:
    """Quarter turn about a coordinate axis (right-hand rule)."""
    m = np.zeros((3, 3), dtype=np.int64)
    m[axis, axis] = 1
    a, b = [i for i in range(3) if i != axis]
    m[a, b] = -1
    m[b, a] = 1
    return m


def _closure(generators: Iterable[np.ndarray]) -> list[np.ndarray]:
    seen = {_as_key(IDENTITY): IDENTITY}
    frontier = [IDENTITY]
    gens = list(generators)
    while frontier:
        nxt = []
        for a in frontier:
            for g in gens:
                p = a @ g
                k = _as_key(p)
                if k not in seen:
                    seen[k] = p
                    nxt.append(p)
        frontier = nxt
    return list(seen.values())


def _candidate_matrices(kind: GroupKind) -> list[np.ndarray]:
    rotations = [m for m in signed_permutation_matrices() if _det3(m) == 1]
    if kind is GroupKind.S4:
        return rotations
    if kind is GroupKind.C1:
        return [IDENTITY.copy()]
    if kind is GroupKind.V:
        return [m for m in rotations if np.count_nonzero(m - np.diag(np.diag(m))) == 0]
    # T4: products of two quarter turns, closed under composition
    quarter = []
    for axis in range(3):
        q = _rot90(axis)
        quarter.extend([q, q.T])
    pairs = [a @ b for a in quarter for b in quarter]
    return _closure(pairs)


def _canonical_order(mats: Sequence[np.ndarray]) -> list[np.ndarray]:
    ident = _as_key(IDENTITY)
    unique = {_as_key(m): m for m in mats}
    rest = sorted(k for k in unique if k != ident)
    return [IDENTITY.copy()] + [np.array(k, dtype=np.int64) for k in rest]


@dataclass(frozen=True, eq=False)
class FiniteRotationGroup:
    """A finite rotation group with its Cayley and inverse tables.

    ``cayley[i, j]`` is the index of ``elements[i] @ elements[j]``.
    """

    kind: GroupKind
    elements: tuple[RotationElement, ...]
    cayley: np.ndarray
    inverses: np.ndarray
    identity_index: int = 0
    _lookup: dict = field(default_factory=dict, repr=False)

    @property
    def order(self) -> int:
        return len(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def matrices(self) -> np.ndarray:
        """Stacked element matrices, shape ``(|G|, 3, 3)``."""
        return np.stack([e.array for e in self.elements])

    def index_of(self, matrix: np.ndarray) -> int:
        """Index of ``matrix`` in this group; ``KeyError`` if absent."""
        return self._lookup[_as_key(np.asarray(matrix))]

    def __contains__(self, matrix) -> bool:
        return _as_key(np.asarray(matrix)) in self._lookup

    def _check(self, a: int) -> int:
        if not 0 <= int(a) < self.order:
            raise IndexError(f"element index {a} out of range for group {self.kind.value} of order {self.order}")
        return int(a)

    def compose(self, a: int, b: int) -> int:
        return int(self.cayley[self._check(a), self._check(b)])

    def inverse(self, a: int) -> int:
        return int(self.inverses[self._check(a)])

    def permutation_matrix(self, p: int) -> np.ndarray:
        return permutation_matrix(self, p)

    def cayley_csv(self) -> str:
        return cayley_csv(self)


def _build(kind: GroupKind, mats: Sequence[np.ndarray]) -> FiniteRotationGroup:
    ordered = _canonical_order(mats)
    lookup = {_as_key(m): i for i, m in enumerate(ordered)}
    n = len(ordered)
    cayley = np.full((n, n), -1, dtype=np.int64)
    for i, a in enumerate(ordered):
        for j, b in enumerate(ordered):
            cayley[i, j] = lookup.get(_as_key(a @ b), -1)
    inverses = np.array([lookup.get(_as_key(m.T), -1) for m in ordered], dtype=np.int64)
    elements = tuple(RotationElement(_as_key(m), i) for i, m in enumerate(ordered))
    cayley.setflags(write=False)
    inverses.setflags(write=False)
    return FiniteRotationGroup(kind, elements, cayley, inverses, 0, lookup)


@functools.lru_cache(maxsize=None)
def _generate(kind: GroupKind) -> FiniteRotationGroup:
    group = _build(kind, _candidate_matrices(kind))
    if group.order != kind.expected_order:  # pragma: no cover - construction invariant
        raise AssertionError(f"{kind.value} has order {group.order}, expected {kind.expected_order}")
    return group


def generate_group(kind: GroupKind | str) -> FiniteRotationGroup:
    """Build (or fetch the cached) group of the given kind in canonical order."""
    return _generate(GroupKind.parse(kind))


def as_group(group: FiniteRotationGroup | GroupKind | str) -> FiniteRotationGroup:
    if isinstance(group, FiniteRotationGroup):
        return group
    return generate_group(group)


def compose(group: FiniteRotationGroup, a: int, b: int) -> int:
    """Index of ``elements[a] @ elements[b]`` (apply ``b`` first, then ``a``)."""
    return group.compose(a, b)


def inverse(group: FiniteRotationGroup, a: int) -> int:
    return group.inverse(a)


def permutation_matrix(group: FiniteRotationGroup, p: int) -> np.ndarray:
    """Left-regular representation of element ``p``.

    ``P[i, j] = 1`` iff ``elements[i] == p @ elements[j]``, so that
    ``(P @ v)[g] = v[p^-1 g]`` for a vector indexed by group elements.
    """
    p = group._check(p)
    n = group.order
    P = np.zeros((n, n), dtype=np.int64)
    P[group.cayley[p], np.arange(n)] = 1
    return P


def regular_permutation(group: FiniteRotationGroup, p: int) -> np.ndarray:
    """Index array ``src`` with ``out[g] = in[src[g]] = in[p^-1 g]``."""
    p_inv = group.inverse(p)
    return np.asarray(group.cayley[p_inv], dtype=np.int64)


@dataclass
class AxiomReport:
    kind: str
    order: int
    closure: bool
    associativity: bool
    identity: bool
    invertibility: bool
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.closure and self.associativity and self.identity and self.invertibility

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "order": self.order,
            "closure": self.closure,
            "associativity": self.associativity,
            "identity": self.identity,
            "invertibility": self.invertibility,
            "passed": self.passed,
            "failures": list(self.failures),
        }


def verify_group_axioms(group: FiniteRotationGroup, cayley: np.ndarray | None = None) -> AxiomReport:
    """Check the four group axioms on ``group``'s table (or an override table).

    Closure and associativity are checked against the table itself;
    identity and invertibility use the table and the stored inverses.
    Associativity is exhaustive over all ``|G|^3`` triples.
    """
    table = np.asarray(group.cayley if cayley is None else cayley)
    n = group.order
    failures: list[str] = []

    closure = table.shape == (n, n) and bool(np.all((table >= 0) & (table < n)))
    if closure:
        # multiplication agrees with actual matrix products
        mats = group.matrices
        for i in range(n):
            for j in range(n):
                if not np.array_equal(mats[table[i, j]], mats[i] @ mats[j]):
                    closure = False
                    failures.append(f"closure: table[{i},{j}]={table[i, j]} is not elements[{i}]@elements[{j}]")
                    break
            if not closure:
                break
    else:
        failures.append("closure: table contains entries outside the element set")

    associativity = closure
    if closure:
        left = table[table, :]  # left[i, j, k] = (i j) k
        right = table[:, table]  # right[i, j, k] = i (j k)
        bad = np.argwhere(left != right)
        if bad.size:
            associativity = False
            i, j, k = bad[0]
            failures.append(f"associativity: ({i}{j}){k} != {i}({j}{k})")
    else:
        failures.append("associativity: not checked, closure failed")

    e = group.identity_index
    ar = np.arange(n)
    identity = closure and bool(np.array_equal(table[e], ar) and np.array_equal(table[:, e], ar))
    identity = identity and np.array_equal(group.elements[e].array, IDENTITY)
    if not identity:
        failures.append("identity: row/column of the identity is not the identity permutation")

    inv = group.inverses
    invertibility = closure and bool(np.all((inv >= 0) & (inv < n)))
    if invertibility:
        invertibility = bool(np.all(table[ar, inv] == e) and np.all(table[inv, ar] == e))
    if not invertibility:
        failures.append("invertibility: some element has no two-sided inverse")

    return AxiomReport(group.kind.value, n, closure, associativity, identity, invertibility, failures)


def latin_square(table: np.ndarray) -> bool:
    """True iff every row and column of ``table`` is a permutation of ``0..n-1``."""
    table = np.asarray(table)
    n = table.shape[0]
    target = np.arange(n)
    rows = all(np.array_equal(np.sort(r), target) for r in table)
    cols = all(np.array_equal(np.sort(c), target) for c in table.T)
    return rows and cols


def is_subgroup(sub: FiniteRotationGroup, sup: FiniteRotationGroup) -> bool:
    """True iff every element of ``sub`` lies in ``sup`` and ``sub`` is closed."""
    if sub.order > sup.order:
        return False
    try:
        idx = [sup.index_of(e.array) for e in sub.elements]
    except KeyError:
        return False
    members = set(idx)
    return all(sup.compose(a, b) in members for a in idx for b in idx)


def is_commutative(group: FiniteRotationGroup) -> bool:
    return bool(np.array_equal(group.cayley, group.cayley.T))


def cayley_csv(group: FiniteRotationGroup) -> str:
    """Cayley table as CSV: row = left operand, column = right operand."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([""] + list(range(group.order)))
    for i, row in enumerate(group.cayley):
        writer.writerow([i] + [int(v) for v in row])
    return buf.getvalue()


def export_cayley_csv(group: FiniteRotationGroup, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(cayley_csv(group))
