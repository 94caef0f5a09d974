"""
Molecular graphs and a hand-written SMILES reader/writer.

Supports the organic subset (B C N O P S F Cl Br I), aromatic lowercase atoms,
bracket atoms with charge and hydrogen count, ring closures (digits and %nn),
branches, the bond symbols - = # : and the attachment-point wildcard ``*``.
Stereo marks are accepted and dropped. Multi-fragment input is rejected.
"""

import enum
import re
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from models.errors import (InvalidInputError, MultiFragmentError, SmilesSyntaxError, UnclosedBranchError,
                           UnclosedRingError, ValenceError)

ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
DUMMY = "*"

# allowed valences, lowest first
VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

# bracket contents: isotope, symbol, chirality, hydrogens, charge, atom class
BRACKET_PATTERN = re.compile(
    r"^\[(?P<isotope>\d+)?(?P<symbol>\*|[A-Z][a-z]?|se|as|[bcnops])"
    r"(?P<chiral>@{1,2}(?:TH[12]|AL[12]|SP[1-3]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<hcount>H\d*)?(?P<charge>[+-]+\d*)?(?::\d+)?\]$"
)


class BondOrder(enum.Enum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def symbol(self) -> str:
        return {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}[self]

    @property
    def valence(self) -> int:
        """Integer valence contribution; aromatic bonds are handled per atom."""
        return 1 if self is BondOrder.AROMATIC else self.value


BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC,
                "/": BondOrder.SINGLE, "\\": BondOrder.SINGLE}


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    aromatic: bool = False
    hydrogens: int = 0

    @property
    def is_dummy(self) -> bool:
        return self.element == DUMMY

    @property
    def is_hydrogen(self) -> bool:
        return self.element == "H"


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: BondOrder = BondOrder.SINGLE
    ring: bool = False

    def other(self, atom: int) -> int:
        return self.j if atom == self.i else self.i


def implicit_hydrogens(atom: Atom, bond_orders: Sequence[BondOrder]) -> Optional[int]:
    """Hydrogens an unbracketed atom carries at the lowest valence that fits.

    Returns None when no allowed valence accommodates the bonds.
    """
    if atom.is_dummy or atom.element not in VALENCES:
        return 0
    allowed = VALENCES[atom.element]
    aromatic_bonds = sum(1 for order in bond_orders if order is BondOrder.AROMATIC)
    other = sum(order.valence for order in bond_orders if order is not BondOrder.AROMATIC)
    if atom.aromatic:
        target = allowed[0]
        used = aromatic_bonds + other + (1 if aromatic_bonds else 0)
        if used > target:
            used = aromatic_bonds + other
        return target - used if used <= target else None
    used = aromatic_bonds + other
    for valence in allowed:
        if valence >= used:
            return valence - used
    return None


@dataclass(frozen=True)
class MolGraph:
    atoms: Tuple[Atom, ...]
    bonds: Tuple[Bond, ...]

    def __post_init__(self):
        atoms = tuple(self.atoms)
        bonds = tuple(self.bonds)
        if not atoms:
            raise InvalidInputError("Molecule has no atoms")
        seen = set()
        for bond in bonds:
            if not (0 <= bond.i < len(atoms) and 0 <= bond.j < len(atoms)):
                raise InvalidInputError(f"Bond ({bond.i}, {bond.j}) references a missing atom")
            if bond.i == bond.j:
                raise InvalidInputError(f"Bond from atom {bond.i} to itself")
            key = (min(bond.i, bond.j), max(bond.i, bond.j))
            if key in seen:
                raise InvalidInputError(f"Duplicate bond between atoms {key[0]} and {key[1]}")
            seen.add(key)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "bonds", bonds)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @cached_property
    def adjacency(self) -> Tuple[Tuple[Tuple[int, int], ...], ...]:
        """Per atom: ((neighbour, bond index), ...) in bond order."""
        table: List[List[Tuple[int, int]]] = [[] for _ in self.atoms]
        for k, bond in enumerate(self.bonds):
            table[bond.i].append((bond.j, k))
            table[bond.j].append((bond.i, k))
        return tuple(tuple(row) for row in table)

    @cached_property
    def _bond_index(self) -> Dict[Tuple[int, int], int]:
        return {(min(b.i, b.j), max(b.i, b.j)): k for k, b in enumerate(self.bonds)}

    def neighbors(self, atom: int) -> List[int]:
        return [n for n, _ in self.adjacency[atom]]

    def degree(self, atom: int) -> int:
        return len(self.adjacency[atom])

    def heavy_degree(self, atom: int) -> int:
        """Neighbours that are not explicit hydrogens (attachment points count as heavy)."""
        return sum(1 for n, _ in self.adjacency[atom] if not self.atoms[n].is_hydrogen)

    def bond_between(self, a: int, b: int) -> Optional[Bond]:
        k = self._bond_index.get((min(a, b), max(a, b)))
        return None if k is None else self.bonds[k]

    def bond_orders(self, atom: int) -> List[BondOrder]:
        return [self.bonds[k].order for _, k in self.adjacency[atom]]

    def is_ring_atom(self, atom: int) -> bool:
        return any(self.bonds[k].ring for _, k in self.adjacency[atom])

    @cached_property
    def components(self) -> Tuple[Tuple[int, ...], ...]:
        seen = [False] * self.n_atoms
        found = []
        for start in range(self.n_atoms):
            if seen[start]:
                continue
            stack, members = [start], []
            seen[start] = True
            while stack:
                atom = stack.pop()
                members.append(atom)
                for n in self.neighbors(atom):
                    if not seen[n]:
                        seen[n] = True
                        stack.append(n)
            found.append(tuple(sorted(members)))
        return tuple(found)

    @property
    def is_connected(self) -> bool:
        return len(self.components) == 1

    def with_ring_flags(self) -> "MolGraph":
        return MolGraph(self.atoms, tuple(replace(b, ring=r) for b, r in zip(self.bonds, _ring_bond_flags(self))))

    def subgraph(self, indices) -> "MolGraph":
        """Induced subgraph renumbered in ascending index order.

        Atoms that lose bonds gain hydrogens so the fragment stays a valid molecule.
        """
        keep = sorted(set(int(i) for i in indices))
        if not keep:
            raise InvalidInputError("Subgraph needs at least one atom")
        if keep[0] < 0 or keep[-1] >= self.n_atoms:
            raise InvalidInputError("Subgraph references atoms outside the molecule")
        new_index = {old: new for new, old in enumerate(keep)}
        lost = {old: 0 for old in keep}
        bonds = []
        for bond in self.bonds:
            inside_i, inside_j = bond.i in new_index, bond.j in new_index
            if inside_i and inside_j:
                bonds.append(Bond(new_index[bond.i], new_index[bond.j], bond.order))
            elif inside_i and not self.atoms[bond.j].is_dummy:
                lost[bond.i] += bond.order.valence
            elif inside_j and not self.atoms[bond.i].is_dummy:
                lost[bond.j] += bond.order.valence
        atoms = tuple(replace(self.atoms[old], hydrogens=self.atoms[old].hydrogens + lost[old]) for old in keep)
        return MolGraph(atoms, tuple(bonds)).with_ring_flags()

    def permuted(self, order: Sequence[int]) -> "MolGraph":
        """Same molecule with atom `order[k]` moved to position k."""
        if sorted(order) != list(range(self.n_atoms)):
            raise InvalidInputError("Permutation must cover every atom exactly once")
        position = {old: new for new, old in enumerate(order)}
        atoms = tuple(self.atoms[old] for old in order)
        bonds = tuple(replace(b, i=position[b.i], j=position[b.j]) for b in self.bonds)
        return MolGraph(atoms, bonds)


def _ring_bond_flags(mol: MolGraph) -> List[bool]:
    """A bond is in a ring exactly when it is not a bridge."""
    flags = []
    for k, bond in enumerate(mol.bonds):
        stack, seen = [bond.i], {bond.i}
        found = False
        while stack and not found:
            atom = stack.pop()
            for n, idx in mol.adjacency[atom]:
                if idx == k or n in seen:
                    continue
                if n == bond.j:
                    found = True
                    break
                seen.add(n)
                stack.append(n)
        flags.append(found)
    return flags


# --- tokenizer -----------------------------------------------------------------------------------

@enum.unique
class TokenType(enum.Enum):
    ATOM = 1
    BOND = 2
    BRANCH_START = 3
    BRANCH_END = 4
    RING_NUM = 5
    DOT = 6


def tokenize(smiles: str) -> Iterator[Tuple[TokenType, str, int]]:
    """Yield (type, text, offset) tokens; raises SmilesSyntaxError on unknown characters."""
    i, n = 0, len(smiles)
    while i < n:
        char = smiles[i]
        if char == "[":
            end = smiles.find("]", i)
            if end < 0:
                raise SmilesSyntaxError("Unterminated bracket atom", i)
            yield TokenType.ATOM, smiles[i:end + 1], i
            i = end + 1
        elif smiles.startswith(("Cl", "Br"), i):
            yield TokenType.ATOM, smiles[i:i + 2], i
            i += 2
        elif char in ORGANIC_SUBSET or char in AROMATIC_ORGANIC or char == DUMMY:
            yield TokenType.ATOM, char, i
            i += 1
        elif char in BOND_SYMBOLS:
            yield TokenType.BOND, char, i
            i += 1
        elif char == "(":
            yield TokenType.BRANCH_START, char, i
            i += 1
        elif char == ")":
            yield TokenType.BRANCH_END, char, i
            i += 1
        elif char == "%":
            digits = smiles[i + 1:i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesSyntaxError("Ring closure '%' needs two digits", i)
            yield TokenType.RING_NUM, digits, i
            i += 3
        elif char.isdigit():
            yield TokenType.RING_NUM, char, i
            i += 1
        elif char == ".":
            yield TokenType.DOT, char, i
            i += 1
        else:
            raise SmilesSyntaxError(f"Unexpected character '{char}'", i)


def parse_atom(token: str, offset: int) -> Tuple[Atom, bool]:
    """Atom for a token plus whether its hydrogen count is explicit (bracket)."""
    if not token.startswith("["):
        if token == DUMMY:
            return Atom(DUMMY), False
        aromatic = token.islower()
        return Atom(token.capitalize() if aromatic else token, aromatic=aromatic), False

    match = BRACKET_PATTERN.match(token)
    if not match:
        raise SmilesSyntaxError(f"Malformed bracket atom '{token}'", offset)
    symbol = match.group("symbol")
    aromatic = symbol.islower()
    element = DUMMY if symbol == DUMMY else symbol.capitalize()

    hydrogens = 0
    if match.group("hcount"):
        hydrogens = int(match.group("hcount")[1:] or 1)

    charge = 0
    text = match.group("charge")
    if text:
        sign = 1 if text[0] == "+" else -1
        if text[-1].isdigit():
            charge = sign * int(text.lstrip("+-"))
        else:
            charge = sign * len(text)
    return Atom(element, charge, aromatic, hydrogens), True


def parse_smiles(text: str) -> MolGraph:
    """Parse one SMILES string into a MolGraph with hydrogens and ring flags filled in."""
    if text is None:
        raise SmilesSyntaxError("Empty SMILES", 0)
    smiles = text.strip()
    if not smiles:
        raise SmilesSyntaxError("Empty SMILES", 0)

    atoms: List[Atom] = []
    explicit: List[bool] = []
    bonds: Dict[Tuple[int, int], Tuple[int, int, Optional[BondOrder]]] = {}
    previous: Optional[int] = None
    pending: Optional[Tuple[BondOrder, int]] = None
    branches: List[Tuple[int, int]] = []
    rings: Dict[str, Tuple[int, Optional[BondOrder], int]] = {}
    last_token = None

    def add_bond(a: int, b: int, order: Optional[BondOrder], offset: int) -> None:
        key = (min(a, b), max(a, b))
        if a == b or key in bonds:
            raise SmilesSyntaxError("Ring closure duplicates an existing bond", offset)
        bonds[key] = (a, b, order)

    for kind, token, offset in tokenize(smiles):
        if kind is TokenType.ATOM:
            atom, is_explicit = parse_atom(token, offset)
            atoms.append(atom)
            explicit.append(is_explicit)
            index = len(atoms) - 1
            if previous is not None:
                add_bond(previous, index, pending[0] if pending else None, offset)
            elif pending is not None:
                raise SmilesSyntaxError("Bond symbol without a preceding atom", pending[1])
            pending = None
            previous = index
        elif kind is TokenType.BOND:
            if previous is None or pending is not None:
                raise SmilesSyntaxError(f"Misplaced bond symbol '{token}'", offset)
            pending = (BOND_SYMBOLS[token], offset)
        elif kind is TokenType.BRANCH_START:
            if previous is None or pending is not None:
                raise SmilesSyntaxError("Branch must follow an atom", offset)
            branches.append((previous, offset))
        elif kind is TokenType.BRANCH_END:
            if not branches:
                raise SmilesSyntaxError("Unmatched ')'", offset)
            if pending is not None or last_token is TokenType.BRANCH_START:
                raise SmilesSyntaxError("Empty branch or dangling bond", offset)
            previous, _ = branches.pop()
        elif kind is TokenType.RING_NUM:
            if previous is None:
                raise SmilesSyntaxError("Ring closure must follow an atom", offset)
            order = pending[0] if pending else None
            if token in rings:
                start, start_order, _ = rings.pop(token)
                if order and start_order and order is not start_order:
                    raise SmilesSyntaxError(f"Conflicting bond orders on ring closure {token}", offset)
                add_bond(start, previous, order or start_order, offset)
            else:
                rings[token] = (previous, order, offset)
            pending = None
        else:
            raise MultiFragmentError("Multi-fragment SMILES ('.') is not supported", offset)
        last_token = kind

    if pending is not None:
        raise SmilesSyntaxError("SMILES ends with a bond symbol", pending[1])
    if branches:
        raise UnclosedBranchError("Unclosed branch", branches[-1][1])
    if rings:
        first = min(offset for _, _, offset in rings.values())
        raise UnclosedRingError("Unclosed ring", first)

    bond_list, implicit = [], []
    for a, b, order in bonds.values():
        implicit.append(order is None)
        if order is None:
            order = BondOrder.AROMATIC if atoms[a].aromatic and atoms[b].aromatic else BondOrder.SINGLE
        bond_list.append(Bond(a, b, order))
    graph = MolGraph(tuple(atoms), tuple(bond_list))
    # an unmarked bond joining two aromatic rings is single
    ring = _ring_bond_flags(graph)
    bond_list = [replace(b, order=BondOrder.SINGLE) if implicit[k] and not ring[k] else b
                 for k, b in enumerate(bond_list)]
    graph = MolGraph(tuple(atoms), tuple(bond_list))

    filled = []
    for index, atom in enumerate(graph.atoms):
        if explicit[index]:
            filled.append(atom)
            continue
        count = implicit_hydrogens(atom, graph.bond_orders(index))
        if count is None:
            raise ValenceError(f"Valence exceeded on {atom.element} atom {index}")
        filled.append(replace(atom, hydrogens=count))
    return MolGraph(tuple(filled), graph.bonds).with_ring_flags()


# --- writer --------------------------------------------------------------------------------------

def atom_symbol(mol: MolGraph, index: int) -> str:
    atom = mol.atoms[index]
    if atom.is_dummy and atom.charge == 0 and atom.hydrogens == 0:
        return DUMMY
    symbol = atom.element.lower() if atom.aromatic else atom.element
    organic = (atom.element in ORGANIC_SUBSET and (not atom.aromatic or symbol in AROMATIC_ORGANIC))
    if organic and atom.charge == 0 and implicit_hydrogens(atom, mol.bond_orders(index)) == atom.hydrogens:
        return symbol
    text = "[" + symbol
    if atom.hydrogens:
        text += "H" if atom.hydrogens == 1 else f"H{atom.hydrogens}"
    if atom.charge:
        sign = "+" if atom.charge > 0 else "-"
        text += sign if abs(atom.charge) == 1 else f"{sign}{abs(atom.charge)}"
    return text + "]"


def _bond_symbol(mol: MolGraph, bond: Bond) -> str:
    both_aromatic = mol.atoms[bond.i].aromatic and mol.atoms[bond.j].aromatic
    if bond.order is BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    if bond.order is BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    return bond.order.symbol


def _ring_label(number: int) -> str:
    return str(number) if number < 10 else f"%{number:02d}"


def write_smiles(mol: MolGraph, ranks: Optional[Sequence[int]] = None) -> str:
    """SMILES for `mol`, traversing neighbours in ascending `ranks` (atom index by default)."""
    ranks = list(range(mol.n_atoms)) if ranks is None else list(ranks)
    visited = [False] * mol.n_atoms
    children: Dict[int, List[Tuple[int, int]]] = {i: [] for i in range(mol.n_atoms)}
    ring_bonds: Dict[int, List[int]] = {i: [] for i in range(mol.n_atoms)}
    closed = set()

    def plan(atom: int, parent_bond: Optional[int]) -> None:
        visited[atom] = True
        for n, k in sorted(mol.adjacency[atom], key=lambda item: ranks[item[0]]):
            if k == parent_bond:
                continue
            if visited[n]:
                if k not in closed:
                    closed.add(k)
                    ring_bonds[n].append(k)
                    ring_bonds[atom].append(k)
            else:
                children[atom].append((n, k))
                plan(n, k)

    digits: Dict[int, int] = {}
    in_use = set()

    def emit(atom: int) -> str:
        parts = [atom_symbol(mol, atom)]
        released = []
        for k in ring_bonds[atom]:
            if k in digits:
                parts.append(_ring_label(digits[k]))
                released.append(digits.pop(k))
            else:
                number = 1
                while number in in_use:
                    number += 1
                in_use.add(number)
                digits[k] = number
                parts.append(_bond_symbol(mol, mol.bonds[k]) + _ring_label(number))
        in_use.difference_update(released)
        branch = children[atom]
        for position, (n, k) in enumerate(branch):
            text = _bond_symbol(mol, mol.bonds[k]) + emit(n)
            parts.append(text if position == len(branch) - 1 else f"({text})")
        return "".join(parts)

    fragments = []
    for component in mol.components:
        start = min(component, key=lambda i: ranks[i])
        plan(start, None)
        fragments.append(emit(start))
    return ".".join(sorted(fragments))


# --- canonical form ------------------------------------------------------------------------------

CANONICAL_SEARCH_LIMIT = 512


def _dense_rank(keys: Sequence) -> List[int]:
    ordered = sorted(set(keys))
    lookup = {key: r for r, key in enumerate(ordered)}
    return [lookup[key] for key in keys]


def atom_invariants(mol: MolGraph) -> List[Tuple]:
    return [(a.element, a.charge, mol.degree(i), a.hydrogens, a.aromatic) for i, a in enumerate(mol.atoms)]


def refine_ranks(mol: MolGraph, ranks: Sequence[int]) -> List[int]:
    """Morgan-style refinement: split rank classes by sorted neighbour ranks until stable."""
    ranks = _dense_rank(list(ranks))
    while True:
        keys = [
            (ranks[i], tuple(sorted((ranks[n], mol.bonds[k].order.value) for n, k in mol.adjacency[i])))
            for i in range(mol.n_atoms)
        ]
        refined = _dense_rank(keys)
        if len(set(refined)) == len(set(ranks)):
            return refined
        ranks = refined


def canonical_smiles(mol: MolGraph) -> str:
    """Canonical SMILES: refined ranks, ties broken by exploring every choice
    and keeping the lexicographically smallest emission."""
    budget = [CANONICAL_SEARCH_LIMIT]

    def search(ranks: List[int]) -> str:
        ranks = refine_ranks(mol, ranks)
        counts: Dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = [r for r, c in counts.items() if c > 1]
        if not tied:
            budget[0] -= 1
            return write_smiles(mol, ranks)
        lowest = min(tied)
        best = None
        for member in (i for i in range(mol.n_atoms) if ranks[i] == lowest):
            broken = [2 * r for r in ranks]
            broken[member] = 2 * lowest - 1
            candidate = search(broken)
            if best is None or candidate < best:
                best = candidate
            if budget[0] <= 0:
                break
        return best

    return search(_dense_rank(atom_invariants(mol)))


def canonicalize(text: str) -> str:
    return canonical_smiles(parse_smiles(text))


def same_graph(a: MolGraph, b: MolGraph) -> bool:
    """Graph identity via canonical form (element, charge, aromaticity, hydrogens, bond orders)."""
    return canonical_smiles(a) == canonical_smiles(b)
