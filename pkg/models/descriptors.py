"""
2D descriptors on MolGraph: rotatable bonds, linker ratios, rings, Murcko
scaffolds, path fingerprints and extended-linker extraction.
"""

import hashlib
from collections import deque
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from models.errors import InvalidInputError
from models.molecule import BondOrder, MolGraph, canonical_smiles

FINGERPRINT_BITS = 2048
MAX_PATH_BONDS = 7


@dataclass(frozen=True)
class LinkerAnnotation:
    linker_atoms: FrozenSet[int]
    attachments: Tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "linker_atoms", frozenset(int(i) for i in self.linker_atoms))
        attachments = tuple(int(i) for i in self.attachments)
        if len(attachments) != 2:
            raise InvalidInputError(f"A linker needs exactly two attachment atoms, got {len(attachments)}")
        object.__setattr__(self, "attachments", attachments)

    @classmethod
    def from_dict(cls, data: Dict) -> "LinkerAnnotation":
        try:
            return cls(frozenset(data["linker_atoms"]), tuple(data["attachments"]))
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"Malformed linker annotation: {e}") from e

    def to_dict(self) -> Dict:
        return {"linker_atoms": sorted(self.linker_atoms), "attachments": list(self.attachments)}

    def validate(self, mol: MolGraph) -> None:
        if not self.linker_atoms:
            raise InvalidInputError("Linker annotation is empty")
        missing = [i for i in self.linker_atoms if not 0 <= i < mol.n_atoms]
        if missing:
            raise InvalidInputError(f"Linker annotation references missing atoms {sorted(missing)}")
        for a in self.attachments:
            if a not in self.linker_atoms:
                raise InvalidInputError(f"Attachment atom {a} is not part of the linker")
        if len(_components(mol, self.linker_atoms)) != 1:
            raise InvalidInputError("Linker subgraph is disconnected")


def _components(mol: MolGraph, within: Iterable[int]) -> List[Set[int]]:
    remaining = set(within)
    found = []
    while remaining:
        start = min(remaining)
        seen = {start}
        queue = deque([start])
        while queue:
            atom = queue.popleft()
            for n in mol.neighbors(atom):
                if n in remaining and n not in seen:
                    seen.add(n)
                    queue.append(n)
        remaining -= seen
        found.append(seen)
    return found


def bfs_distances(mol: MolGraph, source: int, within: Optional[Iterable[int]] = None) -> Dict[int, int]:
    allowed = None if within is None else set(within)
    distances = {source: 0}
    queue = deque([source])
    while queue:
        atom = queue.popleft()
        for n in mol.neighbors(atom):
            if n not in distances and (allowed is None or n in allowed):
                distances[n] = distances[atom] + 1
                queue.append(n)
    return distances


def shortest_path_length(mol: MolGraph, a: int, b: int, within: Optional[Iterable[int]] = None) -> int:
    distances = bfs_distances(mol, a, within)
    if b not in distances:
        raise InvalidInputError(f"Atoms {a} and {b} are not connected")
    return distances[b]


def graph_diameter(mol: MolGraph, within: Optional[Iterable[int]] = None) -> int:
    """Longest shortest path (in bonds) over the atoms in `within` (default: all)."""
    atoms = sorted(set(range(mol.n_atoms)) if within is None else set(within))
    diameter = 0
    for atom in atoms:
        distances = bfs_distances(mol, atom, atoms)
        if len(distances) != len(atoms):
            raise InvalidInputError("Graph is disconnected; diameter undefined")
        diameter = max(diameter, max(distances.values()))
    return diameter


def is_rotatable(mol: MolGraph, bond_index: int) -> bool:
    bond = mol.bonds[bond_index]
    if bond.order is not BondOrder.SINGLE or bond.ring:
        return False
    if mol.atoms[bond.i].is_hydrogen or mol.atoms[bond.j].is_hydrogen:
        return False
    return mol.heavy_degree(bond.i) >= 2 and mol.heavy_degree(bond.j) >= 2


def rotatable_bond_count(mol: MolGraph, scope: Optional[Iterable[int]] = None) -> int:
    """Single, acyclic bonds between two non-terminal heavy atoms (amides included)."""
    allowed = None if scope is None else set(scope)
    count = 0
    for k, bond in enumerate(mol.bonds):
        if allowed is not None and not (bond.i in allowed and bond.j in allowed):
            continue
        if is_rotatable(mol, k):
            count += 1
    return count


def linker_bond_count(mol: MolGraph, linker: LinkerAnnotation) -> int:
    return sum(1 for b in mol.bonds if b.i in linker.linker_atoms and b.j in linker.linker_atoms)


def rot_bond_ratio(mol: MolGraph, linker: LinkerAnnotation) -> float:
    """Percentage of linker-internal bonds that are rotatable."""
    linker.validate(mol)
    total = linker_bond_count(mol, linker)
    if total == 0:
        return 0.0
    return 100.0 * rotatable_bond_count(mol, linker.linker_atoms) / total


def linker_length_ratio(mol: MolGraph, linker: LinkerAnnotation) -> float:
    """100 × attachment-to-attachment path length / linker graph diameter."""
    linker.validate(mol)
    if len(linker.linker_atoms) == 1:
        return 100.0
    diameter = graph_diameter(mol, linker.linker_atoms)
    path = shortest_path_length(mol, *linker.attachments, within=linker.linker_atoms)
    return 100.0 * path / diameter


def ring_count(mol: MolGraph) -> int:
    """Cycle rank: bonds − atoms + connected components."""
    return mol.n_bonds - mol.n_atoms + len(mol.components)


def murcko_scaffold(mol: MolGraph) -> str:
    """Canonical SMILES of the ring systems plus linking atoms; "" for acyclic molecules."""
    alive = set(range(mol.n_atoms))
    ring_atoms = {i for i in alive if mol.is_ring_atom(i)}
    changed = True
    while changed:
        changed = False
        for atom in sorted(alive):
            if atom in ring_atoms:
                continue
            if sum(1 for n in mol.neighbors(atom) if n in alive) <= 1:
                alive.discard(atom)
                changed = True
    if not alive:
        return ""
    return canonical_smiles(mol.subgraph(alive))


# --- fingerprints --------------------------------------------------------------------------------

@dataclass(frozen=True)
class Fingerprint:
    on_bits: FrozenSet[int]
    width: int = FINGERPRINT_BITS

    def __len__(self) -> int:
        return len(self.on_bits)

    def to_array(self) -> np.ndarray:
        bits = np.zeros(self.width, dtype=bool)
        bits[sorted(self.on_bits)] = True
        return bits


def _atom_label(mol: MolGraph, index: int) -> str:
    atom = mol.atoms[index]
    return f"{atom.element}{'a' if atom.aromatic else ''}{atom.charge:+d}"


def _path_key(mol: MolGraph, path: Sequence[int]) -> str:
    forward = []
    for position, atom in enumerate(path):
        if position:
            forward.append(mol.bond_between(path[position - 1], atom).order.symbol)
        forward.append(_atom_label(mol, atom))
    backward = list(reversed(forward))
    return "|".join(min(forward, backward))


def _hash_bit(key: str, width: int) -> int:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % width


def linear_paths(mol: MolGraph, max_bonds: int = MAX_PATH_BONDS) -> Set[Tuple[int, ...]]:
    """Every simple path of 0..max_bonds bonds, stored once in ascending-endpoint direction."""
    paths = set()

    def extend(path: List[int]) -> None:
        paths.add(tuple(path) if path[0] <= path[-1] else tuple(reversed(path)))
        if len(path) - 1 == max_bonds:
            return
        for n in mol.neighbors(path[-1]):
            if n not in path:
                path.append(n)
                extend(path)
                path.pop()

    for start in range(mol.n_atoms):
        extend([start])
    return paths


def fingerprint(mol: MolGraph, width: int = FINGERPRINT_BITS) -> Fingerprint:
    """Hashed linear-path fingerprint (blake2b-64 of each path label, modulo `width`)."""
    keys = {_path_key(mol, path) for path in linear_paths(mol)}
    return Fingerprint(frozenset(_hash_bit(key, width) for key in keys), width)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.width != b.width:
        raise InvalidInputError(f"Fingerprint widths differ ({a.width} vs {b.width})")
    union = len(a.on_bits | b.on_bits)
    if union == 0:
        return 1.0
    return len(a.on_bits & b.on_bits) / union


def max_similarity(query: Fingerprint, references: Sequence[Fingerprint]) -> float:
    return max((tanimoto(query, ref) for ref in references), default=0.0)


# --- linkers -------------------------------------------------------------------------------------

def smallest_rings(mol: MolGraph) -> List[Tuple[int, ...]]:
    """For every ring bond, the shortest cycle through it; duplicates removed.

    Cycles are returned in path order, starting at their lowest atom index.
    """
    rings: Dict[FrozenSet[int], Tuple[int, ...]] = {}
    for k, bond in enumerate(mol.bonds):
        if not bond.ring:
            continue
        parent = {bond.i: None}
        queue = deque([bond.i])
        while queue and bond.j not in parent:
            atom = queue.popleft()
            for n, idx in mol.adjacency[atom]:
                if idx == k or n in parent:
                    continue
                parent[n] = atom
                queue.append(n)
        path = []
        atom = bond.j
        while atom is not None:
            path.append(atom)
            atom = parent[atom]
        key = frozenset(path)
        if key not in rings:
            start = path.index(min(path))
            rings[key] = tuple(path[start:] + path[:start])
    return sorted(rings.values(), key=lambda ring: (min(ring), len(ring), ring))


def extract_extended_linker(mol: MolGraph, linker: LinkerAnnotation,
                            hops: int = 2) -> Tuple[MolGraph, LinkerAnnotation]:
    """Linker plus `hops` bonds beyond each attachment, never cutting a ring."""
    linker.validate(mol)
    if hops < 0:
        raise InvalidInputError(f"hops must be >= 0, got {hops}")
    selected = set(linker.linker_atoms)
    for attachment in linker.attachments:
        for atom, distance in bfs_distances(mol, attachment).items():
            if distance <= hops:
                selected.add(atom)

    rings = smallest_rings(mol)
    changed = True
    while changed:
        changed = False
        for ring in rings:
            members = set(ring)
            if members & selected and not members <= selected:
                selected |= members
                changed = True

    sub = mol.subgraph(selected)
    new_index = {old: new for new, old in enumerate(sorted(selected))}
    annotation = LinkerAnnotation(frozenset(new_index[i] for i in linker.linker_atoms),
                                  tuple(new_index[i] for i in linker.attachments))
    return sub, annotation


def diameter_endpoints(mol: MolGraph, within: Optional[Iterable[int]] = None) -> Tuple[int, int]:
    """Lowest (i, j) pair, i <= j, realising the graph diameter."""
    atoms = sorted(set(range(mol.n_atoms)) if within is None else set(within))
    best = (-1, atoms[0], atoms[0])
    for a in atoms:
        distances = bfs_distances(mol, a, atoms)
        for b in atoms:
            if b >= a and distances.get(b, -1) > best[0]:
                best = (distances[b], a, b)
    return best[1], best[2]


def linker_from_attachment_points(mol: MolGraph) -> LinkerAnnotation:
    """Linker annotation for a fragment written with ``*`` attachment points.

    Without dummies the whole molecule is the linker and the attachments are
    the ends of a longest shortest path.
    """
    dummies = [i for i, atom in enumerate(mol.atoms) if atom.is_dummy]
    linker_atoms = frozenset(i for i in range(mol.n_atoms) if not mol.atoms[i].is_dummy)
    if not linker_atoms:
        raise InvalidInputError("Linker has no atoms besides attachment points")
    if not dummies:
        return LinkerAnnotation(linker_atoms, diameter_endpoints(mol))
    if len(dummies) != 2:
        raise InvalidInputError(f"Linker needs exactly two attachment points, found {len(dummies)}")
    attachments = []
    for dummy in dummies:
        partners = [n for n in mol.neighbors(dummy) if not mol.atoms[n].is_dummy]
        if len(partners) != 1:
            raise InvalidInputError(f"Attachment point {dummy} must bond to exactly one linker atom")
        attachments.append(partners[0])
    return LinkerAnnotation(linker_atoms, tuple(attachments))
