"""
Naive 3D embedding by torsion sampling.

Heavy atoms are placed breadth-first with ideal bond lengths (by order) and
ideal angles (by hybridisation); torsions are drawn uniformly per conformer.
Ring systems are built once as rigid templates of planar regular polygons:
fused rings share an edge, spiro rings stand perpendicular, bridged rings fall
back to an approximate placement and mark the conformer as strained.
"""

from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.spatial.transform import Rotation

from models.descriptors import smallest_rings
from models.errors import EmbeddingFailedError, InvalidInputError
from models.molecule import BondOrder, MolGraph
from models.surface import AtomSet
from utils.logger import get_logger

logger = get_logger(__name__)

BOND_LENGTHS = {
    BondOrder.SINGLE: 1.54,
    BondOrder.DOUBLE: 1.34,
    BondOrder.TRIPLE: 1.20,
    BondOrder.AROMATIC: 1.39,
}
ANGLES = {"sp3": np.deg2rad(109.5), "sp2": np.deg2rad(120.0), "sp": np.pi}
TORSION_SLOTS = {"sp3": 3, "sp2": 2, "sp": 1}
MAX_HEAVY_ATOMS = 64
CLASH_DISTANCE = 1.0
MAX_RESAMPLES = 20


def hybridization(mol: MolGraph, atom: int) -> str:
    orders = mol.bond_orders(atom)
    doubles = sum(1 for o in orders if o is BondOrder.DOUBLE)
    cumulated = doubles >= 2 and mol.atoms[atom].element in ("C", "N")
    if any(o is BondOrder.TRIPLE for o in orders) or cumulated:
        return "sp"
    if doubles >= 2:
        # sulfonyl / phosphoryl centres
        return "sp3"
    if doubles or mol.atoms[atom].aromatic or any(o is BondOrder.AROMATIC for o in orders):
        return "sp2"
    return "sp3"


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vector)
    return vector / norm if norm > 1e-12 else vector


def _perpendicular(vector: np.ndarray) -> np.ndarray:
    axis = np.eye(3)[int(np.argmin(np.abs(vector)))]
    return _unit(np.cross(vector, axis))


def _rotation_between(source: np.ndarray, target: np.ndarray) -> Rotation:
    source, target = _unit(source), _unit(target)
    axis = np.cross(source, target)
    sin, cos = np.linalg.norm(axis), float(np.dot(source, target))
    if sin < 1e-12:
        if cos > 0:
            return Rotation.identity()
        return Rotation.from_rotvec(_perpendicular(source) * np.pi)
    return Rotation.from_rotvec(axis / sin * np.arctan2(sin, cos))


def place_atom(a: np.ndarray, b: np.ndarray, c: np.ndarray, length: float, angle: float,
               torsion: float) -> np.ndarray:
    """Position d with |cd| = length, angle(b, c, d) = angle, dihedral(a, b, c, d) = torsion."""
    bc = _unit(c - b)
    normal = np.cross(b - a, bc)
    if np.linalg.norm(normal) < 1e-8:
        normal = _perpendicular(bc)
    normal = _unit(normal)
    m = np.cross(normal, bc)
    local = np.array([-length * np.cos(angle), length * np.sin(angle) * np.cos(torsion),
                      length * np.sin(angle) * np.sin(torsion)])
    return c + local[0] * bc + local[1] * m + local[2] * normal


@dataclass
class RingSystemTemplate:
    atoms: Tuple[int, ...]
    coords: Dict[int, np.ndarray]
    rings: List[Tuple[int, ...]]
    strained: bool = False


def _ring_side(mol: MolGraph, ring: Sequence[int]) -> float:
    lengths = [BOND_LENGTHS[mol.bond_between(ring[k - 1], ring[k]).order] for k in range(len(ring))]
    return float(np.mean(lengths))


def _polygon(centre: np.ndarray, start: np.ndarray, axis: np.ndarray, n: int) -> List[np.ndarray]:
    offset = start - centre
    return [centre + Rotation.from_rotvec(axis * (2.0 * np.pi * k / n)).apply(offset) for k in range(n)]


def _rotate_to(ring: Sequence[int], first: int, second: Optional[int] = None) -> List[int]:
    ring = list(ring)
    k = ring.index(first)
    ordered = ring[k:] + ring[:k]
    if second is not None and ordered[1] != second:
        ordered = [ordered[0]] + ordered[1:][::-1]
    return ordered


def build_ring_system(mol: MolGraph, rings: List[Tuple[int, ...]]) -> RingSystemTemplate:
    """Rigid local coordinates for one ring system, centred on its centroid."""
    coords: Dict[int, np.ndarray] = {}
    frames: List[Tuple[Tuple[int, ...], np.ndarray, np.ndarray]] = []  # (ring, centre, normal)
    strained = False
    pending = list(rings)

    first = pending.pop(0)
    n = len(first)
    radius = _ring_side(mol, first) / (2.0 * np.sin(np.pi / n))
    for k, atom in enumerate(first):
        theta = 2.0 * np.pi * k / n
        coords[atom] = np.array([radius * np.cos(theta), radius * np.sin(theta), 0.0])
    frames.append((first, np.zeros(3), np.array([0.0, 0.0, 1.0])))

    while pending:
        pending.sort(key=lambda r: (-len(set(r) & set(coords)), min(r)))
        ring = pending.pop(0)
        shared = [a for a in ring if a in coords]
        n = len(ring)
        if not shared:
            raise EmbeddingFailedError("Ring system is not connected through shared atoms")

        if len(shared) == 1:
            # spiro: perpendicular to the ring already holding the shared atom
            pivot = shared[0]
            _, centre0, normal0 = next(f for f in frames if pivot in f[0])
            outward = _unit(coords[pivot] - centre0)
            radius = _ring_side(mol, ring) / (2.0 * np.sin(np.pi / n))
            centre = coords[pivot] + outward * radius
            axis = _unit(np.cross(outward, normal0))
            ordered = _rotate_to(ring, pivot)
            for atom, position in zip(ordered, _polygon(centre, coords[pivot], axis, n)):
                coords.setdefault(atom, position)
            frames.append((tuple(ring), centre, _unit(np.cross(coords[ordered[1]] - centre, coords[pivot] - centre))))
            continue

        edge = next(((ring[k - 1], ring[k]) for k in range(n)
                     if ring[k - 1] in coords and ring[k] in coords
                     and any(ring[k - 1] in f[0] and ring[k] in f[0] for f in frames)), None)
        if len(shared) == 2 and edge is not None:
            a, b = edge
            _, centre0, normal0 = next(f for f in frames if a in f[0] and b in f[0])
            side = float(np.linalg.norm(coords[b] - coords[a]))
            midpoint = 0.5 * (coords[a] + coords[b])
            away = _unit(np.cross(normal0, coords[b] - coords[a]))
            if np.dot(away, midpoint - centre0) < 0:
                away = -away
            centre = midpoint + away * side / (2.0 * np.tan(np.pi / n))
            axis = _unit(np.cross(coords[a] - centre, coords[b] - centre))
            ordered = _rotate_to(ring, a, b)
            for atom, position in zip(ordered, _polygon(centre, coords[a], axis, n)):
                coords.setdefault(atom, position)
            frames.append((tuple(ring), centre, normal0))
            continue

        # bridged: lay the missing atoms out between the two ends of the shared path, lifted out of plane
        strained = True
        placed = [coords[a] for a in shared]
        lift = np.array([0.0, 0.0, 1.2 * (1 + len(frames) % 2)])
        missing = [a for a in ring if a not in coords]
        ends = [coords[a] for a in ring if a in coords and any(m in mol.neighbors(a) for m in missing)]
        start, stop = (ends[0], ends[-1]) if len(ends) >= 2 else (placed[0], placed[-1])
        for k, atom in enumerate(missing, start=1):
            t = k / (len(missing) + 1)
            coords[atom] = (1 - t) * start + t * stop + lift
        frames.append((tuple(ring), np.mean([coords[a] for a in ring], axis=0), np.array([0.0, 0.0, 1.0])))

    atoms = tuple(sorted(coords))
    centroid = np.mean([coords[a] for a in atoms], axis=0)
    return RingSystemTemplate(atoms, {a: coords[a] - centroid for a in atoms}, list(rings), strained)


def ring_systems(mol: MolGraph) -> List[List[Tuple[int, ...]]]:
    """Smallest rings grouped into systems that share atoms."""
    rings = smallest_rings(mol)
    systems: List[List[Tuple[int, ...]]] = []
    for ring in rings:
        touching = [s for s in systems if any(set(ring) & set(r) for r in s)]
        merged = [ring]
        for system in touching:
            merged.extend(system)
            systems.remove(system)
        systems.append(sorted(merged, key=lambda r: (min(r), len(r), r)))
    return sorted(systems, key=lambda s: min(min(r) for r in s))


class _Embedder:
    def __init__(self, mol: MolGraph, heavy: List[int]):
        self.mol = mol
        self.heavy = heavy
        self.heavy_set = set(heavy)
        self.templates = [build_ring_system(mol, rings) for rings in ring_systems(mol)]
        self.system_of = {a: t for t in self.templates for a in t.atoms}
        self.hybrid = {a: hybridization(mol, a) for a in heavy}

    def heavy_neighbors(self, atom: int) -> List[int]:
        return [n for n in self.mol.neighbors(atom) if n in self.heavy_set]

    def bond_length(self, a: int, b: int) -> float:
        return BOND_LENGTHS[self.mol.bond_between(a, b).order]

    def _place_system(self, template: RingSystemTemplate, atom: int, parent: int,
                      pos: Dict[int, np.ndarray], rng: np.random.Generator) -> None:
        ring_neighbors = [n for n in self.heavy_neighbors(atom) if n in template.coords]
        outward = template.coords[atom] - np.mean([template.coords[n] for n in ring_neighbors], axis=0)
        if np.linalg.norm(outward) < 1e-8:
            outward = template.coords[atom]
        direction = _unit(pos[parent] - pos[atom])
        align = _rotation_between(outward, direction)
        spin = Rotation.from_rotvec(direction * rng.uniform(0.0, 2.0 * np.pi))
        rotation = spin * align
        anchor = template.coords[atom]
        for member in template.atoms:
            if member not in pos:
                pos[member] = pos[atom] + rotation.apply(template.coords[member] - anchor)

    def _ring_exits(self, atom: int, count: int, pos: Dict[int, np.ndarray]) -> List[np.ndarray]:
        """Directions for exocyclic bonds of a placed ring atom, avoiding bonds already there."""
        template = self.system_of[atom]
        origin = pos[atom]
        ring = [pos[n] for n in self.heavy_neighbors(atom) if n in template.coords]
        taken = [_unit(pos[n] - origin) for n in self.heavy_neighbors(atom)
                 if n not in template.coords and n in pos]
        outward = _unit(origin - np.mean(ring, axis=0))
        if len(ring) >= 2:
            normal = _unit(np.cross(ring[0] - origin, ring[1] - origin))
        else:
            normal = _perpendicular(outward)
        if np.linalg.norm(normal) < 1e-8:
            normal = _perpendicular(outward)
        if np.linalg.norm(outward) < 1e-8:
            outward = normal

        if count + len(taken) == 1:
            return [outward]
        half = ANGLES["sp3"] / 2.0
        exits = [_unit(outward * np.cos(half) + normal * np.sin(half)),
                 _unit(outward * np.cos(half) - normal * np.sin(half)), -normal, normal]
        for direction in taken:
            exits.pop(int(np.argmax([np.dot(e, direction) for e in exits])))
        return exits[:count]

    def _child_positions(self, atom: int, children: List[int], pos: Dict[int, np.ndarray],
                         parent_of: Dict[int, Optional[int]], rng: np.random.Generator) -> List[np.ndarray]:
        origin = pos[atom]
        lengths = [self.bond_length(atom, c) for c in children]
        if atom in self.system_of:
            return [origin + length * d for length, d in zip(lengths, self._ring_exits(atom, len(children), pos))]

        hybrid = self.hybrid[atom]
        angle = ANGLES[hybrid]
        slots = TORSION_SLOTS[hybrid]
        parent = parent_of.get(atom)
        positions = []
        if parent is None:
            # root atom: first child on +x, the rest arranged around it
            first = origin + np.array([lengths[0], 0.0, 0.0])
            positions.append(first)
            anchor, reference = first, first + np.array([0.0, 1.0, 0.0])
            rest = list(zip(children[1:], lengths[1:]))
            base = 0.0
        else:
            anchor = pos[parent]
            grand = parent_of.get(parent)
            if grand is not None and grand in pos:
                reference = pos[grand]
            else:
                others = [pos[n] for n in self.heavy_neighbors(parent) if n in pos and n != atom]
                reference = others[0] if others else anchor + _perpendicular(origin - anchor)
            rest = list(zip(children, lengths))
            base = rng.uniform(0.0, 2.0 * np.pi)
        for k, (_, length) in enumerate(rest):
            torsion = base + 2.0 * np.pi * k / slots
            positions.append(place_atom(reference, anchor, origin, length, angle, torsion))
        return positions

    def conformer(self, rng: np.random.Generator) -> Dict[int, np.ndarray]:
        pos: Dict[int, np.ndarray] = {}
        parent_of: Dict[int, Optional[int]] = {}
        start = self.templates[0].atoms[0] if self.templates else self.heavy[0]
        if start in self.system_of:
            template = self.system_of[start]
            for member in template.atoms:
                pos[member] = template.coords[member].copy()
                parent_of[member] = None
            queue = deque(template.atoms)
        else:
            pos[start] = np.zeros(3)
            parent_of[start] = None
            queue = deque([start])

        while queue:
            atom = queue.popleft()
            children = [n for n in self.heavy_neighbors(atom) if n not in pos]
            if not children:
                continue
            for child, position in zip(children, self._child_positions(atom, children, pos, parent_of, rng)):
                pos[child] = position
                parent_of[child] = atom
                if child in self.system_of:
                    template = self.system_of[child]
                    self._place_system(template, child, atom, pos, rng)
                    for member in template.atoms:
                        parent_of.setdefault(member, child)
                        if member != child:
                            queue.append(member)
                queue.append(child)
        return pos


def _clashes(mol: MolGraph, heavy: List[int], coords: np.ndarray) -> bool:
    if len(heavy) < 2:
        return False
    distances = squareform(pdist(coords))
    index = {atom: k for k, atom in enumerate(heavy)}
    for bond in mol.bonds:
        if bond.i in index and bond.j in index:
            distances[index[bond.i], index[bond.j]] = np.inf
            distances[index[bond.j], index[bond.i]] = np.inf
    np.fill_diagonal(distances, np.inf)
    return bool(np.any(distances < CLASH_DISTANCE))


def embed_3d(mol: MolGraph, n_conformers: int = 16, rng_seed: int = 0,
             label: Optional[str] = None) -> List[AtomSet]:
    """Heavy-atom conformers of a connected molecule, deterministic for a seed."""
    if n_conformers < 1:
        raise InvalidInputError(f"n_conformers must be >= 1, got {n_conformers}")
    if not mol.is_connected:
        raise EmbeddingFailedError("Cannot embed a disconnected molecule")
    heavy = [i for i, atom in enumerate(mol.atoms) if not atom.is_hydrogen]
    if not heavy:
        raise EmbeddingFailedError("Molecule has no heavy atoms")
    if len(heavy) > MAX_HEAVY_ATOMS:
        raise EmbeddingFailedError(f"Too many heavy atoms to embed ({len(heavy)} > {MAX_HEAVY_ATOMS})")

    embedder = _Embedder(mol, heavy)
    template_strain = any(t.strained for t in embedder.templates)
    rng = np.random.default_rng(rng_seed)
    elements = tuple(mol.atoms[i].element for i in heavy)
    conformers = []
    for k in range(n_conformers):
        for attempt in range(MAX_RESAMPLES + 1):
            pos = embedder.conformer(rng)
            if len(pos) != len(heavy):
                raise EmbeddingFailedError(f"Placed {len(pos)} of {len(heavy)} heavy atoms")
            coords = np.array([pos[i] for i in heavy])
            if not np.all(np.isfinite(coords)):
                raise EmbeddingFailedError("Non-finite coordinates during embedding")
            clash = _clashes(mol, heavy, coords)
            if not clash:
                break
        if clash:
            logger.debug(f"⚠️ Conformer {k} kept with clashes after {MAX_RESAMPLES} resamples")
        conformers.append(AtomSet(elements, coords, label or f"conformer-{k}", strained=clash or template_strain))
    return conformers
