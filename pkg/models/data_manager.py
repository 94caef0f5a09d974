"""
File formats: XYZ geometry, V2000 SDF, SMILES lists, dataset manifests,
linker annotations, CSV reports and JSON documents. Every reader raises
InvalidInputError naming the offending path.
"""

import csv
import json
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from models.descriptors import LinkerAnnotation
from models.errors import InvalidInputError
from models.geometry import PointCloud
from models.molecule import Atom, Bond, BondOrder, MolGraph, implicit_hydrogens
from models.surface import AtomSet
from utils.logger import get_logger

logger = get_logger(__name__)

SURFACE_ELEMENT = "X"
SDF_BOND_ORDERS = {1: BondOrder.SINGLE, 2: BondOrder.DOUBLE, 3: BondOrder.TRIPLE, 4: BondOrder.AROMATIC}
SDF_CHARGES = {0: 0, 1: 3, 2: 2, 3: 1, 5: -1, 6: -2, 7: -3}


def _read_lines(path: str) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        logger.error(f"Error reading {path}: {e}")
        raise InvalidInputError(f"Cannot read '{path}': {e}") from e


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


# XYZ

def read_xyz(path: str) -> List[Tuple[str, Tuple[float, float, float]]]:
    """(element, position) records of a standard XYZ file."""
    lines = _read_lines(path)
    if not lines or not lines[0].strip():
        raise InvalidInputError(f"'{path}' has no atoms")
    try:
        count = int(lines[0].split()[0])
    except ValueError as e:
        raise InvalidInputError(f"'{path}': first line must be the atom count") from e
    if count < 1:
        raise InvalidInputError(f"'{path}' has no atoms")
    body = [line for line in lines[2:] if line.strip()]
    if len(body) < count:
        raise InvalidInputError(f"'{path}' declares {count} atoms but lists {len(body)}")
    records = []
    for number, line in enumerate(body[:count], start=3):
        fields = line.split()
        try:
            records.append((fields[0], (float(fields[1]), float(fields[2]), float(fields[3]))))
        except (IndexError, ValueError) as e:
            raise InvalidInputError(f"'{path}' line {number}: expected 'element x y z'") from e
    return records


def write_xyz(path: str, elements: Sequence[str], points: np.ndarray, comment: str = "") -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(points)}\n{comment}\n")
        for element, (x, y, z) in zip(elements, points):
            f.write(f"{element} {x:.6f} {y:.6f} {z:.6f}\n")
    logger.debug(f"💾 Wrote {len(points)} XYZ records to {path}")


def read_atoms(path: str) -> AtomSet:
    """Atoms from an .xyz or .sdf/.mol file."""
    if path.lower().endswith((".sdf", ".mol")):
        atoms, _ = read_sdf(path)
        return atoms
    label = os.path.splitext(os.path.basename(path))[0]
    return AtomSet.from_pairs(read_xyz(path), label=label)


def read_point_cloud(path: str) -> PointCloud:
    """Point cloud from an XYZ file; element symbols are ignored."""
    records = read_xyz(path)
    return PointCloud(np.array([p for _, p in records]), label=os.path.basename(path))


def write_point_cloud(path: str, cloud: PointCloud, comment: str = "") -> None:
    write_xyz(path, [SURFACE_ELEMENT] * len(cloud), cloud.points, comment)


# SDF (V2000 subset: atom block, bond block, M  CHG)

def read_sdf(path: str) -> Tuple[AtomSet, MolGraph]:
    lines = _read_lines(path)
    if len(lines) < 4:
        raise InvalidInputError(f"'{path}' has no atoms")
    counts = lines[3]
    try:
        n_atoms, n_bonds = int(counts[0:3]), int(counts[3:6])
    except ValueError as e:
        raise InvalidInputError(f"'{path}': malformed counts line") from e
    if "V3000" in counts:
        raise InvalidInputError(f"'{path}': V3000 molfiles are not supported")
    if n_atoms < 1:
        raise InvalidInputError(f"'{path}' has no atoms")
    if len(lines) < 4 + n_atoms + n_bonds:
        raise InvalidInputError(f"'{path}' is truncated")

    elements, positions, charges = [], [], []
    for line in lines[4:4 + n_atoms]:
        fields = line.split()
        try:
            positions.append((float(fields[0]), float(fields[1]), float(fields[2])))
            elements.append(fields[3])
            charges.append(SDF_CHARGES.get(int(fields[5]), 0) if len(fields) > 5 else 0)
        except (IndexError, ValueError) as e:
            raise InvalidInputError(f"'{path}': malformed atom line '{line}'") from e

    bonds = []
    for line in lines[4 + n_atoms:4 + n_atoms + n_bonds]:
        try:
            i, j, order = int(line[0:3]), int(line[3:6]), int(line[6:9])
        except ValueError as e:
            raise InvalidInputError(f"'{path}': malformed bond line '{line}'") from e
        if order not in SDF_BOND_ORDERS:
            raise InvalidInputError(f"'{path}': unsupported bond order {order}")
        bonds.append(Bond(i - 1, j - 1, SDF_BOND_ORDERS[order]))

    for line in lines[4 + n_atoms + n_bonds:]:
        if line.startswith("M  END"):
            break
        if line.startswith("M  CHG"):
            charges = [0] * n_atoms  # M  CHG supersedes the atom block
            fields = line.split()[3:]
            for k in range(0, len(fields) - 1, 2):
                charges[int(fields[k]) - 1] = int(fields[k + 1])

    aromatic = {idx for b in bonds if b.order is BondOrder.AROMATIC for idx in (b.i, b.j)}
    orders = [[] for _ in range(n_atoms)]
    for b in bonds:
        orders[b.i].append(b.order)
        orders[b.j].append(b.order)
    atoms = []
    for idx, element in enumerate(elements):
        atom = Atom(element, charges[idx], idx in aromatic)
        hydrogens = implicit_hydrogens(atom, orders[idx]) if charges[idx] == 0 else 0
        atoms.append(Atom(element, charges[idx], idx in aromatic, hydrogens or 0))

    label = lines[0].strip() or os.path.splitext(os.path.basename(path))[0]
    mol = MolGraph(tuple(atoms), tuple(bonds)).with_ring_flags()
    logger.debug(f"Read {n_atoms} atoms and {n_bonds} bonds from {path}")
    return AtomSet(tuple(elements), np.array(positions), label), mol


# SMILES lists

def read_smiles_file(path: str) -> List[str]:
    """One SMILES per line (first whitespace field); blank and '#' lines skipped."""
    result = []
    for line in _read_lines(path):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            result.append(stripped.split()[0])
    return result


def write_smiles_file(path: str, smiles: Iterable[str]) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        for s in smiles:
            f.write(f"{s}\n")


# JSON documents

def read_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        logger.error(f"Error reading {path}: {e}")
        raise InvalidInputError(f"Cannot read '{path}': {e}") from e
    except json.JSONDecodeError as e:
        logger.error(f"Error parsing {path}: {e}")
        raise InvalidInputError(f"'{path}' is not valid JSON: {e}") from e


def write_json(path: str, data) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def read_manifest(path: str) -> List[Tuple[PointCloud, PointCloud]]:
    """Query/reference cloud pairs; relative paths resolve against the manifest's directory."""
    entries = read_json(path)
    if not isinstance(entries, list):
        raise InvalidInputError(f"Manifest '{path}' must be a JSON list")
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    for number, entry in enumerate(entries):
        try:
            query, reference = entry["query_xyz_path"], entry["reference_xyz_path"]
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"Manifest '{path}' entry {number} needs query_xyz_path and "
                                    f"reference_xyz_path") from e
        resolved = [p if os.path.isabs(p) else os.path.join(base, p) for p in (query, reference)]
        for p in resolved:
            if not os.path.exists(p):
                raise InvalidInputError(f"Manifest entry {number}: missing file '{p}'")
        pairs.append((read_point_cloud(resolved[0]), read_point_cloud(resolved[1])))
    logger.info(f"📂 Loaded {len(pairs)} alignment pairs from {path}")
    return pairs


def read_annotations(path: str) -> Dict[str, LinkerAnnotation]:
    """{smiles: {"linker_atoms": [...], "attachments": [a, b]}}"""
    data = read_json(path)
    if not isinstance(data, dict):
        raise InvalidInputError(f"Annotation file '{path}' must be a JSON object keyed by SMILES")
    return {smiles: LinkerAnnotation.from_dict(entry) for smiles, entry in data.items()}


# CSV

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, rows: Sequence[Dict], columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
    logger.debug(f"💾 Wrote {len(rows)} rows to {path}")


def read_csv_rows(path: str, required: Sequence[str] = ()) -> List[Dict[str, str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            missing = [c for c in required if reader.fieldnames is None or c not in reader.fieldnames]
            if missing:
                raise InvalidInputError(f"'{path}' lacks column(s) {missing}")
            return list(reader)
    except InvalidInputError:
        raise
    except OSError as e:
        logger.error(f"Error reading {path}: {e}")
        raise InvalidInputError(f"Cannot read '{path}': {e}") from e
    except (ValueError, csv.Error) as e:
        raise InvalidInputError(f"Malformed CSV '{path}': {e}") from e


class DataManager:
    """Output directory of one command run."""

    def __init__(self, out_dir: str = "out"):
        self.out_dir = out_dir
        if not os.path.exists(out_dir):
            logger.debug(f"Creating output directory: {out_dir}")
            os.makedirs(out_dir)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def save_json(self, name: str, data) -> str:
        path = self.path(name)
        write_json(path, data)
        logger.info(f"📝 Wrote {path}")
        return path

    def save_csv(self, name: str, rows: Sequence[Dict], columns: Optional[Sequence[str]] = None) -> str:
        path = self.path(name)
        write_csv(path, rows, columns)
        logger.info(f"📝 Wrote {path} ({len(rows)} rows)")
        return path

    def save_point_cloud(self, name: str, cloud: PointCloud, comment: str = "") -> str:
        path = self.path(name)
        write_point_cloud(path, cloud, comment)
        logger.info(f"📝 Wrote {path} ({len(cloud)} points)")
        return path

    def save_smiles(self, name: str, smiles: Sequence[str]) -> str:
        path = self.path(name)
        write_smiles_file(path, smiles)
        logger.info(f"📝 Wrote {path} ({len(smiles)} SMILES)")
        return path
