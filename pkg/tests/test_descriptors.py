import os

import numpy as np
import pytest

from models.data_manager import read_smiles_file
from models.descriptors import (LinkerAnnotation, extract_extended_linker, fingerprint, graph_diameter,
                                linker_from_attachment_points, linker_length_ratio, max_similarity,
                                murcko_scaffold, ring_count, rot_bond_ratio, rotatable_bond_count,
                                smallest_rings, tanimoto)
from models.errors import InvalidInputError
from models.molecule import MolGraph, canonical_smiles, canonicalize, parse_smiles

FIXTURE_SMILES = read_smiles_file(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                               "data", "molecule_fixtures.smi"))

# smiles, rotatable bonds, rings
DESCRIPTOR_TABLE = [
    ("CC", 0, 0),
    ("CCO", 0, 0),
    ("CCCC", 1, 0),
    ("CCOC", 1, 0),
    ("CCCCCC", 3, 0),
    ("CC(C)(C)C", 0, 0),
    ("CC(=O)NC", 1, 0),
    ("C=CC=C", 1, 0),
    ("CC#CC", 0, 0),
    ("NCC(=O)O", 1, 0),
    ("CCSCC", 2, 0),
    ("OCCOCCO", 4, 0),
    ("*CCN*", 2, 0),
    ("c1ccccc1", 0, 1),
    ("c1ccccc1C", 0, 1),
    ("c1ccccc1CC", 1, 1),
    ("c1ccccc1-c1ccccc1", 1, 2),
    ("C1CC1C1CC1", 1, 2),
    ("C1CCCCC1CCC1CCCCC1", 3, 2),
    ("c1ccc2ccccc2c1", 0, 2),
    ("C1CCC2(C1)CCC2", 0, 2),
    ("C1C2CC3CC1CC(C2)C3", 0, 3),
]


@pytest.mark.parametrize("smiles, rotatable, rings", DESCRIPTOR_TABLE)
def test_rotatable_bonds_and_rings(smiles, rotatable, rings):
    mol = parse_smiles(smiles)
    assert rotatable_bond_count(mol) == rotatable
    assert ring_count(mol) == rings


@pytest.mark.parametrize("smiles, scaffold", [
    ("CCCC", ""),
    ("CCc1ccccc1", "c1ccccc1"),
    ("C1CCCCC1", "C1CCCCC1"),
    ("c1ccccc1CCc1ccccc1", "c1ccccc1CCc1ccccc1"),
    ("Cc1ccc(cc1)C(=O)NCc1ccncc1", "c1ccccc1CNCc1ccncc1"),
])
def test_murcko_scaffolds(smiles, scaffold):
    expected = canonicalize(scaffold) if scaffold else ""
    assert murcko_scaffold(parse_smiles(smiles)) == expected


def test_smallest_rings_of_a_fused_system():
    rings = smallest_rings(parse_smiles("c1ccc2ccccc2c1"))
    assert sorted(len(r) for r in rings) == [6, 6]


class TestLinkerRatios:
    def test_length_ratio(self):
        mol = parse_smiles("OCCOCCO")
        assert linker_length_ratio(mol, LinkerAnnotation(range(7), (0, 6))) == 100.0
        assert linker_length_ratio(mol, LinkerAnnotation(range(7), (0, 3))) == 50.0

    def test_length_ratio_of_a_branched_linker(self):
        mol = parse_smiles("CC(C)CCC")
        assert graph_diameter(mol) == 4
        assert linker_length_ratio(mol, LinkerAnnotation(range(6), (1, 4))) == 50.0

    def test_single_atom_linker(self):
        mol = parse_smiles("CCC")
        assert linker_length_ratio(mol, LinkerAnnotation({1}, (1, 1))) == 100.0

    def test_rotatable_ratio_counts_linker_bonds_only(self):
        mol = parse_smiles("OCCOCCO")
        assert rot_bond_ratio(mol, LinkerAnnotation(range(7), (0, 6))) == pytest.approx(400.0 / 6.0)
        ring_linker = parse_smiles("*c1ccc(*)cc1")
        annotation = linker_from_attachment_points(ring_linker)
        assert rot_bond_ratio(ring_linker, annotation) == 0.0

    def test_annotation_validation(self):
        mol = parse_smiles("CCCC")
        with pytest.raises(InvalidInputError):
            rot_bond_ratio(mol, LinkerAnnotation({1, 2}, (0, 2)))
        with pytest.raises(InvalidInputError):
            linker_length_ratio(mol, LinkerAnnotation({0, 2}, (0, 2)))
        with pytest.raises(InvalidInputError):
            LinkerAnnotation({0, 1, 2}, (0, 1, 2))
        with pytest.raises(InvalidInputError):
            LinkerAnnotation.from_dict({"linker_atoms": [0, 1]})


class TestAttachmentPoints:
    def test_dummies_mark_the_attachments(self):
        annotation = linker_from_attachment_points(parse_smiles("*CCOCC*"))
        assert annotation.linker_atoms == frozenset({1, 2, 3, 4, 5})
        assert annotation.attachments == (1, 5)

    def test_without_dummies_the_longest_path_is_used(self):
        annotation = linker_from_attachment_points(parse_smiles("OCCOCCO"))
        assert annotation.attachments == (0, 6)

    @pytest.mark.parametrize("smiles", ["*C(*)*", "**"])
    def test_bad_attachment_layouts(self, smiles):
        with pytest.raises(InvalidInputError):
            linker_from_attachment_points(parse_smiles(smiles))


class TestExtendedLinker:
    SMILES = "c1ccccc1CCOCCc1ccccc1"
    ANNOTATION = LinkerAnnotation(range(6, 11), (6, 10))

    def test_zero_hops_keeps_the_linker(self):
        sub, annotation = extract_extended_linker(parse_smiles(self.SMILES), self.ANNOTATION, hops=0)
        assert canonical_smiles(sub) == canonicalize("CCOCC")
        assert annotation.linker_atoms == frozenset(range(5))
        assert annotation.attachments == (0, 4)

    def test_rings_are_never_cut(self):
        sub, annotation = extract_extended_linker(parse_smiles(self.SMILES), self.ANNOTATION, hops=1)
        assert sub.n_atoms == 17
        assert annotation.attachments == (6, 10)

    def test_negative_hops_rejected(self):
        with pytest.raises(InvalidInputError):
            extract_extended_linker(parse_smiles(self.SMILES), self.ANNOTATION, hops=-1)


class TestFingerprints:
    def test_self_similarity_is_one(self):
        fp = fingerprint(parse_smiles("c1ccccc1CCOCCc1ccccc1"))
        assert len(fp) > 0
        assert tanimoto(fp, fp) == 1.0

    def test_fingerprint_ignores_atom_order(self):
        assert fingerprint(parse_smiles("OCC(=O)N")) == fingerprint(parse_smiles("NC(=O)CO"))

    def test_related_molecules_are_partially_similar(self):
        similarity = tanimoto(fingerprint(parse_smiles("CCCCO")), fingerprint(parse_smiles("CCCCN")))
        assert 0.0 < similarity < 1.0

    def test_max_similarity(self):
        query = fingerprint(parse_smiles("CCO"))
        assert max_similarity(query, []) == 0.0
        assert max_similarity(query, [fingerprint(parse_smiles("CCCC")), query]) == 1.0

    def test_width_mismatch_rejected(self):
        mol = parse_smiles("CCO")
        with pytest.raises(InvalidInputError):
            tanimoto(fingerprint(mol, 1024), fingerprint(mol))

    def test_disjoint_paths_give_zero_similarity(self):
        # C and N path labels hash to bits {219, 434, 713, 1980} and {1093, 1356, 1646, 1792}
        carbon = fingerprint(parse_smiles("CCCC"))
        nitrogen = fingerprint(parse_smiles("NNNN"))
        assert carbon.on_bits == frozenset({219, 434, 713, 1980})
        assert nitrogen.on_bits == frozenset({1093, 1356, 1646, 1792})
        assert tanimoto(carbon, nitrogen) == 0.0

    def test_similarity_is_symmetric(self, rng):
        fingerprints = [fingerprint(parse_smiles(smiles)) for smiles in FIXTURE_SMILES]
        for _ in range(100):
            i, j = (int(k) for k in rng.integers(len(fingerprints), size=2))
            assert tanimoto(fingerprints[i], fingerprints[j]) == tanimoto(fingerprints[j], fingerprints[i])


def _floyd_warshall_diameter(mol: MolGraph) -> int:
    n = mol.n_atoms
    distance = np.full((n, n), np.inf)
    np.fill_diagonal(distance, 0.0)
    for atom, row in enumerate(mol.adjacency):
        for neighbour, _ in row:
            distance[atom, neighbour] = 1.0
    for k in range(n):
        distance = np.minimum(distance, distance[:, k:k + 1] + distance[k:k + 1, :])
    return int(distance.max())


class TestPermutationInvariance:
    @pytest.mark.parametrize("smiles", FIXTURE_SMILES)
    def test_diameter_matches_all_pairs_shortest_paths(self, smiles):
        mol = parse_smiles(smiles)
        assert graph_diameter(mol) == _floyd_warshall_diameter(mol)

    @pytest.mark.parametrize("smiles", FIXTURE_SMILES)
    def test_descriptors_ignore_atom_order(self, smiles):
        mol = parse_smiles(smiles)
        annotation = linker_from_attachment_points(mol)
        expected = (rotatable_bond_count(mol), ring_count(mol), graph_diameter(mol), murcko_scaffold(mol),
                    fingerprint(mol), rot_bond_ratio(mol, annotation), linker_length_ratio(mol, annotation))
        rng = np.random.default_rng(7)
        for _ in range(20):
            order = [int(i) for i in rng.permutation(mol.n_atoms)]
            permuted = mol.permuted(order)
            position = {old: new for new, old in enumerate(order)}
            moved = LinkerAnnotation(frozenset(position[i] for i in annotation.linker_atoms),
                                     tuple(position[i] for i in annotation.attachments))
            observed = (rotatable_bond_count(permuted), ring_count(permuted), graph_diameter(permuted),
                        murcko_scaffold(permuted), fingerprint(permuted), rot_bond_ratio(permuted, moved),
                        linker_length_ratio(permuted, moved))
            assert observed == expected
