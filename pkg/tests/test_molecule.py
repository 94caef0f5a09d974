import os

import numpy as np
import pytest

from models.data_manager import read_smiles_file
from models.errors import (InvalidInputError, MultiFragmentError, SmilesSyntaxError, UnclosedBranchError,
                           UnclosedRingError, ValenceError)
from models.molecule import (Atom, BondOrder, MolGraph, canonical_smiles, canonicalize, parse_smiles, same_graph,
                             write_smiles)

FIXTURE_SMILES = read_smiles_file(os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                                               "data", "molecule_fixtures.smi"))


class TestParser:
    @pytest.mark.parametrize("text, error, offset", [
        ("", SmilesSyntaxError, 0),
        ("C$C", SmilesSyntaxError, 1),
        ("C1CC", UnclosedRingError, 1),
        ("CC(C", UnclosedBranchError, 2),
        ("CC.C", MultiFragmentError, 2),
        ("CC=", SmilesSyntaxError, 2),
        ("C)C", SmilesSyntaxError, 1),
        ("[C", SmilesSyntaxError, 0),
    ])
    def test_errors_carry_offsets(self, text, error, offset):
        with pytest.raises(error) as info:
            parse_smiles(text)
        assert info.value.offset == offset

    def test_valence_is_checked(self):
        with pytest.raises(ValenceError):
            parse_smiles("C(C)(C)(C)(C)C")
        with pytest.raises(ValenceError):
            parse_smiles("FO(F)F")

    def test_implicit_hydrogens(self):
        mol = parse_smiles("CCO")
        assert [a.hydrogens for a in mol.atoms] == [3, 2, 1]
        assert mol.n_bonds == 2

    def test_aromatic_ring(self):
        mol = parse_smiles("c1ccncc1")
        assert all(b.order is BondOrder.AROMATIC and b.ring for b in mol.bonds)
        assert [a.hydrogens for a in mol.atoms] == [1, 1, 1, 0, 1, 1]

    def test_bracket_atoms(self):
        mol = parse_smiles("[NH4+]")
        assert mol.atoms[0].charge == 1 and mol.atoms[0].hydrogens == 4
        pyrrole = parse_smiles("c1cc[nH]c1")
        assert pyrrole.atoms[3].hydrogens == 1
        acetate = parse_smiles("CC(=O)[O-]")
        assert acetate.atoms[3].charge == -1

    def test_stereo_marks_are_dropped(self):
        assert canonicalize("C[C@H](N)O") == canonicalize("CC(N)O")

    def test_attachment_points(self):
        mol = parse_smiles("*CCO*")
        assert mol.atoms[0].is_dummy and mol.atoms[4].is_dummy
        assert [a.hydrogens for a in mol.atoms] == [0, 2, 2, 0, 0]

    def test_unmarked_bond_between_aromatic_rings_is_single(self):
        mol = parse_smiles("c1ccccc1c1ccccc1")
        bridge = mol.bond_between(5, 6)
        assert bridge.order is BondOrder.SINGLE
        assert not bridge.ring
        assert mol.atoms[5].hydrogens == 0
        assert same_graph(mol, parse_smiles("c1ccccc1-c1ccccc1"))

    def test_two_digit_ring_closures(self):
        assert same_graph(parse_smiles("C%12CCCCC%12"), parse_smiles("C1CCCCC1"))


class TestCanonicalForm:
    def test_equivalent_spellings_agree(self):
        assert canonicalize("OCC") == canonicalize("CCO")
        assert canonicalize("c1ccccc1O") == canonicalize("Oc1ccccc1")
        assert canonicalize("CCO") != canonicalize("COC")

    @pytest.mark.parametrize("smiles", FIXTURE_SMILES)
    def test_stable_under_atom_permutation(self, smiles):
        mol = parse_smiles(smiles)
        expected = canonical_smiles(mol)
        rng = np.random.default_rng(42)
        for _ in range(100):
            order = [int(i) for i in rng.permutation(mol.n_atoms)]
            assert canonical_smiles(mol.permuted(order)) == expected

    @pytest.mark.parametrize("smiles", FIXTURE_SMILES)
    def test_canonical_output_reparses_to_the_same_graph(self, smiles):
        canonical = canonicalize(smiles)
        assert canonicalize(canonical) == canonical
        assert same_graph(parse_smiles(canonical), parse_smiles(smiles))

    def test_fixture_set_is_small_molecules(self):
        assert len(FIXTURE_SMILES) == 20
        assert all(parse_smiles(smiles).n_atoms <= 20 for smiles in FIXTURE_SMILES)

    def test_writer_round_trips_without_ranks(self):
        mol = parse_smiles("CC(=O)Nc1ccc(O)cc1")
        assert same_graph(parse_smiles(write_smiles(mol)), mol)


class TestMolGraph:
    def test_disconnected_graph_has_two_components(self):
        mol = MolGraph((Atom("C", hydrogens=4), Atom("O", hydrogens=2)), ())
        assert len(mol.components) == 2
        assert not mol.is_connected

    def test_subgraph_fills_lost_valence_with_hydrogens(self):
        mol = parse_smiles("CCOC")
        fragment = mol.subgraph([1, 2])
        assert [a.hydrogens for a in fragment.atoms] == [3, 1]
        assert fragment.n_bonds == 1

    def test_permutation_must_be_complete(self):
        mol = parse_smiles("CCO")
        with pytest.raises(InvalidInputError):
            mol.permuted([0, 0, 1])
