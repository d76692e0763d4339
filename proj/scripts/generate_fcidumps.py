"""Regenerate the bundled FCIDUMP files in data/ (requires pyscf).

The files are test inputs only; the library never depends on pyscf.
"""
import json
import pathlib

from pyscf import fci, gto, mp, scf, tools

OUT = pathlib.Path(__file__).resolve().parent.parent / "data"

SYSTEMS = {
    # name: (geometry, basis, symmetry)
    "h2_sto3g": ("H 0 0 0; H 0 0 0.7414", "sto-3g", False),
    "h2_631g": ("H 0 0 0; H 0 0 0.7414", "6-31g", False),
    "h4_square_sto3g": ("H 0 0 0; H 1.23 0 0; H 0 1.23 0; H 1.23 1.23 0", "sto-3g", False),
    "h4_chain_sto3g": ("H 0 0 0; H 0 0 1.27; H 0 0 2.54; H 0 0 3.81", "sto-3g", False),
    "lih_sto3g": ("Li 0 0 0; H 0 0 1.5949", "sto-3g", False),
    "h2o_sto3g": ("O 0 0 0.1173; H 0 0.7572 -0.4692; H 0 -0.7572 -0.4692", "sto-3g", True),
}


def main():
    OUT.mkdir(exist_ok=True)
    reference = {}
    for name, (geom, basis, sym) in SYSTEMS.items():
        mol = gto.M(atom=geom, basis=basis, symmetry=sym, verbose=0)
        mf = scf.RHF(mol)
        mf.conv_tol = 1e-13
        mf.conv_tol_grad = 1e-10
        mf.run()
        tools.fcidump.from_scf(mf, str(OUT / f"{name}.fcidump"), tol=1e-14)
        e_fci = fci.FCI(mf).kernel()[0]
        e_mp2 = mp.MP2(mf).run().e_corr
        reference[name] = {"e_rhf": mf.e_tot, "e_fci": e_fci, "e_mp2_corr": e_mp2, "norb": mol.nao, "nelec": mol.nelectron}
        print(name, mol.nao, mol.nelectron, mf.e_tot, e_fci)
    (OUT / "reference_energies.json").write_text(json.dumps(reference, indent=2) + "\n")


if __name__ == "__main__":
    main()
