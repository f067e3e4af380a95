"""
Filtering, fine-tuning and binding free energies
================================================

Optimized molecules get a drug-likeness and ring-size screen, then a greedy
atom-by-atom substitution pass against the oracle. Docking-style oracles
report free energies, which we convert to dissociation constants.
"""

import math
import random

from latentmol.corpus import random_molecule
from latentmol.molgraph import to_smiles
from latentmol.oracles import (
    DEFAULT_TEMPERATURE,
    GAS_CONSTANT,
    PropertyOracle,
    combine_poses,
    kd_from_dg,
    qed_surrogate,
    sa_surrogate,
)
from latentmol.refine import FilterPolicy, filter_molecules, finetune

rng = random.Random(4)
pool = [random_molecule(rng, 8, 24) for _ in range(200)]
kept = filter_molecules(pool, FilterPolicy())
print(f"{len(kept)} of {len(pool)} pass QED >= 0.4, SA < 5.5 and 5/6-membered rings only")
for g in kept[:3]:
    print(f"  qed {qed_surrogate(g):.3f}  sa {sa_surrogate(g):.2f}  {to_smiles(g)}")

# a stand-in affinity: heavier molecules with more nitrogen bind better
affinity = PropertyOracle("affinity", lambda g: -len(g.atoms) / 10 - 0.3 * g.atoms.count("N"), "minimize")
for g in kept[:3]:
    tuned = finetune(g, affinity)
    print(f"  {affinity(g):6.2f} -> {affinity(tuned):6.2f}  {to_smiles(tuned)}")

rt = GAS_CONSTANT * DEFAULT_TEMPERATURE
print("four poses at -8 kcal/mol combine to", round(combine_poses([-8.0] * 4), 4), "=", round(-8 - rt * math.log(4), 4))
for dg in (0.0, -rt * math.log(10), -8.0, -12.0):
    print(f"dG {dg:7.3f} kcal/mol -> K_D {kd_from_dg(dg):.4g} nM")
