"""
A tour of the string codec
==========================

Every symbol string decodes to a valid molecule. This script walks through
the rules on small hand-written strings, then checks the two properties the
rest of the package leans on: totality and round trips.
"""

import random

from latentmol import selfies
from latentmol.corpus import random_molecule
from latentmol.molgraph import canonical_key, to_smiles, validate

# a double bond requested on a triple-bond symbol gets clamped by the oxygen
for text in ["[C]", "[C][C]", "[O][#C]", "[C][Branch1][C][F][Cl]", "[C][C][C][C][C][C][Ring1][Branch2]"]:
    g = selfies.decode(text)
    print(f"{text:40s} -> {to_smiles(g)}")

# fluorine has one bond to give; once it is used up the rest is ignored
print(to_smiles(selfies.decode("[C][F][C][C][C]")))

# random strings: all valid, whatever the symbols
ok = sum(validate(selfies.decode(selfies.random_string(seed))) for seed in range(5000))
print(f"{ok} of 5000 random strings decode to valid molecules")

# round trips: the decoded graph is the same molecule up to atom order
rng = random.Random(0)
for _ in range(5):
    g = random_molecule(rng, 6, 14)
    s = selfies.encode(g)
    back = selfies.decode(s)
    print(to_smiles(g), "->", selfies.to_text(s), "-> same:", canonical_key(back) == canonical_key(g))
