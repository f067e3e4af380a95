"""Bundled mock oracle speaking the JSON-lines scoring protocol.

Run as ``python -m latentmol.echo_oracle --mode heavy``. Modes:

* ``zero``      every score is 0.0
* ``heavy``     heavy-atom count of the SMILES
* ``affinity``  ``-heavy / 10``, a stand-in docking free energy (lower is better)

``--shuffle K`` holds responses back and emits them reversed in groups of K.
``--drop ID`` never answers that id; ``--garble ID`` answers it with junk.
"""

from __future__ import annotations

import argparse
import json
import re
import sys

_ATOM = re.compile(r"Cl|Br|[CNOSPF]")


def heavy_atoms(smiles: str) -> int:
    return len(_ATOM.findall(smiles))


def score(mode: str, smiles: str) -> float:
    if mode == "zero":
        return 0.0
    if mode == "heavy":
        return float(heavy_atoms(smiles))
    if mode == "affinity":
        return -heavy_atoms(smiles) / 10
    raise ValueError(mode)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="latentmol.echo_oracle")
    ap.add_argument("--mode", choices=("zero", "heavy", "affinity"), default="heavy")
    ap.add_argument("--shuffle", type=int, default=1)
    ap.add_argument("--drop", type=int, action="append", default=[])
    ap.add_argument("--garble", type=int, action="append", default=[])
    args = ap.parse_args(argv)

    held = []

    def flush():
        for line in reversed(held):
            sys.stdout.write(line + "\n")
        sys.stdout.flush()
        held.clear()

    for raw in sys.stdin:
        raw = raw.strip()
        if not raw:
            continue
        req = json.loads(raw)
        ident = req["id"]
        if ident in args.drop:
            continue
        if ident in args.garble:
            held.append(json.dumps({"id": ident, "score": "not a number"}))
        else:
            held.append(json.dumps({"id": ident, "score": score(args.mode, req["smiles"])}))
        if len(held) >= args.shuffle:
            flush()
    flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
