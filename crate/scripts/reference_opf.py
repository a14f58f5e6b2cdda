"""Regenerate data/reference/pypower_opf.json.

Runs PYPOWER's MIPS-based AC OPF on the bundled MATPOWER cases and records
objective values, solution vectors and binding branch-flow limits. Requires
`pip install pypower`; unrated branches are given a non-binding 1e5 MVA
rating because PYPOWER cannot build an empty flow-constraint block.

A name such as `case9@50` first reduces the ratings of the first 90% of the
rated in-service branches by 50 percent.
"""
import json
import pathlib
import re
import sys
import warnings

import numpy as np
from pypower.api import ppoption, runopf

warnings.filterwarnings("ignore")
ROOT = pathlib.Path(__file__).resolve().parent.parent


def load(path):
    text = path.read_text()

    def matrix(name):
        m = re.search(r"mpc\." + name + r"\s*=\s*\[(.*?)\];", text, re.S)
        rows = []
        for line in m.group(1).split("\n"):
            line = line.split("%")[0].strip().rstrip(";").strip()
            if line:
                rows.append([float(v) for v in line.split()])
        return np.array(rows)

    base = float(re.search(r"mpc\.baseMVA\s*=\s*([\d.]+)", text).group(1))
    return dict(version="2", baseMVA=base, bus=matrix("bus"), gen=matrix("gen"),
                branch=matrix("branch"), gencost=matrix("gencost"))


def main(names):
    out = {}
    opt = ppoption(VERBOSE=0, OUT_ALL=0, PDIPM_FEASTOL=1e-9, PDIPM_GRADTOL=1e-9,
                   PDIPM_COMPTOL=1e-9, PDIPM_COSTTOL=1e-10)
    for name in names:
        base, _, m = name.partition("@")
        ppc = load(ROOT / "data" / "cases" / f"{base}.m")
        if m:
            br = ppc["branch"]
            rated = [k for k in range(len(br)) if br[k, 5] != 0 and br[k, 10] != 0]
            for k in rated[: len(rated) * 9 // 10]:
                br[k, 5] *= 1 - float(m) / 100
        ppc["branch"][ppc["branch"][:, 5] == 0, 5] = 1e5
        r = runopf(ppc, opt)
        bus, br, gen = r["bus"], r["branch"], r["gen"]
        row = {int(b): k for k, b in enumerate(bus[:, 0])}
        dtheta = [abs(bus[row[int(b[0])], 8] - bus[row[int(b[1])], 8]) for b in br]
        binding = [[k, "from" if b[17] > 1e-6 else "to"] for k, b in enumerate(br)
                   if b[17] > 1e-6 or b[18] > 1e-6]
        out[name] = {
            "converged": bool(r["success"]),
            "objective": float(r["f"]),
            "vm": bus[:, 7].tolist(),
            "va_deg": bus[:, 8].tolist(),
            "pg_mw": gen[:, 1].tolist(),
            "qg_mvar": gen[:, 2].tolist(),
            "max_branch_angle_deg": float(max(dtheta)),
            "binding_flow_limits": binding,
        }
    dest = ROOT / "data" / "reference" / "pypower_opf.json"
    dest.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1:] or ["case9", "case30", "case57", "case118", "case300", "case9@50",
                               "case1354pegase"])
