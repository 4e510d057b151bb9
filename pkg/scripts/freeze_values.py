"""Regenerate tests/frozen_values.json (regression anchors for seeded output).

Run only when a deliberate change to a generator or estimator is made, and
record the reason in the commit message.
"""
import argparse
import json
from pathlib import Path

from regsde.pathgen import gen_bifractional, gen_brownian, gen_fbm, make_grid
from regsde.regvar import n_covariation_eps
from regsde.transform import build_H, coefficient, decompose_support


def main():
    argparse.ArgumentParser(description=__doc__.splitlines()[0]).parse_args()
    g = make_grid(8)
    frozen = {
        "brownian_seed1_rep0": gen_brownian(g, 1, 0).values.tolist(),
        "fbm_h0.3_seed1_rep0": gen_fbm(g, 0.3, 1, 0).values.tolist(),
        "bifbm_h0.5_k0.6667_seed1_rep0": gen_bifractional(g, 0.5, 2 / 3, 1, 0).values.tolist(),
        "fbm_circulant_h0.3_seed1_rep0_n8": gen_fbm(g, 0.3, 1, 0, method="circulant").values.tolist(),
        "qv_brownian_1024_seed2_eps1/16": n_covariation_eps([gen_brownian(make_grid(1024), 2, 0)] * 2,
                                                            1 / 16),
    }
    coeff = coefficient("1 + x^2")
    comp = decompose_support(coeff)[0]
    hk = build_H(comp, coeff)
    frozen["H_1px2_at_2"] = float(hk.h(0.0, 2.0)[()])
    path = Path(__file__).resolve().parents[1] / "tests" / "frozen_values.json"
    path.write_text(json.dumps(frozen, indent=1) + "\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
