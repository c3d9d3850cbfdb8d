"""Smoke test for the imvc_py extension module.

Build it first, for example with
    maturin develop -m crates/python/Cargo.toml --features extension-module
or by copying target/release/libimvc_py.so next to this script as imvc_py.so.
"""

import json
import sys

import imvc_py


def main():
    views, labels = imvc_py.synthetic(n=60, k=3, v=2, sep=5.0, seed=1)
    assert len(views) == 2 and len(views[0]) == 60 and len(labels) == 60

    mask = imvc_py.generate_mask(60, 2, 0.5, 3)
    assert sum(all(row) for row in mask) == 30
    assert all(any(row) for row in mask)

    acc, nmi, ari = imvc_py.scores([0, 0, 1, 1], [1, 1, 0, 0])
    assert (acc, nmi, ari) == (1.0, 1.0, 1.0)
    assert imvc_py.assignment_map([[1, 9], [8, 0]]) == [1, 0]
    assert abs(imvc_py.effective_rank([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]) - 2.0) < 1e-9

    cfg = json.loads(imvc_py.default_config())
    assert cfg["latent_dim"] == 64

    out = imvc_py.run_synthetic(eta=0.5, seed=0)
    print("synthetic run: acc %.3f nmi %.3f ari %.3f erank(Z*) %.2f"
          % (out["acc"], out["nmi"], out["ari"], out["effective_rank_sub"]))
    assert len(out["labels"]) == 300
    print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
