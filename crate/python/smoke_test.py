"""Smoke test for the dpmm_ad extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/dpmm_ad-*.whl
"""

import math
import os
import random
import sys
import tempfile

import dpmm_ad


def blobs(rng, centres, n, sd):
    out = []
    for _ in range(n):
        c = rng.choice(centres)
        out.append([x + rng.gauss(0.0, sd) for x in c])
    return out


def main():
    rng = random.Random(0)
    centres = [[3.0, 0.0, 0.0, 1.0], [0.0, 3.0, 0.0, 1.0], [0.0, 0.0, 3.0, 1.0]]
    train = [blobs(rng, centres, 500, 0.1) for _ in range(4)]

    model, report = dpmm_ad.fit(train, k=20, epochs=10, batch_vectors=1000, seed=1)
    assert len(report["val_log_likelihood"]) == 10
    assert abs(sum(model.weights) - 1.0) < 1e-9
    assert model.num_components == 20 and model.dim == 4

    normal = blobs(rng, centres, 200, 0.1)
    odd = blobs(rng, [[2.0, 2.0, -2.0, -1.0]], 200, 0.1)
    scores = model.scores(normal + odd, method="cosine")
    labels = [False] * 200 + [True] * 200
    auc = dpmm_ad.auroc(scores, labels)
    assert auc > 0.99, auc
    assert 0.0 <= dpmm_ad.aupr(scores, labels) <= 1.0

    t = dpmm_ad.select_threshold(scores[:200], 0.05)
    assert sum(s > t for s in scores[:200]) / 200 <= 0.05

    assert dpmm_ad.patch_to_pixel([[0.0], [1.0]], 4, 1) == [[0.0], [0.25], [0.75], [1.0]]
    assert dpmm_ad.dice([[True, False]], [[True, True]]) == 2 / 3
    assert abs(dpmm_ad.digamma(1.0) + 0.5772156649015329) < 1e-12
    _, p = dpmm_ad.paired_permutation_test([x + 0.1 for x in range(30)], list(range(30)), 10000, 3)
    assert p <= 0.01

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = os.path.join(tmp, "m.dpmm")
        model.save(ckpt)
        again = dpmm_ad.Model.load(ckpt)
        assert again.means == model.means and again.has_stats
        assert again.scores(normal) == model.scores(normal)

        shard = os.path.join(tmp, "s.adne")
        rows = [[float(i), float(-i)] for i in range(6)]
        dpmm_ad.write_shard(shard, 2, [("img", 2, 3, None, rows)])
        back = dpmm_ad.read_shard(shard)
        assert back["records"][0]["data"] == rows

        try:
            dpmm_ad.Model.load(os.path.join(tmp, "missing"))
        except OSError:
            pass
        else:
            raise AssertionError("missing checkpoint should raise")

    try:
        model.scores([[1.0, 2.0]])
    except ValueError as e:
        assert "dimension mismatch" in str(e)
    else:
        raise AssertionError("dimension mismatch should raise")

    print(f"ok: {model!r}, auroc {auc:.4f}, effective {model.effective_components(1e-3)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
