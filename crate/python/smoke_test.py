"""Smoke test for the latent_ransac extension module.

Build and install it first, e.g. `maturin develop -m crates/python/Cargo.toml`
or `pip install ./crates/python`.
"""

import latent_ransac as lr


def recall(found, planted):
    hit = sum(1 for a, b in zip(found, planted) if a and b)
    return hit / max(1, sum(planted))


def main():
    print("latent_ransac", lr.__version__)

    inst = lr.synth("homography", n=500, omega=0.5, sigma=0.0, seed=1)
    assert len(inst["matches"]) == 500 and sum(inst["inlier_mask"]) == 250
    for mode in ("vanilla", "latent"):
        res = lr.estimate(inst["matches"], mode=mode, t=1.0, seed=2, table_bits=14)
        r = recall(res["inlier_mask"], inst["inlier_mask"])
        print(f"homography {mode}: inliers={res['best_inlier_count']} iterations={res['iterations_used']} "
              f"stop={res['stop_reason']} recall={r:.3f}")
        assert res["stop_reason"] == "criterion_met" and r == 1.0

    rig = lr.synth("rigid3d", n=300, omega=0.4, sigma=0.0, seed=3)
    res = lr.estimate(rig["matches"], problem="rigid3d", t=0.01, seed=4, table_bits=14)
    assert recall(res["inlier_mask"], rig["inlier_mask"]) == 1.0
    print(f"rigid3d latent: inliers={res['best_inlier_count']} collisions={res['counters']['collisions_reported']}")

    t = lr.calibrate_tolerance("homography", n=500, omega=0.2, sigma=1.0, seed=5, hypotheses=200)
    assert t > 0
    print(f"calibrated t at sigma=1: {t:.1f}")

    nv = lr.required_iterations(0.99, 0.5, 4)
    nl = lr.required_iterations(0.99, 0.5, 4, mode="latent")
    assert (nv, nl) == (72, 104), (nv, nl)

    try:
        lr.estimate([[1.0, 2.0, 3.0]])
    except ValueError as e:
        print("rejected malformed input:", e)
    else:
        raise AssertionError("malformed input accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
