"""Smoke test for the ragbias_py extension.

Build and install first, for example:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import pathlib
import tempfile

import ragbias_py as rb

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main():
    m = rb.compute_metrics(
        ["unknown", "stereo", "stereo", "counter"],
        [("stereotyped", "stereo"), ("counter_stereotyped", "stereo")],
    )
    assert m["acc_a"] == 0.25 and m["diff_bias_a"] == 0.25, m
    assert m["acc_d"] == 0.5 and m["diff_bias_d"] == 1.0, m
    assert rb.compute_metrics([], [])["acc_a"] is None

    low, high = rb.bootstrap_ci(["unknown", "stereo"] * 50, [], "acc_a", resamples=1000, seed=3)
    assert low <= 0.5 <= high, (low, high)

    assert abs(rb.harmonic_impact(0.835, -0.384) - 0.526) <= 0.001
    assert rb.spearman_rho([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8

    idx = rb.SparseIndex([("a", "women are emotional"), ("b", "men are strong"), ("c", "weather today")])
    assert len(idx) == 3
    assert [d for d, _ in idx.search("emotional women", 2)] == ["a"]
    assert [d for d, _ in rb.dense_search(["x", "y"], [[1.0, 0.0], [0.0, 1.0]], [0.9, 0.1], 1)] == ["x"]

    try:
        rb.compute_metrics(["maybe"], [])
    except rb.RagbiasError:
        pass
    else:
        raise AssertionError("bad outcome accepted")

    cfg = rb.RunConfig.from_file(str(ROOT / "data" / "demo" / "run.json"))
    with tempfile.TemporaryDirectory() as tmp:
        cfg.output_dir = tmp
        plan = cfg.run(dry_run=True)
        assert plan["estimated_backend_calls"] == 0, plan
        report = cfg.run()
        assert report["fingerprint"] == cfg.fingerprint()
        assert report["slices"] and not report["skipped"]
        assert rb.load_run_report(cfg.run_dir) == report
        md = rb.render_report(cfg.run_dir)
        assert md.startswith("# "), md[:80]
        print(f"{len(report['slices'])} slices, trade-off rows {len(report['tradeoff']['rows'])}")
    print("smoke test ok")


if __name__ == "__main__":
    main()
