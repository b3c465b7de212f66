"""Smoke test for the masqrad extension module.

Build with `cargo build -p masqrad-python`, copy target/debug/libmasqrad.so
to a directory on PYTHONPATH as masqrad.so, then run this script.
"""

import json
import sys
import tempfile
from pathlib import Path

import masqrad

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def check(name, ok):
    print(("PASS " if ok else "FAIL ") + name)
    return ok


def main():
    results = []

    results.append(check("accuracy 500/64", masqrad.accuracy(500, 64) == 0.872))
    try:
        masqrad.accuracy(0, 0)
        results.append(check("empty benchmark rejected", False))
    except ValueError:
        results.append(check("empty benchmark rejected", True))

    counts, failure_sum, distinct = masqrad.inaccuracy_breakdown(
        [("q1", "d", ["data_mapping", "significance"]), ("q2", "d", [])]
    )
    results.append(check("breakdown", (failure_sum, distinct) == (2, 1) and dict(counts)["significance"] == 1))

    mean, std, n = masqrad.duration_stats([1.0, 2.0, 3.0])
    results.append(check("duration stats", (mean, std, n) == (2.0, 1.0, 3)))

    checks = masqrad.kernels_selftest()
    results.append(check("kernel selftest", len(checks) > 0 and all(c[1] for c in checks)))

    head = masqrad.ClassifierHead.default()
    labels = [label for label, _ in head.predict("total revenue by genre over time")]
    results.append(check("classifier head", "trend_over_time" in labels and len(head.labels) == 8))

    with tempfile.TemporaryDirectory() as tmp:
        config = Path(tmp) / "engine.toml"
        config.write_text(
            f'run_store_root = "{Path(tmp) / "runs"}"\n\n'
            f'[backend]\nkind = "mock"\nscript = "{FIXTURES / "mock_happy.json"}"\n'
        )
        engine = masqrad.Engine(str(config))
        run = json.loads(engine.run("Which genre earns the most gross revenue?", str(FIXTURES / "movies.csv")))
        results.append(check("pipeline run", run["stage"] == "done"))

        store = masqrad.RunStore(str(engine.store_root))
        stored = json.loads(store.load_run(run["run_id"]))
        results.append(check("store round trip", stored == run))
        stages = [json.loads(t)["to"] for t in store.transitions(run["run_id"])]
        results.append(check("transition log", stages == masqrad.pipeline_stages() + ["done"]))
        try:
            store.load_run("run-missing")
            results.append(check("unknown run raises", False))
        except KeyError:
            results.append(check("unknown run raises", True))

    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
