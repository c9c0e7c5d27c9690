"""Exercise the extension module end to end on a small synthetic workload.

Run after `pip install -e crates/python --no-build-isolation`.
"""

import json
import math
import random
import sys
import tempfile
from pathlib import Path

import perspecta

SMALL = """
[workload]
ips = 3000
rate = 2.5

[crowd]
ips = 1500
"""


def check_parser():
    line = ('64.0.0.1 - - [11/Dec/2016:05:33:28 -0400] "GET /support.html HTTP/1.1" '
            '200 15340 12 desktop static HIT node-1 off-1 text')
    rec = json.loads(perspecta.parse_line(line))
    assert rec["client_ip"] == "64.0.0.1" and rec["status_code"] == 200, rec
    assert perspecta.parse_line(perspecta.format_line(json.dumps(rec))) == json.dumps(rec, separators=(",", ":"))


def check_models():
    x = [0.3, -1.2]
    got = perspecta.gaussian_log_density(x, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    want = -math.log(2 * math.pi) - 0.5 * (0.09 + 1.44)
    assert abs(got - want) < 1e-12, (got, want)

    rng = random.Random(3)
    data = [[rng.gauss(0, 0.1), rng.gauss(0, 0.1)] for _ in range(200)]
    data += [[rng.gauss(3, 0.1), rng.gauss(3, 0.1)] for _ in range(200)]
    gmm = perspecta.Gmm(data, 2, 5)
    means = sorted(gmm.means)
    assert abs(means[0][0]) < 0.05 and abs(means[1][0] - 3) < 0.05, means
    ll = gmm.log_likelihoods
    assert all(b >= a - 1e-8 for a, b in zip(ll, ll[1:]))

    rows = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0]]
    scores = perspecta.IsolationForest(rows, seed=1).scores(rows)
    assert max(range(4), key=scores.__getitem__) == 3, scores

    best, evals = perspecta.minimize(lambda k: (k - 7) ** 2, 2, 20, 10, 0, integer=True)
    assert best == 7 and len(evals) <= 10, (best, evals)


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "synth.toml"
        cfg.write_text(SMALL)
        n = perspecta.synthesize(str(tmp / "syn"), seed=7, config=str(cfg))
        report = perspecta.run([str(tmp / "syn" / "access.log")], seed=1,
                               offerings=str(tmp / "syn" / "offerings.toml"))
        score = json.loads(report.score(str(tmp / "syn" / "truth.json")))
        print(f"{n} records, {len(report.confirmed())} confirmed entities")
        for name, c in sorted(score["classes"].items()):
            print(f"  {name:12} precision {c['precision']:.2f} recall {c['recall']:.2f}")
        assert score["classes"]["dos_ip"]["recall"] == 1.0
        assert score["crowd_false_positives"] == 0
        assert "Forensic summary" in report.summary()


if __name__ == "__main__":
    check_parser()
    check_models()
    check_pipeline()
    print("ok")
    sys.exit(0)
