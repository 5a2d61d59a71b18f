"""Smoke test for the ctdl extension module.

Build and run from the repository root:

    cargo build --release -p ctdl-py --features extension-module
    cp target/release/libctdl.so python/ctdl.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import ctdl  # noqa: E402


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    # closed-form linear flow
    z, logdet = ctdl.integrate_linear([[0.5, 0.0], [0.0, -0.25]], [1.0, 2.0], steps=64)
    assert close(z[0], math.exp(0.5), 1e-6) and close(z[1], 2 * math.exp(-0.25), 1e-6), z
    assert close(logdet, 0.25, 1e-6), logdet

    assert close(ctdl.gauss_logpdf([0.0, 0.0]), -math.log(2 * math.pi), 1e-12)

    points, labels = ctdl.make_circles(40, seed=1)
    assert len(points) == 40 and set(labels) == {0, 1}

    clf = ctdl.Classifier(pad=1, width=4, intervals=2, seed=3)
    p = clf.probability(points[0], steps=8)
    assert 0.0 <= p <= 1.0
    loss, grad = clf.loss_and_grad(points, labels, steps=8)
    assert len(grad) == len(clf.params) and math.isfinite(loss)

    flow = ctdl.Cnf(1, width=4, intervals=2, alpha=0.1, seed=2)
    flow.params = [0.0] * len(flow.params)
    assert close(flow.logdensity([0.3], steps=8), ctdl.gauss_logpdf([0.3]), 1e-12)
    samples = flow.sample(5, seed=4, steps=8)
    assert len(samples) == 5 and len(samples[0]) == 1

    game = ctdl.MeanFieldGame("crowd", alpha=0.5, width=4, seed=1)
    value, grad = game.objective([[0.0, 0.0], [0.5, -0.5]], steps=4)
    assert math.isfinite(value) and len(grad) == len(game.params)
    path = game.trajectory([0.0, 0.0], steps=4)
    assert len(path) == 5

    assert close(ctdl.straightness([[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]]), 0.0, 1e-12)

    with tempfile.TemporaryDirectory() as out:
        summary = ctdl.run(
            "train",
            'task = "cnf"\nseed = 1\n',
            out=out,
            overrides=["train.iterations=3", "train.log_every=1", "train.batch=4",
                       "train.train_steps=3", "cnf.width=3", "cnf.validation=4", "samples=3"],
        )
        assert "nll" in summary
        with open(os.path.join(out, "metrics.jsonl")) as f:
            assert len(f.readlines()) == 3

    try:
        ctdl.run("train", 'task = "mfg"\n')
    except ValueError as e:
        assert "variant" in str(e)
    else:
        raise AssertionError("missing variant accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
