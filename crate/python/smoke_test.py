"""Smoke test for the bayescall_py extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/bayescall_py-*.whl
"""

import json
import math
import os
import tempfile

import bayescall_py as bc

SMALL = {
    "depth": "8",
    "width": "3",
    "coverage": "6",
    "hidden1": "4",
    "hidden2": "4",
    "dense_units": "4",
    "epochs": "1",
    "batch_size": "8",
    "n_mc": "4",
}


def main():
    assert abs(bc.softplus(0.0) - math.log(2.0)) < 1e-15
    assert abs(bc.kl_gaussian([1.0], [math.log(math.e - 1.0)], 1.0) - 0.5) < 1e-12
    try:
        bc.kl_gaussian([0.0], [0.0], 0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero prior scale accepted")

    with tempfile.TemporaryDirectory() as tmp:
        data = os.path.join(tmp, "d.bvcd")
        before, after = bc.simulate(data, n=60, seed=3, balance=True, overrides=SMALL)
        assert after[0] == after[1] == min(before)

        ckpt = os.path.join(tmp, "m.bvc")
        log = bc.train(data, ckpt, head="bayes", overrides=SMALL)
        assert len(log) == 1 and log[0][2] > 0.0

        model = bc.Model.load(ckpt)
        assert (model.depth, model.width, model.head) == (8, 3, "bayes")
        assert model.num_parameters() > 0
        assert bc.Model.load(ckpt).to_bytes() == open(ckpt, "rb").read()

        probs = model.predict(data, n_mc=4, seed=1)
        assert len(probs) == sum(after)
        assert all(0.0 <= p <= 1.0 for p in probs)
        assert probs == model.predict(data, n_mc=4, seed=1)

        report = json.loads(bc.evaluate(ckpt, data, os.path.join(tmp, "e"), overrides=SMALL))
        assert report["n_mc"] == 4 and 0.0 <= report["accuracy"] <= 1.0

        summary = json.loads(
            bc.mask_eval(ckpt, data, os.path.join(tmp, "m"), mask_rows="2..8", overrides=SMALL)
        )
        assert math.isclose(
            summary["entropy_delta"],
            summary["mean_entropy_masked"] - summary["mean_entropy_in"],
        )

        try:
            bc.simulate(data, overrides={"bogus": "1"})
        except ValueError as e:
            assert "bogus" in str(e)
        else:
            raise AssertionError("unknown key accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
