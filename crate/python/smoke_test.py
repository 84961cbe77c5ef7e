"""Smoke test for the least_volume_py extension.

Build and install first:
    cd crates/python && maturin develop --release
"""

import json
import math
import os
import tempfile

import least_volume_py as lv


def main():
    ds = lv.generate("curve1d", n=50, seed=7)
    assert len(ds) == 50 and ds.shape == [50, 2]
    assert len(ds.factors) == 50

    model = lv.Model.build("toy1d", ds, seed=0)
    assert model.latent_dim == 2
    history = model.train(ds, preset="toy1d", overrides=json.dumps({"epochs": 2000, "record_time": False}))
    rows = history.strip().splitlines()
    assert len(rows) == 2001, len(rows)

    recon = model.reconstruct(ds)
    mse = sum((a - b) ** 2 for a, b in zip(recon, ds.samples)) / len(recon)
    assert math.isfinite(mse) and mse < 1e-2, mse

    report = model.analyze(ds)
    assert 1 <= report["dim_estimate"] <= 2
    assert all(c["pass"] for c in report["bound_checks"])

    with tempfile.TemporaryDirectory() as d:
        ds.save(os.path.join(d, "c.lvds"))
        model.save(os.path.join(d, "m.lvae"))
        back = lv.Model.load(os.path.join(d, "m.lvae"))
        again = lv.Dataset.load(os.path.join(d, "c.lvds"))
        assert back.reconstruct(again) == recon

    try:
        lv.Model.build("toy2d", ds)
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch accepted")

    verify = lv.run_verify("interpolation")
    assert verify["pass"], verify

    print(f"ok: mse={mse:.2e} dim_estimate={report['dim_estimate']} pcc={report['pcc']}")


if __name__ == "__main__":
    main()
