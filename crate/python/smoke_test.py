"""Smoke test for the kinetic_mmm extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import json
import math

import kinetic_mmm as km


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert "mm_boltzmann" in km.variants()

    assert km.michaelis_menten(350.0, 120.0, 350.0) == 60.0
    assert close(km.hill(200.0, 350.0, 1.0, 120.0), km.michaelis_menten(200.0, 120.0, 350.0))
    flat = km.carryover([5.0] * 30, 0.6, 1.0)
    assert all(close(v, 5.0) for v in flat)
    mixed = km.boltzmann_mix([[1.0, 2.0], [3.0, 4.0]], [1.0, 0.9], [0.0, 0.1])
    assert close(mixed[1][0], 0.9 * 3.0 + 0.1 * 1.0)

    v1, v2 = km.elastic_collision([1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0])
    assert all(close(a + b, c + d) for a, b, c, d in zip(v1, v2, [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]))

    est = km.estimate_pair([1.0, 2.0, 3.0, 5.0], [2.0, 1.0, 0.5, 1.0], [1.0, 1.85, 2.725, 4.55])
    assert close(est["a"], 0.9, 1e-8) and close(est["b"], 0.05, 1e-8), est

    econ = km.channel_economics([58921.0], [13531.0], k=406.0)
    assert f"{econ['cpa']:.1f}" == "4.4"
    assert econ["k_normalized"] == 406.0 / 58921.0

    ds, truth = km.generate_synthetic(n_weeks=60, n_channels=3, n_controls=1, seed=3, noise_sd=0.0)
    assert ds.n_weeks == 60 and ds.channel_names == ["ch1", "ch2", "ch3"]
    assert truth["fingerprint"] == ds.fingerprint()

    fit = km.Fit.run(ds, "mm_carryover", chains=2, warmup=200, draws=100, seed=1)
    assert fit.n_chains == 2 and fit.n_draws == 100
    pred = fit.predict(ds)
    r2 = km.fit_metrics(ds.response, pred["mean"])["r2"]
    assert r2 > 0.95, r2

    dec = fit.decompose(ds)
    for t in range(ds.n_weeks):
        parts = dec["baseline"][t] + dec["trend"][t] + dec["seasonality"][t]
        parts += sum(c[t] for c in dec["controls"]) + sum(c[t] for c in dec["contributions"]["values"])
        assert close(parts, dec["prediction"][t])

    again = km.Fit.from_json(fit.to_json())
    assert again.draws("km[ch1]") == fit.draws("km[ch1]")
    summary = {row["name"]: row for row in fit.summary()}
    assert summary["km[ch1]"]["q50"] > 0.0
    assert all(math.isfinite(r) or math.isnan(r) for _, r in fit.rhat)
    json.dumps(fit.contribution_percent(ds))

    try:
        km.Fit.run(ds, "mm_bolzmann")
    except ValueError as e:
        assert "mm_boltzmann" in str(e)
    else:
        raise AssertionError("bad variant accepted")

    print(f"kinetic_mmm smoke test ok: {fit!r}, r2={r2:.4f}")


if __name__ == "__main__":
    main()
