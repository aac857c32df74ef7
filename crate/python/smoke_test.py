"""Smoke test of the `pmsm` extension module.

Build and install it first:

    pip install --no-build-isolation -e crates/python
"""

import math
import pathlib
import sys

import pmsm

ROOT = pathlib.Path(__file__).resolve().parent.parent


def main() -> int:
    ipm = pmsm.Motor.builtin("ipm")
    assert ipm.params["Ld"] == 9.15e-3
    n = ipm.normalized()
    assert abs(n["a12"] - 0.053) < 1e-12, n

    phi = ipm.flux_from_current((2.0, 1.0))
    i = ipm.current_from_flux(phi)
    assert max(abs(i[0] - 2.0), abs(i[1] - 1.0)) < 1e-8
    (gdd, gdq), (gqd, gqq) = ipm.admittance((2.0, 1.0))
    assert gdq == gqd and gdd > 0 and gqq > 0

    file_motor = pmsm.Motor.load(str(ROOT / "configs" / "spm.toml"))
    assert file_motor.name == "spm"

    trace = pmsm.simulate(ipm, "rest")
    assert len(trace) == 401
    cols = trace.columns()
    assert list(cols)[0] == "t" and len(cols["theta"]) == len(trace)
    again = pmsm.Trace.from_csv(trace.to_csv())
    assert len(again) == len(trace)

    est = pmsm.estimate(trace, ipm)
    assert len(est["theta_hat"]) == len(est["index"]) > 0

    windows = pmsm.demodulate(cols["t"], list(zip(cols["i_gamma"], cols["i_delta"])))
    assert len(windows) == len(est["index"])

    step = pmsm.simulate(ipm, "load-step")
    est = pmsm.estimate(step, ipm, settle=0.5)
    print(f"load-step max error {est['max_error_deg']:.3f} deg")
    assert est["max_error_deg"] < 3.0

    rep = pmsm.identify(ipm)
    ld = rep["motor"].params["Ld"]
    print(f"identified Ld {ld * 1e3:.4f} mH, normalized {rep['normalized']}")
    assert abs(ld / 9.15e-3 - 1.0) < 5e-3

    avg = pmsm.averaging_check(ipm, "rest")
    assert math.isnan(avg["theta_ratio"]) and avg["ripple_rel_error"] < 0.02

    try:
        pmsm.simulate(ipm, "no-such-scenario")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown scenario accepted")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
