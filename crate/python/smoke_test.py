#!/usr/bin/env python3
"""Smoke test for the Python bindings.

Builds expect `cargo build --release -p dtscr-py` to have produced
target/release/libdtscr.so; the script copies it next to a temp dir as
`dtscr.so` and imports it.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_dtscr():
    candidates = [
        ROOT / "target" / "release" / "libdtscr.so",
        ROOT / "target" / "debug" / "libdtscr.so",
        ROOT / "target" / "release" / "libdtscr.dylib",
        ROOT / "target" / "debug" / "libdtscr.dylib",
    ]
    lib = next((c for c in candidates if c.exists()), None)
    if lib is None:
        sys.exit("build the extension first: cargo build --release -p dtscr-py")
    tmp = Path(tempfile.mkdtemp(prefix="dtscr-py-"))
    suffix = ".so" if lib.suffix == ".so" else ".so"  # python loads .so on linux/mac
    shutil.copy2(lib, tmp / f"dtscr{suffix}")
    sys.path.insert(0, str(tmp))
    import dtscr  # noqa: E402

    return dtscr


def check(name, ok, detail=""):
    status = "ok" if ok else "FAIL"
    print(f"[{status}] {name}{(' - ' + detail) if detail else ''}")
    if not ok:
        sys.exit(1)


def main():
    dtscr = import_dtscr()

    ds = dtscr.simulate_preset(1, seed=20240803, n=400)
    check("simulate preset 1", ds.n == 400 and ds.p == 5 and ds.d == 7 and ds.m == 2, repr(ds))
    check("validation passes", all(passed for _, passed, _ in ds.validate()))

    model = dtscr.fit_two_step(ds)
    check("two-step fit", model.method == "two-step", repr(model))
    comparator = dtscr.fit_collapsed(ds)
    close = all(
        abs(a - b) < 0.05
        for j in (1, 2)
        for a, b in zip(model.beta(j), comparator.beta(j))
    )
    check("two-step tracks collapsed", close)

    z = [0.5] * ds.p
    surv = model.survival(z)
    check("survival non-increasing", all(a >= b - 1e-12 for a, b in zip(surv, surv[1:])))
    total = sum(dtscr.FittedModel.marginal_event_prob(model, j, z) for j in (1, 2)) + surv[-1]
    check("normalization", abs(total - 1.0) < 1e-12, f"sum={total:.15f}")
    cif1 = model.cif(1, z)
    check("cif non-decreasing", all(a <= b + 1e-12 for a, b in zip(cif1, cif1[1:])))

    auc, brier, auc_j, brier_j = dtscr.evaluate(model, ds)
    check("global auc in range", auc is not None and 0.0 < auc < 1.0, f"auc={auc:.3f}")
    check("global brier in range", brier is not None and 0.0 < brier < 1.0, f"bs={brier:.3f}")

    ll = dtscr.full_loglik(model, ds)
    check("full loglik finite", math.isfinite(ll), f"ll={ll:.2f}")

    text = model.to_json()
    back = dtscr.FittedModel.from_json(text)
    check("json round trip", back.beta(1) == model.beta(1))

    beta, se = dtscr.fit_beta(ds, 1)
    check("single-event fit", len(beta) == ds.p and all(s > 0 for s in se))
    alpha = dtscr.fit_alpha(ds, 1, 1, beta)
    check("alpha from moment equation", math.isfinite(alpha), f"alpha={alpha:.3f}")

    threshold, selected, _ = dtscr.sis(ds, seed=99)
    check("sis runs", threshold >= 0.0 and len(selected) == 2, f"w_n={threshold:.3f}")

    lasso_model, log_etas = dtscr.fit_two_step_lasso(ds, seed=7, folds=2)
    check("lasso fit", len(log_etas) == 2, f"log_etas={log_etas}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
