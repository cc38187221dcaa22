"""Smoke test for the mesma_aug extension module.

Run after installing the module (see README):
    python crates/py/python/smoke_test.py
"""

import math
import os
import sys
import tempfile

import mesma_aug as m


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    enc, dec = m.build_architecture(198, 2)
    assert enc == [243, 53, 20], enc
    assert dec == [20, 53, 243], dec

    a, r = m.fcls_solve([0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]])
    assert close(a, [0.5, 0.5], 1e-9) and r < 1e-18, (a, r)

    ds = m.synthesize(seed=3, bands=40, pixels=60)
    lib = ds["library"]
    assert lib.class_sizes() == [5, 5, 5]
    assert abs(ds["realized_snr_db"] - 30.0) < 0.5

    plain = m.mesma_unmix(ds["image"], lib)
    assert plain["models_evaluated"] == 125
    for row in plain["abundances"]:
        assert abs(sum(row) - 1.0) < 1e-6 and min(row) >= 0.0

    models = [
        m.train_vae(lib.members(k), epochs=200, seed=k, kl_weight=0.01)
        for k in range(len(lib))
    ]
    log = models[0].training_log
    assert log[-1][0] <= log[0][0]

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "class_0.vae")
        models[0].save(path)
        again = m.VaeModel.load(path)
        z = [0.3, -1.2]
        assert again.decode(z) == models[0].decode(z)

        aug = m.augment_library(lib, models, 3, 9)
        assert aug.class_sizes() == [8, 8, 8]
        assert aug.synthetic_flags(0) == [False] * 5 + [True] * 3
        csv_path = os.path.join(tmp, "aug.csv")
        aug.to_csv(csv_path, flag_synthetic=True)
        back = m.Library.from_csv(csv_path)
        assert back.class_sizes() == [8, 8, 8]

        try:
            m.Library.from_csv(os.path.join(tmp, "missing.csv"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file accepted")

    augmented = m.mesma_unmix(ds["image"], aug)
    assert augmented["models_evaluated"] == 512
    assert all(x <= y for x, y in zip(augmented["residuals"], plain["residuals"]))

    err_plain = m.rmse(plain["abundances"], ds["abundances"])
    err_aug = m.rmse(augmented["abundances"], ds["abundances"])
    assert math.isfinite(err_plain) and math.isfinite(err_aug)

    try:
        m.rmse([[1.0, 2.0]], [[1.0]])
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch accepted")

    print(f"ok: RMSE_A mesma={err_plain:.4f} augmented={err_aug:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
