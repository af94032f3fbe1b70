"""Smoke test for the vforecast Python bindings.

Build and install first:

    pip install --no-build-isolation ./crates/py
    python python/smoke_test.py
"""

import math
import os
import tempfile

import vforecast as vf


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok   {what}")


def main():
    series = vf.generate("harmonic", 4, seed=1)
    check(len(series) == 4 and len(series[0]) == 200, "generate harmonic")
    check(vf.generate("ou", 2, seed=1) == vf.generate("ou", 2, seed=1), "generation is seeded")

    img = vf.render(series[0])
    check((img.height, img.width) == (64, 64), "render shape")
    sums = [sum(img.column(c)) for c in range(img.width)]
    check(max(abs(s - 1.0) for s in sums) < 1e-9, "columns are distributions")
    lo, hi = img.value_bounds
    decoded = img.decode()
    check(len(decoded) == 64 and lo <= min(decoded) <= max(decoded) <= hi, "decode stays in bounds")
    check(img.to_pgm().startswith(b"P5"), "pgm export")

    y = [0.01, 0.1, 0.75, 0.13, 0.01]
    yhat = [0.02, 0.63, 0.2, 0.12, 0.03]
    m = [(a + b) / 2 for a, b in zip(y, yhat)]
    oracle = 0.5 * sum(a * math.log(a / c) for a, c in zip(y, m)) + 0.5 * sum(
        b * math.log(b / c) for b, c in zip(yhat, m)
    )
    check(abs(vf.jsd(y, yhat) - oracle) < 1e-12, "jsd matches direct summation")
    check(vf.jsd(y, y) == 0.0 and vf.kld(y, yhat) > 0.0, "divergence identities")

    check(vf.column_iou(img, img) == [1.0] * 64, "iou of an image with itself")
    recon, pred = vf.region_iou(img, img)
    check((recon, pred) == (1.0, 1.0), "region iou")

    check(abs(vf.wpe([1, 3, 2, 4]) - math.log(2) / math.log(6)) < 1e-12, "wpe example")
    check(vf.wpe(list(range(20))) == 0.0, "wpe of a monotone series")

    x, target = vf.window_pair(series[0])
    check((len(x), len(target)) == (160, 160) and target[:120] == x[40:], "window pair overlap")
    flat = vf.random_walk(x, 40)
    check(flat == [x[-1]] * 40, "random walk mean forecast")
    check(len(vf.random_walk(x, 40, mode="sample", seed=3)) == 40, "random walk sample path")

    model = vf.Model.visual("tiny", seed=0)
    small = [vf.render(vf.window_pair(s[:40])[0], width=8, height=8) for s in series]
    out = model.forecast_images(small)
    check(len(out) == 4 and out[0].width == 8, "visual forward")
    rows = model.fit(
        [s[:40] for s in vf.generate("harmonic", 16, seed=2, split="train")],
        [s[:40] for s in vf.generate("harmonic", 4, seed=2, split="validation")],
        max_epochs=3,
        batch_size=8,
    )
    check(len(rows) == 3 and all(math.isfinite(r[2]) for r in rows), "visual training")

    num = vf.Model.numeric(160, seed=0)
    fc = num.forecast_series([x])
    check(len(fc[0]) == 160 and all(math.isfinite(v) for v in fc[0]), "numeric forward")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        again = vf.Model.load(path, model.config_json)
        check(again.forecast_images(small)[0].rows() == model.forecast_images(small)[0].rows(), "checkpoint round trip")

        exp = vf.Experiment.desk("harmonic")
        exp.out_dir = d
        exp.set_counts(8, 4, 16)
        exp.method = "control"
        report = exp.evaluate()
        check(report["pooled"]["pred_iou"]["mean"] == 1.0, "control experiment scores IoU 1")
        exp.method = "rw"
        report = exp.evaluate()
        check(0.0 <= report["pooled"]["pred_iou"]["mean"] <= 1.0, "random walk experiment")

    try:
        vf.render([1.0])
    except vf.VforecastError:
        check(True, "errors surface as VforecastError")
    else:
        raise SystemExit("FAIL: short series accepted")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
