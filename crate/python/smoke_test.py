"""Smoke test for the mcst_py extension.

Build first with `cargo build --release -p mcst-py`, then run
`python3 python/smoke_test.py`. The module is imported from the installed
package if present, otherwise from target/release.
"""

import importlib.machinery
import importlib.util
import pathlib
import sys
import tempfile

import numpy as np


def load():
    try:
        import mcst_py

        return mcst_py
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for name in ("libmcst_py.so", "libmcst_py.dylib", "mcst_py.dll"):
        path = root / "target" / "release" / name
        if path.exists():
            loader = importlib.machinery.ExtensionFileLoader("mcst_py", str(path))
            spec = importlib.util.spec_from_file_location("mcst_py", path, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("mcst_py not built; run `cargo build --release -p mcst-py`")


def main():
    m = load()
    size = 32
    truth = m.phantom("shepp-logan", size)
    assert truth.shape == (size, size) and truth.min() >= 0.0

    geom = m.Geometry(views=40, detectors=47, size=size)
    clean = geom.project(truth)
    assert clean.shape == (40, 47)

    # Adjointness on random data.
    rng = np.random.default_rng(0)
    x = rng.standard_normal((size, size))
    s = rng.standard_normal((40, 47))
    lhs = float(np.sum(geom.project(x) * s))
    rhs = float(np.sum(x * geom.back_project(s)))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0), (lhs, rhs)

    y, w = m.simulate(clean, i0=1e4, sigma2=25.0, seed=1)
    y2, _ = m.simulate(clean, i0=1e4, sigma2=25.0, seed=1)
    assert np.array_equal(y, y2)
    assert np.all(w >= 0)

    x_fbp = geom.fbp(y)
    patches = np.hstack(
        [m.extract_patches(m.phantom("random-head", size, seed=k), 4, 2) for k in range(2)]
    )
    back = m.aggregate_patches(m.extract_patches(truth, 4, 1), size, size, 4, 1)
    assert back[10, 10] == 16 * truth[10, 10]

    model, objective = m.train(patches, clusters=[2, 2], eta=[80.0, 60.0], iterations=3, seed=1)
    assert model.layers == 2 and model.clusters == [2, 2]
    assert model.max_unitarity_error() < 1e-10
    assert objective[-1] <= objective[0]

    with tempfile.TemporaryDirectory() as tmp:
        path = str(pathlib.Path(tmp) / "m.mcst")
        model.save(path)
        again = m.Model.load(path)
        assert np.array_equal(again.transform(1, 0), model.transform(1, 0))

    x_ep, _ = m.reconstruct_ep(geom, y, w, beta=1e-4, x0=x_fbp, iterations=20)
    x_mc, obj = m.reconstruct_mcst(
        geom, y, w, model, beta=1e-3, gamma=[20.0, 10.0], x0=x_ep, outer=3, warm_start=True
    )
    assert len(obj) == 3 and np.all(x_mc >= 0)

    scores = {name: m.rmse(img, truth) for name, img in [("fbp", x_fbp), ("ep", x_ep), ("mcst", x_mc)]}
    assert m.ssim(truth, truth) == 1.0
    assert abs(m.rho_schedule(0) - 1.0) == 0.0

    try:
        m.Geometry(views=0, detectors=47, size=size)
    except ValueError:
        pass
    else:
        raise AssertionError("zero views accepted")

    print("ok", {k: round(v, 2) for k, v in scores.items()})


if __name__ == "__main__":
    main()
