"""Smoke test for the Python extension.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/classmc-*.whl
"""
import math
import tempfile
from pathlib import Path

import classmc


def main():
    corpus = classmc.generate_synthetic(n_solutes=12, n_solvents=10, occupancy=0.5, seed=3)
    matrix = classmc.PropertyMatrix.from_records(corpus["records"])
    assert matrix.n_solutes == 12 and matrix.n_solvents == 10
    assert len(matrix) == len(corpus["records"])
    print(matrix)

    factors = classmc.fit_smcm(matrix, seed=1, max_iters=3000)
    completed = factors.complete()
    assert len(completed) == 12 and len(completed[0]) == 10
    i, j, y = matrix.entries()[0]
    assert math.isclose(factors.predict(i, j), completed[i][j])
    print("sMCM iterations", factors.iterations, "prediction", round(factors.predict(i, j), 3), "observed", round(y, 3))

    merges = classmc.hac_complete(completed)
    rows = classmc.cut_tree(matrix.n_solutes, merges, 3)
    assert sorted(set(rows)) == [0, 1, 2]
    order = classmc.sorted_order(matrix.n_solutes, merges)
    assert sorted(order) == list(range(matrix.n_solutes))
    cols = classmc.cut_tree(matrix.n_solvents, classmc.hac_complete([list(c) for c in zip(*completed)]), 2)

    fit = classmc.fit_hmcm(matrix, rows, cols, seed=1, max_iters=3000)
    assert len(fit.a) == 3 and len(fit.b) == 2
    assert math.isfinite(fit.predict(i, j))
    assert math.isfinite(fit.predict_cold_solute(0, j))

    m = classmc.metrics([1.0, -1.0])
    assert m["mae"] == 1.0 and m["mse"] == 1.0

    try:
        classmc.metrics([])
    except ValueError:
        pass
    else:
        raise AssertionError("empty residuals must raise")

    with tempfile.TemporaryDirectory() as tmp:
        csv = Path(tmp) / "corpus.csv"
        lines = ["solute,solvent,ln_gamma,quality"] + [f"{s},{w},{y!r},ok" for s, w, y in corpus["records"]]
        csv.write_text("\n".join(lines) + "\n")
        h1 = classmc.run_pipeline(str(csv), str(Path(tmp) / "a"), "n_solute_classes = 3\nn_solvent_classes = 2\nmax_iters = 2000\n")
        assert (Path(tmp) / "a" / "manifest.json").is_file()
        assert len(h1) == 64

    print("python smoke test passed")


if __name__ == "__main__":
    main()
