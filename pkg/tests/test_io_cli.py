import json

import numpy as np
import pytest

from wassbary.barycenter import DescentConfig
from wassbary.cli import main
from wassbary.errors import ParseError
from wassbary.estimation import SeparableWarp
from wassbary.io import (
    config_from_json,
    load_json,
    load_measure,
    map_from_json,
    map_to_json,
    measure_from_json,
    measure_to_json,
    save_json,
    write_csv,
)
from wassbary.maps import Assignment, GridMap, LinearMap, Monotone1D, ProductMap
from wassbary.measures import (
    Compactum,
    DiscreteMeasure,
    FrankCopula,
    GaussianMeasure,
    GridDensity,
    Measure1D,
    ProductMeasure,
)

MEASURES = [
    GaussianMeasure(np.array([[2.0, 0.3], [0.3, 1.0]])),
    Measure1D(np.array([0.1, 0.5, 2.0])),
    ProductMeasure((Measure1D.uniform(0, 1, 8), Measure1D.gaussian(1.0, 8)), FrankCopula(-8.0)),
    DiscreteMeasure(np.array([[0.0, 1.0], [2.0, 3.0]]), np.array([0.25, 0.75])),
    GridDensity.uniform(Compactum.unit(2), (3, 2)),
]

MAPS = [
    Monotone1D(np.array([0.0, 1.0]), np.array([1.0, 3.0])),
    LinearMap(np.diag([2.0, 0.5])),
    ProductMap((LinearMap(np.eye(1)), Monotone1D(np.array([0.0, 1.0]), np.array([0.0, 2.0])))),
    Assignment(np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]]), np.array([1, 0])),
    GridMap(np.zeros(1), np.ones(1), (4,), np.full((4, 1), 0.1)),
    SeparableWarp([0.0], [1.0], (-2,), 0.5),
]


@pytest.mark.parametrize("m", MEASURES, ids=lambda m: type(m).__name__)
def test_measure_round_trip(m):
    obj = json.loads(json.dumps(measure_to_json(m)))
    assert measure_to_json(measure_from_json(obj)) == measure_to_json(m)


@pytest.mark.parametrize("t", MAPS, ids=lambda t: type(t).__name__)
def test_map_round_trip(t):
    back = map_from_json(json.loads(json.dumps(map_to_json(t))))
    x = np.linspace(0.05, 0.95, 7).reshape(-1, 1)
    if t.dim == 2:
        x = np.hstack([x, x[::-1]])
    if isinstance(t, Assignment):
        x = t.source
    assert np.array_equal(back(x), t(x))


def test_unknown_types():
    with pytest.raises(ParseError):
        measure_from_json({"type": "cauchy"})
    with pytest.raises(ParseError):
        map_from_json({"type": "spline"})
    with pytest.raises(ParseError):
        measure_from_json({"type": "gaussian"})


def test_config():
    cfg = config_from_json({"tolerance": 1e-8, "initial": "use-first-input"})
    assert cfg.tolerance == 1e-8 and cfg.initial is None
    with pytest.raises(ParseError):
        config_from_json({"tolerence": 1.0})
    with pytest.raises(ParseError):
        config_from_json({"step": 2.0})
    assert config_from_json({}) == DescentConfig()


def test_parse_error_has_line(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "type": "gaussian",\n  "covariance": [[1]\n}\n')
    with pytest.raises(ParseError) as info:
        load_json(bad)
    assert info.value.line == 4
    assert f"{bad}:4:" in str(info.value)


def test_load_measure_tags_path(tmp_path):
    f = tmp_path / "m.json"
    f.write_text('{"type": "quantile1d"}')
    with pytest.raises(ParseError) as info:
        load_measure(f)
    assert str(f) in str(info.value)


def test_csv_format(tmp_path):
    f = tmp_path / "t.csv"
    write_csv(f, ("a", "b", "c"), [{"a": 1, "b": 0.1, "c": True}])
    assert f.read_text() == "a,b,c\n1,0.1,true\n"


def test_save_json_nonfinite(tmp_path):
    f = tmp_path / "x.json"
    save_json(f, {"v": float("nan"), "w": np.float64(2.0)})
    assert json.loads(f.read_text()) == {"v": None, "w": 2.0}


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def write_measure(path, m):
    save_json(path, measure_to_json(m))
    return str(path)


def test_barycenter_single_input(tmp_path):
    m = Measure1D.gaussian(2.0, 64)
    f = write_measure(tmp_path / "a.json", m)
    assert main(["barycenter", f, "--out", str(tmp_path / "o")]) == 0
    out = load_measure(tmp_path / "o" / "barycenter.json")
    assert np.array_equal(out.values, m.values)
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["converged"] and "wall_time_seconds" in manifest


def test_barycenter_gaussians(tmp_path, rng):
    files = [
        write_measure(tmp_path / f"g{i}.json", GaussianMeasure(np.cov(rng.normal(size=(2, 6)))))
        for i in range(4)
    ]
    out = tmp_path / "o"
    assert main(["barycenter", *files, "--out", str(out), "--tolerance", "1e-8"]) == 0
    rows = (out / "trace.csv").read_text().splitlines()
    assert rows[0] == "iteration,objective,grad_sq,delta"
    assert float(rows[-1].split(",")[2]) ** 0.5 < 1e-8
    assert (out / "map_4.json").exists()


def test_multicouple(tmp_path):
    a = write_measure(tmp_path / "a.json", DiscreteMeasure(np.array([[0.0]])))
    b = write_measure(tmp_path / "b.json", DiscreteMeasure(np.array([[2.0]])))
    assert main(["multicouple", a, b, "--out", str(tmp_path / "o")]) == 0
    mc = json.loads((tmp_path / "o" / "multicoupling.json").read_text())
    assert mc["pairwise_cost"] == pytest.approx(4.0)


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    assert main(["barycenter", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert "bad.json:1:" in capsys.readouterr().err
    assert main(["barycenter", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 5
    sing = write_measure(tmp_path / "s.json", GaussianMeasure(np.eye(2)))
    raw = json.loads(open(sing).read())
    raw["covariance"] = [[1.0, 0.0], [0.0, 0.0]]
    (tmp_path / "s.json").write_text(json.dumps(raw))
    code = main(["barycenter", sing, sing, "--out", str(tmp_path / "o")])
    assert code in (3, 4)
    with pytest.raises(SystemExit) as info:
        main(["figures", "nonsense"])
    assert info.value.code == 2


def test_strict_non_convergence(tmp_path, rng):
    files = [
        write_measure(tmp_path / f"g{i}.json", GaussianMeasure(np.cov(rng.normal(size=(2, 6)))))
        for i in range(3)
    ]
    args = ["barycenter", *files, "--out", str(tmp_path / "o"), "--max-iters", "1", "--tolerance", "1e-14"]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 4


def test_simulate(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--n", "3", "--intensity", "80", "--out", str(out), "--seed", "2"]) == 0
    for name in ("observed_1.csv", "warp_3.json", "estimated_map_2.json", "intensity_estimate.csv", "intensity.png"):
        assert (out / name).exists()
    warp = map_from_json(load_json(out / "warp_1.json"))
    assert isinstance(warp, SeparableWarp)


def test_experiment_small(tmp_path):
    cfg = tmp_path / "design.json"
    cfg.write_text(json.dumps({"n_grid": [2, 4], "tau_grid": [30, 90], "replicates": 1}))
    out = tmp_path / "o"
    assert main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert len(lines) == 3
    assert (out / "experiment.png").exists()


def test_experiment_bad_design(tmp_path):
    cfg = tmp_path / "design.json"
    cfg.write_text(json.dumps({"n_grid": [2, 4], "tau_grid": [90, 30]}))
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_figures_1d_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["figures", "1d-mixtures", "--out", str(out), "--seed", "1"]) == 0
    names = {p.name for p in out.iterdir()}
    expected = {f"input_{i}.csv" for i in range(1, 5)} | {f"map_{i}.csv" for i in range(1, 5)}
    assert expected | {"barycenter.csv", "trace.csv", "densities.png"} <= names
    trace = (out / "trace.csv").read_text().splitlines()
    assert len(trace) == 3  # header, gamma_0, gamma_1
