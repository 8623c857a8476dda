import pytest

from mavdesign.errors import ValidationError
from mavdesign.optimizer import ComparisonRow, OptimResult
from mavdesign.reports import write_mse_csv, write_reports
from mavdesign.scenario import load_design
from mavdesign.sensitivity import check_problem
from mavdesign.simulation import MSERow


def test_mse_csv_bytes(tmp_path):
    rows = [MSERow("xi_1", "fixed", "table1", 10, 0.1 + 0.2, 0), MSERow("xi_2", "aic_select", "table1", 10, 1.0, 2)]
    path = write_mse_csv(rows, tmp_path / "mse.csv")
    assert path.read_bytes() == (
        b"design,method,truth_id,reps,mse,n_invalid\n"
        b"xi_1,fixed,table1,10,0.30000000000000004,0\n"
        b"xi_2,aic_select,table1,10,1.0,2\n"
    )


def test_dispatch(tmp_path, emax_sc, xi_1):
    report = check_problem(emax_sc.problem(), xi_1, emax_sc.space, grid_size=5)
    [sens] = write_reports(report, tmp_path / "a")
    assert sens.name == "sensitivity.csv"
    assert len(sens.read_text().splitlines()) == 1 + 5 + 5

    res = OptimResult(xi_1, report.phi, report, [], False)
    design_path, _ = write_reports(res, tmp_path / "b")
    assert load_design(design_path) == xi_1

    [cmp] = write_reports([ComparisonRow("xi_1", 2.0, 1.0), ComparisonRow("bad", None, None, "singular")], tmp_path / "c")
    assert cmp.read_text().splitlines() == ["design,phi,efficiency,error", "xi_1,2.0,1.0,", "bad,,,singular"]

    [mse] = write_reports([MSERow("xi_1", "fixed", "t", 1, 0.5, 0)], tmp_path / "d")
    assert mse.name == "mse.csv"

    with pytest.raises(ValidationError):
        write_reports([], tmp_path)
    with pytest.raises(ValidationError):
        write_reports("text", tmp_path)
