import numpy as np
import pytest

from beq.errors import ConfigError
from beq.io import fmt, read_rows, read_solution_csv, write_rows, write_solution_csv


def test_fmt_round_trips_doubles():
    rng = np.random.default_rng(0)
    for v in np.r_[rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200), 0.1, 1 / 3, -0.0, 5e-324]:
        assert float(fmt(v)) == v
    assert fmt(True) == "true" and fmt(np.int64(3)) == "3" and fmt("Pass") == "Pass"


def test_solution_round_trip_is_bit_exact(tmp_path, halfspace_solution, borrow_solution):
    for sol in (halfspace_solution, borrow_solution):
        p = write_solution_csv(tmp_path / f"{sol.problem.value}.csv", sol)
        back = read_solution_csv(p, sol.problem)
        for name in ("t_grid", "A_vals", "B_vals", "u_vals", "a_vals", "fp_residual"):
            assert np.array_equal(getattr(back, name), getattr(sol, name)), name
        assert list(back.regime) == list(sol.regime)
        # writing again gives the same bytes
        q = write_solution_csv(tmp_path / "again.csv", back)
        assert q.read_bytes() == p.read_bytes()


def test_read_rejects_wrong_columns(tmp_path):
    p = write_rows(tmp_path / "x.csv", ["t", "A"], [[0.0, 1.0]])
    with pytest.raises(ConfigError):
        read_solution_csv(p, "constrained")
    (tmp_path / "empty.csv").write_text("", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_rows(tmp_path / "empty.csv")


def test_read_rejects_malformed_rows(tmp_path, full_solution):
    p = write_solution_csv(tmp_path / "s.csv", full_solution)
    text = p.read_text(encoding="utf-8").splitlines()
    text[3] = text[3].replace(",", ",x", 1)
    p.write_text("\n".join(text) + "\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="malformed"):
        read_solution_csv(p, "constrained")
