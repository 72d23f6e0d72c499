"""Mixed-effects fitting, cohort table handling, report formatting."""

import numpy as np
import pytest

from nestedsurf.lme import (CohortTable, LmeFit, fit_lme, read_cohort_csv,
                            report_table, sex_adjusted_trend, simulate_cohort,
                            write_report_csv, write_trajectory_csv)
from nestedsurf.volumetry import VOLUME_CSV_HEADER

BETA = (1400.0, 150.0, -2.0, -1.5)
PSI = np.diag([100.0, 1.0])


def _hand_table(n_subjects=8, n_visits=3, noise=0.0, rng=None):
    ids, sex, age, t = [], [], [], []
    for s in range(n_subjects):
        for v in range(n_visits):
            ids.append(f"p{s:02d}")
            sex.append(float(s % 2))
            age.append(55.0 + 2.0 * s)
            t.append(float(v))
    sex = np.array(sex)
    age = np.array(age)
    t = np.array(t)
    icv = 10.0 + 2.0 * sex + 0.25 * age + 0.5 * t
    if noise:
        icv = icv + noise * rng.standard_normal(len(icv))
    sas = 5.0 - 0.1 * t + 0.05 * sex
    return CohortTable(tuple(ids), sex, age, t, icv, sas)


def _ols_reference(table, criterion="reml"):
    x = np.column_stack([np.ones(table.n_rows), table.sex,
                         table.baseline_age, table.interval])
    beta, _, _, _ = np.linalg.lstsq(x, table.icv, rcond=None)
    resid = table.icv - x @ beta
    dof = table.n_rows - x.shape[1] if criterion == "reml" else table.n_rows
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(x.T @ x)
    return beta, np.sqrt(np.diag(cov)), sigma2


class TestFixedEffectsOnly:
    def test_near_noiseless_recovery(self, philox):
        table = _hand_table(noise=1e-7, rng=philox(601))
        fit = fit_lme(table, "icv", random_effects=False)
        assert fit.effects == ("intercept", "sex", "baseline_age", "interval")
        assert fit.beta == pytest.approx([10.0, 2.0, 0.25, 0.5], abs=1e-6)
        assert fit.residual_var < 1e-8
        assert fit.random_intercept_var == 0.0
        assert fit.random_slope_var == 0.0
        assert fit.n_iterations == 0

    def test_matches_closed_form_ols(self, philox):
        table = _hand_table(n_subjects=12, noise=3.0, rng=philox(602))
        for criterion in ("reml", "ml"):
            fit = fit_lme(table, "icv", criterion=criterion,
                          random_effects=False)
            beta, se, sigma2 = _ols_reference(table, criterion)
            assert fit.beta == pytest.approx(beta, rel=1e-8)
            assert fit.se == pytest.approx(se, rel=1e-8)
            assert fit.residual_var == pytest.approx(sigma2, rel=1e-8)


class TestMixedModel:
    def test_row_order_does_not_matter(self, philox):
        rng = philox(603)
        table = simulate_cohort(20, 4, BETA, PSI, 25.0, seed=49021)
        perm = rng.permutation(table.n_rows)
        shuffled = CohortTable(
            tuple(np.asarray(table.subject_ids)[perm]), table.sex[perm],
            table.baseline_age[perm], table.interval[perm],
            table.icv[perm], table.sas[perm])
        a = fit_lme(table, "icv")
        b = fit_lme(shuffled, "icv")
        assert np.array_equal(a.beta, b.beta)
        assert np.array_equal(a.se, b.se)
        assert a.log_likelihood == b.log_likelihood
        assert np.array_equal(a.fitted, b.fitted)

    def test_deviance_trace_descends(self):
        table = simulate_cohort(30, 4, BETA, PSI, 25.0, seed=49022)
        fit = fit_lme(table, "icv")
        trace = np.array(fit.deviance_trace)
        assert len(trace) == fit.n_iterations + 1
        assert (np.diff(trace) <= 1e-8 * np.abs(trace[:-1])).all()
        assert fit.log_likelihood == pytest.approx(-0.5 * trace[-1])

    def test_extra_covariate_cannot_lower_ml_likelihood(self):
        table = simulate_cohort(30, 4, BETA, PSI, 25.0, seed=49023)
        full = fit_lme(table, "sas", criterion="ml", adjust_for_icv=True)
        reduced = fit_lme(table, "sas", criterion="ml", adjust_for_icv=False)
        assert full.log_likelihood >= reduced.log_likelihood - 1e-6
        assert "icv" in full.effects
        assert "icv" not in reduced.effects

    def test_single_cohort_recovery(self):
        table = simulate_cohort(60, 4, BETA, PSI, 25.0, seed=49024)
        fit = fit_lme(table, "icv")
        for j, truth in enumerate(BETA):
            assert abs(fit.beta[j] - truth) < 4.0 * fit.se[j]
        assert 20.0 < fit.random_intercept_var < 500.0
        assert fit.residual_var == pytest.approx(25.0, rel=0.5)
        assert fit.n_subjects == 60
        assert fit.n_obs == 240

    def test_shrinkage_pulls_fitted_toward_subjects(self):
        table = simulate_cohort(30, 4, BETA, PSI, 25.0, seed=49025)
        mixed = fit_lme(table, "icv")
        flat = fit_lme(table, "icv", random_effects=False)
        y = table.icv[np.lexsort((table.sas, table.icv, table.interval,
                                  np.asarray(table.subject_ids)))]
        assert np.abs(mixed.fitted - y).mean() < np.abs(flat.fitted - y).mean()


class TestFitValidation:
    def test_unknown_response(self):
        table = _hand_table()
        with pytest.raises(ValueError, match="response must be one of"):
            fit_lme(table, "brain")

    def test_unknown_criterion(self):
        table = _hand_table()
        with pytest.raises(ValueError, match="criterion must be one of"):
            fit_lme(table, "icv", criterion="mle")

    def test_rank_deficient_design(self):
        table = _hand_table()
        same_sex = CohortTable(table.subject_ids, np.zeros(table.n_rows),
                               table.baseline_age, table.interval,
                               table.icv, table.sas)
        with pytest.raises(ValueError, match="rank-deficient"):
            fit_lme(same_sex, "icv")

    def test_too_few_observations(self):
        table = _hand_table(n_subjects=2, n_visits=2)
        with pytest.raises(ValueError, match="more coefficients than"):
            fit_lme(table, "icv")

    def test_needs_repeat_visits(self):
        ids = tuple(f"p{i}" for i in range(5)) + ("p5", "p5")
        sex = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0])
        age = np.array([50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 75.0])
        t = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
        table = CohortTable(ids, sex, age, t, np.arange(7.0),
                            np.arange(7.0) * 0.1)
        with pytest.raises(ValueError, match="repeat visits"):
            fit_lme(table, "icv")


class TestCohortTableValidation:
    def test_empty(self):
        with pytest.raises(ValueError, match="no rows"):
            CohortTable((), [], [], [], [], [])

    def test_column_length_mismatch(self):
        with pytest.raises(ValueError, match="one value per row"):
            CohortTable(("a", "b"), [0.0], [60.0, 60.0], [0.0, 1.0],
                        [1.0, 2.0], [1.0, 2.0])

    def test_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            CohortTable(("a", "a"), [0.0, 0.0], [60.0, 60.0], [0.0, 1.0],
                        [1.0, np.nan], [1.0, 2.0])

    def test_bad_sex_code(self):
        with pytest.raises(ValueError, match="sex must be coded"):
            CohortTable(("a", "a"), [2.0, 2.0], [60.0, 60.0], [0.0, 1.0],
                        [1.0, 2.0], [1.0, 2.0])

    def test_negative_interval(self):
        with pytest.raises(ValueError, match="nonnegative"):
            CohortTable(("a", "a"), [0.0, 0.0], [60.0, 60.0], [-1.0, 0.0],
                        [1.0, 2.0], [1.0, 2.0])

    def test_missing_first_visit(self):
        with pytest.raises(ValueError, match="no interval-0 first visit"):
            CohortTable(("a", "a"), [0.0, 0.0], [60.0, 60.0], [1.0, 2.0],
                        [1.0, 2.0], [1.0, 2.0])

    def test_sex_changes_across_visits(self):
        with pytest.raises(ValueError, match="changes sex"):
            CohortTable(("a", "a"), [0.0, 1.0], [60.0, 60.0], [0.0, 1.0],
                        [1.0, 2.0], [1.0, 2.0])


class TestCohortCsv:
    def _rows(self):
        return [
            "s1,0,0.0,f,71.0,1400.1,9.9,4.2,14.1,33.5",
            "s1,1,1.0,F,71.0,1398.2,9.8,4.2,14.0,33.4",
            "s2,0,0.0,male,64.0,1550.0,10.2,4.5,14.7,34.0",
            "s2,1,1.5,1,64.0,1548.9,10.1,4.5,14.6,33.9",
        ]

    def test_roundtrip_with_sex_tokens(self, tmp_path):
        path = tmp_path / "cohort.csv"
        path.write_text(VOLUME_CSV_HEADER + "\n" + "\n".join(self._rows())
                        + "\n")
        table = read_cohort_csv(str(path))
        assert table.subject_ids == ("s1", "s1", "s2", "s2")
        assert list(table.sex) == [0.0, 0.0, 1.0, 1.0]
        assert list(table.interval) == [0.0, 1.0, 0.0, 1.5]
        assert table.icv[2] == 1550.0
        assert table.sas[0] == 9.9

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "cohort.csv"
        path.write_text("subject,icv\ns1,1400\n")
        with pytest.raises(ValueError, match="expected header"):
            read_cohort_csv(str(path))

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "cohort.csv"
        path.write_text(VOLUME_CSV_HEADER + "\ns1,0,0.0,f,71.0,1400.1\n")
        with pytest.raises(ValueError, match="malformed cohort row"):
            read_cohort_csv(str(path))

    def test_unrecognized_sex(self, tmp_path):
        path = tmp_path / "cohort.csv"
        path.write_text(VOLUME_CSV_HEADER + "\n"
                        + "s1,0,0.0,x,71.0,1.0,1.0,1.0,1.0,1.0\n")
        with pytest.raises(ValueError, match="unrecognized sex"):
            read_cohort_csv(str(path))


def _fake_fit(response, p_sex):
    effects = ("intercept", "sex", "baseline_age", "interval")
    if response == "sas":
        effects = effects + ("icv",)
    k = len(effects)
    return LmeFit(response=response, criterion="reml", effects=effects,
                  beta=np.linspace(1.0, 2.0, k), se=np.full(k, 0.25),
                  p=np.full(k, p_sex), random_intercept_var=1.0,
                  random_slope_var=0.5, intercept_slope_cov=0.0,
                  residual_var=2.0, log_likelihood=-10.0, n_obs=20,
                  n_subjects=5, n_iterations=3,
                  deviance_trace=(21.0, 20.0), fitted=np.zeros(20))


class TestReporting:
    def test_alpha_boundary_flagging(self):
        def flagged_rows(text):
            return [ln for ln in text.splitlines() if ln.endswith(" *")]

        at = report_table(_fake_fit("icv", 0.05), _fake_fit("sas", 0.05))
        above = report_table(_fake_fit("icv", 0.051),
                             _fake_fit("sas", 0.051))
        assert len(flagged_rows(at)) == 6
        assert not flagged_rows(above)

    def test_values_shown_at_four_decimals(self):
        fit = _fake_fit("icv", 0.0123)
        text = report_table(fit, _fake_fit("sas", 0.5))
        j = fit.effects.index("sex")
        row = next(ln for ln in text.splitlines()
                   if ln.strip().startswith("sex"))
        assert f"{fit.beta[j]:.4f}" in row
        assert f"{fit.se[j]:.4f}" in row
        assert "0.0123" in row

    def test_panel_order_enforced(self):
        with pytest.raises(ValueError, match="icv fit first"):
            report_table(_fake_fit("sas", 0.5), _fake_fit("icv", 0.5))

    def test_report_csv(self, tmp_path):
        path = str(tmp_path / "report.csv")
        write_report_csv(_fake_fit("icv", 0.01), _fake_fit("sas", 0.9), path)
        lines = open(path).read().splitlines()
        assert lines[0] == "panel,effect,beta,se,p,significant"
        assert len(lines) == 7
        assert lines[1].startswith("icv,sex,")
        assert lines[1].endswith(",1")
        assert lines[4].startswith("sas,sex,")
        assert lines[4].endswith(",0")

    def test_trajectory_csv(self, tmp_path):
        table = simulate_cohort(10, 3, BETA, PSI, 25.0, seed=49026)
        fit = fit_lme(table, "icv")
        path = str(tmp_path / "traj.csv")
        write_trajectory_csv(table, fit, path)
        lines = open(path).read().splitlines()
        assert lines[0] == "subject_id,interval_years,response,fitted"
        assert len(lines) == 1 + table.n_rows
        fitted = np.array([float(ln.split(",")[3]) for ln in lines[1:]])
        assert np.array_equal(fitted, fit.fitted)

    def test_trajectory_size_mismatch(self, tmp_path):
        table = simulate_cohort(10, 3, BETA, PSI, 25.0, seed=49026)
        fit = fit_lme(table, "icv")
        small = simulate_cohort(5, 3, BETA, PSI, 25.0, seed=49026)
        with pytest.raises(ValueError, match="does not match the table"):
            write_trajectory_csv(small, fit, str(tmp_path / "t.csv"))

    def test_sex_adjusted_trend(self):
        table = simulate_cohort(20, 4, BETA, PSI, 25.0, seed=49027)
        fit = fit_lme(table, "icv")
        rows = sex_adjusted_trend(fit, table, intervals=(0.0, 1.0, 2.0))
        assert len(rows) == 6
        assert {r[0] for r in rows} == {0, 1}
        slope = fit.beta[fit.effects.index("interval")]
        female = [r for r in rows if r[0] == 0]
        assert female[1][2] - female[0][2] == pytest.approx(float(slope))


class TestSimulateCohort:
    def test_pure_function_of_seed(self):
        a = simulate_cohort(12, 3, BETA, PSI, 25.0, seed=7)
        b = simulate_cohort(12, 3, BETA, PSI, 25.0, seed=7)
        c = simulate_cohort(12, 3, BETA, PSI, 25.0, seed=8)
        assert np.array_equal(a.icv, b.icv)
        assert not np.array_equal(a.icv, c.icv)

    def test_layout(self):
        table = simulate_cohort(6, 4, BETA, PSI, 25.0, seed=1)
        assert table.n_rows == 24
        assert set(table.interval) == {0.0, 1.0, 2.0, 3.0}
        assert list(table.sex[:8]) == [0.0] * 4 + [1.0] * 4

    def test_indefinite_psi_rejected(self):
        with pytest.raises(ValueError, match="positive semidefinite"):
            simulate_cohort(6, 3, BETA, np.array([[1.0, 2.0], [2.0, 1.0]]),
                            25.0, seed=1)
