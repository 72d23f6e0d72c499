"""Longitudinal mixed-effects modelling of the nested volume measures.

One row per subject visit; the response (intracranial or
subarachnoid-space volume) follows a linear trend in follow-up
interval with fixed effects for sex and baseline age, plus a random
intercept and interval slope per subject.  The random-effect
covariance is profiled out in log-Cholesky form and minimized by
bounded quasi-Newton iteration; fixed effects then follow by
generalized least squares, with two-sided Wald tests under the
normal approximation.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import erfc

from .volumetry import VOLUME_CSV_HEADER

RESPONSES = ("icv", "sas")
CRITERIA = ("reml", "ml")

_FIXED_EFFECTS = {
    "icv": ("intercept", "sex", "baseline_age", "interval"),
    "sas": ("intercept", "sex", "baseline_age", "interval", "icv"),
}


@dataclass(frozen=True)
class CohortTable:
    """Long-format visit table, one row per subject visit.

    sex is coded 0 female, 1 male.  interval is years since the
    subject's own first visit, so every subject has an interval-0 row;
    sex and baseline age cannot change across a subject's rows.
    Volumes are cm^3, ages and intervals years.
    """

    subject_ids: tuple
    sex: np.ndarray
    baseline_age: np.ndarray
    interval: np.ndarray
    icv: np.ndarray
    sas: np.ndarray

    def __post_init__(self):
        ids = tuple(str(s) for s in self.subject_ids)
        if not ids:
            raise ValueError("cohort table has no rows")
        cols = {}
        for name in ("sex", "baseline_age", "interval", "icv", "sas"):
            col = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if len(col) != len(ids):
                raise ValueError(f"{name} must have one value per row")
            if not np.isfinite(col).all():
                raise ValueError(f"{name} contains non-finite values")
            col.setflags(write=False)
            cols[name] = col
        if not np.isin(cols["sex"], (0.0, 1.0)).all():
            raise ValueError("sex must be coded 0 (female) or 1 (male)")
        if (cols["interval"] < 0.0).any():
            raise ValueError("interval must be nonnegative")
        rows_of = {}
        for i, sid in enumerate(ids):
            rows_of.setdefault(sid, []).append(i)
        for sid, rows in rows_of.items():
            if cols["interval"][rows].min() != 0.0:
                raise ValueError(f"subject {sid!r} has no interval-0 first visit")
            for name in ("sex", "baseline_age"):
                if np.unique(cols[name][rows]).size != 1:
                    raise ValueError(f"subject {sid!r} changes {name} across visits")
        object.__setattr__(self, "subject_ids", ids)
        for name, col in cols.items():
            object.__setattr__(self, name, col)

    @property
    def n_rows(self) -> int:
        return len(self.subject_ids)

    @property
    def n_subjects(self) -> int:
        return len(set(self.subject_ids))


_SEX_CODES = {"0": 0.0, "1": 1.0, "f": 0.0, "m": 1.0, "female": 0.0, "male": 1.0}


def read_cohort_csv(path: str) -> CohortTable:
    """Load a volumetry CSV (same schema, same header line) as a cohort."""
    with open(path, "r", newline="") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != VOLUME_CSV_HEADER:
        raise ValueError(f"expected header {VOLUME_CSV_HEADER!r}")
    ids, sex, age, years, icv, sas = [], [], [], [], [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 10:
            raise ValueError(f"malformed cohort row: {ln!r}")
        code = _SEX_CODES.get(parts[3].strip().lower())
        if code is None:
            raise ValueError(f"unrecognized sex value: {parts[3]!r}")
        ids.append(parts[0])
        years.append(float(parts[2]))
        sex.append(code)
        age.append(float(parts[4]))
        icv.append(float(parts[5]))
        sas.append(float(parts[6]))
    return CohortTable(tuple(ids), sex, age, years, icv, sas)


@dataclass(frozen=True)
class LmeFit:
    """Fitted mixed model: GLS fixed effects plus variance components.

    fitted holds subject-specific predictions (fixed effects plus the
    best linear unbiased predictors of each subject's random intercept
    and slope) in the canonical row order used during fitting.
    """

    response: str
    criterion: str
    effects: tuple
    beta: np.ndarray
    se: np.ndarray
    p: np.ndarray
    random_intercept_var: float
    random_slope_var: float
    intercept_slope_cov: float
    residual_var: float
    log_likelihood: float
    n_obs: int
    n_subjects: int
    n_iterations: int
    deviance_trace: tuple
    fitted: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "effects", tuple(self.effects))
        object.__setattr__(self, "deviance_trace",
                           tuple(float(d) for d in self.deviance_trace))
        for name in ("beta", "se", "p", "fitted"):
            col = np.asarray(getattr(self, name), dtype=np.float64)
            col.setflags(write=False)
            object.__setattr__(self, name, col)
        if len(self.beta) != len(self.effects) or len(self.se) != len(self.effects):
            raise ValueError("one coefficient and one SE per effect required")
        if not (np.isfinite(self.se).all() and (self.se > 0.0).all()):
            raise ValueError("standard errors must be strictly positive")
        if ((self.p < 0.0) | (self.p > 1.0)).any():
            raise ValueError("p-values must lie in [0, 1]")
        det = (self.random_intercept_var * self.random_slope_var
               - self.intercept_slope_cov ** 2)
        if (self.random_intercept_var < 0.0 or self.random_slope_var < 0.0
                or det < -1e-9 * max(1.0, abs(self.random_intercept_var
                                              * self.random_slope_var))):
            raise ValueError("random-effect covariance must be positive semidefinite")


def _canonical_order(table: CohortTable) -> np.ndarray:
    # Fit results must not depend on row order; sort on every column so
    # any permutation of the same rows lands in one deterministic order.
    ids = np.asarray(table.subject_ids)
    return np.lexsort((table.sas, table.icv, table.interval, ids))


def _design(table, response, adjust_for_icv):
    order = _canonical_order(table)
    ids = np.asarray(table.subject_ids)[order]
    effects = list(_FIXED_EFFECTS[response])
    if response == "sas" and not adjust_for_icv:
        effects.remove("icv")
    cols = [np.ones(len(ids))]
    cols += [getattr(table, name)[order] for name in effects[1:]]
    xmat = np.column_stack(cols)
    yvec = getattr(table, response)[order]
    tvec = table.interval[order]
    uniq, starts, counts = np.unique(ids, return_index=True, return_counts=True)
    groups = []
    for c in np.unique(counts):
        idx = starts[counts == c][:, None] + np.arange(c)[None, :]
        zg = np.stack([np.ones(idx.shape), tvec[idx]], axis=2)
        groups.append((xmat[idx], yvec[idx], zg, idx))
    return tuple(effects), xmat, yvec, groups, len(uniq)


def _theta_parts(theta):
    # Log-Cholesky: positive diagonal through exp, free off-diagonal.
    e0, e2 = math.exp(theta[0]), math.exp(theta[2])
    lmat = np.array([[e0, 0.0], [theta[1], e2]])
    dl = (np.array([[e0, 0.0], [0.0, 0.0]]),
          np.array([[0.0, 0.0], [1.0, 0.0]]),
          np.array([[0.0, 0.0], [0.0, e2]]))
    return lmat @ lmat.T, tuple(d @ lmat.T + lmat @ d.T for d in dl)


def _profile(g, groups, n, p, reml, dgs=None):
    """Deviance with sigma^2 and beta profiled out, at relative covariance g.

    Each subject's marginal covariance is sigma^2 (I + Z g Z'); only the
    inner matrix enters the profiled objective.  When dgs carries the
    derivatives of g the analytic gradient is returned as well.
    """
    logdet_w = 0.0
    xtwx = np.zeros((p, p))
    xtwy = np.zeros(p)
    solved = []
    for xg, yg, zg, _idx in groups:
        w = np.eye(zg.shape[1]) + np.einsum("mcj,jk,mdk->mcd", zg, g, zg)
        chol = np.linalg.cholesky(w)
        logdet_w += 2.0 * float(np.log(np.diagonal(chol, axis1=1, axis2=2)).sum())
        rhs = np.concatenate([xg, yg[:, :, None], zg], axis=2)
        sol = np.linalg.solve(w, rhs)
        wx, wy, wz = sol[:, :, :p], sol[:, :, p], sol[:, :, p + 1:]
        xtwx += np.einsum("mci,mcj->ij", xg, wx)
        xtwy += np.einsum("mci,mc->i", xg, wy)
        solved.append((wx, wy, wz))
    xtwx = 0.5 * (xtwx + xtwx.T)
    beta = np.linalg.solve(xtwx, xtwy)
    q = 0.0
    for (xg, yg, _zg, _idx), (wx, wy, _wz) in zip(groups, solved):
        q += float(((yg - xg @ beta) * (wy - wx @ beta)).sum())
    # A perfect interpolation drives q to roundoff; the clamp keeps the
    # profiled log finite without disturbing any realistic fit.
    q = max(q, np.finfo(np.float64).tiny)
    dof = n - p
    if reml:
        dev = (logdet_w + np.linalg.slogdet(xtwx)[1]
               + dof * (1.0 + math.log(2.0 * math.pi * q / dof)))
    else:
        dev = logdet_w + n * (1.0 + math.log(2.0 * math.pi * q / n))
    if dgs is None:
        return dev, beta, xtwx, q, solved

    grad = np.zeros(3)
    scale = dof if reml else n
    for (xg, yg, zg, _idx), (wx, wy, wz) in zip(groups, solved):
        wr = wy - wx @ beta
        v = np.einsum("mcj,mcp->mjp", zg, wx)
        u = np.einsum("mcj,mc->mj", zg, wr)
        for k, dg in enumerate(dgs):
            # d log|W| = tr(W^-1 Z dG Z'); q and X'W^-1X pick up the
            # matching inner 2x2 forms (beta enters q only at its optimum,
            # so its own derivative drops out).
            grad[k] += float(np.einsum("mcj,jk,mck->", wz, dg, zg))
            grad[k] -= scale / q * float(np.einsum("mj,jk,mk->", u, dg, u))
            if reml:
                adot = -np.einsum("mjp,jk,mkq->pq", v, dg, v)
                grad[k] += float(np.trace(np.linalg.solve(xtwx, adot)))
    return dev, grad


_THETA_BOUNDS = ((-20.0, 10.0), (-1e3, 1e3), (-20.0, 10.0))


def fit_lme(table: CohortTable, response: str, criterion: str = "reml",
            random_effects: bool = True, adjust_for_icv: bool = True) -> LmeFit:
    """Fit the per-subject random intercept and slope model.

    response "icv" regresses on intercept, sex, and baseline age with a
    linear interval trend; "sas" adds the intracranial volume as a
    covariate (drop it with adjust_for_icv=False; the flag is ignored
    for "icv").  criterion picks the restricted ("reml", default) or
    plain ("ml") likelihood.  The variance search starts from a
    diagonal unit covariance and stops when the relative deviance
    change falls below 1e-10, capped at 500 iterations; exceeding the
    cap raises.  random_effects=False pins both random-effect variances
    to zero, which reduces the fit to ordinary least squares.
    """
    if response not in RESPONSES:
        raise ValueError(f"response must be one of {RESPONSES}")
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}")
    effects, xmat, yvec, groups, n_subjects = _design(table, response,
                                                      adjust_for_icv)
    n, p = xmat.shape
    if n <= p:
        raise ValueError("more coefficients than observations")
    if np.linalg.matrix_rank(xmat) < p:
        raise ValueError("design matrix is rank-deficient")
    repeat = sum(len(xg) for xg, _y, _z, _i in groups if xg.shape[1] >= 2)
    if repeat < 2:
        raise ValueError("need at least two subjects with repeat visits "
                         "to identify the random interval slope")

    reml = criterion == "reml"
    trace = []
    if random_effects:
        def objective(theta):
            g_k, dgs = _theta_parts(theta)
            return _profile(g_k, groups, n, p, reml, dgs)

        def record(xk):
            g_k, _ = _theta_parts(xk)
            trace.append(_profile(g_k, groups, n, p, reml)[0])

        theta0 = np.zeros(3)
        trace.append(objective(theta0)[0])
        res = minimize(objective, theta0, method="L-BFGS-B", jac=True,
                       bounds=_THETA_BOUNDS, callback=record,
                       options={"maxiter": 500, "ftol": 1e-10})
        # A stalled line search means no step improves the deviance, which
        # satisfies the relative-change stopping rule; only the iteration
        # cap counts as failure.
        if res.status == 1:
            raise ValueError(f"variance estimation did not converge: "
                             f"{str(res.message)}")
        g = _theta_parts(res.x)[0]
        n_iterations = int(res.nit)
    else:
        g = np.zeros((2, 2))
        n_iterations = 0

    dev, beta, xtwx, q, solved = _profile(g, groups, n, p, reml)
    if not trace:
        trace.append(dev)
    sigma2 = q / (n - p if reml else n)
    cov_beta = sigma2 * np.linalg.inv(xtwx)
    se = np.sqrt(np.diag(cov_beta))
    with np.errstate(divide="ignore"):
        z = np.where(se > 0.0, np.abs(beta) / se, np.inf)
    pvals = erfc(z / math.sqrt(2.0))
    psi = sigma2 * g

    fitted = np.empty(n)
    for (xg, yg, zg, idx), (wx, wy, _wz) in zip(groups, solved):
        resid_w = wy - wx @ beta
        blup = np.einsum("mcj,mc->mj", zg, resid_w) @ g
        fitted[idx] = xg @ beta + np.einsum("mcj,mj->mc", zg, blup)

    return LmeFit(response=response, criterion=criterion, effects=effects,
                  beta=beta, se=se, p=pvals,
                  random_intercept_var=float(psi[0, 0]),
                  random_slope_var=float(psi[1, 1]),
                  intercept_slope_cov=float(psi[0, 1]),
                  residual_var=float(sigma2),
                  log_likelihood=-0.5 * float(dev),
                  n_obs=n, n_subjects=n_subjects,
                  n_iterations=n_iterations, deviance_trace=trace,
                  fitted=fitted)


def simulate_cohort(n_subjects: int, n_visits: int, beta, psi, sigma2: float,
                    seed: int) -> CohortTable:
    """Balanced synthetic cohort with a known intracranial-volume model.

    beta is (intercept, sex, baseline_age, interval) for the icv
    column; psi is the 2x2 random intercept-slope covariance and
    sigma2 the residual variance.  Visits fall at whole years, sexes
    alternate, and baseline ages spread uniformly over 50 to 80.  The
    counter-based generator makes the table a pure function of seed.
    """
    beta = np.asarray(beta, dtype=np.float64).reshape(4)
    psi = np.asarray(psi, dtype=np.float64).reshape(2, 2)
    evals, evecs = np.linalg.eigh(0.5 * (psi + psi.T))
    if (evals < -1e-12).any():
        raise ValueError("psi must be positive semidefinite")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    rng = np.random.Generator(np.random.Philox(seed))
    sex = (np.arange(n_subjects) % 2).astype(np.float64)
    age = rng.uniform(50.0, 80.0, n_subjects)
    rand = rng.standard_normal((n_subjects, 2)) @ root.T
    noise = math.sqrt(sigma2) * rng.standard_normal((n_subjects, n_visits))
    t = np.arange(n_visits, dtype=np.float64)
    icv = (beta[0] + beta[1] * sex[:, None] + beta[2] * age[:, None]
           + beta[3] * t[None, :] + rand[:, :1] + rand[:, 1:] * t[None, :]
           + noise)
    # Secondary response so the table is complete; small independent signal.
    sas = (10.0 + 0.5 * sex[:, None] - 0.1 * t[None, :]
           + 0.2 * rng.standard_normal((n_subjects, n_visits)))
    ids = [f"s{s:03d}" for s in range(n_subjects) for _ in range(n_visits)]
    rep = np.repeat
    return CohortTable(tuple(ids), rep(sex, n_visits), rep(age, n_visits),
                       np.tile(t, n_subjects), icv.ravel(), sas.ravel())


_REPORT_ROWS = (("sex", "sex"), ("baseline_age", "baseline age"),
                ("interval", "follow-up interval"))
_PANELS = (("icv", "ICV"), ("sas", "SAS volume"))


def report_table(fit_icv: LmeFit, fit_sas: LmeFit, alpha: float = 0.05) -> str:
    """Two-panel coefficient table; rows at or below alpha are starred."""
    if fit_icv.response != "icv" or fit_sas.response != "sas":
        raise ValueError("pass the icv fit first and the sas fit second")
    if (fit_icv.n_obs, fit_icv.n_subjects) != (fit_sas.n_obs, fit_sas.n_subjects):
        raise ValueError("fits must come from the same cohort")
    lines = []
    for fit, (_key, label) in zip((fit_icv, fit_sas), _PANELS):
        lines.append(f"{label} (cm^3)")
        lines.append(f"  {'effect':<20}{'beta':>12}{'SE':>12}{'p':>10}")
        for eff, shown in _REPORT_ROWS:
            j = fit.effects.index(eff)
            flag = " *" if fit.p[j] <= alpha else ""
            lines.append(f"  {shown:<20}{fit.beta[j]:>12.4f}"
                         f"{fit.se[j]:>12.4f}{fit.p[j]:>10.4f}{flag}")
        lines.append("")
    lines.append(f"criterion: {fit_icv.criterion}; p: two-sided Wald, normal "
                 f"approximation; * marks p <= {alpha!r}")
    lines.append("units: volumes cm^3, ages and intervals years; "
                 "sex coded 0 female, 1 male")
    return "\n".join(lines)


REPORT_CSV_HEADER = "panel,effect,beta,se,p,significant"
TRAJECTORY_CSV_HEADER = "subject_id,interval_years,response,fitted"


def write_report_csv(fit_icv: LmeFit, fit_sas: LmeFit, path: str,
                     alpha: float = 0.05) -> str:
    """Machine-readable form of report_table, full precision."""
    if fit_icv.response != "icv" or fit_sas.response != "sas":
        raise ValueError("pass the icv fit first and the sas fit second")
    with open(path, "w", newline="") as fh:
        fh.write(REPORT_CSV_HEADER + "\n")
        for fit, (key, _label) in zip((fit_icv, fit_sas), _PANELS):
            for eff, _shown in _REPORT_ROWS:
                j = fit.effects.index(eff)
                sig = 1 if fit.p[j] <= alpha else 0
                fh.write(f"{key},{eff},{float(fit.beta[j])!r},"
                         f"{float(fit.se[j])!r},{float(fit.p[j])!r},{sig}\n")
    return path


def write_trajectory_csv(table: CohortTable, fit: LmeFit, path: str) -> str:
    """Observed and subject-specific fitted values, canonical row order."""
    if fit.n_obs != table.n_rows:
        raise ValueError("fit does not match the table size")
    order = _canonical_order(table)
    yvec = getattr(table, fit.response)[order]
    tvec = table.interval[order]
    with open(path, "w", newline="") as fh:
        fh.write(TRAJECTORY_CSV_HEADER + "\n")
        for i, row in enumerate(order):
            fh.write(f"{table.subject_ids[row]},{float(tvec[i])!r},"
                     f"{float(yvec[i])!r},{float(fit.fitted[i])!r}\n")
    return path


def sex_adjusted_trend(fit: LmeFit, table: CohortTable, intervals):
    """Population trend per sex with covariates held at per-sex means.

    Evaluates the fixed effects only, with baseline age (and the
    intracranial covariate, when the fit has one) frozen at that sex's
    cohort mean.  Returns (sex, interval, fitted) rows, the adjusted
    trendline form used for cohort-level plots.
    """
    rows = []
    slope = fit.beta[fit.effects.index("interval")]
    for sex in (0.0, 1.0):
        mask = table.sex == sex
        if not mask.any():
            continue
        held = {"intercept": 1.0, "sex": sex,
                "baseline_age": float(table.baseline_age[mask].mean())}
        if "icv" in fit.effects:
            held["icv"] = float(table.icv[mask].mean())
        base = sum(float(fit.beta[j]) * held[eff]
                   for j, eff in enumerate(fit.effects) if eff != "interval")
        rows.extend((int(sex), float(t), base + float(slope) * float(t))
                    for t in intervals)
    return rows
