"""Stochastic-intervention effect estimation on observational data.

The intervention reweights a unit's treatment probability p into
q = delta p / (delta p + 1 - p); delta = 1 leaves the propensity unchanged,
delta = 0 forces control.  The population effect of applying delta is
estimated by the cross-fitted influence-function average

    psi_hat = mean_i [ q_i m1_i + (1 - q_i) m0_i ],

where m1/m0 are doubly-robust arm terms built from held-out nuisance
predictions.  Cross-fitting: units are split into k folds, nuisances are fit
on each fold's complement, and every unit is evaluated by models that never
saw it.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ObservationalDataset, split_folds
from .nuisance import (
    BASIS_KINDS,
    FitError,
    OutcomeConfig,
    SolverConfig,
    fit_outcome,
    fit_propensity,
    make_basis,
)

# ---------------------------------------------------------------------------
# pointwise building blocks
# ---------------------------------------------------------------------------


def _check_delta(delta) -> np.ndarray:
    d = np.asarray(delta, dtype=float)
    if not np.isfinite(d).all() or (d < 0).any():
        raise ValueError("delta must be finite and >= 0")
    return d


def stochastic_propensity(p_hat, delta):
    """Reweighted treatment probability q = delta p / (delta p + 1 - p).

    Computed as delta p / (1 + (delta - 1) p), which makes the delta = 1
    identity exact in floating point.  Accepts scalars or arrays; broadcasts.

    Raises:
        ValueError: p_hat outside the open interval (0, 1), or delta
            negative/non-finite.
    """
    p = np.asarray(p_hat, dtype=float)
    if (p <= 0).any() or (p >= 1).any() or not np.isfinite(p).all():
        raise ValueError("p_hat must lie strictly inside (0, 1)")
    d = _check_delta(delta)
    q = d * p / (1.0 + (d - 1.0) * p)
    if np.isscalar(p_hat) and np.isscalar(delta):
        return float(q)
    return q


def m_term(treatments, outcomes, mu_arm, p_hat, arm: int):
    """Doubly-robust arm term: indicator-weighted residual plus the plug-in.

    m_arm = 1[t = arm] (y - mu_arm) / (arm p + (1 - arm)(1 - p)) + mu_arm
    """
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    t = np.asarray(treatments)
    y = np.asarray(outcomes, dtype=float)
    mu = np.asarray(mu_arm, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    denom = p if arm == 1 else 1.0 - p
    ind = (t == arm)
    resid = np.where(ind, (y - mu) / denom, 0.0)
    out = resid + mu
    if out.ndim == 0:
        return float(out)
    return out


def influence(q, m1, m0):
    """Influence value phi = q m1 + (1 - q) m0."""
    q = np.asarray(q, dtype=float)
    out = q * np.asarray(m1, dtype=float) + (1.0 - q) * np.asarray(m0, dtype=float)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# nuisance wiring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PropensitySpec:
    """How the treatment probability enters estimation.

    mode "fit" trains the basis-logistic model; "oracle" reads
    GroundTruth.true_propensity; "constant" uses a fixed probability
    (useful for misspecification experiments).
    """

    mode: str = "fit"
    basis_kind: str = "polynomial2"
    rbf_centers: int = 20
    clip: float = 0.01
    constant: float | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.mode not in ("fit", "oracle", "constant"):
            raise ValueError(f"unknown propensity mode {self.mode!r}")
        if self.basis_kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {self.basis_kind!r}")
        if self.mode == "constant":
            if self.constant is None or not 0.0 < self.constant < 1.0:
                raise ValueError("constant mode needs a probability in (0, 1)")


@dataclass(frozen=True)
class OutcomeSpec:
    """How the outcome regression enters estimation ("fit" or "oracle")."""

    mode: str = "fit"
    config: OutcomeConfig = field(default_factory=OutcomeConfig)

    def __post_init__(self):
        if self.mode not in ("fit", "oracle"):
            raise ValueError(f"unknown outcome mode {self.mode!r}")


@dataclass(frozen=True)
class NuisanceSpec:
    """Bundle of propensity and outcome settings used by the estimators."""

    propensity: PropensitySpec = field(default_factory=PropensitySpec)
    outcome: OutcomeSpec = field(default_factory=OutcomeSpec)


@dataclass(frozen=True, eq=False)
class UnitRecords:
    """Held-out nuisance predictions joined with the observed sample.

    One row per unit, in ascending unit order.  p_hat is None when the
    caller asked only for outcome predictions.
    """

    unit_index: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    p_hat: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.unit_index.shape[0]

    def require_p_hat(self) -> np.ndarray:
        if self.p_hat is None:
            raise ValueError("these records were built without propensity predictions")
        return self.p_hat


@dataclass(frozen=True)
class FoldDiagnostics:
    """Per-fold bookkeeping from one cross-fitting pass."""

    fold: int
    n_eval: int
    n_train: int
    n_train_treated: int
    propensity_iterations: int | None = None
    propensity_grad_norm: float | None = None
    outcome_train_rmse: float | None = None


def _propensity_for(spec: PropensitySpec, train: ObservationalDataset,
                    eval_data: ObservationalDataset, eval_idx: np.ndarray,
                    full: ObservationalDataset, seed: int):
    """Held-out propensity predictions plus optional solver diagnostics."""
    if spec.mode == "oracle":
        truth = full.truth
        if truth is None or truth.true_propensity is None:
            raise ValueError("oracle propensity requested but ground truth is absent")
        return truth.true_propensity[eval_idx], None
    if spec.mode == "constant":
        return np.full(eval_idx.shape[0], float(spec.constant)), None
    basis = make_basis(spec.basis_kind, train.covariates,
                       n_centers=spec.rbf_centers, seed=seed)
    model = fit_propensity(train, basis, solver=spec.solver, clip=spec.clip)
    return model.predict(eval_data.covariates), model


def _outcome_for(spec: OutcomeSpec, train: ObservationalDataset,
                 eval_data: ObservationalDataset, eval_idx: np.ndarray,
                 full: ObservationalDataset):
    """Held-out (mu0, mu1) predictions plus optional fit diagnostics."""
    if spec.mode == "oracle":
        truth = full.truth
        if truth is None:
            raise ValueError("oracle outcome requested but ground truth is absent")
        return truth.mu0[eval_idx], truth.mu1[eval_idx], None, None
    model = fit_outcome(train, spec.config)
    mu0 = model.predict(eval_data.covariates, 0)
    mu1 = model.predict(eval_data.covariates, 1)
    rmse = None
    path = model.train_rmse_path
    if path:
        rmse = float(np.mean([arr[-1] for arr in path.values()]))
    return mu0, mu1, rmse, model


def cross_fit_records(data: ObservationalDataset, k: int, seed: int,
                      nuisance: NuisanceSpec | None = None,
                      need_propensity: bool = True,
                      need_outcome: bool = True,
                      collect_models: list | None = None,
                      ) -> tuple[UnitRecords, tuple[FoldDiagnostics, ...]]:
    """Cross-fitted nuisance predictions for every unit.

    Folds come from split_folds(n, k, seed); each fold is predicted by models
    fit on its complement only, so no unit's outcome influences its own
    predictions.

    Args:
        collect_models: if a list is passed, one (propensity_model,
            outcome_model) pair per fold is appended to it (None entries for
            oracle/constant modes).

    Returns:
        (records, per-fold diagnostics), with records in ascending unit order.

    Raises:
        FitError: a fold's training complement lacks an arm or is otherwise
            unfittable; the message names the fold.
    """
    spec = nuisance or NuisanceSpec()
    n = data.n_units
    folds = split_folds(n, k, seed)
    p_hat = np.empty(n) if need_propensity else None
    mu0 = np.empty(n) if need_outcome else None
    mu1 = np.empty(n) if need_outcome else None
    diagnostics = []
    for fold in range(k):
        eval_idx = folds.indices(fold)
        train_idx = folds.complement(fold)
        train = data.subset(train_idx)
        eval_data = data.subset(eval_idx)
        diag_kwargs = dict(
            fold=fold,
            n_eval=int(eval_idx.shape[0]),
            n_train=int(train_idx.shape[0]),
            n_train_treated=int(train.treatments.sum()),
        )
        p_model = o_model = None
        try:
            if need_propensity:
                p_fold, p_model = _propensity_for(
                    spec.propensity, train, eval_data, eval_idx, data,
                    seed=1000003 * seed + fold,
                )
                p_hat[eval_idx] = p_fold
                if p_model is not None:
                    diag_kwargs["propensity_iterations"] = p_model.n_iter
                    diag_kwargs["propensity_grad_norm"] = p_model.grad_norm
            if need_outcome:
                mu0_fold, mu1_fold, rmse, o_model = _outcome_for(
                    spec.outcome, train, eval_data, eval_idx, data
                )
                mu0[eval_idx] = mu0_fold
                mu1[eval_idx] = mu1_fold
                diag_kwargs["outcome_train_rmse"] = rmse
        except FitError as err:
            raise FitError(f"fold {fold}: {err}") from None
        if collect_models is not None:
            collect_models.append((p_model, o_model))
        diagnostics.append(FoldDiagnostics(**diag_kwargs))
    records = UnitRecords(
        unit_index=np.arange(n, dtype=np.int64),
        treatments=data.treatments,
        outcomes=data.outcomes,
        mu0=mu0,
        mu1=mu1,
        p_hat=p_hat,
    )
    return records, tuple(diagnostics)


def cross_fit_records_from_models(data: ObservationalDataset, k: int, seed: int,
                                  fold_models: list,
                                  ) -> tuple[UnitRecords, tuple[FoldDiagnostics, ...]]:
    """Rebuild held-out records from previously saved per-fold models.

    fold_models must hold one (PropensityModel, OutcomeModel) pair per fold,
    in fold order, produced against the same (n, k, seed) fold assignment.
    """
    n = data.n_units
    if len(fold_models) != k:
        raise ValueError(f"expected {k} fold model pairs, got {len(fold_models)}")
    folds = split_folds(n, k, seed)
    p_hat = np.empty(n)
    mu0 = np.empty(n)
    mu1 = np.empty(n)
    diagnostics = []
    for fold in range(k):
        eval_idx = folds.indices(fold)
        eval_x = data.covariates[eval_idx]
        p_model, o_model = fold_models[fold]
        p_hat[eval_idx] = p_model.predict(eval_x)
        mu0[eval_idx] = o_model.predict(eval_x, 0)
        mu1[eval_idx] = o_model.predict(eval_x, 1)
        diagnostics.append(FoldDiagnostics(
            fold=fold,
            n_eval=int(eval_idx.shape[0]),
            n_train=n - int(eval_idx.shape[0]),
            n_train_treated=-1,
            propensity_iterations=p_model.n_iter,
            propensity_grad_norm=p_model.grad_norm,
        ))
    records = UnitRecords(
        unit_index=np.arange(n, dtype=np.int64),
        treatments=data.treatments,
        outcomes=data.outcomes,
        mu0=mu0,
        mu1=mu1,
        p_hat=p_hat,
    )
    return records, tuple(diagnostics)


# ---------------------------------------------------------------------------
# estimators and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InfluenceTable:
    """Per-unit influence components, one row per unit in ascending order."""

    unit_index: np.ndarray
    q: np.ndarray
    m1: np.ndarray
    m0: np.ndarray
    phi: np.ndarray
    tau_plugin: np.ndarray


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """Cross-fitted stochastic-intervention estimates for one delta.

    tau_ate_alg1 is the propensity-weighted average of predicted outcomes,
    mean(p mu1 + (1 - p) mu0); it is not the treated-minus-control contrast
    (see estimate_ate_difference for that).  tau_sie = psi_hat - mean(y).
    """

    tau_ate_alg1: float
    tau_sie: float
    psi_hat: float
    delta: float
    k: int
    seed: int
    n_units: int
    mean_outcome: float
    per_fold: tuple[FoldDiagnostics, ...]
    influence: InfluenceTable

    def to_dict(self) -> dict:
        """JSON-ready summary; the per-unit table is written separately."""
        return {
            "tau_ate_alg1": self.tau_ate_alg1,
            "tau_sie": self.tau_sie,
            "psi_hat": self.psi_hat,
            "delta": self.delta,
            "k": self.k,
            "seed": self.seed,
            "n_units": self.n_units,
            "mean_outcome": self.mean_outcome,
            "per_fold": [
                {
                    "fold": d.fold,
                    "n_eval": d.n_eval,
                    "n_train": d.n_train,
                    "n_train_treated": d.n_train_treated,
                    "propensity_iterations": d.propensity_iterations,
                    "propensity_grad_norm": d.propensity_grad_norm,
                    "outcome_train_rmse": d.outcome_train_rmse,
                }
                for d in self.per_fold
            ],
        }


def write_influence_csv(table: InfluenceTable, path: str | Path) -> None:
    """Write the per-unit influence table as a CSV side-file."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["unit_index", "q", "m1", "m0", "phi", "tau_plugin"])
        for i in range(table.unit_index.shape[0]):
            writer.writerow([
                str(int(table.unit_index[i])),
                str(float(table.q[i])),
                str(float(table.m1[i])),
                str(float(table.m0[i])),
                str(float(table.phi[i])),
                str(float(table.tau_plugin[i])),
            ])


def _influence_parts(records: UnitRecords, delta):
    p = records.require_p_hat()
    q = stochastic_propensity(p, delta)
    m1 = m_term(records.treatments, records.outcomes, records.mu1, p, 1)
    m0 = m_term(records.treatments, records.outcomes, records.mu0, p, 0)
    phi = influence(q, m1, m0)
    return q, m1, m0, phi


def report_from_records(records: UnitRecords, delta: float, k: int, seed: int,
                        per_fold: tuple[FoldDiagnostics, ...] = (),
                        ) -> EstimateReport:
    """Assemble an EstimateReport from already cross-fitted records."""
    d = _check_delta(delta)
    if d.ndim != 0:
        raise ValueError("a scalar delta is required here")
    q, m1, m0, phi = _influence_parts(records, float(d))
    p = records.require_p_hat()
    tau_plugin = p * records.mu1 + (1.0 - p) * records.mu0
    return EstimateReport(
        tau_ate_alg1=float(np.mean(tau_plugin)),
        tau_sie=float(np.mean(phi - records.outcomes)),
        psi_hat=float(np.mean(phi)),
        delta=float(d),
        k=k,
        seed=seed,
        n_units=records.n,
        mean_outcome=float(np.mean(records.outcomes)),
        per_fold=per_fold,
        influence=InfluenceTable(
            unit_index=records.unit_index,
            q=q,
            m1=m1,
            m0=m0,
            phi=phi,
            tau_plugin=tau_plugin,
        ),
    )


def estimate_sie(data: ObservationalDataset, delta: float, k: int = 5,
                 seed: int = 0,
                 nuisance: NuisanceSpec | None = None) -> EstimateReport:
    """Cross-fitted influence-function estimate of the intervention effect.

    Args:
        data: observational sample.
        delta: intervention multiplier on the treatment odds (scalar >= 0).
        k: number of cross-fitting folds (>= 2).
        seed: governs fold assignment and any seeded basis construction.
        nuisance: propensity/outcome settings; defaults fit both.

    Returns:
        EstimateReport carrying the three aggregates, per-fold diagnostics,
        and the per-unit influence table.
    """
    records, diagnostics = cross_fit_records(data, k, seed, nuisance)
    return report_from_records(records, delta, k, seed, per_fold=diagnostics)


def estimate_ate_difference(data: ObservationalDataset, k: int = 5,
                            seed: int = 0,
                            nuisance: NuisanceSpec | None = None) -> float:
    """Cross-fitted outcome-model contrast mean(mu1_hat - mu0_hat).

    This is the treated-minus-control average effect used for benchmark
    error tables; it needs no propensity model.
    """
    records, _ = cross_fit_records(data, k, seed, nuisance,
                                   need_propensity=False)
    return float(np.mean(records.mu1 - records.mu0))


def expected_response_from_records(records: UnitRecords, deltas) -> float:
    """Mean influence value under per-unit intervention strengths."""
    d = _check_delta(deltas)
    if d.shape != (records.n,):
        raise ValueError(
            f"expected {records.n} per-unit deltas, got shape {d.shape}"
        )
    _, _, _, phi = _influence_parts(records, d)
    return float(np.mean(phi))


def expected_response(data: ObservationalDataset, deltas, k: int = 5,
                      seed: int = 0,
                      nuisance: NuisanceSpec | None = None) -> float:
    """Cross-fit nuisances, then average phi(z_i, delta_i) over units."""
    records, _ = cross_fit_records(data, k, seed, nuisance)
    return expected_response_from_records(records, deltas)


def sweep_expected_outcome(data: ObservationalDataset, deltas, k: int = 5,
                           seed: int = 0,
                           nuisance: NuisanceSpec | None = None) -> np.ndarray:
    """psi_hat over a grid of scalar deltas, fitting nuisances only once."""
    grid = _check_delta(deltas)
    if grid.ndim != 1:
        raise ValueError("delta grid must be 1-d")
    records, _ = cross_fit_records(data, k, seed, nuisance)
    out = np.empty(grid.shape[0])
    for i, d in enumerate(grid):
        _, _, _, phi = _influence_parts(records, float(d))
        out[i] = float(np.mean(phi))
    return out


# ---------------------------------------------------------------------------
# baselines and metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PerArmLinearModel:
    """Least-squares linear regressions fit separately per arm."""

    coef0: np.ndarray
    coef1: np.ndarray
    used_ridge_fallback: bool = False

    def predict(self, x: np.ndarray, arm: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        coef = self.coef1 if arm == 1 else self.coef0
        return coef[0] + x @ coef[1:]

    def contrast(self, x: np.ndarray) -> np.ndarray:
        return self.predict(x, 1) - self.predict(x, 0)


def _ls_fit(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    n = x.shape[0]
    a = np.hstack([np.ones((n, 1)), x])
    coef, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    if rank == a.shape[1]:
        return coef, False
    warnings.warn(
        "rank-deficient least-squares design; falling back to ridge 1e-8",
        RuntimeWarning,
        stacklevel=3,
    )
    d = np.eye(a.shape[1])
    d[0, 0] = 0.0
    coef = np.linalg.solve(a.T @ a + 1e-8 * n * d, a.T @ y)
    return coef, True


def fit_per_arm_linear(data: ObservationalDataset) -> PerArmLinearModel:
    """Ordinary least squares per arm, with a ridge fallback on deficiency."""
    t = data.treatments
    if t.min() == t.max():
        raise FitError("per-arm linear fit needs both arms present")
    coef0, fb0 = _ls_fit(data.covariates[t == 0], data.outcomes[t == 0])
    coef1, fb1 = _ls_fit(data.covariates[t == 1], data.outcomes[t == 1])
    return PerArmLinearModel(coef0=coef0, coef1=coef1,
                             used_ridge_fallback=fb0 or fb1)


def baseline_ols(data: ObservationalDataset, seed: int = 0) -> float:
    """Average treated-minus-control contrast of per-arm linear fits.

    The seed argument is accepted for interface uniformity; the fit itself
    is deterministic.
    """
    del seed
    model = fit_per_arm_linear(data)
    return float(np.mean(model.contrast(data.covariates)))


def ipwe_from_propensity(treatments, outcomes, p_hat) -> float:
    """Horvitz-Thompson contrast with the given (clipped) probabilities."""
    t = np.asarray(treatments, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    if (p <= 0).any() or (p >= 1).any():
        raise ValueError("p_hat must lie strictly inside (0, 1)")
    return float(np.mean(t * y / p) - np.mean((1.0 - t) * y / (1.0 - p)))


def baseline_ipwe(data: ObservationalDataset,
                  nuisance: NuisanceSpec | None = None,
                  seed: int = 0) -> float:
    """Inverse-probability-weighted contrast with an in-sample propensity fit."""
    spec = (nuisance or NuisanceSpec()).propensity
    all_idx = np.arange(data.n_units)
    p_hat, _ = _propensity_for(spec, data, data, all_idx, data, seed=seed)
    return ipwe_from_propensity(data.treatments, data.outcomes, p_hat)


def epsilon_ate(estimate: float, truth: float) -> float:
    """Absolute estimation error |estimate - truth|."""
    est = float(estimate)
    tru = float(truth)
    if not (np.isfinite(est) and np.isfinite(tru)):
        raise ValueError("epsilon_ate needs finite inputs")
    return abs(est - tru)
