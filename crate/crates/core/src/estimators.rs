//! State estimators: least squares, the Kalman filter with an optionally
//! perturbed gain, and the two consistency-screened filters PCNA and CCKF.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consistency::{
    benign_floor, expand_with, pcna_select_with, residual_norm, seed_candidates, SeedSearch, ThresholdTable,
};
use crate::error::{Error, Result};
use crate::linalg::{self, select_entries, select_rows};
use crate::model::{MeasurementFrame, SystemModel};
use crate::par::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub k: u64,
}

impl FilterState {
    /// `x̂(0|0)` = least squares on every sensor of the first frame,
    /// `P(0|0) = I`.
    pub fn bootstrap(model: &SystemModel, frame: &MeasurementFrame) -> Result<Self> {
        Ok(Self {
            x_hat: least_squares_estimate(&model.c, &frame.y_observed)?,
            p: DMatrix::identity(model.p(), model.p()),
            k: frame.k,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Prediction-residual pruning.
    Pcna,
    /// Random seeding plus expansion under the filter-estimate check.
    #[default]
    RankExpanding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Least squares on all sensors, frame by frame.
    LeastSquares,
    /// Nominal-gain Kalman filter on all sensors.
    Kalman,
    /// Prediction-based consistency selection, then a filter update.
    Pcna,
    /// Consistent-set selection via `selector`, then a filter update.
    Cckf,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LeastSquares => "least_squares",
            Self::Kalman => "kalman",
            Self::Pcna => "pcna",
            Self::Cckf => "cckf",
        }
    }
}

fn d_alpha() -> f64 {
    0.005
}
fn d_p_h() -> f64 {
    0.995
}
fn d_n_best() -> usize {
    3
}
fn d_rho() -> f64 {
    0.05
}
fn d_max_seed_subsets() -> Option<u64> {
    Some(1000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Report label; defaults to the estimator name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub estimator: EstimatorKind,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_p_h")]
    pub p_h: f64,
    #[serde(default = "d_n_best")]
    pub n_best: usize,
    /// Relative half-width of the uniform gain perturbation.
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default)]
    pub selector: Selector,
    /// Cap on usable seed subsets per step (the exact count grows
    /// combinatorially with p). `None` means uncapped.
    #[serde(default = "d_max_seed_subsets")]
    pub max_seed_subsets: Option<u64>,
    #[serde(default)]
    pub seed_execution: Execution,
}

impl EstimatorConfig {
    pub fn new(estimator: EstimatorKind) -> Self {
        Self {
            label: None,
            estimator,
            alpha: d_alpha(),
            p_h: d_p_h(),
            n_best: d_n_best(),
            rho: d_rho(),
            selector: Selector::default(),
            max_seed_subsets: d_max_seed_subsets(),
            seed_execution: Execution::default(),
        }
    }

    pub fn name(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.estimator.name().to_owned())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: String| Err(Error::invalid_field(format!("estimators.{f}"), r));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", format!("{} outside (0, 1)", self.alpha));
        }
        if !(self.p_h > 0.0 && self.p_h < 1.0) {
            return bad("p_h", format!("{} outside (0, 1)", self.p_h));
        }
        if self.n_best == 0 {
            return bad("n_best", "must be ≥ 1".into());
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return bad("rho", format!("{} outside [0, 1)", self.rho));
        }
        if self.max_seed_subsets == Some(0) {
            return bad("max_seed_subsets", "must be ≥ 1".into());
        }
        Ok(())
    }
}

pub fn least_squares_estimate(h: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    linalg::lstsq(h, y)
}

/// `x̂(k|k−1) = A x̂`, `P(k|k−1) = A P Aᵀ + σ_w² I`.
pub fn kf_predict(state: &FilterState, model: &SystemModel) -> (DVector<f64>, DMatrix<f64>) {
    let x = &model.a * &state.x_hat;
    let mut p = &model.a * &state.p * model.a.transpose();
    for i in 0..p.nrows() {
        p[(i, i)] += model.sigma_w2;
    }
    linalg::symmetrize(&mut p);
    (x, p)
}

/// Nominal gain from `P Cᵀ` (precomputed, `p×d`) and `C_sub`.
///
/// For `d ≤ p` solves the `d×d` innovation system directly. For `d > p`
/// uses the push-through form `(σ² I + P CᵀC)⁻¹ P Cᵀ`, which equals
/// `P Cᵀ (C P Cᵀ + σ² I)⁻¹` but only needs a `p×p` factorization.
fn nominal_gain(
    p_pred: &DMatrix<f64>,
    pct: &DMatrix<f64>,
    c_sub: &DMatrix<f64>,
    sigma_v2: f64,
) -> Result<DMatrix<f64>> {
    let (d, p) = c_sub.shape();
    if d == 0 {
        return Err(Error::Precondition("gain needs at least one sensor".into()));
    }
    if d <= p {
        let mut s = c_sub * pct;
        for i in 0..d {
            s[(i, i)] += sigma_v2;
        }
        linalg::symmetrize(&mut s);
        let chol = s
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
        Ok(chol.solve(&pct.transpose()).transpose())
    } else {
        let mut m = p_pred * (c_sub.transpose() * c_sub);
        for i in 0..p {
            m[(i, i)] += sigma_v2;
        }
        m.lu()
            .solve(pct)
            .ok_or(Error::NotPositiveDefinite("innovation covariance"))
    }
}

/// Entrywise `K′_ij ~ U(K_ij − ρ|K_ij|, K_ij + ρ|K_ij|)`. No draws when
/// `ρ = 0`.
pub fn perturb_gain<R: Rng + ?Sized>(k: &mut DMatrix<f64>, rho: f64, rng: &mut R) {
    if rho == 0.0 {
        return;
    }
    for v in k.iter_mut() {
        let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
        *v += rho * v.abs() * u;
    }
}

/// `K = P Cᵀ (C P Cᵀ + σ_v² I)⁻¹`, then perturbed entrywise by `rho`.
pub fn kf_gain<R: Rng + ?Sized>(
    p_pred: &DMatrix<f64>,
    c_sub: &DMatrix<f64>,
    sigma_v2: f64,
    rho: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if p_pred.shape() != (c_sub.ncols(), c_sub.ncols()) {
        return Err(Error::Dimension {
            what: "predicted covariance",
            expected: c_sub.ncols(),
            found: p_pred.nrows(),
        });
    }
    let pct = p_pred * c_sub.transpose();
    let mut k = nominal_gain(p_pred, &pct, c_sub, sigma_v2)?;
    perturb_gain(&mut k, rho, rng);
    Ok(k)
}

/// `x̂ = x_pred + K(y − C x_pred)`, `P = (I − K C) P_pred`.
pub fn kf_update(
    x_pred: &DVector<f64>,
    p_pred: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    c_sub: &DMatrix<f64>,
    y_sub: &DVector<f64>,
    k: u64,
) -> Result<FilterState> {
    let (d, p) = c_sub.shape();
    if gain.shape() != (p, d) || y_sub.len() != d || x_pred.len() != p {
        return Err(Error::Dimension {
            what: "filter update",
            expected: d,
            found: y_sub.len(),
        });
    }
    let x_hat = x_pred + gain * (y_sub - c_sub * x_pred);
    let mut ikc = -(gain * c_sub);
    for i in 0..p {
        ikc[(i, i)] += 1.0;
    }
    let mut p_new = ikc * p_pred;
    linalg::symmetrize(&mut p_new);
    Ok(FilterState { x_hat, p: p_new, k })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: FilterState,
    /// Sensors used in the update, ascending.
    pub used: Vec<usize>,
    /// The selector could not certify a consistent set of at least δ
    /// sensors; the update still ran on the returned set.
    pub flagged: bool,
}

/// Per-model precomputation shared by consecutive steps.
#[derive(Clone, Debug)]
pub struct Engine<'m> {
    model: &'m SystemModel,
    cfg: EstimatorConfig,
    table: ThresholdTable,
    delta: usize,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m SystemModel, cfg: EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            table: ThresholdTable::new(cfg.alpha, model.sigma_v2, model.n())?,
            delta: benign_floor(model.n(), model.p())?,
            model,
            cfg,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    fn check_order(state: &FilterState, frame: &MeasurementFrame) -> Result<()> {
        if state.k + 1 != frame.k {
            return Err(Error::Precondition(format!(
                "filter at k = {} cannot take frame k = {}",
                state.k, frame.k
            )));
        }
        Ok(())
    }

    fn update_on<R: Rng + ?Sized>(
        &self,
        x_pred: &DVector<f64>,
        p_pred: &DMatrix<f64>,
        used: &[usize],
        frame: &MeasurementFrame,
        rho: f64,
        rng: &mut R,
    ) -> Result<FilterState> {
        let c_sub = select_rows(&self.model.c, used);
        let y_sub = select_entries(&frame.y_observed, used);
        let nominal = kf_gain(p_pred, &c_sub, self.model.sigma_v2, 0.0, rng)?;
        let mut state = kf_update(x_pred, p_pred, &nominal, &c_sub, &y_sub, frame.k)?;
        if rho > 0.0 {
            // The perturbed gain moves the estimate only. `(I − K′C)P` is
            // not PSD for K′ ≠ K, so P follows the nominal gain.
            let mut perturbed = nominal;
            perturb_gain(&mut perturbed, rho, rng);
            state.x_hat = x_pred + perturbed * (y_sub - &c_sub * x_pred);
        }
        Ok(state)
    }

    /// Nominal-gain filter update on every sensor.
    pub fn kalman_step(&self, state: &FilterState, frame: &MeasurementFrame) -> Result<StepOutcome> {
        Self::check_order(state, frame)?;
        let (x_pred, p_pred) = kf_predict(state, self.model);
        let used: Vec<usize> = (0..self.model.n()).collect();
        let c = &self.model.c;
        let gain = nominal_gain(&p_pred, &(&p_pred * c.transpose()), c, self.model.sigma_v2)?;
        let state = kf_update(&x_pred, &p_pred, &gain, c, &frame.y_observed, frame.k)?;
        Ok(StepOutcome {
            state,
            used,
            flagged: false,
        })
    }

    pub fn pcna_step<R: Rng + ?Sized>(
        &self,
        state: &FilterState,
        frame: &MeasurementFrame,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        Self::check_order(state, frame)?;
        let (x_pred, p_pred) = kf_predict(state, self.model);
        let sel = pcna_select_with(&self.model.c, &x_pred, &frame.y_observed, &self.table)?;
        let new = self.update_on(&x_pred, &p_pred, &sel.sensors, frame, self.cfg.rho, rng)?;
        Ok(StepOutcome {
            state: new,
            used: sel.sensors,
            flagged: sel.exhausted,
        })
    }

    pub fn cckf_step<R: Rng + ?Sized>(
        &self,
        state: &FilterState,
        frame: &MeasurementFrame,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        Self::check_order(state, frame)?;
        let (x_pred, p_pred) = kf_predict(state, self.model);
        let (used, flagged) = match self.cfg.selector {
            Selector::Pcna => {
                let sel = pcna_select_with(&self.model.c, &x_pred, &frame.y_observed, &self.table)?;
                (sel.sensors, sel.exhausted)
            }
            Selector::RankExpanding => self.rank_expanding(&x_pred, &p_pred, frame, rng)?,
        };
        let new = self.update_on(&x_pred, &p_pred, &used, frame, self.cfg.rho, rng)?;
        Ok(StepOutcome {
            state: new,
            used,
            flagged,
        })
    }

    /// Seeds from exact size-p fits, grows each seed that passes the
    /// filter-estimate check, and keeps the largest grown set (smallest
    /// residual on ties). Falls back to PCNA, flagged, when no seed is
    /// usable.
    fn rank_expanding<R: Rng + ?Sized>(
        &self,
        x_pred: &DVector<f64>,
        p_pred: &DMatrix<f64>,
        frame: &MeasurementFrame,
        rng: &mut R,
    ) -> Result<(Vec<usize>, bool)> {
        let model = self.model;
        let (n, p) = (model.n(), model.p());
        let y = &frame.y_observed;
        let mut search = SeedSearch {
            p_h: self.cfg.p_h,
            n_best: self.cfg.n_best,
            max_subsets: self.cfg.max_seed_subsets,
            execution: self.cfg.seed_execution,
        };
        search.n_best = search.n_best.min(search.subset_budget(n, p)?);
        let seeds = match seed_candidates(&model.c, y, &search, rng) {
            Ok(s) => s,
            Err(Error::InsufficientSeeds { .. }) => {
                let sel = pcna_select_with(&model.c, x_pred, y, &self.table)?;
                return Ok((sel.sensors, true));
            }
            Err(e) => return Err(e),
        };

        let pct_all = p_pred * model.c.transpose();
        let rho = self.cfg.rho;
        let filter_stat = |set: &[usize], rng: &mut R| -> Result<f64> {
            let c_sub = select_rows(&model.c, set);
            let pct = DMatrix::from_fn(p, set.len(), |r, j| pct_all[(r, set[j])]);
            let mut k = nominal_gain(p_pred, &pct, &c_sub, model.sigma_v2)?;
            perturb_gain(&mut k, rho, rng);
            let innov = select_entries(y, set) - &c_sub * x_pred;
            let x_f = x_pred + k * innov;
            Ok(residual_norm(&model.c, set, &x_f, y))
        };

        let mut best: Option<(Vec<usize>, f64)> = None;
        for seed in &seeds {
            // A statically perfect seed can still disagree with the filter,
            // e.g. under an attack confined to the column space of C.
            if filter_stat(&seed.subset, rng)? >= self.table.tau(p)? {
                continue;
            }
            let set = expand_with(&seed.subset, &seed.estimate, &model.c, y, |s| {
                Ok(filter_stat(s, rng)? < self.table.tau(s.len())?)
            })?;
            let l = filter_stat(&set, rng)?;
            let better = match &best {
                None => true,
                Some((b, bl)) => set.len() > b.len() || (set.len() == b.len() && l < *bl),
            };
            if better {
                best = Some((set, l));
            }
        }
        let Some((set, _)) = best else {
            let sel = pcna_select_with(&model.c, x_pred, y, &self.table)?;
            return Ok((sel.sensors, true));
        };
        let flagged = set.len() < self.delta;
        Ok((set, flagged))
    }
}

pub fn pcna_step<R: Rng + ?Sized>(
    state: &FilterState,
    frame: &MeasurementFrame,
    model: &SystemModel,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    Engine::new(model, cfg.clone())?.pcna_step(state, frame, rng)
}

pub fn cckf_step<R: Rng + ?Sized>(
    state: &FilterState,
    frame: &MeasurementFrame,
    model: &SystemModel,
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    Engine::new(model, cfg.clone())?.cckf_step(state, frame, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub estimate: DVector<f64>,
    pub used: Vec<usize>,
    pub flagged: bool,
}

/// One estimator's state across a frame sequence. The first frame
/// bootstraps the filters.
#[derive(Clone, Debug)]
pub struct RunningEstimator<'m> {
    engine: Engine<'m>,
    state: Option<FilterState>,
}

impl<'m> RunningEstimator<'m> {
    pub fn new(model: &'m SystemModel, cfg: EstimatorConfig) -> Result<Self> {
        Ok(Self {
            engine: Engine::new(model, cfg)?,
            state: None,
        })
    }

    pub fn state(&self) -> Option<&FilterState> {
        self.state.as_ref()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, frame: &MeasurementFrame, rng: &mut R) -> Result<StepReport> {
        let model = self.engine.model;
        let all: Vec<usize> = (0..model.n()).collect();
        if self.engine.cfg.estimator == EstimatorKind::LeastSquares {
            return Ok(StepReport {
                estimate: least_squares_estimate(&model.c, &frame.y_observed)?,
                used: all,
                flagged: false,
            });
        }
        let outcome = match &self.state {
            None => StepOutcome {
                state: FilterState::bootstrap(model, frame)?,
                used: all,
                flagged: false,
            },
            Some(s) => match self.engine.cfg.estimator {
                EstimatorKind::Kalman => self.engine.kalman_step(s, frame)?,
                EstimatorKind::Pcna => self.engine.pcna_step(s, frame, rng)?,
                EstimatorKind::Cckf => self.engine.cckf_step(s, frame, rng)?,
                EstimatorKind::LeastSquares => unreachable!(),
            },
        };
        let report = StepReport {
            estimate: outcome.state.x_hat.clone(),
            used: outcome.used,
            flagged: outcome.flagged,
        };
        self.state = Some(outcome.state);
        Ok(report)
    }
}
