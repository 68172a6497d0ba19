use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{EstimatorSeries, ReportMetadata, RmseReport};
use super::{hex, stream_rng};
use crate::attacks::{
    observability_bypass, random_support, random_values, specific_sensor_attack, targeted_attack, AttackSpec,
    AttackVector, ObservabilityBypass,
};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, RunningEstimator};
use crate::model::{initial_state, load_model, measure, simulate_step, MeasurementFrame, SystemModel};
use crate::par::{self, Execution};

/// Labeling convention for plots: one step is 0.1 s.
pub const STEP_SECONDS: f64 = 0.1;

const PURPOSE_SIM: u64 = 0;
const PURPOSE_ATTACK: u64 = 1;
const PURPOSE_ESTIMATOR: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model_path: PathBuf,
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    #[serde(default)]
    pub attack: AttackSpec,
    /// First attacked step.
    #[serde(default)]
    pub attack_start: usize,
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid_field("steps", "must be ≥ 1"));
        }
        if self.runs == 0 {
            return Err(Error::invalid_field("runs", "must be ≥ 1"));
        }
        if self.attack_start >= self.steps && self.attack != AttackSpec::None {
            return Err(Error::invalid_field("attack_start", "must be < steps"));
        }
        if self.estimators.is_empty() {
            return Err(Error::invalid_field("estimators", "at least one estimator"));
        }
        if self.estimators.len() > 250 {
            return Err(Error::invalid_field("estimators", "at most 250 estimators"));
        }
        let mut names: Vec<String> = self.estimators.iter().map(|e| e.name()).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid_field(
                "estimators",
                format!("duplicate label `{}`", w[0]),
            ));
        }
        for e in &self.estimators {
            e.validate()?;
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

/// Reads a scenario file. A relative `model_path` is resolved against the
/// scenario file's directory.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if cfg.model_path.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.model_path = dir.join(&cfg.model_path);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Attack material that does not depend on the run.
#[derive(Clone, Debug, PartialEq)]
pub enum PreparedAttack {
    None,
    Random { m: usize, magnitude: f64 },
    Fixed(AttackVector),
    Window { bypass: ObservabilityBypass, eta: usize },
}

impl PreparedAttack {
    pub fn new(spec: &AttackSpec, model: &SystemModel) -> Result<Self> {
        spec.validate(model)?;
        let prepared = match spec {
            AttackSpec::None => Self::None,
            AttackSpec::Random { m, magnitude } => Self::Random {
                m: *m,
                magnitude: *magnitude,
            },
            AttackSpec::SpecificSensor { sensors, d } => Self::Fixed(specific_sensor_attack(
                &model.c,
                sensors,
                &DVector::from_column_slice(d),
            )?),
            AttackSpec::Targeted { targets, shifts } => {
                Self::Fixed(targeted_attack(&model.c, targets, &DVector::from_column_slice(shifts))?)
            }
            AttackSpec::ObservabilityBypass { eta, phi_base } => {
                let bypass = observability_bypass(model, *eta, &DVector::from_column_slice(phi_base))?;
                Self::Window { bypass, eta: *eta }
            }
        };
        if let Self::Fixed(v) = &prepared {
            v.check_against(model)?;
        }
        if let Self::Window { bypass, eta } = &prepared {
            for t in 0..*eta {
                let phi = bypass.block(t, model.n());
                if let Some(&i) = model.protected.iter().find(|&&i| phi[i] != 0.0) {
                    return Err(Error::Precondition(format!(
                        "window attack touches protected sensor {i}"
                    )));
                }
            }
        }
        Ok(prepared)
    }
}

fn nonzero_support(phi: &DVector<f64>) -> Vec<usize> {
    (0..phi.len()).filter(|&i| phi[i] != 0.0).collect()
}

/// Ground truth and observed frames for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunData {
    pub truths: Vec<DVector<f64>>,
    pub frames: Vec<MeasurementFrame>,
}

pub fn generate_run(cfg: &ScenarioConfig, model: &SystemModel, attack: &PreparedAttack, run: u64) -> Result<RunData> {
    let mut sim = stream_rng(cfg.seed, run, PURPOSE_SIM);
    let mut adv = stream_rng(cfg.seed, run, PURPOSE_ATTACK);

    let mut state = initial_state(model, &mut sim);
    let mut truths = Vec::with_capacity(cfg.steps);
    let mut frames = Vec::with_capacity(cfg.steps);
    truths.push(state.x.clone());
    frames.push(measure(model, &state, &mut sim)?);
    for _ in 1..cfg.steps {
        let (next, frame) = simulate_step(model, &state, &mut sim)?;
        truths.push(next.x.clone());
        frames.push(frame);
        state = next;
    }

    let random_support = match attack {
        PreparedAttack::Random { m, .. } => random_support(model, *m, &mut adv)?,
        _ => Vec::new(),
    };
    for (k, frame) in frames.iter_mut().enumerate().skip(cfg.attack_start) {
        match attack {
            PreparedAttack::None => {}
            PreparedAttack::Random { magnitude, .. } => {
                let v = random_values(model.n(), &random_support, *magnitude, &mut adv);
                frame.inject(&v.phi, &v.support);
            }
            PreparedAttack::Fixed(v) => frame.inject(&v.phi, &v.support),
            PreparedAttack::Window { bypass, eta } => {
                let phi = bypass.block((k - cfg.attack_start) % eta, model.n());
                let support = nonzero_support(&phi);
                frame.inject(&phi, &support);
            }
        }
    }
    Ok(RunData { truths, frames })
}

/// Per-run squared errors `‖x̂_t − x_t‖²`, one row per estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub sq_err: Vec<Vec<f64>>,
    pub flagged_steps: Vec<usize>,
    /// Hash of the frames each estimator consumed.
    pub frame_digests: Vec<[u8; 32]>,
}

pub fn simulate_run(
    cfg: &ScenarioConfig,
    model: &SystemModel,
    attack: &PreparedAttack,
    run: u64,
) -> Result<RunOutcome> {
    let data = generate_run(cfg, model, attack, run)?;
    let mut sq_err = Vec::with_capacity(cfg.estimators.len());
    let mut flagged_steps = Vec::with_capacity(cfg.estimators.len());
    let mut frame_digests = Vec::with_capacity(cfg.estimators.len());
    for (j, ecfg) in cfg.estimators.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, run, PURPOSE_ESTIMATOR + j as u64);
        let (errs, flagged, digest) = run_estimator(model, ecfg, &data, &mut rng)?;
        sq_err.push(errs);
        flagged_steps.push(flagged);
        frame_digests.push(digest);
    }
    Ok(RunOutcome {
        sq_err,
        flagged_steps,
        frame_digests,
    })
}

fn run_estimator<R: Rng>(
    model: &SystemModel,
    cfg: &EstimatorConfig,
    data: &RunData,
    rng: &mut R,
) -> Result<(Vec<f64>, usize, [u8; 32])> {
    let mut est = RunningEstimator::new(model, cfg.clone())?;
    let mut hasher = Sha256::new();
    let mut errs = Vec::with_capacity(data.frames.len());
    let mut flagged = 0;
    for (frame, truth) in data.frames.iter().zip(&data.truths) {
        frame.hash_into(&mut hasher);
        let step = est.step(frame, rng)?;
        errs.push((step.estimate - truth).norm_squared());
        flagged += usize::from(step.flagged);
    }
    Ok((errs, flagged, hasher.finalize().into()))
}

/// Runs `runs` seeded repetitions (run `r` uses stream `r` of the master
/// seed) and aggregates `RMSE_t = √(mean_r ‖x̂_t − x_t‖² / p)`.
pub fn monte_carlo(cfg: &ScenarioConfig, model: &SystemModel, runs: usize, execution: Execution) -> Result<RmseReport> {
    if runs == 0 {
        return Err(Error::invalid_field("runs", "must be ≥ 1"));
    }
    let cfg = ScenarioConfig { runs, ..cfg.clone() };
    cfg.validate()?;
    let attack = PreparedAttack::new(&cfg.attack, model)?;
    let outcomes = par::map_indexed(execution, runs, |r| simulate_run(&cfg, model, &attack, r as u64));

    let n_est = cfg.estimators.len();
    let mut sums = vec![vec![0.0; cfg.steps]; n_est];
    let mut flagged = vec![0usize; n_est];
    for outcome in outcomes {
        let outcome = outcome?;
        if outcome.frame_digests.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Precondition("estimators saw different frames".into()));
        }
        for j in 0..n_est {
            for (s, e) in sums[j].iter_mut().zip(&outcome.sq_err[j]) {
                *s += e;
            }
            flagged[j] += outcome.flagged_steps[j];
        }
    }
    let denom = runs as f64 * model.p() as f64;
    let series = cfg
        .estimators
        .iter()
        .zip(sums)
        .zip(flagged)
        .map(|((e, s), flagged_steps)| EstimatorSeries {
            estimator: e.name(),
            rmse: s.into_iter().map(|v| (v / denom).sqrt()).collect(),
            flagged_steps,
        })
        .collect();
    Ok(RmseReport {
        metadata: ReportMetadata {
            seed: cfg.seed,
            runs,
            steps: cfg.steps,
            attack_start: cfg.attack_start,
            step_seconds: STEP_SECONDS,
            config_digest: cfg.digest(),
        },
        series,
    })
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RmseReport> {
    cfg.validate()?;
    let model = load_model(&cfg.model_path)?;
    monte_carlo(cfg, &model, cfg.runs, Execution::Parallel)
}
