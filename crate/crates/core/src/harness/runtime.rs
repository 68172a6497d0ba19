use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::stream_rng;
use crate::attacks::{random_support, random_values};
use crate::consistency::{check_consistency, ConsistencyVariant};
use crate::error::{Error, Result};
use crate::estimators::{least_squares_estimate, EstimatorConfig, EstimatorKind, RunningEstimator};
use crate::model::{initial_state, measure, simulate_step, MeasurementFrame, SystemModel};

pub const BENCH_ESTIMATORS: [&str; 3] = ["mmse", "pcna", "cckf"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub steps: usize,
    pub reps: usize,
    pub seed: u64,
    pub sigma_w2: f64,
    pub sigma_v2: f64,
    pub magnitude: f64,
    /// Template for PCNA and CCKF; `estimator` is overridden.
    pub estimator: EstimatorConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            reps: 5,
            seed: 2024,
            sigma_w2: 1e-7,
            sigma_v2: 0.1,
            magnitude: 10.0,
            estimator: EstimatorConfig::new(EstimatorKind::Cckf),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub p: usize,
    pub n: usize,
    pub estimator: String,
    pub mean_seconds: f64,
    pub sd_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeTable {
    pub rows: Vec<RuntimeRow>,
}

impl RuntimeTable {
    pub fn get(&self, p: usize, estimator: &str) -> Option<&RuntimeRow> {
        self.rows.iter().find(|r| r.p == p && r.estimator == estimator)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,n,estimator,mean_s,sd_s,error\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.8e},{:.8e},{}",
                r.p,
                r.n,
                r.estimator,
                r.mean_seconds,
                r.sd_seconds,
                r.error.as_deref().unwrap_or("")
            )
            .expect("string write");
        }
        out
    }
}

/// Random model with `n = 3p`: Gaussian `C`, and `A` a random orthogonal
/// matrix scaled to spectral radius 0.95.
pub fn random_model<R: Rng + ?Sized>(
    p: usize,
    n: usize,
    sigma_w2: f64,
    sigma_v2: f64,
    rng: &mut R,
) -> Result<SystemModel> {
    let mut gauss = |r, c| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c = gauss(n, p);
    let q = gauss(p, p).qr().q();
    SystemModel::new(q * 0.95, c, sigma_w2, sigma_v2, [])
}

fn bench_frames<R: Rng>(
    model: &SystemModel,
    steps: usize,
    magnitude: f64,
    rng: &mut R,
) -> Result<(Vec<MeasurementFrame>, Vec<DVector<f64>>)> {
    let m = model.n() / 2 - 1;
    let support = random_support(model, m, rng)?;
    let mut state = initial_state(model, rng);
    let mut truths = vec![state.x.clone()];
    let mut frames = vec![measure(model, &state, rng)?];
    for _ in 1..steps {
        let (next, frame) = simulate_step(model, &state, rng)?;
        truths.push(next.x.clone());
        frames.push(frame);
        state = next;
    }
    for f in &mut frames {
        let v = random_values(model.n(), &support, magnitude, rng);
        f.inject(&v.phi, &v.support);
    }
    Ok((frames, truths))
}

fn time_mmse(model: &SystemModel, frames: &[MeasurementFrame], alpha: f64) -> Result<f64> {
    let all: Vec<usize> = (0..model.n()).collect();
    let start = Instant::now();
    for f in frames {
        let v = check_consistency(
            &ConsistencyVariant::StaticEuclidean,
            &model.c,
            &model.a,
            &all,
            &f.y_observed,
            alpha,
            model.sigma_v2,
        )?;
        std::hint::black_box(v);
        std::hint::black_box(least_squares_estimate(&model.c, &f.y_observed)?);
    }
    Ok(start.elapsed().as_secs_f64())
}

fn time_filter<R: Rng>(
    model: &SystemModel,
    frames: &[MeasurementFrame],
    cfg: &EstimatorConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut est = RunningEstimator::new(model, cfg.clone())?;
    let start = Instant::now();
    for f in frames {
        std::hint::black_box(est.step(f, rng)?);
    }
    Ok(start.elapsed().as_secs_f64())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Wall-clock cost of the least-squares detector, PCNA and CCKF over
/// `cfg.steps` steps on random `n = 3p` models under a random attack on
/// `⌊n/2⌋ − 1` sensors. Rows are ordered by `p`, then [`BENCH_ESTIMATORS`].
pub fn bench_runtime(p_list: &[usize], cfg: &BenchConfig) -> Result<RuntimeTable> {
    if cfg.reps == 0 || cfg.steps == 0 {
        return Err(Error::InvalidArgument("bench needs reps ≥ 1 and steps ≥ 1".into()));
    }
    if let Some(p) = p_list.iter().find(|&&p| p < 2) {
        return Err(Error::InvalidArgument(format!("state dimension {p} < 2")));
    }
    let mut rows = Vec::new();
    for &p in p_list {
        let n = 3 * p;
        let mut times: [Vec<f64>; 3] = Default::default();
        let mut errors: [Option<String>; 3] = Default::default();
        for rep in 0..cfg.reps {
            let mut rng = stream_rng(cfg.seed ^ (p as u64).rotate_left(32), rep as u64, 0);
            let prepared = random_model(p, n, cfg.sigma_w2, cfg.sigma_v2, &mut rng)
                .and_then(|m| bench_frames(&m, cfg.steps, cfg.magnitude, &mut rng).map(|f| (m, f)));
            let (model, (frames, _)) = match prepared {
                Ok(v) => v,
                Err(e) => {
                    errors.iter_mut().for_each(|slot| *slot = Some(e.to_string()));
                    continue;
                }
            };
            let mut filter_cfg = cfg.estimator.clone();
            let results = [
                time_mmse(&model, &frames, cfg.estimator.alpha),
                {
                    filter_cfg.estimator = EstimatorKind::Pcna;
                    time_filter(&model, &frames, &filter_cfg, &mut rng)
                },
                {
                    filter_cfg.estimator = EstimatorKind::Cckf;
                    time_filter(&model, &frames, &filter_cfg, &mut rng)
                },
            ];
            for (j, r) in results.into_iter().enumerate() {
                match r {
                    Ok(t) => times[j].push(t),
                    Err(e) => errors[j] = Some(e.to_string()),
                }
            }
        }
        for (j, name) in BENCH_ESTIMATORS.iter().enumerate() {
            let (mean_seconds, sd_seconds, error) = match &errors[j] {
                Some(e) => (0.0, 0.0, Some(e.clone())),
                None => {
                    let (m, s) = mean_sd(&times[j]);
                    (m, s, None)
                }
            };
            rows.push(RuntimeRow {
                p,
                n,
                estimator: (*name).to_owned(),
                mean_seconds,
                sd_seconds,
                error,
            });
        }
    }
    Ok(RuntimeTable { rows })
}
