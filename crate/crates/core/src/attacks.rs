//! False data injection attack generators.
//!
//! All generators are pure functions of their inputs (plus an rng for the
//! random attack). Use [`AttackVector::check_against`] to confirm a vector
//! leaves a model's protected sensors alone.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SystemModel;

/// Default random-attack magnitude, about 30σ_v at σ_v² = 0.1.
pub const DEFAULT_MAGNITUDE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackVector {
    pub phi: DVector<f64>,
    /// Attacked sensors, ascending.
    pub support: Vec<usize>,
}

impl AttackVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            phi: DVector::zeros(n),
            support: Vec::new(),
        }
    }

    pub fn check_against(&self, model: &SystemModel) -> Result<()> {
        let n = model.n();
        if self.phi.len() != n {
            return Err(Error::Dimension {
                what: "attack vector",
                expected: n,
                found: self.phi.len(),
            });
        }
        if let Some(&i) = self.support.iter().find(|&&i| model.is_protected(i)) {
            return Err(Error::Precondition(format!("attack touches protected sensor {i}")));
        }
        let mut in_support = vec![false; n];
        for &i in &self.support {
            if i >= n {
                return Err(Error::Precondition(format!("support index {i} out of range")));
            }
            in_support[i] = true;
        }
        if let Some(i) = (0..n).find(|&i| !in_support[i] && self.phi[i] != 0.0) {
            return Err(Error::Precondition(format!("nonzero attack outside support at {i}")));
        }
        Ok(())
    }
}

fn default_magnitude() -> f64 {
    DEFAULT_MAGNITUDE
}

/// Attack parameterizations, as they appear in scenario files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    #[default]
    None,
    /// `m` sensors chosen once per run; values `M·N(0,1)` redrawn each step.
    Random {
        m: usize,
        #[serde(default = "default_magnitude")]
        magnitude: f64,
    },
    /// Stealthy attack confined to `sensors`.
    SpecificSensor { sensors: Vec<usize>, d: Vec<f64> },
    /// Shift least-squares state `targets[i]` by `shifts[i]`.
    Targeted { targets: Vec<usize>, shifts: Vec<f64> },
    /// Window-consistent attack against η-step stacked detection.
    ObservabilityBypass { eta: usize, phi_base: Vec<f64> },
}

impl AttackSpec {
    pub fn validate(&self, model: &SystemModel) -> Result<()> {
        let (n, p) = (model.n(), model.p());
        let field = |name: &str, reason: String| Error::invalid_field(format!("attack.{name}"), reason);
        match self {
            AttackSpec::None => Ok(()),
            AttackSpec::Random { m, magnitude } => {
                let avail = n - model.protected.len();
                if *m > avail {
                    return Err(field("m", format!("{m} exceeds {avail} unprotected sensors")));
                }
                if !magnitude.is_finite() {
                    return Err(field("magnitude", "must be finite".into()));
                }
                Ok(())
            }
            AttackSpec::SpecificSensor { sensors, d } => {
                if sensors.len() != d.len() {
                    return Err(field("d", format!("length {} != {} sensors", d.len(), sensors.len())));
                }
                check_sensor_set(sensors, model).map_err(|e| field("sensors", e.to_string()))
            }
            AttackSpec::Targeted { targets, shifts } => {
                if targets.len() != shifts.len() {
                    return Err(field(
                        "shifts",
                        format!("length {} != {} targets", shifts.len(), targets.len()),
                    ));
                }
                if targets.len() >= p {
                    return Err(field("targets", format!("at most {} targets", p - 1)));
                }
                if let Some(t) = targets.iter().find(|&&t| t >= p) {
                    return Err(field("targets", format!("state {t} out of range 0..{p}")));
                }
                Ok(())
            }
            AttackSpec::ObservabilityBypass { eta, phi_base } => {
                if *eta == 0 || *eta > p {
                    return Err(field("eta", format!("must lie in 1..={p}")));
                }
                if phi_base.len() != n {
                    return Err(field("phi_base", format!("length {} != n = {n}", phi_base.len())));
                }
                Ok(())
            }
        }
    }
}

fn check_sensor_set(sensors: &[usize], model: &SystemModel) -> Result<()> {
    let mut sorted = sensors.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("duplicate sensor".into()));
    }
    if let Some(i) = sorted.iter().find(|&&i| i >= model.n()) {
        return Err(Error::InvalidArgument(format!("sensor {i} out of range")));
    }
    if let Some(i) = sorted.iter().find(|&&i| model.is_protected(i)) {
        return Err(Error::InvalidArgument(format!("sensor {i} is protected")));
    }
    Ok(())
}

/// `m` distinct unprotected sensors drawn uniformly, ascending.
pub fn random_support<R: Rng + ?Sized>(model: &SystemModel, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let pool = model.unprotected();
    if m > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot attack {m} sensors, only {} unprotected",
            pool.len()
        )));
    }
    let mut support: Vec<usize> = rand::seq::index::sample(rng, pool.len(), m)
        .into_iter()
        .map(|j| pool[j])
        .collect();
    support.sort_unstable();
    Ok(support)
}

/// `φ_i = M·r_i`, `r_i ~ N(0,1)` on `support`, zero elsewhere.
pub fn random_values<R: Rng + ?Sized>(n: usize, support: &[usize], magnitude: f64, rng: &mut R) -> AttackVector {
    let mut phi = DVector::zeros(n);
    for &i in support {
        phi[i] = magnitude * rng.sample::<f64, _>(StandardNormal);
    }
    AttackVector {
        phi,
        support: support.to_vec(),
    }
}

pub fn random_attack<R: Rng + ?Sized>(
    model: &SystemModel,
    m: usize,
    magnitude: f64,
    rng: &mut R,
) -> Result<AttackVector> {
    let support = random_support(model, m, rng)?;
    Ok(random_values(model.n(), &support, magnitude, rng))
}

/// `φ = C e`. Lies in the column space of `C`, so least-squares residuals
/// are unchanged while the estimate moves by `e`.
pub fn bypass_attack(c: &DMatrix<f64>, e: &DVector<f64>) -> Result<AttackVector> {
    if e.len() != c.ncols() {
        return Err(Error::Dimension {
            what: "state offset",
            expected: c.ncols(),
            found: e.len(),
        });
    }
    let phi = c * e;
    let support = (0..phi.len()).filter(|&i| phi[i] != 0.0).collect();
    Ok(AttackVector { phi, support })
}

/// Stealthy attack confined to `sensors`.
///
/// With `B = C(CᵀC)⁻Cᵀ − I` and `B'` its columns at `sensors`,
/// `φ' = (I_m − B'⁻B') d` projects `d` onto the null space of `B'`, so the
/// embedded `φ` satisfies `Bφ = 0`: it lies in the column space of `C`.
pub fn specific_sensor_attack(c: &DMatrix<f64>, sensors: &[usize], d: &DVector<f64>) -> Result<AttackVector> {
    let n = c.nrows();
    let m = sensors.len();
    if d.len() != m {
        return Err(Error::Dimension {
            what: "attack direction",
            expected: m,
            found: d.len(),
        });
    }
    if let Some(&i) = sensors.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("sensor {i} out of range 0..{n}")));
    }
    let ct = c.transpose();
    let proj = c * linalg::generalized_inverse(&(&ct * c)) * &ct;
    let b = proj - DMatrix::<f64>::identity(n, n);
    let b_sub = DMatrix::from_fn(n, m, |r, j| b[(r, sensors[j])]);
    if linalg::rank(&b_sub) == m {
        return Err(Error::NoStealthyAttack);
    }
    let phi_sub = (DMatrix::<f64>::identity(m, m) - linalg::generalized_inverse(&b_sub) * &b_sub) * d;

    let mut phi = DVector::zeros(n);
    for (j, &i) in sensors.iter().enumerate() {
        phi[i] = phi_sub[j];
    }
    let leak = (&b * &phi).norm();
    if leak > 1e-6 * phi.norm() {
        return Err(Error::Precondition(format!(
            "attack leaves the column space of C (‖Bφ‖ = {leak:e})"
        )));
    }
    let mut support = sensors.to_vec();
    support.sort_unstable();
    Ok(AttackVector { phi, support })
}

/// `φ = C e` with `e` equal to `shifts` on `targets` and zero elsewhere.
pub fn targeted_attack(c: &DMatrix<f64>, targets: &[usize], shifts: &DVector<f64>) -> Result<AttackVector> {
    let p = c.ncols();
    if targets.len() != shifts.len() {
        return Err(Error::Dimension {
            what: "target shifts",
            expected: targets.len(),
            found: shifts.len(),
        });
    }
    if targets.len() >= p {
        return Err(Error::InvalidArgument(format!("at most {} targets for p = {p}", p - 1)));
    }
    let mut e = DVector::zeros(p);
    for (&t, &s) in targets.iter().zip(shifts.iter()) {
        if t >= p {
            return Err(Error::InvalidArgument(format!("target state {t} out of range 0..{p}")));
        }
        e[t] = s;
    }
    bypass_attack(c, &e)
}

/// `O = [C; CA; …; CA^{η−1}]`.
pub fn observability_matrix(model: &SystemModel, eta: usize) -> DMatrix<f64> {
    let (n, p) = (model.n(), model.p());
    let mut o = DMatrix::zeros(n * eta, p);
    let mut block = model.c.clone();
    for t in 0..eta {
        o.rows_mut(t * n, n).copy_from(&block);
        block = &block * &model.a;
    }
    o
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityBypass {
    pub e: DVector<f64>,
    /// `O·e`, one length-`n` block per window step.
    pub stacked: DVector<f64>,
    /// `O·e` misses `1_η ⊗ φ_base` by more than `1e-6·‖φ_base‖`.
    pub inexact: bool,
}

impl ObservabilityBypass {
    /// Attack on the `t`-th measurement of the window.
    pub fn block(&self, t: usize, n: usize) -> DVector<f64> {
        self.stacked.rows(t * n, n).into_owned()
    }
}

/// `e = argmin ‖O e − 1_η ⊗ φ_base‖`.
pub fn observability_bypass(model: &SystemModel, eta: usize, phi_base: &DVector<f64>) -> Result<ObservabilityBypass> {
    let (n, p) = (model.n(), model.p());
    if eta == 0 {
        return Err(Error::InvalidArgument("window length must be ≥ 1".into()));
    }
    if phi_base.len() != n {
        return Err(Error::Dimension {
            what: "base attack",
            expected: n,
            found: phi_base.len(),
        });
    }
    let o = observability_matrix(model, eta);
    let target = DVector::from_fn(n * eta, |i, _| phi_base[i % n]);
    let e = match linalg::lstsq(&o, &target) {
        Ok(e) => e,
        Err(Error::RankDeficient { rank, .. }) => {
            return Err(Error::RankDeficient {
                what: "observability matrix",
                rank,
                required: p,
            })
        }
        Err(err) => return Err(err),
    };
    let stacked = &o * &e;
    let inexact = (&stacked - &target).norm() > 1e-6 * phi_base.norm();
    Ok(ObservabilityBypass { e, stacked, inexact })
}
