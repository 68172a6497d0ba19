//! Plant model, trajectory simulation and model files.

mod surrogate;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;

pub use surrogate::{ieee14_surrogate, SURROGATE_PROTECTED, SURROGATE_SEED};

/// Linear time-invariant plant with i.i.d. Gaussian process and
/// measurement noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    /// State transition, `p×p`.
    pub a: DMatrix<f64>,
    /// Measurement map, `n×p`.
    pub c: DMatrix<f64>,
    pub sigma_w2: f64,
    pub sigma_v2: f64,
    /// Sensors the attacker cannot touch, sorted and deduplicated.
    pub protected: Vec<usize>,
}

impl SystemModel {
    /// Builds a model and rejects it if any invariant is violated.
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        sigma_w2: f64,
        sigma_v2: f64,
        protected: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let protected: BTreeSet<usize> = protected.into_iter().collect();
        let model = Self {
            a,
            c,
            sigma_w2,
            sigma_v2,
            protected: protected.into_iter().collect(),
        };
        model.check()?;
        Ok(model)
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_protected(&self, sensor: usize) -> bool {
        self.protected.binary_search(&sensor).is_ok()
    }

    /// Sensors the attacker may modify, ascending.
    pub fn unprotected(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.is_protected(i)).collect()
    }

    /// `C·A`, used for one-step measurement prediction.
    pub fn ca(&self) -> DMatrix<f64> {
        &self.c * &self.a
    }

    fn check(&self) -> Result<()> {
        let report = validate_model(self);
        match report.violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::invalid_field(v.field, v.message)),
        }
    }

    pub fn to_file(&self) -> ModelFile {
        let rows = |m: &DMatrix<f64>| {
            m.row_iter()
                .map(|r| r.iter().copied().collect())
                .collect::<Vec<Vec<f64>>>()
        };
        ModelFile {
            p: self.p(),
            n: self.n(),
            a: rows(&self.a),
            c: rows(&self.c),
            sigma_w2: self.sigma_w2,
            sigma_v2: self.sigma_v2,
            protected: self.protected.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// On-disk model schema. Matrices are row-major arrays of rows; sensor
/// indices are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub p: usize,
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub sigma_w2: f64,
    pub sigma_v2: f64,
    #[serde(default)]
    pub protected: Vec<usize>,
}

impl ModelFile {
    pub fn into_model(self) -> Result<SystemModel> {
        if self.n <= self.p {
            return Err(Error::invalid_field("n", "n must exceed p"));
        }
        let a = matrix_from_rows("A", &self.a, self.p, self.p)?;
        let c = matrix_from_rows("C", &self.c, self.n, self.p)?;
        SystemModel::new(a, c, self.sigma_w2, self.sigma_v2, self.protected)
    }
}

fn matrix_from_rows(field: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::invalid_field(
            field,
            format!("expected {nrows} rows, found {}", rows.len()),
        ));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::invalid_field(
            field,
            format!("row {i} has {} entries, expected {ncols}", r.len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid_field(field, "non-finite entry"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn parse_model(json: &str) -> Result<SystemModel> {
    let file: ModelFile = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_model()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SystemModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub p: usize,
    pub n: usize,
    pub rank_c: usize,
    pub spectral_radius: f64,
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_model(model: &SystemModel) -> ValidationReport {
    let p = model.a.nrows();
    let n = model.c.nrows();
    let mut violations = Vec::new();
    let mut push = |field: &str, message: String| {
        violations.push(Violation {
            field: field.to_owned(),
            message,
        })
    };

    if !model.a.is_square() {
        push("A", format!("A is {}×{}, expected square", p, model.a.ncols()));
    }
    if model.c.ncols() != p {
        push("C", format!("C has {} columns, expected p = {p}", model.c.ncols()));
    }
    if n <= p {
        push("n", "n must exceed p".into());
    }
    if !(model.sigma_w2 > 0.0 && model.sigma_w2.is_finite()) {
        push("sigma_w2", format!("must be positive, got {}", model.sigma_w2));
    }
    if !(model.sigma_v2 > 0.0 && model.sigma_v2.is_finite()) {
        push("sigma_v2", format!("must be positive, got {}", model.sigma_v2));
    }
    if let Some(&bad) = model.protected.iter().find(|&&i| i >= n) {
        push("protected", format!("sensor index {bad} out of range 0..{n}"));
    }
    if model.protected.windows(2).any(|w| w[0] >= w[1]) {
        push("protected", "indices must be sorted and distinct".into());
    }
    let finite = model.a.iter().chain(model.c.iter()).all(|v| v.is_finite());
    if !finite {
        push("A", "non-finite entry in A or C".into());
    }

    let rank_c = if finite { linalg::rank(&model.c) } else { 0 };
    if model.c.ncols() == p && rank_c < p {
        push("C", format!("C rank < p ({rank_c} < {p})"));
    }

    let spectral_radius = if model.a.is_square() && p > 0 && finite {
        model
            .a
            .clone()
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |m, z| m.max(z.norm()))
    } else {
        f64::NAN
    };
    let mut warnings = Vec::new();
    if spectral_radius > 1.0 {
        warnings.push(format!("A is unstable (spectral radius {spectral_radius:.6})"));
    }

    ValidationReport {
        p,
        n,
        rank_c,
        spectral_radius,
        violations,
        warnings,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub x: DVector<f64>,
    pub k: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub k: u64,
    pub y_clean: DVector<f64>,
    pub y_observed: DVector<f64>,
    /// Attacked sensors, ascending. Ground truth for evaluation only.
    pub attack_support: Vec<usize>,
}

impl MeasurementFrame {
    /// Adds an attack vector to the observed measurements.
    pub fn inject(&mut self, phi: &DVector<f64>, support: &[usize]) {
        self.y_observed += phi;
        self.attack_support = support.to_vec();
    }

    /// Feeds the bytes an estimator can see into a running hash.
    pub fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update(self.k.to_le_bytes());
        for v in self.y_observed.iter() {
            hasher.update(v.to_le_bytes());
        }
    }
}

pub fn frames_digest(frames: &[MeasurementFrame]) -> [u8; 32] {
    let mut h = Sha256::new();
    for f in frames {
        f.hash_into(&mut h);
    }
    h.finalize().into()
}

fn gaussian_vector<R: Rng + ?Sized>(len: usize, sd: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// `x(0) ~ N(0, I_p)`.
pub fn initial_state<R: Rng + ?Sized>(model: &SystemModel, rng: &mut R) -> SimState {
    SimState {
        x: gaussian_vector(model.p(), 1.0, rng),
        k: 0,
    }
}

/// `y = C x + v`, `v ~ N(0, σ_v² I_n)`, with no attack applied.
pub fn measure<R: Rng + ?Sized>(model: &SystemModel, state: &SimState, rng: &mut R) -> Result<MeasurementFrame> {
    check_state(model, state)?;
    let y = &model.c * &state.x + gaussian_vector(model.n(), model.sigma_v2.sqrt(), rng);
    Ok(MeasurementFrame {
        k: state.k,
        y_observed: y.clone(),
        y_clean: y,
        attack_support: Vec::new(),
    })
}

/// Advances the plant one step and measures the new state.
pub fn simulate_step<R: Rng + ?Sized>(
    model: &SystemModel,
    state: &SimState,
    rng: &mut R,
) -> Result<(SimState, MeasurementFrame)> {
    check_state(model, state)?;
    let x = &model.a * &state.x + gaussian_vector(model.p(), model.sigma_w2.sqrt(), rng);
    let next = SimState { x, k: state.k + 1 };
    let frame = measure(model, &next, rng)?;
    Ok((next, frame))
}

fn check_state(model: &SystemModel, state: &SimState) -> Result<()> {
    if state.x.len() != model.p() {
        return Err(Error::Dimension {
            what: "state",
            expected: model.p(),
            found: state.x.len(),
        });
    }
    Ok(())
}

/// Bus admittance split into conductance `G` and susceptance `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmittanceModel {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceModel {
    pub fn new(g: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() || g.shape() != b.shape() {
            return Err(Error::Dimension {
                what: "admittance",
                expected: g.nrows(),
                found: b.nrows(),
            });
        }
        if !linalg::is_symmetric(&g, linalg::SYMMETRY_TOL) {
            return Err(Error::NotSymmetric("G"));
        }
        if !linalg::is_symmetric(&b, linalg::SYMMETRY_TOL) {
            return Err(Error::NotSymmetric("B"));
        }
        Ok(Self { g, b })
    }

    pub fn buses(&self) -> usize {
        self.g.nrows()
    }
}

/// Real and reactive bus injections from voltage magnitudes and angles:
///
/// `P_i = V_i Σ_j V_j (G_ij cos θ_ij + B_ij sin θ_ij)`,
/// `Q_i = V_i Σ_j V_j (G_ij sin θ_ij − B_ij cos θ_ij)`.
pub fn power_injections(
    adm: &AdmittanceModel,
    v: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let b = adm.buses();
    for (what, len) in [("voltage magnitudes", v.len()), ("phase angles", theta.len())] {
        if len != b {
            return Err(Error::Dimension {
                what,
                expected: b,
                found: len,
            });
        }
    }
    let mut p = DVector::zeros(b);
    let mut q = DVector::zeros(b);
    for i in 0..b {
        let (mut sp, mut sq) = (0.0, 0.0);
        for j in 0..b {
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            sp += v[j] * (adm.g[(i, j)] * c + adm.b[(i, j)] * s);
            sq += v[j] * (adm.g[(i, j)] * s - adm.b[(i, j)] * c);
        }
        p[i] = v[i] * sp;
        q[i] = v[i] * sq;
    }
    Ok((p, q))
}
