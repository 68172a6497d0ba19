//! τ-consistency checks and consistent-subset selection.
//!
//! A set of sensors `S` (|S| = d) is τ-consistent when the norm `L` of its
//! residual vector falls below a chi-square threshold `τ`. The variants
//! differ in which state estimate forms the residual:
//!
//! | variant            | estimate                      | residual rows | dof   |
//! |--------------------|-------------------------------|---------------|-------|
//! | `StaticEuclidean`  | least squares on `S`          | `C(S)`        | d − p |
//! | `StaticMahalanobis`| least squares on `S`, Σ-norm  | `C(S)`        | d − p |
//! | `Predictive`       | `A x̂(k−1)`                    | `C(S)`        | d     |
//! | `FilterBased`      | modified-gain filter estimate | `C(S)`        | d     |
//!
//! The two dynamic variants fit no parameters to `y(S)`, so their residual
//! keeps all `d` degrees of freedom.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, select_entries, select_rows};
use crate::model::SystemModel;
use crate::par::{self, Execution};

/// Minimum number of benign sensors, `δ = n − ⌊(n−p−1)/2⌋`.
pub fn benign_floor(n: usize, p: usize) -> Result<usize> {
    if n <= p {
        return Err(Error::Precondition(format!(
            "benign floor needs n > p (n = {n}, p = {p})"
        )));
    }
    Ok(n - (n - p - 1) / 2)
}

/// `ln(C(δ,p) / C(n,p)) = Σ_{i<p} ln((δ−i)/(n−i))`.
pub fn ln_benign_subset_probability(n: usize, p: usize, delta: usize) -> f64 {
    (0..p).map(|i| ((delta - i) as f64 / (n - i) as f64).ln()).sum()
}

/// Number of random size-`p` subsets to draw so that at least one is
/// all-benign with probability `p_h`.
pub fn seed_subset_count(n: usize, p: usize, delta: usize, p_h: f64) -> Result<u64> {
    if !(p <= delta && delta <= n) || p == 0 {
        return Err(Error::Precondition(format!(
            "seed count needs 1 ≤ p ≤ δ ≤ n (n = {n}, p = {p}, δ = {delta})"
        )));
    }
    if !(p_h > 0.0 && p_h < 1.0) {
        return Err(Error::InvalidArgument(format!("P_h = {p_h} outside (0, 1)")));
    }
    if delta == n {
        return Ok(1);
    }
    let p_delta = ln_benign_subset_probability(n, p, delta).exp();
    let h = ((-p_h).ln_1p() / (-p_delta).ln_1p()).ceil();
    Ok(h.max(1.0) as u64)
}

/// `τ = √(σ_v² · χ²_{d−p}(1−α))`.
pub fn tau_threshold(d: usize, p: usize, alpha: f64, sigma_v2: f64) -> Result<f64> {
    if d <= p {
        return Err(Error::Precondition(format!("threshold needs d > p (d = {d}, p = {p})")));
    }
    check_alpha(alpha)?;
    Ok((sigma_v2 * linalg::chi_square_quantile(d - p, 1.0 - alpha)?).sqrt())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")))
    }
}

/// Thresholds `τ(dof)` for one `(α, σ²)` pair, precomputed for
/// `dof = 1..=max_dof`.
#[derive(Clone, Debug)]
pub struct ThresholdTable {
    alpha: f64,
    sigma2: f64,
    tau: Vec<f64>,
}

impl ThresholdTable {
    pub fn new(alpha: f64, sigma2: f64, max_dof: usize) -> Result<Self> {
        check_alpha(alpha)?;
        let mut tau = vec![f64::NAN; max_dof + 1];
        for (dof, t) in tau.iter_mut().enumerate().skip(1) {
            *t = (sigma2 * linalg::chi_square_quantile(dof, 1.0 - alpha)?).sqrt();
        }
        Ok(Self { alpha, sigma2, tau })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn tau(&self, dof: usize) -> Result<f64> {
        match self.tau.get(dof) {
            Some(&t) if dof > 0 => Ok(t),
            _ => Err(Error::Precondition(format!(
                "no threshold for {dof} degrees of freedom"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConsistencyVariant {
    StaticEuclidean,
    /// `sigma` is the full `n×n` measurement covariance; the subset's
    /// principal submatrix weighs the residual.
    StaticMahalanobis {
        sigma: DMatrix<f64>,
    },
    Predictive {
        x_prev: DVector<f64>,
    },
    FilterBased {
        x_f: DVector<f64>,
    },
}

impl ConsistencyVariant {
    pub fn dof(&self, d: usize, p: usize) -> usize {
        match self {
            Self::StaticEuclidean | Self::StaticMahalanobis { .. } => d.saturating_sub(p),
            Self::Predictive { .. } | Self::FilterBased { .. } => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub pass: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub estimate: DVector<f64>,
    pub subset: Vec<usize>,
}

impl ConsistencyVerdict {
    fn new(statistic: f64, threshold: f64, estimate: DVector<f64>, subset: Vec<usize>) -> Self {
        Self {
            pass: statistic < threshold,
            statistic,
            threshold,
            estimate,
            subset,
        }
    }
}

fn check_subset(subset: &[usize], n: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::Precondition("empty sensor subset".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= n) {
        return Err(Error::Precondition(format!("sensor {bad} out of range 0..{n}")));
    }
    if subset.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("subset must be sorted and distinct".into()));
    }
    Ok(())
}

/// Least-squares fit on `subset` and its residual norm.
pub fn static_statistic(c: &DMatrix<f64>, subset: &[usize], y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let h = select_rows(c, subset);
    let ys = select_entries(y, subset);
    let x = linalg::lstsq(&h, &ys)?;
    let l = (&h * &x - ys).norm();
    Ok((x, l))
}

/// Norm of `C(S)·x − y(S)` for a fixed estimate.
pub fn residual_norm(c: &DMatrix<f64>, subset: &[usize], x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    subset
        .iter()
        .map(|&i| {
            let r = c.row(i).dot(&x.transpose()) - y[i];
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

pub fn check_consistency(
    variant: &ConsistencyVariant,
    c: &DMatrix<f64>,
    a: &DMatrix<f64>,
    subset: &[usize],
    y: &DVector<f64>,
    alpha: f64,
    sigma_v2: f64,
) -> Result<ConsistencyVerdict> {
    let (n, p) = c.shape();
    if y.len() != n {
        return Err(Error::Dimension {
            what: "measurement vector",
            expected: n,
            found: y.len(),
        });
    }
    check_subset(subset, n)?;
    let d = subset.len();
    let dof = variant.dof(d, p);
    let quantile = |s2: f64| -> Result<f64> {
        check_alpha(alpha)?;
        Ok((s2 * linalg::chi_square_quantile(dof, 1.0 - alpha)?).sqrt())
    };
    let check_ref = |x: &DVector<f64>| {
        if x.len() == p {
            Ok(())
        } else {
            Err(Error::Dimension {
                what: "reference estimate",
                expected: p,
                found: x.len(),
            })
        }
    };

    match variant {
        ConsistencyVariant::StaticEuclidean | ConsistencyVariant::StaticMahalanobis { .. } => {
            if d <= p {
                return Err(Error::Precondition(format!(
                    "static consistency needs more than p = {p} sensors, got {d}"
                )));
            }
            let h = select_rows(c, subset);
            let ys = select_entries(y, subset);
            let x = linalg::lstsq(&h, &ys)?;
            let r = &h * &x - ys;
            if let ConsistencyVariant::StaticMahalanobis { sigma } = variant {
                if sigma.shape() != (n, n) {
                    return Err(Error::Dimension {
                        what: "measurement covariance",
                        expected: n,
                        found: sigma.nrows(),
                    });
                }
                let sub = DMatrix::from_fn(d, d, |i, j| sigma[(subset[i], subset[j])]);
                let stat = linalg::mahalanobis_distance(&r, &DVector::zeros(d), &sub)?;
                Ok(ConsistencyVerdict::new(stat, quantile(1.0)?, x, subset.to_vec()))
            } else {
                Ok(ConsistencyVerdict::new(
                    r.norm(),
                    quantile(sigma_v2)?,
                    x,
                    subset.to_vec(),
                ))
            }
        }
        ConsistencyVariant::Predictive { x_prev } => {
            check_ref(x_prev)?;
            if a.shape() != (p, p) {
                return Err(Error::Dimension {
                    what: "state transition",
                    expected: p,
                    found: a.nrows(),
                });
            }
            let x = a * x_prev;
            let stat = residual_norm(c, subset, &x, y);
            Ok(ConsistencyVerdict::new(stat, quantile(sigma_v2)?, x, subset.to_vec()))
        }
        ConsistencyVariant::FilterBased { x_f } => {
            check_ref(x_f)?;
            let stat = residual_norm(c, subset, x_f, y);
            Ok(ConsistencyVerdict::new(
                stat,
                quantile(sigma_v2)?,
                x_f.clone(),
                subset.to_vec(),
            ))
        }
    }
}

/// Largest τ-consistent subset under the static Euclidean check, by
/// exhaustive search from the full set downwards. Ties between equal-size
/// subsets go to the lexicographically smallest.
pub fn brute_force_max_consistent(c: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, sigma_v2: f64) -> Result<Vec<usize>> {
    const MAX_SENSORS: usize = 15;
    let (n, p) = c.shape();
    if n > MAX_SENSORS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search limited to {MAX_SENSORS} sensors, got {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            what: "measurement vector",
            expected: n,
            found: y.len(),
        });
    }
    let table = ThresholdTable::new(alpha, sigma_v2, n.saturating_sub(p).max(1))?;
    for size in ((p + 1)..=n).rev() {
        let tau = table.tau(size - p)?;
        for subset in (0..n).combinations(size) {
            match static_statistic(c, &subset, y) {
                Ok((_, l)) if l < tau => return Ok(subset),
                Ok(_) | Err(Error::RankDeficient { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Err(Error::NoConsistentSubset { min: p })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCandidate {
    pub subset: Vec<usize>,
    pub estimate: DVector<f64>,
    /// Sum of the δ smallest squared residuals over all sensors.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSearch {
    pub p_h: f64,
    pub n_best: usize,
    /// Upper bound on the number of usable subsets examined.
    pub max_subsets: Option<u64>,
    pub execution: Execution,
}

impl Default for SeedSearch {
    fn default() -> Self {
        Self {
            p_h: 0.995,
            n_best: 3,
            max_subsets: None,
            execution: Execution::Sequential,
        }
    }
}

impl SeedSearch {
    /// Usable subsets this search will collect for an `n×p` system.
    pub fn subset_budget(&self, n: usize, p: usize) -> Result<usize> {
        let delta = benign_floor(n, p)?;
        let h = seed_subset_count(n, p, delta, self.p_h)?;
        let h = self.max_subsets.map_or(h, |cap| h.min(cap.max(1)));
        Ok(usize::try_from(h).unwrap_or(usize::MAX))
    }
}

/// Nonzero-column bitsets of the rows of `C`. A subset whose rows leave a
/// column uncovered is singular and can be rejected before factoring.
struct ColumnCover {
    words: usize,
    rows: Vec<u64>,
}

impl ColumnCover {
    fn new(c: &DMatrix<f64>) -> Self {
        let (n, p) = c.shape();
        let words = p.div_ceil(64);
        let mut rows = vec![0u64; n * words];
        for i in 0..n {
            for j in 0..p {
                if c[(i, j)] != 0.0 {
                    rows[i * words + j / 64] |= 1 << (j % 64);
                }
            }
        }
        Self { words, rows }
    }

    fn covers_all(&self, subset: &[usize], p: usize) -> bool {
        (0..self.words).all(|w| {
            let got = subset.iter().fold(0u64, |acc, &i| acc | self.rows[i * self.words + w]);
            let bits = (p - w * 64).min(64);
            let want = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
            got == want
        })
    }
}

fn score_subset(c: &DMatrix<f64>, y: &DVector<f64>, subset: &[usize], delta: usize) -> Option<SeedCandidate> {
    let p = c.ncols();
    let mut a = Vec::with_capacity(p * p);
    for &i in subset {
        a.extend(c.row(i).iter());
    }
    let mut b: Vec<f64> = subset.iter().map(|&i| y[i]).collect();
    if !linalg::solve_square_in_place(&mut a, &mut b, p) {
        return None;
    }
    let x = DVector::from_vec(b);
    let mut sq: Vec<f64> = (c * &x - y).iter().map(|r| r * r).collect();
    if delta < sq.len() {
        sq.select_nth_unstable_by(delta, f64::total_cmp);
    }
    let score = sq[..delta].iter().sum();
    Some(SeedCandidate {
        subset: subset.to_vec(),
        estimate: x,
        score,
    })
}

/// Seeding phase: draws random size-`p` subsets until `h` of them give a
/// unique exact fit (at most `10·h` draws), scores each fit by its δ
/// smallest squared residuals, and returns the `n_best` lowest scores in
/// ascending order.
pub fn seed_candidates<R: Rng + ?Sized>(
    c: &DMatrix<f64>,
    y: &DVector<f64>,
    search: &SeedSearch,
    rng: &mut R,
) -> Result<Vec<SeedCandidate>> {
    let (n, p) = c.shape();
    if y.len() != n {
        return Err(Error::Dimension {
            what: "measurement vector",
            expected: n,
            found: y.len(),
        });
    }
    let delta = benign_floor(n, p)?;
    let h = search.subset_budget(n, p)?;
    if search.n_best == 0 || search.n_best > h {
        return Err(Error::Precondition(format!(
            "n_best = {} must lie in 1..={h}",
            search.n_best
        )));
    }
    let cover = ColumnCover::new(c);
    let max_attempts = h.saturating_mul(10);
    let mut found: Vec<SeedCandidate> = Vec::with_capacity(h);
    let mut attempts = 0usize;
    let mut pool: Vec<usize> = (0..n).collect();
    while found.len() < h && attempts < max_attempts {
        let batch = (h - found.len()).min(max_attempts - attempts);
        attempts += batch;
        // Draws stay sequential so results do not depend on scheduling.
        let mut subsets: Vec<Vec<usize>> = Vec::new();
        for _ in 0..batch {
            // Partial Fisher-Yates; `pool` stays a permutation of 0..n.
            for j in 0..p {
                let r = rng.random_range(j..n);
                pool.swap(j, r);
            }
            if cover.covers_all(&pool[..p], p) {
                let mut s = pool[..p].to_vec();
                s.sort_unstable();
                subsets.push(s);
            }
        }
        let scored = par::map_indexed(search.execution, subsets.len(), |i| {
            score_subset(c, y, &subsets[i], delta)
        });
        found.extend(scored.into_iter().flatten());
    }
    if found.len() < search.n_best {
        return Err(Error::InsufficientSeeds {
            found: found.len(),
            needed: search.n_best,
            attempts,
        });
    }
    found.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.subset.cmp(&b.subset)));
    found.truncate(search.n_best);
    Ok(found)
}

/// Expanding phase with an arbitrary consistency test.
///
/// Sensors outside the seed are visited in ascending order of absolute
/// residual against `estimate` (ties to the lower index); each is kept iff
/// `is_consistent` accepts the enlarged, sorted set.
pub fn expand_with<F>(
    seed: &[usize],
    estimate: &DVector<f64>,
    c: &DMatrix<f64>,
    y: &DVector<f64>,
    mut is_consistent: F,
) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> Result<bool>,
{
    let n = c.nrows();
    let mut set: Vec<usize> = seed.to_vec();
    set.sort_unstable();
    set.dedup();
    let mut in_set = vec![false; n];
    for &i in &set {
        in_set[i] = true;
    }
    let pred = c * estimate;
    let mut candidates: Vec<(f64, usize)> = (0..n)
        .filter(|&i| !in_set[i])
        .map(|i| ((pred[i] - y[i]).abs(), i))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut trial = Vec::with_capacity(n);
    for (_, i) in candidates {
        trial.clear();
        let pos = set.partition_point(|&s| s < i);
        trial.extend_from_slice(&set[..pos]);
        trial.push(i);
        trial.extend_from_slice(&set[pos..]);
        if is_consistent(&trial)? {
            std::mem::swap(&mut set, &mut trial);
        }
    }
    Ok(set)
}

/// Expands a seed using the static Euclidean check.
pub fn expand_seed(
    seed: &SeedCandidate,
    c: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    sigma_v2: f64,
) -> Result<Vec<usize>> {
    let (n, p) = c.shape();
    let table = ThresholdTable::new(alpha, sigma_v2, n.saturating_sub(p).max(1))?;
    expand_with(&seed.subset, &seed.estimate, c, y, |set| {
        if set.len() <= p {
            return Ok(true);
        }
        match static_statistic(c, set, y) {
            Ok((_, l)) => Ok(l < table.tau(set.len() - p)?),
            Err(Error::RankDeficient { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub sensors: Vec<usize>,
    pub verdict: ConsistencyVerdict,
    /// The removal loop ran below δ without reaching a consistent set.
    pub exhausted: bool,
}

/// Prediction-based selection: starting from all sensors, repeatedly drops
/// the sensor with the largest `|(C A x̂(k−1))_i − y_i|` while the set is
/// inconsistent and still has at least δ members.
pub fn pcna_select(model: &SystemModel, x_prev: &DVector<f64>, y: &DVector<f64>, alpha: f64) -> Result<Selection> {
    let table = ThresholdTable::new(alpha, model.sigma_v2, model.n())?;
    let x_pred = &model.a * x_prev;
    pcna_select_with(&model.c, &x_pred, y, &table)
}

/// [`pcna_select`] on a precomputed prediction `x_pred = A x̂(k−1)`.
pub fn pcna_select_with(
    c: &DMatrix<f64>,
    x_pred: &DVector<f64>,
    y: &DVector<f64>,
    table: &ThresholdTable,
) -> Result<Selection> {
    let (n, p) = c.shape();
    if y.len() != n || x_pred.len() != p {
        return Err(Error::Dimension {
            what: "prediction inputs",
            expected: n,
            found: y.len(),
        });
    }
    let delta = benign_floor(n, p)?;
    let r2: Vec<f64> = (c * x_pred - y).iter().map(|r| r * r).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| r2[j].total_cmp(&r2[i]).then(i.cmp(&j)));

    let mut active = vec![true; n];
    let mut count = n;
    let mut removed = 0;
    let mut passed = false;
    while count >= delta {
        let l = (0..n).filter(|&i| active[i]).map(|i| r2[i]).sum::<f64>().sqrt();
        if l < table.tau(count)? {
            passed = true;
            break;
        }
        active[order[removed]] = false;
        removed += 1;
        count -= 1;
    }
    let sensors: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    let statistic = sensors.iter().map(|&i| r2[i]).sum::<f64>().sqrt();
    let verdict = ConsistencyVerdict::new(statistic, table.tau(sensors.len())?, x_pred.clone(), sensors.clone());
    Ok(Selection {
        sensors,
        verdict,
        exhausted: !passed,
    })
}
