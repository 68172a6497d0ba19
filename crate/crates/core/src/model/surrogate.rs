//! Deterministic 14-bus-scale surrogate model (n = 35 sensors, p = 10
//! states). The reference system's matrices are not public, so this one is
//! synthesized with a fixed seed and shipped as `data/ieee14_surrogate.json`.
//!
//! `C` is sparse with one to three nonzeros per row. Column 9 appears only in
//! sensors {0, 1, 2, 3, 4, 12, 14, 15, 16}, all inside the attacked meter set
//! {0..4, 12, 14..19, 27, 32} (1-based meters 1-5, 13, 15-20, 28, 33).
//! The remaining rows have rank 9 with null space `e_9`, which is what lets a
//! nonzero column-space attack live on that meter set.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SystemModel;

pub const SURROGATE_SEED: u64 = 0x1e3e_1400;
pub const SURROGATE_PROTECTED: usize = 34;

const ROWS: [&[usize]; 35] = [
    &[9],
    &[9, 8],
    &[9],
    &[9, 7],
    &[9, 1],
    &[0],
    &[0, 1],
    &[0, 2],
    &[1, 2],
    &[2, 3],
    &[3],
    &[3, 4],
    &[9, 5],
    &[4, 5],
    &[9, 6],
    &[9],
    &[9, 2],
    &[1],
    &[4],
    &[6, 7],
    &[0, 5],
    &[0],
    &[5, 6],
    &[6],
    &[7, 8],
    &[8],
    &[7],
    &[2],
    &[0, 3],
    &[4, 8],
    &[1, 6],
    &[5],
    &[8, 3],
    &[2, 7],
    &[1, 4, 8],
];

const ROTATION: f64 = 0.05;
const DECAY: f64 = 0.98;

pub fn ieee14_surrogate() -> SystemModel {
    let (n, p) = (ROWS.len(), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(SURROGATE_SEED);
    let mut c = DMatrix::zeros(n, p);
    for (i, cols) in ROWS.iter().enumerate() {
        for &j in cols.iter() {
            c[(i, j)] = if j == 9 {
                rng.random_range(0.8..1.2)
            } else {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                sign * rng.random_range(0.5..1.5)
            };
        }
    }

    // Damped rotations on the state pairs (0,1), (2,3), ..., (8,9).
    let (s, co) = ROTATION.sin_cos();
    let mut a = DMatrix::zeros(p, p);
    for b in (0..p).step_by(2) {
        a[(b, b)] = DECAY * co;
        a[(b, b + 1)] = -DECAY * s;
        a[(b + 1, b)] = DECAY * s;
        a[(b + 1, b + 1)] = DECAY * co;
    }

    SystemModel::new(a, c, 1e-7, 0.1, [SURROGATE_PROTECTED]).expect("surrogate is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::validate_model;

    #[test]
    fn shape_and_validity() {
        let m = ieee14_surrogate();
        assert_eq!((m.n(), m.p()), (35, 10));
        assert_eq!(m.protected, vec![34]);
        let r = validate_model(&m);
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(r.rank_c, 10);
        assert!((r.spectral_radius - DECAY).abs() < 1e-12);
    }

    #[test]
    fn benign_rows_miss_state_nine() {
        let m = ieee14_surrogate();
        let attacked = [0, 1, 2, 3, 4, 12, 14, 15, 16, 17, 18, 19, 27, 32];
        let benign: Vec<usize> = (0..35).filter(|i| !attacked.contains(i)).collect();
        let cb = linalg::select_rows(&m.c, &benign);
        assert_eq!(linalg::rank(&cb), 9);
        assert!(cb.column(9).iter().all(|&v| v == 0.0));
    }
}
