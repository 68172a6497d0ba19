use dse_core::consistency::{benign_floor, seed_subset_count};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Zero};

fn binomial(n: u64, k: u64) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * (n - i) / (i + 1))
}

/// Smallest `h` with `(1 − C(δ,p)/C(n,p))^h ≤ 1 − P_h`, exactly.
fn exact_seed_count(n: u64, p: u64, delta: u64, p_h: BigRational) -> u64 {
    let p_delta = BigRational::new(binomial(delta, p), binomial(n, p));
    let miss = BigRational::one() - p_delta;
    let target = BigRational::one() - p_h;
    assert!(target > BigRational::zero());
    let mut acc = BigRational::one();
    let mut h = 0;
    while acc > target {
        acc *= &miss;
        h += 1;
    }
    h
}

fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(num.into(), den.into())
}

#[test]
fn floor_small_cases() {
    assert_eq!(benign_floor(10, 4).unwrap(), 8);
    assert_eq!(benign_floor(35, 10).unwrap(), 23);
    assert_eq!(benign_floor(5, 4).unwrap(), 5);
    assert!(benign_floor(4, 4).is_err());
}

#[test]
fn seed_count_matches_rational_oracle() {
    assert_eq!(seed_subset_count(10, 4, 8, 0.995).unwrap(), 14);
    assert_eq!(exact_seed_count(10, 4, 8, ratio(995, 1000)), 14);

    for &(n, p) in &[(10u64, 4u64), (12, 3), (15, 2), (20, 5), (35, 10)] {
        let delta = benign_floor(n as usize, p as usize).unwrap() as u64;
        for &(num, den) in &[(9, 10), (99, 100), (995, 1000)] {
            let got = seed_subset_count(n as usize, p as usize, delta as usize, num as f64 / den as f64).unwrap();
            let want = if delta == n {
                1
            } else {
                exact_seed_count(n, p, delta, ratio(num, den))
            };
            assert_eq!(got, want, "n={n} p={p} δ={delta} P_h={num}/{den}");
        }
    }
}

#[test]
fn seed_count_bundled_dimensions() {
    let h = seed_subset_count(35, 10, 23, 0.995).unwrap();
    assert_eq!(h, exact_seed_count(35, 10, 23, ratio(995, 1000)));
}

#[test]
fn seed_count_all_benign_is_one() {
    assert_eq!(seed_subset_count(5, 4, 5, 0.995).unwrap(), 1);
}
