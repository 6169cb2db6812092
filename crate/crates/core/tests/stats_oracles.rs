use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srag_core::eval::stats::{paired_t_test, wilcoxon_signed_rank};
use srag_core::eval::{assign_bucket, LogBase};

/// Two-sided signed-rank p by enumerating all 2^n sign patterns over the
/// average ranks of |d|.
fn enumerate_wilcoxon(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|x| *x != 0.0).collect();
    let n = d.len();
    let mut mags: Vec<(f64, usize)> = d.iter().map(|x| x.abs()).zip(0..).collect();
    mags.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && mags[j + 1].0 == mags[i].0 {
            j += 1;
        }
        for m in &mags[i..=j] {
            ranks[m.1] = (i + j + 2) as f64 / 2.0;
        }
        i = j + 1;
    }
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed {
            le += 1;
        }
        if w >= observed {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    ((2.0 * le.min(ge) as f64 / total).min(1.0), observed)
}

#[test]
fn wilcoxon_exact_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let n = rng.gen_range(1..=12);
        let a: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..4u8)) * 0.5).collect();
        let b: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..4u8)) * 0.5).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        let (p, w_plus) = enumerate_wilcoxon(&a, &b);
        assert_eq!(r.p_two_sided, p, "{a:?} {b:?}");
        if r.n > 0 {
            assert_eq!(r.w_plus, w_plus);
        }
    }
}

#[test]
fn rank_sums_total_without_ties() {
    let a = [3.1, 0.2, 5.5, 1.0, 9.0, 4.4, 2.25];
    let b = [0.0; 7];
    let c: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(i, x)| if i % 2 == 0 { -x } else { *x })
        .collect();
    let r = wilcoxon_signed_rank(&c, &b).unwrap();
    assert_eq!(r.w_plus + r.w_minus, (7 * 8 / 2) as f64);
}

fn t_density(x: f64, df: f64) -> f64 {
    let ln_c = ln_gamma_lanczos((df + 1.0) / 2.0) - ln_gamma_lanczos(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// Lanczos ln-gamma (g = 7, n = 9), kept local so the oracle does not share
/// special functions with the code under test.
fn ln_gamma_lanczos(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Two-sided p = 2 * ∫_{|t|}^∞ f(x) dx, with x = |t| + u/(1-u) mapping the
/// tail onto [0, 1), integrated by composite Simpson on 200k panels.
fn t_tail_by_quadrature(t: f64, df: f64) -> f64 {
    let t = t.abs();
    let n = 200_000;
    let h = 1.0 / n as f64;
    let f = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let x = t + u / (1.0 - u);
        t_density(x, df) / ((1.0 - u) * (1.0 - u))
    };
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        let u = i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(u);
    }
    2.0 * s * h / 3.0
}

#[test]
fn t_test_matches_quadrature() {
    let d = [1.0, 1.0, 1.0, -1.0];
    let r = paired_t_test(&d, &[0.0; 4]).unwrap();
    assert!((r.p_two_sided - t_tail_by_quadrature(1.0, 3.0)).abs() < 1e-6);
    assert!((r.p_two_sided - 0.391).abs() < 5e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let n = rng.gen_range(3..30);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.2)).collect();
        let r = paired_t_test(&a, &b).unwrap();
        let want = t_tail_by_quadrature(r.t, r.df);
        assert!(
            (r.p_two_sided - want).abs() < 1e-6,
            "t={} df={} {} vs {want}",
            r.t,
            r.df,
            r.p_two_sided
        );
    }
}

#[test]
fn shifted_samples_drive_p_down() {
    let diffs = |n: usize| -> Vec<f64> { (0..n).map(|i| 1.0 + if i % 2 == 0 { 0.5 } else { -0.5 }).collect() };
    let p = |n: usize| paired_t_test(&diffs(n), &vec![0.0; n]).unwrap().p_two_sided;
    let (p8, p32) = (p(8), p(32));
    assert!(p8 < 0.01);
    assert!(p32 < p8);
    assert!(p32 < 1e-9);
}

proptest! {
    #[test]
    fn tests_are_symmetric_under_swap(pairs in prop::collection::vec((0u8..2, 0u8..2), 2..40)) {
        let a: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let b: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let w1 = wilcoxon_signed_rank(&a, &b).unwrap();
        let w2 = wilcoxon_signed_rank(&b, &a).unwrap();
        prop_assert_eq!(w1.p_two_sided, w2.p_two_sided);
        prop_assert_eq!(w1.statistic, w2.statistic);
        if let (Ok(t1), Ok(t2)) = (paired_t_test(&a, &b), paired_t_test(&b, &a)) {
            prop_assert!((t1.p_two_sided - t2.p_two_sided).abs() < 1e-15);
        }
    }

    #[test]
    fn buckets_are_monotone(x in 0u64..10_000_000, y in 0u64..10_000_000) {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        for base in [LogBase::Ten, LogBase::Two] {
            let e = base.default_edges();
            prop_assert!(assign_bucket(lo, base, &e).unwrap() <= assign_bucket(hi, base, &e).unwrap());
        }
    }
}
