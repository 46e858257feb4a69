//! Goodness-of-fit and trend tests used to judge calibration and sampler output.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Pearson chi-square goodness of fit of `observed` counts against class
/// probabilities `expected` (normalized here). Classes with zero expected
/// probability must have zero counts and are dropped from the degrees of
/// freedom.
pub fn chi_square_gof(observed: &[usize], expected: &[f64]) -> TestResult {
    assert_eq!(observed.len(), expected.len(), "one probability per class");
    let n: usize = observed.iter().sum();
    let total_p: f64 = expected.iter().sum();
    let mut stat = 0.0;
    let mut classes = 0usize;
    for (&o, &p) in observed.iter().zip(expected) {
        let e = n as f64 * p / total_p;
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            classes += 1;
        } else if o > 0 {
            return TestResult {
                statistic: f64::INFINITY,
                p_value: 0.0,
            };
        }
    }
    let df = classes.saturating_sub(1).max(1) as f64;
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    TestResult {
        statistic: stat,
        p_value: dist.sf(stat),
    }
}

/// Chi-square test that `values` in [0, 1] are uniform over `bins` equal bins.
pub fn chi_square_uniform(values: &[f64], bins: usize) -> TestResult {
    let mut counts = vec![0usize; bins];
    for &u in values {
        counts[bin_of(u, bins)] += 1;
    }
    chi_square_gof(&counts, &vec![1.0; bins])
}

/// Bin index of `u` among `bins` equal bins on [0, 1]; 1 falls in the last bin.
pub fn bin_of(u: f64, bins: usize) -> usize {
    ((u.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

/// Two-sided Mann-Kendall test for a monotone trend in a series, with the
/// tie-corrected variance and a normal approximation.
pub fn mann_kendall(xs: &[f64]) -> TestResult {
    let n = xs.len();
    if n < 3 {
        return TestResult {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match xs[j].partial_cmp(&xs[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    if var <= 0.0 {
        return TestResult {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let z = match s.signum() {
        1 => (s as f64 - 1.0) / var.sqrt(),
        -1 => (s as f64 + 1.0) / var.sqrt(),
        _ => 0.0,
    };
    let normal = Normal::standard();
    TestResult {
        statistic: z,
        p_value: (2.0 * normal.sf(z.abs())).min(1.0),
    }
}

/// Kolmogorov distribution tail `Q(lambda) = 2 sum (-1)^(j-1) exp(-2 j^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value and the
/// usual small-sample correction of the scaled statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    TestResult {
        statistic: d,
        p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d),
    }
}
