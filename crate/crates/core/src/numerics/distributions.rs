use std::f64::consts::{PI, SQRT_2};

use super::special::{erfc, gamma_p, invert_cdf, ln_gamma, regularized_incomplete_beta};
use crate::error::{Error, Result};

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("probability {p} not in (0, 1)")))
    }
}

fn check_df(df: usize) -> Result<()> {
    if df >= 1 {
        Ok(())
    } else {
        Err(Error::domain("degrees of freedom must be at least 1"))
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_probability(p)?;
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

fn student_t_ln_norm(df: f64) -> f64 {
    ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln()
}

fn student_t_pdf(t: f64, df: f64, ln_norm: f64) -> f64 {
    (ln_norm - 0.5 * (df + 1.0) * (1.0 + t * t / df).ln()).exp()
}

/// CDF of Student's t distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: usize) -> f64 {
    let df = df as f64;
    let tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t distribution with `df` degrees of freedom.
pub fn student_t_quantile(p: f64, df: usize) -> Result<f64> {
    check_probability(p)?;
    check_df(df)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return Ok(-upper_t_quantile(1.0 - p, df));
    }
    Ok(upper_t_quantile(p, df))
}

fn upper_t_quantile(p: f64, df: usize) -> f64 {
    let nu = df as f64;
    let ln_norm = student_t_ln_norm(nu);
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    // Cornish–Fisher start from the normal quantile.
    let z = normal_quantile(p).unwrap_or(0.0);
    let start = z + (z * z * z + z) / (4.0 * nu);
    invert_cdf(
        |t| student_t_cdf(t, df),
        |t| student_t_pdf(t, nu, ln_norm),
        p,
        0.0,
        hi,
        start,
    )
}

/// CDF of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_cdf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_p(0.5 * df as f64, 0.5 * x)
    }
}

/// Quantile of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_quantile(p: f64, df: usize) -> Result<f64> {
    check_probability(p)?;
    check_df(df)?;
    let k = df as f64;
    let half_k = 0.5 * k;
    let ln_norm = -half_k * 2f64.ln() - ln_gamma(half_k);
    let pdf = |x: f64| {
        if x <= 0.0 {
            0.0
        } else {
            (ln_norm + (half_k - 1.0) * x.ln() - 0.5 * x).exp()
        }
    };
    let mut hi = k.max(1.0);
    while chi_square_cdf(hi, df) < p {
        hi *= 2.0;
    }
    // Wilson–Hilferty start.
    let z = normal_quantile(p).unwrap_or(0.0);
    let v = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    let start = if v > 0.0 { k * v * v * v } else { 0.5 * hi };
    Ok(invert_cdf(|x| chi_square_cdf(x, df), pdf, p, 0.0, hi, start))
}

// Binomial pmf over k = 0..=n, computed by the multiplicative recurrence when
// (1-p)^n is representable and in log space otherwise.
fn binomial_pmf_iter(n: usize, p: f64) -> impl Iterator<Item = f64> {
    let nf = n as f64;
    let log_q = (1.0 - p).ln();
    let linear = nf * log_q > -700.0;
    let ratio = p / (1.0 - p);
    let ln_n_fact = ln_gamma(nf + 1.0);
    let ln_p = p.ln();
    let mut current = (1.0 - p).powi(n as i32);
    (0..=n).map(move |k| {
        if linear {
            let out = current;
            current *= (n - k) as f64 / (k + 1) as f64 * ratio;
            out
        } else {
            let kf = k as f64;
            (ln_n_fact - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0)
                + kf * ln_p
                + (nf - kf) * log_q)
                .exp()
        }
    })
}

/// Binomial CDF `P(K <= k)` for `K ~ Binomial(n, p)`.
pub fn binomial_cdf(k: usize, n: usize, p: f64) -> f64 {
    if k >= n || p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    binomial_pmf_iter(n, p).take(k + 1).sum::<f64>().min(1.0)
}

/// Smallest `k` in `0..=n` with `P(K <= k) >= q`, `K ~ Binomial(n, p)`.
pub fn binomial_quantile(q: f64, n: usize, p: f64) -> Result<usize> {
    check_probability(q)?;
    if n < 1 {
        return Err(Error::domain("binomial n must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("binomial p = {p} not in [0, 1]")));
    }
    if p == 0.0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(n);
    }
    let mut cdf = 0.0;
    for (k, mass) in binomial_pmf_iter(n, p).enumerate() {
        cdf += mass;
        if cdf >= q {
            return Ok(k);
        }
    }
    Ok(n)
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn choose(n: usize, k: usize) -> f64 {
        let mut c: u64 = 1;
        for i in 0..k as u64 {
            c = c * (n as u64 - i) / (i + 1);
        }
        c as f64
    }

    fn oracle_cdf(k: usize, n: usize, p: f64) -> f64 {
        (0..=k)
            .map(|i| choose(n, i) * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32))
            .sum()
    }

    proptest! {
        #[test]
        fn t_quantile_is_odd(p in 0.001..0.999f64, df in 1usize..200) {
            let a = student_t_quantile(p, df).unwrap();
            let b = student_t_quantile(1.0 - p, df).unwrap();
            prop_assert!((a + b).abs() < 1e-10);
        }

        #[test]
        fn quantiles_are_monotone(p in 0.001..0.998f64, dp in 0.0..0.001f64, df in 1usize..300) {
            let q = p + dp;
            prop_assert!(student_t_quantile(p, df).unwrap() <= student_t_quantile(q, df).unwrap());
            prop_assert!(chi_square_quantile(p, df).unwrap() <= chi_square_quantile(q, df).unwrap());
            prop_assert!(normal_quantile(p).unwrap() <= normal_quantile(q).unwrap());
            prop_assert!(binomial_quantile(p, df, 0.3).unwrap() <= binomial_quantile(q, df, 0.3).unwrap());
        }

        #[test]
        fn binomial_quantile_brackets_q(q in 0.0001..0.9999f64, n in 1usize..=50, p in 0.01..0.99f64) {
            let k = binomial_quantile(q, n, p).unwrap();
            prop_assert!(q <= oracle_cdf(k, n, p) + 1e-12);
            if k > 0 {
                prop_assert!(oracle_cdf(k - 1, n, p) < q + 1e-12);
            }
        }

        #[test]
        fn chi_square_quantile_inverts_cdf(p in 0.001..0.999f64, df in 1usize..500) {
            let x = chi_square_quantile(p, df).unwrap();
            prop_assert!((chi_square_cdf(x, df) - p).abs() < 1e-9);
        }
    }
}
