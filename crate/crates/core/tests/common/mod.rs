//! Brute-force reference computations shared by the integration tests.
#![allow(dead_code)]

/// `C(n, k)` exactly; fine for n <= 60.
pub fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Two-sided Fisher p by enumerating every table with the same margins and
/// summing those no more likely than the observed one. Probabilities are
/// compared as exact integer numerators over the shared `C(n, c1)`.
pub fn fisher_oracle(tp: u64, fp: u64, fn_: u64, tn: u64) -> f64 {
    let (r1, r2, c1) = (tp + fp, fn_ + tn, tp + fn_);
    let n = r1 + r2;
    let c2 = n - c1;
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return 1.0;
    }
    let weight = |a: u64| binom(r1, a) * binom(r2, c1 - a);
    let observed = weight(tp);
    let lo = (r1 + c1).saturating_sub(n);
    let hi = r1.min(c1);
    let mass: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    (mass as f64 / binom(n, c1) as f64).min(1.0)
}

/// `min(1, 2 P(X <= min(b, c)))`, `X ~ Bin(b + c, 1/2)`, in integers.
pub fn mcnemar_exact_oracle(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let tail: u128 = (0..=b.min(c)).map(|i| binom(n, i)).sum();
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

/// Upper tail of chi-squared(1) by Simpson quadrature of the half-normal
/// density after substituting `x = u^2`.
pub fn chi2_1df_tail_quadrature(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let upper = x.sqrt();
    let steps = 20_000;
    let h = upper / steps as f64;
    let f = |u: f64| 2.0 * (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(upper);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    (1.0 - s * h / 3.0).max(0.0)
}

/// Continuity-corrected McNemar statistic and p via quadrature.
pub fn mcnemar_chi2_oracle(b: u64, c: u64) -> (f64, f64) {
    let n = (b + c) as f64;
    if n == 0.0 {
        return (0.0, 1.0);
    }
    let d = ((b as f64 - c as f64).abs() - 1.0).max(0.0);
    let stat = d * d / n;
    (stat, chi2_1df_tail_quadrature(stat))
}

pub fn wald_half_width(p: f64, n: u64, z: f64) -> f64 {
    z * (p * (1.0 - p) / n as f64).sqrt()
}

/// Every (a, b, c, d) with `a + b + c + d <= max_total`.
pub fn tables_up_to(max_total: u64) -> impl Iterator<Item = [u64; 4]> {
    (0..=max_total).flat_map(move |a| {
        (0..=max_total - a).flat_map(move |b| {
            (0..=max_total - a - b)
                .flat_map(move |c| (0..=max_total - a - b - c).map(move |d| [a, b, c, d]))
        })
    })
}
