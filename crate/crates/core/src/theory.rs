//! Error analysis of the averaged two-detector ensemble.
//!
//! With labels `f ∈ {−1, +1}`, errors `ε = s − f` and `E(s) = mean ε²`, the
//! average `s_H = ½ s_D + ½ s_G` satisfies exactly
//! `E(s_H) = ¼E(s_D) + ¼E(s_G) + C₁ρ + C₂`, where `C₁ = ½σ(ε_D)σ(ε_G)` and
//! `C₂ = ½ mean(ε_D)·mean(ε_G)`. Writing `e = min(E_D, E_G)` and
//! `α = max/min`, the hybrid beats both components iff
//! `(α − 3)/4·e + C₁ρ + C₂ < 0`. All moments are population moments.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::metrics::report::fmt_f64;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pop_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn nonempty(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::EmptyAxis);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("score".into()));
    }
    Ok(())
}

pub fn standardize(scores: &[f64]) -> Result<Vec<f64>> {
    nonempty(scores)?;
    let (m, var) = (mean(scores), pop_var(scores));
    if var <= 0.0 {
        return Err(Error::Degenerate("zero-variance scores cannot be standardized".into()));
    }
    let sd = var.sqrt();
    Ok(scores.iter().map(|x| (x - m) / sd).collect())
}

pub fn score_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    nonempty(a)?;
    if a.len() != b.len() {
        return Err(shape_err("score vectors differ in length"));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (pop_var(a), pop_var(b));
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::Degenerate("correlation with zero variance".into()));
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    score_correlation(&ranks(a), &ranks(b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorDecomposition {
    pub errors: Vec<f64>,
    pub expected_sq_error: f64,
}

pub fn error_decomposition(scores: &[f64], labels: &[f64]) -> Result<ErrorDecomposition> {
    nonempty(scores)?;
    if scores.len() != labels.len() {
        return Err(shape_err("scores and labels differ in length"));
    }
    if labels.iter().any(|&f| f != 1.0 && f != -1.0) {
        return Err(Error::InvalidArgument("labels must be -1 or +1".into()));
    }
    let errors: Vec<f64> = scores.iter().zip(labels).map(|(s, f)| s - f).collect();
    let expected_sq_error = mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>());
    Ok(ErrorDecomposition {
        errors,
        expected_sq_error,
    })
}

/// `+1` for outliers, `−1` for inliers.
pub fn signed_labels(is_outlier: &[bool]) -> Vec<f64> {
    is_outlier.iter().map(|&o| if o { 1.0 } else { -1.0 }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleStats {
    pub rho: f64,
    pub alpha: f64,
    pub e: f64,
    pub c1: f64,
    pub c2: f64,
    pub error_d: f64,
    pub error_g: f64,
    pub error_h: f64,
}

impl EnsembleStats {
    /// Stats from the five summary numbers alone; the component errors are
    /// assigned as `E_D = αe, E_G = e` and `E_H` follows from the identity.
    pub fn from_summary(rho: f64, alpha: f64, e: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(alpha >= 1.0 && e >= 0.0 && (-1.0..=1.0).contains(&rho)) {
            return Err(Error::InvalidArgument(format!(
                "need alpha >= 1, e >= 0, rho in [-1, 1]; got {alpha}, {e}, {rho}"
            )));
        }
        let (error_d, error_g) = (alpha * e, e);
        Ok(Self {
            rho,
            alpha,
            e,
            c1,
            c2,
            error_d,
            error_g,
            error_h: 0.25 * error_d + 0.25 * error_g + c1 * rho + c2,
        })
    }

    pub fn improved(&self) -> bool {
        self.error_h < self.error_d.min(self.error_g)
    }
}

/// Statistics of the averaged ensemble of two (standardized) detectors.
pub fn ensemble_stats(s_d: &[f64], s_g: &[f64], labels: &[f64]) -> Result<EnsembleStats> {
    if s_d.len() != s_g.len() {
        return Err(shape_err("component scores differ in length"));
    }
    let d = error_decomposition(s_d, labels)?;
    let g = error_decomposition(s_g, labels)?;
    let s_h: Vec<f64> = s_d.iter().zip(s_g).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
    let h = error_decomposition(&s_h, labels)?;
    // a constant error vector has C₁ = 0, so its correlation term vanishes
    let rho = if pop_var(&d.errors) > 0.0 && pop_var(&g.errors) > 0.0 {
        score_correlation(&d.errors, &g.errors)?
    } else {
        0.0
    };
    let (ed, eg) = (d.expected_sq_error, g.expected_sq_error);
    let e = ed.min(eg);
    let alpha = if ed == eg {
        1.0
    } else if e > 0.0 {
        ed.max(eg) / e
    } else {
        f64::INFINITY
    };
    Ok(EnsembleStats {
        rho,
        alpha,
        e,
        c1: 0.5 * pop_var(&d.errors).sqrt() * pop_var(&g.errors).sqrt(),
        c2: 0.5 * mean(&d.errors) * mean(&g.errors),
        error_d: ed,
        error_g: eg,
        error_h: h.expected_sq_error,
    })
}

pub fn condition_lhs(stats: &EnsembleStats) -> f64 {
    (stats.alpha - 3.0) / 4.0 * stats.e + stats.c1 * stats.rho + stats.c2
}

/// `|E(s_H) − (¼E_D + ¼E_G + C₁ρ + C₂)|` on the empirical sample.
pub fn verify_identity(s_d: &[f64], s_g: &[f64], labels: &[f64]) -> Result<f64> {
    let st = ensemble_stats(s_d, s_g, labels)?;
    Ok(identity_residual(&st))
}

fn identity_residual(st: &EnsembleStats) -> f64 {
    (st.error_h - (0.25 * st.error_d + 0.25 * st.error_g + st.c1 * st.rho + st.c2)).abs()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SufficiencyReport {
    pub stats: EnsembleStats,
    pub lhs: f64,
    pub condition_holds: bool,
    pub improved: bool,
    /// `condition_holds ⇒ improved`.
    pub implication_ok: bool,
    pub residual: f64,
}

pub fn verify_sufficiency(s_d: &[f64], s_g: &[f64], labels: &[f64]) -> Result<SufficiencyReport> {
    let stats = ensemble_stats(s_d, s_g, labels)?;
    let lhs = condition_lhs(&stats);
    // the condition is exact, so ties at LHS = 0 are rounding; demand a margin
    let condition_holds = lhs < -CONDITION_MARGIN * (1.0 + stats.e);
    let improved = stats.improved();
    Ok(SufficiencyReport {
        stats,
        lhs,
        condition_holds,
        improved,
        implication_ok: !condition_holds || improved,
        residual: identity_residual(&stats),
    })
}

/// One random detector pair: labels, then two correlated error draws with
/// random bias, scale and correlation; both scores are standardized.
pub fn monte_carlo_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    loop {
        let mut labels: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        labels[0] = 1.0;
        labels[1] = -1.0;
        let corr: f64 = rng.random_range(-0.95..0.95);
        let (sd_d, sd_g) = (rng.random_range(0.2..1.5), rng.random_range(0.2..1.5));
        let (bias_d, bias_g) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let mut s_d = Vec::with_capacity(n);
        let mut s_g = Vec::with_capacity(n);
        for f in &labels {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            let b = corr * a + (1.0 - corr * corr).sqrt() * b;
            s_d.push(f + bias_d * f + sd_d * a);
            s_g.push(f + bias_g * f + sd_g * b);
        }
        if let (Ok(d), Ok(g)) = (standardize(&s_d), standardize(&s_g)) {
            return Ok((d, g, labels));
        }
    }
}

pub const THEORY_HEADER: &str =
    "draw,rho,alpha,e,c1,c2,lhs,error_d,error_g,error_h,improved,residual,identity_ok,implication_ok";

pub const IDENTITY_TOLERANCE: f64 = 1e-10;
pub const CONDITION_MARGIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TheorySweep {
    pub reports: Vec<SufficiencyReport>,
    pub max_residual: f64,
    pub violations: usize,
    pub condition_hits: usize,
}

impl TheorySweep {
    pub fn all_pass(&self) -> bool {
        self.violations == 0 && self.max_residual < IDENTITY_TOLERANCE
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(THEORY_HEADER);
        out.push('\n');
        for (i, r) in self.reports.iter().enumerate() {
            let s = &r.stats;
            let cols = [s.rho, s.alpha, s.e, s.c1, s.c2, r.lhs, s.error_d, s.error_g, s.error_h];
            let nums: Vec<String> = cols.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(
                out,
                "{i},{},{},{},{},{}",
                nums.join(","),
                r.improved,
                fmt_f64(r.residual),
                r.residual < IDENTITY_TOLERANCE,
                r.implication_ok
            )
            .expect("writing to a String");
        }
        out
    }
}

/// `draws` Monte Carlo pairs of `size` samples each.
pub fn theory_sweep<R: Rng + ?Sized>(draws: usize, size: usize, rng: &mut R) -> Result<TheorySweep> {
    let mut reports = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (d, g, f) = monte_carlo_pair(size, rng)?;
        reports.push(verify_sufficiency(&d, &g, &f)?);
    }
    Ok(TheorySweep {
        max_residual: reports.iter().map(|r| r.residual).fold(0.0, f64::max),
        violations: reports.iter().filter(|r| !r.implication_ok).count(),
        condition_hits: reports.iter().filter(|r| r.condition_holds).count(),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(&[-1.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(standardize(&[0.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
        let v = [3.0, -1.5, 0.2, 7.7, 2.2, 2.2, -4.0, 0.0, 1.0, 9.5];
        let s = standardize(&v).unwrap();
        let m: f64 = s.iter().sum::<f64>() / 10.0;
        let var: f64 = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 10.0;
        assert!(m.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(v[i] < v[j], s[i] < s[j]);
            }
        }
        assert!(standardize(&[2.0, 2.0]).is_err());
    }

    #[test]
    fn error_decomposition_examples() {
        let f = [1.0, -1.0, 1.0];
        assert_eq!(error_decomposition(&f, &f).unwrap().expected_sq_error, 0.0);
        assert_eq!(error_decomposition(&[0.0; 3], &f).unwrap().expected_sq_error, 1.0);
        let s = [0.5, -2.0, 1.5];
        let oracle = (0.25 + 1.0 + 0.25) / 3.0;
        assert!((error_decomposition(&s, &f).unwrap().expected_sq_error - oracle).abs() < 1e-15);
        assert!(error_decomposition(&s, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn identical_components() {
        let mut rng = rng_from_seed(2);
        let (d, _, f) = monte_carlo_pair(100, &mut rng).unwrap();
        let st = ensemble_stats(&d, &d, &f).unwrap();
        assert!((st.rho - 1.0).abs() < 1e-12);
        assert_eq!(st.alpha, 1.0);
        assert!((st.error_h - st.error_d).abs() < 1e-12);
        assert!(verify_identity(&d, &d, &f).unwrap() < 1e-12);
        let r = verify_sufficiency(&d, &d, &f).unwrap();
        // LHS = −½e + C₁ + C₂ = 0 analytically; no strict improvement either
        assert!(r.lhs.abs() < 1e-12);
        assert!(!r.improved || r.stats.error_h < r.stats.error_d);
        assert!(r.implication_ok);
    }

    #[test]
    fn cancelling_errors() {
        let f = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let eta = [0.3, -0.5, 0.2, 0.5, -0.3, -0.2];
        let s_g: Vec<f64> = f.iter().zip(&eta).map(|(a, b)| a + b).collect();
        let s_d: Vec<f64> = f.iter().zip(&eta).map(|(a, b)| a - b).collect();
        let st = ensemble_stats(&s_d, &s_g, &f).unwrap();
        assert!((st.rho + 1.0).abs() < 1e-12);
        assert!(st.error_h < 1e-30);
        let r = verify_sufficiency(&s_d, &s_g, &f).unwrap();
        assert!(r.condition_holds && r.improved);
    }

    #[test]
    fn published_summary_values() {
        let a = EnsembleStats::from_summary(0.59, 1.22, 1.09, 0.42, 0.18).unwrap();
        assert!((condition_lhs(&a) + 0.057).abs() < 1e-3);
        assert!((condition_lhs(&a) + 0.05725).abs() < 1e-12);
        let b = EnsembleStats::from_summary(0.56, 1.44, 1.22, 0.70, 0.04).unwrap();
        assert!((condition_lhs(&b) + 0.044).abs() < 1e-3);
        assert!(a.improved() && b.improved());
        for e in [0.01, 1.0, 50.0] {
            let c = EnsembleStats::from_summary(0.0, 2.9, e, 0.5, 0.0).unwrap();
            assert!(condition_lhs(&c) < 0.0);
        }
        assert!(EnsembleStats::from_summary(0.0, 0.5, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn correlation_examples() {
        let a = [1.0, 4.0, -2.0, 0.5, 3.3];
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((score_correlation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((score_correlation(&a, &c).unwrap() + 1.0).abs() < 1e-12);
        let d = [0.2, 0.1, -0.7, 1.0, 0.0];
        let (ma, md) = (a.iter().sum::<f64>() / 5.0, d.iter().sum::<f64>() / 5.0);
        let cov: f64 = a.iter().zip(&d).map(|(x, y)| (x - ma) * (y - md)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vd: f64 = d.iter().map(|y| (y - md).powi(2)).sum();
        assert!((score_correlation(&a, &d).unwrap() - cov / (va * vd).sqrt()).abs() < 1e-12);
        assert!(score_correlation(&a, &[1.0; 5]).is_err());
        assert!((spearman(&a, &b.iter().map(|x| x.exp()).collect::<Vec<_>>()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_has_no_violations() {
        let sweep = theory_sweep(200, 100, &mut rng_from_seed(7)).unwrap();
        assert!(sweep.all_pass());
        assert!(sweep.condition_hits > 10 && sweep.condition_hits < 190);
        let csv = sweep.csv();
        assert!(csv.starts_with(THEORY_HEADER));
        assert_eq!(csv.lines().count(), 201);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn identity_and_implication_hold(seed in any::<u64>(), n in 2usize..60) {
                let (d, g, f) = monte_carlo_pair(n, &mut rng_from_seed(seed)).unwrap();
                let r = verify_sufficiency(&d, &g, &f).unwrap();
                prop_assert!(r.residual < IDENTITY_TOLERANCE);
                prop_assert!(r.implication_ok);
            }

            #[test]
            fn lhs_increases_with_rho(rho in -1.0f64..0.99, dr in 0.001f64..0.01, c1 in 0.01f64..2.0) {
                let a = EnsembleStats::from_summary(rho, 1.5, 0.8, c1, 0.1).unwrap();
                let b = EnsembleStats::from_summary((rho + dr).min(1.0), 1.5, 0.8, c1, 0.1).unwrap();
                prop_assert!(condition_lhs(&b) > condition_lhs(&a));
            }
        }
    }
}
