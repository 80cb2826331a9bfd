//! Sizing and testing for correlated data, where the randomization unit
//! (user) is coarser than the analysis unit (session).
//!
//! The session-level metric is the ratio of per-user sums, X̄ = S̄/N̄. Its
//! variance follows from the joint moments of (Sᵢ, Nᵢ) by a first-order
//! Taylor expansion, and collapses to `h / k`, where the kernel
//!
//! ```text
//! h = (σ²_S − 2(μ_S/μ_N)·σ_SN + (μ_S/μ_N)²·σ²_N) / μ_N²
//! ```
//!
//! plays exactly the role σ² plays for independent data. Sizing in
//! randomization units is therefore the familiar formula with h in place
//! of σ². Unlike σ², h depends on how many sessions a user accumulates, so
//! it is tied to the observation window it was estimated from; results
//! carry that window so plans built on mismatched windows can be rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sizing::{
    build_result, relative_n_real, DesignParams, LiftSpec, SizingResult, UnitKind,
};
use crate::stats::Probability;

/// Whether the session-level metric is a 0/1 indicator or a real value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    Binary,
    Continuous,
}

/// One randomization unit after aggregation: session count and metric sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAggregate {
    pub user_id: String,
    pub n_sessions: u64,
    pub metric_sum: f64,
}

impl UserAggregate {
    pub fn new(user_id: impl Into<String>, n_sessions: u64, metric_sum: f64) -> Result<Self> {
        if n_sessions == 0 {
            return Err(Error::Validation(
                "a user aggregate must contain at least one session".to_string(),
            ));
        }
        if !metric_sum.is_finite() {
            return Err(Error::Validation(format!(
                "metric sum must be finite, got {metric_sum}"
            )));
        }
        Ok(UserAggregate {
            user_id: user_id.into(),
            n_sessions,
            metric_sum,
        })
    }
}

/// Joint sample moments of (metric sum, session count) across users,
/// estimated with n−1 denominators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMoments {
    pub k: u64,
    pub mu_n: f64,
    pub mu_s: f64,
    pub var_n: f64,
    pub var_s: f64,
    pub cov_sn: f64,
}

impl ClusterMoments {
    /// Validating constructor for hand-assembled moments.
    pub fn new(k: u64, mu_n: f64, mu_s: f64, var_n: f64, var_s: f64, cov_sn: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InsufficientData(format!(
                "moments need at least 2 users, got {k}"
            )));
        }
        for (name, v) in [("var_n", var_n), ("var_s", var_s)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !(mu_n.is_finite() && mu_s.is_finite() && cov_sn.is_finite()) {
            return Err(Error::domain("moments must be finite".to_string()));
        }
        // Cauchy–Schwarz, with slack for floating-point noise in inputs that
        // were themselves computed from data.
        if cov_sn * cov_sn > var_s * var_n * (1.0 + 1e-9) + 1e-30 {
            return Err(Error::domain(format!(
                "covariance {cov_sn} exceeds the Cauchy-Schwarz bound for variances {var_s}, {var_n}"
            )));
        }
        Ok(ClusterMoments {
            k,
            mu_n,
            mu_s,
            var_n,
            var_s,
            cov_sn,
        })
    }
}

/// Streaming accumulator for [`ClusterMoments`] (Welford updates), so arms
/// with millions of users never need to be materialized.
#[derive(Debug, Clone, Default)]
pub struct MomentAccumulator {
    k: u64,
    mean_n: f64,
    mean_s: f64,
    m2_n: f64,
    m2_s: f64,
    c_ns: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, n_sessions: u64, metric_sum: f64) {
        let n = n_sessions as f64;
        let s = metric_sum;
        self.k += 1;
        let k = self.k as f64;
        let dn = n - self.mean_n;
        self.mean_n += dn / k;
        let dn_new = n - self.mean_n;
        self.m2_n += dn * dn_new;
        let ds = s - self.mean_s;
        self.mean_s += ds / k;
        let ds_new = s - self.mean_s;
        self.m2_s += ds * ds_new;
        self.c_ns += dn * ds_new;
    }

    pub fn count(&self) -> u64 {
        self.k
    }

    pub fn finish(self) -> Result<ClusterMoments> {
        if self.k < 2 {
            return Err(Error::InsufficientData(format!(
                "moments need at least 2 users, got {}",
                self.k
            )));
        }
        let denom = (self.k - 1) as f64;
        Ok(ClusterMoments {
            k: self.k,
            mu_n: self.mean_n,
            mu_s: self.mean_s,
            var_n: self.m2_n / denom,
            var_s: self.m2_s / denom,
            cov_sn: self.c_ns / denom,
        })
    }
}

/// Session-level metric value: ΣSᵢ / ΣNᵢ.
pub fn metric_ratio(aggregates: &[UserAggregate]) -> Result<f64> {
    if aggregates.is_empty() {
        return Err(Error::InsufficientData(
            "cannot form a ratio from zero users".to_string(),
        ));
    }
    let total_n: u64 = aggregates.iter().map(|a| a.n_sessions).sum();
    if total_n == 0 {
        return Err(Error::InsufficientData(
            "no sessions across all users".to_string(),
        ));
    }
    let total_s: f64 = aggregates.iter().map(|a| a.metric_sum).sum();
    Ok(total_s / total_n as f64)
}

/// Joint moments of (Sᵢ, Nᵢ) across users. Users with zero sessions are
/// skipped; they contribute no analysis rows.
pub fn cluster_moments(aggregates: &[UserAggregate]) -> Result<ClusterMoments> {
    let mut acc = MomentAccumulator::new();
    for a in aggregates {
        if a.n_sessions == 0 {
            continue;
        }
        acc.push(a.n_sessions, a.metric_sum);
    }
    acc.finish()
}

/// The variance kernel h together with the moments it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HValue {
    pub value: f64,
    pub moments: ClusterMoments,
}

/// Evaluate the variance kernel h from joint user-level moments.
///
/// h is a quadratic form Var(S − rN)/μ_N² with r = μ_S/μ_N, so it is
/// nonnegative for any moments that respect Cauchy–Schwarz; tiny negative
/// values from cancellation are clamped to zero.
pub fn compute_h(m: &ClusterMoments) -> Result<HValue> {
    if m.mu_n <= 0.0 {
        return Err(Error::domain(format!(
            "mean sessions per user must be positive, got {}",
            m.mu_n
        )));
    }
    let r = m.mu_s / m.mu_n;
    let quad = m.var_s - 2.0 * r * m.cov_sn + r * r * m.var_n;
    let mut h = quad / (m.mu_n * m.mu_n);
    if h < 0.0 {
        if h > -1e-12 {
            h = 0.0;
        } else {
            return Err(Error::Validation(format!(
                "variance kernel came out negative ({h}); the moments are not jointly consistent"
            )));
        }
    }
    Ok(HValue {
        value: h,
        moments: *m,
    })
}

/// Variance of the session-level ratio metric over k users: h/k.
pub fn delta_variance(m: &ClusterMoments, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("user count must be positive".to_string()));
    }
    Ok(compute_h(m)?.value / k as f64)
}

/// Users required per arm to detect an absolute lift `delta` on the
/// session-level metric: k = 2h(z_alpha + z_beta)²/δ².
pub fn size_clustered(h: f64, delta: f64, design: &DesignParams) -> Result<SizingResult> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::domain(format!(
            "variance kernel must be positive, got {h}"
        )));
    }
    if !delta.is_finite() || delta == 0.0 {
        return Err(Error::domain(
            "lift must be a nonzero finite number".to_string(),
        ));
    }
    let n_real = 2.0 * h * design.crit_sum_sq() / (delta * delta);
    build_result(
        n_real,
        UnitKind::RandomizationUnit,
        LiftSpec::Absolute { delta },
        h,
        design,
        None,
    )
}

/// Users required per arm to detect a relative lift on the session-level
/// metric: k = (1/μ_x² + μ_y²/μ_x⁴)·h·(z_alpha + z_beta)²/δ_rel².
pub fn size_clustered_relative(
    baseline: f64,
    h: f64,
    delta_rel: f64,
    design: &DesignParams,
) -> Result<SizingResult> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::domain(format!(
            "variance kernel must be positive, got {h}"
        )));
    }
    if !baseline.is_finite() || baseline == 0.0 {
        return Err(Error::domain(
            "relative lift is undefined for a zero baseline".to_string(),
        ));
    }
    if !delta_rel.is_finite() || delta_rel == 0.0 {
        return Err(Error::domain(
            "relative lift must be a nonzero finite number".to_string(),
        ));
    }
    let mu_y = (1.0 + delta_rel) * baseline;
    let n_real = relative_n_real(baseline, mu_y, h, delta_rel, design);
    build_result(
        n_real,
        UnitKind::RandomizationUnit,
        LiftSpec::Relative {
            delta_rel,
            baseline,
        },
        h,
        design,
        None,
    )
}

/// Moments of the treatment arm implied by a constant absolute shift
/// `delta` of every user's mean, with session counts and within-user spread
/// untouched. Leaves the variance kernel h invariant.
pub fn propagate_moments_continuous(m: &ClusterMoments, delta: f64) -> ClusterMoments {
    ClusterMoments {
        k: m.k,
        mu_n: m.mu_n,
        var_n: m.var_n,
        mu_s: m.mu_s + delta * m.mu_n,
        cov_sn: m.cov_sn + delta * m.var_n,
        var_s: m.var_s + 2.0 * delta * m.cov_sn + delta * delta * m.var_n,
    }
}

/// As [`propagate_moments_continuous`], but for a 0/1 metric, where shifting
/// a user's rate also changes the within-user Bernoulli variance. Adds the
/// correction δ((1−δ)μ_N − 2μ_S) to σ²_S.
pub fn propagate_moments_binary(m: &ClusterMoments, delta: f64) -> ClusterMoments {
    let mut out = propagate_moments_continuous(m, delta);
    out.var_s += delta * ((1.0 - delta) * m.mu_n - 2.0 * m.mu_s);
    out
}

/// Shift of the variance kernel between treatment and control for a 0/1
/// metric under a constant rate lift: δ_h = δ((1−δ)μ_N − 2μ_S)/μ_N².
///
/// With small lifts and μ_S bounded by μ_N this is negligible, which is why
/// a single h can size both arms.
pub fn delta_h_binary(m: &ClusterMoments, delta: f64) -> Result<f64> {
    if m.mu_n <= 0.0 {
        return Err(Error::domain(format!(
            "mean sessions per user must be positive, got {}",
            m.mu_n
        )));
    }
    if m.mu_s < 0.0 || m.mu_s > m.mu_n {
        return Err(Error::domain(format!(
            "binary-metric moments require 0 <= mu_s <= mu_n, got mu_s={} mu_n={}",
            m.mu_s, m.mu_n
        )));
    }
    Ok(delta * ((1.0 - delta) * m.mu_n - 2.0 * m.mu_s) / (m.mu_n * m.mu_n))
}

/// Which baseline mean the relative-lift standard error uses.
///
/// The sample mean is noisy exactly when samples are small, which inflates
/// empirical power for large relative lifts; an externally estimated or
/// known mean removes that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSource {
    Sample,
    FixedExternal(f64),
    TrueKnown(f64),
}

impl MeanSource {
    fn resolve(&self, sample_mean: f64) -> f64 {
        match *self {
            MeanSource::Sample => sample_mean,
            MeanSource::FixedExternal(v) | MeanSource::TrueKnown(v) => v,
        }
    }
}

/// Lift measure a two-arm test reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LiftKind {
    Absolute,
    Relative(MeanSource),
}

/// Outcome of a two-arm z-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaTestResult {
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub z_crit: f64,
    pub significant: bool,
}

/// Point estimate of one arm's mean together with the estimated variance of
/// that mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmEstimate {
    pub mean: f64,
    pub var_of_mean: f64,
}

/// Two-arm z-test on the absolute difference of means.
pub fn absolute_z_test(
    control: ArmEstimate,
    treatment: ArmEstimate,
    z_crit: f64,
) -> Result<DeltaTestResult> {
    let estimate = treatment.mean - control.mean;
    let se = (treatment.var_of_mean + control.var_of_mean).sqrt();
    finish_test(estimate, se, z_crit)
}

/// Two-arm z-test on the relative difference (Ȳ−X̄)/X̄. The baseline mean
/// inside the standard error may be overridden; the estimate itself always
/// uses the sample baseline.
pub fn relative_z_test(
    control: ArmEstimate,
    treatment: ArmEstimate,
    baseline_for_se: f64,
    z_crit: f64,
) -> Result<DeltaTestResult> {
    if control.mean == 0.0 {
        return Err(Error::domain(
            "relative lift is undefined: the control mean is zero".to_string(),
        ));
    }
    if baseline_for_se == 0.0 {
        return Err(Error::domain(
            "relative-lift standard error is undefined for a zero baseline".to_string(),
        ));
    }
    let estimate = (treatment.mean - control.mean) / control.mean;
    let b2 = baseline_for_se * baseline_for_se;
    let se2 = treatment.var_of_mean / b2
        + (treatment.mean * treatment.mean) * control.var_of_mean / (b2 * b2);
    finish_test(estimate, se2.sqrt(), z_crit)
}

fn finish_test(estimate: f64, std_error: f64, z_crit: f64) -> Result<DeltaTestResult> {
    if !(std_error.is_finite() && std_error > 0.0) {
        return Err(Error::domain(format!(
            "test standard error must be positive, got {std_error}"
        )));
    }
    let t_stat = estimate / std_error;
    Ok(DeltaTestResult {
        estimate,
        std_error,
        t_stat,
        z_crit,
        significant: t_stat.abs() > z_crit,
    })
}

/// Two-arm test on user-aggregated data with per-arm variance h/k.
pub fn delta_ttest(
    control: &[UserAggregate],
    treatment: &[UserAggregate],
    alpha: Probability,
    lift: LiftKind,
) -> Result<DeltaTestResult> {
    let mc = cluster_moments(control)?;
    let mt = cluster_moments(treatment)?;
    delta_ttest_from_moments(&mc, &mt, alpha, lift)
}

/// As [`delta_ttest`], but on already-computed arm moments.
pub fn delta_ttest_from_moments(
    control: &ClusterMoments,
    treatment: &ClusterMoments,
    alpha: Probability,
    lift: LiftKind,
) -> Result<DeltaTestResult> {
    let design = DesignParams::two_sided(alpha, Probability::new(0.5).expect("valid"));
    let z_crit = design.z_alpha();
    let c = arm_estimate(control)?;
    let t = arm_estimate(treatment)?;
    match lift {
        LiftKind::Absolute => absolute_z_test(c, t, z_crit),
        LiftKind::Relative(source) => relative_z_test(c, t, source.resolve(c.mean), z_crit),
    }
}

fn arm_estimate(m: &ClusterMoments) -> Result<ArmEstimate> {
    if m.mu_n <= 0.0 {
        return Err(Error::domain(
            "arm has a nonpositive mean session count".to_string(),
        ));
    }
    Ok(ArmEstimate {
        mean: m.mu_s / m.mu_n,
        var_of_mean: compute_h(m)?.value / m.k as f64,
    })
}

/// Lift requested for a sizing plan, before the baseline is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannedLift {
    Absolute(f64),
    Relative(f64),
}

/// Side-by-side sizing under the (incorrect for clustered data) independence
/// assumption, for the same lift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardComparison {
    /// Sessions per arm the independence formula asks for.
    pub n_iid_sessions_per_arm: u64,
    /// Sessions per arm the randomization-unit design will actually collect.
    pub delta_sessions_per_arm: u64,
}

/// A complete clustered sizing plan derived from historical aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredSizingPlan {
    /// Users required per arm.
    pub k: u64,
    pub sizing: SizingResult,
    pub moments: ClusterMoments,
    /// Session-level metric value ΣS/ΣN from the historical window.
    pub metric_mean: f64,
    /// Variance kernel at reporting precision (three significant figures);
    /// this is the value the sizing consumed, so the plan can be reproduced
    /// exactly from its own published numbers.
    pub h: f64,
    /// Full-precision variance kernel, for audit.
    pub h_exact: f64,
    /// Expected sessions collected per arm, k·μ_N.
    pub sessions_estimate: u64,
    pub window_days: Option<u32>,
    /// Binary metrics only: what the independence assumption would have
    /// prescribed.
    pub standard_comparison: Option<StandardComparison>,
}

/// Round to `digits` significant figures.
pub(crate) fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - magnitude);
    (x * factor).round() / factor
}

/// Size a clustered experiment from historical user aggregates.
///
/// Steps: estimate the joint moments, evaluate h, round it to reporting
/// precision, and solve for the user count. The rounded h is what the plan
/// publishes, so recomputing k from the published h gives the published k.
pub fn plan_clustered_sizing(
    aggregates: &[UserAggregate],
    lift: PlannedLift,
    metric: MetricMode,
    design: &DesignParams,
    window_days: Option<u32>,
) -> Result<ClusteredSizingPlan> {
    if metric == MetricMode::Binary {
        for a in aggregates {
            if a.metric_sum < 0.0 || a.metric_sum > a.n_sessions as f64 {
                return Err(Error::Validation(format!(
                    "user {}: binary metric sum {} outside [0, {}]",
                    a.user_id, a.metric_sum, a.n_sessions
                )));
            }
        }
    }
    let moments = cluster_moments(aggregates)?;
    let metric_mean = metric_ratio(aggregates)?;
    let h_exact = compute_h(&moments)?.value;
    let h = round_sig(h_exact, 3);

    let mut sizing = match lift {
        PlannedLift::Absolute(delta) => {
            if metric == MetricMode::Binary {
                let implied = metric_mean + delta;
                if implied <= 0.0 || implied >= 1.0 {
                    return Err(Error::infeasible(format!(
                        "implied treatment rate {implied} is outside (0,1)"
                    )));
                }
            }
            size_clustered(h, delta, design)?
        }
        PlannedLift::Relative(delta_rel) => {
            if metric == MetricMode::Binary {
                let implied = (1.0 + delta_rel) * metric_mean;
                if implied <= 0.0 || implied >= 1.0 {
                    return Err(Error::infeasible(format!(
                        "implied treatment rate {implied} is outside (0,1)"
                    )));
                }
            }
            size_clustered_relative(metric_mean, h, delta_rel, design)?
        }
    };
    sizing.window_days = window_days;

    let k = sizing.n_per_arm;
    let sessions_estimate = (k as f64 * moments.mu_n).round() as u64;

    let standard_comparison = if metric == MetricMode::Binary {
        let delta_abs = match lift {
            PlannedLift::Absolute(d) => d,
            PlannedLift::Relative(dr) => dr * metric_mean,
        };
        Probability::new(metric_mean)
            .ok()
            .and_then(|p| crate::sizing::size_iid_binary(p, delta_abs, design).ok())
            .map(|r| StandardComparison {
                n_iid_sessions_per_arm: r.n_per_arm,
                delta_sessions_per_arm: sessions_estimate,
            })
    } else {
        None
    };

    Ok(ClusteredSizingPlan {
        k,
        sizing,
        moments,
        metric_mean,
        h,
        h_exact,
        sessions_estimate,
        window_days,
        standard_comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sizing::size_iid_continuous;

    fn prob(p: f64) -> Probability {
        Probability::new(p).unwrap()
    }

    fn default_design() -> DesignParams {
        DesignParams::two_sided(prob(0.05), prob(0.8))
    }

    pub(crate) fn table1() -> Vec<UserAggregate> {
        [
            ("A", 1u64, 1.0),
            ("B", 3, 3.0),
            ("C", 5, 1.0),
            ("D", 2, 0.0),
            ("E", 10, 8.0),
        ]
        .into_iter()
        .map(|(id, n, s)| UserAggregate::new(id, n, s).unwrap())
        .collect()
    }

    const H_TABLE1: f64 = 0.150_914_485_219_635_85;

    #[test]
    fn ratio_of_worked_example() {
        let aggs = table1();
        let r = metric_ratio(&aggs).unwrap();
        assert!((r - 13.0 / 21.0).abs() < 1e-15);
        assert!((r - 0.619).abs() < 5e-4);
    }

    #[test]
    fn ratio_degenerate_cases() {
        let single = vec![UserAggregate::new("u", 4, 3.0).unwrap()];
        assert!((metric_ratio(&single).unwrap() - 0.75).abs() < 1e-15);

        let unit: Vec<UserAggregate> = (0..4)
            .map(|i| UserAggregate::new(format!("u{i}"), 1, i as f64).unwrap())
            .collect();
        assert!((metric_ratio(&unit).unwrap() - 1.5).abs() < 1e-15);

        assert!(metric_ratio(&[]).is_err());
    }

    #[test]
    fn moments_of_worked_example() {
        let m = cluster_moments(&table1()).unwrap();
        assert_eq!(m.k, 5);
        assert!((m.mu_s - 2.6).abs() < 1e-12);
        assert!((m.mu_n - 4.2).abs() < 1e-12);
        assert!((m.var_s - 10.3).abs() < 1e-12);
        assert!((m.var_n - 12.7).abs() < 1e-12);
        assert!((m.cov_sn - 10.1).abs() < 1e-12);
    }

    #[test]
    fn moments_unit_sessions_reduce_to_plain_variance() {
        let xs = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let aggs: Vec<UserAggregate> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| UserAggregate::new(format!("u{i}"), 1, x).unwrap())
            .collect();
        let m = cluster_moments(&aggs).unwrap();
        assert_eq!(m.mu_n, 1.0);
        assert_eq!(m.var_n, 0.0);
        assert_eq!(m.cov_sn, 0.0);
        let direct = crate::stats::sample_mean_var(&xs).unwrap();
        assert!((m.var_s - direct.variance).abs() < 1e-14);
    }

    #[test]
    fn duplicated_dataset_against_direct_recomputation() {
        let mut doubled = table1();
        doubled.extend(table1());
        let m = cluster_moments(&doubled).unwrap();

        // Oracle: recompute from scratch with the plain two-pass formulas.
        let ns: Vec<f64> = doubled.iter().map(|a| a.n_sessions as f64).collect();
        let ss: Vec<f64> = doubled.iter().map(|a| a.metric_sum).collect();
        let mn = crate::stats::sample_mean_var(&ns).unwrap();
        let ms = crate::stats::sample_mean_var(&ss).unwrap();
        let c = crate::stats::sample_cov(&ss, &ns).unwrap();
        assert!((m.mu_n - mn.mean).abs() < 1e-12);
        assert!((m.var_n - mn.variance).abs() < 1e-12);
        assert!((m.mu_s - ms.mean).abs() < 1e-12);
        assert!((m.var_s - ms.variance).abs() < 1e-12);
        assert!((m.cov_sn - c).abs() < 1e-12);
        // Same means, tighter variances under the n−1 convention.
        assert!((m.mu_n - 4.2).abs() < 1e-12);
        assert!(m.var_n < 12.7);
    }

    #[test]
    fn h_of_worked_example() {
        let h = compute_h(&cluster_moments(&table1()).unwrap()).unwrap();
        assert!((h.value - H_TABLE1).abs() < 1e-12);
        assert!((h.value - 0.151).abs() < 5e-4);
    }

    #[test]
    fn h_reduces_to_variance_for_unit_sessions() {
        let m = ClusterMoments::new(10, 1.0, 0.4, 0.0, 0.24, 0.0).unwrap();
        let h = compute_h(&m).unwrap();
        assert_eq!(h.value, 0.24);
    }

    #[test]
    fn h_rejects_nonpositive_session_mean() {
        let m = ClusterMoments {
            k: 5,
            mu_n: 0.0,
            mu_s: 1.0,
            var_n: 1.0,
            var_s: 1.0,
            cov_sn: 0.0,
        };
        assert!(compute_h(&m).is_err());
    }

    #[test]
    fn delta_variance_is_h_over_k() {
        let m = cluster_moments(&table1()).unwrap();
        let h = compute_h(&m).unwrap().value;
        let v5 = delta_variance(&m, 5).unwrap();
        assert_eq!(v5, h / 5.0);
        assert!((v5 - 0.0302).abs() < 5e-5);
        let v10 = delta_variance(&m, 10).unwrap();
        assert!((v5 / v10 - 2.0).abs() < 1e-15);
        assert!(delta_variance(&m, 0).is_err());
    }

    #[test]
    fn clustered_sizing_frozen_values() {
        let d = default_design();
        assert_eq!(size_clustered(0.151, 0.05, &d).unwrap().n_per_arm, 949);
        let r = size_clustered(0.151, 0.05, &d).unwrap();
        assert_eq!(r.unit_kind, UnitKind::RandomizationUnit);
        assert!(size_clustered(0.0, 0.05, &d).is_err());
        assert!(size_clustered(0.151, 0.0, &d).is_err());
    }

    #[test]
    fn clustered_sizing_bridges_to_iid_for_unit_sessions() {
        let d = default_design();
        // With one session per user the kernel is exactly the variance, and
        // the user count must equal the independent-data answer bit for bit.
        for var in [0.24, 1.0, 0.097_531_2] {
            let m = ClusterMoments::new(10, 1.0, 0.4, 0.0, var, 0.0).unwrap();
            let h = compute_h(&m).unwrap().value;
            let k = size_clustered(h, 0.05, &d).unwrap().n_per_arm;
            let n = size_iid_continuous(var, 0.05, &d).unwrap().n_per_arm;
            assert_eq!(k, n);
        }
    }

    #[test]
    fn relative_clustered_scales_linearly_in_h() {
        let d = default_design();
        let base = size_clustered_relative(0.619, 0.151, 0.05, &d).unwrap();
        let tripled = size_clustered_relative(0.619, 3.0 * 0.151, 0.05, &d).unwrap();
        assert!((tripled.n_real / base.n_real - 3.0).abs() < 1e-12);
        assert!(size_clustered_relative(0.0, 0.151, 0.05, &d).is_err());
    }

    #[test]
    fn propagation_worked_example() {
        let m = cluster_moments(&table1()).unwrap();
        let t = propagate_moments_continuous(&m, 0.05);
        assert_eq!(t.mu_n, m.mu_n);
        assert_eq!(t.var_n, m.var_n);
        assert!((t.mu_s - 2.81).abs() < 1e-12);
        assert!((t.cov_sn - 10.735).abs() < 1e-12);
        assert!((t.var_s - 11.341_75).abs() < 1e-12);

        let h_c = compute_h(&m).unwrap().value;
        let h_t = compute_h(&t).unwrap().value;
        assert!((h_c - h_t).abs() <= 1e-10 * h_c);
    }

    #[test]
    fn propagation_identity_and_linearity() {
        let m = cluster_moments(&table1()).unwrap();
        let id = propagate_moments_continuous(&m, 0.0);
        assert_eq!(id, m);

        let up = propagate_moments_continuous(&m, 0.07);
        let down = propagate_moments_continuous(&m, -0.07);
        assert!(((up.mu_s + down.mu_s) / 2.0 - m.mu_s).abs() < 1e-12);
    }

    #[test]
    fn binary_kernel_shift_worked_example() {
        let m = cluster_moments(&table1()).unwrap();
        let dh = delta_h_binary(&m, 0.05).unwrap();
        assert!((dh - (-0.003_429_705_215_419_501)).abs() < 1e-15);
        assert_eq!(delta_h_binary(&m, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn binary_kernel_shift_matches_propagation_path() {
        let m = cluster_moments(&table1()).unwrap();
        for delta in [-0.2, -0.05, 0.01, 0.05, 0.2] {
            let h_c = compute_h(&m).unwrap().value;
            let h_t = compute_h(&propagate_moments_binary(&m, delta))
                .unwrap()
                .value;
            let dh = delta_h_binary(&m, delta).unwrap();
            assert!(
                ((h_t - h_c) - dh).abs() <= 1e-12 * dh.abs().max(1e-6),
                "delta={delta}"
            );
        }
    }

    #[test]
    fn binary_kernel_shift_is_small() {
        // |δ_h| <= |δ|(1+|δ|)·max(1, 2μ_S/μ_N)/μ_N on a grid of binary moments.
        for mu_n in [1.5, 4.2, 20.0] {
            for rate in [0.1, 0.5, 0.9] {
                let mu_s = rate * mu_n;
                let m = ClusterMoments::new(50, mu_n, mu_s, 2.0, 1.5, 0.5).unwrap();
                for delta in [-0.2, -0.1, 0.05, 0.1, 0.2] {
                    let dh = delta_h_binary(&m, delta).unwrap();
                    let bound =
                        delta.abs() * (1.0 + delta.abs()) * (2.0 * mu_s / mu_n).max(1.0) / mu_n;
                    assert!(
                        dh.abs() <= bound + 1e-15,
                        "mu_n={mu_n} rate={rate} delta={delta}"
                    );
                }
            }
        }
    }

    #[test]
    fn identical_arms_are_not_significant() {
        let aggs = table1();
        let r = delta_ttest(&aggs, &aggs, prob(0.05), LiftKind::Absolute).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert!(!r.significant);
        assert_eq!(r.t_stat, 0.0);
    }

    #[test]
    fn unit_sessions_reduce_to_classical_two_sample_z() {
        let xs = [1.2, 0.4, 0.9, 1.6, 0.2, 0.8];
        let ys = [1.9, 1.1, 2.3, 0.7, 1.4, 2.0];
        let control: Vec<UserAggregate> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| UserAggregate::new(format!("c{i}"), 1, x).unwrap())
            .collect();
        let treatment: Vec<UserAggregate> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| UserAggregate::new(format!("t{i}"), 1, y).unwrap())
            .collect();
        let r = delta_ttest(&control, &treatment, prob(0.05), LiftKind::Absolute).unwrap();

        let mx = crate::stats::sample_mean_var(&xs).unwrap();
        let my = crate::stats::sample_mean_var(&ys).unwrap();
        let se = (mx.variance / 6.0 + my.variance / 6.0).sqrt();
        let z = (my.mean - mx.mean) / se;
        assert!((r.t_stat - z).abs() < 1e-12);
        assert!((r.estimate - (my.mean - mx.mean)).abs() < 1e-12);
    }

    #[test]
    fn relative_test_rejects_zero_baseline() {
        let zeros: Vec<UserAggregate> = (0..4)
            .map(|i| {
                UserAggregate::new(format!("c{i}"), 2, if i % 2 == 0 { 1.0 } else { -1.0 }).unwrap()
            })
            .collect();
        let treatment = table1();
        let err = delta_ttest(
            &zeros,
            &treatment,
            prob(0.05),
            LiftKind::Relative(MeanSource::Sample),
        );
        assert!(err.is_err());
    }

    #[test]
    fn plan_reproduces_worked_example_end_to_end() {
        let d = default_design();
        let plan = plan_clustered_sizing(
            &table1(),
            PlannedLift::Absolute(0.05),
            MetricMode::Binary,
            &d,
            Some(14),
        )
        .unwrap();
        assert_eq!(plan.h, 0.151);
        assert!((plan.h_exact - H_TABLE1).abs() < 1e-12);
        assert_eq!(plan.k, 949);
        assert_eq!(plan.sessions_estimate, 3_986);
        assert_eq!(plan.sizing.window_days, Some(14));
        let cmp = plan.standard_comparison.unwrap();
        assert_eq!(cmp.n_iid_sessions_per_arm, 1_440);
        assert_eq!(cmp.delta_sessions_per_arm, 3_986);
    }

    #[test]
    fn plan_relative_worked_example() {
        let d = default_design();
        let plan = plan_clustered_sizing(
            &table1(),
            PlannedLift::Relative(0.05),
            MetricMode::Binary,
            &d,
            None,
        )
        .unwrap();
        assert!((2_597..=2_609).contains(&plan.k), "k={}", plan.k);
    }

    #[test]
    fn plan_validates_binary_sums() {
        let d = default_design();
        let bad = vec![
            UserAggregate::new("a", 2, 3.0).unwrap(),
            UserAggregate::new("b", 2, 1.0).unwrap(),
        ];
        assert!(matches!(
            plan_clustered_sizing(
                &bad,
                PlannedLift::Absolute(0.05),
                MetricMode::Binary,
                &d,
                None
            ),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn round_sig_behaves() {
        assert_eq!(round_sig(0.150_914_485, 3), 0.151);
        assert_eq!(round_sig(0.071_196, 3), 0.0712);
        assert_eq!(round_sig(12_345.0, 3), 12_300.0);
        assert_eq!(round_sig(0.0, 3), 0.0);
    }
}
