//! Deterministic Monte Carlo engine that checks the sizing formulas empirically:
//! clustered power and type I error, the cost of sizing clustered data with the
//! independence formula, relative-lift suites, and the minimum-observed-difference
//! separation experiment.
//!
//! Reproducibility model: every replicate derives its own random streams from
//! `(master_seed, replicate * 4 + slot)`: slot 0 is the control arm, slot 1
//! the treatment arm, slot 2 the treatment arm under the null, slot 3 auxiliary
//! draws (e.g. the large-sample baseline estimate). Distinct experiment phases
//! (historical pass, each suite) run under phase-mixed master seeds. Replicates
//! are embarrassingly parallel and tallied with order-independent sums, so a
//! report depends only on the seed and the configuration, never on the worker
//! count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustered::{
    absolute_z_test, compute_h, relative_z_test, round_sig, size_clustered, ArmEstimate,
    ClusterMoments, MomentAccumulator, UserAggregate,
};
use crate::error::{Error, Result};
use crate::sizing::{size_iid_binary, size_relative_iid_binary, DesignParams};
use crate::stats::rng::mix64;
use crate::stats::sample::{BinomialSampler, PoissonSampler, TruncatedNormalSampler};
use crate::stats::{Probability, RngStream};

const SLOT_CONTROL: u64 = 0;
const SLOT_TREATMENT: u64 = 1;
const SLOT_TREATMENT_NULL: u64 = 2;
const SLOT_AUX: u64 = 3;

/// Stream index reserved for the single historical-data pass of a phase.
pub const HISTORICAL_STREAM: u64 = u64::MAX;

// Phase tags mixed into the master seed so suites never share streams.
const PHASE_HISTORY: u64 = 1;
const PHASE_CLUSTERED: u64 = 2;
const PHASE_SCENARIO_I: u64 = 3;
const PHASE_SCENARIO_II: u64 = 4;
const PHASE_RELATIVE: u64 = 5;
const PHASE_RELATIVE_ABS: u64 = 6;
const PHASE_MOD: u64 = 7;

fn phase_seed(master_seed: u64, phase: u64) -> u64 {
    mix64(master_seed ^ phase.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn replicate_stream(seed: u64, rep: u64, slot: u64) -> RngStream {
    RngStream::new(seed, rep * 4 + slot)
}

/// Which data-generating regime a batch of replicates runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    Null,
    Alternative,
}

/// The five benchmark configurations for the clustered generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    I,
    II,
    III,
    IV,
    V,
}

impl std::str::FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(CaseId::I),
            "II" | "2" => Ok(CaseId::II),
            "III" | "3" => Ok(CaseId::III),
            "IV" | "4" => Ok(CaseId::IV),
            "V" | "5" => Ok(CaseId::V),
            other => Err(Error::Validation(format!("unknown case '{other}'"))),
        }
    }
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CaseId::I => "I",
            CaseId::II => "II",
            CaseId::III => "III",
            CaseId::IV => "IV",
            CaseId::V => "V",
        };
        f.write_str(s)
    }
}

/// Distribution of per-user rates around the arm mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PDist {
    /// Normal with sd = half_range/2, truncated two sd either side.
    TruncatedNormal { half_range: f64 },
    /// Uniform on mean ± half_range.
    Uniform { half_range: f64 },
}

impl PDist {
    fn half_range(&self) -> f64 {
        match *self {
            PDist::TruncatedNormal { half_range } | PDist::Uniform { half_range } => half_range,
        }
    }
}

/// One clustered simulation configuration: control rate, lift under the
/// alternative, session intensity, rate spread, and the size of the
/// historical pass used for sizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteredCase {
    pub p_x: Probability,
    pub delta: f64,
    pub lambda: f64,
    pub p_dist: PDist,
    pub k_hist: u64,
}

impl ClusteredCase {
    pub fn new(
        p_x: Probability,
        delta: f64,
        lambda: f64,
        p_dist: PDist,
        k_hist: u64,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::domain(format!(
                "session intensity must be positive, got {lambda}"
            )));
        }
        if !(p_dist.half_range().is_finite() && p_dist.half_range() >= 0.0) {
            return Err(Error::domain(
                "rate half-range must be nonnegative".to_string(),
            ));
        }
        if k_hist < 2 {
            return Err(Error::domain(format!(
                "historical pass needs at least 2 users, got {k_hist}"
            )));
        }
        let case = ClusteredCase {
            p_x,
            delta,
            lambda,
            p_dist,
            k_hist,
        };
        // Both arm means must admit a rate distribution inside [0,1].
        ArmSampler::new(&case, case.p_x.value())?;
        ArmSampler::new(&case, case.p_x.value() + case.delta)?;
        Ok(case)
    }

    /// The benchmark cases.
    pub fn preset(id: CaseId) -> Self {
        let p = |v| Probability::new(v).expect("preset rate in (0,1)");
        let (p_x, delta, lambda, p_dist) = match id {
            CaseId::I => (
                p(0.6),
                0.05,
                5.0,
                PDist::TruncatedNormal { half_range: 0.35 },
            ),
            CaseId::II => (
                p(0.6),
                0.05,
                20.0,
                PDist::TruncatedNormal { half_range: 0.35 },
            ),
            CaseId::III => (
                p(0.8),
                0.02,
                5.0,
                PDist::TruncatedNormal { half_range: 0.18 },
            ),
            CaseId::IV => (p(0.5), 0.2, 5.0, PDist::TruncatedNormal { half_range: 0.3 }),
            CaseId::V => (p(0.6), 0.05, 5.0, PDist::Uniform { half_range: 0.35 }),
        };
        ClusteredCase {
            p_x,
            delta,
            lambda,
            p_dist,
            k_hist: 5_000,
        }
    }
}

enum RateSampler {
    Constant(f64),
    TruncatedNormal(TruncatedNormalSampler),
    Uniform { lo: f64, hi: f64 },
}

impl RateSampler {
    fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        match self {
            RateSampler::Constant(p) => Ok(*p),
            RateSampler::TruncatedNormal(s) => s.sample(rng),
            RateSampler::Uniform { lo, hi } => Ok(rng.random_range(*lo..*hi)),
        }
    }
}

/// Draws one arm's users: session counts (zero-truncated Poisson), per-user
/// rates, and converted-session sums.
struct ArmSampler {
    sessions: PoissonSampler,
    rate: RateSampler,
}

impl ArmSampler {
    fn new(case: &ClusteredCase, arm_mean: f64) -> Result<Self> {
        let half = case.p_dist.half_range();
        let (lo, hi) = (arm_mean - half, arm_mean + half);
        if lo < 0.0 || hi > 1.0 {
            return Err(Error::domain(format!(
                "rate distribution [{lo}, {hi}] leaves [0,1]; \
                 center {arm_mean} with half-range {half} is infeasible"
            )));
        }
        let rate = if half == 0.0 {
            RateSampler::Constant(arm_mean)
        } else {
            match case.p_dist {
                PDist::TruncatedNormal { half_range } => RateSampler::TruncatedNormal(
                    TruncatedNormalSampler::new(arm_mean, half_range / 2.0, lo, hi)?,
                ),
                PDist::Uniform { .. } => RateSampler::Uniform { lo, hi },
            }
        };
        Ok(ArmSampler {
            sessions: PoissonSampler::new(case.lambda)?,
            rate,
        })
    }

    /// One user: (session count, converted sessions). A user with zero
    /// sessions would contribute no analysis rows, so counts are drawn
    /// conditional on being positive.
    fn draw_user(&self, rng: &mut RngStream) -> Result<(u64, u64)> {
        let n = self.sessions.sample_positive(rng);
        let p = self.rate.sample(rng)?;
        let mut s = 0u64;
        for _ in 0..n {
            if rng.random::<f64>() < p {
                s += 1;
            }
        }
        Ok((n, s))
    }

    fn arm_moments(&self, k: u64, rng: &mut RngStream) -> Result<ClusterMoments> {
        let mut acc = MomentAccumulator::new();
        for _ in 0..k {
            let (n, s) = self.draw_user(rng)?;
            acc.push(n, s as f64);
        }
        acc.finish()
    }

    fn arm_totals(&self, k: u64, rng: &mut RngStream) -> Result<(u64, u64)> {
        let mut sessions = 0u64;
        let mut converted = 0u64;
        for _ in 0..k {
            let (n, s) = self.draw_user(rng)?;
            sessions += n;
            converted += s;
        }
        Ok((sessions, converted))
    }
}

/// Generate one arm of user aggregates under the case's generative model.
pub fn generate_clustered_arm(
    case: &ClusteredCase,
    arm_mean: f64,
    k: u64,
    rng: &mut RngStream,
) -> Result<Vec<UserAggregate>> {
    if k == 0 {
        return Err(Error::domain(
            "arm must contain at least one user".to_string(),
        ));
    }
    let sampler = ArmSampler::new(case, arm_mean)?;
    let mut out = Vec::with_capacity(k as usize);
    for i in 0..k {
        let (n, s) = sampler.draw_user(rng)?;
        out.push(UserAggregate {
            user_id: format!("u{i}"),
            n_sessions: n,
            metric_sum: s as f64,
        });
    }
    Ok(out)
}

/// Monte Carlo margin 2·√(p(1−p)/reps): two standard errors of an empirical
/// rate, the convention the reported error bands use.
pub fn mc_margin(reps: u64, p: f64) -> f64 {
    2.0 * (p * (1.0 - p) / reps as f64).sqrt()
}

/// Tallied outcome of one simulation suite (both hypotheses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario_tag: String,
    pub reps: u64,
    /// Units per arm the suite ran with (users or observations).
    pub n_or_k_used: u64,
    pub empirical_alpha: f64,
    pub empirical_power: f64,
    /// Margin at the nominal type I error rate.
    pub mc_margin_alpha: f64,
    /// Margin at the designed power.
    pub mc_margin_power: f64,
    pub master_seed: u64,
    pub rng_family: String,
}

fn report(
    tag: impl Into<String>,
    reps: u64,
    n_or_k: u64,
    null_rejections: u64,
    alt_rejections: u64,
    design: &DesignParams,
    master_seed: u64,
) -> SimulationReport {
    SimulationReport {
        scenario_tag: tag.into(),
        reps,
        n_or_k_used: n_or_k,
        empirical_alpha: null_rejections as f64 / reps as f64,
        empirical_power: alt_rejections as f64 / reps as f64,
        mc_margin_alpha: mc_margin(reps, design.alpha.value()),
        mc_margin_power: mc_margin(reps, design.power.value()),
        master_seed,
        rng_family: RngStream::GENERATOR_FAMILY.to_string(),
    }
}

fn check_reps(reps: u64) -> Result<()> {
    if reps < 100 {
        return Err(Error::domain(format!(
            "at least 100 replicates are needed for a meaningful tally, got {reps}"
        )));
    }
    Ok(())
}

fn run_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?;
        pool.install(f)
    }
}

fn tally(reps: u64, rep_fn: impl Fn(u64) -> Result<bool> + Sync) -> Result<u64> {
    (0..reps)
        .into_par_iter()
        .map(|rep| rep_fn(rep).map(u64::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

fn treatment_slot(hypothesis: Hypothesis) -> u64 {
    match hypothesis {
        Hypothesis::Null => SLOT_TREATMENT_NULL,
        Hypothesis::Alternative => SLOT_TREATMENT,
    }
}

/// Rejection rate of the h/k-variance test for one clustered batch under a
/// single hypothesis: the empirical type I error under the null, the
/// empirical power under the alternative. [`run_clustered_suite`] runs both
/// and shares the replicate streams with this function.
pub fn run_clustered_hypothesis(
    case: &ClusteredCase,
    k_per_arm: u64,
    reps: u64,
    hypothesis: Hypothesis,
    design: &DesignParams,
    master_seed: u64,
    threads: usize,
) -> Result<f64> {
    check_reps(reps)?;
    if k_per_arm < 2 {
        return Err(Error::domain("need at least 2 users per arm".to_string()));
    }
    let z_crit = design.z_alpha();
    let seed = phase_seed(master_seed, PHASE_CLUSTERED);
    let rejections = run_pool(threads, || {
        clustered_rejections(case, k_per_arm, reps, hypothesis, z_crit, seed)
    })?;
    Ok(rejections as f64 / reps as f64)
}

/// Rejection count for one clustered batch analyzed with the per-arm h/k
/// variance (the correct analysis for user-randomized session metrics).
fn clustered_rejections(
    case: &ClusteredCase,
    k_per_arm: u64,
    reps: u64,
    hypothesis: Hypothesis,
    z_crit: f64,
    seed: u64,
) -> Result<u64> {
    let control = ArmSampler::new(case, case.p_x.value())?;
    let treatment_mean = match hypothesis {
        Hypothesis::Null => case.p_x.value(),
        Hypothesis::Alternative => case.p_x.value() + case.delta,
    };
    let treatment = ArmSampler::new(case, treatment_mean)?;
    let slot = treatment_slot(hypothesis);
    tally(reps, |rep| {
        let mc = control.arm_moments(k_per_arm, &mut replicate_stream(seed, rep, SLOT_CONTROL))?;
        let mt = treatment.arm_moments(k_per_arm, &mut replicate_stream(seed, rep, slot))?;
        let c = ArmEstimate {
            mean: mc.mu_s / mc.mu_n,
            var_of_mean: compute_h(&mc)?.value / mc.k as f64,
        };
        let t = ArmEstimate {
            mean: mt.mu_s / mt.mu_n,
            var_of_mean: compute_h(&mt)?.value / mt.k as f64,
        };
        Ok(absolute_z_test(c, t, z_crit)?.significant)
    })
}

/// Rejection count for one clustered batch analyzed as if sessions were
/// independent (pooled two-proportion z-test on raw sessions). This is the
/// analysis an experimenter who ignores clustering end to end would run.
fn session_level_rejections(
    case: &ClusteredCase,
    k_per_arm: u64,
    reps: u64,
    hypothesis: Hypothesis,
    z_crit: f64,
    seed: u64,
) -> Result<u64> {
    let control = ArmSampler::new(case, case.p_x.value())?;
    let treatment_mean = match hypothesis {
        Hypothesis::Null => case.p_x.value(),
        Hypothesis::Alternative => case.p_x.value() + case.delta,
    };
    let treatment = ArmSampler::new(case, treatment_mean)?;
    let slot = treatment_slot(hypothesis);
    tally(reps, |rep| {
        let (n_c, s_c) =
            control.arm_totals(k_per_arm, &mut replicate_stream(seed, rep, SLOT_CONTROL))?;
        let (n_t, s_t) = treatment.arm_totals(k_per_arm, &mut replicate_stream(seed, rep, slot))?;
        let p_c = s_c as f64 / n_c as f64;
        let p_t = s_t as f64 / n_t as f64;
        let pooled = (s_c + s_t) as f64 / (n_c + n_t) as f64;
        let pooled_var = pooled * (1.0 - pooled);
        let test = absolute_z_test(
            ArmEstimate {
                mean: p_c,
                var_of_mean: pooled_var / n_c as f64,
            },
            ArmEstimate {
                mean: p_t,
                var_of_mean: pooled_var / n_t as f64,
            },
            z_crit,
        )?;
        Ok(test.significant)
    })
}

/// Run `reps` clustered replicates under each hypothesis with `k_per_arm`
/// users per arm, analyzed with the h/k variance, and tally type I error
/// and power.
pub fn run_clustered_suite(
    case: &ClusteredCase,
    k_per_arm: u64,
    reps: u64,
    design: &DesignParams,
    master_seed: u64,
    threads: usize,
) -> Result<SimulationReport> {
    check_reps(reps)?;
    if k_per_arm < 2 {
        return Err(Error::domain("need at least 2 users per arm".to_string()));
    }
    let z_crit = design.z_alpha();
    let seed = phase_seed(master_seed, PHASE_CLUSTERED);
    run_pool(threads, || {
        let null = clustered_rejections(case, k_per_arm, reps, Hypothesis::Null, z_crit, seed)?;
        let alt =
            clustered_rejections(case, k_per_arm, reps, Hypothesis::Alternative, z_crit, seed)?;
        Ok(report(
            "clustered",
            reps,
            k_per_arm,
            null,
            alt,
            design,
            master_seed,
        ))
    })
}

/// Outcome of the historical-data pass: estimated moments, the variance
/// kernel (exact and at reporting precision), and the resulting user count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalDesign {
    pub moments: ClusterMoments,
    pub h: f64,
    pub h_exact: f64,
    pub k_per_arm: u64,
}

/// Simulate the historical window once and size the experiment from it,
/// mirroring how a real design would consume logged data.
pub fn design_from_history(
    case: &ClusteredCase,
    design: &DesignParams,
    master_seed: u64,
) -> Result<HistoricalDesign> {
    let sampler = ArmSampler::new(case, case.p_x.value())?;
    let mut rng = RngStream::new(phase_seed(master_seed, PHASE_HISTORY), HISTORICAL_STREAM);
    let moments = sampler.arm_moments(case.k_hist, &mut rng)?;
    let h_exact = compute_h(&moments)?.value;
    let h = round_sig(h_exact, 3);
    let k_per_arm = size_clustered(h, case.delta, design)?.n_per_arm;
    Ok(HistoricalDesign {
        moments,
        h,
        h_exact,
        k_per_arm,
    })
}

/// Both under-sized designs that squeeze a clustered experiment into the
/// session count the independence formula prescribes.
///
/// Scenario (i) keeps sessions per user and cuts users to `n_iid/μ_N`; the
/// experimenter who sized in sessions also analyzes sessions, so the test is
/// the pooled two-proportion z-test, which ignores clustering. Scenario (ii)
/// keeps the properly sized user count but shortens the window (session
/// intensity scaled by `n_iid/(k·μ_N)`), analyzed correctly with h/k.
pub fn run_undersized_scenarios(
    case: &ClusteredCase,
    n_iid: u64,
    reps: u64,
    design: &DesignParams,
    master_seed: u64,
    threads: usize,
) -> Result<(SimulationReport, SimulationReport)> {
    check_reps(reps)?;
    if n_iid < 2 {
        return Err(Error::domain(
            "session budget must be at least 2".to_string(),
        ));
    }
    let hist = design_from_history(case, design, master_seed)?;
    let mu_n = hist.moments.mu_n;
    let k_delta = hist.k_per_arm;
    let z_crit = design.z_alpha();

    // Scenario (i): same per-user session profile, fewer users.
    let k_i = ((n_iid as f64 / mu_n).ceil() as u64).max(2);
    let seed_i = phase_seed(master_seed, PHASE_SCENARIO_I);
    let scenario_i = run_pool(threads, || {
        let null = session_level_rejections(case, k_i, reps, Hypothesis::Null, z_crit, seed_i)?;
        let alt =
            session_level_rejections(case, k_i, reps, Hypothesis::Alternative, z_crit, seed_i)?;
        Ok(report(
            "undersized_scenario_i",
            reps,
            k_i,
            null,
            alt,
            design,
            master_seed,
        ))
    })?;

    // Scenario (ii): designed user count, shorter window.
    let lambda_scaled = case.lambda * n_iid as f64 / (k_delta as f64 * mu_n);
    if !(lambda_scaled.is_finite() && lambda_scaled > 0.0) {
        return Err(Error::domain(format!(
            "scaled session intensity must be positive, got {lambda_scaled}"
        )));
    }
    let mut case_ii = *case;
    case_ii.lambda = lambda_scaled;
    let seed_ii = phase_seed(master_seed, PHASE_SCENARIO_II);
    let scenario_ii = run_pool(threads, || {
        let null =
            clustered_rejections(&case_ii, k_delta, reps, Hypothesis::Null, z_crit, seed_ii)?;
        let alt = clustered_rejections(
            &case_ii,
            k_delta,
            reps,
            Hypothesis::Alternative,
            z_crit,
            seed_ii,
        )?;
        Ok(report(
            "undersized_scenario_ii",
            reps,
            k_delta,
            null,
            alt,
            design,
            master_seed,
        ))
    })?;

    Ok((scenario_i, scenario_ii))
}

/// Baseline mean used inside the relative-lift standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// The control arm's own sample mean (the default in practice).
    #[default]
    Sample,
    /// The exact data-generating mean; only a simulation can know it.
    TrueMean,
    /// A fresh historical estimate of the given size, drawn per replicate.
    LargeSample { n: u64 },
}

struct RelativeSuite {
    n_per_arm: u64,
    p_x: f64,
    p_y: f64,
    delta_rel: f64,
    mean_mode: MeanMode,
    z_crit: f64,
}

impl RelativeSuite {
    fn rejections(&self, reps: u64, hypothesis: Hypothesis, seed: u64) -> Result<u64> {
        let n = self.n_per_arm;
        let nf = n as f64;
        let control = BinomialSampler::new(n, self.p_x)?;
        let treatment_p = match hypothesis {
            Hypothesis::Null => self.p_x,
            Hypothesis::Alternative => self.p_y,
        };
        let treatment = BinomialSampler::new(n, treatment_p)?;
        let hist = match self.mean_mode {
            MeanMode::LargeSample { n: hist_n } => {
                Some((BinomialSampler::new(hist_n, self.p_x)?, hist_n))
            }
            _ => None,
        };
        let slot = treatment_slot(hypothesis);
        tally(reps, |rep| {
            let x = control.sample(&mut replicate_stream(seed, rep, SLOT_CONTROL)) as f64 / nf;
            let y = treatment.sample(&mut replicate_stream(seed, rep, slot)) as f64 / nf;
            // Unbiased Bernoulli sample variances, divided by n for the mean.
            let var_x = x * (1.0 - x) / (nf - 1.0);
            let var_y = y * (1.0 - y) / (nf - 1.0);
            let baseline = match self.mean_mode {
                MeanMode::Sample => x,
                MeanMode::TrueMean => self.p_x,
                MeanMode::LargeSample { .. } => {
                    let (sampler, hist_n) = hist.as_ref().expect("hist sampler present");
                    sampler.sample(&mut replicate_stream(seed, rep, SLOT_AUX)) as f64
                        / *hist_n as f64
                }
            };
            let test = relative_z_test(
                ArmEstimate {
                    mean: x,
                    var_of_mean: var_x,
                },
                ArmEstimate {
                    mean: y,
                    var_of_mean: var_y,
                },
                baseline,
                self.z_crit,
            )?;
            Ok(test.significant)
        })
    }
}

/// Relative-lift suite sized with the relative-lift formula: draws binomial
/// arms, tests `|δ̂_rel / se(δ̂_rel)| > z`, and tallies both hypotheses.
pub fn run_relative_iid_suite(
    p_x: Probability,
    delta_rel: f64,
    reps: u64,
    mean_mode: MeanMode,
    design: &DesignParams,
    master_seed: u64,
    threads: usize,
) -> Result<SimulationReport> {
    check_reps(reps)?;
    let sizing = size_relative_iid_binary(p_x, delta_rel, design)?;
    let suite = RelativeSuite {
        n_per_arm: sizing.n_per_arm,
        p_x: p_x.value(),
        p_y: (1.0 + delta_rel) * p_x.value(),
        delta_rel,
        mean_mode,
        z_crit: design.z_alpha(),
    };
    let seed = phase_seed(master_seed, PHASE_RELATIVE);
    let tag = format!(
        "relative_iid(p_x={}, delta_rel={}, mode={:?})",
        suite.p_x, suite.delta_rel, mean_mode
    );
    run_pool(threads, || {
        let null = suite.rejections(reps, Hypothesis::Null, seed)?;
        let alt = suite.rejections(reps, Hypothesis::Alternative, seed)?;
        Ok(report(
            tag,
            reps,
            suite.n_per_arm,
            null,
            alt,
            design,
            master_seed,
        ))
    })
}

/// Same relative-lift test, but under-sized with the absolute-lift formula
/// at the matched lift δ = δ_rel·p_x.
pub fn run_absolute_sized_relative_suite(
    p_x: Probability,
    delta_rel: f64,
    reps: u64,
    design: &DesignParams,
    master_seed: u64,
    threads: usize,
) -> Result<SimulationReport> {
    check_reps(reps)?;
    let delta_abs = delta_rel * p_x.value();
    let sizing = size_iid_binary(p_x, delta_abs, design)?;
    let suite = RelativeSuite {
        n_per_arm: sizing.n_per_arm,
        p_x: p_x.value(),
        p_y: (1.0 + delta_rel) * p_x.value(),
        delta_rel,
        mean_mode: MeanMode::Sample,
        z_crit: design.z_alpha(),
    };
    let seed = phase_seed(master_seed, PHASE_RELATIVE_ABS);
    let tag = format!(
        "relative_iid_absolute_sized(p_x={}, delta_rel={})",
        suite.p_x, suite.delta_rel
    );
    run_pool(threads, || {
        let null = suite.rejections(reps, Hypothesis::Null, seed)?;
        let alt = suite.rejections(reps, Hypothesis::Alternative, seed)?;
        Ok(report(
            tag,
            reps,
            suite.n_per_arm,
            null,
            alt,
            design,
            master_seed,
        ))
    })
}

/// One replicate's observed lift and its significance flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftObservation {
    pub lift: f64,
    pub significant: bool,
}

/// All observed lifts of a correctly powered experiment, for studying how
/// far below the powered lift significance still occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModHistogram {
    pub p_x: f64,
    pub ate: f64,
    pub n_per_arm: u64,
    pub reps: u64,
    pub master_seed: u64,
    /// Smallest positive observed lift that reached significance.
    pub min_significant_lift: f64,
    pub observed_lifts: Vec<LiftObservation>,
}

/// Power an experiment for `ate`, run it under the alternative `reps` times,
/// and record every observed lift with its significance flag.
pub fn run_mod_experiment(
    p_x: Probability,
    ate: f64,
    reps: u64,
    design: &DesignParams,
    master_seed: u64,
    threads: usize,
) -> Result<ModHistogram> {
    check_reps(reps)?;
    if ate == 0.0 {
        return Err(Error::domain(
            "a null experiment has no minimum significant lift to find".to_string(),
        ));
    }
    let sizing = size_iid_binary(p_x, ate, design)?;
    let n = sizing.n_per_arm;
    let nf = n as f64;
    let p_y = p_x.value() + ate;
    let control = BinomialSampler::new(n, p_x.value())?;
    let treatment = BinomialSampler::new(n, p_y)?;
    let z_crit = design.z_alpha();
    let seed = phase_seed(master_seed, PHASE_MOD);

    let observed: Vec<LiftObservation> = run_pool(threads, || {
        (0..reps)
            .into_par_iter()
            .map(|rep| -> Result<LiftObservation> {
                let x = control.sample(&mut replicate_stream(seed, rep, SLOT_CONTROL)) as f64 / nf;
                let y =
                    treatment.sample(&mut replicate_stream(seed, rep, SLOT_TREATMENT)) as f64 / nf;
                let test = absolute_z_test(
                    ArmEstimate {
                        mean: x,
                        var_of_mean: x * (1.0 - x) / (nf - 1.0),
                    },
                    ArmEstimate {
                        mean: y,
                        var_of_mean: y * (1.0 - y) / (nf - 1.0),
                    },
                    z_crit,
                )?;
                Ok(LiftObservation {
                    lift: test.estimate,
                    significant: test.significant,
                })
            })
            .collect()
    })?;

    let min_significant_lift = observed
        .iter()
        .filter(|o| o.significant && o.lift > 0.0)
        .map(|o| o.lift)
        .fold(f64::INFINITY, f64::min);
    if !min_significant_lift.is_finite() {
        return Err(Error::InsufficientData(
            "no replicate produced a significant positive lift".to_string(),
        ));
    }

    Ok(ModHistogram {
        p_x: p_x.value(),
        ate,
        n_per_arm: n,
        reps,
        master_seed,
        min_significant_lift,
        observed_lifts: observed,
    })
}
