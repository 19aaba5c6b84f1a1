//! Monte-Carlo experiment driver: FER estimation, threshold searches and
//! parameter sweeps with CSV and JSON output.
//!
//! Every session seed is derived from `(seed, n)` only, so all points with
//! the same block length share raw keys, info bits and channel uniforms
//! (common random numbers). Comparisons across `K`, `p` or the
//! reliability-sequence kind are therefore paired, and a BSC error pattern
//! at a larger `p` contains the pattern at a smaller `p` trial by trial.
//! Trial `t` of a point always uses nonce `t`, so results do not depend on
//! the number of worker threads.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{derive_rng, QberMode};
use crate::construct::{
    reliability_sequence, select_frozen, ChannelKind, ChannelParams, PolarCodeSpec, MAX_LOG2_N,
};
use crate::error::{out_of_range, Error, Result};
use crate::protocol::{Mode, ProtocolConfig, Session};
use crate::secrecy::{
    h2, infinite_key_rate, mu, secrecy_content_gamma, secret_key_length, SecrecyBudget,
    DEFAULT_EPS_COR, DEFAULT_EPS_SEC,
};

const STREAM_POINT: u64 = 0x5EED;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Returns `NaN`
/// when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Session seed shared by every point with block length `2^n`.
pub fn point_seed(seed: u64, n: u32) -> u64 {
    derive_rng(seed, STREAM_POINT, n as u64).next_u64()
}

/// How each Monte-Carlo point is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialPlan {
    pub trials: u64,
    pub seed: u64,
    pub rs_kind: ChannelKind,
    /// Reliability-sequence design parameter; `None` designs for the
    /// channel's own `p`.
    pub design_p: Option<f64>,
    pub mode: Mode,
    pub eps_cor: f64,
    pub eps_sec: f64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for TrialPlan {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            rs_kind: ChannelKind::Bsc,
            design_p: None,
            mode: Mode::Full,
            eps_cor: DEFAULT_EPS_COR,
            eps_sec: DEFAULT_EPS_SEC,
            threads: None,
        }
    }
}

impl TrialPlan {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(out_of_range("trials", 0.0, ">= 1"));
        }
        if self.threads == Some(0) {
            return Err(out_of_range("threads", 0.0, ">= 1"));
        }
        Ok(())
    }

    fn protocol_config(&self, n: u32, k: usize, p: f64) -> ProtocolConfig {
        ProtocolConfig {
            rs_kind: self.rs_kind,
            design_p: self.design_p,
            eps_cor: self.eps_cor,
            eps_sec: self.eps_sec,
            estimation_bits: Some(0),
            qber_mode: QberMode::Exact,
            amplify: false,
            ..ProtocolConfig::new(n, k, p, self.mode, point_seed(self.seed, n))
        }
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            None => Ok(f()),
            Some(t) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::InvalidSequence(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

/// One Monte-Carlo point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: u32,
    #[serde(rename = "N")]
    pub big_n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub rate: f64,
    pub p: f64,
    pub rs_kind: ChannelKind,
    pub trials: u64,
    /// Sessions where Bob's key differs from Alice's.
    pub failures: u64,
    pub fer: f64,
    pub fer_ci_low: f64,
    pub fer_ci_high: f64,
    pub beta: f64,
    pub avg_yield: f64,
    pub gamma: f64,
    pub ell: usize,
    pub rate_secret: f64,
    /// Sessions Bob rejected on the verification tag.
    pub rejected: u64,
    /// Sessions Bob accepted although his key was wrong.
    pub false_accepts: u64,
    /// Set when the point could not be evaluated.
    pub error: Option<String>,
}

impl ResultRow {
    /// Fills every derived column from the raw counts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_counts(
        n: u32,
        k: usize,
        p: f64,
        rs_kind: ChannelKind,
        trials: u64,
        failures: u64,
        rejected: u64,
        false_accepts: u64,
        eps: (f64, f64),
    ) -> Self {
        let big_n = 1usize << n;
        let rate = k as f64 / big_n as f64;
        let fer = failures as f64 / trials as f64;
        let (fer_ci_low, fer_ci_high) = wilson_interval(failures, trials, Z_95);
        let budget = SecrecyBudget {
            eps_cor: eps.0,
            ..SecrecyBudget::with_defaults(big_n, k, p).with_eps_sec(eps.1)
        };
        let ell = secret_key_length(&budget);
        Self {
            n,
            big_n,
            k,
            rate,
            p,
            rs_kind,
            trials,
            failures,
            fer,
            fer_ci_low,
            fer_ci_high,
            beta: rate / (1.0 - h2(p)),
            avg_yield: (1.0 - fer) * rate,
            gamma: secrecy_content_gamma(k, big_n, fer, p),
            ell,
            rate_secret: ell as f64 / big_n as f64,
            rejected,
            false_accepts,
            error: None,
        }
    }

    fn failed(n: u32, k: usize, p: f64, rs_kind: ChannelKind, err: &Error) -> Self {
        Self {
            n,
            big_n: 1usize.checked_shl(n).unwrap_or(0),
            k,
            rate: f64::NAN,
            p,
            rs_kind,
            trials: 0,
            failures: 0,
            fer: f64::NAN,
            fer_ci_low: f64::NAN,
            fer_ci_high: f64::NAN,
            beta: f64::NAN,
            avg_yield: f64::NAN,
            gamma: f64::NAN,
            ell: 0,
            rate_secret: f64::NAN,
            rejected: 0,
            false_accepts: 0,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    failures: u64,
    rejected: u64,
    false_accepts: u64,
}

impl std::ops::Add for Counts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            failures: self.failures + o.failures,
            rejected: self.rejected + o.rejected,
            false_accepts: self.false_accepts + o.false_accepts,
        }
    }
}

fn count_trials(session: &Session, plan: &TrialPlan) -> Result<Counts> {
    plan.install(|| {
        (0..plan.trials)
            .into_par_iter()
            .map(|t| {
                let out = session.run(t)?;
                Ok(Counts {
                    failures: (!out.agreed) as u64,
                    rejected: (!out.verified) as u64,
                    false_accepts: (out.verified && !out.agreed) as u64,
                })
            })
            .try_reduce(Counts::default, |a, b| Ok(a + b))
    })?
}

/// Builds the code that `plan` would use at `(n, K, p)`.
pub fn build_code(n: u32, k: usize, p: f64, plan: &TrialPlan) -> Result<PolarCodeSpec> {
    let design = ChannelParams::new(plan.rs_kind, plan.design_p.unwrap_or(p))?;
    select_frozen(&reliability_sequence(design, n)?, k)
}

fn estimate_with_spec(
    n: u32,
    k: usize,
    p: f64,
    plan: &TrialPlan,
    spec: Arc<PolarCodeSpec>,
) -> Result<ResultRow> {
    let session = Session::with_spec(plan.protocol_config(n, k, p), spec)?;
    let c = count_trials(&session, plan)?;
    Ok(ResultRow::from_counts(
        n,
        k,
        p,
        plan.rs_kind,
        plan.trials,
        c.failures,
        c.rejected,
        c.false_accepts,
        (plan.eps_cor, plan.eps_sec),
    ))
}

/// Runs `plan.trials` truth-compared sessions at `(n, K, p)`.
pub fn estimate_fer(n: u32, k: usize, p: f64, plan: &TrialPlan) -> Result<ResultRow> {
    plan.validate()?;
    ChannelParams::bsc(p)?;
    let spec = Arc::new(build_code(n, k, p, plan)?);
    estimate_with_spec(n, k, p, plan, spec)
}

/// Outcome of a threshold search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Best value meeting the FER bound, or 0 when none does.
    pub value: f64,
    /// Whether any evaluated point met the bound.
    pub found: bool,
    /// Every evaluated `(parameter, fer)` pair in parameter order.
    pub evaluations: Vec<(f64, f64)>,
    /// Adjacent evaluated pairs where FER decreased as the parameter grew.
    pub monotonicity_violations: usize,
}

fn count_violations(evals: &mut [(f64, f64)], what: &str) -> usize {
    evals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let bad = evals.windows(2).filter(|w| w[1].1 < w[0].1).count();
    if bad > 0 {
        log::warn!("FER not monotone in {what} on {bad} evaluated pair(s): {evals:?}");
    }
    bad
}

/// Largest `i` in `0..=hi` with `ok(i)`, assuming `ok` is monotone
/// decreasing. `ok(0)` must already be known to hold.
fn bisect_last_ok(hi: u64, mut ok: impl FnMut(u64) -> Result<bool>) -> Result<u64> {
    if ok(hi)? {
        return Ok(hi);
    }
    let (mut good, mut bad) = (0u64, hi);
    while bad - good > 1 {
        let mid = good + (bad - good) / 2;
        if ok(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

/// Largest QBER in `[p_lo, p_hi]` (on a grid of step `resolution`) whose
/// FER at `(n, K)` is at most `max_fer`. The code is redesigned for each
/// probed `p` unless `plan.design_p` pins it.
pub fn max_qber_at_rate(
    n: u32,
    k: usize,
    max_fer: f64,
    range: (f64, f64),
    resolution: f64,
    plan: &TrialPlan,
) -> Result<SearchResult> {
    plan.validate()?;
    let (lo, hi) = range;
    if !(0.0 < lo && lo <= hi && hi < 0.5) {
        return Err(out_of_range("p range", lo, "0 < lo <= hi < 0.5"));
    }
    if !(max_fer > 0.0 && max_fer <= 1.0) {
        return Err(out_of_range("max_fer", max_fer, "0 < max_fer <= 1"));
    }
    if resolution.is_nan() || resolution <= 0.0 {
        return Err(out_of_range("resolution", resolution, "> 0"));
    }
    if max_fer >= 1.0 {
        return Ok(SearchResult {
            value: hi,
            found: true,
            evaluations: Vec::new(),
            monotonicity_violations: 0,
        });
    }
    let steps = ((hi - lo) / resolution + 1e-9).floor() as u64;
    let grid = |i: u64| {
        if i == steps {
            hi
        } else {
            lo + i as f64 * resolution
        }
    };
    let mut evals = Vec::new();
    let mut probe = |i: u64| -> Result<bool> {
        let p = grid(i);
        let fer = estimate_fer(n, k, p, plan)?.fer;
        evals.push((p, fer));
        Ok(fer <= max_fer)
    };
    let result = if !probe(0)? {
        None
    } else {
        Some(bisect_last_ok(steps, &mut probe)?)
    };
    let violations = count_violations(&mut evals, "p");
    Ok(match result {
        Some(i) => SearchResult {
            value: grid(i),
            found: true,
            evaluations: evals,
            monotonicity_violations: violations,
        },
        None => SearchResult {
            value: 0.0,
            found: false,
            evaluations: evals,
            monotonicity_violations: violations,
        },
    })
}

/// Largest `K` on a grid of step `k_step` whose FER at `(n, p)` is at most
/// `max_fer`; the search value is reported as the rate `K/N`.
pub fn max_rate_at_qber(
    n: u32,
    p: f64,
    max_fer: f64,
    k_step: usize,
    plan: &TrialPlan,
) -> Result<SearchResult> {
    plan.validate()?;
    ChannelParams::bsc(p)?;
    if n == 0 || n > MAX_LOG2_N {
        return Err(out_of_range("n", n as f64, "1 <= n <= 20"));
    }
    if !(max_fer > 0.0 && max_fer <= 1.0) {
        return Err(out_of_range("max_fer", max_fer, "0 < max_fer <= 1"));
    }
    let big_n = 1usize << n;
    if k_step == 0 || k_step > big_n {
        return Err(out_of_range("k_step", k_step as f64, "1 <= k_step <= N"));
    }
    let design = ChannelParams::new(plan.rs_kind, plan.design_p.unwrap_or(p))?;
    let profile = reliability_sequence(design, n)?;
    let steps = (big_n / k_step) as u64;
    let mut evals = Vec::new();
    let best = bisect_last_ok(steps, |i| {
        let k = i as usize * k_step;
        if k == 0 {
            return Ok(true);
        }
        let spec = Arc::new(select_frozen(&profile, k)?);
        let fer = estimate_with_spec(n, k, p, plan, spec)?.fer;
        evals.push((k as f64 / big_n as f64, fer));
        Ok(fer <= max_fer)
    })?;
    let violations = count_violations(&mut evals, "K");
    Ok(SearchResult {
        value: (best as usize * k_step) as f64 / big_n as f64,
        found: true,
        evaluations: evals,
        monotonicity_violations: violations,
    })
}

/// Grid sweep description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub ns: Vec<u32>,
    /// Code rates `K/N`; `K = round(rate · N)`.
    pub rates: Vec<f64>,
    pub ps: Vec<f64>,
    pub max_fer: f64,
    #[serde(flatten)]
    pub plan: TrialPlan,
    pub output: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ns: vec![10],
            rates: vec![0.5],
            ps: vec![0.02],
            max_fer: 0.05,
            plan: TrialPlan::default(),
            output: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.ns.is_empty() || self.rates.is_empty() || self.ps.is_empty() {
            return Err(out_of_range(
                "grid size",
                0.0,
                "non-empty n, rate and p grids",
            ));
        }
        if !(self.max_fer > 0.0 && self.max_fer < 1.0) {
            return Err(out_of_range("max_fer", self.max_fer, "0 < max_fer < 1"));
        }
        Ok(())
    }
}

/// Rows of a finished sweep plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub rows: Vec<ResultRow>,
    pub manifest: Manifest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub ns: Vec<u32>,
    pub rates: Vec<f64>,
    pub ps: Vec<f64>,
    pub trials: u64,
    pub rs_kind: ChannelKind,
    pub git_describe: String,
    pub wall_clock_secs: f64,
    pub failed_rows: usize,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Evaluates every `(n, rate, p)` grid point in that nesting order. A point
/// that cannot be evaluated produces a row with `error` set.
pub fn sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rows = Vec::new();
    for &n in &cfg.ns {
        for &rate in &cfg.rates {
            let big_n = 1usize.checked_shl(n).unwrap_or(0);
            let k = (rate * big_n as f64).round() as usize;
            for &p in &cfg.ps {
                let row = if rate.is_finite() && (0.0..=1.0).contains(&rate) {
                    estimate_fer(n, k, p, &cfg.plan)
                } else {
                    Err(out_of_range("rate", rate, "[0, 1]"))
                };
                rows.push(row.unwrap_or_else(|e| ResultRow::failed(n, k, p, cfg.plan.rs_kind, &e)));
            }
        }
    }
    let manifest = Manifest {
        seed: cfg.plan.seed,
        ns: cfg.ns.clone(),
        rates: cfg.rates.clone(),
        ps: cfg.ps.clone(),
        trials: cfg.plan.trials,
        rs_kind: cfg.plan.rs_kind,
        git_describe: git_describe(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        failed_rows: rows.iter().filter(|r| r.error.is_some()).count(),
    };
    Ok(SweepResult {
        config: cfg.clone(),
        rows,
        manifest,
    })
}

/// Writes serializable rows as CSV with a header in field order.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Decode(format!("csv: {other:?}")),
    }
}

impl SweepResult {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_csv(&self.rows, &mut buf)?;
        Ok(buf)
    }

    /// Writes `<stem>.csv` and `<stem>.json` (rows plus manifest) into
    /// `dir` and returns both paths.
    pub fn write_to_dir(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&csv_path, self.to_csv()?)?;
        std::fs::write(&json_path, serde_json::to_vec_pretty(self)?)?;
        Ok((csv_path, json_path))
    }
}

/// One line of the finite-key table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateRow {
    #[serde(rename = "N")]
    pub big_n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub qber: f64,
    pub mu: f64,
    pub ell: usize,
    /// `ell / N`.
    pub rate: f64,
    /// Secrecy content at FER 0.
    pub gamma: f64,
    pub r_infinity: f64,
}

/// Finite-key rows for every `(N, K, qber)` combination; `template`
/// supplies ε's, `q` and the log base, and `e = ⌊N/3⌋` unless
/// `estimation_bits` overrides it.
pub fn keyrate_table(
    ns: &[u32],
    rates: &[f64],
    qbers: &[f64],
    template: &SecrecyBudget,
    estimation_bits: Option<usize>,
) -> Result<Vec<KeyRateRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        if n == 0 || n > MAX_LOG2_N {
            return Err(out_of_range("n", n as f64, "1 <= n <= 20"));
        }
        let big_n = 1usize << n;
        for &rate in rates {
            if !(0.0..=1.0).contains(&rate) {
                return Err(out_of_range("rate", rate, "[0, 1]"));
            }
            let k = (rate * big_n as f64).round() as usize;
            for &qber in qbers {
                let budget = SecrecyBudget {
                    n: big_n,
                    k,
                    qber,
                    e: estimation_bits.unwrap_or(big_n / 3),
                    ..*template
                };
                budget.validate()?;
                let ell = secret_key_length(&budget);
                rows.push(KeyRateRow {
                    big_n,
                    k,
                    qber,
                    mu: mu(&budget),
                    ell,
                    rate: ell as f64 / big_n as f64,
                    gamma: secrecy_content_gamma(k, big_n, 0.0, qber),
                    r_infinity: infinite_key_rate(qber),
                });
            }
        }
    }
    Ok(rows)
}
