use std::fs;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use polarqkd::bits::{BitEnvelope, TextEncoding};
use polarqkd::codec::{channel_llr, encode, extract_info, sc_decode_with, CheckNode};
use polarqkd::construct::{
    read_order, reliability_sequence, rs_overlap, select_frozen, ChannelKind, ChannelParams,
};
use polarqkd::harness::{
    estimate_fer, keyrate_table, max_qber_at_rate, sweep, write_csv, SweepConfig,
};
use polarqkd::protocol::{Loopback, Mode, ProtocolConfig, Session};
use polarqkd::secrecy::{LogBase, SecrecyBudget};
use polarqkd::{QberMode, ReliabilityProfile};

/// Default directory for sweep artifacts when neither a flag nor the config
/// names one.
const OUT_DIR_ENV: &str = "POLARQKD_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "polarqkd",
    version,
    about = "Polar-code reconciliation for QKD"
)]
struct Cli {
    /// TOML or JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print warnings and progress (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reliability sequences.
    #[command(subcommand)]
    Rs(RsCommand),
    /// Encode information bits into a codeword.
    Encode(EncodeArgs),
    /// SC-decode a received word.
    Decode(DecodeArgs),
    /// Monte-Carlo simulation.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Evaluate an (n, rate, p) grid and write CSV and JSON artifacts.
    Sweep(SweepArgs),
    /// Largest QBER meeting the FER bound at a fixed rate.
    MaxQber(MaxQberArgs),
    /// Finite-key secret lengths as CSV.
    Keyrate(KeyrateArgs),
    /// Reconciliation sessions.
    #[command(subcommand)]
    Protocol(ProtocolCommand),
}

#[derive(Subcommand)]
enum RsCommand {
    /// Build a reliability profile.
    Generate(RsGenerateArgs),
    /// Compare a profile's worst positions with a reference sequence.
    Overlap(RsOverlapArgs),
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Estimate the frame error rate at one point.
    Fer(FerArgs),
}

#[derive(Subcommand)]
enum ProtocolCommand {
    /// Run one end-to-end session.
    Run(ProtocolRunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Bsc,
    Bec,
}

impl From<Kind> for ChannelKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Bsc => ChannelKind::Bsc,
            Kind::Bec => ChannelKind::Bec,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    NakassisMink,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::NakassisMink => Mode::NakassisMink,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    Hex,
    Base64,
}

impl From<Encoding> for TextEncoding {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Hex => TextEncoding::Hex,
            Encoding::Base64 => TextEncoding::Base64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RsGenerateArgs {
    #[arg(long, value_enum, default_value = "bsc")]
    kind: Kind,
    /// Crossover (BSC) or erasure (BEC) probability.
    #[arg(long)]
    p: f64,
    /// log2 of the block length.
    #[arg(long)]
    n: u32,
    /// Profile JSON path (stdout when neither output is given).
    #[arg(long)]
    out: Option<PathBuf>,
    /// One-index-per-line order file.
    #[arg(long)]
    order_out: Option<PathBuf>,
}

#[derive(Args)]
struct RsOverlapArgs {
    /// Profile JSON.
    #[arg(long)]
    profile: PathBuf,
    /// Reference sequence, one index per line, most reliable first.
    #[arg(long)]
    reference: PathBuf,
    /// Frozen fractions to compare at.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])]
    fraction: Vec<f64>,
}

#[derive(Args)]
struct CodeArgs {
    /// Profile JSON that defines the code.
    #[arg(long)]
    profile: PathBuf,
    /// Information bits.
    #[arg(long)]
    k: usize,
    /// Bit envelope JSON (`-` for stdin).
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long, value_enum, default_value = "hex")]
    encoding: Encoding,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    code: CodeArgs,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// BSC crossover for the decoder LLRs (defaults to a BSC profile's p).
    #[arg(long)]
    p: Option<f64>,
    /// Use the min-sum check node instead of the exact rule.
    #[arg(long)]
    min_sum: bool,
}

/// Overrides for the trial plan of a run configuration.
#[derive(Args, Default)]
struct PlanArgs {
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    rs_kind: Option<Kind>,
    /// Reliability-sequence design parameter (defaults to each point's p).
    #[arg(long)]
    design_p: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    eps_cor: Option<f64>,
    #[arg(long)]
    eps_sec: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct PointArgs {
    #[arg(long)]
    n: Option<u32>,
    /// Information bits (overrides --rate).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args)]
struct FerArgs {
    #[command(flatten)]
    point: PointArgs,
    #[arg(long)]
    p: Option<f64>,
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    rate: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    #[arg(long)]
    max_fer: Option<f64>,
    #[command(flatten)]
    plan: PlanArgs,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// File stem for the CSV and JSON artifacts.
    #[arg(long, default_value = "sweep")]
    name: String,
}

#[derive(Args)]
struct MaxQberArgs {
    #[command(flatten)]
    point: PointArgs,
    #[arg(long)]
    max_fer: Option<f64>,
    #[arg(long, default_value_t = 0.001)]
    p_lo: f64,
    #[arg(long, default_value_t = 0.2)]
    p_hi: f64,
    #[arg(long, default_value_t = 0.001)]
    resolution: f64,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args)]
struct KeyrateArgs {
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    rate: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    qber: Option<Vec<f64>>,
    #[arg(long)]
    eps_cor: Option<f64>,
    #[arg(long)]
    eps_sec: Option<f64>,
    /// Source quality factor q.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Estimation sample size (defaults to N/3).
    #[arg(long)]
    e: Option<usize>,
    /// Use natural logarithms in the bound.
    #[arg(long)]
    natural_log: bool,
    /// CSV path (stdout by default).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProtocolRunArgs {
    #[command(flatten)]
    point: PointArgs,
    #[arg(long)]
    p: Option<f64>,
    #[command(flatten)]
    plan: PlanArgs,
    /// Trial index (nonce on every seeded stream).
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Parameter-estimation bits (defaults to N/3 in full mode).
    #[arg(long)]
    estimation_bits: Option<usize>,
    /// Use the estimated QBER for the key length.
    #[arg(long)]
    estimated_qber: bool,
    /// Skip privacy amplification.
    #[arg(long)]
    no_amplify: bool,
    /// Write the sent frames here, back to back.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<SweepConfig> {
    let Some(path) = path else {
        return Ok(SweepConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        _ => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    };
    Ok(cfg)
}

fn apply_plan(cfg: &mut SweepConfig, a: &PlanArgs) {
    let plan = &mut cfg.plan;
    if let Some(v) = a.trials {
        plan.trials = v;
    }
    if let Some(v) = a.seed {
        plan.seed = v;
    }
    if let Some(v) = a.rs_kind {
        plan.rs_kind = v.into();
    }
    if a.design_p.is_some() {
        plan.design_p = a.design_p;
    }
    if let Some(v) = a.mode {
        plan.mode = v.into();
    }
    if let Some(v) = a.eps_cor {
        plan.eps_cor = v;
    }
    if let Some(v) = a.eps_sec {
        plan.eps_sec = v;
    }
    if a.threads.is_some() {
        plan.threads = a.threads;
    }
}

fn first<T: Copy>(v: &[T], what: &str) -> Result<T> {
    v.first()
        .copied()
        .with_context(|| format!("no {what} given"))
}

/// Resolves `(n, K)` from flags, falling back to the config's first grid values.
fn resolve_point(cfg: &SweepConfig, a: &PointArgs) -> Result<(u32, usize)> {
    let n = match a.n {
        Some(n) => n,
        None => first(&cfg.ns, "n")?,
    };
    if n == 0 || n > polarqkd::construct::MAX_LOG2_N {
        bail!("n must be in 1..=20, got {n}");
    }
    let big_n = 1usize << n;
    let k = match (a.k, a.rate) {
        (Some(k), _) => k,
        (None, Some(r)) => (r * big_n as f64).round() as usize,
        (None, None) => (first(&cfg.rates, "rate")? * big_n as f64).round() as usize,
    };
    Ok((n, k))
}

fn read_input(spec: &str) -> Result<String> {
    let mut s = String::new();
    if spec == "-" {
        io::stdin().read_to_string(&mut s)?;
    } else {
        s = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    }
    Ok(s)
}

fn load_profile(path: &Path) -> Result<ReliabilityProfile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ReliabilityProfile::from_json(&text)?)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn rs_generate(a: &RsGenerateArgs) -> Result<()> {
    let profile = reliability_sequence(ChannelParams::new(a.kind.into(), a.p)?, a.n)?;
    if let Some(path) = &a.out {
        fs::write(path, profile.to_json()?)?;
    }
    if let Some(path) = &a.order_out {
        profile.write_order(io::BufWriter::new(fs::File::create(path)?))?;
    }
    if a.out.is_none() && a.order_out.is_none() {
        println!("{}", profile.to_json()?);
    }
    Ok(())
}

fn rs_overlap_cmd(a: &RsOverlapArgs) -> Result<()> {
    let profile = load_profile(&a.profile)?;
    let reference = read_order(BufReader::new(fs::File::open(&a.reference)?))?;
    println!("fraction,overlap");
    for &f in &a.fraction {
        println!("{f},{}", rs_overlap(&profile, &reference, f)?);
    }
    Ok(())
}

fn code_from(a: &CodeArgs) -> Result<polarqkd::PolarCodeSpec> {
    Ok(select_frozen(&load_profile(&a.profile)?, a.k)?)
}

fn encode_cmd(a: &EncodeArgs) -> Result<()> {
    let spec = code_from(&a.code)?;
    let env: BitEnvelope = serde_json::from_str(&read_input(&a.code.input)?)?;
    let u = polarqkd::codec::assemble_message(&env.unwrap()?, &spec)?;
    let x = encode(&u, &spec)?;
    print_json(&BitEnvelope::wrap(&x, a.code.encoding.into()))
}

fn decode_cmd(a: &DecodeArgs) -> Result<()> {
    let profile = load_profile(&a.code.profile)?;
    let spec = select_frozen(&profile, a.code.k)?;
    let p = match (a.p, profile.kind) {
        (Some(p), _) => p,
        (None, ChannelKind::Bsc) => profile.p,
        (None, ChannelKind::Bec) => bail!("--p is required for a BEC-designed profile"),
    };
    let env: BitEnvelope = serde_json::from_str(&read_input(&a.code.input)?)?;
    let soft = channel_llr(&env.unwrap()?, ChannelParams::bsc(p)?)?;
    let rule = if a.min_sum {
        CheckNode::MinSum
    } else {
        CheckNode::Exact
    };
    let u = sc_decode_with(&soft, &spec, rule)?;
    let enc = a.code.encoding.into();
    print_json(&serde_json::json!({
        "u": BitEnvelope::wrap(&u, enc),
        "info": BitEnvelope::wrap(&extract_info(&u, &spec)?, enc),
    }))
}

fn fer_cmd(mut cfg: SweepConfig, a: &FerArgs) -> Result<()> {
    apply_plan(&mut cfg, &a.plan);
    let (n, k) = resolve_point(&cfg, &a.point)?;
    let p = match a.p {
        Some(p) => p,
        None => first(&cfg.ps, "p")?,
    };
    let row = estimate_fer(n, k, p, &cfg.plan)?;
    match a.format {
        Format::Csv => write_csv(&[row], io::stdout().lock())?,
        Format::Json => print_json(&row)?,
    }
    Ok(())
}

fn out_dir(flag: Option<&Path>, cfg: &SweepConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn sweep_cmd(mut cfg: SweepConfig, a: &SweepArgs) -> Result<()> {
    apply_plan(&mut cfg, &a.plan);
    if let Some(v) = &a.n {
        cfg.ns = v.clone();
    }
    if let Some(v) = &a.rate {
        cfg.rates = v.clone();
    }
    if let Some(v) = &a.p {
        cfg.ps = v.clone();
    }
    if let Some(v) = a.max_fer {
        cfg.max_fer = v;
    }
    let dir = out_dir(a.out_dir.as_deref(), &cfg);
    let result = sweep(&cfg)?;
    let (csv, json) = result.write_to_dir(&dir, &a.name)?;
    if result.manifest.failed_rows > 0 {
        log::warn!(
            "{} grid point(s) failed; see the error column",
            result.manifest.failed_rows
        );
    }
    println!("{}", csv.display());
    println!("{}", json.display());
    Ok(())
}

fn max_qber_cmd(mut cfg: SweepConfig, a: &MaxQberArgs) -> Result<()> {
    apply_plan(&mut cfg, &a.plan);
    let (n, k) = resolve_point(&cfg, &a.point)?;
    let max_fer = a.max_fer.unwrap_or(cfg.max_fer);
    let res = max_qber_at_rate(n, k, max_fer, (a.p_lo, a.p_hi), a.resolution, &cfg.plan)?;
    if !res.found {
        log::warn!("no p in [{}, {}] meets FER <= {max_fer}", a.p_lo, a.p_hi);
    }
    print_json(&serde_json::json!({
        "n": n,
        "N": 1usize << n,
        "K": k,
        "max_fer": max_fer,
        "max_qber": res.value,
        "found": res.found,
        "monotonicity_violations": res.monotonicity_violations,
        "evaluations": res.evaluations,
    }))
}

fn keyrate_cmd(cfg: SweepConfig, a: &KeyrateArgs) -> Result<()> {
    let ns = a.n.clone().unwrap_or(cfg.ns);
    let rates = a.rate.clone().unwrap_or(cfg.rates);
    let qbers = a.qber.clone().unwrap_or(cfg.ps);
    let template = SecrecyBudget {
        eps_cor: a.eps_cor.unwrap_or(cfg.plan.eps_cor),
        q: a.q,
        log_base: if a.natural_log {
            LogBase::E
        } else {
            LogBase::Two
        },
        ..SecrecyBudget::with_defaults(1, 0, 0.0)
            .with_eps_sec(a.eps_sec.unwrap_or(cfg.plan.eps_sec))
    };
    let rows = keyrate_table(&ns, &rates, &qbers, &template, a.e)?;
    match &a.out {
        Some(path) => write_csv(&rows, fs::File::create(path)?)?,
        None => write_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn protocol_cmd(mut cfg: SweepConfig, a: &ProtocolRunArgs) -> Result<()> {
    apply_plan(&mut cfg, &a.plan);
    let (n, k) = resolve_point(&cfg, &a.point)?;
    let p = match a.p {
        Some(p) => p,
        None => first(&cfg.ps, "p")?,
    };
    let plan = &cfg.plan;
    let config = ProtocolConfig {
        rs_kind: plan.rs_kind,
        design_p: plan.design_p,
        eps_cor: plan.eps_cor,
        eps_sec: plan.eps_sec,
        estimation_bits: a.estimation_bits,
        qber_mode: if a.estimated_qber {
            QberMode::Estimated
        } else {
            QberMode::Exact
        },
        amplify: !a.no_amplify,
        ..ProtocolConfig::new(n, k, p, plan.mode, plan.seed)
    };
    let session = Session::new(config)?;
    let mut transport = Loopback::default();
    let outcome = session.run_over(a.trial, &mut transport)?;
    if let Some(path) = &a.transcript {
        fs::write(path, transport.transcript.concat())?;
    }
    print_json(&outcome)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Rs(RsCommand::Generate(a)) => rs_generate(a),
        Command::Rs(RsCommand::Overlap(a)) => rs_overlap_cmd(a),
        Command::Encode(a) => encode_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Simulate(SimulateCommand::Fer(a)) => fer_cmd(cfg, a),
        Command::Sweep(a) => sweep_cmd(cfg, a),
        Command::MaxQber(a) => max_qber_cmd(cfg, a),
        Command::Keyrate(a) => keyrate_cmd(cfg, a),
        Command::Protocol(ProtocolCommand::Run(a)) => protocol_cmd(cfg, a),
    }
}
