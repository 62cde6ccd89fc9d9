//! `autfn`: batch experiments on free-group automorphisms and SL(2)
//! representations.
//!
//! Exit codes: 0 for success or a positive verdict; 1 for a negative verdict
//! (not primitive, not certified dense, replay rejected, steering
//! incomplete); 2 for any error, including bad flags and malformed input.

mod manifest;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use autfn::density::{certify_dense, DensityCertificate, DensityVerdict, SearchBudget, WitnessPolicy};
use autfn::dynamics::{haar_trace_cdf, ks_one_sample, random_walk, steer, ApproxBudget, MoveSet, SteerBudget, WalkConfig};
use autfn::freegroup::Word;
use autfn::nonmixing::{nonmixing_demo, ps2_probe, PS2Report, ProbeParams, ProbeRep};
use autfn::sl2::{Field, Representation, Tolerance};
use autfn::whitehead::{WhiteheadBudget, WhiteheadGraph, WhiteheadMoves};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "autfn", version, about = "Free-group automorphisms acting on SL(2) representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide primitivity by Whitehead minimization (exit 0 primitive, 1 not).
    Primitive(PrimitiveArgs),
    /// Whitehead graph of one or more words, as DOT.
    Whgraph(WhgraphArgs),
    /// Density certificates.
    #[command(subcommand)]
    Density(DensityCommand),
    /// Random Nielsen or Whitehead walk; CSV of sampled traces.
    Walk(WalkArgs),
    /// Move one representation close to another by an automorphism.
    Steer(SteerArgs),
    /// Twisted punctured-sphere pair.
    #[command(subcommand)]
    Nonmixing(NonmixingCommand),
    /// Primitive-stable pair probe.
    #[command(subcommand)]
    Ps2(Ps2Command),
}

#[derive(Subcommand)]
enum DensityCommand {
    /// Search for a density certificate (exit 0 dense, 1 otherwise).
    Certify(CertifyArgs),
    /// Re-verify a certificate file (exit 0 iff it verifies).
    Replay(ReplayArgs),
}

#[derive(Subcommand)]
enum NonmixingCommand {
    /// Build the pair with the smallest working twist and probe it.
    Demo(DemoArgs),
}

#[derive(Subcommand)]
enum Ps2Command {
    /// Probe two representations given as JSON files.
    Probe(ProbeArgs),
}

#[derive(Args, Serialize)]
struct PrimitiveArgs {
    /// Free group rank.
    #[arg(long)]
    rank: usize,
    /// Word such as "x1 x2^-1 x3".
    word: String,
    /// Cap on Whitehead automorphism applications.
    #[arg(long, default_value_t = 50_000_000)]
    budget_applications: usize,
    /// Write the verdict JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct WhgraphArgs {
    #[arg(long)]
    rank: usize,
    /// Words whose graphs are merged; none gives the empty graph.
    words: Vec<String>,
    /// Write the DOT file here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone, Copy)]
struct SearchFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Longest word searched.
    #[arg(long, default_value_t = 8)]
    budget_length: usize,
    /// Candidate words examined.
    #[arg(long, default_value_t = 4000)]
    budget_candidates: usize,
    /// Wall-clock cap in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    budget_time_ms: u64,
}

impl SearchFlags {
    fn budget(&self) -> SearchBudget {
        SearchBudget {
            max_word_length: self.budget_length,
            max_candidates: self.budget_candidates,
            time_cap: Duration::from_millis(self.budget_time_ms),
            ..SearchBudget::default().with_seed(self.seed)
        }
    }
}

#[derive(Args, Serialize)]
struct CertifyArgs {
    /// Representation JSON whose images generate the group.
    rep: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
    /// Write the verdict JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ReplayArgs {
    /// Certificate JSON, bare or inside a verdict.
    cert: PathBuf,
}

#[derive(Args, Serialize)]
struct WalkArgs {
    /// real, complex or su2.
    #[arg(long, default_value = "su2")]
    group: Field,
    /// Rank of the random initial representation.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Start from this representation JSON instead of a random one.
    #[arg(long)]
    rep: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record a sample every this many steps.
    #[arg(long, default_value_t = 1)]
    stride: u64,
    /// nielsen or whitehead.
    #[arg(long, default_value = "nielsen")]
    moves: MoveSet,
    /// Restart from the initial tuple once an entry exceeds this modulus.
    #[arg(long, default_value_t = 1e12)]
    budget_overflow: f64,
    /// Project every image back to determinant 1 (to SU(2) for su2) after
    /// each move. Defaults to true for su2, where rounding errors otherwise
    /// compound under Nielsen moves, and to false otherwise.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    renormalize: Option<bool>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SteerArgs {
    /// Starting representation JSON; random SU(2) of rank --n if absent.
    #[arg(long)]
    phi: Option<PathBuf>,
    /// Target representation JSON; random SU(2) of rank --n if absent.
    #[arg(long)]
    psi: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 0.15)]
    epsilon: f64,
    /// Longest approximating word per stage.
    #[arg(long, default_value_t = 20)]
    budget_word_length: usize,
    /// Half-length table size for approximation.
    #[arg(long, default_value_t = 20_000)]
    budget_table: usize,
    #[command(flatten)]
    search: SearchFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone, Copy)]
struct ProbeFlags {
    /// Length cap on primitive classes.
    #[arg(long = "L", visible_alias = "max-length", default_value_t = 12)]
    max_length: usize,
    /// Quasi-geodesic constant for the axis check.
    #[arg(long, default_value_t = 32.0)]
    k: f64,
    /// Periods of each axis sampled.
    #[arg(long, default_value_t = 3)]
    window: usize,
}

impl ProbeFlags {
    fn params(&self) -> ProbeParams {
        ProbeParams { max_length: self.max_length, k: self.k, window: self.window }
    }
}

#[derive(Args, Serialize)]
struct DemoArgs {
    #[command(flatten)]
    probe: ProbeFlags,
    /// Largest twist exponent tried.
    #[arg(long, default_value_t = 6)]
    max_m: u32,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-class rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ProbeArgs {
    rho1: PathBuf,
    rho2: PathBuf,
    #[command(flatten)]
    probe: ProbeFlags,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_rep(path: &Path) -> Result<Representation> {
    Representation::from_json(&read_json(path)?, &Tolerance::default()).with_context(|| format!("representation in {}", path.display()))
}

/// Writes `body` to `out` with its manifest, or to stdout. Summary lines go
/// to stdout when the body went to a file and to stderr otherwise.
struct Output {
    out: Option<PathBuf>,
    manifest: RunManifest,
}

impl Output {
    fn new(out: &Option<PathBuf>, manifest: RunManifest) -> Output {
        Output { out: out.clone(), manifest }
    }

    fn write_with(self, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        match &self.out {
            Some(path) => {
                let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
                body(&mut w)?;
                w.flush()?;
                self.manifest.finish(path)
            }
            None => {
                let stdout = io::stdout();
                let mut w = stdout.lock();
                body(&mut w)?;
                w.flush()?;
                Ok(())
            }
        }
    }

    fn write(self, text: &str) -> Result<()> {
        self.write_with(|w| Ok(w.write_all(text.as_bytes())?))
    }

    fn summary(&self, line: &str) {
        if self.out.is_some() {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
    }
}

fn pretty(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn primitive(a: PrimitiveArgs) -> Result<u8> {
    let word = Word::parse(&a.word, a.rank)?;
    let budget = WhiteheadBudget { max_applications: a.budget_applications, ..WhiteheadBudget::default() };
    let verdict = WhiteheadMoves::new(a.rank)?.decide(&word, &budget)?;
    let out = Output::new(&a.out, RunManifest::start("primitive", &a, None));
    out.summary(&format!("{}: {}", word, if verdict.is_primitive() { "primitive" } else { "not primitive" }));
    out.write(&pretty(&verdict)?)?;
    Ok(if verdict.is_primitive() { 0 } else { 1 })
}

fn whgraph(a: WhgraphArgs) -> Result<u8> {
    let words = a.words.iter().map(|w| Word::parse(w, a.rank)).collect::<Result<Vec<_>, _>>()?;
    let g = WhiteheadGraph::build(&words, a.rank)?;
    let cut = g.cutpoints();
    let out = Output::new(&a.out, RunManifest::start("whgraph", &a, None));
    out.summary(&format!(
        "{}, {} cutpoint{}, {} edges",
        if g.is_connected() { "connected" } else { "disconnected" },
        cut.len(),
        if cut.len() == 1 { "" } else { "s" },
        g.edge_count()
    ));
    out.write(&g.to_dot())?;
    Ok(0)
}

fn certify(a: CertifyArgs) -> Result<u8> {
    let rep = read_rep(&a.rep)?;
    let verdict = certify_dense(rep.images(), &a.search.budget(), &Tolerance::default(), &WitnessPolicy::default())?;
    let out = Output::new(&a.out, RunManifest::start("density certify", &a, Some(a.search.seed)));
    out.summary(verdict.label());
    out.write(&pretty(&verdict)?)?;
    Ok(if verdict.is_dense() { 0 } else { 1 })
}

fn replay(a: ReplayArgs) -> Result<u8> {
    let v = read_json(&a.cert)?;
    let cert = match v.get("verdict") {
        Some(_) => match serde_json::from_value::<DensityVerdict>(v)? {
            DensityVerdict::Dense { certificate } => certificate,
            other => bail!("verdict is {}, not a certificate", other.label()),
        },
        None => DensityCertificate::from_json(&v)?,
    };
    match cert.replay(&Tolerance::default(), &WitnessPolicy::default()) {
        Ok(()) => {
            println!("certificate verified: rank {}, {} spanning words", cert.rank, cert.spanning_words.len());
            Ok(0)
        }
        Err(e) => {
            println!("certificate rejected: {e}");
            Ok(1)
        }
    }
}

fn walk(mut a: WalkArgs) -> Result<u8> {
    let rep = match &a.rep {
        Some(p) => read_rep(p)?,
        None => Representation::random(a.group, a.n, &mut ChaCha8Rng::seed_from_u64(a.seed)),
    };
    let renormalize = *a.renormalize.get_or_insert(rep.field() == Field::Unitary);
    let cfg = WalkConfig {
        steps: a.steps,
        seed: a.seed,
        moves: a.moves,
        stride: a.stride,
        overflow_guard: a.budget_overflow,
        renormalize,
    };
    let run = random_walk(&rep, cfg)?;
    let out = Output::new(&a.out, RunManifest::start("walk", &a, Some(a.seed)));
    if run.field == Field::Unitary {
        for i in 0..rep.rank() {
            let ks = ks_one_sample(&run.marginal(i), haar_trace_cdf);
            out.summary(&format!("ks {}: n = {}, D = {:.6}, p = {:.4}", run.labels[i], ks.n, ks.statistic, ks.p_value));
        }
    }
    out.summary(&format!("{} samples, {} restarts", run.samples.len(), run.restarts.len()));
    out.write_with(|w| Ok(run.write_csv(w)?))?;
    Ok(0)
}

fn steer_cmd(a: SteerArgs) -> Result<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.search.seed);
    let phi = match &a.phi {
        Some(p) => read_rep(p)?,
        None => Representation::random(Field::Unitary, a.n, &mut rng),
    };
    let psi = match &a.psi {
        Some(p) => read_rep(p)?,
        None => Representation::random(phi.field(), phi.rank(), &mut rng),
    };
    let budget = SteerBudget {
        approx: ApproxBudget { max_length: a.budget_word_length, table_size: a.budget_table },
        density: a.search.budget(),
        ..SteerBudget::default()
    };
    let res = steer(&phi, &psi, a.epsilon, &budget, &Tolerance::default(), &WitnessPolicy::default())?;
    let out = Output::new(&a.out, RunManifest::start("steer", &a, Some(a.search.seed)));
    out.summary(&format!(
        "{}, max distance {:.4}, automorphism word lengths {:?}",
        if res.complete { "complete" } else { "incomplete" },
        res.max_distance(),
        res.stages.iter().map(|s| s.word.len()).collect::<Vec<_>>()
    ));
    out.write(&pretty(&res.to_json())?)?;
    Ok(if res.complete { 0 } else { 1 })
}

fn report_summary(r: &PS2Report) -> String {
    let first = |i: usize| r.zero_witnesses[i].first().map(|c| c.to_string()).unwrap_or_else(|| "none".into());
    format!(
        "{} primitive classes with length <= {}: min max-ratio {:.6} at {}; zero-ratio classes {} (e.g. {}) and {} (e.g. {}); {} inconsistencies",
        r.records.len(),
        r.max_length,
        r.min_max_ratio,
        r.argmin.as_ref().map(|c| c.to_string()).unwrap_or_else(|| "none".into()),
        r.zero_witnesses[0].len(),
        first(0),
        r.zero_witnesses[1].len(),
        first(1),
        r.consistency_violations
    )
}

fn write_report(r: &PS2Report, out: Output, csv: &Option<PathBuf>) -> Result<()> {
    if let Some(path) = csv {
        r.write_csv(File::create(path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    out.write_with(|w| Ok(r.write_json(w)?))
}

fn demo(a: DemoArgs) -> Result<u8> {
    let d = nonmixing_demo(&a.probe.params(), a.max_m, &Tolerance::default())?;
    let out = Output::new(&a.out, RunManifest::start("nonmixing demo", &a, None));
    out.summary(&format!("g1 = {}, g2 = {}, m = {}", d.g1, d.g2, d.m));
    out.summary(&report_summary(&d.report));
    write_report(&d.report, out, &a.csv)?;
    Ok(0)
}

fn probe(a: ProbeArgs) -> Result<u8> {
    let r1: ProbeRep = read_rep(&a.rho1)?.into();
    let r2: ProbeRep = read_rep(&a.rho2)?.into();
    let report = ps2_probe(&r1, &r2, &a.probe.params(), &Tolerance::default())?;
    let out = Output::new(&a.out, RunManifest::start("ps2 probe", &a, None));
    out.summary(&report_summary(&report));
    write_report(&report, out, &a.csv)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Primitive(a) => primitive(a),
        Command::Whgraph(a) => whgraph(a),
        Command::Density(DensityCommand::Certify(a)) => certify(a),
        Command::Density(DensityCommand::Replay(a)) => replay(a),
        Command::Walk(a) => walk(a),
        Command::Steer(a) => steer_cmd(a),
        Command::Nonmixing(NonmixingCommand::Demo(a)) => demo(a),
        Command::Ps2(Ps2Command::Probe(a)) => probe(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {:#}", anyhow!(e));
            ExitCode::from(2)
        }
    }
}
