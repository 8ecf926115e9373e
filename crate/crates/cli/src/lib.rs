// Copyright 2026 The stv-audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! The `stv-audit` command line.
//!
//! Every subcommand prints a human-readable report, or a single line of
//! JSON with `--json`; the JSON shapes are described by the schemas under
//! `schemas/` at the repository root. Exit status is 0 on success, 2 when
//! the arguments or input files are invalid and 1 when the work itself
//! fails.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use stv_audit::bayes::{bayes_audit, bootstrap_schedule, BayesReport, Integerization, TrialConfig};
use stv_audit::format::{parse_preference_file, FileFormat, ParsedFile};
use stv_audit::margin::{
    brute_force_margin, find_bounds, refine_low_tally, BruteForceMargin, MarginBound,
    MarginBoundJson, SearchOptions, Variant,
};
use stv_audit::risk::{
    binom_lower_bound, binom_upper_bound, km_initial_sample, measured_risk_zero_errors,
    negative_audit_decision, DiscrepancyRecord, ErrorRateEstimate, KmAuditState, NegativeDecision,
};
use stv_audit::sampler::{draw_sample, SampleDraw};
use stv_audit::session::{read_log, Session};
use stv_audit::stv::{CountLog, LastRoundMargin, RoundEvent};
use stv_audit::{Ballot, CandidateId, ElectionRecord, Exact, Profile, Weight};
use stv_audit_service::ServiceConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or input; exit 2.
    Invalid(String),
    /// The requested work failed; exit 1.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<stv_audit::Error> for CliError {
    fn from(e: stv_audit::Error) -> Self {
        match e {
            stv_audit::Error::Io(_) | stv_audit::Error::Session(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "stv-audit", version, about = "STV tabulation and post-election audit tools")]
pub struct Cli {
    /// Print one line of JSON instead of a report.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Count an election and print the round log.
    Tabulate(RecordArgs),
    /// Search for small ballot changes that alter the winners.
    Margin(MarginArgs),
    /// Bayesian audit of hand-read ballots against the record.
    Bayes(BayesArgs),
    /// Bootstrap audit over growing samples of the record itself.
    Bootstrap(BootstrapArgs),
    /// Error-rate and risk calculations.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Draw a reproducible sample of ballot indices.
    Sample(SampleArgs),
    /// Recompute a session's statistics from its event log.
    AuditReplay(ReplayArgs),
    /// Run the HTTP audit service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    CanonicalCsv,
    Aec2016Formal,
}

#[derive(Args, Debug)]
pub struct RecordArgs {
    /// Preference file.
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long, value_enum, default_value = "canonical-csv")]
    pub format: FormatArg,
    /// Seats to fill; required unless the file states it.
    #[arg(long)]
    pub seats: Option<usize>,
}

#[derive(Args, Debug)]
pub struct WorkerArgs {
    /// Worker threads; results do not depend on this.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    AnyChange,
    FixedFirstPrefs,
}

#[derive(Args, Debug)]
pub struct MarginArgs {
    #[command(flatten)]
    pub record: RecordArgs,
    #[command(flatten)]
    pub workers: WorkerArgs,
    #[arg(long, value_enum, default_value = "any-change")]
    pub variant: VariantArg,
    /// Leave ballots cast above the line untouched.
    #[arg(long)]
    pub atl_immutable: bool,
    /// Try to shrink each bound by trimming what recipients receive.
    #[arg(long)]
    pub refine: bool,
    /// Also run the exhaustive search up to this many altered ballots
    /// (small elections only).
    #[arg(long)]
    pub exact_cap: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ArithmeticArg {
    Exact,
    Float,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum IntegerizationArg {
    Multinomial,
    LargestRemainder,
}

#[derive(Args, Debug)]
pub struct TrialArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "exact")]
    pub arithmetic: ArithmeticArg,
    #[arg(long, value_enum, default_value = "multinomial")]
    pub integerization: IntegerizationArg,
}

#[derive(Args, Debug)]
pub struct BayesArgs {
    #[command(flatten)]
    pub record: RecordArgs,
    #[command(flatten)]
    pub workers: WorkerArgs,
    #[command(flatten)]
    pub trial: TrialArgs,
    /// Canonical CSV of the ballots read by hand, same candidate list.
    #[arg(long)]
    pub audited: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub record: RecordArgs,
    #[command(flatten)]
    pub workers: WorkerArgs,
    #[command(flatten)]
    pub trial: TrialArgs,
    /// Increasing sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub schedule: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    pub trials: u64,
}

#[derive(Subcommand, Debug)]
pub enum StatsCommand {
    /// Upper confidence bound on an error rate from k errors in n ballots.
    BinomUpper(BinomArgs),
    /// Lower confidence bound on an error rate from k errors in n ballots.
    BinomLower(BinomArgs),
    /// Whether the errors found prove more than a margin's worth of errors.
    Negative(NegativeArgs),
    /// Chance of a clean sample of n ballots at error rate p0.
    MeasuredRisk(MeasuredRiskArgs),
    /// Error-free comparison-audit sample size for a margin.
    KmSample(KmSampleArgs),
    /// Comparison-audit p-value after inspecting ballots.
    KmPvalue(KmPvalueArgs),
    /// Classify one disagreement between the record and a paper.
    Classify(ClassifyArgs),
}

#[derive(Args, Debug)]
pub struct BinomArgs {
    #[arg(long)]
    pub k: u64,
    #[arg(long)]
    pub n: u64,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
}

#[derive(Args, Debug)]
pub struct NegativeArgs {
    #[command(flatten)]
    pub binom: BinomArgs,
    /// Ballots in the election.
    #[arg(long)]
    pub population: u64,
    /// Outcome-changing bound on the number of altered ballots.
    #[arg(long)]
    pub bound: u64,
}

#[derive(Args, Debug)]
pub struct MeasuredRiskArgs {
    #[arg(long)]
    pub n: u64,
    #[arg(long)]
    pub p0: f64,
}

#[derive(Args, Debug)]
pub struct KmSampleArgs {
    /// Margin in ballots; needs `--total`.
    #[arg(long, requires = "total", conflicts_with = "margin_fraction")]
    pub margin: Option<u64>,
    #[arg(long)]
    pub total: Option<u64>,
    /// Margin as a fraction of all ballots.
    #[arg(long, required_unless_present = "margin")]
    pub margin_fraction: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub risk_limit: f64,
}

#[derive(Args, Debug)]
pub struct KmPvalueArgs {
    #[command(flatten)]
    pub record: RecordArgs,
    /// Margin in ballots; searched for when absent.
    #[arg(long)]
    pub margin: Option<u64>,
    /// Ballots inspected so far.
    #[arg(long)]
    pub inspected: u64,
    /// `INDEX:READING` for each ballot found to differ, where READING is
    /// 1-based candidate numbers such as `3,1,2`, or `informal`.
    #[arg(long = "discrepancy")]
    pub discrepancies: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub risk_limit: f64,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub record: RecordArgs,
    /// Ballot index in the record.
    #[arg(long)]
    pub index: u64,
    /// What the paper shows: `3,1,2` style or `informal`.
    #[arg(long)]
    pub actual: String,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub seed: u64,
    /// Number of ballots to choose from.
    #[arg(long, required_unless_present = "file", conflicts_with = "file")]
    pub population: Option<u64>,
    /// Take the population from a preference file.
    #[arg(long)]
    pub file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "canonical-csv")]
    pub format: FormatArg,
    #[arg(long)]
    pub size: u64,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Session event log as written by the service (JSON lines).
    #[arg(long)]
    pub log: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Defaults to `STV_AUDIT_PORT`, then 8080.
    #[arg(long)]
    pub port: Option<u16>,
    /// Defaults to `STV_AUDIT_DATA_DIR`, then `./stv-audit-data`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let json = cli.json;
    match &cli.command {
        Command::Tabulate(a) => tabulate(a, json, out),
        Command::Margin(a) => margin(a, json, out),
        Command::Bayes(a) => bayes(a, json, out),
        Command::Bootstrap(a) => bootstrap(a, json, out),
        Command::Stats(s) => stats(s, json, out),
        Command::Sample(a) => sample(a, json, out),
        Command::AuditReplay(a) => audit_replay(a, json, out),
        Command::Serve(a) => serve(a, out),
    }
}

fn with_workers<T: Send>(w: &WorkerArgs, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match w.workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(f),
    }
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> CliResult {
    serde_json::to_writer(&mut *out, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn file_format(f: FormatArg) -> FileFormat {
    match f {
        FormatArg::CanonicalCsv => FileFormat::CanonicalCsv,
        FormatArg::Aec2016Formal => FileFormat::Aec2016Formal,
    }
}

fn open(path: &PathBuf) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn parse_file(path: &PathBuf, format: FormatArg) -> CliResult<ParsedFile> {
    Ok(parse_preference_file(open(path)?, file_format(format))?)
}

fn load_record(a: &RecordArgs) -> CliResult<ElectionRecord> {
    Ok(parse_file(&a.file, a.format)?.into_record(a.seats)?)
}

/// Six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

/// A rational as six significant digits followed by the exact fraction
/// when it is not a whole number.
pub fn show_weight<W: Weight>(w: &W) -> String {
    let (num, den) = w.fraction_parts();
    if den == "1" {
        num
    } else {
        format!("{} ({num}/{den})", sig6(w.to_f64()))
    }
}

fn name(record: &ElectionRecord, c: CandidateId) -> &str {
    &record.profile.candidates()[c.index()].name
}

fn names(record: &ElectionRecord, cs: &[CandidateId]) -> String {
    cs.iter().map(|&c| name(record, c)).collect::<Vec<_>>().join(", ")
}

/// Reads `3,1,2` (1-based) or `informal`.
pub fn parse_reading(text: &str, candidates: usize) -> CliResult<Option<Ballot>> {
    let text = text.trim();
    if text.eq_ignore_ascii_case("informal") {
        return Ok(None);
    }
    let prefs = text
        .split(',')
        .map(|t| match t.trim().parse::<u32>() {
            Ok(n) if n >= 1 && (n as usize) <= candidates => Ok(CandidateId(n - 1)),
            _ => Err(CliError::Invalid(format!("not a candidate number: {t:?}"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Some(Ballot::new(prefs)?))
}

fn tabulate(a: &RecordArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let record = load_record(a)?;
    let result = stv_audit::count(&record)?;
    if json {
        return emit_json(out, &CountLog::from(&result));
    }
    writeln!(
        out,
        "{} ballots, {} candidates, {} seats, quota {}",
        record.profile.total(),
        record.profile.num_candidates(),
        record.seats,
        result.quota
    )?;
    for r in &result.rounds {
        let verb = match (r.event, r.reached_quota) {
            (RoundEvent::Elect, true) => "elected on quota",
            (RoundEvent::Elect, false) => "elected",
            (RoundEvent::Eliminate, _) => "excluded",
        };
        writeln!(out, "\nround {}: {} {}", r.round, name(&record, r.subject), verb)?;
        let mut tallies: Vec<_> = r.tallies.iter().collect();
        tallies.sort_by(|x, y| y.1.partial_cmp(x.1).unwrap_or(std::cmp::Ordering::Equal).then(x.0.cmp(y.0)));
        for (c, t) in tallies {
            writeln!(out, "  {:<24} {}", name(&record, *c), show_weight(t))?;
        }
        writeln!(out, "  {:<24} {}", "(exhausted)", show_weight(&r.exhausted))?;
        writeln!(out, "  transfer value {}", show_weight(&r.transfer_value))?;
    }
    writeln!(out, "\nwinners: {}", names(&record, &result.winners))?;
    if let Some(p) = &result.last_round_pair {
        let m = LastRoundMargin::from_difference(p.difference.ceil_count());
        writeln!(
            out,
            "last round: {} over {} by {} (round {}); {} ballots would flip it",
            name(&record, p.winner),
            name(&record, p.loser),
            show_weight(&p.difference),
            p.round,
            m.ballots_to_flip
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BoundOut {
    #[serde(flatten)]
    bound: MarginBoundJson,
    bound_x: u64,
    closed_form_m: u64,
    third_pass_would_improve: Option<bool>,
}

#[derive(Serialize)]
struct MarginOut {
    quota: u64,
    last_round: Option<LastRoundMargin>,
    bounds: Vec<BoundOut>,
    /// Smallest verified bound found.
    best: Option<u64>,
    exact: Option<BruteForceMargin>,
}

fn margin(a: &MarginArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let record = load_record(&a.record)?;
    let options = SearchOptions {
        variant: match a.variant {
            VariantArg::AnyChange => Variant::AnyChange,
            VariantArg::FixedFirstPrefs => Variant::FixedFirstPrefs,
        },
        atl_immutable: a.atl_immutable,
    };
    let count = stv_audit::count(&record)?;
    let (bounds, exact) = with_workers(&a.workers, || -> CliResult<_> {
        let mut bounds: Vec<MarginBound> = find_bounds::<Exact>(&record, &options)?;
        if a.refine {
            bounds = bounds
                .iter()
                .map(|b| refine_low_tally::<Exact>(b, &record))
                .collect::<stv_audit::Result<_>>()?;
            bounds.sort_by_key(|b| (b.bound_x, b.plan.target_winner, b.plan.round));
        }
        let exact = a.exact_cap.map(|cap| brute_force_margin::<Exact>(&record, cap)).transpose()?;
        Ok((bounds, exact))
    })?;
    let report = MarginOut {
        quota: count.quota,
        last_round: count.last_round_margin(),
        best: bounds.iter().filter(|b| b.verified).map(|b| b.bound_x).min(),
        bounds: bounds
            .iter()
            .map(|b| BoundOut {
                bound: MarginBoundJson::from(b),
                bound_x: b.bound_x,
                closed_form_m: b.plan.closed_form_m,
                third_pass_would_improve: b.third_pass_would_improve,
            })
            .collect(),
        exact,
    };
    if json {
        return emit_json(out, &report);
    }
    if let Some(m) = report.last_round {
        writeln!(out, "last-round difference {} ({} ballots to flip)", m.difference, m.ballots_to_flip)?;
    }
    if bounds.is_empty() {
        writeln!(out, "no candidate bound: no winner was seated without the quota, or none can be moved")?;
    } else {
        writeln!(out, "{:<24} {:>6} {:>8} {:>12}  alternate winners", "target", "round", "ballots", "closed form")?;
        for b in &bounds {
            writeln!(
                out,
                "{:<24} {:>6} {:>8} {:>12}  {}{}",
                name(&record, b.plan.target_winner),
                b.plan.round,
                b.bound_x,
                b.plan.closed_form_m,
                names(&record, &b.alternate_outcome),
                if b.verified { "" } else { " (unverified)" }
            )?;
        }
    }
    if let Some(best) = report.best {
        writeln!(out, "smallest verified bound: {best} ballots")?;
    }
    match report.exact {
        Some(BruteForceMargin::Exact(m)) => writeln!(out, "exact margin: {m} ballots")?,
        Some(BruteForceMargin::GreaterThanCap(c)) => writeln!(out, "exact margin: more than {c} ballots")?,
        Some(BruteForceMargin::Incomplete { checked_below }) => {
            writeln!(out, "exact search incomplete: no change of fewer than {checked_below} ballots")?
        }
        None => {}
    }
    Ok(())
}

fn trial_config(t: &TrialArgs, trials: u64) -> CliResult<TrialConfig> {
    let mut c = TrialConfig::new(trials, t.seed);
    if let Some(th) = t.threshold {
        if !(th > 0.0 && th <= 1.0) {
            return Err(CliError::Invalid("threshold must lie in (0, 1]".into()));
        }
        c.threshold = th;
    }
    c.integerization = match t.integerization {
        IntegerizationArg::Multinomial => Integerization::Multinomial,
        IntegerizationArg::LargestRemainder => Integerization::LargestRemainder,
    };
    Ok(c)
}

fn print_bayes(r: &BayesReport, out: &mut dyn Write) -> CliResult {
    writeln!(
        out,
        "reported winners won {} of {} trials ({}%); threshold {} {}",
        r.matches,
        r.trials,
        sig6(100.0 * r.outcome_match_fraction),
        r.stop_threshold,
        if r.threshold_met { "met" } else { "not met" }
    )?;
    for f in &r.per_candidate_frequency {
        writeln!(out, "  {:<24} {:>8}%", f.name, sig6(100.0 * f.fraction))?;
    }
    Ok(())
}

fn bayes(a: &BayesArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let record = load_record(&a.record)?;
    let audited = parse_file(&a.audited, FormatArg::CanonicalCsv)?;
    if audited.profile.candidates().iter().map(|c| &c.name).ne(record.profile.candidates().iter().map(|c| &c.name)) {
        return Err(CliError::Invalid("audited ballots use a different candidate list".into()));
    }
    let ballots = expand(&audited.profile);
    let config = trial_config(&a.trial, a.trials)?;
    let report = with_workers(&a.workers, || match a.trial.arithmetic {
        ArithmeticArg::Exact => bayes_audit::<Exact>(&record, &ballots, &config),
        ArithmeticArg::Float => bayes_audit::<f64>(&record, &ballots, &config),
    }
    .map_err(CliError::from))?;
    if json {
        return emit_json(out, &report);
    }
    writeln!(out, "{} audited ballots", ballots.len())?;
    print_bayes(&report, out)
}

fn expand(profile: &Profile) -> Vec<Ballot> {
    profile
        .lines()
        .iter()
        .flat_map(|l| std::iter::repeat_n(l.ballot.clone(), l.multiplicity as usize))
        .collect()
}

fn bootstrap(a: &BootstrapArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let record = load_record(&a.record)?;
    let config = trial_config(&a.trial, a.trials)?;
    let report = with_workers(&a.workers, || match a.trial.arithmetic {
        ArithmeticArg::Exact => bootstrap_schedule::<Exact>(&record, &a.schedule, &config),
        ArithmeticArg::Float => bootstrap_schedule::<f64>(&record, &a.schedule, &config),
    }
    .map_err(CliError::from))?;
    if json {
        return emit_json(out, &report);
    }
    writeln!(out, "{:>10} {:>10}", "sample", "match %")?;
    for s in &report.stages {
        writeln!(out, "{:>10} {:>10}", s.sample_size, sig6(100.0 * s.report.outcome_match_fraction))?;
    }
    match report.first_meeting_threshold {
        Some(n) => writeln!(out, "threshold first met at {n} ballots")?,
        None => writeln!(out, "threshold not met by the largest sample")?,
    }
    if let Some(last) = report.stages.last() {
        writeln!(out, "\nat {} ballots:", last.sample_size)?;
        print_bayes(&last.report, out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BinomOut {
    k: u64,
    n: u64,
    confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_upper: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_lower: Option<f64>,
}

#[derive(Serialize)]
struct NegativeOut {
    estimate: ErrorRateEstimate,
    bound_x: u64,
    errors_lower: f64,
    decision: NegativeDecision,
}

#[derive(Serialize)]
struct MeasuredRiskOut {
    n: u64,
    p0: f64,
    risk: f64,
}

#[derive(Serialize)]
struct KmSampleOut {
    margin_fraction: f64,
    risk_limit: f64,
    sample_size: u64,
}

fn stats(cmd: &StatsCommand, json: bool, out: &mut dyn Write) -> CliResult {
    match cmd {
        StatsCommand::BinomUpper(b) | StatsCommand::BinomLower(b) => {
            let upper = matches!(cmd, StatsCommand::BinomUpper(_));
            let p = if upper {
                binom_upper_bound(b.k, b.n, b.confidence)?
            } else {
                binom_lower_bound(b.k, b.n, b.confidence)?
            };
            let report = BinomOut {
                k: b.k,
                n: b.n,
                confidence: b.confidence,
                p_upper: upper.then_some(p),
                p_lower: (!upper).then_some(p),
            };
            if json {
                return emit_json(out, &report);
            }
            let which = if upper { "upper" } else { "lower" };
            writeln!(out, "{} errors in {} ballots: {which} {} bound on the rate {}", b.k, b.n, b.confidence, sig6(p))?;
        }
        StatsCommand::Negative(a) => {
            let estimate = ErrorRateEstimate::new(a.binom.k, a.binom.n, a.population, a.binom.confidence)?;
            let report = NegativeOut {
                errors_lower: estimate.p_lower * a.population as f64,
                decision: negative_audit_decision(&estimate, a.bound),
                estimate,
                bound_x: a.bound,
            };
            if json {
                return emit_json(out, &report);
            }
            writeln!(
                out,
                "error rate in [{}, {}] at {}; at least {} erroneous ballots against a bound of {}",
                sig6(estimate.p_lower),
                sig6(estimate.p_upper),
                estimate.confidence,
                sig6(report.errors_lower),
                a.bound
            )?;
            writeln!(
                out,
                "{}",
                match report.decision {
                    NegativeDecision::ErrorRateExceedsMarginBound => "errors exceed the bound: the outcome is in doubt",
                    NegativeDecision::Inconclusive => "inconclusive",
                }
            )?;
        }
        StatsCommand::MeasuredRisk(a) => {
            let risk = measured_risk_zero_errors(a.n, a.p0)?;
            if json {
                return emit_json(out, &MeasuredRiskOut { n: a.n, p0: a.p0, risk });
            }
            writeln!(out, "chance of no errors in {} ballots at rate {}: {}", a.n, a.p0, sig6(risk))?;
        }
        StatsCommand::KmSample(a) => {
            let fraction = match (a.margin, a.total, a.margin_fraction) {
                (Some(m), Some(t), _) if t > 0 => m as f64 / t as f64,
                (Some(_), _, _) => return Err(CliError::Invalid("--total must be positive".into())),
                (None, _, Some(f)) => f,
                (None, _, None) => return Err(CliError::Invalid("give --margin or --margin-fraction".into())),
            };
            let n = km_initial_sample(fraction, a.risk_limit)?;
            if json {
                return emit_json(
                    out,
                    &KmSampleOut {
                        margin_fraction: fraction,
                        risk_limit: a.risk_limit,
                        sample_size: n,
                    },
                );
            }
            writeln!(out, "{n} error-free ballots reach risk {} at margin {}", a.risk_limit, sig6(fraction))?;
        }
        StatsCommand::KmPvalue(a) => {
            let record = load_record(&a.record)?;
            let count = stv_audit::count(&record)?;
            let margin = match a.margin {
                Some(m) => m,
                None => find_bounds::<Exact>(&record, &SearchOptions::default())?
                    .iter()
                    .filter(|b| b.verified)
                    .map(|b| b.bound_x)
                    .min()
                    .or_else(|| count.last_round_margin().map(|m| m.ballots_to_flip))
                    .ok_or_else(|| CliError::Invalid("no margin found; pass --margin".into()))?,
            };
            let mut state = KmAuditState::new(margin, record.profile.total(), a.risk_limit)?;
            state.n_inspected = a.inspected;
            for d in &a.discrepancies {
                let (index, reading) = d
                    .split_once(':')
                    .ok_or_else(|| CliError::Invalid(format!("expected INDEX:READING, got {d:?}")))?;
                let index: u64 = index
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Invalid(format!("bad ballot index {index:?}")))?;
                state.discrepancies.push(discrepancy(&record, &count, index, reading)?);
            }
            state.p_value = stv_audit::risk::km_pvalue(&state)?;
            if json {
                return emit_json(out, &state);
            }
            writeln!(
                out,
                "margin {} of {} ballots, {} inspected, {} discrepancies: p = {} ({})",
                margin,
                state.total_ballots,
                state.n_inspected,
                state.discrepancies.len(),
                sig6(state.p_value),
                if state.attained() { "risk limit met" } else { "risk limit not met" }
            )?;
        }
        StatsCommand::Classify(a) => {
            let record = load_record(&a.record)?;
            let count = stv_audit::count(&record)?;
            let rec = discrepancy(&record, &count, a.index, &a.actual)?;
            if json {
                return emit_json(out, &rec);
            }
            writeln!(
                out,
                "{:?}: effect {}, overstatement {}",
                rec.classification,
                sig6(rec.effect_weight),
                sig6(rec.overstatement)
            )?;
        }
    }
    Ok(())
}

fn discrepancy(
    record: &ElectionRecord,
    count: &stv_audit::ExactCountResult,
    index: u64,
    reading: &str,
) -> CliResult<DiscrepancyRecord> {
    let reported = record
        .profile
        .ballot_at(index)
        .ok_or_else(|| CliError::Invalid(format!("ballot {index} is outside the record")))?
        .clone();
    let actual = parse_reading(reading, record.profile.num_candidates())?;
    Ok(DiscrepancyRecord::new(index, reported, actual, count)?)
}

fn sample(a: &SampleArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let population = match (&a.file, a.population) {
        (Some(f), _) => parse_file(f, a.format)?.profile.total(),
        (None, Some(p)) => p,
        (None, None) => return Err(CliError::Invalid("give --population or --file".into())),
    };
    let draw: SampleDraw = draw_sample(a.seed, population, a.size)?;
    if json {
        return emit_json(out, &draw);
    }
    writeln!(out, "{} of {} ballots, seed {}", draw.size(), population, a.seed)?;
    writeln!(out, "{:>6} {:>12}", "order", "index")?;
    for (i, idx) in draw.draw_order().iter().enumerate() {
        writeln!(out, "{:>6} {:>12}", i + 1, idx)?;
    }
    Ok(())
}

fn audit_replay(a: &ReplayArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let log = read_log(open(&a.log)?)?;
    let mut session = Session::replay(&log)?;
    let stats = session.stats()?;
    if json {
        return emit_json(out, &stats);
    }
    writeln!(
        out,
        "{} events; sample {} of {}: {} settled, {} pending, {} flagged",
        log.len(),
        stats.sample_size,
        session.record().profile.total(),
        stats.settled,
        stats.pending,
        stats.flagged
    )?;
    let e = &stats.error_rate;
    writeln!(
        out,
        "errors {} in {}: rate in [{}, {}] at {}",
        e.k,
        e.n,
        sig6(e.p_lower),
        sig6(e.p_upper),
        e.confidence
    )?;
    if let Some(b) = &stats.bayes {
        writeln!(out, "bayesian match fraction {}", sig6(b.outcome_match_fraction))?;
    }
    if let Some(n) = &stats.negative {
        match n.bound_x {
            Some(x) => writeln!(out, "negative audit against bound {x}: {:?}", n.decision)?,
            None => writeln!(out, "negative audit: no outcome-changing bound known")?,
        }
    }
    if let Some(r) = stats.measured_risk {
        writeln!(out, "measured risk {}", sig6(r))?;
    }
    if let Some(k) = &stats.km {
        writeln!(out, "comparison p-value {}", sig6(k.p_value))?;
    }
    writeln!(out, "recommendation: {:?}", stats.recommendation)?;
    Ok(())
}

fn serve(a: &ServeArgs, out: &mut dyn Write) -> CliResult {
    let mut config = ServiceConfig::from_env().map_err(CliError::Invalid)?;
    if let Some(p) = a.port {
        config.port = p;
    }
    if let Some(d) = &a.data_dir {
        config.data_dir = d.clone();
    }
    writeln!(out, "listening on port {}, data in {}", config.port, config.data_dir.display())?;
    out.flush()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(stv_audit_service::serve(&config))?;
    Ok(())
}
