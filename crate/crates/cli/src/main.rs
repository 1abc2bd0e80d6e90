use std::fs::File;
use std::io::{self as stdio, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pairtrial::io;
use pairtrial::matchpairs::optimal_pairs_within_region;
use pairtrial::power::{curve_grid, detectable_reduction, drop_pair_tradeoff, pairs_required, GridAxis, PowerSpec};
use pairtrial::replicate::{
    analyze, default_estimators, run_replicates, simulate_trial, AnalysisOptions, Estimator, ReplicateReport,
    Stage1Method,
};
use pairtrial::stage2::{CandidateLibrary, EffectEstimate, Weighting};
use pairtrial::trialsim::ScenarioConfig;

/// Design, simulate and analyze pair-matched cluster randomized trials.
#[derive(Parser)]
#[command(name = "pairtrial", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detectable effect for a pair-matched trial, or a curve grid as CSV.
    Power(PowerArgs),
    /// Pair communities within region on the given covariates.
    Match(MatchArgs),
    /// Simulate one trial and write its data files and truth.
    Simulate(SimulateArgs),
    /// Run Stage I and Stage II on a trial's data files.
    Analyze(AnalyzeArgs),
    /// Operating characteristics over many simulated trials.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long, default_value_t = 16)]
    pairs: u32,
    /// Individuals per community with the outcome measured.
    #[arg(long, default_value_t = 2700.0)]
    m: f64,
    /// Control-arm cumulative incidence.
    #[arg(long)]
    pi0: f64,
    /// Matched-pair coefficient of variation.
    #[arg(long)]
    km: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
    /// Vary a parameter: VAR=START:STOP:STEP with VAR one of pi0, km, m, pairs.
    /// Repeat for a product grid; output is CSV.
    #[arg(long, value_parser = parse_via_fromstr::<GridAxis>)]
    grid: Vec<GridAxis>,
    /// Also report one pair fewer at this reduced k_m.
    #[arg(long)]
    drop_km: Option<f64>,
    /// Write output here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    /// CSV with id, region and covariate columns.
    #[arg(long)]
    communities: PathBuf,
    /// Matching covariates.
    #[arg(long, value_delimiter = ',', default_values_t = ["e4".to_string(), "e7".to_string()])]
    vars: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Bundled scenario: scenario-a, scenario-b or null.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario file (.toml or .json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Force intervention hazards to equal control hazards.
    #[arg(long)]
    null: bool,
    /// Multiply community sizes.
    #[arg(long)]
    scale: Option<f64>,
    /// Master seed (default: the scenario's own).
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<(ScenarioConfig, u64)> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ScenarioConfig::preset(self.preset.as_deref().unwrap_or("scenario-a"))?,
        };
        if self.null {
            cfg.effect_null = true;
        }
        if let Some(s) = self.scale {
            cfg.size_scale = s;
        }
        cfg.validate()?;
        let seed = self.seed.unwrap_or(cfg.master_seed);
        Ok((cfg, seed))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory for communities.csv, individuals.csv, pairing.csv
    /// and truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalysisArgs {
    /// unadjusted, adaptive, tmle:Q:G, drop-pair[:VAR] or break-match.
    #[arg(long, default_value = "adaptive", value_parser = parse_via_fromstr::<Estimator>)]
    estimator: Estimator,
    /// equal or size.
    #[arg(long, default_value = "equal", value_parser = parse_via_fromstr::<Weighting>)]
    weighting: Weighting,
    /// Stage I method: empirical, or tmle:VAR[,VAR...] over cohort covariates.
    #[arg(long, default_value = "empirical", value_parser = parse_stage1)]
    stage1: Stage1Method,
    /// Candidate adjustment covariates for adaptive selection.
    #[arg(long, value_delimiter = ',', default_values_t = CandidateLibrary::default().covariates)]
    library: Vec<String>,
}

impl AnalysisArgs {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            stage1: self.stage1.clone(),
            weighting: self.weighting,
            library: CandidateLibrary {
                covariates: self.library.clone(),
            },
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Community-level CSV.
    #[arg(long)]
    communities: PathBuf,
    /// Individual-level CSV; when given, Stage I outcomes are recomputed.
    #[arg(long)]
    individuals: Option<PathBuf>,
    #[command(flatten)]
    analysis: AnalysisArgs,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReplicateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Estimators to compare (repeatable; default: unadjusted and adaptive).
    #[arg(long = "estimator", value_parser = parse_via_fromstr::<Estimator>)]
    estimators: Vec<Estimator>,
    #[arg(long, default_value = "equal", value_parser = parse_via_fromstr::<Weighting>)]
    weighting: Weighting,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
}

fn parse_via_fromstr<T>(s: &str) -> std::result::Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_stage1(s: &str) -> std::result::Result<Stage1Method, String> {
    match s.split_once(':') {
        None if s == "empirical" => Ok(Stage1Method::Empirical),
        Some(("tmle", vars)) => Ok(Stage1Method::Targeted(
            vars.split(',').filter(|v| !v.is_empty()).map(str::to_string).collect(),
        )),
        _ => Err(format!("unknown Stage I method '{s}' (expected empirical or tmle:VARS)")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Run `f` on the named file, or on standard output.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = stdio::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_power(args: &PowerArgs) -> Result<()> {
    let spec = PowerSpec {
        pairs: args.pairs,
        m: args.m,
        pi0: args.pi0,
        km: args.km,
        alpha: args.alpha,
        power: args.power,
    };
    spec.validate()?;
    if !args.grid.is_empty() {
        let points = curve_grid(&spec, &args.grid)?;
        return with_output(args.out.as_deref(), |w| Ok(io::write_curve(w, &points)?));
    }
    let r = detectable_reduction(&spec)?;
    let dropped = match args.drop_km {
        Some(km) => Some((km, drop_pair_tradeoff(&spec, km)?.1)),
        None => None,
    };
    with_output(args.out.as_deref(), |w| {
        writeln!(
            w,
            "pairs {}  m {}  pi0 {}  km {}  alpha {}  power {}",
            spec.pairs, spec.m, spec.pi0, spec.km, spec.alpha, spec.power
        )?;
        writeln!(w, "detectable reduction  {r:.4}")?;
        writeln!(w, "pairs required        {:.4}", pairs_required(&spec, spec.pi0 * (1.0 - r)))?;
        if let Some((km, rd)) = dropped {
            writeln!(w, "one pair fewer, km {km}  detectable reduction  {rd:.4}")?;
        }
        Ok(())
    })
}

fn cmd_match(args: &MatchArgs) -> Result<()> {
    let candidates = io::read_candidates(open(&args.communities)?)?;
    let vars: Vec<&str> = args.vars.iter().map(String::as_str).collect();
    let pairing = optimal_pairs_within_region(&candidates, &vars)?;
    with_output(args.out.as_deref(), |w| Ok(io::write_pairing(w, &pairing)?))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let (cfg, seed) = args.scenario.load()?;
    let trial = simulate_trial(&cfg, seed)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = |name: &str| args.out.join(name);
    let mut w = create(&path("communities.csv"))?;
    io::write_communities(&mut w, &trial.communities)?;
    w.flush()?;
    let mut w = create(&path("individuals.csv"))?;
    io::write_individuals(&mut w, &trial.cohorts)?;
    w.flush()?;
    let mut w = create(&path("pairing.csv"))?;
    io::write_pairing(&mut w, &trial.pairing)?;
    w.flush()?;
    let mut w = create(&path("truth.json"))?;
    io::write_json(&mut w, &trial.truth)?;
    w.flush()?;
    println!(
        "{}: {} communities, seed {seed}, true ratio {:.4}, km {:.3} -> {}",
        cfg.name,
        trial.communities.len(),
        trial.truth.ratio,
        trial.truth.km,
        args.out.display()
    );
    Ok(())
}

fn estimate_table(e: &EffectEstimate) -> String {
    let mut s = String::new();
    let opt = |v: &Option<String>| v.clone().unwrap_or_else(|| "none".into());
    s += &format!("estimator      {}\n", e.estimator);
    s += &format!("psi1 / psi0    {:.6} / {:.6}\n", e.psi1, e.psi0);
    s += &format!("ratio          {:.4}  95% CI [{:.4}, {:.4}]\n", e.ratio, e.ci_lower, e.ci_upper);
    s += &format!("log SE         {:.4}  t {:.3}  df {}  p {:.4}\n", e.log_se, e.t_stat, e.df, e.p_value);
    s += &format!(
        "difference     {:.6}  95% CI [{:.6}, {:.6}]\n",
        e.abs_difference, e.abs_ci_lower, e.abs_ci_upper
    );
    s += &format!("adjustment     Q: {}  g: {}\n", opt(&e.selected_q_var), opt(&e.selected_g_var));
    if let Some(k) = e.dropped_pair {
        s += &format!("dropped pair   {k}\n");
    }
    for w in &e.warnings {
        s += &format!("warning        {w}\n");
    }
    s
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let communities = io::read_communities(open(&args.communities)?)?;
    let cohorts = match &args.individuals {
        Some(p) => Some(io::read_individuals(open(p)?)?),
        None => None,
    };
    let est = analyze(communities, cohorts.as_deref(), &args.analysis.estimator, &args.analysis.options())?;
    if let Some(p) = &args.out {
        let mut w = create(p)?;
        io::write_json(&mut w, &est)?;
        w.flush()?;
    }
    with_output(None, |w| {
        if args.json {
            io::write_json(w, &est)?;
        } else {
            w.write_all(estimate_table(&est).as_bytes())?;
        }
        Ok(())
    })
}

fn report_table(r: &ReplicateReport) -> String {
    let mut s = format!(
        "{}  seed {}  replicates {}  mean true ratio {:.4} (var {:.2e})  mean km {:.3}\n",
        r.scenario, r.master_seed, r.replicates, r.mean_true_ratio, r.var_true_ratio, r.mean_km
    );
    if let Some(n) = &r.note {
        s += &format!("note: {n}\n");
    }
    s += &format!(
        "{:<28} {:>10} {:>10} {:>9} {:>9} {:>7} {:>7} {:>6}\n",
        "estimator", "bias", "log bias", "mean SE", "mean t", "cover", "reject", "fail"
    );
    for e in &r.estimators {
        s += &format!(
            "{:<28} {:>10.2e} {:>10.2e} {:>9.4} {:>9.3} {:>7.3} {:>7.3} {:>6}\n",
            e.estimator, e.bias, e.log_bias, e.mean_se, e.mean_t, e.coverage, e.rejection_rate, e.failures
        );
    }
    s
}

fn cmd_replicate(args: &ReplicateArgs) -> Result<()> {
    let (cfg, seed) = args.scenario.load()?;
    let estimators = if args.estimators.is_empty() {
        default_estimators()
    } else {
        args.estimators.clone()
    };
    let opts = AnalysisOptions {
        weighting: args.weighting,
        ..AnalysisOptions::default()
    };
    let report = run_replicates(&cfg, seed, args.reps, &estimators, &opts, args.alpha)?;
    if let Some(p) = &args.out {
        let mut w = create(p)?;
        io::write_json(&mut w, &report)?;
        w.flush()?;
    }
    with_output(None, |w| {
        if args.json {
            io::write_json(w, &report)?;
        } else {
            w.write_all(report_table(&report).as_bytes())?;
        }
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Power(a) => cmd_power(a),
        Command::Match(a) => cmd_match(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Replicate(a) => cmd_replicate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
