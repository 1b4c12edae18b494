use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flare_core::analysis::{
    extract_behavior_space, extract_specification, AnalysisError, AnalysisOptions, SourceBundle,
    DEFAULT_BUDGET_BYTES,
};
use flare_core::campaign::{
    regenerate_report, run_campaign, CampaignConfig, CampaignError, ReportError, RoleBinding,
};
use flare_core::demo::{run_demo, DemoError, DemoOptions, DEMO_ITERATIONS, DEMO_RNG_SEED};
use flare_core::llm::{Exchange, Gateway};
use flare_core::oracle::FailureReport;
use flare_core::spec::Strictness;

const EXIT_USAGE: u8 = 1;
const EXIT_ANALYSIS: u8 = 2;
const EXIT_BOOTSTRAP: u8 = 3;
const EXIT_REPORT: u8 = 4;

/// Coverage-guided fuzzing for LLM multi-agent systems.
#[derive(Debug, Parser)]
#[command(name = "flare", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract the specification and behavior space from source code.
    Analyze(AnalyzeArgs),
    /// Run a fuzzing campaign described by a campaign.toml.
    Fuzz(FuzzArgs),
    /// Rebuild reports/ of a finished campaign from its recorded runs.
    Report(ReportArgs),
    /// Offline end-to-end run against the simulated ShortsMaker system.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Directory holding the system's source.
    #[arg(long)]
    sut: PathBuf,
    #[arg(long, default_value = "autogen")]
    framework: String,
    #[arg(long, env = "FLARE_OUT", default_value = "flare-analysis")]
    out: PathBuf,
    /// campaign.toml whose `llm.analysis` binding is used; defaults to the
    /// HTTP endpoint in FLARE_LLM_ENDPOINT.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accept unknown fields in the model's JSON answers.
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct FuzzArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "FLARE_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    budget_iters: Option<u64>,
    #[arg(long)]
    budget_seconds: Option<u64>,
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Adapter command line; replaces the configured adapter.
    #[arg(long)]
    adapter_cmd: Option<String>,
    /// Accept unknown fields in specification.json and behavior_space.json.
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Output directory of the campaign.
    #[arg(long, alias = "out", env = "FLARE_OUT")]
    campaign: PathBuf,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, env = "FLARE_OUT", default_value = "flare-demo")]
    out: PathBuf,
    #[arg(long, default_value_t = DEMO_RNG_SEED)]
    rng_seed: u64,
    #[arg(long, default_value_t = DEMO_ITERATIONS)]
    budget_iters: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Fuzz(args) => fuzz(args),
        Command::Report(args) => report(args),
        Command::Demo(args) => demo(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("flare: {message}");
            ExitCode::from(code)
        }
    }
}

type CliResult = Result<(), (u8, String)>;

fn absolute(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        return p;
    }
    std::env::current_dir().map(|cwd| cwd.join(&p)).unwrap_or(p)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

fn analyze(args: AnalyzeArgs) -> CliResult {
    let fail = |m: String| (EXIT_ANALYSIS, m);
    let binding = match &args.config {
        Some(file) => {
            CampaignConfig::load_unchecked(file)
                .map_err(|e| fail(e.to_string()))?
                .llm
                .analysis
        }
        None => RoleBinding::default(),
    };
    let gateway =
        Gateway::connect(&binding.provider).map_err(|e| fail(format!("analysis gateway: {e}")))?;
    let bundle = SourceBundle::collect(&args.sut, &args.framework, DEFAULT_BUDGET_BYTES)
        .map_err(|e| fail(e.to_string()))?;
    let opts = AnalysisOptions {
        strictness: if args.lenient {
            Strictness::Lenient
        } else {
            Strictness::Strict
        },
        model: binding.model,
    };
    let raw = args.out.join("raw_llm");
    std::fs::create_dir_all(&raw).map_err(|e| fail(format!("{}: {e}", raw.display())))?;
    let save = |name: &str, transcript: &[Exchange]| {
        let path = raw.join(name);
        write_json(&path, &transcript).map_err(|e| fail(format!("{}: {e}", path.display())))
    };
    let on_err = |e: AnalysisError, name: &str| {
        save(name, e.transcript())?;
        Err::<(), _>(fail(e.to_string()))
    };

    let spec = match extract_specification(&bundle, &gateway, &opts) {
        Ok(s) => s,
        Err(e) => return on_err(e, "specification.json"),
    };
    save("specification.json", &spec.transcript)?;
    let space = match extract_behavior_space(&bundle, &spec.value, &gateway, &opts) {
        Ok(s) => s,
        Err(e) => return on_err(e, "behavior_space.json"),
    };
    save("behavior_space.json", &space.transcript)?;
    for w in spec.warnings.iter().chain(&space.warnings) {
        eprintln!("warning: {w}");
    }
    for (name, value) in [
        ("specification.json", serde_json::to_value(&spec.value)),
        ("behavior_space.json", serde_json::to_value(&space.value)),
    ] {
        let path = args.out.join(name);
        let value = value.map_err(|e| fail(e.to_string()))?;
        write_json(&path, &value).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    }
    println!(
        "analysis: {} agents, {} legal paths -> {}",
        spec.value.agents.len(),
        space.value.paths.legal_paths.len(),
        args.out.display()
    );
    Ok(())
}

fn campaign_exit(e: &CampaignError) -> u8 {
    match e {
        CampaignError::Report(_) => EXIT_REPORT,
        _ => EXIT_BOOTSTRAP,
    }
}

fn print_report(report: &FailureReport, out: &Path) {
    let s = &report.summary;
    println!(
        "failures: {} confirmed, {} rejected, {} runtime crashes -> {}",
        s.confirmed,
        s.rejected,
        s.runtime_crashes,
        out.join("reports/failures.json").display()
    );
}

fn fuzz(args: FuzzArgs) -> CliResult {
    let mut cfg = CampaignConfig::load_unchecked(&args.config)
        .map_err(|e| (EXIT_BOOTSTRAP, e.to_string()))?;
    if let Some(out) = args.out {
        cfg.out = absolute(out);
    }
    if let Some(n) = args.budget_iters {
        cfg.budget.max_iterations = n;
    }
    if let Some(s) = args.budget_seconds {
        cfg.budget.max_wall_clock_secs = Some(s);
    }
    if let Some(seed) = args.rng_seed {
        cfg.rng_seed = seed;
    }
    if let Some(cmd) = args.adapter_cmd {
        cfg.adapter.command = Some(cmd);
        cfg.adapter.scenario = None;
    }
    cfg.lenient |= args.lenient;
    let result = run_campaign(&cfg).map_err(|e| (campaign_exit(&e), e.to_string()))?;
    println!(
        "campaign {}: {} iterations, AAC {:.3}, AAC(N) {:.3}, RAC {:.3}",
        result.campaign_id,
        result.iterations_run,
        result.coverage.aac(),
        result.coverage.aac_n(),
        result.coverage.rac()
    );
    if let Some(report) = &result.report {
        print_report(report, &result.out);
    }
    Ok(())
}

fn report(args: ReportArgs) -> CliResult {
    let report = regenerate_report(&args.campaign).map_err(|e| {
        let msg = match e {
            ReportError::NoState(dir) => format!("no campaign state in {dir}"),
            other => other.to_string(),
        };
        (EXIT_REPORT, msg)
    })?;
    print_report(&report, &args.campaign);
    Ok(())
}

fn demo(args: DemoArgs) -> CliResult {
    let opts = DemoOptions {
        out: absolute(args.out),
        rng_seed: args.rng_seed,
        iterations: args.budget_iters,
    };
    let outcome = run_demo(&opts).map_err(|e| {
        let code = match &e {
            DemoError::Bundle(_) | DemoError::Analysis(_) => EXIT_ANALYSIS,
            DemoError::Campaign(c) => campaign_exit(c),
            DemoError::Io { .. } | DemoError::UnknownScenario(_) => EXIT_BOOTSTRAP,
        };
        (code, e.to_string())
    })?;
    let c = &outcome.campaign;
    println!(
        "demo campaign {}: {} iterations, AAC {:.3}, AAC(N) {:.3}, RAC {:.3}",
        c.campaign_id,
        c.iterations_run,
        c.coverage.aac(),
        c.coverage.aac_n(),
        c.coverage.rac()
    );
    if let Some(report) = &c.report {
        print_report(report, &c.out);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
