use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use hepaflow::calibration::calibrate_subject;
use hepaflow::cohort::{emit_cohort, ingest_cohort};
use hepaflow::config::{NetworkFile, RunConfig};
use hepaflow::exec::{with_workers, Execution};
use hepaflow::network::{simulate, write_probe_csv};
use hepaflow::pipeline::{dump_arm_probes, read_estimates, run_pipeline, verify_estimates, PipelineOutput, SubjectFailure};
use hepaflow::synth::{synth_cohort, write_truth, TruthRanges};

#[derive(Parser)]
#[command(name = "hepaflow", version, about = "1-D blood flow simulation and liver model calibration")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when absent.
    #[arg(long, global = true, env = "HEPAFLOW_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CohortArg {
    /// Cohort CSV.
    #[arg(long)]
    cohort: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate stiffness, peripheral resistance and liver resistances.
    Calibrate(CohortArg),
    /// Run a network description file and write one CSV per probe.
    Simulate {
        #[arg(long)]
        network: PathBuf,
    },
    /// Venous return check from a cohort and a saved estimates file.
    Verify {
        #[command(flatten)]
        cohort: CohortArg,
        #[arg(long)]
        estimates: PathBuf,
    },
    /// Write a synthetic cohort and its true parameters.
    SynthCohort {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Calibrate and verify a whole cohort.
    Pipeline(CohortArg),
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if cli.out.is_some() {
        cfg.output_dir = cli.out.clone();
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn report_failures(failures: &[SubjectFailure]) -> ExitCode {
    for f in failures {
        eprintln!("{}: {}", f.subject, f.message);
    }
    if failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let dir = out_dir(&cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let exec = Execution::default();
    match &cli.command {
        Command::Calibrate(c) => {
            let cohort = ingest_cohort(&c.cohort)?;
            let results = with_workers(cfg.workers, || exec.map(&cohort, |s| calibrate_subject(s, &cfg, exec)));
            let mut out = PipelineOutput::default();
            for (s, r) in cohort.iter().zip(results) {
                match r {
                    Ok(e) => out.estimates.push(e),
                    Err(e) => out.failures.push(SubjectFailure { subject: s.id.clone(), message: e.to_string() }),
                }
            }
            out.write_estimates(create(&dir.join("estimates.csv"))?)?;
            out.write_failures(create(&dir.join("failures.csv"))?)?;
            Ok(report_failures(&out.failures))
        }
        Command::Simulate { network } => {
            let file = NetworkFile::load(network).with_context(|| format!("reading {}", network.display()))?;
            let mut net = file.build()?;
            let res = simulate(&mut net, file.run.duration, &file.options().with_execution(exec))?;
            for p in &res.probes {
                let name = format!("{}_{}.csv", net.names[p.segment], p.fraction);
                write_probe_csv(create(&dir.join(name))?, p)?;
            }
            println!("steps={} mass_imbalance={:e}", res.steps, res.ledger.relative_imbalance());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { cohort, estimates } => {
            let subjects = ingest_cohort(&cohort.cohort)?;
            let rows = read_estimates(File::open(estimates).with_context(|| format!("opening {}", estimates.display()))?)?;
            let (report, failures) = verify_estimates(&subjects, &rows, &cfg);
            report.write_csv(create(&dir.join("verification.csv"))?)?;
            println!("{}", report.summary_line());
            Ok(report_failures(&failures))
        }
        Command::SynthCohort { n, seed } => {
            if *n == 0 {
                bail!("--n must be at least 1");
            }
            let (subjects, truths) = with_workers(cfg.workers, || synth_cohort(*n, *seed, &TruthRanges::default(), &cfg, exec))?;
            emit_cohort(&dir.join("cohort.csv"), &subjects)?;
            write_truth(create(&dir.join("truth.csv"))?, &truths)?;
            println!("subjects={}", subjects.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Pipeline(c) => {
            let cohort = ingest_cohort(&c.cohort)?;
            let out = run_pipeline(&cfg, &cohort, exec)?;
            out.write_all(&dir)?;
            if cfg.probe_dumps {
                for (s, e) in cohort.iter().filter_map(|s| out.estimates.iter().find(|e| e.subject == s.id).map(|e| (s, e))) {
                    dump_arm_probes(s, e, &cfg, &dir.join("probes"))?;
                }
            }
            println!("{} failed={}", out.report.summary_line(), out.failures.len());
            Ok(report_failures(&out.failures))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
