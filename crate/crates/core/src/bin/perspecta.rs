use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

use perspecta::ingest::{read_ndjson, write_ndjson, IngestStats};
use perspecta::perspectives::{write_csv, FeatureSet, Perspective};
use perspecta::pipeline::{
    self, read_json, Artifacts, Corrected, Identification, OutputFormat, PipelineConfig, CORRECTED_FILE, FEATURES_FILE,
    IDENTIFIED_FILE, RECORDS_FILE, STATS_FILE,
};
use perspecta::synth::{self, SynthConfig};
use perspecta::{Error, Result};

/// Forensic analytics over application access logs.
#[derive(Parser)]
#[command(name = "perspecta", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and sanitize log files into records.ndjson.
    Parse {
        #[command(flatten)]
        opts: Opts,
        /// Print ingest statistics as JSON on stdout.
        #[arg(long)]
        stats: bool,
    },
    /// Build the four perspective tables from parsed records.
    Featurize {
        #[command(flatten)]
        opts: Opts,
    },
    /// Cluster, score and label candidates from features.json.
    Detect {
        #[command(flatten)]
        opts: Opts,
    },
    /// Validate candidates across perspectives, time and offerings.
    Correct {
        #[command(flatten)]
        opts: Opts,
    },
    /// Render the forensic report from corrected.json.
    Report {
        #[command(flatten)]
        opts: Opts,
    },
    /// Every stage in one go, writing only the report.
    Run {
        #[command(flatten)]
        opts: Opts,
    },
    /// Generate a labelled synthetic workload (access.log, truth.json, offerings.toml).
    Synth {
        /// Generator config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Benign traffic only.
        #[arg(long)]
        benign: bool,
    },
}

#[derive(Args, Clone, Default)]
struct Opts {
    /// Log files for parse and run; a stage output directory or file otherwise.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Pipeline config (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Log layout (TOML); the extended layout by default.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// RFC 3339 instant.
    #[arg(long)]
    window_start: Option<DateTime<Utc>>,
    #[arg(long)]
    window_hours: Option<f64>,
    #[arg(long)]
    sub_window_secs: Option<i64>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    offerings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Vec<OutputFormat>,
    #[arg(long)]
    bo_budget_gmm: Option<usize>,
    #[arg(long)]
    bo_budget_iforest: Option<usize>,
}

impl Opts {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if !self.input.is_empty() {
            c.inputs = self.input.clone();
        }
        macro_rules! set {
            ($($f:ident => $g:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    c.$g = Some(v);
                }
            )*};
        }
        set!(schema => schema, window_start => window_start, window_hours => window_hours,
             rules => rules, offerings => offerings, seed => seed);
        if let Some(v) = self.sub_window_secs {
            c.sub_window_secs = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if !self.format.is_empty() {
            c.formats = self.format.clone();
        }
        if let Some(v) = self.bo_budget_gmm {
            c.bo_budget_gmm = v;
        }
        if let Some(v) = self.bo_budget_iforest {
            c.bo_budget_iforest = v;
        }
        Ok(c)
    }
}

/// Find `name` among the inputs: a file with that name, or inside a directory.
fn locate(inputs: &[PathBuf], name: &str) -> Result<PathBuf> {
    for p in inputs {
        if p.is_dir() {
            let f = p.join(name);
            if f.is_file() {
                return Ok(f);
            }
        } else if p.file_name().is_some_and(|f| f == name) {
            return Ok(p.clone());
        }
    }
    if inputs.is_empty() {
        return Err(Error::Config(format!("no --input given; expected a directory containing {name}")));
    }
    Err(Error::Config(format!("{name} not found in --input; run the previous stage first")))
}

fn table_file(p: Perspective, normalized: bool) -> String {
    if normalized {
        format!("{}_normalized.csv", p.as_str())
    } else {
        format!("{}.csv", p.as_str())
    }
}

fn parse(opts: &Opts, print_stats: bool) -> Result<()> {
    let cfg = opts.config()?;
    let (records, stats) = pipeline::ingest_stage(&cfg)?;
    let mut out = Artifacts::stage(&cfg.out)?;
    write_ndjson(&out.path(RECORDS_FILE), &records)?;
    out.write_json(STATS_FILE, &stats)?;
    out.commit()?;
    if print_stats {
        println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    }
    Ok(())
}

fn featurize(opts: &Opts) -> Result<()> {
    let cfg = opts.config()?;
    let records = read_ndjson(&locate(&cfg.inputs, RECORDS_FILE)?)?;
    let features = pipeline::featurize_stage(&records, &cfg)?;
    let mut out = Artifacts::stage(&cfg.out)?;
    for p in Perspective::ALL {
        write_csv(features.raw(p), &out.path(&table_file(p, false)))?;
        write_csv(features.normalized(p), &out.path(&table_file(p, true)))?;
    }
    out.write_json(FEATURES_FILE, &features)?;
    out.commit()?;
    Ok(())
}

fn detect(opts: &Opts) -> Result<()> {
    let cfg = opts.config()?;
    cfg.validate()?;
    let rules = cfg.load_rules()?;
    let features: FeatureSet = read_json(&locate(&cfg.inputs, FEATURES_FILE)?, "feature set")?;
    let id = pipeline::identify_stage(&features, &rules, &cfg)?;
    let mut out = Artifacts::stage(&cfg.out)?;
    out.write_json(IDENTIFIED_FILE, &id)?;
    out.commit()?;
    Ok(())
}

fn correct(opts: &Opts) -> Result<()> {
    let cfg = opts.config()?;
    cfg.validate()?;
    let rules = cfg.load_rules()?;
    let offerings = cfg.load_offerings()?;
    let records = read_ndjson(&locate(&cfg.inputs, RECORDS_FILE)?)?;
    let features: FeatureSet = read_json(&locate(&cfg.inputs, FEATURES_FILE)?, "feature set")?;
    let id: Identification = read_json(&locate(&cfg.inputs, IDENTIFIED_FILE)?, "candidates")?;
    let stats: Option<IngestStats> = match locate(&cfg.inputs, STATS_FILE) {
        Ok(p) => Some(read_json(&p, "ingest stats")?),
        Err(_) => None,
    };
    let corrected = pipeline::correct_stage(&records, &features, &id, &rules, &offerings, &cfg, stats)?;
    let mut out = Artifacts::stage(&cfg.out)?;
    out.write_json(CORRECTED_FILE, &corrected)?;
    out.commit()?;
    Ok(())
}

fn report(opts: &Opts) -> Result<()> {
    let cfg = opts.config()?;
    let corrected: Corrected = read_json(&locate(&cfg.inputs, CORRECTED_FILE)?, "corrected candidates")?;
    let report = pipeline::report_stage(corrected);
    let mut out = Artifacts::stage(&cfg.out)?;
    pipeline::write_report(&report, &cfg.formats, &mut out)?;
    out.commit()?;
    print!("{}", report.render_text());
    Ok(())
}

fn run(opts: &Opts) -> Result<()> {
    let cfg = opts.config()?;
    let result = pipeline::run(&cfg)?;
    let mut out = Artifacts::stage(&cfg.out)?;
    pipeline::write_report(&result.report, &cfg.formats, &mut out)?;
    out.commit()?;
    print!("{}", result.report.render_text());
    Ok(())
}

fn synthesize(config: Option<&Path>, seed: Option<u64>, out: &Path, benign: bool) -> Result<()> {
    let mut cfg = match config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    if benign {
        cfg = cfg.benign();
    }
    let s = synth::generate(&cfg)?;
    let mut staged = Artifacts::stage(out)?;
    s.write_into(&mut staged)?;
    staged.commit()?;
    eprintln!("wrote {} records to {}", s.records.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Parse { opts, stats } => parse(opts, *stats),
        Command::Featurize { opts } => featurize(opts),
        Command::Detect { opts } => detect(opts),
        Command::Correct { opts } => correct(opts),
        Command::Report { opts } => report(opts),
        Command::Run { opts } => run(opts),
        Command::Synth {
            config,
            seed,
            out,
            benign,
        } => synthesize(config.as_deref(), *seed, out, *benign),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
