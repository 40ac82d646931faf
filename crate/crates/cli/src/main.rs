use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use databias::data::{fetch_dataset, load_csv, Benchmark, DataError, FetchOptions, FetchSource, Schema};
use databias::detect::{build_profile, compare_profiles, radar_svg, CompareThresholds, DataBiasProfile, DetectError, ProfileConfig};
use databias::experiment::{emit_table, run_to_dir, ExperimentConfig, ExperimentError, RunOptions, TableFormat};
use databias::inject::{inject_all, BiasSpec, InjectError};
use databias::model::{ModelKind, TrainConfig};

/// Inject, detect and measure data bias in tabular classification datasets.
#[derive(Debug, Parser)]
#[command(name = "databias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download a benchmark dataset and write a normalized CSV plus schema files.
    Fetch {
        /// Dataset name: adult, german, compas or crime.
        dataset: Benchmark,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Read the raw upstream files from this directory instead of downloading.
        #[arg(long, value_name = "DIR")]
        source_dir: Option<PathBuf>,
        /// Pin a raw file's SHA-256, as FILE=HEX. Repeatable.
        #[arg(long, value_name = "FILE=HEX", value_parser = parse_checksum)]
        sha256: Vec<(String, String)>,
        /// Network timeout in seconds.
        #[arg(long, default_value_t = 60)]
        timeout: u64,
        /// Rewrite outputs even if they already exist.
        #[arg(long)]
        force: bool,
    },
    /// Apply one bias injection to every row of a dataset.
    Inject {
        /// Input CSV.
        #[arg(long)]
        data: PathBuf,
        /// Schema JSON for the input CSV.
        #[arg(long)]
        schema: PathBuf,
        /// Bias as NAME:VALUE: underrep:U, flip:F, proxy-add:RHO or proxy-drop:K.
        #[arg(long)]
        bias: BiasSpec,
        /// Random seed.
        #[arg(long)]
        seed: u64,
        /// Output directory; receives data.csv, schema.json and report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a Data Bias Profile (RD, SD, sAUC).
    Profile {
        /// Input CSV.
        #[arg(long)]
        data: PathBuf,
        /// Schema JSON for the input CSV.
        #[arg(long)]
        schema: PathBuf,
        /// Expected sensitive column; must match the schema.
        #[arg(long)]
        sensitive: Option<String>,
        /// Model family: logistic or forest.
        #[arg(long, default_value = "logistic")]
        model: ModelKind,
        /// Random seed for splitting and training.
        #[arg(long)]
        seed: u64,
        /// Dataset identifier stored in the profile (default: CSV file stem).
        #[arg(long)]
        id: Option<String>,
        /// Output profile JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write a radar chart SVG to this path.
        #[arg(long, value_name = "PATH")]
        svg: Option<PathBuf>,
    },
    /// Run a bias-grid experiment from a JSON config.
    Experiment {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Results directory.
        #[arg(long)]
        out: PathBuf,
        /// Run repetitions one at a time instead of in parallel.
        #[arg(long)]
        serial: bool,
    },
    /// Compare two profiles.
    Compare {
        /// The two profile JSON files, first then second.
        #[arg(long, num_args = 2, value_names = ["FIRST", "SECOND"], required = true)]
        profiles: Vec<PathBuf>,
        /// Output diff JSON.
        #[arg(long)]
        out: PathBuf,
        /// sAUC gap above which a proxy is called stronger or weaker.
        #[arg(long, default_value_t = CompareThresholds::default().sauc_gap)]
        sauc_gap: f64,
        /// SD gap above which label bias is called higher or lower.
        #[arg(long, default_value_t = CompareThresholds::default().sd_gap)]
        sd_gap: f64,
        /// |RD| gap above which imbalance is called higher or lower.
        #[arg(long, default_value_t = CompareThresholds::default().rd_gap)]
        rd_gap: f64,
    },
}

fn parse_checksum(text: &str) -> Result<(String, String), String> {
    let (file, hex) = text.split_once('=').ok_or("expected FILE=HEX")?;
    if hex.len() != 64 || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err("expected a 64-digit hex SHA-256".into());
    }
    Ok((file.to_string(), hex.to_ascii_lowercase()))
}

/// Exit status classes: 2 usage, 3 bad data, 4 runtime failure.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Network(_) | DataError::ChecksumMismatch { .. } | DataError::Io(_) => Failure::Runtime(e.to_string()),
            DataError::UnknownDataset(_) | DataError::InvalidFractions(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<InjectError> for Failure {
    fn from(e: InjectError) -> Self {
        match e {
            InjectError::InvalidParameter { .. } | InjectError::Malformed(_) => Failure::Usage(e.to_string()),
            InjectError::Data(d) => d.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<DetectError> for Failure {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Model { .. } => Failure::Runtime(e.to_string()),
            DetectError::Data(d) => d.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Model { .. } | ExperimentError::Io { .. } => Failure::Runtime(e.to_string()),
            ExperimentError::Data(d) => d.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load(data: &Path, schema: &Path) -> Result<(Schema, databias::data::TabularDataset), Failure> {
    let schema = Schema::load(schema)?;
    let dataset = load_csv(data, &schema)?;
    if dataset.dropped_rows() > 0 {
        log::warn!("dropped {} rows with a missing target or sensitive value", dataset.dropped_rows());
    }
    Ok((schema, dataset))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fetch {
            dataset,
            out,
            source_dir,
            sha256,
            timeout,
            force,
        } => {
            let options = FetchOptions {
                source: source_dir.map_or(FetchSource::Remote, FetchSource::LocalDir),
                checksums: sha256.into_iter().collect::<BTreeMap<_, _>>(),
                timeout: Duration::from_secs(timeout),
                force,
            };
            let outcome = fetch_dataset(dataset, &out, &options)?;
            let verb = if outcome.skipped { "skipped (exists)" } else { "wrote" };
            for path in std::iter::once(&outcome.data_path).chain(&outcome.schema_paths) {
                println!("{verb} {}", path.display());
            }
        }
        Command::Inject {
            data,
            schema,
            bias,
            seed,
            out,
        } => {
            let (_, dataset) = load(&data, &schema)?;
            let (biased, report) = inject_all(&dataset, &bias, seed)?;
            fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            biased.save_csv(&out.join("data.csv"))?;
            biased.schema().save(&out.join("schema.json"))?;
            write(
                &out.join("report.json"),
                &serde_json::to_string_pretty(&report).expect("report serializes"),
            )?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }
        Command::Profile {
            data,
            schema,
            sensitive,
            model,
            seed,
            id,
            out,
            svg,
        } => {
            let (schema, dataset) = load(&data, &schema)?;
            if let Some(name) = sensitive {
                let actual = &schema.sensitive().name;
                if *actual != name {
                    return Err(Failure::Data(format!(
                        "column `{name}` is not the sensitive column of the schema (found `{actual}`)"
                    )));
                }
            }
            let id = id.unwrap_or_else(|| {
                data.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "dataset".into())
            });
            let config = ProfileConfig {
                model: match model {
                    ModelKind::Logistic => TrainConfig::logistic(),
                    ModelKind::Forest => TrainConfig::forest(),
                },
                ..ProfileConfig::default()
            };
            let profile = build_profile(&dataset, &id, &config, seed)?;
            write(&out, &profile.to_json())?;
            if let Some(svg) = svg {
                write(&svg, &radar_svg(&[(&id, &profile)]))?;
            }
            println!(
                "rd={:.4} sd={:.4} sauc={:.4}",
                profile.rd, profile.sd, profile.sauc
            );
        }
        Command::Experiment { config, out, serial } => {
            let config = ExperimentConfig::load(&config)?;
            let dataset = config.load_dataset()?;
            let result = run_to_dir(&config, &dataset, &out, RunOptions { parallel: !serial })?;
            print!("{}", emit_table(&result, TableFormat::Text));
            for s in &result.substitutions {
                println!("substituted {s}");
            }
        }
        Command::Compare {
            profiles,
            out,
            sauc_gap,
            sd_gap,
            rd_gap,
        } => {
            let first = DataBiasProfile::from_json(&read(&profiles[0])?)?;
            let second = DataBiasProfile::from_json(&read(&profiles[1])?)?;
            let diff = compare_profiles(&first, &second, CompareThresholds { sauc_gap, sd_gap, rd_gap })?;
            let json = serde_json::to_string_pretty(&diff).expect("diff serializes");
            write(&out, &json)?;
            println!("{}", diff.classification.join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn every_flag_is_documented_in_help() {
        let mut root = Cli::command();
        root.build();
        for sub in root.get_subcommands_mut() {
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                let id = arg.get_id().as_str();
                if id == "help" || id == "version" {
                    continue;
                }
                assert!(
                    arg.get_help().is_some_and(|h| !h.to_string().trim().is_empty()),
                    "{} --{id} has no help text",
                    sub.get_name()
                );
                let shown = match arg.get_long() {
                    Some(long) => format!("--{long}"),
                    None => format!("<{}>", id.to_uppercase()),
                };
                assert!(help.contains(&shown), "{} help lacks {shown}", sub.get_name());
            }
        }
    }

    #[test]
    fn checksum_flag_parses() {
        let hex = "ab".repeat(32);
        assert_eq!(parse_checksum(&format!("adult.data={hex}")).unwrap().1, hex);
        assert!(parse_checksum("adult.data=xyz").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
