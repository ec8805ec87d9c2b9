//! Command-line interface.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::io::{self, OutputSet, RunConfig, RunManifest};
use crate::metrics::{self, SizeBands};
use crate::partition::{Concentration, FamilyVector, Partition};
use crate::sampler::{chain_rng, prior_recovery_check, run_chains_parallel, Draw, SamplerContext};
use crate::simulation::{run_simulation_study_with, study_dataset, StudyConfig, StudyModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "dfcrp",
    version,
    about = "Cannot-link constrained CRP mixture clustering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the mixture model to a crater CSV and write posterior draws.
    Fit(FitArgs),
    /// Write one simulated dataset with its true partition.
    Simulate(SimulateArgs),
    /// Run the simulation study comparing the constrained and plain models.
    Study(StudyArgs),
    /// Compare a prior-only chain with exact partition probabilities.
    OracleCheck(OracleArgs),
    /// Consensus and per-expert tables from draws.
    Summarize(SummarizeArgs),
    /// ARI and violating-cluster tables from draws.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `chain.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// Total scans per chain.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    scans: Option<u64>,
    /// Scans discarded at the start of each chain.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep every k-th scan after burn-in.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    thin: Option<u64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    chain: ChainArgs,
    /// Annotation CSV.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for `draws.csv` and `manifest.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    chains: u64,
    /// Neighborhood radius in pixels; `inf` disables the restriction.
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Which dataset of the seeded sequence to write.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    chain: ChainArgs,
    /// Output directory for the report tables.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    datasets: Option<usize>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Family id of each item, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 0, 0, 0, 1, 1])]
    families: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 50_000)]
    iterations: usize,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    thin: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Optional CSV copy of the table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DrawInput {
    /// Annotation CSV the draws were fitted to.
    #[arg(long)]
    input: PathBuf,
    /// Draw file written by `fit`.
    #[arg(long)]
    draws: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Accepted for uniformity; these computations use no randomness.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[command(flatten)]
    io: DrawInput,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 5, 6])]
    min_sizes: Vec<usize>,
    /// Diameter band upper limits in pixels.
    #[arg(long, value_delimiter = ',', default_values_t = [50.0, 100.0])]
    bands: Vec<f64>,
    /// Band names, one more than the limits.
    #[arg(long, value_delimiter = ',', default_values_t = ["small".to_string(), "medium".to_string(), "large".to_string()])]
    band_names: Vec<String>,
    /// CSV of reference counts with columns band,min_size,estimate.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    io: DrawInput,
    /// Radii for the violating-cluster curve, in pixels.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 10.0, 25.0, 50.0, 75.0, 100.0, 150.0, 200.0])]
    radii: Vec<f64>,
}

/// Maps an error to its exit status.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParameter { .. }
        | Error::InvalidConcentration(_)
        | Error::EnumerationCap { .. } => EXIT_USAGE,
        Error::Data { .. }
        | Error::Io(_)
        | Error::LengthMismatch { .. }
        | Error::UnknownFamily(_)
        | Error::EmptyFamilies
        | Error::InvalidPartition(_)
        | Error::InvalidPermutation(_) => EXIT_DATA,
        Error::SingularCovariance => EXIT_INTERNAL,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit status. Messages go to `out` and `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let command = argv
        .iter()
        .map(|a| a.to_string_lossy())
        .collect::<Vec<_>>()
        .join(" ");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => fit(a, &command, out, err),
        Command::Simulate(a) => simulate(a, out),
        Command::Study(a) => study(a, &command, out),
        Command::OracleCheck(a) => oracle_check(a, out),
        Command::Summarize(a) => summarize(a, out),
        Command::Metrics(a) => metrics_cmd(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err((context, e)) => {
            let _ = writeln!(err, "error: {context}{e}");
            exit_code(&e)
        }
    }
}

type CmdResult = std::result::Result<(), (String, Error)>;

fn at(path: &Path) -> impl Fn(Error) -> (String, Error) + '_ {
    move |e| (format!("{}: ", path.display()), e)
}

fn bare(e: Error) -> (String, Error) {
    (String::new(), e)
}

/// Loads the configuration file, or parses `default` when none is given,
/// then applies command-line overrides.
fn resolve_config(
    common: &Common,
    chain: Option<&ChainArgs>,
    default: &str,
) -> std::result::Result<RunConfig, (String, Error)> {
    let mut cfg = match &common.config {
        Some(p) => io::load_config(p).map_err(at(p))?,
        None => RunConfig::from_toml(default).map_err(bare)?,
    };
    if let Some(seed) = common.seed {
        cfg.chain.seed = seed;
    }
    if let Some(c) = chain {
        if let Some(s) = c.scans {
            cfg.chain.num_scans = s as usize;
        }
        if let Some(b) = c.burn_in {
            cfg.chain.burn_in_scans = b;
        }
        if let Some(t) = c.thin {
            cfg.chain.thin_every = t as usize;
        }
    }
    cfg.chain.validate().map_err(bare)?;
    Ok(cfg)
}

fn fit(a: FitArgs, command: &str, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let mut cfg = resolve_config(&a.common, Some(&a.chain), "")?;
    if let Some(rho) = a.rho {
        cfg.hyper.rho = rho;
        cfg.chain.hyper.rho = rho;
    }
    cfg.hyper.validate().map_err(bare)?;
    let data = io::parse_crater_csv(&a.input).map_err(at(&a.input))?;
    let ctx = SamplerContext::new(&data.annotations, &data.families, &cfg.hyper).map_err(bare)?;
    let chains = run_chains_parallel(&ctx, &cfg.chain, a.chains as usize).map_err(bare)?;
    let draws: Vec<Draw> = chains
        .iter()
        .flat_map(|c| c.draws.iter().cloned())
        .collect();
    for (i, c) in chains.iter().enumerate() {
        let _ = writeln!(
            err,
            "chain {i}: {} draws, permutation acceptance {:.3}, covariance acceptance {:.3}, alpha acceptance {:.3}",
            c.draws.len(),
            c.counts.permutation_rate(),
            c.counts.covariance_rate(),
            c.counts.alpha_rate()
        );
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: cfg.chain.seed,
        num_chains: a.chains as usize,
        input_sha256: Some(io::sha256_file(&a.input).map_err(at(&a.input))?),
        config: cfg.to_toml(),
    };
    let draws_path = a.out.join("draws.csv");
    let manifest_path = a.out.join("manifest.json");
    let mut set = OutputSet::new();
    let w = set.create(&draws_path).map_err(at(&draws_path))?;
    io::write_draws(w, data.annotations.len(), &draws).map_err(at(&draws_path))?;
    let w = set.create(&manifest_path).map_err(at(&manifest_path))?;
    io::write_manifest(w, &manifest).map_err(at(&manifest_path))?;
    set.commit().map_err(bare)?;
    let _ = writeln!(
        out,
        "wrote {} draws to {}",
        draws.len(),
        draws_path.display()
    );
    Ok(())
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = resolve_config(&a.common, None, STUDY_DEFAULTS)?;
    let data = study_dataset(&cfg.sim, cfg.chain.seed, a.index).map_err(bare)?;
    let mut set = OutputSet::new();
    let w = set.create(&a.out).map_err(at(&a.out))?;
    io::write_labeled_dataset(w, &data).map_err(at(&a.out))?;
    set.commit().map_err(bare)?;
    let _ = writeln!(
        out,
        "wrote {} annotations in {} true clusters to {}",
        data.annotations.len(),
        data.truth.num_clusters(),
        a.out.display()
    );
    Ok(())
}

/// Configuration used by `simulate` and `study` without `--config`.
const STUDY_DEFAULTS: &str = "preset = \"simulation\"\n[chain]\nburn_in_scans = 2000\n";

fn study(a: StudyArgs, command: &str, out: &mut dyn Write) -> CmdResult {
    let mut cfg = resolve_config(&a.common, Some(&a.chain), STUDY_DEFAULTS)?;
    if let Some(n) = a.datasets {
        cfg.study.num_datasets = n;
    }
    let study_cfg = StudyConfig {
        num_datasets: cfg.study.num_datasets,
        sim: cfg.sim.clone(),
        chain: cfg.chain.clone(),
        radius: cfg.study.radius,
        models: cfg.study.models.clone(),
    };
    let report = run_simulation_study_with(&study_cfg, |d| {
        let mut line = format!(
            "dataset {}: n={} K={}",
            d.dataset, d.num_annotations, d.true_clusters
        );
        for f in &d.fits {
            line.push_str(&format!(" {} ARI {:.4}", f.model.label(), f.mean_ari));
        }
        eprintln!("{line}");
    })
    .map_err(bare)?;

    let mut set = OutputSet::new();
    let ari_path = a.out.join("ari_summary.csv");
    let count_path = a.out.join("cluster_counts.csv");
    let per_path = a.out.join("datasets.csv");
    let manifest_path = a.out.join("manifest.json");
    io::write_ari_table(
        set.create(&ari_path).map_err(at(&ari_path))?,
        &report.ari_table(),
    )
    .map_err(at(&ari_path))?;
    io::write_count_table(
        set.create(&count_path).map_err(at(&count_path))?,
        &report.count_table(),
    )
    .map_err(at(&count_path))?;
    io::write_study_datasets(set.create(&per_path).map_err(at(&per_path))?, &report)
        .map_err(at(&per_path))?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: cfg.chain.seed,
        num_chains: 1,
        input_sha256: None,
        config: cfg.to_toml(),
    };
    io::write_manifest(
        set.create(&manifest_path).map_err(at(&manifest_path))?,
        &manifest,
    )
    .map_err(at(&manifest_path))?;
    set.commit().map_err(bare)?;

    for m in &report.models {
        let v = report.ari_values(*m);
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let _ = writeln!(
            out,
            "{}: mean ARI {:.4}, duplicate-cluster fraction {:.4}",
            m.label(),
            mean,
            report.mean_duplicate_fraction(*m)
        );
    }
    if report.models.contains(&StudyModel::Dfcrp) && report.models.contains(&StudyModel::Crp) {
        let (strict, weak) = report.dfcrp_wins();
        let _ = writeln!(
            out,
            "DFCRP ARI > CRP on {strict} of {} datasets (>= on {weak})",
            report.datasets.len()
        );
    }
    Ok(())
}

fn oracle_check(a: OracleArgs, out: &mut dyn Write) -> CmdResult {
    let x = FamilyVector::new(a.families).map_err(bare)?;
    let alpha = Concentration::new(a.alpha).map_err(bare)?;
    let check = prior_recovery_check(
        &x,
        alpha,
        a.iterations,
        a.thin as usize,
        &mut chain_rng(a.seed, 0),
    )
    .map_err(bare)?;

    let half = check.rows.len().div_ceil(2);
    let cell = |i: usize| -> String {
        check.rows.get(i).map_or(String::new(), |r| {
            format!(
                "{:>9} {:>9.3} {:>11.3} {:>10.3}",
                i + 1,
                r.empirical,
                r.theoretical,
                r.theoretical - r.empirical
            )
        })
    };
    let head = format!(
        "{:>9} {:>9} {:>11} {:>10}",
        "Partition", "Empirical", "Theoretical", "Difference"
    );
    let _ = writeln!(out, "{head}   {head}");
    for i in 0..half {
        let _ = writeln!(
            out,
            "{}",
            format!("{}   {}", cell(i), cell(i + half)).trim_end()
        );
    }
    let _ = writeln!(out);
    for (i, r) in check.rows.iter().enumerate() {
        let labels: Vec<String> = r.partition.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(out, "partition {:>2}: {}", i + 1, labels.join(" "));
    }
    let _ = writeln!(
        out,
        "\n{} draws; max |difference| {:.4}; chi-square {:.3} on {} df, p = {:.4}",
        check.draws,
        check.max_abs_difference(),
        check.chi_square,
        check.rows.len().saturating_sub(1),
        check.p_value
    );
    if let Some(path) = &a.out {
        let mut set = OutputSet::new();
        io::write_oracle_table(set.create(path).map_err(at(path))?, &check.rows)
            .map_err(at(path))?;
        set.commit().map_err(bare)?;
    }
    Ok(())
}

fn load_draws(
    d: &DrawInput,
) -> std::result::Result<(io::CraterData, Vec<Partition>), (String, Error)> {
    let data = io::parse_crater_csv(&d.input).map_err(at(&d.input))?;
    let (n, draws) = io::read_draws_file(&d.draws).map_err(at(&d.draws))?;
    if n != data.annotations.len() {
        return Err(at(&d.draws)(Error::LengthMismatch {
            what: "draw labels vs annotations",
            expected: data.annotations.len(),
            found: n,
        }));
    }
    if draws.is_empty() {
        return Err(at(&d.draws)(Error::Data {
            line: 2,
            message: "no draws".into(),
        }));
    }
    let parts = draws.iter().map(Draw::partition).collect();
    Ok((data, parts))
}

fn summarize(a: SummarizeArgs, out: &mut dyn Write) -> CmdResult {
    let (data, draws) = load_draws(&a.io)?;
    let bands = SizeBands::new(
        a.bands.clone(),
        a.band_names.iter().map(|s| s.to_lowercase()).collect(),
    )
    .map_err(bare)?;
    let reference = match &a.reference {
        Some(p) => io::read_consensus_reference(p).map_err(at(p))?,
        None => Default::default(),
    };
    let consensus =
        metrics::consensus_table(&draws, &data.annotations, &a.min_sizes, &bands, &reference)
            .map_err(bare)?;
    let experts =
        metrics::expert_table(&draws, &data.families, &data.expert_names).map_err(bare)?;
    let jac = metrics::mean_jaccard_matrix(&draws, &data.families);
    let excluded_size = data.families.num_distinct().saturating_sub(1).max(1);

    let consensus_path = a.io.out.join("consensus.csv");
    let expert_path = a.io.out.join("experts.csv");
    let jaccard_path = a.io.out.join("jaccard.csv");
    let mut set = OutputSet::new();
    io::write_consensus_table(
        set.create(&consensus_path).map_err(at(&consensus_path))?,
        &consensus,
    )
    .map_err(at(&consensus_path))?;
    io::write_expert_table(
        set.create(&expert_path).map_err(at(&expert_path))?,
        &experts,
        excluded_size,
    )
    .map_err(at(&expert_path))?;
    io::write_jaccard_matrix(
        set.create(&jaccard_path).map_err(at(&jaccard_path))?,
        &data.expert_names,
        &jac,
    )
    .map_err(at(&jaccard_path))?;
    set.commit().map_err(bare)?;
    let _ = writeln!(
        out,
        "summarized {} draws into {}",
        draws.len(),
        a.io.out.display()
    );
    Ok(())
}

fn metrics_cmd(a: MetricsArgs, out: &mut dyn Write) -> CmdResult {
    let (data, draws) = load_draws(&a.io)?;
    let curve =
        metrics::violating_cluster_curve(&draws, &data.annotations, &a.radii).map_err(bare)?;
    let curve_path = a.io.out.join("violations.csv");
    let ari_path = a.io.out.join("ari.csv");
    let mut set = OutputSet::new();
    io::write_violation_curve(
        set.create(&curve_path).map_err(at(&curve_path))?,
        &a.radii,
        &curve,
    )
    .map_err(at(&curve_path))?;
    if let Some(truth) = &data.truth {
        let truth = Partition::new(truth.clone()).map_err(at(&a.io.input))?;
        let mut w = csv::Writer::from_writer(set.create(&ari_path).map_err(at(&ari_path))?);
        let mut total = 0.0;
        let write = |w: &mut csv::Writer<_>, rec: [String; 2]| {
            w.write_record(rec)
                .map_err(|e| at(&ari_path)(Error::Io(e.into())))
        };
        write(&mut w, ["draw".into(), "ari".into()])?;
        for (i, d) in draws.iter().enumerate() {
            let ari = metrics::adjusted_rand_index(d, &truth).map_err(bare)?;
            total += ari;
            write(&mut w, [i.to_string(), format!("{ari:.6}")])?;
        }
        w.flush().map_err(|e| at(&ari_path)(e.into()))?;
        let _ = writeln!(out, "mean ARI {:.4}", total / draws.len() as f64);
    }
    set.commit().map_err(bare)?;
    for (r, p) in a.radii.iter().zip(&curve) {
        let _ = writeln!(out, "rho {r}: violating proportion {p:.4}");
    }
    Ok(())
}
