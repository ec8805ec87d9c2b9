//! File formats: annotation CSVs, configuration, draw files, run manifests
//! and the report tables.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{ConsensusRow, ExpertSummary};
use crate::mixture::{Annotation, Hyperparams};
use crate::partition::{FamilyVector, Partition};
use crate::sampler::{ChainConfig, Draw, OracleRow};
use crate::simulation::{AriRow, CountRow, LabeledDataset, SimConfig, StudyModel, StudyReport};

/// Annotations read from a CSV together with their families.
#[derive(Clone, Debug, PartialEq)]
pub struct CraterData {
    pub annotations: Vec<Annotation>,
    pub families: FamilyVector,
    /// Expert id of each dense family index.
    pub expert_names: Vec<String>,
    /// Values of an optional `truth` column.
    pub truth: Option<Vec<usize>>,
}

fn data_err(line: u64, message: impl Into<String>) -> Error {
    Error::Data {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => data_err(line, format!("{other:?}")),
    }
}

/// Reads annotations from CSV with columns `expert_id, x_px, y_px,
/// diameter_px` in any order. Extra columns are ignored except `truth`.
pub fn parse_crater_reader<R: Read>(reader: R) -> Result<CraterData> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(1, format!("missing column `{name}`")))
    };
    let (ce, cx, cy, cd) = (
        column("expert_id")?,
        column("x_px")?,
        column("y_px")?,
        column("diameter_px")?,
    );
    let ct = headers.iter().position(|h| h == "truth");

    let mut experts = Vec::new();
    let mut rows = Vec::new();
    let mut truth = ct.map(|_| Vec::new());
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let number = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            let v: f64 = raw
                .parse()
                .map_err(|_| data_err(line, format!("`{name}` is not a number: {raw:?}")))?;
            if !v.is_finite() {
                return Err(data_err(line, format!("`{name}` must be finite")));
            }
            Ok(v)
        };
        let expert = record.get(ce).unwrap_or("").to_string();
        if expert.is_empty() {
            return Err(data_err(line, "empty `expert_id`"));
        }
        let (x, y, d) = (
            number(cx, "x_px")?,
            number(cy, "y_px")?,
            number(cd, "diameter_px")?,
        );
        if d <= 0.0 {
            return Err(data_err(
                line,
                format!("`diameter_px` must be positive, got {d}"),
            ));
        }
        if let (Some(col), Some(t)) = (ct, truth.as_mut()) {
            let raw = record.get(col).unwrap_or("");
            t.push(
                raw.parse()
                    .map_err(|_| data_err(line, format!("`truth` is not a label: {raw:?}")))?,
            );
        }
        experts.push(expert);
        rows.push((x, y, d.ln()));
    }
    if rows.is_empty() {
        return Err(data_err(1, "no annotation rows"));
    }
    let (families, expert_names) = FamilyVector::from_labels(&experts)?;
    let annotations = rows
        .into_iter()
        .zip(families.as_slice())
        .map(|((x, y, ld), &family)| Annotation { family, x, y, ld })
        .collect();
    Ok(CraterData {
        annotations,
        families,
        expert_names,
        truth,
    })
}

pub fn parse_crater_csv(path: &Path) -> Result<CraterData> {
    parse_crater_reader(BufReader::new(File::open(path)?))
}

/// Writes a simulated dataset in the annotation CSV format with an extra
/// `truth` column. Expert `j` is written as `E{j+1}`.
pub fn write_labeled_dataset<W: Write>(out: W, data: &LabeledDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["expert_id", "x_px", "y_px", "diameter_px", "truth"])
        .map_err(csv_err)?;
    for (a, t) in data.annotations.iter().zip(data.truth.labels()) {
        w.write_record([
            format!("E{}", a.family + 1),
            format!("{:.17e}", a.x),
            format!("{:.17e}", a.y),
            format!("{:.17e}", a.diameter()),
            t.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_labeled_dataset`].
pub fn read_labeled_dataset(path: &Path) -> Result<(LabeledDataset, CraterData)> {
    let data = parse_crater_csv(path)?;
    let truth = data
        .truth
        .clone()
        .ok_or_else(|| data_err(1, "missing column `truth`"))?;
    let dataset = LabeledDataset {
        annotations: data.annotations.clone(),
        truth: Partition::new(truth)?.canonical(),
    };
    Ok((dataset, data))
}

/// Named starting point for the model constants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Full,
    Reduced,
    Simulation,
}

impl Preset {
    pub fn hyperparams(self) -> Hyperparams {
        match self {
            Preset::Full => Hyperparams::full_image(),
            Preset::Reduced => Hyperparams::reduced(),
            Preset::Simulation => Hyperparams::simulation(),
        }
    }
}

/// Settings of the simulation study section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub num_datasets: usize,
    pub radius: f64,
    pub models: Vec<StudyModel>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            num_datasets: 50,
            radius: 75.0,
            models: StudyModel::ALL.to_vec(),
        }
    }
}

/// Everything a configuration file can set.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub hyper: Hyperparams,
    pub chain: ChainConfig,
    pub sim: SimConfig,
    pub study: StudySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_toml("").expect("empty config is valid")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    preset: Preset,
    #[serde(default)]
    hyper: toml::Table,
    #[serde(default)]
    chain: ChainConfig,
    #[serde(default)]
    sim: SimConfig,
    #[serde(default)]
    study: StudySection,
}

impl RunConfig {
    /// Parses a TOML configuration. Keys in `[hyper]` override the preset;
    /// unknown keys anywhere are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let mut base = toml::Table::try_from(raw.preset.hyperparams())
            .map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in raw.hyper {
            base.insert(k, v);
        }
        let hyper: Hyperparams = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[hyper] {}", e.message())))?;
        hyper.validate()?;
        let chain = ChainConfig {
            hyper: hyper.clone(),
            ..raw.chain
        };
        chain.validate()?;
        raw.sim.validate()?;
        if !(raw.study.radius >= 0.0) {
            return Err(Error::param("study.radius", "must be non-negative or inf"));
        }
        Ok(Self {
            preset: raw.preset,
            hyper,
            chain,
            sim: raw.sim,
            study: raw.study,
        })
    }

    /// Canonical TOML rendering of the resolved configuration.
    pub fn to_toml(&self) -> String {
        let mut root = toml::Table::new();
        root.insert(
            "preset".into(),
            toml::Value::try_from(self.preset).expect("serializable"),
        );
        root.insert(
            "hyper".into(),
            toml::Value::try_from(&self.hyper).expect("serializable"),
        );
        root.insert(
            "chain".into(),
            toml::Value::try_from(&self.chain).expect("serializable"),
        );
        root.insert(
            "sim".into(),
            toml::Value::try_from(&self.sim).expect("serializable"),
        );
        root.insert(
            "study".into(),
            toml::Value::try_from(&self.study).expect("serializable"),
        );
        toml::to_string(&root).expect("serializable")
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_toml(&fs::read_to_string(path)?)
}

const DRAWS_MAGIC: &str = "# dfcrp-draws n=";
const DRAWS_HEADER: &str = "chain_id,scan_index,alpha,labels";

/// Writes draws over `n` items, one per line.
pub fn write_draws<W: Write>(mut out: W, n: usize, draws: &[Draw]) -> Result<()> {
    writeln!(out, "{DRAWS_MAGIC}{n}")?;
    writeln!(out, "{DRAWS_HEADER}")?;
    let mut line = String::new();
    for d in draws {
        if d.labels.len() != n {
            return Err(Error::LengthMismatch {
                what: "draw labels",
                expected: n,
                found: d.labels.len(),
            });
        }
        line.clear();
        use std::fmt::Write as _;
        write!(line, "{},{},{:.16e},", d.chain_id, d.scan_index, d.alpha).expect("string write");
        for (i, l) in d.labels.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{l}").expect("string write");
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a draw file, returning the item count and the draws.
pub fn read_draws<R: Read>(input: R) -> Result<(usize, Vec<Draw>)> {
    let mut lines = BufReader::new(input).lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let n: usize = first
        .strip_prefix(DRAWS_MAGIC)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| data_err(1, "expected draw file header `# dfcrp-draws n=<count>`"))?;
    let second = lines.next().transpose()?.unwrap_or_default();
    if second.trim() != DRAWS_HEADER {
        return Err(data_err(
            2,
            format!("expected column header `{DRAWS_HEADER}`"),
        ));
    }
    let mut draws = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i as u64 + 3;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, ',').collect();
        if fields.len() != 4 {
            return Err(data_err(lineno, "expected 4 comma-separated fields"));
        }
        let parse_usize = |s: &str, what: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| data_err(lineno, format!("bad {what}: {s:?}")))
        };
        let chain_id = parse_usize(fields[0], "chain_id")?;
        let scan_index = parse_usize(fields[1], "scan_index")?;
        let alpha: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| data_err(lineno, format!("bad alpha: {:?}", fields[2])))?;
        let labels = fields[3]
            .split_whitespace()
            .map(|s| parse_usize(s, "label"))
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != n {
            return Err(data_err(
                lineno,
                format!("expected {n} labels, found {}", labels.len()),
            ));
        }
        draws.push(Draw {
            chain_id,
            scan_index,
            alpha,
            labels,
        });
    }
    Ok((n, draws))
}

pub fn read_draws_file(path: &Path) -> Result<(usize, Vec<Draw>)> {
    read_draws(File::open(path)?)
}

/// Inputs needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub num_chains: usize,
    pub input_sha256: Option<String>,
    /// Resolved configuration in TOML.
    pub config: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_manifest<W: Write>(mut out: W, manifest: &RunManifest) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, manifest).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

/// Output files written to temporaries and moved into place together on
/// [`OutputSet::commit`]. Dropping an uncommitted set removes the
/// temporaries.
#[derive(Debug, Default)]
pub struct OutputSet {
    pending: Vec<(PathBuf, PathBuf)>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&mut self, path: &Path) -> Result<BufWriter<File>> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(format!(".partial-{}", std::process::id()));
        let tmp = PathBuf::from(tmp);
        let file = File::create(&tmp)?;
        self.pending.push((tmp, path.to_path_buf()));
        Ok(BufWriter::new(file))
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let pending = std::mem::take(&mut self.pending);
        let mut done = Vec::new();
        for (tmp, dest) in pending {
            fs::rename(&tmp, &dest)?;
            done.push(dest);
        }
        Ok(done)
    }
}

impl Drop for OutputSet {
    fn drop(&mut self) {
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
    }
}

fn table_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::Writer::from_writer(out)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// Posterior-mean ARI summaries: one row per model plus the paired
/// difference.
pub fn write_ari_table<W: Write>(out: W, rows: &[AriRow]) -> Result<()> {
    let mut w = table_writer(out);
    w.write_record(["type", "minimum", "q25", "mean", "q75", "maximum"])
        .map_err(csv_err)?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.label.clone(),
            format!("{:.3}", s.min),
            format!("{:.3}", s.q25),
            format!("{:.3}", s.mean),
            format!("{:.3}", s.q75),
            format!("{:.3}", s.max),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Average posterior cluster counts by minimum cluster size.
pub fn write_count_table<W: Write>(out: W, rows: &[CountRow]) -> Result<()> {
    let mut w = table_writer(out);
    let mut header = vec!["type".to_string()];
    header.extend((1..=crate::simulation::MAX_MIN_SIZE).map(|m| format!("size_{m}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(r.counts.iter().map(|c| format!("{c:.3}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

/// Per-dataset, per-model study results.
pub fn write_study_datasets<W: Write>(out: W, report: &StudyReport) -> Result<()> {
    let mut w = table_writer(out);
    let mut header: Vec<String> = [
        "dataset",
        "model",
        "num_annotations",
        "true_clusters",
        "mean_ari",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=crate::simulation::MAX_MIN_SIZE).map(|m| format!("count_size_{m}")));
    header.extend(["duplicate_fraction", "permutation_acceptance", "alpha_mean"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for d in &report.datasets {
        for f in &d.fits {
            let mut rec = vec![
                d.dataset.to_string(),
                f.model.label().to_string(),
                d.num_annotations.to_string(),
                d.true_clusters.to_string(),
                format!("{:.6}", f.mean_ari),
            ];
            rec.extend(f.cluster_counts.iter().map(|c| format!("{c:.4}")));
            rec.push(format!("{:.6}", f.duplicate_fraction));
            rec.push(format!("{:.4}", f.permutation_acceptance));
            rec.push(format!("{:.4}", f.alpha_mean));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    finish(w)
}

/// At most two decimals, without trailing zeros.
fn short(v: f64) -> String {
    format!("{}", (v * 100.0).round() / 100.0)
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Consensus counts by size band and minimum cluster size, with an optional
/// reference estimate column.
pub fn write_consensus_table<W: Write>(out: W, rows: &[ConsensusRow]) -> Result<()> {
    let mut w = table_writer(out);
    w.write_record(["row", "dbscan_est", "dfcrp_mean", "ci_lower", "ci_upper"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            format!("{} Size >= {} Clusters", capitalized(&r.band), r.min_size),
            r.reference.map_or(String::new(), |v| format!("{v}")),
            format!("{:.2}", r.count.mean),
            short(r.count.lower),
            short(r.count.upper),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Reads reference consensus estimates from CSV with columns `band,
/// min_size, estimate`.
pub fn read_consensus_reference(path: &Path) -> Result<HashMap<(String, usize), f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let mut out = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(data_err(line, "expected columns band,min_size,estimate"));
        }
        let m: usize = record[1]
            .parse()
            .map_err(|_| data_err(line, "bad min_size"))?;
        let v: f64 = record[2]
            .parse()
            .map_err(|_| data_err(line, "bad estimate"))?;
        out.insert((record[0].to_lowercase(), m), v);
    }
    Ok(out)
}

/// Per-expert summaries. `excluded_size` names the near-complete cluster
/// size column.
pub fn write_expert_table<W: Write>(
    out: W,
    rows: &[ExpertSummary],
    excluded_size: usize,
) -> Result<()> {
    let mut w = table_writer(out);
    let ex = format!("size_{excluded_size}");
    w.write_record([
        "expert".to_string(),
        "count".to_string(),
        "jaccard".to_string(),
        "size_1".to_string(),
        "size_1_ci_lower".to_string(),
        "size_1_ci_upper".to_string(),
        ex.clone(),
        format!("{ex}_ci_lower"),
        format!("{ex}_ci_upper"),
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.expert.clone(),
            r.count.to_string(),
            format!("{:.2}", r.jaccard),
            format!("{:.3}", r.singleton.mean),
            format!("{:.3}", r.singleton.lower),
            format!("{:.3}", r.singleton.upper),
            format!("{:.3}", r.excluded.mean),
            format!("{:.3}", r.excluded.lower),
            format!("{:.3}", r.excluded.upper),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Pairwise Jaccard matrix with expert names on both axes.
pub fn write_jaccard_matrix<W: Write>(out: W, names: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    let mut w = table_writer(out);
    let mut header = vec!["expert".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in names.iter().zip(matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| format!("{v:.4}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

/// Violating-cluster proportion against radius.
pub fn write_violation_curve<W: Write>(out: W, radii: &[f64], proportions: &[f64]) -> Result<()> {
    let mut w = table_writer(out);
    w.write_record(["rho", "violating_proportion"])
        .map_err(csv_err)?;
    for (r, p) in radii.iter().zip(proportions) {
        w.write_record([format!("{r}"), format!("{p:.6}")])
            .map_err(csv_err)?;
    }
    finish(w)
}

/// Empirical and theoretical partition probabilities; the difference column
/// is theoretical minus empirical.
pub fn write_oracle_table<W: Write>(out: W, rows: &[OracleRow]) -> Result<()> {
    let mut w = table_writer(out);
    w.write_record([
        "partition",
        "labels",
        "empirical",
        "theoretical",
        "difference",
    ])
    .map_err(csv_err)?;
    for (i, r) in rows.iter().enumerate() {
        let labels: Vec<String> = r.partition.iter().map(|l| l.to_string()).collect();
        w.write_record([
            (i + 1).to_string(),
            labels.join(" "),
            format!("{:.4}", r.empirical),
            format!("{:.4}", r.theoretical),
            format!("{:.4}", r.theoretical - r.empirical),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_logs_diameter() {
        let csv = "expert_id,x_px,y_px,diameter_px\nA,1.5,-2,18\nB,3,4,20\nA,0,0,25\n";
        let d = parse_crater_reader(csv.as_bytes()).unwrap();
        assert_eq!(d.annotations.len(), 3);
        assert!((d.annotations[0].ld - 2.8904).abs() < 1e-4);
        assert_eq!(d.families.as_slice(), &[0, 1, 0]);
        assert_eq!(d.expert_names, vec!["A", "B"]);
        assert_eq!(d.annotations[0].y, -2.0);
        assert!(d.truth.is_none());
    }

    #[test]
    fn column_order_and_extras_are_free() {
        let csv = "note,diameter_px,y_px,expert_id,x_px\nhi,30,1,Z,2\n";
        let d = parse_crater_reader(csv.as_bytes()).unwrap();
        assert_eq!(d.annotations[0].x, 2.0);
        assert_eq!(d.expert_names, vec!["Z"]);
    }

    #[test]
    fn errors_name_the_line() {
        let zero = "expert_id,x_px,y_px,diameter_px\nA,1,2,18\nA,1,2,0\n";
        match parse_crater_reader(zero.as_bytes()) {
            Err(Error::Data { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("diameter_px"));
            }
            other => panic!("{other:?}"),
        }
        let text = "expert_id,x_px,y_px,diameter_px\nA,one,2,18\n";
        assert!(matches!(
            parse_crater_reader(text.as_bytes()),
            Err(Error::Data { line: 2, .. })
        ));
        let missing = "expert_id,x_px,diameter_px\nA,1,18\n";
        match parse_crater_reader(missing.as_bytes()) {
            Err(Error::Data { message, .. }) => assert!(message.contains("y_px")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn eleven_experts_get_dense_ids() {
        let mut csv = String::from("expert_id,x_px,y_px,diameter_px\n");
        for i in 0..33 {
            csv.push_str(&format!("X{},{i},0,20\n", i % 11));
        }
        let d = parse_crater_reader(csv.as_bytes()).unwrap();
        assert_eq!(d.families.num_slots(), 11);
        assert!(d.families.family_sizes().iter().all(|&s| s == 3));
    }

    #[test]
    fn empty_config_gives_full_image_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.hyper, Hyperparams::full_image());
        assert_eq!(c.hyper.rho, 75.0);
        assert_eq!(c.chain.num_scans, 10_000);
        assert_eq!(c.chain.burn_in_scans, 5_000);
    }

    #[test]
    fn reduced_preset_and_overrides() {
        let c = RunConfig::from_toml("preset = \"reduced\"\n[hyper]\nrho = inf\n").unwrap();
        assert_eq!(c.hyper.mu0, [2050.0, -150.0, 3.2]);
        assert_eq!(c.hyper.sigma0, [200.0 * 200.0, 110.0 * 110.0, 0.25]);
        assert_eq!((c.hyper.a_alpha, c.hyper.b_alpha), (1.0, 0.01));
        assert!(c.hyper.rho.is_infinite());
        assert_eq!(c.chain.hyper, c.hyper);
    }

    #[test]
    fn bad_configs_rejected() {
        for text in [
            "[hyper]\ntau_d = -1.0\n",
            "[hyper]\nbogus = 1\n",
            "[chain]\nnum_scans = \"many\"\n",
            "colour = 3\n",
            "preset = \"huge\"\n",
            "[chain]\nthin_every = 0\n",
        ] {
            assert!(RunConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = RunConfig::from_toml(
            "preset = \"simulation\"\n[chain]\nseed = 9\n[study]\nradius = inf\n",
        )
        .unwrap();
        let again = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn draws_round_trip() {
        let draws: Vec<Draw> = (0..1000)
            .map(|i| Draw {
                chain_id: i % 3,
                scan_index: i * 10,
                alpha: 1.0 / (i as f64 + 0.3),
                labels: vec![0, 1, (i % 2), 2],
            })
            .collect();
        let mut buf = Vec::new();
        write_draws(&mut buf, 4, &draws).unwrap();
        let (n, back) = read_draws(buf.as_slice()).unwrap();
        assert_eq!(n, 4);
        assert_eq!(back, draws);

        let mut empty = Vec::new();
        write_draws(&mut empty, 4, &[]).unwrap();
        assert_eq!(String::from_utf8(empty.clone()).unwrap().lines().count(), 2);
        assert!(read_draws(empty.as_slice()).unwrap().1.is_empty());
    }

    #[test]
    fn draw_length_mismatch_reports_line() {
        let text =
            "# dfcrp-draws n=3\nchain_id,scan_index,alpha,labels\n0,1,1e0,0 1 2\n0,2,1e0,0 1\n";
        assert!(matches!(
            read_draws(text.as_bytes()),
            Err(Error::Data { line: 4, .. })
        ));
        assert!(read_draws("garbage\n".as_bytes()).is_err());
    }

    #[test]
    fn uncommitted_outputs_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        {
            let mut set = OutputSet::new();
            let mut f = set.create(&path).unwrap();
            writeln!(f, "partial").unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        let mut set = OutputSet::new();
        writeln!(set.create(&path).unwrap(), "done").unwrap();
        set.commit().unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "done\n");
    }
}
