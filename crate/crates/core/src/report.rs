//! Experiment manifests, comparison tables and curve data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayConfig, SamplingParams};
use crate::metrics::MetricReport;
use crate::prompt::StylePreset;
use crate::util::sha256_hex;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Argument(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn file_sha256(path: &Path) -> Result<String, ReportError> {
    Ok(sha256_hex(fs::read(path).map_err(io_err(path))?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresetRecord {
    pub name: String,
    pub fingerprint: String,
}

impl From<&StylePreset> for PresetRecord {
    fn from(p: &StylePreset) -> Self {
        PresetRecord {
            name: p.label().to_string(),
            fingerprint: p.fingerprint(),
        }
    }
}

/// Endpoint settings that influence outputs. Credentials, the name of the
/// credential variable, cache location and retry policy are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayFingerprint {
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingParams>,
}

/// Remove `user:password@` from a URL.
fn strip_userinfo(url: &str) -> String {
    let Some(scheme_end) = url.find("://") else {
        return url.to_string();
    };
    let rest = &url[scheme_end + 3..];
    let authority_end = rest.find('/').unwrap_or(rest.len());
    match rest[..authority_end].rfind('@') {
        Some(at) => format!("{}{}", &url[..scheme_end + 3], &rest[at + 1..]),
        None => url.to_string(),
    }
}

impl GatewayFingerprint {
    pub fn from_gateway(
        gateway: &crate::gateway::Gateway,
        model_name: &str,
        sampling: &SamplingParams,
    ) -> Self {
        GatewayFingerprint {
            endpoint: strip_userinfo(&gateway.describe()),
            qa_endpoint: None,
            model_name: Some(model_name.to_string()),
            sampling: Some(sampling.clone()),
        }
    }

    pub fn new(
        config: &GatewayConfig,
        model_name: Option<&str>,
        sampling: Option<&SamplingParams>,
    ) -> Self {
        GatewayFingerprint {
            endpoint: strip_userinfo(&config.endpoint),
            qa_endpoint: config.qa_endpoint.as_deref().map(strip_userinfo),
            model_name: model_name.map(str::to_string),
            sampling: sampling.cloned(),
        }
    }
}

/// Reproducibility record for one run. Field order and map ordering are
/// fixed, so equal runs serialize to equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub command: String,
    pub toolkit_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub preset: Option<PresetRecord>,
    pub mode: Option<String>,
    pub subset_size: Option<usize>,
    pub mix_fraction: Option<f64>,
    pub gateway: Option<GatewayFingerprint>,
    pub params: BTreeMap<String, serde_json::Value>,
}

/// Everything [`manifest_for`] needs; files are hashed when the manifest is built.
#[derive(Debug, Clone, Default)]
pub struct RunParams {
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<(String, PathBuf)>,
    pub preset: Option<PresetRecord>,
    pub mode: Option<String>,
    pub subset_size: Option<usize>,
    pub mix_fraction: Option<f64>,
    pub gateway: Option<GatewayFingerprint>,
    pub params: BTreeMap<String, serde_json::Value>,
}

impl RunParams {
    pub fn new(command: impl Into<String>) -> Self {
        RunParams {
            command: command.into(),
            ..Default::default()
        }
    }

    pub fn seed(mut self, label: &str, seed: u64) -> Self {
        self.seeds.insert(label.to_string(), seed);
        self
    }

    pub fn input(mut self, role: &str, path: impl Into<PathBuf>) -> Self {
        self.inputs.push((role.to_string(), path.into()));
        self
    }

    pub fn output(mut self, role: &str, path: impl Into<PathBuf>) -> Self {
        self.outputs.push((role.to_string(), path.into()));
        self
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.params.insert(
            key.to_string(),
            serde_json::to_value(value).expect("param serializes"),
        );
        self
    }
}

fn records(files: &[(String, PathBuf)]) -> Result<Vec<FileRecord>, ReportError> {
    files
        .iter()
        .map(|(role, path)| {
            Ok(FileRecord {
                role: role.clone(),
                path: path.clone(),
                sha256: file_sha256(path)?,
            })
        })
        .collect()
}

impl ExperimentManifest {
    fn content_id(&self) -> String {
        let mut body = self.clone();
        body.run_id.clear();
        sha256_hex(serde_json::to_vec(&body).expect("manifest serializes"))[..16].to_string()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

pub fn manifest_for(run: &RunParams) -> Result<ExperimentManifest, ReportError> {
    if run.command.is_empty() {
        return Err(ReportError::Argument(
            "manifest needs a command name".into(),
        ));
    }
    let mut m = ExperimentManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        run_id: String::new(),
        command: run.command.clone(),
        toolkit_version: crate::TOOLKIT_VERSION.to_string(),
        seeds: run.seeds.clone(),
        inputs: records(&run.inputs)?,
        outputs: records(&run.outputs)?,
        preset: run.preset.clone(),
        mode: run.mode.clone(),
        subset_size: run.subset_size,
        mix_fraction: run.mix_fraction,
        gateway: run.gateway.clone(),
        params: run.params.clone(),
    };
    m.run_id = m.content_id();
    Ok(m)
}

/// Path of the manifest stored next to `output`: `<output>.manifest.json`,
/// or `<dir>/manifest.json` for a directory.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        return output.join("manifest.json");
    }
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Build the manifest for `run` and store it beside `output`.
pub fn write_manifest_beside(
    output: &Path,
    run: &RunParams,
) -> Result<(ExperimentManifest, PathBuf), ReportError> {
    let m = manifest_for(run)?;
    let path = manifest_path(output);
    m.write(&path)?;
    Ok((m, path))
}

/// Re-hash every recorded file and check the run id. Each difference is one
/// line of the returned list; empty means the run is reproducible as recorded.
pub fn verify_manifest(m: &ExperimentManifest) -> Vec<String> {
    let mut diffs = Vec::new();
    if m.schema_version != MANIFEST_SCHEMA_VERSION {
        diffs.push(format!(
            "schema_version: recorded {}, supported {}",
            m.schema_version, MANIFEST_SCHEMA_VERSION
        ));
    }
    if m.run_id != m.content_id() {
        diffs.push("run_id: does not match manifest contents".into());
    }
    for (kind, files) in [("input", &m.inputs), ("output", &m.outputs)] {
        for f in files {
            match file_sha256(&f.path) {
                Ok(h) if h == f.sha256 => {}
                Ok(_) => diffs.push(format!(
                    "{kind} {}: sha256 changed ({})",
                    f.role,
                    f.path.display()
                )),
                Err(_) => diffs.push(format!(
                    "{kind} {}: file missing ({})",
                    f.role,
                    f.path.display()
                )),
            }
        }
    }
    diffs
}

/// Field-by-field comparison of a recorded manifest against one rebuilt from
/// current inputs.
pub fn diff_manifests(recorded: &ExperimentManifest, current: &ExperimentManifest) -> Vec<String> {
    let a = serde_json::to_value(recorded).expect("manifest serializes");
    let b = serde_json::to_value(current).expect("manifest serializes");
    let mut diffs = Vec::new();
    diff_values("", &a, &b, &mut diffs);
    diffs.retain(|d| !d.starts_with("run_id"));
    diffs
}

fn diff_values(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                diff_values(
                    &p,
                    x.get(k).unwrap_or(&Value::Null),
                    y.get(k).unwrap_or(&Value::Null),
                    out,
                );
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                diff_values(&format!("{prefix}[{i}]"), u, v, out);
            }
        }
        _ if a != b => out.push(format!("{prefix}: {a} -> {b}")),
        _ => {}
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// One row per label in input order, values printed with three decimals.
pub fn table_compare(
    reports: &[(String, MetricReport)],
    format: TableFormat,
) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Argument("no reports to tabulate".into()));
    }
    let with_external = reports.iter().any(|(_, r)| r.corpus.external.is_some());
    let mut header = vec!["label", "n", "bleu4", "meteor", "rouge_l", "em", "f1"];
    if with_external {
        header.push("external");
    }
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            let c = &r.corpus;
            let mut row = vec![
                label.clone(),
                r.n.to_string(),
                format!("{:.3}", c.bleu4),
                format!("{:.3}", c.meteor),
                format!("{:.3}", c.rouge_l),
                format!("{:.3}", c.em_rate),
                format!("{:.3}", c.mean_f1),
            ];
            if with_external {
                row.push(c.external.map(|v| format!("{v:.3}")).unwrap_or_default());
            }
            row
        })
        .collect();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header)
                .map_err(|e| ReportError::Argument(e.to_string()))?;
            for row in &rows {
                w.write_record(row)
                    .map_err(|e| ReportError::Argument(e.to_string()))?;
            }
            out = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv");
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(
                out,
                "|{}",
                header
                    .iter()
                    .map(|h| if *h == "label" { "---|" } else { "---:|" })
                    .collect::<String>()
            );
            for row in &rows {
                let _ = writeln!(out, "| {} |", row.join(" | "));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMetric {
    Bleu4,
    Meteor,
    RougeL,
    Em,
    F1,
    External,
}

impl CurveMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveMetric::Bleu4 => "bleu4",
            CurveMetric::Meteor => "meteor",
            CurveMetric::RougeL => "rouge_l",
            CurveMetric::Em => "em",
            CurveMetric::F1 => "f1",
            CurveMetric::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::Bleu4,
            Self::Meteor,
            Self::RougeL,
            Self::Em,
            Self::F1,
            Self::External,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
    }

    fn value(self, r: &MetricReport) -> Option<f64> {
        let c = &r.corpus;
        match self {
            CurveMetric::Bleu4 => Some(c.bleu4),
            CurveMetric::Meteor => Some(c.meteor),
            CurveMetric::RougeL => Some(c.rouge_l),
            CurveMetric::Em => Some(c.em_rate),
            CurveMetric::F1 => Some(c.mean_f1),
            CurveMetric::External => c.external,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub metric: CurveMetric,
    pub value: f64,
}

/// Long-format `fraction,metric,value` rows, grouped by metric with fractions
/// ascending. Values keep full precision so the file parses back exactly.
pub fn curve_data(
    points: &[(f64, MetricReport)],
    metrics: &[CurveMetric],
) -> Result<String, ReportError> {
    let mut sorted: Vec<&(f64, MetricReport)> = points.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(ReportError::Argument(format!(
                "fraction {} appears twice",
                w[0].0
            )));
        }
    }
    let mut out = String::from("fraction,metric,value\n");
    for &m in metrics {
        for (f, r) in &sorted {
            let v = m.value(r).ok_or_else(|| {
                ReportError::Argument(format!(
                    "report at fraction {f} has no {} score",
                    m.as_str()
                ))
            })?;
            let _ = writeln!(out, "{f},{},{v}", m.as_str());
        }
    }
    Ok(out)
}

pub fn parse_curve(text: &str) -> Result<Vec<CurvePoint>, ReportError> {
    let bad = |line: usize, message: String| ReportError::Parse {
        path: format!("curve line {line}"),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "fraction,metric,value")) => {}
        _ => return Err(bad(1, "expected header fraction,metric,value".into())),
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let [f, m, v] = cols[..] else {
            return Err(bad(i + 1, "expected 3 columns".into()));
        };
        points.push(CurvePoint {
            fraction: f
                .parse()
                .map_err(|_| bad(i + 1, format!("bad fraction {f:?}")))?,
            metric: CurveMetric::parse(m)
                .ok_or_else(|| bad(i + 1, format!("unknown metric {m:?}")))?,
            value: v
                .parse()
                .map_err(|_| bad(i + 1, format!("bad value {v:?}")))?,
        });
    }
    Ok(points)
}
