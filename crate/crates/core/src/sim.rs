//! Monte-Carlo BLER and complexity sweeps.
//!
//! Every trial is keyed by `(master_seed, Eb/N0 index, trial index)`. The
//! same source block and noise realisation are decoded by every metric in the
//! sweep, so per-point comparisons between metrics are paired.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{bpsk_map, ebn0_to_params, transmit, trial_rng, ChannelParams};
use crate::codes::{construct_polar, construct_rm, encode, unscramble, CodeSpec, CodeSpecDocument};
use crate::decoder::{DecodeStats, DecoderOptions, StackSphereDecoder};
use crate::error::{invalid, Error, Result};
use crate::metrics::MetricKind;

/// Trials evaluated in parallel between early-stop checks.
const BATCH: u32 = 256;

pub const ENERGY_CONVENTION: &str =
    "E = 1; Eb = E*N/K (rate-adjusted); N0 = Eb / 10^(EbN0_dB/10); noise variance N0/2";
pub const NODE_VISIT_DEFINITION: &str =
    "one visit per child path generated when a path is expanded (1 at frozen levels, 2 otherwise)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeFamily {
    Polar,
    Rm,
}

impl FromStr for CodeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "polar" => Ok(CodeFamily::Polar),
            "rm" | "reed-muller" => Ok(CodeFamily::Rm),
            other => invalid(format!("unknown code family {other:?}; expected polar or rm")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeConfig {
    pub family: CodeFamily,
    pub n: u32,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
}

impl CodeConfig {
    pub fn build(&self) -> Result<CodeSpec> {
        match self.family {
            CodeFamily::Polar => construct_polar(self.n, self.k),
            CodeFamily::Rm => construct_rm(self.n, self.k),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => invalid(format!("unknown output format {other:?}; expected csv or json")),
        }
    }
}

fn default_min_errors() -> u64 {
    100
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub code: CodeConfig,
    pub ebn0_db_list: Vec<f64>,
    pub kinds: Vec<MetricKind>,
    pub trials_per_point: u64,
    pub master_seed: u64,
    /// Stop a point once this many block errors accumulate; 0 disables.
    #[serde(default = "default_min_errors")]
    pub min_block_errors: u64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    /// When false, `wall_time_s` is written as 0 so output is bit-reproducible.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    #[serde(default)]
    pub max_stack: Option<usize>,
}

impl SweepConfig {
    pub fn new(code: CodeConfig, ebn0_db_list: Vec<f64>, kinds: Vec<MetricKind>) -> Self {
        Self {
            code,
            ebn0_db_list,
            kinds,
            trials_per_point: 1000,
            master_seed: 0,
            min_block_errors: default_min_errors(),
            output_path: None,
            format: OutputFormat::Csv,
            record_timing: true,
            max_stack: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials_per_point == 0 {
            return invalid("trials_per_point must be at least 1");
        }
        if self.trials_per_point > u32::MAX as u64 {
            return invalid(format!("trials_per_point may not exceed {}", u32::MAX));
        }
        if self.ebn0_db_list.is_empty() {
            return invalid("Eb/N0 list is empty");
        }
        if self.ebn0_db_list.iter().any(|v| !v.is_finite()) {
            return invalid("Eb/N0 values must be finite");
        }
        if self.ebn0_db_list.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("Eb/N0 list must be strictly increasing");
        }
        if self.kinds.is_empty() {
            return invalid("no metrics selected");
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if self.kinds[..i].contains(k) {
                return invalid(format!("metric {k} listed twice"));
            }
        }
        self.code.build().map(|_| ())
    }
}

/// Aggregated outcome of one `(Eb/N0, metric)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub ebn0_db: f64,
    pub metric: MetricKind,
    pub trials: u64,
    pub block_errors: u64,
    pub bler: f64,
    pub avg_node_visits: f64,
    pub avg_pops: f64,
    pub avg_max_stack: f64,
    pub wall_time_s: f64,
}

/// Run description written next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub code: CodeSpecDocument,
    pub master_seed: u64,
    pub trials_per_point: u64,
    pub min_block_errors: u64,
    pub energy_convention: String,
    pub node_visit_definition: String,
    pub ebn0_db_list: Vec<f64>,
    pub noise_density: Vec<f64>,
    pub signal_energy: f64,
}

impl SweepMetadata {
    pub fn for_config(config: &SweepConfig, spec: &CodeSpec) -> Result<Self> {
        let noise_density = config
            .ebn0_db_list
            .iter()
            .map(|&e| ebn0_to_params::<f64>(e, spec.len(), spec.dimension()).map(|p| p.n0()))
            .collect::<Result<_>>()?;
        Ok(Self {
            code: spec.to_document(),
            master_seed: config.master_seed,
            trials_per_point: config.trials_per_point,
            min_block_errors: config.min_block_errors,
            energy_convention: ENERGY_CONVENTION.into(),
            node_visit_definition: NODE_VISIT_DEFINITION.into(),
            ebn0_db_list: config.ebn0_db_list.clone(),
            noise_density,
            signal_energy: 1.0,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct KindOutcome {
    error: bool,
    stats: DecodeStats,
    seconds: f64,
}

#[derive(Debug, Default, Clone)]
struct Accumulator {
    trials: u64,
    errors: u64,
    node_visits: u64,
    pops: u64,
    max_stack: u64,
    seconds: f64,
    done: bool,
}

impl Accumulator {
    fn add(&mut self, o: &KindOutcome) {
        self.trials += 1;
        self.errors += o.error as u64;
        self.node_visits += o.stats.node_visits;
        self.pops += o.stats.pops;
        self.max_stack += o.stats.max_stack as u64;
        self.seconds += o.seconds;
    }

    fn record(&self, ebn0_db: f64, metric: MetricKind, timing: bool) -> SweepRecord {
        let t = self.trials as f64;
        SweepRecord {
            ebn0_db,
            metric,
            trials: self.trials,
            block_errors: self.errors,
            bler: self.errors as f64 / t,
            avg_node_visits: self.node_visits as f64 / t,
            avg_pops: self.pops as f64 / t,
            avg_max_stack: self.max_stack as f64 / t,
            wall_time_s: if timing { self.seconds } else { 0.0 },
        }
    }
}

/// One trial: draw a block, send it, decode it with each listed metric.
fn run_trial(
    spec: &CodeSpec,
    params: &ChannelParams<f64>,
    decoders: &[StackSphereDecoder<'_, f64>],
    active: &[bool],
    seed: u64,
    point: u32,
    trial: u32,
) -> Result<Vec<Option<KindOutcome>>> {
    let mut rng = trial_rng(seed, point, trial);
    let info: Vec<u8> = (0..spec.dimension()).map(|_| rng.gen_range(0..2)).collect();
    let u = unscramble(&spec.scatter_info(&info)?)?;
    let x = encode(&u, spec)?.x;
    let y = transmit(&bpsk_map(&x), params, &mut rng);
    decoders
        .iter()
        .zip(active)
        .map(|(dec, &on)| {
            if !on {
                return Ok(None);
            }
            let start = Instant::now();
            let r = dec.decode(&y)?;
            Ok(Some(KindOutcome {
                error: r.u_hat != u,
                stats: r.stats,
                seconds: start.elapsed().as_secs_f64(),
            }))
        })
        .collect()
}

/// Simulates every `(Eb/N0, metric)` point and, if the config names an
/// output path, writes the records there.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let spec = config.code.build()?;
    let mut records = Vec::with_capacity(config.ebn0_db_list.len() * config.kinds.len());

    for (point, &ebn0) in config.ebn0_db_list.iter().enumerate() {
        let point = point as u32;
        let params = ebn0_to_params::<f64>(ebn0, spec.len(), spec.dimension())?;
        let options = DecoderOptions {
            max_stack: config.max_stack,
            check_unique: false,
        };
        let decoders: Vec<_> = config
            .kinds
            .iter()
            .map(|&k| StackSphereDecoder::with_options(&spec, params, k, options.clone()))
            .collect();
        let mut acc = vec![Accumulator::default(); config.kinds.len()];
        let total = config.trials_per_point as u32;
        let mut next = 0u32;

        while next < total && acc.iter().any(|a| !a.done) {
            let end = next.saturating_add(BATCH).min(total);
            let active: Vec<bool> = acc.iter().map(|a| !a.done).collect();
            let outcomes = (next..end)
                .into_par_iter()
                .map(|t| run_trial(&spec, &params, &decoders, &active, config.master_seed, point, t))
                .collect::<Result<Vec<_>>>()?;
            // fold in trial order so early stopping is schedule-independent
            for trial in &outcomes {
                for (a, o) in acc.iter_mut().zip(trial) {
                    if let (false, Some(o)) = (a.done, o) {
                        a.add(o);
                        if config.min_block_errors > 0 && a.errors >= config.min_block_errors {
                            a.done = true;
                        }
                    }
                }
            }
            next = end;
        }

        for (a, &kind) in acc.iter().zip(&config.kinds) {
            records.push(a.record(ebn0, kind, config.record_timing));
        }
    }

    if let Some(path) = &config.output_path {
        let meta = SweepMetadata::for_config(config, &spec)?;
        write_records(&records, path, config.format, &meta)?;
    }
    Ok(records)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Path of the metadata file that accompanies a CSV output.
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Serialize, Deserialize)]
struct JsonOutput {
    header: SweepMetadata,
    records: Vec<SweepRecord>,
}

/// Writes records as CSV (plus a `<path>.meta.json` header file) or as a
/// single JSON document `{header, records}`.
pub fn write_records(
    records: &[SweepRecord],
    path: &Path,
    format: OutputFormat,
    meta: &SweepMetadata,
) -> Result<()> {
    if records.is_empty() {
        return invalid("no records to write");
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    match format {
        OutputFormat::Csv => {
            write_csv(records, &mut out)?;
            let meta_path = metadata_path(path);
            let text = serde_json::to_string_pretty(meta)?;
            std::fs::write(&meta_path, text + "\n").map_err(io_err(&meta_path))?;
        }
        OutputFormat::Json => {
            let doc = JsonOutput {
                header: meta.clone(),
                records: records.to_vec(),
            };
            serde_json::to_writer_pretty(&mut out, &doc)?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

/// CSV with header row `ebn0_db,metric,trials,block_errors,bler,
/// avg_node_visits,avg_pops,avg_max_stack,wall_time_s`.
pub fn write_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: PathBuf::from("<csv>"),
        source,
    })
}

pub fn read_records(path: &Path, format: OutputFormat) -> Result<Vec<SweepRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    match format {
        OutputFormat::Csv => csv::Reader::from_reader(file)
            .deserialize()
            .map(|r| r.map_err(Error::from))
            .collect(),
        OutputFormat::Json => {
            let doc: JsonOutput = serde_json::from_reader(file)?;
            Ok(doc.records)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SweepConfig {
        let mut c = SweepConfig::new(
            CodeConfig {
                family: CodeFamily::Polar,
                n: 4,
                k: 8,
            },
            vec![0.0, 2.0],
            MetricKind::ALL.to_vec(),
        );
        c.trials_per_point = 300;
        c.master_seed = 42;
        c.min_block_errors = 0;
        c
    }

    #[test]
    fn validation() {
        let mut c = small_config();
        assert!(c.validate().is_ok());
        c.trials_per_point = 0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.ebn0_db_list = vec![2.0, 2.0];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.ebn0_db_list.clear();
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.kinds = vec![MetricKind::M1, MetricKind::M1];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.code.family = CodeFamily::Rm;
        assert!(c.validate().is_err());
    }

    #[test]
    fn noiseless_point_has_no_errors() {
        let mut c = small_config();
        c.ebn0_db_list = vec![60.0];
        c.trials_per_point = 1;
        let recs = run_sweep(&c).unwrap();
        assert_eq!(recs.len(), 4);
        for r in recs {
            assert_eq!(r.bler, 0.0);
            assert!(r.avg_node_visits >= 16.0);
        }
    }

    #[test]
    fn paired_trials_give_identical_bler() {
        let recs = run_sweep(&small_config()).unwrap();
        for point in recs.chunks(4) {
            assert!(point.iter().all(|r| r.block_errors == point[0].block_errors));
            assert!(point.iter().all(|r| r.trials == 300));
        }
        assert!(recs[0].block_errors > 0);
    }

    #[test]
    fn early_stop_truncates_trials() {
        let mut c = small_config();
        c.ebn0_db_list = vec![-2.0];
        c.trials_per_point = 5000;
        c.min_block_errors = 10;
        let recs = run_sweep(&c).unwrap();
        for r in &recs {
            assert_eq!(r.block_errors, 10);
            assert!(r.trials < 5000);
            assert_eq!(r.trials, recs[0].trials);
        }
    }

    #[test]
    fn csv_layout_is_fixed() {
        let rec = SweepRecord {
            ebn0_db: 3.0,
            metric: MetricKind::M1,
            trials: 10,
            block_errors: 1,
            bler: 0.1,
            avg_node_visits: 70.5,
            avg_pops: 40.0,
            avg_max_stack: 5.0,
            wall_time_s: 0.0,
        };
        let mut buf = Vec::new();
        write_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "ebn0_db,metric,trials,block_errors,bler,avg_node_visits,avg_pops,avg_max_stack,wall_time_s"
        );
        assert_eq!(lines.next().unwrap(), "3.0,m1,10,1,0.1,70.5,40.0,5.0,0.0");
        assert!(lines.next().is_none());
    }

    #[test]
    fn write_rejects_empty_and_unwritable() {
        let meta = SweepMetadata::for_config(&small_config(), &construct_polar(4, 8).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(write_records(&[], &dir.path().join("x.csv"), OutputFormat::Csv, &meta).is_err());
        let recs = run_sweep(&SweepConfig {
            trials_per_point: 2,
            ..small_config()
        })
        .unwrap();
        let bad = dir.path().join("missing").join("x.csv");
        let err = write_records(&recs, &bad, OutputFormat::Csv, &meta).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn config_json_defaults() {
        let c = SweepConfig::from_json(
            r#"{"code": {"family": "rm", "n": 6, "K": 57},
                "ebn0_db_list": [3.0, 4.0], "kinds": ["m0", "m1"],
                "trials_per_point": 10, "master_seed": 7}"#,
        )
        .unwrap();
        assert_eq!(c.min_block_errors, 100);
        assert_eq!(c.format, OutputFormat::Csv);
        assert!(c.record_timing);
        assert!(c.validate().is_ok());
    }
}
