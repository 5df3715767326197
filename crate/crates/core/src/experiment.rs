//! Seed sweeps over deployments and network sizes, and the files they write.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::statistics::{Data, Median, OrderStatistics};

use crate::engine::{run_band, RunConfig};
use crate::error::{Error, Result};
use crate::mac::{HopSequence, MacParams};
use crate::metrics::{combine, CombinedPacketOutcome, MetricsReport};
use crate::model::{validate_band_config, AppConfig, BandConfig, BandId, REFERENCE_SEED};
use crate::msf::MsfParams;
use crate::propagation::{LinkVariation, WaterfallTable};
use crate::rng::derive_stream;
use crate::rpl::RplParams;
use crate::topology::{generate_linear, generate_random, Deployment, Topology, DEFAULT_RESAMPLE_BUDGET};
use crate::trace::RunTrace;

pub const OUTPUT_FORMAT_VERSION: u32 = 1;

/// Bin width of the latency CDFs written for plotting, in seconds.
pub const CDF_BIN_S: f64 = 0.010;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(alias = "deployment")]
    pub deployments: Vec<Deployment>,
    pub node_counts: Vec<usize>,
    pub side_length: f64,
    pub band24: BandConfig,
    pub band868: BandConfig,
    /// RSSI→PDR table for 2.4 GHz; the 868 MHz table is derived from it.
    pub waterfall24: WaterfallTable,
    pub app: AppConfig,
    pub seeds: Vec<u64>,
    /// Free-space RSSI a random node must reach on some earlier node.
    pub connect_threshold_dbm: f64,
    pub mac: MacParams,
    pub rpl: RplParams,
    pub msf: MsfParams,
    pub link_variation: LinkVariation,
    pub strict_paper_mode: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let band24 = BandConfig::reference_24ghz();
        ExperimentSpec {
            deployments: vec![Deployment::Linear, Deployment::Random],
            node_counts: vec![40, 80, 160],
            side_length: 100.0,
            connect_threshold_dbm: band24.radio_sensitivity_dbm,
            band24,
            band868: BandConfig::reference_868mhz(),
            waterfall24: WaterfallTable::default_24ghz(),
            app: AppConfig::default(),
            seeds: vec![REFERENCE_SEED],
            mac: MacParams::default(),
            rpl: RplParams::default(),
            msf: MsfParams::default(),
            link_variation: LinkVariation::PerAttempt,
            strict_paper_mode: false,
            out: None,
            workers: None,
        }
    }
}

impl ExperimentSpec {
    /// Desk-scale sweep: shorter setup and measurement, sizes 10/20/40, five seeds.
    pub fn quick() -> Self {
        ExperimentSpec {
            node_counts: vec![10, 20, 40],
            app: AppConfig { setup_time: 600.0, duration: 900.0, ..AppConfig::default() },
            seeds: (0..5).map(|i| REFERENCE_SEED + i).collect(),
            ..ExperimentSpec::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.deployments.is_empty() {
            errs.push("deployments is empty".to_string());
        }
        if self.node_counts.is_empty() {
            errs.push("node_counts is empty".to_string());
        }
        if self.node_counts.iter().any(|&n| n < 2) {
            errs.push("node counts must be at least 2".to_string());
        }
        if self.seeds.is_empty() {
            errs.push("seeds is empty".to_string());
        }
        if !(self.side_length > 0.0) {
            errs.push("side_length must be positive".to_string());
        }
        if self.workers == Some(0) {
            errs.push("workers must be positive".to_string());
        }
        if self.band24.band_id != BandId::Band24GHz || self.band868.band_id != BandId::Band868MHz {
            errs.push("band24/band868 carry the wrong band ids".to_string());
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs.join("; ")));
        }
        validate_band_config(&self.band24, self.strict_paper_mode)?;
        validate_band_config(&self.band868, self.strict_paper_mode)?;
        self.app.validate()
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go and how
    /// many threads produce them.
    pub fn spec_hash(&self) -> String {
        let canonical = ExperimentSpec { out: None, workers: None, ..self.clone() };
        let value = serde_json::to_value(&canonical).expect("spec serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn band(&self, band: BandId) -> &BandConfig {
        match band {
            BandId::Band24GHz => &self.band24,
            BandId::Band868MHz => &self.band868,
        }
    }

    pub fn waterfall(&self, band: BandId) -> WaterfallTable {
        match band {
            BandId::Band24GHz => self.waterfall24.clone(),
            BandId::Band868MHz => self.waterfall24.offset(crate::propagation::SUBGHZ_TABLE_OFFSET_DB),
        }
    }

    pub fn cases(&self) -> Vec<Case> {
        let mut out = Vec::new();
        for &deployment in &self.deployments {
            for &nodes in &self.node_counts {
                for &seed in &self.seeds {
                    out.push(Case { deployment, nodes, seed });
                }
            }
        }
        out
    }

    pub fn topology(&self, case: &Case) -> Result<Topology> {
        match case.deployment {
            Deployment::Linear => generate_linear(case.nodes, self.side_length),
            Deployment::Random => generate_random(
                case.nodes,
                self.side_length,
                &mut derive_stream(case.seed, "topology"),
                &self.band24,
                self.connect_threshold_dbm,
                DEFAULT_RESAMPLE_BUDGET,
            ),
        }
    }

    pub fn run_config(&self, topology: Topology, band: BandId, seed: u64) -> RunConfig {
        let cfg = self.band(band).clone();
        let app = AppConfig { seed, ..self.app.clone() };
        let hop_sequence =
            HopSequence::shuffled(cfg.channel_count, &mut derive_stream(seed, &format!("hopseq/{}", band.tag())));
        RunConfig {
            topology,
            band: cfg,
            app,
            waterfall: self.waterfall(band),
            hop_sequence,
            mac: self.mac.clone(),
            rpl: self.rpl.clone(),
            msf: self.msf.clone(),
            link_variation: self.link_variation,
            strict_paper_mode: self.strict_paper_mode,
            check_invariants: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Case {
    pub deployment: Deployment,
    pub nodes: usize,
    pub seed: u64,
}

impl Case {
    /// `<deployment>_<nodes>`, shared by all seeds of the case.
    pub fn name(&self) -> String {
        format!("{}_{}", self.deployment.tag(), self.nodes)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub case: Case,
    pub topology: Topology,
    pub trace24: RunTrace,
    pub trace868: RunTrace,
    pub outcomes: Vec<CombinedPacketOutcome>,
    pub report: MetricsReport,
}

pub fn run_case(spec: &ExperimentSpec, case: Case) -> Result<CaseResult> {
    let topology = spec.topology(&case)?;
    let cfg24 = spec.run_config(topology.clone(), BandId::Band24GHz, case.seed);
    let cfg868 = spec.run_config(topology.clone(), BandId::Band868MHz, case.seed);
    let (t24, t868) = rayon::join(|| run_band(&cfg24), || run_band(&cfg868));
    let (trace24, trace868) = (t24?, t868?);
    let (outcomes, report) = combine(&trace24, &trace868)?;
    Ok(CaseResult { case, topology, trace24, trace868, outcomes, report })
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub spec_hash: String,
    pub results: Vec<CaseResult>,
    pub failures: Vec<(Case, String)>,
}

/// Runs every case on a pool of `spec.workers` threads (all cores when
/// unset). Failed cases are collected, not fatal.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = spec.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let cases = spec.cases();
    let done: Vec<(Case, Result<CaseResult>)> =
        pool.install(|| cases.par_iter().map(|&c| (c, run_case(spec, c))).collect());
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (case, r) in done {
        match r {
            Ok(r) => results.push(r),
            Err(e) => failures.push((case, e.to_string())),
        }
    }
    Ok(ExperimentResult { spec_hash: spec.spec_hash(), results, failures })
}

fn header(hash: &str) -> String {
    format!("# dualband format={OUTPUT_FORMAT_VERSION} spec={hash}\n")
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    format_version: u32,
    spec_hash: &'a str,
    case: String,
    deployment: Deployment,
    nodes: usize,
    seed: u64,
    report: &'a MetricsReport,
}

/// Writes traces, per-run metrics, `aggregate.csv`, `plots/*.csv` and, when
/// some runs failed, `failures.csv`.
pub fn write_outputs(result: &ExperimentResult, out: &Path) -> Result<()> {
    fs::create_dir_all(out.join("plots"))?;
    let hash = result.spec_hash.as_str();
    for r in &result.results {
        let (name, seed) = (r.case.name(), r.case.seed);
        for t in [&r.trace24, &r.trace868] {
            fs::write(out.join(format!("trace_{}_{name}_{seed}.txt", t.band.tag())), t.to_text(Some(hash)))?;
        }
        let file = MetricsFile {
            format_version: OUTPUT_FORMAT_VERSION,
            spec_hash: hash,
            case: name.clone(),
            deployment: r.case.deployment,
            nodes: r.case.nodes,
            seed,
            report: &r.report,
        };
        fs::write(out.join(format!("metrics_{name}_{seed}.json")), serde_json::to_string_pretty(&file)? + "\n")?;
        fs::write(
            out.join(format!("metrics_{name}_{seed}.csv")),
            r.report.to_csv(&format!("dualband format={OUTPUT_FORMAT_VERSION} spec={hash}")),
        )?;
    }
    fs::write(out.join("aggregate.csv"), aggregate_csv(result))?;
    emit_plot_data(result, &out.join("plots"))?;
    let failures = out.join("failures.csv");
    if result.failures.is_empty() {
        if failures.exists() {
            fs::remove_file(failures)?;
        }
    } else {
        let mut s = header(hash);
        s.push_str("deployment,nodes,seed,error\n");
        for (c, e) in &result.failures {
            let _ = writeln!(s, "{},{},{},\"{}\"", c.deployment.tag(), c.nodes, c.seed, e.replace('"', "'"));
        }
        fs::write(failures, s)?;
    }
    Ok(())
}

const SERIES: [&str; 3] = ["24ghz", "868mhz", "combined"];

/// Median and interquartile range of one statistic across seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut data = Data::new(values.to_vec());
    Some(Summary { median: data.median(), q1: data.lower_quartile(), q3: data.upper_quartile(), n: values.len() })
}

type Metric = (&'static str, fn(&crate::metrics::BandMetrics) -> Option<f64>);

const METRICS: [Metric; 5] = [
    ("pdr", |m| Some(m.pdr)),
    ("mean_latency_s", |m| m.mean_latency_s),
    ("total_retries", |m| Some(m.total_retries as f64)),
    ("mean_retries_per_node", |m| Some(m.mean_retries_per_node)),
    ("mean_hops", |m| m.mean_hops),
];

fn grouped(result: &ExperimentResult) -> Vec<((Deployment, usize), Vec<&CaseResult>)> {
    let mut groups: Vec<((Deployment, usize), Vec<&CaseResult>)> = Vec::new();
    let mut sorted: Vec<&CaseResult> = result.results.iter().collect();
    sorted.sort_by_key(|r| r.case);
    for r in sorted {
        let key = (r.case.deployment, r.case.nodes);
        match groups.last_mut() {
            Some((k, v)) if *k == key => v.push(r),
            _ => groups.push((key, vec![r])),
        }
    }
    groups
}

pub fn aggregate_csv(result: &ExperimentResult) -> String {
    let mut s = header(&result.spec_hash);
    s.push_str("deployment,nodes,series,metric,median,q1,q3,seeds\n");
    for ((dep, nodes), runs) in grouped(result) {
        for series in SERIES {
            for (metric, get) in METRICS {
                let values: Vec<f64> =
                    runs.iter().filter_map(|r| get(r.report.band(series).expect("known series"))).collect();
                if let Some(sm) = summarize(&values) {
                    let _ = writeln!(
                        s,
                        "{},{nodes},{series},{metric},{},{},{},{}",
                        dep.tag(),
                        sm.median,
                        sm.q1,
                        sm.q3,
                        sm.n
                    );
                }
            }
        }
    }
    s
}

/// CDF evaluated on a common grid of `CDF_BIN_S`-wide bins, up to the largest
/// latency of any series.
fn binned_cdf(cdfs: &[&[(f64, f64)]]) -> Vec<(f64, Vec<f64>)> {
    let max = cdfs.iter().filter_map(|c| c.last()).map(|p| p.0).fold(0.0, f64::max);
    let bins = (max / CDF_BIN_S).ceil() as usize;
    (0..=bins)
        .map(|k| {
            let x = k as f64 * CDF_BIN_S;
            let ys = cdfs
                .iter()
                .map(|c| {
                    let i = c.partition_point(|p| p.0 <= x + 1e-12);
                    if i == 0 {
                        0.0
                    } else {
                        c[i - 1].1
                    }
                })
                .collect();
            (x, ys)
        })
        .collect()
}

/// Plot series: size sweeps per deployment, and per-case CDFs and winning
/// bands for the first seed of each case.
pub fn emit_plot_data(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let hash = &result.spec_hash;
    let groups = grouped(result);
    let mut deployments: Vec<Deployment> = groups.iter().map(|g| g.0 .0).collect();
    deployments.dedup();
    for dep in deployments {
        for (file, metric) in [("pdr_vs_size", 0usize), ("latency_vs_size", 1)] {
            let (mname, get) = METRICS[metric];
            let mut s = header(hash);
            let _ = writeln!(s, "# median {mname} across seeds");
            s.push_str("nodes,24ghz,868mhz,combined\n");
            for ((_, nodes), runs) in groups.iter().filter(|g| g.0 .0 == dep) {
                let _ = write!(s, "{nodes}");
                for series in SERIES {
                    let values: Vec<f64> =
                        runs.iter().filter_map(|r| get(r.report.band(series).expect("known series"))).collect();
                    let _ = write!(s, ",{}", summarize(&values).map_or_else(String::new, |m| m.median.to_string()));
                }
                s.push('\n');
            }
            fs::write(dir.join(format!("{file}_{}.csv", dep.tag())), s)?;
        }
    }
    for (_, runs) in &groups {
        let r = runs[0];
        let name = format!("{}_{}", r.case.name(), r.case.seed);
        let mut s = header(hash);
        s.push_str("latency_s,24ghz,868mhz,combined\n");
        let series =
            [&r.report.band24.latency_cdf[..], &r.report.band868.latency_cdf[..], &r.report.combined.latency_cdf[..]];
        for (x, ys) in binned_cdf(&series) {
            let _ = writeln!(s, "{x:.3},{},{},{}", ys[0], ys[1], ys[2]);
        }
        fs::write(dir.join(format!("cdf_{name}.csv")), s)?;

        let mut s = header(hash);
        s.push_str("node,x,y,winning_band,mean_latency_24_s,mean_latency_868_s\n");
        for n in &r.report.nodes {
            let p = r.topology.positions[n.node as usize];
            let band = n.winning_band.map_or("unclassified", |b| b.tag());
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{band},{},{}",
                n.node,
                p.x,
                p.y,
                opt(n.mean_latency_24_s),
                opt(n.mean_latency_868_s)
            );
        }
        fs::write(dir.join(format!("winners_{name}.csv")), s)?;
    }
    Ok(())
}
