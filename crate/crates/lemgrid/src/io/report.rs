//! Run artifacts: a JSON report per scheme, flat CSV series for plotting,
//! line-delimited trade/verdict logs, and the run manifest.
//!
//! Everything written here is a pure function of the resolved config and
//! seed, so re-running a manifest reproduces the files byte for byte.

use super::config::RunConfig;
use crate::agents::HouseholdKind;
use crate::error::{Error, Result};
use crate::scenario::{ScenarioKind, ScenarioReport, Scheme};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

use std::path::{Path, PathBuf};

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// One JSON record per line.
fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn csv_row<W: std::io::Write, I, S>(path: &Path, w: &mut csv::Writer<W>, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn fin<W: std::io::Write>(path: &Path, mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write every artifact of one finished run into `dir`, file names suffixed
/// with the scheme. Returns the paths written.
pub fn write_report_files(dir: &Path, report: &ScenarioReport) -> Result<Vec<PathBuf>> {
    let tag = report.scheme.name();
    let mut written = Vec::new();
    let mut emit = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    write_json(&emit(format!("report_{tag}.json")), report)?;

    let p = emit(format!("atp_{tag}.csv"));
    let mut w = csv_writer(&p)?;
    csv_row(&p, &mut w, ["slot", "atp_price", "p2p_kwh"])?;
    for m in &report.slots {
        let atp = m.atp.map(|x| x.to_string()).unwrap_or_default();
        csv_row(&p, &mut w, [m.slot.to_string(), atp, m.p2p_kwh.to_string()])?;
    }
    fin(&p, w)?;

    let p = emit(format!("energy_{tag}.csv"));
    let mut w = csv_writer(&p)?;
    csv_row(
        &p,
        &mut w,
        [
            "slot",
            "p2p_kwh",
            "retail_import_kwh",
            "export_kwh",
            "spilled_kwh",
            "network_charges",
            "rejected_trades",
            "v_min_pu",
            "v_max_pu",
            "max_line_loading",
        ],
    )?;
    for m in &report.slots {
        csv_row(
            &p,
            &mut w,
            [
                m.slot.to_string(),
                m.p2p_kwh.to_string(),
                m.retail_import_kwh.to_string(),
                m.export_kwh.to_string(),
                m.spilled_kwh.to_string(),
                m.network_charges.to_string(),
                m.rejected.to_string(),
                m.v_min.to_string(),
                m.v_max.to_string(),
                m.max_line_loading.to_string(),
            ],
        )?;
    }
    fin(&p, w)?;

    let p = emit(format!("voltage_histogram_{tag}.csv"));
    let mut w = csv_writer(&p)?;
    csv_row(&p, &mut w, ["bin_lower_pu", "count"])?;
    for (edge, count) in report.histogram.bins() {
        csv_row(&p, &mut w, [edge.to_string(), count.to_string()])?;
    }
    fin(&p, w)?;

    let p = emit(format!("households_{tag}.csv"));
    let mut w = csv_writer(&p)?;
    csv_row(
        &p,
        &mut w,
        [
            "id",
            "node",
            "kind",
            "expenses",
            "incomes",
            "p2p_bought_kwh",
            "p2p_sold_kwh",
            "retail_bought_kwh",
            "exported_kwh",
            "spilled_kwh",
        ],
    )?;
    for h in &report.households {
        let kind = serde_json::to_value(h.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        csv_row(
            &p,
            &mut w,
            [
                h.id.clone(),
                h.node.to_string(),
                kind,
                h.expenses.to_string(),
                h.incomes.to_string(),
                h.p2p_bought_kwh.to_string(),
                h.p2p_sold_kwh.to_string(),
                h.retail_bought_kwh.to_string(),
                h.exported_kwh.to_string(),
                h.spilled_kwh.to_string(),
            ],
        )?;
    }
    fin(&p, w)?;

    write_jsonl(&emit(format!("trades_{tag}.jsonl")), &report.trades)?;
    write_jsonl(&emit(format!("verdicts_{tag}.jsonl")), &report.verdicts)?;
    write_jsonl(&emit(format!("blocking_{tag}.jsonl")), &report.blocking)?;
    Ok(written)
}

/// One comparison row per scheme (the cross-scheme energy/income table).
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub scheme: &'static str,
    /// Energy prosumers delivered anywhere: peer trades plus grid exports.
    pub supplied_kwh: f64,
    pub p2p_kwh: f64,
    pub export_kwh: f64,
    pub spilled_kwh: f64,
    pub prosumer_income: f64,
    pub market_benefit: Option<f64>,
}

pub fn comparison_rows(reports: &[ScenarioReport]) -> Vec<ComparisonRow> {
    reports
        .iter()
        .map(|r| {
            let prosumer_income: f64 = r
                .households
                .iter()
                .filter(|h| matches!(h.kind, HouseholdKind::Prosumer1 | HouseholdKind::Prosumer2))
                .map(|h| h.incomes)
                .sum();
            ComparisonRow {
                scheme: r.scheme.name(),
                supplied_kwh: r.totals.p2p_kwh + r.totals.export_kwh,
                p2p_kwh: r.totals.p2p_kwh,
                export_kwh: r.totals.export_kwh,
                spilled_kwh: r.totals.spilled_kwh,
                prosumer_income,
                market_benefit: r.market_benefit,
            }
        })
        .collect()
}

pub fn write_comparison(dir: &Path, reports: &[ScenarioReport]) -> Result<PathBuf> {
    let p = dir.join("comparison.csv");
    let mut w = csv_writer(&p)?;
    csv_row(
        &p,
        &mut w,
        [
            "scheme",
            "supplied_kwh",
            "p2p_kwh",
            "export_kwh",
            "spilled_kwh",
            "prosumer_income",
            "market_benefit",
        ],
    )?;
    for row in comparison_rows(reports) {
        csv_row(
            &p,
            &mut w,
            [
                row.scheme.to_string(),
                row.supplied_kwh.to_string(),
                row.p2p_kwh.to_string(),
                row.export_kwh.to_string(),
                row.spilled_kwh.to_string(),
                row.prosumer_income.to_string(),
                row.market_benefit
                    .map(|x| x.to_string())
                    .unwrap_or_default(),
            ],
        )?;
    }
    fin(&p, w)?;
    Ok(p)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Everything needed to reproduce a run: the fully resolved config, digests
/// of the input files, and the seed. The manifest digest covers exactly
/// those fields, so equal digests mean byte-identical outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub scenario: ScenarioKind,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    pub config: RunConfig,
    /// Input file name → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 over the canonical JSON of the fields above.
    pub digest: String,
    /// Wall-clock time of the producing run (informational; excluded from
    /// the digest).
    pub duration_seconds: f64,
}

#[derive(Serialize)]
struct DigestView<'a> {
    version: &'a str,
    scenario: ScenarioKind,
    schemes: &'a [Scheme],
    seed: u64,
    config: &'a RunConfig,
    inputs: &'a BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        config: &RunConfig,
        base: &Path,
        schemes: &[Scheme],
        duration_seconds: f64,
    ) -> Result<Self> {
        let mut inputs = BTreeMap::new();
        for path in config.input_paths(base) {
            let name = path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            inputs.insert(name, sha256_file(&path)?);
        }
        let version = env!("CARGO_PKG_VERSION").to_string();
        let view = DigestView {
            version: &version,
            scenario: config.run.scenario,
            schemes,
            seed: config.run.seed,
            config,
            inputs: &inputs,
        };
        let canon = serde_json::to_vec(&view).map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(Self {
            version,
            scenario: config.run.scenario,
            schemes: schemes.to_vec(),
            seed: config.run.seed,
            config: config.clone(),
            inputs,
            digest: sha256_hex(&canon),
            duration_seconds,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

/// Render the comparison table for the terminal.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    use std::fmt::Write as _;
    let _ = writeln!(
        out,
        "{:<10} {:>13} {:>11} {:>12} {:>12} {:>16}",
        "scheme", "supplied_kwh", "p2p_kwh", "export_kwh", "spilled_kwh", "prosumer_income"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>13.3} {:>11.3} {:>12.3} {:>12.3} {:>16.2}",
            r.scheme, r.supplied_kwh, r.p2p_kwh, r.export_kwh, r.spilled_kwh, r.prosumer_income
        );
    }
    out
}
