//! Tabular inputs: comma-separated values with a header row.
//!
//! Parse errors name the file and line. Every writer emits exactly what its
//! reader accepts, so generated files round-trip.

use crate::agents::{HouseholdKind, HouseholdProfile, TariffSchedule};
use crate::error::{Error, Result};
use crate::net::Network;
use num_complex::Complex64;
use std::path::Path;

pub const PROFILE_HEADER: [&str; 5] = ["household", "kind", "slot", "demand_kwh", "pv_kwh"];
pub const TARIFF_HEADER: [&str; 3] = ["slot", "import_price", "export_price"];
pub const INJECTION_HEADER: [&str; 3] = ["node", "p_kw", "q_kvar"];

fn kind_name(kind: HouseholdKind) -> &'static str {
    match kind {
        HouseholdKind::Consumer => "consumer",
        HouseholdKind::Prosumer1 => "prosumer1",
        HouseholdKind::Prosumer2 => "prosumer2",
        HouseholdKind::Ces => "ces",
    }
}

fn parse_kind(s: &str) -> Option<HouseholdKind> {
    match s {
        "consumer" => Some(HouseholdKind::Consumer),
        "prosumer1" => Some(HouseholdKind::Prosumer1),
        "prosumer2" => Some(HouseholdKind::Prosumer2),
        "ces" => Some(HouseholdKind::Ces),
        _ => None,
    }
}

/// One open CSV file being read record by record, with enough bookkeeping
/// to point errors at the offending line.
struct Table {
    file: String,
    reader: csv::Reader<std::fs::File>,
}

impl Table {
    fn open(path: &Path, header: &[&str]) -> Result<Self> {
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => Error::Format {
                    path: path.into(),
                    msg: "cannot open".into(),
                },
                _ => Error::Format {
                    path: path.into(),
                    msg: e.to_string(),
                },
            })?;
        let got = reader.headers().map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })?;
        if got.iter().ne(header.iter().copied()) {
            return Err(Error::Parse {
                file,
                line: 1,
                msg: format!("expected header {}", header.join(",")),
            });
        }
        Ok(Self { file, reader })
    }

    fn err(&self, line: u64, msg: String) -> Error {
        Error::Parse {
            file: self.file.clone(),
            line: line as usize,
            msg,
        }
    }

    /// All records with their 1-based line numbers.
    fn records(&mut self) -> Result<Vec<(u64, csv::StringRecord)>> {
        let file = self.file.clone();
        let mut out = Vec::new();
        for rec in self.reader.records() {
            let rec = rec.map_err(|e| Error::Parse {
                file: file.clone(),
                line: e.position().map(|p| p.line()).unwrap_or(0) as usize,
                msg: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            out.push((line, rec));
        }
        Ok(out)
    }

    fn field<T: std::str::FromStr>(
        &self,
        rec: &csv::StringRecord,
        line: u64,
        idx: usize,
        what: &str,
    ) -> Result<T> {
        let raw = rec
            .get(idx)
            .ok_or_else(|| self.err(line, format!("missing {what} column")))?;
        raw.parse()
            .map_err(|_| self.err(line, format!("bad {what}: {raw:?}")))
    }
}

fn finite(table: &Table, line: u64, what: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(table.err(line, format!("{what} must be finite")))
    }
}

/// Read per-household day profiles. One row per household and slot, rows of
/// a household in slot order; the node assignment stays unbound here (it
/// comes from the network's bind records).
pub fn read_profiles(path: impl AsRef<Path>) -> Result<Vec<HouseholdProfile>> {
    let mut table = Table::open(path.as_ref(), &PROFILE_HEADER)?;
    let mut order: Vec<HouseholdProfile> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();

    for (line, rec) in table.records()? {
        let id: String = table.field(&rec, line, 0, "household")?;
        let kind_raw: String = table.field(&rec, line, 1, "kind")?;
        let kind = parse_kind(&kind_raw)
            .ok_or_else(|| table.err(line, format!("unknown household kind {kind_raw:?}")))?;
        let slot: usize = table.field(&rec, line, 2, "slot")?;
        let demand = finite(
            &table,
            line,
            "demand_kwh",
            table.field(&rec, line, 3, "demand_kwh")?,
        )?;
        let pv = finite(
            &table,
            line,
            "pv_kwh",
            table.field(&rec, line, 4, "pv_kwh")?,
        )?;

        let at = *index.entry(id.clone()).or_insert_with(|| {
            order.push(HouseholdProfile {
                id,
                kind,
                node: None,
                demand: Vec::new(),
                pv: Vec::new(),
            });
            order.len() - 1
        });
        let h = &mut order[at];
        if h.kind != kind {
            return Err(table.err(line, format!("household {} changes kind", h.id)));
        }
        if slot != h.demand.len() {
            return Err(table.err(
                line,
                format!(
                    "household {} expects slot {}, got {slot}",
                    h.id,
                    h.demand.len()
                ),
            ));
        }
        h.demand.push(demand);
        h.pv.push(pv);
    }

    if order.is_empty() {
        return Err(table.err(1, "no profile rows".into()));
    }
    let slots = order[0].demand.len();
    for h in &order {
        if h.demand.len() != slots {
            return Err(Error::Invalid(format!(
                "household {} covers {} slots, expected {slots}",
                h.id,
                h.demand.len()
            )));
        }
    }
    Ok(order)
}

pub fn write_profiles(path: impl AsRef<Path>, households: &[HouseholdProfile]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })?;
    let io_err = |e: csv::Error| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    };
    w.write_record(PROFILE_HEADER).map_err(io_err)?;
    for h in households {
        for t in 0..h.demand.len() {
            w.write_record(&[
                h.id.clone(),
                kind_name(h.kind).to_string(),
                t.to_string(),
                h.demand[t].to_string(),
                h.pv[t].to_string(),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read the import/export price pair per slot, rows in slot order.
pub fn read_tariffs(path: impl AsRef<Path>) -> Result<TariffSchedule> {
    let mut table = Table::open(path.as_ref(), &TARIFF_HEADER)?;
    let mut tariffs = TariffSchedule {
        import: Vec::new(),
        export: Vec::new(),
    };
    for (line, rec) in table.records()? {
        let slot: usize = table.field(&rec, line, 0, "slot")?;
        if slot != tariffs.import.len() {
            return Err(table.err(
                line,
                format!("expected slot {}, got {slot}", tariffs.import.len()),
            ));
        }
        let imp = finite(
            &table,
            line,
            "import_price",
            table.field(&rec, line, 1, "import_price")?,
        )?;
        let exp = finite(
            &table,
            line,
            "export_price",
            table.field(&rec, line, 2, "export_price")?,
        )?;
        tariffs.import.push(imp);
        tariffs.export.push(exp);
    }
    tariffs.validate()?;
    Ok(tariffs)
}

pub fn write_tariffs(path: impl AsRef<Path>, tariffs: &TariffSchedule) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })?;
    let io_err = |e: csv::Error| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    };
    w.write_record(TARIFF_HEADER).map_err(io_err)?;
    for t in 0..tariffs.import.len() {
        w.write_record(&[
            t.to_string(),
            tariffs.import[t].to_string(),
            tariffs.export[t].to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read nodal injections in engineering units into a per-unit vector
/// (generation positive; nodes absent from the file inject nothing).
pub fn read_injections(path: impl AsRef<Path>, net: &Network) -> Result<Vec<Complex64>> {
    let mut table = Table::open(path.as_ref(), &INJECTION_HEADER)?;
    let mut inj = vec![Complex64::new(0.0, 0.0); net.n_nodes()];
    for (line, rec) in table.records()? {
        let node: usize = table.field(&rec, line, 0, "node")?;
        if node == 0 || node >= net.n_nodes() {
            return Err(table.err(line, format!("node {node} is not a load node")));
        }
        let p = finite(&table, line, "p_kw", table.field(&rec, line, 1, "p_kw")?)?;
        let q = finite(
            &table,
            line,
            "q_kvar",
            table.field(&rec, line, 2, "q_kvar")?,
        )?;
        inj[node] += Complex64::new(net.kw_to_pu(p), net.kw_to_pu(q));
    }
    Ok(inj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Census;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("lemgrid-tables-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn profiles_round_trip_exactly() {
        let census = Census {
            consumers: 2,
            prosumers1: 1,
            prosumers2: 1,
        };
        let households = crate::agents::generate_profiles(&census, 8, 0.25, 5.0, 3);
        let path = tmp("roundtrip.csv");
        write_profiles(&path, &households).unwrap();
        let again = read_profiles(&path).unwrap();
        assert_eq!(households.len(), again.len());
        for (a, b) in households.iter().zip(&again) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.demand, b.demand, "kWh fields must survive the text form");
            assert_eq!(a.pv, b.pv);
        }
        // Writing the re-read data reproduces the file byte for byte.
        let bytes = std::fs::read(&path).unwrap();
        let path2 = tmp("roundtrip2.csv");
        write_profiles(&path2, &again).unwrap();
        assert_eq!(bytes, std::fs::read(&path2).unwrap());
    }

    #[test]
    fn malformed_profile_row_names_file_and_line() {
        let path = tmp("bad.csv");
        std::fs::write(
            &path,
            "household,kind,slot,demand_kwh,pv_kwh\nh001,consumer,0,0.4,0\nh001,consumer,1,oops,0\n",
        )
        .unwrap();
        let err = read_profiles(&path).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("bad.csv"), "{text}");
        assert!(text.contains(":3"), "{text}");
    }

    #[test]
    fn out_of_order_slots_are_rejected() {
        let path = tmp("order.csv");
        std::fs::write(
            &path,
            "household,kind,slot,demand_kwh,pv_kwh\nh001,consumer,1,0.4,0\n",
        )
        .unwrap();
        assert!(read_profiles(&path).is_err());
    }

    #[test]
    fn tariffs_round_trip() {
        let t = TariffSchedule {
            import: vec![28.0, 30.5, 28.0],
            export: vec![6.0, 6.0, 6.5],
        };
        let path = tmp("tariffs.csv");
        write_tariffs(&path, &t).unwrap();
        let again = read_tariffs(&path).unwrap();
        assert_eq!(t.import, again.import);
        assert_eq!(t.export, again.export);
    }
}
