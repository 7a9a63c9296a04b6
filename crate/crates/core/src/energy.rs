//! Energy accounting: metering of training sessions, kWh to gCO2
//! conversion, the cost-per-point metric against a per-feature-family
//! baseline, and the report that ties them together.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Official grid carbon intensity used throughout, in grams per kWh.
pub const GCO2_PER_KWH: f64 = 51.0;

/// One finished training run, the unit the report works on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// Strategy tag such as "3steps", "2steps", "1step", "1step+PM".
    pub strategy: String,
    /// Input feature family; baseline selection groups by this tag exactly.
    pub feature_family: String,
    pub kwh: f64,
    pub wall_time_s: f64,
    /// Percentages; may exceed 100.
    pub dev_cer: f64,
    pub test_cer: f64,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.kwh.is_finite() && self.kwh >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "run {:?}: kwh must be finite and non-negative, got {}",
                self.run_id, self.kwh
            )));
        }
        for (name, v) in [("dev_cer", self.dev_cer), ("test_cer", self.test_cer)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "run {:?}: {name} must be finite and non-negative, got {v}",
                    self.run_id
                )));
            }
        }
        if !(self.wall_time_s.is_finite() && self.wall_time_s >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "run {:?}: wall_time_s must be finite and non-negative, got {}",
                self.run_id, self.wall_time_s
            )));
        }
        Ok(())
    }
}

/// How energy is measured. Simulated derives kWh from wall time at a fixed
/// power draw; recorded injects a value obtained from an external meter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnergyMeter {
    Simulated { power_watts: f64 },
    Recorded { kwh: f64 },
}

impl EnergyMeter {
    pub fn simulated(power_watts: f64) -> Result<Self> {
        if !(power_watts.is_finite() && power_watts > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "simulated meter needs positive power, got {power_watts} W"
            )));
        }
        Ok(EnergyMeter::Simulated { power_watts })
    }

    pub fn recorded(kwh: f64) -> Result<Self> {
        if !(kwh.is_finite() && kwh >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "recorded meter needs non-negative kWh, got {kwh}"
            )));
        }
        Ok(EnergyMeter::Recorded { kwh })
    }
}

/// What a metered session observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterReading {
    pub kwh: f64,
    pub wall_time_s: f64,
}

/// Times `work` and converts the elapsed time to energy according to the
/// meter. A recorded meter passes its injected value through unchanged.
pub fn meter_session<T>(
    meter: EnergyMeter,
    work: impl FnOnce() -> Result<T>,
) -> Result<(T, MeterReading)> {
    let start = Instant::now();
    let value = work()?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let kwh = match meter {
        EnergyMeter::Simulated { power_watts } => wall_time_s * power_watts / 3.6e6,
        EnergyMeter::Recorded { kwh } => kwh,
    };
    Ok((value, MeterReading { kwh, wall_time_s }))
}

/// Grams of CO2 for a given energy draw, rounded to the nearest gram.
pub fn kwh_to_gco2(kwh: f64) -> Result<i64> {
    if !(kwh.is_finite() && kwh >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kwh must be finite and non-negative, got {kwh}"
        )));
    }
    Ok((GCO2_PER_KWH * kwh).round() as i64)
}

/// The cheapest run within a feature family: minimum kWh, ties broken by
/// lower test CER, then by run id.
pub fn select_baseline<'a>(records: &'a [RunRecord], family: &str) -> Result<&'a RunRecord> {
    records
        .iter()
        .filter(|r| r.feature_family == family)
        .min_by(|a, b| {
            a.kwh
                .total_cmp(&b.kwh)
                .then(a.test_cer.total_cmp(&b.test_cer))
                .then_with(|| a.run_id.cmp(&b.run_id))
        })
        .ok_or_else(|| Error::NotFound(format!("no runs with feature family {family:?}")))
}

/// Energy paid per point of CER improvement, or a marker that the costlier
/// run bought no improvement. Kept as an enum so serialized reports never
/// contain float infinities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CerCost {
    PerPoint(f64),
    Infinite,
}

impl fmt::Display for CerCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CerCost::PerPoint(v) => write!(f, "{v:.3}"),
            CerCost::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for CerCost {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CerCost::PerPoint(v) => serializer.serialize_f64(*v),
            CerCost::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for CerCost {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Num(f64),
            Tag(String),
        }
        match Wire::deserialize(deserializer)? {
            Wire::Num(v) => Ok(CerCost::PerPoint(v)),
            Wire::Tag(s) if s == "inf" => Ok(CerCost::Infinite),
            Wire::Tag(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Extra kWh spent by `mc` per point of test CER it gains over the baseline
/// `me`. Requires the candidate to be at least as costly as the baseline;
/// a candidate that is not strictly better is infinitely expensive per
/// point, and comparing a run against itself costs nothing.
pub fn kwh_per_point(mc: &RunRecord, me: &RunRecord) -> Result<CerCost> {
    if mc.kwh < me.kwh {
        return Err(Error::Constraint(format!(
            "candidate {:?} ({} kWh) is cheaper than baseline {:?} ({} kWh)",
            mc.run_id, mc.kwh, me.run_id, me.kwh
        )));
    }
    if mc.kwh == me.kwh && mc.test_cer == me.test_cer {
        return Ok(CerCost::PerPoint(0.0));
    }
    if mc.test_cer >= me.test_cer {
        return Ok(CerCost::Infinite);
    }
    Ok(CerCost::PerPoint(
        (mc.kwh - me.kwh) / (me.test_cer - mc.test_cer),
    ))
}

/// One line of the energy report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub record: RunRecord,
    pub gco2: i64,
    pub is_baseline: bool,
    /// Absent on baseline rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CerCost>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyReport {
    pub rows: Vec<ReportRow>,
}

impl EnergyReport {
    /// Looks a row up by run id.
    pub fn row(&self, run_id: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.record.run_id == run_id)
    }
}

/// Builds the report: every row gains its gCO2 figure, each feature family
/// gets its cheapest run flagged as the baseline, and every other run in
/// the family is priced against that baseline. Input order is preserved.
pub fn build_report(records: &[RunRecord]) -> Result<EnergyReport> {
    let mut rows = Vec::with_capacity(records.len());
    for record in records {
        record.validate()?;
        let baseline = select_baseline(records, &record.feature_family)?;
        let is_baseline = std::ptr::eq(record, baseline);
        let cost = if is_baseline {
            None
        } else {
            Some(kwh_per_point(record, baseline)?)
        };
        rows.push(ReportRow {
            record: record.clone(),
            gco2: kwh_to_gco2(record.kwh)?,
            is_baseline,
            cost,
        });
    }
    Ok(EnergyReport { rows })
}

fn format_duration(seconds: f64) -> String {
    if seconds >= 3600.0 {
        let h = (seconds / 3600.0).floor() as u64;
        let m = ((seconds - h as f64 * 3600.0) / 60.0).round() as u64;
        format!("{h}h{m:02}")
    } else if seconds >= 60.0 {
        let m = (seconds / 60.0).floor() as u64;
        let s = (seconds - m as f64 * 60.0).round() as u64;
        format!("{m}m{s:02}")
    } else {
        format!("{seconds:.1}s")
    }
}

/// Renders the report as an aligned plain-text table. Baseline rows show
/// "Me" in the cost column; runs that bought no improvement show "inf".
pub fn render_table(report: &EnergyReport) -> String {
    const HEADERS: [&str; 7] = [
        "Strategy",
        "Input",
        "kWh (gCO2)",
        "kWh/p",
        "Time",
        "DEV",
        "TEST",
    ];
    let mut cells: Vec<[String; 7]> = Vec::with_capacity(report.rows.len());
    for row in &report.rows {
        let cost = match (&row.cost, row.is_baseline) {
            (_, true) => "Me".to_string(),
            (Some(c), false) => c.to_string(),
            (None, false) => String::new(),
        };
        cells.push([
            row.record.strategy.clone(),
            row.record.feature_family.clone(),
            format!("{:.3} ({})", row.record.kwh, row.gco2),
            cost,
            format_duration(row.record.wall_time_s),
            format!("{:.2}", row.record.dev_cer),
            format!("{:.2}", row.record.test_cer),
        ]);
    }
    let mut widths: Vec<usize> = HEADERS.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let render_line = |out: &mut String, row: &[String]| {
        let mut parts = Vec::with_capacity(row.len());
        for (cell, w) in row.iter().zip(&widths) {
            parts.push(format!("{cell:<w$}"));
        }
        out.push_str(parts.join(" | ").trim_end());
        out.push('\n');
    };
    let header: Vec<String> = HEADERS.iter().map(|h| h.to_string()).collect();
    render_line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    render_line(&mut out, &rule);
    for row in &cells {
        render_line(&mut out, row);
    }
    out
}

/// Renders the report as one JSON record per line.
pub fn render_records(report: &EnergyReport) -> Result<String> {
    let mut out = String::new();
    for row in &report.rows {
        let line = serde_json::to_string(row).map_err(|e| {
            Error::InvalidArgument(format!("serialize {:?}: {e}", row.record.run_id))
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Loads a run ledger (one JSON record per line; blank lines ignored).
pub fn load_ledger(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Appends a record to the ledger with a whole-file write and rename, so a
/// reader never observes a half-written line.
pub fn append_ledger(path: &Path, record: &RunRecord) -> Result<()> {
    record.validate()?;
    let mut records = if path.exists() {
        load_ledger(path)?
    } else {
        Vec::new()
    };
    records.push(record.clone());
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|e| Error::io(path, e))?;
    for r in &records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::InvalidArgument(format!("serialize {:?}: {e}", r.run_id)))?;
        tmp.write_all(line.as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, strategy: &str, family: &str, kwh: f64, dev: f64, test: f64) -> RunRecord {
        RunRecord {
            run_id: id.to_string(),
            strategy: strategy.to_string(),
            feature_family: family.to_string(),
            kwh,
            wall_time_s: 100.0,
            dev_cer: dev,
            test_cer: test,
        }
    }

    fn first_benchmark_rows() -> Vec<RunRecord> {
        vec![
            rec("pm-3s-sp", "3steps", "spectro", 4.473, 35.91, 40.57),
            rec("pm-2s-sp", "2steps", "spectro", 2.989, 65.80, 87.32),
            rec("pm-1s-sp", "1step", "spectro", 1.708, 59.22, 68.50),
            rec("pm-3s-w2", "3steps", "w2v2-fr", 3.983, 22.17, 22.51),
            rec("pm-2s-w2", "2steps", "w2v2-fr", 2.707, 21.86, 23.02),
            rec("pm-1s-w2", "1step", "w2v2-fr", 1.815, 25.53, 23.48),
            rec("pm-1s-ft", "1step+1", "w2v2-fr-slu", 1.214, 21.50, 22.13),
        ]
    }

    fn second_benchmark_rows() -> Vec<RunRecord> {
        vec![
            rec("md-3s-sp", "3steps", "spectro", 6.651, 28.35, 28.95),
            rec("md-2s-sp", "2steps", "spectro", 4.417, 32.04, 32.85),
            rec("md-1s-sp", "1step", "spectro", 2.407, 46.57, 44.50),
            rec("md-3s-w2", "3steps", "w2v2-fr", 3.597, 18.69, 16.14),
            rec("md-2s-w2", "2steps", "w2v2-fr", 2.445, 18.24, 16.23),
            rec("md-1s-w2", "1step", "w2v2-fr", 2.150, 19.68, 18.77),
            rec("md-2s-ft", "2steps+1", "w2v2-fr-slu", 2.569, 14.25, 13.78),
            rec("md-1s-ft", "1step+1", "w2v2-fr-slu", 2.529, 14.16, 13.26),
            rec("md-1s-pm", "1step+PM", "w2v2-fr", 2.420, 18.27, 16.61),
            rec("md-1f-pm", "1step+1+PM", "w2v2-fr-slu", 2.026, 13.59, 13.21),
        ]
    }

    fn finite(cost: &Option<CerCost>) -> f64 {
        match cost {
            Some(CerCost::PerPoint(v)) => *v,
            other => panic!("expected finite cost, got {other:?}"),
        }
    }

    #[test]
    fn gco2_examples() {
        assert_eq!(kwh_to_gco2(1.0).unwrap(), 51);
        assert_eq!(kwh_to_gco2(4.473).unwrap(), 228);
        assert_eq!(kwh_to_gco2(2.026).unwrap(), 103);
        assert_eq!(kwh_to_gco2(0.0).unwrap(), 0);
        assert!(kwh_to_gco2(-0.1).is_err());
    }

    #[test]
    fn baseline_is_cheapest_in_family() {
        let rows = second_benchmark_rows();
        let b = select_baseline(&rows, "spectro").unwrap();
        assert_eq!(b.run_id, "md-1s-sp");
        assert_eq!(b.kwh, 2.407);
        assert!(select_baseline(&rows, "nope").is_err());
    }

    #[test]
    fn baseline_single_record_is_itself() {
        let rows = vec![rec("only", "1step", "fam", 3.3, 10.0, 11.0)];
        assert_eq!(select_baseline(&rows, "fam").unwrap().run_id, "only");
    }

    #[test]
    fn baseline_ties_break_on_test_cer_then_id() {
        let rows = vec![
            rec("b", "1step", "fam", 1.0, 5.0, 20.0),
            rec("a", "1step", "fam", 1.0, 5.0, 10.0),
        ];
        assert_eq!(select_baseline(&rows, "fam").unwrap().run_id, "a");
        let rows = vec![
            rec("b", "1step", "fam", 1.0, 5.0, 10.0),
            rec("a", "1step", "fam", 1.0, 5.0, 10.0),
        ];
        assert_eq!(select_baseline(&rows, "fam").unwrap().run_id, "a");
    }

    #[test]
    fn cost_per_point_examples() {
        let mc = rec("c", "3steps", "f", 6.651, 0.0, 28.95);
        let me = rec("e", "1step", "f", 2.407, 0.0, 44.50);
        let got = kwh_per_point(&mc, &me).unwrap();
        match got {
            CerCost::PerPoint(v) => assert!((v - 0.273).abs() < 1e-3, "got {v}"),
            _ => panic!("expected finite"),
        }

        let mc = rec("c", "3steps", "f", 3.983, 0.0, 22.51);
        let me = rec("e", "1step", "f", 1.815, 0.0, 23.48);
        match kwh_per_point(&mc, &me).unwrap() {
            CerCost::PerPoint(v) => assert!((v - 2.235).abs() < 1e-3, "got {v}"),
            _ => panic!("expected finite"),
        }

        let mc = rec("c", "2steps", "f", 2.989, 0.0, 87.32);
        let me = rec("e", "1step", "f", 1.708, 0.0, 68.50);
        assert_eq!(kwh_per_point(&mc, &me).unwrap(), CerCost::Infinite);

        let same = rec("e", "1step", "f", 1.708, 0.0, 68.50);
        assert_eq!(kwh_per_point(&same, &same).unwrap(), CerCost::PerPoint(0.0));

        let cheap = rec("c", "1step", "f", 1.0, 0.0, 10.0);
        let costly = rec("e", "1step", "f", 2.0, 0.0, 20.0);
        assert!(matches!(
            kwh_per_point(&cheap, &costly),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn cost_per_point_is_monotone() {
        let me = rec("e", "1step", "f", 1.0, 0.0, 30.0);
        let mut last = 0.0;
        for step in 1..=10 {
            let mc = rec("c", "3steps", "f", 1.0 + step as f64, 0.0, 20.0);
            let v = match kwh_per_point(&mc, &me).unwrap() {
                CerCost::PerPoint(v) => v,
                _ => panic!(),
            };
            assert!(v > last);
            last = v;
        }
        let mut last = f64::INFINITY;
        for step in 1..=9 {
            let mc = rec("c", "3steps", "f", 2.0, 0.0, 30.0 - step as f64);
            let v = match kwh_per_point(&mc, &me).unwrap() {
                CerCost::PerPoint(v) => v,
                _ => panic!(),
            };
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn report_reproduces_first_benchmark() {
        let report = build_report(&first_benchmark_rows()).unwrap();
        assert!((finite(&report.row("pm-3s-sp").unwrap().cost) - 0.099).abs() < 1e-3);
        assert_eq!(
            report.row("pm-2s-sp").unwrap().cost,
            Some(CerCost::Infinite)
        );
        assert!(report.row("pm-1s-sp").unwrap().is_baseline);
        assert!((finite(&report.row("pm-3s-w2").unwrap().cost) - 2.235).abs() < 1e-3);
        assert!((finite(&report.row("pm-2s-w2").unwrap().cost) - 1.939).abs() < 1e-3);
        assert!(report.row("pm-1s-w2").unwrap().is_baseline);
        assert!(report.row("pm-1s-ft").unwrap().is_baseline);
        let published = [228, 152, 87, 203, 138, 93, 62];
        for (row, want) in report.rows.iter().zip(published) {
            assert_eq!(row.gco2, want, "row {}", row.record.run_id);
        }
    }

    #[test]
    fn report_reproduces_second_benchmark() {
        let report = build_report(&second_benchmark_rows()).unwrap();
        assert!((finite(&report.row("md-3s-sp").unwrap().cost) - 0.273).abs() < 1e-3);
        assert!((finite(&report.row("md-2s-sp").unwrap().cost) - 0.173).abs() < 1e-3);
        assert!(report.row("md-1s-sp").unwrap().is_baseline);
        assert!((finite(&report.row("md-3s-w2").unwrap().cost) - 0.550).abs() < 1e-3);
        assert!((finite(&report.row("md-2s-w2").unwrap().cost) - 0.116).abs() < 1e-3);
        assert!(report.row("md-1s-w2").unwrap().is_baseline);
        assert_eq!(
            report.row("md-2s-ft").unwrap().cost,
            Some(CerCost::Infinite)
        );
        assert_eq!(
            report.row("md-1s-ft").unwrap().cost,
            Some(CerCost::Infinite)
        );
        assert!((finite(&report.row("md-1s-pm").unwrap().cost) - 0.125).abs() < 1e-3);
        assert!(report.row("md-1f-pm").unwrap().is_baseline);
        let published = [339, 225, 123, 183, 125, 110, 131, 129, 123, 103];
        for (row, want) in report.rows.iter().zip(published) {
            assert_eq!(row.gco2, want, "row {}", row.record.run_id);
        }
    }

    #[test]
    fn single_run_report_is_a_lone_baseline() {
        let report = build_report(&[rec("r", "1step", "fam", 2.0, 10.0, 12.0)]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].is_baseline);
        assert!(report.rows[0].cost.is_none());
    }

    #[test]
    fn simulated_meter_converts_time_to_energy() {
        let meter = EnergyMeter::simulated(1000.0).unwrap();
        let ((), reading) = meter_session(meter, || {
            std::thread::sleep(std::time::Duration::from_millis(20));
            Ok(())
        })
        .unwrap();
        assert!(reading.wall_time_s >= 0.02);
        let expected = reading.wall_time_s * 1000.0 / 3.6e6;
        assert!((reading.kwh - expected).abs() < 1e-15);
    }

    #[test]
    fn recorded_meter_passes_value_through() {
        let meter = EnergyMeter::recorded(2.45).unwrap();
        let ((), reading) = meter_session(meter, || Ok(())).unwrap();
        assert_eq!(reading.kwh, 2.45);
        assert!(EnergyMeter::simulated(0.0).is_err());
        assert!(EnergyMeter::recorded(-1.0).is_err());
    }

    #[test]
    fn table_rendering_marks_baseline_and_infinity() {
        let report = build_report(&first_benchmark_rows()).unwrap();
        let table = render_table(&report);
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("Strategy"));
        for col in ["Input", "kWh (gCO2)", "kWh/p", "Time", "DEV", "TEST"] {
            assert!(header.contains(col), "missing column {col}");
        }
        assert!(table.contains("4.473 (228)"));
        assert!(table.contains("0.099"));
        assert!(table.contains("inf"));
        assert!(table.contains("Me"));
        assert!(table.contains("1m40"));
    }

    #[test]
    fn record_rendering_round_trips_costs() {
        let report = build_report(&first_benchmark_rows()).unwrap();
        let text = render_records(&report).unwrap();
        assert_eq!(text.lines().count(), report.rows.len());
        for (line, row) in text.lines().zip(&report.rows) {
            let back: ReportRow = serde_json::from_str(line).unwrap();
            assert_eq!(&back, row);
        }
        assert!(text.contains("\"inf\""));
    }

    #[test]
    fn duration_formatting() {
        assert_eq!(format_duration(12.34), "12.3s");
        assert_eq!(format_duration(100.0), "1m40");
        assert_eq!(format_duration(82740.0), "22h59");
    }

    #[test]
    fn ledger_appends_and_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        assert!(load_ledger(&path).is_err());
        let a = rec("a", "1step", "fam", 1.0, 10.0, 11.0);
        let b = rec("b", "3steps", "fam", 3.0, 8.0, 9.0);
        append_ledger(&path, &a).unwrap();
        append_ledger(&path, &b).unwrap();
        let got = load_ledger(&path).unwrap();
        assert_eq!(got, vec![a, b]);
    }

    #[test]
    fn ledger_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        std::fs::write(&path, "{\"run_id\": \"x\"\n").unwrap();
        match load_ledger(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
