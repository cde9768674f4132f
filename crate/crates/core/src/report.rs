//! CSV and JSON output.
//!
//! Reals are written with 17 significant digits.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::fedcore::fmt_real;
use crate::harness::{AggregateMetrics, ExperimentResults, RunMetrics};

pub const REGRET_HEADER: &str = "variant,seed,t,avg_cum_regret";
pub const COMM_HEADER: &str = "variant,seed,round_index,depth,scalars_up,scalars_down,cumulative_scalars";

/// Runs ordered by (variant name, seed); ties keep their input order.
fn sorted(runs: &[RunMetrics]) -> Vec<&RunMetrics> {
    let mut v: Vec<&RunMetrics> = runs.iter().collect();
    v.sort_by(|a, b| (a.variant.name(), a.seed).cmp(&(b.variant.name(), b.seed)));
    v
}

pub fn write_regret_csv<W: Write>(mut w: W, runs: &[RunMetrics]) -> io::Result<()> {
    writeln!(w, "{REGRET_HEADER}")?;
    for r in sorted(runs) {
        for (t, v) in r.checkpoints.iter().zip(&r.avg_cum_regret) {
            writeln!(w, "{},{},{},{}", r.variant, r.seed, t, fmt_real(*v))?;
        }
    }
    Ok(())
}

pub fn write_comm_csv<W: Write>(mut w: W, runs: &[RunMetrics]) -> io::Result<()> {
    writeln!(w, "{COMM_HEADER}")?;
    for r in sorted(runs) {
        for (round, cum) in r.comm.iter().zip(r.cumulative_scalars()) {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.variant, r.seed, round.round_index, round.depth, round.scalars_up, round.scalars_down, cum
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub runs: usize,
    pub final_t: u64,
    pub final_mean: f64,
    pub final_std: f64,
    pub comm_rounds_mean: f64,
    pub transition_t_mean: Option<f64>,
}

impl From<&AggregateMetrics> for VariantSummary {
    fn from(a: &AggregateMetrics) -> Self {
        Self {
            runs: a.runs,
            final_t: *a.checkpoints.last().unwrap_or(&0),
            final_mean: a.final_mean,
            final_std: a.final_std,
            comm_rounds_mean: a.comm_rounds_mean,
            transition_t_mean: a.transition_t_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub variants: BTreeMap<String, VariantSummary>,
}

impl Summary {
    pub fn new(results: &ExperimentResults) -> Self {
        Self { variants: results.aggregates.iter().map(|a| (a.variant.name().to_string(), a.into())).collect() }
    }
}

/// Pretty JSON with every float at 17 significant digits.
struct SigDigits(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_real(v).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(io::Error::other)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Writes `regret.csv`, `comm.csv` and `summary.json` into `dir`. All
/// contents are rendered before the first file is touched.
pub fn write_outputs(dir: &Path, results: &ExperimentResults) -> Result<()> {
    let mut regret = Vec::new();
    write_regret_csv(&mut regret, &results.runs)?;
    let mut comm = Vec::new();
    write_comm_csv(&mut comm, &results.runs)?;
    let summary = to_json(&Summary::new(results))?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("regret.csv"), regret)?;
    fs::write(dir.join("comm.csv"), comm)?;
    fs::write(dir.join("summary.json"), summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Variant;
    use crate::pfpne::CommRound;

    fn metrics(variant: Variant, seed: u64) -> RunMetrics {
        RunMetrics {
            variant,
            seed,
            checkpoints: vec![10, 20],
            avg_cum_regret: vec![0.5, 0.1 + 0.2],
            client_final_regret: vec![0.3],
            comm: vec![
                CommRound { round_index: 0, depth: 0, scalars_up: 2, scalars_down: 3 },
                CommRound { round_index: 1, depth: 1, scalars_up: 4, scalars_down: 6 },
            ],
            transition_t: None,
        }
    }

    #[test]
    fn regret_rows_are_sorted_and_precise() {
        let mut out = Vec::new();
        write_regret_csv(&mut out, &[metrics(Variant::Pfpne, 2), metrics(Variant::GlobalOnly, 5), metrics(Variant::Pfpne, 1)])
            .unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REGRET_HEADER);
        assert_eq!(lines[1], "global-only,5,10,5.0000000000000000e-1");
        assert_eq!(lines[3], "pfpne,1,10,5.0000000000000000e-1");
        assert_eq!(lines[4], "pfpne,1,20,3.0000000000000004e-1");
        assert_eq!(lines.len(), 7);
        let v: f64 = lines[4].rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(v, 0.1 + 0.2);
    }

    #[test]
    fn comm_rows_accumulate() {
        let mut out = Vec::new();
        write_comm_csv(&mut out, &[metrics(Variant::Pfpne, 0)]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, format!("{COMM_HEADER}\npfpne,0,0,0,2,3,5\npfpne,0,1,1,4,6,15\n"));
    }

    #[test]
    fn json_floats_have_17_digits() {
        let s = to_json(&serde_json::json!({ "x": 0.1, "n": 3, "none": null })).unwrap();
        assert!(s.contains("\"x\": 1.0000000000000001e-1"), "{s}");
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
        assert_eq!(back["n"].as_u64(), Some(3));
    }
}
