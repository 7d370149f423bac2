//! Strategy by scenario tables of (IS, STD, AC).

use std::fmt::Write as _;
use std::io::Write;

use super::ReportRow;
use crate::error::{Error, Result};
use crate::scenario::ScenarioLabel;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTable {
    pub beta: f64,
    pub strategies: Vec<String>,
    pub scenarios: Vec<ScenarioLabel>,
    /// `values[strategy][scenario] = [mean IS, STD, AC]`.
    pub values: Vec<Vec<[f64; 3]>>,
}

/// Builds the table for `beta` from report rows. Every strategy present at
/// `beta` must have a row for each of the four scenarios.
pub fn scenario_table(rows: &[ReportRow], beta: f64) -> Result<ScenarioTable> {
    let at_beta: Vec<&ReportRow> = rows.iter().filter(|r| r.beta == beta).collect();
    let mut strategies: Vec<String> = Vec::new();
    for r in &at_beta {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy.clone());
        }
    }
    if strategies.is_empty() {
        return Err(Error::MissingCell {
            scenario: "any".into(),
            strategy: format!("any (beta = {beta})"),
        });
    }
    let scenarios = ScenarioLabel::ALL.to_vec();
    let mut values = Vec::with_capacity(strategies.len());
    for s in &strategies {
        let mut line = Vec::with_capacity(4);
        for sc in &scenarios {
            let r = at_beta
                .iter()
                .find(|r| &r.strategy == s && r.scenario == sc.name())
                .ok_or_else(|| Error::MissingCell {
                    scenario: sc.to_string(),
                    strategy: s.clone(),
                })?;
            line.push([r.mean_is, r.std_is, r.ac]);
        }
        values.push(line);
    }
    Ok(ScenarioTable {
        beta,
        strategies,
        scenarios,
        values,
    })
}

impl ScenarioTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["strategy".to_string()];
        for sc in &self.scenarios {
            for m in ["IS", "STD", "AC"] {
                h.push(format!("{sc}_{m}"));
            }
        }
        h
    }

    /// CSV with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for (s, line) in self.strategies.iter().zip(&self.values) {
            let mut rec = vec![s.clone()];
            rec.extend(line.iter().flatten().map(|v| v.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the output of [`ScenarioTable::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R, beta: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut strategies = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 13 {
                return Err(Error::Format(format!("table row has {} fields, expected 13", rec.len())));
            }
            strategies.push(rec[0].to_string());
            let nums = (1..13)
                .map(|i| rec[i].parse::<f64>().map_err(|e| Error::Format(format!("field {i}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            values.push(nums.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
        }
        Ok(ScenarioTable {
            beta,
            strategies,
            scenarios: ScenarioLabel::ALL.to_vec(),
            values,
        })
    }

    /// Aligned plain-text rendering with two decimals.
    pub fn to_text(&self) -> String {
        let name_w = self.strategies.iter().map(|s| s.len()).max().unwrap_or(8).max(8);
        let col_w = 12;
        let mut out = String::new();
        let _ = writeln!(out, "beta = {}", self.beta);
        let _ = write!(out, "{:name_w$}", "");
        for sc in &self.scenarios {
            let _ = write!(out, " | {:^w$}", sc.name(), w = 3 * col_w + 2);
        }
        out.push('\n');
        let _ = write!(out, "{:name_w$}", "strategy");
        for _ in &self.scenarios {
            let _ = write!(out, " | {:>col_w$} {:>col_w$} {:>col_w$}", "IS", "STD", "AC");
        }
        out.push('\n');
        for (s, line) in self.strategies.iter().zip(&self.values) {
            let _ = write!(out, "{s:name_w$}");
            for [is, sd, ac] in line {
                let _ = write!(out, " | {is:>col_w$.2} {sd:>col_w$.2} {ac:>col_w$.2}");
            }
            out.push('\n');
        }
        out
    }
}
