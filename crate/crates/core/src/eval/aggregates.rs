//! Per-step mean and standard-error series across trajectories.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Trajectory;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub mean: Vec<f64>,
    /// `std / sqrt(n)` per step.
    pub se: Vec<f64>,
}

/// Step `k` holds the post-trade inventory and cash, the pre-trade price and
/// volatility, and the trading rate of that step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_paths: usize,
    pub time: Vec<f64>,
    pub inventory: Series,
    pub price: Series,
    pub cash: Series,
    pub sqrt_v: Series,
    pub rate: Series,
}

fn series(trajs: &[Trajectory], f: impl Fn(&crate::market::StepRecord) -> f64) -> Series {
    let n_steps = trajs[0].steps.len();
    let n = trajs.len() as f64;
    let mut out = Series::default();
    for k in 0..n_steps {
        let m = trajs.iter().map(|t| f(&t.steps[k])).sum::<f64>() / n;
        let var = trajs.iter().map(|t| (f(&t.steps[k]) - m).powi(2)).sum::<f64>() / (n - 1.0);
        out.mean.push(m);
        out.se.push((var / n).sqrt());
    }
    out
}

pub fn emit_aggregates(trajs: &[Trajectory]) -> Result<Aggregates> {
    if trajs.len() < 2 {
        return Err(Error::InvalidParams("aggregates need at least two trajectories".into()));
    }
    let n_steps = trajs[0].steps.len();
    if let Some(t) = trajs.iter().find(|t| t.steps.len() != n_steps) {
        return Err(Error::ShapeMismatch {
            expected: n_steps,
            got: t.steps.len(),
        });
    }
    Ok(Aggregates {
        n_paths: trajs.len(),
        time: trajs[0].steps.iter().map(|s| s.t).collect(),
        inventory: series(trajs, |s| s.q),
        price: series(trajs, |s| s.s),
        cash: series(trajs, |s| s.cash),
        sqrt_v: series(trajs, |s| s.v.sqrt()),
        rate: series(trajs, |s| s.nu),
    })
}

impl Aggregates {
    pub fn quantities(&self) -> [(&'static str, &Series); 5] {
        [
            ("inventory", &self.inventory),
            ("price", &self.price),
            ("cash", &self.cash),
            ("sqrt_v", &self.sqrt_v),
            ("rate", &self.rate),
        ]
    }

    /// One CSV with `k,t,<q>_mean,<q>_se,...` columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "t".to_string()];
        for (name, _) in self.quantities() {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_se"));
        }
        w.write_record(header)?;
        for (k, t) in self.time.iter().enumerate() {
            let mut rec = vec![k.to_string(), t.to_string()];
            for (_, s) in self.quantities() {
                rec.push(s.mean[k].to_string());
                rec.push(s.se[k].to_string());
            }
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
