//! Jackknife pseudo-observations of the survival function.
//!
//! For subject `i` and grid point `t_k`,
//! `y_ik = n·Ŝ(t_k) − (n−1)·Ŝ⁻ⁱ(t_k)` where `Ŝ⁻ⁱ` is the Kaplan-Meier curve of
//! the sample without subject `i`.

use std::io::Write;

use nalgebra::DMatrix;

use crate::surv::{kaplan_meier, SurvivalDataset, TimeGrid};
use crate::{Error, Result};

/// `n × K` pseudo-observations; row `i` is subject `i` of the dataset in its
/// original input order, column `k` is grid point `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObsMatrix {
    pub values: DMatrix<f64>,
    pub grid: TimeGrid,
}

impl PseudoObsMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.k())
            .map(|k| self.values.column(k).sum() / n)
            .collect()
    }

    /// Long-format CSV: `subject,time,value`, one line per subject and grid point.
    pub fn write_long_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "subject,time,value")?;
        for i in 0..self.n() {
            for (k, t) in self.grid.points().iter().enumerate() {
                writeln!(out, "{},{},{}", i + 1, t, self.values[(i, k)])?;
            }
        }
        Ok(())
    }
}

/// Event-time bookkeeping shared by all leave-one-out curves.
struct RiskTable {
    times: Vec<f64>,
    n_risk: Vec<f64>,
    n_event: Vec<f64>,
    /// `full[j]` = ∏_{l<j} (1 − d_l/n_l)
    full: Vec<f64>,
    /// `removed[j]` = ∏_{l<j} (1 − d_l/(n_l − 1)), i.e. one fewer at risk
    removed: Vec<f64>,
}

impl RiskTable {
    fn new(data: &SurvivalDataset) -> Result<Self> {
        let km = kaplan_meier(data)?;
        let j = km.times.len();
        let n_risk: Vec<f64> = km.n_risk.iter().map(|&v| v as f64).collect();
        let n_event: Vec<f64> = km.n_event.iter().map(|&v| v as f64).collect();
        let mut full = Vec::with_capacity(j + 1);
        let mut removed = Vec::with_capacity(j + 1);
        full.push(1.0);
        removed.push(1.0);
        for l in 0..j {
            full.push(full[l] * (1.0 - n_event[l] / n_risk[l]));
            let rest = n_risk[l] - 1.0;
            let factor = if rest > 0.0 {
                (1.0 - n_event[l] / rest).max(0.0)
            } else {
                1.0
            };
            removed.push(removed[l] * factor);
        }
        Ok(Self {
            times: km.times,
            n_risk,
            n_event,
            full,
            removed,
        })
    }

    /// Number of event times `<= t`.
    fn count_upto(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }
}

/// Fast path: one Kaplan-Meier pass plus `O(n·K)` leave-one-out updates.
pub fn pseudo_observations(data: &SurvivalDataset, grid: &TimeGrid) -> Result<PseudoObsMatrix> {
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewSubjects(n));
    }
    let table = RiskTable::new(data)?;
    let nf = n as f64;
    let grid_idx: Vec<usize> = grid.points().iter().map(|&t| table.count_upto(t)).collect();
    let full_at: Vec<f64> = grid_idx.iter().map(|&j| table.full[j]).collect();

    let mut values = DMatrix::zeros(n, grid.len());
    for i in 0..n {
        let ti = data.time()[i];
        let is_event = data.event()[i];
        // event times strictly before ti
        let before = table.times.partition_point(|&s| s < ti);
        let tied = before < table.times.len() && table.times[before] == ti;
        // event times at which subject i sits in the risk set without failing
        let at_risk_only = if tied && !is_event { before + 1 } else { before };
        let own_factor = if tied && is_event {
            let rest = table.n_risk[before] - 1.0;
            if rest > 0.0 {
                1.0 - (table.n_event[before] - 1.0) / rest
            } else {
                1.0
            }
        } else {
            1.0
        };
        // first event time after which subject i no longer affects the counts
        let resume = if tied { before + 1 } else { before };
        for (k, &jk) in grid_idx.iter().enumerate() {
            let loo = if jk <= at_risk_only {
                table.removed[jk]
            } else {
                let mut s = table.removed[at_risk_only];
                if tied && is_event {
                    s *= own_factor;
                }
                if jk > resume {
                    s *= table.full[jk] / table.full[resume];
                }
                s
            };
            values[(i, k)] = nf * full_at[k] - (nf - 1.0) * loo;
        }
    }
    Ok(PseudoObsMatrix {
        values,
        grid: grid.clone(),
    })
}

/// Reference implementation: `n + 1` literal Kaplan-Meier fits.
pub fn pseudo_observations_bruteforce(
    data: &SurvivalDataset,
    grid: &TimeGrid,
) -> Result<PseudoObsMatrix> {
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewSubjects(n));
    }
    let km = kaplan_meier(data)?;
    let nf = n as f64;
    let mut values = DMatrix::zeros(n, grid.len());
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let loo = match data.subset(&keep) {
            Ok(sub) => Some(kaplan_meier(&sub)?),
            Err(Error::NoEvents) => None,
            Err(e) => return Err(e),
        };
        for (k, &t) in grid.points().iter().enumerate() {
            let s_loo = loo.as_ref().map_or(1.0, |c| c.evaluate(t));
            values[(i, k)] = nf * km.evaluate(t) - (nf - 1.0) * s_loo;
        }
    }
    Ok(PseudoObsMatrix {
        values,
        grid: grid.clone(),
    })
}
