//! Right-censored survival data, the Kaplan-Meier estimator and time-grid selection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Optional subject-level covariates (in addition to the treatment arm).
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    /// `n × C` matrix, one row per subject.
    pub values: DMatrix<f64>,
}

/// Right-censored two-arm survival data.
///
/// Subjects keep their input order; `order` is the stable permutation that
/// sorts them by time with events before censorings at tied times.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    time: Vec<f64>,
    event: Vec<bool>,
    arm: Vec<u8>,
    covariates: Option<Covariates>,
    order: Vec<usize>,
}

impl SurvivalDataset {
    pub fn new(time: Vec<f64>, event: Vec<bool>, arm: Vec<u8>) -> Result<Self> {
        Self::with_covariates(time, event, arm, None)
    }

    pub fn with_covariates(
        time: Vec<f64>,
        event: Vec<bool>,
        arm: Vec<u8>,
        covariates: Option<Covariates>,
    ) -> Result<Self> {
        let n = time.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset is empty".into()));
        }
        if event.len() != n || arm.len() != n {
            return Err(Error::Dimension(format!(
                "time has {n} entries, status {}, arm {}",
                event.len(),
                arm.len()
            )));
        }
        if let Some((i, t)) = time.iter().enumerate().find(|(_, t)| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidData(format!(
                "time of subject {i} is {t}; times must be strictly positive and finite"
            )));
        }
        if let Some(i) = arm.iter().position(|&a| a > 1) {
            return Err(Error::InvalidData(format!("arm of subject {i} is not 0 or 1")));
        }
        if !event.iter().any(|&e| e) {
            return Err(Error::NoEvents);
        }
        if let Some(cov) = &covariates {
            if cov.values.nrows() != n {
                return Err(Error::Dimension(format!(
                    "covariate matrix has {} rows for {n} subjects",
                    cov.values.nrows()
                )));
            }
            if cov.names.len() != cov.values.ncols() {
                return Err(Error::Dimension(format!(
                    "{} covariate names for {} columns",
                    cov.names.len(),
                    cov.values.ncols()
                )));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        // events precede censorings at tied times
        order.sort_by(|&a, &b| {
            time[a]
                .partial_cmp(&time[b])
                .unwrap()
                .then_with(|| event[b].cmp(&event[a]))
        });
        Ok(Self {
            time,
            event,
            arm,
            covariates,
            order,
        })
    }

    /// Builds a dataset from 0/1 status codes.
    pub fn from_status(time: Vec<f64>, status: &[u8], arm: Vec<u8>) -> Result<Self> {
        if let Some(i) = status.iter().position(|&s| s > 1) {
            return Err(Error::InvalidData(format!("status of subject {i} is not 0 or 1")));
        }
        Self::new(time, status.iter().map(|&s| s == 1).collect(), arm)
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn arm(&self) -> &[u8] {
        &self.arm
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    /// Indices sorted by time (events first among ties).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    /// Fraction of censored subjects.
    pub fn censoring_fraction(&self) -> f64 {
        1.0 - self.n_events() as f64 / self.len() as f64
    }

    /// Ascending distinct times at which at least one event occurred.
    pub fn distinct_event_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &i in &self.order {
            if self.event[i] && out.last() != Some(&self.time[i]) {
                out.push(self.time[i]);
            }
        }
        out
    }

    /// The dataset restricted to `keep` (in the given order).
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        let covariates = self.covariates.as_ref().map(|c| Covariates {
            names: c.names.clone(),
            values: c.values.select_rows(keep),
        });
        Self::with_covariates(
            keep.iter().map(|&i| self.time[i]).collect(),
            keep.iter().map(|&i| self.event[i]).collect(),
            keep.iter().map(|&i| self.arm[i]).collect(),
            covariates,
        )
    }
}

/// Product-limit estimate of the survival function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeierCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub n_risk: Vec<usize>,
    pub n_event: Vec<usize>,
}

impl KaplanMeierCurve {
    /// Right-continuous step evaluation; 1 before the first event time and the
    /// last value carried forward after the last one.
    pub fn evaluate(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }
}

pub fn kaplan_meier(data: &SurvivalDataset) -> Result<KaplanMeierCurve> {
    let n = data.len();
    let time = data.time();
    let event = data.event();
    let mut curve = KaplanMeierCurve {
        times: Vec::new(),
        survival: Vec::new(),
        n_risk: Vec::new(),
        n_event: Vec::new(),
    };
    let mut at_risk = n;
    let mut surv = 1.0;
    let order = data.order();
    let mut pos = 0;
    while pos < n {
        let t = time[order[pos]];
        let mut deaths = 0;
        let mut leaving = 0;
        while pos < n && time[order[pos]] == t {
            if event[order[pos]] {
                deaths += 1;
            }
            leaving += 1;
            pos += 1;
        }
        if deaths > 0 {
            surv *= 1.0 - deaths as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(surv);
            curve.n_risk.push(at_risk);
            curve.n_event.push(deaths);
        }
        at_risk -= leaving;
    }
    if curve.times.is_empty() {
        return Err(Error::NoEvents);
    }
    Ok(curve)
}

/// How grid points are placed over the observed event times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridRule {
    /// Equal spacing in time between the smallest and largest event time,
    /// each point snapped to the nearest observed event time. The top point
    /// sits on the last event, where the Kaplan-Meier curve may already be 0.
    EqualTime,
    /// Event-time quantiles at probabilities `(k - 1/2) / K`.
    #[default]
    EventQuantiles,
}

impl std::str::FromStr for GridRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "equal-time" | "equal" | "time" => Ok(Self::EqualTime),
            "event-quantiles" | "quantiles" | "quantile" => Ok(Self::EventQuantiles),
            other => Err(Error::Config(format!(
                "unknown grid rule '{other}' (expected equal-time or event-quantiles)"
            ))),
        }
    }
}

/// Strictly increasing time points at which pseudo-observations are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("time grid needs at least one point".into()));
        }
        if points.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::Config("time grid points must be positive and finite".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("time grid points must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn select_time_grid(data: &SurvivalDataset, k: usize) -> Result<TimeGrid> {
    select_time_grid_with(data, k, GridRule::default())
}

pub fn select_time_grid_with(data: &SurvivalDataset, k: usize, rule: GridRule) -> Result<TimeGrid> {
    if k == 0 {
        return Err(Error::Config("number of time points must be at least 1".into()));
    }
    let events = data.distinct_event_times();
    if events.len() < k {
        return Err(Error::TooFewEventTimes {
            requested: k,
            available: events.len(),
        });
    }
    let mut points = match rule {
        GridRule::EqualTime => {
            let lo = events[0];
            let hi = events[events.len() - 1];
            raw_equal_spacing(lo, hi, k)
                .into_iter()
                .map(|t| snap_to_nearest(&events, t))
                .collect::<Vec<_>>()
        }
        GridRule::EventQuantiles => {
            // quantiles of all event times (with multiplicity)
            let all: Vec<f64> = data
                .order()
                .iter()
                .filter(|&&i| data.event()[i])
                .map(|&i| data.time()[i])
                .collect();
            let r = all.len();
            (1..=k)
                .map(|j| {
                    let p = (j as f64 - 0.5) / k as f64;
                    let idx = ((p * r as f64).ceil() as usize).clamp(1, r) - 1;
                    all[idx]
                })
                .collect()
        }
    };
    points.dedup();
    TimeGrid::new(points)
}

/// `k` equally spaced points on `[lo, hi]`; the midpoint when `k == 1`.
pub fn raw_equal_spacing(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (k - 1) as f64;
    (0..k)
        .map(|j| if j == k - 1 { hi } else { lo + step * j as f64 })
        .collect()
}

fn snap_to_nearest(sorted: &[f64], t: f64) -> f64 {
    let idx = sorted.partition_point(|&s| s < t);
    if idx == 0 {
        return sorted[0];
    }
    if idx == sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let (below, above) = (sorted[idx - 1], sorted[idx]);
    // ties go to the earlier time
    if t - below <= above - t {
        below
    } else {
        above
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(time: &[f64], status: &[u8]) -> SurvivalDataset {
        SurvivalDataset::from_status(time.to_vec(), status, vec![0; time.len()]).unwrap()
    }

    #[test]
    fn uncensored_km_is_empirical_survival() {
        let km = kaplan_meier(&ds(&[1.0, 2.0, 3.0], &[1, 1, 1])).unwrap();
        assert_eq!(km.times, vec![1.0, 2.0, 3.0]);
        let expected = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (s, e) in km.survival.iter().zip(expected) {
            assert!((s - e).abs() < 1e-15);
        }
    }

    #[test]
    fn censored_middle_subject() {
        let km = kaplan_meier(&ds(&[1.0, 2.0, 3.0], &[1, 0, 1])).unwrap();
        assert_eq!(km.times, vec![1.0, 3.0]);
        assert!((km.survival[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival[1], 0.0);
        assert_eq!(km.n_risk, vec![3, 1]);
    }

    #[test]
    fn single_subject() {
        let km = kaplan_meier(&ds(&[5.0], &[1])).unwrap();
        assert_eq!(km.evaluate(5.0), 0.0);
        assert_eq!(km.evaluate(4.999), 1.0);
    }

    #[test]
    fn no_events_is_an_error() {
        let err = SurvivalDataset::from_status(vec![1.0, 2.0], &[0, 0], vec![0, 1]).unwrap_err();
        assert_eq!(err.to_string(), "no events observed");
    }

    #[test]
    fn censoring_tied_with_event_stays_at_risk() {
        // event and censoring both at t=2: risk set at 2 contains both
        let km = kaplan_meier(&ds(&[1.0, 2.0, 2.0, 4.0], &[1, 0, 1, 1])).unwrap();
        assert_eq!(km.times, vec![1.0, 2.0, 4.0]);
        assert_eq!(km.n_risk, vec![4, 3, 1]);
        assert!((km.survival[1] - 0.75 * (2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn evaluate_steps() {
        let km = kaplan_meier(&ds(&[1.0, 2.0, 3.0], &[1, 1, 1])).unwrap();
        assert_eq!(km.evaluate(0.0), 1.0);
        assert!((km.evaluate(1.5) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.evaluate(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.evaluate(10.0), 0.0);
    }

    #[test]
    fn validation_errors() {
        assert!(SurvivalDataset::from_status(vec![0.0], &[1], vec![0]).is_err());
        assert!(SurvivalDataset::from_status(vec![f64::NAN], &[1], vec![0]).is_err());
        assert!(SurvivalDataset::from_status(vec![1.0], &[2], vec![0]).is_err());
        assert!(SurvivalDataset::from_status(vec![1.0], &[1], vec![3]).is_err());
        assert!(SurvivalDataset::from_status(vec![1.0, 2.0], &[1], vec![0, 0]).is_err());
    }

    #[test]
    fn equal_spacing_arithmetic() {
        let raw = raw_equal_spacing(1.0, 100.0, 5);
        assert_eq!(raw, vec![1.0, 25.75, 50.5, 75.25, 100.0]);
        assert_eq!(raw_equal_spacing(2.0, 4.0, 1), vec![3.0]);
    }

    #[test]
    fn grid_snaps_to_event_times() {
        let times: Vec<f64> = (1..=100).map(f64::from).collect();
        let d = ds(&times, &[1; 100]);
        let g = select_time_grid_with(&d, 5, GridRule::EqualTime).unwrap();
        // 25.75 -> 26, 50.5 -> 50 (tie to earlier), 75.25 -> 75
        assert_eq!(g.points(), &[1.0, 26.0, 50.0, 75.0, 100.0]);
        let g1 = select_time_grid_with(&d, 1, GridRule::EqualTime).unwrap();
        assert_eq!(g1.points(), &[50.0]);
    }

    #[test]
    fn grid_needs_enough_event_times() {
        let d = ds(&[1.0, 2.0, 3.0], &[1, 0, 1]);
        match select_time_grid(&d, 3) {
            Err(Error::TooFewEventTimes { requested, available }) => {
                assert_eq!((requested, available), (3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quantile_grid_uses_event_times() {
        let times: Vec<f64> = (1..=100).map(f64::from).collect();
        let d = ds(&times, &[1; 100]);
        let g = select_time_grid_with(&d, 5, GridRule::EventQuantiles).unwrap();
        assert_eq!(g.points(), &[10.0, 30.0, 50.0, 70.0, 90.0]);
        assert_eq!(select_time_grid(&d, 5).unwrap(), g);
    }
}
