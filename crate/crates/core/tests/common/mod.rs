#![allow(dead_code)]

use pseudosurv::design::{build_design, DesignMatrix};
use pseudosurv::pseudo::{pseudo_observations, PseudoObsMatrix};
use pseudosurv::sim::{calibrate_censoring, generate_trial, Scenario};
use pseudosurv::surv::{select_time_grid, SurvivalDataset, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random dataset with integer-valued times (so ties occur) and
/// roughly `censor` censoring.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, censor: f64) -> SurvivalDataset {
    loop {
        let time: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(1..=15u32))).collect();
        let event: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() >= censor).collect();
        let arm: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();
        if let Ok(d) = SurvivalDataset::new(time, event, arm) {
            return d;
        }
    }
}

/// Up to `k` grid points spread over the observed times.
pub fn random_grid(rng: &mut ChaCha8Rng, k: usize) -> TimeGrid {
    let mut pts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..16.0)).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    TimeGrid::new(pts).unwrap()
}

pub struct Prepared {
    pub data: SurvivalDataset,
    pub y: PseudoObsMatrix,
    pub x: DesignMatrix,
    pub truth: Vec<f64>,
}

pub fn prepare(data: SurvivalDataset, scenario: &Scenario) -> Prepared {
    let grid = select_time_grid(&data, scenario.k).unwrap();
    let y = pseudo_observations(&data, &grid).unwrap();
    let x = build_design(&data, &grid).unwrap();
    let truth = pseudosurv::sim::true_coefficients(scenario, grid.points());
    Prepared { data, y, x, truth }
}

/// Replication `rep` of a scenario, ready for fitting.
pub fn core_replicate(scenario: &Scenario, rep: usize) -> Prepared {
    let b = calibrate_censoring(scenario).unwrap();
    let d = generate_trial(scenario, b, scenario.replication_seed(rep)).unwrap();
    prepare(d, scenario)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
