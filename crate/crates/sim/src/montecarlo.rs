//! Parallel Monte-Carlo runs for consistency checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{run_pipeline, SimError, World};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub mean_nees: f64,
    pub final_position_error: f64,
    pub translation_ate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub runs: Vec<RunSummary>,
    /// NEES averaged over every frame of every run.
    pub mean_nees: f64,
    pub max_final_position_error: f64,
}

/// Runs the scenario with seeds `seed, seed + 1, …` and summarizes each run.
pub fn monte_carlo(scenario: &Scenario, runs: usize) -> Result<MonteCarloSummary, SimError> {
    let results: Vec<Result<(RunSummary, f64, usize), SimError>> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut s = scenario.clone();
            s.seed = scenario.seed.wrapping_add(i);
            let world = World::generate(&s)?;
            let out = run_pipeline(&world);
            let nees = out.nees_series(&world);
            let sum: f64 = nees.iter().sum();
            let errors = out.position_errors(&world);
            let final_err = errors.last().map_or(0.0, |(_, e)| e.norm());
            let ate = crate::metrics::compute_ate(&out.estimate_poses(), &world.truth_poses()).map_or(f64::NAN, |a| a.translation_rmse);
            let summary = RunSummary { seed: s.seed, mean_nees: sum / nees.len().max(1) as f64, final_position_error: final_err, translation_ate: ate };
            Ok((summary, sum, nees.len()))
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0;
    let mut out = Vec::with_capacity(runs);
    for r in results {
        let (summary, sum, n) = r?;
        total += sum;
        count += n;
        out.push(summary);
    }
    let max_final = out.iter().map(|r| r.final_position_error).fold(0.0, f64::max);
    Ok(MonteCarloSummary { runs: out, mean_nees: total / count.max(1) as f64, max_final_position_error: max_final })
}
