//! Value of information on a finite scenario distribution with an exact
//! policy: the sizing LP sees every scenario with its true weight and designs
//! are scored by a single full-horizon window. With a factor of safety of 1
//! the score equals the LP objective, so EVPI bounds EVII from above.

use serde::{Deserialize, Serialize};

use crate::designopt::{build_and_solve, SystemDesign, SystemParams};
use crate::error::{Error, Result};
use crate::scenario::{ScenarioSet, PROBABILITY_TOL};
use crate::simulator::{simulate, MpcParams};

/// A finite prior over scenarios plus a discrete measurement channel.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    pub scenarios: ScenarioSet,
    pub params: SystemParams,
    /// `likelihood[k][m]` is the probability of reading `k` in scenario `m`.
    pub likelihood: Vec<Vec<f64>>,
}

impl DiscreteProblem {
    /// A noiseless measurement that reveals which group a scenario is in.
    pub fn partitioned(scenarios: ScenarioSet, params: SystemParams, groups: &[usize]) -> Result<Self> {
        if groups.len() != scenarios.len() {
            return Err(Error::Argument("one group label per scenario is required".into()));
        }
        let n_groups = groups.iter().max().map_or(0, |g| g + 1);
        let likelihood = (0..n_groups)
            .map(|k| groups.iter().map(|g| if *g == k { 1.0 } else { 0.0 }).collect())
            .collect();
        Ok(Self {
            scenarios,
            params,
            likelihood,
        })
    }

    /// A measurement that reveals nothing.
    pub fn uninformative(scenarios: ScenarioSet, params: SystemParams) -> Self {
        let n = scenarios.len();
        Self {
            scenarios,
            params,
            likelihood: vec![vec![1.0; n]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenarios.validate()?;
        self.params.validate(self.scenarios.horizon())?;
        let n = self.scenarios.len();
        if self.likelihood.iter().any(|row| row.len() != n) {
            return Err(Error::Validation("likelihood rows must cover every scenario".into()));
        }
        for m in 0..n {
            let col: f64 = self.likelihood.iter().map(|row| row[m]).sum();
            if (col - 1.0).abs() > 1e-9 || self.likelihood.iter().any(|row| row[m] < 0.0) {
                return Err(Error::Validation(format!(
                    "readings for scenario {m} do not form a distribution"
                )));
            }
        }
        Ok(())
    }

    fn evaluation(&self) -> MpcParams {
        MpcParams::full_foresight(self.scenarios.horizon(), self.params.fos_design)
    }

    /// Simulated lifetime cost of `design` in every scenario.
    pub fn scenario_costs(&self, design: &SystemDesign) -> Result<Vec<f64>> {
        let mpc = self.evaluation();
        self.scenarios
            .scenarios
            .iter()
            .map(|s| Ok(simulate(design, s, &self.params, &mpc)?.costs.total))
            .collect()
    }

    /// Optimal design for the scenarios reweighted by `weights` (zero weights dropped).
    pub fn design_for(&self, weights: &[f64]) -> Result<SystemDesign> {
        let total: f64 = weights.iter().sum();
        let scenarios = self
            .scenarios
            .scenarios
            .iter()
            .zip(weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(s, w)| {
                let mut s = s.clone();
                s.probability = w / total;
                s
            })
            .collect();
        Ok(build_and_solve(&ScenarioSet::new(scenarios)?, &self.params)?.design)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub reading: usize,
    pub probability: f64,
    pub design: SystemDesign,
    pub expected_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactVoi {
    pub prior_design: SystemDesign,
    pub prior_cost: f64,
    pub perfect_information_cost: f64,
    pub evpi: f64,
    pub evpi_raw: f64,
    pub preposterior_cost: f64,
    pub evii: f64,
    pub evii_raw: f64,
    pub outcomes: Vec<OutcomeRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Prior, perfect-information and pre-posterior costs by full enumeration.
pub fn exact_voi(problem: &DiscreteProblem) -> Result<ExactVoi> {
    problem.validate()?;
    let rho: Vec<f64> = problem.scenarios.scenarios.iter().map(|s| s.probability).collect();
    let prior_design = problem.design_for(&rho)?;
    let prior_cost = dot(&rho, &problem.scenario_costs(&prior_design)?);

    let mut perfect = 0.0;
    for (m, s) in problem.scenarios.scenarios.iter().enumerate() {
        let mut one = vec![0.0; rho.len()];
        one[m] = 1.0;
        let design = problem.design_for(&one)?;
        let mpc = problem.evaluation();
        perfect += s.probability * simulate(&design, s, &problem.params, &mpc)?.costs.total;
    }

    let mut outcomes = Vec::new();
    for (k, row) in problem.likelihood.iter().enumerate() {
        let joint: Vec<f64> = rho.iter().zip(row).map(|(r, l)| r * l).collect();
        let p: f64 = joint.iter().sum();
        if p <= PROBABILITY_TOL {
            continue;
        }
        let posterior: Vec<f64> = joint.iter().map(|j| j / p).collect();
        let design = problem.design_for(&posterior)?;
        let expected_cost = dot(&posterior, &problem.scenario_costs(&design)?);
        outcomes.push(OutcomeRecord {
            reading: k,
            probability: p,
            design,
            expected_cost,
        });
    }
    let preposterior_cost: f64 = outcomes.iter().map(|o| o.probability * o.expected_cost).sum();
    let evpi_raw = prior_cost - perfect;
    let evii_raw = prior_cost - preposterior_cost;
    Ok(ExactVoi {
        prior_design,
        prior_cost,
        perfect_information_cost: perfect,
        evpi: evpi_raw.max(0.0),
        evpi_raw,
        preposterior_cost,
        evii: evii_raw.max(0.0),
        evii_raw,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designopt::Tariff;
    use crate::scenario::Scenario;

    fn flat(level: f64) -> Scenario {
        Scenario {
            loads: vec![vec![level, level]],
            solar: vec![0.0, 0.0],
            probability: 0.5,
            timestep_hours: 1.0,
            provenance: vec![],
            solar_year: "s".into(),
        }
    }

    /// Two equiprobable flat loads of 1 and 3 kW over two hours; only the
    /// grid connection (1 £/kW/yr) and excess (1.5 £/kW/yr) are choices.
    pub(crate) fn two_scenario_instance() -> (ScenarioSet, SystemParams) {
        let set = ScenarioSet::new(vec![flat(1.0), flat(3.0)]).unwrap();
        let params = SystemParams {
            battery_price: 1e6,
            solar_price: 1e6,
            carbon_price: 0.0,
            grid_price_per_kw_day: 1.0 / 365.0,
            excess_price_per_kw_day: 1.5 / 365.0,
            fos_design: 1.0,
            fos_op: 1.0,
            tariff: Tariff {
                price: vec![1.0, 1.0],
                carbon: vec![0.0, 0.0],
            },
            ..Default::default()
        };
        (set, params)
    }

    #[test]
    fn two_scenario_values() {
        let (set, params) = two_scenario_instance();
        let gamma = params.lifetime_years;
        let full = exact_voi(&DiscreteProblem::partitioned(set.clone(), params.clone(), &[0, 1]).unwrap()).unwrap();
        assert!((full.prior_design.grid_kw - 1.0).abs() < 1e-6);
        assert!((full.prior_cost - 6.5 * gamma).abs() < 1e-6);
        assert!((full.perfect_information_cost - 6.0 * gamma).abs() < 1e-6);
        assert!((full.evpi - 0.5 * gamma).abs() < 1e-6);
        assert!((full.evii - full.evpi).abs() < 1e-6);
        let none = exact_voi(&DiscreteProblem::uninformative(set, params)).unwrap();
        assert!(none.evii_raw.abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_likelihood() {
        let (set, params) = two_scenario_instance();
        let p = DiscreteProblem {
            scenarios: set,
            params,
            likelihood: vec![vec![0.5, 1.0]],
        };
        assert!(matches!(exact_voi(&p), Err(Error::Validation(_))));
    }
}
