//! Benchmark systems: ground truth, experimental design and noisy
//! observations.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Environment};
use crate::error::{Error, Result};
use crate::field::{
    enumerate_search_space, find_reaction, FieldKind, FieldSpec, IntMatrix, SearchSpace,
    Stoichiometry,
};
use crate::ode::{solve_ivp, SolveConfig};
use crate::scales::{apply_environment, InterventionScales};

/// Default Michaelis-Menten rates `(k_f, k_r, k_cat)`.
pub const MM_RATES: [f64; 3] = [1.0, 1.0, 1.0];
/// `(E, ES, P, S)` at time 0.
pub const MM_INITIAL: [f64; 4] = [10.0, 2.0, 2.0, 10.0];

pub const ENVZ_SPECIES: [&str; 6] = ["EnvZ_OmpRP", "EnvZP_OmpR", "EnvZ", "EnvZP", "OmpR", "OmpRP"];

#[derive(Debug, Clone, PartialEq)]
pub enum System {
    /// Five independent predator-prey pairs.
    LotkaVolterra {
        v: f64,
        environments: usize,
        sigma: f64,
    },
    EnzymeNetwork {
        d: usize,
        alpha: usize,
        environments: usize,
        n: usize,
        sigma: f64,
        space: SearchSpace,
    },
    MichaelisMenten {
        n: usize,
        sigma: f64,
        rates: [f64; 3],
    },
    EnvZ {
        sigma: f64,
        rate_sd: f64,
    },
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::LotkaVolterra { .. } => "lotka-volterra",
            System::EnzymeNetwork { .. } => "enzyme-network",
            System::MichaelisMenten { .. } => "michaelis-menten",
            System::EnvZ { .. } => "envz-ompr",
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            System::LotkaVolterra { sigma, .. }
            | System::EnzymeNetwork { sigma, .. }
            | System::MichaelisMenten { sigma, .. }
            | System::EnvZ { sigma, .. } => sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = self.sigma();
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sigma must be >= 0, got {sigma}"
            )));
        }
        match *self {
            System::LotkaVolterra {
                v, environments, ..
            } => {
                if environments == 0 || !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(
                        "lotka-volterra needs v >= 0 and at least one environment".into(),
                    ));
                }
            }
            System::EnzymeNetwork {
                d,
                alpha,
                environments,
                n,
                ..
            } => {
                if d < 3 || alpha == 0 || alpha >= d || environments == 0 || n < 2 {
                    return Err(Error::InvalidInput(
                        "enzyme-network needs d >= 3, 1 <= alpha < d, n >= 2 and an environment"
                            .into(),
                    ));
                }
            }
            System::MichaelisMenten { n, rates, .. } => {
                if n < 2 || rates.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
                    return Err(Error::InvalidInput(
                        "michaelis-menten needs n >= 2 and non-negative rates".into(),
                    ));
                }
            }
            System::EnvZ { rate_sd, .. } => {
                if !(rate_sd >= 0.0) || !rate_sd.is_finite() {
                    return Err(Error::InvalidInput("rate_sd must be >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// The true model expressed in the search space used for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub space: FieldSpec,
    pub theta: Vec<f64>,
    /// Equilibrium state used by knock-down designs.
    pub equilibrium: Option<Vec<f64>>,
}

impl GroundTruth {
    pub fn support(&self) -> Vec<usize> {
        crate::optim::support_of(&self.theta)
    }
}

/// Initial states, scales and sampling times of a set of environments.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub initial_states: Vec<Vec<f64>>,
    pub times: Vec<Vec<f64>>,
    pub scales: InterventionScales,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub system: System,
    pub seed: u64,
    pub truth: GroundTruth,
    pub design: Design,
    /// Noise-free states at the observation times.
    pub clean: Vec<Vec<Vec<f64>>>,
    pub dataset: Dataset,
}

pub fn simulation_solver() -> SolveConfig {
    SolveConfig::rkf45(1e-10, 1e-10).with_max_steps(1_000_000)
}

/// Mass action spec of the Michaelis-Menten system over `(E, ES, P, S)`.
pub fn michaelis_menten() -> FieldSpec {
    let st = Stoichiometry::new(
        IntMatrix::from_rows(&[vec![1, 0, 0, 1], vec![0, 1, 0, 0], vec![0, 1, 0, 0]])
            .expect("fixed matrix"),
        IntMatrix::from_rows(&[vec![0, 1, 0, 0], vec![1, 0, 0, 1], vec![1, 0, 1, 0]])
            .expect("fixed matrix"),
        ["E", "ES", "P", "S"].map(String::from).to_vec(),
        ["kf", "kr", "kcat"].map(String::from).to_vec(),
    )
    .expect("valid network");
    FieldSpec::mass_action(st)
}

/// `(reactants, products, label)` of the EnvZ/OmpR reactions over
/// [`ENVZ_SPECIES`].
fn envz_reactions() -> [(&'static [usize], &'static [usize], &'static str); 8] {
    [
        (&[3, 4], &[1], "k1"),
        (&[1], &[3, 4], "k-1"),
        (&[1], &[2, 5], "kt"),
        (&[2, 5], &[0], "k2"),
        (&[0], &[2, 5], "k-2"),
        (&[0], &[2, 4], "kp"),
        (&[2], &[3], "kk"),
        (&[3], &[2], "k-k"),
    ]
}

fn renamed(space: FieldSpec, names: &[&str]) -> Result<FieldSpec> {
    let FieldKind::Mak(st) = space.kind() else {
        return Ok(space);
    };
    let st = Stoichiometry::new(
        st.reactants().clone(),
        st.products().clone(),
        names.iter().map(|s| s.to_string()).collect(),
        st.reactions().to_vec(),
    )?;
    Ok(FieldSpec::mass_action(st))
}

fn reaction(space: &FieldSpec, lhs: &[usize], rhs: &[usize]) -> Result<usize> {
    find_reaction(space, lhs, rhs).ok_or_else(|| {
        Error::InvalidInput(format!(
            "reaction {lhs:?} -> {rhs:?} missing from search space"
        ))
    })
}

/// Reactions of a mass action spec that increase species `i`.
fn producing(space: &FieldSpec, i: usize) -> Vec<usize> {
    let FieldKind::Mak(st) = space.kind() else {
        return Vec::new();
    };
    (0..st.n_reactions())
        .filter(|&r| st.products().get(r, i) > st.reactants().get(r, i))
        .collect()
}

fn uniform_state(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..hi)).collect()
}

fn draw_truth(system: &System, rng: &mut ChaCha8Rng) -> Result<GroundTruth> {
    match *system {
        System::LotkaVolterra { v, .. } => {
            let space = enumerate_search_space(SearchSpace::LotkaVolterra, 10)?;
            let mut theta = vec![0.0; space.n_params()];
            for k in 0..5 {
                let (a, b) = (2 * k, 2 * k + 1);
                theta[reaction(&space, &[a], &[a, a])?] = 2.0;
                theta[reaction(&space, &[a, b], &[b, b])?] = v;
                theta[reaction(&space, &[b], &[])?] = 2.0;
            }
            Ok(GroundTruth {
                space,
                theta,
                equilibrium: None,
            })
        }
        System::EnzymeNetwork {
            d, alpha, space, ..
        } => {
            let space = enumerate_search_space(space, d)?;
            let mut theta = vec![0.0; space.n_params()];
            for i in 0..d {
                let cand = producing(&space, i);
                if cand.len() < alpha {
                    return Err(Error::InvalidInput(format!(
                        "species {i} has only {} producing reactions",
                        cand.len()
                    )));
                }
                for k in sample(rng, cand.len(), alpha).into_vec() {
                    theta[cand[k]] = 1.0;
                }
            }
            let start = uniform_state(rng, d, 0.0, 10.0);
            let eq = solve_ivp(&space, &theta, &start, &[0.0, 100.0], &simulation_solver())
                .map_err(|e| Error::InvalidInput(format!("equilibrium solve failed: {e}")))?;
            Ok(GroundTruth {
                space,
                theta,
                equilibrium: Some(eq.states[1].iter().map(|v| v.max(0.0)).collect()),
            })
        }
        System::MichaelisMenten { rates, .. } => Ok(GroundTruth {
            space: michaelis_menten(),
            theta: rates.to_vec(),
            equilibrium: None,
        }),
        System::EnvZ { rate_sd, .. } => {
            let space = renamed(
                enumerate_search_space(SearchSpace::Conversion, 6)?,
                &ENVZ_SPECIES,
            )?;
            let normal = Normal::new(3.0, rate_sd).expect("validated sd");
            let mut theta = vec![0.0; space.n_params()];
            for (lhs, rhs, _) in envz_reactions() {
                let k: f64 = normal.sample(rng);
                theta[reaction(&space, lhs, rhs)?] = k.abs().max(1e-3);
            }
            Ok(GroundTruth {
                space,
                theta,
                equilibrium: None,
            })
        }
    }
}

fn enzyme_times(n: usize) -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend((0..n - 1).map(|k| 2f64.powf((k as f64 - 5.0) / 2.0)));
    t
}

fn draw_design(system: &System, truth: &GroundTruth, rng: &mut ChaCha8Rng) -> Result<Design> {
    let p = truth.space.n_params();
    match *system {
        System::LotkaVolterra { environments, .. } => {
            let times: Vec<f64> = (0..=50).map(|k| k as f64 / 10.0).collect();
            Ok(Design {
                initial_states: (0..environments)
                    .map(|_| uniform_state(rng, 10, 0.0, 4.0))
                    .collect(),
                times: vec![times; environments],
                scales: InterventionScales::ones(environments, p),
            })
        }
        System::EnzymeNetwork {
            d, environments, n, ..
        } => {
            let eq = truth
                .equilibrium
                .as_ref()
                .expect("enzyme truth has an equilibrium");
            let mut x0s = Vec::with_capacity(environments);
            for _ in 0..environments {
                let m = rng.random_range(1..=4usize.min(d));
                let selected = sample(rng, d, m).into_vec();
                let mut x = eq.clone();
                let mut freed = 0.0;
                for (i, xi) in x.iter_mut().enumerate() {
                    if !selected.contains(&i) {
                        freed += 0.5 * *xi;
                        *xi *= 0.5;
                    }
                }
                for &i in &selected {
                    x[i] += freed / m as f64;
                }
                let mean = x.iter().sum::<f64>() / d as f64;
                if mean > 0.0 {
                    x.iter_mut().for_each(|v| *v *= 5.0 / mean);
                }
                x0s.push(x);
            }
            Ok(Design {
                initial_states: x0s,
                times: vec![enzyme_times(n); environments],
                scales: InterventionScales::ones(environments, p),
            })
        }
        System::MichaelisMenten { n, .. } => Ok(Design {
            initial_states: vec![MM_INITIAL.to_vec()],
            times: vec![(0..n).map(|k| k as f64 / (n - 1) as f64).collect()],
            scales: InterventionScales::ones(1, p),
        }),
        System::EnvZ { .. } => {
            let times: Vec<f64> = (0..26).map(|k| k as f64 * 0.04).collect();
            let mut scales = InterventionScales::ones(4, p);
            let kk = reaction(&truth.space, &[2], &[3])?;
            let kp = reaction(&truth.space, &[0], &[2, 4])?;
            scales.inhibit(2, kk);
            scales.inhibit(3, kp);
            Ok(Design {
                initial_states: (0..4).map(|_| uniform_state(rng, 6, 5.0, 10.0)).collect(),
                times: vec![times; 4],
                scales,
            })
        }
    }
}

/// Noise-free states of the truth under a design.
pub fn clean_trajectories(truth: &GroundTruth, design: &Design) -> Result<Vec<Vec<Vec<f64>>>> {
    let cfg = simulation_solver();
    (0..design.initial_states.len())
        .map(|e| {
            let th = apply_environment(&truth.theta, &design.scales, e)?;
            solve_ivp(
                &truth.space,
                &th,
                &design.initial_states[e],
                &design.times[e],
                &cfg,
            )
            .map(|t| t.states)
            .map_err(|err| {
                Error::InvalidInput(format!(
                    "ground-truth solve failed in environment {e}: {err}"
                ))
            })
        })
        .collect()
}

fn observe(
    truth: &GroundTruth,
    design: &Design,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<Vec<f64>>>, Dataset)> {
    let clean = clean_trajectories(truth, design)?;
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let envs = clean
        .iter()
        .zip(&design.times)
        .map(|(states, times)| {
            let values = states
                .iter()
                .map(|x| x.iter().map(|v| v + noise.sample(rng)).collect())
                .collect();
            Environment::new(times.clone(), values)
        })
        .collect();
    let ds = Dataset::new(truth.space.species().to_vec(), envs, design.scales.clone())?;
    Ok((clean, ds))
}

/// Draws the truth (where random), the design and the noisy observations
/// from a ChaCha8 stream seeded with `seed`.
pub fn simulate_dataset(system: &System, seed: u64) -> Result<Simulation> {
    system.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = draw_truth(system, &mut rng)?;
    let design = draw_design(system, &truth, &mut rng)?;
    let (clean, dataset) = observe(&truth, &design, system.sigma(), &mut rng)?;
    Ok(Simulation {
        system: system.clone(),
        seed,
        truth,
        design,
        clean,
        dataset,
    })
}

/// An independent data set from the same truth: fresh design and noise.
pub fn simulate_test_set(sim: &Simulation) -> Result<Simulation> {
    let seed = sim.seed ^ 0x5eed_7e57_0000_0001;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = draw_design(&sim.system, &sim.truth, &mut rng)?;
    let (clean, dataset) = observe(&sim.truth, &design, sim.system.sigma(), &mut rng)?;
    Ok(Simulation {
        system: sim.system.clone(),
        seed,
        truth: sim.truth.clone(),
        design,
        clean,
        dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(envs: usize, sigma: f64) -> System {
        System::LotkaVolterra {
            v: 5.0,
            environments: envs,
            sigma,
        }
    }

    fn enzyme(d: usize) -> System {
        System::EnzymeNetwork {
            d,
            alpha: 1,
            environments: 4,
            n: 10,
            sigma: 0.5,
            space: SearchSpace::Enzyme,
        }
    }

    #[test]
    fn lotka_volterra_design() {
        let sim = simulate_dataset(&lv(2, 0.5), 3).unwrap();
        assert_eq!(sim.truth.space.n_params(), 110);
        assert_eq!(sim.truth.support().len(), 15);
        assert_eq!(sim.dataset.n_environments(), 2);
        for env in &sim.dataset.environments {
            assert_eq!(env.n_times(), 51);
            assert!((env.times[50] - 5.0).abs() < 1e-12);
        }
        for x0 in &sim.design.initial_states {
            assert!(x0.iter().all(|v| (0.0..4.0).contains(v)));
        }
    }

    #[test]
    fn zero_noise_matches_the_solver() {
        let sim = simulate_dataset(&lv(1, 0.0), 11).unwrap();
        assert_eq!(sim.dataset.environments[0].values, sim.clean[0]);
    }

    #[test]
    fn enzyme_design() {
        let sim = simulate_dataset(&enzyme(7), 5).unwrap();
        assert_eq!(sim.truth.support().len(), 7);
        let t = &sim.dataset.environments[0].times;
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 2f64.powf(-2.5)).abs() < 1e-15);
        assert!((t[9] - 2f64.powf(1.5)).abs() < 1e-12);
        for x0 in &sim.design.initial_states {
            let mean = x0.iter().sum::<f64>() / 7.0;
            assert!((mean - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = simulate_dataset(&enzyme(5), 9).unwrap();
        let b = simulate_dataset(&enzyme(5), 9).unwrap();
        let c = simulate_dataset(&enzyme(5), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn michaelis_menten_conserves_enzyme() {
        let sim = simulate_dataset(
            &System::MichaelisMenten {
                n: 25,
                sigma: 0.0,
                rates: MM_RATES,
            },
            1,
        )
        .unwrap();
        for x in &sim.clean[0] {
            assert!((x[0] + x[1] - 12.0).abs() < 1e-8);
        }
    }

    #[test]
    fn envz_has_eight_reactions() {
        let sim = simulate_dataset(
            &System::EnvZ {
                sigma: 0.1,
                rate_sd: 1.0,
            },
            2,
        )
        .unwrap();
        assert_eq!(sim.truth.support().len(), 8);
        assert_eq!(sim.dataset.environments[0].n_times(), 26);
        assert_eq!(sim.dataset.species[2], "EnvZ");
        let kk = find_reaction(&sim.truth.space, &[2], &[3]).unwrap();
        assert_eq!(sim.dataset.scales.get(2)[kk], 0.0);
    }

    #[test]
    fn test_set_shares_the_truth() {
        let sim = simulate_dataset(&enzyme(5), 4).unwrap();
        let test = simulate_test_set(&sim).unwrap();
        assert_eq!(sim.truth, test.truth);
        assert_ne!(sim.design.initial_states, test.design.initial_states);
    }

    #[test]
    fn negative_sigma_is_rejected() {
        assert!(simulate_dataset(&lv(1, -1.0), 0).is_err());
    }
}
