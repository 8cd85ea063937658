//! Guided policy search: alternate single-SCP-step trajectory updates (with
//! a policy trust region from the second iteration on), LQR sample
//! generation, and supervised policy regression, stopping on a
//! validation-cost plateau.

use std::time::Instant;

use nalgebra::Vector3;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::{generate_samples, riccati_backward, LqrWeights, NoiseSchedule, RngStream};
use crate::policy::{
    forward, init_xavier, policy_rollout, train_supervised, Mlp, Normalizer, PairDataset,
    PairRecord, Policy, TrainConfig, DEFAULT_DIMS,
};
use crate::socp::{
    assemble_subproblem, extract_trajectory, solve, SolveSettings, SolveStatus,
    SubproblemWeights, TrajectoryIterate, TrustRegionMode,
};
use crate::transcription::{
    linearize_discretize, make_grid, straight_line_init, LinearizedSegment, ReferenceTrajectory,
    TemporalGrid,
};
use crate::vehicle::{min_fuel_cost, BoundaryConditions, State, VehicleParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpsConfig {
    /// Samples per trajectory per iteration (S).
    pub samples_per_trajectory: usize,
    /// Temporal nodes (K).
    pub node_count: usize,
    /// Horizon (t_f).
    pub t_final: f64,
    /// Policy trust-region weight; also used for the reference penalty in
    /// the first iteration, which has no trained policy yet.
    pub w_trp: f64,
    pub w_nu: f64,
    /// Validation-cost plateau tolerance.
    pub eps_j: f64,
    pub max_iterations: usize,
    /// Train on all samples generated so far instead of the current
    /// iteration's only.
    pub cumulative_dataset: bool,
    pub noise: NoiseSchedule,
    pub train: TrainConfig,
    #[serde(skip, default)]
    pub lqr: LqrWeights,
    pub seed: u64,
}

impl Default for GpsConfig {
    fn default() -> Self {
        GpsConfig {
            samples_per_trajectory: 20,
            node_count: 31,
            t_final: 5.0,
            w_trp: 10.0,
            w_nu: 1e4,
            eps_j: 1e-4,
            max_iterations: 20,
            cumulative_dataset: false,
            noise: NoiseSchedule::default(),
            train: TrainConfig::default(),
            lqr: LqrWeights::default(),
            seed: 0,
        }
    }
}

impl GpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_trp <= 0.0 || self.w_nu <= 0.0 || self.eps_j <= 0.0 {
            return Err(Error::invalid_input("gps weights/tolerances must be positive"));
        }
        if self.samples_per_trajectory < 1 || self.max_iterations < 1 {
            return Err(Error::invalid_input("gps counts must be >= 1"));
        }
        self.noise.validate()
    }
}

/// Which trust-region penalty an iteration's subproblems carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterationMode {
    Reference,
    Policy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpsIterationLog {
    pub iteration: usize,
    pub mode: IterationMode,
    pub validation_cost: f64,
    /// Final-epoch training loss.
    pub training_loss: f64,
    /// Per-trajectory virtual-control sums (dropped trajectories absent).
    pub nu_sums: Vec<f64>,
    pub sample_count: usize,
    /// Training-state indices dropped this iteration, with the failure.
    pub dropped: Vec<(usize, String)>,
    pub validation_failures: Vec<usize>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GpsRunLog {
    pub iterations: Vec<GpsIterationLog>,
}

impl GpsRunLog {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("iteration,mode,validation_cost,training_loss,sample_count,dropped,wall_time_s\n");
        for it in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                it.iteration,
                match it.mode {
                    IterationMode::Reference => "reference",
                    IterationMode::Policy => "policy",
                },
                it.validation_cost,
                it.training_loss,
                it.sample_count,
                it.dropped.len(),
                it.wall_time_s
            ));
        }
        out
    }
}

/// Mean minimum-fuel cost of nonlinear policy rollouts from a validation
/// set. Aborted rollouts are excluded from the mean and reported by index.
pub struct ValidationOutcome {
    pub mean_cost: f64,
    pub failures: Vec<usize>,
}

pub fn validation_cost(
    mlp: &Mlp,
    normalizer: &Normalizer,
    val_inits: &[State],
    grid: &TemporalGrid,
    p: &VehicleParams,
) -> Result<ValidationOutcome> {
    if val_inits.is_empty() {
        return Err(Error::EmptyInput("validation set is empty".into()));
    }
    let results: Vec<Option<f64>> = val_inits
        .par_iter()
        .map(|x0| {
            policy_rollout(mlp, normalizer, x0, grid, p)
                .ok()
                .map(|traj| min_fuel_cost(&traj))
        })
        .collect();
    let mut failures = Vec::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, r) in results.iter().enumerate() {
        match r {
            Some(cost) => {
                sum += cost;
                count += 1;
            }
            None => failures.push(i),
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("every validation rollout aborted".into()));
    }
    Ok(ValidationOutcome {
        mean_cost: sum / count as f64,
        failures,
    })
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z ^ (z >> 31)
}

struct TrajectoryUpdate {
    iterate: TrajectoryIterate,
    segments: Vec<LinearizedSegment>,
}

/// One guided-policy-search run.
///
/// Iteration 0 uses straight-line references and the reference trust region;
/// later iterations linearize around the previous iterates and penalize
/// control deviation from the current policy's outputs at the reference
/// states. Trajectories whose subproblem fails are dropped with a log entry;
/// more than 20% drops abort the run.
pub fn gps_run(
    train_inits: &[State],
    val_inits: &[State],
    bc_final: &State,
    p: &VehicleParams,
    cfg: &GpsConfig,
) -> Result<(Policy, GpsRunLog)> {
    cfg.validate()?;
    if train_inits.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    for v in val_inits {
        if train_inits.iter().any(|t| t == v) {
            return Err(Error::invalid_input(
                "validation set overlaps the training set",
            ));
        }
    }
    let grid = make_grid(cfg.node_count, cfg.t_final)?;
    let total = train_inits.len();

    let mut mlp = init_xavier(
        &DEFAULT_DIMS,
        &mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xA11CE)),
    )?;
    let mut normalizer: Option<Normalizer> = None;

    let mut references: Vec<Option<ReferenceTrajectory>> = train_inits
        .iter()
        .map(|&initial| {
            let bc = BoundaryConditions {
                initial,
                final_state: *bc_final,
            };
            Some(straight_line_init(&bc, &grid, p))
        })
        .collect();

    let mut log = GpsRunLog::default();
    let mut accumulated = PairDataset::default();
    let mut prev_cost: Option<f64> = None;
    let weights = SubproblemWeights {
        w_nu: cfg.w_nu,
        w_tr: cfg.w_trp,
        w_trp: cfg.w_trp,
    };
    let settings = SolveSettings::default();

    for iteration in 0..cfg.max_iterations {
        let start = Instant::now();
        let mode = if iteration == 0 {
            IterationMode::Reference
        } else {
            IterationMode::Policy
        };

        // Trajectory update: one SCP step per surviving trajectory.
        let norm_ref = normalizer.as_ref();
        let mlp_ref = &mlp;
        let updates: Vec<std::result::Result<TrajectoryUpdate, String>> = references
            .par_iter()
            .enumerate()
            .filter(|(_, r)| r.is_some())
            .map(|(i, reference)| {
                let reference = reference.as_ref().expect("filtered");
                let bc = BoundaryConditions {
                    initial: train_inits[i],
                    final_state: *bc_final,
                };
                let segments =
                    linearize_discretize(reference, &grid, p).map_err(|e| e.to_string())?;
                let (tr_mode, policy_controls) = match mode {
                    IterationMode::Reference => (TrustRegionMode::Reference, None),
                    IterationMode::Policy => {
                        let norm = norm_ref.expect("normalizer fitted after iteration 0");
                        let controls: Vec<Vector3<f64>> = reference.states
                            [..grid.node_count - 1]
                            .iter()
                            .map(|s| forward(mlp_ref, norm, &s.to_vector()))
                            .collect::<Result<_>>()
                            .map_err(|e| e.to_string())?;
                        (TrustRegionMode::Policy, Some(controls))
                    }
                };
                let program = assemble_subproblem(
                    &segments,
                    reference,
                    &bc,
                    &weights,
                    p,
                    tr_mode,
                    policy_controls.as_deref(),
                )
                .map_err(|e| e.to_string())?;
                let solution = solve(&program, &settings).map_err(|e| e.to_string())?;
                if solution.status != SolveStatus::Optimal {
                    return Err(format!("subproblem status {}", solution.status));
                }
                let iterate =
                    extract_trajectory(&program, &solution).map_err(|e| e.to_string())?;
                Ok(TrajectoryUpdate { iterate, segments })
            })
            .collect();

        // Re-associate results with training indices and drop failures.
        let live_indices: Vec<usize> = references
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_some())
            .map(|(i, _)| i)
            .collect();
        let mut dropped = Vec::new();
        let mut survivors: Vec<(usize, TrajectoryUpdate)> = Vec::new();
        for (idx, result) in live_indices.into_iter().zip(updates) {
            match result {
                Ok(update) => survivors.push((idx, update)),
                Err(reason) => {
                    eprintln!("gps: dropping trajectory {idx} at iteration {iteration}: {reason}");
                    references[idx] = None;
                    dropped.push((idx, reason));
                }
            }
        }
        let total_dropped = references.iter().filter(|r| r.is_none()).count();
        if total_dropped * 5 > total {
            return Err(Error::TooManyDrops {
                dropped: total_dropped,
                total,
            });
        }

        // Sample generation with decayed noise.
        let noise = cfg.noise.at_iteration(iteration as u32);
        let run_id = format!("gps-{iteration}");
        let sampled: Vec<(usize, Vec<crate::lqr::SampledTrajectory>, f64)> = survivors
            .par_iter()
            .map(|(idx, update)| {
                let gains = riccati_backward(&update.segments, &cfg.lqr)?;
                let stream = RngStream {
                    seed: cfg.seed,
                    gps_iteration: iteration as u64,
                    trajectory: *idx as u64,
                };
                let samples = generate_samples(
                    &update.iterate,
                    &update.segments,
                    &gains,
                    cfg.samples_per_trajectory,
                    &noise,
                    &stream,
                )?;
                Ok((*idx, samples, update.iterate.nu_sum_l1()))
            })
            .collect::<Result<_>>()?;

        let mut fresh = PairDataset::default();
        let mut nu_sums = Vec::with_capacity(sampled.len());
        for (idx, samples, nu_sum) in &sampled {
            nu_sums.push(*nu_sum);
            for (s, sample) in samples.iter().enumerate() {
                for k in 0..sample.controls.len() {
                    fresh.records.push(PairRecord {
                        run: run_id.clone(),
                        trajectory: *idx,
                        sample: s,
                        node: k,
                        state: sample.states[k],
                        control: sample.controls[k],
                    });
                }
            }
        }

        // Validation states must never leak into the training pairs.
        for v in val_inits {
            let vv = v.to_vector();
            if fresh.records.iter().any(|r| r.state == vv) {
                return Err(Error::invalid_input(
                    "validation state appeared in the training dataset",
                ));
            }
        }

        let dataset: &PairDataset = if cfg.cumulative_dataset {
            accumulated.records.extend(fresh.records.iter().cloned());
            &accumulated
        } else {
            &fresh
        };

        // Input statistics are fitted once, on the first iteration's
        // samples, then frozen.
        if normalizer.is_none() {
            normalizer = Some(Normalizer::fit(dataset.records.iter().map(|r| &r.state))?);
        }
        let norm = normalizer.as_ref().expect("set above");

        let train_cfg = TrainConfig {
            seed: mix_seed(cfg.seed, 0xEB0C4 ^ iteration as u64),
            ..cfg.train
        };
        let loss_history = train_supervised(&mut mlp, norm, dataset, &train_cfg)?;

        let outcome = validation_cost(&mlp, norm, val_inits, &grid, p)?;
        log.iterations.push(GpsIterationLog {
            iteration,
            mode,
            validation_cost: outcome.mean_cost,
            training_loss: *loss_history.last().expect("epochs >= 1"),
            nu_sums,
            sample_count: fresh.records.len(),
            dropped,
            validation_failures: outcome.failures,
            wall_time_s: start.elapsed().as_secs_f64(),
        });

        // Next iteration linearizes around this iteration's solutions.
        for (idx, update) in &survivors {
            references[*idx] = Some(update.iterate.to_reference());
        }

        if let Some(prev) = prev_cost {
            if (outcome.mean_cost - prev).abs() < cfg.eps_j {
                break;
            }
        }
        prev_cost = Some(outcome.mean_cost);
    }

    let normalizer = normalizer.expect("at least one iteration ran");
    Ok((Policy { mlp, normalizer }, log))
}
