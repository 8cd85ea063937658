//! Initial-state grid construction, convergence filtering, and persistence
//! for datasets, weights, and metrics.
//!
//! File formats (full round-trip float precision throughout):
//! * trajectory datasets: line-delimited JSON, one node pair per line;
//! * policy weights: the versioned JSON format of [`crate::policy::PolicyFile`];
//! * metrics: plain CSV with a header row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PairDataset, PairRecord, Policy, PolicyFile};
use crate::ptr::{ptr_solve, PtrConfig};
use crate::transcription::{straight_line_init, TemporalGrid};
use crate::vehicle::{quat_from_euler, BoundaryConditions, State, VehicleParams};

/// Provenance of an initial-state set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialStateGrid {
    pub states: Vec<State>,
    pub kind: GridKind,
    /// Seed for randomly generated sets; None for deterministic lattices.
    pub seed: Option<u64>,
}

fn grid_state(r_x: f64, r_z: f64, v_x: f64, v_y: f64, roll: f64, pitch: f64) -> State {
    State {
        m: 2.0,
        r_i: Vector3::new(r_x, 0.0, r_z),
        v_i: Vector3::new(v_x, v_y, -1.0),
        q_bi: quat_from_euler(roll, pitch, 0.0).expect("grid angles far from lock"),
        omega_b: Vector3::zeros(),
    }
}

/// Full factorial training lattice: 3 values in each of r_x, r_z, v_x, v_y,
/// roll, pitch (3^6 = 729 states). Mass, v_z, r_y, yaw, and omega are fixed.
pub fn build_training_grid() -> InitialStateGrid {
    let positions = [2.0, 2.5, 3.0];
    let velocities = [-0.1, 0.0, 0.1];
    let angles = [-15f64.to_radians(), 0.0, 15f64.to_radians()];
    let mut states = Vec::with_capacity(729);
    for &r_x in &positions {
        for &r_z in &positions {
            for &v_x in &velocities {
                for &v_y in &velocities {
                    for &roll in &angles {
                        for &pitch in &angles {
                            states.push(grid_state(r_x, r_z, v_x, v_y, roll, pitch));
                        }
                    }
                }
            }
        }
    }
    InitialStateGrid {
        states,
        kind: GridKind::Train,
        seed: None,
    }
}

/// Validation lattice: r_x, r_z in {2.25, 2.75}, roll/pitch in
/// {-15, 0, 15} deg, lateral velocity fixed to zero (2*2*3*3 = 36 states).
pub fn build_validation_grid() -> InitialStateGrid {
    let positions = [2.25, 2.75];
    let angles = [-15f64.to_radians(), 0.0, 15f64.to_radians()];
    let mut states = Vec::with_capacity(36);
    for &r_x in &positions {
        for &r_z in &positions {
            for &roll in &angles {
                for &pitch in &angles {
                    states.push(grid_state(r_x, r_z, 0.0, 0.0, roll, pitch));
                }
            }
        }
    }
    InitialStateGrid {
        states,
        kind: GridKind::Validation,
        seed: None,
    }
}

/// Reduced 27-state training lattice for fast end-to-end runs: diagonal
/// positions r_x = r_z in {2, 2.5, 3} crossed with roll/pitch in
/// {-15, 0, 15} deg, velocities fixed to the nominal descent.
pub fn build_desk_training_grid() -> InitialStateGrid {
    let diag = [2.0, 2.5, 3.0];
    let angles = [-15f64.to_radians(), 0.0, 15f64.to_radians()];
    let mut states = Vec::with_capacity(27);
    for &d in &diag {
        for &roll in &angles {
            for &pitch in &angles {
                states.push(grid_state(d, d, 0.0, 0.0, roll, pitch));
            }
        }
    }
    InitialStateGrid {
        states,
        kind: GridKind::Train,
        seed: None,
    }
}

/// Eight validation states strictly inside the desk training hull:
/// r_x = r_z in {2.25, 2.75}, roll/pitch in {-7.5, +7.5} deg.
pub fn build_desk_validation_grid() -> InitialStateGrid {
    let diag = [2.25, 2.75];
    let angles = [-7.5f64.to_radians(), 7.5f64.to_radians()];
    let mut states = Vec::with_capacity(8);
    for &d in &diag {
        for &roll in &angles {
            for &pitch in &angles {
                states.push(grid_state(d, d, 0.0, 0.0, roll, pitch));
            }
        }
    }
    InitialStateGrid {
        states,
        kind: GridKind::Validation,
        seed: None,
    }
}

/// Uniform random draws inside the training ranges, deterministic per seed.
pub fn sample_test_set(n: usize, seed: u64) -> Result<InitialStateGrid> {
    if n < 1 {
        return Err(Error::invalid_input("test set needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = 15f64.to_radians();
    let states = (0..n)
        .map(|_| {
            grid_state(
                rng.gen_range(2.0..=3.0),
                rng.gen_range(2.0..=3.0),
                rng.gen_range(-0.1..=0.1),
                rng.gen_range(-0.1..=0.1),
                rng.gen_range(-angle..=angle),
                rng.gen_range(-angle..=angle),
            )
        })
        .collect();
    Ok(InitialStateGrid {
        states,
        kind: GridKind::Test,
        seed: Some(seed),
    })
}

/// Outcome of the convergence filter.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub kept: Vec<State>,
    /// (original index, reason) for every excluded state.
    pub excluded: Vec<(usize, String)>,
}

/// Run the PTR solver from straight-line initialization for every state and
/// keep the ones that converge.
pub fn filter_convergent(
    states: &[State],
    config: &PtrConfig,
    final_state: &State,
    grid: &TemporalGrid,
    p: &VehicleParams,
) -> FilterOutcome {
    let results: Vec<Option<String>> = states
        .par_iter()
        .map(|&initial| {
            let bc = BoundaryConditions {
                initial,
                final_state: *final_state,
            };
            let reference = straight_line_init(&bc, grid, p);
            match ptr_solve(&bc, grid, p, config, &reference) {
                Ok(r) if r.converged => None,
                Ok(r) => Some(format!("no convergence in {} iterations", r.iterations)),
                Err(e) => Some(e.to_string()),
            }
        })
        .collect();

    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (i, reason) in results.into_iter().enumerate() {
        match reason {
            None => kept.push(states[i]),
            Some(r) => excluded.push((i, r)),
        }
    }
    FilterOutcome { kept, excluded }
}

/// One line of the line-delimited JSON dataset format.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetLine {
    run: String,
    i: usize,
    s: usize,
    k: usize,
    x: Vec<f64>,
    u: Vec<f64>,
}

/// Write a pair dataset as line-delimited JSON (one node pair per line).
pub fn save_dataset(path: &Path, dataset: &PairDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in &dataset.records {
        let line = DatasetLine {
            run: r.run.clone(),
            i: r.trajectory,
            s: r.sample,
            k: r.node,
            x: r.state.iter().copied().collect(),
            u: r.control.iter().copied().collect(),
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| Error::load(None, format!("serialize: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Load a line-delimited JSON dataset; malformed records report their
/// 1-based line number.
pub fn load_dataset(path: &Path) -> Result<PairDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&line)
            .map_err(|e| Error::load(Some(idx + 1), e.to_string()))?;
        if parsed.x.len() != 14 || parsed.u.len() != 3 {
            return Err(Error::load(
                Some(idx + 1),
                format!("bad dimensions: x[{}], u[{}]", parsed.x.len(), parsed.u.len()),
            ));
        }
        records.push(PairRecord {
            run: parsed.run,
            trajectory: parsed.i,
            sample: parsed.s,
            node: parsed.k,
            state: crate::vehicle::StateVector::from_column_slice(&parsed.x),
            control: Vector3::new(parsed.u[0], parsed.u[1], parsed.u[2]),
        });
    }
    Ok(PairDataset { records })
}

/// Write a policy (weights + normalizer) in the versioned JSON format.
pub fn save_policy(path: &Path, policy: &Policy) -> Result<()> {
    let file = policy.to_file();
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::load(None, format!("serialize weights: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path)?;
    let file: PolicyFile =
        serde_json::from_str(&text).map_err(|e| Error::load(None, e.to_string()))?;
    Policy::from_file(&file)
}

/// Write a metrics table as CSV. Floats print in shortest round-trip form.
pub fn save_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::invalid_input("csv row width mismatch"));
        }
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a CSV written by [`save_csv`]; returns (header, rows).
pub fn load_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h.split(',').map(|s| s.to_string()).collect::<Vec<_>>(),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(Error::load(Some(1), "empty csv")),
    };
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|e| Error::load(Some(idx + 1), format!("{e}: {cell:?}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != header.len() {
            return Err(Error::load(Some(idx + 1), "row width mismatch"));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Save an initial-state grid as JSON.
pub fn save_grid(path: &Path, grid: &InitialStateGrid) -> Result<()> {
    let json = serde_json::to_string_pretty(grid)
        .map_err(|e| Error::load(None, format!("serialize grid: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<InitialStateGrid> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::load(None, e.to_string()))
}

/// Save a single state (e.g. a rollout initial condition) as JSON.
pub fn save_state(path: &Path, state: &State) -> Result<()> {
    let json = serde_json::to_string_pretty(state)
        .map_err(|e| Error::load(None, format!("serialize state: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<State> {
    let text = std::fs::read_to_string(path)?;
    let state: State =
        serde_json::from_str(&text).map_err(|e| Error::load(None, e.to_string()))?;
    state.validate()?;
    Ok(state)
}
