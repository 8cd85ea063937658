use pdg_core::bench::feasibility_report;
use pdg_core::data::*;
use pdg_core::gps::*;
use pdg_core::lqr::NoiseSchedule;
use pdg_core::policy::TrainConfig;
use pdg_core::transcription::make_grid;
use pdg_core::vehicle::*;
use std::time::Instant;

fn main() {
    let p = VehicleParams::default();
    let target = landing_target(&p);
    let train = build_desk_training_grid();
    let val = build_desk_validation_grid();
    let cfg = GpsConfig {
        samples_per_trajectory: 5,
        node_count: 31,
        t_final: 5.0,
        max_iterations: 8,
        train: TrainConfig {
            batch_size: 512,
            learning_rate: 1e-3,
            epochs: std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(50),
            seed: 0,
        },
        noise: NoiseSchedule::default(),
        seed: 7,
        ..GpsConfig::default()
    };
    let t0 = Instant::now();
    let (policy, log) = gps_run(&train.states, &val.states, &target, &p, &cfg).unwrap();
    println!("gps took {:.1}s, {} iterations", t0.elapsed().as_secs_f64(), log.iterations.len());
    for it in &log.iterations {
        println!(
            "  it {}: mode={:?} J_val={:.5} loss={:.6} samples={} dropped={} t={:.1}s",
            it.iteration, it.mode, it.validation_cost, it.training_loss, it.sample_count,
            it.dropped.len(), it.wall_time_s
        );
    }
    let grid = make_grid(31, 5.0).unwrap();
    let report = feasibility_report(&policy, &val.states, &target, &grid, &p).unwrap();
    println!("feasibility: {report:#?}");
}
