use pdg_core::data::*;
use pdg_core::gps::*;
use pdg_core::lqr::*;
use pdg_core::policy::*;
use pdg_core::socp::*;
use pdg_core::transcription::*;
use pdg_core::vehicle::*;
use nalgebra::Vector3;
use rand_chacha::rand_core::SeedableRng;

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z ^ (z >> 31)
}

fn main() {
    let p = VehicleParams::default();
    let grid = make_grid(11, 5.0).unwrap();
    let target = landing_target(&p);
    let train = &build_desk_training_grid().states[..4];
    let weights = SubproblemWeights { w_nu: 1e4, w_tr: 10.0, w_trp: 10.0 };
    let seed = 42u64;

    let mut iterates = Vec::new();
    for &x0 in train {
        let bc = BoundaryConditions { initial: x0, final_state: target };
        let reference = straight_line_init(&bc, &grid, &p);
        let segments = linearize_discretize(&reference, &grid, &p).unwrap();
        let program = assemble_subproblem(&segments, &reference, &bc, &weights, &p, TrustRegionMode::Reference, None).unwrap();
        let sol = solve(&program, &SolveSettings::default()).unwrap();
        let it = extract_trajectory(&program, &sol).unwrap();
        iterates.push((bc, it, segments));
    }

    let mut dataset = PairDataset::default();
    for (i, (_, it, segments)) in iterates.iter().enumerate() {
        let gains = riccati_backward(segments, &LqrWeights::default()).unwrap();
        let stream = RngStream { seed, gps_iteration: 0, trajectory: i as u64 };
        let samples = generate_samples(it, segments, &gains, 3, &NoiseSchedule::default().at_iteration(0), &stream).unwrap();
        for (s, sample) in samples.iter().enumerate() {
            for k in 0..sample.controls.len() {
                dataset.records.push(PairRecord { run: "d".into(), trajectory: i, sample: s, node: k, state: sample.states[k], control: sample.controls[k] });
            }
        }
    }
    let mut mlp = init_xavier(&DEFAULT_DIMS, &mut rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xA11CE))).unwrap();
    let norm = Normalizer::fit(dataset.records.iter().map(|r| &r.state)).unwrap();
    let cfg = TrainConfig { batch_size: 128, learning_rate: 1e-3, epochs: 5, seed: mix_seed(seed, 0xEB0C4) };
    let hist = train_supervised(&mut mlp, &norm, &dataset, &cfg).unwrap();
    println!("train loss: {:?}", hist);

    for (i, (bc, it, _)) in iterates.iter().enumerate() {
        let new_ref = it.to_reference();
        let segs = linearize_discretize(&new_ref, &grid, &p).unwrap();
        let pc: Vec<Vector3<f64>> = new_ref.states[..10].iter().map(|s| forward(&mlp, &norm, &s.to_vector()).unwrap()).collect();
        println!("traj {i} pc[0]={:?}", pc[0].transpose());
        let program = assemble_subproblem(&segs, &new_ref, bc, &weights, &p, TrustRegionMode::Policy, Some(&pc)).unwrap();
        let mut st = SolveSettings::default();
        st.verbose = i == 0;
        let sol = solve(&program, &st).unwrap();
        println!("traj {i} iter1: {:?} iters={}", sol.status, sol.iterations);
    }
}
