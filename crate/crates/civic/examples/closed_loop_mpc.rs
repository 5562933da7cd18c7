//! Regulate the upper tank levels to setpoints with the box-constrained
//! MPC and print the closed-loop trajectory.
//!
//! Run: `cargo run --example closed_loop_mpc`

use civic::control::{
    discretize, equilibrium_inputs, linearize, DiscretizeMethod, MpcConfig, MpcController,
    OperatingPoint,
};
use civic::plant::PlantConfig;

fn main() {
    let cfg = PlantConfig::default();
    let setpoints = [6.0, 4.5, 2.5];

    // Linearize at the setpoints with the matching equilibrium inputs and
    // discretize for the 10 Hz loop.
    let point = OperatingPoint {
        levels_l: setpoints,
        inputs: equilibrium_inputs(&cfg, setpoints),
    };
    let model = discretize(
        &linearize(&cfg, &point).unwrap(),
        0.1,
        DiscretizeMethod::ForwardEuler,
    )
    .unwrap();
    let mut controller = MpcController::new(model, MpcConfig::default()).unwrap();

    let mut state = cfg.init_state([5.0, 4.0, 3.5, 6.0]).unwrap();
    println!("setpoints: {setpoints:?} l");
    println!(
        "{:>6} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}",
        "t [s]", "L1 [l]", "L2 [l]", "L3 [l]", "P1", "V1", "V2"
    );

    for k in 0..=600u32 {
        let levels = [state.volumes_l[0], state.volumes_l[1], state.volumes_l[2]];
        let inputs = controller.step(levels, setpoints);
        if k % 50 == 0 {
            println!(
                "{:>6.1} {:>8.3} {:>8.3} {:>8.3} {:>7.3} {:>7.3} {:>7.3}",
                f64::from(k) * 0.1,
                levels[0],
                levels[1],
                levels[2],
                inputs.pump,
                inputs.valve1,
                inputs.valve2
            );
        }
        for _ in 0..10 {
            state = state.step(&cfg, inputs, cfg.dt_sim_s).unwrap();
        }
    }

    let err: f64 = (0..3)
        .map(|i| (state.volumes_l[i] - setpoints[i]).abs())
        .fold(0.0, f64::max)
        * 1000.0;
    println!("\nmax level error after 60 s: {err:.3} mL");
    println!("solver fallbacks: {}", controller.flagged_frames());
}
