//! Monte Carlo run of the pickup scenario with camera noise.
//!
//! cargo run --release -p teleop-core --example noisy_pickup -- [trials] [sigma_p] [sigma_r] [fusion_window]

use std::path::Path;

use teleop_core::config::{load_scenario, load_script};
use teleop_core::control::{run_trial, ScriptDriver};
use teleop_core::metrics::{aggregate, evaluate_trial};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let trials: u64 = args.get(1).map_or(100, |s| s.parse().unwrap());
    let sigma_p: f64 = args.get(2).map_or(0.005, |s| s.parse().unwrap());
    let sigma_r: f64 = args.get(3).map_or(0.02, |s| s.parse().unwrap());
    let mut loaded = load_scenario(Path::new("scenarios/pickup.toml")).unwrap_or_else(|e| panic!("{e}"));
    loaded.scenario.camera.sigma_position = sigma_p;
    loaded.scenario.camera.sigma_rotation = sigma_r;
    if let Some(w) = args.get(4) {
        loaded.scenario.reliability.fusion_window = w.parse().unwrap();
    }
    let script = load_script(loaded.script_path.as_ref().unwrap()).unwrap();
    let start = std::time::Instant::now();
    let mut results = Vec::new();
    for seed in 0..trials {
        let log = run_trial(&loaded, seed, &mut ScriptDriver::new(script.clone()), &mut |_| {}).unwrap();
        let r = evaluate_trial(&log).unwrap();
        if !r.success {
            println!("seed {seed}: {r:?}");
        }
        results.push(r);
    }
    print!("{}", aggregate(&results).unwrap().to_table());
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
}
