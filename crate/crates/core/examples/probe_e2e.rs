// temp probe of end-to-end numbers
use biphoton::config::{parse_config, Experiment, ExperimentConfig};
use biphoton::experiment::run_experiment;
use biphoton::quantum::BellState;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    // Fig-3 style phase scan at acceptance statistics
    let cfg = parse_config(
        "experiment = fringe-phase-scan\nseed = 20240809\n[run]\ngates_per_point = 3000000\npoints = 32\nworkers = 4\noutput = /tmp/probe-fringe\n",
    )
    .unwrap();
    let rep = run_experiment(&cfg).unwrap();
    println!(
        "fringe: Vcorr={:.4}±{:.4} Vraw={:.4}±{:.4} ratio={:.5} delta_est={:.4}±{:.4} singles_var={:.4}",
        rep.get_f64("corrected_visibility").unwrap(),
        rep.get_f64("corrected_visibility_sigma").unwrap(),
        rep.get_f64("raw_visibility").unwrap(),
        rep.get_f64("raw_visibility_sigma").unwrap(),
        rep.get_f64("fringe_frequency_ratio").unwrap(),
        rep.get_f64("delta_estimate").unwrap(),
        rep.get_f64("delta_sigma").unwrap(),
        rep.get_f64("singles_variation_signal").unwrap(),
    );
    println!("  fringe took {:.1}s", t0.elapsed().as_secs_f64());

    // analyzer scan
    let t1 = Instant::now();
    let cfg = parse_config(
        "experiment = analyzer-scan\nseed = 20240809\n[run]\ngates_per_point = 1000000\npoints = 24\nworkers = 4\noutput = /tmp/probe-analyzer\n",
    )
    .unwrap();
    let rep = run_experiment(&cfg).unwrap();
    println!(
        "analyzer: Vcorr={:.4}±{:.4} singles_var=({:.4},{:.4})",
        rep.get_f64("corrected_visibility").unwrap(),
        rep.get_f64("corrected_visibility_sigma").unwrap(),
        rep.get_f64("singles_variation_signal").unwrap(),
        rep.get_f64("singles_variation_idler").unwrap(),
    );
    println!("  analyzer took {:.1}s", t1.elapsed().as_secs_f64());

    // CHSH for all four states
    for state in BellState::ALL {
        let t2 = Instant::now();
        let mut cfg = ExperimentConfig::with_defaults(Experiment::Chsh, 20240809);
        cfg.run.gates_per_point = 1_000_000;
        cfg.run.workers = 4;
        cfg.run.bell_state = Some(state);
        cfg.run.output = format!("/tmp/probe-chsh-{state}").into();
        let rep = run_experiment(&cfg).unwrap();
        println!(
            "chsh {state}: S={:.4}±{:.4} n_sigma={:.2} S_ideal={:.4} ({:.1}s)",
            rep.get_f64("s").unwrap(),
            rep.get_f64("sigma_s").unwrap(),
            rep.get_f64("n_sigma_violation").unwrap(),
            rep.get_f64("s_ideal").unwrap(),
            t2.elapsed().as_secs_f64(),
        );
    }

    // improvement scenario: low background, lower pump
    let t3 = Instant::now();
    let cfg = parse_config(
        "experiment = fringe-phase-scan\nseed = 20240809\n[source]\nmu_pair = 0.04\nbg_signal = 0\nbg_idler = 0\n[detector]\ndark_signal = 1e-5\ndark_idler = 1e-5\n[run]\ngates_per_point = 8000000\npoints = 24\nworkers = 4\noutput = /tmp/probe-improved\n",
    )
    .unwrap();
    let rep = run_experiment(&cfg).unwrap();
    println!(
        "improved: Vraw={:.4}±{:.4} ({:.1}s)",
        rep.get_f64("raw_visibility").unwrap(),
        rep.get_f64("raw_visibility_sigma").unwrap(),
        t3.elapsed().as_secs_f64(),
    );
    // accidental fraction in the improved run
    let counts = std::fs::read_to_string("/tmp/probe-improved/counts.csv").unwrap();
    let (mut acc, mut raw) = (0u64, 0u64);
    for line in counts.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        raw += f[6].parse::<u64>().unwrap();
        acc += f[7].parse::<u64>().unwrap();
    }
    println!("improved accidental fraction = {:.4}", acc as f64 / raw as f64);
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
