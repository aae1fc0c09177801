//! Desk-scale comparison of the Volterra estimator against the linear
//! baselines on synthetic feeders.
//!
//! `cargo run --release --example benchmark -- [buses] [seeds] [base_load] [volatility] [common_share]`

use std::time::Instant;

use gridvolterra::identify::{evaluate, EvaluateConfig, Method};
use gridvolterra::powerflow::{simulate_series, synth_profiles, FlowModel, ProfileParams, SweepOptions};
use gridvolterra::RadialGrid;

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    let m = x.len() / 2;
    if x.len() % 2 == 0 { 0.5 * (x[m - 1] + x[m]) } else { x[m] }
}

fn main() {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let buses = args.first().copied().unwrap_or(20.0) as usize;
    let seeds = args.get(1).copied().unwrap_or(10.0) as u64;
    let mut params = ProfileParams::default();
    if let Some(&b) = args.get(2) {
        params.base_load = b;
    }
    if let Some(&v) = args.get(3) {
        params.volatility = v;
    }
    if let Some(&c) = args.get(4) {
        params.common_share = c;
    }
    let cfg = EvaluateConfig::default();
    let mut cols = [Vec::new(), Vec::new(), Vec::new()];
    println!("seed  volterra  pc      conc    vmin    secs");
    for seed in 0..seeds {
        let start = Instant::now();
        let grid = RadialGrid::random(buses, seed, 1.0).expect("grid");
        let prof = synth_profiles(&grid, 240, seed, &params).expect("profiles");
        let series = simulate_series(&grid, &prof, FlowModel::Exact, &SweepOptions::default())
            .and_then(|s| s.with_noise(1e-4, seed))
            .expect("series");
        let (report, _) = evaluate(&grid, &series, &cfg).expect("evaluate");
        let aucs = [Method::Volterra, Method::Pc, Method::Concentration].map(|m| report.auc(m).unwrap());
        for (c, a) in cols.iter_mut().zip(aucs) {
            c.push(a);
        }
        println!(
            "{seed:4}  {:.4}    {:.4}  {:.4}  {:.4}  {:.1}",
            aucs[0],
            aucs[1],
            aucs[2],
            series.values().min(),
            start.elapsed().as_secs_f64()
        );
    }
    let [v, p, c] = cols.map(median);
    println!("median {v:.4}    {p:.4}  {c:.4}");
}
