//! Runs a batch of randomized depth-estimation trials and prints the
//! aggregate statistics.
//!
//! Usage: survey [n_trials] [base_seed] [noise_sigma_deg]

use mwline::montecarlo::{aggregate, median, run_monte_carlo};
use mwline::trials::{presets, Verdict};

fn main() {
    let mut args = std::env::args().skip(1);
    let n_trials: usize = args.next().map_or(50, |a| a.parse().expect("n_trials"));
    let base_seed: u64 = args.next().map_or(1, |a| a.parse().expect("base_seed"));
    let sigma: f64 = args.next().map_or(0.0, |a| a.parse().expect("noise_sigma_deg"));

    let cfg = presets::mw_survey(0, sigma);
    let records = run_monte_carlo(&cfg, n_trials, base_seed).expect("scene generation");
    let report = aggregate(&records);

    let mut t_conv: Vec<f64> = records
        .iter()
        .filter_map(|r| r.verdict.convergence_time())
        .collect();
    t_conv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quartile = |q: f64| t_conv.get((q * (t_conv.len() - 1) as f64) as usize).copied();

    println!("trials            {}", report.n_trials);
    println!(
        "verdicts          {} converged / {} timeout / {} diverged",
        report.n_converged, report.n_timeout, report.n_diverged
    );
    for r in &records {
        if let Verdict::Diverged { t, cause } = r.verdict {
            let chi = &r.final_mw_state[3 + 2 * r.n_lines..];
            let extreme = chi
                .iter()
                .copied()
                .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
                .unwrap();
            println!(
                "  diverged seed={} t={t:.2} {cause:?} runaway_chi={extreme:.1} init_chi={:.2?}",
                r.seed, r.initial_chi_hat
            );
        }
    }
    println!("success rate      {:.1}%", report.success_rate_pct);
    if !t_conv.is_empty() {
        println!(
            "t_converge        q25 {:.2}  median {:.2}  q75 {:.2}  max {:.2}",
            quartile(0.25).unwrap(),
            median(&t_conv).unwrap(),
            quartile(0.75).unwrap(),
            t_conv.last().unwrap()
        );
    }
    if let Some(d) = report.median_distance {
        println!("median distance   {d:.2}");
    }
    println!(
        "median final eps  direction {:.2e}  depth {:.2e}",
        report.median_final_eps_d, report.median_final_eps_l
    );
}
