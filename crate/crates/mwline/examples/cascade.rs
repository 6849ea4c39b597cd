//! Runs the cascaded plane-velocity and line-depth observers on a single
//! randomized flight and prints the convergence timeline.
//!
//! Usage: cascade [seed] [true-vel]

use mwline::trials::{presets, run_trial, Mode};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |a| a.parse().expect("seed"));
    let mut cfg = presets::cascade_vib(seed);
    if args.next().as_deref() == Some("true-vel") {
        cfg.mode = Mode::Cascade {
            force_true_velocity: true,
        };
    }

    let record = run_trial(&cfg).expect("scene generation");

    println!("seed              {seed}");
    println!("verdict           {:?}", record.verdict);
    let n = record.n_lines;
    let c_final = &record.final_mw_state[..3];
    let chi_final = &record.final_mw_state[3 + 2 * n..];
    println!(
        "final |c|={:.1} chi range [{:.2}, {:.2}] psi0={:.3} guard={}",
        c_final.iter().map(|v| v * v).sum::<f64>().sqrt(),
        chi_final.iter().cloned().fold(f64::INFINITY, f64::min),
        chi_final.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        record.initial_psi_hat.unwrap_or(f64::NAN),
        record.scale_guard_steps,
    );
    match record.plane_converged_t {
        Some(t) => println!("plane converged   {t:.2} s"),
        None => println!("plane converged   never"),
    }
    if let Some(t) = record.verdict.convergence_time() {
        println!("lines converged   {t:.2} s");
    }
    if record.scale_guard_steps > 0 {
        println!("guarded steps     {}", record.scale_guard_steps);
    }
    let last = record.series.last().expect("series recorded");
    println!(
        "final errors      direction {:.2e} rad  depth {:.2e}",
        last.eps_d.iter().cloned().fold(0.0, f64::max),
        last.eps_l.iter().cloned().fold(0.0, f64::max),
    );
}
