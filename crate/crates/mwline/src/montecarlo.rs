//! Batched trial execution with order-independent parallelism, aggregate
//! statistics, and plain-text CSV serialization of the results.
//!
//! Reproducibility contract: every trial's seed is derived from the batch
//! seed and the trial index alone, so a batch gives bitwise-identical
//! records regardless of worker count or scheduling, and any single trial
//! can be re-run in isolation from its recorded seed.

use crate::trials::{run_trial, FailureCause, TrialConfig, TrialRecord, Verdict};
use crate::world_sim::SimError;
use rayon::prelude::*;
use std::fmt::Write as _;

/// Seed for trial `index` of a batch. SplitMix64 finalizer over a Weyl
/// sequence: consecutive indices land far apart in seed space, and the map
/// is stable across platforms.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `n_trials` independent trials of `base` with per-index seeds.
///
/// Per-sample series are dropped regardless of `base.record_series`; a
/// batch of long trials would otherwise hold the full error history of
/// every flight in memory at once. Records come back in index order.
pub fn run_monte_carlo(
    base: &TrialConfig,
    n_trials: usize,
    base_seed: u64,
) -> Result<Vec<TrialRecord>, SimError> {
    (0..n_trials as u64)
        .into_par_iter()
        .map(|index| {
            let cfg = TrialConfig {
                seed: derive_seed(base_seed, index),
                record_series: false,
                ..base.clone()
            };
            run_trial(&cfg)
        })
        .collect()
}

/// Summary statistics over one batch.
///
/// Convergence time and distance are medians over the converged trials
/// only. The final per-line errors are pooled across all lines of all
/// trials, with diverged trials contributing infinities, so a batch where
/// half the flights blow up cannot report a small median error.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub n_trials: usize,
    pub n_converged: usize,
    pub n_diverged: usize,
    pub n_timeout: usize,
    /// Trials that did not diverge, as a percentage.
    pub success_rate_pct: f64,
    pub median_convergence_s: Option<f64>,
    pub median_distance: Option<f64>,
    pub median_final_eps_d: f64,
    pub median_final_eps_l: f64,
}

/// Median of `values`; the even case averages the two central elements.
/// Infinities participate like any other value. Empty input gives `None`.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median input must not contain NaN"));
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    })
}

pub fn aggregate(records: &[TrialRecord]) -> AggregateReport {
    let n_trials = records.len();
    let mut n_converged = 0;
    let mut n_diverged = 0;
    let mut n_timeout = 0;
    let mut t_conv = Vec::new();
    let mut dist_conv = Vec::new();
    let mut eps_d = Vec::new();
    let mut eps_l = Vec::new();
    for r in records {
        match r.verdict {
            Verdict::Converged { t } => {
                n_converged += 1;
                t_conv.push(t);
                if let Some(d) = r.distance_at_convergence {
                    dist_conv.push(d);
                }
            }
            Verdict::Diverged { .. } => n_diverged += 1,
            Verdict::Timeout => n_timeout += 1,
        }
        eps_d.extend_from_slice(&r.final_eps_d);
        eps_l.extend_from_slice(&r.final_eps_l);
    }
    let successes = n_trials - n_diverged;
    AggregateReport {
        n_trials,
        n_converged,
        n_diverged,
        n_timeout,
        success_rate_pct: if n_trials == 0 {
            0.0
        } else {
            100.0 * successes as f64 / n_trials as f64
        },
        median_convergence_s: median(&t_conv),
        median_distance: median(&dist_conv),
        median_final_eps_d: median(&eps_d).unwrap_or(f64::NAN),
        median_final_eps_l: median(&eps_l).unwrap_or(f64::NAN),
    }
}

/// One aggregate per noise level, all levels sharing `base_seed` so a level
/// differs from its neighbors only by the noise amplitude.
pub fn run_noise_sweep(
    base: &TrialConfig,
    sigmas_deg: &[f64],
    n_per_level: usize,
    base_seed: u64,
) -> Result<Vec<(f64, AggregateReport)>, SimError> {
    sigmas_deg
        .iter()
        .map(|&sigma| {
            let cfg = TrialConfig {
                noise_sigma_deg: sigma,
                ..base.clone()
            };
            let records = run_monte_carlo(&cfg, n_per_level, base_seed)?;
            Ok((sigma, aggregate(&records)))
        })
        .collect()
}

fn verdict_label(v: &Verdict) -> &'static str {
    match v {
        Verdict::Converged { .. } => "converged",
        Verdict::Diverged { cause, .. } => match cause {
            FailureCause::ErrorGrowth => "diverged_error_growth",
            FailureCause::NonFinite => "diverged_non_finite",
            FailureCause::DepthSingularity => "diverged_depth_singularity",
            FailureCause::SingularRotation => "diverged_singular_rotation",
        },
        Verdict::Timeout => "timeout",
    }
}

fn push_opt(line: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(line, "{v}");
    }
}

/// Per-trial results, one row per trial. Optional fields (convergence time
/// and distance of non-converged trials, plane column of plain runs) are
/// left empty. All records must have the same line count, which sizes the
/// `final_eps_d_i` / `final_eps_l_i` column pairs.
pub fn trials_csv(records: &[TrialRecord]) -> String {
    let n_lines = records.first().map_or(0, |r| r.n_lines);
    assert!(
        records.iter().all(|r| r.n_lines == n_lines),
        "csv rows must agree on line count"
    );
    let mut out = String::new();
    out.push_str(
        "seed,n_lines,verdict,converged_t_s,plane_converged_t_s,initial_error,\
         distance_total,distance_at_convergence,scale_guard_steps,decay_violations,\
         unexcited_samples,condition_samples",
    );
    for i in 1..=n_lines {
        let _ = write!(out, ",final_eps_d_{i}");
    }
    for i in 1..=n_lines {
        let _ = write!(out, ",final_eps_l_{i}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},", r.seed, r.n_lines, verdict_label(&r.verdict));
        push_opt(&mut out, r.verdict.convergence_time());
        out.push(',');
        push_opt(&mut out, r.plane_converged_t);
        let _ = write!(
            out,
            ",{},{},",
            r.initial_error, r.distance_total
        );
        push_opt(&mut out, r.distance_at_convergence);
        let _ = write!(
            out,
            ",{},{},{},{}",
            r.scale_guard_steps, r.decay_violations, r.unexcited_samples, r.condition_samples
        );
        for v in &r.final_eps_d {
            let _ = write!(out, ",{v}");
        }
        for v in &r.final_eps_l {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Error history of a single trial, one row per recorded sample. Booleans
/// are 0/1; the plane column is empty outside cascade mode.
pub fn series_csv(record: &TrialRecord) -> String {
    let n = record.n_lines;
    let mut out = String::new();
    out.push_str("t,state_error,cayley_error,lyapunov,plane_error,decay_ok,min_excitation");
    for i in 1..=n {
        let _ = write!(out, ",eps_d_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",eps_l_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",chi_hat_{i}");
    }
    out.push('\n');
    for s in &record.series {
        let _ = write!(
            out,
            "{},{},{},{},",
            s.t, s.state_error, s.cayley_error, s.lyapunov
        );
        push_opt(&mut out, s.plane_error);
        let _ = write!(out, ",{},{}", u8::from(s.decay_ok), s.min_excitation);
        for v in &s.eps_d {
            let _ = write!(out, ",{v}");
        }
        for v in &s.eps_l {
            let _ = write!(out, ",{v}");
        }
        for v in &s.chi_hat {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn aggregate_row(out: &mut String, report: &AggregateReport) {
    let _ = write!(
        out,
        "{},{},{},{},{},",
        report.n_trials,
        report.n_converged,
        report.n_diverged,
        report.n_timeout,
        report.success_rate_pct
    );
    push_opt(out, report.median_convergence_s);
    out.push(',');
    push_opt(out, report.median_distance);
    let _ = write!(
        out,
        ",{},{}",
        report.median_final_eps_d, report.median_final_eps_l
    );
    out.push('\n');
}

const AGGREGATE_COLUMNS: &str = "n_trials,n_converged,n_diverged,n_timeout,\
    success_rate_pct,median_t_converge_s,median_distance,median_final_eps_d,\
    median_final_eps_l";

/// Single-row summary of one batch.
pub fn aggregate_csv(report: &AggregateReport) -> String {
    let mut out = String::from(AGGREGATE_COLUMNS);
    out.push('\n');
    aggregate_row(&mut out, report);
    out
}

/// One summary row per noise level.
pub fn sweep_csv(rows: &[(f64, AggregateReport)]) -> String {
    let mut out = String::from("sigma_deg,");
    out.push_str(AGGREGATE_COLUMNS);
    out.push('\n');
    for (sigma, report) in rows {
        let _ = write!(out, "{sigma},");
        aggregate_row(&mut out, report);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trials::presets;

    fn tiny_cfg(duration: f64) -> TrialConfig {
        TrialConfig {
            duration,
            ..presets::mw_survey(0, 0.0)
        }
    }

    #[test]
    fn derived_seeds_are_stable_and_spread_out() {
        assert_eq!(derive_seed(1, 0), derive_seed(1, 0));
        let seeds: Vec<u64> = (0..64).map(|i| derive_seed(7, i)).collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
        // Different bases decorrelate the whole sequence.
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn median_handles_odd_even_and_infinite_inputs() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(
            median(&[1.0, f64::INFINITY, f64::INFINITY]),
            Some(f64::INFINITY)
        );
    }

    #[test]
    fn batch_is_deterministic_and_ordered() {
        let cfg = tiny_cfg(0.4);
        let a = run_monte_carlo(&cfg, 4, 99).unwrap();
        let b = run_monte_carlo(&cfg, 4, 99).unwrap();
        assert_eq!(a, b);
        for (i, r) in a.iter().enumerate() {
            assert_eq!(r.seed, derive_seed(99, i as u64));
            assert!(r.series.is_empty());
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = tiny_cfg(0.4);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let serial = pool.install(|| run_monte_carlo(&cfg, 3, 5).unwrap());
        let parallel = run_monte_carlo(&cfg, 3, 5).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn aggregate_counts_and_medians() {
        let cfg = tiny_cfg(0.4);
        let mut records = run_monte_carlo(&cfg, 3, 11).unwrap();
        // Forge verdicts to cover every branch of the bookkeeping.
        records[0].verdict = Verdict::Converged { t: 2.0 };
        records[0].distance_at_convergence = Some(1.5);
        records[0].final_eps_d = vec![0.1; 6];
        records[0].final_eps_l = vec![0.2; 6];
        records[1].verdict = Verdict::Diverged {
            t: 1.0,
            cause: FailureCause::ErrorGrowth,
        };
        records[1].final_eps_d = vec![f64::INFINITY; 6];
        records[1].final_eps_l = vec![f64::INFINITY; 6];
        records[2].verdict = Verdict::Timeout;
        records[2].final_eps_d = vec![0.3; 6];
        records[2].final_eps_l = vec![0.4; 6];

        let report = aggregate(&records);
        assert_eq!(report.n_trials, 3);
        assert_eq!(report.n_converged, 1);
        assert_eq!(report.n_diverged, 1);
        assert_eq!(report.n_timeout, 1);
        assert!((report.success_rate_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.median_convergence_s, Some(2.0));
        assert_eq!(report.median_distance, Some(1.5));
        // 18 pooled values per metric: six at the low value, six infinite,
        // six in between; the median lands on the middle batch.
        assert_eq!(report.median_final_eps_d, 0.3);
        assert_eq!(report.median_final_eps_l, 0.4);
    }

    #[test]
    fn noise_levels_share_trial_seeds() {
        let cfg = tiny_cfg(0.3);
        let rows = run_noise_sweep(&cfg, &[0.0, 2.0], 2, 17).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, 0.0);
        assert_eq!(rows[1].0, 2.0);
        let again = run_noise_sweep(&cfg, &[0.0, 2.0], 2, 17).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn csv_output_is_stable_and_shaped_right() {
        let mut cfg = tiny_cfg(0.4);
        cfg.record_series = true;
        cfg.series_stride = 100;

        let records = run_monte_carlo(&cfg, 2, 23).unwrap();
        let table = trials_csv(&records);
        assert_eq!(table, trials_csv(&records));
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        assert_eq!(header.split(',').count(), 12 + 2 * 6);
        assert!(header.starts_with("seed,n_lines,verdict"));
        assert_eq!(lines.count(), 2);

        let single = run_trial(&cfg).unwrap();
        let series = series_csv(&single);
        let n_rows = series.lines().count();
        assert_eq!(n_rows, 1 + single.series.len());
        let header = series.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 7 + 3 * 6);

        let report = aggregate(&records);
        let agg = aggregate_csv(&report);
        assert_eq!(agg.lines().count(), 2);
        assert_eq!(agg.lines().next().unwrap().split(',').count(), 9);

        let sweep = run_noise_sweep(&cfg, &[0.0], 1, 3).unwrap();
        let sweep_table = sweep_csv(&sweep);
        assert_eq!(sweep_table.lines().count(), 2);
        assert!(sweep_table.starts_with("sigma_deg,n_trials,"));
    }
}
