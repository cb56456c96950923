//! Experiment dispatch, output files and pass/fail verdicts.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use heatavg_core::{heat_semigroup_apply, simulate_multiscale};

use crate::config::{ExperimentKind, RunConfig};
use crate::ensemble::{run_ensemble, stream_rng, EnsembleResult, Experiment, Role};
use crate::output::{emit_csv, CsvTable, FileEntry, RunManifest, Verdict};
use crate::RunError;

/// Two-sample KS threshold used by the law experiments.
pub const KS_THRESHOLD: f64 = 0.0607;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io { path: path.display().to_string(), source: e }
}

fn write_table(dir: &Path, name: &str, table: CsvTable<'_>) -> Result<String, RunError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    emit_csv(table, BufWriter::new(file))?;
    Ok(name.to_string())
}

/// Runs the configured experiment, writes its files into `output_dir` and
/// returns the manifest (also written as `manifest.json`).
pub fn run(cfg: &RunConfig) -> Result<RunManifest, RunError> {
    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (files, verdicts) = match cfg.experiment {
        ExperimentKind::Simulate => run_simulate(cfg, dir)?,
        _ => {
            let mut results = Vec::with_capacity(cfg.ks_repeats as usize);
            for r in 0..cfg.ks_repeats {
                let spec = cfg.ensemble_spec(r)?.expect("ensemble experiment");
                results.push(run_ensemble(&spec)?);
            }
            let files = vec![
                write_table(dir, "observables.csv", CsvTable::Observables(&results))?,
                write_table(dir, "fits.csv", CsvTable::Fits(&results))?,
            ];
            (files, verdicts(&results))
        }
    };
    let files = files.iter().map(|f| FileEntry::digest(dir, f)).collect::<Result<Vec<_>, _>>()?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config: serde_json::to_value(cfg)?,
        passed: verdicts.iter().all(|v| v.passed),
        verdicts,
        files,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

fn run_simulate(cfg: &RunConfig, dir: &Path) -> Result<(Vec<String>, Vec<Verdict>), RunError> {
    let ms = cfg.multiscale()?;
    let n_steps = ((cfg.t_end / ms.dt) - 1e-9).ceil().max(1.0) as usize;
    let every = (n_steps / cfg.n_records).max(1);
    let mut rng = stream_rng(cfg.master_seed, 0, 0, Role::EpsSystem, 0);
    let rec = simulate_multiscale(&ms, &mut rng, every)?;
    let files = vec![write_table(dir, "trajectory.csv", CsvTable::Trajectory(&rec))?];
    let mut verdicts = Vec::new();
    let quiet = cfg.sigma_f == 0.0 && cfg.sigma_m == 0.0 && cfg.mu_m == 0.0;
    if quiet {
        let exact = heat_semigroup_apply(&ms.u0, cfg.t_end, &ms.basis)?;
        let got = rec.final_state().expect("final record");
        let scale = exact.l2_norm().max(f64::MIN_POSITIVE);
        let rel = got.sub(&exact).l2_norm() / scale;
        verdicts.push(Verdict {
            name: "heat_decay_relative_error".into(),
            value: rel,
            threshold: "<= 1e-3".into(),
            passed: rel <= 1e-3,
        });
    }
    Ok((files, verdicts))
}

fn within(name: String, value: f64, target: f64, tol: f64) -> Verdict {
    let rel = (value - target).abs() / target.abs();
    Verdict { name, value, threshold: format!("within {:.0}% of {target:.6e}", tol * 100.0), passed: rel <= tol }
}

/// KS verdicts: the share of repetitions below the threshold must reach `share`.
fn ks_verdicts(results: &[EnsembleResult], share: f64, out: &mut Vec<Verdict>) {
    let first = &results[0];
    for (i, k) in first.ks.iter().enumerate() {
        let below = results.iter().filter(|r| r.ks.get(i).is_some_and(|e| e.statistic < KS_THRESHOLD)).count();
        let frac = below as f64 / results.len() as f64;
        out.push(Verdict {
            name: format!("ks_share_below_threshold[eps={}:{}]", k.eps, k.observable),
            value: frac,
            threshold: format!(">= {share} of repeats with KS < {KS_THRESHOLD}"),
            passed: frac >= share - 1e-12,
        });
    }
}

fn variance_verdicts(res: &EnsembleResult, series: &str, tol: f64, out: &mut Vec<Verdict>) {
    for entry in &res.per_eps {
        for name in &res.observable_names {
            let e = Some(entry.eps);
            let var = res.summary(e, &format!("var[{series}:{name}]"));
            let cf = res.summary(e, &format!("closed_form_var[{name}]"));
            if let (Some(var), Some(cf)) = (var, cf) {
                out.push(within(format!("var[{series}:{name}] at eps={}", entry.eps), var.value, cf.value, tol));
            }
        }
    }
}

pub fn verdicts(results: &[EnsembleResult]) -> Vec<Verdict> {
    let mut out = Vec::new();
    let Some(first) = results.first() else { return out };
    match first.experiment {
        Experiment::BoundaryLimit => {
            variance_verdicts(first, "eps_system", 0.10, &mut out);
            ks_verdicts(results, 0.9, &mut out);
        }
        Experiment::DeviationLaw => {
            variance_verdicts(first, "eps_deviation", 0.15, &mut out);
            ks_verdicts(results, 0.8, &mut out);
        }
        Experiment::AveragingRate => {
            if let Some(fit) = first.fit {
                out.push(Verdict {
                    name: "slope".into(),
                    value: fit.slope,
                    threshold: "in [0.4, 0.6]".into(),
                    passed: (0.4..=0.6).contains(&fit.slope),
                });
                out.push(r2_verdict(fit.r2));
            }
        }
        Experiment::FluctuationScaling => {
            if let Some(fit) = first.fit {
                out.push(Verdict {
                    name: "slope".into(),
                    value: fit.slope,
                    threshold: "0.5 +/- 0.1".into(),
                    passed: (fit.slope - 0.5).abs() <= 0.1,
                });
                out.push(r2_verdict(fit.r2));
            }
            if let Some(spot) = &first.spot {
                let e = Some(spot.eps);
                if let (Some(rms), Some(cf)) = (first.summary(e, "rms"), first.summary(e, "closed_form_rms")) {
                    out.push(within(format!("rms at eps={}", spot.eps), rms.value, cf.value, 0.10));
                }
            }
        }
    }
    out
}

fn r2_verdict(r2: f64) -> Verdict {
    Verdict { name: "r2".into(), value: r2, threshold: ">= 0.95".into(), passed: r2 >= 0.95 }
}
