//! Turning stored runs into numbers people look at: per-run diagnosis
//! summaries and the CSV tables behind the standard figures.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assimilation::AssimilationCycleRecord;
use crate::diagnostics::{
    departure_statistics, e_folding_length, increment_stddev_profile, lagged_autocorrelation,
    mean_increment_by_phase, spatial_autocorrelation, DepartureStatistics,
};
use crate::error::{Error, Result};
use crate::harness::store::{RecordStore, ReplicateRecords};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnosis {
    pub label: String,
    /// Increment autocorrelation per lag, averaged over components and
    /// replicates (lag 0 is 1 by construction).
    pub mean_autocorrelation: Vec<f64>,
    /// Fraction of component series whose |R_k| leaves the two-sided 95%
    /// white-noise band, per lag.
    pub flagged_fraction: Vec<f64>,
    /// Per-component increment standard deviation, pooled over replicates.
    pub increment_std: Vec<f64>,
    pub departures: Option<DepartureStatistics>,
    /// Mean increment per phase (outer) and component (inner); present when
    /// a phase period was requested.
    pub phase_means: Option<Vec<Vec<f64>>>,
    /// Spatial autocorrelation of the increments by grid separation.
    pub spatial_correlation: Vec<f64>,
    /// 1/e crossing of the spatial correlation in grid-spacing units.
    pub e_folding: Option<f64>,
}

fn pooled_records(replicates: &[ReplicateRecords]) -> Vec<AssimilationCycleRecord> {
    replicates
        .iter()
        .flat_map(|r| r.records.iter().cloned())
        .collect()
}

fn diagnose_run(
    label: &str,
    replicates: &[ReplicateRecords],
    lags: usize,
    phase: Option<usize>,
) -> Result<RunDiagnosis> {
    let dim = replicates
        .first()
        .and_then(|r| r.records.first())
        .map(|rec| rec.increment.len())
        .ok_or_else(|| Error::InsufficientSamples(format!("run {label} holds no records")))?;

    let mut sums = vec![0.0_f64; lags + 1];
    let mut flagged = vec![0.0_f64; lags + 1];
    let mut n_series = 0usize;
    for rep in replicates {
        for i in 0..dim {
            let series: Vec<f64> = rep.records.iter().map(|r| r.increment[i]).collect();
            match lagged_autocorrelation(&series, lags) {
                Ok(acf) => {
                    let band = 1.96 / (series.len() as f64).sqrt();
                    for (k, r) in acf.values.iter().enumerate() {
                        sums[k] += r;
                        if k > 0 && r.abs() > band {
                            flagged[k] += 1.0;
                        }
                    }
                    n_series += 1;
                }
                Err(Error::DegenerateSeries(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    if n_series == 0 {
        return Err(Error::DegenerateSeries(format!(
            "run {label}: every increment component series is constant"
        )));
    }
    let mean_autocorrelation: Vec<f64> = sums.iter().map(|s| s / n_series as f64).collect();
    let flagged_fraction: Vec<f64> = flagged.iter().map(|f| f / n_series as f64).collect();

    let pooled = pooled_records(replicates);
    let increment_std = increment_stddev_profile(&pooled)?.iter().copied().collect();
    let departures = match departure_statistics(&pooled) {
        Ok(s) => Some(s),
        Err(Error::InsufficientSamples(_)) => None,
        Err(e) => return Err(e),
    };
    let phase_means = match phase {
        Some(p) => Some(
            mean_increment_by_phase(&pooled, p)?
                .iter()
                .map(|v| v.iter().copied().collect())
                .collect(),
        ),
        None => None,
    };
    let snapshots: Vec<_> = pooled.iter().map(|r| r.increment.clone()).collect();
    let (spatial_correlation, e_folding) = match spatial_autocorrelation(&snapshots) {
        Ok(corr) => {
            let scale = e_folding_length(&corr);
            (corr, scale)
        }
        Err(Error::DegenerateSeries(_)) | Err(Error::Dimension(_)) => (vec![], None),
        Err(e) => return Err(e),
    };

    Ok(RunDiagnosis {
        label: label.to_string(),
        mean_autocorrelation,
        flagged_fraction,
        increment_std,
        departures,
        phase_means,
        spatial_correlation,
        e_folding,
    })
}

pub fn diagnose_store(
    store: &RecordStore,
    lags: usize,
    phase: Option<usize>,
) -> Result<Vec<RunDiagnosis>> {
    store
        .runs
        .iter()
        .map(|(label, reps)| diagnose_run(label, reps, lags, phase))
        .collect()
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Emit the requested figure tables (`fig1`, `fig3`, `fig9`, `fig11`,
/// `fig12`) plus `summary.json`; returns the written paths.
pub fn emit_report(
    store: &RecordStore,
    figs: &[String],
    phase: Option<usize>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let known = ["fig1", "fig3", "fig9", "fig11", "fig12"];
    if let Some(bad) = figs.iter().find(|f| !known.contains(&f.as_str())) {
        return Err(Error::Config(format!(
            "unknown figure {bad}; known: {}",
            known.join(", ")
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let diagnoses = diagnose_store(store, store.manifest.lags, phase)?;
    let mut written = vec![];

    for fig in figs {
        let (name, content) = match fig.as_str() {
            "fig1" => {
                let mut out = String::from("run,lag,mean_autocorrelation,flagged_fraction\n");
                for d in &diagnoses {
                    for (k, (r, f)) in d
                        .mean_autocorrelation
                        .iter()
                        .zip(&d.flagged_fraction)
                        .enumerate()
                    {
                        out.push_str(&format!("{},{k},{r},{f}\n", d.label));
                    }
                }
                ("fig1_autocorrelogram.csv", out)
            }
            "fig3" => {
                let mut out = String::from("run,phase,component,mean_increment\n");
                for d in &diagnoses {
                    let Some(means) = &d.phase_means else {
                        return Err(Error::Config(
                            "fig3 needs a phase period (--phase)".into(),
                        ));
                    };
                    for (p, row) in means.iter().enumerate() {
                        for (i, v) in row.iter().enumerate() {
                            out.push_str(&format!("{},{p},{i},{v}\n", d.label));
                        }
                    }
                }
                ("fig3_phase_means.csv", out)
            }
            "fig9" => {
                let mut out = String::from("run,component,increment_std\n");
                for d in &diagnoses {
                    for (i, s) in d.increment_std.iter().enumerate() {
                        out.push_str(&format!("{},{i},{s}\n", d.label));
                    }
                }
                ("fig9_profiles.csv", out)
            }
            "fig11" => {
                let mut out = String::from("run,separation,spatial_correlation\n");
                for d in &diagnoses {
                    for (r, c) in d.spatial_correlation.iter().enumerate() {
                        out.push_str(&format!("{},{r},{c}\n", d.label));
                    }
                }
                ("fig11_lengthscales.csv", out)
            }
            "fig12" => {
                let mut out = String::from(
                    "run,component,mean_omb,mean_oma,std_omb,std_oma\n",
                );
                for d in &diagnoses {
                    if let Some(s) = &d.departures {
                        for i in 0..s.mean_background.len() {
                            out.push_str(&format!(
                                "{},{i},{},{},{},{}\n",
                                d.label,
                                s.mean_background[i],
                                s.mean_analysis[i],
                                s.std_background[i],
                                s.std_analysis[i]
                            ));
                        }
                    }
                }
                ("fig12_departures.csv", out)
            }
            _ => unreachable!(),
        };
        let path = dir.join(name);
        write_file(&path, &content)?;
        written.push(path);
    }

    let summary_path = dir.join("summary.json");
    let summary = serde_json::to_string_pretty(&diagnoses)?;
    write_file(&summary_path, &summary)?;
    written.push(summary_path);
    Ok(written)
}
