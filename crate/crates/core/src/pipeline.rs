//! End-to-end analysis: fit the curves, estimate the variance components,
//! screen every coefficient for constancy, re-estimate the constant ones
//! with jackknife standard errors, band the varying ones and compose
//! per-cluster effects for requested `z` profiles.
//!
//! The varying-coefficient curves are not refitted after constants are fixed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{CoefId, FitConfig};
use crate::data::ClusterDataset;
use crate::error::{Error, Result};
use crate::inference::{
    cluster_effect, confidence_band, grid_inference, jackknife_se, test_constancy_with,
    BandResult, ConstantEstimate, EffectCurves, GridInference, TestResult,
};
use crate::io;
use crate::local::{averaging_window, fit_curves, CoefficientCurves, ObservationFits};
use crate::simulation::{
    calibration_study, generate_dataset, mise_study, rmise_study, CalibrationConfig, RmiseConfig, SimConfig,
};
use crate::varcomp::{residuals_from_theta, VarianceComponents};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Fit,
    Varcomp,
    Bands,
    Test,
    Report,
    Simulate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub h: Option<f64>,
    pub level: Option<f64>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    /// Significance level `alpha` of the constancy screen; bands have
    /// coverage `1 - alpha`.
    pub level: f64,
    /// `z` profiles for composed cluster effects.
    pub profiles: Vec<Vec<f64>>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            level: 0.05,
            profiles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    /// Replicate 0 of the simulation as `dataset.csv`.
    Dataset,
    Mise,
    Rmise,
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub kinds: Vec<StudyKind>,
    /// Replicates of the MISE study.
    pub reps: usize,
    /// Cluster size of the loss-ratio design (random effects are switched off).
    pub rmise_cluster_size: usize,
    pub rmise: RmiseConfig,
    pub calibration: CalibrationConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            kinds: vec![StudyKind::Mise],
            reps: 100,
            rmise_cluster_size: 50,
            rmise: RmiseConfig::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

/// The configuration document: `[fit]`, `[analysis]`, `[simulation]` and
/// `[study]` tables, all optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub fit: FitConfig,
    pub analysis: AnalysisOptions,
    pub simulation: SimConfig,
    pub study: StudyConfig,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(h) = o.h {
            self.fit.h = h;
        }
        if let Some(g) = o.grid {
            self.fit.grid.count = g;
        }
        if let Some(level) = o.level {
            self.analysis.level = level;
        }
        if let Some(seed) = o.seed {
            self.simulation.seed = seed;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        let level = self.analysis.level;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {level}")));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.analysis.level
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub u_range: (f64, f64),
    /// Clusters with `n_i <= p`, left out of the variance components.
    pub small_clusters: Vec<String>,
}

impl DatasetSummary {
    pub fn of(data: &ClusterDataset) -> Self {
        DatasetSummary {
            n: data.n(),
            m: data.m(),
            p: data.p(),
            q: data.q(),
            u_range: data.u_range(),
            small_clusters: data
                .small_clusters()
                .iter()
                .map(|&i| data.clusters()[i].id.clone())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub data: DatasetSummary,
    pub config: FitConfig,
    /// Significance level of the screen.
    pub level: f64,
    pub interval: (f64, f64),
    /// Constancy test of every coefficient.
    pub tests: Vec<TestResult>,
    /// Coefficients accepted as constant, with jackknife standard errors.
    pub constants: Vec<ConstantEstimate>,
    pub varying: Vec<CoefId>,
    pub bands: Vec<BandResult>,
    pub variance_components: VarianceComponents,
    pub effects: Vec<EffectCurves>,
}

/// Shared first stages: curves, pointwise fits, variance components and
/// grid inference.
pub struct Fitted {
    pub curves: CoefficientCurves,
    pub constants: Vec<f64>,
    pub vc: VarianceComponents,
    pub inference: GridInference,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

pub fn fit_stage(data: &ClusterDataset, cfg: &FitConfig) -> Result<(CoefficientCurves, ObservationFits)> {
    stage("fit", (|| {
        let curves = fit_curves(data, cfg)?;
        let obs = ObservationFits::compute(&curves, data)?;
        Ok((curves, obs))
    })())
}

pub fn fit_all(data: &ClusterDataset, cfg: &FitConfig) -> Result<Fitted> {
    let (curves, obs) = fit_stage(data, cfg)?;
    let constants = stage("fit", averaging_window(data, cfg).and_then(|w| obs.constants(w)))?;
    let vc = stage(
        "varcomp",
        crate::varcomp::variance_components(data, &residuals_from_theta(data, curves.layout, &obs.theta)),
    )?;
    let inference = stage("inference", grid_inference(data, &curves, &vc))?;
    Ok(Fitted {
        curves,
        constants,
        vc,
        inference,
    })
}

pub fn constancy_tests(fitted: &Fitted, alpha: f64) -> Result<Vec<TestResult>> {
    stage(
        "test",
        fitted
            .curves
            .layout
            .ids()
            .into_iter()
            .enumerate()
            .map(|(i, id)| test_constancy_with(&fitted.curves, &fitted.inference, id, fitted.constants[i], alpha))
            .collect(),
    )
}

pub fn all_bands(fitted: &Fitted, ids: &[CoefId], alpha: f64) -> Result<Vec<BandResult>> {
    stage(
        "bands",
        ids.iter()
            .map(|id| confidence_band(&fitted.curves, &fitted.inference, *id, alpha))
            .collect(),
    )
}

/// Runs every stage on an in-memory dataset.
pub fn analyze(data: &ClusterDataset, cfg: &RunConfig) -> Result<AnalysisReport> {
    cfg.validate()?;
    let alpha = cfg.alpha();
    let fitted = fit_all(data, &cfg.fit)?;
    let tests = constancy_tests(&fitted, alpha)?;
    let (varying, constant_ids): (Vec<CoefId>, Vec<CoefId>) = {
        let (v, c): (Vec<&TestResult>, Vec<&TestResult>) = tests.iter().partition(|t| t.reject);
        (
            v.iter().map(|t| t.coefficient).collect(),
            c.iter().map(|t| t.coefficient).collect(),
        )
    };
    let constants = if constant_ids.is_empty() {
        Vec::new()
    } else {
        stage("constants", jackknife_se(data, &cfg.fit, &constant_ids))?
    };
    let bands = all_bands(&fitted, &varying, alpha)?;
    let fixed: BTreeMap<CoefId, f64> = constants.iter().map(|c| (c.coefficient, c.value)).collect();
    let effects = stage(
        "effects",
        cfg.analysis
            .profiles
            .iter()
            .map(|z| cluster_effect(&fitted.curves, &fixed, z, None))
            .collect(),
    )?;
    Ok(AnalysisReport {
        data: DatasetSummary::of(data),
        config: cfg.fit.clone(),
        level: cfg.analysis.level,
        interval: fitted.curves.interval,
        tests,
        constants,
        varying,
        bands,
        variance_components: fitted.vc,
        effects,
    })
}

/// Loads the configuration (defaults when absent) and applies overrides.
pub fn load_run_config(spec: &RunSpec) -> Result<RunConfig> {
    let mut cfg = match &spec.config {
        Some(path) => stage("config", io::load_config(path))?,
        None => RunConfig::default(),
    };
    stage("config", cfg.apply(&spec.overrides))?;
    Ok(cfg)
}

fn load_input(spec: &RunSpec) -> Result<ClusterDataset> {
    let path = spec
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--input is required".into()).in_stage("input"))?;
    stage("input", io::load_csv(path))
}

/// Loads the input and configuration named by `spec` and runs [`analyze`].
pub fn run_pipeline(spec: &RunSpec) -> Result<AnalysisReport> {
    let cfg = load_run_config(spec)?;
    let data = load_input(spec)?;
    analyze(&data, &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub data: DatasetSummary,
    pub config: FitConfig,
    pub interval: (f64, f64),
    /// Averages of the pointwise estimates, for every coefficient.
    pub averages: BTreeMap<CoefId, f64>,
}

fn write_out(dir: &Path, files: Vec<(&str, String)>) -> Result<Vec<PathBuf>> {
    stage("output", (|| {
        io::ensure_dir(dir)?;
        files
            .iter()
            .map(|(name, text)| io::write_file(dir, name, text))
            .collect()
    })())
}

/// Runs one CLI subcommand and writes its files into `spec.out`.
pub fn execute(spec: &RunSpec) -> Result<Vec<PathBuf>> {
    let cfg = load_run_config(spec)?;
    if spec.command == Command::Simulate {
        return simulate(&cfg, &spec.out);
    }
    let data = load_input(spec)?;
    let out = &spec.out;
    let alpha = cfg.alpha();
    match spec.command {
        Command::Fit => {
            let (curves, obs) = fit_stage(&data, &cfg.fit)?;
            let avg = stage("fit", averaging_window(&data, &cfg.fit).and_then(|w| obs.constants(w)))?;
            let summary = FitSummary {
                data: DatasetSummary::of(&data),
                config: cfg.fit.clone(),
                interval: curves.interval,
                averages: curves.layout.ids().into_iter().zip(avg).collect(),
            };
            write_out(
                out,
                vec![
                    ("fit.json", io::to_json(&summary)?),
                    ("estimates.csv", io::estimates_csv(&curves)?),
                ],
            )
        }
        Command::Varcomp => {
            let (curves, obs) = fit_stage(&data, &cfg.fit)?;
            let res = residuals_from_theta(&data, curves.layout, &obs.theta);
            let vc = stage("varcomp", crate::varcomp::variance_components(&data, &res))?;
            write_out(out, vec![("varcomp.json", io::to_json(&vc)?)])
        }
        Command::Bands => {
            let fitted = fit_all(&data, &cfg.fit)?;
            let bands = all_bands(&fitted, &fitted.curves.layout.ids(), alpha)?;
            write_out(out, vec![("curves.csv", io::curves_csv(&bands)?)])
        }
        Command::Test => {
            let fitted = fit_all(&data, &cfg.fit)?;
            let tests = constancy_tests(&fitted, alpha)?;
            write_out(out, vec![("tests.csv", io::tests_csv(&tests)?)])
        }
        Command::Report => {
            let report = analyze(&data, &cfg)?;
            stage("output", io::write_results(&report, out))
        }
        Command::Simulate => unreachable!(),
    }
}

/// Study reports in the order of `cfg.study.kinds`. The fit intercept
/// follows the simulation truth.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sim = &cfg.simulation;
    let fit = FitConfig {
        intercept: sim.truth.intercept.is_some(),
        ..cfg.fit.clone()
    };
    let mut files = Vec::new();
    for kind in &cfg.study.kinds {
        match kind {
            StudyKind::Dataset => {
                let s = stage("simulate", generate_dataset(sim, 0))?;
                let mut buf = Vec::new();
                io::write_dataset(&s.data, &mut buf)?;
                files.push(("dataset.csv", String::from_utf8(buf).expect("csv of UTF-8 fields")));
            }
            StudyKind::Mise => {
                let r = stage("simulate", mise_study(sim, &fit, cfg.study.reps))?;
                let mut rows = vec!["quantity,value".to_string()];
                for (id, v) in r.coefficients.iter().zip(&r.mise) {
                    rows.push(format!("mise_{id},{}", io::fmt_f64(*v)));
                }
                for (label, v) in r.sigma_labels.iter().zip(&r.mse_sigma) {
                    rows.push(format!("mse_{label},{}", io::fmt_f64(*v)));
                }
                rows.push(format!("mse_sigma2,{}", io::fmt_f64(r.mse_sigma2)));
                files.push(("mise.json", io::to_json(&r)?));
                files.push(("mise.csv", rows.join("\n") + "\n"));
            }
            StudyKind::Rmise => {
                let design = sim.loss_ratio_design(cfg.study.rmise_cluster_size);
                let mut rc = cfg.study.rmise.clone();
                rc.grid_count = fit.grid.count;
                let r = stage("simulate", rmise_study(&design, &rc))?;
                let mut rows = vec!["h,rmise_a,rmise_beta,dropped_fraction".to_string()];
                for pt in &r.points {
                    rows.push(format!(
                        "{},{},{},{}",
                        io::fmt_f64(pt.h),
                        io::fmt_f64(pt.rmise_a),
                        io::fmt_f64(pt.rmise_beta),
                        io::fmt_f64(pt.dropped_fraction)
                    ));
                }
                files.push(("rmise.json", io::to_json(&r)?));
                files.push(("rmise.csv", rows.join("\n") + "\n"));
            }
            StudyKind::Calibration => {
                let r = stage("simulate", calibration_study(sim, &fit, &cfg.study.calibration))?;
                files.push(("calibration.json", io::to_json(&r)?));
            }
        }
    }
    write_out(out, files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_document_round_trip_and_unknown_keys() {
        let text = "[fit]\nh = 0.2\nkernel = \"uniform\"\n[analysis]\nlevel = 0.1\nprofiles = [[1.0, 0.0]]\n[study]\nkinds = [\"mise\", \"rmise\"]\nreps = 3\n";
        let cfg: RunConfig = io::parse_config(text).unwrap();
        assert_eq!(cfg.fit.h, 0.2);
        assert_eq!(cfg.analysis.level, 0.1);
        assert_eq!(cfg.study.kinds, vec![StudyKind::Mise, StudyKind::Rmise]);
        assert!(io::parse_config::<RunConfig>("[fit]\nbandwidth = 0.2\n").is_err());
        assert!(io::parse_config::<RunConfig>("typo = 1\n").is_err());
    }

    #[test]
    fn overrides_validate() {
        let mut cfg = RunConfig::default();
        let o = Overrides {
            h: Some(0.3),
            level: Some(0.1),
            grid: Some(51),
            seed: Some(9),
        };
        cfg.apply(&o).unwrap();
        assert_eq!((cfg.fit.h, cfg.fit.grid.count, cfg.simulation.seed), (0.3, 51, 9));
        assert_eq!(cfg.alpha(), 0.1);
        let bad = Overrides {
            level: Some(1.5),
            ..Overrides::default()
        };
        assert!(RunConfig::default().apply(&bad).is_err());
    }
}
