//! Run configuration read from a single JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::contour::ContourParams;
use crate::defect::{buffer_schedule, RelaxOptions};
use crate::error::{Error, Result};
use crate::geometry::SiteId;
use crate::model::TbModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Spectrum,
    SiteEnergies,
    Locality,
    Relax,
    Converge,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Spectrum => "spectrum",
            Experiment::SiteEnergies => "site-energies",
            Experiment::Locality => "locality",
            Experiment::Relax => "relax",
            Experiment::Converge => "converge",
        }
    }
}

/// Perturbed lattice disk used by the spectrum, site-energy and locality runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryParams {
    /// Triangular lattice spacing.
    pub scale: f64,
    pub radius: f64,
    /// Lattice ids removed in the second locality configuration (and in the
    /// spectrum and site-energy runs).
    pub vacancies: Vec<SiteId>,
    /// Each coordinate is shifted by a uniform draw from `[0, amplitude]`.
    pub amplitude: f64,
    /// Site whose energy derivatives are sampled by the locality run.
    pub site: SiteId,
    /// Random distinct `(m, n)` pairs for the Hessian scatter, on top of all `m = n`.
    pub hessian_pairs: usize,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            scale: 1.0,
            radius: 10.0,
            vacancies: vec![
                SiteId::from([1, 0]),
                SiteId::from([0, -3]),
                SiteId::from([-2, 2]),
                SiteId::from([2, 5]),
            ],
            amplitude: 0.1,
            site: SiteId::from([0, 0]),
            hessian_pairs: 500,
        }
    }
}

/// A named list of `(R, Rbuf)` pairs.
pub type TaggedSchedule = (String, Vec<(f64, f64)>);

/// Defect relaxation and convergence-study settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyParams {
    /// Lattice spacing of the di-vacancy reference.
    pub scale: f64,
    /// Buffer schedules to run (1, 2 or 3), ignored when `schedule` is given.
    pub sets: Vec<u8>,
    /// Explicit `[R, Rbuf]` pairs.
    pub schedule: Option<Vec<(f64, f64)>>,
    /// `[R, Rbuf]` of the high-accuracy solution.
    pub reference: (f64, f64),
    /// Free radius and buffer of a single `relax` run.
    pub radius: f64,
    pub buffer: f64,
    pub relax: RelaxOptions,
}

impl Default for StudyParams {
    fn default() -> Self {
        StudyParams {
            scale: 1.0,
            sets: vec![1],
            schedule: None,
            reference: (20.0, 11.0),
            radius: 3.0,
            buffer: 2.1,
            relax: RelaxOptions::default(),
        }
    }
}

impl StudyParams {
    /// Tagged schedules: `("set1", [...])`, or `("custom", [...])`.
    pub fn schedules(&self) -> Result<Vec<TaggedSchedule>> {
        let out: Vec<TaggedSchedule> = match &self.schedule {
            Some(s) => vec![("custom".to_string(), s.clone())],
            None => self
                .sets
                .iter()
                .map(|&k| Ok((format!("set{k}"), buffer_schedule(k)?)))
                .collect::<Result<_>>()?,
        };
        if out.is_empty() || out.iter().any(|(_, s)| s.is_empty()) {
            return Err(Error::Invalid("empty study schedule".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: TbModel,
    pub experiment: Option<Experiment>,
    pub geometry: GeometryParams,
    pub contour: ContourParams,
    pub study: StudyParams,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: TbModel::default(),
            experiment: None,
            geometry: GeometryParams::default(),
            contour: ContourParams::default(),
            study: StudyParams::default(),
            seed: 2024,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let g = &self.geometry;
        if !(g.scale > 0.0) || !(g.radius > 0.0) || !(g.amplitude >= 0.0) {
            return Err(Error::Invalid("geometry scale and radius must be positive, amplitude non-negative".into()));
        }
        if g.vacancies.iter().chain(std::iter::once(&g.site)).any(|id| id.0.len() != 2) {
            return Err(Error::Invalid("site ids must have two integer coordinates".into()));
        }
        if g.vacancies.contains(&g.site) {
            return Err(Error::Invalid(format!("sampled site {} is listed as a vacancy", g.site)));
        }
        if self.contour.n_nodes < 8 || !self.contour.n_nodes.is_multiple_of(2) {
            return Err(Error::Invalid(format!("contour.n_nodes must be even and >= 8, got {}", self.contour.n_nodes)));
        }
        let s = &self.study;
        if !(s.scale > 0.0) || !(s.radius > 0.0) || !(s.buffer > 0.0) {
            return Err(Error::Invalid("study scale, radius and buffer must be positive".into()));
        }
        if !(s.reference.0 > 0.0 && s.reference.1 > 0.0) {
            return Err(Error::Invalid("reference radius and buffer must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.geometry.vacancies.len(), 4);
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig {
            experiment: Some(Experiment::Converge),
            study: StudyParams { sets: vec![1, 2, 3], ..StudyParams::default() },
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert!(text.contains("\"experiment\":\"converge\""));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_json(r#"{"modle": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"kT": -1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"geometry": {"vacancies": [[0, 0]]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"contour": {"n_nodes": 7}}"#).is_err());
    }

    #[test]
    fn schedules() {
        let mut s = StudyParams::default();
        assert_eq!(s.schedules().unwrap()[0].1.len(), 5);
        s.schedule = Some(vec![]);
        assert!(s.schedules().is_err());
        s.schedule = None;
        s.sets = vec![];
        assert!(s.schedules().is_err());
    }
}
