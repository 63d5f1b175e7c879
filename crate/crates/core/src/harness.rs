//! Experiment drivers. Each writes CSV/JSON files into an output directory;
//! every file carries the seed and the resolved run configuration.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{Experiment, GeometryParams, RunConfig};
use crate::contour::{site_hessian_contour, ContourParams, ContourSystem};
use crate::defect::{compare_to_reference, relax, relax_schedule, solve_reference, DefectReference, TruncatedProblem};
use crate::error::{Error, Result};
use crate::fit::{binned_envelope, fit_exponential, DecayFit};
use crate::geometry::{build_lattice_disk, perturb, remove_sites, Configuration, DisplacementField, Lattice, StencilNormSpec};
use crate::model::{self, TbModel};
use crate::spectral::{self, Occupation};

/// Bin width for the envelope check on derivative scatters.
pub const ENVELOPE_BIN: f64 = 1.0;
/// Envelope monotonicity is checked beyond this distance.
pub const ENVELOPE_START: f64 = 3.0;

/// Files written by a run plus a JSON summary.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_header(cfg: &RunConfig, columns: &str) -> String {
    format!(
        "# seed={}\n# config={}\n{columns}\n",
        cfg.seed,
        serde_json::to_string(&cfg.to_json()).expect("json")
    )
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, body)?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, cfg: &RunConfig, mut value: serde_json::Value) -> Result<PathBuf> {
    if let Some(obj) = value.as_object_mut() {
        obj.insert("seed".into(), json!(cfg.seed));
        obj.insert("config".into(), cfg.to_json());
    }
    write_file(dir, name, &(serde_json::to_string_pretty(&value)? + "\n"))
}

/// Echoes the resolved configuration.
pub fn write_run_json(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let mut value = cfg.to_json();
    value.as_object_mut().expect("object").insert("seed".into(), json!(cfg.seed));
    write_file(dir, "run.json", &(serde_json::to_string_pretty(&value)? + "\n"))
}

/// Perturbed triangular-lattice disk, optionally with vacancies removed
/// before perturbing.
pub fn perturbed_disk(geom: &GeometryParams, with_vacancies: bool, seed: u64) -> Result<Configuration> {
    let disk = build_lattice_disk(&Lattice::triangular(geom.scale), geom.radius, &[0.0, 0.0])?;
    let disk = if with_vacancies {
        let present: Vec<_> = geom.vacancies.iter().filter(|id| disk.index_of(id).is_some()).cloned().collect();
        if present.is_empty() { disk } else { remove_sites(&disk, &present)? }
    } else {
        disk
    };
    perturb(&disk, geom.amplitude, seed)
}

pub fn run_spectrum(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    let config = perturbed_disk(&cfg.geometry, true, cfg.seed)?;
    let h = model::assemble(&cfg.model, &config);
    let values = spectral::eigenvalues(&h)?;
    let occ = Occupation::from_model(&cfg.model);
    let mut body = csv_header(cfg, "s,eigenvalue,occupation");
    for (s, &e) in values.iter().enumerate() {
        writeln!(body, "{s},{},{}", fmt_f64(e), fmt_f64(occ.fermi(e))).unwrap();
    }
    let interval = model::gershgorin(&h);
    let summary = json!({
        "n_sites": config.len(),
        "band_energy": spectral::band_energy_from_values(&values, &occ),
        "gershgorin": interval,
        "min_eigenvalue": values.first(),
        "max_eigenvalue": values.last(),
    });
    let files = vec![write_file(out, "spectrum.csv", &body)?, write_json(out, "spectrum.json", cfg, summary.clone())?];
    Ok(RunOutput { files, summary })
}

pub fn run_site_energies(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    let config = perturbed_disk(&cfg.geometry, true, cfg.seed)?;
    let h = model::assemble(&cfg.model, &config);
    let spec = spectral::eig(&h)?;
    let occ = Occupation::from_model(&cfg.model);
    let sites = spectral::site_energies(&spec, &occ);
    let pairs = model::pair_energies(&cfg.model, &config);
    let mut body = csv_header(cfg, "id,E_site,E_pair");
    for i in 0..config.len() {
        let id = &config.id(i).0;
        writeln!(body, "\"{:?}\",{},{}", id, fmt_f64(sites[i]), fmt_f64(pairs[i])).unwrap();
    }
    let band = spectral::band_energy(&spec, &occ);
    let sum: f64 = sites.iter().sum();
    let summary = json!({
        "n_sites": config.len(),
        "band_energy": band,
        "site_energy_sum": sum,
        "partition_error": (sum - band).abs(),
    });
    let files = vec![
        write_file(out, "site_energies.csv", &body)?,
        write_json(out, "site_energies.json", cfg, summary.clone())?,
    ];
    Ok(RunOutput { files, summary })
}

/// Derivative magnitudes of one site energy against distance.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LocalityData {
    /// `(|y_l - y_m|, max_i |∂E_l/∂y(m)_i|)` over every site `m`.
    pub gradient: Vec<(f64, f64)>,
    /// `(|y_l - y_m| + |y_l - y_n|, max_ij |∂²E_l/∂y(m)_i∂y(n)_j|)` over sampled pairs.
    pub hessian: Vec<(f64, f64)>,
}

/// All `(m, m)` plus `extra` distinct random `(m, n)` with `m < n`.
pub fn hessian_pairs(n: usize, extra: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|m| (m, m)).collect();
    let available = n * n.saturating_sub(1) / 2;
    let want = extra.min(available);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(want);
    while seen.len() < want {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs
}

pub fn locality_data(
    model: &TbModel,
    config: &Configuration,
    site: usize,
    contour: &ContourParams,
    extra_pairs: usize,
    seed: u64,
) -> Result<LocalityData> {
    let sys = ContourSystem::new(model, config, contour)?;
    let d = config.dim();
    let grad = sys.site_gradients(model, site)?;
    let gradient = (0..config.len())
        .map(|m| {
            let mag = grad[m * d..(m + 1) * d].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            (config.distance(site, m), mag)
        })
        .collect();
    let pairs = hessian_pairs(config.len(), extra_pairs, seed);
    let blocks = site_hessian_contour(&sys.cache, model, config, site, &pairs)?;
    let hessian = pairs
        .iter()
        .zip(&blocks)
        .map(|(&(m, n), b)| {
            let mag = b.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            (config.distance(site, m) + config.distance(site, n), mag)
        })
        .collect();
    Ok(LocalityData { gradient, hessian })
}

/// Whether binned maxima decrease with distance beyond `start`.
pub fn envelope_decreasing(points: &[(f64, f64)], width: f64, start: f64) -> bool {
    let env: Vec<f64> = binned_envelope(points, width)
        .into_iter()
        .filter(|&(r, _)| r - 0.5 * width >= start)
        .map(|p| p.1)
        .collect();
    env.windows(2).all(|w| w[1] < w[0])
}

/// `(|y_l - y_k|, |Γ_lk|)` over all pairs `l < k`.
pub fn density_matrix_profile(model: &TbModel, config: &Configuration) -> Result<Vec<(f64, f64)>> {
    let spec = spectral::eig(&model::assemble(model, config))?;
    let gamma = spectral::density_matrix(&spec, &Occupation::from_model(model));
    let n = config.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for l in 0..n {
        for k in l + 1..n {
            out.push((config.distance(l, k), gamma[(l, k)].abs()));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalitySummary {
    pub tag: String,
    pub n_sites: usize,
    pub gradient_fit: DecayFit,
    pub hessian_fit: DecayFit,
    pub gradient_envelope_decreasing: bool,
    pub hessian_envelope_decreasing: bool,
    /// Fits to the binned maxima, reported alongside the scatter fits.
    pub gradient_envelope_fit: Option<DecayFit>,
    pub hessian_envelope_fit: Option<DecayFit>,
}

pub fn run_locality(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    let mut grad_csv = csv_header(cfg, "r,magnitude,config_tag");
    let mut hess_csv = csv_header(cfg, "r_sum,magnitude,config_tag");
    let mut summaries = Vec::new();
    for (tag, with_vac) in [("config1", false), ("config2", true)] {
        let config = perturbed_disk(&cfg.geometry, with_vac, cfg.seed)?;
        let site = config
            .index_of(&cfg.geometry.site)
            .ok_or_else(|| Error::Invalid(format!("site {} is not in configuration {tag}", cfg.geometry.site)))?;
        log::info!("locality {tag}: {} sites", config.len());
        let data = locality_data(&cfg.model, &config, site, &cfg.contour, cfg.geometry.hessian_pairs, cfg.seed)?;
        for &(r, v) in &data.gradient {
            writeln!(grad_csv, "{},{},{tag}", fmt_f64(r), fmt_f64(v)).unwrap();
        }
        for &(r, v) in &data.hessian {
            writeln!(hess_csv, "{},{},{tag}", fmt_f64(r), fmt_f64(v)).unwrap();
        }
        summaries.push(LocalitySummary {
            tag: tag.to_string(),
            n_sites: config.len(),
            gradient_fit: fit_exponential(&data.gradient)?,
            hessian_fit: fit_exponential(&data.hessian)?,
            gradient_envelope_decreasing: envelope_decreasing(&data.gradient, ENVELOPE_BIN, ENVELOPE_START),
            hessian_envelope_decreasing: envelope_decreasing(&data.hessian, ENVELOPE_BIN, ENVELOPE_START),
            gradient_envelope_fit: fit_exponential(&binned_envelope(&data.gradient, ENVELOPE_BIN)).ok(),
            hessian_envelope_fit: fit_exponential(&binned_envelope(&data.hessian, ENVELOPE_BIN)).ok(),
        });
    }
    let summary = json!({ "configurations": summaries });
    let files = vec![
        write_file(out, "grad_decay.csv", &grad_csv)?,
        write_file(out, "hess_decay.csv", &hess_csv)?,
        write_json(out, "locality.json", cfg, summary.clone())?,
    ];
    Ok(RunOutput { files, summary })
}

pub fn run_relax(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    let s = &cfg.study;
    let prob = TruncatedProblem::new(DefectReference::divacancy(s.scale), s.radius, s.buffer, cfg.model.clone())?;
    let res = relax(&prob, &s.relax)?;
    let displacements = displacement_records(&res.displacement);
    let summary = json!({
        "radius": s.radius,
        "buffer": s.buffer,
        "n_sites": prob.config().len(),
        "n_free": prob.n_free(),
        "energy": res.energy,
        "converged": res.converged,
        "iterations": res.iterations,
        "grad_norm": res.grad_norm,
    });
    let mut doc = summary.clone();
    doc.as_object_mut().unwrap().insert("displacements".into(), json!(displacements));
    let files = vec![write_json(out, "displacement.json", cfg, doc)?];
    if !res.converged {
        log::warn!("relaxation did not converge: |g|_inf = {:.3e}", res.grad_norm);
    }
    Ok(RunOutput { files, summary })
}

/// `{"id", "u"}` records for the free sites of `u`.
fn displacement_records(u: &DisplacementField) -> Vec<serde_json::Value> {
    u.free_indices()
        .into_iter()
        .map(|i| json!({ "id": u.reference().id(i), "u": u.value(i) }))
        .collect()
}

pub fn run_convergence(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    let s = &cfg.study;
    let schedules = cfg.study.schedules()?;
    let reference = DefectReference::divacancy(s.scale);
    let max_r = schedules.iter().flat_map(|(_, v)| v.iter().map(|p| p.0)).fold(0.0, f64::max);
    if !(s.reference.0 > max_r) {
        return Err(Error::Invalid(format!(
            "reference radius {} must exceed the largest schedule radius {max_r}",
            s.reference.0
        )));
    }
    let mut solved = Vec::new();
    for (tag, schedule) in &schedules {
        log::info!("relaxing schedule {tag}");
        solved.push(relax_schedule(&reference, &cfg.model, schedule, &s.relax)?);
    }
    // warm start the reference from the largest solution of the first schedule
    let (_, first) = &schedules[0];
    let largest = first
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(k, _)| &solved[0][k].displacement);
    log::info!("relaxing reference ({}, {})", s.reference.0, s.reference.1);
    let ref_sol = solve_reference(&reference, &cfg.model, s.reference, largest, &s.relax)?;
    let norm = StencilNormSpec::nearest_neighbor(&reference.lattice);

    let mut body = csv_header(cfg, "set,R,Rbuf,geom_err,energy_err,converged");
    let mut slopes = serde_json::Map::new();
    for ((tag, schedule), sols) in schedules.iter().zip(&solved) {
        let study = compare_to_reference(schedule, sols, &ref_sol, &norm)?;
        for r in &study.rows {
            writeln!(
                body,
                "{tag},{},{},{},{},{}",
                fmt_f64(r.radius),
                fmt_f64(r.buffer),
                fmt_f64(r.geom_err),
                fmt_f64(r.energy_err),
                r.converged
            )
            .unwrap();
        }
        slopes.insert(
            tag.clone(),
            json!({
                "geom_slope": study.geom_slope.map(|f| f.slope),
                "energy_slope": study.energy_slope.map(|f| f.slope),
                "geom_fit": study.geom_slope,
                "energy_fit": study.energy_slope,
                "rows": study.rows,
            }),
        );
    }
    let summary = json!({
        "schedules": slopes,
        "reference": {
            "radius": ref_sol.radius,
            "buffer": ref_sol.buffer,
            "energy": ref_sol.result.energy,
            "converged": ref_sol.result.converged,
            "iterations": ref_sol.result.iterations,
            "grad_norm": ref_sol.result.grad_norm,
        },
    });
    let reference_doc = json!({
        "radius": ref_sol.radius,
        "buffer": ref_sol.buffer,
        "energy": ref_sol.result.energy,
        "converged": ref_sol.result.converged,
        "displacements": displacement_records(&ref_sol.result.displacement),
    });
    let files = vec![
        write_file(out, "converge.csv", &body)?,
        write_json(out, "slopes.json", cfg, summary.clone())?,
        write_json(out, "reference_displacement.json", cfg, reference_doc)?,
    ];
    Ok(RunOutput { files, summary })
}

/// Runs `experiment` and echoes the configuration into `run.json`.
pub fn run(cfg: &RunConfig, experiment: Experiment, out: &Path) -> Result<RunOutput> {
    let mut resolved = cfg.clone();
    resolved.experiment = Some(experiment);
    resolved.output = Some(out.to_path_buf());
    resolved.validate()?;
    let mut output = match experiment {
        Experiment::Spectrum => run_spectrum(&resolved, out),
        Experiment::SiteEnergies => run_site_energies(&resolved, out),
        Experiment::Locality => run_locality(&resolved, out),
        Experiment::Relax => run_relax(&resolved, out),
        Experiment::Converge => run_convergence(&resolved, out),
    }?;
    output.files.push(write_run_json(&resolved, out)?);
    Ok(output)
}
