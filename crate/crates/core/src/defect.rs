//! Point defects in a Bravais lattice: truncated energy-difference
//! functional on buffered disks, its relaxation, and convergence studies.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_line, fit_power_law, LineFit};
use crate::geometry::{build_lattice_disk, norm, remove_sites, stencil_norm, Configuration, DisplacementField, Lattice, SiteId, StencilNormSpec};
use crate::model::{self, TbModel};
use crate::spectral::{self, Occupation};

/// Fraction of the reference minimum separation below which a deformed
/// configuration is rejected.
pub const SEPARATION_FRACTION: f64 = 0.5;

/// A lattice with finitely many sites removed near the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectReference {
    pub lattice: Lattice,
    pub removed: Vec<SiteId>,
    /// Outside this radius the reference is the perfect lattice.
    pub core_radius: f64,
}

impl DefectReference {
    pub fn new(lattice: Lattice, removed: Vec<SiteId>, core_radius: f64) -> Result<Self> {
        for id in &removed {
            if id.0.len() != lattice.dim {
                return Err(Error::Invalid(format!("removed id {id} has the wrong dimension")));
            }
            let r = norm(&lattice.point(&id.0));
            if r > core_radius {
                return Err(Error::Invalid(format!(
                    "removed site {id} lies at {r}, outside the core radius {core_radius}"
                )));
            }
        }
        Ok(DefectReference {
            lattice,
            removed,
            core_radius,
        })
    }

    pub fn perfect(lattice: Lattice) -> Self {
        DefectReference {
            lattice,
            removed: Vec::new(),
            core_radius: 0.0,
        }
    }

    /// Triangular lattice without the sites `(0,0)` and `(1,0)`.
    pub fn divacancy(scale: f64) -> Self {
        DefectReference {
            lattice: Lattice::triangular(scale),
            removed: vec![SiteId::from([0, 0]), SiteId::from([1, 0])],
            core_radius: 1.5 * scale,
        }
    }

    /// Lattice sites in the closed disk of `radius` about the origin, minus
    /// the removed ones.
    pub fn realize(&self, radius: f64) -> Result<Configuration> {
        let disk = build_lattice_disk(&self.lattice, radius, &vec![0.0; self.lattice.dim])?;
        let present: Vec<SiteId> = self.removed.iter().filter(|id| disk.index_of(id).is_some()).cloned().collect();
        if present.len() == disk.len() {
            return Err(Error::Empty(format!("every site within {radius} is removed")));
        }
        if present.is_empty() {
            Ok(disk)
        } else {
            remove_sites(&disk, &present)
        }
    }
}

/// The defect realized on `B_{R + Rbuf}`, with sites in `B_R` free and the
/// rest clamped at their reference positions.
#[derive(Clone, Debug)]
pub struct TruncatedProblem {
    pub reference: DefectReference,
    pub radius: f64,
    pub buffer: f64,
    pub model: TbModel,
    config: Configuration,
    free: Vec<bool>,
    base_energy: f64,
    floor: f64,
}

impl TruncatedProblem {
    pub fn new(reference: DefectReference, radius: f64, buffer: f64, model: TbModel) -> Result<Self> {
        model.validate()?;
        if !(radius > 0.0) {
            return Err(Error::Invalid(format!("free radius must be positive, got {radius}")));
        }
        if !(buffer > 0.0) {
            return Err(Error::Invalid(format!("buffer width must be positive, got {buffer}")));
        }
        let config = reference.realize(radius + buffer)?;
        let free: Vec<bool> = (0..config.len()).map(|i| norm(config.position(i)) <= radius).collect();
        if !free.iter().any(|&f| f) {
            return Err(Error::Empty(format!("no free site within {radius}")));
        }
        let floor = SEPARATION_FRACTION * config.min_sep();
        let base_energy = total_energy(&model, &config)?;
        Ok(TruncatedProblem {
            reference,
            radius,
            buffer,
            model,
            config,
            free,
            base_energy,
            floor,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    pub fn n_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// Energy of the undeformed realization.
    pub fn base_energy(&self) -> f64 {
        self.base_energy
    }

    pub fn zero_field(&self) -> DisplacementField {
        DisplacementField::zeros(self.config.clone(), self.free.clone()).expect("mask matches")
    }

    fn check_field(&self, u: &DisplacementField) -> Result<()> {
        if u.reference().ids() != self.config.ids() || u.free() != self.free.as_slice() {
            return Err(Error::Invalid("displacement field does not belong to this problem".into()));
        }
        Ok(())
    }

    fn deform(&self, u: &DisplacementField) -> Result<Configuration> {
        let y = u.deformed()?;
        y.check_separation(self.floor)?;
        Ok(y)
    }

    /// `E(x + u) - E(x)` over the realized sites.
    pub fn energy(&self, u: &DisplacementField) -> Result<f64> {
        self.check_field(u)?;
        let y = self.deform(u)?;
        Ok(total_energy(&self.model, &y)? - self.base_energy)
    }

    /// Gradient with respect to the free components, packed like
    /// [`DisplacementField::free_dofs`].
    pub fn gradient(&self, u: &DisplacementField) -> Result<Vec<f64>> {
        Ok(self.energy_and_gradient(u)?.1)
    }

    pub fn energy_and_gradient(&self, u: &DisplacementField) -> Result<(f64, Vec<f64>)> {
        self.check_field(u)?;
        let y = self.deform(u)?;
        let h = model::assemble(&self.model, &y);
        let spec = spectral::eig(&h)?;
        let occ = Occupation::from_model(&self.model);
        let energy = spectral::band_energy(&spec, &occ) + model::pair_energies(&self.model, &y).iter().sum::<f64>()
            - self.base_energy;
        let full = spectral::total_gradient_hf(&self.model, &y, &spec, &occ);
        let d = y.dim();
        let grad = u
            .free_indices()
            .into_iter()
            .flat_map(|i| full[i * d..(i + 1) * d].to_vec())
            .collect();
        Ok((energy, grad))
    }
}

/// Band plus pair energy.
pub fn total_energy(model: &TbModel, config: &Configuration) -> Result<f64> {
    let h = model::assemble(model, config);
    let values = spectral::eigenvalues(&h)?;
    let occ = Occupation::from_model(model);
    Ok(spectral::band_energy_from_values(&values, &occ) + model::pair_energies(model, config).iter().sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxOptions {
    /// Stop when the largest gradient component is at most this.
    pub gtol: f64,
    pub max_iter: usize,
    /// L-BFGS memory.
    pub memory: usize,
    /// Largest single-step change of any coordinate.
    pub max_step: f64,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        RelaxOptions {
            gtol: 1e-6,
            max_iter: 500,
            memory: 10,
            max_step: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RelaxResult {
    pub displacement: DisplacementField,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖∇E‖_∞` at the returned iterate.
    pub grad_norm: f64,
    /// Energy after each accepted step, starting from the initial guess.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Limited-memory BFGS with Armijo backtracking from `u = 0`.
pub fn relax(prob: &TruncatedProblem, opts: &RelaxOptions) -> Result<RelaxResult> {
    relax_from(prob, &prob.zero_field(), opts)
}

/// As [`relax`], starting from `start`. Steps that bring two sites closer
/// than the separation floor are rejected by the line search.
pub fn relax_from(prob: &TruncatedProblem, start: &DisplacementField, opts: &RelaxOptions) -> Result<RelaxResult> {
    if !(opts.gtol > 0.0) || opts.memory == 0 || !(opts.max_step > 0.0) {
        return Err(Error::Invalid("relaxation options must be positive".into()));
    }
    let template = start;
    let mut x = start.free_dofs();
    let (mut f, mut g) = prob.energy_and_gradient(start)?;
    let mut history = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut converged = max_abs(&g) <= opts.gtol;
    let mut stalled = false;

    while !converged && iterations < opts.max_iter {
        let mut d = two_loop(&g, &memory);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = 1.0_f64.min(opts.max_step / max_abs(&d));
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            match prob.energy_and_gradient(&template.with_free_dofs(&trial)) {
                Ok((ft, gt)) if ft <= f + 1e-4 * alpha * slope => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                Ok(_) | Err(Error::Separation { .. }) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            stalled = true;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        history.push(f);
        iterations += 1;
        converged = max_abs(&g) <= opts.gtol;
        log::debug!("iter {iterations}: E = {f:.12e}, |g|_inf = {:.3e}", max_abs(&g));
    }
    if stalled {
        log::warn!("line search stalled at |g|_inf = {:.3e}", max_abs(&g));
    }
    log::info!(
        "relaxed {} sites (R = {}, Rbuf = {}): {iterations} iterations, E = {f:.10e}, converged = {converged}",
        prob.config.len(),
        prob.radius,
        prob.buffer
    );
    Ok(RelaxResult {
        displacement: template.with_free_dofs(&x),
        energy: f,
        iterations,
        converged,
        grad_norm: max_abs(&g),
        history,
    })
}

/// `-H_k g` by the standard two-loop recursion.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Site energy of `site` in the realization on `B_R`, for each radius.
pub fn tdlimit_site_energy(reference: &DefectReference, model: &TbModel, site: &SiteId, radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    if radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("radii must be strictly increasing".into()));
    }
    let occ = Occupation::from_model(model);
    radii
        .iter()
        .map(|&r| {
            let config = reference.realize(r)?;
            let l = config.require_index(site)?;
            let spec = spectral::eig(&model::assemble(model, &config))?;
            let band = spectral::site_energies(&spec, &occ)[l];
            Ok((r, band + model::pair_energy_site(model, &config, l)))
        })
        .collect()
}

/// `ln |E_{k+1} - E_k|` against the larger radius of each step.
pub fn tdlimit_difference_fit(sequence: &[(f64, f64)]) -> Result<(Vec<(f64, f64)>, LineFit)> {
    let diffs: Vec<(f64, f64)> = sequence.windows(2).map(|w| (w[1].0, (w[1].1 - w[0].1).abs())).collect();
    let logs: Vec<(f64, f64)> = diffs.iter().filter(|p| p.1 > 0.0).map(|&(r, v)| (r, v.ln())).collect();
    if logs.len() < 3 {
        return Err(Error::Fit(format!("{} nonzero differences, need 3", logs.len())));
    }
    Ok((diffs, fit_line(&logs)?))
}

/// Buffer widths for the free radii 3, 4, 6, 8, 11. Set 1 follows
/// `1 + ln R`; sets 2 and 3 use smaller buffers.
pub fn buffer_schedule(set: u8) -> Result<Vec<(f64, f64)>> {
    let radii = [3.0, 4.0, 6.0, 8.0, 11.0];
    let buffers: [f64; 5] = match set {
        1 => [2.1, 2.4, 2.8, 3.0, 3.4],
        2 => [1.0, 1.7, 1.7, 2.0, 2.0],
        3 => [1.0, 1.0, 1.7, 1.7, 2.0],
        _ => return Err(Error::Invalid(format!("unknown schedule set {set}"))),
    };
    Ok(radii.into_iter().zip(buffers).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyRow {
    pub radius: f64,
    pub buffer: f64,
    pub geom_err: f64,
    pub energy_err: f64,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<StudyRow>,
    pub reference_radius: f64,
    pub reference_buffer: f64,
    pub reference_energy: f64,
    pub reference_converged: bool,
    /// Log-log slope of the geometry error; absent with fewer than two converged rows.
    pub geom_slope: Option<LineFit>,
    pub energy_slope: Option<LineFit>,
}

/// Relaxed reference solution, reused across schedules.
#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub radius: f64,
    pub buffer: f64,
    pub result: RelaxResult,
}

/// Relaxes the reference problem, warm-started from `start` when given.
pub fn solve_reference(
    reference: &DefectReference,
    model: &TbModel,
    size: (f64, f64),
    start: Option<&DisplacementField>,
    opts: &RelaxOptions,
) -> Result<ReferenceSolution> {
    let prob = TruncatedProblem::new(reference.clone(), size.0, size.1, model.clone())?;
    let init = match start {
        Some(u) => {
            let ext = u.extend_to(prob.config())?;
            // clamp anything that falls outside the free disk
            let mut values = ext.values().to_vec();
            let d = prob.config().dim();
            for (i, &free) in prob.free().iter().enumerate() {
                if !free {
                    values[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            DisplacementField::from_values(prob.config().clone(), values, prob.free().to_vec())?
        }
        None => prob.zero_field(),
    };
    let result = relax_from(&prob, &init, opts)?;
    Ok(ReferenceSolution {
        radius: size.0,
        buffer: size.1,
        result,
    })
}

/// Relaxes every schedule entry independently from `u = 0`.
pub fn relax_schedule(reference: &DefectReference, model: &TbModel, schedule: &[(f64, f64)], opts: &RelaxOptions) -> Result<Vec<RelaxResult>> {
    schedule
        .iter()
        .map(|&(r, b)| relax(&TruncatedProblem::new(reference.clone(), r, b, model.clone())?, opts))
        .collect()
}

/// Compares schedule solutions against a reference solution:
/// `‖D(u_R - u_ref)‖` over the reference realization with `u_R` extended by
/// zero, and `|E_ref - E_R|`.
pub fn compare_to_reference(
    schedule: &[(f64, f64)],
    solutions: &[RelaxResult],
    reference: &ReferenceSolution,
    norm_spec: &StencilNormSpec,
) -> Result<ConvergenceStudy> {
    if schedule.is_empty() {
        return Err(Error::Invalid("empty schedule".into()));
    }
    if schedule.len() != solutions.len() {
        return Err(Error::Invalid("one solution per schedule entry expected".into()));
    }
    let u_ref = &reference.result.displacement;
    let ref_config = u_ref.reference();
    let ref_full = u_ref.extend_to(ref_config)?;
    let mut rows = Vec::with_capacity(schedule.len());
    for (&(radius, buffer), sol) in schedule.iter().zip(solutions) {
        let ext = sol.displacement.extend_to(ref_config)?;
        let geom_err = stencil_norm(&ext.difference(&ref_full)?, norm_spec)?;
        rows.push(StudyRow {
            radius,
            buffer,
            geom_err,
            energy_err: (reference.result.energy - sol.energy).abs(),
            energy: sol.energy,
            iterations: sol.iterations,
            converged: sol.converged,
        });
    }
    let ok: Vec<&StudyRow> = rows.iter().filter(|r| r.converged).collect();
    let slope = |pick: fn(&StudyRow) -> f64| -> Option<LineFit> {
        if ok.len() < 2 {
            return None;
        }
        fit_power_law(&ok.iter().map(|r| (r.radius, pick(r))).collect::<Vec<_>>()).ok()
    };
    Ok(ConvergenceStudy {
        geom_slope: slope(|r| r.geom_err),
        energy_slope: slope(|r| r.energy_err),
        rows,
        reference_radius: reference.radius,
        reference_buffer: reference.buffer,
        reference_energy: reference.result.energy,
        reference_converged: reference.result.converged,
    })
}

/// Relaxes each `(R, Rbuf)` and a larger reference problem, and fits the
/// error decay against `R`. The reference is warm-started from the largest
/// schedule solution.
pub fn convergence_study(
    reference: &DefectReference,
    model: &TbModel,
    schedule: &[(f64, f64)],
    reference_size: (f64, f64),
    norm_spec: &StencilNormSpec,
    opts: &RelaxOptions,
) -> Result<ConvergenceStudy> {
    if schedule.is_empty() {
        return Err(Error::Invalid("empty schedule".into()));
    }
    let max_r = schedule.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if !(reference_size.0 > max_r) {
        return Err(Error::Invalid(format!(
            "reference radius {} must exceed the largest schedule radius {max_r}",
            reference_size.0
        )));
    }
    let solutions = relax_schedule(reference, model, schedule, opts)?;
    let largest = schedule
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(k, _)| &solutions[k].displacement);
    let reference_solution = solve_reference(reference, model, reference_size, largest, opts)?;
    compare_to_reference(schedule, &solutions, &reference_solution, norm_spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realize_counts_sites() {
        let perfect = DefectReference::perfect(Lattice::triangular(1.0));
        let dv = DefectReference::divacancy(1.0);
        for r in [0.5, 1.0, 3.0, 7.5] {
            let a = perfect.realize(r).unwrap();
            let b = dv.realize(r);
            let missing = dv.removed.iter().filter(|id| a.index_of(id).is_some()).count();
            match b {
                Ok(b) => assert_eq!(b.len(), a.len() - missing),
                Err(_) => assert_eq!(missing, a.len()),
            }
        }
    }

    #[test]
    fn removed_sites_must_lie_in_core() {
        assert!(DefectReference::new(Lattice::triangular(1.0), vec![SiteId::from([3, 0])], 2.0).is_err());
        assert!(DefectReference::new(Lattice::triangular(1.0), vec![SiteId::from([1, 0])], 2.0).is_ok());
    }

    #[test]
    fn zero_displacement_has_zero_energy() {
        let prob = TruncatedProblem::new(DefectReference::divacancy(1.0), 3.0, 2.1, TbModel::default()).unwrap();
        assert_eq!(prob.energy(&prob.zero_field()).unwrap(), 0.0);
        assert_eq!(prob.gradient(&prob.zero_field()).unwrap().len(), prob.n_free() * 2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prob = TruncatedProblem::new(DefectReference::divacancy(1.0), 2.0, 1.5, TbModel::default()).unwrap();
        let n = prob.n_free() * 2;
        let dofs: Vec<f64> = (0..n).map(|k| 0.02 * ((k as f64) * 1.7).sin()).collect();
        let u = prob.zero_field().with_free_dofs(&dofs);
        let g = prob.gradient(&u).unwrap();
        let h = 1e-5;
        for k in 0..n {
            let mut p = dofs.clone();
            p[k] += h;
            let mut m = dofs.clone();
            m[k] -= h;
            let fd = (prob.energy(&u.with_free_dofs(&p)).unwrap() - prob.energy(&u.with_free_dofs(&m)).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-2), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn relaxation_lowers_energy_monotonically() {
        let prob = TruncatedProblem::new(DefectReference::divacancy(1.0), 3.0, 2.1, TbModel::default()).unwrap();
        let res = relax(&prob, &RelaxOptions::default()).unwrap();
        assert!(res.converged, "|g| = {}", res.grad_norm);
        assert!(res.energy < 0.0);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        let d = prob.config().dim();
        for (i, &free) in prob.free().iter().enumerate() {
            if !free {
                assert!(res.displacement.values()[i * d..(i + 1) * d].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(buffer_schedule(1).unwrap()[4], (11.0, 3.4));
        assert!(buffer_schedule(4).is_err());
        // set 1 tracks 1 + ln R to one decimal
        for (r, b) in buffer_schedule(1).unwrap() {
            assert!((b - (1.0 + r.ln())).abs() < 0.1, "{r} {b}");
        }
    }
}
