//! Two-centre tight-binding model: hopping function, Hamiltonian assembly and
//! configuration derivatives, spectral bounds, pair energy and Löwdin
//! orthogonalization.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Configuration, NeighborList};

/// Repulsive pair potential `U(r)`, identically zero beyond `rcut`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairPotential {
    /// `U(r) = value` for `r < rcut`.
    Constant { value: f64, rcut: f64 },
    /// `U(r) = prefactor * exp(-decay * r)` for `r < rcut`.
    Exponential { prefactor: f64, decay: f64, rcut: f64 },
}

impl PairPotential {
    pub fn rcut(&self) -> f64 {
        match *self {
            PairPotential::Constant { rcut, .. } | PairPotential::Exponential { rcut, .. } => rcut,
        }
    }

    /// `(U, U', U'')` at distance `r`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        if r >= self.rcut() {
            return (0.0, 0.0, 0.0);
        }
        match *self {
            PairPotential::Constant { value, .. } => (value, 0.0, 0.0),
            PairPotential::Exponential { prefactor, decay, .. } => {
                let u = prefactor * (-decay * r).exp();
                (u, -decay * u, decay * decay * u)
            }
        }
    }
}

/// Model parameters. Defaults: `alpha = 2`, `r0 = 1`, `rcut = 2.8`,
/// on-site `0`, `mu = onsite`, `kT = 0.1`, no pair potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TbModel {
    pub alpha: f64,
    pub r0: f64,
    pub rcut: f64,
    pub onsite: f64,
    pub mu: f64,
    #[serde(rename = "kT")]
    pub kt: f64,
    pub pair_potential: Option<PairPotential>,
}

impl Default for TbModel {
    fn default() -> Self {
        TbModel {
            alpha: 2.0,
            r0: 1.0,
            rcut: 2.8,
            onsite: 0.0,
            mu: 0.0,
            kt: 0.1,
            pair_potential: None,
        }
    }
}

impl TbModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.kt > 0.0) {
            return Err(Error::Invalid(format!("kT must be positive, got {}", self.kt)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.r0 > 0.0 && self.rcut > self.r0) {
            return Err(Error::Invalid(format!(
                "need rcut > r0 > 0, got r0 = {}, rcut = {}",
                self.r0, self.rcut
            )));
        }
        if !self.onsite.is_finite() || !self.mu.is_finite() {
            return Err(Error::Invalid("onsite and mu must be finite".into()));
        }
        Ok(())
    }

    /// Largest interaction range (hopping or pair potential).
    pub fn interaction_range(&self) -> f64 {
        self.pair_potential
            .as_ref()
            .map_or(self.rcut, |p| p.rcut().max(self.rcut))
    }

    /// `(h, h', h'')` at distance `r`.
    ///
    /// `h(r) = (exp(-2a(r - r0)) - 2 exp(-a(r - r0))) * fcut(r)` with the smooth
    /// cutoff `fcut(r) = 1 / (1 + exp(1 / (rcut - r)))`, which vanishes with all
    /// derivatives as `r -> rcut`.
    pub fn hop_all(&self, r: f64) -> (f64, f64, f64) {
        if r >= self.rcut {
            return (0.0, 0.0, 0.0);
        }
        let a = self.alpha;
        let x = r - self.r0;
        let e1 = (-a * x).exp();
        let e2 = e1 * e1;
        let g = e2 - 2.0 * e1;
        let g1 = -2.0 * a * e2 + 2.0 * a * e1;
        let g2 = 4.0 * a * a * e2 - 2.0 * a * a * e1;

        let t = self.rcut - r;
        let phi = 1.0 / t;
        let phi1 = phi * phi;
        let phi2 = 2.0 * phi * phi * phi;
        // c = 1 / (1 + e^phi), evaluated without overflow for large phi
        let em = (-phi).exp();
        let c = em / (1.0 + em);
        let one_minus_c = 1.0 / (1.0 + em);
        let c1 = -c * one_minus_c * phi1;
        let c2 = -(c1 * (1.0 - 2.0 * c) * phi1 + c * one_minus_c * phi2);

        (g * c, g1 * c + g * c1, g2 * c + 2.0 * g1 * c1 + g * c2)
    }

    pub fn hop(&self, r: f64) -> f64 {
        self.hop_all(r).0
    }

    pub fn hop_d1(&self, r: f64) -> f64 {
        self.hop_all(r).1
    }

    pub fn hop_d2(&self, r: f64) -> f64 {
        self.hop_all(r).2
    }

    /// Gradient `d h(|y_l - y_k|) / d y_l` for displacement `delta = y_l - y_k`.
    pub fn hop_gradient(&self, r: f64, delta: &[f64]) -> Vec<f64> {
        let h1 = self.hop_d1(r);
        delta.iter().map(|x| h1 * x / r).collect()
    }

    /// Hessian of `h(|delta|)` with respect to `delta` (row-major `d x d`):
    /// `h'' r̂ r̂ᵀ + (h' / r)(I - r̂ r̂ᵀ)`.
    pub fn hop_hessian(&self, r: f64, delta: &[f64]) -> Vec<f64> {
        let (_, h1, h2) = self.hop_all(r);
        radial_hessian(h1, h2, r, delta)
    }
}

pub(crate) fn radial_hessian(d1: f64, d2: f64, r: f64, delta: &[f64]) -> Vec<f64> {
    let d = delta.len();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let rr = delta[i] * delta[j] / (r * r);
            let id = if i == j { 1.0 } else { 0.0 };
            out[i * d + j] = d2 * rr + d1 / r * (id - rr);
        }
    }
    out
}

/// Dense symmetric Hamiltonian.
#[derive(Clone, Debug)]
pub struct HamiltonianMatrix {
    pub(crate) mat: Mat<f64>,
}

impl HamiltonianMatrix {
    pub fn from_mat(mat: Mat<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Invalid("Hamiltonian must be square".into()));
        }
        Ok(HamiltonianMatrix { mat })
    }

    /// Builds from a row-major `n x n` slice.
    pub fn from_row_major(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Invalid(format!("need {} entries", n * n)));
        }
        Ok(HamiltonianMatrix {
            mat: Mat::from_fn(n, n, |i, j| data[i * n + j]),
        })
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn as_mat(&self) -> &Mat<f64> {
        &self.mat
    }

    pub fn max_abs(&self) -> f64 {
        let n = self.n();
        let mut m: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                m = m.max(self.mat[(i, j)].abs());
            }
        }
        m
    }

    pub fn asymmetry(&self) -> f64 {
        let n = self.n();
        let mut m: f64 = 0.0;
        for j in 0..n {
            for i in 0..j {
                m = m.max((self.mat[(i, j)] - self.mat[(j, i)]).abs());
            }
        }
        m
    }
}

/// `H_lk = h(|y_l - y_k|)` off the diagonal, `H_ll = onsite`.
pub fn assemble(model: &TbModel, config: &Configuration) -> HamiltonianMatrix {
    let nbrs = config.neighbors(model.rcut);
    assemble_with(model, config.len(), &nbrs)
}

pub(crate) fn assemble_with(model: &TbModel, n: usize, nbrs: &NeighborList) -> HamiltonianMatrix {
    let mut mat = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        mat[(i, i)] = model.onsite;
        for nb in nbrs.of(i) {
            mat[(i, nb.j)] = model.hop(nb.r);
        }
    }
    HamiltonianMatrix { mat }
}

/// Sparse symmetric matrix given by its nonzero entries (both triangles listed).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseSym {
    pub entries: Vec<((usize, usize), f64)>,
}

impl SparseSym {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self, n: usize) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(n, n);
        for &((i, j), v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}

/// `∂H / ∂[y(m)]_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianDerivative {
    pub m: usize,
    pub i: usize,
    pub matrix: SparseSym,
}

/// First derivative of the Hamiltonian with respect to coordinate `i` of site `m`.
pub fn assemble_derivative(model: &TbModel, config: &Configuration, m: usize, i: usize) -> Result<HamiltonianDerivative> {
    check_site(config, m, i)?;
    let nbrs = config.neighbors(model.rcut);
    Ok(HamiltonianDerivative {
        m,
        i,
        matrix: derivative_with(model, &nbrs, m, i),
    })
}

pub(crate) fn derivative_with(model: &TbModel, nbrs: &NeighborList, m: usize, i: usize) -> SparseSym {
    let mut entries = Vec::new();
    for nb in nbrs.of(m) {
        let v = model.hop_d1(nb.r) * nb.delta[i] / nb.r;
        if v != 0.0 {
            entries.push(((m, nb.j), v));
            entries.push(((nb.j, m), v));
        }
    }
    SparseSym { entries }
}

/// `∂²H / ∂[y(m)]_i ∂[y(n)]_j`.
pub fn assemble_second_derivative(
    model: &TbModel,
    config: &Configuration,
    m: usize,
    i: usize,
    n: usize,
    j: usize,
) -> Result<SparseSym> {
    check_site(config, m, i)?;
    check_site(config, n, j)?;
    let nbrs = config.neighbors(model.rcut);
    Ok(second_derivative_with(model, &nbrs, m, i, n, j))
}

pub(crate) fn second_derivative_with(
    model: &TbModel,
    nbrs: &NeighborList,
    m: usize,
    i: usize,
    n: usize,
    j: usize,
) -> SparseSym {
    let mut entries = Vec::new();
    if m == n {
        for nb in nbrs.of(m) {
            let hess = model.hop_hessian(nb.r, &nb.delta);
            let d = nb.delta.len();
            let v = hess[i * d + j];
            if v != 0.0 {
                entries.push(((m, nb.j), v));
                entries.push(((nb.j, m), v));
            }
        }
    } else if let Some(nb) = nbrs.are_neighbors(m, n) {
        let hess = model.hop_hessian(nb.r, &nb.delta);
        let d = nb.delta.len();
        let v = -hess[i * d + j];
        if v != 0.0 {
            entries.push(((m, n), v));
            entries.push(((n, m), v));
        }
    }
    SparseSym { entries }
}

fn check_site(config: &Configuration, m: usize, i: usize) -> Result<()> {
    if m >= config.len() || i >= config.dim() {
        return Err(Error::Invalid(format!(
            "site index {m} / coordinate {i} out of range for {} sites in {} dimensions",
            config.len(),
            config.dim()
        )));
    }
    Ok(())
}

/// Closed real interval containing a spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralInterval {
    pub lo: f64,
    pub hi: f64,
}

impl SpectralInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }
}

/// Geršgorin bounds `[min(H_ll - Σ|H_lk|), max(H_ll + Σ|H_lk|)]`.
pub fn gershgorin(h: &HamiltonianMatrix) -> SpectralInterval {
    let n = h.n();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for l in 0..n {
        let radius: f64 = (0..n).filter(|&k| k != l).map(|k| h.get(l, k).abs()).sum();
        lo = lo.min(h.get(l, l) - radius);
        hi = hi.max(h.get(l, l) + radius);
    }
    SpectralInterval { lo, hi }
}

/// `½ Σ_{k≠l} U(|y_l - y_k|)`; zero without a pair potential.
pub fn pair_energy_site(model: &TbModel, config: &Configuration, l: usize) -> f64 {
    let Some(pair) = &model.pair_potential else {
        return 0.0;
    };
    (0..config.len())
        .filter(|&k| k != l)
        .map(|k| 0.5 * pair.eval(config.distance(l, k)).0)
        .sum()
}

pub fn pair_energies(model: &TbModel, config: &Configuration) -> Vec<f64> {
    (0..config.len()).map(|l| pair_energy_site(model, config, l)).collect()
}

/// Gradient of the total pair energy, flat `(site, coord)` layout.
pub(crate) fn pair_gradient(model: &TbModel, config: &Configuration) -> Vec<f64> {
    let d = config.dim();
    let mut grad = vec![0.0; config.len() * d];
    let Some(pair) = &model.pair_potential else {
        return grad;
    };
    let nbrs = config.neighbors(pair.rcut());
    for m in 0..config.len() {
        for nb in nbrs.of(m) {
            let du = pair.eval(nb.r).1;
            for i in 0..d {
                grad[m * d + i] += du * nb.delta[i] / nb.r;
            }
        }
    }
    grad
}

/// Symmetric eigendecomposition helper: ascending eigenvalues and eigenvectors.
pub(crate) fn sym_eigen(mat: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = mat
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let values = (0..mat.nrows()).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

/// `V diag(g(λ)) Vᵀ` for a symmetric matrix.
pub(crate) fn sym_function(values: &[f64], vectors: &Mat<f64>, g: impl Fn(f64) -> f64) -> Mat<f64> {
    let n = values.len();
    let scaled = Mat::from_fn(n, n, |i, s| vectors[(i, s)] * g(values[s]));
    &scaled * vectors.transpose()
}

/// Smallest eigenvalue allowed for an overlap matrix.
pub const OVERLAP_SPD_FLOOR: f64 = 1e-10;

/// `M^{1/2}` and `M^{-1/2}` of a symmetric positive definite overlap.
pub fn overlap_roots(overlap: &Mat<f64>) -> Result<(Mat<f64>, Mat<f64>)> {
    if overlap.nrows() != overlap.ncols() {
        return Err(Error::Invalid("overlap must be square".into()));
    }
    let (values, vectors) = sym_eigen(overlap)?;
    let min = values.first().copied().unwrap_or(1.0);
    if min <= OVERLAP_SPD_FLOOR {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok((
        sym_function(&values, &vectors, f64::sqrt),
        sym_function(&values, &vectors, |x| 1.0 / x.sqrt()),
    ))
}

/// `M^{-1/2} H M^{-1/2}`.
pub fn lowdin_orthogonalize(h: &HamiltonianMatrix, overlap: &Mat<f64>) -> Result<HamiltonianMatrix> {
    if overlap.nrows() != h.n() {
        return Err(Error::Invalid("overlap and Hamiltonian sizes differ".into()));
    }
    let (_, inv_sqrt) = overlap_roots(overlap)?;
    let mut out = &(&inv_sqrt * &h.mat) * &inv_sqrt;
    symmetrize(&mut out);
    Ok(HamiltonianMatrix { mat: out })
}

pub(crate) fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_isometry, build_lattice_disk, perturb, Lattice};

    fn dimer(r: f64) -> Configuration {
        Configuration::from_points_2d(&[[0.0, 0.0], [r, 0.0]]).unwrap()
    }

    #[test]
    fn hop_vanishes_at_and_beyond_cutoff() {
        let m = TbModel::default();
        assert_eq!(m.hop(2.8), 0.0);
        assert_eq!(m.hop(3.5), 0.0);
        assert_eq!(m.hop_d1(2.8), 0.0);
        // smooth approach from below
        assert!(m.hop(2.8 - 1e-3).abs() < 1e-300);
        assert!(m.hop_d1(2.79).abs() < 1e-30);
    }

    #[test]
    fn hop_at_equilibrium_length() {
        // h(r0) = -fcut(r0) = -1 / (1 + e^{1/1.8})
        let m = TbModel::default();
        let expected = -1.0 / (1.0 + (1.0f64 / 1.8).exp());
        assert!((m.hop(1.0) - expected).abs() < 1e-15);
        assert!((m.hop(1.0) + 0.364_58).abs() < 1e-4);
    }

    #[test]
    fn hop_derivatives_match_finite_differences() {
        let m = TbModel::default();
        for &r in &[0.7, 1.0, 1.3, 1.9, 2.5] {
            let step = 1e-6;
            let fd1 = (m.hop(r + step) - m.hop(r - step)) / (2.0 * step);
            let fd2 = (m.hop_d1(r + step) - m.hop_d1(r - step)) / (2.0 * step);
            assert!((m.hop_d1(r) - fd1).abs() <= 1e-7 * m.hop_d1(r).abs(), "r = {r}");
            assert!((m.hop_d2(r) - fd2).abs() <= 1e-6 * m.hop_d2(r).abs().max(1e-3), "r = {r}");
        }
    }

    #[test]
    fn dimer_hamiltonian() {
        let model = TbModel { onsite: 0.3, ..TbModel::default() };
        let h = assemble(&model, &dimer(1.0));
        let t = model.hop(1.0);
        assert_eq!(h.get(0, 0), 0.3);
        assert_eq!(h.get(1, 1), 0.3);
        assert_eq!(h.get(0, 1), t);
        assert_eq!(h.get(1, 0), t);

        let far = assemble(&model, &dimer(3.0));
        assert_eq!(far.get(0, 1), 0.0);
        assert_eq!(gershgorin(&far), SpectralInterval { lo: 0.3, hi: 0.3 });
        let g = gershgorin(&h);
        assert!((g.lo - (0.3 - t.abs())).abs() < 1e-15);
        assert!((g.hi - (0.3 + t.abs())).abs() < 1e-15);
    }

    #[test]
    fn dimer_derivative_entries() {
        let model = TbModel::default();
        let c = dimer(1.0);
        let d = assemble_derivative(&model, &c, 0, 0).unwrap();
        let h1 = model.hop_d1(1.0);
        // y_0 - y_1 = (-1, 0)
        assert_eq!(d.matrix.entries.len(), 2);
        for &((a, b), v) in &d.matrix.entries {
            assert!(a != b);
            assert!((v + h1).abs() < 1e-15);
        }
        let iso = Configuration::from_points_2d(&[[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]]).unwrap();
        assert!(assemble_derivative(&model, &iso, 2, 1).unwrap().matrix.is_empty());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let model = TbModel::default();
        let base = build_lattice_disk(&Lattice::triangular(1.0), 2.2, &[0.0, 0.0]).unwrap();
        let c = perturb(&base, 0.1, 3).unwrap();
        let n = c.len();
        let step = 1e-5;
        for &(m, i) in &[(0usize, 0usize), (3, 1), (n - 1, 0)] {
            let d = assemble_derivative(&model, &c, m, i).unwrap().matrix.to_dense(n);
            let shifted = |s: f64| {
                let mut p = c.positions().to_vec();
                p[m * 2 + i] += s;
                assemble(&model, &c.with_positions(p).unwrap())
            };
            let (hp, hm) = (shifted(step), shifted(-step));
            for a in 0..n {
                for b in 0..n {
                    let fd = (hp.get(a, b) - hm.get(a, b)) / (2.0 * step);
                    let exact = d[(a, b)];
                    assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-4), "({a},{b}): {fd} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn second_derivative_matches_fd_and_is_symmetric() {
        let model = TbModel::default();
        let c = Configuration::from_points_2d(&[[0.0, 0.0], [1.1, 0.2], [0.3, 1.3]]).unwrap();
        let n = c.len();
        let step = 1e-5;
        for &(m, i, nn, j) in &[(0, 0, 0, 0), (0, 0, 0, 1), (0, 1, 1, 0), (1, 1, 2, 0)] {
            let exact = assemble_second_derivative(&model, &c, m, i, nn, j).unwrap().to_dense(n);
            let swapped = assemble_second_derivative(&model, &c, nn, j, m, i).unwrap().to_dense(n);
            let shifted = |s: f64| {
                let mut p = c.positions().to_vec();
                p[nn * 2 + j] += s;
                let cc = c.with_positions(p).unwrap();
                assemble_derivative(&model, &cc, m, i).unwrap().matrix.to_dense(n)
            };
            let (dp, dm) = (shifted(step), shifted(-step));
            for a in 0..n {
                for b in 0..n {
                    let fd = (dp[(a, b)] - dm[(a, b)]) / (2.0 * step);
                    assert!((fd - exact[(a, b)]).abs() <= 1e-6 * exact[(a, b)].abs().max(1e-3));
                    assert!((swapped[(a, b)] - exact[(a, b)]).abs() < 1e-14);
                    assert!((exact[(a, b)] - exact[(b, a)]).abs() < 1e-14);
                }
            }
        }
        let far = Configuration::from_points_2d(&[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]]).unwrap();
        assert!(assemble_second_derivative(&model, &far, 0, 0, 1, 1).unwrap().is_empty());
    }

    #[test]
    fn translation_derivatives_sum_to_zero() {
        let model = TbModel::default();
        let c = perturb(&build_lattice_disk(&Lattice::triangular(1.0), 2.0, &[0.0, 0.0]).unwrap(), 0.1, 9).unwrap();
        let n = c.len();
        for i in 0..2 {
            let mut total = Mat::<f64>::zeros(n, n);
            for m in 0..n {
                total += assemble_derivative(&model, &c, m, i).unwrap().matrix.to_dense(n);
            }
            for a in 0..n {
                for b in 0..n {
                    assert!(total[(a, b)].abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn assembly_isometry_invariant() {
        let model = TbModel::default();
        let c = perturb(&build_lattice_disk(&Lattice::triangular(1.0), 3.0, &[0.0, 0.0]).unwrap(), 0.1, 1).unwrap();
        let th: f64 = 0.7;
        let g = apply_isometry(&c, &[th.cos(), -th.sin(), th.sin(), th.cos()], &[1.5, -0.25]).unwrap();
        let (h, hg) = (assemble(&model, &c), assemble(&model, &g));
        for a in 0..c.len() {
            for b in 0..c.len() {
                assert!((h.get(a, b) - hg.get(a, b)).abs() < 1e-12);
            }
        }
        assert_eq!(h.asymmetry(), 0.0);
    }

    #[test]
    fn pair_energy_conventions() {
        let model = TbModel::default();
        let c = dimer(1.0);
        assert_eq!(pair_energy_site(&model, &c, 0), 0.0);
        let constant = TbModel {
            pair_potential: Some(PairPotential::Constant { value: 0.8, rcut: 2.8 }),
            ..TbModel::default()
        };
        assert_eq!(pair_energy_site(&constant, &c, 0), 0.4);
        assert_eq!(pair_energy_site(&constant, &c, 1), 0.4);
    }

    #[test]
    fn pair_energy_sum_matches_double_sum() {
        let model = TbModel {
            pair_potential: Some(PairPotential::Exponential { prefactor: 1.0, decay: 1.0, rcut: f64::INFINITY }),
            ..TbModel::default()
        };
        let pts = [[0.0, 0.0], [1.2, 0.1], [0.4, 1.1], [2.0, 1.9], [-0.7, 0.9]];
        let c = Configuration::from_points_2d(&pts).unwrap();
        let total: f64 = pair_energies(&model, &c).iter().sum();
        let mut direct = 0.0;
        for a in 0..5 {
            for b in (a + 1)..5 {
                let dx = pts[a][0] - pts[b][0];
                let dy = pts[a][1] - pts[b][1];
                direct += (-(dx * dx + dy * dy).sqrt()).exp();
            }
        }
        assert!((total - direct).abs() < 1e-14);
    }

    #[test]
    fn lowdin_identity_and_scalar() {
        let model = TbModel::default();
        let c = perturb(&build_lattice_disk(&Lattice::triangular(1.0), 1.5, &[0.0, 0.0]).unwrap(), 0.1, 2).unwrap();
        let h = assemble(&model, &c);
        let n = h.n();
        let id = Mat::<f64>::identity(n, n);
        let same = lowdin_orthogonalize(&h, &id).unwrap();
        let four = lowdin_orthogonalize(&h, &(&id * faer::Scale(4.0))).unwrap();
        for a in 0..n {
            for b in 0..n {
                assert!((same.get(a, b) - h.get(a, b)).abs() < 1e-14);
                assert!((four.get(a, b) - h.get(a, b) / 4.0).abs() < 1e-14);
            }
        }
        let mut singular = id.clone();
        singular[(0, 0)] = 0.0;
        assert!(matches!(lowdin_orthogonalize(&h, &singular), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn model_json_keys() {
        let m: TbModel =
            serde_json::from_str(r#"{"alpha":2.0,"r0":1.0,"rcut":2.8,"onsite":0.0,"mu":0.0,"kT":0.1}"#).unwrap();
        assert_eq!(m, TbModel::default());
        assert!(TbModel { kt: 0.0, ..TbModel::default() }.validate().is_err());
        assert!(TbModel { rcut: 0.5, ..TbModel::default() }.validate().is_err());
    }
}
