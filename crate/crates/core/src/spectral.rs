//! Eigendecomposition route: occupations, band energy, density matrix, site
//! energies (including the overlap-modified variant) and the
//! Hellmann–Feynman total gradient.

use faer::{c64, Mat};

use crate::error::{Error, Result};
use crate::geometry::{Configuration, NeighborList};
use crate::model::{self, overlap_roots, sym_eigen, HamiltonianMatrix, TbModel};

/// Eigenpairs of a symmetric Hamiltonian, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub values: Vec<f64>,
    /// Column `s` is the eigenvector of `values[s]`.
    pub vectors: Mat<f64>,
}

impl SpectralData {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Component `l` of eigenvector `s`.
    pub fn component(&self, l: usize, s: usize) -> f64 {
        self.vectors[(l, s)]
    }
}

/// Fermi–Dirac occupation `f(e) = 1 / (1 + exp((e - mu) / kT))` and the
/// energy weight `F(e) = e f(e)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occupation {
    pub mu: f64,
    pub kt: f64,
}

impl Occupation {
    pub fn new(mu: f64, kt: f64) -> Result<Self> {
        if !(kt > 0.0) {
            return Err(Error::Invalid(format!("kT must be positive, got {kt}")));
        }
        Ok(Occupation { mu, kt })
    }

    pub fn from_model(model: &TbModel) -> Self {
        Occupation {
            mu: model.mu,
            kt: model.kt,
        }
    }

    pub fn fermi(&self, e: f64) -> f64 {
        let x = (e - self.mu) / self.kt;
        if x > 0.0 {
            let t = (-x).exp();
            t / (1.0 + t)
        } else {
            1.0 / (1.0 + x.exp())
        }
    }

    /// `F(e) = e f(e)`.
    pub fn energy_weight(&self, e: f64) -> f64 {
        e * self.fermi(e)
    }

    /// `F'(e) = f(e) + e f'(e)`, with `f' = -f (1 - f) / kT`.
    pub fn energy_weight_d1(&self, e: f64) -> f64 {
        let f = self.fermi(e);
        let x = (e - self.mu) / self.kt;
        let one_minus = if x > 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) };
        f - e * f * one_minus / self.kt
    }

    pub fn fermi_complex(&self, z: c64) -> c64 {
        let x = (z - c64::new(self.mu, 0.0)) / self.kt;
        if x.re > 0.0 {
            let t = (-x).exp();
            t / (c64::new(1.0, 0.0) + t)
        } else {
            c64::new(1.0, 0.0) / (c64::new(1.0, 0.0) + x.exp())
        }
    }

    pub fn energy_weight_complex(&self, z: c64) -> c64 {
        z * self.fermi_complex(z)
    }

    /// Poles of `f`: `mu ± iπ(2k+1)kT`, upper half plane, `k < count`.
    pub fn upper_poles(&self, count: usize) -> Vec<c64> {
        (0..count)
            .map(|k| c64::new(self.mu, std::f64::consts::PI * (2 * k + 1) as f64 * self.kt))
            .collect()
    }
}

/// Full symmetric eigendecomposition.
pub fn eig(h: &HamiltonianMatrix) -> Result<SpectralData> {
    if h.n() == 0 {
        return Err(Error::Empty("Hamiltonian has no rows".into()));
    }
    let (values, vectors) = sym_eigen(&h.mat)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    Ok(SpectralData { values, vectors })
}

/// Eigenvalues only.
pub fn eigenvalues(h: &HamiltonianMatrix) -> Result<Vec<f64>> {
    h.mat
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))
}

/// `Σ_s F(ε_s)`.
pub fn band_energy(spec: &SpectralData, occ: &Occupation) -> f64 {
    band_energy_from_values(&spec.values, occ)
}

pub fn band_energy_from_values(values: &[f64], occ: &Occupation) -> f64 {
    values.iter().map(|&e| occ.energy_weight(e)).sum()
}

/// `Γ = Σ_s f(ε_s) ψ_s ψ_sᵀ`.
pub fn density_matrix(spec: &SpectralData, occ: &Occupation) -> Mat<f64> {
    let mut g = model::sym_function(&spec.values, &spec.vectors, |e| occ.fermi(e));
    model::symmetrize(&mut g);
    g
}

/// `F(H) = Σ_s F(ε_s) ψ_s ψ_sᵀ`.
pub fn energy_matrix(spec: &SpectralData, occ: &Occupation) -> Mat<f64> {
    let mut g = model::sym_function(&spec.values, &spec.vectors, |e| occ.energy_weight(e));
    model::symmetrize(&mut g);
    g
}

/// `E_l = Σ_s F(ε_s) [ψ_s]_l²`.
pub fn site_energies(spec: &SpectralData, occ: &Occupation) -> Vec<f64> {
    let n = spec.n();
    let weights: Vec<f64> = spec.values.iter().map(|&e| occ.energy_weight(e)).collect();
    (0..n)
        .map(|l| {
            (0..n)
                .map(|s| {
                    let c = spec.vectors[(l, s)];
                    weights[s] * c * c
                })
                .sum()
        })
        .collect()
}

/// Solution of `H ψ = ε M ψ` via Löwdin reduction.
#[derive(Clone, Debug)]
pub struct GeneralizedSpectrum {
    /// Spectral data of `M^{-1/2} H M^{-1/2}`.
    pub reduced: SpectralData,
    /// `M`-orthonormal generalized eigenvectors `ψ_s = M^{-1/2} φ_s`.
    pub vectors: Mat<f64>,
}

pub fn generalized_eig(h: &HamiltonianMatrix, overlap: &Mat<f64>) -> Result<GeneralizedSpectrum> {
    let reduced_h = model::lowdin_orthogonalize(h, overlap)?;
    let reduced = eig(&reduced_h)?;
    let (_, inv_sqrt) = overlap_roots(overlap)?;
    let vectors = &inv_sqrt * &reduced.vectors;
    Ok(GeneralizedSpectrum { reduced, vectors })
}

/// Overlap-modified site energies `Ẽ_l = Σ_s F(ε_s) [Mψ_s]_l [ψ_s]_l`, where
/// `spec` holds the eigenpairs of the Löwdin-reduced Hamiltonian.
pub fn site_energies_overlap(spec: &SpectralData, occ: &Occupation, overlap: &Mat<f64>) -> Result<Vec<f64>> {
    let n = spec.n();
    if overlap.nrows() != n || overlap.ncols() != n {
        return Err(Error::Invalid("overlap size does not match the spectrum".into()));
    }
    let (sqrt, inv_sqrt) = overlap_roots(overlap)?;
    // Mψ_s = M^{1/2} φ_s and ψ_s = M^{-1/2} φ_s
    let m_psi = &sqrt * &spec.vectors;
    let psi = &inv_sqrt * &spec.vectors;
    Ok((0..n)
        .map(|l| {
            (0..n)
                .map(|s| occ.energy_weight(spec.values[s]) * m_psi[(l, s)] * psi[(l, s)])
                .sum()
        })
        .collect())
}

/// Row-major copy of the eigenvector matrix, so `rows[l*n..][..n]` holds `[ψ_s]_l` over `s`.
fn rows_of(spec: &SpectralData) -> Vec<f64> {
    let n = spec.n();
    let mut rows = vec![0.0; n * n];
    for s in 0..n {
        for l in 0..n {
            rows[l * n + s] = spec.vectors[(l, s)];
        }
    }
    rows
}

/// Hellmann–Feynman gradient of the band energy (plus pair energy, when the
/// model has one) in flat `(site, coord)` layout:
/// `∂E/∂[y(m)]_i = Σ_s F'(ε_s) ψ_sᵀ H_{,m,i} ψ_s`.
pub fn total_gradient_hf(model: &TbModel, config: &Configuration, spec: &SpectralData, occ: &Occupation) -> Vec<f64> {
    let nbrs = config.neighbors(model.rcut);
    let mut grad = band_gradient_with(model, config.dim(), &nbrs, spec, occ);
    for (g, p) in grad.iter_mut().zip(model::pair_gradient(model, config)) {
        *g += p;
    }
    grad
}

pub(crate) fn band_gradient_with(
    model: &TbModel,
    dim: usize,
    nbrs: &NeighborList,
    spec: &SpectralData,
    occ: &Occupation,
) -> Vec<f64> {
    let n = spec.n();
    let rows = rows_of(spec);
    let weights: Vec<f64> = spec.values.iter().map(|&e| occ.energy_weight_d1(e)).collect();
    let mut grad = vec![0.0; n * dim];
    for m in 0..n {
        let rm = &rows[m * n..(m + 1) * n];
        for nb in nbrs.of(m) {
            let rk = &rows[nb.j * n..(nb.j + 1) * n];
            // P_mk = Σ_s F'(ε_s) ψ_s(m) ψ_s(k)
            let p: f64 = rm.iter().zip(rk).zip(&weights).map(|((a, b), w)| a * b * w).sum();
            let h1 = model.hop_d1(nb.r);
            for i in 0..dim {
                grad[m * dim + i] += 2.0 * h1 * nb.delta[i] / nb.r * p;
            }
        }
    }
    grad
}
