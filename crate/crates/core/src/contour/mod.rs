//! Resolvent route: quadrature contours around the spectrum, cached
//! factorizations of `H - zI`, and site energies with their analytic first
//! and second derivatives.
//!
//! Only nodes in the upper half plane are stored. Because `H` is real, every
//! integrand `g` used here satisfies `g(z̄) = conj(g(z))`, so the closed-contour
//! sum is `2 Re Σ_k W_k g(z_k)` with `W_k = dz_k / (2πi)`.

mod elliptic;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use faer::linalg::solvers::{DenseSolveCore, PartialPivLu, Solve};
use faer::{c64, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Configuration, NeighborList};
use crate::model::{self, gershgorin, HamiltonianMatrix, SpectralInterval, TbModel};
use crate::spectral::Occupation;

pub use elliptic::{complete_k, jacobi_complex, jacobi_real};

pub const DEFAULT_NODES: usize = 64;

/// Default distance the contour must keep from the spectrum and from the
/// Fermi poles: `min(0.01, πkT/4)`.
pub fn default_margin(kt: f64) -> f64 {
    0.01_f64.min(PI * kt / 4.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContourShape {
    /// Conformal map of an annulus onto the plane minus the spectrum and the
    /// Fermi poles. Converges geometrically with a rate that depends only
    /// logarithmically on `spectral width / kT`.
    #[default]
    Dumbbell,
    /// Flat ellipse with semi-minor axis `min(a, πkT/2)` and trapezoidal nodes.
    /// Slow when `kT` is small compared to the spectral width.
    Ellipse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourParams {
    pub shape: ContourShape,
    /// Trapezoidal points on the closed parameter curve. For both shapes the
    /// number of factorizations is `n_nodes / 2` (ellipse) or `n_nodes`
    /// (dumbbell, whose parameter curve maps onto two lobes).
    pub n_nodes: usize,
    /// Required distance from the spectrum and the poles; `None` means
    /// [`default_margin`].
    pub margin: Option<f64>,
}

impl Default for ContourParams {
    fn default() -> Self {
        ContourParams {
            shape: ContourShape::Dumbbell,
            n_nodes: DEFAULT_NODES,
            margin: None,
        }
    }
}

impl ContourParams {
    pub fn margin_for(&self, occ: &Occupation) -> f64 {
        self.margin.unwrap_or_else(|| default_margin(occ.kt))
    }
}

/// Quadrature nodes in the upper half plane with weights `dz / (2πi)`.
#[derive(Clone, Debug)]
pub struct Contour {
    pub shape: ContourShape,
    pub n_nodes: usize,
    nodes: Vec<c64>,
    weights: Vec<c64>,
    margin: f64,
}

impl Contour {
    pub fn nodes(&self) -> &[c64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[c64] {
        &self.weights
    }

    /// Realized minimum distance to the spectral interval and the Fermi poles.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// `(1/2πi)∮ g dz` for a conjugate-symmetric integrand.
    pub fn integrate(&self, g: impl Fn(c64) -> c64) -> f64 {
        let s: c64 = self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * g(z)).sum();
        2.0 * s.re
    }

    /// Every node of the closed contour, lower half included.
    pub fn full(&self) -> Vec<(c64, c64)> {
        let mut out: Vec<(c64, c64)> = self.nodes.iter().copied().zip(self.weights.iter().copied()).collect();
        // reflection reverses orientation: dz̄ = −conj(dz), so the weight is conj(W)
        out.extend(self.nodes.iter().zip(&self.weights).map(|(z, w)| (z.conj(), w.conj())));
        out
    }
}

/// Builds a contour around `interval` that avoids the poles of the Fermi
/// function by at least `margin`.
pub fn build_contour(
    interval: SpectralInterval,
    occ: &Occupation,
    margin: f64,
    n_nodes: usize,
    shape: ContourShape,
) -> Result<Contour> {
    if !(interval.lo <= interval.hi) || !interval.lo.is_finite() || !interval.hi.is_finite() {
        return Err(Error::Invalid(format!("bad spectral interval [{}, {}]", interval.lo, interval.hi)));
    }
    if !(margin > 0.0) {
        return Err(Error::Invalid(format!("margin must be positive, got {margin}")));
    }
    if n_nodes < 8 || !n_nodes.is_multiple_of(2) {
        return Err(Error::Invalid(format!("n_nodes must be even and at least 8, got {n_nodes}")));
    }
    if 2.0 * margin >= PI * occ.kt {
        return Err(Error::Contour(format!(
            "no contour keeps margin {margin:.3e} below the first Fermi pole at height {:.3e}; \
             increase kT or reduce the margin",
            PI * occ.kt
        )));
    }
    let curve = match shape {
        ContourShape::Dumbbell => Dumbbell::new(interval, occ, margin)?.into_curve(n_nodes),
        ContourShape::Ellipse => Ellipse::new(interval, occ, margin).into_curve(n_nodes),
    };
    let (nodes, weights, samples) = curve;
    let realized = samples
        .iter()
        .map(|&z| distance_to_obstacles(z, interval, occ))
        .fold(f64::INFINITY, f64::min);
    // sampled curves can touch the requested margin exactly
    if realized < margin * (1.0 - 1e-9) {
        return Err(Error::Contour(format!(
            "contour passes within {realized:.3e} of the spectrum or a Fermi pole (required {margin:.3e})"
        )));
    }
    Ok(Contour {
        shape,
        n_nodes,
        nodes,
        weights,
        margin: realized,
    })
}

type Curve = (Vec<c64>, Vec<c64>, Vec<c64>);

const MARGIN_SAMPLES: usize = 8192;

fn distance_to_obstacles(z: c64, interval: SpectralInterval, occ: &Occupation) -> f64 {
    let x = z.re.clamp(interval.lo, interval.hi);
    let to_spectrum = (z - c64::new(x, 0.0)).norm();
    // nearest pole on the side of z
    let step = 2.0 * PI * occ.kt;
    let k = ((z.im.abs() / (PI * occ.kt) - 1.0) / 2.0).round().max(0.0);
    let to_pole = [k - 1.0, k, k + 1.0]
        .iter()
        .filter(|&&j| j >= 0.0)
        .map(|&j| (c64::new(z.re - occ.mu, z.im.abs() - (PI * occ.kt + j * step))).norm())
        .fold(f64::INFINITY, f64::min);
    to_spectrum.min(to_pole)
}

struct Ellipse {
    center: f64,
    a: f64,
    b: f64,
}

impl Ellipse {
    fn new(interval: SpectralInterval, occ: &Occupation, margin: f64) -> Self {
        let half = 0.5 * (interval.hi - interval.lo);
        let cap = PI * occ.kt / 2.0;
        let mut a = half + margin;
        let mut b = a.min(cap);
        if b < a && margin < b {
            // a flat ellipse bends towards the interval ends; widen it until
            // the end points sit `margin` away from the curve
            a = a.max((b * b + half * half / (1.0 - (margin / b).powi(2))).sqrt());
            b = a.min(cap);
        }
        Ellipse {
            center: 0.5 * (interval.lo + interval.hi),
            a,
            b,
        }
    }

    fn point(&self, theta: f64) -> c64 {
        c64::new(self.center + self.a * theta.cos(), self.b * theta.sin())
    }

    fn into_curve(self, n: usize) -> Curve {
        let dtheta = 2.0 * PI / n as f64;
        let two_pi_i = c64::new(0.0, 2.0 * PI);
        let mut nodes = Vec::with_capacity(n / 2);
        let mut weights = Vec::with_capacity(n / 2);
        for k in 0..n / 2 {
            let t = dtheta * (k as f64 + 0.5);
            let dz = c64::new(-self.a * t.sin(), self.b * t.cos()) * dtheta;
            nodes.push(self.point(t));
            weights.push(dz / two_pi_i);
        }
        let samples = (0..=MARGIN_SAMPLES)
            .map(|k| self.point(PI * k as f64 / MARGIN_SAMPLES as f64))
            .collect();
        (nodes, weights, samples)
    }
}

/// Conformal map `t ↦ z` built from `w = (z - mu)² + (πkT)²` and the Jacobi
/// `sn` function, mapping a rectangle onto the plane slit along the spectrum
/// and along the imaginary pole line.
struct Dumbbell {
    mu: f64,
    m: f64,
    sqrt_mm: f64,
    k: f64,
    kp: f64,
    kk: f64,
    kkp: f64,
}

impl Dumbbell {
    fn new(interval: SpectralInterval, occ: &Occupation, margin: f64) -> Result<Self> {
        let mu = occ.mu;
        let m = (PI * occ.kt).powi(2);
        let reach = (interval.lo - mu).abs().max((interval.hi - mu).abs()) + margin;
        let reach = reach.max(2.0 * PI * occ.kt);
        let big_m = reach * reach + m;
        let q = (big_m / m).sqrt();
        let k = (q - 1.0) / (q + 1.0);
        let kp = 2.0 * q.sqrt() / (q + 1.0);
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::Contour(format!("degenerate modulus {k}")));
        }
        Ok(Dumbbell {
            mu,
            m,
            sqrt_mm: (m * big_m).sqrt(),
            k,
            kp,
            kk: complete_k(kp),
            kkp: complete_k(k),
        })
    }

    /// `(w, dw/dt)` at `t = x + iK'/2`.
    fn w_at(&self, x: f64) -> (c64, c64) {
        let (sn, cn, dn) = jacobi_complex(x, 0.5 * self.kkp, self.k, self.kp);
        let inv_k = c64::new(1.0 / self.k, 0.0);
        let den = inv_k - sn;
        let w = (inv_k + sn) / den * self.sqrt_mm;
        let dw = cn * dn * (2.0 / self.k) / (den * den) * self.sqrt_mm;
        (w, dw)
    }

    fn xi(&self, w: c64) -> c64 {
        (w - c64::new(self.m, 0.0)).sqrt()
    }

    fn into_curve(self, n_nodes: usize) -> Curve {
        let n = n_nodes / 2;
        let h = 2.0 * self.kk / n as f64;
        let two_pi_i = c64::new(0.0, 2.0 * PI);
        let mu = c64::new(self.mu, 0.0);
        let mut nodes = Vec::with_capacity(2 * n);
        let mut weights = Vec::with_capacity(2 * n);
        for j in 0..n {
            let x = -self.kk + (j as f64 + 0.5) * h;
            let (w, dwdt) = self.w_at(x);
            // counterclockwise orientation in w
            let dw = dwdt * (-h);
            let xi = self.xi(w);
            // right lobe: z = mu + ξ; left lobe: z = mu − conj(ξ)
            nodes.push(mu + xi);
            weights.push(dw / (xi * 2.0) / two_pi_i);
            nodes.push(mu - xi.conj());
            weights.push(dw.conj() / (xi.conj() * 2.0) / two_pi_i);
        }
        let mut samples = Vec::with_capacity(2 * MARGIN_SAMPLES + 2);
        for j in 0..=MARGIN_SAMPLES {
            let x = -self.kk + 2.0 * self.kk * j as f64 / MARGIN_SAMPLES as f64;
            let xi = self.xi(self.w_at(x).0);
            samples.push(mu + xi);
            samples.push(mu - xi.conj());
        }
        (nodes, weights, samples)
    }
}

/// LU factorizations of `H - z_k I` at every node, with the quadrature
/// coefficients `W_k F(z_k)`.
pub struct ResolventCache {
    n: usize,
    nodes: Vec<c64>,
    coefs: Vec<c64>,
    lus: Vec<PartialPivLu<c64>>,
    /// Nodes come from the upper half plane only and conjugates are implied.
    paired: bool,
}

impl ResolventCache {
    pub fn new(h: &HamiltonianMatrix, contour: &Contour, occ: &Occupation) -> Result<Self> {
        let pairs: Vec<(c64, c64)> = contour.nodes.iter().copied().zip(contour.weights.iter().copied()).collect();
        Self::build(h, &pairs, occ, true)
    }

    /// Factorizes every node of `contour`, conjugates included, and sums them
    /// explicitly. Used to check the conjugate-pairing shortcut.
    pub fn new_full(h: &HamiltonianMatrix, contour: &Contour, occ: &Occupation) -> Result<Self> {
        Self::build(h, &contour.full(), occ, false)
    }

    fn build(h: &HamiltonianMatrix, pairs: &[(c64, c64)], occ: &Occupation, paired: bool) -> Result<Self> {
        let n = h.n();
        if n == 0 {
            return Err(Error::Empty("Hamiltonian has no rows".into()));
        }
        let mat = h.as_mat();
        let lus: Vec<PartialPivLu<c64>> = pairs
            .par_iter()
            .map(|&(z, _)| {
                let shifted = Mat::<c64>::from_fn(n, n, |i, j| {
                    let v = c64::new(mat[(i, j)], 0.0);
                    if i == j { v - z } else { v }
                });
                let lu = shifted.partial_piv_lu();
                let probe = lu.solve(Mat::<c64>::from_fn(n, 1, |_, _| c64::new(1.0, 0.0)));
                let finite = (0..n).all(|i| probe[(i, 0)].re.is_finite() && probe[(i, 0)].im.is_finite());
                if finite {
                    Ok(lu)
                } else {
                    Err(Error::Factorization { re: z.re, im: z.im })
                }
            })
            .collect::<Result<_>>()?;
        Ok(ResolventCache {
            n,
            nodes: pairs.iter().map(|p| p.0).collect(),
            coefs: pairs.iter().map(|&(z, w)| w * occ.energy_weight_complex(z)).collect(),
            lus,
            paired,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> &[c64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(H - z_k I)^{-1} B`.
    pub fn solve(&self, k: usize, rhs: &Mat<c64>) -> Mat<c64> {
        self.lus[k].solve(rhs)
    }

    /// `(H - z_k I)^{-1}`.
    pub fn inverse(&self, k: usize) -> Mat<c64> {
        self.lus[k].inverse()
    }

    /// `R_k e_l` at every node.
    fn columns(&self, l: usize) -> Vec<Vec<c64>> {
        (0..self.len())
            .into_par_iter()
            .map(|k| {
                let mut e = Mat::<c64>::zeros(self.n, 1);
                e[(l, 0)] = c64::new(1.0, 0.0);
                let x = self.lus[k].solve(&e);
                (0..self.n).map(|i| x[(i, 0)]).collect()
            })
            .collect()
    }

    /// Turns `Σ_k coef_k g_k` into the contour integral. The imaginary part is
    /// zero for paired caches and a symmetry diagnostic otherwise.
    fn finish(&self, s: c64) -> c64 {
        if self.paired {
            c64::new(2.0 * s.re, 0.0)
        } else {
            s
        }
    }

    fn check_site(&self, l: usize) -> Result<()> {
        if l >= self.n {
            return Err(Error::Invalid(format!("site index {l} out of range for {} sites", self.n)));
        }
        Ok(())
    }
}

/// `E_l = −(1/2πi)∮ F(z) [R_z]_ll dz`.
pub fn site_energy_contour(cache: &ResolventCache, l: usize) -> Result<f64> {
    Ok(site_energy_contour_complex(cache, l)?.re)
}

/// Site energy with the imaginary residue left in place. For a paired cache
/// the imaginary part is exactly zero.
pub fn site_energy_contour_complex(cache: &ResolventCache, l: usize) -> Result<c64> {
    cache.check_site(l)?;
    let cols = cache.columns(l);
    let s: c64 = cols.iter().zip(&cache.coefs).map(|(x, &c)| c * x[l]).sum();
    Ok(-cache.finish(s))
}

/// `∂E_l/∂y(m)`, length `dim`.
pub fn site_gradient_contour(
    cache: &ResolventCache,
    model: &TbModel,
    config: &Configuration,
    l: usize,
    m: usize,
) -> Result<Vec<f64>> {
    check_sizes(cache, config)?;
    if m >= config.len() {
        return Err(Error::Invalid(format!("site index {m} out of range")));
    }
    let nbrs = config.neighbors(model.rcut);
    let all = gradient_with(cache, model, &nbrs, config.dim(), l, Some(m))?;
    Ok(all[m * config.dim()..(m + 1) * config.dim()].to_vec())
}

/// `∂E_l/∂y(m)` for every site `m`, flat `(site, coord)` layout.
pub fn site_gradients_contour(cache: &ResolventCache, model: &TbModel, config: &Configuration, l: usize) -> Result<Vec<f64>> {
    check_sizes(cache, config)?;
    let nbrs = config.neighbors(model.rcut);
    gradient_with(cache, model, &nbrs, config.dim(), l, None)
}

fn check_sizes(cache: &ResolventCache, config: &Configuration) -> Result<()> {
    if cache.n != config.len() {
        return Err(Error::Invalid(format!(
            "resolvent cache has {} sites, configuration has {}",
            cache.n,
            config.len()
        )));
    }
    Ok(())
}

fn gradient_with(
    cache: &ResolventCache,
    model: &TbModel,
    nbrs: &NeighborList,
    dim: usize,
    l: usize,
    only: Option<usize>,
) -> Result<Vec<f64>> {
    cache.check_site(l)?;
    let n = cache.n;
    let cols = cache.columns(l);
    let sites: Vec<usize> = match only {
        Some(m) => vec![m],
        None => (0..n).collect(),
    };
    // ∂E_l/∂y(m)_i = (1/2πi)∮ F xᵀ H_{,m,i} x, x = R e_l
    //             = (1/2πi)∮ F 2 x_m Σ_k h'(r) (δ_i / r) x_k
    let mut acc = vec![c64::new(0.0, 0.0); n * dim];
    for (x, &coef) in cols.iter().zip(&cache.coefs) {
        for &m in &sites {
            for nb in nbrs.of(m) {
                let scale = coef * x[m] * x[nb.j] * (2.0 * model.hop_d1(nb.r) / nb.r);
                for i in 0..dim {
                    acc[m * dim + i] += scale * nb.delta[i];
                }
            }
        }
    }
    Ok(acc.into_iter().map(|s| cache.finish(s).re).collect())
}

/// `∂²E_l/∂y(m)∂y(n)` for each requested `(m, n)`, each a row-major `dim x dim` block.
pub fn site_hessian_contour(
    cache: &ResolventCache,
    model: &TbModel,
    config: &Configuration,
    l: usize,
    pairs: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    check_sizes(cache, config)?;
    cache.check_site(l)?;
    let n = cache.n;
    let dim = config.dim();
    if let Some(&(m, q)) = pairs.iter().find(|&&(m, q)| m >= n || q >= n) {
        return Err(Error::Invalid(format!("pair ({m}, {q}) out of range")));
    }
    let nbrs = config.neighbors(model.rcut);

    // columns of the multi-RHS solve: one block of `dim` per distinct second site
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    for &(_, q) in pairs {
        let next = slot.len();
        slot.entry(q).or_insert(next);
    }
    let seconds: Vec<usize> = {
        let mut v = vec![0; slot.len()];
        for (&q, &s) in &slot {
            v[s] = q;
        }
        v
    };

    let per_node: Vec<Vec<c64>> = (0..cache.len())
        .into_par_iter()
        .map(|k| {
            let mut e = Mat::<c64>::zeros(n, 1);
            e[(l, 0)] = c64::new(1.0, 0.0);
            let xm = cache.lus[k].solve(&e);
            let x: Vec<c64> = (0..n).map(|i| xm[(i, 0)]).collect();

            let mut rhs = Mat::<c64>::zeros(n, seconds.len() * dim);
            for (s, &q) in seconds.iter().enumerate() {
                for (idx, v) in apply_derivative(model, &nbrs, &x, q, dim) {
                    for j in 0..dim {
                        rhs[(idx, s * dim + j)] += v[j];
                    }
                }
            }
            let sol = cache.lus[k].solve(&rhs);

            let mut out = vec![c64::new(0.0, 0.0); pairs.len() * dim * dim];
            for (p, &(m, q)) in pairs.iter().enumerate() {
                let block = &mut out[p * dim * dim..(p + 1) * dim * dim];
                second_derivative_term(model, &nbrs, &x, m, q, block);
                let s = slot[&q];
                for (idx, v) in apply_derivative(model, &nbrs, &x, m, dim) {
                    for i in 0..dim {
                        for j in 0..dim {
                            block[i * dim + j] -= v[i] * sol[(idx, s * dim + j)] * 2.0;
                        }
                    }
                }
            }
            let coef = cache.coefs[k];
            out.iter_mut().for_each(|v| *v *= coef);
            out
        })
        .collect();

    let mut total = vec![c64::new(0.0, 0.0); pairs.len() * dim * dim];
    for node in &per_node {
        for (t, v) in total.iter_mut().zip(node) {
            *t += v;
        }
    }
    Ok(total
        .chunks(dim * dim)
        .map(|block| block.iter().map(|&s| cache.finish(s).re).collect())
        .collect())
}

/// Sparse `H_{,m,i} x` for every `i`: pairs of row index and the `dim` values.
fn apply_derivative(model: &TbModel, nbrs: &NeighborList, x: &[c64], m: usize, dim: usize) -> Vec<(usize, Vec<c64>)> {
    let mut at_m = vec![c64::new(0.0, 0.0); dim];
    let mut out = Vec::with_capacity(nbrs.of(m).len() + 1);
    for nb in nbrs.of(m) {
        let g = model.hop_d1(nb.r) / nb.r;
        let mut at_k = vec![c64::new(0.0, 0.0); dim];
        for i in 0..dim {
            let v = g * nb.delta[i];
            at_m[i] += x[nb.j] * v;
            at_k[i] = x[m] * v;
        }
        out.push((nb.j, at_k));
    }
    out.push((m, at_m));
    out
}

/// Adds `xᵀ H_{,mi,nj} x` into the row-major block.
fn second_derivative_term(model: &TbModel, nbrs: &NeighborList, x: &[c64], m: usize, q: usize, block: &mut [c64]) {
    if m == q {
        for nb in nbrs.of(m) {
            let hess = model.hop_hessian(nb.r, &nb.delta);
            let w = x[m] * x[nb.j] * 2.0;
            for (b, h) in block.iter_mut().zip(&hess) {
                *b += w * *h;
            }
        }
    } else if let Some(nb) = nbrs.are_neighbors(m, q) {
        let hess = model.hop_hessian(nb.r, &nb.delta);
        let w = x[m] * x[q] * (-2.0);
        for (b, h) in block.iter_mut().zip(&hess) {
            *b += w * *h;
        }
    }
}

/// `|[R_z]_lk|` against `|y_l - y_k|` for `k ≠ l`, at node `node` (default:
/// the node farthest from the real axis). Values below `1e-15` are dropped.
pub fn resolvent_decay_profile(
    cache: &ResolventCache,
    config: &Configuration,
    l: usize,
    node: Option<usize>,
) -> Result<Vec<(f64, f64)>> {
    check_sizes(cache, config)?;
    cache.check_site(l)?;
    let k = match node {
        Some(k) if k < cache.len() => k,
        Some(k) => return Err(Error::Invalid(format!("node {k} out of range"))),
        None => (0..cache.len())
            .max_by(|&a, &b| cache.nodes[a].im.total_cmp(&cache.nodes[b].im))
            .unwrap_or(0),
    };
    let mut e = Mat::<c64>::zeros(cache.n, 1);
    e[(l, 0)] = c64::new(1.0, 0.0);
    let x = cache.lus[k].solve(&e);
    Ok((0..cache.n)
        .filter(|&j| j != l)
        .map(|j| (config.distance(l, j), x[(j, 0)].norm()))
        .filter(|&(_, v)| v >= 1e-15)
        .collect())
}

/// `F(H) = −(1/2πi)∮ F(z) R_z dz`.
pub fn matrix_function_contour(cache: &ResolventCache) -> Mat<f64> {
    let n = cache.n;
    let parts: Vec<Mat<c64>> = (0..cache.len())
        .into_par_iter()
        .map(|k| {
            let mut inv = cache.inverse(k);
            let c = cache.coefs[k];
            for j in 0..n {
                for i in 0..n {
                    inv[(i, j)] *= c;
                }
            }
            inv
        })
        .collect();
    let mut sum = Mat::<c64>::zeros(n, n);
    for p in &parts {
        sum += p;
    }
    Mat::from_fn(n, n, |i, j| -cache.finish(sum[(i, j)]).re)
}

/// Everything needed to evaluate site quantities of one configuration on the
/// resolvent route.
pub struct ContourSystem {
    pub hamiltonian: HamiltonianMatrix,
    pub contour: Contour,
    pub cache: ResolventCache,
    nbrs: NeighborList,
    dim: usize,
}

impl ContourSystem {
    /// Encloses the Gershgorin interval of `H`.
    pub fn new(model: &TbModel, config: &Configuration, params: &ContourParams) -> Result<Self> {
        model.validate()?;
        if config.is_empty() {
            return Err(Error::Empty("configuration has no sites".into()));
        }
        let occ = Occupation::from_model(model);
        let nbrs = config.neighbors(model.rcut);
        let hamiltonian = model::assemble_with(model, config.len(), &nbrs);
        let contour = build_contour(
            gershgorin(&hamiltonian),
            &occ,
            params.margin_for(&occ),
            params.n_nodes,
            params.shape,
        )?;
        let cache = ResolventCache::new(&hamiltonian, &contour, &occ)?;
        Ok(ContourSystem {
            hamiltonian,
            contour,
            cache,
            nbrs,
            dim: config.dim(),
        })
    }

    pub fn site_energy(&self, l: usize) -> Result<f64> {
        site_energy_contour(&self.cache, l)
    }

    pub fn site_gradients(&self, model: &TbModel, l: usize) -> Result<Vec<f64>> {
        gradient_with(&self.cache, model, &self.nbrs, self.dim, l, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_lattice_disk, perturb, Lattice};
    use crate::model::assemble;
    use crate::spectral::{eig, energy_matrix, site_energies, total_gradient_hf};

    fn occ() -> Occupation {
        Occupation::new(0.0, 0.1).unwrap()
    }

    fn cluster(radius: f64, seed: u64) -> Configuration {
        let c = build_lattice_disk(&Lattice::triangular(1.0), radius, &[0.0, 0.0]).unwrap();
        perturb(&c, 0.1, seed).unwrap()
    }

    #[test]
    fn winding_number_is_one_inside_and_zero_outside() {
        let iv = SpectralInterval { lo: -3.0, hi: 2.0 };
        let one = c64::new(1.0, 0.0);
        let c = build_contour(iv, &occ(), 0.01, 64, ContourShape::Dumbbell).unwrap();
        for x in [-2.9, -0.5, 0.0, 1.9] {
            let w = c.integrate(|z| one / (z - c64::new(x, 0.0)));
            assert!((w - 1.0).abs() < 1e-8, "x={x} winding {w}");
        }
        assert!(c.integrate(|z| one / (z - c64::new(50.0, 0.0))).abs() < 1e-8);

        // the flat ellipse needs far more nodes for the same accuracy
        let c = build_contour(iv, &occ(), 0.01, 4096, ContourShape::Ellipse).unwrap();
        for x in [-2.9, -0.5, 0.0, 1.9] {
            let w = c.integrate(|z| one / (z - c64::new(x, 0.0)));
            assert!((w - 1.0).abs() < 1e-8, "ellipse x={x} winding {w}");
        }
    }

    #[test]
    fn dumbbell_keeps_poles_outside() {
        let o = occ();
        let iv = SpectralInterval { lo: -4.0, hi: 4.0 };
        let c = build_contour(iv, &o, default_margin(o.kt), 64, ContourShape::Dumbbell).unwrap();
        assert!(c.margin() >= default_margin(o.kt));
        // contour integral of 1/(z - pole) vanishes when the pole is outside
        for p in o.upper_poles(3) {
            let one = c64::new(1.0, 0.0);
            let w = c.integrate(|z| one / (z - p) + one / (z - p.conj()));
            assert!(w.abs() < 1e-8, "pole {p} winding {w}");
        }
        assert!(c.nodes().iter().all(|z| z.im > 0.0));
    }

    #[test]
    fn degenerate_interval_gives_valid_contour() {
        let o = occ();
        let iv = SpectralInterval { lo: 0.3, hi: 0.3 };
        for shape in [ContourShape::Dumbbell, ContourShape::Ellipse] {
            let c = build_contour(iv, &o, 0.01, 32, shape).unwrap();
            let v = c.integrate(|z| o.energy_weight_complex(z) / (z - c64::new(0.3, 0.0)));
            assert!((v - o.energy_weight(0.3)).abs() < 1e-6, "{shape:?}: {v}");
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let iv = SpectralInterval { lo: -1.0, hi: 1.0 };
        assert!(build_contour(iv, &occ(), 0.0, 64, ContourShape::Dumbbell).is_err());
        assert!(build_contour(iv, &occ(), 0.01, 7, ContourShape::Dumbbell).is_err());
        // ellipse cannot stay 0.5 away from a pole at height πkT/... when kT is tiny
        let cold = Occupation::new(0.0, 0.01).unwrap();
        assert!(build_contour(iv, &cold, 0.5, 64, ContourShape::Ellipse).is_err());
    }

    #[test]
    fn scalar_quadrature_converges_geometrically() {
        let o = occ();
        let iv = SpectralInterval { lo: -4.2, hi: 4.9 };
        let xs = [-4.1, -1.0, -0.05, 0.0, 0.07, 2.0, 4.8];
        let err = |n| {
            let c = build_contour(iv, &o, 0.01, n, ContourShape::Dumbbell).unwrap();
            xs.iter()
                .map(|&x| {
                    let v = c.integrate(|z| o.energy_weight_complex(z) / (z - c64::new(x, 0.0)));
                    (v - o.energy_weight(x)).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e16, e32, e64) = (err(16), err(32), err(64));
        assert!(e32 < e16 * 1e-2, "{e16} {e32}");
        assert!(e64 < 1e-11, "{e64}");
    }

    #[test]
    fn factorizations_solve_to_small_residual() {
        let o = occ();
        let model = TbModel::default();
        let cfg = cluster(2.5, 1);
        let h = assemble(&model, &cfg);
        let c = build_contour(gershgorin(&h), &o, 0.01, 16, ContourShape::Dumbbell).unwrap();
        let cache = ResolventCache::new(&h, &c, &o).unwrap();
        let n = h.n();
        let b = Mat::<c64>::from_fn(n, 1, |i, _| c64::new((i as f64).sin(), 1.0));
        for k in 0..cache.len() {
            let x = cache.solve(k, &b);
            let z = cache.nodes()[k];
            let mut res: f64 = 0.0;
            for i in 0..n {
                let mut s = -b[(i, 0)] - z * x[(i, 0)];
                for j in 0..n {
                    s += x[(j, 0)] * h.get(i, j);
                }
                res = res.max(s.norm());
            }
            assert!(res < 1e-10, "node {k} residual {res}");
        }
    }

    #[test]
    fn site_energies_match_diagonalization() {
        let o = occ();
        let model = TbModel::default();
        let cfg = cluster(3.0, 2);
        let sys = ContourSystem::new(&model, &cfg, &ContourParams::default()).unwrap();
        let exact = site_energies(&eig(&sys.hamiltonian).unwrap(), &o);
        for (l, x) in exact.iter().enumerate() {
            let e = sys.site_energy(l).unwrap();
            assert!((e - x).abs() < 1e-8, "site {l}: {e} vs {x}");
        }
    }

    #[test]
    fn conjugate_pairing_matches_full_contour() {
        let o = occ();
        let model = TbModel::default();
        let cfg = cluster(2.0, 3);
        let h = assemble(&model, &cfg);
        let c = build_contour(gershgorin(&h), &o, 0.01, 32, ContourShape::Dumbbell).unwrap();
        let half = ResolventCache::new(&h, &c, &o).unwrap();
        let full = ResolventCache::new_full(&h, &c, &o).unwrap();
        for l in 0..cfg.len() {
            let a = site_energy_contour_complex(&half, l).unwrap();
            let b = site_energy_contour_complex(&full, l).unwrap();
            assert!((a.re - b.re).abs() < 1e-12);
            assert!(b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_function_matches_energy_matrix() {
        let o = occ();
        let model = TbModel::default();
        let cfg = cluster(2.0, 4);
        let sys = ContourSystem::new(&model, &cfg, &ContourParams::default()).unwrap();
        let exact = energy_matrix(&eig(&sys.hamiltonian).unwrap(), &o);
        let approx = matrix_function_contour(&sys.cache);
        let n = cfg.len();
        for i in 0..n {
            for j in 0..n {
                assert!((approx[(i, j)] - exact[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gradients_sum_to_total_hellmann_feynman() {
        let o = occ();
        let model = TbModel::default();
        let cfg = cluster(2.0, 5);
        let sys = ContourSystem::new(&model, &cfg, &ContourParams::default()).unwrap();
        let n = cfg.len();
        let mut sum = vec![0.0; n * 2];
        for l in 0..n {
            for (s, g) in sum.iter_mut().zip(sys.site_gradients(&model, l).unwrap()) {
                *s += g;
            }
        }
        let hf = total_gradient_hf(&model, &cfg, &eig(&sys.hamiltonian).unwrap(), &o);
        for (a, b) in sum.iter().zip(&hf) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let o = occ();
        let model = TbModel::default();
        let cfg = cluster(1.5, 6);
        let n = cfg.len();
        let params = ContourParams::default();
        let sys = ContourSystem::new(&model, &cfg, &params).unwrap();
        let l = 0;
        let grad = sys.site_gradients(&model, l).unwrap();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|m| (0..n).map(move |q| (m, q))).collect();
        let hess = site_hessian_contour(&sys.cache, &model, &cfg, l, &pairs).unwrap();
        let h = 1e-5;
        let shifted = |m: usize, i: usize, s: f64| {
            let mut p = cfg.positions().to_vec();
            p[m * 2 + i] += s;
            cfg.with_positions(p).unwrap()
        };
        let exact_site = |c: &Configuration| site_energies(&eig(&assemble(&model, c)).unwrap(), &o)[l];
        let grad_at = |c: &Configuration| {
            let s = ContourSystem::new(&model, c, &params).unwrap();
            s.site_gradients(&model, l).unwrap()
        };
        for m in 0..n {
            for i in 0..2 {
                let fd = (exact_site(&shifted(m, i, h)) - exact_site(&shifted(m, i, -h))) / (2.0 * h);
                assert!((fd - grad[m * 2 + i]).abs() < 1e-7, "grad m={m} i={i}: {fd} vs {}", grad[m * 2 + i]);
                let gp = grad_at(&shifted(m, i, h));
                let gm = grad_at(&shifted(m, i, -h));
                for q in 0..n {
                    for j in 0..2 {
                        // d/dy(m)_i of dE/dy(q)_j
                        let fd2 = (gp[q * 2 + j] - gm[q * 2 + j]) / (2.0 * h);
                        let an = hess[q * n + m][j * 2 + i];
                        assert!((fd2 - an).abs() < 1e-6, "hess ({m},{i})-({q},{j}): {fd2} vs {an}");
                        let sym = hess[m * n + q][i * 2 + j];
                        assert!((an - sym).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn decay_profile_skips_self_and_floors() {
        let model = TbModel::default();
        let cfg = cluster(3.0, 7);
        let sys = ContourSystem::new(&model, &cfg, &ContourParams::default()).unwrap();
        let prof = resolvent_decay_profile(&sys.cache, &cfg, 0, None).unwrap();
        assert!(prof.len() < cfg.len());
        assert!(prof.iter().all(|&(r, v)| r > 0.0 && v >= 1e-15));
    }
}
