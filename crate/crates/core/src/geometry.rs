//! Index sets, lattices, configurations and displacement fields.
//!
//! A [`Configuration`] is an ordered list of labelled sites in `d` dimensions.
//! Sites carved from a lattice are labelled by their integer lattice
//! coordinates, which makes vacancies and defect cores addressable exactly.

use std::collections::{HashMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Site label. Integer lattice coordinates for lattice-derived sites.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub Vec<i64>);

impl SiteId {
    pub fn new(coords: &[i64]) -> Self {
        SiteId(coords.to_vec())
    }

    /// Label for sites that do not come from a lattice.
    pub fn label(k: i64) -> Self {
        SiteId(vec![k, 0])
    }
}

impl From<[i64; 2]> for SiteId {
    fn from(v: [i64; 2]) -> Self {
        SiteId(v.to_vec())
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Atomic positions with distinct labels and a cached minimum separation.
#[derive(Clone, Debug)]
pub struct Configuration {
    dim: usize,
    ids: Vec<SiteId>,
    positions: Vec<f64>,
    min_sep: f64,
    index: HashMap<SiteId, usize>,
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.ids == other.ids && self.positions == other.positions
    }
}

impl Configuration {
    /// `positions` is row-major, `dim` coordinates per site.
    pub fn new(dim: usize, ids: Vec<SiteId>, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if positions.len() != ids.len() * dim {
            return Err(Error::Invalid(format!(
                "{} ids but {} coordinates for dimension {dim}",
                ids.len(),
                positions.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite coordinate".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateSite(id.clone()));
            }
        }
        let mut config = Configuration {
            dim,
            ids,
            positions,
            min_sep: f64::INFINITY,
            index,
        };
        let (min_sep, pair) = config.closest_pair();
        if min_sep <= 0.0 {
            let (a, b) = pair.expect("a zero distance needs a pair");
            return Err(Error::Separation {
                a: config.ids[a].clone(),
                b: config.ids[b].clone(),
                distance: min_sep,
                floor: 0.0,
            });
        }
        config.min_sep = min_sep;
        Ok(config)
    }

    /// Convenience constructor for 2D sites labelled `0..n`.
    pub fn from_points_2d(points: &[[f64; 2]]) -> Result<Self> {
        let ids = (0..points.len() as i64).map(SiteId::label).collect();
        let positions = points.iter().flat_map(|p| p.iter().copied()).collect();
        Configuration::new(2, ids, positions)
    }

    fn closest_pair(&self) -> (f64, Option<(usize, usize)>) {
        let mut best = f64::INFINITY;
        let mut pair = None;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let r = self.distance(i, j);
                if r < best {
                    best = r;
                    pair = Some((i, j));
                }
            }
        }
        (best, pair)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SiteId] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &SiteId {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &SiteId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require_index(&self, id: &SiteId) -> Result<usize> {
        self.index_of(id).ok_or_else(|| Error::UnknownSite(id.clone()))
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Minimum pairwise distance; `+inf` for fewer than two sites.
    pub fn min_sep(&self) -> f64 {
        self.min_sep
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        norm(&sub(self.position(i), self.position(j)))
    }

    /// Checks the non-interpenetration bound `min_sep >= floor`.
    pub fn check_separation(&self, floor: f64) -> Result<()> {
        if self.min_sep >= floor {
            return Ok(());
        }
        let (distance, pair) = self.closest_pair();
        let (a, b) = pair.expect("finite min_sep implies a pair");
        Err(Error::Separation {
            a: self.ids[a].clone(),
            b: self.ids[b].clone(),
            distance,
            floor,
        })
    }

    /// Same ids, new coordinates.
    pub fn with_positions(&self, positions: Vec<f64>) -> Result<Self> {
        Configuration::new(self.dim, self.ids.clone(), positions)
    }

    /// Indices of every other site within `cutoff` (strict), with displacement `y_i - y_j`.
    pub fn neighbors(&self, cutoff: f64) -> NeighborList {
        NeighborList::build(self, cutoff)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ConfigurationDoc::from(self)).expect("configuration serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct SiteDoc {
    id: SiteId,
    pos: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ConfigurationDoc {
    dim: usize,
    sites: Vec<SiteDoc>,
    #[serde(default)]
    min_sep: Option<f64>,
}

impl From<&Configuration> for ConfigurationDoc {
    fn from(c: &Configuration) -> Self {
        ConfigurationDoc {
            dim: c.dim,
            sites: (0..c.len())
                .map(|i| SiteDoc {
                    id: c.ids[i].clone(),
                    pos: c.position(i).to_vec(),
                })
                .collect(),
            min_sep: c.min_sep.is_finite().then_some(c.min_sep),
        }
    }
}

impl Serialize for Configuration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ConfigurationDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = ConfigurationDoc::deserialize(d)?;
        let mut ids = Vec::with_capacity(doc.sites.len());
        let mut positions = Vec::with_capacity(doc.sites.len() * doc.dim);
        for site in doc.sites {
            if site.pos.len() != doc.dim {
                return Err(serde::de::Error::custom(format!(
                    "site {} has {} coordinates, expected {}",
                    site.id,
                    site.pos.len(),
                    doc.dim
                )));
            }
            ids.push(site.id);
            positions.extend(site.pos);
        }
        Configuration::new(doc.dim, ids, positions).map_err(serde::de::Error::custom)
    }
}

/// One neighbor entry: index `j`, distance and `y_i - y_j`.
#[derive(Clone, Debug)]
pub struct Neighbor {
    pub j: usize,
    pub r: f64,
    pub delta: Vec<f64>,
}

/// Per-site neighbor lists within a cutoff radius (naive O(N^2) build).
#[derive(Clone, Debug)]
pub struct NeighborList {
    pub cutoff: f64,
    lists: Vec<Vec<Neighbor>>,
}

impl NeighborList {
    pub fn build(config: &Configuration, cutoff: f64) -> Self {
        let n = config.len();
        let mut lists = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let delta = sub(config.position(i), config.position(j));
                let r = norm(&delta);
                if r < cutoff {
                    let back = delta.iter().map(|x| -x).collect();
                    lists[i].push(Neighbor { j, r, delta });
                    lists[j].push(Neighbor {
                        j: i,
                        r,
                        delta: back,
                    });
                }
            }
        }
        NeighborList { cutoff, lists }
    }

    pub fn of(&self, i: usize) -> &[Neighbor] {
        &self.lists[i]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> Option<&Neighbor> {
        self.lists[i].iter().find(|nb| nb.j == j)
    }
}

/// Bravais lattice `s * A * Z^d`; the columns of `A` are the primitive vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Row-major `d x d` matrix.
    pub basis: Vec<f64>,
    pub dim: usize,
    pub scale: f64,
}

impl Lattice {
    pub fn new(dim: usize, basis: Vec<f64>, scale: f64) -> Result<Self> {
        if basis.len() != dim * dim {
            return Err(Error::Invalid(format!("basis needs {} entries", dim * dim)));
        }
        let lattice = Lattice { basis, dim, scale };
        let det = lattice.scaled_determinant();
        if !det.is_finite() || det.abs() < 1e-14 {
            return Err(Error::Invalid("lattice basis is singular".into()));
        }
        Ok(lattice)
    }

    /// `A_tri = s [[1, 1/2], [0, sqrt(3)/2]]`.
    pub fn triangular(scale: f64) -> Self {
        Lattice::new(2, vec![1.0, 0.5, 0.0, 3f64.sqrt() / 2.0], scale)
            .expect("triangular basis is regular")
    }

    fn scaled_determinant(&self) -> f64 {
        let s = self.scale;
        let a = &self.basis;
        match self.dim {
            1 => s * a[0],
            2 => s * s * (a[0] * a[3] - a[1] * a[2]),
            3 => {
                s * s
                    * s
                    * (a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                        + a[2] * (a[3] * a[7] - a[4] * a[6]))
            }
            _ => f64::NAN,
        }
    }

    /// Position of the lattice point with integer coordinates `n`.
    pub fn point(&self, n: &[i64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|r| self.scale * (0..d).map(|c| self.basis[r * d + c] * n[c] as f64).sum::<f64>())
            .collect()
    }

    /// Primitive vectors `s A e_i`.
    pub fn primitive_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| {
                let mut e = vec![0; self.dim];
                e[i] = 1;
                self.point(&e)
            })
            .collect()
    }

    /// Shortest of the primitive vectors (an upper bound on the lattice spacing).
    fn shortest_primitive(&self) -> f64 {
        self.primitive_vectors()
            .iter()
            .map(|v| norm(v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Upper bound on `|n|_inf` for points within `radius` of the origin:
    /// every coordinate of `n` is bounded by `radius / sigma_min(sA)` and
    /// `sigma_min >= |det| / prod(column norms)` (Hadamard).
    fn coordinate_bound(&self, radius: f64) -> i64 {
        let det = self.scaled_determinant().abs();
        let cols: f64 = self.primitive_vectors().iter().map(|v| norm(v)).product();
        let shortest = self.shortest_primitive();
        let sigma_min = det * shortest / cols;
        (radius / sigma_min).ceil() as i64 + 1
    }
}

/// All lattice points within the closed ball `|p - center| <= radius`,
/// labelled by integer coordinates and ordered lexicographically.
pub fn build_lattice_disk(lattice: &Lattice, radius: f64, center: &[f64]) -> Result<Configuration> {
    if !(radius > 0.0) {
        return Err(Error::Invalid(format!("disk radius must be positive, got {radius}")));
    }
    if center.len() != lattice.dim {
        return Err(Error::Invalid("center dimension mismatch".into()));
    }
    let d = lattice.dim;
    let bound = lattice.coordinate_bound(radius + norm(center));
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    let mut n = vec![-bound; d];
    'outer: loop {
        let p = lattice.point(&n);
        if norm(&sub(&p, center)) <= radius {
            ids.push(SiteId(n.clone()));
            positions.extend(p);
        }
        for k in (0..d).rev() {
            if n[k] < bound {
                n[k] += 1;
                for m in n.iter_mut().skip(k + 1) {
                    *m = -bound;
                }
                continue 'outer;
            }
        }
        break;
    }
    if ids.is_empty() {
        return Err(Error::Empty(format!(
            "no lattice point within {radius} of the given center"
        )));
    }
    Configuration::new(d, ids, positions)
}

/// Drops the listed sites; every id must be present.
pub fn remove_sites(config: &Configuration, ids: &[SiteId]) -> Result<Configuration> {
    let mut drop = HashSet::with_capacity(ids.len());
    for id in ids {
        config.require_index(id)?;
        drop.insert(id);
    }
    let d = config.dim();
    let mut kept_ids = Vec::with_capacity(config.len());
    let mut positions = Vec::with_capacity(config.len() * d);
    for i in 0..config.len() {
        if !drop.contains(config.id(i)) {
            kept_ids.push(config.id(i).clone());
            positions.extend_from_slice(config.position(i));
        }
    }
    Configuration::new(d, kept_ids, positions)
}

/// Shifts every coordinate by an independent uniform draw from `[0, amplitude]`.
///
/// Draws are taken in site order, coordinate by coordinate, from a ChaCha8
/// stream seeded with `seed`.
pub fn perturb(config: &Configuration, amplitude: f64, seed: u64) -> Result<Configuration> {
    if !(amplitude >= 0.0) {
        return Err(Error::Invalid(format!("amplitude must be non-negative, got {amplitude}")));
    }
    if amplitude == 0.0 {
        return Ok(config.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = config
        .positions()
        .iter()
        .map(|x| x + amplitude * rng.random::<f64>())
        .collect();
    config.with_positions(positions)
}

/// Maps every position to `rotation * p + shift`.
pub fn apply_isometry(config: &Configuration, rotation: &[f64], shift: &[f64]) -> Result<Configuration> {
    let d = config.dim();
    if rotation.len() != d * d || shift.len() != d {
        return Err(Error::Invalid("isometry dimension mismatch".into()));
    }
    for a in 0..d {
        for b in 0..d {
            let dot: f64 = (0..d).map(|k| rotation[k * d + a] * rotation[k * d + b]).sum();
            let expect = if a == b { 1.0 } else { 0.0 };
            if (dot - expect).abs() > 1e-12 {
                return Err(Error::Invalid("rotation matrix is not orthogonal".into()));
            }
        }
    }
    let mut positions = Vec::with_capacity(config.positions().len());
    for i in 0..config.len() {
        let p = config.position(i);
        for r in 0..d {
            positions.push((0..d).map(|c| rotation[r * d + c] * p[c]).sum::<f64>() + shift[r]);
        }
    }
    config.with_positions(positions)
}

/// Relabels positions: the site with id `l` receives the position formerly at `perm[l]`.
pub fn apply_permutation(config: &Configuration, perm: &HashMap<SiteId, SiteId>) -> Result<Configuration> {
    if perm.len() != config.len() {
        return Err(Error::Invalid(format!(
            "permutation has {} entries for {} sites",
            perm.len(),
            config.len()
        )));
    }
    let mut seen = HashSet::with_capacity(perm.len());
    let mut positions = Vec::with_capacity(config.positions().len());
    for i in 0..config.len() {
        let source = perm
            .get(config.id(i))
            .ok_or_else(|| Error::UnknownSite(config.id(i).clone()))?;
        let j = config.require_index(source)?;
        if !seen.insert(j) {
            return Err(Error::Invalid(format!("permutation is not injective at {source}")));
        }
        positions.extend_from_slice(config.position(j));
    }
    config.with_positions(positions)
}

/// Spatial hash for looking up sites by position.
pub struct SiteLocator<'a> {
    config: &'a Configuration,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> SiteLocator<'a> {
    pub fn new(config: &'a Configuration) -> Self {
        let cell = if config.min_sep().is_finite() {
            config.min_sep()
        } else {
            1.0
        };
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for i in 0..config.len() {
            cells.entry(Self::key(config.position(i), cell)).or_default().push(i);
        }
        SiteLocator { config, cell, cells }
    }

    fn key(p: &[f64], cell: f64) -> Vec<i64> {
        p.iter().map(|x| (x / cell).floor() as i64).collect()
    }

    /// Index of the site within `tol` of `p`, if any.
    pub fn find(&self, p: &[f64], tol: f64) -> Option<usize> {
        let base = Self::key(p, self.cell);
        let d = base.len();
        let mut offset = vec![-1i64; d];
        loop {
            let key: Vec<i64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            if let Some(list) = self.cells.get(&key) {
                for &i in list {
                    if norm(&sub(self.config.position(i), p)) <= tol {
                        return Some(i);
                    }
                }
            }
            let mut k = 0;
            loop {
                if k == d {
                    return None;
                }
                if offset[k] < 1 {
                    offset[k] += 1;
                    break;
                }
                offset[k] = -1;
                k += 1;
            }
        }
    }
}

/// Displacements `u` over a reference configuration, zero outside the free set.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    reference: Configuration,
    values: Vec<f64>,
    free: Vec<bool>,
}

impl DisplacementField {
    pub fn zeros(reference: Configuration, free: Vec<bool>) -> Result<Self> {
        if free.len() != reference.len() {
            return Err(Error::Invalid("free mask length mismatch".into()));
        }
        let values = vec![0.0; reference.positions().len()];
        Ok(DisplacementField {
            reference,
            values,
            free,
        })
    }

    /// Field with every site free.
    pub fn unconstrained(reference: Configuration, values: Vec<f64>) -> Result<Self> {
        let free = vec![true; reference.len()];
        DisplacementField::from_values(reference, values, free)
    }

    pub fn from_values(reference: Configuration, values: Vec<f64>, free: Vec<bool>) -> Result<Self> {
        if values.len() != reference.positions().len() || free.len() != reference.len() {
            return Err(Error::Invalid("displacement field shape mismatch".into()));
        }
        let d = reference.dim();
        for (i, is_free) in free.iter().enumerate() {
            if !is_free && values[i * d..(i + 1) * d].iter().any(|&v| v != 0.0) {
                return Err(Error::Invalid(format!(
                    "clamped site {} carries a nonzero displacement",
                    reference.id(i)
                )));
            }
        }
        Ok(DisplacementField {
            reference,
            values,
            free,
        })
    }

    pub fn reference(&self) -> &Configuration {
        &self.reference
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    pub fn value(&self, i: usize) -> &[f64] {
        let d = self.reference.dim();
        &self.values[i * d..(i + 1) * d]
    }

    /// Indices of free sites in reference order.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.free.len()).filter(|&i| self.free[i]).collect()
    }

    /// Packs the free components into a flat vector.
    pub fn free_dofs(&self) -> Vec<f64> {
        self.free_indices()
            .into_iter()
            .flat_map(|i| self.value(i).to_vec())
            .collect()
    }

    /// Copy with the free components replaced by `dofs`.
    pub fn with_free_dofs(&self, dofs: &[f64]) -> Self {
        let d = self.reference.dim();
        let mut values = vec![0.0; self.values.len()];
        for (k, i) in self.free_indices().into_iter().enumerate() {
            values[i * d..(i + 1) * d].copy_from_slice(&dofs[k * d..(k + 1) * d]);
        }
        DisplacementField {
            reference: self.reference.clone(),
            values,
            free: self.free.clone(),
        }
    }

    /// Deformed configuration `x + u`.
    pub fn deformed(&self) -> Result<Configuration> {
        let positions = self
            .reference
            .positions()
            .iter()
            .zip(&self.values)
            .map(|(x, u)| x + u)
            .collect();
        self.reference.with_positions(positions)
    }

    /// The field transferred onto another reference by id, zero where absent.
    /// Every site of the target counts as free.
    pub fn extend_to(&self, target: &Configuration) -> Result<Self> {
        let d = target.dim();
        if d != self.reference.dim() {
            return Err(Error::Invalid("dimension mismatch".into()));
        }
        let mut values = vec![0.0; target.positions().len()];
        for i in 0..self.reference.len() {
            if let Some(j) = target.index_of(self.reference.id(i)) {
                values[j * d..(j + 1) * d].copy_from_slice(self.value(i));
            }
        }
        DisplacementField::unconstrained(target.clone(), values)
    }

    /// `self - other` over the same reference (all sites free).
    pub fn difference(&self, other: &DisplacementField) -> Result<Self> {
        if self.reference.ids() != other.reference.ids() {
            return Err(Error::Invalid("fields live on different references".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        DisplacementField::unconstrained(self.reference.clone(), values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Finite-difference stencil semi-norm selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StencilNormSpec {
    /// All pairs, weighted by `exp(-2 gamma |rho|)`.
    ExpGamma { gamma: f64 },
    /// Fixed stencil directions with unit weight.
    NearestNeighbor { dirs: Vec<Vec<f64>> },
}

/// Pairs with weight below this are dropped from the exponential stencil.
pub const STENCIL_WEIGHT_FLOOR: f64 = 1e-14;

impl StencilNormSpec {
    /// `±s A e_i` for every primitive vector.
    pub fn nearest_neighbor(lattice: &Lattice) -> Self {
        let mut dirs = Vec::new();
        for v in lattice.primitive_vectors() {
            dirs.push(v.iter().map(|x| -x).collect());
            dirs.push(v);
        }
        StencilNormSpec::NearestNeighbor { dirs }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StencilNormSpec::ExpGamma { gamma } => {
                if !(*gamma > 0.0) {
                    return Err(Error::Invalid(format!("gamma must be positive, got {gamma}")));
                }
            }
            StencilNormSpec::NearestNeighbor { dirs } => {
                if dirs.is_empty() {
                    return Err(Error::Invalid("stencil has no directions".into()));
                }
                for d in dirs {
                    let closed = dirs
                        .iter()
                        .any(|e| e.len() == d.len() && e.iter().zip(d).all(|(a, b)| (a + b).abs() < 1e-12));
                    if !closed {
                        return Err(Error::Invalid("stencil is not closed under negation".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `sqrt( sum_l sum_rho w(rho) |u(l + rho) - u(l)|^2 )` over the field's reference.
///
/// Stencil points that do not hit a site (vacancies, domain edge) are skipped.
pub fn stencil_norm(u: &DisplacementField, spec: &StencilNormSpec) -> Result<f64> {
    spec.validate()?;
    let config = u.reference();
    let d = config.dim();
    let diff2 = |i: usize, j: usize| -> f64 {
        u.value(i)
            .iter()
            .zip(u.value(j))
            .map(|(a, b)| (b - a) * (b - a))
            .sum()
    };
    let mut total = 0.0;
    match spec {
        StencilNormSpec::ExpGamma { gamma } => {
            let rmax = -STENCIL_WEIGHT_FLOOR.ln() / (2.0 * gamma);
            for i in 0..config.len() {
                for j in (i + 1)..config.len() {
                    let r = config.distance(i, j);
                    if r <= rmax {
                        // (i, j) and (j, i) both appear in the stencil sum
                        total += 2.0 * (-2.0 * gamma * r).exp() * diff2(i, j);
                    }
                }
            }
        }
        StencilNormSpec::NearestNeighbor { dirs } => {
            let locator = SiteLocator::new(config);
            let tol = 1e-6 * config.min_sep().min(1.0);
            for i in 0..config.len() {
                for dir in dirs {
                    if dir.len() != d {
                        return Err(Error::Invalid("stencil direction dimension mismatch".into()));
                    }
                    let target: Vec<f64> = config.position(i).iter().zip(dir).map(|(p, r)| p + r).collect();
                    if let Some(j) = locator.find(&target, tol) {
                        total += diff2(i, j);
                    }
                }
            }
        }
    }
    Ok(total.sqrt())
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
