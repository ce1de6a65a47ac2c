//! Matrix product states in Vidal's Γ-λ canonical form.
//!
//! A state of `n` sites is stored as `n` rank-3 tensors `Γ[k]` with axes
//! `(left bond, physical, right bond)` and `n - 1` Schmidt vectors `λ[k]`
//! sitting on the internal bonds:
//!
//! ```text
//! Γ[0] --- λ[0] --- Γ[1] --- λ[1] --- ... --- λ[n-2] --- Γ[n-1]
//!  |                 |                                     |
//! ```
//!
//! Bond `k` separates sites `0..=k` from `k+1..n`, and `λ[k]` is the Schmidt
//! spectrum of that bipartition. The outer bonds have dimension one.
//!
//! One site may be tagged as the "system" site. Swaps move the tag along with
//! the physical index, so callers can track where a distinguished subsystem
//! sits inside a chain whose ordering changes during evolution.

use std::borrow::Cow;

use faer::{Mat, MatRef};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};

/// Relative guard below which Schmidt values are treated as zero when
/// dividing them out of a tensor.
pub const LAMBDA_GUARD: f64 = 1e-12;

/// Degenerate-cluster tolerance used when fixing the SVD gauge in
/// [`MpsState::canonicalize`].
const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("site {site} out of range for a chain of {len} sites")]
    SiteOutOfRange { site: usize, len: usize },
    #[error("bond {bond} out of range for a chain with {bonds} internal bonds")]
    BondOutOfRange { bond: usize, bonds: usize },
    #[error("gate acts on {gate_left}x{gate_right} but sites have dimensions {left}x{right}")]
    GateDimension { gate_left: usize, gate_right: usize, left: usize, right: usize },
    #[error("gate matrix is not unitary (defect {0:.3e})")]
    NotUnitary(f64),
    #[error("states have different layouts")]
    LayoutMismatch,
    #[error("bond dimension {needed} exceeds max_bond {max_bond}")]
    BondOverflow { needed: usize, max_bond: usize },
    #[error("two-site block vanished; the state has zero norm")]
    ZeroNorm,
    #[error("inconsistent tensors: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type MpsResult<T> = Result<T, MpsError>;

/// Rank-3 tensor with axes `(left, phys, right)`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    left: usize,
    phys: usize,
    right: usize,
    data: Vec<C64>,
}

impl Tensor3 {
    pub fn zeros(left: usize, phys: usize, right: usize) -> Self {
        Self { left, phys, right, data: vec![C64::new(0.0, 0.0); left * phys * right] }
    }

    pub fn from_vec(left: usize, phys: usize, right: usize, data: Vec<C64>) -> MpsResult<Self> {
        if data.len() != left * phys * right {
            return Err(MpsError::Inconsistent(format!(
                "tensor data of length {} does not fit shape ({left}, {phys}, {right})",
                data.len()
            )));
        }
        Ok(Self { left, phys, right, data })
    }

    /// `(left, phys, right)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.phys, self.right)
    }

    #[inline]
    fn idx(&self, a: usize, i: usize, b: usize) -> usize {
        (a * self.phys + i) * self.right + b
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> C64 {
        self.data[self.idx(a, i, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: C64) {
        let k = self.idx(a, i, b);
        self.data[k] = v;
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Slice at fixed physical index as a `left x right` matrix, with the
    /// columns scaled by `col_scale`.
    fn phys_slice(&self, i: usize, col_scale: &[f64]) -> Mat<C64> {
        Mat::from_fn(self.left, self.right, |a, b| self.get(a, i, b) * col_scale[b])
    }
}

/// Truncation policy applied after every two-site update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Singular values with `σ / σ_max <= svd_threshold` are discarded.
    pub svd_threshold: f64,
    pub max_bond: usize,
    /// Error out instead of capping when the threshold keeps more than
    /// `max_bond` values.
    pub strict: bool,
    /// Rescale the kept Schmidt values to unit square-sum.
    pub renormalize: bool,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { svd_threshold: 1e-4, max_bond: 64, strict: false, renormalize: true }
    }
}

impl Truncation {
    /// No compression: only exactly-zero singular values are dropped.
    pub fn exact() -> Self {
        Self { svd_threshold: 0.0, max_bond: usize::MAX, strict: false, renormalize: true }
    }

    pub fn with_threshold(svd_threshold: f64) -> Self {
        Self { svd_threshold, ..Self::default() }
    }

    /// Number of singular values to keep, or an overflow error in strict mode.
    fn keep_count(&self, s: &[f64]) -> MpsResult<usize> {
        let smax = s.first().copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return Err(MpsError::ZeroNorm);
        }
        let cut = self.svd_threshold * smax;
        let above = s.iter().take_while(|&&x| x > cut && x > 0.0).count();
        if above > self.max_bond {
            if self.strict {
                return Err(MpsError::BondOverflow { needed: above, max_bond: self.max_bond });
            }
            return Ok(self.max_bond);
        }
        Ok(above.max(1))
    }
}

/// A unitary acting on an ordered pair of adjacent sites. Row and column
/// indices are `i_left * d_right + i_right`.
#[derive(Clone, Debug)]
pub struct TwoSiteGate {
    matrix: Mat<C64>,
    d_left: usize,
    d_right: usize,
}

impl TwoSiteGate {
    /// Tolerance on `max |U^H U - 1|` accepted by [`TwoSiteGate::new`].
    pub const UNITARITY_TOL: f64 = 1e-12;

    pub fn new(matrix: Mat<C64>, d_left: usize, d_right: usize) -> MpsResult<Self> {
        let dim = d_left * d_right;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(MpsError::GateDimension {
                gate_left: matrix.nrows(),
                gate_right: matrix.ncols(),
                left: d_left,
                right: d_right,
            });
        }
        if !linalg::all_finite(matrix.as_ref()) {
            return Err(LinalgError::NonFinite.into());
        }
        let defect = linalg::unitarity_defect(matrix.as_ref());
        if defect >= Self::UNITARITY_TOL {
            return Err(MpsError::NotUnitary(defect));
        }
        Ok(Self { matrix, d_left, d_right })
    }

    pub fn identity(d_left: usize, d_right: usize) -> Self {
        let dim = d_left * d_right;
        let matrix = Mat::from_fn(dim, dim, |r, c| if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        Self { matrix, d_left, d_right }
    }

    /// Permutation `|i_l, i_r> -> |i_r, i_l>`, as a gate from `(d_left, d_right)`
    /// sites onto `(d_right, d_left)` sites.
    pub fn swap(d_left: usize, d_right: usize) -> Self {
        let dim = d_left * d_right;
        let mut matrix = Mat::<C64>::zeros(dim, dim);
        for il in 0..d_left {
            for ir in 0..d_right {
                matrix[(ir * d_left + il, il * d_right + ir)] = C64::new(1.0, 0.0);
            }
        }
        Self { matrix, d_left, d_right }
    }

    pub fn matrix(&self) -> MatRef<'_, C64> {
        self.matrix.as_ref()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d_left, self.d_right)
    }

    pub fn unitarity_defect(&self) -> f64 {
        linalg::unitarity_defect(self.matrix.as_ref())
    }
}

/// A run of sites with unit-dimension outer bonds, used to assemble chains
/// piecewise.
#[derive(Clone, Debug, PartialEq)]
pub struct MpsSegment {
    pub gammas: Vec<Tensor3>,
    pub lambdas: Vec<Vec<f64>>,
}

impl MpsSegment {
    /// Product segment from normalized local vectors.
    pub fn product(locals: &[Vec<C64>]) -> Self {
        let gammas = locals
            .iter()
            .map(|v| Tensor3 { left: 1, phys: v.len(), right: 1, data: v.clone() })
            .collect::<Vec<_>>();
        let lambdas = vec![vec![1.0]; locals.len().saturating_sub(1)];
        Self { gammas, lambdas }
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

/// Matrix product state in Vidal canonical form.
#[derive(Clone, Debug, PartialEq)]
pub struct MpsState {
    gammas: Vec<Tensor3>,
    lambdas: Vec<Vec<f64>>,
    site_dims: Vec<usize>,
    system_site: Option<usize>,
    discarded_weight: f64,
}

impl MpsState {
    /// Assemble a chain from raw tensors, checking bond consistency.
    pub fn from_parts(
        gammas: Vec<Tensor3>,
        lambdas: Vec<Vec<f64>>,
        system_site: Option<usize>,
    ) -> MpsResult<Self> {
        let n = gammas.len();
        if n == 0 {
            return Err(MpsError::Inconsistent("empty chain".into()));
        }
        if lambdas.len() != n - 1 {
            return Err(MpsError::Inconsistent(format!(
                "{} sites need {} bond vectors, got {}",
                n,
                n - 1,
                lambdas.len()
            )));
        }
        if gammas[0].left != 1 || gammas[n - 1].right != 1 {
            return Err(MpsError::Inconsistent("outer bonds must have dimension 1".into()));
        }
        for k in 0..n - 1 {
            let (r, l) = (gammas[k].right, gammas[k + 1].left);
            if r != lambdas[k].len() || l != lambdas[k].len() {
                return Err(MpsError::Inconsistent(format!(
                    "bond {k}: right dim {r}, lambda len {}, left dim {l}",
                    lambdas[k].len()
                )));
            }
        }
        if let Some(s) = system_site {
            if s >= n {
                return Err(MpsError::SiteOutOfRange { site: s, len: n });
            }
        }
        let site_dims = gammas.iter().map(|g| g.phys).collect();
        Ok(Self { gammas, lambdas, site_dims, system_site, discarded_weight: 0.0 })
    }

    /// Product state from normalized local vectors.
    pub fn product(locals: &[Vec<C64>], system_site: Option<usize>) -> MpsResult<Self> {
        let seg = MpsSegment::product(locals);
        Self::from_parts(seg.gammas, seg.lambdas, system_site)
    }

    /// Product of computational basis states `|levels[0], levels[1], ...>`.
    pub fn basis_state(dims: &[usize], levels: &[usize], system_site: Option<usize>) -> MpsResult<Self> {
        if dims.len() != levels.len() {
            return Err(MpsError::LayoutMismatch);
        }
        let locals = dims
            .iter()
            .zip(levels)
            .map(|(&d, &l)| {
                let mut v = vec![C64::new(0.0, 0.0); d];
                v[l] = C64::new(1.0, 0.0);
                v
            })
            .collect::<Vec<_>>();
        Self::product(&locals, system_site)
    }

    /// Concatenate segments, joining them with unit bonds.
    pub fn from_segments(segments: Vec<MpsSegment>, system_site: Option<usize>) -> MpsResult<Self> {
        let mut gammas = Vec::new();
        let mut lambdas = Vec::new();
        for seg in segments {
            if seg.is_empty() {
                continue;
            }
            if !gammas.is_empty() {
                lambdas.push(vec![1.0]);
            }
            gammas.extend(seg.gammas);
            lambdas.extend(seg.lambdas);
        }
        Self::from_parts(gammas, lambdas, system_site)
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn site_dims(&self) -> &[usize] {
        &self.site_dims
    }

    pub fn system_site_index(&self) -> Option<usize> {
        self.system_site
    }

    pub fn discarded_weight(&self) -> f64 {
        self.discarded_weight
    }

    pub fn gammas(&self) -> &[Tensor3] {
        &self.gammas
    }

    pub fn lambdas(&self) -> &[Vec<f64>] {
        &self.lambdas
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.lambdas.iter().map(Vec::len).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.lambdas.iter().map(Vec::len).max().unwrap_or(1)
    }

    pub(crate) fn set_discarded_weight(&mut self, w: f64) {
        self.discarded_weight = w;
    }

    fn check_site(&self, site: usize) -> MpsResult<()> {
        if site >= self.len() {
            return Err(MpsError::SiteOutOfRange { site, len: self.len() });
        }
        Ok(())
    }

    fn check_bond(&self, bond: usize) -> MpsResult<()> {
        if bond >= self.lambdas.len() {
            return Err(MpsError::BondOutOfRange { bond, bonds: self.lambdas.len() });
        }
        Ok(())
    }

    /// Schmidt vector on the bond left of `site` (`[1]` at the chain start).
    fn lambda_left(&self, site: usize) -> Cow<'_, [f64]> {
        if site == 0 {
            Cow::Owned(vec![1.0])
        } else {
            Cow::Borrowed(&self.lambdas[site - 1])
        }
    }

    /// Schmidt vector on the bond right of `site` (`[1]` at the chain end).
    fn lambda_right(&self, site: usize) -> Cow<'_, [f64]> {
        if site + 1 == self.len() {
            Cow::Owned(vec![1.0])
        } else {
            Cow::Borrowed(&self.lambdas[site])
        }
    }

    /// Contract the pair `(left_site, left_site + 1)` with `gate`, then split
    /// it again by a truncated SVD.
    pub fn apply_two_site_gate(&mut self, left_site: usize, gate: &TwoSiteGate, trunc: &Truncation) -> MpsResult<()> {
        self.update_pair(left_site, Some(gate), false, trunc)
    }

    /// Exchange the physical content of two adjacent sites.
    pub fn swap_adjacent(&mut self, left_site: usize, trunc: &Truncation) -> MpsResult<()> {
        self.update_pair(left_site, None, true, trunc)
    }

    /// `apply_two_site_gate` followed by `swap_adjacent`, fused into a single
    /// decomposition.
    pub fn apply_gate_then_swap(&mut self, left_site: usize, gate: &TwoSiteGate, trunc: &Truncation) -> MpsResult<()> {
        self.update_pair(left_site, Some(gate), true, trunc)
    }

    fn update_pair(
        &mut self,
        left: usize,
        gate: Option<&TwoSiteGate>,
        swap: bool,
        trunc: &Truncation,
    ) -> MpsResult<()> {
        let right = left + 1;
        self.check_site(left)?;
        self.check_site(right)?;
        let (d1, d2) = (self.site_dims[left], self.site_dims[right]);
        if let Some(g) = gate {
            if g.dims() != (d1, d2) {
                return Err(MpsError::GateDimension { gate_left: g.d_left, gate_right: g.d_right, left: d1, right: d2 });
            }
        }
        let g1 = &self.gammas[left];
        let g2 = &self.gammas[right];
        let (dl, dm, dr) = (g1.left, g1.right, g2.right);
        let lam_l = self.lambda_left(left);
        let lam_m = &self.lambdas[left];
        let lam_r = self.lambda_right(right);

        // rows (a, i), cols (j, b)
        let a_mat = Mat::from_fn(dl * d1, dm, |r, c| g1.data[r * dm + c] * lam_m[c]);
        let b_mat = Mat::from_fn(dm, d2 * dr, |r, c| g2.data[r * d2 * dr + c]);
        let pair = &a_mat * &b_mat;

        // rows (i, j), cols (a, b), outer Schmidt weights folded in
        let theta = Mat::from_fn(d1 * d2, dl * dr, |ij, ab| {
            let (i, j) = (ij / d2, ij % d2);
            let (a, b) = (ab / dr, ab % dr);
            pair[(a * d1 + i, j * dr + b)] * (lam_l[a] * lam_r[b])
        });
        let theta = match gate {
            Some(g) => &g.matrix * &theta,
            None => theta,
        };

        let (o1, o2) = if swap { (d2, d1) } else { (d1, d2) };
        let block = Mat::from_fn(dl * o1, o2 * dr, |row, col| {
            let (a, x) = (row / o1, row % o1);
            let (y, b) = (col / dr, col % dr);
            let ij = if swap { y * d2 + x } else { x * d2 + y };
            theta[(ij, a * dr + b)]
        });

        let svd = linalg::thin_svd(block.as_ref())?;
        let keep = trunc.keep_count(&svd.s)?;
        let total: f64 = svd.s.iter().map(|x| x * x).sum();
        let kept: f64 = svd.s[..keep].iter().map(|x| x * x).sum();
        let discarded = ((total - kept) / total).max(0.0);
        let scale = if trunc.renormalize { kept.sqrt() } else { 1.0 };
        let new_lambda: Vec<f64> = svd.s[..keep].iter().map(|x| x / scale).collect();

        let inv_l = guarded_inverse(&lam_l);
        let inv_r = guarded_inverse(&lam_r);
        let mut new_left = Tensor3::zeros(dl, o1, keep);
        for a in 0..dl {
            for x in 0..o1 {
                for al in 0..keep {
                    new_left.set(a, x, al, svd.u[(a * o1 + x, al)] * inv_l[a]);
                }
            }
        }
        let mut new_right = Tensor3::zeros(keep, o2, dr);
        for al in 0..keep {
            for y in 0..o2 {
                for b in 0..dr {
                    new_right.set(al, y, b, svd.v[(y * dr + b, al)].conj() * inv_r[b]);
                }
            }
        }

        self.gammas[left] = new_left;
        self.gammas[right] = new_right;
        self.lambdas[left] = new_lambda;
        self.discarded_weight += discarded;
        if swap {
            self.site_dims.swap(left, right);
            self.system_site = self.system_site.map(|s| {
                if s == left {
                    right
                } else if s == right {
                    left
                } else {
                    s
                }
            });
        }
        Ok(())
    }

    /// Schmidt spectrum on bond `bond` (between sites `bond` and `bond + 1`).
    pub fn schmidt_spectrum(&self, bond: usize) -> MpsResult<Vec<f64>> {
        self.check_bond(bond)?;
        Ok(self.lambdas[bond].clone())
    }

    /// Von Neumann entropy (bits) of the bipartition at `bond`.
    pub fn entanglement_entropy(&self, bond: usize) -> MpsResult<f64> {
        self.check_bond(bond)?;
        Ok(entropy_bits(&self.lambdas[bond]))
    }

    pub fn entropy_profile(&self) -> Vec<f64> {
        self.lambdas.iter().map(|l| entropy_bits(l)).collect()
    }

    /// `<self|other>` by left-to-right transfer-matrix contraction.
    pub fn overlap(&self, other: &MpsState) -> MpsResult<C64> {
        if self.site_dims != other.site_dims || self.system_site != other.system_site {
            return Err(MpsError::LayoutMismatch);
        }
        let mut env = Mat::<C64>::from_fn(1, 1, |_, _| C64::new(1.0, 0.0));
        for k in 0..self.len() {
            let (ga, gb) = (&self.gammas[k], &other.gammas[k]);
            let (la, lb) = (self.lambda_right(k), other.lambda_right(k));
            let mut next = Mat::<C64>::zeros(ga.right, gb.right);
            for i in 0..self.site_dims[k] {
                let ma = ga.phys_slice(i, &la);
                let mb = gb.phys_slice(i, &lb);
                let t = &env * &mb;
                next += ma.adjoint() * &t;
            }
            env = next;
        }
        Ok(env[(0, 0)])
    }

    pub fn norm_squared(&self) -> f64 {
        self.overlap(self).map(|z| z.re).unwrap_or(f64::NAN)
    }

    /// Amplitude of the computational basis configuration `levels`.
    pub fn amplitude(&self, levels: &[usize]) -> MpsResult<C64> {
        if levels.len() != self.len() {
            return Err(MpsError::LayoutMismatch);
        }
        let mut row = vec![C64::new(1.0, 0.0)];
        for (k, &lv) in levels.iter().enumerate() {
            let g = &self.gammas[k];
            if lv >= g.phys {
                return Err(MpsError::Inconsistent(format!("level {lv} out of range at site {k}")));
            }
            let lam = self.lambda_right(k);
            row = (0..g.right)
                .map(|b| (0..g.left).map(|a| row[a] * g.get(a, lv, b)).sum::<C64>() * lam[b])
                .collect();
        }
        Ok(row[0])
    }

    /// Amplitudes of the configurations equal to `background` except for
    /// one site `s` in `sites` that is raised to `level`, in order of `s`.
    pub fn one_hot_amplitudes(
        &self,
        background: &[usize],
        sites: std::ops::Range<usize>,
        level: usize,
    ) -> MpsResult<Vec<C64>> {
        let n = self.len();
        if background.len() != n || sites.end > n {
            return Err(MpsError::LayoutMismatch);
        }
        // lefts[k]: row vector after contracting sites 0..k in the background
        let mut lefts: Vec<Vec<C64>> = Vec::with_capacity(n + 1);
        lefts.push(vec![C64::new(1.0, 0.0)]);
        for k in 0..n {
            let next = self.step_row(&lefts[k], k, background[k]);
            lefts.push(next);
        }
        // rights[k]: column vector contracting sites k..n (on left bond of k)
        let mut rights: Vec<Vec<C64>> = vec![Vec::new(); n + 1];
        rights[n] = vec![C64::new(1.0, 0.0)];
        for k in (0..n).rev() {
            let g = &self.gammas[k];
            let lam = self.lambda_right(k);
            let lv = background[k];
            rights[k] = (0..g.left)
                .map(|a| (0..g.right).map(|b| g.get(a, lv, b) * lam[b] * rights[k + 1][b]).sum())
                .collect();
        }
        let mut out = Vec::with_capacity(sites.len());
        for s in sites {
            if level >= self.site_dims[s] {
                return Err(MpsError::Inconsistent(format!("level {level} out of range at site {s}")));
            }
            let row = self.step_row(&lefts[s], s, level);
            out.push(row.iter().zip(&rights[s + 1]).map(|(x, y)| x * y).sum());
        }
        Ok(out)
    }

    fn step_row(&self, row: &[C64], k: usize, level: usize) -> Vec<C64> {
        let g = &self.gammas[k];
        let lam = self.lambda_right(k);
        (0..g.right)
            .map(|b| (0..g.left).map(|a| row[a] * g.get(a, level, b)).sum::<C64>() * lam[b])
            .collect()
    }

    /// Single-site reduced density matrix. Valid in canonical form.
    pub fn local_density(&self, site: usize) -> MpsResult<Mat<C64>> {
        self.check_site(site)?;
        let g = &self.gammas[site];
        let (ll, lr) = (self.lambda_left(site), self.lambda_right(site));
        let d = g.phys;
        let mut rho = Mat::<C64>::zeros(d, d);
        for a in 0..g.left {
            let wa = ll[a] * ll[a];
            for b in 0..g.right {
                let w = wa * lr[b] * lr[b];
                if w == 0.0 {
                    continue;
                }
                for i in 0..d {
                    let x = g.get(a, i, b);
                    if x == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for ip in 0..d {
                        rho[(i, ip)] += x * g.get(a, ip, b).conj() * w;
                    }
                }
            }
        }
        Ok(rho)
    }

    /// Diagonal of [`MpsState::local_density`].
    pub fn local_populations(&self, site: usize) -> MpsResult<Vec<f64>> {
        let rho = self.local_density(site)?;
        Ok((0..rho.nrows()).map(|i| rho[(i, i)].re).collect())
    }

    /// Largest deviation of any bond's `Σ λ²` from one.
    pub fn lambda_norm_defect(&self) -> f64 {
        self.lambdas
            .iter()
            .map(|l| (l.iter().map(|x| x * x).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation from the Vidal orthonormality conditions: every
    /// `λ[k-1] Γ[k]` left-orthonormal and every `Γ[k] λ[k]` right-orthonormal.
    pub fn canonical_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for k in 0..self.len() {
            let g = &self.gammas[k];
            let (ll, lr) = (self.lambda_left(k), self.lambda_right(k));
            let mut left = Mat::<C64>::zeros(g.right, g.right);
            let mut right = Mat::<C64>::zeros(g.left, g.left);
            for i in 0..g.phys {
                let a_mat = Mat::from_fn(g.left, g.right, |a, b| g.get(a, i, b) * ll[a]);
                let b_mat = Mat::from_fn(g.left, g.right, |a, b| g.get(a, i, b) * lr[b]);
                left += a_mat.adjoint() * &a_mat;
                right += &b_mat * b_mat.adjoint();
            }
            for (m, lam) in [(&left, &lr), (&right, &ll)] {
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        // columns or rows belonging to a vanishing Schmidt value are unconstrained
                        if lam[r] <= LAMBDA_GUARD || lam[c] <= LAMBDA_GUARD {
                            continue;
                        }
                        let want = if r == c { 1.0 } else { 0.0 };
                        worst = worst.max((m[(r, c)] - C64::new(want, 0.0)).norm());
                    }
                }
            }
        }
        worst
    }

    /// Bring an arbitrary chain into Vidal canonical form.
    ///
    /// The gauge is fixed so that the right singular vectors of each split
    /// have a Hermitian positive semidefinite diagonal block within every
    /// cluster of degenerate singular values. An already canonical state is
    /// therefore returned unchanged up to rounding.
    pub fn canonicalize(&mut self, trunc: &Truncation) -> MpsResult<()> {
        let n = self.len();
        // Site tensors with the right Schmidt weights absorbed.
        let mut ms: Vec<Tensor3> = (0..n)
            .map(|k| {
                let mut t = self.gammas[k].clone();
                let lr = self.lambda_right(k).into_owned();
                for a in 0..t.left {
                    for i in 0..t.phys {
                        for b in 0..t.right {
                            let v = t.get(a, i, b) * lr[b];
                            t.set(a, i, b, v);
                        }
                    }
                }
                t
            })
            .collect();

        // Right-to-left LQ sweep: make every tensor right-orthonormal.
        for k in (0..n).rev() {
            let t = &ms[k];
            let (l, d, r) = t.shape();
            let m = Mat::from_fn(l, d * r, |a, c| t.data[a * d * r + c]);
            let qr = m.adjoint().qr();
            let mut q = qr.compute_thin_Q();
            let mut rr = qr.thin_R().to_owned();
            let kdim = rr.nrows();
            for j in 0..kdim {
                let diag = rr[(j, j)];
                let ph = if diag.norm() > 0.0 { diag / diag.norm() } else { C64::new(1.0, 0.0) };
                for c in 0..rr.ncols() {
                    rr[(j, c)] *= ph.conj();
                }
                for row in 0..q.nrows() {
                    q[(row, j)] *= ph;
                }
            }
            // m = lfac * qh with lfac = rr^H (l x kdim), qh = q^H (kdim x d r)
            let lfac = rr.adjoint().to_owned();
            ms[k] = Tensor3 {
                left: kdim,
                phys: d,
                right: r,
                data: {
                    let mut v = Vec::with_capacity(kdim * d * r);
                    for a in 0..kdim {
                        for c in 0..d * r {
                            v.push(q[(c, a)].conj());
                        }
                    }
                    v
                },
            };
            if k > 0 {
                let prev = &ms[k - 1];
                let (pl, pd, _) = prev.shape();
                let pm = Mat::from_fn(pl * pd, prev.right, |row, c| prev.data[row * prev.right + c]);
                let merged = &pm * &lfac;
                ms[k - 1] = Tensor3 {
                    left: pl,
                    phys: pd,
                    right: kdim,
                    data: (0..pl * pd).flat_map(|row| (0..kdim).map(move |c| (row, c))).map(|(row, c)| merged[(row, c)]).collect(),
                };
            } else if lfac[(0, 0)].norm() == 0.0 {
                return Err(MpsError::ZeroNorm);
            }
        }

        // Left-to-right SVD sweep producing Schmidt values, normalized.
        let mut carry = Mat::<C64>::from_fn(1, 1, |_, _| C64::new(1.0, 0.0));
        let mut prev_lambda = vec![1.0];
        let mut gammas = Vec::with_capacity(n);
        let mut lambdas = Vec::with_capacity(n - 1);
        let mut discarded = 0.0;
        for k in 0..n {
            let t = &ms[k];
            let (_, d, r) = t.shape();
            let tm = Mat::from_fn(t.left, d * r, |a, c| t.data[a * d * r + c]);
            let x = &carry * &tm; // (chi, d*r)
            let chi = x.nrows();
            let xm = Mat::from_fn(chi * d, r, |row, b| x[(row / d, (row % d) * r + b)]);
            let inv = guarded_inverse(&prev_lambda);
            if k + 1 == n {
                let nrm: f64 = (0..chi * d).map(|row| xm[(row, 0)].norm_sqr()).sum::<f64>().sqrt();
                if nrm == 0.0 {
                    return Err(MpsError::ZeroNorm);
                }
                let mut g = Tensor3::zeros(chi, d, 1);
                for a in 0..chi {
                    for i in 0..d {
                        g.set(a, i, 0, xm[(a * d + i, 0)] * inv[a] / nrm);
                    }
                }
                gammas.push(g);
                break;
            }
            let mut svd = linalg::thin_svd(xm.as_ref())?;
            fix_svd_gauge(&mut svd)?;
            let keep = trunc.keep_count(&svd.s)?;
            let total: f64 = svd.s.iter().map(|v| v * v).sum();
            let kept: f64 = svd.s[..keep].iter().map(|v| v * v).sum();
            discarded += ((total - kept) / total).max(0.0);
            let lam: Vec<f64> = svd.s[..keep].iter().map(|v| v / kept.sqrt()).collect();
            let mut g = Tensor3::zeros(chi, d, keep);
            for a in 0..chi {
                for i in 0..d {
                    for al in 0..keep {
                        g.set(a, i, al, svd.u[(a * d + i, al)] * inv[a]);
                    }
                }
            }
            gammas.push(g);
            carry = Mat::from_fn(keep, r, |al, b| svd.v[(b, al)].conj() * lam[al]);
            prev_lambda = lam.clone();
            lambdas.push(lam);
        }
        self.gammas = gammas;
        self.lambdas = lambdas;
        self.discarded_weight += discarded;
        Ok(())
    }
}

/// Entropy in bits of the distribution `λ²`; zero weights contribute nothing.
pub fn entropy_bits(lambda: &[f64]) -> f64 {
    lambda
        .iter()
        .map(|l| l * l)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>()
        .max(0.0)
}

/// `1/λ` for entries above `LAMBDA_GUARD * max(λ)`, zero otherwise.
pub fn guarded_inverse(lambda: &[f64]) -> Vec<f64> {
    let lmax = lambda.iter().copied().fold(0.0, f64::max);
    lambda
        .iter()
        .map(|&l| if l > LAMBDA_GUARD * lmax && l > 0.0 { 1.0 / l } else { 0.0 })
        .collect()
}

/// Rotate each degenerate cluster of singular triplets so that the
/// corresponding diagonal block of `v^H` is Hermitian positive semidefinite.
fn fix_svd_gauge(svd: &mut linalg::ThinSvd) -> MpsResult<()> {
    let r = svd.s.len();
    let cols = svd.v.nrows();
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let mut start = 0;
    while start < r {
        let mut end = start + 1;
        while end < r && (svd.s[start] - svd.s[end]).abs() <= DEGENERACY_TOL * smax {
            end += 1;
        }
        let size = end - start;
        if end <= cols {
            // w = (v^H)[cluster, cluster] = conj(v[cluster, cluster])^T
            let w = Mat::from_fn(size, size, |p, q| svd.v[(start + q, start + p)].conj());
            if w.norm_l2() > 0.0 {
                let q = linalg::polar_unitary(w.as_ref())?;
                // u[:, C] <- u[:, C] q ; v[:, C] <- v[:, C] q
                let u_block = Mat::from_fn(svd.u.nrows(), size, |row, c| svd.u[(row, start + c)]);
                let v_block = Mat::from_fn(svd.v.nrows(), size, |row, c| svd.v[(row, start + c)]);
                let u_new = &u_block * &q;
                let v_new = &v_block * &q;
                for c in 0..size {
                    for row in 0..svd.u.nrows() {
                        svd.u[(row, start + c)] = u_new[(row, c)];
                    }
                    for row in 0..svd.v.nrows() {
                        svd.v[(row, start + c)] = v_new[(row, c)];
                    }
                }
            }
        }
        start = end;
    }
    Ok(())
}
