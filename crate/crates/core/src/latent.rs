//! Weight-space evaluation of the same reward models as [`crate::gp`].
//!
//! Every kernel in [`KernelVariant`] comes from a finite set of Gaussian
//! latent vectors: a shared *core* block (population weights, plus one slot
//! per study week for the time-varying variants) and one block per user
//! (the random effects on the designated coordinates). An observation loads
//! on the core and on its own user's block only, so the joint precision is
//! block-arrowhead and the user blocks are eliminated by Schur complement.
//!
//! With prior factors `P = L Lᵀ` and whitened latents `θ = L z`:
//!
//! ```text
//!   A = I + Lᵀ HᵀH L / σ²      b = Lᵀ Hᵀ R̃ / σ²
//!   R̃ᵀ(K + σ²I)⁻¹R̃ = R̃ᵀR̃/σ² − bᵀA⁻¹b
//!   log det(K + σ²I) = n log σ² + log det A
//!   z | D ~ N(A⁻¹b, A⁻¹)
//! ```
//!
//! `HᵀH`, `HᵀR̃` and `R̃ᵀR̃` do not depend on the variance components, so they
//! are accumulated once and every evidence evaluation costs
//! O(#users · d_user · d_core² + d_core³) regardless of n.
//!
//! Time coordinates are integer slots in `0..horizon`; later times use the
//! last slot.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::GpError;
use crate::gp::{self, KernelVariant, Posterior};
use crate::linalg;
use crate::model::{Hyperparameters, UserId};

#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    variant: KernelVariant,
    dim: usize,
    random_effect_coords: Vec<usize>,
    time_effect_coords: Vec<usize>,
    horizon: usize,
}

type SparseRow = Vec<(usize, f64)>;

impl LatentModel {
    /// `random_effect_coords` are the φ coordinates carrying user random
    /// effects, `time_effect_coords` those carrying the time-varying effect;
    /// `horizon` is the number of time slots.
    pub fn new(
        variant: KernelVariant,
        dim: usize,
        random_effect_coords: Vec<usize>,
        time_effect_coords: Vec<usize>,
        horizon: usize,
    ) -> Result<Self, GpError> {
        for c in random_effect_coords.iter().chain(&time_effect_coords) {
            if *c >= dim {
                return Err(GpError::DimensionMismatch {
                    expected: dim,
                    actual: *c + 1,
                });
            }
        }
        if let KernelVariant::Tvgp { forgetting } = variant {
            gp::check_forgetting(forgetting)?;
        }
        Ok(Self {
            variant,
            dim,
            random_effect_coords,
            time_effect_coords,
            horizon: horizon.max(1),
        })
    }

    pub fn variant(&self) -> KernelVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn random_effect_coords(&self) -> &[usize] {
        &self.random_effect_coords
    }

    pub fn time_effect_coords(&self) -> &[usize] {
        &self.time_effect_coords
    }

    pub fn core_dim(&self) -> usize {
        match self.variant {
            KernelVariant::Complete | KernelVariant::Pooled => self.dim,
            KernelVariant::PersonSpecific => 0,
            KernelVariant::TimeVarying => self.dim + self.horizon * self.time_effect_coords.len(),
            KernelVariant::Tvgp { .. } => self.dim * self.horizon,
        }
    }

    pub fn user_dim(&self) -> usize {
        match self.variant {
            KernelVariant::Complete | KernelVariant::Tvgp { .. } => 0,
            KernelVariant::Pooled | KernelVariant::TimeVarying => self.random_effect_coords.len(),
            KernelVariant::PersonSpecific => self.dim,
        }
    }

    pub fn slot(&self, time: f64) -> usize {
        let t = libm::round(time);
        if t <= 0.0 {
            0
        } else {
            (t as usize).min(self.horizon - 1)
        }
    }

    /// Unit loadings `(weight coordinate, core latent)` of the target weight
    /// vector at `slot`.
    fn core_loadings(&self, slot: usize) -> Vec<(usize, usize)> {
        let p = self.dim;
        match self.variant {
            KernelVariant::Complete | KernelVariant::Pooled => (0..p).map(|i| (i, i)).collect(),
            KernelVariant::PersonSpecific => Vec::new(),
            KernelVariant::TimeVarying => {
                let rv = self.time_effect_coords.len();
                let mut out: Vec<_> = (0..p).map(|i| (i, i)).collect();
                out.extend(
                    self.time_effect_coords
                        .iter()
                        .enumerate()
                        .map(|(q, &c)| (c, p + slot * rv + q)),
                );
                out
            }
            KernelVariant::Tvgp { .. } => (0..p).map(|i| (i, slot * p + i)).collect(),
        }
    }

    fn user_loadings(&self) -> Vec<(usize, usize)> {
        match self.variant {
            KernelVariant::Complete | KernelVariant::Tvgp { .. } => Vec::new(),
            KernelVariant::Pooled | KernelVariant::TimeVarying => self
                .random_effect_coords
                .iter()
                .enumerate()
                .map(|(q, &c)| (c, q))
                .collect(),
            KernelVariant::PersonSpecific => (0..self.dim).map(|i| (i, i)).collect(),
        }
    }

    /// Sparse design rows of one observation on the core and user blocks.
    fn design(&self, phi: &[f64], time: f64) -> (SparseRow, SparseRow) {
        let slot = self.slot(time);
        let core = self
            .core_loadings(slot)
            .into_iter()
            .filter(|&(i, _)| phi[i] != 0.0)
            .map(|(i, j)| (j, phi[i]))
            .collect();
        let user = self
            .user_loadings()
            .into_iter()
            .filter(|&(i, _)| phi[i] != 0.0)
            .map(|(i, j)| (j, phi[i]))
            .collect();
        (core, user)
    }

    /// Square-root prior factors `(L_core, L_user)`.
    pub fn prior_factors(
        &self,
        hp: &Hyperparameters,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), GpError> {
        if hp.dim() != self.dim {
            return Err(GpError::DimensionMismatch {
                expected: self.dim,
                actual: hp.dim(),
            });
        }
        let sub = |m: &DMatrix<f64>, idx: &[usize]| {
            DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
        };
        let population = || linalg::psd_sqrt(&hp.prior_cov);
        let random = || linalg::psd_sqrt(&sub(&hp.random_effect_cov, &self.random_effect_coords));
        let empty = || DMatrix::zeros(0, 0);
        Ok(match self.variant {
            KernelVariant::Complete => (population(), empty()),
            KernelVariant::Pooled => (population(), random()),
            KernelVariant::PersonSpecific => (
                empty(),
                linalg::psd_sqrt(&(&hp.prior_cov + &hp.random_effect_cov)),
            ),
            KernelVariant::TimeVarying => {
                let (dv, ls) = gp::time_effect(hp)?;
                let corr = DMatrix::from_fn(self.horizon, self.horizon, |a, b| {
                    gp::time_correlation(a as f64, b as f64, ls)
                });
                let temporal = linalg::psd_sqrt(&corr)
                    .kronecker(&linalg::psd_sqrt(&sub(dv, &self.time_effect_coords)));
                let p = self.dim;
                let d = self.core_dim();
                let mut core = DMatrix::zeros(d, d);
                core.view_mut((0, 0), (p, p)).copy_from(&population());
                core.view_mut((p, p), (d - p, d - p)).copy_from(&temporal);
                (core, random())
            }
            KernelVariant::Tvgp { forgetting } => {
                let corr = DMatrix::from_fn(self.horizon, self.horizon, |a, b| {
                    gp::forgetting_discount(a as f64, b as f64, forgetting)
                });
                (linalg::psd_sqrt(&corr).kronecker(&population()), empty())
            }
        })
    }
}

#[derive(Debug, Clone)]
struct UserBlock {
    n: usize,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// `HᵀH`, `HᵀR̃`, `R̃ᵀR̃` for a fixed model and prior mean.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    n: usize,
    rss: f64,
    core_gram: DMatrix<f64>,
    core_rhs: DVector<f64>,
    users: BTreeMap<UserId, UserBlock>,
    prior_mean: DVector<f64>,
}

impl SufficientStats {
    pub fn new(model: &LatentModel, prior_mean: DVector<f64>) -> Self {
        let dc = model.core_dim();
        Self {
            n: 0,
            rss: 0.0,
            core_gram: DMatrix::zeros(dc, dc),
            core_rhs: DVector::zeros(dc),
            users: BTreeMap::new(),
            prior_mean,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.users.keys().copied()
    }

    pub fn add(
        &mut self,
        model: &LatentModel,
        user: UserId,
        time: f64,
        phi: &[f64],
        reward: f64,
    ) -> Result<(), GpError> {
        if phi.len() != model.dim() {
            return Err(GpError::DimensionMismatch {
                expected: model.dim(),
                actual: phi.len(),
            });
        }
        if !reward.is_finite() || phi.iter().any(|x| !x.is_finite()) {
            return Err(GpError::NonFinite);
        }
        let centered = reward
            - phi
                .iter()
                .zip(self.prior_mean.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        let (core, user_row) = model.design(phi, time);
        self.n += 1;
        self.rss += centered * centered;
        for &(i, a) in &core {
            self.core_rhs[i] += a * centered;
            for &(j, b) in &core {
                self.core_gram[(i, j)] += a * b;
            }
        }
        let du = model.user_dim();
        if du > 0 {
            let dc = model.core_dim();
            let block = self.users.entry(user).or_insert_with(|| UserBlock {
                n: 0,
                gram: DMatrix::zeros(du, du),
                cross: DMatrix::zeros(du, dc),
                rhs: DVector::zeros(du),
            });
            block.n += 1;
            for &(i, a) in &user_row {
                block.rhs[i] += a * centered;
                for &(j, b) in &user_row {
                    block.gram[(i, j)] += a * b;
                }
                for &(j, b) in &core {
                    block.cross[(i, j)] += a * b;
                }
            }
        } else {
            self.users.entry(user).or_insert_with(|| UserBlock {
                n: 0,
                gram: DMatrix::zeros(0, 0),
                cross: DMatrix::zeros(0, model.core_dim()),
                rhs: DVector::zeros(0),
            });
            if let Some(b) = self.users.get_mut(&user) {
                b.n += 1;
            }
        }
        Ok(())
    }
}

struct SolvedUser {
    chol: Cholesky<f64, Dyn>,
    coupling: DMatrix<f64>,
    mean: DVector<f64>,
}

/// The factorized posterior for one set of hyperparameters.
pub struct Solved<'m> {
    model: &'m LatentModel,
    prior_mean: DVector<f64>,
    core_factor: DMatrix<f64>,
    user_factor: DMatrix<f64>,
    schur: Option<Cholesky<f64, Dyn>>,
    core_mean: DVector<f64>,
    users: BTreeMap<UserId, SolvedUser>,
    log_evidence: f64,
}

pub fn solve<'m>(
    model: &'m LatentModel,
    stats: &SufficientStats,
    hp: &Hyperparameters,
) -> Result<Solved<'m>, GpError> {
    if !(hp.noise_var > 0.0 && hp.noise_var.is_finite()) {
        return Err(crate::error::ModelError::NonPositive("noise_var").into());
    }
    let (lc, lu) = model.prior_factors(hp)?;
    let inv = 1.0 / hp.noise_var;
    let dc = model.core_dim();
    let du = model.user_dim();

    let dc_diag = diagonal_of(&lc);
    let du_diag = diagonal_of(&lu);
    let mut schur = sandwich(&lc, dc_diag.as_deref(), &stats.core_gram, &lc, dc_diag.as_deref(), inv);
    for i in 0..dc {
        schur[(i, i)] += 1.0;
    }
    let core_rhs = lc.transpose() * &stats.core_rhs * inv;
    let mut reduced_rhs = core_rhs.clone();
    let mut log_det = 0.0;

    let mut pending = Vec::with_capacity(stats.users.len());
    for (&user, block) in &stats.users {
        if du == 0 {
            continue;
        }
        let mut a = sandwich(&lu, du_diag.as_deref(), &block.gram, &lu, du_diag.as_deref(), inv);
        for i in 0..du {
            a[(i, i)] += 1.0;
        }
        let (chol, _) = linalg::cholesky_jittered(&a)?;
        log_det += linalg::log_det(&chol);
        let a_uc = sandwich(&lu, du_diag.as_deref(), &block.cross, &lc, dc_diag.as_deref(), inv);
        let b_u = lu.transpose() * &block.rhs * inv;
        let coupling = chol.solve(&a_uc);
        let local = chol.solve(&b_u);
        if dc > 0 {
            subtract_tn_product(&mut schur, &a_uc, &coupling);
            reduced_rhs -= a_uc.transpose() * &local;
        }
        pending.push((user, chol, coupling, local, b_u));
    }

    let (schur_chol, core_mean) = if dc > 0 {
        let (c, _) = linalg::cholesky_jittered(&schur)?;
        log_det += linalg::log_det(&c);
        let m = c.solve(&reduced_rhs);
        (Some(c), m)
    } else {
        (None, DVector::zeros(0))
    };

    let mut explained = core_rhs.dot(&core_mean);
    let mut users = BTreeMap::new();
    for (user, chol, coupling, local, b_u) in pending {
        let mean = if dc > 0 {
            local - &coupling * &core_mean
        } else {
            local
        };
        explained += b_u.dot(&mean);
        users.insert(
            user,
            SolvedUser {
                chol,
                coupling,
                mean,
            },
        );
    }
    let n = stats.n as f64;
    let quad = stats.rss * inv - explained;
    let log_evidence =
        -0.5 * (quad + n * libm::log(hp.noise_var) + log_det + n * libm::log(2.0 * PI));

    Ok(Solved {
        model,
        prior_mean: stats.prior_mean.clone(),
        core_factor: lc,
        user_factor: lu,
        schur: schur_chol,
        core_mean,
        users,
        log_evidence,
    })
}

impl Solved<'_> {
    /// Marginal log-likelihood of the centered rewards.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    /// Posterior of `w_{user}` at `time`.
    pub fn posterior(&self, user: UserId, time: f64) -> Posterior {
        let model = self.model;
        let p = model.dim();
        let slot = model.slot(time);
        let dc = model.core_dim();
        let du = model.user_dim();

        let mut fc = DMatrix::zeros(p, dc);
        for (i, j) in model.core_loadings(slot) {
            let row = self.core_factor.row(j).into_owned();
            let mut target = fc.row_mut(i);
            target += row;
        }
        let mut fu = DMatrix::zeros(p, du);
        for (i, j) in model.user_loadings() {
            let row = self.user_factor.row(j).into_owned();
            let mut target = fu.row_mut(i);
            target += row;
        }

        let solved_user = self.users.get(&user).filter(|_| du > 0);
        let mut mean = self.prior_mean.clone();
        if dc > 0 {
            mean += &fc * &self.core_mean;
        }
        let mut cov = DMatrix::zeros(p, p);
        match solved_user {
            Some(u) => {
                mean += &fu * &u.mean;
                if let Some(schur) = &self.schur {
                    let g = &fc - &fu * &u.coupling;
                    cov += &g * schur.solve(&g.transpose());
                }
                cov += &fu * u.chol.solve(&fu.transpose());
            }
            None => {
                if let Some(schur) = &self.schur {
                    cov += &fc * schur.solve(&fc.transpose());
                }
                cov += &fu * fu.transpose();
            }
        }
        linalg::symmetrize(&mut cov);
        Posterior { mean, cov }
    }
}

fn diagonal_of(m: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = m.nrows();
    let diag = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0));
    diag.then(|| (0..n).map(|i| m[(i, i)]).collect())
}

/// `Lᵀ M R · scale`, with a fast path for diagonal factors.
fn sandwich(
    l: &DMatrix<f64>,
    l_diag: Option<&[f64]>,
    m: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_diag: Option<&[f64]>,
    scale: f64,
) -> DMatrix<f64> {
    match (l_diag, r_diag) {
        (Some(ld), Some(rd)) => {
            DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| ld[i] * m[(i, j)] * rd[j] * scale)
        }
        _ => l.transpose() * m * r * scale,
    }
}

/// `s −= aᵀ b` without temporaries.
fn subtract_tn_product(s: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    let k = a.nrows();
    if k == 0 {
        return;
    }
    let n = s.nrows();
    let (a, b) = (a.as_slice(), b.as_slice());
    let out = s.as_mut_slice();
    for (j, bj) in b.chunks_exact(k).enumerate() {
        for (i, ai) in a.chunks_exact(k).enumerate() {
            let acc: f64 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
            out[j * n + i] -= acc;
        }
    }
}

/// Convenience: posterior without keeping the factorization.
pub fn posterior(
    model: &LatentModel,
    stats: &SufficientStats,
    hp: &Hyperparameters,
    user: UserId,
    time: f64,
) -> Result<Posterior, GpError> {
    Ok(solve(model, stats, hp)?.posterior(user, time))
}

/// Marginal log-likelihood without building the per-user posteriors. Only
/// forward substitutions with each user factor are needed:
/// `bᵀA⁻¹b = r̃ᵀm + Σ_u ‖L_u⁻¹ b_u‖²` with `r̃` the reduced core right-hand side.
pub fn log_evidence(
    model: &LatentModel,
    stats: &SufficientStats,
    hp: &Hyperparameters,
) -> Result<f64, GpError> {
    if !(hp.noise_var > 0.0 && hp.noise_var.is_finite()) {
        return Err(crate::error::ModelError::NonPositive("noise_var").into());
    }
    let (lc, lu) = model.prior_factors(hp)?;
    let inv = 1.0 / hp.noise_var;
    let dc = model.core_dim();
    let du = model.user_dim();
    let dc_diag = diagonal_of(&lc);
    let du_diag = diagonal_of(&lu);

    let mut schur = sandwich(&lc, dc_diag.as_deref(), &stats.core_gram, &lc, dc_diag.as_deref(), inv);
    for i in 0..dc {
        schur[(i, i)] += 1.0;
    }
    let core_rhs = lc.transpose() * &stats.core_rhs * inv;
    let mut reduced_rhs = core_rhs;
    let mut log_det = 0.0;
    let mut explained = 0.0;

    if du > 0 {
        let mut fac = alloc::vec![0.0; du * du];
        let mut y = alloc::vec![0.0; du * dc];
        let mut z = alloc::vec![0.0; du];
        for block in stats.users.values() {
            let a = sandwich(&lu, du_diag.as_deref(), &block.gram, &lu, du_diag.as_deref(), inv);
            fac.copy_from_slice(a.as_slice());
            for i in 0..du {
                fac[i * du + i] += 1.0;
            }
            if !small_cholesky(&mut fac, du) {
                return Ok(solve(model, stats, hp)?.log_evidence());
            }
            log_det += (0..du).map(|i| 2.0 * libm::log(fac[i * du + i])).sum::<f64>();
            let a_uc = sandwich(&lu, du_diag.as_deref(), &block.cross, &lc, dc_diag.as_deref(), inv);
            y.copy_from_slice(a_uc.as_slice());
            for col in y.chunks_exact_mut(du) {
                forward_substitute(&fac, du, col);
            }
            let b_u = lu.transpose() * &block.rhs * inv;
            z.copy_from_slice(b_u.as_slice());
            forward_substitute(&fac, du, &mut z);
            explained += z.iter().map(|v| v * v).sum::<f64>();
            let out = schur.as_mut_slice();
            for (j, yj) in y.chunks_exact(du).enumerate() {
                reduced_rhs[j] -= yj.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
                for (i, yi) in y.chunks_exact(du).enumerate().skip(j) {
                    out[j * dc + i] -= yi.iter().zip(yj).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        for j in 0..dc {
            for i in 0..j {
                schur[(i, j)] = schur[(j, i)];
            }
        }
    }

    if dc > 0 {
        let (c, _) = linalg::cholesky_jittered(&schur)?;
        log_det += linalg::log_det(&c);
        let m = c.solve(&reduced_rhs);
        explained += reduced_rhs.dot(&m);
    }
    let n = stats.n as f64;
    let quad = stats.rss * inv - explained;
    Ok(-0.5 * (quad + n * libm::log(hp.noise_var) + log_det + n * libm::log(2.0 * PI)))
}

/// In-place lower Cholesky of a column-major `n×n` matrix; false when not
/// positive definite.
fn small_cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[k * n + j] * a[k * n + j];
        }
        if d.is_nan() || d <= 0.0 {
            return false;
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[j * n + i];
            for k in 0..j {
                s -= a[k * n + i] * a[k * n + j];
            }
            a[j * n + i] = s / d;
        }
    }
    true
}

/// Solves `L x = b` in place for the lower factor from [`small_cholesky`].
fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Builds statistics from a kernel-space history.
pub fn stats_from_history(
    model: &LatentModel,
    history: &gp::History,
    prior_mean: DVector<f64>,
) -> Result<SufficientStats, GpError> {
    let mut s = SufficientStats::new(model, prior_mean);
    for o in history.observations() {
        s.add(model, o.user, o.time, &o.phi, o.reward)?;
    }
    Ok(s)
}
