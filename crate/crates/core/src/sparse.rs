//! Sparse PSA: a dictionary of `p` sparse sensitivity atoms fit to the
//! gradient field.
//!
//! The default [`Convention::SparseAtoms`] minimizes
//!
//! ```text
//! 1/2 sum_i |r_i - V a_i|^2 + lambda sum_k |v_k|_1   subject to |a_i|_2 = 1
//! ```
//!
//! over atoms `V` (d x p) and codes `a_i`, by alternating an exact code step
//! with lasso coordinate descent on the atoms. [`Convention::SparseCodes`] is
//! the usual dictionary-learning form instead: L1 on the codes, `|v_k|_2 <= 1`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binio::{BinReader, BinWriter};
use crate::error::{PsaError, Result};
use crate::linalg::{eigh_symmetric, Matrix, Vector};
use crate::mlp::GradientField;
use crate::psa::{kernel_from_gradients, psa, PsaDecomposition};

const MAGIC: &[u8; 4] = b"PSAS";
const VERSION: u32 = 1;

/// Slack allowed for an objective increase between consecutive steps,
/// relative to `1 + |objective|`.
pub const MONOTONE_SLACK: f64 = 1e-9;

const INNER_SWEEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convention {
    /// L1 on atoms, unit-norm codes.
    #[default]
    SparseAtoms,
    /// L1 on codes, atoms in the unit ball.
    SparseCodes,
}

impl std::str::FromStr for Convention {
    type Err = PsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse-atoms" => Ok(Convention::SparseAtoms),
            "sparse-codes" => Ok(Convention::SparseCodes),
            _ => Err(PsaError::domain(format!("unknown convention {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SparseInit {
    /// Top-`p` principal sensitivity maps, scaled by the square roots of
    /// their eigenvalues.
    #[default]
    Psm,
    /// Seeded Gaussian atoms.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePsaConfig {
    pub p: usize,
    pub lambda: f64,
    pub max_outer_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub seed: u64,
    pub convention: Convention,
    pub init: SparseInit,
    /// Extra runs from seeded random atoms; the lowest final objective wins.
    pub restarts: usize,
}

impl Default for SparsePsaConfig {
    fn default() -> Self {
        SparsePsaConfig {
            p: 3,
            lambda: 5.0,
            max_outer_iters: 100,
            tol: 1e-8,
            seed: 0,
            convention: Convention::SparseAtoms,
            init: SparseInit::Psm,
            restarts: 8,
        }
    }
}

impl SparsePsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(PsaError::domain("p must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(PsaError::domain(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(PsaError::domain(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(PsaError::domain("max_outer_iters must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePsaModel {
    pub config: SparsePsaConfig,
    /// d x p.
    pub atoms: Matrix,
    /// N x p.
    pub codes: Matrix,
    /// Objective after the initial code step, then after every outer iteration.
    pub objective_trace: Vec<f64>,
    /// Atom indices by decreasing directional sensitivity of the normalized atom.
    pub ranking: Vec<usize>,
    /// Directional sensitivity of each normalized atom, by atom index.
    pub sensitivities: Vec<f64>,
    pub converged: bool,
    /// Which start produced this solution: 0 is the configured init, `k > 0`
    /// the `k`-th random restart.
    pub start: usize,
}

impl SparsePsaModel {
    /// Atoms scaled to unit L2 norm, in ranking order. A zero atom stays zero.
    pub fn reported_maps(&self) -> Vec<Vector> {
        self.ranking
            .iter()
            .map(|&k| {
                let v = self.atoms.column(k);
                v.normalized().unwrap_or(v)
            })
            .collect()
    }

    /// Fraction of atom entries with magnitude below `threshold`.
    pub fn sparsity(&self, threshold: f64) -> f64 {
        let a = self.atoms.as_slice();
        a.iter().filter(|v| v.abs() < threshold).count() as f64 / a.len() as f64
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = &self.config;
        let mut w = BinWriter::create(path, MAGIC, VERSION)?;
        w.len32(c.p)?;
        w.f64(c.lambda)?;
        w.len32(c.max_outer_iters)?;
        w.f64(c.tol)?;
        w.u64(c.seed)?;
        w.u8(match c.convention {
            Convention::SparseAtoms => 0,
            Convention::SparseCodes => 1,
        })?;
        w.u8(match c.init {
            SparseInit::Psm => 0,
            SparseInit::Random => 1,
        })?;
        w.len32(c.restarts)?;
        w.len32(self.start)?;
        w.len32(self.atoms.rows())?;
        w.len32(self.codes.rows())?;
        w.f64s(self.atoms.as_slice())?;
        w.f64s(self.codes.as_slice())?;
        w.len32(self.objective_trace.len())?;
        w.f64s(&self.objective_trace)?;
        for &k in &self.ranking {
            w.len32(k)?;
        }
        w.f64s(&self.sensitivities)?;
        w.u8(u8::from(self.converged))?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, _) = BinReader::open(path, MAGIC, VERSION)?;
        let p = r.len32()?;
        let lambda = r.f64()?;
        let max_outer_iters = r.len32()?;
        let tol = r.f64()?;
        let seed = r.u64()?;
        let convention = match r.u8()? {
            0 => Convention::SparseAtoms,
            1 => Convention::SparseCodes,
            t => return Err(r.format_error(format!("unknown convention tag {t}"))),
        };
        let init = match r.u8()? {
            0 => SparseInit::Psm,
            1 => SparseInit::Random,
            t => return Err(r.format_error(format!("unknown init tag {t}"))),
        };
        let restarts = r.len32()?;
        let start = r.len32()?;
        let d = r.len32()?;
        let n = r.len32()?;
        let atoms = Matrix::from_row_major(d, p, r.f64s(d * p)?)?;
        let codes = Matrix::from_row_major(n, p, r.f64s(n * p)?)?;
        let t = r.len32()?;
        let objective_trace = r.f64s(t)?;
        if t == 0 {
            return Err(r.format_error("empty objective trace"));
        }
        let ranking = (0..p).map(|_| r.len32()).collect::<Result<Vec<_>>>()?;
        if ranking.iter().any(|&k| k >= p) {
            return Err(r.format_error("ranking index out of range"));
        }
        let sensitivities = r.f64s(p)?;
        let converged = r.u8()? != 0;
        r.expect_eof()?;
        Ok(SparsePsaModel {
            config: SparsePsaConfig {
                p,
                lambda,
                max_outer_iters,
                tol,
                seed,
                convention,
                init,
                restarts,
            },
            atoms,
            codes,
            objective_trace,
            ranking,
            sensitivities,
            converged,
            start,
        })
    }
}

fn check_shapes(field: &GradientField, atoms: &Matrix, codes: &Matrix) -> Result<()> {
    if atoms.rows() != field.dim() || codes.rows() != field.len() || atoms.cols() != codes.cols() {
        return Err(PsaError::dim(format!(
            "field {}x{}, atoms {}x{}, codes {}x{}",
            field.len(),
            field.dim(),
            atoms.rows(),
            atoms.cols(),
            codes.rows(),
            codes.cols()
        )));
    }
    Ok(())
}

fn residual_energy(field: &GradientField, atoms: &Matrix, codes: &Matrix) -> f64 {
    let (d, p) = atoms.shape();
    let mut total = 0.0;
    for i in 0..field.len() {
        let r = field.row(i);
        let a = codes.row(i);
        for j in 0..d {
            let v = atoms.row(j);
            let mut fit = 0.0;
            for k in 0..p {
                fit += v[k] * a[k];
            }
            total += (r[j] - fit).powi(2);
        }
    }
    0.5 * total
}

fn l1(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v.abs()).sum()
}

/// The sparse PSA objective with L1 on the atoms.
pub fn objective(
    field: &GradientField,
    atoms: &Matrix,
    codes: &Matrix,
    lambda: f64,
) -> Result<f64> {
    check_shapes(field, atoms, codes)?;
    Ok(residual_energy(field, atoms, codes) + lambda * l1(atoms))
}

/// The objective for either convention.
pub fn objective_for(
    convention: Convention,
    field: &GradientField,
    atoms: &Matrix,
    codes: &Matrix,
    lambda: f64,
) -> Result<f64> {
    check_shapes(field, atoms, codes)?;
    let penalty = match convention {
        Convention::SparseAtoms => l1(atoms),
        Convention::SparseCodes => l1(codes),
    };
    Ok(residual_energy(field, atoms, codes) + lambda * penalty)
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// `M^T M` with an exactly symmetric result.
fn gram(m: &Matrix) -> Matrix {
    let (n, p) = m.shape();
    let mut g = Matrix::zeros(p, p);
    for i in 0..n {
        let row = m.row(i);
        for a in 0..p {
            for b in a..p {
                g[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

/// `M^T r` for an n x p matrix `M` and a length-n vector `r`.
fn project(m: &Matrix, r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (row, &ri) in (0..m.rows()).map(|j| m.row(j)).zip(r) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * ri;
        }
    }
    out
}

/// Minimizes `1/2 a^T G a - b^T a` over the unit sphere, with `G = Q diag(g) Q^T`
/// given by its descending eigenvalues and eigenvector columns.
///
/// The minimizer is `a = (G - mu I)^{-1} b` for the unique `mu <= g_min`
/// solving `sum_j bt_j^2 / (g_j - mu)^2 = 1` (`bt = Q^T b`). When `b` has no
/// component along the bottom eigenspace and the remaining terms sum below 1,
/// `mu = g_min` and the deficit goes to the first bottom eigenvector. For
/// `b = 0` this is the minimal eigenvector of `G`.
fn sphere_code(g: &[f64], q: &Matrix, b: &[f64]) -> Vec<f64> {
    let p = g.len();
    let bt: Vec<f64> = (0..p)
        .map(|j| (0..p).map(|i| q[(i, j)] * b[i]).sum())
        .collect();
    let g_min = g[p - 1];
    let b_norm = bt.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = g[0].abs().max(b_norm).max(f64::MIN_POSITIVE);
    let gap_tol = 1e-12 * scale;
    let bottom: Vec<bool> = g.iter().map(|&gj| gj - g_min <= gap_tol).collect();
    let b_bottom = bt
        .iter()
        .zip(&bottom)
        .filter(|(_, &is_b)| is_b)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt();

    let mut at = vec![0.0; p];
    let rest_at_min: f64 = (0..p)
        .filter(|&j| !bottom[j])
        .map(|j| (bt[j] / (g[j] - g_min)).powi(2))
        .sum();
    if b_bottom <= 1e-12 * scale && rest_at_min <= 1.0 {
        for j in 0..p {
            if !bottom[j] {
                at[j] = bt[j] / (g[j] - g_min);
            }
        }
        let first_bottom = bottom.iter().position(|&x| x).expect("g is nonempty");
        at[first_bottom] = (1.0 - rest_at_min).max(0.0).sqrt();
    } else {
        let phi = |mu: f64| -> f64 { (0..p).map(|j| (bt[j] / (g[j] - mu)).powi(2)).sum() };
        // phi(lo) <= 1 since every g_j - lo >= |b|.
        let mut lo = g_min - b_norm;
        let mut hi = g_min;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if phi(mid) > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mu = lo;
        for j in 0..p {
            let den = g[j] - mu;
            at[j] = if den > 0.0 { bt[j] / den } else { 0.0 };
        }
    }
    let norm = at.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut a = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            a[i] += q[(i, j)] * at[j];
        }
    }
    if norm > 0.0 {
        // Rotation by Q preserves the norm; renormalize away rounding.
        let n2 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        a.iter_mut().for_each(|v| *v /= n2);
    }
    a
}

/// Coordinate descent on `1/2 x^T G x - b^T x + lambda |x|_1`, warm-started at `x`.
fn lasso_cd(g: &Matrix, b: &[f64], lambda: f64, x: &mut [f64]) {
    let p = b.len();
    for _ in 0..INNER_SWEEPS {
        let mut max_change = 0.0f64;
        let mut max_val = 0.0f64;
        for k in 0..p {
            let gkk = g[(k, k)];
            let new = if gkk > 0.0 {
                let mut z = b[k];
                for l in 0..p {
                    if l != k {
                        z -= g[(k, l)] * x[l];
                    }
                }
                soft(z, lambda) / gkk
            } else {
                0.0
            };
            max_change = max_change.max((new - x[k]).abs());
            max_val = max_val.max(new.abs());
            x[k] = new;
        }
        if max_change <= 1e-15 * (1.0 + max_val) {
            break;
        }
    }
}

/// Runs `f(i, row)` over the rows of an n x p buffer on up to `threads` workers.
fn for_each_row<F>(buf: &mut [f64], p: usize, threads: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let n = buf.len() / p;
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        for (i, row) in buf.chunks_mut(p).enumerate() {
            f(i, row);
        }
        return;
    }
    let chunk_rows = n.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, chunk) in buf.chunks_mut(chunk_rows * p).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (k, row) in chunk.chunks_mut(p).enumerate() {
                    f(t * chunk_rows + k, row);
                }
            });
        }
    });
}

fn code_step(
    convention: Convention,
    field: &GradientField,
    atoms: &Matrix,
    codes: &mut Matrix,
    lambda: f64,
    threads: usize,
) -> Result<()> {
    let p = atoms.cols();
    let g = gram(atoms);
    match convention {
        Convention::SparseAtoms => {
            let eig = eigh_symmetric(&g)?;
            let gv = eig.eigenvalues.as_slice();
            for_each_row(codes.as_mut_slice(), p, threads, |i, row| {
                let b = project(atoms, field.row(i));
                row.copy_from_slice(&sphere_code(gv, &eig.eigenvectors, &b));
            });
        }
        Convention::SparseCodes => {
            for_each_row(codes.as_mut_slice(), p, threads, |i, row| {
                let b = project(atoms, field.row(i));
                lasso_cd(&g, &b, lambda, row);
            });
        }
    }
    Ok(())
}

fn dictionary_step(
    convention: Convention,
    field: &GradientField,
    atoms: &mut Matrix,
    codes: &Matrix,
    lambda: f64,
) {
    let (d, p) = atoms.shape();
    let g = gram(codes);
    // rta[j][k] = sum_i r_ij a_ik
    let mut rta = Matrix::zeros(d, p);
    for i in 0..field.len() {
        let r = field.row(i);
        let a = codes.row(i);
        for j in 0..d {
            let rj = r[j];
            if rj == 0.0 {
                continue;
            }
            for (acc, &ak) in rta.row_mut(j).iter_mut().zip(a) {
                *acc += rj * ak;
            }
        }
    }
    match convention {
        Convention::SparseAtoms => {
            for j in 0..d {
                let b = rta.row(j).to_vec();
                lasso_cd(&g, &b, lambda, atoms.row_mut(j));
            }
        }
        Convention::SparseCodes => {
            for k in 0..p {
                let gkk = g[(k, k)];
                if gkk <= 0.0 {
                    continue;
                }
                let mut u: Vec<f64> = (0..d)
                    .map(|j| {
                        let mut z = rta[(j, k)];
                        for l in 0..p {
                            if l != k {
                                z -= atoms[(j, l)] * g[(l, k)];
                            }
                        }
                        z / gkk
                    })
                    .collect();
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1.0 {
                    u.iter_mut().for_each(|v| *v /= norm);
                }
                for (j, v) in u.into_iter().enumerate() {
                    atoms[(j, k)] = v;
                }
            }
        }
    }
}

fn psm_atoms(
    field: &GradientField,
    config: &SparsePsaConfig,
    maps: Option<&PsaDecomposition>,
) -> Result<Matrix> {
    let (d, p) = (field.dim(), config.p);
    let owned;
    let maps = match maps {
        Some(m) => m,
        None => {
            owned = psa(&kernel_from_gradients(field)?)?;
            &owned
        }
    };
    if maps.dim() != d || maps.len() < p {
        return Err(PsaError::dim(format!(
            "need {p} maps of dimension {d}, got {} of dimension {}",
            maps.len(),
            maps.dim()
        )));
    }
    let mut v = maps.eigenvectors.leading_columns(p);
    for k in 0..p {
        let s = match config.convention {
            Convention::SparseAtoms => maps.eigenvalues[k].max(0.0).sqrt(),
            Convention::SparseCodes => 1.0,
        };
        for j in 0..d {
            v[(j, k)] *= s;
        }
    }
    Ok(v)
}

/// Gaussian atoms at the field's RMS scale, from stream `stream` of the seed.
fn random_atoms(field: &GradientField, config: &SparsePsaConfig, stream: u64) -> Result<Matrix> {
    let (d, p) = (field.dim(), config.p);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let rms = (field.rows.as_slice().iter().map(|v| v * v).sum::<f64>() / (field.len() * d) as f64)
        .sqrt();
    let data = (0..d * p)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * rms
        })
        .collect();
    let mut v = Matrix::from_row_major(d, p, data)?;
    if config.convention == Convention::SparseCodes {
        for k in 0..p {
            let norm = v.column(k).norm2();
            if norm > 1.0 {
                for j in 0..d {
                    v[(j, k)] /= norm;
                }
            }
        }
    }
    Ok(v)
}

pub fn sparse_psa(field: &GradientField, config: &SparsePsaConfig) -> Result<SparsePsaModel> {
    sparse_psa_with(field, config, None, 1)
}

/// [`sparse_psa`] with an optional precomputed decomposition of the field's
/// kernel (used for the PSM initialization) and a worker count for the code
/// step. Results do not depend on `threads`.
///
/// Alternating minimization only finds a local minimum, so besides the
/// configured start it runs `config.restarts` seeded random starts and keeps
/// the lowest final objective (the earliest start on ties).
pub fn sparse_psa_with(
    field: &GradientField,
    config: &SparsePsaConfig,
    maps: Option<&PsaDecomposition>,
    threads: usize,
) -> Result<SparsePsaModel> {
    config.validate()?;
    let (n, d, p) = (field.len(), field.dim(), config.p);
    if n < p {
        return Err(PsaError::domain(format!(
            "{n} samples cannot support {p} atoms"
        )));
    }
    if p > d {
        return Err(PsaError::domain(format!("{p} atoms exceed dimension {d}")));
    }
    let mut best: Option<SparsePsaModel> = None;
    for start in 0..=config.restarts {
        let atoms = match (start, config.init) {
            (0, SparseInit::Psm) => psm_atoms(field, config, maps)?,
            (k, _) => random_atoms(field, config, k as u64)?,
        };
        let run = alternate(field, config, atoms, start, threads)?;
        if best
            .as_ref()
            .is_none_or(|b| run.final_objective() < b.final_objective())
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

fn alternate(
    field: &GradientField,
    config: &SparsePsaConfig,
    mut atoms: Matrix,
    start: usize,
    threads: usize,
) -> Result<SparsePsaModel> {
    let (n, p) = (field.len(), config.p);
    let conv = config.convention;
    let lambda = config.lambda;
    let mut codes = Matrix::zeros(n, p);

    code_step(conv, field, &atoms, &mut codes, lambda, threads)?;
    let mut current = objective_for(conv, field, &atoms, &codes, lambda)?;
    let mut trace = vec![current];
    let mut converged = false;

    let check = |before: f64, after: f64, iter: usize, step: &str| -> Result<()> {
        if after > before + MONOTONE_SLACK * (1.0 + before.abs()) {
            Err(PsaError::Consistency(format!(
                "objective rose from {before} to {after} in the {step} step of iteration {iter}"
            )))
        } else {
            Ok(())
        }
    };

    for iter in 1..=config.max_outer_iters {
        dictionary_step(conv, field, &mut atoms, &codes, lambda);
        let after_dict = objective_for(conv, field, &atoms, &codes, lambda)?;
        check(current, after_dict, iter, "dictionary")?;
        code_step(conv, field, &atoms, &mut codes, lambda, threads)?;
        let after_code = objective_for(conv, field, &atoms, &codes, lambda)?;
        check(after_dict, after_code, iter, "code")?;

        let decrease = current - after_code;
        current = after_code;
        trace.push(current);
        if decrease <= config.tol * current.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    let sensitivities: Vec<f64> = (0..p)
        .map(|k| match atoms.column(k).normalized() {
            None => 0.0,
            Some(u) => {
                (0..n)
                    .map(|i| {
                        field
                            .row(i)
                            .iter()
                            .zip(u.iter())
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            .powi(2)
                    })
                    .sum::<f64>()
                    / n as f64
            }
        })
        .collect();
    let mut ranking: Vec<usize> = (0..p).collect();
    ranking.sort_by(|&a, &b| sensitivities[b].total_cmp(&sensitivities[a]));

    Ok(SparsePsaModel {
        config: *config,
        atoms,
        codes,
        objective_trace: trace,
        ranking,
        sensitivities,
        converged,
        start,
    })
}
