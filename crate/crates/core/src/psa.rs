//! Sensitivity kernels and principal sensitivity maps.
//!
//! For a class score `f_c` and an empirical input distribution, the
//! sensitivity kernel is `K = E[r(x) r(x)^T]` with `r(x) = grad_x f_c(x)`:
//! the uncentered second moment of the gradient field. Its diagonal is the
//! classic per-feature sensitivity map, `v^T K v` is the mean squared
//! directional derivative along a unit direction `v`, and its eigenvectors,
//! in order of decreasing eigenvalue, are the principal sensitivity maps.

use std::fmt;
use std::path::Path;

use crate::binio::{BinReader, BinWriter};
use crate::data::Dataset;
use crate::error::{PsaError, Result};
use crate::linalg::{eigh_symmetric, quadratic_form, Matrix, Vector};
use crate::mlp::{gradient_field_threaded, GradientField, InputGradient};

const KERNEL_MAGIC: &[u8; 4] = b"PSAK";
const DECOMPOSITION_MAGIC: &[u8; 4] = b"PSAE";
const FORMAT_VERSION: u32 = 1;

/// Tolerance on `|v|_2 - 1` accepted by [`directional_sensitivity`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Which empirical distribution a kernel integrates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSupport {
    /// Every sample of the dataset.
    Full { samples: usize },
    /// Only samples labeled `c` or `c_prime`.
    ClassPair {
        c: usize,
        c_prime: usize,
        samples: usize,
    },
}

impl KernelSupport {
    pub fn samples(&self) -> usize {
        match *self {
            KernelSupport::Full { samples } | KernelSupport::ClassPair { samples, .. } => samples,
        }
    }
}

impl fmt::Display for KernelSupport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSupport::Full { samples } => write!(f, "full({samples})"),
            KernelSupport::ClassPair {
                c,
                c_prime,
                samples,
            } => write!(f, "pair({c},{c_prime};{samples})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityKernel {
    pub matrix: Matrix,
    pub class: usize,
    pub support: KernelSupport,
}

impl SensitivityKernel {
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path, KERNEL_MAGIC, FORMAT_VERSION)?;
        w.len32(self.class)?;
        match self.support {
            KernelSupport::Full { samples } => {
                w.u8(0)?;
                w.u64(samples as u64)?;
            }
            KernelSupport::ClassPair {
                c,
                c_prime,
                samples,
            } => {
                w.u8(1)?;
                w.len32(c)?;
                w.len32(c_prime)?;
                w.u64(samples as u64)?;
            }
        }
        w.len32(self.dim())?;
        w.f64s(self.matrix.as_slice())?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, _) = BinReader::open(path, KERNEL_MAGIC, FORMAT_VERSION)?;
        let class = r.len32()?;
        let support = match r.u8()? {
            0 => KernelSupport::Full {
                samples: r.u64()? as usize,
            },
            1 => KernelSupport::ClassPair {
                c: r.len32()?,
                c_prime: r.len32()?,
                samples: r.u64()? as usize,
            },
            tag => return Err(r.format_error(format!("unknown support tag {tag}"))),
        };
        let d = r.len32()?;
        let matrix = Matrix::from_row_major(d, d, r.f64s(d * d)?)?;
        r.expect_eof()?;
        Ok(SensitivityKernel {
            matrix,
            class,
            support,
        })
    }
}

/// `K = (1/N) sum_n r_n r_n^T` over a gradient field covering the full dataset.
pub fn kernel_from_gradients(field: &GradientField) -> Result<SensitivityKernel> {
    kernel_with_support(
        field,
        KernelSupport::Full {
            samples: field.len(),
        },
    )
}

/// Accumulates the upper triangle and mirrors it, so the result is exactly
/// symmetric.
pub fn kernel_with_support(
    field: &GradientField,
    support: KernelSupport,
) -> Result<SensitivityKernel> {
    let n = field.len();
    if n == 0 {
        return Err(PsaError::domain(
            "cannot build a kernel from an empty gradient field",
        ));
    }
    let d = field.dim();
    let mut k = Matrix::zeros(d, d);
    for row in 0..n {
        let r = field.row(row);
        for i in 0..d {
            let ri = r[i];
            if ri == 0.0 {
                continue;
            }
            let krow = &mut k.row_mut(i)[i..];
            for (acc, &rj) in krow.iter_mut().zip(&r[i..]) {
                *acc += ri * rj;
            }
        }
    }
    let inv = 1.0 / n as f64;
    for i in 0..d {
        for j in i..d {
            let v = k[(i, j)] * inv;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(SensitivityKernel {
        matrix: k,
        class: field.class,
        support,
    })
}

/// Per-feature mean squared partial derivative: the kernel diagonal.
pub fn standard_map(kernel: &SensitivityKernel) -> Vector {
    kernel.matrix.diagonal()
}

/// What [`directional_sensitivity`] does with a direction that is not unit length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonUnit {
    #[default]
    Reject,
    Normalize,
}

/// `s(v) = v^T K v` for a unit direction `v`.
pub fn directional_sensitivity(
    kernel: &SensitivityKernel,
    v: &Vector,
    policy: NonUnit,
) -> Result<f64> {
    if v.len() != kernel.dim() {
        return Err(PsaError::dim(format!(
            "direction of length {} for a {}-dimensional kernel",
            v.len(),
            kernel.dim()
        )));
    }
    let norm = v.norm2();
    let value = if (norm - 1.0).abs() <= UNIT_TOLERANCE {
        quadratic_form(&kernel.matrix, v.as_slice())?
    } else {
        match policy {
            NonUnit::Reject => {
                return Err(PsaError::domain(format!(
                    "direction has norm {norm}, expected 1"
                )))
            }
            NonUnit::Normalize => {
                let u = v
                    .normalized()
                    .ok_or_else(|| PsaError::domain("cannot normalize the zero direction"))?;
                quadratic_form(&kernel.matrix, u.as_slice())?
            }
        }
    };
    // K is PSD; clip round-off below zero.
    Ok(value.max(0.0))
}

/// Full eigendecomposition of a sensitivity kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct PsaDecomposition {
    /// Descending.
    pub eigenvalues: Vector,
    /// Column `k` is the `(k+1)`-th principal sensitivity map.
    pub eigenvectors: Matrix,
    pub class: usize,
}

impl PsaDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvectors.rows()
    }

    /// Number of maps held (the full `d` unless truncated).
    pub fn len(&self) -> usize {
        self.eigenvectors.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `k`-th principal sensitivity map, zero-based.
    pub fn psm(&self, k: usize) -> Vector {
        self.eigenvectors.column(k)
    }

    /// Keeps only the leading `k` maps.
    pub fn truncated(&self, k: usize) -> PsaDecomposition {
        let k = k.min(self.len());
        PsaDecomposition {
            eigenvalues: Vector::from_vec_unchecked(self.eigenvalues.as_slice()[..k].to_vec()),
            eigenvectors: self.eigenvectors.leading_columns(k),
            class: self.class,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path, DECOMPOSITION_MAGIC, FORMAT_VERSION)?;
        w.len32(self.class)?;
        w.len32(self.dim())?;
        w.len32(self.len())?;
        w.f64s(self.eigenvalues.as_slice())?;
        w.f64s(self.eigenvectors.as_slice())?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut r, _) = BinReader::open(path, DECOMPOSITION_MAGIC, FORMAT_VERSION)?;
        let class = r.len32()?;
        let d = r.len32()?;
        let k = r.len32()?;
        if k > d {
            return Err(r.format_error(format!("{k} maps in dimension {d}")));
        }
        let eigenvalues = Vector::from_vec(r.f64s(k)?)?;
        let eigenvectors = Matrix::from_row_major(d, k, r.f64s(d * k)?)?;
        r.expect_eof()?;
        Ok(PsaDecomposition {
            eigenvalues,
            eigenvectors,
            class,
        })
    }

    /// `eigenvalue,index` CSV (1-based index).
    pub fn eigenvalues_csv(&self) -> String {
        let mut s = String::from("k,eigenvalue\n");
        for (k, v) in self.eigenvalues.iter().enumerate() {
            s.push_str(&format!("{},{:.16e}\n", k + 1, v));
        }
        s
    }
}

/// Principal sensitivity analysis: eigenvectors of `K` by decreasing
/// eigenvalue. Each map's sign follows the eigensolver convention (largest
/// magnitude entry non-negative).
pub fn psa(kernel: &SensitivityKernel) -> Result<PsaDecomposition> {
    let eig = eigh_symmetric(&kernel.matrix)?;
    Ok(PsaDecomposition {
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
        class: kernel.class,
    })
}

/// Local sensitivity `s_{c,c'}(v)`: directional sensitivity of `f_c` over the
/// samples labeled `c` or `c_prime`.
pub fn pairwise_sensitivity<M: InputGradient + ?Sized>(
    model: &M,
    data: &Dataset,
    c: usize,
    c_prime: usize,
    v: &Vector,
) -> Result<f64> {
    let slice = data.restrict_to(&[c, c_prime])?;
    let field = gradient_field_threaded(model, &slice, c, 1)?;
    let kernel = kernel_with_support(
        &field,
        KernelSupport::ClassPair {
            c,
            c_prime,
            samples: slice.len(),
        },
    )?;
    directional_sensitivity(&kernel, v, NonUnit::Reject)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseEntry {
    pub c: usize,
    pub c_prime: usize,
    /// 1-based map index.
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTable {
    pub model_id: String,
    pub dataset_id: String,
    pub entries: Vec<PairwiseEntry>,
}

impl PairwiseTable {
    pub fn get(&self, c: usize, c_prime: usize, k: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.c == c && e.c_prime == c_prime && e.k == k)
            .map(|e| e.value)
    }

    /// Values `s_{c,c'}(v_1), s_{c,c'}(v_2), ...` in order of `k`.
    pub fn series(&self, c: usize, c_prime: usize) -> Vec<f64> {
        let mut es: Vec<_> = self
            .entries
            .iter()
            .filter(|e| e.c == c && e.c_prime == c_prime)
            .collect();
        es.sort_by_key(|e| e.k);
        es.into_iter().map(|e| e.value).collect()
    }

    /// Header `c,c_prime,k,value`; values carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("c,c_prime,k,value\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{:.16e}\n", e.c, e.c_prime, e.k, e.value));
        }
        s
    }

    pub fn from_csv(text: &str, model_id: &str, dataset_id: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("c,c_prime,k,value") => {}
            other => {
                return Err(PsaError::Format(format!(
                    "unexpected pairwise CSV header {other:?}"
                )))
            }
        }
        let entries = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                let bad = || PsaError::Format(format!("line {}: {line:?}", i + 2));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 4 {
                    return Err(bad());
                }
                Ok(PairwiseEntry {
                    c: f[0].parse().map_err(|_| bad())?,
                    c_prime: f[1].parse().map_err(|_| bad())?,
                    k: f[2].parse().map_err(|_| bad())?,
                    value: f[3].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairwiseTable {
            model_id: model_id.to_string(),
            dataset_id: dataset_id.to_string(),
            entries,
        })
    }
}

/// `s_{c,c'}(v_k)` for every `c' != c` and `k = 1..=k_max`, where `field` is
/// the gradient field of `f_c` over `data` (same order) and `maps` holds the
/// PSMs of the global kernel of `f_c`.
///
/// Uses `v^T K_{c,c'} v = mean over the pair slice of (r . v)^2`, which is the
/// same quantity as [`pairwise_sensitivity`] without forming each `K_{c,c'}`.
pub fn pairwise_entries(
    field: &GradientField,
    data: &Dataset,
    maps: &PsaDecomposition,
    k_max: usize,
) -> Result<Vec<PairwiseEntry>> {
    if field.len() != data.len() || field.dim() != maps.dim() {
        return Err(PsaError::dim(
            "gradient field, dataset and maps disagree in shape",
        ));
    }
    if k_max > maps.len() {
        return Err(PsaError::domain(format!(
            "k_max {k_max} exceeds the {} available maps",
            maps.len()
        )));
    }
    let c = field.class;
    let d = field.dim();
    let vt = maps.eigenvectors.leading_columns(k_max).transpose();
    // projections[n][k] = r_n . v_k
    let projections: Vec<Vec<f64>> = (0..field.len())
        .map(|n| {
            let r = field.row(n);
            (0..k_max)
                .map(|k| vt.row(k).iter().zip(r).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    debug_assert_eq!(vt.cols(), d);

    let mut entries = Vec::new();
    for c_prime in (0..data.num_classes()).filter(|&cp| cp != c) {
        let members: Vec<usize> = data
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == c || s.label == c_prime)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            return Err(PsaError::domain(format!(
                "no samples of class {c} or {c_prime}"
            )));
        }
        let inv = 1.0 / members.len() as f64;
        for k in 0..k_max {
            let sum: f64 = members.iter().map(|&i| projections[i][k].powi(2)).sum();
            entries.push(PairwiseEntry {
                c,
                c_prime,
                k: k + 1,
                value: sum * inv,
            });
        }
    }
    Ok(entries)
}

/// Builds the pairwise table for each class in `classes` from scratch.
pub fn pairwise_table<M: InputGradient + ?Sized>(
    model: &M,
    data: &Dataset,
    classes: &[usize],
    k_max: usize,
    threads: usize,
) -> Result<PairwiseTable> {
    if k_max > data.dim() {
        return Err(PsaError::domain(format!(
            "k_max {k_max} exceeds dimension {}",
            data.dim()
        )));
    }
    let mut entries = Vec::new();
    for &c in classes {
        let field = gradient_field_threaded(model, data, c, threads)?;
        let maps = psa(&kernel_from_gradients(&field)?)?;
        entries.extend(pairwise_entries(&field, data, &maps, k_max)?);
    }
    Ok(PairwiseTable {
        model_id: String::new(),
        dataset_id: String::new(),
        entries,
    })
}
