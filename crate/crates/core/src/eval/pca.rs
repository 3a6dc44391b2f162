use std::io::Write;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and unit eigenvectors (as columns of a `d x d`
/// row-major matrix) of a symmetric matrix, by cyclic Jacobi rotations.
pub fn symmetric_eigen(a: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != d * d {
        return Err(Error::shape(format!(
            "{} values for a {d}x{d} matrix",
            a.len()
        )));
    }
    let mut a = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k * d + p], a[k * d + q]);
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p * d + k], a[q * d + k]);
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]));
    let values = order.iter().map(|&i| a[i * d + i]).collect();
    let mut vectors = vec![0.0; d * d];
    for (col, &src) in order.iter().enumerate() {
        // largest-magnitude component positive
        let pivot = (0..d).map(|k| v[k * d + src]).fold(0.0f64, |best, x| {
            if x.abs() > best.abs() {
                x
            } else {
                best
            }
        });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for k in 0..d {
            vectors[k * d + col] = sign * v[k * d + src];
        }
    }
    Ok((values, vectors))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d x k`, orthonormal columns.
    pub components: Tensor,
    /// All `d` covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance per retained component.
    pub explained: Vec<f64>,
    /// `m x k` projected coordinates.
    pub coords: Tensor,
}

impl Pca {
    /// Mean squared distance between each row and its reconstruction from `k` components.
    pub fn reconstruction_error(&self, features: &Tensor) -> f64 {
        let (m, d) = (features.rows(), features.cols());
        let k = self.components.cols();
        let comp = self.components.data();
        let mut err = 0.0;
        for i in 0..m {
            let row = features.row(i);
            let coords = self.coords.row(i);
            for c in 0..d {
                let rec = self.mean[c] + (0..k).map(|j| coords[j] * comp[c * k + j]).sum::<f64>();
                err += (row[c] - rec).powi(2);
            }
        }
        err / m as f64
    }
}

/// Projects mean-centered rows of `features` (`m x d`) onto the top `out_dim`
/// covariance eigenvectors.
pub fn pca_embed(features: &Tensor, out_dim: usize) -> Result<Pca> {
    if features.shape().len() != 2 {
        return Err(Error::shape("features must be a matrix"));
    }
    let (m, d) = (features.rows(), features.cols());
    if m <= out_dim || out_dim == 0 || out_dim > d {
        return Err(Error::Degenerate(format!(
            "{m} samples of dimension {d} cannot give {out_dim} components"
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|c| (0..m).map(|i| features.row(i)[c]).sum::<f64>() / m as f64)
        .collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..m {
        let x: Vec<f64> = features
            .row(i)
            .iter()
            .zip(&mean)
            .map(|(a, b)| a - b)
            .collect();
        for r in 0..d {
            for c in r..d {
                cov[r * d + c] += x[r] * x[c];
            }
        }
    }
    for r in 0..d {
        for c in r..d {
            cov[r * d + c] /= (m - 1) as f64;
            cov[c * d + r] = cov[r * d + c];
        }
    }
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let magnitude: f64 = mean.iter().map(|v| v * v).sum::<f64>().max(1.0);
    if !total.is_finite() || total <= 1e-24 * magnitude {
        return Err(Error::Degenerate("features have no variance".into()));
    }
    let (eigenvalues, vectors) = symmetric_eigen(&cov, d)?;
    let comp: Vec<f64> = (0..d)
        .flat_map(|r| vectors[r * d..r * d + out_dim].to_vec())
        .collect();
    let mut coords = Vec::with_capacity(m * out_dim);
    for i in 0..m {
        let x: Vec<f64> = features
            .row(i)
            .iter()
            .zip(&mean)
            .map(|(a, b)| a - b)
            .collect();
        for j in 0..out_dim {
            coords.push((0..d).map(|c| x[c] * comp[c * out_dim + j]).sum());
        }
    }
    let trace: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    Ok(Pca {
        mean,
        components: Tensor::matrix(d, out_dim, comp),
        explained: eigenvalues[..out_dim]
            .iter()
            .map(|v| v.max(0.0) / trace)
            .collect(),
        eigenvalues,
        coords: Tensor::matrix(m, out_dim, coords),
    })
}

/// Tab-separated `x, y, label` rows with a header line.
pub fn write_embedding_tsv<W: Write>(
    mut w: W,
    coords: &Tensor,
    labels: &[usize],
    class_names: &[String],
) -> Result<()> {
    if coords.cols() < 2 || coords.rows() != labels.len() {
        return Err(Error::shape(
            "embedding needs two columns and one label per row",
        ));
    }
    writeln!(w, "x\ty\tlabel")?;
    for (i, &y) in labels.iter().enumerate() {
        let name = class_names.get(y).ok_or(Error::LabelOutOfRange {
            label: y,
            n_classes: class_names.len(),
        })?;
        let row = coords.row(i);
        writeln!(w, "{}\t{}\t{}", row[0], row[1], name)?;
    }
    Ok(())
}
