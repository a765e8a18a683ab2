//! Sliced 2-Wasserstein distance between equal-size point clouds.
//!
//! Each cloud is projected on `L` random unit directions; in one dimension the
//! optimal coupling pairs the sorted projections, so the squared distance is a
//! sum over sorted pairs. Gradients treat the sort permutation as fixed.

use crate::error::{Error, Result};
use crate::ndmath::linalg::matmul_xwt;
use crate::ndmath::{Mat, Rng};

/// `L` unit vectors in `R^d`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    dirs: Mat,
}

impl DirectionSet {
    pub fn from_rows(dirs: Mat) -> Result<Self> {
        if dirs.rows() == 0 || dirs.cols() == 0 {
            return Err(Error::invalid("direction set must be non-empty"));
        }
        for (l, row) in dirs.iter_rows().enumerate() {
            let n = crate::ndmath::linalg::norm2(row);
            if (n - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("direction {l} has norm {n}")));
            }
        }
        Ok(Self { dirs })
    }

    pub fn len(&self) -> usize {
        self.dirs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.dirs.cols()
    }

    pub fn direction(&self, l: usize) -> &[f64] {
        self.dirs.row(l)
    }

    pub fn as_mat(&self) -> &Mat {
        &self.dirs
    }
}

/// Uniform directions on the unit sphere `S^{d-1}` (normalized Gaussians).
pub fn sample_directions(d: usize, l: usize, rng: &mut Rng) -> Result<DirectionSet> {
    if d == 0 || l == 0 {
        return Err(Error::invalid(format!("need d >= 1 and L >= 1, got d={d}, L={l}")));
    }
    let mut dirs = Mat::zeros(l, d);
    for r in 0..l {
        let row = dirs.row_mut(r);
        loop {
            rng.fill_normal(row);
            let n = crate::ndmath::linalg::norm2(row);
            if n > 1e-12 {
                row.iter_mut().for_each(|v| *v /= n);
                break;
            }
        }
    }
    Ok(DirectionSet { dirs })
}

/// Indices that sort `v` ascending; equal values keep their original order.
pub fn stable_argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    idx
}

fn check_pair(a: &Mat, b: &Mat, dirs: &DirectionSet) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::invalid(format!(
            "sorted coupling needs equal sample counts, got {} and {}",
            a.rows(),
            b.rows()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::invalid("sliced distance of empty sample sets"));
    }
    for m in [a, b] {
        if m.cols() != dirs.dim() {
            return Err(Error::dims("sliced_w2 point dimension", dirs.dim(), m.cols()));
        }
    }
    Ok(())
}

fn projections(x: &Mat, dirs: &DirectionSet) -> Mat {
    let mut p = Mat::zeros(x.rows(), dirs.len());
    matmul_xwt(x, dirs.dirs.as_slice(), dirs.len(), &mut p);
    p
}

/// `(1 / (L·N)) Σ_l Σ_n (θ_l·a_(n) − θ_l·b_(n))²` over sorted projections.
pub fn sliced_w2(a: &Mat, b: &Mat, dirs: &DirectionSet) -> Result<f64> {
    sliced_w2_impl(a, b, dirs, false).map(|(v, _)| v)
}

/// [`sliced_w2`] and its gradients with respect to the points of `a` and `b`.
pub fn sliced_w2_grad(a: &Mat, b: &Mat, dirs: &DirectionSet) -> Result<(f64, Mat, Mat)> {
    let (v, g) = sliced_w2_impl(a, b, dirs, true)?;
    let (ga, gb) = g.expect("requested");
    Ok((v, ga, gb))
}

fn sliced_w2_impl(a: &Mat, b: &Mat, dirs: &DirectionSet, want_grad: bool) -> Result<(f64, Option<(Mat, Mat)>)> {
    check_pair(a, b, dirs)?;
    let (n, l_count, d) = (a.rows(), dirs.len(), dirs.dim());
    let pa = projections(a, dirs);
    let pb = projections(b, dirs);
    let scale = 1.0 / (l_count * n) as f64;
    let mut total = 0.0;
    // per-point derivative of the loss w.r.t. each projection, n × L
    let mut da = Mat::zeros(if want_grad { n } else { 0 }, l_count);
    let mut db = Mat::zeros(if want_grad { n } else { 0 }, l_count);
    let mut col_a = vec![0.0; n];
    let mut col_b = vec![0.0; n];
    for l in 0..l_count {
        for r in 0..n {
            col_a[r] = pa.get(r, l);
            col_b[r] = pb.get(r, l);
        }
        let ia = stable_argsort(&col_a);
        let ib = stable_argsort(&col_b);
        for (&i, &j) in ia.iter().zip(&ib) {
            let diff = col_a[i] - col_b[j];
            total += diff * diff;
            if want_grad {
                da.set(i, l, 2.0 * diff * scale);
                db.set(j, l, -2.0 * diff * scale);
            }
        }
    }
    let value = total * scale;
    if !want_grad {
        return Ok((value, None));
    }
    // chain through the projections: ∂/∂x = Σ_l (∂/∂p_l) θ_l
    let ga = crate::ndmath::linalg::matmul_gw(&da, dirs.dirs.as_slice(), d);
    let gb = crate::ndmath::linalg::matmul_gw(&db, dirs.dirs.as_slice(), d);
    Ok((value, Some((ga, gb))))
}

/// Value and per-bin gradients of the binned regularizer.
#[derive(Debug, Clone)]
pub struct BinnedSw {
    pub value: f64,
    /// Gradient with respect to each bin's encoded samples (empty matrix for
    /// skipped bins).
    pub grads: Vec<Mat>,
    /// Bins left out because they held no samples.
    pub skipped_bins: usize,
}

/// Mean over bins of the sliced distance between encoded displacements and
/// prior displacement samples of the same bin. Empty bins are skipped and
/// counted.
pub fn binned_sw_regularizer(encoded: &[Mat], prior_samples: &[Mat], dirs: &DirectionSet) -> Result<BinnedSw> {
    if encoded.len() != prior_samples.len() {
        return Err(Error::dims("bin count", encoded.len(), prior_samples.len()));
    }
    let mut grads = Vec::with_capacity(encoded.len());
    let mut values = Vec::with_capacity(encoded.len());
    let mut skipped = 0;
    for (e, p) in encoded.iter().zip(prior_samples) {
        if e.rows() == 0 && p.rows() == 0 {
            skipped += 1;
            grads.push(Mat::zeros(0, dirs.dim()));
            continue;
        }
        let (v, g, _) = sliced_w2_grad(e, p, dirs)?;
        values.push(v);
        grads.push(g);
    }
    if skipped > 0 {
        log::warn!("binned sliced-Wasserstein: skipped {skipped} empty bins");
    }
    if values.is_empty() {
        return Err(Error::invalid("every bin is empty"));
    }
    let k = values.len() as f64;
    for g in &mut grads {
        g.scale(1.0 / k);
    }
    Ok(BinnedSw {
        value: values.iter().sum::<f64>() / k,
        grads,
        skipped_bins: skipped,
    })
}
