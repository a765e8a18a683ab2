//! Evaluation of learned latents: recovery of known factors, shape of the
//! latent marginals, and CSV exports of the learned fields and free energy.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, Uniform};

use crate::error::{Error, Result};
use crate::langevin::PriorModel;
use crate::ndmath::Mat;

/// Relative singular-value cutoff below which a latent matrix is treated as
/// rank deficient.
pub const RANK_TOL: f64 = 1e-10;

fn to_dmatrix(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    for j in 0..c.ncols() {
        let mean = c.column(j).mean();
        c.column_mut(j).add_scalar_mut(-mean);
    }
    c
}

/// How well a learned latent explains known factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Mean over factor dimensions of the R² of the least-squares affine fit
    /// `truth ≈ A z + b`.
    pub affine_r2: f64,
    pub per_dim_r2: Vec<f64>,
    /// Residual of the optimal similarity (rotation or reflection,
    /// translation, uniform scale) after both sets are centered and scaled
    /// to unit Frobenius norm; 0 for an exact similarity, at most 1.
    pub procrustes_error: f64,
    /// `correlation[i][j]` = Pearson correlation of `z_i` with factor `j`.
    pub correlation: Vec<Vec<f64>>,
    pub rank_deficient: bool,
}

/// Affine R² and similarity-Procrustes residual of `z` against `truth`.
pub fn affine_recovery(z: &Mat, truth: &Mat) -> Result<RecoveryReport> {
    if z.rows() != truth.rows() {
        return Err(Error::dims("recovery frame count", truth.rows(), z.rows()));
    }
    if z.cols() != truth.cols() {
        return Err(Error::dims("recovery dimension", truth.cols(), z.cols()));
    }
    if z.rows() < 2 {
        return Err(Error::invalid("recovery needs at least two frames"));
    }
    if !z.is_finite() || !truth.is_finite() {
        return Err(Error::NonFinite("latent or factor matrix".into()));
    }
    let zc = centered(&to_dmatrix(z));
    let tc = centered(&to_dmatrix(truth));

    let sv = zc.clone().svd(false, false).singular_values;
    let top = sv.max();
    let rank_deficient = top <= 0.0 || sv.min() <= RANK_TOL * top;

    // centered least squares is the affine fit; pseudo-inverse handles rank loss
    let svd = zc.clone().svd(true, true);
    let coef = svd
        .solve(&tc, RANK_TOL * top.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
    let resid = &tc - &zc * coef;
    let per_dim_r2: Vec<f64> = (0..tc.ncols())
        .map(|j| {
            let sst = tc.column(j).norm_squared();
            if sst == 0.0 {
                return 1.0;
            }
            (1.0 - resid.column(j).norm_squared() / sst).clamp(0.0, 1.0)
        })
        .collect();
    let affine_r2 = per_dim_r2.iter().sum::<f64>() / per_dim_r2.len() as f64;

    let procrustes_error = {
        let (nt, nz) = (tc.norm(), zc.norm());
        if nt == 0.0 || nz == 0.0 {
            1.0
        } else {
            let cross = (&tc / nt).transpose() * (&zc / nz);
            let s: f64 = cross.svd(false, false).singular_values.sum();
            (1.0 - s * s).max(0.0)
        }
    };

    let correlation = (0..zc.ncols())
        .map(|i| {
            (0..tc.ncols())
                .map(|j| {
                    let (a, b) = (zc.column(i), tc.column(j));
                    let den = a.norm() * b.norm();
                    if den == 0.0 {
                        0.0
                    } else {
                        a.dot(&b) / den
                    }
                })
                .collect()
        })
        .collect();
    Ok(RecoveryReport {
        affine_r2,
        per_dim_r2,
        procrustes_error,
        correlation,
        rank_deficient,
    })
}

/// Shape statistics of one latent coordinate after standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimShape {
    /// Fourth standardized moment (uniform 1.8, Gaussian 3).
    pub kurtosis: f64,
    /// Kolmogorov–Smirnov statistic against the uniform with the same mean
    /// and variance.
    pub ks_uniform: f64,
    /// Kolmogorov–Smirnov statistic against the Gaussian with the same mean
    /// and variance.
    pub ks_gaussian: f64,
    /// Sample range over the range of the variance-matched uniform
    /// (`2√3·std`): 1 for uniform data, growing with sample size for
    /// Gaussian data.
    pub spread_ratio: f64,
    /// Zero variance; the other statistics are then NaN.
    pub degenerate: bool,
}

/// Minimum number of frames accepted by [`distribution_shape`].
pub const MIN_SHAPE_FRAMES: usize = 100;

/// Per-dimension shape statistics of `z`.
pub fn distribution_shape(z: &Mat) -> Result<Vec<DimShape>> {
    if z.rows() < MIN_SHAPE_FRAMES {
        return Err(Error::invalid(format!(
            "shape statistics need at least {MIN_SHAPE_FRAMES} frames, got {}",
            z.rows()
        )));
    }
    (0..z.cols()).map(|c| dim_shape(&z.column(c))).collect()
}

fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0, |acc: f64, (i, &x)| {
        let f = cdf(x);
        acc.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

fn dim_shape(x: &[f64]) -> Result<DimShape> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !sd.is_finite() {
        return Err(Error::NonFinite("latent coordinate".into()));
    }
    if sd <= 1e-12 * (1.0 + mean.abs()) {
        return Ok(DimShape {
            kurtosis: f64::NAN,
            ks_uniform: f64::NAN,
            ks_gaussian: f64::NAN,
            spread_ratio: f64::NAN,
            degenerate: true,
        });
    }
    let mut s: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    s.sort_by(f64::total_cmp);
    let kurtosis = s.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let half = 3f64.sqrt();
    let uni = Uniform::new(-half, half).map_err(|e| Error::invalid(e.to_string()))?;
    let gauss = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(DimShape {
        kurtosis,
        ks_uniform: ks_statistic(&s, |v| uni.cdf(v)),
        ks_gaussian: ks_statistic(&s, |v| gauss.cdf(v)),
        spread_ratio: (s[s.len() - 1] - s[0]) / (2.0 * half),
        degenerate: false,
    })
}

/// Regular 2D grid `[lo, hi]` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: (f64, f64, usize),
    pub y: (f64, f64, usize),
}

impl GridSpec {
    /// Grid spanning the bounding box of a 2D point set.
    pub fn covering(z: &Mat, n: usize) -> Result<Self> {
        if z.cols() != 2 || z.rows() == 0 {
            return Err(Error::invalid("grid covering needs a non-empty 2D point set"));
        }
        let range = |c: usize| {
            let v = z.column(c);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi, n)
        };
        Ok(Self {
            x: range(0),
            y: range(1),
        })
    }

    fn axis((lo, hi, n): (f64, f64, usize)) -> Vec<f64> {
        match n {
            0 => vec![],
            1 => vec![0.5 * (lo + hi)],
            _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }

    /// Grid points, `x` varying slowest.
    pub fn points(&self) -> Mat {
        let (xs, ys) = (Self::axis(self.x), Self::axis(self.y));
        let mut data = Vec::with_capacity(2 * xs.len() * ys.len());
        for &x in &xs {
            for &y in &ys {
                data.extend([x, y]);
            }
        }
        Mat::from_vec(xs.len() * ys.len(), 2, data).expect("grid shape")
    }
}

/// Force and diffusion of a 2D prior on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub points: Mat,
    pub force: Mat,
    pub diffusion: Mat,
}

impl FieldGrid {
    /// CSV with header `z1,z2,f1,f2,M11,M22`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("z1,z2,f1,f2,M11,M22\n");
        for r in 0..self.points.rows() {
            let p = self.points.row(r);
            let f = self.force.row(r);
            let m = self.diffusion.row(r);
            out.push_str(&format!("{},{},{},{},{},{}\n", p[0], p[1], f[0], f[1], m[0], m[1]));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Evaluates `f_ω` and `M_ω` of a 2D prior on `grid`.
pub fn export_fields(prior: &PriorModel, grid: &GridSpec) -> Result<FieldGrid> {
    if prior.dim() != 2 {
        return Err(Error::dims("field export latent dimension", 2, prior.dim()));
    }
    let points = grid.points();
    let fields = prior.fields(&points)?;
    Ok(FieldGrid {
        points,
        force: fields.force,
        diffusion: fields.diffusion,
    })
}

/// `F = −log(p + ε)` on a 2D histogram, shifted so its minimum is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyGrid {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[i][j]` for x-bin `i`, y-bin `j`.
    pub counts: Vec<Vec<usize>>,
    pub free_energy: Vec<Vec<f64>>,
    /// Density added before the logarithm: half a count per bin, so empty
    /// bins get a finite value `log 2` above a single-count bin.
    pub epsilon: f64,
}

impl FreeEnergyGrid {
    /// CSV with header `x,y,count,F` at bin centers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,count,F\n");
        for i in 0..self.counts.len() {
            for j in 0..self.counts[i].len() {
                let cx = 0.5 * (self.x_edges[i] + self.x_edges[i + 1]);
                let cy = 0.5 * (self.y_edges[j] + self.y_edges[j + 1]);
                out.push_str(&format!("{cx},{cy},{},{}\n", self.counts[i][j], self.free_energy[i][j]));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(self.to_csv().as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Free energy (kT = 1) of a 2D sample from a `bins × bins` histogram over
/// its bounding box.
pub fn free_energy_histogram(z: &Mat, bins: usize) -> Result<FreeEnergyGrid> {
    if z.cols() != 2 {
        return Err(Error::dims("free-energy histogram dimension", 2, z.cols()));
    }
    if bins == 0 || z.rows() < bins {
        return Err(Error::invalid(format!("need at least {bins} frames and one bin")));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("latent samples".into()));
    }
    let spec = GridSpec::covering(z, bins + 1)?;
    let edges = |(lo, hi, _): (f64, f64, usize)| {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect::<Vec<f64>>()
    };
    let (xe, ye) = (edges(spec.x), edges(spec.y));
    let locate = |e: &[f64], v: f64| (((v - e[0]) / (e[bins] - e[0]) * bins as f64) as usize).min(bins - 1);
    let mut counts = vec![vec![0usize; bins]; bins];
    for p in z.iter_rows() {
        counts[locate(&xe, p[0])][locate(&ye, p[1])] += 1;
    }
    let area = (xe[1] - xe[0]) * (ye[1] - ye[0]);
    let n = z.rows() as f64;
    let epsilon = 0.5 / (n * area);
    let mut f: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|&c| -(c as f64 / (n * area) + epsilon).ln()).collect())
        .collect();
    let fmin = f.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    f.iter_mut().flatten().for_each(|v| *v -= fmin);
    Ok(FreeEnergyGrid {
        x_edges: xe,
        y_edges: ye,
        counts,
        free_energy: f,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Rng;

    fn gaussian(n: usize, d: usize, seed: u64) -> Mat {
        Mat::from_vec(n, d, Rng::new(seed).normal_vec(n * d)).unwrap()
    }

    fn transform(z: &Mat, a: [[f64; 2]; 2], b: [f64; 2]) -> Mat {
        let mut out = Mat::zeros(z.rows(), 2);
        for r in 0..z.rows() {
            let p = z.row(r);
            for i in 0..2 {
                out.set(r, i, a[i][0] * p[0] + a[i][1] * p[1] + b[i]);
            }
        }
        out
    }

    #[test]
    fn identity_recovery_is_perfect() {
        let t = gaussian(500, 2, 1);
        let r = affine_recovery(&t, &t).unwrap();
        assert!((r.affine_r2 - 1.0).abs() < 1e-12);
        assert!(r.procrustes_error < 1e-12);
        assert!(!r.rank_deficient);
    }

    #[test]
    fn similarity_transform_is_recovered() {
        let t = gaussian(500, 2, 2);
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let z = transform(&t, [[3.0 * c, -3.0 * s], [3.0 * s, 3.0 * c]], [5.0, -2.0]);
        let r = affine_recovery(&z, &t).unwrap();
        assert!((r.affine_r2 - 1.0).abs() < 1e-12);
        assert!(r.procrustes_error < 1e-12);
        // reflections count as isometries too
        let zr = transform(&t, [[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]);
        assert!(affine_recovery(&zr, &t).unwrap().procrustes_error < 1e-12);
    }

    #[test]
    fn independent_noise_has_no_affine_signal() {
        let t = gaussian(10_000, 2, 3);
        let z = gaussian(10_000, 2, 4);
        assert!(affine_recovery(&z, &t).unwrap().affine_r2 < 0.05);
    }

    #[test]
    fn shear_keeps_r2_but_breaks_procrustes() {
        let t = gaussian(2000, 2, 5);
        let z = transform(&t, [[1.0, 1.5], [0.0, 1.0]], [0.3, 0.0]);
        let r = affine_recovery(&z, &t).unwrap();
        assert!((r.affine_r2 - 1.0).abs() < 1e-9);
        assert!(r.procrustes_error > 0.01);
    }

    #[test]
    fn collapsed_latent_is_flagged() {
        let t = gaussian(100, 2, 6);
        let z = Mat::from_vec(100, 2, t.column(0).iter().flat_map(|&v| [v, 2.0 * v]).collect()).unwrap();
        assert!(affine_recovery(&z, &t).unwrap().rank_deficient);
    }

    #[test]
    fn recovery_rejects_shape_mismatch() {
        assert!(affine_recovery(&gaussian(10, 2, 0), &gaussian(9, 2, 0)).is_err());
        assert!(affine_recovery(&gaussian(10, 1, 0), &gaussian(10, 2, 0)).is_err());
    }

    #[test]
    fn uniform_and_gaussian_kurtosis() {
        let mut rng = Rng::new(7);
        let u = Mat::from_vec(100_000, 1, (0..100_000).map(|_| rng.uniform()).collect()).unwrap();
        let su = &distribution_shape(&u).unwrap()[0];
        assert!((su.kurtosis - 1.8).abs() < 0.05, "{su:?}");
        assert!(su.ks_uniform < su.ks_gaussian);
        let g = gaussian(100_000, 1, 8);
        let sg = &distribution_shape(&g).unwrap()[0];
        assert!((sg.kurtosis - 3.0).abs() < 0.1, "{sg:?}");
        assert!(sg.ks_gaussian < sg.ks_uniform);
        assert!(sg.spread_ratio > su.spread_ratio);
    }

    #[test]
    fn constant_dimension_is_degenerate() {
        let z = Mat::from_vec(200, 1, vec![4.0; 200]).unwrap();
        assert!(distribution_shape(&z).unwrap()[0].degenerate);
        assert!(distribution_shape(&Mat::zeros(10, 1)).is_err());
    }

    #[test]
    fn zero_nets_give_constant_fields() {
        let mut prior = PriorModel::new(2, &[4], 0).unwrap();
        prior.force_net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        prior.diffusion_net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let grid = GridSpec {
            x: (-1.0, 1.0, 3),
            y: (0.0, 2.0, 4),
        };
        let g = export_fields(&prior, &grid).unwrap();
        assert_eq!(g.points.rows(), 12);
        assert!(g.force.as_slice().iter().all(|v| *v == 0.0));
        let m0 = g.diffusion.get(0, 0);
        assert!(g.diffusion.as_slice().iter().all(|v| *v == m0));
        let csv = g.to_csv();
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with("z1,z2,f1,f2,M11,M22\n"));
    }

    #[test]
    fn uniform_samples_give_flat_free_energy() {
        let mut rng = Rng::new(9);
        let z = Mat::from_vec(100_000, 2, (0..200_000).map(|_| rng.uniform()).collect()).unwrap();
        let fe = free_energy_histogram(&z, 10).unwrap();
        let all: Vec<f64> = fe.free_energy.iter().flatten().copied().collect();
        let (lo, hi) = all
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert_eq!(lo, 0.0);
        assert!(hi - lo < 0.3, "{hi}");
    }

    #[test]
    fn gaussian_free_energy_is_a_bowl() {
        let z = gaussian(100_000, 2, 10);
        let fe = free_energy_histogram(&z, 11).unwrap();
        let (mut best, mut at) = (f64::INFINITY, (0, 0));
        for i in 0..11 {
            for j in 0..11 {
                if fe.free_energy[i][j] < best {
                    best = fe.free_energy[i][j];
                    at = (i, j);
                }
            }
        }
        // the bin holding the mean
        let loc = |e: &[f64]| e.windows(2).position(|w| w[0] <= 0.0 && 0.0 < w[1]).unwrap();
        assert!(
            at.0.abs_diff(loc(&fe.x_edges)) <= 1 && at.1.abs_diff(loc(&fe.y_edges)) <= 1,
            "{at:?}"
        );
        // F grows away from the center along a row
        let row = &fe.free_energy[at.0];
        assert!(row[0] > row[at.1] + 2.0 && row[10] > row[at.1] + 2.0);
    }

    #[test]
    fn empty_bins_are_capped_by_the_floor() {
        let z = Mat::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
        let fe = free_energy_histogram(&z, 2).unwrap();
        assert_eq!(fe.counts, vec![vec![2, 0], vec![0, 2]]);
        // empty: −log(ε); full: −log(2/(nA) + ε) with ε = ½/(nA) ⇒ gap log 5
        assert!((fe.free_energy[0][1] - 5f64.ln()).abs() < 1e-12);
        assert_eq!(fe.free_energy[0][0], 0.0);
    }
}
