//! Latent-space bins from regular-space clustering, and well-tempered
//! resampling of the training pairs over those bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::linalg::sq_dist;
use crate::ndmath::{Mat, Rng};

/// Streaming regular-space clustering: a point becomes a new center iff it is
/// at least `d_min` away from every existing center. Data order matters.
pub fn regular_space_cluster(points: &Mat, d_min: f64) -> Result<Mat> {
    Ok(regular_space_cluster_capped(points, d_min, usize::MAX)?.expect("no cap"))
}

/// Like [`regular_space_cluster`], but gives up (returns `None`) once more
/// than `max_centers` centers have been created.
pub fn regular_space_cluster_capped(points: &Mat, d_min: f64, max_centers: usize) -> Result<Option<Mat>> {
    if points.rows() == 0 {
        return Err(Error::invalid("cannot cluster an empty point set"));
    }
    if !(d_min > 0.0) || !d_min.is_finite() {
        return Err(Error::invalid(format!(
            "d_min must be positive and finite, got {d_min}"
        )));
    }
    let d = points.cols();
    let thresh = d_min * d_min;
    let mut centers: Vec<f64> = Vec::new();
    for p in points.iter_rows() {
        if centers.chunks_exact(d.max(1)).all(|c| sq_dist(c, p) >= thresh) {
            if centers.len() / d.max(1) >= max_centers {
                return Ok(None);
            }
            centers.extend_from_slice(p);
        }
    }
    let k = centers.len() / d.max(1);
    Mat::from_vec(k, d, centers).map(Some)
}

/// Index of the nearest center for every point; ties go to the lower index.
pub fn assign_voronoi(points: &Mat, centers: &Mat) -> Result<Vec<usize>> {
    if centers.rows() == 0 {
        return Err(Error::invalid("no centers to assign to"));
    }
    if points.cols() != centers.cols() {
        return Err(Error::dims("voronoi point dimension", centers.cols(), points.cols()));
    }
    Ok(points
        .iter_rows()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, c) in centers.iter_rows().enumerate() {
                let dd = sq_dist(c, p);
                if dd < best_d {
                    best_d = dd;
                    best = k;
                }
            }
            best
        })
        .collect())
}

pub fn bin_counts(assignment: &[usize], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for &a in assignment {
        counts[a] += 1;
    }
    counts
}

/// Well-tempered target counts `N_k ∝ Ñ_k^{1/γ}`, rounded by largest
/// remainder (ties to the lower bin index) so they sum to exactly `n`.
/// `gamma = f64::INFINITY` gives the uniform limit over non-empty bins.
pub fn welltempered_counts(raw_counts: &[usize], gamma: f64, n: usize) -> Result<Vec<usize>> {
    if gamma.is_nan() || gamma < 1.0 {
        return Err(Error::invalid(format!("gamma must be >= 1, got {gamma}")));
    }
    let total: usize = raw_counts.iter().sum();
    if total != n {
        return Err(Error::invalid(format!("raw counts sum to {total}, expected {n}")));
    }
    if n == 0 {
        return Ok(vec![0; raw_counts.len()]);
    }
    let weights: Vec<f64> = raw_counts
        .iter()
        .map(|&c| match c {
            0 => 0.0,
            _ if gamma == 1.0 => c as f64,
            _ if gamma.is_infinite() => 1.0,
            _ => (c as f64).powf(1.0 / gamma),
        })
        .collect();
    let w_sum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| n as f64 * w / w_sum).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut left = n.saturating_sub(assigned);
    if left > 0 {
        let mut order: Vec<usize> = (0..counts.len()).filter(|&k| raw_counts[k] > 0).collect();
        // stable: equal remainders keep index order
        order.sort_by(|&a, &b| (ideal[b] - ideal[b].floor()).total_cmp(&(ideal[a] - ideal[a].floor())));
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
    }
    // floor() can overshoot by one when round-off pushes `ideal` past an integer
    let mut over = counts.iter().sum::<usize>().saturating_sub(n);
    for k in (0..counts.len()).rev() {
        while over > 0 && counts[k] > 1 {
            counts[k] -= 1;
            over -= 1;
        }
    }
    Ok(counts)
}

/// Per-bin index lists after resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub per_bin: Vec<Vec<usize>>,
}

impl Resampled {
    pub fn indices(&self) -> Vec<usize> {
        self.per_bin.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_bin.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `counts[k]` pair indices from bin `k`. A bin asked for no more than
/// it holds is subsampled without replacement; a bin asked for more keeps
/// every member once and fills the rest with replacement.
pub fn resample_dataset(labels: &[usize], counts: &[usize], rng: &mut Rng) -> Result<Resampled> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    for (i, &k) in labels.iter().enumerate() {
        if k >= counts.len() {
            return Err(Error::invalid(format!(
                "pair {i} has label {k} but only {} bins exist",
                counts.len()
            )));
        }
        members[k].push(i);
    }
    let mut per_bin = Vec::with_capacity(counts.len());
    for (k, (mut m, &want)) in members.into_iter().zip(counts).enumerate() {
        if want > 0 && m.is_empty() {
            return Err(Error::invalid(format!(
                "bin {k} is empty but {want} samples were requested"
            )));
        }
        rng.shuffle(&mut m);
        if want <= m.len() {
            m.truncate(want);
        } else {
            let have = m.len();
            for _ in have..want {
                let j = m[rng.below(have)];
                m.push(j);
            }
        }
        per_bin.push(m);
    }
    Ok(Resampled { per_bin })
}

/// Searches for a `d_min` giving between `lo` and `hi` centers, preferring
/// `target`. Falls back to the closest count found.
pub fn choose_d_min(points: &Mat, lo: usize, hi: usize, target: usize) -> Result<f64> {
    if points.rows() == 0 {
        return Err(Error::invalid("cannot choose d_min for an empty point set"));
    }
    let cols = points.cols();
    let (mut mins, mut maxs) = (vec![f64::INFINITY; cols], vec![f64::NEG_INFINITY; cols]);
    for r in points.iter_rows() {
        for c in 0..cols {
            mins[c] = mins[c].min(r[c]);
            maxs[c] = maxs[c].max(r[c]);
        }
    }
    let diam = mins
        .iter()
        .zip(&maxs)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    if !(diam > 0.0) {
        return Ok(1.0);
    }
    let cap = hi.saturating_mul(4).max(target + 1);
    let (mut a, mut b) = (diam * 1e-4, diam);
    let mut best = (usize::MAX, diam);
    for _ in 0..48 {
        let mid = (a * b).sqrt();
        let k = regular_space_cluster_capped(points, mid, cap)?.map_or(usize::MAX, |c| c.rows());
        let score = k.abs_diff(target);
        if score < best.0 {
            best = (score, mid);
        }
        if (lo..=hi).contains(&k) && score <= target / 10 {
            break;
        }
        if k > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(best.1)
}

/// Bins over a set of latent points with their raw and resampled occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    pub centers: Vec<Vec<f64>>,
    pub d_min: f64,
    pub gamma: f64,
    #[serde(skip)]
    pub assignment: Vec<usize>,
    pub raw_counts: Vec<usize>,
    pub resampled_counts: Vec<usize>,
}

impl BinPartition {
    pub fn build(points: &Mat, d_min: f64, gamma: f64) -> Result<Self> {
        let centers = regular_space_cluster(points, d_min)?;
        let assignment = assign_voronoi(points, &centers)?;
        let raw_counts = bin_counts(&assignment, centers.rows());
        let resampled_counts = welltempered_counts(&raw_counts, gamma, points.rows())?;
        Ok(Self {
            centers: centers.iter_rows().map(<[f64]>::to_vec).collect(),
            d_min,
            gamma,
            assignment,
            raw_counts,
            resampled_counts,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.centers.len()
    }

    /// JSON dump of centers, `d_min`, `gamma` and counts. Infinite `gamma`
    /// is written as `null`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
