//! Boxed domains, normalization, TPLHD initial designs and Monte Carlo pools.
//!
//! All samplers work in the unit hypercube. Raw problem coordinates only appear
//! at the edges (function evaluation and CSV export).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Duplicate-row tolerance in normalized space.
pub const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidArgument(
                "domain needs at least one dimension".into(),
            ));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for i in 0..lower.len() {
            if !(upper[i] > lower[i]) {
                return Err(Error::ZeroWidthDimension(i));
            }
        }
        Ok(Domain { lower, upper })
    }

    /// The unit hypercube [0,1]^n.
    pub fn unit(n: usize) -> Self {
        Domain {
            lower: vec![0.0; n],
            upper: vec![1.0; n],
        }
    }

    /// Same bounds in every dimension.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Domain::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok((0..x.len())
            .map(|i| (x[i] - self.lower[i]) / self.width(i))
            .collect())
    }

    pub fn denormalize(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len())?;
        Ok((0..z.len())
            .map(|i| self.lower[i] + z[i] * self.width(i))
            .collect())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// Input points (normalized) with their scalar responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
    pub domain: Domain,
    /// Incremented on every append; models remember the version they were built from.
    #[serde(default)]
    pub version: u64,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, responses: Vec<f64>, domain: Domain) -> Result<Self> {
        if points.len() != responses.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: responses.len(),
            });
        }
        let mut ds = Dataset {
            points: Vec::with_capacity(points.len()),
            responses: Vec::with_capacity(points.len()),
            domain,
            version: 0,
        };
        for (p, y) in points.into_iter().zip(responses) {
            ds.push(p, y)?;
        }
        ds.version = 0;
        Ok(ds)
    }

    /// Build from raw (problem-unit) inputs.
    pub fn from_raw(raw: &[Vec<f64>], responses: Vec<f64>, domain: Domain) -> Result<Self> {
        let pts = raw
            .iter()
            .map(|x| domain.normalize(x))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(pts, responses, domain)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Append one normalized sample. Rejects out-of-cube coordinates and duplicates.
    pub fn push(&mut self, z: Vec<f64>, y: f64) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        for (i, &v) in z.iter().enumerate() {
            if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                return Err(Error::OutOfDomain(i));
            }
        }
        if !y.is_finite() {
            return Err(Error::InvalidArgument("response is not finite".into()));
        }
        if let Some(j) = self
            .points
            .iter()
            .position(|p| max_abs_diff(p, &z) <= DUPLICATE_TOL)
        {
            return Err(Error::DuplicatePoint(j));
        }
        self.points
            .push(z.iter().map(|v| v.clamp(0.0, 1.0)).collect());
        self.responses.push(y);
        self.version += 1;
        Ok(())
    }

    pub fn raw_points(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|z| {
                self.domain
                    .denormalize(z)
                    .expect("dimension checked on insert")
            })
            .collect()
    }

    /// Dataset without row `i`.
    pub fn without(&self, idx: &[usize]) -> Dataset {
        let mut pts = Vec::new();
        let mut ys = Vec::new();
        for i in 0..self.len() {
            if !idx.contains(&i) {
                pts.push(self.points[i].clone());
                ys.push(self.responses[i]);
            }
        }
        Dataset {
            points: pts,
            responses: ys,
            domain: self.domain.clone(),
            version: self.version,
        }
    }

    /// CSV with header `x1,...,xn,y`, raw units.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        wr.write_record(&header)
            .map_err(|e| Error::Parse(e.to_string()))?;
        for (x, y) in self.raw_points().iter().zip(&self.responses) {
            let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            row.push(y.to_string());
            wr.write_record(&row)
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        wr.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// Rule-of-thumb initial sample size, ten points per dimension.
pub fn initial_size(n: usize) -> usize {
    10 * n
}

/// Translational propagation Latin hypercube with a one-point seed.
///
/// The design is built on a grid of `k^n` levels (`k = ceil(m^(1/n))`): the seed
/// block is translated along each dimension, shifting the other coordinates by
/// one sub-level per step. Oversized designs keep the `m` points closest to the
/// centre and are re-ranked per dimension. Coordinates sit at stratum centres.
pub fn tplhd(m: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "tplhd needs m >= 1 and n >= 1".into(),
        ));
    }
    let mut k = (m as f64).powf(1.0 / n as f64).round() as usize;
    while k.pow(n as u32) < m {
        k += 1;
    }
    while k > 1 && (k - 1).pow(n as u32) >= m {
        k -= 1;
    }
    let total = k.pow(n as u32);
    let levels = |idx: usize| -> Vec<usize> {
        let mut digits = vec![0usize; n];
        let mut r = idx;
        for d in digits.iter_mut() {
            *d = r % k;
            r /= k;
        }
        (0..n)
            .map(|j| {
                // most significant digit is the block index along j itself
                let mut lvl = digits[j];
                for i in 1..n {
                    lvl = lvl * k + digits[(j + i) % n];
                }
                lvl
            })
            .collect()
    };
    let mut grid: Vec<Vec<usize>> = (0..total).map(levels).collect();
    if total > m {
        let centre = (total as f64 - 1.0) / 2.0;
        let mut order: Vec<(f64, usize)> = grid
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d: f64 = p.iter().map(|&v| (v as f64 - centre).powi(2)).sum();
                (d, i)
            })
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut keep: Vec<usize> = order[..m].iter().map(|&(_, i)| i).collect();
        keep.sort_unstable();
        grid = keep.into_iter().map(|i| grid[i].clone()).collect();
        for j in 0..n {
            let mut col: Vec<(usize, usize)> =
                grid.iter().enumerate().map(|(i, p)| (p[j], i)).collect();
            col.sort_unstable();
            for (rank, &(_, i)) in col.iter().enumerate() {
                grid[i][j] = rank;
            }
        }
    }
    Ok(grid
        .into_iter()
        .map(|p| p.into_iter().map(|l| (l as f64 + 0.5) / m as f64).collect())
        .collect())
}

/// Monte Carlo candidates in the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub points: Vec<Vec<f64>>,
    pub seed: u64,
}

pub fn monte_carlo_pool(nn: usize, n: usize, seed: u64) -> Result<CandidatePool> {
    if nn == 0 {
        return Err(Error::InvalidArgument(
            "candidate pool needs nn >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..nn)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    Ok(CandidatePool { points, seed })
}

/// Default pool size, 100 candidates per dimension per sample.
pub fn default_pool_size(n: usize, m: usize) -> usize {
    100 * n * m.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let d = Domain::cube(2, -2.0, 2.0).unwrap();
        assert_eq!(d.normalize(&[-2.0, -2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(d.normalize(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(d.normalize(&[1.0, -1.0]).unwrap(), vec![0.75, 0.25]);
        assert!(matches!(
            Domain::new(vec![1.0], vec![1.0]),
            Err(Error::ZeroWidthDimension(0))
        ));
    }

    #[test]
    fn tplhd_single_point_is_centred() {
        for n in 1..5 {
            let d = tplhd(1, n).unwrap();
            assert_eq!(d, vec![vec![0.5; n]]);
        }
    }

    #[test]
    fn tplhd_1d_is_equidistant() {
        let d = tplhd(10, 1).unwrap();
        let mut xs: Vec<f64> = d.iter().map(|p| p[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in xs.windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-12);
        }
    }

    fn is_latin(d: &[Vec<f64>]) -> bool {
        let m = d.len();
        (0..d[0].len()).all(|j| {
            let mut seen = vec![false; m];
            d.iter().all(|p| {
                let s = (p[j] * m as f64).floor() as usize;
                let fresh = s < m && !seen[s];
                if fresh {
                    seen[s] = true;
                }
                fresh
            })
        })
    }

    #[test]
    fn tplhd_2d_20_is_latin() {
        let d = tplhd(20, 2).unwrap();
        assert_eq!(d.len(), 20);
        assert!(is_latin(&d));
    }

    #[test]
    fn tplhd_2d_pattern_propagates() {
        // k = 3 exactly: no resizing, seed translated in both directions
        let d = tplhd(9, 2).unwrap();
        assert!(is_latin(&d));
        assert_eq!(d[0], vec![0.5 / 9.0, 0.5 / 9.0]);
    }

    #[test]
    fn pool_is_seeded() {
        let a = monte_carlo_pool(100, 3, 7).unwrap();
        let b = monte_carlo_pool(100, 3, 7).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo_pool(0, 3, 7).is_err());
        let big = monte_carlo_pool(100_000, 2, 1).unwrap();
        for j in 0..2 {
            let mean: f64 = big.points.iter().map(|p| p[j]).sum::<f64>() / 1e5;
            assert!((0.49..=0.51).contains(&mean));
        }
    }

    #[test]
    fn dataset_rejects_duplicates() {
        let mut ds = Dataset::new(vec![vec![0.1]], vec![1.0], Domain::unit(1)).unwrap();
        assert!(matches!(
            ds.push(vec![0.1], 2.0),
            Err(Error::DuplicatePoint(0))
        ));
        ds.push(vec![0.2], 2.0).unwrap();
        assert_eq!(ds.version, 1);
    }

    #[test]
    fn csv_header_and_raw_units() {
        let d = Domain::new(vec![0.0, 10.0], vec![2.0, 20.0]).unwrap();
        let ds = Dataset::new(vec![vec![0.5, 0.5]], vec![3.0], d).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "x1,x2,y\n1,15,3\n");
    }
}
