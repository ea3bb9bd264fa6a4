//! Design-of-experiments containers, maximin Latin hypercubes and design
//! quality metrics.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Axis-aligned box `Ω = Π [lower_k, upper_k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::Argument("domain must have at least one dimension".into()));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Argument(format!(
                    "dimension {k}: lower bound {lo} must be below upper bound {hi}"
                )));
            }
        }
        Ok(Domain { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Domain {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim()
            && z
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Maps a point of Ω to `[0,1]^Q`.
    pub fn to_unit(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, v)| (v - self.lower[k]) / self.width(k))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, v)| self.lower[k] + v * self.width(k))
            .collect()
    }

    /// Sub-box over the coordinate range `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Domain> {
        Domain::new(self.lower[range.clone()].to_vec(), self.upper[range].to_vec())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.lower[k] + rng.random::<f64>() * self.width(k))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).product()
    }
}

/// How a design point came to be in the design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    InitialLhd,
    Ecd,
    Wimse,
    Mmse,
    Manual,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::InitialLhd => "initial-lhd",
            Provenance::Ecd => "ecd",
            Provenance::Wimse => "wimse",
            Provenance::Mmse => "mmse",
            Provenance::Manual => "manual",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Vec<f64>>,
    pub provenance: Provenance,
}

/// Ordered set of points of Ω, optionally with their forward-model runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    domain: Domain,
    points: Vec<DesignPoint>,
}

impl Design {
    pub fn empty(domain: Domain) -> Self {
        Design {
            domain,
            points: Vec::new(),
        }
    }

    pub fn from_points(domain: Domain, points: Vec<DesignPoint>) -> Result<Self> {
        let mut design = Design::empty(domain);
        for p in points {
            design.push(p)?;
        }
        Ok(design)
    }

    fn push(&mut self, point: DesignPoint) -> Result<()> {
        check_dim(self.domain.dim(), point.z.len())?;
        if !self.domain.contains(&point.z) {
            return Err(Error::OutsideDomain { point: point.z });
        }
        if let (Some(first), Some(h)) = (
            self.points.first().and_then(|p| p.evaluation.as_ref()),
            point.evaluation.as_ref(),
        ) {
            check_dim(first.len(), h.len())?;
        }
        self.points.push(point);
        Ok(())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DesignPoint] {
        &self.points
    }

    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.z.clone()).collect()
    }

    /// Evaluations of every point, or `None` if any point is unevaluated.
    pub fn evaluations(&self) -> Option<Vec<Vec<f64>>> {
        self.points.iter().map(|p| p.evaluation.clone()).collect()
    }

    /// Output component `j` of every evaluation.
    pub fn output_column(&self, j: usize) -> Option<Vec<f64>> {
        self.points
            .iter()
            .map(|p| p.evaluation.as_ref().and_then(|h| h.get(j).copied()))
            .collect()
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.points
            .first()
            .and_then(|p| p.evaluation.as_ref())
            .map(Vec::len)
    }

    pub fn contains_point(&self, z: &[f64]) -> bool {
        self.points.iter().any(|p| p.z == z)
    }

    /// Returns a copy of the design with one more point, and whether that
    /// point duplicates an existing one. Duplicates are accepted here; the
    /// kriging layer is where coincident points are rejected.
    pub fn augment(
        &self,
        z: Vec<f64>,
        evaluation: Option<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<(Design, bool)> {
        let duplicate = self.contains_point(&z);
        let mut next = self.clone();
        next.push(DesignPoint {
            z,
            evaluation,
            provenance,
        })?;
        Ok((next, duplicate))
    }

    /// Attaches evaluations to every point, in order.
    pub fn with_evaluations(&self, evaluations: Vec<Vec<f64>>) -> Result<Design> {
        check_dim(self.len(), evaluations.len())?;
        let points = self
            .points
            .iter()
            .zip(evaluations)
            .map(|(p, h)| DesignPoint {
                z: p.z.clone(),
                evaluation: Some(h),
                provenance: p.provenance,
            })
            .collect();
        Design::from_points(self.domain.clone(), points)
    }

    /// Minimum pairwise distance in the unit-scaled space.
    pub fn min_intersite_distance(&self) -> Result<f64> {
        let unit: Vec<Vec<f64>> = self.points.iter().map(|p| self.domain.to_unit(&p.z)).collect();
        min_intersite_distance(&unit)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let q = self.domain.dim();
        let p = self.output_dim().unwrap_or(0);
        let header: Vec<String> = (1..=q)
            .map(|k| format!("z{k}"))
            .chain((1..=p).map(|j| format!("h{j}")))
            .collect();
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for pt in &self.points {
            let mut row: Vec<String> = pt.z.iter().map(|v| format_float(*v)).collect();
            if let Some(h) = &pt.evaluation {
                row.extend(h.iter().map(|v| format_float(*v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), p));
            }
            w.write_record(&row).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a design CSV (`z1..zQ` then optional `h1..hp` columns). Points
    /// are tagged `manual`; provenance is only preserved by the JSON form.
    pub fn read_csv(path: &Path, domain: Domain) -> Result<Design> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let headers = r.headers().map_err(|e| csv_io(path, e))?.clone();
        let z_cols: Vec<usize> = column_indices(&headers, 'z');
        let h_cols: Vec<usize> = column_indices(&headers, 'h');
        if z_cols.len() != domain.dim() {
            return Err(Error::parse(
                path,
                format!("expected {} coordinate columns, found {}", domain.dim(), z_cols.len()),
            ));
        }
        let mut points = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_io(path, e))?;
            let parse = |i: usize| -> Result<Option<f64>> {
                let s = rec.get(i).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 1)))
            };
            let mut z = Vec::with_capacity(z_cols.len());
            for &i in &z_cols {
                z.push(parse(i)?.ok_or_else(|| {
                    Error::parse(path, format!("row {}: missing coordinate", line + 1))
                })?);
            }
            let h: Option<Vec<f64>> = h_cols.iter().map(|&i| parse(i)).collect::<Result<Vec<_>>>()?.into_iter().collect();
            let evaluation = if h_cols.is_empty() { None } else { h };
            points.push(DesignPoint {
                z,
                evaluation,
                provenance: Provenance::Manual,
            });
        }
        Design::from_points(domain, points)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("design serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Design> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Design = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        // re-validate through the checked constructor
        Design::from_points(raw.domain, raw.points)
    }
}

fn column_indices(headers: &csv::StringRecord, prefix: char) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let h = h.trim();
            h.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|k| (k, i))
        })
        .collect();
    cols.sort();
    cols.into_iter().map(|(_, i)| i).collect()
}

pub(crate) fn format_float(v: f64) -> String {
    // shortest round-trip representation keeps files byte-stable
    format!("{v:?}")
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e)
}

/// `δ_D = min_{i≠j} ‖z_i − z_j‖₂` over the given points.
pub fn min_intersite_distance(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Argument(
            "minimum inter-site distance needs at least two points".into(),
        ));
    }
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.min(sq_dist(&points[i], &points[j]));
        }
    }
    Ok(best.sqrt())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Maximin Latin hypercube of `n` points in `domain`.
///
/// Starts from a random midpoint LHS (one random permutation of the bins per
/// dimension) and runs `iterations` coordinate-exchange moves: swap the bins
/// of two rows in one column and keep the swap only if it increases δ_D, or
/// keeps δ_D and lowers the number of pairs attaining it.
pub fn maximin_lhd<R: Rng + ?Sized>(
    n: usize,
    domain: &Domain,
    rng: &mut R,
    iterations: usize,
) -> Result<Design> {
    let bins = LhsBins::random(n, domain.dim(), rng)?;
    let optimized = bins.optimize(rng, iterations);
    Ok(optimized.into_design(domain))
}

/// Integer bin layout of a Latin hypercube: `bins[i][k]` is the bin index of
/// point `i` in dimension `k`.
#[derive(Clone, Debug)]
pub struct LhsBins {
    n: usize,
    bins: Vec<Vec<usize>>,
}

impl LhsBins {
    pub fn random<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("a Latin hypercube needs N ≥ 1".into()));
        }
        let mut bins = vec![vec![0usize; dim]; n];
        for k in 0..dim {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            for (i, b) in perm.into_iter().enumerate() {
                bins[i][k] = b;
            }
        }
        Ok(LhsBins { n, bins })
    }

    pub fn unit_points(&self) -> Vec<Vec<f64>> {
        let n = self.n as f64;
        self.bins
            .iter()
            .map(|row| row.iter().map(|&b| (b as f64 + 0.5) / n).collect())
            .collect()
    }

    /// (δ_D, number of pairs at δ_D) in unit space.
    pub fn score(&self) -> (f64, usize) {
        let pts = self.unit_points();
        let mut best = f64::INFINITY;
        let mut count = 0;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d = sq_dist(&pts[i], &pts[j]);
                if d < best - 1e-15 {
                    best = d;
                    count = 1;
                } else if (d - best).abs() <= 1e-15 {
                    count += 1;
                }
            }
        }
        (best.sqrt(), count)
    }

    pub fn optimize<R: Rng + ?Sized>(mut self, rng: &mut R, iterations: usize) -> Self {
        let dim = self.bins.first().map_or(0, Vec::len);
        if self.n < 3 || dim == 0 {
            return self;
        }
        let mut current = self.score();
        for _ in 0..iterations {
            let k = rng.random_range(0..dim);
            let i = rng.random_range(0..self.n);
            let mut j = rng.random_range(0..self.n - 1);
            if j >= i {
                j += 1;
            }
            swap_bins(&mut self.bins, i, j, k);
            let candidate = self.score();
            let better = candidate.0 > current.0 + 1e-15
                || ((candidate.0 - current.0).abs() <= 1e-15 && candidate.1 < current.1);
            if better {
                current = candidate;
            } else {
                swap_bins(&mut self.bins, i, j, k);
            }
        }
        self
    }

    pub fn into_design(self, domain: &Domain) -> Design {
        let points = self
            .unit_points()
            .into_iter()
            .map(|u| DesignPoint {
                z: domain.from_unit(&u),
                evaluation: None,
                provenance: Provenance::InitialLhd,
            })
            .collect();
        Design {
            domain: domain.clone(),
            points,
        }
    }
}

fn swap_bins(bins: &mut [Vec<usize>], i: usize, j: usize, k: usize) {
    let tmp = bins[i][k];
    bins[i][k] = bins[j][k];
    bins[j][k] = tmp;
}

/// True when every one-dimensional projection puts exactly one point in each
/// of the `N` equal-width bins of the domain.
pub fn has_latin_property(design: &Design) -> bool {
    let n = design.len();
    let domain = design.domain();
    (0..domain.dim()).all(|k| {
        let mut seen = vec![false; n];
        design.points().iter().all(|p| {
            let u = (p.z[k] - domain.lower()[k]) / domain.width(k);
            let b = ((u * n as f64).floor() as usize).min(n - 1);
            !std::mem::replace(&mut seen[b], true)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn single_point_lhd() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let d = maximin_lhd(1, &Domain::unit(3), &mut rng, 100).unwrap();
        assert_eq!(d.len(), 1);
        assert!(has_latin_property(&d));
    }

    #[test]
    fn four_points_one_per_bin() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let domain = Domain::new(vec![-1.0, 10.0], vec![1.0, 30.0]).unwrap();
        let d = maximin_lhd(4, &domain, &mut rng, 200).unwrap();
        assert_eq!(d.len(), 4);
        assert!(has_latin_property(&d));
        for p in d.points() {
            assert!(domain.contains(&p.z));
            for k in 0..2 {
                assert!(p.z[k] > domain.lower()[k] && p.z[k] < domain.upper()[k]);
            }
        }
    }

    #[test]
    fn optimization_never_lowers_delta() {
        for seed in 0..20 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let start = LhsBins::random(10, 2, &mut rng).unwrap();
            let before = start.score().0;
            let after = start.optimize(&mut rng, 1000).score().0;
            assert!(after >= before, "seed {seed}: {after} < {before}");
        }
    }

    #[test]
    fn intersite_distance_cases() {
        assert_eq!(min_intersite_distance(&[vec![0.3, 0.3], vec![0.3, 0.3]]).unwrap(), 0.0);
        let d = min_intersite_distance(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(min_intersite_distance(&[vec![0.0]]).is_err());
    }

    #[test]
    fn intersite_distance_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random(), rng.random()]).collect();
        let mut brute = f64::INFINITY;
        for a in &pts {
            for b in &pts {
                if !std::ptr::eq(a, b) {
                    brute = brute.min(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
                }
            }
        }
        assert_eq!(min_intersite_distance(&pts).unwrap(), brute);
    }

    #[test]
    fn design_distance_uses_unit_scaling() {
        let domain = Domain::new(vec![0.0, 0.0], vec![1.0, 100.0]).unwrap();
        let pts = vec![
            DesignPoint { z: vec![0.0, 0.0], evaluation: None, provenance: Provenance::Manual },
            DesignPoint { z: vec![0.0, 50.0], evaluation: None, provenance: Provenance::Manual },
        ];
        let d = Design::from_points(domain, pts).unwrap();
        assert!((d.min_intersite_distance().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn augment_semantics() {
        let empty = Design::empty(Domain::unit(2));
        let (one, dup) = empty.augment(vec![0.5, 0.5], Some(vec![1.0]), Provenance::Ecd).unwrap();
        assert_eq!(one.len(), 1);
        assert!(!dup);
        assert!(empty.is_empty());
        let (two, dup) = one.augment(vec![0.5, 0.5], Some(vec![1.0]), Provenance::Ecd).unwrap();
        assert_eq!(two.len(), 2);
        assert!(dup);
        assert!(matches!(
            one.augment(vec![1.5, 0.5], None, Provenance::Manual),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn doe2_composition() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut d = maximin_lhd(5, &Domain::unit(2), &mut rng, 500).unwrap();
        for i in 0..5 {
            let z = vec![0.1 + 0.15 * i as f64, 0.5];
            d = d.augment(z, None, Provenance::Ecd).unwrap().0;
        }
        let lhd = d.points().iter().filter(|p| p.provenance == Provenance::InitialLhd).count();
        let ecd = d.points().iter().filter(|p| p.provenance == Provenance::Ecd).count();
        assert_eq!((lhd, ecd), (5, 5));
    }

    #[test]
    fn csv_and_json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let d = maximin_lhd(6, &Domain::unit(2), &mut rng, 100).unwrap();
        let evals: Vec<Vec<f64>> = d.coordinates().iter().map(|z| vec![z[0] + z[1]]).collect();
        let d = d.with_evaluations(evals).unwrap();
        let csv_path = dir.path().join("d.csv");
        d.write_csv(&csv_path).unwrap();
        let back = Design::read_csv(&csv_path, Domain::unit(2)).unwrap();
        assert_eq!(back.coordinates(), d.coordinates());
        assert_eq!(back.evaluations(), d.evaluations());
        let json_path = dir.path().join("d.json");
        d.write_json(&json_path).unwrap();
        assert_eq!(Design::read_json(&json_path).unwrap(), d);
    }
}
