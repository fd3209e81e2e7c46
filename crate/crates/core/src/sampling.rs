//! Reproducible collocation sampling on box domains.
//!
//! All draws come from `ChaCha8Rng::seed_from_u64(seed)`. A uniform variate is
//! formed from the top 53 bits of one `u64` output as `(k + 0.5) * 2^-53`, which
//! lies strictly inside `(0, 1)`; coordinates are `lower + u * (upper - lower)`.
//! Boundary faces are chosen with probability proportional to their measure.

use std::io::{Read, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operators::Region;

/// Row-major `n x d` point matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    dimension: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dimension: usize, coords: Vec<f64>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Shape("points need dimension >= 1".into()));
        }
        if !coords.len().is_multiple_of(dimension) {
            return Err(Error::Shape(format!(
                "{} coordinates do not form rows of dimension {dimension}",
                coords.len()
            )));
        }
        Ok(Points { dimension, coords })
    }

    pub fn empty(dimension: usize) -> Self {
        Points { dimension, coords: Vec::new() }
    }

    pub fn from_rows(dimension: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(rows.len() * dimension);
        for r in rows {
            if r.len() != dimension {
                return Err(Error::Shape(format!("row of length {} in {dimension}-d point set", r.len())));
            }
            coords.extend_from_slice(r);
        }
        Ok(Points { dimension, coords })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dimension)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    /// Rows `start..end` as a new point set.
    pub fn slice(&self, start: usize, end: usize) -> Points {
        Points { dimension: self.dimension, coords: self.coords[start * self.dimension..end * self.dimension].to_vec() }
    }

    pub fn select(&self, indices: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(indices.len() * self.dimension);
        for &i in indices {
            coords.extend_from_slice(self.row(i));
        }
        Points { dimension: self.dimension, coords }
    }

    fn push(&mut self, p: &[f64]) {
        debug_assert_eq!(p.len(), self.dimension);
        self.coords.extend_from_slice(p);
    }
}

/// Axis-aligned box `prod_i [lower_i, upper_i]`, optionally with one axis
/// playing the role of time.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    time_axis: Option<usize>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, time_axis: Option<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Shape("box bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config(format!("box bounds must satisfy lower < upper: {lower:?} {upper:?}")));
        }
        if let Some(t) = time_axis {
            if t >= lower.len() {
                return Err(Error::Config(format!("time axis {t} out of range")));
            }
        }
        Ok(BoxDomain { lower, upper, time_axis })
    }

    /// `(0, 1)^d`.
    pub fn unit_cube(dimension: usize) -> Self {
        BoxDomain::new(vec![0.0; dimension], vec![1.0; dimension], None).expect("valid unit cube")
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn time_axis(&self) -> Option<usize> {
        self.time_axis
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }

    /// Uniform tensor grid with `per_axis` nodes along every axis, endpoints included.
    pub fn tensor_grid(&self, per_axis: usize) -> Points {
        let d = self.dimension();
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..per_axis)
                    .map(|k| {
                        if per_axis == 1 {
                            0.5 * (self.lower[i] + self.upper[i])
                        } else if k + 1 == per_axis {
                            self.upper[i]
                        } else {
                            self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (per_axis - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let total = per_axis.pow(d as u32);
        let mut pts = Points::empty(d);
        let mut p = vec![0.0; d];
        for flat in 0..total {
            let mut rem = flat;
            for i in (0..d).rev() {
                p[i] = axes[i][rem % per_axis];
                rem /= per_axis;
            }
            pts.push(&p);
        }
        pts
    }

    /// Non-initial faces as `(axis, pinned value, measure)`. The time axis
    /// contributes no faces: its lower slice is the initial set and its upper
    /// slice is open.
    fn boundary_faces(&self) -> Vec<(usize, f64, f64)> {
        let d = self.dimension();
        let mut faces = Vec::new();
        for axis in 0..d {
            if Some(axis) == self.time_axis {
                continue;
            }
            let measure: f64 = (0..d).filter(|&j| j != axis).map(|j| self.upper[j] - self.lower[j]).product();
            faces.push((axis, self.lower[axis], measure));
            faces.push((axis, self.upper[axis], measure));
        }
        faces
    }
}

/// Pinned stream of uniform variates.
struct UniformStream(ChaCha8Rng);

impl UniformStream {
    fn new(seed: u64) -> Self {
        UniformStream(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on the open interval `(0, 1)`.
    fn unit(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.0.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    /// Uniform strictly inside `(lo, hi)`.
    fn open(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let v = lo + self.unit() * (hi - lo);
            if v > lo && v < hi {
                return v;
            }
        }
    }
}

/// Collocation points with region tags and optional observed values `h(X_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSampleSet {
    pub points: Points,
    pub regions: Vec<Region>,
    pub values: Option<Vec<f64>>,
    pub seed: u64,
}

impl LabeledSampleSet {
    pub fn new(points: Points, regions: Vec<Region>, values: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        if points.len() != regions.len() {
            return Err(Error::Shape(format!("{} points but {} region tags", points.len(), regions.len())));
        }
        if let Some(v) = &values {
            if v.len() != points.len() {
                return Err(Error::Shape(format!("{} points but {} values", points.len(), v.len())));
            }
        }
        Ok(LabeledSampleSet { points, regions, values, seed })
    }

    pub fn empty(dimension: usize) -> Self {
        LabeledSampleSet { points: Points::empty(dimension), regions: Vec::new(), values: None, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.points.dimension()
    }

    pub fn count(&self, region: Region) -> usize {
        self.regions.iter().filter(|&&r| r == region).count()
    }

    pub fn with_values(mut self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::Shape(format!("{} samples but {} values", self.len(), values.len())));
        }
        self.values = Some(values);
        Ok(self)
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> LabeledSampleSet {
        LabeledSampleSet {
            points: self.points.slice(start, end),
            regions: self.regions[start..end].to_vec(),
            values: self.values.as_ref().map(|v| v[start..end].to_vec()),
            seed: self.seed,
        }
    }

    /// Write as CSV with columns `x_1..x_d,region,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let d = self.dimension();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
        header.push("region".into());
        header.push("value".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.points.row(i).iter().map(|v| format!("{v:e}")).collect();
            rec.push(self.regions[i].to_string());
            rec.push(self.values.as_ref().map(|v| format!("{:e}", v[i])).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Read the CSV layout produced by [`write_csv`](Self::write_csv). Values
    /// are either present on every row or absent on every row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = r.headers()?.clone();
        let ncols = header.len();
        if ncols < 3 || &header[ncols - 2] != "region" || &header[ncols - 1] != "value" {
            return Err(Error::Parse("expected columns x_1..x_d,region,value".into()));
        }
        let d = ncols - 2;
        let mut coords = Vec::new();
        let mut regions = Vec::new();
        let mut values = Vec::new();
        let mut missing = 0usize;
        for rec in r.records() {
            let rec = rec?;
            for k in 0..d {
                coords.push(parse_f64(&rec[k])?);
            }
            regions.push(rec[d].parse::<Region>()?);
            let v = rec[d + 1].trim();
            if v.is_empty() {
                missing += 1;
            } else {
                values.push(parse_f64(v)?);
            }
        }
        let values = match (missing, values.len()) {
            (_, 0) => None,
            (0, _) => Some(values),
            _ => return Err(Error::Parse("value column is only partially filled".into())),
        };
        LabeledSampleSet::new(Points::new(d, coords)?, regions, values, 0)
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
}

/// `n` i.i.d. uniform points strictly inside the box.
pub fn sample_interior(domain: &BoxDomain, n: usize, seed: u64) -> LabeledSampleSet {
    let d = domain.dimension();
    let mut rng = UniformStream::new(seed);
    let mut pts = Points { dimension: d, coords: Vec::with_capacity(n * d) };
    let mut p = vec![0.0; d];
    for _ in 0..n {
        for (i, v) in p.iter_mut().enumerate() {
            *v = rng.open(domain.lower[i], domain.upper[i]);
        }
        pts.push(&p);
    }
    LabeledSampleSet { points: pts, regions: vec![Region::Interior; n], values: None, seed }
}

/// `n` points on the non-initial faces, faces chosen proportionally to their
/// measure and the pinned coordinate set exactly to the bound.
pub fn sample_boundary(domain: &BoxDomain, n: usize, seed: u64) -> LabeledSampleSet {
    let d = domain.dimension();
    let faces = domain.boundary_faces();
    let total: f64 = faces.iter().map(|f| f.2).sum();
    let mut rng = UniformStream::new(seed);
    let mut pts = Points { dimension: d, coords: Vec::with_capacity(n * d) };
    let mut p = vec![0.0; d];
    for _ in 0..n {
        let target = rng.unit() * total;
        let mut acc = 0.0;
        let mut chosen = faces.len() - 1;
        for (k, f) in faces.iter().enumerate() {
            acc += f.2;
            if target < acc {
                chosen = k;
                break;
            }
        }
        let (axis, pinned, _) = faces[chosen];
        for (i, v) in p.iter_mut().enumerate() {
            *v = if i == axis { pinned } else { rng.open(domain.lower[i], domain.upper[i]) };
        }
        pts.push(&p);
    }
    LabeledSampleSet { points: pts, regions: vec![Region::Boundary; n], values: None, seed }
}

/// `n` uniform points on the `t = t_min` slice.
pub fn sample_initial(domain: &BoxDomain, n: usize, seed: u64) -> Result<LabeledSampleSet> {
    let t = domain.time_axis.ok_or_else(|| Error::Config("initial samples need a domain with a time axis".into()))?;
    let d = domain.dimension();
    let mut rng = UniformStream::new(seed);
    let mut pts = Points { dimension: d, coords: Vec::with_capacity(n * d) };
    let mut p = vec![0.0; d];
    for _ in 0..n {
        for (i, v) in p.iter_mut().enumerate() {
            *v = if i == t { domain.lower[t] } else { rng.open(domain.lower[i], domain.upper[i]) };
        }
        pts.push(&p);
    }
    Ok(LabeledSampleSet { points: pts, regions: vec![Region::Initial; n], values: None, seed })
}

/// Concatenate sample sets, ordered interior block, boundary block, initial
/// block; within each block the input order is kept. Values survive only if
/// every non-empty input carries them. The seed of the first non-empty input
/// is kept.
pub fn merge(sets: &[LabeledSampleSet]) -> Result<LabeledSampleSet> {
    let Some(first) = sets.first() else {
        return Err(Error::Shape("merge needs at least one sample set".into()));
    };
    let d = first.dimension();
    if let Some(bad) = sets.iter().find(|s| s.dimension() != d) {
        return Err(Error::Shape(format!("cannot merge dimensions {d} and {}", bad.dimension())));
    }
    let keep_values = sets.iter().filter(|s| !s.is_empty()).all(|s| s.values.is_some());
    let total: usize = sets.iter().map(|s| s.len()).sum();
    let mut points = Points { dimension: d, coords: Vec::with_capacity(total * d) };
    let mut regions = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(if keep_values { total } else { 0 });
    for region in [Region::Interior, Region::Boundary, Region::Initial] {
        for s in sets {
            for i in 0..s.len() {
                if s.regions[i] != region {
                    continue;
                }
                points.push(s.points.row(i));
                regions.push(region);
                if keep_values {
                    values.push(s.values.as_ref().expect("checked above")[i]);
                }
            }
        }
    }
    let values = (keep_values && total > 0).then_some(values);
    let seed = sets.iter().find(|s| !s.is_empty()).map_or(first.seed, |s| s.seed);
    Ok(LabeledSampleSet { points, regions, values, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space_time() -> BoxDomain {
        BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0], Some(1)).unwrap()
    }

    #[test]
    fn interior_samples() {
        let dom = BoxDomain::unit_cube(2);
        assert!(sample_interior(&dom, 0, 1).is_empty());
        let s = sample_interior(&dom, 2500, 7);
        assert_eq!(s.len(), 2500);
        assert!(s.points.rows().all(|p| p.iter().all(|&v| v > 0.0 && v < 1.0)));
        assert!(s.regions.iter().all(|&r| r == Region::Interior));
        assert_eq!(s, sample_interior(&dom, 2500, 7));
        assert_ne!(s, sample_interior(&dom, 2500, 8));
    }

    #[test]
    fn boundary_samples_lie_on_faces() {
        let dom = BoxDomain::unit_cube(2);
        let s = sample_boundary(&dom, 1500, 3);
        assert_eq!(s.len(), 1500);
        assert!(s.points.rows().all(|p| p.iter().any(|&v| v == 0.0 || v == 1.0)));

        let line = BoxDomain::unit_cube(1);
        let s = sample_boundary(&line, 4, 11);
        assert!(s.points.rows().all(|p| p[0] == 0.0 || p[0] == 1.0));
    }

    #[test]
    fn space_time_boundary_avoids_time_faces() {
        let s = sample_boundary(&space_time(), 1800, 5);
        for p in s.points.rows() {
            assert!(p[0] == 0.0 || p[0] == 1.0);
            assert!(p[1] > 0.0 && p[1] < 1.0);
        }
    }

    #[test]
    fn initial_samples() {
        let s = sample_initial(&space_time(), 1400, 9).unwrap();
        assert_eq!(s.len(), 1400);
        assert!(s.points.rows().all(|p| p[1] == 0.0));
        assert!(sample_initial(&space_time(), 0, 9).unwrap().is_empty());
        assert!(matches!(sample_initial(&BoxDomain::unit_cube(2), 3, 0), Err(Error::Config(_))));

        // Kolmogorov-Smirnov statistic of the spatial coordinate against U(0, 1).
        let mut xs: Vec<f64> = s.points.rows().map(|p| p[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "KS statistic {ks}");
    }

    #[test]
    fn face_allocation_follows_measure() {
        // Faces of [0,2] x [0,1]: x-faces have measure 1, y-faces measure 2.
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![2.0, 1.0], None).unwrap();
        let n = 10_000;
        let s = sample_boundary(&dom, n, 21);
        let mut counts = [0usize; 4];
        for p in s.points.rows() {
            let k = if p[0] == 0.0 {
                0
            } else if p[0] == 2.0 {
                1
            } else if p[1] == 0.0 {
                2
            } else {
                3
            };
            counts[k] += 1;
        }
        let expected = [n as f64 / 6.0, n as f64 / 6.0, n as f64 / 3.0, n as f64 / 3.0];
        let chi2: f64 = counts.iter().zip(expected).map(|(&c, e)| (c as f64 - e).powi(2) / e).sum();
        // 3 degrees of freedom: P(chi2 > 16.27) = 0.001
        assert!(chi2 < 16.27, "chi-square {chi2} counts {counts:?}");
    }

    #[test]
    fn merge_orders_blocks() {
        let dom = space_time();
        let b = sample_boundary(&dom, 3, 1);
        let i = sample_interior(&dom, 4, 2);
        let t = sample_initial(&dom, 2, 3).unwrap();
        let m = merge(&[t.clone(), b.clone(), i.clone()]).unwrap();
        assert_eq!(m.len(), 9);
        assert_eq!(&m.regions[..4], &[Region::Interior; 4]);
        assert_eq!(&m.regions[4..7], &[Region::Boundary; 3]);
        assert_eq!(&m.regions[7..], &[Region::Initial; 2]);
        assert_eq!(m.points.row(0), i.points.row(0));

        let empty = LabeledSampleSet::empty(2);
        assert_eq!(merge(&[empty, i.clone()]).unwrap(), i);
        assert!(merge(&[i, LabeledSampleSet::empty(3)]).is_err());
    }

    #[test]
    fn merge_keeps_values() {
        let dom = BoxDomain::unit_cube(2);
        let i = sample_interior(&dom, 2500, 1).with_values(vec![1.0; 2500]).unwrap();
        let b = sample_boundary(&dom, 1500, 2).with_values(vec![2.0; 1500]).unwrap();
        let m = merge(&[i.clone(), b.clone()]).unwrap();
        assert_eq!(m.len(), 4000);
        assert!(m.regions[..2500].iter().all(|&r| r == Region::Interior));
        let v = m.values.as_ref().unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[3999], 2.0);
        let bare = sample_boundary(&dom, 5, 3);
        assert!(merge(&[i, bare]).unwrap().values.is_none());
    }

    #[test]
    fn csv_round_trip() {
        let dom = space_time();
        let s = merge(&[sample_interior(&dom, 5, 1), sample_initial(&dom, 2, 2).unwrap()]).unwrap();
        let s = s.with_values(vec![0.5, -1.0, 2.0, 3.0, 1e-300, 7.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,region,value\n"));
        assert!(!text.contains('\r'));
        let back = LabeledSampleSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back.points, s.points);
        assert_eq!(back.regions, s.regions);
        assert_eq!(back.values, s.values);
    }

    #[test]
    fn tensor_grid_endpoints() {
        let g = BoxDomain::unit_cube(2).tensor_grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert_eq!(g.row(5), &[0.5, 1.0]);
        assert_eq!(g.row(8), &[1.0, 1.0]);
    }
}
