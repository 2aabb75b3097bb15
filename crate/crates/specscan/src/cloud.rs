//! Spectral point clouds and the preprocessing pipeline.
//!
//! [`SpectralCloud`] stores 3D positions with optional per-point normals and
//! accumulated reflectance samples over a shared wavelength axis. Every
//! preprocessing stage keeps per-point attributes aligned: a point's normal
//! and spectra travel with it through crop, plane removal, clustering and
//! downsampling.

use nalgebra::{Isometry3, Point3, SymmetricEigen, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("crop box min must be strictly below max on every axis")]
    InvalidBox,
    #[error("operation needs at least {needed} points, cloud has {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no cluster found: every point is noise")]
    NoCluster,
    #[error("degenerate neighborhood around point {index}: neighbors are collinear")]
    DegenerateNeighborhood { index: usize },
    #[error("neighbor count k={k} must satisfy 3 <= k < cloud size {size}")]
    BadNeighborCount { k: usize, size: usize },
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxel(f64),
    #[error("spectrum has {got} bins, cloud wavelength axis has {expected}")]
    SpectrumLengthMismatch { expected: usize, got: usize },
    #[error("normal count {got} does not match point count {expected}")]
    NormalCountMismatch { expected: usize, got: usize },
}

/// Axis-aligned crop volume; the box is closed on all faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl CropBox {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Result<Self, CloudError> {
        if min.x < max.x && min.y < max.y && min.z < max.z {
            Ok(CropBox { min, max })
        } else {
            Err(CloudError::InvalidBox)
        }
    }

    pub fn min(&self) -> Point3<f64> {
        self.min
    }

    pub fn max(&self) -> Point3<f64> {
        self.max
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Point cloud with optional unit normals and per-point reflectance samples.
///
/// A point is *scanned* exactly when it carries at least one spectrum
/// sample. All samples share the cloud's wavelength axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCloud {
    points: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    wavelengths: Vec<f64>,
    spectra: Vec<Vec<Vec<f64>>>,
}

impl SpectralCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        let n = points.len();
        SpectralCloud {
            points,
            normals: None,
            wavelengths: Vec::new(),
            spectra: vec![Vec::new(); n],
        }
    }

    pub fn with_normals(
        points: Vec<Point3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self, CloudError> {
        if normals.len() != points.len() {
            return Err(CloudError::NormalCountMismatch {
                expected: points.len(),
                got: normals.len(),
            });
        }
        let mut cloud = SpectralCloud::new(points);
        cloud.normals = Some(normals.iter().map(|n| n.normalize()).collect());
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    /// Installs the shared wavelength axis. Existing samples must already
    /// match the new bin count.
    pub fn set_wavelengths(&mut self, wavelengths: Vec<f64>) -> Result<(), CloudError> {
        for samples in &self.spectra {
            for s in samples {
                if s.len() != wavelengths.len() {
                    return Err(CloudError::SpectrumLengthMismatch {
                        expected: wavelengths.len(),
                        got: s.len(),
                    });
                }
            }
        }
        self.wavelengths = wavelengths;
        Ok(())
    }

    /// Accumulated reflectance samples at point `i`.
    pub fn spectra_at(&self, i: usize) -> &[Vec<f64>] {
        &self.spectra[i]
    }

    /// Appends one reflectance sample to point `i`.
    pub fn push_spectrum(&mut self, i: usize, values: Vec<f64>) -> Result<(), CloudError> {
        if values.len() != self.wavelengths.len() {
            return Err(CloudError::SpectrumLengthMismatch {
                expected: self.wavelengths.len(),
                got: values.len(),
            });
        }
        self.spectra[i].push(values);
        Ok(())
    }

    pub fn is_scanned(&self, i: usize) -> bool {
        !self.spectra[i].is_empty()
    }

    pub fn scanned_mask(&self) -> Vec<bool> {
        self.spectra.iter().map(|s| !s.is_empty()).collect()
    }

    pub fn scanned_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_scanned(i)).collect()
    }

    /// Per-bin mean over the accumulated samples at point `i`.
    pub fn mean_spectrum(&self, i: usize) -> Option<Vec<f64>> {
        let samples = &self.spectra[i];
        if samples.is_empty() {
            return None;
        }
        let w = self.wavelengths.len();
        let mut mean = vec![0.0; w];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        let n = samples.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Some(mean)
    }

    /// Drops every accumulated spectrum, keeping geometry and the axis.
    pub fn clear_spectra(&mut self) {
        for s in &mut self.spectra {
            s.clear();
        }
    }

    /// Subset cloud carrying the selected points' attributes.
    pub fn select(&self, indices: &[usize]) -> SpectralCloud {
        SpectralCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
            wavelengths: self.wavelengths.clone(),
            spectra: indices.iter().map(|&i| self.spectra[i].clone()).collect(),
        }
    }

    /// Rigidly transformed copy (points and normals move, spectra stay).
    pub fn transformed(&self, iso: &Isometry3<f64>) -> SpectralCloud {
        SpectralCloud {
            points: self.points.iter().map(|p| iso * p).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| iso * n).collect()),
            wavelengths: self.wavelengths.clone(),
            spectra: self.spectra.clone(),
        }
    }

    /// FNV-1a over the exact point coordinates; ties a scan plan to the
    /// cloud it was planned from.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for p in &self.points {
            eat(p.x);
            eat(p.y);
            eat(p.z);
        }
        hash
    }
}

/// Retains exactly the points inside the closed box.
pub fn crop(cloud: &SpectralCloud, cropbox: &CropBox) -> SpectralCloud {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| cropbox.contains(&cloud.points[i]))
        .collect();
    cloud.select(&keep)
}

/// Plane in Hessian form: `normal · p = offset`, unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        (self.normal.dot(&p.coords) - self.offset).abs()
    }

    fn canonical(mut self) -> Plane {
        let flip = self.normal.z < 0.0
            || (self.normal.z == 0.0 && self.normal.y < 0.0)
            || (self.normal.z == 0.0 && self.normal.y == 0.0 && self.normal.x < 0.0);
        if flip {
            self.normal = -self.normal;
            self.offset = -self.offset;
        }
        self
    }
}

/// RANSAC plane segmentation: finds the plane with the most inliers within
/// `dist_thresh`, least-squares refits it on those inliers, and returns the
/// cloud minus the refit plane's inliers plus the plane itself.
/// Deterministic for a fixed seed.
pub fn remove_plane_ransac(
    cloud: &SpectralCloud,
    dist_thresh: f64,
    iterations: usize,
    seed: u64,
) -> Result<(SpectralCloud, Plane), CloudError> {
    let n = cloud.len();
    if n < 3 {
        return Err(CloudError::TooFewPoints { needed: 3, got: n });
    }
    let pts = cloud.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best_count = 0usize;
    let mut best_plane: Option<Plane> = None;
    for _ in 0..iterations.max(1) {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n);
        while j == i {
            j = rng.random_range(0..n);
        }
        let mut k = rng.random_range(0..n);
        while k == i || k == j {
            k = rng.random_range(0..n);
        }
        let normal = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
        let norm = normal.norm();
        if norm < 1e-15 {
            continue; // collinear sample
        }
        let unit = normal / norm;
        let plane = Plane {
            normal: unit,
            offset: unit.dot(&pts[i].coords),
        };
        let count = pts.iter().filter(|p| plane.distance(p) <= dist_thresh).count();
        if count > best_count {
            best_count = count;
            best_plane = Some(plane);
        }
    }
    let coarse = best_plane.ok_or(CloudError::DegenerateNeighborhood { index: 0 })?;

    let rough_inliers: Vec<usize> = (0..n)
        .filter(|&i| coarse.distance(&pts[i]) <= dist_thresh)
        .collect();
    let refit = fit_plane_least_squares(pts, &rough_inliers).unwrap_or(coarse);
    let refit = refit.canonical();

    let keep: Vec<usize> = (0..n)
        .filter(|&i| refit.distance(&pts[i]) > dist_thresh)
        .collect();
    Ok((cloud.select(&keep), refit))
}

fn fit_plane_least_squares(pts: &[Point3<f64>], indices: &[usize]) -> Option<Plane> {
    if indices.len() < 3 {
        return None;
    }
    let mut centroid = Vector3::zeros();
    for &i in indices {
        centroid += pts[i].coords;
    }
    centroid /= indices.len() as f64;
    let mut cov = nalgebra::Matrix3::zeros();
    for &i in indices {
        let d = pts[i].coords - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut min_idx = 0;
    for k in 1..3 {
        if eig.eigenvalues[k] < eig.eigenvalues[min_idx] {
            min_idx = k;
        }
    }
    let normal = eig.eigenvectors.column(min_idx).into_owned();
    let norm = normal.norm();
    if norm < 1e-15 {
        return None;
    }
    let unit = normal / norm;
    Some(Plane {
        normal: unit,
        offset: unit.dot(&centroid),
    })
}

/// Uniform grid over point indices for radius queries.
struct CellGrid {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl CellGrid {
    fn build(pts: &[Point3<f64>], cell: f64) -> CellGrid {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        CellGrid { cell, cells }
    }

    fn key(p: &Point3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Indices within `radius` of `p` (including `p` itself), ascending.
    fn within(&self, pts: &[Point3<f64>], p: &Point3<f64>, radius: f64) -> Vec<usize> {
        let (cx, cy, cz) = Self::key(p, self.cell);
        let reach = (radius / self.cell).ceil() as i64;
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            if (pts[i] - p).norm() <= radius {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Density-based clustering; returns the largest cluster (ties broken by
/// lowest cluster id, i.e. first discovered). Noise points are never
/// returned.
pub fn cluster_largest(
    cloud: &SpectralCloud,
    eps: f64,
    min_points: usize,
) -> Result<SpectralCloud, CloudError> {
    let pts = cloud.points();
    let n = pts.len();
    if n == 0 {
        return Err(CloudError::NoCluster);
    }
    let grid = CellGrid::build(pts, eps.max(1e-12));

    const UNVISITED: i64 = -2;
    const NOISE: i64 = -1;
    let mut label = vec![UNVISITED; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();

    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        let neighbors = grid.within(pts, &pts[i], eps);
        if neighbors.len() < min_points {
            label[i] = NOISE;
            continue;
        }
        let id = clusters.len() as i64;
        let mut members = Vec::new();
        label[i] = id;
        members.push(i);
        let mut queue: Vec<usize> = neighbors;
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            if label[j] == NOISE {
                label[j] = id; // border point
                members.push(j);
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = id;
            members.push(j);
            let jn = grid.within(pts, &pts[j], eps);
            if jn.len() >= min_points {
                queue.extend(jn); // core point: expand
            }
        }
        clusters.push(members);
    }

    let best = clusters
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
        .map(|(_, m)| m)
        .ok_or(CloudError::NoCluster)?;
    let mut indices = best.clone();
    indices.sort_unstable();
    Ok(cloud.select(&indices))
}

/// One representative per occupied voxel: the centroid of its members.
/// Member normals are averaged and renormalized; member spectra are pooled.
/// Output is ordered by voxel key, so it is deterministic.
pub fn voxel_downsample(cloud: &SpectralCloud, voxel: f64) -> Result<SpectralCloud, CloudError> {
    if voxel <= 0.0 {
        return Err(CloudError::NonPositiveVoxel(voxel));
    }
    let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        buckets.entry(CellGrid::key(p, voxel)).or_default().push(i);
    }
    let mut keys: Vec<_> = buckets.keys().copied().collect();
    keys.sort_unstable();

    let mut points = Vec::with_capacity(keys.len());
    let mut normals = cloud.normals.as_ref().map(|_| Vec::with_capacity(keys.len()));
    let mut spectra = Vec::with_capacity(keys.len());
    for key in keys {
        let members = &buckets[&key];
        let mut centroid = Vector3::zeros();
        for &i in members {
            centroid += cloud.points[i].coords;
        }
        points.push(Point3::from(centroid / members.len() as f64));

        if let (Some(out), Some(ns)) = (normals.as_mut(), cloud.normals.as_ref()) {
            let mut sum = Vector3::zeros();
            for &i in members {
                sum += ns[i];
            }
            let norm = sum.norm();
            out.push(if norm > 1e-12 { sum / norm } else { ns[members[0]] });
        }

        let mut pooled = Vec::new();
        for &i in members {
            pooled.extend(cloud.spectra[i].iter().cloned());
        }
        spectra.push(pooled);
    }
    Ok(SpectralCloud {
        points,
        normals,
        wavelengths: cloud.wavelengths.clone(),
        spectra,
    })
}

/// Per-point normals from the k-nearest-neighbor covariance (k includes the
/// point itself), oriented toward `viewpoint`.
pub fn estimate_normals(
    cloud: &SpectralCloud,
    k: usize,
    viewpoint: &Point3<f64>,
) -> Result<SpectralCloud, CloudError> {
    let n = cloud.len();
    if k < 3 || k >= n {
        return Err(CloudError::BadNeighborCount { k, size: n });
    }
    let pts = cloud.points();
    let mut normals = Vec::with_capacity(n);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        scratch.clear();
        scratch.extend(
            pts.iter()
                .enumerate()
                .map(|(j, p)| ((p - pts[i]).norm_squared(), j)),
        );
        scratch.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        let neighborhood = &scratch[..k];

        let mut centroid = Vector3::zeros();
        for &(_, j) in neighborhood {
            centroid += pts[j].coords;
        }
        centroid /= k as f64;
        let mut cov = nalgebra::Matrix3::zeros();
        for &(_, j) in neighborhood {
            let d = pts[j].coords - centroid;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let (lo, mid, hi) = (order[0], order[1], order[2]);
        // Rank < 2 means the neighborhood is a line (or a point).
        if eig.eigenvalues[mid] <= eig.eigenvalues[hi] * 1e-9 {
            return Err(CloudError::DegenerateNeighborhood { index: i });
        }
        let mut normal = eig.eigenvectors.column(lo).normalize();
        if normal.dot(&(viewpoint - pts[i])) < 0.0 {
            normal = -normal;
        }
        normals.push(normal);
    }
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok(out)
}
