//! Spectrometer calibration, the fiber acceptance-cone model, and the
//! spectral angle mapper.
//!
//! A fiber with numerical aperture `NA` accepts light inside a cone of
//! half-angle `asin(NA)` around its axis. The cone of sensing depth
//! `d + ε` (standoff plus a small subsurface extension) selects the subset
//! of cloud points that contribute to one measurement; those points receive
//! the observed spectrum.

use crate::cloud::SpectralCloud;
use nalgebra::{Isometry3, Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("wavelength axis must be strictly ascending")]
    NonAscendingWavelengths,
    #[error("values and wavelengths differ in length: {values} vs {wavelengths}")]
    LengthMismatch { values: usize, wavelengths: usize },
    #[error("spectrum contains non-finite values")]
    NonFinite,
    #[error("spectra do not share a wavelength axis")]
    AxisMismatch,
    #[error("integration-time tags differ: {0} s vs {1} s")]
    IntegrationTimeMismatch(f64, f64),
    #[error("empty input")]
    EmptyInput,
    #[error("spectrum norm is zero")]
    ZeroNorm,
    #[error("numerical aperture must lie in (0, 1), got {0}")]
    BadNumericalAperture(f64),
    #[error("cone half-angle must lie in (0, pi/2), got {0}")]
    BadHalfAngle(f64),
    #[error("cone depth must be positive, got {0}")]
    BadDepth(f64),
}

/// Reflectance (or raw counts) over an ascending wavelength axis in nm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    wavelengths: Vec<f64>,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(wavelengths: Vec<f64>, values: Vec<f64>) -> Result<Self, SpectralError> {
        if values.len() != wavelengths.len() {
            return Err(SpectralError::LengthMismatch {
                values: values.len(),
                wavelengths: wavelengths.len(),
            });
        }
        if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SpectralError::NonAscendingWavelengths);
        }
        if values.iter().chain(&wavelengths).any(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite);
        }
        Ok(Spectrum {
            wavelengths,
            values,
        })
    }

    /// Evenly spaced instrument axis; the stock grating covers 500–1100 nm
    /// in 256 samples.
    pub fn instrument_axis(bins: usize, range_nm: (f64, f64)) -> Vec<f64> {
        let (lo, hi) = range_nm;
        (0..bins)
            .map(|i| lo + (hi - lo) * i as f64 / (bins - 1).max(1) as f64)
            .collect()
    }

    pub fn default_axis() -> Vec<f64> {
        Self::instrument_axis(256, (500.0, 1100.0))
    }

    pub fn constant(wavelengths: Vec<f64>, value: f64) -> Result<Self, SpectralError> {
        let values = vec![value; wavelengths.len()];
        Spectrum::new(wavelengths, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_axis(&self, other: &Spectrum) -> bool {
        self.wavelengths == other.wavelengths
    }
}

/// White/dark reference pair for Eq.-style reflectance calibration. All
/// spectra in a calibration must share one integration time.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPair {
    white_median: Spectrum,
    dark_median: Spectrum,
    integration_time_s: f64,
}

impl CalibrationPair {
    pub fn new(
        white_median: Spectrum,
        dark_median: Spectrum,
        integration_time_s: f64,
    ) -> Result<Self, SpectralError> {
        if !white_median.same_axis(&dark_median) {
            return Err(SpectralError::AxisMismatch);
        }
        Ok(CalibrationPair {
            white_median,
            dark_median,
            integration_time_s,
        })
    }

    pub fn white(&self) -> &Spectrum {
        &self.white_median
    }

    pub fn dark(&self) -> &Spectrum {
        &self.dark_median
    }

    pub fn integration_time_s(&self) -> f64 {
        self.integration_time_s
    }

    /// Bins where white − dark is not strictly positive; these cannot be
    /// calibrated.
    pub fn invalid_bins(&self) -> Vec<usize> {
        self.white_median
            .values
            .iter()
            .zip(&self.dark_median.values)
            .enumerate()
            .filter(|(_, (w, d))| *w - *d <= 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Calibration output: reflectance plus the bins that had a non-positive
/// white−dark denominator. Masked bins hold 0.0 instead of NaN/Inf.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub spectrum: Spectrum,
    pub invalid_bins: Vec<usize>,
}

/// Per-bin `(raw − dark) / (white − dark)`.
pub fn calibrate_spectrum(
    raw: &Spectrum,
    cal: &CalibrationPair,
) -> Result<Calibrated, SpectralError> {
    if !raw.same_axis(cal.white()) {
        return Err(SpectralError::AxisMismatch);
    }
    let mut values = Vec::with_capacity(raw.len());
    let mut invalid = Vec::new();
    for (i, ((r, w), d)) in raw
        .values
        .iter()
        .zip(&cal.white_median.values)
        .zip(&cal.dark_median.values)
        .enumerate()
    {
        let den = w - d;
        if den <= 0.0 {
            invalid.push(i);
            values.push(0.0);
        } else {
            values.push((r - d) / den);
        }
    }
    Ok(Calibrated {
        spectrum: Spectrum {
            wavelengths: raw.wavelengths.clone(),
            values,
        },
        invalid_bins: invalid,
    })
}

/// Per-bin median over a stack of spectra (even counts average the two
/// middle samples).
pub fn median_stack(samples: &[Spectrum]) -> Result<Spectrum, SpectralError> {
    let first = samples.first().ok_or(SpectralError::EmptyInput)?;
    for s in &samples[1..] {
        if !s.same_axis(first) {
            return Err(SpectralError::AxisMismatch);
        }
    }
    let mut values = Vec::with_capacity(first.len());
    let mut column = Vec::with_capacity(samples.len());
    for bin in 0..first.len() {
        column.clear();
        column.extend(samples.iter().map(|s| s.values[bin]));
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = column.len();
        values.push(if n % 2 == 1 {
            column[n / 2]
        } else {
            (column[n / 2 - 1] + column[n / 2]) / 2.0
        });
    }
    Ok(Spectrum {
        wavelengths: first.wavelengths.clone(),
        values,
    })
}

/// Area of the circle where an acceptance cone of aperture `na` meets a
/// perpendicular surface at distance `d`: `π (d·tan(asin NA))²`.
pub fn cone_area(na: f64, d: f64) -> f64 {
    assert!(na > 0.0 && na < 1.0, "numerical aperture out of (0, 1)");
    assert!(d > 0.0, "distance must be positive");
    PI * (d * na.asin().tan()).powi(2)
}

/// Finite acceptance cone: apex at the fiber tip, pointing along `axis`,
/// truncated at `depth` along the axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceCone {
    apex: Point3<f64>,
    axis: Unit<Vector3<f64>>,
    half_angle: f64,
    depth: f64,
}

impl AcceptanceCone {
    pub fn new(
        apex: Point3<f64>,
        axis: Unit<Vector3<f64>>,
        half_angle: f64,
        depth: f64,
    ) -> Result<Self, SpectralError> {
        if !(half_angle > 0.0 && half_angle < PI / 2.0) {
            return Err(SpectralError::BadHalfAngle(half_angle));
        }
        if depth <= 0.0 {
            return Err(SpectralError::BadDepth(depth));
        }
        Ok(AcceptanceCone {
            apex,
            axis,
            half_angle,
            depth,
        })
    }

    /// Cone from fiber parameters: half-angle `asin(na)`, depth
    /// `sensing_distance + epsilon`.
    pub fn from_na(
        apex: Point3<f64>,
        axis: Unit<Vector3<f64>>,
        na: f64,
        sensing_distance: f64,
        epsilon: f64,
    ) -> Result<Self, SpectralError> {
        if !(na > 0.0 && na < 1.0) {
            return Err(SpectralError::BadNumericalAperture(na));
        }
        AcceptanceCone::new(apex, axis, na.asin(), sensing_distance + epsilon)
    }

    pub fn apex(&self) -> Point3<f64> {
        self.apex
    }

    pub fn axis(&self) -> Unit<Vector3<f64>> {
        self.axis
    }

    pub fn half_angle(&self) -> f64 {
        self.half_angle
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> AcceptanceCone {
        AcceptanceCone {
            apex: iso * self.apex,
            axis: Unit::new_normalize(iso * self.axis.into_inner()),
            half_angle: self.half_angle,
            depth: self.depth,
        }
    }

    /// Analytic membership: axial projection in `[0, depth]` and lateral
    /// offset within the cone surface.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let v = p - self.apex;
        let h = v.dot(&self.axis);
        if h < 0.0 || h > self.depth {
            return false;
        }
        let lateral = (v - h * self.axis.into_inner()).norm();
        lateral <= h * self.half_angle.tan()
    }

    /// Indices of cloud points inside the cone, ascending.
    pub fn members(&self, cloud: &SpectralCloud) -> Vec<usize> {
        cloud
            .points()
            .iter()
            .enumerate()
            .filter(|(_, p)| self.contains(p))
            .map(|(i, _)| i)
            .collect()
    }

    /// Polyhedral membership for parity with the sampled-cone route: the
    /// cone is discretized as its apex plus `radial_samples` points on the
    /// base rim, and containment is tested against the convex hull of that
    /// set. Those points are in convex position, so the hull is exactly the
    /// apex-to-rim pyramid; the test runs against its face planes, which is
    /// the same predicate a Delaunay decomposition of the hull evaluates.
    /// The polyhedron under-approximates the true cone near the lateral
    /// surface by the rim chord sagitta.
    pub fn mesh_members(&self, cloud: &SpectralCloud, radial_samples: usize) -> Vec<usize> {
        let m = radial_samples.max(3);
        let axis = self.axis.into_inner();
        // orthonormal frame around the axis
        let seed = if axis.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let u = (seed - axis * seed.dot(&axis)).normalize();
        let w = axis.cross(&u);
        let radius = self.depth * self.half_angle.tan();
        let base_center = self.apex + self.depth * axis;
        let rim: Vec<Point3<f64>> = (0..m)
            .map(|i| {
                let ang = 2.0 * PI * i as f64 / m as f64;
                base_center + radius * (ang.cos() * u + ang.sin() * w)
            })
            .collect();

        // face planes: (normal, offset) with inside = normal·p <= offset
        let inside_probe = self.apex + 0.5 * self.depth * axis;
        let mut faces: Vec<(Vector3<f64>, f64)> = Vec::with_capacity(m + 1);
        faces.push((axis, axis.dot(&base_center.coords)));
        for i in 0..m {
            let a = rim[i];
            let b = rim[(i + 1) % m];
            let mut n = (a - self.apex).cross(&(b - self.apex));
            if n.dot(&(inside_probe - self.apex)) > 0.0 {
                n = -n;
            }
            faces.push((n, n.dot(&self.apex.coords)));
        }

        cloud
            .points()
            .iter()
            .enumerate()
            .filter(|(_, p)| faces.iter().all(|(n, d)| n.dot(&p.coords) <= *d + 1e-15))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Marks every cloud point inside the cone as scanned and attaches the
/// spectrum to it, returning the member indices. An empty membership is not
/// an error; callers may warn on it. If the cloud has no wavelength axis
/// yet, the spectrum's axis is installed.
pub fn associate_spectrum(
    cloud: &mut SpectralCloud,
    cone: &AcceptanceCone,
    spectrum: &Spectrum,
) -> Result<Vec<usize>, SpectralError> {
    if cloud.wavelengths().is_empty() {
        cloud
            .set_wavelengths(spectrum.wavelengths.clone())
            .map_err(|_| SpectralError::AxisMismatch)?;
    } else if cloud.wavelengths() != spectrum.wavelengths() {
        return Err(SpectralError::AxisMismatch);
    }
    let members = cone.members(cloud);
    for &i in &members {
        cloud
            .push_spectrum(i, spectrum.values.clone())
            .map_err(|_| SpectralError::AxisMismatch)?;
    }
    Ok(members)
}

/// Spectral angle mapper: `acos(s_p·ŝ / (‖s_p‖‖ŝ‖))` in `[0, π]`. The
/// cosine is clamped before `acos`, so nearly parallel vectors cannot
/// produce NaN.
pub fn sam_score(s_p: &Spectrum, s_hat: &Spectrum) -> Result<f64, SpectralError> {
    if !s_p.same_axis(s_hat) {
        return Err(SpectralError::AxisMismatch);
    }
    sam_on_slices(&s_p.values, &s_hat.values)
}

/// SAM with a set of excluded bins (e.g. bins an upstream calibration
/// flagged invalid); the bins are dropped from both vectors.
pub fn sam_score_masked(
    s_p: &Spectrum,
    s_hat: &Spectrum,
    excluded_bins: &[usize],
) -> Result<f64, SpectralError> {
    if !s_p.same_axis(s_hat) {
        return Err(SpectralError::AxisMismatch);
    }
    let keep = |i: &usize| !excluded_bins.contains(i);
    let a: Vec<f64> = (0..s_p.len()).filter(keep).map(|i| s_p.values[i]).collect();
    let b: Vec<f64> = (0..s_hat.len())
        .filter(keep)
        .map(|i| s_hat.values[i])
        .collect();
    sam_on_slices(&a, &b)
}

pub(crate) fn sam_on_slices(a: &[f64], b: &[f64]) -> Result<f64, SpectralError> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SpectralError::ZeroNorm);
    }
    // |cos| would clamp to 1: settle parallel/antiparallel without rounding
    // through sqrt, so identical inputs score exactly 0.
    if dot * dot >= na * nb {
        return Ok(if dot >= 0.0 { 0.0 } else { PI });
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0).acos())
}
