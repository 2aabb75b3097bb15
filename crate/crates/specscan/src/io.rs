//! File formats: ASCII PLY and XYZ clouds, spectra CSV, sidecar spectral
//! channels, geometry/instrument JSON, scan-plan JSONL, and scan-result
//! directories.
//!
//! All floats are written with Rust's shortest round-trip formatting, so a
//! fixed pipeline produces byte-identical files run to run.

use crate::cloud::SpectralCloud;
use crate::kinematics::{GeometryConfig, PlatformPose};
use crate::planning::{PlanConfig, ScanPlan, Viewpoint, ViewpointOrder};
use crate::sim::{ScanMode, ScanResult, TofReading};
use crate::spectral::Spectrum;
use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("matrix is not a rigid transform (orthonormality violated)")]
    NotRigid,
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// point clouds

/// Writes an ASCII PLY with x y z and, when present, nx ny nz.
pub fn write_ply(path: &Path, cloud: &SpectralCloud) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let has_normals = cloud.normals().is_some();
    let mut header = String::new();
    header.push_str("ply\nformat ascii 1.0\ncomment specscan point cloud\n");
    let _ = writeln!(header, "element vertex {}", cloud.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if has_normals {
        header.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;
    for (i, p) in cloud.points().iter().enumerate() {
        if let Some(ns) = cloud.normals() {
            let n = ns[i];
            writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)
        } else {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)
        }
        .map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Reads an ASCII PLY containing at least x y z vertex properties.
pub fn read_ply(path: &Path) -> Result<SpectralCloud, IoError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    let mut line_no = 0;
    for (idx, line) in lines.by_ref() {
        line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if idx == 0 {
            if line != "ply" {
                return Err(parse_err(path, 1, "missing ply magic"));
            }
            continue;
        }
        if line.starts_with("format") {
            if !line.contains("ascii") {
                return Err(parse_err(path, line_no, "only ascii format supported"));
            }
            continue;
        }
        if line.starts_with("comment") {
            continue;
        }
        if let Some(rest) = line.strip_prefix("element ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().unwrap_or_default();
            in_vertex_element = name == "vertex";
            if in_vertex_element {
                let count = parts
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(path, line_no, "bad vertex count"))?;
                vertex_count = Some(count);
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("property ") {
            if in_vertex_element {
                let name = rest
                    .split_whitespace()
                    .last()
                    .ok_or_else(|| parse_err(path, line_no, "bad property"))?;
                properties.push(name.to_string());
            }
            continue;
        }
        if line == "end_header" {
            break;
        }
    }

    let count = vertex_count.ok_or_else(|| parse_err(path, line_no, "no vertex element"))?;
    let find = |name: &str| properties.iter().position(|p| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(path, line_no, "vertex needs x, y, z")),
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(if normal_idx.is_some() { count } else { 0 });
    for _ in 0..count {
        let (idx, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, line_no, "truncated vertex data"))?;
        let line = line.map_err(|e| io_err(path, e))?;
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
        if fields.len() < properties.len() {
            return Err(parse_err(path, idx + 1, "short vertex row"));
        }
        points.push(Point3::new(fields[ix], fields[iy], fields[iz]));
        if let Some((a, b, c)) = normal_idx {
            normals.push(Vector3::new(fields[a], fields[b], fields[c]));
        }
    }
    if normal_idx.is_some() {
        SpectralCloud::with_normals(points, normals)
            .map_err(|e| parse_err(path, line_no, e.to_string()))
    } else {
        Ok(SpectralCloud::new(points))
    }
}

/// Writes whitespace-separated `x y z [nx ny nz]` rows.
pub fn write_xyz(path: &Path, cloud: &SpectralCloud) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, p) in cloud.points().iter().enumerate() {
        if let Some(ns) = cloud.normals() {
            let n = ns[i];
            writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)
        } else {
            writeln!(out, "{} {} {}", p.x, p.y, p.z)
        }
        .map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Reads `x y z` or `x y z nx ny nz` rows; blank lines and `#` comments are
/// skipped.
pub fn read_xyz(path: &Path) -> Result<SpectralCloud, IoError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
        match fields.len() {
            3 => points.push(Point3::new(fields[0], fields[1], fields[2])),
            6 => {
                points.push(Point3::new(fields[0], fields[1], fields[2]));
                normals.push(Vector3::new(fields[3], fields[4], fields[5]));
            }
            n => return Err(parse_err(path, idx + 1, format!("expected 3 or 6 fields, got {n}"))),
        }
    }
    if !normals.is_empty() && normals.len() != points.len() {
        return Err(IoError::Format {
            path: path.display().to_string(),
            message: "mixed rows with and without normals".into(),
        });
    }
    if normals.is_empty() {
        Ok(SpectralCloud::new(points))
    } else {
        SpectralCloud::with_normals(points, normals).map_err(|e| IoError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Reads a cloud by extension: `.ply` or anything else as XYZ text.
pub fn read_point_cloud(path: &Path) -> Result<SpectralCloud, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

// ---------------------------------------------------------------------------
// spectra CSV

/// Sidecar CSV carrying a cloud's spectral channels: a wavelengths header
/// (`point_index,<w0>,<w1>,...`) and one row per accumulated sample.
pub fn write_sidecar_csv(path: &Path, cloud: &SpectralCloud) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = String::from("point_index");
    for w in cloud.wavelengths() {
        let _ = write!(header, ",{w}");
    }
    writeln!(out, "{header}").map_err(|e| io_err(path, e))?;
    for i in 0..cloud.len() {
        for sample in cloud.spectra_at(i) {
            let mut row = i.to_string();
            for v in sample {
                let _ = write!(row, ",{v}");
            }
            writeln!(out, "{row}").map_err(|e| io_err(path, e))?;
        }
    }
    Ok(())
}

/// Attaches sidecar spectral channels to a cloud read separately.
pub fn read_sidecar_csv(path: &Path, cloud: &mut SpectralCloud) -> Result<(), IoError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty sidecar"))?;
    let header = header.map_err(|e| io_err(path, e))?;
    let mut cols = header.split(',');
    if cols.next() != Some("point_index") {
        return Err(parse_err(path, 1, "header must start with point_index"));
    }
    let wavelengths: Vec<f64> = cols
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    cloud
        .set_wavelengths(wavelengths.clone())
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    for (idx, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let point: usize = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| parse_err(path, idx + 1, "bad point index"))?;
        if point >= cloud.len() {
            return Err(parse_err(path, idx + 1, "point index out of range"));
        }
        let values: Vec<f64> = fields
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
        cloud
            .push_spectrum(point, values)
            .map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
    }
    Ok(())
}

/// Sample-stack CSV: `wavelength_nm,<w0>,...` header, one row per sample
/// labeled by ordinal.
pub fn write_spectra_csv(path: &Path, samples: &[Spectrum]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let axis = samples
        .first()
        .map(|s| s.wavelengths().to_vec())
        .unwrap_or_default();
    let mut header = String::from("wavelength_nm");
    for w in &axis {
        let _ = write!(header, ",{w}");
    }
    writeln!(out, "{header}").map_err(|e| io_err(path, e))?;
    for (i, s) in samples.iter().enumerate() {
        let mut row = i.to_string();
        for v in s.values() {
            let _ = write!(row, ",{v}");
        }
        writeln!(out, "{row}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn read_spectra_csv(path: &Path) -> Result<Vec<Spectrum>, IoError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty spectra file"))?;
    let header = header.map_err(|e| io_err(path, e))?;
    let mut cols = header.split(',');
    if cols.next() != Some("wavelength_nm") {
        return Err(parse_err(path, 1, "header must start with wavelength_nm"));
    }
    let axis: Vec<f64> = cols
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
        out.push(
            Spectrum::new(axis.clone(), values)
                .map_err(|e| parse_err(path, idx + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON configs

/// Fiber and spectrometer parameters (the instrument config JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentConfig {
    pub na: f64,
    pub bins: usize,
    pub range_nm: (f64, f64),
    pub epsilon_m: f64,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        InstrumentConfig {
            na: 0.5,
            bins: 256,
            range_nm: (500.0, 1100.0),
            epsilon_m: 0.002,
        }
    }
}

impl InstrumentConfig {
    pub fn axis(&self) -> Vec<f64> {
        Spectrum::instrument_axis(self.bins, self.range_nm)
    }

    /// All validation problems at once (empty = valid).
    pub fn issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.na > 0.0 && self.na < 1.0) {
            out.push(format!("instrument.na must be in (0, 1), got {}", self.na));
        }
        if self.bins < 2 {
            out.push(format!("instrument.bins must be >= 2, got {}", self.bins));
        }
        if self.range_nm.1 <= self.range_nm.0 {
            out.push(format!(
                "instrument.range_nm must ascend, got ({}, {})",
                self.range_nm.0, self.range_nm.1
            ));
        }
        if self.epsilon_m < 0.0 {
            out.push(format!(
                "instrument.epsilon_m must be non-negative, got {}",
                self.epsilon_m
            ));
        }
        out
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_geometry(path: &Path) -> Result<GeometryConfig, IoError> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// scan plan JSONL

fn iso_to_mat16(iso: &Isometry3<f64>) -> [f64; 16] {
    let m = iso.to_homogeneous();
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

fn mat16_to_iso(m: &[f64; 16]) -> Result<Isometry3<f64>, IoError> {
    let rot = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    let orth = (rot * rot.transpose() - Matrix3::identity()).norm();
    if orth > 1e-9 || (rot.determinant() - 1.0).abs() > 1e-9 {
        return Err(IoError::NotRigid);
    }
    let rotation = Rotation3::from_matrix_unchecked(rot);
    Ok(Isometry3::from_parts(
        Translation3::new(m[3], m[7], m[11]),
        UnitQuaternion::from_rotation_matrix(&rotation),
    ))
}

fn pose_to_mat16(pose: &PlatformPose) -> [f64; 16] {
    let iso = Isometry3::from_parts(
        Translation3::from(pose.translation),
        UnitQuaternion::from_rotation_matrix(&pose.rotation()),
    );
    iso_to_mat16(&iso)
}

fn mat16_to_pose(m: &[f64; 16]) -> Result<PlatformPose, IoError> {
    let iso = mat16_to_iso(m)?;
    Ok(PlatformPose::from_parts(
        iso.translation.vector,
        &iso.rotation.to_rotation_matrix(),
    ))
}

#[derive(Serialize, Deserialize)]
struct PlanHeaderLine {
    voxel_size: f64,
    scan_dist: f64,
    arm_offset: [f64; 3],
    camera_to_base: [f64; 16],
    order: ViewpointOrder,
    normal_neighbors: usize,
    sensor_origin: [f64; 3],
    source_points: usize,
    source_fingerprint: u64,
}

#[derive(Serialize, Deserialize)]
struct ViewpointLine {
    target_index: usize,
    surface_point: [f64; 3],
    surface_normal: [f64; 3],
    probe_point: [f64; 3],
    arm_frame: [f64; 16],
    stewart_pose: [f64; 16],
    feasible: bool,
}

/// Writes a plan as JSON lines: one config header line, then one viewpoint
/// per line with frames as 4×4 row-major matrices.
pub fn write_plan(path: &Path, plan: &ScanPlan) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let header = PlanHeaderLine {
        voxel_size: plan.config.voxel_size,
        scan_dist: plan.config.scan_dist,
        arm_offset: plan.config.arm_offset.into(),
        camera_to_base: iso_to_mat16(&plan.config.camera_to_base),
        order: plan.config.order,
        normal_neighbors: plan.config.normal_neighbors,
        sensor_origin: plan.config.sensor_origin.coords.into(),
        source_points: plan.source_points,
        source_fingerprint: plan.source_fingerprint,
    };
    writeln!(out, "{}", serde_json::to_string(&header).unwrap()).map_err(|e| io_err(path, e))?;
    for vp in &plan.viewpoints {
        let line = ViewpointLine {
            target_index: vp.target_index,
            surface_point: vp.surface_point.coords.into(),
            surface_normal: vp.surface_normal.into(),
            probe_point: vp.probe_point.coords.into(),
            arm_frame: iso_to_mat16(&vp.arm_frame),
            stewart_pose: pose_to_mat16(&vp.stewart_pose),
            feasible: vp.feasible,
        };
        writeln!(out, "{}", serde_json::to_string(&line).unwrap()).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<ScanPlan, IoError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty plan file"))?;
    let header = header.map_err(|e| io_err(path, e))?;
    let header: PlanHeaderLine = serde_json::from_str(&header)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let config = PlanConfig {
        voxel_size: header.voxel_size,
        scan_dist: header.scan_dist,
        arm_offset: Vector3::from(header.arm_offset),
        camera_to_base: mat16_to_iso(&header.camera_to_base)?,
        order: header.order,
        normal_neighbors: header.normal_neighbors,
        sensor_origin: Point3::from(Vector3::from(header.sensor_origin)),
    };
    let mut viewpoints = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let vp: ViewpointLine = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, idx + 1, e.to_string()))?;
        viewpoints.push(Viewpoint {
            target_index: vp.target_index,
            surface_point: Point3::from(Vector3::from(vp.surface_point)),
            surface_normal: Vector3::from(vp.surface_normal),
            probe_point: Point3::from(Vector3::from(vp.probe_point)),
            arm_frame: mat16_to_iso(&vp.arm_frame)?,
            stewart_pose: mat16_to_pose(&vp.stewart_pose)?,
            feasible: vp.feasible,
        });
    }
    Ok(ScanPlan {
        viewpoints,
        config,
        source_points: header.source_points,
        source_fingerprint: header.source_fingerprint,
    })
}

// ---------------------------------------------------------------------------
// scan result directory

#[derive(Serialize, Deserialize)]
struct RecordLine {
    sequence: usize,
    target_index: usize,
    pose: PlatformPose,
    tof: [TofReading; 3],
    member_count: usize,
    spectrum: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub mode: ScanMode,
    pub executed: usize,
    pub skipped_infeasible: usize,
    pub skipped_no_return: usize,
    pub scanned_points: usize,
    pub total_points: usize,
}

/// Writes a scan result as a directory: `cloud.ply`, `spectra.csv`,
/// `records.jsonl`, `summary.json`.
pub fn write_scan_result(dir: &Path, result: &ScanResult) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_ply(&dir.join("cloud.ply"), &result.cloud)?;
    write_sidecar_csv(&dir.join("spectra.csv"), &result.cloud)?;

    let records_path = dir.join("records.jsonl");
    let file = fs::File::create(&records_path).map_err(|e| io_err(&records_path, e))?;
    let mut out = BufWriter::new(file);
    for rec in &result.records {
        let line = RecordLine {
            sequence: rec.sequence,
            target_index: rec.target_index,
            pose: rec.pose,
            tof: rec.tof,
            member_count: rec.member_count,
            spectrum: rec.spectrum.as_ref().map(|s| s.values().to_vec()),
        };
        writeln!(out, "{}", serde_json::to_string(&line).unwrap())
            .map_err(|e| io_err(&records_path, e))?;
    }

    write_json(
        &dir.join("summary.json"),
        &ResultSummary {
            mode: result.mode,
            executed: result.executed(),
            skipped_infeasible: result.skipped_infeasible,
            skipped_no_return: result.skipped_no_return,
            scanned_points: result.cloud.scanned_indices().len(),
            total_points: result.cloud.len(),
        },
    )
}

/// Reads back the observed cloud of a scan-result directory.
pub fn read_result_cloud(dir: &Path) -> Result<SpectralCloud, IoError> {
    let mut cloud = read_ply(&dir.join("cloud.ply"))?;
    read_sidecar_csv(&dir.join("spectra.csv"), &mut cloud)?;
    Ok(cloud)
}

pub fn read_result_summary(dir: &Path) -> Result<ResultSummary, IoError> {
    read_json(&dir.join("summary.json"))
}
