//! Spectral-spatial scanning toolkit.
//!
//! Builds 4D point clouds — 3D positions annotated with reflectance vectors —
//! by planning probe viewpoints over a surface, placing a fiber-optic probe
//! with a rotary-servo Stewart platform, and associating each measured
//! spectrum with the cloud region inside the fiber's acceptance cone.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`kinematics`]: Stewart platform inverse kinematics, a numerical
//!   forward-kinematics solver, and pose-error metrics.
//! - [`cloud`]: the [`cloud::SpectralCloud`] container and preprocessing
//!   (crop, RANSAC plane removal, density clustering, voxel downsampling,
//!   normal estimation).
//! - [`planning`]: viewpoint coverage planning and ToF-based surface normal
//!   matching.
//! - [`spectral`]: spectrometer calibration, the fiber acceptance-cone
//!   model, spectral-point association, and the spectral angle mapper.
//! - [`sim`]: synthetic scenes, closed-loop scan execution, and scan
//!   strategy comparison.
//! - [`io`]: PLY/XYZ clouds, spectra CSV, plan and result files.
//!
//! The long-form guide lives in `book/`; its code snippets compile as part
//! of this crate's doc-tests.

pub mod cloud;
pub mod io;
pub mod kinematics;
pub mod planning;
pub mod sim;
pub mod spectral;

pub use cloud::{CropBox, SpectralCloud};
pub use kinematics::{
    forward_kinematics, pose_rmse, quat_error, stewart_ik, GeometryConfig, PlatformGeometry,
    PlatformPose, ServoAngles,
};
pub use planning::{normal_match_pose, plan_viewpoints, PlanConfig, ScanPlan, Viewpoint};
pub use sim::{compare_clouds, make_scene, run_scan, Scene, SceneSpec, ScanMode, ScanResult};
pub use spectral::{
    associate_spectrum, calibrate_spectrum, cone_area, median_stack, sam_score, AcceptanceCone,
    CalibrationPair, Spectrum,
};

#[cfg(doctest)]
mod book_doctests {
    //! Keeps the mdbook chapters compiling; `cargo test` runs every fenced
    //! Rust block in `book/src/`.
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            #[allow(dead_code)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Kinematics, "../../../book/src/kinematics.md");
    chapter!(Preprocessing, "../../../book/src/preprocessing.md");
    chapter!(Planning, "../../../book/src/planning.md");
    chapter!(SpectralModel, "../../../book/src/spectral-model.md");
    chapter!(Simulation, "../../../book/src/simulation.md");
    chapter!(CliPipeline, "../../../book/src/cli-pipeline.md");
}
