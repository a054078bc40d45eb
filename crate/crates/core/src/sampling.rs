//! Area-weighted surface sampling and the vertex displacement field.
//!
//! Each sample stores the displacement from the sampled point to the three
//! corners of its face, in stored corner order, so `point + displacement[c]`
//! reproduces corner `c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Point3};
use crate::mesh_io::Mesh;
use crate::rng;

/// Desk-scale number of surface samples.
pub const DEFAULT_SAMPLES: usize = 8_192;
/// Full-scale sample count used for the reference configuration.
pub const REFERENCE_SAMPLES: usize = 819_200;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("mesh has no face with positive area")]
    NoSamplableSurface,
    #[error("sample count must be at least 1")]
    ZeroSamples,
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VdfSampleSet {
    pub points: Vec<Point3>,
    pub displacements: Vec<[Point3; 3]>,
    pub normals: Vec<Point3>,
    pub face_ids: Vec<usize>,
}

impl VdfSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Displacements from `p` to the corners of `face`.
pub fn displacement_field(mesh: &Mesh, face: usize, p: Point3) -> [Point3; 3] {
    let f = mesh.faces[face];
    [0, 1, 2].map(|c| geom::sub(mesh.vertices[f[c]], p))
}

/// Unit normal of `face`, or `None` when the face has no area.
pub fn face_normal(mesh: &Mesh, face: usize) -> Option<Point3> {
    let [a, b, c] = mesh.faces[face].map(|i| mesh.vertices[i]);
    let n = geom::cross(geom::sub(b, a), geom::sub(c, a));
    let len = geom::norm(n);
    (len > 1e-12 && len.is_finite()).then(|| geom::scale(n, 1.0 / len))
}

/// Draws `count` points uniformly over the surface area of `mesh`.
///
/// Sample `k` consumes only the random window addressed by `(seed, k)`, so the
/// result is independent of evaluation order.
pub fn sample_surface(mesh: &Mesh, count: usize, seed: u64) -> Result<VdfSampleSet, SamplingError> {
    if count == 0 {
        return Err(SamplingError::ZeroSamples);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut normals = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for face in 0..mesh.faces.len() {
        let normal = face_normal(mesh, face);
        if normal.is_some() {
            total += mesh.face_area(face);
        }
        cumulative.push(total);
        normals.push(normal);
    }
    if total <= 0.0 {
        return Err(SamplingError::NoSamplableSurface);
    }

    let mut set = VdfSampleSet {
        points: Vec::with_capacity(count),
        displacements: Vec::with_capacity(count),
        normals: Vec::with_capacity(count),
        face_ids: Vec::with_capacity(count),
    };
    for k in 0..count {
        let mut r = rng::stream(seed, rng::streams::SURFACE, k as u64);
        let target = rng::uniform(&mut r) * total;
        // First face whose cumulative area exceeds the target; zero-area faces
        // never satisfy the strict inequality ahead of their predecessor.
        let mut face = cumulative.partition_point(|&c| c <= target);
        if face >= cumulative.len() {
            face = cumulative.len() - 1;
            while normals[face].is_none() {
                face -= 1;
            }
        }
        let root = rng::uniform(&mut r).sqrt();
        let u2 = rng::uniform(&mut r);
        let weights = [1.0 - root, root * (1.0 - u2), root * u2];
        let corners = mesh.faces[face].map(|i| mesh.vertices[i]);
        let mut p = [0.0; 3];
        for (w, v) in weights.iter().zip(corners) {
            p = geom::add(p, geom::scale(v, *w));
        }
        set.points.push(p);
        set.displacements.push(displacement_field(mesh, face, p));
        set.normals
            .push(normals[face].expect("sampled face has area"));
        set.face_ids.push(face);
    }
    Ok(set)
}

/// Input feature layouts for the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureVariant {
    Full,
    NoNormal,
    NoVdf,
    NormVdf,
    ThreshNormVdf,
}

impl FeatureVariant {
    pub fn width(self) -> usize {
        match self {
            FeatureVariant::Full | FeatureVariant::NormVdf | FeatureVariant::ThreshNormVdf => 15,
            FeatureVariant::NoNormal => 12,
            FeatureVariant::NoVdf => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::Full => "full",
            FeatureVariant::NoNormal => "no_normal",
            FeatureVariant::NoVdf => "no_vdf",
            FeatureVariant::NormVdf => "norm_vdf",
            FeatureVariant::ThreshNormVdf => "thresh_norm_vdf",
        }
    }
}

impl std::str::FromStr for FeatureVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            FeatureVariant::Full,
            FeatureVariant::NoNormal,
            FeatureVariant::NoVdf,
            FeatureVariant::NormVdf,
            FeatureVariant::ThreshNormVdf,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown feature variant `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub coords: Vec<Point3>,
    /// Row-major, `coords.len() * variant.width()`.
    pub features: Vec<f64>,
    pub variant: FeatureVariant,
}

impl FeatureSet {
    pub fn width(&self) -> usize {
        self.variant.width()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.features[k * w..(k + 1) * w]
    }
}

fn unit_or_zero(d: Point3) -> Point3 {
    let n = geom::norm(d);
    if n > 0.0 {
        geom::scale(d, 1.0 / n)
    } else {
        d
    }
}

pub fn assemble_features(
    samples: &VdfSampleSet,
    variant: FeatureVariant,
    tau: f64,
) -> Result<FeatureSet, SamplingError> {
    if variant == FeatureVariant::ThreshNormVdf && !(tau.is_finite() && tau > 0.0) {
        return Err(SamplingError::BadThreshold(tau));
    }
    let mut features = Vec::with_capacity(samples.len() * variant.width());
    for k in 0..samples.len() {
        features.extend_from_slice(&samples.points[k]);
        let disp = samples.displacements[k];
        match variant {
            FeatureVariant::Full | FeatureVariant::NoNormal => {
                disp.iter().for_each(|d| features.extend_from_slice(d));
            }
            FeatureVariant::NormVdf => {
                disp.iter()
                    .for_each(|d| features.extend_from_slice(&unit_or_zero(*d)));
            }
            FeatureVariant::ThreshNormVdf => disp.iter().for_each(|d| {
                let v = if geom::norm(*d) > tau {
                    unit_or_zero(*d)
                } else {
                    *d
                };
                features.extend_from_slice(&v);
            }),
            FeatureVariant::NoVdf => {}
        }
        if variant != FeatureVariant::NoNormal {
            features.extend_from_slice(&samples.normals[k]);
        }
    }
    Ok(FeatureSet {
        coords: samples.points.clone(),
        features,
        variant,
    })
}
