//! Pose and camera types, pinhole projection, and the split of an absolute
//! pose into root location plus root-relative offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn norm3(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Joint set shared by every pose of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub root_index: usize,
    /// Parent/child pairs, parents listed before their children.
    pub edges: Vec<(usize, usize)>,
}

const H36M_JOINTS: [&str; 17] = [
    "hip",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

const H36M_EDGES: [(usize, usize); 16] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
];

impl Default for Skeleton {
    /// 17-joint skeleton rooted at the hip.
    fn default() -> Self {
        Skeleton {
            joint_names: H36M_JOINTS.iter().map(|s| s.to_string()).collect(),
            root_index: 0,
            edges: H36M_EDGES.to_vec(),
        }
    }
}

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        root_index: usize,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let s = Skeleton {
            joint_names,
            root_index,
            edges,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.num_joints();
        if j < 2 {
            return Err(Error::invalid(format!(
                "skeleton needs >= 2 joints, got {j}"
            )));
        }
        if self.root_index >= j {
            return Err(Error::invalid(format!(
                "root index {} out of range for {j} joints",
                self.root_index
            )));
        }
        if let Some(&(a, b)) = self.edges.iter().find(|&&(a, b)| a >= j || b >= j) {
            return Err(Error::invalid(format!(
                "edge ({a}, {b}) references a missing joint"
            )));
        }
        Ok(())
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = CameraIntrinsics { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 1150.0,
            fy: 1150.0,
            cx: 960.0,
            cy: 540.0,
        }
    }
}

/// Unit tag on 2D coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Pixels,
    /// Ray tangents `(x/z, y/z)`, i.e. pixels mapped through the inverse
    /// calibration matrix.
    Normalized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    pub coords: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
    pub detected: bool,
    pub units: Units,
}

impl Pose2D {
    pub fn new(
        coords: Vec<[f64; 2]>,
        confidence: Vec<f64>,
        detected: bool,
        units: Units,
    ) -> Result<Self> {
        if coords.len() != confidence.len() {
            return Err(Error::shape(format!(
                "{} coordinates but {} confidences",
                coords.len(),
                confidence.len()
            )));
        }
        if let Some(c) = confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
        }
        if !detected && confidence.iter().any(|&c| c != 0.0) {
            return Err(Error::invalid("undetected pose must have zero confidences"));
        }
        Ok(Pose2D {
            coords,
            confidence,
            detected,
            units,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.coords.len()
    }

    pub fn mean_confidence(&self) -> f64 {
        if self.confidence.is_empty() {
            return 0.0;
        }
        self.confidence.iter().sum::<f64>() / self.confidence.len() as f64
    }
}

/// Root location in camera coordinates plus root-relative joint offsets, mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub location: Vec3,
    pub relative: Vec<Vec3>,
}

impl Pose3D {
    pub fn from_absolute(abs: &[Vec3], root_index: usize) -> Result<Self> {
        let (location, relative) = split_absolute(abs, root_index)?;
        Ok(Pose3D { location, relative })
    }

    pub fn absolute(&self) -> Vec<Vec3> {
        compose_absolute(self.location, &self.relative)
    }

    /// Relative pose without the root row, flattened (3·(J−1) values).
    pub fn relative_flat(&self, root_index: usize) -> Vec<f64> {
        self.relative
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != root_index)
            .flat_map(|(_, p)| p.iter().copied())
            .collect()
    }

    /// Inverse of [`Pose3D::relative_flat`]; reinserts a zero root row.
    pub fn from_parts(location: Vec3, relative_flat: &[f64], root_index: usize) -> Self {
        let j = relative_flat.len() / 3 + 1;
        let mut relative = Vec::with_capacity(j);
        let mut it = relative_flat.chunks_exact(3);
        for idx in 0..j {
            if idx == root_index {
                relative.push([0.0; 3]);
            } else {
                let c = it.next().expect("relative length checked by caller");
                relative.push([c[0], c[1], c[2]]);
            }
        }
        Pose3D { location, relative }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonTrack {
    pub person_id: u32,
    /// `None` when the person is fully invisible on that frame.
    pub detections: Vec<Option<Pose2D>>,
    pub gt: Vec<Option<Pose3D>>,
}

impl PersonTrack {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn is_detected(&self, t: usize) -> bool {
        self.detections[t].as_ref().is_some_and(|d| d.detected)
    }

    pub fn detected_flags(&self) -> Vec<bool> {
        (0..self.len()).map(|t| self.is_detected(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub seq_id: String,
    pub fps: f64,
    pub camera: CameraIntrinsics,
    pub skeleton: Skeleton,
    pub tracks: Vec<PersonTrack>,
    pub num_frames: usize,
}

impl Sequence {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 {
            return Err(Error::invalid("sequence has no frames"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        self.camera.validate()?;
        self.skeleton.validate()?;
        let j = self.skeleton.num_joints();
        for tr in &self.tracks {
            if tr.detections.len() != self.num_frames || tr.gt.len() != self.num_frames {
                return Err(Error::shape(format!(
                    "track {} has {} detections / {} gt entries for {} frames",
                    tr.person_id,
                    tr.detections.len(),
                    tr.gt.len(),
                    self.num_frames
                )));
            }
            let bad_det = tr.detections.iter().flatten().any(|d| d.num_joints() != j);
            let bad_gt = tr.gt.iter().flatten().any(|g| g.relative.len() != j);
            if bad_det || bad_gt {
                return Err(Error::shape(format!(
                    "track {} has poses without {j} joints",
                    tr.person_id
                )));
            }
        }
        Ok(())
    }

    pub fn track(&self, person_id: u32) -> Option<&PersonTrack> {
        self.tracks.iter().find(|t| t.person_id == person_id)
    }
}

/// Maps pixel coordinates through the inverse calibration matrix.
pub fn normalize_keypoints(pose: &Pose2D, cam: &CameraIntrinsics) -> Result<Pose2D> {
    cam.validate()?;
    if pose.units != Units::Pixels {
        return Err(Error::invalid("keypoints are already normalized"));
    }
    let coords = pose
        .coords
        .iter()
        .map(|&[u, v]| [(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy])
        .collect();
    Ok(Pose2D {
        coords,
        confidence: pose.confidence.clone(),
        detected: pose.detected,
        units: Units::Normalized,
    })
}

/// Pinhole projection of camera-frame joints (mm) to pixels.
pub fn project(abs_joints: &[Vec3], cam: &CameraIntrinsics) -> Result<Pose2D> {
    cam.validate()?;
    let mut coords = Vec::with_capacity(abs_joints.len());
    for (j, &[x, y, z]) in abs_joints.iter().enumerate() {
        if !(z > 0.0) {
            return Err(Error::invalid(format!(
                "joint {j} has non-positive depth {z}"
            )));
        }
        coords.push([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy]);
    }
    Ok(Pose2D {
        confidence: vec![1.0; coords.len()],
        coords,
        detected: true,
        units: Units::Pixels,
    })
}

pub fn compose_absolute(location: Vec3, relative: &[Vec3]) -> Vec<Vec3> {
    relative.iter().map(|&r| add3(location, r)).collect()
}

pub fn split_absolute(abs_joints: &[Vec3], root_index: usize) -> Result<(Vec3, Vec<Vec3>)> {
    let location = *abs_joints.get(root_index).ok_or_else(|| {
        Error::invalid(format!(
            "root index {root_index} out of range for {} joints",
            abs_joints.len()
        ))
    })?;
    let mut relative: Vec<Vec3> = abs_joints.iter().map(|&p| sub3(p, location)).collect();
    relative[root_index] = [0.0; 3];
    Ok((location, relative))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 500.0, 400.0).unwrap()
    }

    fn px(coords: Vec<[f64; 2]>) -> Pose2D {
        let n = coords.len();
        Pose2D::new(coords, vec![0.5; n], true, Units::Pixels).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_keypoints(
            &px(vec![[500.0, 400.0], [1500.0, 400.0], [750.0, 900.0]]),
            &cam(),
        )
        .unwrap();
        assert_eq!(out.coords, vec![[0.0, 0.0], [1.0, 0.0], [0.25, 0.5]]);
        assert_eq!(out.confidence, vec![0.5; 3]);
        assert_eq!(out.units, Units::Normalized);
    }

    #[test]
    fn normalize_rejects_bad_focal_and_double_normalization() {
        let bad = CameraIntrinsics { fx: 0.0, ..cam() };
        assert!(normalize_keypoints(&px(vec![[1.0, 1.0]]), &bad).is_err());
        let once = normalize_keypoints(&px(vec![[1.0, 1.0]]), &cam()).unwrap();
        assert!(normalize_keypoints(&once, &cam()).is_err());
    }

    #[test]
    fn identity_camera_normalization_is_idempotent() {
        let id = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let p = px(vec![[3.5, -2.0], [0.1, 7.0]]);
        let once = normalize_keypoints(&p, &id).unwrap();
        let mut relabeled = once.clone();
        relabeled.units = Units::Pixels;
        let twice = normalize_keypoints(&relabeled, &id).unwrap();
        assert_eq!(once.coords, twice.coords);
    }

    #[test]
    fn project_examples() {
        let c = cam();
        let p = project(&[[0.0, 0.0, 3000.0]], &c).unwrap();
        assert_eq!(p.coords[0], [c.cx, c.cy]);
        assert_eq!(p.confidence, vec![1.0]);
        let c0 = CameraIntrinsics::new(1000.0, 1000.0, 0.0, 0.0).unwrap();
        assert_eq!(
            project(&[[1000.0, 0.0, 2000.0]], &c0).unwrap().coords[0],
            [500.0, 0.0]
        );
        assert!(project(&[[1.0, 1.0, 0.0]], &c0).is_err());
        assert!(project(&[[1.0, 1.0, -5.0]], &c0).is_err());
    }

    #[test]
    fn compose_split_examples() {
        let rel = vec![[0.0; 3], [1.0, -1.0, 2.0]];
        assert_eq!(compose_absolute([0.0; 3], &rel), rel);
        assert_eq!(compose_absolute([1.0, 2.0, 3.0], &rel)[0], [1.0, 2.0, 3.0]);

        let (loc, rel) = split_absolute(&[[5.0; 3]; 4], 0).unwrap();
        assert_eq!(loc, [5.0; 3]);
        assert!(rel.iter().all(|r| *r == [0.0; 3]));

        let (loc, rel) = split_absolute(&[[0.0; 3], [1.0, 0.0, 0.0]], 0).unwrap();
        assert_eq!(loc, [0.0; 3]);
        assert_eq!(rel, vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(split_absolute(&[[0.0; 3]], 1).is_err());
    }

    #[test]
    fn skeleton_validation() {
        let s = Skeleton::default();
        assert_eq!(s.num_joints(), 17);
        assert_eq!(s.joint_index("hip"), Some(0));
        assert!(Skeleton::new(vec!["a".into()], 0, vec![]).is_err());
        assert!(Skeleton::new(vec!["a".into(), "b".into()], 2, vec![]).is_err());
        assert!(Skeleton::new(vec!["a".into(), "b".into()], 0, vec![(0, 2)]).is_err());
    }

    #[test]
    fn pose2d_invariants() {
        assert!(Pose2D::new(vec![[0.0; 2]], vec![1.5], true, Units::Pixels).is_err());
        assert!(Pose2D::new(vec![[0.0; 2]], vec![0.5], false, Units::Pixels).is_err());
        assert!(Pose2D::new(vec![[0.0; 2]], vec![], true, Units::Pixels).is_err());
    }

    #[test]
    fn relative_flat_roundtrip() {
        let p = Pose3D {
            location: [1.0, 2.0, 3.0],
            relative: vec![[4.0, 5.0, 6.0], [0.0; 3], [7.0, 8.0, 9.0]],
        };
        let flat = p.relative_flat(1);
        assert_eq!(flat, vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(Pose3D::from_parts(p.location, &flat, 1), p);
    }

    fn joints() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(
            (-2000.0..2000.0f64, -2000.0..2000.0f64, 1000.0..10000.0f64)
                .prop_map(|(x, y, z)| [x, y, z]),
            2..20,
        )
    }

    fn grid_joints() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(
            (-8000i32..8000, -8000i32..8000, 4000i32..40000)
                .prop_map(|(x, y, z)| [x as f64 * 0.25, y as f64 * 0.25, z as f64 * 0.25]),
            2..20,
        )
    }

    proptest! {
        // Quarter-millimetre grid values keep every sum and difference exact.
        #[test]
        fn compose_split_roundtrip_bit_exact(abs in grid_joints(), root in 0usize..2) {
            let (loc, rel) = split_absolute(&abs, root).unwrap();
            let recomposed = compose_absolute(loc, &rel);
            prop_assert_eq!(&recomposed, &abs);
            let (loc2, rel2) = split_absolute(&recomposed, root).unwrap();
            prop_assert_eq!(loc, loc2);
            prop_assert_eq!(&rel, &rel2);
        }

        #[test]
        fn compose_split_roundtrip_reals(abs in joints(), root in 0usize..2) {
            let (loc, rel) = split_absolute(&abs, root).unwrap();
            let recomposed = compose_absolute(loc, &rel);
            prop_assert_eq!(recomposed[root], abs[root]);
            for (a, b) in recomposed.iter().zip(&abs) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-12 * b[k].abs().max(1.0));
                }
            }
        }

        #[test]
        fn project_then_normalize_is_pinhole_ratio(abs in joints(), fx in 200.0..3000.0f64, cx in -500.0..1500.0f64) {
            let c = CameraIntrinsics::new(fx, fx * 1.1, cx, cx * 0.5).unwrap();
            let n = normalize_keypoints(&project(&abs, &c).unwrap(), &c).unwrap();
            for (p, q) in n.coords.iter().zip(&abs) {
                let ex = q[0] / q[2];
                let ey = q[1] / q[2];
                prop_assert!((p[0] - ex).abs() <= 1e-12 * ex.abs().max(1e-3));
                prop_assert!((p[1] - ey).abs() <= 1e-12 * ey.abs().max(1e-3));
            }
        }
    }
}
