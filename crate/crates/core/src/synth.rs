//! Seeded multi-person sequence generator.
//!
//! Each person is a kinematic stick figure whose root follows a sum of
//! random-phase sinusoids plus a linear drift, with limbs swinging at a gait
//! frequency. Persons are projected through a pinhole camera, occlusion is
//! computed from 2D capsules around the bones of nearer persons, and a
//! simulated 2D detector turns projections into noisy keypoints with
//! confidences.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{
    project, CameraIntrinsics, PersonTrack, Pose2D, Pose3D, Sequence, Skeleton, Vec3,
};

/// Motion description of one bone of the stick figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
    /// Limb length in mm.
    pub length: f64,
    /// Direction in the person's body frame at rest (x right, y down, z forward).
    pub rest_dir: Vec3,
    /// Peak forward/backward swing angle in radians.
    pub swing: f64,
    /// Gait phase offset of the swing in radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_persons: usize,
    pub num_frames: usize,
    pub fps: f64,
    pub camera: CameraIntrinsics,
    pub motion_seed: u64,
    /// Detection noise std of an unoccluded joint, pixels.
    pub noise_px: f64,
    /// Std of the additive confidence noise.
    pub confidence_noise: f64,
    /// Mean occlusion above which the detector misses the person.
    pub occlusion_miss_threshold: f64,
    pub skeleton: Skeleton,
    pub bones: Vec<Bone>,
    /// Root depth range in mm.
    pub depth_range: [f64; 2],
    /// Capsule radius of an occluding bone, as a fraction of the occluder's
    /// 2D bounding-box height.
    pub capsule_radius: f64,
    /// Radius of an occluded joint's disc, as a fraction of its owner's 2D
    /// bounding-box height.
    pub joint_radius: f64,
    /// Upper bound on root displacement between consecutive frames, mm.
    pub max_root_step: f64,
    /// Horizontal image extent in pixels used to keep persons in view.
    pub image_width: f64,
    /// Range of the per-person factor applied to every limb length.
    pub person_scale_range: [f64; 2],
    /// Range of the limb swing frequency, Hz.
    pub gait_freq_range: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        let skeleton = Skeleton::default();
        SynthConfig {
            num_persons: 4,
            num_frames: 300,
            fps: 30.0,
            camera: CameraIntrinsics::default(),
            motion_seed: 0,
            noise_px: 3.0,
            confidence_noise: 0.05,
            occlusion_miss_threshold: 0.6,
            bones: default_bones(&skeleton),
            skeleton,
            depth_range: [2500.0, 7000.0],
            capsule_radius: 0.06,
            joint_radius: 0.04,
            max_root_step: 30.0,
            image_width: 1920.0,
            person_scale_range: [1.0, 1.0],
            gait_freq_range: [0.6, 1.2],
        }
    }
}

impl SynthConfig {
    /// Full-scale preset: 4 persons, 2000 frames per video.
    pub fn full_scale() -> Self {
        SynthConfig {
            num_frames: 2000,
            ..Default::default()
        }
    }

    pub fn limb_lengths(&self) -> Vec<f64> {
        self.bones.iter().map(|b| b.length).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_persons == 0 {
            return Err(Error::invalid("num_persons must be >= 1"));
        }
        if self.num_frames == 0 {
            return Err(Error::invalid("num_frames must be >= 1"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid("fps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.occlusion_miss_threshold) {
            return Err(Error::invalid(
                "occlusion_miss_threshold must lie in [0, 1]",
            ));
        }
        if !(self.noise_px >= 0.0) || !(self.confidence_noise >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        if !(self.capsule_radius >= 0.0) || !(self.joint_radius > 0.0) {
            return Err(Error::invalid(
                "capsule radius must be >= 0 and joint radius > 0",
            ));
        }
        self.camera.validate()?;
        self.skeleton.validate()?;
        let [zmin, zmax] = self.depth_range;
        if !(zmin > 0.0) {
            return Err(Error::invalid(format!(
                "depth range starts at {zmin} mm; roots would lie behind the camera"
            )));
        }
        if !(zmax >= zmin) {
            return Err(Error::invalid("depth range is empty"));
        }
        let [slo, shi] = self.person_scale_range;
        if !(slo > 0.0 && shi >= slo && shi.is_finite()) {
            return Err(Error::invalid(
                "person scale range must satisfy 0 < min <= max",
            ));
        }
        let [glo, ghi] = self.gait_freq_range;
        if !(glo >= 0.0 && ghi >= glo && ghi.is_finite()) {
            return Err(Error::invalid(
                "gait frequency range must satisfy 0 <= min <= max",
            ));
        }
        let j = self.skeleton.num_joints();
        let mut placed = vec![false; j];
        placed[self.skeleton.root_index] = true;
        for b in &self.bones {
            if b.parent >= j || b.child >= j || !placed[b.parent] || placed[b.child] {
                return Err(Error::invalid(format!(
                    "bone {}->{} does not extend the kinematic tree",
                    b.parent, b.child
                )));
            }
            if !(b.length > 0.0) {
                return Err(Error::invalid("limb lengths must be positive"));
            }
            placed[b.child] = true;
        }
        if placed.iter().any(|p| !p) {
            return Err(Error::invalid("bones do not reach every joint"));
        }
        Ok(())
    }
}

/// Bone table for the default 17-joint skeleton.
pub fn default_bones(skeleton: &Skeleton) -> Vec<Bone> {
    // (length, rest direction, swing, phase)
    let table: [(f64, Vec3, f64, f64); 16] = [
        (130.0, [-1.0, 0.0, 0.0], 0.0, 0.0),
        (440.0, [0.0, 1.0, 0.0], 0.45, 0.0),
        (430.0, [0.0, 1.0, 0.0], 0.6, -0.6),
        (130.0, [1.0, 0.0, 0.0], 0.0, 0.0),
        (440.0, [0.0, 1.0, 0.0], 0.45, PI),
        (430.0, [0.0, 1.0, 0.0], 0.6, PI - 0.6),
        (230.0, [0.0, -1.0, 0.1], 0.05, 0.0),
        (250.0, [0.0, -1.0, 0.0], 0.05, 0.0),
        (110.0, [0.0, -1.0, 0.1], 0.05, 0.5),
        (115.0, [0.0, -1.0, 0.0], 0.1, 0.5),
        (150.0, [1.0, 0.0, 0.0], 0.0, 0.0),
        (280.0, [0.15, 1.0, 0.0], 0.4, 0.0),
        (250.0, [0.1, 1.0, 0.3], 0.6, -0.4),
        (150.0, [-1.0, 0.0, 0.0], 0.0, 0.0),
        (280.0, [-0.15, 1.0, 0.0], 0.4, PI),
        (250.0, [-0.1, 1.0, 0.3], 0.6, PI - 0.4),
    ];
    if skeleton.edges.len() == table.len() && skeleton.num_joints() == 17 {
        skeleton
            .edges
            .iter()
            .zip(table)
            .map(|(&(parent, child), (length, dir, swing, phase))| Bone {
                parent,
                child,
                length,
                rest_dir: unit(dir),
                swing,
                phase,
            })
            .collect()
    } else {
        // Generic fallback: everything hangs downward.
        skeleton
            .edges
            .iter()
            .enumerate()
            .map(|(i, &(parent, child))| Bone {
                parent,
                child,
                length: 250.0,
                rest_dir: [0.0, 1.0, 0.0],
                swing: 0.3,
                phase: i as f64,
            })
            .collect()
    }
}

fn unit(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Independent RNG stream for `(seed, stream)`.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut s = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    s = (s ^ (s >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    s = (s ^ (s >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    s ^= s >> 31;
    ChaCha8Rng::seed_from_u64(s)
}

#[derive(Debug, Clone)]
struct Sinusoid {
    amp: f64,
    freq: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
struct AxisPath {
    base: f64,
    drift: f64,
    terms: Vec<Sinusoid>,
}

impl AxisPath {
    fn at(&self, time: f64) -> f64 {
        self.base
            + self.drift * time
            + self
                .terms
                .iter()
                .map(|s| s.amp * (2.0 * PI * s.freq * time + s.phase).sin())
                .sum::<f64>()
    }

    /// Upper bound on |d/dt|.
    fn speed_bound(&self) -> f64 {
        self.drift.abs()
            + self
                .terms
                .iter()
                .map(|s| s.amp * 2.0 * PI * s.freq)
                .sum::<f64>()
    }

    /// Largest excursion from `base` over `[0, duration]`.
    fn reach(&self, duration: f64) -> f64 {
        self.drift.abs() * duration + self.terms.iter().map(|s| s.amp.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
struct PersonMotion {
    root: [AxisPath; 3],
    yaw: AxisPath,
    gait_freq: f64,
    scale: f64,
}

fn random_path<R: Rng>(
    rng: &mut R,
    base: f64,
    max_amp: f64,
    freq_range: (f64, f64),
    drift: f64,
) -> AxisPath {
    let n_terms = rng.random_range(1..=5);
    let terms = (0..n_terms)
        .map(|k| Sinusoid {
            amp: max_amp * rng.random_range(0.2..1.0) / (k as f64 + 1.0),
            freq: rng.random_range(freq_range.0..freq_range.1),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect();
    AxisPath { base, drift, terms }
}

fn sample_motion<R: Rng>(rng: &mut R, cfg: &SynthConfig, cam_height: f64) -> PersonMotion {
    let [zmin, zmax] = cfg.depth_range;
    let duration = cfg.num_frames as f64 / cfg.fps;
    let zhalf = 0.5 * (zmax - zmin);
    let z0 = rng.random_range(zmin + 0.3 * zhalf..=zmax - 0.3 * zhalf);
    let mut z = random_path(rng, z0, 0.25 * zhalf, (0.02, 0.15), 0.0);
    // Keep the depth path inside the configured range.
    let reach = z.reach(duration);
    let room = (z0 - zmin).min(zmax - z0).max(0.0);
    if reach > room && reach > 0.0 {
        for s in &mut z.terms {
            s.amp *= room / reach;
        }
    }

    // Lateral extent: half-width of the view at this person's nearest depth,
    // with margin.
    let znear = z0 - z.reach(duration);
    let half_view = 0.5 * cfg.image_width / cfg.camera.fx * znear * 0.8;
    let x0 = rng.random_range(-0.6 * half_view..=0.6 * half_view);
    let mut x = random_path(rng, x0, 0.8 * half_view, (0.08, 0.3), 0.0);
    let reach = x.reach(duration);
    let room = half_view - x0.abs();
    if reach > room && reach > 0.0 {
        for s in &mut x.terms {
            s.amp *= room / reach;
        }
    }

    let [slo, shi] = cfg.person_scale_range;
    let scale = rng.random_range(slo..=shi);
    let hip_height = 930.0 * scale;
    let y = random_path(rng, cam_height - hip_height, 25.0, (0.5, 2.0), 0.0);

    let mut root = [x, y, z];
    // Enforce the per-frame step bound by slowing the whole path down.
    let speed: f64 = root.iter().map(AxisPath::speed_bound).sum();
    let limit = cfg.max_root_step * cfg.fps * 0.9;
    if speed > limit {
        let k = limit / speed;
        for axis in &mut root {
            for s in &mut axis.terms {
                s.freq *= k;
            }
            axis.drift *= k;
        }
    }

    PersonMotion {
        root,
        yaw: {
            let heading = rng.random_range(-PI..PI);
            random_path(rng, heading, 0.8, (0.02, 0.1), 0.0)
        },
        gait_freq: rng.random_range(cfg.gait_freq_range[0]..=cfg.gait_freq_range[1]),
        scale,
    }
}

fn rotate_x(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

fn rotate_y(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn pose_at(motion: &PersonMotion, cfg: &SynthConfig, t: usize) -> Vec<Vec3> {
    let time = t as f64 / cfg.fps;
    let root = [
        motion.root[0].at(time),
        motion.root[1].at(time),
        motion.root[2].at(time),
    ];
    let yaw = motion.yaw.at(time);
    let gait = 2.0 * PI * motion.gait_freq * time;
    let mut joints = vec![[0.0; 3]; cfg.skeleton.num_joints()];
    joints[cfg.skeleton.root_index] = root;
    for b in &cfg.bones {
        let swing = b.swing * (gait + b.phase).sin();
        let dir = rotate_y(rotate_x(b.rest_dir, swing), yaw);
        let len = b.length * motion.scale;
        let p = joints[b.parent];
        joints[b.child] = [
            p[0] + len * dir[0],
            p[1] + len * dir[1],
            p[2] + len * dir[2],
        ];
    }
    joints
}

/// Per-frame, per-person, per-joint occlusion fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionState {
    /// Indexed `[frame][person][joint]`.
    pub fractions: Vec<Vec<Vec<f64>>>,
}

impl OcclusionState {
    pub fn person_frame(&self, t: usize, p: usize) -> &[f64] {
        &self.fractions[t][p]
    }
}

const DISC_POINTS: usize = 256;

/// Equal-area sunflower points on the unit disc.
fn unit_disc_points() -> &'static [[f64; 2]; DISC_POINTS] {
    static POINTS: OnceLock<[[f64; 2]; DISC_POINTS]> = OnceLock::new();
    POINTS.get_or_init(|| {
        let golden = PI * (3.0 - 5f64.sqrt());
        std::array::from_fn(|i| {
            let rho = ((i as f64 + 0.5) / DISC_POINTS as f64).sqrt();
            let theta = i as f64 * golden;
            [rho * theta.cos(), rho * theta.sin()]
        })
    })
}

/// Fraction of a disc covered by a capsule, estimated on a fixed
/// equal-area point set, so enlarging the capsule never lowers the value.
pub fn disc_capsule_coverage(
    center: [f64; 2],
    radius: f64,
    a: [f64; 2],
    b: [f64; 2],
    capsule_radius: f64,
) -> f64 {
    // Distance to the segment is 1-Lipschitz, so every disc point lies
    // within `radius` of the center's distance.
    let dc = point_segment_dist2(center, a, b).sqrt();
    if dc > capsule_radius + radius {
        return 0.0;
    }
    if dc + radius <= capsule_radius {
        return 1.0;
    }
    let r2 = capsule_radius * capsule_radius;
    let inside = unit_disc_points()
        .iter()
        .filter(|u| {
            point_segment_dist2([center[0] + radius * u[0], center[1] + radius * u[1]], a, b) <= r2
        })
        .count();
    inside as f64 / DISC_POINTS as f64
}

fn point_segment_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - s * ab[0], ap[1] - s * ab[1]];
    d[0] * d[0] + d[1] * d[1]
}

fn bbox_height(points: &[[f64; 2]]) -> f64 {
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[1]), hi.max(p[1]))
        });
    (hi - lo).max(0.0)
}

/// Occlusion of every joint by bones of persons whose root is nearer to the
/// camera. `abs[t][p]` holds person `p`'s camera-frame joints on frame `t`.
pub fn compute_occlusion(
    abs: &[Vec<Vec<Vec3>>],
    skeleton: &Skeleton,
    cam: &CameraIntrinsics,
    capsule_radius: f64,
    joint_radius: f64,
) -> Result<OcclusionState> {
    let root = skeleton.root_index;
    let mut fractions = Vec::with_capacity(abs.len());
    for frame in abs {
        let proj: Vec<Vec<[f64; 2]>> = frame
            .iter()
            .map(|joints| project(joints, cam).map(|p| p.coords))
            .collect::<Result<_>>()?;
        let heights: Vec<f64> = proj.iter().map(|p| bbox_height(p)).collect();
        let mut occ_frame = Vec::with_capacity(frame.len());
        for (p, joints_p) in proj.iter().enumerate() {
            let depth_p = frame[p][root][2];
            let jr = joint_radius * heights[p];
            let occ: Vec<f64> = joints_p
                .iter()
                .map(|&c| {
                    let mut best: f64 = 0.0;
                    for (q, joints_q) in proj.iter().enumerate() {
                        if q == p || frame[q][root][2] >= depth_p {
                            continue;
                        }
                        let cr = capsule_radius * heights[q];
                        for &(a, b) in &skeleton.edges {
                            let cov = if jr > 0.0 {
                                disc_capsule_coverage(c, jr, joints_q[a], joints_q[b], cr)
                            } else {
                                f64::from(
                                    point_segment_dist2(c, joints_q[a], joints_q[b]) <= cr * cr,
                                )
                            };
                            best = best.max(cov);
                            if best >= 1.0 {
                                break;
                            }
                        }
                    }
                    best.clamp(0.0, 1.0)
                })
                .collect();
            occ_frame.push(occ);
        }
        fractions.push(occ_frame);
    }
    Ok(OcclusionState { fractions })
}

/// Simulated 2D detector output for one person on one frame.
pub fn simulate_detector<R: Rng>(
    gt2d: &Pose2D,
    occ: &[f64],
    noise_px: f64,
    confidence_noise: f64,
    miss_threshold: f64,
    rng: &mut R,
) -> Result<Pose2D> {
    if occ.len() != gt2d.num_joints() {
        return Err(Error::shape(
            "occlusion vector length differs from joint count",
        ));
    }
    if occ.iter().any(|o| !(0.0..=1.0).contains(o)) {
        return Err(Error::invalid("occlusion fractions must lie in [0, 1]"));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut coords = Vec::with_capacity(occ.len());
    let mut confidence = Vec::with_capacity(occ.len());
    for (&[u, v], &o) in gt2d.coords.iter().zip(occ) {
        let std = noise_px * (1.0 + 4.0 * o);
        let du: f64 = std_normal.sample(rng);
        let dv: f64 = std_normal.sample(rng);
        coords.push([u + std * du, v + std * dv]);
        let dc: f64 = std_normal.sample(rng);
        confidence.push((1.0 - o + confidence_noise * dc).clamp(0.0, 1.0));
    }
    let mean_occ = occ.iter().sum::<f64>() / occ.len().max(1) as f64;
    let detected = mean_occ <= miss_threshold;
    if !detected {
        confidence.iter_mut().for_each(|c| *c = 0.0);
    }
    Ok(Pose2D {
        coords,
        confidence,
        detected,
        units: gt2d.units,
    })
}

/// Builds a sequence from given ground-truth joints (`abs[t][p]`), running
/// occlusion and the detector.
pub fn sequence_from_ground_truth(
    seq_id: &str,
    cfg: &SynthConfig,
    abs: &[Vec<Vec<Vec3>>],
    rng: &mut ChaCha8Rng,
) -> Result<Sequence> {
    let num_frames = abs.len();
    let num_persons = abs.first().map_or(0, Vec::len);
    let occ = compute_occlusion(
        abs,
        &cfg.skeleton,
        &cfg.camera,
        cfg.capsule_radius,
        cfg.joint_radius,
    )?;
    let root = cfg.skeleton.root_index;
    let mut tracks: Vec<PersonTrack> = (0..num_persons)
        .map(|p| PersonTrack {
            person_id: p as u32,
            detections: Vec::with_capacity(num_frames),
            gt: Vec::with_capacity(num_frames),
        })
        .collect();
    for (t, frame) in abs.iter().enumerate() {
        for (p, joints) in frame.iter().enumerate() {
            let gt2d = project(joints, &cfg.camera)?;
            let det = simulate_detector(
                &gt2d,
                occ.person_frame(t, p),
                cfg.noise_px,
                cfg.confidence_noise,
                cfg.occlusion_miss_threshold,
                rng,
            )?;
            tracks[p].detections.push(Some(det));
            tracks[p]
                .gt
                .push(Some(Pose3D::from_absolute(joints, root)?));
        }
    }
    Ok(Sequence {
        seq_id: seq_id.to_string(),
        fps: cfg.fps,
        camera: cfg.camera,
        skeleton: cfg.skeleton.clone(),
        tracks,
        num_frames,
    })
}

/// Ground-truth camera-frame joints for every frame and person, `[t][p][j]`.
pub fn generate_ground_truth(cfg: &SynthConfig, seed: u64) -> Result<Vec<Vec<Vec<Vec3>>>> {
    cfg.validate()?;
    let mut rng = derive_rng(cfg.motion_seed, seed.wrapping_mul(2));
    let cam_height = rng.random_range(700.0..1500.0);
    let mut motions: Vec<PersonMotion> = (0..cfg.num_persons)
        .map(|_| sample_motion(&mut rng, cfg, cam_height))
        .collect();
    // Person ids follow initial depth order.
    motions.sort_by(|a, b| a.root[2].base.total_cmp(&b.root[2].base));
    let mut abs = Vec::with_capacity(cfg.num_frames);
    for t in 0..cfg.num_frames {
        let frame: Vec<Vec<Vec3>> = motions.iter().map(|m| pose_at(m, cfg, t)).collect();
        if let Some(z) = frame.iter().flatten().map(|j| j[2]).find(|z| !(*z > 0.0)) {
            return Err(Error::invalid(format!(
                "camera places a joint at depth {z} mm on frame {t}"
            )));
        }
        abs.push(frame);
    }
    Ok(abs)
}

/// Generates one sequence with full ground truth. Identical `(cfg, seed)`
/// produce identical output.
pub fn generate_sequence(cfg: &SynthConfig, seq_id: &str, seed: u64) -> Result<Sequence> {
    let abs = generate_ground_truth(cfg, seed)?;
    let mut rng = derive_rng(cfg.motion_seed, seed.wrapping_mul(2).wrapping_add(1));
    sequence_from_ground_truth(seq_id, cfg, &abs, &mut rng)
}
