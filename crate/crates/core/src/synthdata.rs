//! Synthetic stick figures with ground-truth keypoints.
//!
//! Angles are in degrees. A direction angle `φ` points along
//! `(cos φ, sin φ)` in image coordinates, so with `v` growing downwards a
//! positive rotation turns clockwise on screen: rotating `(c+d, c)` by 90°
//! about `(c, c)` gives `(c, c+d)`.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::architecture::CpmSpec;
use crate::beliefs::{center_map, ideal_beliefs, write_gray_png, BeliefMode, BeliefStack, Keypoints};
use crate::error::{CpmError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    /// `None` for the root.
    pub parent: Option<usize>,
    /// Bone length range in pixels.
    pub length: [f32; 2],
    /// Bone direction relative to the parent bone (the root's reference
    /// direction is straight up).
    pub angle: [f32; 2],
    /// Index into the keypoint list; hidden joints have none.
    pub part: Option<usize>,
}

/// Kinematic tree. Joints are listed parents first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    /// Parts exchanged by a horizontal flip.
    pub flip_pairs: Vec<(usize, usize)>,
    pub head_radius: [f32; 2],
    pub thickness: [f32; 2],
    /// Random lean of the root, ± degrees.
    pub lean: f32,
}

impl Skeleton {
    /// Five parts (head, neck, left elbow, right elbow, ankle) hung off
    /// the neck, with a hidden hip between neck and ankle. Sized for a
    /// 64-pixel canvas.
    pub fn toy() -> Self {
        let j = |name: &str, parent: Option<usize>, length: [f32; 2], angle: [f32; 2], part: Option<usize>| Joint {
            name: name.into(),
            parent,
            length,
            angle,
            part,
        };
        Self {
            joints: vec![
                j("neck", None, [0.0, 0.0], [0.0, 0.0], Some(1)),
                j("head", Some(0), [7.0, 9.0], [-15.0, 15.0], Some(0)),
                j("l_elbow", Some(0), [9.0, 13.0], [-150.0, -40.0], Some(2)),
                j("r_elbow", Some(0), [9.0, 13.0], [40.0, 150.0], Some(3)),
                j("hip", Some(0), [11.0, 14.0], [165.0, 195.0], None),
                j("ankle", Some(4), [11.0, 15.0], [-30.0, 30.0], Some(4)),
            ],
            flip_pairs: vec![(2, 3)],
            head_radius: [2.5, 3.5],
            thickness: [1.5, 3.0],
            lean: 10.0,
        }
    }

    pub fn parts(&self) -> usize {
        self.joints.iter().filter_map(|j| j.part).max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 {
            return Err(CpmError::Config(format!("skeleton has {roots} roots")));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if j.parent.is_some_and(|p| p >= i) {
                return Err(CpmError::Config(format!("joint {} listed before its parent", j.name)));
            }
            if j.length[0] > j.length[1] || j.angle[0] > j.angle[1] || j.length[0] < 0.0 {
                return Err(CpmError::Config(format!("joint {} has an empty range", j.name)));
            }
        }
        let mut seen: Vec<usize> = self.joints.iter().filter_map(|j| j.part).collect();
        seen.sort_unstable();
        if seen != (0..self.parts()).collect::<Vec<_>>() {
            return Err(CpmError::Config("part indices must be 0..P, each once".into()));
        }
        Ok(())
    }

    /// Label permutation of a horizontal flip.
    pub fn flip_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.parts()).collect();
        for &(a, b) in &self.flip_pairs {
            perm.swap(a, b);
        }
        perm
    }
}

/// Drawn geometry of one figure, in image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure {
    /// All joints including hidden ones, indexed like the skeleton.
    pub joints: Vec<[f32; 2]>,
    /// `(child, parent)` joint pairs drawn as limbs.
    pub bones: Vec<(usize, usize)>,
    pub head: usize,
    pub head_radius: f32,
    pub thickness: f32,
    pub intensity: f32,
    /// Sampled bone lengths and absolute directions, per joint.
    pub lengths: Vec<f32>,
    pub directions: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    /// `[1, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub keypoints: Keypoints,
    /// Keypoints of any additional figures.
    pub others: Vec<Keypoints>,
    pub center: [f32; 2],
    /// Bounding-box max side of the primary figure's joints.
    pub scale: f32,
    pub occluded_parts: BTreeSet<usize>,
    pub background: f32,
    pub figure: Figure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub clutter_strokes: [usize; 2],
    pub stroke_length: [f32; 2],
    pub noise_std: f32,
    pub second_figure_prob: f32,
    /// Minimum distance between figure centres.
    pub second_figure_offset: f32,
    pub occlusion_prob: f32,
    pub occluder_radius: [f32; 2],
    /// Max offset of the primary figure centre from the canvas centre.
    pub center_jitter: f32,
    pub background: [f32; 2],
    pub foreground: [f32; 2],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            clutter_strokes: [2, 5],
            stroke_length: [6.0, 14.0],
            noise_std: 0.03,
            second_figure_prob: 0.5,
            second_figure_offset: 26.0,
            occlusion_prob: 0.3,
            occluder_radius: [3.0, 4.5],
            center_jitter: 3.0,
            background: [0.05, 0.35],
            foreground: [0.6, 1.0],
        }
    }
}

impl RenderConfig {
    pub fn zero_clutter() -> Self {
        Self { clutter_strokes: [0, 0], noise_std: 0.0, second_figure_prob: 0.0, occlusion_prob: 0.0, ..Self::default() }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f32; 2]) -> f32 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn pose_figure(rng: &mut ChaCha8Rng, skeleton: &Skeleton, intensity: f32) -> Figure {
    let n = skeleton.joints.len();
    let mut joints = vec![[0.0f32; 2]; n];
    let mut lengths = vec![0.0; n];
    let mut directions = vec![0.0; n];
    let root_dir = -90.0 + uniform(rng, [-skeleton.lean, skeleton.lean]);
    let mut bones = Vec::new();
    let mut head = 0;
    for (i, j) in skeleton.joints.iter().enumerate() {
        let Some(p) = j.parent else {
            directions[i] = root_dir;
            continue;
        };
        lengths[i] = uniform(rng, j.length);
        directions[i] = directions[p] + uniform(rng, j.angle);
        let phi = directions[i].to_radians();
        joints[i] = [joints[p][0] + lengths[i] * phi.cos(), joints[p][1] + lengths[i] * phi.sin()];
        bones.push((i, p));
        if j.part == Some(0) {
            head = i;
        }
    }
    let head_radius = uniform(rng, skeleton.head_radius);
    let thickness = uniform(rng, skeleton.thickness);
    Figure { joints, bones, head, head_radius, thickness, intensity, lengths, directions }
}

fn bbox(points: &[[f32; 2]]) -> ([f32; 2], [f32; 2]) {
    let mut lo = [f32::INFINITY; 2];
    let mut hi = [f32::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

fn translate(fig: &mut Figure, d: [f32; 2]) {
    for j in &mut fig.joints {
        j[0] += d[0];
        j[1] += d[1];
    }
}

fn figure_center(fig: &Figure) -> [f32; 2] {
    let (lo, hi) = bbox(&fig.joints);
    [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0]
}

fn in_bounds(p: [f32; 2], h: usize, w: usize) -> bool {
    p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f32 && p[1] < h as f32
}

fn figure_keypoints(fig: &Figure, skeleton: &Skeleton, h: usize, w: usize) -> Keypoints {
    let mut points = vec![None; skeleton.parts()];
    for (i, j) in skeleton.joints.iter().enumerate() {
        if let Some(p) = j.part {
            let at = fig.joints[i];
            points[p] = in_bounds(at, h, w).then_some(at);
        }
    }
    Keypoints::new(points)
}

/// Distance from `p` to segment `a b`.
pub fn segment_distance(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    (qx * qx + qy * qy).sqrt()
}

struct Canvas {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Canvas {
    /// Paints `value` with anti-aliased coverage `clamp(r + 0.5 − d, 0, 1)`,
    /// `d` being the distance from the pixel centre to the shape's core.
    fn paint(&mut self, lo: [f32; 2], hi: [f32; 2], value: f32, coverage: impl Fn([f32; 2]) -> f32) {
        let x0 = lo[0].floor().max(0.0) as usize;
        let y0 = lo[1].floor().max(0.0) as usize;
        let x1 = (hi[0].ceil().max(0.0) as usize).min(self.w);
        let y1 = (hi[1].ceil().max(0.0) as usize).min(self.h);
        for y in y0..y1 {
            for x in x0..x1 {
                let a = coverage([x as f32 + 0.5, y as f32 + 0.5]);
                if a > 0.0 {
                    let px = &mut self.data[y * self.w + x];
                    *px += (value - *px) * a;
                }
            }
        }
    }

    fn segment(&mut self, a: [f32; 2], b: [f32; 2], thickness: f32, value: f32) {
        let r = thickness / 2.0 + 0.5;
        let lo = [a[0].min(b[0]) - r, a[1].min(b[1]) - r];
        let hi = [a[0].max(b[0]) + r, a[1].max(b[1]) + r];
        self.paint(lo, hi, value, |p| (r - segment_distance(p, a, b)).clamp(0.0, 1.0));
    }

    fn disc(&mut self, c: [f32; 2], radius: f32, value: f32) {
        let r = radius + 0.5;
        self.paint([c[0] - r, c[1] - r], [c[0] + r, c[1] + r], value, |p| {
            (r - ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()).clamp(0.0, 1.0)
        });
    }

    fn figure(&mut self, fig: &Figure) {
        for &(c, p) in &fig.bones {
            self.segment(fig.joints[p], fig.joints[c], fig.thickness, fig.intensity);
        }
        self.disc(fig.joints[fig.head], fig.head_radius, fig.intensity);
    }
}

/// Draws one primary figure centred near the canvas centre, plus clutter
/// per `render`. Deterministic in `seed`.
pub fn sample_pose(seed: u64, skeleton: &Skeleton, canvas: (usize, usize), render: &RenderConfig) -> PoseSample {
    let (h, w) = canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = uniform(&mut rng, render.background);
    let mut cv = Canvas { h, w, data: vec![background; h * w] };
    let mid = [w as f32 / 2.0, h as f32 / 2.0];

    let fg = uniform(&mut rng, render.foreground);
    let mut primary = pose_figure(&mut rng, skeleton, fg);
    let c = figure_center(&primary);
    let j = render.center_jitter;
    let target = [mid[0] + uniform(&mut rng, [-j, j]), mid[1] + uniform(&mut rng, [-j, j])];
    translate(&mut primary, [target[0] - c[0], target[1] - c[1]]);
    let center = figure_center(&primary);

    let mut others = Vec::new();
    if rng.random::<f32>() < render.second_figure_prob {
        let fg2 = uniform(&mut rng, render.foreground);
        let mut second = pose_figure(&mut rng, skeleton, fg2);
        let c2 = figure_center(&second);
        let angle = rng.random_range(0.0..std::f32::consts::TAU);
        let dist = render.second_figure_offset + rng.random_range(0.0..6.0);
        let at = [center[0] + dist * angle.cos(), center[1] + dist * 0.5 * angle.sin()];
        translate(&mut second, [at[0] - c2[0], at[1] - c2[1]]);
        cv.figure(&second);
        others.push(figure_keypoints(&second, skeleton, h, w));
    }

    let strokes = if render.clutter_strokes[1] > render.clutter_strokes[0] {
        rng.random_range(render.clutter_strokes[0]..=render.clutter_strokes[1])
    } else {
        render.clutter_strokes[0]
    };
    for _ in 0..strokes {
        let a = [rng.random_range(0.0..w as f32), rng.random_range(0.0..h as f32)];
        let len = uniform(&mut rng, render.stroke_length);
        let phi = rng.random_range(0.0..std::f32::consts::TAU);
        let b = [a[0] + len * phi.cos(), a[1] + len * phi.sin()];
        let th = uniform(&mut rng, skeleton.thickness);
        let v = uniform(&mut rng, render.foreground);
        cv.segment(a, b, th, v);
    }

    cv.figure(&primary);
    let keypoints = figure_keypoints(&primary, skeleton, h, w);

    let mut occluded_parts = BTreeSet::new();
    if rng.random::<f32>() < render.occlusion_prob {
        let visible: Vec<usize> = (0..keypoints.len()).filter(|&p| keypoints.get(p).is_some()).collect();
        if !visible.is_empty() {
            let p = visible[rng.random_range(0..visible.len())];
            let at = keypoints.get(p).expect("visible");
            let r = uniform(&mut rng, render.occluder_radius);
            cv.disc([at[0] + rng.random_range(-1.0..1.0), at[1] + rng.random_range(-1.0..1.0)], r, background);
            occluded_parts.insert(p);
        }
    }

    if render.noise_std > 0.0 {
        let normal = Normal::new(0.0, render.noise_std).expect("valid std");
        for v in &mut cv.data {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    let (lo, hi) = bbox(&primary.joints);
    PoseSample {
        image: Tensor::new(vec![1, h, w], cv.data).expect("canvas size"),
        keypoints,
        others,
        center,
        scale: (hi[0] - lo[0]).max(hi[1] - lo[1]),
        occluded_parts,
        background,
        figure: primary,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Rotations drawn from `[-rotation, rotation]` degrees.
    pub rotation: f32,
    pub scale: [f32; 2],
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, rotation: 40.0, scale: [0.7, 1.3], flip: true }
    }
}

/// `q = c + F·R(θ)·s·(p − c)` about the canvas centre `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub center: [f32; 2],
    pub rotation: f32,
    pub scale: f32,
    pub flip: bool,
}

impl Affine {
    pub fn apply(&self, p: [f32; 2]) -> [f32; 2] {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let (du, dv) = ((p[0] - self.center[0]) * self.scale, (p[1] - self.center[1]) * self.scale);
        let mut u = c * du - s * dv;
        let v = s * du + c * dv;
        if self.flip {
            u = -u;
        }
        [self.center[0] + u, self.center[1] + v]
    }

    pub fn invert(&self, q: [f32; 2]) -> [f32; 2] {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let mut u = q[0] - self.center[0];
        let v = q[1] - self.center[1];
        if self.flip {
            u = -u;
        }
        let du = (c * u + s * v) / self.scale;
        let dv = (-s * u + c * v) / self.scale;
        [self.center[0] + du, self.center[1] + dv]
    }
}

fn sample_bilinear_clamped(data: &[f32], h: usize, w: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let at = |xx: usize, yy: usize| data[yy * w + xx];
    let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
    let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
    top + (bottom - top) * fy
}

/// Warps `sample` by `map` with bilinear resampling; sources off the canvas
/// read as background. Keypoints leaving the canvas become absent. Flipping swaps labels.
pub fn warp(sample: &PoseSample, map: &Affine, skeleton: &Skeleton) -> PoseSample {
    let (_, h, w) = (sample.image.shape()[0], sample.image.shape()[1], sample.image.shape()[2]);
    let src = sample.image.data();
    let data = (0..h * w)
        .map(|i| {
            let q = [(i % w) as f32 + 0.5, (i / w) as f32 + 0.5];
            let p = map.invert(q);
            if p[0] < 0.0 || p[1] < 0.0 || p[0] > w as f32 || p[1] > h as f32 {
                sample.background
            } else {
                sample_bilinear_clamped(src, h, w, p[0] - 0.5, p[1] - 0.5)
            }
        })
        .collect();
    let perm = map.flip.then(|| skeleton.flip_permutation());
    let move_kps = |k: &Keypoints| {
        let moved: Vec<Option<[f32; 2]>> =
            k.points.iter().map(|p| p.map(|p| map.apply(p)).filter(|&p| in_bounds(p, h, w))).collect();
        match &perm {
            Some(perm) => Keypoints::new(perm.iter().map(|&src| moved[src]).collect()),
            None => Keypoints::new(moved),
        }
    };
    let occluded_parts = match &perm {
        Some(perm) => sample.occluded_parts.iter().map(|&p| perm[p]).collect(),
        None => sample.occluded_parts.clone(),
    };
    let mut figure = sample.figure.clone();
    for j in &mut figure.joints {
        *j = map.apply(*j);
    }
    figure.thickness *= map.scale;
    figure.head_radius *= map.scale;
    PoseSample {
        image: Tensor::new(vec![1, h, w], data).expect("same size"),
        keypoints: move_kps(&sample.keypoints),
        others: sample.others.iter().map(move_kps).collect(),
        center: map.apply(sample.center),
        scale: sample.scale * map.scale,
        occluded_parts,
        background: sample.background,
        figure,
    }
}

/// The affine map drawn by [`augment`] for `seed`.
pub fn draw_affine(seed: u64, canvas: (usize, usize), rotation: f32, scale: [f32; 2], flip: bool) -> Affine {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = if rotation > 0.0 { rng.random_range(-rotation..=rotation) } else { 0.0 };
    let scale = uniform(&mut rng, scale);
    let flip = flip && rng.random::<bool>();
    Affine { center: [canvas.1 as f32 / 2.0, canvas.0 as f32 / 2.0], rotation, scale, flip }
}

/// Random rotation in `±rotation`, scale in `scale`, and a coin-flip
/// horizontal mirror when `flip` is set.
pub fn augment(sample: &PoseSample, seed: u64, rotation: f32, scale: [f32; 2], flip: bool, skeleton: &Skeleton) -> PoseSample {
    let canvas = (sample.image.shape()[1], sample.image.shape()[2]);
    warp(sample, &draw_affine(seed, canvas, rotation, scale, flip), skeleton)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    /// `[1, H, W]`.
    pub image: Tensor<f32>,
    /// `[1, h, w]` on the heatmap grid.
    pub center: Tensor<f32>,
    /// Peaks for every figure.
    pub stage1: BeliefStack,
    /// Peaks for the primary figure only.
    pub later: BeliefStack,
}

pub fn make_training_pair(sample: &PoseSample, spec: &CpmSpec, sigma: f32) -> Result<TrainingPair> {
    let shape = sample.image.shape();
    if shape != [spec.image_channels, spec.input_size[0], spec.input_size[1]] {
        return Err(CpmError::shape("make_training_pair", format!("sample {:?} vs spec input {:?}", shape, spec.input_size)));
    }
    if sample.keypoints.len() != spec.parts {
        return Err(CpmError::shape("make_training_pair", format!("{} parts vs spec {}", sample.keypoints.len(), spec.parts)));
    }
    let grid = spec.heatmap_size();
    let s = spec.heatmap_stride;
    let mut people = vec![sample.keypoints.clone()];
    people.extend(sample.others.iter().cloned());
    Ok(TrainingPair {
        image: sample.image.clone(),
        center: center_map(sample.center, sigma, s, grid),
        stage1: ideal_beliefs(&people, grid, sigma, s, BeliefMode::AllPeople),
        later: ideal_beliefs(&people, grid, sigma, s, BeliefMode::PrimaryOnly),
    })
}

/// Belief sigma for a canvas side, scaled from 21 px at 368 px.
pub fn default_sigma(side: usize) -> f32 {
    21.0 * side as f32 / 368.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    /// `[H, W]`.
    pub canvas: [usize; 2],
    pub skeleton: Skeleton,
    pub render: RenderConfig,
    pub augment: AugmentConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train: 2000,
            test: 500,
            canvas: [64, 64],
            skeleton: Skeleton::toy(),
            render: RenderConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(mix64(base) ^ stream) ^ index)
}

impl DataConfig {
    pub fn sample_seed(&self, split: Split, index: usize) -> u64 {
        derive_seed(self.seed, split as u64 + 1, index as u64)
    }

    /// Seed of the augmentation applied to training sample `index` in `epoch`.
    pub fn augment_seed(&self, epoch: usize, index: usize) -> u64 {
        derive_seed(self.seed ^ 0xa5a5_a5a5, 100 + epoch as u64, index as u64)
    }

    pub fn canvas(&self) -> (usize, usize) {
        (self.canvas[0], self.canvas[1])
    }

    pub fn sample(&self, split: Split, index: usize) -> PoseSample {
        sample_pose(self.sample_seed(split, index), &self.skeleton, self.canvas(), &self.render)
    }

    /// Training sample `index` as seen in `epoch`.
    pub fn augmented(&self, sample: &PoseSample, epoch: usize, index: usize) -> PoseSample {
        if !self.augment.enabled {
            return sample.clone();
        }
        let a = &self.augment;
        augment(sample, self.augment_seed(epoch, index), a.rotation, a.scale, a.flip, &self.skeleton)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DataConfig,
    pub train: Vec<PoseSample>,
    pub test: Vec<PoseSample>,
}

impl Dataset {
    pub fn generate(config: &DataConfig) -> Result<Self> {
        config.skeleton.validate()?;
        let train = (0..config.train).map(|i| config.sample(Split::Train, i)).collect();
        let test = (0..config.test).map(|i| config.sample(Split::Test, i)).collect();
        Ok(Self { config: config.clone(), train, test })
    }

    pub fn manifest(&self) -> Manifest {
        Manifest::new(&self.config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub keypoints: Keypoints,
}

/// Seeds and configuration that regenerate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DataConfig,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(config: &DataConfig) -> Self {
        let entries = |split: Split, n: usize| {
            (0..n)
                .map(|i| ManifestEntry { index: i, seed: config.sample_seed(split, i), keypoints: config.sample(split, i).keypoints })
                .collect()
        };
        Self {
            format: "cpm-dataset-v1".into(),
            config: config.clone(),
            train: entries(Split::Train, config.train),
            test: entries(Split::Test, config.test),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| CpmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CpmError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Regenerates the samples and checks them against the listed keypoints.
    pub fn dataset(&self) -> Result<Dataset> {
        let ds = Dataset::generate(&self.config)?;
        for (entries, samples) in [(&self.train, &ds.train), (&self.test, &ds.test)] {
            if entries.len() != samples.len() || entries.iter().zip(samples).any(|(e, s)| e.keypoints != s.keypoints) {
                return Err(CpmError::Config("manifest does not match regenerated samples".into()));
            }
        }
        Ok(ds)
    }
}

pub fn write_sample_png(sample: &PoseSample, path: &Path) -> Result<()> {
    let s = sample.image.shape();
    write_gray_png(path, s[2], s[1], sample.image.data())
}
