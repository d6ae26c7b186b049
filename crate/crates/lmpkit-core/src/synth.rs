//! Synthetic planted-keypoint scenes.
//!
//! Each class is identified by a small set of unique glyphs that appear at
//! exactly one location per image; repeated distractor glyphs appear in
//! every class at random locations, so detecting them carries no class
//! information. Ground-truth keypoints are the centers of the planted
//! unique glyphs.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Side length of every glyph stamp.
pub const GLYPH_SIDE: usize = 5;
const GLYPH_RADIUS: usize = GLYPH_SIDE / 2;

/// Fixed binary stamps. Classes draw their unique glyphs from the front of
/// the inventory; the repeated distractor set is taken from the back.
pub const GLYPHS: [[[u8; GLYPH_SIDE]; GLYPH_SIDE]; 12] = [
    // cross
    [
        [1, 0, 0, 0, 1],
        [0, 1, 0, 1, 0],
        [0, 0, 1, 0, 0],
        [0, 1, 0, 1, 0],
        [1, 0, 0, 0, 1],
    ],
    // plus
    [
        [0, 0, 1, 0, 0],
        [0, 0, 1, 0, 0],
        [1, 1, 1, 1, 1],
        [0, 0, 1, 0, 0],
        [0, 0, 1, 0, 0],
    ],
    // tee
    [
        [1, 1, 1, 1, 1],
        [0, 0, 1, 0, 0],
        [0, 0, 1, 0, 0],
        [0, 0, 1, 0, 0],
        [0, 0, 1, 0, 0],
    ],
    // corner
    [
        [1, 0, 0, 0, 0],
        [1, 0, 0, 0, 0],
        [1, 0, 0, 0, 0],
        [1, 0, 0, 0, 0],
        [1, 1, 1, 1, 1],
    ],
    // ring
    [
        [1, 1, 1, 1, 1],
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
        [1, 1, 1, 1, 1],
    ],
    // dot ring
    [
        [0, 1, 1, 1, 0],
        [1, 0, 0, 0, 1],
        [1, 0, 1, 0, 1],
        [1, 0, 0, 0, 1],
        [0, 1, 1, 1, 0],
    ],
    // aitch
    [
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
        [1, 1, 1, 1, 1],
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
    ],
    // diamond
    [
        [0, 0, 1, 0, 0],
        [0, 1, 0, 1, 0],
        [1, 0, 0, 0, 1],
        [0, 1, 0, 1, 0],
        [0, 0, 1, 0, 0],
    ],
    // zed
    [
        [1, 1, 1, 1, 1],
        [0, 0, 0, 1, 0],
        [0, 0, 1, 0, 0],
        [0, 1, 0, 0, 0],
        [1, 1, 1, 1, 1],
    ],
    // slash
    [
        [0, 0, 0, 0, 1],
        [0, 0, 0, 1, 0],
        [0, 0, 1, 0, 0],
        [0, 1, 0, 0, 0],
        [1, 0, 0, 0, 0],
    ],
    // corner dots
    [
        [1, 1, 0, 1, 1],
        [1, 0, 0, 0, 1],
        [0, 0, 0, 0, 0],
        [1, 0, 0, 0, 1],
        [1, 1, 0, 1, 1],
    ],
    // rails
    [
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
        [1, 0, 0, 0, 1],
    ],
];

/// Geometry and content of one generated scene family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
    pub num_classes: usize,
    /// Size of each class's unique glyph set.
    pub unique_patterns_per_class: usize,
    /// How many of the class's unique glyphs are planted per image.
    pub num_unique_per_image: usize,
    /// Repeated-glyph instances stamped per image.
    pub num_repeated_distractors: usize,
    /// Distinct repeated glyph shapes shared by all classes.
    pub num_repeated_glyphs: usize,
    /// Standard deviation of the additive background noise.
    pub noise_sigma: f64,
    /// Minimum pairwise distance between planted pattern centers, pixels.
    pub min_separation: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_size: (32, 32),
            num_classes: 4,
            unique_patterns_per_class: 2,
            num_unique_per_image: 2,
            num_repeated_distractors: 3,
            num_repeated_glyphs: 3,
            noise_sigma: 0.05,
            min_separation: 12.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h <= 2 * GLYPH_RADIUS || w <= 2 * GLYPH_RADIUS {
            return Err(Error::Config(format!(
                "image {h}x{w} cannot hold a {GLYPH_SIDE}x{GLYPH_SIDE} glyph"
            )));
        }
        if self.num_classes == 0 || self.unique_patterns_per_class == 0 {
            return Err(Error::Config("need at least one class and one glyph".into()));
        }
        if self.num_unique_per_image == 0
            || self.num_unique_per_image > self.unique_patterns_per_class
        {
            return Err(Error::Config(format!(
                "num_unique_per_image {} must be in 1..={}",
                self.num_unique_per_image, self.unique_patterns_per_class
            )));
        }
        if self.num_repeated_distractors > 0 && self.num_repeated_glyphs == 0 {
            return Err(Error::Config(
                "distractors requested but repeated glyph set is empty".into(),
            ));
        }
        let needed = self.num_classes * self.unique_patterns_per_class + self.num_repeated_glyphs;
        if needed > GLYPHS.len() {
            return Err(Error::Config(format!(
                "spec needs {needed} glyphs but the inventory holds {}",
                GLYPHS.len()
            )));
        }
        if !self.min_separation.is_finite()
            || self.min_separation <= 0.0
            || !self.noise_sigma.is_finite()
            || self.noise_sigma < 0.0
        {
            return Err(Error::Config(
                "min_separation must be positive and noise_sigma nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Glyph inventory indices unique to `class_id`.
    pub fn class_glyphs(&self, class_id: usize) -> core::ops::Range<usize> {
        class_id * self.unique_patterns_per_class..(class_id + 1) * self.unique_patterns_per_class
    }

    /// Glyph inventory indices of the shared repeated set.
    pub fn repeated_glyphs(&self) -> core::ops::Range<usize> {
        let base = self.num_classes * self.unique_patterns_per_class;
        base..base + self.num_repeated_glyphs
    }
}

/// One generated image with its label and planted keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// `[1, h, w]` grayscale image.
    pub image: Tensor,
    pub label: usize,
    /// (row, col) centers of the planted unique glyphs.
    pub keypoints: Vec<(usize, usize)>,
}

const CANDIDATES_PER_CENTER: usize = 200;
const SCENE_RESTARTS: usize = 50;

fn place_centers(
    rng: &mut ChaCha8Rng,
    count: usize,
    h: usize,
    w: usize,
    min_sep: f64,
) -> Option<Vec<(usize, usize)>> {
    let mut centers: Vec<(usize, usize)> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..CANDIDATES_PER_CENTER {
            let r = rng.gen_range(GLYPH_RADIUS..h - GLYPH_RADIUS);
            let c = rng.gen_range(GLYPH_RADIUS..w - GLYPH_RADIUS);
            let ok = centers.iter().all(|&(er, ec)| {
                let dr = r as f64 - er as f64;
                let dc = c as f64 - ec as f64;
                libm::sqrt(dr * dr + dc * dc) >= min_sep
            });
            if ok {
                centers.push((r, c));
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(centers)
}

fn stamp(canvas: &mut [f64], w: usize, glyph: usize, center: (usize, usize)) {
    let pattern = &GLYPHS[glyph];
    let (cr, cc) = center;
    for (gr, row) in pattern.iter().enumerate() {
        for (gc, &on) in row.iter().enumerate() {
            if on == 1 {
                let r = cr + gr - GLYPH_RADIUS;
                let c = cc + gc - GLYPH_RADIUS;
                canvas[r * w + c] += 1.0;
            }
        }
    }
}

fn scene_with_rng(spec: &SceneSpec, class_id: usize, rng: &mut ChaCha8Rng) -> Result<SyntheticScene> {
    spec.validate()?;
    if class_id >= spec.num_classes {
        return Err(Error::Config(format!(
            "class {class_id} out of range for {} classes",
            spec.num_classes
        )));
    }
    let (h, w) = spec.image_size;
    let total = spec.num_unique_per_image + spec.num_repeated_distractors;

    let mut centers = None;
    for _ in 0..SCENE_RESTARTS {
        if let Some(found) = place_centers(rng, total, h, w, spec.min_separation) {
            centers = Some(found);
            break;
        }
    }
    let centers = centers.ok_or_else(|| {
        Error::Placement(format!(
            "could not place {total} centers at separation {} in {h}x{w} \
             after {SCENE_RESTARTS} restarts",
            spec.min_separation
        ))
    })?;

    // Which of the class's unique glyphs appear in this image.
    let class_set: Vec<usize> = spec.class_glyphs(class_id).collect();
    let chosen: Vec<usize> = if spec.num_unique_per_image == class_set.len() {
        class_set
    } else {
        let picked =
            rand::seq::index::sample(rng, class_set.len(), spec.num_unique_per_image).into_vec();
        picked.into_iter().map(|i| class_set[i]).collect()
    };

    let mut canvas = alloc::vec![0.0f64; h * w];
    let mut keypoints = Vec::with_capacity(spec.num_unique_per_image);
    for (glyph, &center) in chosen.iter().zip(&centers) {
        stamp(&mut canvas, w, *glyph, center);
        keypoints.push(center);
    }
    let repeated: Vec<usize> = spec.repeated_glyphs().collect();
    for &center in &centers[spec.num_unique_per_image..] {
        let glyph = repeated[rng.gen_range(0..repeated.len())];
        stamp(&mut canvas, w, glyph, center);
    }
    if spec.noise_sigma > 0.0 {
        for v in canvas.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += spec.noise_sigma * z;
        }
    }

    Ok(SyntheticScene {
        image: Tensor::from_vec(&[1, h, w], canvas)?,
        label: class_id,
        keypoints,
    })
}

/// Deterministically generates one scene for `(spec, class_id, seed)`.
pub fn generate_scene(spec: &SceneSpec, class_id: usize, seed: u64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scene_with_rng(spec, class_id, &mut rng)
}

/// Stream offset separating test-split RNG streams from train streams.
const TEST_STREAM_BASE: u64 = 1 << 32;

/// Stratified train/test splits with disjoint per-scene RNG streams derived
/// from the master seed by counter-based splitting.
pub fn generate_dataset(
    spec: &SceneSpec,
    n_train_per_class: usize,
    n_test_per_class: usize,
    seed: u64,
) -> Result<(Vec<SyntheticScene>, Vec<SyntheticScene>)> {
    spec.validate()?;
    let train_total = spec.num_classes * n_train_per_class;
    if train_total as u64 >= TEST_STREAM_BASE {
        return Err(Error::Config("train split too large for stream split".into()));
    }
    let mut train = Vec::with_capacity(train_total);
    let mut test = Vec::with_capacity(spec.num_classes * n_test_per_class);
    for class_id in 0..spec.num_classes {
        for i in 0..n_train_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((class_id * n_train_per_class + i) as u64);
            train.push(scene_with_rng(spec, class_id, &mut rng)?);
        }
        for i in 0..n_test_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(TEST_STREAM_BASE + (class_id * n_test_per_class + i) as u64);
            test.push(scene_with_rng(spec, class_id, &mut rng)?);
        }
    }
    Ok((train, test))
}
