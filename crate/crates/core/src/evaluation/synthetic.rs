//! Seeded synthetic corpus with rendered images.
//!
//! Each image is 160x120 with a noisy gradient background. Faces are square
//! patches drawn from two distributions:
//!
//! | cue            | subject                         | bystander                          |
//! |----------------|---------------------------------|------------------------------------|
//! | count          | 1 to 3 (45/35/20 %)             | 0 to 4, uniform                    |
//! | side           | 26 to 38 px                     | 10 to 16 px                        |
//! | placement      | one per column slot, middle row | anywhere free of other faces       |
//! | texture        | uniform noise of +-45           | gradient with noise of +-3         |
//! | yaw            | N(0, 8) clipped to +-25         | +-U(35, 85)                        |
//! | pitch, roll    | N(0, 6), N(0, 5)                | N(0, 15), N(0, 10)                 |
//!
//! Subject sides are at least 26 px and bystander sides at most 16 px, so the
//! face-size-to-largest-face ratio of every subject exceeds that of every
//! bystander; [`SyntheticCorpus::size_margin`] reports the realised gap.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::classifier::{Label, LabeledExample};
use crate::features::{
    assemble_feature_vector, extract_image_features, FaceObservation, FeatureError, FeatureMask,
    HandcraftedFeatures, HeadPose, Point,
};
use crate::imaging::{to_grayscale, ImagingError, RectRegion};
use crate::providers::{
    stub_vector, write_embeddings, write_face_sidecar, write_labels, write_manifest, write_profiles, Embedding,
    EmbeddingRecord, EmbeddingSource, FaceRecord, FaceSidecarRecord, ImageManifestEntry,
    LabelRecord, ProfileRecord, ProfileType, Provenance, ProviderError, StubEmbedder,
};
use crate::seed::{derive_seed, rng_for};

pub const WIDTH: u32 = 160;
pub const HEIGHT: u32 = 120;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub entry: ImageManifestEntry,
    pub pixels: RgbImage,
    pub faces: Vec<FaceObservation>,
    pub labels: Vec<Label>,
}

#[derive(Debug, Clone)]
pub struct SyntheticFace {
    pub image_id: String,
    pub face_id: String,
    pub label: Label,
    pub handcrafted: HandcraftedFeatures,
    pub embedding: Embedding,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub seed: u64,
    pub images: Vec<SyntheticImage>,
    pub profiles: Vec<ProfileRecord>,
    embed_seed: u64,
}

fn clipped_normal(rng: &mut ChaCha8Rng, std: f64, limit: f64) -> f64 {
    let v: f64 = Normal::new(0.0, std).expect("positive std").sample(rng);
    round2(v.clamp(-limit, limit))
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn overlaps(a: &RectRegion, b: &RectRegion, margin: u32) -> bool {
    let grown = RectRegion::new(
        a.x.saturating_sub(margin),
        a.y.saturating_sub(margin),
        a.w + 2 * margin,
        a.h + 2 * margin,
    );
    grown.overlap_area(b) > 0
}

fn eyes(b: &RectRegion) -> (Point, Point) {
    let y = b.y as f64 + 0.4 * b.h as f64;
    (
        Point::new(b.x as f64 + 0.3 * b.w as f64, y),
        Point::new(b.x as f64 + 0.7 * b.w as f64, y),
    )
}

fn add(c: u8, d: i32) -> u8 {
    (c as i32 + d).clamp(0, 255) as u8
}

fn paint_background(img: &mut RgbImage, rng: &mut ChaCha8Rng) {
    let base: [i32; 3] = [rng.random_range(80..150), rng.random_range(80..150), rng.random_range(80..150)];
    let slope = rng.random_range(-30..=30);
    for y in 0..HEIGHT {
        let shade = slope * y as i32 / HEIGHT as i32;
        for x in 0..WIDTH {
            let n = rng.random_range(-6..=6);
            let px = base.map(|c| add(c as u8, shade + n));
            img.put_pixel(x, y, Rgb(px));
        }
    }
}

fn paint_face(img: &mut RgbImage, b: &RectRegion, label: Label, rng: &mut ChaCha8Rng) {
    let skin: [u8; 3] = [rng.random_range(150..215), rng.random_range(110..170), rng.random_range(90..140)];
    for dy in 0..b.h {
        for dx in 0..b.w {
            let d = match label {
                Label::Subject => rng.random_range(-45..=45),
                Label::Bystander => (dx + dy) as i32 / 4 + rng.random_range(-3..=3),
            };
            img.put_pixel(b.x + dx, b.y + dy, Rgb(skin.map(|c| add(c, d))));
        }
    }
    let (l, r) = eyes(b);
    let dark = if label == Label::Subject { 120 } else { 15 };
    for p in [l, r] {
        let (px, py) = (p.x as u32, p.y as u32);
        for (x, y) in [(px, py), (px.saturating_sub(1), py)] {
            if b.x <= x && x < b.x + b.w {
                let c = img.get_pixel(x, y).0;
                img.put_pixel(x, y, Rgb(c.map(|v| add(v, -dark))));
            }
        }
    }
}

fn subject_count(rng: &mut ChaCha8Rng) -> u32 {
    match rng.random_range(0..100) {
        0..45 => 1,
        45..80 => 2,
        _ => 3,
    }
}

fn pose(label: Label, rng: &mut ChaCha8Rng) -> HeadPose {
    let (yaw, pitch, roll) = match label {
        Label::Subject => (
            clipped_normal(rng, 8.0, 25.0),
            clipped_normal(rng, 6.0, 20.0),
            clipped_normal(rng, 5.0, 15.0),
        ),
        Label::Bystander => {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (
                round2(sign * rng.random_range(35.0..85.0)),
                clipped_normal(rng, 15.0, 45.0),
                clipped_normal(rng, 10.0, 30.0),
            )
        }
    };
    HeadPose::new(yaw, pitch, roll).expect("angles are clipped into range")
}

fn render(i: usize, uploader: &str, rng: &mut ChaCha8Rng) -> SyntheticImage {
    let image_id = format!("syn{i:04}");
    let mut pixels = RgbImage::new(WIDTH, HEIGHT);
    paint_background(&mut pixels, rng);

    let mut boxes: Vec<(RectRegion, Label)> = Vec::new();
    let n_subjects = subject_count(rng);
    let slot = WIDTH / n_subjects;
    for k in 0..n_subjects {
        let side = rng.random_range(26..=38).min(slot - 4);
        let cx = k * slot + slot / 2;
        let x = (cx as i32 - side as i32 / 2 + rng.random_range(-4..=4)).clamp(0, (WIDTH - side) as i32) as u32;
        let eye_y = rng.random_range((0.40 * HEIGHT as f64) as u32..=(0.55 * HEIGHT as f64) as u32);
        let y = eye_y - (0.4 * side as f64) as u32;
        boxes.push((RectRegion::new(x, y, side, side), Label::Subject));
    }
    let n_bystanders = rng.random_range(0..=4);
    for _ in 0..n_bystanders {
        let side = rng.random_range(10..=16);
        for _ in 0..50 {
            let b = RectRegion::new(rng.random_range(0..=WIDTH - side), rng.random_range(0..=HEIGHT - side), side, side);
            if boxes.iter().all(|(o, _)| !overlaps(o, &b, 2)) {
                boxes.push((b, Label::Bystander));
                break;
            }
        }
    }

    let mut faces = Vec::with_capacity(boxes.len());
    let mut labels = Vec::with_capacity(boxes.len());
    for (k, (b, label)) in boxes.into_iter().enumerate() {
        paint_face(&mut pixels, &b, label, rng);
        let (l, r) = eyes(&b);
        faces.push(FaceObservation {
            face_id: format!("f{k}"),
            bbox: b,
            eye_left: Some(l),
            eye_right: Some(r),
            pose: Some(pose(label, rng)),
            detected: true,
            confidence: Some(round2(rng.random_range(0.9..1.0))),
        });
        labels.push(label);
    }
    SyntheticImage {
        entry: ImageManifestEntry {
            path: PathBuf::from(format!("images/{image_id}.png")),
            image_id,
            uploader_id: Some(uploader.to_string()),
            width: WIDTH,
            height: HEIGHT,
            celebrity_only: Some(false),
            verified_account: None,
            profile_type: None,
        },
        pixels,
        faces,
        labels,
    }
}

/// Renders `n_images` images. Identical `(seed, n_images)` give identical
/// corpora.
pub fn generate_synthetic_dataset(seed: u64, n_images: usize) -> SyntheticCorpus {
    let mut rng = rng_for(seed, "synth/scene");
    let embed_seed = derive_seed(seed, "synth/embed");
    let n_uploaders = n_images.div_ceil(5).max(1);
    let mut images: Vec<SyntheticImage> = (0..n_images)
        .map(|i| render(i, &format!("u{:03}", i % n_uploaders), &mut rng))
        .collect();

    let mut profiles = Vec::new();
    for u in 0..n_uploaders {
        let uploader = format!("u{u:03}");
        let profile_type = if u % 7 == 6 { ProfileType::NoHuman } else { ProfileType::RealFace };
        let verified = u % 3 == 0;
        for img in images.iter_mut().filter(|m| m.entry.uploader_id.as_deref() == Some(&uploader)) {
            img.entry.profile_type = Some(profile_type);
            img.entry.verified_account = Some(verified);
        }
        // The uploader's own face is the first subject of their first image.
        let embeddings = match (profile_type, images.get(u)) {
            (ProfileType::RealFace, Some(first)) => {
                vec![stub_vector(&StubEmbedder::key(&first.entry.image_id, &first.faces[0].face_id), embed_seed)]
            }
            _ => Vec::new(),
        };
        profiles.push(ProfileRecord { uploader_id: uploader, embeddings });
    }
    SyntheticCorpus { seed, images, profiles, embed_seed }
}

impl SyntheticCorpus {
    pub fn embedding_seed(&self) -> u64 {
        self.embed_seed
    }

    fn embedding(&self, image_id: &str, face_id: &str) -> Embedding {
        Embedding::new(stub_vector(&StubEmbedder::key(image_id, face_id), self.embed_seed), EmbeddingSource::Stub)
            .expect("stub vectors are finite and 512 long")
    }

    /// Every face with its extracted handcrafted record, in corpus order.
    pub fn faces(&self) -> Result<Vec<SyntheticFace>, SynthError> {
        let mut out = Vec::new();
        for img in &self.images {
            let gray = to_grayscale(&img.pixels)?;
            let hand = extract_image_features(&gray, &img.faces)?;
            for ((face, h), &label) in img.faces.iter().zip(hand).zip(&img.labels) {
                out.push(SyntheticFace {
                    image_id: img.entry.image_id.clone(),
                    face_id: face.face_id.clone(),
                    label,
                    handcrafted: h,
                    embedding: self.embedding(&img.entry.image_id, &face.face_id),
                });
            }
        }
        Ok(out)
    }

    pub fn examples(&self, mask: FeatureMask) -> Result<Vec<LabeledExample>, SynthError> {
        self.faces()?
            .into_iter()
            .map(|f| {
                Ok(LabeledExample {
                    features: assemble_feature_vector(&f.handcrafted, Some(&f.embedding), mask)?,
                    label: f.label,
                    face_id: f.face_id,
                    image_id: f.image_id,
                })
            })
            .collect()
    }

    /// Smallest subject size-to-largest ratio minus the largest bystander
    /// one. Positive means the two classes are separated on that feature.
    pub fn size_margin(&self) -> Result<f64, SynthError> {
        let faces = self.faces()?;
        let pick = |l: Label| faces.iter().filter(move |f| f.label == l).map(|f| f.handcrafted.size_ratio_max());
        let min_subject = pick(Label::Subject).fold(f64::INFINITY, f64::min);
        let max_bystander = pick(Label::Bystander).fold(f64::NEG_INFINITY, f64::max);
        Ok(min_subject - max_bystander)
    }

    /// Writes `manifest.jsonl`, `faces.jsonl`, `labels.jsonl`,
    /// `embeddings.jsonl`, `profiles.jsonl` and `images/*.png` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir.join("images"))?;
        for img in &self.images {
            img.pixels.save_with_format(dir.join(&img.entry.path), image::ImageFormat::Png)?;
        }
        let entries: Vec<ImageManifestEntry> = self.images.iter().map(|i| i.entry.clone()).collect();
        write_manifest(&dir.join("manifest.jsonl"), &entries)?;
        let sidecars: Vec<FaceSidecarRecord> = self
            .images
            .iter()
            .map(|img| FaceSidecarRecord {
                image_id: img.entry.image_id.clone(),
                provenance: Provenance::Detector,
                faces: img
                    .faces
                    .iter()
                    .map(|f| FaceRecord {
                        face_id: f.face_id.clone(),
                        bbox: f.bbox.into(),
                        eye_left: f.eye_left.expect("synthetic faces carry eyes"),
                        eye_right: f.eye_right.expect("synthetic faces carry eyes"),
                        pose: f.pose,
                        detected: None,
                        confidence: f.confidence,
                    })
                    .collect(),
            })
            .collect();
        write_face_sidecar(&dir.join("faces.jsonl"), &sidecars)?;
        let mut labels = Vec::new();
        let mut embeddings = Vec::new();
        for img in &self.images {
            for (f, &label) in img.faces.iter().zip(&img.labels) {
                let id = (img.entry.image_id.clone(), f.face_id.clone());
                labels.push(LabelRecord { image_id: id.0.clone(), face_id: id.1.clone(), label });
                embeddings.push(EmbeddingRecord {
                    embedding: self.embedding(&id.0, &id.1).into_values(),
                    image_id: id.0,
                    face_id: id.1,
                });
            }
        }
        write_labels(&dir.join("labels.jsonl"), &labels)?;
        write_embeddings(&dir.join("embeddings.jsonl"), &embeddings)?;
        write_profiles(&dir.join("profiles.jsonl"), &self.profiles)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = generate_synthetic_dataset(3, 12);
        let b = generate_synthetic_dataset(3, 12);
        assert_eq!(a.images.len(), 12);
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.pixels, y.pixels);
            assert_eq!(x.faces, y.faces);
        }
        let faces = a.faces().unwrap();
        for f in &faces {
            f.handcrafted.check().unwrap();
        }
        assert!(a.images.iter().all(|i| i.labels.contains(&Label::Subject)));
        assert!(a.size_margin().unwrap() > 0.0);
    }

    #[test]
    fn subjects_larger_on_average() {
        let corpus = generate_synthetic_dataset(9, 400);
        let faces = corpus.faces().unwrap();
        assert!(faces.len() >= 1000, "{}", faces.len());
        let mean = |l: Label| {
            let v: Vec<f64> = faces.iter().filter(|f| f.label == l).map(|f| f.handcrafted.size_ratio_image()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(Label::Subject) > mean(Label::Bystander));
    }
}
