//! Datasets: CIFAR binary directories, a deterministic synthetic blob task,
//! per-channel normalization, and train-time augmentation.
//!
//! All sources produce `[N, C, H, W]` float images. Generation and parsing
//! are bitwise deterministic: every sample draws from its own seeded
//! substream, so neither thread count nor evaluation order changes a pixel.

use crate::tensor::{Scalar, Tensor};
use crate::util::rng_for;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {len} bytes is not a whole number of {record}-byte records")]
    WrongLength { path: String, len: usize, record: usize },
    #[error("{path}: record {index} has label {label}, expected < {classes}")]
    CorruptRecord { path: String, index: usize, label: usize, classes: usize },
    #[error("CIFAR directories hold 10 or 100 classes, not {0}")]
    UnknownClassCount(usize),
    #[error("normalizer document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected schema {expected}, got {got}")]
    Schema { expected: String, got: String },
}

/// Parameters of the synthetic blob-classification task: each class is a
/// fixed arrangement of colored Gaussian bumps; samples jitter the positions
/// and colors and add pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub side: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetHandle {
    /// Directory with the CIFAR binary batches (`data_batch_*.bin` /
    /// `test_batch.bin` for 10 classes, `train.bin` / `test.bin` for 100).
    CifarDir { dir: PathBuf, classes: usize },
    Synthetic(SyntheticSpec),
}

pub struct Dataset<E: Scalar> {
    /// [N, C, H, W]
    pub images: Tensor<E>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<E: Scalar> Dataset<E> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_numel(&self) -> usize {
        let s = self.images.shape();
        s[1] * s[2] * s[3]
    }

    pub fn image(&self, i: usize) -> &[E] {
        let n = self.image_numel();
        &self.images.data()[i * n..(i + 1) * n]
    }
}

pub struct Splits<E: Scalar> {
    pub train: Dataset<E>,
    pub test: Dataset<E>,
}

pub fn load<E: Scalar>(handle: &DatasetHandle) -> Result<Splits<E>, DataError> {
    match handle {
        DatasetHandle::CifarDir { dir, classes } => {
            let (train_files, test_files): (Vec<PathBuf>, Vec<PathBuf>) = match classes {
                10 => (
                    (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
                    vec![dir.join("test_batch.bin")],
                ),
                100 => (vec![dir.join("train.bin")], vec![dir.join("test.bin")]),
                other => return Err(DataError::UnknownClassCount(*other)),
            };
            Ok(Splits {
                train: load_cifar_files(&train_files, *classes)?,
                test: load_cifar_files(&test_files, *classes)?,
            })
        }
        DatasetHandle::Synthetic(spec) => Ok(Splits {
            train: synthesize(spec, "train", spec.train_per_class),
            test: synthesize(spec, "test", spec.test_per_class),
        }),
    }
}

const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

fn load_cifar_files<E: Scalar>(paths: &[PathBuf], classes: usize) -> Result<Dataset<E>, DataError> {
    // CIFAR-10 records are label + pixels; CIFAR-100 records carry a coarse
    // label first and the fine label second.
    let label_bytes = if classes == 10 { 1 } else { 2 };
    let record = label_bytes + CIFAR_PIXELS;
    let mut images: Vec<E> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for path in paths {
        let display = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: display.clone(), source })?;
        if bytes.len() % record != 0 {
            return Err(DataError::WrongLength { path: display, len: bytes.len(), record });
        }
        for (index, rec) in bytes.chunks_exact(record).enumerate() {
            let label = rec[label_bytes - 1] as usize;
            if label >= classes {
                return Err(DataError::CorruptRecord { path: display, index, label, classes });
            }
            labels.push(label);
            images.extend(rec[label_bytes..].iter().map(|&b| E::from_f64(b as f64 / 255.0)));
        }
    }
    let n = labels.len();
    Ok(Dataset {
        images: Tensor::new(&[n, 3, CIFAR_SIDE, CIFAR_SIDE], images),
        labels,
        num_classes: classes,
    })
}

#[derive(Clone)]
struct Blob {
    row: f64,
    col: f64,
    sigma: f64,
    color: [f64; 3],
}

fn class_blobs(spec: &SyntheticSpec, class: usize) -> Vec<Blob> {
    let mut rng = rng_for(spec.seed, "class-prototype", &[class as u64]);
    let side = spec.side as f64;
    (0..3)
        .map(|_| Blob {
            row: rng.gen_range(0.2..0.8) * side,
            col: rng.gen_range(0.2..0.8) * side,
            sigma: side * 0.12 * rng.gen_range(0.8..1.2),
            color: [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)],
        })
        .collect()
}

fn synthesize<E: Scalar>(spec: &SyntheticSpec, split: &str, per_class: usize) -> Dataset<E> {
    let side = spec.side;
    let pixels = 3 * side * side;
    let n = spec.classes * per_class;
    let prototypes: Vec<Vec<Blob>> = (0..spec.classes).map(|c| class_blobs(spec, c)).collect();
    let mut images = Tensor::zeros(&[n, 3, side, side]);
    let labels: Vec<usize> = (0..n).map(|i| i / per_class).collect();

    images.data_mut().par_chunks_mut(pixels).enumerate().for_each(|(i, img)| {
        let class = i / per_class;
        let sample = (i % per_class) as u64;
        let mut rng = rng_for(spec.seed, split, &[class as u64, sample]);
        let jitter = side as f64 * 0.05;
        let blobs: Vec<Blob> = prototypes[class]
            .iter()
            .map(|b| Blob {
                row: b.row + rng.gen_range(-jitter..jitter),
                col: b.col + rng.gen_range(-jitter..jitter),
                sigma: b.sigma,
                color: {
                    let s = rng.gen_range(0.85..1.15);
                    [b.color[0] * s, b.color[1] * s, b.color[2] * s]
                },
            })
            .collect();
        for r in 0..side {
            for c in 0..side {
                let mut acc = [0.0f64; 3];
                for b in &blobs {
                    let d2 = (r as f64 - b.row).powi(2) + (c as f64 - b.col).powi(2);
                    let w = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                    for ch in 0..3 {
                        acc[ch] += b.color[ch] * w;
                    }
                }
                for ch in 0..3 {
                    let noise: f64 = {
                        // Box-Muller on two uniform draws keeps the stream
                        // layout explicit.
                        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    };
                    img[ch * side * side + r * side + c] =
                        E::from_f64(acc[ch] + spec.noise * noise);
                }
            }
        }
    });

    Dataset { images, labels, num_classes: spec.classes }
}

/// Per-channel affine normalization fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const NORM_SCHEMA: &str = "norm/1";

#[derive(Serialize, Deserialize)]
struct NormDoc {
    schema: String,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<E: Scalar>(ds: &Dataset<E>) -> Normalizer {
        let s = ds.images.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let mut mean = vec![0.0f64; c];
        let mut std = vec![0.0f64; c];
        let count = (n * hw) as f64;
        for ch in 0..c {
            let mut sum = 0.0;
            for i in 0..n {
                let base = (i * c + ch) * hw;
                for j in 0..hw {
                    sum += ds.images.data()[base + j].to_f64();
                }
            }
            mean[ch] = sum / count;
            let mut sq = 0.0;
            for i in 0..n {
                let base = (i * c + ch) * hw;
                for j in 0..hw {
                    let d = ds.images.data()[base + j].to_f64() - mean[ch];
                    sq += d * d;
                }
            }
            std[ch] = (sq / count).sqrt().max(1e-8);
        }
        Normalizer { mean, std }
    }

    pub fn apply<E: Scalar>(&self, images: &mut Tensor<E>) {
        let s = images.shape().to_vec();
        let (c, hw) = (s[1], s[2] * s[3]);
        assert_eq!(c, self.mean.len());
        for (i, v) in images.data_mut().iter_mut().enumerate() {
            let ch = (i / hw) % c;
            *v = E::from_f64((v.to_f64() - self.mean[ch]) / self.std[ch]);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NormDoc {
            schema: NORM_SCHEMA.into(),
            mean: self.mean.clone(),
            std: self.std.clone(),
        })
        .expect("normalizer serialization")
    }

    pub fn from_json(text: &str) -> Result<Normalizer, DataError> {
        let doc: NormDoc = serde_json::from_str(text)?;
        if doc.schema != NORM_SCHEMA {
            return Err(DataError::Schema { expected: NORM_SCHEMA.into(), got: doc.schema });
        }
        Ok(Normalizer { mean: doc.mean, std: doc.std })
    }
}

fn reflect(t: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if t < 0 { -t } else if t >= n { 2 * n - 2 - t } else { t };
    debug_assert!((0..n).contains(&r));
    r as usize
}

/// Reflect-pad by `pad`, optionally mirror horizontally, then crop back to
/// the original size at offset (dr, dc) in the padded frame. No intermediate
/// buffers: indices are composed directly.
pub fn augment_image<E: Scalar>(
    img: &[E],
    c: usize,
    h: usize,
    w: usize,
    pad: usize,
    flip: bool,
    dr: usize,
    dc: usize,
    out: &mut [E],
) {
    assert!(dr <= 2 * pad && dc <= 2 * pad);
    assert_eq!(img.len(), c * h * w);
    assert_eq!(out.len(), c * h * w);
    let wp = w + 2 * pad;
    for ch in 0..c {
        for r in 0..h {
            let sr = reflect((r + dr) as isize - pad as isize, h);
            for cc in 0..w {
                let pc = if flip { wp - 1 - (cc + dc) } else { cc + dc };
                let sc = reflect(pc as isize - pad as isize, w);
                out[(ch * h + r) * w + cc] = img[(ch * h + sr) * w + sc];
            }
        }
    }
}

/// Standard train-time augmentation: pad 4, coin-flip mirror, random crop.
/// Draw order is flip, then row offset, then column offset.
pub fn augment_random<E: Scalar>(
    img: &[E],
    c: usize,
    h: usize,
    w: usize,
    pad: usize,
    rng: &mut impl Rng,
    out: &mut [E],
) {
    let flip = rng.gen_bool(0.5);
    let dr = rng.gen_range(0..=2 * pad);
    let dc = rng.gen_range(0..=2 * pad);
    augment_image(img, c, h, w, pad, flip, dr, dc, out);
}

/// Copies the selected samples into a batch tensor, augmenting if `pad` is
/// set.
pub fn gather_batch<E: Scalar>(
    ds: &Dataset<E>,
    indices: &[usize],
    pad: Option<usize>,
    rng: &mut impl Rng,
) -> (Tensor<E>, Vec<usize>) {
    let s = ds.images.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let numel = c * h * w;
    let mut out = Tensor::zeros(&[indices.len(), c, h, w]);
    let mut labels = Vec::with_capacity(indices.len());
    for (bi, &i) in indices.iter().enumerate() {
        let dst = &mut out.data_mut()[bi * numel..(bi + 1) * numel];
        match pad {
            Some(p) => augment_random(ds.image(i), c, h, w, p, rng, dst),
            None => dst.copy_from_slice(ds.image(i)),
        }
        labels.push(ds.labels[i]);
    }
    (out, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mirror<E: Scalar>(img: &[E], c: usize, h: usize, w: usize) -> Vec<E> {
        let mut out = vec![E::zero(); img.len()];
        for ch in 0..c {
            for r in 0..h {
                for cc in 0..w {
                    out[(ch * h + r) * w + cc] = img[(ch * h + r) * w + (w - 1 - cc)];
                }
            }
        }
        out
    }

    #[test]
    fn cifar10_fixture_parses() {
        let dir = tempfile::tempdir().unwrap();
        // Two records: label 7 with pixel 0 = 255, label 3 with pixel 0 = 0
        // and the last pixel = 128.
        let mut bytes = vec![0u8; 2 * 3073];
        bytes[0] = 7;
        bytes[1] = 255;
        bytes[3073] = 3;
        bytes[3073 + 3072] = 128;
        for i in 1..=5 {
            let name = format!("data_batch_{i}.bin");
            std::fs::write(dir.path().join(name), if i == 1 { &bytes[..] } else { &bytes[..3073] })
                .unwrap();
        }
        std::fs::write(dir.path().join("test_batch.bin"), &bytes[..3073]).unwrap();

        let handle = DatasetHandle::CifarDir { dir: dir.path().to_path_buf(), classes: 10 };
        let splits = load::<f32>(&handle).unwrap();
        assert_eq!(splits.train.len(), 6);
        assert_eq!(splits.test.len(), 1);
        assert_eq!(splits.train.labels[0], 7);
        assert_eq!(splits.train.labels[1], 3);
        assert_eq!(splits.train.images.shape(), &[6, 3, 32, 32]);
        assert_eq!(splits.train.image(0)[0], 1.0);
        assert_eq!(splits.train.image(1)[0], 0.0);
        let last = splits.train.image(1)[3071];
        assert!((last - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn cifar100_uses_the_fine_label() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![0u8; 3074];
        bytes[0] = 5; // coarse
        bytes[1] = 93; // fine
        std::fs::write(dir.path().join("train.bin"), &bytes).unwrap();
        std::fs::write(dir.path().join("test.bin"), &bytes).unwrap();
        let handle = DatasetHandle::CifarDir { dir: dir.path().to_path_buf(), classes: 100 };
        let splits = load::<f32>(&handle).unwrap();
        assert_eq!(splits.train.labels, vec![93]);
        assert_eq!(splits.train.num_classes, 100);
    }

    #[test]
    fn cifar_errors_are_specific() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train.bin"), vec![0u8; 3074 + 17]).unwrap();
        std::fs::write(dir.path().join("test.bin"), vec![0u8; 3074]).unwrap();
        let handle = DatasetHandle::CifarDir { dir: dir.path().to_path_buf(), classes: 100 };
        assert!(matches!(load::<f32>(&handle), Err(DataError::WrongLength { .. })));

        let mut bytes = vec![0u8; 3074];
        bytes[1] = 100;
        std::fs::write(dir.path().join("train.bin"), &bytes).unwrap();
        assert!(matches!(
            load::<f32>(&handle),
            Err(DataError::CorruptRecord { label: 100, .. })
        ));

        let handle = DatasetHandle::CifarDir { dir: dir.path().to_path_buf(), classes: 37 };
        assert!(matches!(load::<f32>(&handle), Err(DataError::UnknownClassCount(37))));

        let handle =
            DatasetHandle::CifarDir { dir: dir.path().join("missing"), classes: 100 };
        assert!(matches!(load::<f32>(&handle), Err(DataError::Io { .. })));
    }

    fn tiny_synth() -> SyntheticSpec {
        SyntheticSpec {
            classes: 4,
            train_per_class: 6,
            test_per_class: 3,
            side: 12,
            noise: 0.05,
            seed: 99,
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_class_separated() {
        let spec = tiny_synth();
        let a = load::<f32>(&DatasetHandle::Synthetic(spec.clone())).unwrap();
        let b = load::<f32>(&DatasetHandle::Synthetic(spec.clone())).unwrap();
        assert_eq!(a.train.images.data(), b.train.images.data());
        assert_eq!(a.test.images.data(), b.test.images.data());
        assert_eq!(a.train.len(), 24);
        assert_eq!(a.test.len(), 12);
        assert_eq!(a.train.labels[0..6], [0; 6]);
        assert_eq!(a.train.labels[6], 1);

        // Same-class samples sit closer to their class mean than to other
        // classes' means on average.
        let numel = a.train.image_numel();
        let mean_img = |cls: usize| -> Vec<f32> {
            let mut m = vec![0.0f32; numel];
            for i in 0..6 {
                for (j, v) in a.train.image(cls * 6 + i).iter().enumerate() {
                    m[j] += v / 6.0;
                }
            }
            m
        };
        let means: Vec<Vec<f32>> = (0..4).map(mean_img).collect();
        let dist = |x: &[f32], y: &[f32]| -> f32 {
            x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let mut own = 0.0;
        let mut other = 0.0;
        let mut other_n = 0;
        for i in 0..24 {
            let cls = i / 6;
            own += dist(a.train.image(i), &means[cls]);
            for (c, m) in means.iter().enumerate() {
                if c != cls {
                    other += dist(a.train.image(i), m);
                    other_n += 1;
                }
            }
        }
        assert!(own / 24.0 < other / other_n as f32, "classes are not separated");

        // Train and test draws differ but share prototypes.
        assert_ne!(a.train.image(0), a.test.image(0));
    }

    #[test]
    fn normalizer_fits_applies_and_round_trips() {
        let spec = tiny_synth();
        let mut splits = load::<f32>(&DatasetHandle::Synthetic(spec)).unwrap();
        let norm = Normalizer::fit(&splits.train);
        let text = norm.to_json();
        let back = Normalizer::from_json(&text).unwrap();
        assert_eq!(norm, back);
        assert!(Normalizer::from_json(&text.replace("norm/1", "norm/2")).is_err());

        norm.apply(&mut splits.train.images);
        let refit = Normalizer::fit(&splits.train);
        for ch in 0..3 {
            assert!(refit.mean[ch].abs() < 1e-5, "channel {ch} mean {}", refit.mean[ch]);
            assert!((refit.std[ch] - 1.0).abs() < 1e-4, "channel {ch} std {}", refit.std[ch]);
        }
    }

    #[test]
    fn augmentation_identity_at_center() {
        let spec = tiny_synth();
        let splits = load::<f32>(&DatasetHandle::Synthetic(spec)).unwrap();
        let img = splits.train.image(3);
        let mut out = vec![0.0f32; img.len()];
        // pad then crop at exactly (pad, pad), no flip: the original image.
        augment_image(img, 3, 12, 12, 4, false, 4, 4, &mut out);
        assert_eq!(&out[..], img);
    }

    #[test]
    fn augmentation_commutes_with_mirroring() {
        let spec = tiny_synth();
        let splits = load::<f32>(&DatasetHandle::Synthetic(spec)).unwrap();
        let (c, h, w, pad) = (3, 12, 12, 4);
        let img = splits.train.image(5);
        let mirrored = mirror(img, c, h, w);
        for (dr, dc) in [(0, 0), (3, 7), (8, 8), (4, 1)] {
            // Cropping the mirrored image at dc matches mirroring the crop
            // taken at the mirrored offset 2 pad - dc.
            let mut a = vec![0.0f32; img.len()];
            let mut b = vec![0.0f32; img.len()];
            augment_image(&mirrored, c, h, w, pad, false, dr, dc, &mut a);
            augment_image(img, c, h, w, pad, false, dr, 2 * pad - dc, &mut b);
            assert_eq!(a, mirror(&b, c, h, w), "offsets ({dr}, {dc})");

            // The flip flag equals mirroring the input first.
            let mut f = vec![0.0f32; img.len()];
            augment_image(img, c, h, w, pad, true, dr, dc, &mut f);
            let mut m = vec![0.0f32; img.len()];
            augment_image(&mirrored, c, h, w, pad, false, dr, dc, &mut m);
            assert_eq!(f, m);
        }
    }

    #[test]
    fn reflection_never_repeats_the_edge() {
        // reflect(-1) = 1 and reflect(n) = n - 2: the border pixel itself is
        // not duplicated.
        assert_eq!(reflect(-1, 8), 1);
        assert_eq!(reflect(-4, 8), 4);
        assert_eq!(reflect(8, 8), 6);
        assert_eq!(reflect(11, 8), 3);
        assert_eq!(reflect(0, 8), 0);
        assert_eq!(reflect(7, 8), 7);
    }

    #[test]
    fn batches_gather_and_augment() {
        let spec = tiny_synth();
        let splits = load::<f32>(&DatasetHandle::Synthetic(spec)).unwrap();
        let mut rng = rng_for(1, "batch", &[]);
        let (x, y) = gather_batch(&splits.train, &[0, 7, 23], None, &mut rng);
        assert_eq!(x.shape(), &[3, 3, 12, 12]);
        assert_eq!(y, vec![0, 1, 3]);
        assert_eq!(&x.data()[0..splits.train.image_numel()], splits.train.image(0));

        // Augmented batches stay deterministic under a fixed stream.
        let mut r1 = rng_for(2, "batch", &[0]);
        let mut r2 = rng_for(2, "batch", &[0]);
        let (a, _) = gather_batch(&splits.train, &[4, 9], Some(4), &mut r1);
        let (b, _) = gather_batch(&splits.train, &[4, 9], Some(4), &mut r2);
        assert_eq!(a.data(), b.data());
    }
}
