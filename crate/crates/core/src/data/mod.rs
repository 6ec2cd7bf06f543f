//! MNIST ingestion, binarization, batching and image output.

pub mod idx;
pub mod png;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub use self::idx::{parse_idx, read_idx, write_idx, IdxArray, IMAGES_MAGIC, LABELS_MAGIC};
pub use self::png::{grid_image, read_png, write_grid_png, write_png, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// File stems used by the standard MNIST distribution.
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, rows, cols]` in `[0, 1]`.
    pub images: Tensor,
    pub labels: Option<Vec<u8>>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    pub fn image(&self, i: usize) -> Result<Tensor> {
        self.images.index_axis0(i)
    }

    /// Images at `indices` as a `[B, 1, rows, cols]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = self.image_dims();
        let per = r * c;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("image index {i} out of {}", self.len())));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        Tensor::new(&[indices.len(), 1, r, c], data)
    }

    /// The first `n` images (all of them when `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let (r, c) = self.image_dims();
        Ok(Dataset {
            images: Tensor::new(&[n, r, c], self.images.data()[..n * r * c].to_vec())?,
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            split: self.split,
        })
    }

    /// Serializes the images back to IDX form (pixels rounded to bytes).
    pub fn images_idx(&self) -> IdxArray {
        IdxArray {
            dims: self.images.shape().to_vec(),
            bytes: self.images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        }
    }

    pub fn labels_idx(&self) -> Option<IdxArray> {
        self.labels.as_ref().map(|l| IdxArray {
            dims: vec![l.len()],
            bytes: l.clone(),
        })
    }
}

/// Loads an image IDX file and an optional matching label file.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>, split: Split) -> Result<Dataset> {
    let raw = read_idx(images_path, IMAGES_MAGIC)?;
    let images = Tensor::new(&raw.dims, raw.bytes.iter().map(|&b| b as Float / 255.0).collect())
        .map_err(|e| Error::Idx {
            path: images_path.to_path_buf(),
            offset: 4,
            detail: e.to_string(),
        })?;
    let labels = match labels_path {
        None => None,
        Some(path) => {
            let raw_labels = read_idx(path, LABELS_MAGIC)?;
            if raw_labels.dims[0] != raw.dims[0] {
                return Err(Error::Idx {
                    path: path.to_path_buf(),
                    offset: 4,
                    detail: format!("{} labels for {} images", raw_labels.dims[0], raw.dims[0]),
                });
            }
            Some(raw_labels.bytes)
        }
    };
    Ok(Dataset { images, labels, split })
}

/// Loads `split` from a directory holding the standard MNIST file names.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let (images, labels) = split.file_names();
    load_idx(&dir.join(images), Some(&dir.join(labels)), split)
}

/// How binary pixels are obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "path")]
pub enum Binarization {
    /// `1` where the pixel exceeds 0.5, else `0`.
    Threshold,
    /// Published binarized rows read from a text file.
    Precomputed(PathBuf),
}

pub fn threshold(v: Float) -> Float {
    if v > 0.5 {
        1.0
    } else {
        0.0
    }
}

pub fn binarize(ds: &Dataset, mode: &Binarization) -> Result<Dataset> {
    match mode {
        Binarization::Threshold => Ok(Dataset {
            images: ds.images.map(threshold),
            labels: ds.labels.clone(),
            split: ds.split,
        }),
        Binarization::Precomputed(path) => {
            let (r, c) = ds.image_dims();
            let images = load_binarized_text(path, r, c)?;
            if images.shape()[0] != ds.len() {
                return Err(Error::TextParse {
                    path: path.clone(),
                    line: images.shape()[0],
                    detail: format!("{} rows for a split of {} images", images.shape()[0], ds.len()),
                });
            }
            Ok(Dataset {
                images,
                labels: ds.labels.clone(),
                split: ds.split,
            })
        }
    }
}

/// One image per line, `rows·cols` space-separated `0`/`1` values.
pub fn parse_binarized_text(text: &str, rows: usize, cols: usize, path: &Path) -> Result<Tensor> {
    let per = rows * cols;
    let mut data = Vec::new();
    let mut count = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |detail: String| Error::TextParse {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let start = data.len();
        for tok in line.split_whitespace() {
            match tok {
                "0" => data.push(0.0),
                "1" => data.push(1.0),
                other => return Err(fail(format!("expected 0 or 1, found {other:?}"))),
            }
        }
        if data.len() - start != per {
            return Err(fail(format!("expected {per} values, found {}", data.len() - start)));
        }
        count += 1;
    }
    Tensor::new(&[count, rows, cols], data).map_err(|_| Error::TextParse {
        path: path.to_path_buf(),
        line: 0,
        detail: "file holds no images".into(),
    })
}

pub fn load_binarized_text(path: &Path, rows: usize, cols: usize) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_binarized_text(&text, rows, cols, path)
}

/// Seeded mini-batch order; every epoch is a fresh permutation and the final
/// batch may be short.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self {
            len,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
        })
    }

    /// Epochs handed out so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut self.rng);
        self.epoch += 1;
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
    }

    fn four_image_idx() -> Vec<u8> {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend((0..4 * 784).map(|i| if i % 784 == 0 { 255 } else { (i % 7) as u8 }));
        bytes
    }

    #[test]
    fn parses_hand_built_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs");
        fs::write(&path, four_image_idx()).unwrap();
        let ds = load_idx(&path, None, Split::Test).unwrap();
        assert_eq!(ds.images.shape(), &[4, 28, 28]);
        assert_eq!(ds.images.at(&[2, 0, 0]), 1.0);
        assert_eq!(ds.images.at(&[2, 0, 1]), (785 % 7) as Float / 255.0);
        let mut zero = four_image_idx();
        zero[786 + 16] = 0;
        fs::write(&path, &zero).unwrap();
        assert_eq!(load_idx(&path, None, Split::Test).unwrap().images.data()[786], 0.0);
    }

    #[test]
    fn idx_errors_name_offsets() {
        let p = Path::new("x");
        let mut bad = four_image_idx();
        bad[..4].copy_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(parse_idx(&bad, IMAGES_MAGIC, p), Err(Error::Idx { offset: 0, .. })));
        let short = &four_image_idx()[..100];
        match parse_idx(short, IMAGES_MAGIC, p) {
            Err(Error::Idx { offset, detail, .. }) => {
                assert_eq!(offset, 100);
                assert!(detail.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx(&[0, 0, 8], IMAGES_MAGIC, p), Err(Error::Idx { offset: 3, .. })));
        let mut long = four_image_idx();
        long.push(9);
        assert!(matches!(parse_idx(&long, IMAGES_MAGIC, p), Err(Error::Idx { offset, .. }) if offset == 16 + 4 * 784));
        let err = parse_idx(&four_image_idx(), LABELS_MAGIC, p).unwrap_err();
        assert_eq!(err.category(), "data");
    }

    #[test]
    fn label_count_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("imgs");
        let labels = dir.path().join("labels");
        fs::write(&images, four_image_idx()).unwrap();
        fs::write(&labels, [0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]).unwrap();
        assert!(matches!(load_idx(&images, Some(&labels), Split::Train), Err(Error::Idx { offset: 4, .. })));
    }

    #[test]
    fn fixture_loads_and_round_trips() {
        let (ip, lp) = (fixture("t10k-first20-images-idx3-ubyte"), fixture("t10k-first20-labels-idx1-ubyte"));
        let ds = load_idx(&ip, Some(&lp), Split::Test).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(
            ds.labels.as_deref().unwrap(),
            &[7, 2, 1, 0, 4, 1, 4, 9, 5, 9, 0, 6, 9, 0, 1, 5, 9, 7, 3, 4]
        );
        assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds.images_idx().to_bytes(), fs::read(&ip).unwrap());
        assert_eq!(ds.labels_idx().unwrap().to_bytes(), fs::read(&lp).unwrap());
    }

    #[test]
    fn threshold_is_strict_and_idempotent() {
        assert_eq!(threshold(0.6), 1.0);
        assert_eq!(threshold(0.5), 0.0);
        let ds = load_idx(&fixture("t10k-first20-images-idx3-ubyte"), None, Split::Test).unwrap();
        let once = binarize(&ds, &Binarization::Threshold).unwrap();
        assert_eq!(binarize(&once, &Binarization::Threshold).unwrap(), once);
        assert!(once.images.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn binarized_text_rows() {
        let p = Path::new("rows.txt");
        let row: Vec<&str> = (0..784).map(|i| if i % 2 == 0 { "0" } else { "1" }).collect();
        let text = format!("{}\n{}\n", row.join(" "), row.join(" "));
        let t = parse_binarized_text(&text, 28, 28, p).unwrap();
        assert_eq!(t.shape(), &[2, 28, 28]);
        assert!((0..784).all(|i| t.data()[i] == (i % 2) as Float));

        let short = format!("{}\n{}\n", row.join(" "), row[..783].join(" "));
        assert!(matches!(parse_binarized_text(&short, 28, 28, p), Err(Error::TextParse { line: 2, .. })));
        let bad = row.join(" ").replacen('1', "2", 1);
        assert!(matches!(parse_binarized_text(&bad, 28, 28, p), Err(Error::TextParse { line: 1, .. })));
    }

    #[test]
    fn precomputed_mode_replaces_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_idx(&fixture("t10k-first20-images-idx3-ubyte"), None, Split::Test).unwrap().take(2).unwrap();
        let path = dir.path().join("bin.txt");
        let row = vec!["1"; 784].join(" ");
        fs::write(&path, format!("{row}\n{row}\n")).unwrap();
        let out = binarize(&ds, &Binarization::Precomputed(path.clone())).unwrap();
        assert!(out.images.data().iter().all(|&v| v == 1.0));
        fs::write(&path, format!("{row}\n")).unwrap();
        assert!(binarize(&ds, &Binarization::Precomputed(path)).is_err());
    }

    #[test]
    fn full_size_epoch_partition() {
        let mut it = BatchIterator::new(60_000, 50, 3).unwrap();
        let batches = it.next_epoch();
        assert_eq!(batches.len(), 1200);
        let mut seen = vec![false; 60_000];
        for &i in batches.iter().flatten() {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert_ne!(it.next_epoch(), batches);
        assert_eq!(it.epoch(), 2);
    }

    proptest! {
        #[test]
        fn epochs_cover_everything_once(len in 1usize..300, batch in 1usize..40, seed in any::<u64>()) {
            let mut it = BatchIterator::new(len, batch, seed).unwrap();
            let mut again = BatchIterator::new(len, batch, seed).unwrap();
            for _ in 0..2 {
                let epoch = it.next_epoch();
                prop_assert_eq!(&epoch, &again.next_epoch());
                prop_assert_eq!(epoch.len(), len.div_ceil(batch));
                let mut all: Vec<usize> = epoch.concat();
                all.sort_unstable();
                prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn grid_layout_and_determinism() {
        let imgs = vec![Tensor::ones(&[28, 28]); 4];
        let g = grid_image(&imgs, 2).unwrap();
        assert_eq!((g.width, g.height), (58, 58));
        for y in 0..58 {
            for x in 0..58 {
                let gutter = (28..30).contains(&x) || (28..30).contains(&y);
                assert_eq!(g.pixels[y * 58 + x], if gutter { 0 } else { 255 });
            }
        }
        let three = grid_image(&imgs[..3], 2).unwrap();
        assert_eq!((three.width, three.height), (58, 58));
        assert_eq!(three.pixels[57 * 58 + 57], 0);

        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        write_grid_png(&imgs, 2, &a).unwrap();
        write_grid_png(&imgs, 2, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_png(&a).unwrap(), g);
        assert!(grid_image(&[], 2).is_err());
        assert!(matches!(
            write_grid_png(&imgs, 2, &dir.path().join("missing/x.png")),
            Err(Error::Io { .. })
        ));
    }
}
