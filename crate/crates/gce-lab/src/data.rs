//! Dataset loading (MNIST IDX, CIFAR-10 binary), deterministic batching
//! and subsetting.
//!
//! Pixels are scaled from bytes into `[0, 1]`; no further normalization
//! happens because attack budgets are defined in that space. Loaders
//! record the SHA-256 of every raw file so reports can pin exactly what
//! they were computed from.

use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::RawTensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD_LEN: usize = 3073;

/// Origin of one raw data file.
#[derive(Debug, Clone, PartialEq)]
pub struct FileProvenance {
    pub path: String,
    pub sha256: String,
}

/// An immutable labeled image set.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `[n, channels, height, width]`, values in `[0, 1]`.
    pub images: RawTensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: String,
    pub provenance: Vec<FileProvenance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-image `[channels, height, width]`.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.images.shape[1], self.images.shape[2], self.images.shape[3]]
    }

    pub fn image_numel(&self) -> usize {
        self.image_shape().iter().product()
    }

    /// Copies the selected samples into a contiguous batch.
    pub fn gather(&self, indices: &[usize]) -> (RawTensor, Vec<usize>) {
        let d = self.image_numel();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.image_shape();
        (
            RawTensor {
                shape: vec![indices.len(), c, h, w],
                data,
            },
            labels,
        )
    }

    /// A seeded permutation of sample indices split into batches. The
    /// same `(seed, epoch)` always yields the same order; the last batch
    /// keeps its partial size.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, "batches", &[epoch as u64]));
        order.shuffle(&mut rng);
        Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }

    /// A seeded sample of `n` items: class-stratified when `n` divides
    /// evenly over the classes and every class is populous enough,
    /// otherwise uniform.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidArgument("subset size must be >= 1".into()));
        }
        if n > self.len() {
            return Err(Error::InvalidArgument(format!(
                "subset of {n} from dataset of {}",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, "subset", &[n as u64]));
        let per_class = n / self.classes;
        let stratified = n.is_multiple_of(self.classes) && {
            let mut counts = vec![0usize; self.classes];
            for &l in &self.labels {
                counts[l] += 1;
            }
            counts.iter().all(|&c| c >= per_class)
        };
        let mut chosen: Vec<usize> = if stratified {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.classes];
            for (i, &l) in self.labels.iter().enumerate() {
                by_class[l].push(i);
            }
            let mut picked = Vec::with_capacity(n);
            for class_indices in &mut by_class {
                class_indices.shuffle(&mut rng);
                picked.extend_from_slice(&class_indices[..per_class]);
            }
            picked
        } else {
            let mut order: Vec<usize> = (0..self.len()).collect();
            order.shuffle(&mut rng);
            order.truncate(n);
            order
        };
        chosen.shuffle(&mut rng);
        let (images, labels) = self.gather(&chosen);
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
            split: self.split.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// One hex digest covering every source file, for report rows.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.provenance {
            hasher.update(p.sha256.as_bytes());
        }
        hex(&hasher.finalize()[..8])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_file(path: &Path) -> Result<(Vec<u8>, FileProvenance)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok((
        bytes,
        FileProvenance {
            path: path.display().to_string(),
            sha256: hex(&digest),
        },
    ))
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))
}

/// Loads an MNIST-style IDX image/label file pair. Headers are
/// big-endian; bytes become floats via division by 255.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (img_bytes, img_prov) = read_file(images_path)?;
    let (lbl_bytes, lbl_prov) = read_file(labels_path)?;

    let magic = read_u32_be(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let count = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} bytes, header implies {expected}",
            images_path.display(),
            img_bytes.len()
        )));
    }

    let magic = read_u32_be(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4, labels_path)? as usize;
    if lbl_bytes.len() != 8 + lbl_count {
        return Err(Error::Format(format!(
            "{}: {} bytes, header implies {}",
            labels_path.display(),
            lbl_bytes.len(),
            8 + lbl_count
        )));
    }
    if lbl_count != count {
        return Err(Error::Format(format!(
            "{count} images but {lbl_count} labels"
        )));
    }

    let data: Vec<f64> = img_bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    debug_assert!(data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    let labels: Vec<usize> = lbl_bytes[8..].iter().map(|&b| b as usize).collect();
    let classes = 10;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Format(format!("label {bad} out of range")));
    }
    Ok(Dataset {
        images: RawTensor {
            shape: vec![count, 1, rows, cols],
            data,
        },
        labels,
        classes,
        split: String::new(),
        provenance: vec![img_prov, lbl_prov],
    })
}

/// Loads CIFAR-10 binary batches: each record is one label byte followed
/// by 3072 pixel bytes (R, G, B planes of a 32x32 image).
pub fn load_cifar10_bin(paths: &[PathBuf]) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for path in paths {
        let (bytes, prov) = read_file(path)?;
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::Format(format!(
                "{}: length {} not divisible by {CIFAR_RECORD_LEN}",
                path.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            let label = record[0] as usize;
            if label > 9 {
                return Err(Error::Format(format!("label {label} out of range")));
            }
            labels.push(label);
            data.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
        provenance.push(prov);
    }
    let count = labels.len();
    Ok(Dataset {
        images: RawTensor {
            shape: vec![count, 3, 32, 32],
            data,
        },
        labels,
        classes: 10,
        split: String::new(),
        provenance,
    })
}

/// Data root: the `GCE_LAB_DATA` environment variable if set, else
/// `data/` under the current directory.
pub fn data_root() -> PathBuf {
    std::env::var_os("GCE_LAB_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Loads the canonical MNIST split from `<dir>/mnist/`.
pub fn load_mnist_split(root: &Path, train: bool) -> Result<Dataset> {
    let dir = root.join("mnist");
    let (images, labels, tag) = if train {
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train")
    } else {
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "test")
    };
    let mut ds = load_mnist_idx(&dir.join(images), &dir.join(labels))?;
    ds.split = tag.into();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(n: usize, classes: usize) -> Dataset {
        Dataset {
            images: RawTensor {
                shape: vec![n, 1, 1, 2],
                data: (0..2 * n).map(|i| i as f64 / (2 * n) as f64).collect(),
            },
            labels: (0..n).map(|i| i % classes).collect(),
            classes,
            split: "test".into(),
            provenance: vec![],
        }
    }

    #[test]
    fn batches_cover_every_sample_once() {
        let ds = tiny_dataset(10, 2);
        let batches = ds.batches(4, 7, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batches_are_deterministic_per_seed_and_epoch() {
        let ds = tiny_dataset(16, 2);
        assert_eq!(ds.batches(4, 7, 1).unwrap(), ds.batches(4, 7, 1).unwrap());
        assert_ne!(ds.batches(4, 7, 1).unwrap(), ds.batches(4, 7, 2).unwrap());
        assert!(ds.batches(0, 7, 0).is_err());
    }

    #[test]
    fn subset_is_stratified_when_divisible() {
        let ds = tiny_dataset(100, 10);
        let sub = ds.subset(20, 5).unwrap();
        let mut counts = [0usize; 10];
        for &l in &sub.labels {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2));
        let again = ds.subset(20, 5).unwrap();
        assert_eq!(sub.labels, again.labels);
        assert_eq!(sub.images.data, again.images.data);
    }

    #[test]
    fn subset_full_size_is_a_permutation() {
        let ds = tiny_dataset(10, 3);
        let sub = ds.subset(10, 1).unwrap();
        let mut labels = sub.labels.clone();
        labels.sort_unstable();
        let mut orig = ds.labels.clone();
        orig.sort_unstable();
        assert_eq!(labels, orig);
        assert!(ds.subset(0, 1).is_err());
        assert!(ds.subset(11, 1).is_err());
    }

    fn synthetic_idx(images: &[[u8; 4]], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        for im in images {
            img.extend_from_slice(im);
        }
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lbl.extend_from_slice(labels);
        (img, lbl)
    }

    #[test]
    fn idx_round_trip_and_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = synthetic_idx(&[[0, 255, 128, 64], [1, 2, 3, 4], [250, 0, 0, 9]], &[7, 0, 9]);
        let img_path = dir.path().join("img");
        let lbl_path = dir.path().join("lbl");
        fs::write(&img_path, &img).unwrap();
        fs::write(&lbl_path, &lbl).unwrap();

        let ds = load_mnist_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(ds.images.shape, vec![3, 1, 2, 2]);
        assert_eq!(ds.labels, vec![7, 0, 9]);
        assert_eq!(ds.images.data[0], 0.0);
        assert_eq!(ds.images.data[1], 1.0);

        let again = load_mnist_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(ds.images, again.images);
        assert_eq!(ds.provenance, again.provenance);
    }

    #[test]
    fn idx_rejects_bad_magic_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (mut img, lbl) = synthetic_idx(&[[0, 0, 0, 0]], &[1]);
        img[3] = 0x99;
        let img_path = dir.path().join("img");
        let lbl_path = dir.path().join("lbl");
        fs::write(&img_path, &img).unwrap();
        fs::write(&lbl_path, &lbl).unwrap();
        let err = load_mnist_idx(&img_path, &lbl_path).unwrap_err();
        assert!(err.to_string().contains("magic"));

        let (img, lbl) = synthetic_idx(&[[0, 0, 0, 0]], &[1, 2]);
        fs::write(&img_path, &img).unwrap();
        fs::write(&lbl_path, &lbl).unwrap();
        let err = load_mnist_idx(&img_path, &lbl_path).unwrap_err();
        assert!(err.to_string().contains("labels"));
    }

    #[test]
    fn cifar_record_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![9u8];
        bytes.extend(std::iter::repeat_n(255u8, 3072));
        bytes.push(3);
        bytes.extend(std::iter::repeat_n(0u8, 3072));
        let path = dir.path().join("batch.bin");
        fs::write(&path, &bytes).unwrap();
        let ds = load_cifar10_bin(std::slice::from_ref(&path)).unwrap();
        assert_eq!(ds.images.shape, vec![2, 3, 32, 32]);
        assert_eq!(ds.labels, vec![9, 3]);
        assert_eq!(ds.images.data[0], 1.0);
        assert_eq!(ds.images.data[3072], 0.0);

        fs::write(&path, &bytes[..100]).unwrap();
        assert!(load_cifar10_bin(&[path]).is_err());
    }
}
