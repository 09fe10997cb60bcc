//! Labelled datasets: IDX and CSV ingestion plus synthetic Gaussian blobs.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// `K` feature vectors with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("dataset must contain at least one sample".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].len();
        for (k, f) in features.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::InvalidInput(format!("row {k} has {} features, expected {dim}", f.len())));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {k} has a non-finite feature")));
            }
        }
        if let Some(bad) = labels.iter().find(|z| **z >= num_classes) {
            return Err(Error::InvalidInput(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    /// Rows at the given indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            self.name.clone(),
        )
    }

    /// Keeps only the first `classes` classes and at most `max_samples` rows.
    pub fn restrict(&self, classes: usize, max_samples: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.labels[i] < classes)
            .take(max_samples)
            .collect();
        let mut d = self.subset(&idx)?;
        d.num_classes = classes.min(self.num_classes);
        Ok(d)
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(path, format!("truncated header: need 4 bytes at byte offset {offset}, file has {}", bytes.len())))
}

/// Parses an IDX image tensor (`u8`, magic `0x00000803`) into rows scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f64>>> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(path, format!("bad magic 0x{magic:08x} at byte offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}")));
    }
    let count = read_u32_be(bytes, 4, path)? as usize;
    let rows = read_u32_be(bytes, 8, path)? as usize;
    let cols = read_u32_be(bytes, 12, path)? as usize;
    let size = rows * cols;
    let need = 16 + count * size;
    if bytes.len() < need {
        return Err(Error::parse(
            path,
            format!("truncated image data at byte offset {}: expected {need} bytes", bytes.len()),
        ));
    }
    Ok(bytes[16..need]
        .chunks_exact(size.max(1))
        .take(count)
        .map(|c| c.iter().map(|&b| b as f64 / 255.0).collect())
        .collect())
}

/// Parses an IDX label vector (`u8`, magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(path, format!("bad magic 0x{magic:08x} at byte offset 0, expected 0x{IDX_LABELS_MAGIC:08x}")));
    }
    let count = read_u32_be(bytes, 4, path)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::parse(
            path,
            format!("truncated label data at byte offset {}: expected {need} bytes", bytes.len()),
        ));
    }
    Ok(bytes[8..need].iter().map(|&b| b as usize).collect())
}

/// Loads a pair of IDX files (images and labels).
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lb = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let features = parse_idx_images(&ib, ip)?;
    let labs = parse_idx_labels(&lb, lp)?;
    if features.len() != labs.len() {
        return Err(Error::parse(
            lp,
            format!("{} labels for {} images in {}", labs.len(), features.len(), ip.display()),
        ));
    }
    let classes = labs.iter().max().map_or(1, |m| m + 1);
    let name = ip.file_stem().map_or("idx".into(), |s| s.to_string_lossy().into_owned());
    Dataset::new(features, labs, classes, name)
}

/// Loads a numeric CSV, with or without a header row, taking class indices
/// from `label_column`.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
        let all_numeric = rec.iter().all(|c| c.trim().parse::<f64>().is_ok());
        if row == 0 && !all_numeric {
            continue;
        }
        if label_column >= rec.len() {
            return Err(Error::parse(
                path,
                format!("row {}: label column {label_column} missing ({} columns)", row + 1, rec.len()),
            ));
        }
        let mut feat = Vec::with_capacity(rec.len() - 1);
        let mut label = 0;
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("non-numeric cell '{cell}' at row {}, column {}", row + 1, col + 1)))?;
            if col == label_column {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::parse(path, format!("label '{cell}' at row {} is not a class index", row + 1)));
                }
                label = v as usize;
            } else {
                feat.push(v);
            }
        }
        features.push(feat);
        labels.push(label);
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let name = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    Dataset::new(features, labels, classes, name)
}

/// Writes features followed by the label as the last column, with a header.
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let mut header: Vec<String> = (0..data.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| Error::parse(path, e.to_string()))?;
    for (f, z) in data.features.iter().zip(&data.labels) {
        let mut row: Vec<String> = f.iter().map(|v| format!("{v:?}")).collect();
        row.push(z.to_string());
        w.write_record(&row).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Class `k` is centred at `e_k / √2`, so distinct centres are at distance 1.
/// With more classes than dimensions the centres go on a circle of diameter 1
/// in the first two coordinates instead.
fn blob_center(k: usize, classes: usize, dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    if classes <= dim {
        c[k] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let a = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
        let r = 0.5 / (std::f64::consts::PI / classes as f64).sin();
        c[0] = r * a.cos();
        if dim > 1 {
            c[1] = r * a.sin();
        }
    }
    c
}

/// Isotropic Gaussian blobs, `n_per_class` samples per class, interleaved by class.
pub fn make_blobs(n_per_class: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || classes < 2 || dim == 0 || !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "invalid blob parameters n_per_class={n_per_class} classes={classes} dim={dim} spread={spread}"
        )));
    }
    let centers: Vec<Vec<f64>> = (0..classes).map(|k| blob_center(k, classes, dim)).collect();
    let mut rng = rng::stream(seed, rng::DATA_STREAM);
    let normal = Normal::new(0.0, spread).expect("finite spread");
    let mut features = Vec::with_capacity(n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for _ in 0..n_per_class {
        for (k, c) in centers.iter().enumerate() {
            features.push(c.iter().map(|m| m + normal.sample(&mut rng)).collect());
            labels.push(k);
        }
    }
    Dataset::new(features, labels, classes, "blobs")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{mlp, Architecture, Classifier};
    use std::io::Write;

    fn idx_images(count: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        for v in [count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(fill, (count * rows * cols) as usize));
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_zero_images() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, idx_images(3, 2, 2, 0)).unwrap();
        fs::write(&lp, idx_labels(&[0, 1, 2])).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!((d.len(), d.dim(), d.num_classes), (3, 4, 3));
        assert!(d.features.iter().flatten().all(|v| *v == 0.0));
        fs::write(&ip, idx_images(1, 1, 1, 255)).unwrap();
        fs::write(&lp, idx_labels(&[0])).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap().features[0], vec![1.0]);
    }

    #[test]
    fn idx_errors() {
        let p = Path::new("mem");
        let full = idx_images(3, 2, 2, 7);
        let err = parse_idx_images(&full[..20], p).unwrap_err().to_string();
        assert!(err.contains("byte offset 20"), "{err}");
        let err = parse_idx_images(&full[..6], p).unwrap_err().to_string();
        assert!(err.contains("byte offset 4"), "{err}");
        let mut bad = full.clone();
        bad[3] = 0x01;
        assert!(parse_idx_images(&bad, p).unwrap_err().to_string().contains("magic"));

        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, &full).unwrap();
        fs::write(&lp, idx_labels(&[0, 1])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Parse { .. })));
        assert!(matches!(load_idx(dir.path().join("none"), &lp), Err(Error::Io { .. })));
    }

    #[test]
    fn mnist_test_set_if_present() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
        let (ip, lp) = (root.join("t10k-images-idx3-ubyte"), root.join("t10k-labels-idx1-ubyte"));
        if ip.exists() && lp.exists() {
            let d = load_idx(&ip, &lp).unwrap();
            assert_eq!((d.len(), d.dim()), (10_000, 784));
        }
    }

    #[test]
    fn csv_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "0.1,0.2,1\n0.3,0.4,0\n").unwrap();
        let d = load_csv(&p, 2).unwrap();
        assert_eq!((d.len(), d.dim()), (2, 2));
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.features[1], vec![0.3, 0.4]);
        assert!(load_csv(&p, 3).is_err());

        let mut f = fs::File::create(&p).unwrap();
        writeln!(f, "a,b,label\n0.1,0.2,1\n0.3,x,0").unwrap();
        let err = load_csv(&p, 2).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("column 2"), "{err}");
    }

    #[test]
    fn csv_round_trip() {
        let d = make_blobs(10, 3, 4, 0.3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("blobs.csv");
        save_csv(&d, &p).unwrap();
        let back = load_csv(&p, 4).unwrap();
        assert_eq!(back.features, d.features);
        assert_eq!(back.labels, d.labels);
    }

    #[test]
    fn blobs_properties() {
        let d = make_blobs(5, 3, 4, 0.0, 1).unwrap();
        for (f, z) in d.features.iter().zip(&d.labels) {
            assert_eq!(f, &blob_center(*z, 3, 4));
        }
        assert_eq!(make_blobs(20, 3, 4, 0.2, 7).unwrap(), make_blobs(20, 3, 4, 0.2, 7).unwrap());
        assert_ne!(make_blobs(20, 3, 4, 0.2, 7).unwrap(), make_blobs(20, 3, 4, 0.2, 8).unwrap());
        let c = make_blobs(1, 5, 2, 0.0, 1).unwrap();
        let dist = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        assert!((dist(&c.features[0], &c.features[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_model_separates_blobs() {
        let d = make_blobs(200, 3, 5, 0.05, 3).unwrap();
        let m = mlp(Architecture::new(vec![5, 3]).unwrap());
        let mut theta = m.init_params(0);
        let idx: Vec<usize> = (0..d.len()).collect();
        for _ in 0..200 {
            let (_, g) = m.batch_loss_grad(&theta, &d, &idx);
            theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= 1.0 * gi);
        }
        let correct = (0..d.len()).filter(|&k| m.predict(&theta, &d.features[k]) == d.labels[k]).count();
        assert!(correct as f64 / d.len() as f64 >= 0.99);
    }
}
