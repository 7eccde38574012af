//! Visual descriptors: unit-norm feature vectors, the feature-file format,
//! and a histogram featurizer for self-contained demos.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, FeatureRef};
use crate::error::{Error, Result};

/// Tolerance on the unit norm before a loaded vector is re-normalised.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// An L2-normalised visual descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<FeatureVector> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(None));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector(None));
    }
    Ok(FeatureVector(v.iter().map(|x| x / norm).collect()))
}

/// Row-major RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            pixels,
        })
    }

    pub fn mirrored(&self) -> Self {
        let pixels = (0..self.height)
            .flat_map(|r| {
                (0..self.width)
                    .rev()
                    .map(move |c| self.pixels[r * self.width + c])
            })
            .collect();
        RawImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

/// Per-channel intensity histograms, concatenated R|G|B and L2-normalised.
pub fn toy_featurize(img: &RawImage, bins_per_channel: usize) -> Result<FeatureVector> {
    if bins_per_channel < 2 {
        return Err(Error::InvalidParameter("bins_per_channel must be >= 2".into()));
    }
    if img.pixels.is_empty() {
        return Err(Error::InvalidParameter("empty image".into()));
    }
    let mut hist = vec![0.0; 3 * bins_per_channel];
    for px in &img.pixels {
        for (ch, &value) in px.iter().enumerate() {
            let bin = value as usize * bins_per_channel / 256;
            hist[ch * bins_per_channel + bin] += 1.0;
        }
    }
    l2_normalize(&hist)
}

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct FeatureRow {
    id: String,
    v: Vec<f64>,
}

pub type FeatureMap = BTreeMap<String, FeatureVector>;

/// Reads a feature file, re-normalising any vector whose norm is off by more
/// than [`NORM_TOLERANCE`].
pub fn read_features<R: Read>(reader: R, expected_dim: usize) -> Result<FeatureMap> {
    let mut lines = BufReader::new(reader).lines();
    let io = |e| Error::io("<feature stream>", e);
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing header"))?
        .map_err(io)?;
    let header: FeatureHeader = serde_json::from_str(&first).map_err(|e| Error::parse(1, e))?;
    if header.dim != expected_dim {
        return Err(Error::DimensionMismatch {
            id: None,
            expected: expected_dim,
            found: header.dim,
        });
    }
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FeatureRow = serde_json::from_str(&line).map_err(|e| Error::parse(i + 2, e))?;
        if row.v.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                id: Some(row.id),
                expected: expected_dim,
                found: row.v.len(),
            });
        }
        if row.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(Some(row.id)));
        }
        let norm = row.v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let fv = if (norm - 1.0).abs() > NORM_TOLERANCE {
            l2_normalize(&row.v).map_err(|_| Error::ZeroVector(Some(row.id.clone())))?
        } else {
            FeatureVector(row.v)
        };
        if out.insert(row.id.clone(), fv).is_some() {
            return Err(Error::DuplicateId(row.id));
        }
    }
    Ok(out)
}

pub fn load_features(path: impl AsRef<Path>, expected_dim: usize) -> Result<FeatureMap> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(f, expected_dim)
}

pub fn write_features<W: Write>(features: &FeatureMap, dim: usize, mut w: W) -> Result<()> {
    let io = |e| Error::io("<feature stream>", e);
    writeln!(w, "{}", serde_json::to_string(&FeatureHeader { dim }).unwrap()).map_err(io)?;
    for (id, v) in features {
        let row = FeatureRow {
            id: id.clone(),
            v: v.values().to_vec(),
        };
        writeln!(w, "{}", serde_json::to_string(&row).unwrap()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_features(features: &FeatureMap, dim: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(features, dim, BufWriter::new(f))
}

/// Unit-norm feature vector for every catalog item, resolving keyed
/// references through `external`.
pub fn catalog_features(catalog: &Catalog, external: Option<&FeatureMap>) -> Result<FeatureMap> {
    let mut out = BTreeMap::new();
    for item in catalog.items() {
        let fv = match &item.features {
            FeatureRef::Inline(v) => {
                l2_normalize(v).map_err(|_| Error::ZeroVector(Some(item.id.clone())))?
            }
            FeatureRef::Key(k) => external
                .and_then(|m| m.get(k))
                .cloned()
                .ok_or_else(|| Error::MissingFeatures(item.id.clone()))?,
        };
        if fv.dim() != catalog.feature_dim() {
            return Err(Error::DimensionMismatch {
                id: Some(item.id.clone()),
                expected: catalog.feature_dim(),
                found: fv.dim(),
            });
        }
        out.insert(item.id.clone(), fv);
    }
    Ok(out)
}
