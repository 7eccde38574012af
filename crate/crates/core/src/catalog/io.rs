//! JSON-lines catalog format: one header record, then item and set records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Catalog, CompatibleSet, FeatureRef, Item};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Header {
        categories: Vec<String>,
        feature_dim: usize,
    },
    Item {
        id: String,
        category: String,
        name: String,
        description: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feature_key: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image_url: Option<String>,
    },
    Set {
        id: String,
        items: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scene: Option<String>,
    },
}

impl Catalog {
    pub fn read_from<R: Read>(reader: R) -> Result<Self> {
        let mut header: Option<(Vec<String>, usize)> = None;
        let mut items = Vec::new();
        let mut sets = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::io("<catalog stream>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e))?;
            match rec {
                Record::Header {
                    categories,
                    feature_dim,
                } => {
                    if header.is_some() || lineno != 1 {
                        return Err(Error::parse(lineno, "header must be the first record"));
                    }
                    header = Some((categories, feature_dim));
                }
                _ if header.is_none() => {
                    return Err(Error::parse(lineno, "missing header record"));
                }
                Record::Item {
                    id,
                    category,
                    name,
                    description,
                    features,
                    feature_key,
                    image_url,
                } => {
                    let features = match (features, feature_key) {
                        (Some(v), None) => FeatureRef::Inline(v),
                        (None, Some(k)) => FeatureRef::Key(k),
                        _ => {
                            return Err(Error::parse(
                                lineno,
                                format!(
                                    "item `{id}` needs exactly one of `features` or `feature_key`"
                                ),
                            ))
                        }
                    };
                    let mut item = Item::new(id, category, name, description, features);
                    item.image_url = image_url;
                    items.push(item);
                }
                Record::Set { id, items: ids, scene } => sets.push(CompatibleSet {
                    id,
                    item_ids: ids,
                    scene,
                }),
            }
        }
        let (categories, feature_dim) =
            header.ok_or_else(|| Error::parse(1, "missing header record"))?;
        Catalog::from_parts(categories, feature_dim, items, sets)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<catalog stream>", e);
        let mut emit = |rec: &Record| -> Result<()> {
            let line = serde_json::to_string(rec).expect("records serialize");
            writeln!(w, "{line}").map_err(io)
        };
        emit(&Record::Header {
            categories: self.categories.clone(),
            feature_dim: self.feature_dim,
        })?;
        for item in self.items() {
            let (features, feature_key) = match &item.features {
                FeatureRef::Inline(v) => (Some(v.clone()), None),
                FeatureRef::Key(k) => (None, Some(k.clone())),
            };
            emit(&Record::Item {
                id: item.id.clone(),
                category: item.category.clone(),
                name: item.name.clone(),
                description: item.description.clone(),
                features,
                feature_key,
                image_url: item.image_url.clone(),
            })?;
        }
        for set in self.sets() {
            emit(&Record::Set {
                id: set.id.clone(),
                items: set.item_ids.clone(),
                scene: set.scene.clone(),
            })?;
        }
        w.flush().map_err(io)
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 output")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f))
    }
}

/// Load and validate a catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Catalog::read_from(f)
}
