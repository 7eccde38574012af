//! Catalog data model: items, compatible sets and their cross-references.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::tokenize;
use crate::error::{Error, Result};

pub use io::load_catalog;
pub use synth::{gen_synthetic, gen_synthetic_with, SynthConfig, SyntheticCatalog};

/// Where an item's visual descriptor lives.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureRef {
    Inline(Vec<f64>),
    /// Key into a separate feature file.
    Key(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub category: String,
    pub name: String,
    pub name_words: Vec<String>,
    pub description: String,
    pub features: FeatureRef,
    /// Ids of the compatible sets listing this item, sorted.
    pub set_ids: Vec<String>,
    pub image_url: Option<String>,
}

impl Item {
    pub fn new(
        id: impl Into<String>,
        category: impl Into<String>,
        name: impl Into<String>,
        description: impl Into<String>,
        features: FeatureRef,
    ) -> Self {
        let name = name.into();
        Item {
            id: id.into(),
            category: category.into(),
            name_words: tokenize(&name),
            name,
            description: description.into(),
            features,
            set_ids: Vec::new(),
            image_url: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibleSet {
    pub id: String,
    pub item_ids: Vec<String>,
    pub scene: Option<String>,
}

/// Validated, immutable catalog. Items and sets are kept in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    categories: Vec<String>,
    feature_dim: usize,
    items: BTreeMap<String, Item>,
    sets: BTreeMap<String, CompatibleSet>,
}

impl Catalog {
    /// Builds and validates a catalog. Sets are authoritative for membership:
    /// each item's `set_ids` is rebuilt as the union of what it already
    /// declares and every set that lists it.
    pub fn from_parts(
        categories: Vec<String>,
        feature_dim: usize,
        items: Vec<Item>,
        sets: Vec<CompatibleSet>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::DuplicateId(format!("category {c}")));
            }
        }
        let mut item_map = BTreeMap::new();
        for item in items {
            if !seen.contains(item.category.as_str()) {
                return Err(Error::UnknownCategory {
                    id: item.id,
                    category: item.category,
                });
            }
            if let FeatureRef::Inline(v) = &item.features {
                if v.len() != feature_dim {
                    return Err(Error::DimensionMismatch {
                        id: Some(item.id),
                        expected: feature_dim,
                        found: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(Some(item.id)));
                }
            }
            if item_map.contains_key(&item.id) {
                return Err(Error::DuplicateId(item.id));
            }
            item_map.insert(item.id.clone(), item);
        }

        let mut set_map: BTreeMap<String, CompatibleSet> = BTreeMap::new();
        for set in sets {
            if set.item_ids.len() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "set `{}` has fewer than two items",
                    set.id
                )));
            }
            let mut members = BTreeSet::new();
            for id in &set.item_ids {
                if !item_map.contains_key(id) {
                    return Err(Error::DanglingReference {
                        id: id.clone(),
                        context: format!("listed by set `{}`", set.id),
                    });
                }
                if !members.insert(id.as_str()) {
                    return Err(Error::DuplicateId(format!("{id} in set {}", set.id)));
                }
            }
            if set_map.contains_key(&set.id) {
                return Err(Error::DuplicateId(set.id));
            }
            set_map.insert(set.id.clone(), set);
        }

        // Items may declare memberships the set lines omit; repair those.
        let mut additions: Vec<(String, String)> = Vec::new();
        for item in item_map.values() {
            for sid in &item.set_ids {
                let set = set_map.get(sid).ok_or_else(|| Error::DanglingReference {
                    id: sid.clone(),
                    context: format!("set membership of item `{}`", item.id),
                })?;
                if !set.item_ids.contains(&item.id) {
                    additions.push((sid.clone(), item.id.clone()));
                }
            }
        }
        for (sid, iid) in additions {
            let set = set_map.get_mut(&sid).expect("checked above");
            if !set.item_ids.contains(&iid) {
                set.item_ids.push(iid);
            }
        }
        let mut membership: HashMap<&str, Vec<String>> = HashMap::new();
        for set in set_map.values() {
            for id in &set.item_ids {
                membership.entry(id.as_str()).or_default().push(set.id.clone());
            }
        }
        let mut rebuilt: Vec<(String, Vec<String>)> = membership
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        rebuilt.sort();
        for item in item_map.values_mut() {
            item.set_ids.clear();
        }
        for (id, mut sids) in rebuilt {
            sids.sort();
            item_map.get_mut(&id).expect("validated").set_ids = sids;
        }

        Ok(Catalog {
            categories,
            feature_dim,
            items: item_map,
            sets: set_map,
        })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_index(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.get(id)
    }

    pub fn set(&self, id: &str) -> Option<&CompatibleSet> {
        self.sets.get(id)
    }

    /// Items in id order.
    pub fn items(&self) -> impl Iterator<Item = &Item> {
        self.items.values()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.items.keys().map(String::as_str)
    }

    /// Sets in id order.
    pub fn sets(&self) -> impl Iterator<Item = &CompatibleSet> {
        self.sets.values()
    }

    pub fn set_count(&self) -> usize {
        self.sets.len()
    }

    /// Replaces keyed feature references with inline vectors.
    pub fn with_inline_features(
        &self,
        features: &BTreeMap<String, crate::visfeat::FeatureVector>,
    ) -> Result<Self> {
        let mut out = self.clone();
        for item in out.items.values_mut() {
            if let FeatureRef::Key(key) = &item.features {
                let v = features
                    .get(key)
                    .ok_or_else(|| Error::DanglingReference {
                        id: key.clone(),
                        context: format!("feature key of item `{}`", item.id),
                    })?;
                if v.dim() != out.feature_dim {
                    return Err(Error::DimensionMismatch {
                        id: Some(item.id.clone()),
                        expected: out.feature_dim,
                        found: v.dim(),
                    });
                }
                item.features = FeatureRef::Inline(v.values().to_vec());
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.1,
            seed: 1,
        }
    }
}

/// Train/test partition of item ids, each side sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle of the sorted item ids; the first
/// `round(test_fraction * n)` become the test split.
pub fn split(catalog: &Catalog, spec: SplitSpec) -> Result<Split> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction {} outside (0, 1)",
            spec.test_fraction
        )));
    }
    let mut ids: Vec<String> = catalog.item_ids().map(str::to_string).collect();
    let n_test = (spec.test_fraction * ids.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    ids.shuffle(&mut rng);
    let mut test = ids[..n_test].to_vec();
    let mut train = ids[n_test..].to_vec();
    test.sort();
    train.sort();
    Ok(Split { train, test })
}

/// Small English function-word list excluded from "descriptive" words.
pub const DEFAULT_STOPLIST: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "in", "into", "is",
    "it", "its", "of", "on", "or", "the", "to", "with", "without", "x",
];

pub fn default_stoplist() -> BTreeSet<String> {
    DEFAULT_STOPLIST.iter().map(|s| s.to_string()).collect()
}

/// The `top_n` most frequent name tokens, excluding `stoplist`; count ties
/// are broken lexicographically.
pub fn frequent_name_words(
    catalog: &Catalog,
    top_n: usize,
    stoplist: &BTreeSet<String>,
) -> BTreeSet<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for item in catalog.items() {
        for w in &item.name_words {
            if !stoplist.contains(w) {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(top_n)
        .map(|(w, _)| w.to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, name: &str) -> Item {
        Item::new(id, "c", name, "", FeatureRef::Inline(vec![1.0, 0.0]))
    }

    fn cat(items: Vec<Item>, sets: Vec<CompatibleSet>) -> Result<Catalog> {
        Catalog::from_parts(vec!["c".into()], 2, items, sets)
    }

    fn set(id: &str, ids: &[&str]) -> CompatibleSet {
        CompatibleSet {
            id: id.into(),
            item_ids: ids.iter().map(|s| s.to_string()).collect(),
            scene: None,
        }
    }

    #[test]
    fn membership_is_bidirectional() {
        let c = cat(
            vec![item("a", ""), item("b", ""), item("c", "")],
            vec![set("s2", &["a", "b"]), set("s1", &["b", "c"])],
        )
        .unwrap();
        assert_eq!(c.item("b").unwrap().set_ids, vec!["s1", "s2"]);
        for it in c.items() {
            for sid in &it.set_ids {
                assert!(c.set(sid).unwrap().item_ids.contains(&it.id));
            }
        }
    }

    #[test]
    fn item_declared_membership_is_repaired_into_set() {
        let mut c_item = item("c", "");
        c_item.set_ids = vec!["s1".into()];
        let c = cat(
            vec![item("a", ""), item("b", ""), c_item],
            vec![set("s1", &["a", "b"])],
        )
        .unwrap();
        assert_eq!(c.set("s1").unwrap().item_ids, vec!["a", "b", "c"]);
        assert_eq!(c.item("c").unwrap().set_ids, vec!["s1"]);
    }

    #[test]
    fn integrity_errors() {
        let err = cat(vec![item("a", "")], vec![set("s1", &["a", "x9"])]).unwrap_err();
        assert!(matches!(err, Error::DanglingReference { ref id, .. } if id == "x9"));
        let err = cat(vec![item("a", ""), item("a", "")], vec![]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "a"));
        let err = cat(vec![item("a", ""), item("b", "")], vec![set("s", &["a", "a"])]);
        assert!(err.is_err());
        let mut bad = item("z", "");
        bad.category = "nope".into();
        assert!(matches!(
            cat(vec![bad], vec![]),
            Err(Error::UnknownCategory { .. })
        ));
    }

    #[test]
    fn split_counts_and_determinism() {
        let items = (0..10).map(|i| item(&format!("i{i}"), "")).collect();
        let c = cat(items, vec![]).unwrap();
        let spec = SplitSpec {
            test_fraction: 0.1,
            seed: 7,
        };
        let s = split(&c, spec).unwrap();
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.train.len(), 9);
        assert_eq!(s, split(&c, spec).unwrap());
        assert!(split(&c, SplitSpec { test_fraction: 1.0, seed: 1 }).is_err());
        assert!(split(&c, SplitSpec { test_fraction: 0.0, seed: 1 }).is_err());
    }

    #[test]
    fn frequent_words_with_tie_break() {
        let c = cat(
            vec![
                item("1", "denim jacket"),
                item("2", "denim skirt"),
                item("3", "silk scarf"),
            ],
            vec![],
        )
        .unwrap();
        let none = BTreeSet::new();
        assert_eq!(
            frequent_name_words(&c, 1, &none),
            BTreeSet::from(["denim".to_string()])
        );
        let stop = BTreeSet::from(["denim".to_string()]);
        assert_eq!(
            frequent_name_words(&c, 1, &stop),
            BTreeSet::from(["jacket".to_string()])
        );
    }
}
