//! Seeded synthetic catalogs with planted style clusters.
//!
//! Every item belongs to one latent style. Compatible sets draw their members
//! from a single style. Descriptions and names mix style-specific vocabulary
//! with shared filler; visual features are a style centre plus a category
//! centre plus isotropic noise, L2-normalised.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Catalog, CompatibleSet, FeatureRef, Item};
use crate::error::{Error, Result};

const CATEGORIES: &[&str] = &["chair", "lamp", "rug", "shelf", "sofa", "table"];

const CATEGORY_WORDS: &[&[&str]] = &[
    &["seat", "armrest"],
    &["light", "shade"],
    &["carpet", "pile"],
    &["storage", "bookcase"],
    &["couch", "cushion"],
    &["desk", "tabletop"],
];

const DESCRIPTIVE: &[&str] = &[
    "rustic", "reclaimed", "weathered", "farmhouse", "barnwood", "knotty",
    "minimal", "sleek", "clean", "matte", "monochrome", "geometric",
    "velvet", "plush", "tufted", "glamour", "gilded", "opulent",
    "rattan", "wicker", "woven", "jute", "boho", "macrame",
    "industrial", "steel", "riveted", "concrete", "raw", "pipe",
    "coastal", "driftwood", "linen", "breezy", "seaside", "whitewashed",
    "scandinavian", "birch", "airy", "hygge", "pale", "functional",
    "baroque", "carved", "ornate", "mahogany", "scrolled", "regal",
    "retro", "teak", "tapered", "atomic", "walnut", "vintage",
    "oriental", "lacquered", "bamboo", "zen", "paper", "lattice",
];

const NAME_WORDS: &[&str] = &[
    "cottage", "prairie", "homestead", "nordic", "urban", "loft", "palace", "salon",
    "regency", "lagoon", "harbor", "dune", "fjord", "tundra", "aurora", "foundry",
    "forge", "mill", "bazaar", "oasis", "caravan", "atelier", "studio", "gallery",
    "pagoda", "temple", "garden", "manor", "castle", "villa",
];

const FILLER: &[&str] = &[
    "design", "quality", "comfortable", "durable", "easy", "assemble", "perfect", "home",
    "living", "space", "finish", "classic", "modern", "style", "great", "everyday",
];

const SHARED_NAME_WORDS: &[&str] = &["basic", "deluxe", "new"];

const SYLLABLES: &[&str] = &[
    "ek", "tor", "vin", "sta", "bo", "lin", "mal", "gra", "fe", "nor", "ka", "sel", "ri",
    "dun", "hol", "ma", "tra", "vik", "lo", "sun",
];

const DESCRIPTIVE_PER_STYLE: usize = 6;
const NAME_WORDS_PER_STYLE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_items: usize,
    pub n_styles: usize,
    pub n_sets: usize,
    pub seed: u64,
    pub feature_dim: usize,
    /// Standard deviation of per-coordinate feature noise.
    pub feature_noise: f64,
    /// Weight of the category centre relative to the style centre.
    pub category_weight: f64,
    pub min_set_size: usize,
    pub max_set_size: usize,
}

impl SynthConfig {
    pub fn new(n_items: usize, n_styles: usize, n_sets: usize, seed: u64) -> Self {
        SynthConfig {
            n_items,
            n_styles,
            n_sets,
            seed,
            feature_dim: 32,
            feature_noise: 1.6,
            category_weight: 0.5,
            min_set_size: 3,
            max_set_size: 6,
        }
    }
}

/// A generated catalog plus the latent style of every item.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCatalog {
    pub catalog: Catalog,
    pub style_of: BTreeMap<String, usize>,
}

pub fn gen_synthetic(
    n_items: usize,
    n_styles: usize,
    n_sets: usize,
    seed: u64,
) -> Result<SyntheticCatalog> {
    gen_synthetic_with(&SynthConfig::new(n_items, n_styles, n_sets, seed))
}

fn style_words(pool: &[&str], style: usize, per_style: usize, tag: &str) -> Vec<String> {
    (0..per_style)
        .map(|j| {
            pool.get(style * per_style + j)
                .map(|w| w.to_string())
                .unwrap_or_else(|| format!("{tag}{style}x{j}"))
        })
        .collect()
}

fn normal_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

pub fn gen_synthetic_with(cfg: &SynthConfig) -> Result<SyntheticCatalog> {
    if cfg.n_styles < 2 {
        return Err(Error::InvalidParameter("need at least 2 styles".into()));
    }
    if cfg.n_sets < 1 {
        return Err(Error::InvalidParameter("need at least 1 set".into()));
    }
    if cfg.n_items < 2 * cfg.n_styles {
        return Err(Error::InvalidParameter(format!(
            "{} items cannot fill {} styles with two items each",
            cfg.n_items, cfg.n_styles
        )));
    }
    if cfg.feature_dim < 1 || cfg.min_set_size < 2 || cfg.max_set_size < cfg.min_set_size {
        return Err(Error::InvalidParameter(
            "feature_dim >= 1 and 2 <= min_set_size <= max_set_size required".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.feature_dim;
    let style_centres: Vec<Vec<f64>> = (0..cfg.n_styles)
        .map(|_| normal_vec(&mut rng, dim, 1.0))
        .collect();
    let category_centres: Vec<Vec<f64>> = (0..CATEGORIES.len())
        .map(|_| normal_vec(&mut rng, dim, cfg.category_weight))
        .collect();
    let descriptive: Vec<Vec<String>> = (0..cfg.n_styles)
        .map(|s| style_words(DESCRIPTIVE, s, DESCRIPTIVE_PER_STYLE, "style"))
        .collect();
    let name_words: Vec<Vec<String>> = (0..cfg.n_styles)
        .map(|s| style_words(NAME_WORDS, s, NAME_WORDS_PER_STYLE, "line"))
        .collect();

    let mut styles: Vec<usize> = (0..cfg.n_items).map(|i| i % cfg.n_styles).collect();
    styles.shuffle(&mut rng);

    let width = cfg.n_items.to_string().len().max(4);
    let mut items = Vec::with_capacity(cfg.n_items);
    let mut style_of = BTreeMap::new();
    let mut members: Vec<Vec<String>> = vec![Vec::new(); cfg.n_styles];
    for (i, &style) in styles.iter().enumerate() {
        let id = format!("p{i:0width$}");
        let cat = rng.random_range(0..CATEGORIES.len());

        let proper: String = (0..2)
            .map(|_| *SYLLABLES.choose(&mut rng).expect("non-empty"))
            .collect();
        let mut name = format!(
            "{proper} {}",
            name_words[style].choose(&mut rng).expect("non-empty")
        );
        if rng.random_bool(0.2) {
            name.push(' ');
            name.push_str(SHARED_NAME_WORDS.choose(&mut rng).expect("non-empty"));
        }

        let len = rng.random_range(8..=12);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let u: f64 = rng.random();
                if u < 0.6 {
                    descriptive[style].choose(&mut rng).expect("non-empty").as_str()
                } else if u < 0.85 {
                    FILLER.choose(&mut rng).expect("non-empty")
                } else {
                    CATEGORY_WORDS[cat].choose(&mut rng).expect("non-empty")
                }
            })
            .collect();
        let description = format!("{} {}.", CATEGORIES[cat], words.join(" "));

        let noise = normal_vec(&mut rng, dim, cfg.feature_noise);
        let mut v: Vec<f64> = (0..dim)
            .map(|k| style_centres[style][k] + category_centres[cat][k] + noise[k])
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);

        items.push(Item::new(
            id.clone(),
            CATEGORIES[cat],
            name,
            description,
            FeatureRef::Inline(v),
        ));
        style_of.insert(id.clone(), style);
        members[style].push(id);
    }

    let set_width = cfg.n_sets.to_string().len().max(3);
    let mut sets = Vec::with_capacity(cfg.n_sets);
    for j in 0..cfg.n_sets {
        let style = rng.random_range(0..cfg.n_styles);
        let pool = &members[style];
        let size = rng
            .random_range(cfg.min_set_size..=cfg.max_set_size)
            .min(pool.len());
        let chosen: Vec<String> = pool.choose_multiple(&mut rng, size).cloned().collect();
        sets.push(CompatibleSet {
            id: format!("s{j:0set_width$}"),
            item_ids: chosen,
            scene: Some(format!("style{style}")),
        });
    }

    let catalog = Catalog::from_parts(
        CATEGORIES.iter().map(|c| c.to_string()).collect(),
        dim,
        items,
        sets,
    )?;
    Ok(SyntheticCatalog { catalog, style_of })
}
