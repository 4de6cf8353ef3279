//! Shopping over a real product catalog.
//!
//! Catalog files are JSON arrays of records:
//!
//! ```json
//! [{"category": "shoes", "title": "...", "description": "...", "price": 19.99,
//!   "attributes": ["non slip", "mesh"]}]
//! ```
//!
//! `description` may also be a list of bullet strings, and `options` a list
//! of `[name, value]` pairs shown after it (`Color: black white`). `attributes` feed the
//! per-category goal phrase list; a separate goals file
//! (`{"shoes": ["non slip", ...]}`) can replace it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assistants::AssistantPolicy;
use crate::error::{CoreError, Result};
use crate::harness::{run_episode, Environment, EpisodeConfig, Transcript};
use crate::reward::{ChoiceModel, Domain, FeatureKind, ItemOption, OptionSet, SimRng};
use crate::seed;

pub const DESCRIPTION_LIMIT: usize = 800;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub category: String,
    pub title: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<(String, String)>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDescription {
    Text(String),
    Bullets(Vec<String>),
}

#[derive(Deserialize)]
struct RawProduct {
    category: Option<String>,
    title: Option<String>,
    description: Option<RawDescription>,
    #[serde(default)]
    price: Option<f64>,
    #[serde(default)]
    attributes: Vec<String>,
    #[serde(default)]
    options: Vec<(String, String)>,
}

fn truncate_chars(s: &str, limit: usize) -> String {
    match s.char_indices().nth(limit) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

impl Product {
    pub fn new(category: impl Into<String>, title: impl Into<String>, description: &str) -> Self {
        Self {
            category: category.into(),
            title: title.into(),
            description: truncate_chars(description, DESCRIPTION_LIMIT),
            price: None,
            attributes: Vec::new(),
            options: Vec::new(),
        }
    }

    /// The text block shown under "Product i:".
    pub fn block(&self) -> String {
        let mut s = if self.description.starts_with("- ") {
            format!("Title: {}\nDescription:\n{}", self.title, self.description)
        } else {
            format!("Title: {}\nDescription: {}", self.title, self.description)
        };
        for (k, v) in &self.options {
            s.push_str(&format!("\n{k}: {v}"));
        }
        s
    }
}

/// Products indexed by category. Immutable once built.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    products: Vec<Product>,
    by_category: BTreeMap<String, Vec<usize>>,
    phrases: BTreeMap<String, Vec<String>>,
}

impl Catalog {
    pub fn new(products: Vec<Product>) -> Result<Self> {
        if products.is_empty() {
            return Err(CoreError::Catalog("catalog has no products".into()));
        }
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut phrases: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (i, p) in products.iter().enumerate() {
            by_category.entry(p.category.clone()).or_default().push(i);
            phrases
                .entry(p.category.clone())
                .or_default()
                .extend(p.attributes.iter().cloned());
        }
        let phrases = phrases
            .into_iter()
            .map(|(c, s)| (c, s.into_iter().collect()))
            .collect();
        Ok(Self {
            products,
            by_category,
            phrases,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(CoreError::Catalog("empty catalog file".into()));
        }
        let raw: Vec<RawProduct> = serde_json::from_str(text)
            .map_err(|e| CoreError::Catalog(format!("malformed catalog: {e}")))?;
        let products = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let missing = |f: &str| CoreError::Catalog(format!("record {i} is missing `{f}`"));
                let description = match r.description.ok_or_else(|| missing("description"))? {
                    RawDescription::Text(t) => t,
                    RawDescription::Bullets(b) => b
                        .iter()
                        .map(|x| format!("- {x}"))
                        .collect::<Vec<_>>()
                        .join("\n"),
                };
                let mut p = Product::new(
                    r.category.ok_or_else(|| missing("category"))?,
                    r.title.ok_or_else(|| missing("title"))?,
                    &description,
                );
                p.price = r.price;
                p.attributes = r.attributes;
                p.options = r.options;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(products)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Replaces the goal phrase lists with `{category: [phrases]}`.
    pub fn with_goals_json(mut self, text: &str) -> Result<Self> {
        let goals: BTreeMap<String, Vec<String>> = serde_json::from_str(text)
            .map_err(|e| CoreError::Catalog(format!("malformed goals file: {e}")))?;
        self.phrases = goals;
        Ok(self)
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn product(&self, id: usize) -> Option<&Product> {
        self.products.get(id)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.by_category.keys().map(String::as_str)
    }

    pub fn category_products(&self, category: &str) -> &[usize] {
        self.by_category.get(category).map_or(&[], Vec::as_slice)
    }

    pub fn goal_phrases(&self, category: &str) -> &[String] {
        self.phrases.get(category).map_or(&[], Vec::as_slice)
    }

    /// The `n` largest categories; equal counts go alphabetically.
    pub fn top_categories(&self, n: usize) -> Vec<String> {
        let mut cats: Vec<(&String, usize)> =
            self.by_category.iter().map(|(c, v)| (c, v.len())).collect();
        cats.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        cats.into_iter().take(n).map(|(c, _)| c.clone()).collect()
    }

    /// A catalog holding only the given categories.
    pub fn restrict(&self, categories: &[String]) -> Result<Self> {
        let keep: BTreeSet<&String> = categories.iter().collect();
        let products = self
            .products
            .iter()
            .filter(|p| keep.contains(&p.category))
            .cloned()
            .collect();
        let mut c = Self::new(products)?;
        c.phrases = self
            .phrases
            .iter()
            .filter(|(k, _)| keep.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShoppingUser {
    pub category: String,
    pub goals: Vec<String>,
    pub seed: u64,
}

impl ShoppingUser {
    pub fn new(category: impl Into<String>, goals: Vec<String>, seed: u64) -> Result<Self> {
        if goals.is_empty() {
            return Err(CoreError::InvalidConfig(
                "a shopping user needs at least one goal".into(),
            ));
        }
        Ok(Self {
            category: category.into(),
            goals,
            seed,
        })
    }

    /// One to three distinct goals drawn uniformly from the category's phrases.
    pub fn sample(catalog: &Catalog, category: &str, seed: u64) -> Result<Self> {
        let phrases = catalog.goal_phrases(category);
        if phrases.is_empty() {
            return Err(CoreError::Catalog(format!(
                "no goal phrases for category `{category}`"
            )));
        }
        let mut rng = seed::rng(seed::derive(&[seed, seed::Purpose::Population as u64]));
        let n = rng.random_range(1..=3usize).min(phrases.len());
        let mut idx = sample(&mut rng, phrases.len(), n).into_vec();
        idx.sort_unstable();
        Self::new(
            category,
            idx.into_iter().map(|i| phrases[i].clone()).collect(),
            seed,
        )
    }
}

/// Fraction of goal phrases found, case-insensitively, in the title or
/// description.
pub fn shopping_reward(user: &ShoppingUser, product: &Product) -> f64 {
    if user.goals.is_empty() {
        return 0.0;
    }
    let hay = format!("{}\n{}", product.title, product.description).to_lowercase();
    let hits = user
        .goals
        .iter()
        .filter(|g| hay.contains(&g.to_lowercase()))
        .count();
    hits as f64 / user.goals.len() as f64
}

/// A shopping user bound to the catalog its choices are scored against.
#[derive(Clone, Debug)]
pub struct ShoppingModel {
    pub user: ShoppingUser,
    pub catalog: Arc<Catalog>,
}

impl ChoiceModel for ShoppingModel {
    fn utilities(&self, set: &OptionSet) -> Result<Vec<f64>> {
        set.options()
            .iter()
            .map(|o| {
                let p = o
                    .item_id
                    .and_then(|id| self.catalog.product(id as usize))
                    .ok_or_else(|| {
                        CoreError::InvalidOption("option is not a catalog product".into())
                    })?;
                Ok(shopping_reward(&self.user, p))
            })
            .collect()
    }

    fn rng_seed(&self) -> u64 {
        self.user.seed
    }
}

/// Option sets drawn from one category, without repeats inside a set.
#[derive(Clone, Debug)]
pub struct CategoryEnv {
    catalog: Arc<Catalog>,
    category: String,
}

impl CategoryEnv {
    pub fn new(catalog: Arc<Catalog>, category: impl Into<String>) -> Self {
        Self {
            catalog,
            category: category.into(),
        }
    }
}

impl Environment for CategoryEnv {
    fn domain(&self) -> Domain {
        Domain::Product
    }
    fn kinds(&self) -> Vec<FeatureKind> {
        Vec::new()
    }
    fn dim(&self) -> usize {
        0
    }
    fn price_index(&self) -> Option<usize> {
        None
    }
    fn sample_set(&self, k: usize, rng: &mut SimRng) -> Result<OptionSet> {
        let ids = self.catalog.category_products(&self.category);
        if ids.len() < k {
            return Err(CoreError::Catalog(format!(
                "category `{}` has {} products, fewer than {k}",
                self.category,
                ids.len()
            )));
        }
        let options = sample(rng, ids.len(), k)
            .into_iter()
            .enumerate()
            .map(|(i, j)| {
                let id = ids[j];
                ItemOption {
                    index: i + 1,
                    features: Vec::new(),
                    item_id: Some(id as u64),
                    text: Some(self.catalog.products[id].block()),
                }
            })
            .collect();
        OptionSet::new(options)
    }
}

/// Runs one shopping episode for `user` under `cfg` (domain must be products).
pub fn shopping_episode(
    user: &ShoppingUser,
    catalog: Arc<Catalog>,
    cfg: &EpisodeConfig,
    policy: Box<dyn AssistantPolicy>,
) -> Result<Transcript> {
    if cfg.domain != Domain::Product {
        return Err(CoreError::InvalidConfig(
            "shopping episodes use the product domain".into(),
        ));
    }
    if catalog.category_products(&user.category).len() < cfg.k {
        return Err(CoreError::Catalog(format!(
            "category `{}` is too small",
            user.category
        )));
    }
    let env: Arc<dyn Environment> =
        Arc::new(CategoryEnv::new(catalog.clone(), user.category.clone()));
    let model: Arc<dyn ChoiceModel> = Arc::new(ShoppingModel {
        user: user.clone(),
        catalog,
    });
    let mut t = run_episode(cfg, env, policy, model, 0)?;
    t.user_id = format!("{}#{}", user.category, user.seed);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assistants::{OraclePolicy, RandomPolicy};

    fn fixture() -> Catalog {
        let mut products = Vec::new();
        for (c, n) in [("a", 10), ("b", 9), ("c", 8), ("d", 7), ("e", 6)] {
            for i in 0..n {
                let mut p = Product::new(
                    c,
                    format!("{c} item {i}"),
                    if i % 2 == 0 {
                        "Mesh upper"
                    } else {
                        "Non Slip sole"
                    },
                );
                p.attributes = vec!["mesh".into(), "non slip".into(), "gluten free".into()];
                products.push(p);
            }
        }
        Catalog::new(products).unwrap()
    }

    #[test]
    fn top_categories_by_count() {
        assert_eq!(fixture().top_categories(3), vec!["a", "b", "c"]);
    }

    #[test]
    fn description_truncated() {
        let long = "x".repeat(1200);
        let json = format!(r#"[{{"category":"a","title":"t","description":"{long}"}}]"#);
        let c = Catalog::from_json_str(&json).unwrap();
        assert_eq!(c.products()[0].description.chars().count(), 800);
        let multi = "é".repeat(900);
        assert_eq!(
            Product::new("a", "t", &multi).description.chars().count(),
            800
        );
    }

    #[test]
    fn malformed_catalogs() {
        assert!(Catalog::from_json_str("").is_err());
        assert!(Catalog::from_json_str("[]").is_err());
        assert!(Catalog::from_json_str("{").is_err());
        assert!(Catalog::from_json_str(r#"[{"title":"t","description":"d"}]"#).is_err());
        let bullets =
            Catalog::from_json_str(r#"[{"category":"a","title":"t","description":["x","y"]}]"#)
                .unwrap();
        assert_eq!(bullets.products()[0].description, "- x\n- y");
        assert_eq!(
            bullets.products()[0].block(),
            "Title: t\nDescription:\n- x\n- y"
        );
    }

    #[test]
    fn reward_examples() {
        let p = Product::new("food", "Bread", "A Gluten Free loaf");
        let u = ShoppingUser::new("food", vec!["gluten free".into()], 0).unwrap();
        assert_eq!(shopping_reward(&u, &p), 1.0);
        let shoe = Product::new("shoes", "Runner", "breathable mesh");
        let u = ShoppingUser::new("shoes", vec!["non slip".into(), "mesh".into()], 0).unwrap();
        assert_eq!(shopping_reward(&u, &shoe), 0.5);
        let u = ShoppingUser::new("shoes", vec!["leather".into()], 0).unwrap();
        assert_eq!(shopping_reward(&u, &shoe), 0.0);
        assert!(ShoppingUser::new("x", vec![], 0).is_err());
    }

    #[test]
    fn sampled_goals() {
        let c = fixture();
        for s in 0..50 {
            let u = ShoppingUser::sample(&c, "a", s).unwrap();
            assert!((1..=3).contains(&u.goals.len()));
            assert!(u.goals.iter().all(|g| c.goal_phrases("a").contains(g)));
        }
    }

    #[test]
    fn product_blocks_and_oracle() {
        let c = Arc::new(fixture());
        let mut cfg = EpisodeConfig::new(Domain::Product);
        cfg.heldout_sets = 20;
        let user = ShoppingUser::new("a", vec!["mesh".into()], 4).unwrap();
        let model: Arc<dyn ChoiceModel> = Arc::new(ShoppingModel {
            user: user.clone(),
            catalog: c.clone(),
        });
        let t =
            shopping_episode(&user, c.clone(), &cfg, Box::new(OraclePolicy::new(model))).unwrap();
        assert!(t.per_round_eval.iter().all(|&a| a == 1.0));
        t.validate().unwrap();
        let msgs = t.messages().unwrap();
        assert!(msgs[0].content.contains("Product 1:\nTitle: a item "));
        assert!(msgs[0].content.contains("\nDescription: "));
        assert!(msgs[1].content.starts_with("The best option is Product "));

        let small = ShoppingUser::new("e", vec!["mesh".into()], 0).unwrap();
        cfg.k = 7;
        assert!(shopping_episode(&small, c, &cfg, Box::new(RandomPolicy)).is_err());
    }
}
