//! Synthetic shopping-query datasets.
//!
//! The generator reproduces the structural quirks of the real competition
//! data at desk scale:
//!
//! * the catalog is ordered by the split that first uses each product
//!   (train, then private test, then public test);
//! * almost every product appears in exactly one query;
//! * task-1 queries draw labels from a shifted class distribution;
//! * group sizes concentrate at 16 and 40, and 40-product groups get their
//!   own small label shift;
//! * book-like groups carry ISBN product ids (leading digit);
//! * each group draws from a small brand pool and exact matches favour the
//!   group's dominant brand;
//! * every labeled group contains at least one exact match, and per-group
//!   label mixtures vary around the base proportions.
//!
//! Upstream probabilities are `(1 - noise) * one_hot(label) + noise * d`
//! with `d ~ Dirichlet(1, 1, 1, 1)` drawn independently per model, so
//! `noise = 0` gives exact one-hot vectors.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::io::{write_catalog, write_examples, write_probs, DatasetPaths};
use super::{
    Catalog, EsciLabel, Example, ExampleSet, Locale, PairKey, ProbStore, ProbVector, Product,
    TaskFile, TaskSet, NUM_CLASSES,
};
use crate::config::KvConfig;
use crate::error::{Error, Result};

/// Split of a generated query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Private,
    Public,
}

impl Split {
    pub fn is_test(self) -> bool {
        self != Split::Train
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub queries: usize,
    pub train_fraction: f64,
    /// Share of queries in the private test block; the rest are public test.
    pub private_fraction: f64,
    /// Sampling weights for us, es, jp.
    pub locale_weights: [f64; 3],
    /// Probability mass of 16-product groups.
    pub count_p16: f64,
    /// Probability mass of 40-product groups.
    pub count_p40: f64,
    /// Remaining mass is uniform over `count_min..=count_max`.
    pub count_min: usize,
    pub count_max: usize,
    /// Share of queries that belong to the task-1 subset.
    pub t1_query_fraction: f64,
    /// Chance that a product of a task-1 query is listed in the task-1 file.
    pub t1_product_keep: f64,
    /// Label proportions (E, S, C, I) of queries outside the task-1 subset.
    pub label_props: [f64; NUM_CLASSES],
    /// Added to `label_props` for task-1 queries; sums to zero.
    pub t1_offset: [f64; NUM_CLASSES],
    /// Added to the label proportions of 40-product groups; sums to zero.
    pub large_group_offset: [f64; NUM_CLASSES],
    /// Dirichlet concentration of per-group label mixtures; 0 disables
    /// per-group variation.
    pub group_concentration: f64,
    /// Force at least one exact match per group.
    pub enforce_exact: bool,
    pub isbn_group_rate: f64,
    pub isbn_product_rate: f64,
    pub brand_pool_min: usize,
    pub brand_pool_max: usize,
    /// Chance that an exact match takes the group's dominant brand.
    pub exact_brand_affinity: f64,
    pub empty_brand_rate: f64,
    pub product_reuse_rate: f64,
    pub title_words_min: usize,
    pub title_words_max: usize,
    pub noise: f64,
    pub num_models: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            queries: 500,
            train_fraction: 0.6,
            private_fraction: 0.2,
            locale_weights: [0.6, 0.2, 0.2],
            count_p16: 0.55,
            count_p40: 0.3,
            count_min: 4,
            count_max: 50,
            t1_query_fraction: 0.5,
            t1_product_keep: 1.0,
            label_props: [0.65, 0.22, 0.03, 0.10],
            t1_offset: [-0.25, 0.03, 0.02, 0.20],
            large_group_offset: [-0.05, 0.0, 0.0, 0.05],
            group_concentration: 8.0,
            enforce_exact: true,
            isbn_group_rate: 0.08,
            isbn_product_rate: 0.8,
            brand_pool_min: 2,
            brand_pool_max: 6,
            exact_brand_affinity: 0.6,
            empty_brand_rate: 0.03,
            product_reuse_rate: 0.01,
            title_words_min: 2,
            title_words_max: 30,
            noise: 0.85,
            num_models: 3,
        }
    }
}

const KEYS: &[&str] = &[
    "queries",
    "train_fraction",
    "private_fraction",
    "locale_weights",
    "count_p16",
    "count_p40",
    "count_min",
    "count_max",
    "t1_query_fraction",
    "t1_product_keep",
    "label_props",
    "t1_offset",
    "large_group_offset",
    "group_concentration",
    "enforce_exact",
    "isbn_group_rate",
    "isbn_product_rate",
    "brand_pool_min",
    "brand_pool_max",
    "exact_brand_affinity",
    "empty_brand_rate",
    "product_reuse_rate",
    "title_words_min",
    "title_words_max",
    "noise",
    "num_models",
];

fn array<const N: usize>(cfg: &KvConfig, key: &str, slot: &mut [f64; N]) -> Result<()> {
    if let Some(v) = cfg.get_list::<f64>(key)? {
        *slot = v.try_into().map_err(|v: Vec<f64>| {
            Error::Config(format!("key `{key}` needs {N} values, got {}", v.len()))
        })?;
    }
    Ok(())
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

impl SynthConfig {
    /// Defaults overridden by whatever keys `cfg` sets. Keys that are not
    /// generator settings are ignored.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! scalar {
            ($($field:ident),*) => {
                $( if let Some(v) = cfg.get(stringify!($field))? { c.$field = v; } )*
            };
        }
        scalar!(
            queries,
            train_fraction,
            private_fraction,
            count_p16,
            count_p40,
            count_min,
            count_max,
            t1_query_fraction,
            t1_product_keep,
            group_concentration,
            enforce_exact,
            isbn_group_rate,
            isbn_product_rate,
            brand_pool_min,
            brand_pool_max,
            exact_brand_affinity,
            empty_brand_rate,
            product_reuse_rate,
            title_words_min,
            title_words_max,
            noise,
            num_models
        );
        array(cfg, "locale_weights", &mut c.locale_weights)?;
        array(cfg, "label_props", &mut c.label_props)?;
        array(cfg, "t1_offset", &mut c.t1_offset)?;
        array(cfg, "large_group_offset", &mut c.large_group_offset)?;
        Ok(c)
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("queries", self.queries);
        kv.set("train_fraction", self.train_fraction);
        kv.set("private_fraction", self.private_fraction);
        kv.set("locale_weights", list(&self.locale_weights));
        kv.set("count_p16", self.count_p16);
        kv.set("count_p40", self.count_p40);
        kv.set("count_min", self.count_min);
        kv.set("count_max", self.count_max);
        kv.set("t1_query_fraction", self.t1_query_fraction);
        kv.set("t1_product_keep", self.t1_product_keep);
        kv.set("label_props", list(&self.label_props));
        kv.set("t1_offset", list(&self.t1_offset));
        kv.set("large_group_offset", list(&self.large_group_offset));
        kv.set("group_concentration", self.group_concentration);
        kv.set("enforce_exact", self.enforce_exact);
        kv.set("isbn_group_rate", self.isbn_group_rate);
        kv.set("isbn_product_rate", self.isbn_product_rate);
        kv.set("brand_pool_min", self.brand_pool_min);
        kv.set("brand_pool_max", self.brand_pool_max);
        kv.set("exact_brand_affinity", self.exact_brand_affinity);
        kv.set("empty_brand_rate", self.empty_brand_rate);
        kv.set("product_reuse_rate", self.product_reuse_rate);
        kv.set("title_words_min", self.title_words_min);
        kv.set("title_words_max", self.title_words_max);
        kv.set("noise", self.noise);
        kv.set("num_models", self.num_models);
        kv
    }

    /// Label proportions used for a query before per-group variation.
    pub fn query_props(&self, in_t1: bool, count: usize) -> [f64; NUM_CLASSES] {
        let mut p = self.label_props;
        for (c, pc) in p.iter_mut().enumerate() {
            if in_t1 {
                *pc += self.t1_offset[c];
            }
            if count == 40 {
                *pc += self.large_group_offset[c];
            }
            *pc = pc.max(0.0);
        }
        let s: f64 = p.iter().sum();
        p.map(|x| x / s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")))
            }
        };
        if self.queries == 0 {
            return bad("queries must be positive".into());
        }
        for (name, x) in [
            ("train_fraction", self.train_fraction),
            ("private_fraction", self.private_fraction),
            ("count_p16", self.count_p16),
            ("count_p40", self.count_p40),
            ("t1_query_fraction", self.t1_query_fraction),
            ("t1_product_keep", self.t1_product_keep),
            ("isbn_group_rate", self.isbn_group_rate),
            ("isbn_product_rate", self.isbn_product_rate),
            ("exact_brand_affinity", self.exact_brand_affinity),
            ("empty_brand_rate", self.empty_brand_rate),
            ("product_reuse_rate", self.product_reuse_rate),
            ("noise", self.noise),
        ] {
            unit(name, x)?;
        }
        if self.train_fraction + self.private_fraction > 1.0 + 1e-12 {
            return bad("train_fraction + private_fraction exceeds 1".into());
        }
        if self.count_p16 + self.count_p40 > 1.0 + 1e-12 {
            return bad("count_p16 + count_p40 exceeds 1".into());
        }
        if self.count_min == 0 || self.count_min > self.count_max {
            return bad(format!(
                "need 1 <= count_min <= count_max, got {}..{}",
                self.count_min, self.count_max
            ));
        }
        if self.locale_weights.iter().any(|w| *w < 0.0)
            || self.locale_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("locale_weights must be nonnegative with a positive sum".into());
        }
        if self.label_props.iter().any(|p| *p < 0.0)
            || (self.label_props.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!(
                "label_props must be a distribution, got {:?}",
                self.label_props
            ));
        }
        for (name, off) in [
            ("t1_offset", &self.t1_offset),
            ("large_group_offset", &self.large_group_offset),
        ] {
            if off.iter().sum::<f64>().abs() > 1e-9 {
                return bad(format!("{name} must sum to zero, got {off:?}"));
            }
        }
        for in_t1 in [false, true] {
            for large in [false, true] {
                let mut p = self.label_props;
                for (c, pc) in p.iter_mut().enumerate() {
                    if in_t1 {
                        *pc += self.t1_offset[c];
                    }
                    if large {
                        *pc += self.large_group_offset[c];
                    }
                }
                if p.iter().any(|x| *x < -1e-9) {
                    return bad(format!("label offsets drive proportions negative: {p:?}"));
                }
                if self.enforce_exact && p[0] <= 0.0 {
                    return bad(
                        "exact proportion is 0 but every group must contain an exact match".into(),
                    );
                }
            }
        }
        if self.group_concentration < 0.0 || !self.group_concentration.is_finite() {
            return bad("group_concentration must be finite and nonnegative".into());
        }
        if self.brand_pool_min == 0 || self.brand_pool_min > self.brand_pool_max {
            return bad("need 1 <= brand_pool_min <= brand_pool_max".into());
        }
        if self.title_words_min == 0 || self.title_words_min > self.title_words_max {
            return bad("need 1 <= title_words_min <= title_words_max".into());
        }
        if self.num_models == 0 {
            return bad("num_models must be positive".into());
        }
        Ok(())
    }
}

/// Output of [`synth_generate`]. Every pair carries its label; use
/// [`SynthDataset::train_examples`] and friends to get the split views.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub catalog: Catalog,
    /// Task-1 pairs (subset of `t2t3`), labeled.
    pub t1: ExampleSet,
    /// All pairs, labeled.
    pub t2t3: ExampleSet,
    pub probs: ProbStore,
    pub splits: BTreeMap<String, Split>,
    /// Queries sampled into the task-1 subset.
    pub t1_queries: BTreeSet<String>,
}

impl SynthDataset {
    pub fn split_of(&self, query_id: &str) -> Option<Split> {
        self.splits.get(query_id).copied()
    }

    fn part(&self, set: &ExampleSet, test: bool) -> ExampleSet {
        set.filter(|e| self.split_of(&e.query_id).map(Split::is_test) == Some(test))
    }

    /// Labeled train rows with task membership merged.
    pub fn train_examples(&self) -> Result<ExampleSet> {
        self.part(&self.t1, false)
            .merge(&self.part(&self.t2t3, false))
    }

    /// Test rows with labels removed.
    pub fn test_examples(&self) -> Result<ExampleSet> {
        Ok(self.test_truth()?.without_labels())
    }

    /// Test rows with their labels.
    pub fn test_truth(&self) -> Result<ExampleSet> {
        self.part(&self.t1, true)
            .merge(&self.part(&self.t2t3, true))
    }

    /// Writes the standard dataset layout (see [`DatasetPaths::in_dir`]).
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<DatasetPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = DatasetPaths::in_dir(dir);
        write_catalog(&paths.catalog, &self.catalog)?;
        write_examples(&paths.t1_train, &self.part(&self.t1, false))?;
        write_examples(&paths.t2t3_train, &self.part(&self.t2t3, false))?;
        if let Some(p) = &paths.t1_test {
            write_examples(p, &self.part(&self.t1, true).without_labels())?;
        }
        if let Some(p) = &paths.t2t3_test {
            write_examples(p, &self.part(&self.t2t3, true).without_labels())?;
        }
        if let Some(p) = &paths.truth {
            write_examples(p, &self.part(&self.t2t3, true))?;
        }
        write_probs(&paths.probs, &self.probs)?;
        Ok(paths)
    }
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ter", "so", "van", "pre", "dal", "ni", "qua", "ro", "zen", "bel", "tu",
    "fo", "gri", "mar", "ex", "lin", "po", "sha", "dor", "vi", "kel",
];
const COLORS: &[&str] = &[
    "red", "blue", "black", "white", "green", "grey", "pink", "navy", "beige",
];

fn word(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect()
}

fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
}

fn weighted_index(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // Floating-point leftovers land on the last positive weight.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn dirichlet(rng: &mut impl Rng, alpha: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let mut g = [0.0; NUM_CLASSES];
    for (slot, &a) in g.iter_mut().zip(alpha) {
        if a > 0.0 {
            *slot = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
        }
    }
    let s: f64 = g.iter().sum();
    if s > 0.0 {
        g.map(|x| x / s)
    } else {
        // All draws underflowed; fall back to the mean.
        let t: f64 = alpha.iter().sum();
        alpha.map(|a| a / t)
    }
}

fn isbn10(rng: &mut impl Rng) -> String {
    let digits: Vec<u32> = (0..9).map(|_| rng.random_range(0..10)).collect();
    let sum: u32 = digits
        .iter()
        .enumerate()
        .map(|(i, d)| (10 - i as u32) * d)
        .sum();
    let check = (11 - sum % 11) % 11;
    let mut s: String = digits
        .iter()
        .map(|d| char::from_digit(*d, 10).unwrap())
        .collect();
    s.push(if check == 10 {
        'X'
    } else {
        char::from_digit(check, 10).unwrap()
    });
    s
}

fn asin(rng: &mut impl Rng) -> String {
    const ALNUM: &[u8] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";
    let tail: String = (0..8)
        .map(|_| ALNUM[rng.random_range(0..ALNUM.len())] as char)
        .collect();
    format!("B0{tail}")
}

fn group_size(cfg: &SynthConfig, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    if u < cfg.count_p16 {
        16
    } else if u < cfg.count_p16 + cfg.count_p40 {
        40
    } else {
        rng.random_range(cfg.count_min..=cfg.count_max)
    }
}

fn noisy_probs(rng: &mut impl Rng, label: EsciLabel, noise: f64) -> ProbVector {
    if noise == 0.0 {
        return ProbVector::one_hot(label);
    }
    let d = dirichlet(rng, &[1.0; NUM_CLASSES]);
    let mut p = d.map(|x| noise * x);
    p[label.index()] += 1.0 - noise;
    let s: f64 = p.iter().sum();
    ProbVector::new(p.map(|x| x / s)).expect("convex combination of distributions")
}

/// Generates a dataset. Deterministic in `(config, seed)`.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.queries;
    let n_train = ((n as f64) * config.train_fraction).round() as usize;
    let n_private = (((n as f64) * config.private_fraction).round() as usize).min(n - n_train);

    let mut products: Vec<Product> = Vec::new();
    let mut used_ids: HashSet<String> = HashSet::new();
    let mut by_locale: [Vec<usize>; 3] = Default::default();
    let mut t1_rows = Vec::new();
    let mut all_rows = Vec::new();
    let mut probs = ProbStore::new(config.num_models);
    let mut splits = BTreeMap::new();
    let mut t1_queries = BTreeSet::new();

    for qi in 0..n {
        let split = if qi < n_train {
            Split::Train
        } else if qi < n_train + n_private {
            Split::Private
        } else {
            Split::Public
        };
        let query_id = format!("Q{qi:06}");
        let locale = Locale::ALL[weighted_index(&mut rng, &config.locale_weights)];
        let query_text = words(&mut rng, 1, 4);
        let in_t1 = rng.random_bool(config.t1_query_fraction);
        let size = group_size(config, &mut rng);

        let base = config.query_props(in_t1, size);
        let mix = if config.group_concentration > 0.0 {
            dirichlet(&mut rng, &base.map(|p| p * config.group_concentration))
        } else {
            base
        };
        let mut labels: Vec<EsciLabel> = (0..size)
            .map(|_| EsciLabel::ALL[weighted_index(&mut rng, &mix)])
            .collect();
        if config.enforce_exact && !labels.contains(&EsciLabel::Exact) {
            let i = rng.random_range(0..size);
            labels[i] = EsciLabel::Exact;
        }

        let isbn_group = rng.random_bool(config.isbn_group_rate);
        let pool_size = rng
            .random_range(config.brand_pool_min..=config.brand_pool_max)
            .min(size);
        let pool: Vec<String> = (0..pool_size)
            .map(|_| format!("Brand{:04}", rng.random_range(0..5000)))
            .collect();

        let mut in_group: HashSet<usize> = HashSet::new();
        let mut kept_t1 = Vec::with_capacity(size);
        for &label in &labels {
            let loc_slot = locale as usize;
            let mut reused = None;
            if rng.random_bool(config.product_reuse_rate) && !by_locale[loc_slot].is_empty() {
                let cand = by_locale[loc_slot][rng.random_range(0..by_locale[loc_slot].len())];
                if !in_group.contains(&cand) {
                    reused = Some(cand);
                }
            }
            let pidx = match reused {
                Some(i) => i,
                None => {
                    let id = loop {
                        let id = if isbn_group && rng.random_bool(config.isbn_product_rate) {
                            isbn10(&mut rng)
                        } else {
                            asin(&mut rng)
                        };
                        if used_ids.insert(id.clone()) {
                            break id;
                        }
                    };
                    let brand = if rng.random_bool(config.empty_brand_rate) {
                        String::new()
                    } else if label == EsciLabel::Exact
                        && rng.random_bool(config.exact_brand_affinity)
                    {
                        pool[0].clone()
                    } else {
                        pool[rng.random_range(0..pool.len())].clone()
                    };
                    let color = if rng.random_bool(0.3) {
                        String::new()
                    } else {
                        COLORS[rng.random_range(0..COLORS.len())].to_string()
                    };
                    products.push(Product {
                        product_id: id,
                        title: words(&mut rng, config.title_words_min, config.title_words_max),
                        brand,
                        color,
                        locale,
                        catalog_index: products.len(),
                    });
                    by_locale[loc_slot].push(products.len() - 1);
                    products.len() - 1
                }
            };
            in_group.insert(pidx);
            let product_id = products[pidx].product_id.clone();
            let key = PairKey::new(query_id.clone(), product_id.clone());
            for m in 0..config.num_models {
                probs.insert(key.clone(), m, noisy_probs(&mut rng, label, config.noise));
            }
            let example = Example {
                query_id: query_id.clone(),
                query_text: query_text.clone(),
                product_id,
                locale,
                label: Some(label),
                tasks: TaskSet::single(TaskFile::T2T3),
            };
            kept_t1.push(in_t1 && rng.random_bool(config.t1_product_keep));
            all_rows.push(example);
        }
        if in_t1 {
            if !kept_t1.iter().any(|k| *k) {
                kept_t1[0] = true;
            }
            let start = all_rows.len() - size;
            for (offset, keep) in kept_t1.iter().enumerate() {
                if *keep {
                    let mut e = all_rows[start + offset].clone();
                    e.tasks = TaskSet::single(TaskFile::T1);
                    t1_rows.push(e);
                }
            }
            t1_queries.insert(query_id.clone());
        }
        splits.insert(query_id, split);
    }

    Ok(SynthDataset {
        catalog: Catalog::from_products(products)?,
        t1: ExampleSet::from_examples(t1_rows)?,
        t2t3: ExampleSet::from_examples(all_rows)?,
        probs,
        splits,
        t1_queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(queries: usize) -> SynthConfig {
        SynthConfig {
            queries,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn forced_count_gives_exact_group_sizes() {
        let cfg = SynthConfig {
            count_p16: 1.0,
            count_p40: 0.0,
            ..small(30)
        };
        let ds = synth_generate(&cfg, 4).unwrap();
        for rows in ds.t2t3.group_rows() {
            assert_eq!(rows.len(), 16);
        }
    }

    #[test]
    fn noiseless_probs_are_one_hot() {
        let cfg = SynthConfig {
            noise: 0.0,
            ..small(20)
        };
        let ds = synth_generate(&cfg, 1).unwrap();
        for e in ds.t2t3.examples() {
            for m in 0..cfg.num_models {
                let p = ds.probs.get(&e.key(), m).unwrap();
                assert_eq!(p, ProbVector::one_hot(e.label.unwrap()));
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_generate(&small(25), 9).unwrap();
        let b = synth_generate(&small(25), 9).unwrap();
        assert_eq!(a.t2t3.examples(), b.t2t3.examples());
        assert_eq!(a.catalog.products(), b.catalog.products());
        assert_eq!(a.probs.sorted_entries(), b.probs.sorted_entries());
    }

    #[test]
    fn infeasible_config_rejected() {
        let cfg = SynthConfig {
            label_props: [0.0, 0.5, 0.2, 0.3],
            t1_offset: [0.0; 4],
            large_group_offset: [0.0; 4],
            ..small(10)
        };
        assert!(matches!(synth_generate(&cfg, 0), Err(Error::Config(_))));
        let cfg = SynthConfig {
            t1_offset: [-0.7, 0.7, 0.0, 0.0],
            ..small(10)
        };
        assert!(synth_generate(&cfg, 0).is_err());
    }

    #[test]
    fn exact_share_matches_configured_share() {
        let cfg = SynthConfig::default();
        let ds = synth_generate(&cfg, 2024).unwrap();
        // Configured share: per-query proportions weighted by group size.
        let mut expected = 0.0;
        let mut total = 0usize;
        let mut exact = 0usize;
        for rows in ds.t2t3.group_rows() {
            let q = &ds.t2t3.examples()[rows[0]].query_id;
            let props = cfg.query_props(ds.t1_queries.contains(q), rows.len());
            expected += props[0] * rows.len() as f64;
            total += rows.len();
            exact += rows
                .iter()
                .filter(|&&i| ds.t2t3.examples()[i].label == Some(EsciLabel::Exact))
                .count();
        }
        let share = exact as f64 / total as f64;
        let expected = expected / total as f64;
        assert!(
            (share - expected).abs() <= 0.02,
            "share {share} vs {expected}"
        );
    }

    #[test]
    fn kv_round_trip() {
        let cfg = SynthConfig {
            noise: 0.25,
            label_props: [0.5, 0.2, 0.1, 0.2],
            ..SynthConfig::default()
        };
        assert_eq!(SynthConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(cfg.to_kv().unknown_keys(SynthConfig::keys()).is_empty());
    }

    #[test]
    fn isbn_generator_has_valid_checksum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s = isbn10(&mut rng);
            let sum: u32 = s
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    (10 - i as u32)
                        * if c == 'X' {
                            10
                        } else {
                            c.to_digit(10).unwrap()
                        }
                })
                .sum();
            assert_eq!(sum % 11, 0, "{s}");
        }
    }
}
