//! Query-group features for the second stage.
//!
//! Column order of an assembled matrix (families that are switched off are
//! left out, the rest keep their relative order):
//!
//! | family          | columns                                                     |
//! |-----------------|-------------------------------------------------------------|
//! | `leakage`       | `t1_membership_ratio`                                       |
//! | `product_count` | `query_product_count`                                       |
//! | `isbn`          | `is_isbn`, `group_has_isbn`                                 |
//! | `brand`         | `brand_unique_count`, `is_most_frequent_brand`              |
//! | probabilities   | per model `m`: `m{m}_p_e`, `m{m}_p_s`, `m{m}_p_c`, `m{m}_p_i` |
//! | `group_stats`   | per model `m`, per class `x` in e,s,c,i: `m{m}_{x}_min`, `m{m}_{x}_median`, `m{m}_{x}_max` |
//!
//! Probability columns are always present. Every value except the raw
//! probabilities and the two per-product flags is constant within a query
//! group.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::{ReaderBuilder, WriterBuilder};

use crate::data::{Catalog, EsciLabel, ExampleSet, PairKey, ProbStore, QueryGroup, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureFamily {
    Leakage,
    ProductCount,
    Isbn,
    Brand,
    GroupStats,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 5] = [
        FeatureFamily::Leakage,
        FeatureFamily::ProductCount,
        FeatureFamily::Isbn,
        FeatureFamily::Brand,
        FeatureFamily::GroupStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureFamily::Leakage => "leakage",
            FeatureFamily::ProductCount => "product_count",
            FeatureFamily::Isbn => "isbn",
            FeatureFamily::Brand => "brand",
            FeatureFamily::GroupStats => "group_stats",
        }
    }
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|f| f.name()).collect();
                format!("unknown feature family `{s}` (known: {})", known.join(", "))
            })
    }
}

/// Set of enabled feature families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSet([bool; 5]);

impl Default for FeatureSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FeatureSet {
    pub fn all() -> Self {
        FeatureSet([true; 5])
    }

    pub fn none() -> Self {
        FeatureSet([false; 5])
    }

    pub fn contains(self, f: FeatureFamily) -> bool {
        self.0[f as usize]
    }

    pub fn without(mut self, f: FeatureFamily) -> Self {
        self.0[f as usize] = false;
        self
    }

    pub fn with(mut self, f: FeatureFamily) -> Self {
        self.0[f as usize] = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub families: FeatureSet,
    /// Upstream models whose probabilities (and group stats) are included.
    pub models: Vec<usize>,
    pub exec: Exec,
}

impl FeatureConfig {
    pub fn for_models(models: Vec<usize>) -> Self {
        Self {
            families: FeatureSet::all(),
            models,
            exec: Exec::default(),
        }
    }
}

const CLASS_SUFFIX: [&str; NUM_CLASSES] = ["e", "s", "c", "i"];

/// Column names in canonical order.
pub fn feature_names(config: &FeatureConfig) -> Vec<String> {
    let mut names = Vec::new();
    let fam = config.families;
    if fam.contains(FeatureFamily::Leakage) {
        names.push("t1_membership_ratio".to_string());
    }
    if fam.contains(FeatureFamily::ProductCount) {
        names.push("query_product_count".to_string());
    }
    if fam.contains(FeatureFamily::Isbn) {
        names.push("is_isbn".to_string());
        names.push("group_has_isbn".to_string());
    }
    if fam.contains(FeatureFamily::Brand) {
        names.push("brand_unique_count".to_string());
        names.push("is_most_frequent_brand".to_string());
    }
    for m in &config.models {
        for c in CLASS_SUFFIX {
            names.push(format!("m{m}_p_{c}"));
        }
    }
    if fam.contains(FeatureFamily::GroupStats) {
        for m in &config.models {
            for c in CLASS_SUFFIX {
                for stat in ["min", "median", "max"] {
                    names.push(format!("m{m}_{c}_{stat}"));
                }
            }
        }
    }
    names
}

/// Value kind of a column, as recorded in the schema sidecar.
pub fn column_kind(name: &str) -> &'static str {
    match name {
        "query_product_count" | "brand_unique_count" => "int",
        "is_isbn" | "group_has_isbn" | "is_most_frequent_brand" => "flag",
        _ => "real",
    }
}

/// Share of the group's products that appear in the task-1 product list.
pub fn t1_membership_ratio(group: &QueryGroup, t1_products: &HashSet<String>) -> f64 {
    if group.is_empty() {
        return 0.0;
    }
    let hits = group
        .members
        .iter()
        .filter(|m| t1_products.contains(&m.product_id))
        .count();
    hits as f64 / group.len() as f64
}

pub fn query_product_count(group: &QueryGroup) -> usize {
    group.len()
}

/// A product id is taken to be an ISBN when it starts with a decimal digit.
pub fn is_isbn(product_id: &str) -> Result<bool> {
    product_id
        .chars()
        .next()
        .map(|c| c.is_ascii_digit())
        .ok_or_else(|| Error::Validation("empty product_id".into()))
}

/// Per member: `(is_isbn, group_has_isbn)`.
pub fn isbn_flags(group: &QueryGroup) -> Result<Vec<(bool, bool)>> {
    let flags: Vec<bool> = group
        .members
        .iter()
        .map(|m| is_isbn(&m.product_id))
        .collect::<Result<_>>()?;
    let any = flags.iter().any(|f| *f);
    Ok(flags.into_iter().map(|f| (f, any)).collect())
}

/// Per member: `(brand_unique_count, is_most_frequent_brand)`.
///
/// The empty brand counts as a brand of its own. Every brand tied for the
/// highest frequency is flagged.
pub fn brand_features(group: &QueryGroup, catalog: &Catalog) -> Result<Vec<(usize, bool)>> {
    let brands: Vec<&str> = group
        .members
        .iter()
        .map(|m| catalog.require(&m.product_id).map(|p| p.brand.as_str()))
        .collect::<Result<_>>()?;
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for b in &brands {
        *freq.entry(b).or_default() += 1;
    }
    let top = freq.values().copied().max().unwrap_or(0);
    let unique = freq.len();
    Ok(brands.iter().map(|b| (unique, freq[b] == top)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

fn order_stats(mut xs: Vec<f64>) -> ClassStats {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let median = if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    };
    ClassStats {
        min: xs[0],
        median,
        max: xs[n - 1],
    }
}

/// Min, median and max of each class probability over the group, for one
/// upstream model. Even-sized groups take the midpoint of the central pair.
pub fn group_prob_stats(group: &QueryGroup, model: usize) -> Result<[ClassStats; NUM_CLASSES]> {
    if group.is_empty() {
        return Err(Error::Validation(format!(
            "query `{}` has no members",
            group.query_id
        )));
    }
    let mut per_class: [Vec<f64>; NUM_CLASSES] = Default::default();
    for (i, m) in group.members.iter().enumerate() {
        let p = group.prob(i, model).ok_or_else(|| {
            Error::MissingProbabilities(vec![format!(
                "{} model {model}",
                PairKey::new(group.query_id.clone(), m.product_id.clone())
            )])
        })?;
        for (c, xs) in per_class.iter_mut().enumerate() {
            xs.push(p.as_array()[c]);
        }
    }
    Ok(per_class.map(order_stats))
}

/// Dense row-major feature matrix with named columns and one pair key per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    keys: Vec<PairKey>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, keys: Vec<PairKey>, values: Vec<f64>) -> Result<Self> {
        if values.len() != names.len() * keys.len() {
            return Err(Error::Validation(format!(
                "matrix of {} rows x {} columns needs {} values, got {}",
                keys.len(),
                names.len(),
                names.len() * keys.len(),
                values.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::DuplicateKey(n.clone()));
            }
        }
        Ok(Self {
            names,
            keys,
            values,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn keys(&self) -> &[PairKey] {
        &self.keys
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some((0..self.n_rows()).map(|i| self.get(i, j)).collect())
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let w = self.n_cols();
        let mut values = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            names: self.names.clone(),
            keys: rows.iter().map(|&r| self.keys[r].clone()).collect(),
            values,
        }
    }

    /// Reorders (or subsets) columns to `names`.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n.as_ref())
                    .ok_or_else(|| Error::MissingKey(n.as_ref().to_string()))
            })
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(self.n_rows() * idx.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            values.extend(idx.iter().map(|&j| row[j]));
        }
        FeatureMatrix::new(
            names.iter().map(|n| n.as_ref().to_string()).collect(),
            self.keys.clone(),
            values,
        )
    }

    pub fn sorted_by_key(&self) -> FeatureMatrix {
        let mut order: Vec<usize> = (0..self.n_rows()).collect();
        order.sort_by(|&a, &b| self.keys[a].cmp(&self.keys[b]));
        self.select_rows(&order)
    }

    /// First non-finite cell as `(row, column name)`.
    pub fn first_non_finite(&self) -> Option<(usize, &str)> {
        let w = self.n_cols();
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / w, self.names[k % w].as_str()))
    }

    /// Path of the schema sidecar written next to `path`.
    pub fn schema_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".schema");
        PathBuf::from(s)
    }

    /// Writes `query_id,product_id,<features...>` plus a `<path>.schema`
    /// sidecar with one `name<TAB>kind` line per feature column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = WriterBuilder::new()
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["query_id".to_string(), "product_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (i, key) in self.keys.iter().enumerate() {
            let mut rec = vec![key.query_id.clone(), key.product_id.clone()];
            rec.extend(self.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let schema: String = self
            .names
            .iter()
            .map(|n| format!("{n}\t{}\n", column_kind(n)))
            .collect();
        let sp = Self::schema_path(path);
        std::fs::write(&sp, schema).map_err(|e| Error::io(sp, e))
    }

    /// Reads a matrix written by [`FeatureMatrix::write_csv`]; the header must
    /// agree with the schema sidecar when one exists.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
        let path = path.as_ref();
        let mut rdr = ReaderBuilder::new()
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.get(0) != Some("query_id") || headers.get(1) != Some("product_id") {
            return Err(Error::MissingColumn {
                path: path.to_path_buf(),
                column: "query_id,product_id".into(),
            });
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let sp = Self::schema_path(path);
        if sp.exists() {
            let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
            let listed: Vec<String> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split('\t').next().unwrap_or("").to_string())
                .collect();
            if listed != names {
                return Err(schema_mismatch(&listed, &names));
            }
        }
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            keys.push(PairKey::new(&rec[0], &rec[1]));
            for (j, cell) in rec.iter().skip(2).enumerate() {
                values.push(cell.parse::<f64>().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    row: rec.position().map(|p| p.line()).unwrap_or(0),
                    message: format!("column `{}`: {e}", names[j]),
                })?);
            }
        }
        FeatureMatrix::new(names, keys, values)
    }
}

/// Error describing how `found` differs from `expected`.
pub fn schema_mismatch(expected: &[String], found: &[String]) -> Error {
    let missing = expected
        .iter()
        .filter(|n| !found.contains(n))
        .cloned()
        .collect();
    let extra = found
        .iter()
        .filter(|n| !expected.contains(n))
        .cloned()
        .collect();
    Error::SchemaMismatch { missing, extra }
}

/// Builds one feature row per example, in example order.
///
/// Groups are formed over `examples` by query id. Fails listing every pair
/// that lacks a probability vector for one of `config.models`.
pub fn assemble_features(
    examples: &ExampleSet,
    catalog: &Catalog,
    probs: &ProbStore,
    t1_products: &HashSet<String>,
    config: &FeatureConfig,
) -> Result<FeatureMatrix> {
    let mut missing = Vec::new();
    for e in examples.examples() {
        let key = e.key();
        for &m in &config.models {
            if probs.get(&key, m).is_none() {
                missing.push(format!("{key} model {m}"));
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingProbabilities(missing));
    }
    examples.check_products(catalog)?;

    let names = feature_names(config);
    let width = names.len();
    let groups = QueryGroup::collect(examples, Some(probs))?;
    let blocks = par::try_map(config.exec, &groups, |g| {
        group_rows(g, catalog, t1_products, config)
    })?;

    let mut values = vec![0.0; examples.len() * width];
    for (g, block) in groups.iter().zip(blocks) {
        for (k, &row) in g.rows.iter().enumerate() {
            values[row * width..(row + 1) * width]
                .copy_from_slice(&block[k * width..(k + 1) * width]);
        }
    }
    let keys = examples.examples().iter().map(|e| e.key()).collect();
    FeatureMatrix::new(names, keys, values)
}

fn group_rows(
    group: &QueryGroup,
    catalog: &Catalog,
    t1_products: &HashSet<String>,
    config: &FeatureConfig,
) -> Result<Vec<f64>> {
    let fam = config.families;
    let ratio = fam
        .contains(FeatureFamily::Leakage)
        .then(|| t1_membership_ratio(group, t1_products));
    let isbn = if fam.contains(FeatureFamily::Isbn) {
        Some(isbn_flags(group)?)
    } else {
        None
    };
    let brand = if fam.contains(FeatureFamily::Brand) {
        Some(brand_features(group, catalog)?)
    } else {
        None
    };
    let stats = if fam.contains(FeatureFamily::GroupStats) {
        config
            .models
            .iter()
            .map(|&m| group_prob_stats(group, m))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };

    let mut out = Vec::new();
    for i in 0..group.len() {
        if let Some(r) = ratio {
            out.push(r);
        }
        if fam.contains(FeatureFamily::ProductCount) {
            out.push(query_product_count(group) as f64);
        }
        if let Some(flags) = &isbn {
            out.push(flag(flags[i].0));
            out.push(flag(flags[i].1));
        }
        if let Some(b) = &brand {
            out.push(b[i].0 as f64);
            out.push(flag(b[i].1));
        }
        for &m in &config.models {
            let p = group.prob(i, m).expect("presence checked before assembly");
            out.extend_from_slice(p.as_array());
        }
        for per_class in &stats {
            for s in per_class {
                out.extend([s.min, s.median, s.max]);
            }
        }
    }
    Ok(out)
}

/// Distinct product ids of the task-1 rows.
pub fn t1_product_set(examples: &ExampleSet) -> HashSet<String> {
    examples
        .examples()
        .iter()
        .filter(|e| e.tasks.contains(crate::data::TaskFile::T1))
        .map(|e| e.product_id.clone())
        .collect()
}

/// Label targets aligned with `examples`, failing on unlabeled rows.
pub fn class_targets(examples: &ExampleSet) -> Result<Vec<EsciLabel>> {
    examples
        .examples()
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| Error::Validation(format!("pair {} has no label", e.key())))
        })
        .collect()
}
