//! Data model, dataset files, fold splitting and the synthetic generator.

mod folds;
mod io;
pub mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use folds::{split_folds, FoldAssignment};
pub use io::{
    load_catalog, load_examples, load_folds, load_probs, write_catalog, write_examples,
    write_folds, write_probs, DatasetPaths,
};
pub use synth::{synth_generate, Split, SynthConfig, SynthDataset};

/// Number of relevance classes.
pub const NUM_CLASSES: usize = 4;

/// Four-way relevance label of a query-product pair.
///
/// Class indices follow gain order: Exact = 0, Substitute = 1, Complement = 2,
/// Irrelevant = 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EsciLabel {
    Exact,
    Substitute,
    Complement,
    Irrelevant,
}

impl EsciLabel {
    pub const ALL: [EsciLabel; NUM_CLASSES] = [
        EsciLabel::Exact,
        EsciLabel::Substitute,
        EsciLabel::Complement,
        EsciLabel::Irrelevant,
    ];

    /// Fixed ranking gain used by nDCG and the expected-gain score.
    pub fn gain(self) -> f64 {
        match self {
            EsciLabel::Exact => 1.0,
            EsciLabel::Substitute => 0.1,
            EsciLabel::Complement => 0.01,
            EsciLabel::Irrelevant => 0.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> char {
        match self {
            EsciLabel::Exact => 'E',
            EsciLabel::Substitute => 'S',
            EsciLabel::Complement => 'C',
            EsciLabel::Irrelevant => 'I',
        }
    }
}

impl fmt::Display for EsciLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for EsciLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "E" | "exact" | "Exact" => Ok(EsciLabel::Exact),
            "S" | "substitute" | "Substitute" => Ok(EsciLabel::Substitute),
            "C" | "complement" | "Complement" => Ok(EsciLabel::Complement),
            "I" | "irrelevant" | "Irrelevant" => Ok(EsciLabel::Irrelevant),
            other => Err(format!("unknown esci label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Locale {
    Us,
    Es,
    Jp,
}

impl Locale {
    pub const ALL: [Locale; 3] = [Locale::Us, Locale::Es, Locale::Jp];

    pub fn as_str(self) -> &'static str {
        match self {
            Locale::Us => "us",
            Locale::Es => "es",
            Locale::Jp => "jp",
        }
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Locale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "us" => Ok(Locale::Us),
            "es" => Ok(Locale::Es),
            "jp" => Ok(Locale::Jp),
            other => Err(format!("unknown locale `{other}`")),
        }
    }
}

/// Which task file(s) a pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskFile {
    T1,
    T2T3,
}

impl TaskFile {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskFile::T1 => "T1",
            TaskFile::T2T3 => "T2T3",
        }
    }
}

impl FromStr for TaskFile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T1" => Ok(TaskFile::T1),
            "T2T3" | "T2" | "T3" => Ok(TaskFile::T2T3),
            other => Err(format!("unknown task file `{other}`")),
        }
    }
}

/// Competition task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    /// Ranking by expected gain, scored with nDCG.
    T1,
    /// Four-way classification, scored with Micro-F1.
    T2,
    /// Substitute identification, scored with Micro-F1.
    T3,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::T1, Task::T2, Task::T3];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::T1 => "T1",
            Task::T2 => "T2",
            Task::T3 => "T3",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T1" => Ok(Task::T1),
            "T2" => Ok(Task::T2),
            "T3" => Ok(Task::T3),
            other => Err(format!("unknown task `{other}` (expected T1, T2 or T3)")),
        }
    }
}

/// Set over {T1, T2T3}.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct TaskSet(u8);

impl TaskSet {
    pub const EMPTY: TaskSet = TaskSet(0);

    pub fn single(task: TaskFile) -> Self {
        TaskSet(Self::bit(task))
    }

    fn bit(task: TaskFile) -> u8 {
        match task {
            TaskFile::T1 => 1,
            TaskFile::T2T3 => 2,
        }
    }

    pub fn contains(self, task: TaskFile) -> bool {
        self.0 & Self::bit(task) != 0
    }

    pub fn insert(&mut self, task: TaskFile) {
        self.0 |= Self::bit(task);
    }

    pub fn union(self, other: TaskSet) -> TaskSet {
        TaskSet(self.0 | other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Product {
    pub product_id: String,
    pub title: String,
    pub brand: String,
    pub color: String,
    pub locale: Locale,
    pub catalog_index: usize,
}

/// Products in file order; `catalog_index` equals the position.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    products: Vec<Product>,
    index: HashMap<String, usize>,
}

impl Catalog {
    /// Builds a catalog, reassigning `catalog_index` to the slice position.
    pub fn from_products(products: Vec<Product>) -> Result<Self> {
        let mut index = HashMap::with_capacity(products.len());
        let mut out = Vec::with_capacity(products.len());
        for (i, mut p) in products.into_iter().enumerate() {
            if p.product_id.is_empty() {
                return Err(Error::Validation(format!(
                    "empty product_id at catalog row {i}"
                )));
            }
            if index.insert(p.product_id.clone(), i).is_some() {
                return Err(Error::DuplicateKey(p.product_id));
            }
            p.catalog_index = i;
            out.push(p);
        }
        Ok(Self {
            products: out,
            index,
        })
    }

    pub fn get(&self, product_id: &str) -> Option<&Product> {
        self.index.get(product_id).map(|&i| &self.products[i])
    }

    pub fn require(&self, product_id: &str) -> Result<&Product> {
        self.get(product_id)
            .ok_or_else(|| Error::UnknownProduct(product_id.to_string()))
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    pub query_id: String,
    pub product_id: String,
}

impl PairKey {
    pub fn new(query_id: impl Into<String>, product_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            product_id: product_id.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.query_id, self.product_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub query_id: String,
    pub query_text: String,
    pub product_id: String,
    pub locale: Locale,
    pub label: Option<EsciLabel>,
    pub tasks: TaskSet,
}

impl Example {
    pub fn key(&self) -> PairKey {
        PairKey::new(self.query_id.clone(), self.product_id.clone())
    }
}

/// Examples with unique `(query_id, product_id)` keys, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ExampleSet {
    examples: Vec<Example>,
    index: HashMap<PairKey, usize>,
}

impl ExampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_examples(examples: Vec<Example>) -> Result<Self> {
        let mut set = Self::new();
        for e in examples {
            set.push(e)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, example: Example) -> Result<()> {
        let key = example.key();
        if self.index.contains_key(&key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        self.index.insert(key, self.examples.len());
        self.examples.push(example);
        Ok(())
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, key: &PairKey) -> Option<&Example> {
        self.index.get(key).map(|&i| &self.examples[i])
    }

    pub fn position(&self, key: &PairKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Union by pair key. Shared pairs get the union of task memberships;
    /// labels must agree when both sides carry one.
    pub fn merge(&self, other: &ExampleSet) -> Result<ExampleSet> {
        let mut out = self.clone();
        for e in &other.examples {
            match out.index.get(&e.key()) {
                Some(&i) => {
                    let existing = &mut out.examples[i];
                    match (existing.label, e.label) {
                        (Some(a), Some(b)) if a != b => {
                            return Err(Error::Validation(format!(
                                "conflicting labels {a} and {b} for pair {}",
                                e.key()
                            )))
                        }
                        (None, Some(b)) => existing.label = Some(b),
                        _ => {}
                    }
                    existing.tasks = existing.tasks.union(e.tasks);
                }
                None => out.push(e.clone())?,
            }
        }
        Ok(out)
    }

    pub fn filter(&self, mut keep: impl FnMut(&Example) -> bool) -> ExampleSet {
        let kept = self.examples.iter().filter(|e| keep(e)).cloned().collect();
        ExampleSet::from_examples(kept).expect("subset of unique keys stays unique")
    }

    pub fn without_labels(&self) -> ExampleSet {
        let mut out = self.clone();
        for e in &mut out.examples {
            e.label = None;
        }
        out
    }

    /// Distinct query ids in order of first appearance.
    pub fn query_ids(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.examples
            .iter()
            .filter(|e| seen.insert(e.query_id.as_str()))
            .map(|e| e.query_id.as_str())
            .collect()
    }

    pub fn product_ids(&self) -> BTreeSet<&str> {
        self.examples
            .iter()
            .map(|e| e.product_id.as_str())
            .collect()
    }

    /// Checks that every product id resolves in `catalog`.
    pub fn check_products(&self, catalog: &Catalog) -> Result<()> {
        for e in &self.examples {
            catalog.require(&e.product_id)?;
        }
        Ok(())
    }

    /// Row indices per query, queries in order of first appearance.
    pub fn group_rows(&self) -> Vec<Vec<usize>> {
        let mut slot: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, e) in self.examples.iter().enumerate() {
            let g = *slot.entry(e.query_id.as_str()).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        groups
    }
}

/// Class-probability vector `(p_e, p_s, p_c, p_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbVector([f64; NUM_CLASSES]);

impl ProbVector {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self> {
        if p.iter()
            .any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0 + Self::SUM_TOLERANCE)
        {
            return Err(Error::Validation(format!(
                "probability components out of range: {p:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Validation(format!(
                "probabilities sum to {sum}, not 1: {p:?}"
            )));
        }
        Ok(Self(p))
    }

    pub fn one_hot(label: EsciLabel) -> Self {
        let mut p = [0.0; NUM_CLASSES];
        p[label.index()] = 1.0;
        Self(p)
    }

    pub fn uniform() -> Self {
        Self([0.25; NUM_CLASSES])
    }

    pub fn as_array(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn get(&self, label: EsciLabel) -> f64 {
        self.0[label.index()]
    }

    pub fn p_e(&self) -> f64 {
        self.0[0]
    }

    pub fn p_s(&self) -> f64 {
        self.0[1]
    }

    pub fn p_c(&self) -> f64 {
        self.0[2]
    }

    pub fn p_i(&self) -> f64 {
        self.0[3]
    }
}

/// Upstream probability vectors per pair, one per upstream model.
#[derive(Debug, Clone, Default)]
pub struct ProbStore {
    num_models: usize,
    vectors: HashMap<PairKey, Vec<Option<ProbVector>>>,
}

impl ProbStore {
    pub fn new(num_models: usize) -> Self {
        Self {
            num_models,
            vectors: HashMap::new(),
        }
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, key: PairKey, model: usize, p: ProbVector) {
        if model >= self.num_models {
            self.num_models = model + 1;
            for v in self.vectors.values_mut() {
                v.resize(self.num_models, None);
            }
        }
        let slots = self
            .vectors
            .entry(key)
            .or_insert_with(|| vec![None; self.num_models]);
        slots.resize(self.num_models, None);
        slots[model] = Some(p);
    }

    pub fn get(&self, key: &PairKey, model: usize) -> Option<ProbVector> {
        self.vectors
            .get(key)
            .and_then(|v| v.get(model).copied().flatten())
    }

    pub fn remove(&mut self, key: &PairKey) {
        self.vectors.remove(key);
    }

    /// All entries sorted by pair key, then model.
    pub fn sorted_entries(&self) -> Vec<(&PairKey, usize, ProbVector)> {
        let mut keys: Vec<&PairKey> = self.vectors.keys().collect();
        keys.sort();
        keys.into_iter()
            .flat_map(|k| {
                self.vectors[k]
                    .iter()
                    .enumerate()
                    .filter_map(move |(m, p)| p.map(|p| (k, m, p)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMember {
    pub product_id: String,
    pub label: Option<EsciLabel>,
}

/// One query with its candidate products.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    pub locale: Locale,
    pub members: Vec<GroupMember>,
    /// Per member, one entry per upstream model (`None` when absent).
    pub prob_vectors: Vec<Vec<Option<ProbVector>>>,
    /// Position of each member in the example set the group was built from.
    pub rows: Vec<usize>,
}

impl QueryGroup {
    /// Groups `examples` by query id, in order of first appearance.
    pub fn collect(examples: &ExampleSet, probs: Option<&ProbStore>) -> Result<Vec<QueryGroup>> {
        let rows = examples.examples();
        examples
            .group_rows()
            .into_iter()
            .map(|idx| {
                let first = &rows[idx[0]];
                let mut members = Vec::with_capacity(idx.len());
                let mut prob_vectors = Vec::with_capacity(idx.len());
                for &i in &idx {
                    let e = &rows[i];
                    if e.locale != first.locale {
                        return Err(Error::Validation(format!(
                            "query `{}` mixes locales {} and {}",
                            e.query_id, first.locale, e.locale
                        )));
                    }
                    members.push(GroupMember {
                        product_id: e.product_id.clone(),
                        label: e.label,
                    });
                    let pv = match probs {
                        Some(store) => {
                            let key = e.key();
                            (0..store.num_models())
                                .map(|m| store.get(&key, m))
                                .collect()
                        }
                        None => Vec::new(),
                    };
                    prob_vectors.push(pv);
                }
                Ok(QueryGroup {
                    query_id: first.query_id.clone(),
                    locale: first.locale,
                    members,
                    prob_vectors,
                    rows: idx,
                })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn prob(&self, member: usize, model: usize) -> Option<ProbVector> {
        self.prob_vectors
            .get(member)
            .and_then(|v| v.get(model).copied().flatten())
    }

    pub fn has_exact(&self) -> bool {
        self.members
            .iter()
            .any(|m| m.label == Some(EsciLabel::Exact))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(q: &str, p: &str, label: Option<EsciLabel>, task: TaskFile) -> Example {
        Example {
            query_id: q.into(),
            query_text: format!("text {q}"),
            product_id: p.into(),
            locale: Locale::Us,
            label,
            tasks: TaskSet::single(task),
        }
    }

    #[test]
    fn gains_are_fixed() {
        let gains: Vec<f64> = EsciLabel::ALL.iter().map(|l| l.gain()).collect();
        assert_eq!(gains, vec![1.0, 0.1, 0.01, 0.0]);
    }

    #[test]
    fn label_codes_round_trip() {
        for l in EsciLabel::ALL {
            assert_eq!(l.code().to_string().parse::<EsciLabel>().unwrap(), l);
            assert_eq!(EsciLabel::from_index(l.index()), Some(l));
        }
        assert!("X".parse::<EsciLabel>().is_err());
    }

    #[test]
    fn duplicate_pairs_rejected() {
        let mut set = ExampleSet::new();
        set.push(ex("q", "A", None, TaskFile::T1)).unwrap();
        assert!(matches!(
            set.push(ex("q", "A", None, TaskFile::T1)),
            Err(Error::DuplicateKey(_))
        ));
    }

    #[test]
    fn merge_unions_task_membership() {
        let t1 = ExampleSet::from_examples(vec![
            ex("q1", "A", Some(EsciLabel::Exact), TaskFile::T1),
            ex("q1", "B", Some(EsciLabel::Irrelevant), TaskFile::T1),
        ])
        .unwrap();
        let t2 = ExampleSet::from_examples(vec![
            ex("q1", "A", Some(EsciLabel::Exact), TaskFile::T2T3),
            ex("q2", "C", Some(EsciLabel::Substitute), TaskFile::T2T3),
        ])
        .unwrap();
        let merged = t1.merge(&t2).unwrap();
        assert_eq!(merged.len(), 3);
        let both = merged.get(&PairKey::new("q1", "A")).unwrap().tasks;
        assert!(both.contains(TaskFile::T1) && both.contains(TaskFile::T2T3));
        let only_t1 = merged.get(&PairKey::new("q1", "B")).unwrap().tasks;
        assert!(only_t1.contains(TaskFile::T1) && !only_t1.contains(TaskFile::T2T3));
        let only_t2 = merged.get(&PairKey::new("q2", "C")).unwrap().tasks;
        assert!(!only_t2.contains(TaskFile::T1));
    }

    #[test]
    fn merge_rejects_conflicting_labels() {
        let a = ExampleSet::from_examples(vec![ex("q", "A", Some(EsciLabel::Exact), TaskFile::T1)])
            .unwrap();
        let b = ExampleSet::from_examples(vec![ex(
            "q",
            "A",
            Some(EsciLabel::Complement),
            TaskFile::T2T3,
        )])
        .unwrap();
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new([0.5, 0.3, 0.2, 0.0]).is_ok());
        assert!(ProbVector::new([0.5, 0.3, 0.2, 0.1]).is_err());
        assert!(ProbVector::new([1.2, -0.2, 0.0, 0.0]).is_err());
        assert!(ProbVector::new([f64::NAN, 0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn catalog_indices_are_positions() {
        let mk = |id: &str| Product {
            product_id: id.into(),
            title: String::new(),
            brand: String::new(),
            color: String::new(),
            locale: Locale::Us,
            catalog_index: 99,
        };
        let cat = Catalog::from_products(vec![mk("A"), mk("B"), mk("C")]).unwrap();
        let idx: Vec<usize> = cat.products().iter().map(|p| p.catalog_index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert!(Catalog::from_products(vec![mk("A"), mk("A")]).is_err());
    }

    #[test]
    fn groups_follow_first_appearance() {
        let set = ExampleSet::from_examples(vec![
            ex("q2", "A", None, TaskFile::T1),
            ex("q1", "B", None, TaskFile::T1),
            ex("q2", "C", None, TaskFile::T1),
        ])
        .unwrap();
        let groups = QueryGroup::collect(&set, None).unwrap();
        assert_eq!(groups[0].query_id, "q2");
        assert_eq!(groups[0].rows, vec![0, 2]);
        assert_eq!(groups[1].rows, vec![1]);
    }
}
