//! Comma-separated dataset files with a header row, UTF-8.
//!
//! | file     | columns                                              |
//! |----------|------------------------------------------------------|
//! | catalog  | product_id, title, brand, color, locale              |
//! | examples | query_id, query, product_id, locale, esci_label?     |
//! | probs    | query_id, product_id, model, p_e, p_s, p_c, p_i      |
//! | folds    | query_id, fold                                       |
//!
//! An empty `esci_label` field means the pair is unlabeled.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::{
    Catalog, Example, ExampleSet, FoldAssignment, Locale, PairKey, ProbStore, ProbVector, Product,
    TaskFile, TaskSet,
};
use crate::error::{Error, Result};

/// File locations of one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub catalog: PathBuf,
    pub t1_train: PathBuf,
    pub t2t3_train: PathBuf,
    pub t1_test: Option<PathBuf>,
    pub t2t3_test: Option<PathBuf>,
    /// Labeled test pairs, used only for evaluation.
    pub truth: Option<PathBuf>,
    pub probs: PathBuf,
}

impl DatasetPaths {
    /// The standard layout: `catalog.csv`, `t1_train.csv`, `t2t3_train.csv`,
    /// `t1_test.csv`, `t2t3_test.csv`, `test_truth.csv` and `probs.csv`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            catalog: dir.join("catalog.csv"),
            t1_train: dir.join("t1_train.csv"),
            t2t3_train: dir.join("t2t3_train.csv"),
            t1_test: Some(dir.join("t1_test.csv")),
            t2t3_test: Some(dir.join("t2t3_test.csv")),
            truth: Some(dir.join("test_truth.csv")),
            probs: dir.join("probs.csv"),
        }
    }

    /// Drops optional files that do not exist on disk.
    pub fn existing(mut self) -> Self {
        for slot in [&mut self.t1_test, &mut self.t2t3_test, &mut self.truth] {
            if slot.as_ref().is_some_and(|p| !p.exists()) {
                *slot = None;
            }
        }
        self
    }
}

fn open(path: &Path) -> Result<(csv::Reader<std::fs::File>, StringRecord)> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    Ok((rdr, headers))
}

fn column(headers: &StringRecord, path: &Path, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

fn row_number(rec: &StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_err(path: &Path, rec: &StringRecord, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row: row_number(rec),
        message: message.into(),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    WriterBuilder::new()
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let path = path.as_ref();
    let (mut rdr, headers) = open(path)?;
    let cols: Vec<usize> = ["product_id", "title", "brand", "color", "locale"]
        .iter()
        .map(|c| column(&headers, path, c))
        .collect::<Result<_>>()?;
    let mut products = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let field = |i: usize| rec.get(cols[i]).unwrap_or("").to_string();
        let product_id = field(0);
        if product_id.is_empty() {
            return Err(parse_err(path, &rec, "empty product_id"));
        }
        let locale = field(4)
            .parse::<Locale>()
            .map_err(|m| parse_err(path, &rec, m))?;
        products.push(Product {
            product_id,
            title: field(1),
            brand: field(2),
            color: field(3),
            locale,
            catalog_index: products.len(),
        });
    }
    Catalog::from_products(products)
}

pub fn write_catalog(path: impl AsRef<Path>, catalog: &Catalog) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let csv_err = |e| Error::csv(path, e);
    w.write_record(["product_id", "title", "brand", "color", "locale"])
        .map_err(csv_err)?;
    for p in catalog.products() {
        w.write_record([
            p.product_id.as_str(),
            &p.title,
            &p.brand,
            &p.color,
            p.locale.as_str(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads an examples file, tagging every row with `task`.
///
/// When `catalog` is given, each product id must resolve in it.
pub fn load_examples(
    path: impl AsRef<Path>,
    task: TaskFile,
    catalog: Option<&Catalog>,
) -> Result<ExampleSet> {
    let path = path.as_ref();
    let (mut rdr, headers) = open(path)?;
    let q = column(&headers, path, "query_id")?;
    let qt = column(&headers, path, "query")?;
    let p = column(&headers, path, "product_id")?;
    let loc = column(&headers, path, "locale")?;
    let lab = headers.iter().position(|h| h.trim() == "esci_label");
    let mut set = ExampleSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let get = |i: usize| rec.get(i).unwrap_or("").to_string();
        let label = match lab.map(|i| rec.get(i).unwrap_or("").trim()) {
            None | Some("") => None,
            Some(s) => Some(s.parse().map_err(|m: String| parse_err(path, &rec, m))?),
        };
        let locale = get(loc)
            .parse()
            .map_err(|m: String| parse_err(path, &rec, m))?;
        let example = Example {
            query_id: get(q),
            query_text: get(qt),
            product_id: get(p),
            locale,
            label,
            tasks: TaskSet::single(task),
        };
        if let Some(cat) = catalog {
            cat.require(&example.product_id)?;
        }
        set.push(example)?;
    }
    Ok(set)
}

/// Writes examples. The `esci_label` column is emitted only if some row has
/// a label.
pub fn write_examples(path: impl AsRef<Path>, examples: &ExampleSet) -> Result<()> {
    let path = path.as_ref();
    let labeled = examples.examples().iter().any(|e| e.label.is_some());
    let mut w = writer(path)?;
    let csv_err = |e| Error::csv(path, e);
    let mut header = vec!["query_id", "query", "product_id", "locale"];
    if labeled {
        header.push("esci_label");
    }
    w.write_record(&header).map_err(csv_err)?;
    for e in examples.examples() {
        let label = e.label.map(|l| l.code().to_string()).unwrap_or_default();
        let mut row = vec![
            e.query_id.as_str(),
            &e.query_text,
            &e.product_id,
            e.locale.as_str(),
        ];
        if labeled {
            row.push(&label);
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_probs(path: impl AsRef<Path>) -> Result<ProbStore> {
    let path = path.as_ref();
    let (mut rdr, headers) = open(path)?;
    let cols: Vec<usize> = [
        "query_id",
        "product_id",
        "model",
        "p_e",
        "p_s",
        "p_c",
        "p_i",
    ]
    .iter()
    .map(|c| column(&headers, path, c))
    .collect::<Result<_>>()?;
    let mut store = ProbStore::new(0);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let get = |i: usize| rec.get(cols[i]).unwrap_or("").trim();
        let model: usize = get(2)
            .parse()
            .map_err(|e| parse_err(path, &rec, format!("bad model index: {e}")))?;
        let mut p = [0.0; 4];
        for (c, slot) in p.iter_mut().enumerate() {
            *slot = get(3 + c)
                .parse()
                .map_err(|e| parse_err(path, &rec, format!("bad probability: {e}")))?;
        }
        let pv = ProbVector::new(p).map_err(|e| parse_err(path, &rec, e.to_string()))?;
        let key = PairKey::new(get(0), get(1));
        if store.get(&key, model).is_some() {
            return Err(Error::DuplicateKey(format!("{key} model {model}")));
        }
        store.insert(key, model, pv);
    }
    Ok(store)
}

/// Probabilities are written with round-trip precision; rows sorted by pair key.
pub fn write_probs(path: impl AsRef<Path>, probs: &ProbStore) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let csv_err = |e| Error::csv(path, e);
    w.write_record([
        "query_id",
        "product_id",
        "model",
        "p_e",
        "p_s",
        "p_c",
        "p_i",
    ])
    .map_err(csv_err)?;
    for (key, model, p) in probs.sorted_entries() {
        let a = p.as_array();
        w.write_record([
            key.query_id.clone(),
            key.product_id.clone(),
            model.to_string(),
            a[0].to_string(),
            a[1].to_string(),
            a[2].to_string(),
            a[3].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_folds(path: impl AsRef<Path>, folds: &FoldAssignment) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let csv_err = |e| Error::csv(path, e);
    w.write_record(["query_id", "fold"]).map_err(csv_err)?;
    for (q, f) in folds.iter() {
        w.write_record([q, &f.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_folds(path: impl AsRef<Path>) -> Result<FoldAssignment> {
    let path = path.as_ref();
    let (mut rdr, headers) = open(path)?;
    let q = column(&headers, path, "query_id")?;
    let f = column(&headers, path, "fold")?;
    let mut map = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let fold: usize = rec
            .get(f)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| parse_err(path, &rec, format!("bad fold: {e}")))?;
        let query = rec.get(q).unwrap_or("").to_string();
        if map.insert(query.clone(), fold).is_some() {
            return Err(Error::DuplicateKey(query));
        }
    }
    FoldAssignment::from_map(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EsciLabel;
    use std::io::Write;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        std::fs::File::create(&path)
            .unwrap()
            .write_all(text.as_bytes())
            .unwrap();
        path
    }

    #[test]
    fn catalog_indices_follow_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "cat.csv",
            "product_id,title,brand,color,locale\nA,red shoe,X,,us\nB,\"blue, big\",,red,es\nC,t,Y,,jp\n",
        );
        let cat = load_catalog(&p).unwrap();
        let ids: Vec<_> = cat
            .products()
            .iter()
            .map(|p| (p.product_id.as_str(), p.catalog_index))
            .collect();
        assert_eq!(ids, vec![("A", 0), ("B", 1), ("C", 2)]);
        assert_eq!(cat.get("B").unwrap().title, "blue, big");
        assert_eq!(cat.get("B").unwrap().brand, "");
    }

    #[test]
    fn catalog_missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "cat.csv",
            "product_id,title,color,locale\nA,t,,us\n",
        );
        match load_catalog(&p) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "brand"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn catalog_duplicate_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "cat.csv",
            "product_id,title,brand,color,locale\nA,t,,,us\nA,u,,,us\n",
        );
        match load_catalog(&p) {
            Err(Error::DuplicateKey(id)) => assert_eq!(id, "A"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn example_labels_parse_and_bad_label_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let good = write(
            dir.path(),
            "ok.csv",
            "query_id,query,product_id,locale,esci_label\nq1,shoe,A,us,E\nq1,shoe,B,us,\n",
        );
        let set = load_examples(&good, TaskFile::T1, None).unwrap();
        assert_eq!(set.examples()[0].label, Some(EsciLabel::Exact));
        assert_eq!(set.examples()[1].label, None);
        assert!(set.examples()[0].tasks.contains(TaskFile::T1));

        let bad = write(
            dir.path(),
            "bad.csv",
            "query_id,query,product_id,locale,esci_label\nq1,shoe,A,us,E\nq1,shoe,B,us,X\n",
        );
        match load_examples(&bad, TaskFile::T1, None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unresolvable_product_is_referential_error() {
        let dir = tempfile::tempdir().unwrap();
        let cat = write(
            dir.path(),
            "cat.csv",
            "product_id,title,brand,color,locale\nA,t,,,us\n",
        );
        let ex = write(
            dir.path(),
            "ex.csv",
            "query_id,query,product_id,locale\nq1,shoe,A,us\nq1,shoe,Z,us\n",
        );
        let cat = load_catalog(&cat).unwrap();
        assert!(matches!(
            load_examples(&ex, TaskFile::T2T3, Some(&cat)),
            Err(Error::UnknownProduct(id)) if id == "Z"
        ));
    }

    #[test]
    fn probs_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ProbStore::new(2);
        let p = ProbVector::new([0.1 + 0.2, 0.3, 0.4 - 0.1 - 0.2 + 0.1, 1.0 - 0.3 - 0.3 - 0.2])
            .unwrap();
        store.insert(PairKey::new("q", "A"), 1, p);
        store.insert(PairKey::new("q", "A"), 0, ProbVector::uniform());
        let path = dir.path().join("p.csv");
        write_probs(&path, &store).unwrap();
        let back = load_probs(&path).unwrap();
        assert_eq!(back.get(&PairKey::new("q", "A"), 1), Some(p));
        assert_eq!(back.num_models(), 2);
    }
}
