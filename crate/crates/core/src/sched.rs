//! Batched inference scheduling: a precomputed product token cache,
//! length-sorted batch construction and padding-waste accounting.
//!
//! The cost model is padded token cells: every batch costs
//! `members x longest member`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Catalog, Example, PairKey, ProbVector, Product};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const DEFAULT_BATCH_SIZE: usize = 4;

/// Maps text to token ids. Id 0 is padding and is never produced.
pub trait Tokenizer: Sync {
    fn tokenize(&self, text: &str) -> Vec<u32>;
}

/// One token per whitespace-separated word, id from an FNV-1a hash. Empty
/// text yields a single unknown token so every sequence has length ≥ 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

fn fnv1a(s: &str) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in s.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        let ids: Vec<u32> = text
            .split_whitespace()
            .map(|w| 2 + fnv1a(w) % (u32::MAX - 2))
            .collect();
        if ids.is_empty() {
            vec![UNK_ID]
        } else {
            ids
        }
    }
}

pub fn product_text(p: &Product) -> String {
    [p.title.as_str(), p.brand.as_str(), p.color.as_str()]
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub product_id: String,
    pub token_ids: Vec<u32>,
}

impl TokenRecord {
    pub fn token_length(&self) -> usize {
        self.token_ids.len()
    }
}

const CACHE_MAGIC: &[u8; 8] = b"ESCITOK1";
pub const CACHE_VERSION: u32 = 1;

/// Tokenized products keyed by id. On-disk layout is in
/// `docs/token_cache_format.md`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenCache {
    records: Vec<TokenRecord>,
    index: HashMap<String, usize>,
}

impl TokenCache {
    pub fn from_records(records: Vec<TokenRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.token_ids.is_empty() {
                return Err(Error::Validation(format!(
                    "product `{}` has no tokens",
                    r.product_id
                )));
            }
            if index.insert(r.product_id.clone(), i).is_some() {
                return Err(Error::DuplicateKey(r.product_id.clone()));
            }
        }
        Ok(Self { records, index })
    }

    pub fn build(catalog: &Catalog, tokenizer: &dyn Tokenizer, exec: Exec) -> Result<Self> {
        let records = par::map(exec, catalog.products(), |p| TokenRecord {
            product_id: p.product_id.clone(),
            token_ids: tokenizer.tokenize(&product_text(p)),
        });
        Self::from_records(records)
    }

    pub fn records(&self) -> &[TokenRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, product_id: &str) -> Result<&TokenRecord> {
        self.index
            .get(product_id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| Error::MissingKey(format!("product `{product_id}` not in token cache")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.product_id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.product_id.as_bytes());
            out.extend_from_slice(&(r.token_ids.len() as u32).to_le_bytes());
            for t in &r.token_ids {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut cur, &mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not a token cache".into()));
        }
        let version = read_u32(&mut cur)?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!(
                "unsupported token cache version {version} (expected {CACHE_VERSION})"
            )));
        }
        let mut count = [0u8; 8];
        read_exact(&mut cur, &mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = read_u32(&mut cur)? as usize;
            if len > cur.len() {
                return Err(Error::Format("truncated token cache".into()));
            }
            let (id, rest) = cur.split_at(len);
            let product_id = String::from_utf8(id.to_vec())
                .map_err(|_| Error::Format("product id is not UTF-8".into()))?;
            cur = rest;
            let n = read_u32(&mut cur)? as usize;
            if n.saturating_mul(4) > cur.len() {
                return Err(Error::Format("truncated token cache".into()));
            }
            let token_ids = (0..n).map(|_| read_u32(&mut cur)).collect::<Result<_>>()?;
            records.push(TokenRecord {
                product_id,
                token_ids,
            });
        }
        if !cur.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after token cache",
                cur.len()
            )));
        }
        Self::from_records(records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::Format("truncated token cache".into()))
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Query tokens followed by product tokens.
pub fn pair_sequence(query_tokens: &[u32], product: &TokenRecord) -> Vec<u32> {
    let mut s = Vec::with_capacity(query_tokens.len() + product.token_ids.len());
    s.extend_from_slice(query_tokens);
    s.extend_from_slice(&product.token_ids);
    s
}

/// Token sequences for every example, in example order. Product tokens come
/// from the cache; queries are tokenized once each.
pub fn example_sequences(
    examples: &[Example],
    cache: &TokenCache,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Vec<u32>>> {
    let mut queries: HashMap<&str, Vec<u32>> = HashMap::new();
    examples
        .iter()
        .map(|ex| {
            let q = queries
                .entry(ex.query_id.as_str())
                .or_insert_with(|| tokenizer.tokenize(&ex.query_text));
            Ok(pair_sequence(q, cache.get(&ex.product_id)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub key: PairKey,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Indices into the original item list.
    pub members: Vec<usize>,
    pub lengths: Vec<usize>,
    pub padded_length: usize,
}

impl Batch {
    fn new(members: Vec<usize>, items: &[BatchItem]) -> Batch {
        let lengths: Vec<usize> = members.iter().map(|&i| items[i].length).collect();
        let padded_length = lengths.iter().copied().max().unwrap_or(0);
        Batch {
            members,
            lengths,
            padded_length,
        }
    }

    pub fn cells(&self) -> usize {
        self.members.len() * self.padded_length
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
    pub batch_size: usize,
    pub n_items: usize,
}

impl BatchPlan {
    pub fn padded_cells(&self) -> usize {
        self.batches.iter().map(Batch::cells).sum()
    }

    pub fn real_cells(&self) -> usize {
        self.batches.iter().flat_map(|b| &b.lengths).sum()
    }
}

fn check_batch_size(batch_size: usize) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    Ok(())
}

fn chunk(order: Vec<usize>, items: &[BatchItem], batch_size: usize) -> BatchPlan {
    BatchPlan {
        batches: order
            .chunks(batch_size)
            .map(|c| Batch::new(c.to_vec(), items))
            .collect(),
        batch_size,
        n_items: items.len(),
    }
}

/// Batches in input order, no sorting.
pub fn unsorted_batches(items: &[BatchItem], batch_size: usize) -> Result<BatchPlan> {
    check_batch_size(batch_size)?;
    Ok(chunk((0..items.len()).collect(), items, batch_size))
}

/// Sorts by length ascending (ties by pair key) and chunks consecutively.
///
/// With `bucket_size = Some(b)` the input is cut into consecutive buckets of
/// `b` items and sorting happens within each bucket only; `None` sorts
/// globally.
pub fn presort_batches(
    items: &[BatchItem],
    batch_size: usize,
    bucket_size: Option<usize>,
) -> Result<BatchPlan> {
    check_batch_size(batch_size)?;
    let bucket = match bucket_size {
        Some(0) => return Err(Error::Config("bucket_size must be at least 1".into())),
        Some(b) => b,
        None => items.len().max(1),
    };
    let mut order: Vec<usize> = (0..items.len()).collect();
    for part in order.chunks_mut(bucket) {
        part.sort_by(|&a, &b| {
            items[a]
                .length
                .cmp(&items[b].length)
                .then_with(|| items[a].key.cmp(&items[b].key))
        });
    }
    Ok(chunk(order, items, batch_size))
}

/// Fraction of padded cells that are padding; 0 for an empty plan.
pub fn padding_waste(plan: &BatchPlan) -> f64 {
    let padded = plan.padded_cells();
    if padded == 0 {
        return 0.0;
    }
    (padded - plan.real_cells()) as f64 / padded as f64
}

/// Scores one padded batch. Every row has the batch's padded length.
pub trait BatchScorer: Sync {
    fn score_batch(&self, batch: &[Vec<u32>]) -> std::result::Result<Vec<ProbVector>, String>;
}

/// Runs every batch and returns one result per item in original order.
/// Any failing batch aborts the run; the error names the lowest failing
/// batch index.
pub fn run_inference(
    plan: &BatchPlan,
    sequences: &[Vec<u32>],
    scorer: &dyn BatchScorer,
    exec: Exec,
) -> Result<Vec<ProbVector>> {
    if sequences.len() != plan.n_items {
        return Err(Error::Validation(format!(
            "plan covers {} items but {} sequences were given",
            plan.n_items,
            sequences.len()
        )));
    }
    let scored = par::try_map_range(exec, plan.batches.len(), |b| {
        let batch = &plan.batches[b];
        let padded: Vec<Vec<u32>> = batch
            .members
            .iter()
            .map(|&i| {
                let mut s = sequences[i].clone();
                s.resize(batch.padded_length.max(s.len()), PAD_ID);
                s
            })
            .collect();
        let out = scorer
            .score_batch(&padded)
            .map_err(|message| Error::Scorer { batch: b, message })?;
        if out.len() != batch.members.len() {
            return Err(Error::Scorer {
                batch: b,
                message: format!("{} results for {} inputs", out.len(), batch.members.len()),
            });
        }
        Ok(out)
    })?;
    let mut slots: Vec<Option<ProbVector>> = vec![None; plan.n_items];
    for (batch, out) in plan.batches.iter().zip(scored) {
        for (&i, p) in batch.members.iter().zip(out) {
            slots[i] = Some(p);
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::Validation(format!("item {i} is in no batch"))))
        .collect()
}

/// Deterministic stand-in for an encoder: a probability vector derived from
/// a hash of the unpadded tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateScorer;

impl SurrogateScorer {
    pub fn score_sequence(seq: &[u32]) -> ProbVector {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &t in seq.iter().filter(|&&t| t != PAD_ID) {
            h ^= t as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let w: [f64; 4] = std::array::from_fn(|k| 1.0 + ((h >> (16 * k)) & 0xffff) as f64);
        let s: f64 = w.iter().sum();
        let mut p = w.map(|x| x / s);
        // Absorb rounding into the last class so the vector validates.
        p[3] = 1.0 - p[0] - p[1] - p[2];
        ProbVector::new(p).expect("normalised weights form a valid distribution")
    }
}

impl BatchScorer for SurrogateScorer {
    fn score_batch(&self, batch: &[Vec<u32>]) -> std::result::Result<Vec<ProbVector>, String> {
        Ok(batch.iter().map(|s| Self::score_sequence(s)).collect())
    }
}

/// Padded-cell comparison of sorted and unsorted plans over one item list.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSimReport {
    pub items: usize,
    pub batch_size: usize,
    pub unsorted_cells: usize,
    pub sorted_cells: usize,
    pub unsorted_waste: f64,
    pub sorted_waste: f64,
}

impl BatchSimReport {
    pub fn to_text(&self) -> String {
        format!(
            "items\t{}\nbatch_size\t{}\nunsorted_cells\t{}\nsorted_cells\t{}\nunsorted_waste\t{:.6}\nsorted_waste\t{:.6}\ncell_ratio\t{:.6}\n",
            self.items,
            self.batch_size,
            self.unsorted_cells,
            self.sorted_cells,
            self.unsorted_waste,
            self.sorted_waste,
            if self.unsorted_cells == 0 {
                1.0
            } else {
                self.sorted_cells as f64 / self.unsorted_cells as f64
            }
        )
    }
}

pub fn simulate(
    items: &[BatchItem],
    batch_size: usize,
    bucket_size: Option<usize>,
) -> Result<BatchSimReport> {
    let unsorted = unsorted_batches(items, batch_size)?;
    let sorted = presort_batches(items, batch_size, bucket_size)?;
    Ok(BatchSimReport {
        items: items.len(),
        batch_size,
        unsorted_cells: unsorted.padded_cells(),
        sorted_cells: sorted.padded_cells(),
        unsorted_waste: padding_waste(&unsorted),
        sorted_waste: padding_waste(&sorted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Locale;
    use proptest::prelude::*;

    fn items(lengths: &[usize]) -> Vec<BatchItem> {
        lengths
            .iter()
            .enumerate()
            .map(|(i, &length)| BatchItem {
                key: PairKey::new("q", format!("p{i:04}")),
                length,
            })
            .collect()
    }

    fn product(id: &str, title: &str) -> Product {
        Product {
            product_id: id.into(),
            title: title.into(),
            brand: String::new(),
            color: String::new(),
            locale: Locale::Us,
            catalog_index: 0,
        }
    }

    #[test]
    fn surrogate_tokenizer_counts_words() {
        let t = WhitespaceTokenizer;
        assert_eq!(t.tokenize("red shoe").len(), 2);
        assert_eq!(t.tokenize("   "), vec![UNK_ID]);
        assert!(t.tokenize("a b c").iter().all(|&i| i > UNK_ID));
        assert_eq!(t.tokenize("shoe"), t.tokenize(" shoe "));
    }

    #[test]
    fn cache_round_trip_and_lookup() {
        let catalog =
            Catalog::from_products(vec![product("A", "red shoe"), product("B", "")]).unwrap();
        let cache = TokenCache::build(&catalog, &WhitespaceTokenizer, Exec::default()).unwrap();
        assert_eq!(cache.get("A").unwrap().token_length(), 2);
        assert_eq!(cache.get("B").unwrap().token_length(), 1);
        assert!(matches!(cache.get("Z"), Err(Error::MissingKey(_))));
        let back = TokenCache::from_bytes(&cache.to_bytes()).unwrap();
        assert_eq!(back, cache);
        assert_eq!(back.to_bytes(), cache.to_bytes());

        let mut bad = cache.to_bytes();
        bad[8] = 9;
        assert!(matches!(
            TokenCache::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        let full = cache.to_bytes();
        assert!(TokenCache::from_bytes(&full[..full.len() - 1]).is_err());
    }

    #[test]
    fn presort_example() {
        let plan = presort_batches(&items(&[10, 2, 8, 4]), 2, None).unwrap();
        let lens: Vec<Vec<usize>> = plan.batches.iter().map(|b| b.lengths.clone()).collect();
        assert_eq!(lens, vec![vec![2, 4], vec![8, 10]]);
        assert_eq!(
            plan.batches
                .iter()
                .map(|b| b.padded_length)
                .collect::<Vec<_>>(),
            vec![4, 10]
        );
        assert_eq!(plan.batches[0].members, vec![1, 3]);
    }

    #[test]
    fn single_batch_and_idempotence() {
        let plan = presort_batches(&items(&[3, 7, 1]), 10, None).unwrap();
        assert_eq!(plan.batches.len(), 1);
        assert_eq!(plan.batches[0].padded_length, 7);
        let sorted = items(&[1, 2, 2, 5]);
        assert_eq!(
            presort_batches(&sorted, 2, None).unwrap(),
            unsorted_batches(&sorted, 2).unwrap()
        );
        assert!(presort_batches(&sorted, 0, None).is_err());
    }

    #[test]
    fn waste_examples() {
        assert_eq!(
            padding_waste(&unsorted_batches(&items(&[5; 6]), 4).unwrap()),
            0.0
        );
        let w = padding_waste(&unsorted_batches(&items(&[1, 9]), 2).unwrap());
        assert!((w - 8.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn buckets_sort_locally() {
        let plan = presort_batches(&items(&[4, 3, 2, 1]), 1, Some(2)).unwrap();
        let order: Vec<usize> = plan.batches.iter().map(|b| b.members[0]).collect();
        assert_eq!(order, vec![1, 0, 3, 2]);
    }

    struct FailOn(usize);

    impl BatchScorer for FailOn {
        fn score_batch(&self, batch: &[Vec<u32>]) -> std::result::Result<Vec<ProbVector>, String> {
            if batch.iter().any(|s| s.len() == self.0) {
                Err("boom".into())
            } else {
                SurrogateScorer.score_batch(batch)
            }
        }
    }

    #[test]
    fn inference_restores_order_and_reports_batch() {
        let lengths = [5, 1, 3, 8, 2, 2, 7];
        let its = items(&lengths);
        let seqs: Vec<Vec<u32>> = lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| vec![i as u32 + 2; n])
            .collect();
        let direct: Vec<ProbVector> = seqs
            .iter()
            .map(|s| SurrogateScorer::score_sequence(s))
            .collect();
        for bs in [1, 3, 32] {
            let plan = presort_batches(&its, bs, None).unwrap();
            assert_eq!(
                run_inference(&plan, &seqs, &SurrogateScorer, Exec::default()).unwrap(),
                direct
            );
        }
        let plan = presort_batches(&its, 2, None).unwrap();
        match run_inference(&plan, &seqs, &FailOn(8), Exec::default()) {
            Err(Error::Scorer { batch, .. }) => assert_eq!(batch, 3),
            other => panic!("expected scorer error, got {other:?}"),
        }
    }

    #[test]
    fn short_tail_can_lose() {
        // The short last batch receives the longest pair.
        let its = items(&[1, 180, 1, 1, 1, 1, 170, 1, 1, 1]);
        let sorted = presort_batches(&its, 9, None).unwrap();
        let unsorted = unsorted_batches(&its, 9).unwrap();
        assert_eq!(sorted.padded_cells(), 9 * 170 + 180);
        assert_eq!(unsorted.padded_cells(), 9 * 180 + 1);
    }

    proptest! {
        #[test]
        fn presorted_waste_never_worse(lengths in prop::collection::vec(1usize..200, 1..120), bs in 1usize..16) {
            let its = items(&lengths);
            let sorted = presort_batches(&its, bs, None).unwrap();
            let unsorted = unsorted_batches(&its, bs).unwrap();
            // Guaranteed when every batch is full; see `short_tail_can_lose`.
            if lengths.len() % bs == 0 {
                prop_assert!(padding_waste(&sorted) <= padding_waste(&unsorted) + 1e-15);
                prop_assert!(sorted.padded_cells() <= unsorted.padded_cells());
            }
            let mut seen: Vec<usize> = sorted.batches.iter().flat_map(|b| b.members.clone()).collect();
            seen.sort();
            prop_assert_eq!(seen, (0..lengths.len()).collect::<Vec<_>>());
            prop_assert!(sorted.batches.iter().all(|b| b.members.len() <= bs));
        }
    }
}
