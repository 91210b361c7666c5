//! Task outputs from class probabilities: expected-gain ranking (T1), argmax
//! labels (T2) and thresholded substitute flags (T3).

use std::collections::BTreeMap;
use std::path::Path;

use csv::{ReaderBuilder, WriterBuilder};

use crate::data::{EsciLabel, PairKey, ProbVector, QueryGroup, NUM_CLASSES};
use crate::error::{Error, Result};

pub const DEFAULT_T3_THRESHOLD: f64 = 0.5;

/// `p_e + 0.1 p_s + 0.01 p_c`: the gain-weighted class probability.
pub fn expected_gain(p: &ProbVector) -> f64 {
    EsciLabel::ALL.iter().map(|l| l.gain() * p.get(*l)).sum()
}

/// Componentwise unweighted mean.
pub fn ensemble_average(vectors: &[ProbVector]) -> Result<ProbVector> {
    if vectors.is_empty() {
        return Err(Error::Validation(
            "cannot average zero probability vectors".into(),
        ));
    }
    let n = vectors.len() as f64;
    let mut acc = [0.0; NUM_CLASSES];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.as_array()) {
            *a += x;
        }
    }
    ProbVector::new(acc.map(|a| a / n))
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Validation("cannot average zero values".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Products of one query ordered by non-increasing score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub product_ids: Vec<String>,
    pub scores: Vec<f64>,
}

/// Sorts by descending score, ties by ascending product id.
pub fn rank_products(query_id: &str, product_ids: &[String], scores: &[f64]) -> Result<RankedList> {
    if product_ids.len() != scores.len() {
        return Err(Error::Validation(format!(
            "{} scores for {} products of query `{query_id}`",
            scores.len(),
            product_ids.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite score for product `{}` of query `{query_id}`",
            product_ids[i]
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| product_ids[a].cmp(&product_ids[b]))
    });
    Ok(RankedList {
        query_id: query_id.to_string(),
        product_ids: order.iter().map(|&i| product_ids[i].clone()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
    })
}

pub fn rank_group(group: &QueryGroup, scores: &[f64]) -> Result<RankedList> {
    let ids: Vec<String> = group.members.iter().map(|m| m.product_id.clone()).collect();
    rank_products(&group.query_id, &ids, scores)
}

/// Argmax class; ties go to the higher-gain class.
pub fn classify_t2(p: &ProbVector) -> EsciLabel {
    argmax_label(p.as_array())
}

/// Argmax over pre-softmax margins, same tie rule as [`classify_t2`].
pub fn classify_margins(margins: &[f64; NUM_CLASSES]) -> EsciLabel {
    argmax_label(margins)
}

fn argmax_label(xs: &[f64; NUM_CLASSES]) -> EsciLabel {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    EsciLabel::ALL[best]
}

/// Substitute iff `p >= threshold`.
pub fn classify_t3(p_substitute: f64, threshold: f64) -> bool {
    p_substitute >= threshold
}

/// Threshold maximising Micro-F1 over the observed probabilities. Candidates
/// are every observed value plus one above the maximum (predict nothing);
/// ties keep the smallest threshold.
pub fn sweep_t3_threshold(probs: &[f64], truth: &[bool]) -> Result<(f64, f64)> {
    if probs.is_empty() || probs.len() != truth.len() {
        return Err(Error::Validation(format!(
            "threshold sweep needs equal non-empty inputs, got {} and {}",
            probs.len(),
            truth.len()
        )));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let n = probs.len() as f64;
    // Threshold above everything: all predicted negative.
    let positives = truth.iter().filter(|t| **t).count();
    let mut correct_if_all_negative = (probs.len() - positives) as f64;
    let mut best = (f64::INFINITY, correct_if_all_negative / n);
    // Walk thresholds downward: lowering past a value flips it to positive.
    let mut i = order.len();
    while i > 0 {
        let v = probs[order[i - 1]];
        while i > 0 && probs[order[i - 1]] == v {
            let t = truth[order[i - 1]];
            correct_if_all_negative += if t { 1.0 } else { -1.0 };
            i -= 1;
        }
        let acc = correct_if_all_negative / n;
        if acc >= best.1 {
            best = (v, acc);
        }
    }
    Ok(best)
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = WriterBuilder::new()
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let mut rdr = ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let found = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let idx: Vec<usize> = header
        .iter()
        .map(|h| {
            found
                .iter()
                .position(|f| f == *h)
                .ok_or_else(|| Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: h.to_string(),
                })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push((
            line,
            idx.iter()
                .map(|&i| rec.get(i).unwrap_or("").to_string())
                .collect(),
        ));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(path: &Path, row: u64, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e: T::Err| Error::Parse {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    })
}

/// `query_id,rank,product_id,score`, ranks 1-based.
pub fn write_rankings(path: impl AsRef<Path>, lists: &[RankedList]) -> Result<()> {
    let rows = lists.iter().flat_map(|l| {
        l.product_ids
            .iter()
            .zip(&l.scores)
            .enumerate()
            .map(|(r, (p, s))| {
                vec![
                    l.query_id.clone(),
                    (r + 1).to_string(),
                    p.clone(),
                    s.to_string(),
                ]
            })
    });
    write_rows(
        path.as_ref(),
        &["query_id", "rank", "product_id", "score"],
        rows,
    )
}

pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let mut by_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (line, r) in read_rows(path, &["query_id", "rank", "product_id", "score"])? {
        let rank: usize = parse(path, line, &r[1])?;
        let score: f64 = parse(path, line, &r[3])?;
        by_query
            .entry(r[0].clone())
            .or_default()
            .push((rank, r[2].clone(), score));
    }
    Ok(by_query
        .into_iter()
        .map(|(q, mut items)| {
            items.sort_by_key(|(r, _, _)| *r);
            RankedList {
                query_id: q,
                product_ids: items.iter().map(|(_, p, _)| p.clone()).collect(),
                scores: items.iter().map(|(_, _, s)| *s).collect(),
            }
        })
        .collect())
}

/// `query_id,product_id,esci_label`.
pub fn write_labels(path: impl AsRef<Path>, labels: &[(PairKey, EsciLabel)]) -> Result<()> {
    let rows = labels.iter().map(|(k, l)| {
        vec![
            k.query_id.clone(),
            k.product_id.clone(),
            l.code().to_string(),
        ]
    });
    write_rows(
        path.as_ref(),
        &["query_id", "product_id", "esci_label"],
        rows,
    )
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(PairKey, EsciLabel)>> {
    let path = path.as_ref();
    read_rows(path, &["query_id", "product_id", "esci_label"])?
        .into_iter()
        .map(|(line, r)| {
            let label: EsciLabel = parse(path, line, &r[2])?;
            Ok((PairKey::new(&r[0], &r[1]), label))
        })
        .collect()
}

/// `query_id,product_id,substitute` with 1 for substitute, 0 otherwise.
pub fn write_substitutes(path: impl AsRef<Path>, flags: &[(PairKey, bool)]) -> Result<()> {
    let rows = flags.iter().map(|(k, f)| {
        vec![
            k.query_id.clone(),
            k.product_id.clone(),
            if *f { "1" } else { "0" }.to_string(),
        ]
    });
    write_rows(
        path.as_ref(),
        &["query_id", "product_id", "substitute"],
        rows,
    )
}

pub fn read_substitutes(path: impl AsRef<Path>) -> Result<Vec<(PairKey, bool)>> {
    let path = path.as_ref();
    read_rows(path, &["query_id", "product_id", "substitute"])?
        .into_iter()
        .map(|(line, r)| {
            let flag = match r[2].trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row: line,
                        message: format!("substitute flag must be 0 or 1, got `{other}`"),
                    })
                }
            };
            Ok((PairKey::new(&r[0], &r[1]), flag))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(p: [f64; 4]) -> ProbVector {
        ProbVector::new(p).unwrap()
    }

    #[test]
    fn expected_gain_examples() {
        assert_eq!(expected_gain(&pv([1.0, 0.0, 0.0, 0.0])), 1.0);
        assert_eq!(expected_gain(&pv([0.0, 1.0, 0.0, 0.0])), 0.1);
        assert!((expected_gain(&pv([0.5, 0.3, 0.2, 0.0])) - 0.532).abs() < 1e-15);
    }

    #[test]
    fn averaging() {
        let a = pv([1.0, 0.0, 0.0, 0.0]);
        let b = pv([0.0, 1.0, 0.0, 0.0]);
        assert_eq!(ensemble_average(&[a, b]).unwrap(), pv([0.5, 0.5, 0.0, 0.0]));
        assert_eq!(ensemble_average(&[a]).unwrap(), a);
        let v = pv([0.4, 0.3, 0.2, 0.1]);
        let six = ensemble_average(&[v; 6]).unwrap();
        for (x, y) in six.as_array().iter().zip(v.as_array()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(ensemble_average(&[]).is_err());
    }

    #[test]
    fn ranking_order_and_ties() {
        let ids = vec!["B".to_string(), "A".to_string()];
        let r = rank_products("q", &ids, &[0.1, 0.9]).unwrap();
        assert_eq!(r.product_ids, vec!["A", "B"]);
        let ids: Vec<String> = ["C", "A", "B"].iter().map(|s| s.to_string()).collect();
        let r = rank_products("q", &ids, &[0.5; 3]).unwrap();
        assert_eq!(r.product_ids, vec!["A", "B", "C"]);
        assert!(rank_products("q", &ids, &[0.5, f64::NAN, 0.1]).is_err());
    }

    #[test]
    fn t2_argmax_and_ties() {
        assert_eq!(classify_t2(&pv([0.7, 0.1, 0.1, 0.1])), EsciLabel::Exact);
        assert_eq!(classify_t2(&pv([0.25; 4])), EsciLabel::Exact);
        assert_eq!(
            classify_t2(&pv([0.1, 0.4, 0.1, 0.4])),
            EsciLabel::Substitute
        );
        assert_eq!(
            classify_t2(&pv([0.1, 0.1, 0.1, 0.7])),
            EsciLabel::Irrelevant
        );
    }

    #[test]
    fn t3_boundary_inclusive() {
        assert!(classify_t3(0.9, 0.5));
        assert!(classify_t3(0.5, 0.5));
        assert!(!classify_t3(0.49, 0.5));
    }

    #[test]
    fn sweep_matches_brute_force() {
        let probs = [0.1, 0.4, 0.35, 0.8, 0.7, 0.2, 0.4];
        let truth = [false, true, false, true, false, false, true];
        let (t, f1) = sweep_t3_threshold(&probs, &truth).unwrap();
        let acc = |t: f64| {
            probs
                .iter()
                .zip(&truth)
                .filter(|(p, y)| classify_t3(**p, t) == **y)
                .count() as f64
                / 7.0
        };
        let mut best = (f64::INFINITY, acc(f64::INFINITY));
        let mut cands = probs.to_vec();
        cands.sort_by(|a, b| b.total_cmp(a));
        for c in cands {
            if acc(c) >= best.1 {
                best = (c, acc(c));
            }
        }
        assert_eq!((t, f1), best);
        assert!((acc(t) - f1).abs() < 1e-15);
    }

    #[test]
    fn output_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = ["x,1", "y"].iter().map(|s| s.to_string()).collect();
        let lists = vec![rank_products("q1", &ids, &[0.25, 0.75]).unwrap()];
        let p = dir.path().join("r.csv");
        write_rankings(&p, &lists).unwrap();
        assert_eq!(read_rankings(&p).unwrap(), lists);

        let labels = vec![(PairKey::new("q", "A"), EsciLabel::Complement)];
        write_labels(dir.path().join("l.csv"), &labels).unwrap();
        assert_eq!(read_labels(dir.path().join("l.csv")).unwrap(), labels);

        let flags = vec![
            (PairKey::new("q", "A"), true),
            (PairKey::new("q", "B"), false),
        ];
        write_substitutes(dir.path().join("s.csv"), &flags).unwrap();
        assert_eq!(read_substitutes(dir.path().join("s.csv")).unwrap(), flags);
    }

    fn prob_vector() -> impl Strategy<Value = ProbVector> {
        prop::array::uniform4(0.0f64..1.0).prop_filter_map("nonzero mass", |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-6).then(|| ProbVector::new(raw.map(|x| x / s)).unwrap())
        })
    }

    proptest! {
        #[test]
        fn gain_is_linear_under_averaging(vs in prop::collection::vec(prob_vector(), 1..12)) {
            let avg = ensemble_average(&vs).unwrap();
            let gains: Vec<f64> = vs.iter().map(expected_gain).collect();
            prop_assert!((expected_gain(&avg) - mean(&gains).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn ranking_is_permutation_and_idempotent(scores in prop::collection::vec(0.0f64..1.0, 1..30)) {
            let ids: Vec<String> = (0..scores.len()).map(|i| format!("P{i:03}")).collect();
            let r = rank_products("q", &ids, &scores).unwrap();
            let mut sorted = r.product_ids.clone();
            sorted.sort();
            prop_assert_eq!(&sorted, &ids);
            prop_assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));
            let again = rank_products("q", &r.product_ids, &r.scores).unwrap();
            prop_assert_eq!(again, r);
        }

        #[test]
        fn t2_invariant_to_margin_scaling(m in prop::array::uniform4(-5.0f64..5.0), c in 0.01f64..100.0) {
            prop_assert_eq!(classify_margins(&m), classify_margins(&m.map(|x| x * c)));
            let p = crate::gbdt::softmax(&m);
            let pv = ProbVector::new([p[0], p[1], p[2], p[3]]).unwrap();
            prop_assert_eq!(classify_t2(&pv), classify_margins(&m));
        }
    }
}
