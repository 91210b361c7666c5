//! Text model format. Reals are written in Rust's shortest round-trip
//! notation, so a reloaded model predicts bit-identically. Layout is
//! documented in `docs/model_format.md`.

use std::path::Path;

use super::tree::{Node, Tree};
use super::{GbdtModel, GbdtParams, Objective};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "esci-gbdt";

pub fn model_to_text(model: &GbdtModel) -> Result<String> {
    use std::fmt::Write;
    let mut s = String::new();
    let p = &model.params;
    let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(s, "objective {}", model.objective);
    let _ = writeln!(
        s,
        "params num_rounds={} max_depth={} min_samples_leaf={} learning_rate={} l2_leaf_regularization={} seed={}",
        p.num_rounds, p.max_depth, p.min_samples_leaf, p.learning_rate, p.l2_leaf_regularization, p.seed
    );
    let base: Vec<String> = model.base_score.iter().map(f64::to_string).collect();
    let _ = writeln!(s, "base_score {}", base.join(" "));
    let _ = writeln!(s, "features {}", model.feature_schema.len());
    for name in &model.feature_schema {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!(
                "feature name `{name}` cannot be stored"
            )));
        }
        let _ = writeln!(s, "{name}");
    }
    let _ = writeln!(s, "trees {}", model.trees.len());
    for tree in &model.trees {
        let _ = writeln!(s, "tree {}", tree.nodes().len());
        for node in tree.nodes() {
            match *node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let _ = writeln!(s, "S {feature} {threshold} {left} {right}");
                }
                Node::Leaf { value } => {
                    let _ = writeln!(s, "L {value}");
                }
            }
        }
    }
    s.push_str("end\n");
    Ok(s)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Format(format!("truncated model: expected {what}")))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next_line(key)?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok((n, rest)),
            _ => Err(Error::Format(format!(
                "line {n}: expected `{key} ...`, got `{line}`"
            ))),
        }
    }
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| Error::Format(format!("line {line}: cannot parse `{s}`: {e}")))
}

pub fn model_from_text(text: &str) -> Result<GbdtModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (n, header) = lines.next_line("header")?;
    let version = match header.split_once(' ') {
        Some((MAGIC, v)) => num::<u32>(n, v)?,
        _ => {
            return Err(Error::Format(format!(
                "not a model file (header `{header}`)"
            )))
        }
    };
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let (n, obj) = lines.keyed("objective")?;
    let objective: Objective = obj
        .parse()
        .map_err(|e| Error::Format(format!("line {n}: {e}")))?;

    let (n, rest) = lines.keyed("params")?;
    let mut params = GbdtParams::default();
    for kv in rest.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {n}: bad parameter `{kv}`")))?;
        match k {
            "num_rounds" => params.num_rounds = num(n, v)?,
            "max_depth" => params.max_depth = num(n, v)?,
            "min_samples_leaf" => params.min_samples_leaf = num(n, v)?,
            "learning_rate" => params.learning_rate = num(n, v)?,
            "l2_leaf_regularization" => params.l2_leaf_regularization = num(n, v)?,
            "seed" => params.seed = num(n, v)?,
            other => {
                return Err(Error::Format(format!(
                    "line {n}: unknown parameter `{other}`"
                )))
            }
        }
    }

    let (n, rest) = lines.keyed("base_score")?;
    let base_score: Vec<f64> = rest
        .split_whitespace()
        .map(|v| num(n, v))
        .collect::<Result<_>>()?;
    if base_score.len() != objective.num_outputs() {
        return Err(Error::Format(format!(
            "line {n}: {} base scores for a {objective} model",
            base_score.len()
        )));
    }

    let (n, count) = lines.keyed("features")?;
    let n_features: usize = num(n, count)?;
    let mut feature_schema = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        let (_, name) = lines.next_line("feature name")?;
        feature_schema.push(name.to_string());
    }

    let (n, count) = lines.keyed("trees")?;
    let n_trees: usize = num(n, count)?;
    if !n_trees.is_multiple_of(objective.num_outputs()) {
        return Err(Error::Format(format!(
            "line {n}: {n_trees} trees is not a multiple of {}",
            objective.num_outputs()
        )));
    }
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let (n, count) = lines.keyed("tree")?;
        let n_nodes: usize = num(n, count)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let (n, line) = lines.next_line("tree node")?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let node = match parts.as_slice() {
                ["S", f, t, l, r] => {
                    let feature: u32 = num(n, f)?;
                    if feature as usize >= n_features {
                        return Err(Error::Format(format!(
                            "line {n}: feature index {feature} out of range"
                        )));
                    }
                    Node::Split {
                        feature,
                        threshold: num(n, t)?,
                        left: num(n, l)?,
                        right: num(n, r)?,
                    }
                }
                ["L", v] => Node::Leaf { value: num(n, v)? },
                _ => return Err(Error::Format(format!("line {n}: bad node `{line}`"))),
            };
            nodes.push(node);
        }
        trees.push(Tree::from_nodes(nodes)?);
    }
    let (_, end) = lines.next_line("end")?;
    if end != "end" {
        return Err(Error::Format(format!("expected `end`, got `{end}`")));
    }
    Ok(GbdtModel {
        objective,
        trees,
        base_score,
        feature_schema,
        params,
    })
}

pub fn save_model(model: &GbdtModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_text(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GbdtModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PairKey;
    use crate::features::FeatureMatrix;
    use crate::gbdt::train;

    fn model() -> (GbdtModel, FeatureMatrix) {
        let rows: Vec<f64> = (0..60)
            .flat_map(|i| [(i as f64 * 0.37).sin(), (i % 7) as f64 / 3.0])
            .collect();
        let m = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            (0..60).map(|i| PairKey::new("q", i.to_string())).collect(),
            rows,
        )
        .unwrap();
        let y: Vec<usize> = (0..60).map(|i| (i * 7 + i / 5) % 4).collect();
        let params = GbdtParams {
            num_rounds: 5,
            max_depth: 3,
            min_samples_leaf: 2,
            ..GbdtParams::default()
        };
        (train(&m, &y, Objective::Multiclass, &params).unwrap(), m)
    }

    #[test]
    fn text_round_trip_is_exact() {
        let (m, x) = model();
        let text = model_to_text(&m).unwrap();
        let back = model_from_text(&text).unwrap();
        assert_eq!(back.trees, m.trees);
        assert_eq!(back.base_score, m.base_score);
        assert_eq!(model_to_text(&back).unwrap(), text);
        assert_eq!(
            back.predict_margins(&x).unwrap(),
            m.predict_margins(&x).unwrap()
        );
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let (m, _) = model();
        let text = model_to_text(&m).unwrap();
        let bad_header = text.replacen("esci-gbdt 1", "esci-gbdx 1", 1);
        assert!(matches!(
            model_from_text(&bad_header),
            Err(Error::Format(_))
        ));
        let bad_version = text.replacen("esci-gbdt 1", "esci-gbdt 7", 1);
        assert!(matches!(
            model_from_text(&bad_version),
            Err(Error::Format(_))
        ));
        let truncated = &text[..text.len() / 2];
        assert!(matches!(model_from_text(truncated), Err(Error::Format(_))));
        assert!(matches!(model_from_text(""), Err(Error::Format(_))));
    }
}
