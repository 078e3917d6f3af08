//! Text serialization of a trained [`TransferModel`].
//!
//! The document is JSON. Exemplar data is not stored; scales are keyed by
//! exemplar id and resolved against a corpus at load time, and the sha256 of
//! the corpus manifest guards against loading against the wrong corpus.
//! Reals are stored as strings with 17 significant digits so that every
//! `f64` round-trips exactly.
//!
//! ```text
//! {
//!   "format": "sumtransfer-model", "version": 1,
//!   "corpus_sha256": "<hex>",
//!   "similarity": {"kind": "rbf", "sigma": "1.0000000000000000e0"},
//!   "granularity": "frame" | "subshot-mean" | "subshot-max",
//!   "category_mode": "none" | "hard" | "soft",
//!   "sequential": null | <segment length>,
//!   "alpha": {"<id>": "<real>", ...},                               // mode none
//!   "categories": {"<name>": {"alpha": {...}, "metric": [...] | null}} // hard, soft
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::similarity::{Metric, Similarity};
use crate::transfer::{
    CategoryMode, CategoryWeights, Exemplar, Granularity, ModelParams, SubshotSimilarity,
    TransferModel, Weights,
};

pub const MODEL_FORMAT: &str = "sumtransfer-model";
pub const MODEL_VERSION: u64 = 1;

fn real(x: f64) -> Value {
    Value::String(format!("{x:.16e}"))
}

fn reals(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| real(x)).collect())
}

fn alpha_map(exemplars: &[Exemplar], alphas: &[f64]) -> Value {
    Value::Object(
        exemplars
            .iter()
            .zip(alphas)
            .map(|(e, &a)| (e.id.clone(), real(a)))
            .collect(),
    )
}

fn similarity_json(sim: &Similarity) -> Value {
    match sim {
        Similarity::Dot => json!({"kind": "dot"}),
        Similarity::Rbf { sigma } => json!({"kind": "rbf", "sigma": real(*sigma)}),
        Similarity::Mahalanobis(Metric::Diagonal(d)) => {
            json!({"kind": "mahalanobis", "diagonal": reals(d)})
        }
        Similarity::Mahalanobis(Metric::Full(m)) => {
            let rows: Vec<Value> = m
                .row_iter()
                .map(|r| reals(&r.iter().copied().collect::<Vec<_>>()))
                .collect();
            json!({"kind": "mahalanobis", "full": rows})
        }
    }
}

pub fn granularity_name(g: Granularity) -> &'static str {
    match g {
        Granularity::Frame => "frame",
        Granularity::Subshot(SubshotSimilarity::Mean) => "subshot-mean",
        Granularity::Subshot(SubshotSimilarity::Max) => "subshot-max",
    }
}

pub fn parse_granularity(s: &str) -> Result<Granularity> {
    match s {
        "frame" => Ok(Granularity::Frame),
        "subshot-mean" => Ok(Granularity::Subshot(SubshotSimilarity::Mean)),
        "subshot-max" => Ok(Granularity::Subshot(SubshotSimilarity::Max)),
        other => Err(Error::Model(format!("unknown granularity {other:?}"))),
    }
}

pub fn parse_category_mode(s: &str) -> Result<CategoryMode> {
    match s {
        "none" => Ok(CategoryMode::None),
        "hard" => Ok(CategoryMode::Hard),
        "soft" => Ok(CategoryMode::Soft),
        other => Err(Error::Model(format!("unknown category mode {other:?}"))),
    }
}

/// Serializes `model`; `corpus_sha256` identifies the manifest it was trained on.
pub fn model_to_string(model: &TransferModel, corpus_sha256: &str) -> String {
    let p = model.params();
    let ex = model.exemplars();
    let mut doc = Map::new();
    doc.insert("format".into(), json!(MODEL_FORMAT));
    doc.insert("version".into(), json!(MODEL_VERSION));
    doc.insert("corpus_sha256".into(), json!(corpus_sha256));
    doc.insert("similarity".into(), similarity_json(&p.similarity));
    doc.insert("granularity".into(), json!(granularity_name(p.granularity)));
    doc.insert("category_mode".into(), json!(p.mode.name()));
    doc.insert("sequential".into(), json!(p.sequential));
    match &p.weights {
        Weights::Shared(a) => {
            doc.insert("alpha".into(), alpha_map(ex, a));
        }
        Weights::PerCategory(map) => {
            let cats: Map<String, Value> = map
                .iter()
                .map(|(c, w)| {
                    let metric = w.metric.as_deref().map_or(Value::Null, reals);
                    (c.clone(), json!({"alpha": alpha_map(ex, &w.alphas), "metric": metric}))
                })
                .collect();
            doc.insert("categories".into(), Value::Object(cats));
        }
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(doc)).expect("serializable");
    s.push('\n');
    s
}

fn field<'v>(obj: &'v Value, key: &str) -> Result<&'v Value> {
    obj.get(key)
        .ok_or_else(|| Error::Model(format!("missing field {key:?}")))
}

fn str_field<'v>(obj: &'v Value, key: &str) -> Result<&'v str> {
    field(obj, key)?
        .as_str()
        .ok_or_else(|| Error::Model(format!("field {key:?} must be a string")))
}

fn parse_real(v: &Value, what: &str) -> Result<f64> {
    let s = v
        .as_str()
        .ok_or_else(|| Error::Model(format!("{what}: reals are stored as strings")))?;
    s.parse::<f64>()
        .map_err(|_| Error::Model(format!("{what}: cannot parse {s:?} as a real")))
}

fn parse_reals(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::Model(format!("{what} must be a list")))?
        .iter()
        .map(|x| parse_real(x, what))
        .collect()
}

fn parse_similarity(v: &Value) -> Result<Similarity> {
    match str_field(v, "kind")? {
        "dot" => Ok(Similarity::Dot),
        "rbf" => Ok(Similarity::Rbf {
            sigma: parse_real(field(v, "sigma")?, "sigma")?,
        }),
        "mahalanobis" => {
            if let Some(d) = v.get("diagonal") {
                return Ok(Similarity::Mahalanobis(Metric::Diagonal(parse_reals(
                    d, "diagonal",
                )?)));
            }
            let rows = field(v, "full")?
                .as_array()
                .ok_or_else(|| Error::Model("full metric must be a list of rows".into()))?
                .iter()
                .map(|r| parse_reals(r, "full metric row"))
                .collect::<Result<Vec<_>>>()?;
            let d = rows.len();
            if rows.iter().any(|r| r.len() != d) {
                return Err(Error::Model("full metric must be square".into()));
            }
            Ok(Similarity::Mahalanobis(Metric::Full(DMatrix::from_fn(
                d,
                d,
                |i, j| rows[i][j],
            ))))
        }
        other => Err(Error::Model(format!("unknown similarity kind {other:?}"))),
    }
}

fn parse_alphas(v: &Value, exemplars: &[Exemplar], what: &str) -> Result<Vec<f64>> {
    let map = v
        .as_object()
        .ok_or_else(|| Error::Model(format!("{what}: alpha must map exemplar ids to reals")))?;
    if let Some(extra) = map.keys().find(|k| !exemplars.iter().any(|e| &e.id == *k)) {
        return Err(Error::Model(format!(
            "{what}: exemplar {extra:?} is not in the corpus"
        )));
    }
    exemplars
        .iter()
        .map(|e| {
            let a = map.get(&e.id).ok_or_else(|| {
                Error::Model(format!("{what}: no scale for exemplar {:?}", e.id))
            })?;
            parse_real(a, what)
        })
        .collect()
}

/// Ids of the exemplars a model document holds scales for.
pub fn model_exemplar_ids(text: &str) -> Result<BTreeSet<String>> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::Model(format!("not valid JSON: {e}")))?;
    let keys = |v: &Value, what: &str| -> Result<Vec<String>> {
        Ok(v.as_object()
            .ok_or_else(|| Error::Model(format!("{what}: alpha must map exemplar ids to reals")))?
            .keys()
            .cloned()
            .collect())
    };
    let mut ids = BTreeSet::new();
    match parse_category_mode(str_field(&doc, "category_mode")?)? {
        CategoryMode::None => ids.extend(keys(field(&doc, "alpha")?, "alpha")?),
        CategoryMode::Hard | CategoryMode::Soft => {
            let cats = field(&doc, "categories")?
                .as_object()
                .ok_or_else(|| Error::Model("categories must be an object".into()))?;
            for (c, w) in cats {
                ids.extend(keys(field(w, "alpha")?, c)?);
            }
        }
    }
    Ok(ids)
}

/// Parses a model document and binds it to `exemplars` (normally the corpus it
/// was trained on). When `expected_sha256` is given it must match the stored hash.
pub fn model_from_str(
    text: &str,
    exemplars: Vec<Exemplar>,
    expected_sha256: Option<&str>,
) -> Result<TransferModel> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| Error::Model(format!("not valid JSON: {e}")))?;
    if str_field(&doc, "format")? != MODEL_FORMAT {
        return Err(Error::Model("not a model file".into()));
    }
    let version = field(&doc, "version")?.as_u64();
    if version != Some(MODEL_VERSION) {
        return Err(Error::Model(format!("unsupported version {version:?}")));
    }
    let stored = str_field(&doc, "corpus_sha256")?;
    if let Some(expected) = expected_sha256 {
        if stored != expected {
            return Err(Error::Model(format!(
                "model was trained on corpus {stored}, but the given corpus is {expected}"
            )));
        }
    }
    let similarity = parse_similarity(field(&doc, "similarity")?)?;
    let granularity = parse_granularity(str_field(&doc, "granularity")?)?;
    let mode = parse_category_mode(str_field(&doc, "category_mode")?)?;
    let sequential = match field(&doc, "sequential")? {
        Value::Null => None,
        v => Some(
            v.as_u64()
                .ok_or_else(|| Error::Model("sequential must be null or a segment length".into()))?
                as usize,
        ),
    };
    let weights = match mode {
        CategoryMode::None => Weights::Shared(parse_alphas(field(&doc, "alpha")?, &exemplars, "alpha")?),
        CategoryMode::Hard | CategoryMode::Soft => {
            let cats = field(&doc, "categories")?
                .as_object()
                .ok_or_else(|| Error::Model("categories must be an object".into()))?;
            let mut map = BTreeMap::new();
            for (c, w) in cats {
                let alphas = parse_alphas(field(w, "alpha")?, &exemplars, c)?;
                let metric = match w.get("metric") {
                    None | Some(Value::Null) => None,
                    Some(m) => Some(parse_reals(m, "metric")?),
                };
                map.insert(c.clone(), CategoryWeights { alphas, metric });
            }
            Weights::PerCategory(map)
        }
    };
    TransferModel::new(
        exemplars,
        ModelParams {
            similarity,
            granularity,
            mode,
            weights,
            sequential,
        },
    )
}

pub fn save_model(path: &Path, model: &TransferModel, corpus_sha256: &str) -> Result<()> {
    std::fs::write(path, model_to_string(model, corpus_sha256)).map_err(|e| Error::io(path, e))
}

pub fn load_model(
    path: &Path,
    exemplars: Vec<Exemplar>,
    expected_sha256: Option<&str>,
) -> Result<TransferModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text, exemplars, expected_sha256)
}
