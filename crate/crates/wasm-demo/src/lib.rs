//! Browser demo. Each operation takes and returns JSON so the page only has
//! to deal with strings; the plain functions are also what the native tests
//! call.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use metastim::atomvec::NablaTriangle;
use metastim::labelspace::{fit_pca, label_matrix, Classifier, ClassifyMode, LabelPoint};
use metastim::patsearch::{pattern_search, Domain, MetaPoint, MetaSpace, SearchParams, TraceRow, Variable};

type Res<T> = Result<T, String>;

fn parse<'a, T: Deserialize<'a>>(json: &'a str) -> Res<T> {
    serde_json::from_str(json).map_err(|e| format!("bad input: {e}"))
}

fn render<T: Serialize>(v: &T) -> Res<String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct TriangleView {
    pub levels: Vec<Vec<Vec<f64>>>,
    /// Sum of each level; entry 1 telescopes to last minus first row.
    pub sums: Vec<Vec<f64>>,
}

/// `rows`: a JSON array of equal-length vectors, one per token.
pub fn nabla(rows_json: &str) -> Res<String> {
    let rows: Vec<Vec<f64>> = parse(rows_json)?;
    if rows.is_empty() || rows[0].is_empty() {
        return Err("need at least one non-empty row".into());
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err("rows differ in length".into());
    }
    let tri = NablaTriangle::from_rows(rows);
    let sums = (0..tri.depth()).filter_map(|j| tri.level_sum(j)).collect();
    render(&TriangleView {
        levels: tri.levels,
        sums,
    })
}

#[derive(Deserialize)]
pub struct LabelQuery {
    /// Category index of every training label, e.g. `[0, 1, 2, 2, 3]`.
    pub labels: Vec<usize>,
    pub d_out: usize,
    pub yhat: Vec<f64>,
}

#[derive(Serialize)]
pub struct LabelView {
    pub candidates: Vec<usize>,
    pub projected: Vec<Vec<f64>>,
    pub projected_nearest: usize,
    pub node_space_nearest: usize,
    pub reconstruction: Vec<f64>,
}

/// Fits the label projection, then classifies `yhat` both ways.
pub fn label_space(query_json: &str) -> Res<String> {
    let q: LabelQuery = parse(query_json)?;
    let nodes = q.labels.iter().max().map_or(0, |m| m + 1);
    let model = fit_pca(&label_matrix(&q.labels, nodes), q.d_out).map_err(|e| e.to_string())?;
    let classifier = Classifier::new(model.clone()).map_err(|e| e.to_string())?;
    let y = LabelPoint(q.yhat);
    let err = |e: metastim::Error| e.to_string();
    render(&LabelView {
        candidates: classifier.candidates().to_vec(),
        projected: classifier.projected_candidates().iter().map(|p| p.0.clone()).collect(),
        projected_nearest: classifier.nearest(&y, ClassifyMode::Projected).map_err(err)?,
        node_space_nearest: classifier.nearest(&y, ClassifyMode::NodeSpace).map_err(err)?,
        reconstruction: model.inverse_project(&y).map_err(err)?,
    })
}

#[derive(Deserialize)]
pub struct SearchQuery {
    /// Lattice size per axis.
    pub size: i64,
    /// Minimum of the quadratic bowl, in lattice coordinates.
    pub target: [f64; 2],
    pub seed: u64,
}

#[derive(Serialize)]
pub struct SearchView {
    pub best: Vec<i64>,
    pub best_fitness: f64,
    pub base_fitness: f64,
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
}

/// Pattern search on a 2-D lattice with a quadratic bowl around `target`.
pub fn search(query_json: &str) -> Res<String> {
    let q: SearchQuery = parse(query_json)?;
    if !(2..=200).contains(&q.size) {
        return Err("size must be in 2..=200".into());
    }
    let axis = |name: &str| Variable {
        name: name.into(),
        domain: Domain::Int {
            min: 0,
            max: q.size - 1,
            step: 1,
        },
    };
    let space = MetaSpace {
        variables: vec![axis("x"), axis("y")],
    };
    let [tx, ty] = q.target;
    let f = |p: &MetaPoint| (p.0[0] as f64 - tx).powi(2) + (p.0[1] as f64 - ty).powi(2);
    let res = pattern_search(&space, f, &SearchParams::default(), q.seed).map_err(|e| e.to_string())?;
    render(&SearchView {
        best: res.best.0,
        best_fitness: res.best_fitness,
        base_fitness: res.base_fitness,
        evaluations: res.evaluations,
        trace: res.trace.rows,
    })
}

#[wasm_bindgen(js_name = nablaTriangle)]
pub fn nabla_triangle(rows_json: &str) -> Result<String, JsValue> {
    nabla(rows_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = classifyLabel)]
pub fn classify_label(query_json: &str) -> Result<String, JsValue> {
    label_space(query_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = patternSearch)]
pub fn pattern_search_trace(query_json: &str) -> Result<String, JsValue> {
    search(query_json).map_err(|e| JsValue::from_str(&e))
}
