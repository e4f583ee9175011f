//! System documents.
//!
//! ```json
//! { "kind": "lti", "A": [[-1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]] }
//! { "kind": "sum",      "children": [ <doc>, ... ] }
//! { "kind": "cascade",  "children": [ <doc>, ... ] }     // first child sees the input
//! { "kind": "scale",    "factor": 2.0, "child": <doc> }
//! { "kind": "identity", "dim": 1, "gain": 0.5 }
//! { "kind": "tvgain",   "dim": 1, "profile": { "type": "affine", "offset": 1, "slope": 0.5 } }
//! { "kind": "static",   "dim": 1, "map": { "type": "saturation", "limit": 1 } }
//! { "kind": "feedback", "forward": <doc>, "backward": <doc> }
//! ```
//!
//! Unknown keys are rejected; every error names the JSON path it came from.

use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use super::expr::{GainProfile, OperatorExpr, StaticMap};
use super::StateSpace;
use crate::error::{Error, Result};

pub fn parse_system(text: &str) -> Result<OperatorExpr> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
    system_from_value(&v, "$")
}

pub fn system_from_value(v: &Value, path: &str) -> Result<OperatorExpr> {
    let obj = as_object(v, path)?;
    let kind = get_str(obj, "kind", path)?;
    let result = match kind {
        "lti" => {
            allow_keys(obj, &["kind", "A", "B", "C", "D"], path)?;
            let a = matrix(obj, "A", path, None)?;
            let b = matrix(obj, "B", path, Some(a.nrows()))?;
            let c = matrix(obj, "C", path, None)?;
            let d = matrix(obj, "D", path, None)?;
            // allow empty-state static systems written with A = [], B = [], C = [[],..]
            let c = if a.nrows() == 0 && c.ncols() == 0 { DMatrix::zeros(d.nrows(), 0) } else { c };
            let b = if a.nrows() == 0 { DMatrix::zeros(0, d.ncols()) } else { b };
            StateSpace::new(a, b, c, d).map(OperatorExpr::Lti)
        }
        "sum" | "cascade" => {
            allow_keys(obj, &["kind", "children"], path)?;
            let arr = get(obj, "children", path)?
                .as_array()
                .ok_or_else(|| Error::parse(format!("{path}.children"), "expected an array"))?;
            let children = arr
                .iter()
                .enumerate()
                .map(|(i, c)| system_from_value(c, &format!("{path}.children[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            if kind == "sum" {
                OperatorExpr::sum(children)
            } else {
                OperatorExpr::cascade(children)
            }
        }
        "scale" => {
            allow_keys(obj, &["kind", "factor", "child"], path)?;
            let f = get_f64(obj, "factor", path)?;
            let child = system_from_value(get(obj, "child", path)?, &format!("{path}.child"))?;
            OperatorExpr::scale(f, child)
        }
        "identity" => {
            allow_keys(obj, &["kind", "dim", "gain"], path)?;
            let dim = get_usize(obj, "dim", path)?;
            let gain = match obj.get("gain") {
                Some(_) => get_f64(obj, "gain", path)?,
                None => 1.0,
            };
            OperatorExpr::identity(dim, gain)
        }
        "tvgain" => {
            allow_keys(obj, &["kind", "dim", "profile"], path)?;
            let dim = get_usize(obj, "dim", path)?;
            let p = get(obj, "profile", path)?;
            let ppath = format!("{path}.profile");
            let po = as_object(p, &ppath)?;
            let profile = match get_str(po, "type", &ppath)? {
                "constant" => {
                    allow_keys(po, &["type", "k"], &ppath)?;
                    GainProfile::Constant { k: get_f64(po, "k", &ppath)? }
                }
                "affine" => {
                    allow_keys(po, &["type", "offset", "slope"], &ppath)?;
                    GainProfile::Affine {
                        offset: get_f64(po, "offset", &ppath)?,
                        slope: get_f64(po, "slope", &ppath)?,
                    }
                }
                "sin_squared" => {
                    allow_keys(po, &["type", "offset", "amplitude", "omega"], &ppath)?;
                    GainProfile::SinSquared {
                        offset: get_f64(po, "offset", &ppath)?,
                        amplitude: get_f64(po, "amplitude", &ppath)?,
                        omega: get_f64(po, "omega", &ppath)?,
                    }
                }
                other => return Err(Error::parse(format!("{ppath}.type"), format!("unknown profile `{other}`"))),
            };
            OperatorExpr::tv_gain(dim, profile)
        }
        "static" => {
            allow_keys(obj, &["kind", "dim", "map"], path)?;
            let dim = get_usize(obj, "dim", path)?;
            let mpath = format!("{path}.map");
            let mo = as_object(get(obj, "map", path)?, &mpath)?;
            let map = match get_str(mo, "type", &mpath)? {
                "saturation" => {
                    allow_keys(mo, &["type", "limit"], &mpath)?;
                    StaticMap::Saturation { limit: get_f64(mo, "limit", &mpath)? }
                }
                "deadzone" => {
                    allow_keys(mo, &["type", "width"], &mpath)?;
                    StaticMap::Deadzone { width: get_f64(mo, "width", &mpath)? }
                }
                "sector_cubic" => {
                    allow_keys(mo, &["type", "a", "b"], &mpath)?;
                    StaticMap::SectorCubic {
                        a: get_f64(mo, "a", &mpath)?,
                        b: get_f64(mo, "b", &mpath)?,
                    }
                }
                other => return Err(Error::parse(format!("{mpath}.type"), format!("unknown map `{other}`"))),
            };
            OperatorExpr::static_map(dim, map)
        }
        "feedback" => {
            allow_keys(obj, &["kind", "forward", "backward"], path)?;
            let f = system_from_value(get(obj, "forward", path)?, &format!("{path}.forward"))?;
            let b = system_from_value(get(obj, "backward", path)?, &format!("{path}.backward"))?;
            OperatorExpr::feedback(f, b)
        }
        other => return Err(Error::parse(format!("{path}.kind"), format!("unknown kind `{other}`"))),
    };
    result.map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::parse(path, other.to_string()),
    })
}

pub fn system_to_value(op: &OperatorExpr) -> Value {
    match op {
        OperatorExpr::Lti(ss) => json!({
            "kind": "lti",
            "A": matrix_to_value(ss.a()),
            "B": matrix_to_value(ss.b()),
            "C": matrix_to_value(ss.c()),
            "D": matrix_to_value(ss.d()),
        }),
        OperatorExpr::Sum(c) => json!({ "kind": "sum", "children": c.iter().map(system_to_value).collect::<Vec<_>>() }),
        OperatorExpr::Cascade(c) => {
            json!({ "kind": "cascade", "children": c.iter().map(system_to_value).collect::<Vec<_>>() })
        }
        OperatorExpr::Scale(f, c) => json!({ "kind": "scale", "factor": f, "child": system_to_value(c) }),
        OperatorExpr::ScaledIdentity { dim, gain } => json!({ "kind": "identity", "dim": dim, "gain": gain }),
        OperatorExpr::TimeVaryingGain { dim, profile } => {
            let p = match *profile {
                GainProfile::Constant { k } => json!({ "type": "constant", "k": k }),
                GainProfile::Affine { offset, slope } => json!({ "type": "affine", "offset": offset, "slope": slope }),
                GainProfile::SinSquared { offset, amplitude, omega } => {
                    json!({ "type": "sin_squared", "offset": offset, "amplitude": amplitude, "omega": omega })
                }
            };
            json!({ "kind": "tvgain", "dim": dim, "profile": p })
        }
        OperatorExpr::Static { dim, map } => {
            let m = match *map {
                StaticMap::Saturation { limit } => json!({ "type": "saturation", "limit": limit }),
                StaticMap::Deadzone { width } => json!({ "type": "deadzone", "width": width }),
                StaticMap::SectorCubic { a, b } => json!({ "type": "sector_cubic", "a": a, "b": b }),
            };
            json!({ "kind": "static", "dim": dim, "map": m })
        }
        OperatorExpr::Feedback { forward, backward } => json!({
            "kind": "feedback",
            "forward": system_to_value(forward),
            "backward": system_to_value(backward),
        }),
    }
}

pub fn matrix_to_value(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

pub(crate) fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::parse(path, "expected an object"))
}

pub(crate) fn get<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::parse(path, format!("missing key `{key}`")))
}

pub(crate) fn get_str<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str> {
    get(obj, key, path)?
        .as_str()
        .ok_or_else(|| Error::parse(format!("{path}.{key}"), "expected a string"))
}

pub(crate) fn get_f64(obj: &Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    get(obj, key, path)?
        .as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::parse(format!("{path}.{key}"), "expected a finite number"))
}

pub(crate) fn get_usize(obj: &Map<String, Value>, key: &str, path: &str) -> Result<usize> {
    get(obj, key, path)?
        .as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::parse(format!("{path}.{key}"), "expected a non-negative integer"))
}

pub(crate) fn allow_keys(obj: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<()> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::parse(format!("{path}.{k}"), "unexpected key"));
        }
    }
    Ok(())
}

/// Reads a row-major matrix; an empty outer array is a matrix with zero
/// rows (and `cols_hint`-less zero columns).
pub(crate) fn matrix(obj: &Map<String, Value>, key: &str, path: &str, rows_hint: Option<usize>) -> Result<DMatrix<f64>> {
    let mpath = format!("{path}.{key}");
    let rows = get(obj, key, path)?
        .as_array()
        .ok_or_else(|| Error::parse(&mpath, "expected an array of rows"))?;
    if rows.is_empty() {
        return Ok(DMatrix::zeros(rows_hint.unwrap_or(0), 0));
    }
    let mut data = Vec::new();
    let mut ncols = None;
    for (i, r) in rows.iter().enumerate() {
        let rpath = format!("{mpath}[{i}]");
        let r = r.as_array().ok_or_else(|| Error::parse(&rpath, "expected a row array"))?;
        match ncols {
            None => ncols = Some(r.len()),
            Some(n) if n != r.len() => {
                return Err(Error::parse(&rpath, format!("row has {} entries, expected {n}", r.len())))
            }
            _ => {}
        }
        for (j, x) in r.iter().enumerate() {
            let x = x
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(format!("{rpath}[{j}]"), "expected a finite number"))?;
            data.push(x);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols.unwrap_or(0), &data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lti_and_roundtrips() {
        let text = r#"{ "kind": "lti", "A": [[-1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]] }"#;
        let op = parse_system(text).unwrap();
        assert_eq!(op, OperatorExpr::Lti(StateSpace::first_order(1.0, 1.0).unwrap()));
        let back = system_from_value(&system_to_value(&op), "$").unwrap();
        assert_eq!(back, op);
    }

    #[test]
    fn nested_tree_roundtrip() {
        let text = r#"{ "kind": "sum", "children": [
            { "kind": "lti", "A": [[-2.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.5]] },
            { "kind": "tvgain", "dim": 1, "profile": { "type": "affine", "offset": 1.0, "slope": 0.5 } },
            { "kind": "scale", "factor": 0.5, "child": { "kind": "static", "dim": 1, "map": { "type": "saturation", "limit": 1.0 } } },
            { "kind": "feedback", "forward": { "kind": "identity", "dim": 1 }, "backward": { "kind": "identity", "dim": 1, "gain": 0.1 } }
        ] }"#;
        let op = parse_system(text).unwrap();
        assert_eq!(system_from_value(&system_to_value(&op), "$").unwrap(), op);
    }

    #[test]
    fn static_lti_without_states() {
        let op = parse_system(r#"{ "kind": "lti", "A": [], "B": [], "C": [[]], "D": [[2.0]] }"#).unwrap();
        assert_eq!(op.to_state_space().unwrap().n_states(), 0);
    }

    #[test]
    fn errors_are_path_qualified() {
        let e = parse_system(r#"{ "kind": "sum", "children": [ { "kind": "lti", "A": [[1, 2]], "B": [[1]], "C": [[1]], "D": [[0]] } ] }"#)
            .unwrap_err();
        assert!(e.to_string().starts_with("$.children[0]"), "{e}");
        let e = parse_system(r#"{ "kind": "lti", "A": [[1], [2, 3]], "B": [[1]], "C": [[1]], "D": [[0]] }"#).unwrap_err();
        assert!(e.to_string().contains("$.A[1]"), "{e}");
        let e = parse_system(r#"{ "kind": "identity", "dim": 1, "extra": 3 }"#).unwrap_err();
        assert!(e.to_string().contains("$.extra"), "{e}");
        let e = parse_system(r#"{ "kind": "warp" }"#).unwrap_err();
        assert!(e.to_string().contains("$.kind"), "{e}");
        assert!(parse_system("").is_err());
    }
}
