//! CSV signal files: header `t,ch0,ch1,...`, one row per sample, times
//! starting at 0 and equispaced to within 1e-9 relative.

use std::io::Read;
use std::path::Path;

use super::{Signal, TimeGrid};
use crate::error::{Error, Result};

const UNIFORMITY_TOL: f64 = 1e-9;

pub fn read_csv(path: &Path) -> Result<Signal> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    read_csv_from(file, &path.display().to_string())
}

pub fn read_csv_str(text: &str) -> Result<Signal> {
    read_csv_from(text.as_bytes(), "<csv>")
}

fn read_csv_from(reader: impl Read, origin: &str) -> Result<Signal> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(origin, e.to_string()))?
        .clone();
    if headers.is_empty() || &headers[0] != "t" {
        return Err(Error::parse(format!("{origin}:1"), "header must start with `t`"));
    }
    let channels = headers.len() - 1;
    if channels == 0 {
        return Err(Error::parse(format!("{origin}:1"), "no signal channels"));
    }
    for (i, h) in headers.iter().enumerate().skip(1) {
        if h != format!("ch{}", i - 1) {
            return Err(Error::parse(
                format!("{origin}:1:{}", i + 1),
                format!("expected column `ch{}`, found `{h}`", i - 1),
            ));
        }
    }

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::parse(format!("{origin}:{line}"), e.to_string()))?;
        if rec.len() != channels + 1 {
            return Err(Error::parse(
                format!("{origin}:{line}"),
                format!("expected {} fields, found {}", channels + 1, rec.len()),
            ));
        }
        for (col, field) in rec.iter().enumerate() {
            let x: f64 = field.parse().map_err(|_| {
                Error::parse(format!("{origin}:{line}:{}", col + 1), format!("not a number: `{field}`"))
            })?;
            if !x.is_finite() {
                return Err(Error::parse(format!("{origin}:{line}:{}", col + 1), "non-finite value"));
            }
            if col == 0 {
                times.push(x);
            } else {
                values.push(x);
            }
        }
    }
    if times.len() < 2 {
        return Err(Error::parse(origin, "need at least two samples"));
    }
    let n_steps = times.len() - 1;
    let dt = (times[n_steps] - times[0]) / n_steps as f64;
    if !(dt > 0.0) {
        return Err(Error::parse(origin, "time column must be strictly increasing"));
    }
    if times[0].abs() > UNIFORMITY_TOL * dt {
        return Err(Error::parse(format!("{origin}:2:1"), "time must start at 0"));
    }
    for (k, &t) in times.iter().enumerate() {
        if k > 0 && t <= times[k - 1] {
            return Err(Error::parse(format!("{origin}:{}:1", k + 2), "time column must be strictly increasing"));
        }
        let expected = k as f64 * dt;
        if (t - expected).abs() > UNIFORMITY_TOL * expected.abs().max(dt) {
            return Err(Error::parse(
                format!("{origin}:{}:1", k + 2),
                format!("non-uniform sampling: t = {t}, expected {expected}"),
            ));
        }
    }
    Signal::new(TimeGrid::new(dt, n_steps)?, channels, values)
}

pub fn write_csv_string(u: &Signal) -> String {
    write_columns(&[("", u)])
}

pub fn write_csv(u: &Signal, path: &Path) -> Result<()> {
    std::fs::write(path, write_csv_string(u))
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// Multi-signal CSV with named column groups (`name0,name1,...`); an empty
/// name yields the plain `ch<i>` header.
pub(crate) fn write_columns(parts: &[(&str, &Signal)]) -> String {
    let grid = parts[0].1.grid();
    let mut out = String::from("t");
    for (name, s) in parts {
        for c in 0..s.channels() {
            if name.is_empty() {
                out.push_str(&format!(",ch{c}"));
            } else {
                out.push_str(&format!(",{name}_{c}"));
            }
        }
    }
    out.push('\n');
    for k in 0..grid.n_samples() {
        out.push_str(&format!("{}", grid.time(k)));
        for (_, s) in parts {
            for v in s.sample(k) {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let g = TimeGrid::new(0.1, 20).unwrap();
        let u = Signal::from_fn(g, 2, |t, o| {
            o[0] = t.sin();
            o[1] = -t
        });
        let back = read_csv_str(&write_csv_string(&u)).unwrap();
        assert_eq!(back.channels(), 2);
        assert_eq!(back.grid().n_steps(), 20);
        for (a, b) in back.values().iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_nonuniform_and_bad_headers() {
        let err = read_csv_str("t,ch0\n0,1\n0.1,2\n0.25,3\n").unwrap_err();
        assert!(err.to_string().contains("non-uniform"), "{err}");
        let err = read_csv_str("time,ch0\n0,1\n1,2\n").unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
        let err = read_csv_str("t,ch0\n0,1\n1,x\n").unwrap_err();
        assert!(err.to_string().contains(":3:2"), "{err}");
        assert!(read_csv_str("").is_err());
    }
}
