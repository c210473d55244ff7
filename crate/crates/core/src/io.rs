//! CSV readers and writers for grids, masks and point observations.
//!
//! Grids and masks are headerless, one grid row per line. Points carry an
//! `x,y,value` header. Values are written in shortest round-trip form.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridField, ObservationMask, PointObservation};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map_or(0, |p| p.line() as usize)
}

/// Rectangular table of trimmed cells.
fn read_table(text: &str) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
        let line = rec.position().map_or(rows.len() + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            return Err(parse_err(line, "blank line"));
        }
        let cells: Vec<String> = rec.iter().map(|c| c.trim().to_string()).collect();
        if let Some(first) = rows.first().map(Vec::len) {
            if cells.len() != first {
                return Err(parse_err(
                    line,
                    format!("expected {first} values, found {}", cells.len()),
                ));
            }
        }
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(parse_err(0, "no rows"));
    }
    Ok(rows)
}

fn parse_value(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(line, format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value {s:?}")));
    }
    Ok(v)
}

pub fn parse_grid(text: &str) -> Result<GridField> {
    let rows = read_table(text)?;
    let (h, w) = (rows.len(), rows[0].len());
    let mut values = Vec::with_capacity(h * w);
    for (r, row) in rows.iter().enumerate() {
        for cell in row {
            values.push(parse_value(cell, r + 1)?);
        }
    }
    GridField::new(h, w, values)
}

pub fn parse_mask(text: &str) -> Result<ObservationMask> {
    let rows = read_table(text)?;
    let (h, w) = (rows.len(), rows[0].len());
    let mut bits = Vec::with_capacity(h * w);
    for (r, row) in rows.iter().enumerate() {
        for cell in row {
            bits.push(match cell.as_str() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(
                        r + 1,
                        format!("mask entries must be 0 or 1, found {other:?}"),
                    ))
                }
            });
        }
    }
    ObservationMask::new(h, w, bits)
}

pub fn parse_points(text: &str) -> Result<Vec<PointObservation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "value"] {
        return Err(parse_err(
            1,
            format!(
                "expected header x,y,value, found {:?}",
                headers.iter().collect::<Vec<_>>()
            ),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize::<PointObservation>() {
        let p = rec.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
        if !(p.x.is_finite() && p.y.is_finite() && p.value.is_finite()) {
            return Err(parse_err(out.len() + 2, "non-finite coordinate or value"));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn format_grid(field: &GridField) -> String {
    let (h, w) = field.dims();
    let mut s = String::new();
    for r in 0..h {
        let row: Vec<String> = (0..w).map(|c| format!("{:?}", field.get(r, c))).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn format_mask(mask: &ObservationMask) -> String {
    let (h, w) = mask.dims();
    let mut s = String::with_capacity(h * (2 * w));
    for r in 0..h {
        let row: Vec<&str> = (0..w)
            .map(|c| if mask.get(r, c) { "1" } else { "0" })
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn format_points(points: &[PointObservation]) -> String {
    let mut s = String::from("x,y,value\n");
    for p in points {
        s.push_str(&format!("{:?},{:?},{:?}\n", p.x, p.y, p.value));
    }
    s
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn read_grid(path: &Path) -> Result<GridField> {
    parse_grid(&read(path)?).map_err(|e| with_path(e, path))
}

pub fn read_mask(path: &Path) -> Result<ObservationMask> {
    parse_mask(&read(path)?).map_err(|e| with_path(e, path))
}

pub fn read_points(path: &Path) -> Result<Vec<PointObservation>> {
    parse_points(&read(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_round_trip() {
        let g = GridField::new(2, 3, vec![1.0, -0.5, 1e-300, 3.25, 0.1 + 0.2, -7.0]).unwrap();
        let text = format_grid(&g);
        assert_eq!(text.lines().next().unwrap(), "1.0,-0.5,1e-300");
        assert_eq!(parse_grid(&text).unwrap(), g);
    }

    #[test]
    fn grid_rejects_nan_and_ragged() {
        assert!(matches!(
            parse_grid("1,NaN\n2,3\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_grid("1,2\n3\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse_grid("1,inf\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_grid(""), Err(Error::Parse { .. })));
        assert!(matches!(parse_grid("1,x\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn mask_round_trip_and_strict_bits() {
        let m = ObservationMask::from_indices(2, 2, [0, 3]).unwrap();
        assert_eq!(format_mask(&m), "1,0\n0,1\n");
        assert_eq!(parse_mask(&format_mask(&m)).unwrap(), m);
        assert!(parse_mask("1,0.5\n").is_err());
        assert!(parse_mask("1,2\n").is_err());
    }

    #[test]
    fn points_header_and_values() {
        let p = parse_points("x,y,value\n0.5,1,2\n3, 4 ,-1e3\n").unwrap();
        assert_eq!(
            p[1],
            PointObservation {
                x: 3.0,
                y: 4.0,
                value: -1000.0
            }
        );
        assert!(parse_points("a,b,c\n1,2,3\n").is_err());
        assert!(parse_points("x,y,value\n1,2\n").is_err());
        assert!(parse_points("x,y,value\n1,2,NaN\n").is_err());
        assert_eq!(parse_points(&format_points(&p)).unwrap(), p);
    }

    proptest! {
        #[test]
        fn grid_text_round_trips(h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::rng_from_seed(seed);
            let v: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1e6..1e6)).collect();
            let g = GridField::new(h, w, v).unwrap();
            prop_assert_eq!(parse_grid(&format_grid(&g)).unwrap(), g);
        }

        #[test]
        fn parsers_never_panic(s in ".{0,200}") {
            let _ = parse_grid(&s);
            let _ = parse_mask(&s);
            let _ = parse_points(&s);
        }
    }
}
