//! Field snapshot files: a text header `dim n1 [n2 [n3]] h1 [h2 [h3]]`
//! followed by the row-major cell values, one per line, 17 significant
//! digits (enough to round-trip f64 exactly).

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use std::fs;
use std::path::Path;

/// Parsed snapshot contents; grid geometry travels with the values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub spacing: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn field_to_string(grid: &Grid, field: &Field) -> String {
    let dim = grid.dim();
    let mut s = String::new();
    s += &format!("{dim}");
    for a in 0..dim {
        s += &format!(" {}", grid.cells_per_axis()[a]);
    }
    for a in 0..dim {
        s += &format!(" {:.16e}", grid.spacing()[a]);
    }
    s.push('\n');
    for v in &field.values {
        s += &format!("{v:.16e}\n");
    }
    s
}

pub fn write_field(path: &Path, grid: &Grid, field: &Field) -> Result<()> {
    fs::write(path, field_to_string(grid, field))?;
    Ok(())
}

pub fn parse_field(text: &str) -> Result<FieldFile> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io("empty snapshot file".into()))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::Io("snapshot header is empty".into()));
    }
    let dim: usize = tokens[0]
        .parse()
        .map_err(|_| Error::Io(format!("bad dim token '{}'", tokens[0])))?;
    if !(1..=3).contains(&dim) || tokens.len() != 1 + 2 * dim {
        return Err(Error::Io(format!(
            "snapshot header needs 'dim n.. h..' with {dim} cells and spacings"
        )));
    }
    let mut cells = Vec::with_capacity(dim);
    let mut spacing = Vec::with_capacity(dim);
    for a in 0..dim {
        cells.push(
            tokens[1 + a]
                .parse()
                .map_err(|_| Error::Io(format!("bad cell count '{}'", tokens[1 + a])))?,
        );
        spacing.push(
            tokens[1 + dim + a]
                .parse()
                .map_err(|_| Error::Io(format!("bad spacing '{}'", tokens[1 + dim + a])))?,
        );
    }
    let expected: usize = cells.iter().product();
    let mut values = Vec::with_capacity(expected);
    for line in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t.parse().map_err(|_| Error::Io(format!("bad value line '{t}'")))?;
        if !v.is_finite() {
            return Err(Error::Io(format!("non-finite value {v} in snapshot")));
        }
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::Io(format!(
            "snapshot has {} values, header promises {expected}",
            values.len()
        )));
    }
    Ok(FieldFile { dim, cells, spacing, values })
}

pub fn read_field(path: &Path) -> Result<FieldFile> {
    let text = fs::read_to_string(path)?;
    parse_field(&text)
}

impl FieldFile {
    /// Check the file's geometry against a grid and hand over the values.
    pub fn into_field_on(self, grid: &Grid) -> Result<Field> {
        if self.dim != grid.dim() {
            return Err(Error::GridMismatch(format!(
                "snapshot is {}D, grid is {}D",
                self.dim,
                grid.dim()
            )));
        }
        for a in 0..self.dim {
            if self.cells[a] != grid.cells_per_axis()[a] {
                return Err(Error::GridMismatch(format!(
                    "snapshot axis {a} has {} cells, grid has {}",
                    self.cells[a],
                    grid.cells_per_axis()[a]
                )));
            }
            let rel = (self.spacing[a] - grid.spacing()[a]).abs()
                / grid.spacing()[a].max(f64::MIN_POSITIVE);
            if rel > 1e-12 {
                return Err(Error::GridMismatch(format!(
                    "snapshot spacing {} differs from grid spacing {}",
                    self.spacing[a],
                    grid.spacing()[a]
                )));
            }
        }
        Ok(Field { values: self.values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, ControlBox};
    use crate::rng::Rng;

    #[test]
    fn roundtrip_is_bitwise() {
        let mut rng = Rng::new(41);
        let g = build_grid(2, &[1.0, 0.7], &[5, 4], &ControlBox::All).unwrap();
        for _ in 0..20 {
            let f = Field {
                values: (0..g.ncells()).map(|_| rng.uniform(-1e3, 1e3)).collect(),
            };
            let text = field_to_string(&g, &f);
            let parsed = parse_field(&text).unwrap();
            let back = parsed.into_field_on(&g).unwrap();
            assert_eq!(f, back);
        }
    }

    #[test]
    fn header_mismatch_detected() {
        let g = build_grid(1, &[1.0], &[4], &ControlBox::All).unwrap();
        let text = field_to_string(&g, &g.constant_field(1.0));
        let other = build_grid(1, &[1.0], &[5], &ControlBox::All).unwrap();
        assert!(parse_field(&text).unwrap().into_field_on(&other).is_err());
        assert!(parse_field("").is_err());
        assert!(parse_field("1 4 0.25\n1\n2\n3\n").is_err());
    }
}
