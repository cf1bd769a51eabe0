//! Delimited text grids.
//!
//! A file starts with a header line
//!
//! ```text
//! # mk-density nx=<int> ny=<int> xlo=<r> xhi=<r> ylo=<r> yhi=<r>
//! ```
//!
//! followed by `ny` rows of `nx` values: row `j` holds the values at `y_j`
//! for increasing `x`. Values are separated by whitespace or commas. Fields
//! that are not densities (`F`, `M`, residuals) use the tag `mk-field`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mk_plane::{Density2D, Grid1D, ScalarField2D};
use ndarray::Array2;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Density,
    Field,
}

impl GridKind {
    fn tag(self) -> &'static str {
        match self {
            GridKind::Density => "mk-density",
            GridKind::Field => "mk-field",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub kind: GridKind,
    pub field: ScalarField2D,
}

pub fn format_grid(kind: GridKind, field: &ScalarField2D) -> String {
    let (gx, gy) = (field.gx(), field.gy());
    let mut out = format!(
        "# {} nx={} ny={} xlo={} xhi={} ylo={} yhi={}\n",
        kind.tag(),
        gx.n(),
        gy.n(),
        gx.lo(),
        gx.hi(),
        gy.lo(),
        gy.hi()
    );
    for j in 0..gy.n() {
        for i in 0..gx.n() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{}", field.get(i, j)).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn write_grid(path: &Path, kind: GridKind, field: &ScalarField2D) -> Result<()> {
    fs::write(path, format_grid(kind, field)).map_err(|e| CliError::io(path, e))
}

pub fn parse_grid(text: &str, path: &Path) -> Result<GridFile> {
    let err = |line: usize, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut words = header.strip_prefix('#').unwrap_or("").split_whitespace();
    let kind = match words.next() {
        Some("mk-density") => GridKind::Density,
        Some("mk-field") => GridKind::Field,
        _ => return Err(err(1, "expected a `# mk-density` or `# mk-field` header".into())),
    };
    let mut keys: [Option<f64>; 6] = [None; 6];
    const NAMES: [&str; 6] = ["nx", "ny", "xlo", "xhi", "ylo", "yhi"];
    for word in words {
        let (k, v) = word
            .split_once('=')
            .ok_or_else(|| err(1, format!("header entry `{word}` is not key=value")))?;
        let slot = NAMES
            .iter()
            .position(|n| *n == k)
            .ok_or_else(|| err(1, format!("unknown header key `{k}`")))?;
        let v: f64 = v.parse().map_err(|_| err(1, format!("`{k}` has non-numeric value `{v}`")))?;
        keys[slot] = Some(v);
    }
    if let Some(k) = keys.iter().position(Option::is_none) {
        return Err(err(1, format!("header lacks `{}`", NAMES[k])));
    }
    let [nx, ny, xlo, xhi, ylo, yhi] = keys.map(Option::unwrap);
    let count = |v: f64, name: &str| {
        if v.fract() == 0.0 && v >= 1.0 {
            Ok(v as usize)
        } else {
            Err(err(1, format!("`{name}` must be a positive integer")))
        }
    };
    let (nx, ny) = (count(nx, "nx")?, count(ny, "ny")?);
    let gx = Grid1D::new(xlo, xhi, nx).map_err(|e| err(1, e.to_string()))?;
    let gy = Grid1D::new(ylo, yhi, ny).map_err(|e| err(1, e.to_string()))?;

    let mut values = Array2::zeros((nx, ny));
    let mut j = 0;
    for (line, row) in lines.filter(|(_, l)| !l.is_empty()) {
        if j == ny {
            return Err(err(line, format!("more than ny = {ny} rows")));
        }
        let mut i = 0;
        for tok in row.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            if i == nx {
                return Err(err(line, format!("more than nx = {nx} values")));
            }
            values[[i, j]] = tok.parse().map_err(|_| err(line, format!("`{tok}` is not a number")))?;
            i += 1;
        }
        if i < nx {
            return Err(err(line, format!("{i} values, expected nx = {nx}")));
        }
        j += 1;
    }
    if j < ny {
        return Err(err(text.lines().count(), format!("{j} rows, expected ny = {ny}")));
    }
    let field = ScalarField2D::new(gx, gy, values)?;
    Ok(GridFile { kind, field })
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_grid(&text, path)
}

/// Reads a density file; values must be strictly positive.
pub fn read_density(path: &Path) -> Result<Density2D> {
    let g = read_grid(path)?;
    let (gx, gy) = (*g.field.gx(), *g.field.gy());
    Ok(Density2D::new(gx, gy, g.field.into_values())?)
}
