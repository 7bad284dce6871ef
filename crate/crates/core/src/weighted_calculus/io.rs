//! Field files: a short JSON header followed by little-endian `f64` payload,
//! and a CSV form for small fields.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Grid, GridField, Rank};
use crate::chart_geometry::Chart;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SHRKFLD1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Grid,
    Spectral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    /// FNV-1a hash of the chart's JSON description.
    pub chart_hash: String,
    pub rank: Rank,
    pub representation: Representation,
    /// Grid: `[dim, points]`; spectral: `[coefficients]`.
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(f64, f64)>,
}

pub fn chart_hash(chart: &Chart) -> String {
    let json = serde_json::to_vec(chart).unwrap_or_default();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in json {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

pub fn write_raw(path: &Path, header: &FieldHeader, payload: &[f64]) -> Result<()> {
    let head = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + head.len() + 8 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(&head);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<(FieldHeader, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Parse(format!("{} is not a field file", path.display())));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| Error::Parse("truncated header".into()))?;
    let header: FieldHeader = serde_json::from_slice(body)?;
    let rest = &bytes[12 + hlen..];
    if rest.len() % 8 != 0 {
        return Err(Error::Parse("payload is not a whole number of f64".into()));
    }
    let payload = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, payload))
}

pub fn write_grid_field(path: &Path, chart: &Chart, field: &GridField) -> Result<()> {
    let header = FieldHeader {
        chart_hash: chart_hash(chart),
        rank: field.rank,
        representation: Representation::Grid,
        dims: vec![field.grid.dim, field.grid.points],
        bounds: Some((field.grid.lo, field.grid.hi)),
    };
    write_raw(path, &header, &field.data)
}

/// Reads a grid field; with a chart given, the stored chart hash must match.
pub fn read_grid_field(path: &Path, chart: Option<&Chart>) -> Result<GridField> {
    let (h, data) = read_raw(path)?;
    if h.representation != Representation::Grid {
        return Err(Error::Representation("expected a grid field file".into()));
    }
    if let Some(c) = chart {
        let want = chart_hash(c);
        if want != h.chart_hash {
            return Err(Error::ChartMismatch(format!("file chart {} vs {}", h.chart_hash, want)));
        }
    }
    let (dim, points) = match h.dims.as_slice() {
        [d, p] => (*d, *p),
        _ => return Err(Error::Parse("grid dims must be [dim, points]".into())),
    };
    let (lo, hi) = h.bounds.ok_or_else(|| Error::Parse("grid bounds missing".into()))?;
    let grid = Grid::new(dim, points, lo, hi);
    let field = GridField { grid, rank: h.rank, data };
    if field.data.len() != field.grid.len() * field.ncomp() {
        return Err(Error::Parse("payload length does not match header".into()));
    }
    Ok(field)
}

/// One row per node: coordinates then components. The first line is a `#` comment
/// carrying the grid and rank.
pub fn write_csv(path: &Path, field: &GridField) -> Result<()> {
    let g = &field.grid;
    let mut out = String::new();
    out.push_str(&format!("# dim={} points={} lo={} hi={} rank={:?}\n", g.dim, g.points, g.lo, g.hi, field.rank));
    let cols: Vec<String> = (0..g.dim).map(|i| format!("x{}", i + 1)).chain((0..field.ncomp()).map(|c| format!("c{c}"))).collect();
    out.push_str(&cols.join(","));
    out.push('\n');
    for i in 0..g.len() {
        let row: Vec<String> = g.node(i).iter().chain(field.at(i)).map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<GridField> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut lines = r.lines();
    let bad = |m: &str| Error::Parse(format!("{}: {m}", path.display()));
    let head = lines.next().ok_or_else(|| bad("empty file"))??;
    let mut dim = None;
    let mut points = None;
    let mut lo = None;
    let mut hi = None;
    let mut rank = None;
    for kv in head.trim_start_matches('#').split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed header"))?;
        match k {
            "dim" => dim = v.parse().ok(),
            "points" => points = v.parse().ok(),
            "lo" => lo = v.parse().ok(),
            "hi" => hi = v.parse().ok(),
            "rank" => {
                rank = match v {
                    "Scalar" => Some(Rank::Scalar),
                    "Vector" => Some(Rank::Vector),
                    "Sym2" => Some(Rank::Sym2),
                    _ => None,
                }
            }
            _ => {}
        }
    }
    let (Some(dim), Some(points), Some(lo), Some(hi), Some(rank)) = (dim, points, lo, hi, rank) else {
        return Err(bad("incomplete header"));
    };
    lines.next();
    let grid = Grid::new(dim, points, lo, hi);
    let mut data = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line.split(',').map(|s| s.trim().parse().map_err(|_| bad("bad number"))).collect::<Result<_>>()?;
        data.extend_from_slice(&vals[dim..]);
    }
    let field = GridField { grid, rank, data };
    if field.data.len() != field.grid.len() * field.ncomp() {
        return Err(bad("row count does not match grid"));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart_geometry::{MetricFamily, Topology, WeightFamily};

    fn chart() -> Chart {
        Chart::new(2, Topology::Box, vec![(-5.0, 5.0); 2], MetricFamily::Euclidean, WeightFamily::Quadratic { skip: 0, offset: 0.0 })
    }

    #[test]
    fn binary_round_trip() {
        let dir = std::env::temp_dir().join(format!("shrk-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let grid = Grid::new(2, 5, -1.0, 1.0);
        let f = GridField::from_fn(&grid, Rank::Vector, |x| vec![x[0] * x[1], -x[0]]);
        let p = dir.join("v.field");
        write_grid_field(&p, &chart(), &f).unwrap();
        let g = read_grid_field(&p, Some(&chart())).unwrap();
        assert_eq!(f, g);
        let other = chart().with_kappa(1.0);
        assert!(matches!(read_grid_field(&p, Some(&other)), Err(Error::ChartMismatch(_))));
        let c = dir.join("v.csv");
        write_csv(&c, &f).unwrap();
        let h = read_csv(&c).unwrap();
        assert_eq!(f.data.len(), h.data.len());
        assert!(f.data.iter().zip(&h.data).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
