//! Flat binary array files with a small text header.
//!
//! ```text
//! SDELAB-ARRAY v1
//! kind grid
//! dims 48 48 48
//! components 3
//! extent 2
//! spacing 0.08333333333333333
//! byteorder little
//! dtype f64
//! END
//! <little-endian f64 payload>
//! ```
//!
//! Path dumps use `kind paths` with `paths`, `steps`, `d` and `dt` lines and a
//! payload ordered path-major, then step, then coordinate.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sampled::GridSamples;

const MAGIC: &str = "SDELAB-ARRAY v1";

fn write_array(path: &Path, header: &[(String, String)], data: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    for (k, v) in header {
        writeln!(w, "{k} {v}")?;
    }
    writeln!(w, "byteorder little")?;
    writeln!(w, "dtype f64")?;
    writeln!(w, "END")?;
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array(path: &Path) -> Result<(BTreeMap<String, String>, Vec<f64>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format(format!("bad magic line {:?}", line.trim_end())));
    }
    let mut header = BTreeMap::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("header not terminated by END".into()));
        }
        let l = line.trim_end();
        if l == "END" {
            break;
        }
        let (k, v) = l.split_once(' ').ok_or_else(|| Error::Format(format!("bad header line {l:?}")))?;
        header.insert(k.to_string(), v.to_string());
    }
    if header.get("byteorder").map(String::as_str) != Some("little") {
        return Err(Error::Format("only little-endian payloads are supported".into()));
    }
    if header.get("dtype").map(String::as_str) != Some("f64") {
        return Err(Error::Format("only f64 payloads are supported".into()));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, data))
}

fn field<T: std::str::FromStr>(h: &BTreeMap<String, String>, key: &str) -> Result<T> {
    h.get(key)
        .ok_or_else(|| Error::Format(format!("missing header field {key}")))?
        .parse()
        .map_err(|_| Error::Format(format!("unparsable header field {key}")))
}

pub fn write_grid_samples(path: &Path, s: &GridSamples) -> Result<()> {
    let m = s.grid.nodes;
    let header = vec![
        ("kind".to_string(), "grid".to_string()),
        ("dims".to_string(), format!("{m} {m} {m}")),
        ("components".to_string(), s.comps.to_string()),
        ("extent".to_string(), format!("{:?}", s.grid.extent)),
        ("spacing".to_string(), format!("{:?}", s.grid.spacing())),
    ];
    write_array(path, &header, &s.data)
}

pub fn read_grid_samples(path: &Path) -> Result<GridSamples> {
    let (h, data) = read_array(path)?;
    let dims: Vec<usize> = h
        .get("dims")
        .ok_or_else(|| Error::Format("missing header field dims".into()))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format("bad dims".into())))
        .collect::<Result<_>>()?;
    if dims.len() != 3 || dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(Error::Format(format!("expected cubic 3-D dims, got {dims:?}")));
    }
    let comps: usize = field(&h, "components")?;
    let extent: f64 = field(&h, "extent")?;
    let grid = Grid::new(extent, dims[0])?;
    if let Ok(spacing) = field::<f64>(&h, "spacing") {
        if (spacing - grid.spacing()).abs() > 1e-12 * grid.spacing() {
            return Err(Error::Format(format!("spacing {spacing} inconsistent with extent and dims")));
        }
    }
    GridSamples::new(grid, comps, data).map_err(|e| Error::Format(e.to_string()))
}

/// Raw path dump: `states[p][k]` is the state of path `p` after step `k`.
pub fn write_paths(path: &Path, states: &[Vec<[f64; 3]>], dt: f64) -> Result<()> {
    let steps = states.first().map_or(0, Vec::len);
    if states.iter().any(|s| s.len() != steps) {
        return Err(Error::InvalidSpec("ragged path dump".into()));
    }
    let header = vec![
        ("kind".to_string(), "paths".to_string()),
        ("paths".to_string(), states.len().to_string()),
        ("steps".to_string(), steps.to_string()),
        ("d".to_string(), "3".to_string()),
        ("dt".to_string(), format!("{dt:?}")),
    ];
    let data: Vec<f64> = states.iter().flat_map(|p| p.iter().flat_map(|x| x.iter().copied())).collect();
    write_array(path, &header, &data)
}

pub fn read_paths(path: &Path) -> Result<(Vec<Vec<[f64; 3]>>, f64)> {
    let (h, data) = read_array(path)?;
    let n: usize = field(&h, "paths")?;
    let steps: usize = field(&h, "steps")?;
    let d: usize = field(&h, "d")?;
    let dt: f64 = field(&h, "dt")?;
    if d != 3 || data.len() != n * steps * 3 {
        return Err(Error::Format("path dump payload does not match header".into()));
    }
    let states = data
        .chunks_exact(steps * 3)
        .map(|p| p.chunks_exact(3).map(|x| [x[0], x[1], x[2]]).collect())
        .collect();
    Ok((states, dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let g = Grid::new(1.5, 6).unwrap();
        let data: Vec<f64> = (0..g.len() * 3).map(|i| (i as f64).sin()).collect();
        let s = GridSamples::new(g, 3, data).unwrap();
        write_grid_samples(&p, &s).unwrap();
        assert_eq!(read_grid_samples(&p).unwrap(), s);
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let g = Grid::new(1.0, 4).unwrap();
        let s = GridSamples::new(g, 1, vec![1.0; 64]).unwrap();
        write_grid_samples(&p, &s).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_grid_samples(&p), Err(Error::Format(_))));
    }

    #[test]
    fn path_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("paths.bin");
        let states = vec![vec![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]], vec![[6.0, 7.0, 8.0], [9.0, 10.0, 11.0]]];
        write_paths(&p, &states, 1e-3).unwrap();
        let (back, dt) = read_paths(&p).unwrap();
        assert_eq!(back, states);
        assert_eq!(dt, 1e-3);
    }
}
