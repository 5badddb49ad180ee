//! Parameter checkpoint container.
//!
//! ```text
//! # fedtraj params v1
//! param policy.enc.loc_emb 2 401 16
//! 1.2e-1 -3.05e-2 ...
//! ```
//!
//! After the header, each parameter takes two lines: `param <name> <rank>
//! <dims...>`, then its row-major values in shortest round-trip exponent
//! notation. Reloading reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use fedtraj_core::neuro::{ParameterSet, Tensor};

use crate::error::{self, parse_canonical, Error, Result};

pub const HEADER: &str = "# fedtraj params v1";

pub fn format_params(params: &ParameterSet) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "param {name} {} {}", dims.len(), dims.join(" "));
        let values: Vec<String> = t.values().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out
}

fn parse_spec(line: &str) -> std::result::Result<(String, Vec<usize>), String> {
    let parts: Vec<&str> = line.split(' ').collect();
    if parts.len() < 3 || parts[0] != "param" {
        return Err("expected `param <name> <rank> <dims...>`".into());
    }
    let rank: usize = parse_canonical(parts[2]).ok_or("rank is not an integer")?;
    if parts.len() != 3 + rank {
        return Err(format!("rank {rank} but {} dimensions", parts.len() - 3));
    }
    let dims = parts[3..]
        .iter()
        .map(|d| parse_canonical(d).ok_or_else(|| format!("dimension `{d}` is not an integer")))
        .collect::<std::result::Result<Vec<usize>, _>>()?;
    Ok((parts[1].to_string(), dims))
}

pub fn parse_params(text: &str) -> Result<ParameterSet> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if first != HEADER {
        return Err(Error::Header { expected: HEADER, found: first.to_string() });
    }
    let mut params = ParameterSet::new();
    let mut line_no = 1;
    while let Some(spec) = lines.next() {
        line_no += 1;
        let (name, dims) = parse_spec(spec).map_err(|r| Error::at(line_no, r))?;
        line_no += 1;
        let body = lines.next().ok_or_else(|| Error::at(line_no, "missing value line"))?;
        let values = if body.is_empty() {
            Vec::new()
        } else {
            body.split(' ')
                .map(|v| v.parse::<f64>().map_err(|_| Error::at(line_no, format!("bad value `{v}`"))))
                .collect::<Result<Vec<f64>>>()?
        };
        let tensor = Tensor::new(dims, values).map_err(|e| Error::at(line_no, e.to_string()))?;
        params.add(name, tensor).map_err(|e| Error::at(line_no - 1, e.to_string()))?;
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &ParameterSet) -> Result<()> {
    error::write(path, &format_params(params))
}

pub fn load_params(path: &Path) -> Result<ParameterSet> {
    parse_params(&error::read(path)?)
}
