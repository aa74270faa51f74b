//! Dataset directory format: snapshot 0 in full plus per-step deltas.
//!
//! Features are stored at single precision with 9 significant digits, which
//! round-trips every `f32` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::delta::extract_delta;
use super::snapshot::{DynamicGraph, Snapshot};
use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub num_nodes: usize,
    pub feature_dim: usize,
    #[serde(rename = "T")]
    pub num_snapshots: usize,
    pub format_version: u32,
}

/// C `%.9g` formatting of `x`.
pub fn format_g9(x: f32) -> String {
    const P: i32 = 9;
    let x = x as f64;
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        trim_zeros(format!("{:.*}", (P - 1 - exp) as usize, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            trim_zeros(mantissa.to_string()),
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn feature_row<T: Scalar>(out: &mut String, row: &[T]) {
    for (i, x) in row.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_g9(x.as_f64() as f32));
    }
    out.push('\n');
}

/// Writes `graph` under `dir`, creating the directory if needed.
pub fn write_dataset<T: Scalar>(graph: &DynamicGraph<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        num_nodes: graph.num_nodes(),
        feature_dim: graph.feature_dim(),
        num_snapshots: graph.len(),
        format_version: FORMAT_VERSION,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    let s0 = graph.snapshot(0);
    let mut edges = String::new();
    for (u, v) in s0.edge_pairs() {
        writeln!(edges, "{u}\t{v}").expect("string write");
    }
    fs::write(dir.join("snapshot_0.edges"), edges)?;
    let mut feats = String::new();
    for r in 0..s0.num_nodes() {
        feature_row(&mut feats, s0.features().row(r));
    }
    fs::write(dir.join("snapshot_0.feats"), feats)?;

    for t in 1..graph.len() {
        let (prev, curr) = (graph.snapshot(t - 1), graph.snapshot(t));
        let delta = extract_delta(prev, curr)?;
        let (removed, added) = delta.structural();
        let mut edges = String::new();
        for (u, v) in removed {
            writeln!(edges, "D {u} {v}").expect("string write");
        }
        for (u, v) in added {
            writeln!(edges, "I {u} {v}").expect("string write");
        }
        fs::write(dir.join(format!("delta_{t}.edges")), edges)?;
        let mut feats = String::new();
        for &u in &delta.feature_changed {
            write!(feats, "{u},").expect("string write");
            feature_row(&mut feats, curr.features().row(u as usize));
        }
        fs::write(dir.join(format!("delta_{t}.feats")), feats)?;
    }
    Ok(())
}

fn parse_err(file: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{file}:{}: {msg}", line + 1))
}

fn parse_node(tok: Option<&str>, file: &str, line: usize) -> Result<u32> {
    tok.ok_or_else(|| parse_err(file, line, "missing node id"))?
        .parse()
        .map_err(|e| parse_err(file, line, e))
}

fn parse_features<T: Scalar>(toks: &[&str], dim: usize, file: &str, line: usize) -> Result<Vec<T>> {
    if toks.len() != dim {
        return Err(parse_err(
            file,
            line,
            format!("expected {dim} features, found {}", toks.len()),
        ));
    }
    toks.iter()
        .map(|s| {
            s.trim()
                .parse::<f32>()
                .map(|x| T::of_f64(x as f64))
                .map_err(|e| parse_err(file, line, e))
        })
        .collect()
}

/// Reads a dataset written by [`write_dataset`], materializing every snapshot.
pub fn read_dataset<T: Scalar>(dir: &Path) -> Result<DynamicGraph<T>> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    ensure!(
        manifest.format_version == FORMAT_VERSION,
        Format,
        "unsupported dataset format version {}",
        manifest.format_version
    );
    ensure!(
        manifest.num_snapshots > 0,
        Format,
        "dataset has no snapshots"
    );
    let (n, dim) = (manifest.num_nodes, manifest.feature_dim);

    let mut edges = std::collections::BTreeSet::new();
    let text = fs::read_to_string(dir.join("snapshot_0.edges"))?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let mut it = line.split('\t');
        let u = parse_node(it.next(), "snapshot_0.edges", i)?;
        let v = parse_node(it.next(), "snapshot_0.edges", i)?;
        edges.insert((u, v));
    }
    let text = fs::read_to_string(dir.join("snapshot_0.feats"))?;
    let mut data = Vec::with_capacity(n * dim);
    let mut rows = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let toks: Vec<&str> = line.split(',').collect();
        data.extend(parse_features::<T>(&toks, dim, "snapshot_0.feats", i)?);
        rows += 1;
    }
    ensure!(
        rows == n,
        Format,
        "snapshot_0.feats has {rows} rows, manifest says {n}"
    );
    let mut feats = Matrix::from_vec(n, dim, data)?;
    let mut snapshots = vec![Snapshot::new(
        0,
        edges.iter().copied().collect(),
        feats.clone(),
    )?];

    for t in 1..manifest.num_snapshots {
        let name = format!("delta_{t}.edges");
        let text = fs::read_to_string(dir.join(&name))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let mut it = line.split(' ');
            let op = it.next();
            let u = parse_node(it.next(), &name, i)?;
            let v = parse_node(it.next(), &name, i)?;
            match op {
                Some("D") if edges.remove(&(u, v)) => {}
                Some("D") => {
                    return Err(parse_err(
                        &name,
                        i,
                        format!("deleting absent edge {u}->{v}"),
                    ))
                }
                Some("I") if edges.insert((u, v)) => {}
                Some("I") => {
                    return Err(parse_err(
                        &name,
                        i,
                        format!("inserting present edge {u}->{v}"),
                    ))
                }
                _ => return Err(parse_err(&name, i, "expected D or I")),
            }
        }
        let name = format!("delta_{t}.feats");
        let text = fs::read_to_string(dir.join(&name))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let toks: Vec<&str> = line.split(',').collect();
            let u = parse_node(toks.first().copied(), &name, i)? as usize;
            if u >= n {
                return Err(Error::NodeOutOfRange {
                    node: u,
                    num_nodes: n,
                });
            }
            let row = parse_features::<T>(&toks[1..], dim, &name, i)?;
            feats.row_mut(u).copy_from_slice(&row);
        }
        snapshots.push(Snapshot::new(
            t,
            edges.iter().copied().collect(),
            feats.clone(),
        )?);
    }
    DynamicGraph::new(snapshots)
}
