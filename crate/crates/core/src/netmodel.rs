//! Grid graph, incidence matrices and weighted Laplacians under the DC model.
//!
//! Buses are indexed from 0 internally. Grid files and user-facing messages
//! use 1-based bus numbers.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_FORMAT: u32 = 1;

const IEEE14_JSON: &str = include_str!("../fixtures/ieee14.json");

/// A transmission line oriented `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series reactance, strictly positive.
    pub reactance: f64,
    /// Thermal limit applied to both flow directions, strictly positive.
    pub flow_limit: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, reactance: f64, flow_limit: f64) -> Self {
        Line {
            from,
            to,
            reactance,
            flow_limit,
        }
    }

    pub fn susceptance(&self) -> f64 {
        1.0 / self.reactance
    }
}

/// A validated, connected grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    name: Option<String>,
    bus_count: usize,
    lines: Vec<Line>,
    reference: usize,
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb] = ra;
        }
    }
}

impl GridTopology {
    /// Validates the line list and checks connectivity.
    ///
    /// Parallel lines between the same pair of buses are merged into one
    /// equivalent line: susceptances add, and the limit is the largest
    /// combined flow that keeps every member within its own limit.
    pub fn new(bus_count: usize, lines: Vec<Line>, reference: usize) -> Result<Self> {
        if bus_count < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 buses, got {bus_count}"
            )));
        }
        if reference >= bus_count {
            return Err(Error::InvalidGrid(format!(
                "reference bus {} out of range 1..={bus_count}",
                reference + 1
            )));
        }
        for (l, line) in lines.iter().enumerate() {
            if line.from >= bus_count || line.to >= bus_count {
                return Err(Error::InvalidGrid(format!(
                    "line {} has an endpoint outside 1..={bus_count}",
                    l + 1
                )));
            }
            if line.from == line.to {
                return Err(Error::InvalidGrid(format!(
                    "line {} is a self-loop at bus {}",
                    l + 1,
                    line.from + 1
                )));
            }
            if !(line.reactance > 0.0 && line.reactance.is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "line {} has non-positive reactance {}",
                    l + 1,
                    line.reactance
                )));
            }
            if !(line.flow_limit > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "line {} has non-positive flow limit {}",
                    l + 1,
                    line.flow_limit
                )));
            }
        }

        let lines = merge_parallel(lines);

        let mut sets = DisjointSets::new(bus_count);
        for line in &lines {
            sets.union(line.from, line.to);
        }
        let root = sets.find(reference);
        let unreachable: Vec<usize> = (0..bus_count)
            .filter(|&b| sets.find(b) != root)
            .map(|b| b + 1)
            .collect();
        if !unreachable.is_empty() {
            return Err(Error::Disconnected {
                root: reference + 1,
                unreachable,
            });
        }

        Ok(GridTopology {
            name: None,
            bus_count,
            lines,
            reference,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    /// The IEEE 14-bus benchmark with the shipped flow limits.
    pub fn ieee14() -> Self {
        Self::from_json_str(IEEE14_JSON).expect("bundled IEEE 14-bus fixture is valid")
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    /// Total number of buses, N + 1.
    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    /// Number of non-reference buses, N.
    pub fn reduced_dim(&self) -> usize {
        self.bus_count - 1
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    /// Bus indices in the order used by the reduced matrices.
    pub fn non_reference_buses(&self) -> Vec<usize> {
        (0..self.bus_count).filter(|&b| b != self.reference).collect()
    }

    pub fn reactances(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.reactance).collect()
    }

    pub fn flow_limits(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.flow_limit).collect()
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        build_incidence(self)
    }

    pub fn laplacian(&self) -> LaplacianPair {
        weighted_laplacian(&self.incidence(), &self.reactances())
            .expect("validated topology has positive reactances")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GridFile = serde_json::from_str(text)?;
        file.into_topology()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> GridFile {
        GridFile {
            format: GRID_FORMAT,
            name: self.name.clone(),
            source: None,
            buses: self.bus_count,
            reference: self.reference + 1,
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: l.from + 1,
                    to: l.to + 1,
                    x: l.reactance,
                    fmax: l.flow_limit,
                })
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn merge_parallel(lines: Vec<Line>) -> Vec<Line> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut order = Vec::new();
    for (l, line) in lines.iter().enumerate() {
        let key = (line.from.min(line.to), line.from.max(line.to));
        let entry = groups.entry(key).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(l);
    }
    if order.len() == lines.len() {
        return lines;
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let first = lines[members[0]];
            if members.len() == 1 {
                return first;
            }
            log::warn!(
                "merging parallel lines bus_from={} bus_to={} count={}",
                first.from + 1,
                first.to + 1,
                members.len()
            );
            let total: f64 = members.iter().map(|&l| lines[l].susceptance()).sum();
            // member l carries (b_l / total) of the combined flow
            let limit = members
                .iter()
                .map(|&l| lines[l].flow_limit * total / lines[l].susceptance())
                .fold(f64::INFINITY, f64::min);
            Line::new(first.from, first.to, 1.0 / total, limit)
        })
        .collect()
}

/// On-disk grid description (format 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridFile {
    pub format: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub buses: usize,
    #[serde(default = "default_reference")]
    pub reference: usize,
    pub lines: Vec<LineRecord>,
}

fn default_reference() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub x: f64,
    pub fmax: f64,
}

impl GridFile {
    pub fn into_topology(self) -> Result<GridTopology> {
        if self.format != GRID_FORMAT {
            return Err(Error::Schema(format!(
                "grid file format {} is not supported (expected {GRID_FORMAT})",
                self.format
            )));
        }
        let one_based = |b: usize, what: &str| {
            b.checked_sub(1)
                .ok_or_else(|| Error::InvalidGrid(format!("{what} bus numbers start at 1")))
        };
        let lines = self
            .lines
            .iter()
            .map(|r| {
                Ok(Line::new(
                    one_based(r.from, "line")?,
                    one_based(r.to, "line")?,
                    r.x,
                    r.fmax,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let topo = GridTopology::new(self.buses, lines, one_based(self.reference, "reference")?)?;
        Ok(match self.name {
            Some(name) => topo.with_name(name),
            None => topo,
        })
    }
}

/// Branch-bus incidence matrix and its reduced form.
#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    /// L × (N+1).
    pub full: DMatrix<f64>,
    /// L × N, reference column removed.
    pub reduced: DMatrix<f64>,
    pub reference: usize,
}

/// Full weighted Laplacian `Ã'DÃ` and the reduced `A'DA`.
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub full: DMatrix<f64>,
    pub reduced: DMatrix<f64>,
    /// Line susceptances `1/x_l`.
    pub susceptance: DVector<f64>,
}

/// Drops column `col`.
pub fn remove_column(m: &DMatrix<f64>, col: usize) -> DMatrix<f64> {
    m.clone().remove_column(col)
}

pub fn build_incidence(topology: &GridTopology) -> IncidenceMatrix {
    let mut full = DMatrix::zeros(topology.line_count(), topology.bus_count());
    for (l, line) in topology.lines().iter().enumerate() {
        full[(l, line.from)] = 1.0;
        full[(l, line.to)] = -1.0;
    }
    let reduced = remove_column(&full, topology.reference());
    IncidenceMatrix {
        full,
        reduced,
        reference: topology.reference(),
    }
}

pub fn weighted_laplacian(incidence: &IncidenceMatrix, reactances: &[f64]) -> Result<LaplacianPair> {
    let lines = incidence.full.nrows();
    if reactances.len() != lines {
        return Err(Error::Dimension {
            context: "weighted_laplacian reactances",
            expected: lines,
            found: reactances.len(),
        });
    }
    if let Some(x) = reactances.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!("reactance must be positive, got {x}")));
    }
    let susceptance = DVector::from_iterator(lines, reactances.iter().map(|x| 1.0 / x));
    let weighted = |a: &DMatrix<f64>| {
        let mut da = a.clone();
        for (l, mut row) in da.row_iter_mut().enumerate() {
            row *= susceptance[l];
        }
        let mut b = a.transpose() * da;
        // exact symmetry regardless of summation order
        let n = b.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                b[(j, i)] = b[(i, j)];
            }
        }
        b
    };
    Ok(LaplacianPair {
        full: weighted(&incidence.full),
        reduced: weighted(&incidence.reduced),
        susceptance,
    })
}

/// Line flows `f = D Ã θ̃`.
pub fn dc_flows(
    incidence: &IncidenceMatrix,
    reactances: &[f64],
    phases: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (lines, buses) = incidence.full.shape();
    if phases.len() != buses {
        return Err(Error::Dimension {
            context: "dc_flows phases",
            expected: buses,
            found: phases.len(),
        });
    }
    if reactances.len() != lines {
        return Err(Error::Dimension {
            context: "dc_flows reactances",
            expected: lines,
            found: reactances.len(),
        });
    }
    let mut f = &incidence.full * phases;
    for (fl, x) in f.iter_mut().zip(reactances) {
        *fl /= x;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics;

    fn two_bus() -> GridTopology {
        GridTopology::new(2, vec![Line::new(0, 1, 0.5, 100.0)], 0).unwrap()
    }

    fn triangle() -> GridTopology {
        GridTopology::new(
            3,
            vec![
                Line::new(0, 1, 1.0, 10.0),
                Line::new(1, 2, 1.0, 10.0),
                Line::new(0, 2, 1.0, 10.0),
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn two_bus_incidence_and_laplacian() {
        let g = two_bus();
        let inc = g.incidence();
        assert_eq!(inc.full.as_slice(), &[1.0, -1.0]);
        assert_eq!(inc.reduced.as_slice(), &[-1.0]);
        let lap = g.laplacian();
        assert_eq!(lap.full, DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]));
        assert_eq!(lap.reduced, DMatrix::from_element(1, 1, 2.0));
    }

    #[test]
    fn triangle_reduced_incidence_and_laplacian() {
        let g = triangle();
        let inc = g.incidence();
        let expected = DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 1.0, -1.0, 0.0, -1.0]);
        assert_eq!(inc.reduced, expected);
        // row reduction: rows (-1,0) and (1,-1) are independent
        assert_eq!(inc.reduced.rank(1e-12), 2);
        let lap = g.laplacian();
        assert_eq!(lap.reduced, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
    }

    #[test]
    fn ieee14_shapes_and_rank() {
        let g = GridTopology::ieee14();
        assert_eq!(g.bus_count(), 14);
        assert_eq!(g.line_count(), 20);
        let inc = g.incidence();
        assert_eq!(inc.full.shape(), (20, 14));
        let ones = DVector::from_element(14, 1.0);
        assert_eq!((&inc.full * ones).amax(), 0.0);
        assert_eq!(inc.full.rank(1e-10), 13);
        let lap = g.laplacian();
        assert_eq!(lap.reduced.shape(), (13, 13));
        let eig = numerics::sym_eig(&lap.reduced).unwrap();
        assert!(eig.values[0] > 0.0);
    }

    #[test]
    fn flows() {
        let g = two_bus();
        let inc = g.incidence();
        let x = g.reactances();
        let f = dc_flows(&inc, &x, &DVector::from_vec(vec![0.1, 0.0])).unwrap();
        assert!((f[0] - 0.2).abs() < 1e-15);
        let zero = dc_flows(&inc, &x, &DVector::zeros(2)).unwrap();
        assert_eq!(zero[0], 0.0);

        let t = GridTopology::ieee14();
        let inc = t.incidence();
        let x = t.reactances();
        let theta = DVector::from_fn(14, |i, _| (i as f64 * 0.37).sin());
        let shifted = theta.add_scalar(2.5);
        let a = dc_flows(&inc, &x, &theta).unwrap();
        let b = dc_flows(&inc, &x, &shifted).unwrap();
        assert!((a - b).amax() < 1e-12);
        assert!(matches!(
            dc_flows(&inc, &x, &DVector::zeros(3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(GridTopology::new(2, vec![Line::new(0, 0, 1.0, 1.0)], 0).is_err());
        assert!(GridTopology::new(2, vec![Line::new(0, 1, 0.0, 1.0)], 0).is_err());
        assert!(GridTopology::new(2, vec![Line::new(0, 1, 1.0, -1.0)], 0).is_err());
        assert!(GridTopology::new(2, vec![Line::new(0, 2, 1.0, 1.0)], 0).is_err());
        assert!(GridTopology::new(2, vec![Line::new(0, 1, 1.0, 1.0)], 2).is_err());
    }

    #[test]
    fn disconnected_grid_names_component() {
        let err = GridTopology::new(
            4,
            vec![Line::new(0, 1, 1.0, 1.0), Line::new(2, 3, 1.0, 1.0)],
            0,
        )
        .unwrap_err();
        match err {
            Error::Disconnected { root, unreachable } => {
                assert_eq!(root, 1);
                assert_eq!(unreachable, vec![3, 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parallel_lines_merge() {
        let g = GridTopology::new(
            2,
            vec![Line::new(0, 1, 1.0, 10.0), Line::new(1, 0, 0.5, 10.0)],
            0,
        )
        .unwrap();
        assert_eq!(g.line_count(), 1);
        let line = g.lines()[0];
        assert!((line.susceptance() - 3.0).abs() < 1e-12);
        // the 0.5-reactance member carries 2/3 of the flow and binds first
        assert!((line.flow_limit - 15.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_rejects_bad_reactances() {
        let inc = two_bus().incidence();
        assert!(matches!(weighted_laplacian(&inc, &[-1.0]), Err(Error::Domain(_))));
        assert!(matches!(
            weighted_laplacian(&inc, &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn grid_file_round_trip_and_schema() {
        let g = GridTopology::ieee14();
        let text = serde_json::to_string(&g.to_file()).unwrap();
        let back = GridTopology::from_json_str(&text).unwrap();
        assert_eq!(back.lines(), g.lines());
        let bad = text.replace("\"format\":1", "\"format\":2");
        assert!(matches!(GridTopology::from_json_str(&bad), Err(Error::Schema(_))));
    }
}
