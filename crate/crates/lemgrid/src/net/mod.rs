//! Radial LV network model: topology, derived matrices, AC power flow.
//!
//! Node 0 is always the slack (the substation/feeder root with a fixed
//! complex voltage); every other node hangs off the tree below it. Lines are
//! stored oriented child → parent, so "positive real flow" on a line means
//! power moving toward the root.
//!
//! # Network file format
//!
//! Plain text, whitespace-separated, `#` starts a comment. Three record
//! kinds:
//!
//! ```text
//! base   <S_base_kVA> <V_base_V> <slack_voltage_pu> [slack_angle_deg]
//! branch <from> <to> <R_ohm> <X_ohm> <capacity_kVA>
//! bind   <household_id> <node>
//! ```
//!
//! The `base` record must come first. Branch orientation in the file is
//! free; the loader re-orients every line child → parent after checking the
//! graph is a tree rooted at node 0. Impedances and capacities are given in
//! engineering units and converted to per-unit on load; all math downstream
//! is per-unit.

mod powerflow;

pub use powerflow::{
    line_flows, line_loadings, solve_power_flow, LineFlowReport, OperatingPoint, PowerFlowSolver,
    SolverOptions,
};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// One feeder segment, oriented child → parent (`from` is the node farther
/// from the root). Impedance and capacity are per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub impedance: Complex64,
    /// Thermal limit as per-unit apparent power.
    pub capacity: f64,
}

/// Immutable radial network description.
#[derive(Debug, Clone)]
pub struct Network {
    n_nodes: usize,
    lines: Vec<Line>,
    slack_voltage: Complex64,
    s_base_kva: f64,
    v_base_v: f64,
    /// parent[i] for non-slack i; parent[0] is None.
    parent: Vec<Option<usize>>,
    /// Index of the line whose `from` end is node i (None for the slack).
    line_up: Vec<Option<usize>>,
    bindings: BTreeMap<String, usize>,
}

impl Network {
    /// Build a radial network from per-unit line data. Line orientation in
    /// `lines` is free; they are re-oriented child → parent here.
    pub fn radial(lines: Vec<Line>, slack_voltage: Complex64) -> Result<Self> {
        Self::radial_with_bases(lines, slack_voltage, 100.0, 230.0)
    }

    pub fn radial_with_bases(
        lines: Vec<Line>,
        slack_voltage: Complex64,
        s_base_kva: f64,
        v_base_v: f64,
    ) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Topology("network has no lines".into()));
        }
        if s_base_kva <= 0.0 || v_base_v <= 0.0 {
            return Err(Error::Topology("bases must be positive".into()));
        }
        if slack_voltage.norm() == 0.0 {
            return Err(Error::Topology("slack voltage must be nonzero".into()));
        }
        let mut n_nodes = 0;
        for l in &lines {
            if l.from == l.to {
                return Err(Error::Topology(format!("self-loop at node {}", l.from)));
            }
            if l.impedance.norm() == 0.0 {
                return Err(Error::Topology(format!(
                    "line {}-{} has zero impedance",
                    l.from, l.to
                )));
            }
            if l.impedance.re < 0.0 {
                return Err(Error::Topology(format!(
                    "line {}-{} has negative resistance",
                    l.from, l.to
                )));
            }
            if !(l.capacity > 0.0) {
                return Err(Error::Topology(format!(
                    "line {}-{} has non-positive capacity",
                    l.from, l.to
                )));
            }
            n_nodes = n_nodes.max(l.from + 1).max(l.to + 1);
        }
        if lines.len() != n_nodes - 1 {
            return Err(Error::Topology(format!(
                "{} lines for {} nodes: a radial network needs exactly N lines for N+1 nodes",
                lines.len(),
                n_nodes
            )));
        }

        // BFS from the root: assigns parents, detects cycles/disconnection,
        // and yields the child → parent orientation.
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
        for (idx, l) in lines.iter().enumerate() {
            adj[l.from].push((l.to, idx));
            adj[l.to].push((l.from, idx));
        }
        let mut parent: Vec<Option<usize>> = vec![None; n_nodes];
        let mut line_up: Vec<Option<usize>> = vec![None; n_nodes];
        let mut seen = vec![false; n_nodes];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut oriented = lines.clone();
        while let Some(u) = queue.pop_front() {
            for &(v, idx) in &adj[u] {
                if Some(idx) == line_up[u] {
                    continue; // the edge we arrived through
                }
                if seen[v] {
                    return Err(Error::Topology(format!(
                        "cycle through line {}-{}",
                        lines[idx].from, lines[idx].to
                    )));
                }
                seen[v] = true;
                parent[v] = Some(u);
                line_up[v] = Some(idx);
                oriented[idx].from = v;
                oriented[idx].to = u;
                queue.push_back(v);
            }
        }
        if let Some(node) = seen.iter().position(|s| !s) {
            return Err(Error::Topology(format!(
                "node {node} is not connected to the root"
            )));
        }

        Ok(Network {
            n_nodes,
            lines: oriented,
            slack_voltage,
            s_base_kva,
            v_base_v,
            parent,
            line_up,
            bindings: BTreeMap::new(),
        })
    }

    /// Attach household → node bindings (the substation cannot host one).
    pub fn with_bindings(mut self, bindings: BTreeMap<String, usize>) -> Result<Self> {
        for (id, &node) in &bindings {
            if node == 0 {
                return Err(Error::Topology(format!(
                    "household {id} bound to the substation node"
                )));
            }
            if node >= self.n_nodes {
                return Err(Error::Topology(format!(
                    "household {id} bound to unknown node {node}"
                )));
            }
        }
        self.bindings = bindings;
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of non-slack nodes.
    pub fn n_load_nodes(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn slack_voltage(&self) -> Complex64 {
        self.slack_voltage
    }

    pub fn s_base_kva(&self) -> f64 {
        self.s_base_kva
    }

    pub fn v_base_v(&self) -> f64 {
        self.v_base_v
    }

    pub fn bindings(&self) -> &BTreeMap<String, usize> {
        &self.bindings
    }

    pub fn node_of(&self, household: &str) -> Option<usize> {
        self.bindings.get(household).copied()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent.get(node).copied().flatten()
    }

    /// Convert kW to per-unit power on this network's base.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / self.s_base_kva
    }

    /// Line indices on the path from `node` up to the root, nearest first.
    pub fn root_path(&self, node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = node;
        while let Some(idx) = self.line_up[cur] {
            path.push(idx);
            cur = self.lines[idx].to;
        }
        path
    }

    /// Signed line path from node `i` to node `j`: (line index, +1) when the
    /// step runs child → parent, (line index, −1) when parent → child.
    pub fn path_between(&self, i: usize, j: usize) -> Vec<(usize, f64)> {
        let up_i = self.root_path(i);
        let up_j = self.root_path(j);
        // Drop the shared tail (the segment above the lowest common ancestor).
        let mut a = up_i.len();
        let mut b = up_j.len();
        while a > 0 && b > 0 && up_i[a - 1] == up_j[b - 1] {
            a -= 1;
            b -= 1;
        }
        let mut path: Vec<(usize, f64)> = up_i[..a].iter().map(|&l| (l, 1.0)).collect();
        path.extend(up_j[..b].iter().rev().map(|&l| (l, -1.0)));
        path
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    /// Parse the network file format described in the module docs.
    pub fn from_str_named(text: &str, file: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            file: file.to_string(),
            line,
            msg,
        };
        let mut base: Option<(f64, f64, Complex64)> = None;
        let mut raw_lines: Vec<Line> = Vec::new();
        let mut bindings: BTreeMap<String, usize> = BTreeMap::new();

        for (ln, raw) in text.lines().enumerate() {
            let ln = ln + 1;
            let row = raw.split('#').next().unwrap_or("").trim();
            if row.is_empty() {
                continue;
            }
            let tok: Vec<&str> = row.split_whitespace().collect();
            match tok[0] {
                "base" => {
                    if !(tok.len() == 4 || tok.len() == 5) {
                        return Err(err(
                            ln,
                            "base record needs: S_base_kVA V_base_V slack_pu [angle_deg]".into(),
                        ));
                    }
                    let s: f64 = parse_num(tok[1], ln, file)?;
                    let v: f64 = parse_num(tok[2], ln, file)?;
                    let mag: f64 = parse_num(tok[3], ln, file)?;
                    let ang = if tok.len() == 5 {
                        parse_num::<f64>(tok[4], ln, file)?.to_radians()
                    } else {
                        0.0
                    };
                    base = Some((s, v, Complex64::from_polar(mag, ang)));
                }
                "branch" => {
                    let (s_base, v_base, _) =
                        base.ok_or_else(|| err(ln, "branch record before base record".into()))?;
                    if tok.len() != 6 {
                        return Err(err(
                            ln,
                            "branch record needs: from to R_ohm X_ohm capacity_kVA".into(),
                        ));
                    }
                    let from: usize = parse_num(tok[1], ln, file)?;
                    let to: usize = parse_num(tok[2], ln, file)?;
                    let r: f64 = parse_num(tok[3], ln, file)?;
                    let x: f64 = parse_num(tok[4], ln, file)?;
                    let cap: f64 = parse_num(tok[5], ln, file)?;
                    let z_base = v_base * v_base / (s_base * 1000.0);
                    raw_lines.push(Line {
                        from,
                        to,
                        impedance: Complex64::new(r / z_base, x / z_base),
                        capacity: cap / s_base,
                    });
                }
                "bind" => {
                    if tok.len() != 3 {
                        return Err(err(ln, "bind record needs: household_id node".into()));
                    }
                    let id = tok[1].to_string();
                    let node: usize = parse_num(tok[2], ln, file)?;
                    if bindings.insert(id.clone(), node).is_some() {
                        return Err(err(ln, format!("household {id} bound twice")));
                    }
                }
                other => {
                    return Err(err(ln, format!("unknown record kind {other:?}")));
                }
            }
        }

        let (s_base, v_base, slack) = base.ok_or_else(|| err(0, "missing base record".into()))?;
        let net =
            Self::radial_with_bases(raw_lines, slack, s_base, v_base).map_err(|e| match e {
                Error::Topology(msg) => Error::Format {
                    path: file.into(),
                    msg,
                },
                e => e,
            })?;
        net.with_bindings(bindings)
    }

    /// Serialize back to the network file format (engineering units).
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let z_base = self.v_base_v * self.v_base_v / (self.s_base_kva * 1000.0);
        let _ = writeln!(
            out,
            "base {} {} {} {}",
            self.s_base_kva,
            self.v_base_v,
            self.slack_voltage.norm(),
            self.slack_voltage.arg().to_degrees()
        );
        for l in &self.lines {
            let _ = writeln!(
                out,
                "branch {} {} {} {} {}",
                l.from,
                l.to,
                l.impedance.re * z_base,
                l.impedance.im * z_base,
                l.capacity * self.s_base_kva
            );
        }
        for (id, node) in &self.bindings {
            let _ = writeln!(out, "bind {id} {node}");
        }
        out
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, file: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        file: file.to_string(),
        line,
        msg: format!("cannot parse {tok:?}"),
    })
}

/// Matrices derived from the topology: bus admittance Y (shunt-free, so
/// symmetric with zero row sums), its real part G, the branch-to-node
/// incidence A (+1 at the child end, −1 at the parent end), the diagonal
/// branch susceptances b = 1/X, and the reduced nodal susceptance
/// B = AᵀB̃A with the slack row/column removed.
#[derive(Debug, Clone)]
pub struct NetworkMatrices {
    pub y: DMatrix<Complex64>,
    pub g: DMatrix<f64>,
    /// Full incidence, lines × nodes.
    pub incidence: DMatrix<f64>,
    /// 1/X per line.
    pub branch_susceptance: DVector<f64>,
    /// AᵀB̃A over non-slack nodes (N × N).
    pub b_reduced: DMatrix<f64>,
}

/// Assemble the admittance/incidence/susceptance matrices for `net`.
///
/// Requires X > 0 on every line (the susceptance-based shift factors are
/// undefined otherwise).
pub fn build_matrices(net: &Network) -> Result<NetworkMatrices> {
    let n = net.n_nodes();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let mut incidence = DMatrix::<f64>::zeros(net.lines().len(), n);
    let mut bsusc = DVector::<f64>::zeros(net.lines().len());

    for (k, l) in net.lines().iter().enumerate() {
        let yl = Complex64::new(1.0, 0.0) / l.impedance;
        y[(l.from, l.from)] += yl;
        y[(l.to, l.to)] += yl;
        y[(l.from, l.to)] -= yl;
        y[(l.to, l.from)] -= yl;
        incidence[(k, l.from)] = 1.0;
        incidence[(k, l.to)] = -1.0;
        if l.impedance.im <= 0.0 {
            return Err(Error::Topology(format!(
                "line {}-{}: reactance must be positive (got {})",
                l.from, l.to, l.impedance.im
            )));
        }
        bsusc[k] = 1.0 / l.impedance.im;
    }

    let g = y.map(|c| c.re);
    // Reduced incidence: drop the slack column.
    let a_red = incidence.columns(1, n - 1).into_owned();
    let mut b_reduced = DMatrix::<f64>::zeros(n - 1, n - 1);
    for (k, row) in a_red.row_iter().enumerate() {
        // AᵀB̃A accumulated line by line.
        for i in 0..n - 1 {
            if row[i] == 0.0 {
                continue;
            }
            for j in 0..n - 1 {
                if row[j] != 0.0 {
                    b_reduced[(i, j)] += row[i] * bsusc[k] * row[j];
                }
            }
        }
    }
    if !b_reduced.clone().lu().is_invertible() {
        return Err(Error::Topology(
            "reduced susceptance matrix is singular (disconnected graph?)".into(),
        ));
    }

    Ok(NetworkMatrices {
        y,
        g,
        incidence,
        branch_susceptance: bsusc,
        b_reduced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn two_bus(z: Complex64) -> Network {
        Network::radial(
            vec![Line {
                from: 1,
                to: 0,
                impedance: z,
                capacity: 1.0,
            }],
            Complex64::new(1.0, 0.0),
        )
        .unwrap()
    }

    /// The five-node illustrative feeder: lines 1-0, 2-1, 3-2, 4-1.
    pub(crate) fn five_node() -> Network {
        let z = Complex64::new(0.02, 0.04);
        let mk = |from, to| Line {
            from,
            to,
            impedance: z,
            capacity: 1.0,
        };
        Network::radial(
            vec![mk(1, 0), mk(2, 1), mk(3, 2), mk(4, 1)],
            Complex64::new(1.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn two_bus_admittance_is_single_line_admittance() {
        let z = Complex64::new(0.01, 0.01);
        let net = two_bus(z);
        let m = build_matrices(&net).unwrap();
        let y = Complex64::new(1.0, 0.0) / z;
        assert_relative_eq!(m.y[(0, 0)].re, y.re, max_relative = 1e-12);
        assert_relative_eq!(m.y[(0, 0)].im, y.im, max_relative = 1e-12);
        assert_relative_eq!(m.y[(0, 1)].re, -y.re, max_relative = 1e-12);
        assert_relative_eq!(m.y[(1, 0)].im, -y.im, max_relative = 1e-12);
        assert_relative_eq!(m.y[(1, 1)].re, y.re, max_relative = 1e-12);
    }

    #[test]
    fn incidence_rows_have_one_plus_and_one_minus() {
        let net = five_node();
        let m = build_matrices(&net).unwrap();
        for k in 0..net.lines().len() {
            let row = m.incidence.row(k);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == -1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 2);
        }
        // Line 3-2 sits at index 2 and points child 3 → parent 2.
        assert_eq!(m.incidence[(2, 3)], 1.0);
        assert_eq!(m.incidence[(2, 2)], -1.0);
    }

    #[test]
    fn admittance_is_symmetric_with_zero_row_sums() {
        let net = five_node();
        let m = build_matrices(&net).unwrap();
        let n = net.n_nodes();
        for i in 0..n {
            let mut row_sum = Complex64::new(0.0, 0.0);
            for j in 0..n {
                assert_eq!(m.y[(i, j)], m.y[(j, i)]);
                row_sum += m.y[(i, j)];
            }
            assert!(row_sum.norm() < 1e-12, "row {i} sums to {row_sum}");
        }
    }

    #[test]
    fn reduced_b_has_full_rank_on_a_tree() {
        let net = five_node();
        let m = build_matrices(&net).unwrap();
        assert_eq!(m.b_reduced.nrows(), 4);
        assert!(m.b_reduced.clone().lu().is_invertible());
    }

    #[test]
    fn cycle_is_rejected() {
        let z = Complex64::new(0.01, 0.01);
        let mk = |from, to| Line {
            from,
            to,
            impedance: z,
            capacity: 1.0,
        };
        let err = Network::radial(vec![mk(1, 0), mk(2, 1), mk(2, 0)], Complex64::new(1.0, 0.0))
            .unwrap_err();
        assert!(matches!(err, Error::Topology(_)), "{err}");
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let z = Complex64::new(0.01, 0.01);
        let mk = |from, to| Line {
            from,
            to,
            impedance: z,
            capacity: 1.0,
        };
        let err = Network::radial(
            vec![mk(1, 0), mk(3, 2), mk(4, 3), mk(4, 2)],
            Complex64::new(1.0, 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Topology(_)), "{err}");
    }

    #[test]
    fn loader_round_trips_and_reports_bad_lines() {
        let text = "\
# demo feeder
base 100 230 1.0
branch 0 1 0.0529 0.0529 80   # orientation in the file is free
branch 2 1 0.0529 0.0529 60
bind h001 1
bind h002 2
";
        let net = Network::from_str_named(text, "demo.net").unwrap();
        assert_eq!(net.n_nodes(), 3);
        assert_eq!(net.node_of("h001"), Some(1));
        // 0.0529 ohm on a 0.529 ohm base -> 0.1 pu.
        let l = &net.lines()[0];
        assert_eq!((l.from, l.to), (1, 0)); // re-oriented child -> parent
        assert_relative_eq!(l.impedance.re, 0.1, max_relative = 1e-12);
        assert_relative_eq!(l.capacity, 0.8, max_relative = 1e-12);

        let reparsed = Network::from_str_named(&net.to_file_string(), "roundtrip.net").unwrap();
        assert_eq!(reparsed.lines(), net.lines());

        let bad = "base 100 230 1.0\nbranch 0 1 bogus 0.05 80\n";
        match Network::from_str_named(bad, "bad.net").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn binding_to_substation_is_rejected() {
        let net = five_node();
        let err = net
            .with_bindings(BTreeMap::from([("h001".to_string(), 0)]))
            .unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn path_between_crosses_the_common_ancestor() {
        let net = five_node();
        // 3 -> 4: up lines (3,2) idx 2, (2,1) idx 1, then down (4,1) idx 3.
        assert_eq!(net.path_between(3, 4), vec![(2, 1.0), (1, 1.0), (3, -1.0)]);
        assert_eq!(net.path_between(3, 0), vec![(2, 1.0), (1, 1.0), (0, 1.0)]);
        assert!(net.path_between(2, 2).is_empty());
    }
}
