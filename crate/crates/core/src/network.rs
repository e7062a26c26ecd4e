//! Transmission network: admittance matrix assembly, branch outages, bus
//! power flows and the algebraic mismatch rows, plus a Newton power flow
//! used to initialize the dynamic models.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{InputError, Issue, SimError, SimResult};

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

/// A network node. `v`/`theta` hold the power-flow starting point (and the
/// setpoint for the slack bus). The static load at the bus consumes
/// `p_load * V^load_alpha` and `q_load * V^load_beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    #[serde(default = "one")]
    pub v: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub g_shunt: f64,
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default = "two")]
    pub load_alpha: f64,
    #[serde(default = "two")]
    pub load_beta: f64,
}

impl Bus {
    pub fn new(id: u32, kind: BusKind) -> Self {
        Self {
            id,
            kind,
            v: 1.0,
            theta: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            p_load: 0.0,
            q_load: 0.0,
            load_alpha: 2.0,
            load_beta: 2.0,
        }
    }
}

/// π-model branch. The off-nominal tap sits on the `from` side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: String,
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "one")]
    pub tap: f64,
    #[serde(default = "yes")]
    pub in_service: bool,
}

impl Branch {
    pub fn new(id: impl Into<String>, from: u32, to: u32, r: f64, x: f64) -> Self {
        Self {
            id: id.into(),
            from,
            to,
            r,
            x,
            b: 0.0,
            tap: 1.0,
            in_service: true,
        }
    }

    /// The four stamp entries `(ff, ft, tf, tt)` for tap ratio `tap`.
    pub fn stamp(&self, tap: f64) -> [Complex64; 4] {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x);
        let ych = Complex64::new(0.0, self.b / 2.0);
        let ytt = ys + ych;
        let yff = ytt / (tap * tap);
        let yft = -ys / tap;
        [yff, yft, yft, ytt]
    }
}

/// Sparse complex bus admittance matrix with rows ordered by bus id and
/// entries within a row ordered by column.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    bus_ids: Vec<u32>,
    index: BTreeMap<u32, usize>,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    /// Empty matrix over the given bus ids (sorted internally).
    pub fn zeros(bus_ids: &[u32]) -> Self {
        let mut ids = bus_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let rows = vec![Vec::new(); ids.len()];
        Self {
            bus_ids: ids,
            index,
            rows,
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    pub fn index_of(&self, bus_id: u32) -> Option<usize> {
        self.index.get(&bus_id).copied()
    }

    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(p) => self.rows[i][p].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&j, |e| e.0) {
            Ok(p) => row[p].1 += v,
            Err(p) => row.insert(p, (j, v)),
        }
    }

    /// Number of stored (structural) entries.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let n = self.dim();
        let mut d = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                d[i][j] = v;
            }
        }
        d
    }

    /// Adds `sign` times the branch stamp at tap ratio `tap`.
    pub fn stamp_branch(&mut self, branch: &Branch, tap: f64, sign: f64) -> Result<(), Issue> {
        let f = self
            .index_of(branch.from)
            .ok_or_else(|| Issue::new(format!("branch {}", branch.id), format!("unknown from bus {}", branch.from)))?;
        let t = self
            .index_of(branch.to)
            .ok_or_else(|| Issue::new(format!("branch {}", branch.id), format!("unknown to bus {}", branch.to)))?;
        let [yff, yft, ytf, ytt] = branch.stamp(tap);
        self.add(f, f, yff * sign);
        self.add(f, t, yft * sign);
        self.add(t, f, ytf * sign);
        self.add(t, t, ytt * sign);
        Ok(())
    }
}

/// Assembles Y from buses (shunts) and in-service branches at their own taps.
pub fn build_admittance_from(buses: &[Bus], branches: &[Branch]) -> Result<AdmittanceMatrix, InputError> {
    let taps: Vec<f64> = branches.iter().map(|b| b.tap).collect();
    let status: Vec<bool> = branches.iter().map(|b| b.in_service).collect();
    build_admittance_with(buses, branches, &status, &taps)
}

/// Assembles Y with explicit in-service flags and tap ratios per branch.
pub fn build_admittance_with(
    buses: &[Bus],
    branches: &[Branch],
    in_service: &[bool],
    taps: &[f64],
) -> Result<AdmittanceMatrix, InputError> {
    let ids: Vec<u32> = buses.iter().map(|b| b.id).collect();
    let mut y = AdmittanceMatrix::zeros(&ids);
    for bus in buses {
        if bus.g_shunt != 0.0 || bus.b_shunt != 0.0 {
            let i = y.index_of(bus.id).expect("bus present");
            y.add(i, i, Complex64::new(bus.g_shunt, bus.b_shunt));
        }
    }
    let mut issues = Vec::new();
    for (k, br) in branches.iter().enumerate() {
        if !in_service[k] {
            // still validate references
            if y.index_of(br.from).is_none() || y.index_of(br.to).is_none() {
                issues.push(Issue::new(format!("branches[{k}]"), "dangling bus reference"));
            }
            continue;
        }
        if let Err(mut e) = y.stamp_branch(br, taps[k], 1.0) {
            e.path = format!("branches[{k}]");
            issues.push(e);
        }
    }
    if issues.is_empty() {
        Ok(y)
    } else {
        Err(InputError::Invalid(issues))
    }
}

/// Builds the admittance matrix of a case in its as-parsed state.
pub fn build_admittance(case: &crate::scenario::Case) -> Result<AdmittanceMatrix, InputError> {
    build_admittance_from(&case.buses, &case.branches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutageWarning {
    AlreadyOutOfService,
}

#[derive(Debug, Clone)]
pub struct Outage {
    pub matrix: AdmittanceMatrix,
    pub warning: Option<OutageWarning>,
}

/// Removes an in-service branch from Y by subtracting its stamp. The branch
/// carries the tap currently applied to it. An out-of-service branch is a
/// no-op flagged with a warning.
pub fn apply_branch_outage(y: &AdmittanceMatrix, branch: &Branch) -> Result<Outage, Issue> {
    if !branch.in_service {
        return Ok(Outage {
            matrix: y.clone(),
            warning: Some(OutageWarning::AlreadyOutOfService),
        });
    }
    let mut m = y.clone();
    m.stamp_branch(branch, branch.tap, -1.0)?;
    Ok(Outage {
        matrix: m,
        warning: None,
    })
}

/// Active and reactive power leaving each bus into the network.
pub fn bus_flows(y: &AdmittanceMatrix, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = y.dim();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let mut pi = 0.0;
        let mut qi = 0.0;
        for &(j, yij) in y.row(i) {
            let (s, c) = (theta[i] - theta[j]).sin_cos();
            pi += v[j] * (yij.re * c + yij.im * s);
            qi += v[j] * (yij.re * s - yij.im * c);
        }
        p[i] = v[i] * pi;
        q[i] = v[i] * qi;
    }
    (p, q)
}

/// Partial derivatives of the bus flows. Rows are `2i` (P) and `2i+1` (Q);
/// columns are `2j` (V) and `2j+1` (θ), matching the bus part of y.
pub fn bus_flow_jacobian(y: &AdmittanceMatrix, v: &[f64], theta: &[f64], out: &mut Vec<(usize, usize, f64)>) {
    let (p, q) = bus_flows(y, v, theta);
    for i in 0..y.dim() {
        let mut diag_seen = false;
        for &(j, yij) in y.row(i) {
            let (g, b) = (yij.re, yij.im);
            if i == j {
                diag_seen = true;
                out.push((2 * i, 2 * i, p[i] / v[i] + g * v[i]));
                out.push((2 * i, 2 * i + 1, -q[i] - b * v[i] * v[i]));
                out.push((2 * i + 1, 2 * i, q[i] / v[i] - b * v[i]));
                out.push((2 * i + 1, 2 * i + 1, p[i] - g * v[i] * v[i]));
            } else {
                let (s, c) = (theta[i] - theta[j]).sin_cos();
                out.push((2 * i, 2 * j, v[i] * (g * c + b * s)));
                out.push((2 * i, 2 * j + 1, v[i] * v[j] * (g * s - b * c)));
                out.push((2 * i + 1, 2 * j, v[i] * (g * s - b * c)));
                out.push((2 * i + 1, 2 * j + 1, -v[i] * v[j] * (g * c + b * s)));
            }
        }
        if !diag_seen {
            // isolated bus: flows are identically zero, derivatives too
            out.push((2 * i, 2 * i, p[i] / v[i]));
            out.push((2 * i + 1, 2 * i, q[i] / v[i]));
        }
    }
}

/// Slack bus pinning: its two rows become `θ − θ_set` and `V − V_set`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackPin {
    pub bus: usize,
    pub v: f64,
    pub theta: f64,
}

/// Bus mismatch rows `[P_0, Q_0, P_1, Q_1, ...]`: device injection minus
/// network flow, with the slack rows replaced by pinning equations.
pub fn network_mismatch(
    y: &AdmittanceMatrix,
    slack: Option<SlackPin>,
    v: &[f64],
    theta: &[f64],
    inj_p: &[f64],
    inj_q: &[f64],
) -> Vec<f64> {
    let (p, q) = bus_flows(y, v, theta);
    let mut g = Vec::with_capacity(2 * y.dim());
    for i in 0..y.dim() {
        match slack {
            Some(s) if s.bus == i => {
                g.push(theta[i] - s.theta);
                g.push(v[i] - s.v);
            }
            _ => {
                g.push(inj_p[i] - p[i]);
                g.push(inj_q[i] - q[i]);
            }
        }
    }
    g
}

/// Voltage-dependent load on a bus for the power flow: `p0 V^alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfLoad {
    pub bus: usize,
    pub p0: f64,
    pub q0: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfBusType {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone)]
pub struct PowerFlowProblem {
    pub types: Vec<PfBusType>,
    /// Scheduled generation per bus (ignored at the slack).
    pub p_gen: Vec<f64>,
    /// Voltage magnitude setpoint (slack/PV) or starting value (PQ).
    pub v0: Vec<f64>,
    pub theta0: Vec<f64>,
    pub loads: Vec<PfLoad>,
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Net generation needed at each bus (flow out plus local load).
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub iterations: usize,
}

fn pf_load_at(loads: &[PfLoad], n: usize, v: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut pl = vec![0.0; n];
    let mut ql = vec![0.0; n];
    let mut dpl = vec![0.0; n];
    let mut dql = vec![0.0; n];
    for l in loads {
        let vv = v[l.bus];
        pl[l.bus] += l.p0 * vv.powf(l.alpha);
        ql[l.bus] += l.q0 * vv.powf(l.beta);
        dpl[l.bus] += l.p0 * l.alpha * vv.powf(l.alpha - 1.0);
        dql[l.bus] += l.q0 * l.beta * vv.powf(l.beta - 1.0);
    }
    (pl, ql, dpl, dql)
}

/// Full Newton power flow in polar coordinates.
pub fn solve_power_flow(y: &AdmittanceMatrix, pf: &PowerFlowProblem, tol: f64, max_iter: usize) -> SimResult<PowerFlowSolution> {
    let n = y.dim();
    let mut v = pf.v0.clone();
    let mut th = pf.theta0.clone();
    // unknown map: θ for non-slack, V for PQ
    let mut cols: Vec<(usize, bool)> = Vec::new(); // (bus, is_voltage)
    let mut rows: Vec<(usize, bool)> = Vec::new(); // (bus, is_q)
    for i in 0..n {
        if pf.types[i] != PfBusType::Slack {
            cols.push((i, false));
            rows.push((i, false));
        }
    }
    for i in 0..n {
        if pf.types[i] == PfBusType::Pq {
            cols.push((i, true));
            rows.push((i, true));
        }
    }
    let m = cols.len();
    let mut col_of = vec![[usize::MAX; 2]; n];
    for (k, &(i, isv)) in cols.iter().enumerate() {
        col_of[i][usize::from(isv)] = k;
    }
    let mut mismatch = f64::INFINITY;
    for it in 0..=max_iter {
        let (p, q) = bus_flows(y, &v, &th);
        let (pl, ql, dpl, dql) = pf_load_at(&pf.loads, n, &v);
        let mut f = DVector::zeros(m);
        for (r, &(i, isq)) in rows.iter().enumerate() {
            f[r] = if isq { -ql[i] - q[i] } else { pf.p_gen[i] - pl[i] - p[i] };
        }
        mismatch = f.amax();
        if !mismatch.is_finite() {
            break;
        }
        if mismatch <= tol {
            let (pl, ql, _, _) = pf_load_at(&pf.loads, n, &v);
            let p_gen = (0..n).map(|i| p[i] + pl[i]).collect();
            let q_gen = (0..n).map(|i| q[i] + ql[i]).collect();
            return Ok(PowerFlowSolution {
                v,
                theta: th,
                p_gen,
                q_gen,
                iterations: it,
            });
        }
        if it == max_iter {
            break;
        }
        let mut trip = Vec::new();
        bus_flow_jacobian(y, &v, &th, &mut trip);
        let mut jac = DMatrix::zeros(m, m);
        let mut row_of = vec![[usize::MAX; 2]; n];
        for (k, &(i, isq)) in rows.iter().enumerate() {
            row_of[i][usize::from(isq)] = k;
        }
        for (r, c, val) in trip {
            let (bi, isq) = (r / 2, r % 2 == 1);
            let (bj, isv) = (c / 2, c % 2 == 0);
            let rr = row_of[bi][usize::from(isq)];
            let cc = col_of[bj][usize::from(isv)];
            if rr != usize::MAX && cc != usize::MAX {
                jac[(rr, cc)] -= val;
            }
        }
        for &(i, isv) in &cols {
            if isv {
                let cc = col_of[i][1];
                if let Some(rp) = Some(row_of[i][0]).filter(|&r| r != usize::MAX) {
                    jac[(rp, cc)] -= dpl[i];
                }
                if let Some(rq) = Some(row_of[i][1]).filter(|&r| r != usize::MAX) {
                    jac[(rq, cc)] -= dql[i];
                }
            }
        }
        let dx = jac.lu().solve(&f).ok_or(SimError::PowerFlow { mismatch })?;
        for (k, &(i, isv)) in cols.iter().enumerate() {
            if isv {
                v[i] -= dx[k];
            } else {
                th[i] -= dx[k];
            }
        }
    }
    Err(SimError::PowerFlow { mismatch })
}
