//! Global model assembly: the state partition, residual rows `[h_c; f; g]`
//! over the unknown vector `w = [z_c; x; y]`, their Jacobian, and the
//! discrete update of the tap changers.

use nalgebra::DMatrix;

use crate::devices::avr::{avr_derivatives, AvrParams};
use crate::devices::generator::{self as gen, generator_derivatives, initialize_machine, GeneratorParams, GeneratorState, MachineInputs};
use crate::devices::governor::{governor_dynamics, GovernorModes, GovernorParams, GovernorState};
use crate::devices::load::{recovery_load_dynamics, RecoveryLoadParams, RecoveryLoadState};
use crate::devices::ltc::{ltc_transition, LtcClock, LtcParams, LtcState};
use crate::devices::oxl::{oxl_rate, OxlClock, OxlMode, OxlParams};
use crate::devices::{clamp_after, clamp_at_start, Clamp};
use crate::error::{SimError, SimResult};
use crate::network::{
    apply_branch_outage, build_admittance_with, bus_flow_jacobian, bus_flows, solve_power_flow, AdmittanceMatrix, BusKind, PfBusType,
    PfLoad, PowerFlowProblem,
};
use crate::scenario::{Case, StudyRegion};

/// Sizes of the device populations, which fix every index in the flat
/// vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_oxl: usize,
    pub n_gov: usize,
    pub n_load: usize,
    pub n_ltc: usize,
    pub n_gen: usize,
    pub n_avr: usize,
    pub n_bus: usize,
}

impl Layout {
    pub fn n_zc(&self) -> usize {
        self.n_oxl + 2 * self.n_gov + 2 * self.n_load
    }
    pub fn n_zd(&self) -> usize {
        self.n_ltc
    }
    pub fn n_x(&self) -> usize {
        4 * self.n_gen + 3 * self.n_avr
    }
    pub fn n_y(&self) -> usize {
        2 * self.n_bus + 2 * self.n_gen
    }
    /// Length of `w = [z_c; x; y]`.
    pub fn n(&self) -> usize {
        self.n_zc() + self.n_x() + self.n_y()
    }
    pub fn x_offset(&self) -> usize {
        self.n_zc()
    }
    pub fn y_offset(&self) -> usize {
        self.n_zc() + self.n_x()
    }

    pub fn oxl(&self, i: usize) -> usize {
        i
    }
    pub fn gov_pg(&self, i: usize) -> usize {
        self.n_oxl + 2 * i
    }
    pub fn gov_pm(&self, i: usize) -> usize {
        self.n_oxl + 2 * i + 1
    }
    pub fn load_xp(&self, i: usize) -> usize {
        self.n_oxl + 2 * self.n_gov + 2 * i
    }
    pub fn load_xq(&self, i: usize) -> usize {
        self.load_xp(i) + 1
    }
    /// Machine state `k` (δ, ω, e'_q, e'_d) of generator `i`.
    pub fn gen(&self, i: usize, k: usize) -> usize {
        self.x_offset() + 4 * i + k
    }
    /// Regulator state `k` (v_m, v_r, e_fd) of AVR `i`.
    pub fn avr(&self, i: usize, k: usize) -> usize {
        self.x_offset() + 4 * self.n_gen + 3 * i + k
    }
    /// Bus voltage magnitude; its row is the active-power balance.
    pub fn bus_v(&self, b: usize) -> usize {
        self.y_offset() + 2 * b
    }
    /// Bus angle; its row is the reactive-power balance.
    pub fn bus_theta(&self, b: usize) -> usize {
        self.y_offset() + 2 * b + 1
    }
    pub fn gen_id(&self, i: usize) -> usize {
        self.y_offset() + 2 * self.n_bus + 2 * i
    }
    pub fn gen_iq(&self, i: usize) -> usize {
        self.gen_id(i) + 1
    }

    pub fn slow(&self) -> std::ops::Range<usize> {
        0..self.n_zc()
    }
    pub fn fast(&self) -> std::ops::Range<usize> {
        self.x_offset()..self.y_offset()
    }
    pub fn algebraic(&self) -> std::ops::Range<usize> {
        self.y_offset()..self.n()
    }
}

/// The four-way split of the system state.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePartition {
    pub z_c: Vec<f64>,
    pub z_d: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl StatePartition {
    /// Flat `[z_c; x; y]`.
    pub fn gather(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.z_c.len() + self.x.len() + self.y.len());
        w.extend_from_slice(&self.z_c);
        w.extend_from_slice(&self.x);
        w.extend_from_slice(&self.y);
        w
    }

    pub fn scatter(layout: &Layout, w: &[f64], z_d: Vec<f64>) -> Self {
        assert_eq!(w.len(), layout.n());
        let (zc, rest) = w.split_at(layout.n_zc());
        let (x, y) = rest.split_at(layout.n_x());
        Self {
            z_c: zc.to_vec(),
            z_d,
            x: x.to_vec(),
            y: y.to_vec(),
        }
    }

    pub fn set_continuous(&mut self, w: &[f64]) {
        let nz = self.z_c.len();
        let nx = self.x.len();
        self.z_c.copy_from_slice(&w[..nz]);
        self.x.copy_from_slice(&w[nz..nz + nx]);
        self.y.copy_from_slice(&w[nz + nx..]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenBlock {
    pub params: GeneratorParams,
    pub bus: usize,
    pub avr: Option<usize>,
    pub oxl: Option<usize>,
    pub gov: Option<usize>,
    /// Mechanical power when no governor is fitted.
    pub p_m0: f64,
    /// Field voltage when no regulator is fitted.
    pub e_fd0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvrBlock {
    pub params: AvrParams,
    pub gen: usize,
    pub v_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OxlBlock {
    pub params: OxlParams,
    pub gen: usize,
    pub avr: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GovBlock {
    pub params: GovernorParams,
    pub gen: usize,
    pub p_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadBlock {
    pub params: RecoveryLoadParams,
    pub bus: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtcBlock {
    pub params: LtcParams,
    pub branch: usize,
    pub bus: usize,
}

/// Topology and exogenous load state, with the admittance matrix that
/// matches it and the current tap positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub in_service: Vec<bool>,
    pub load_dp: Vec<f64>,
    pub load_dq: Vec<f64>,
    pub y: AdmittanceMatrix,
    /// Bumped on every change; part of the Newton matrix cache key.
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clocks {
    pub oxl: Vec<OxlClock>,
    pub ltc: Vec<LtcClock>,
}

impl Clocks {
    /// True when no tap changer is timing toward a move and no limiter is
    /// counting toward pickup.
    pub fn quiescent(&self) -> bool {
        self.ltc.iter().all(|c| !c.is_pending()) && self.oxl.iter().all(|c| !c.is_pending())
    }
}

/// Limit status of every hard-limited state, fixed within one step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Modes {
    pub avr: Vec<Clamp>,
    pub gov: Vec<GovernorModes>,
    pub oxl: Vec<OxlMode>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub part: StatePartition,
    pub clocks: Clocks,
    pub grid: Grid,
    /// Number of discrete jumps so far.
    pub k: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapChange {
    pub ltc: usize,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOutcome {
    pub z_d: Vec<f64>,
    pub ltc_clocks: Vec<LtcClock>,
    pub changes: Vec<TapChange>,
    pub jumped: bool,
    pub k: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub h_c: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl Residuals {
    pub fn norms(&self) -> (f64, f64, f64) {
        (inf_norm(&self.h_c), inf_norm(&self.f), inf_norm(&self.g))
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Row/column blocks of the Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub dzc_hc: DMatrix<f64>,
    pub dx_hc: DMatrix<f64>,
    pub dy_hc: DMatrix<f64>,
    pub dzc_f: DMatrix<f64>,
    pub dx_f: DMatrix<f64>,
    pub dy_f: DMatrix<f64>,
    pub dzc_g: DMatrix<f64>,
    pub dx_g: DMatrix<f64>,
    pub dy_g: DMatrix<f64>,
}

impl JacobianBlocks {
    pub fn from_full(layout: &Layout, j: &DMatrix<f64>) -> Self {
        let (s, f, a) = (layout.slow(), layout.fast(), layout.algebraic());
        let blk = |r: &std::ops::Range<usize>, c: &std::ops::Range<usize>| j.view((r.start, c.start), (r.len(), c.len())).into_owned();
        Self {
            dzc_hc: blk(&s, &s),
            dx_hc: blk(&s, &f),
            dy_hc: blk(&s, &a),
            dzc_f: blk(&f, &s),
            dx_f: blk(&f, &f),
            dy_f: blk(&f, &a),
            dzc_g: blk(&a, &s),
            dx_g: blk(&a, &f),
            dy_g: blk(&a, &a),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    pub case: Case,
    pub layout: Layout,
    pub gens: Vec<GenBlock>,
    pub avrs: Vec<AvrBlock>,
    pub oxls: Vec<OxlBlock>,
    pub govs: Vec<GovBlock>,
    pub loads: Vec<LoadBlock>,
    pub ltcs: Vec<LtcBlock>,
    pub slack: usize,
    pub slack_v: f64,
    pub slack_theta: f64,
    pub omega_base: f64,
    /// Ratio of time scales: one over the largest device time constant.
    pub epsilon: f64,
}

impl SystemModel {
    /// Builds the model and its pre-disturbance operating point: Newton
    /// power flow, then every device initialized at rest.
    pub fn initialize(case: &Case) -> SimResult<(SystemModel, SimState)> {
        let mut model = Self::assemble(case)?;
        let state = model.solve_initial_point()?;
        Ok((model, state))
    }

    fn assemble(case: &Case) -> SimResult<SystemModel> {
        let bus_ix = |id: u32| {
            case.buses
                .iter()
                .position(|b| b.id == id)
                .ok_or_else(|| SimError::Invariant(format!("unknown bus {id}")))
        };
        let gen_ix = |id: &str| case.generator_index(id).ok_or_else(|| SimError::Invariant(format!("unknown generator {id}")));
        if case.buses.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(SimError::Invariant("buses must be sorted by id".into()));
        }
        let slack = case
            .buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .ok_or_else(|| SimError::Invariant("no slack bus".into()))?;

        let mut gens: Vec<GenBlock> = Vec::new();
        for g in &case.generators {
            gens.push(GenBlock {
                params: g.clone(),
                bus: bus_ix(g.bus)?,
                avr: None,
                oxl: None,
                gov: None,
                p_m0: 0.0,
                e_fd0: 0.0,
            });
        }
        let mut avrs = Vec::new();
        for (i, a) in case.avrs.iter().enumerate() {
            let g = gen_ix(&a.generator)?;
            gens[g].avr = Some(i);
            avrs.push(AvrBlock {
                params: a.clone(),
                gen: g,
                v_ref: 1.0,
            });
        }
        let mut oxls = Vec::new();
        for (i, o) in case.oxls.iter().enumerate() {
            let g = gen_ix(&o.generator)?;
            let avr = gens[g]
                .avr
                .ok_or_else(|| SimError::Invariant(format!("limiter on {} without regulator", o.generator)))?;
            gens[g].oxl = Some(i);
            oxls.push(OxlBlock {
                params: o.clone(),
                gen: g,
                avr,
            });
        }
        let mut govs = Vec::new();
        for (i, p) in case.governors.iter().enumerate() {
            let g = gen_ix(&p.generator)?;
            gens[g].gov = Some(i);
            govs.push(GovBlock {
                params: p.clone(),
                gen: g,
                p_ref: 0.0,
            });
        }
        let loads = case
            .recovery_loads
            .iter()
            .map(|l| Ok(LoadBlock { params: l.clone(), bus: bus_ix(l.bus)? }))
            .collect::<SimResult<Vec<_>>>()?;
        let ltcs = case
            .ltcs
            .iter()
            .map(|t| {
                Ok(LtcBlock {
                    params: t.clone(),
                    branch: case
                        .branch_index(&t.branch)
                        .ok_or_else(|| SimError::Invariant(format!("unknown branch {}", t.branch)))?,
                    bus: bus_ix(t.controlled_bus)?,
                })
            })
            .collect::<SimResult<Vec<_>>>()?;

        let layout = Layout {
            n_oxl: oxls.len(),
            n_gov: govs.len(),
            n_load: loads.len(),
            n_ltc: ltcs.len(),
            n_gen: gens.len(),
            n_avr: avrs.len(),
            n_bus: case.buses.len(),
        };
        let mut model = SystemModel {
            case: case.clone(),
            layout,
            gens,
            avrs,
            oxls,
            govs,
            loads,
            ltcs,
            slack,
            slack_v: case.buses[slack].v,
            slack_theta: case.buses[slack].theta,
            omega_base: 2.0 * std::f64::consts::PI * case.frequency_hz,
            epsilon: 1.0,
        };
        model.epsilon = 1.0 / model.max_time_constant();
        Ok(model)
    }

    /// Largest continuous time constant among the devices (the limiter
    /// contributes `1/k_oxl`).
    pub fn max_time_constant(&self) -> f64 {
        let mut m: f64 = 0.0;
        for g in &self.gens {
            m = m.max(g.params.td0_prime).max(g.params.tq0_prime).max(2.0 * g.params.h);
        }
        for a in &self.avrs {
            m = m.max(a.params.ta).max(a.params.tr).max(a.params.te);
        }
        for o in &self.oxls {
            m = m.max(1.0 / o.params.k_oxl);
        }
        for g in &self.govs {
            m = m.max(g.params.t_servo).max(g.params.t_turbine);
        }
        for l in &self.loads {
            m = m.max(l.params.tp).max(l.params.tq);
        }
        m.max(f64::MIN_POSITIVE)
    }

    fn solve_initial_point(&mut self) -> SimResult<SimState> {
        let case = &self.case;
        let n_bus = self.layout.n_bus;
        let taps: Vec<f64> = case.branches.iter().map(|b| b.tap).collect();
        let in_service: Vec<bool> = case.branches.iter().map(|b| b.in_service).collect();
        let y = build_admittance_with(&case.buses, &case.branches, &in_service, &taps)
            .map_err(|e| SimError::Invariant(e.to_string()))?;

        let mut types = vec![PfBusType::Pq; n_bus];
        let mut p_gen = vec![0.0; n_bus];
        let mut v0: Vec<f64> = case.buses.iter().map(|b| b.v).collect();
        let theta0: Vec<f64> = case.buses.iter().map(|b| b.theta).collect();
        types[self.slack] = PfBusType::Slack;
        for g in &self.gens {
            types[g.bus] = PfBusType::Pv;
            p_gen[g.bus] = g.params.p_set;
            v0[g.bus] = g.params.v_set;
        }
        let mut pf_loads = Vec::new();
        for (i, b) in case.buses.iter().enumerate() {
            if b.p_load != 0.0 || b.q_load != 0.0 {
                pf_loads.push(PfLoad {
                    bus: i,
                    p0: b.p_load,
                    q0: b.q_load,
                    alpha: b.load_alpha,
                    beta: b.load_beta,
                });
            }
        }
        for l in &self.loads {
            pf_loads.push(PfLoad {
                bus: l.bus,
                p0: l.params.p0,
                q0: l.params.q0,
                alpha: l.params.alpha_s,
                beta: l.params.beta_s,
            });
        }
        let pf = solve_power_flow(
            &y,
            &PowerFlowProblem {
                types,
                p_gen,
                v0,
                theta0,
                loads: pf_loads,
            },
            1e-12,
            30,
        )?;

        let lay = self.layout;
        let mut w = vec![0.0; lay.n()];
        for b in 0..n_bus {
            w[lay.bus_v(b)] = pf.v[b];
            w[lay.bus_theta(b)] = pf.theta[b];
        }
        for i in 0..self.gens.len() {
            let b = self.gens[i].bus;
            let op = initialize_machine(&self.gens[i].params, pf.v[b], pf.theta[b], pf.p_gen[b], pf.q_gen[b]);
            let st = op.state;
            for (k, v) in [st.delta, st.omega, st.eq_prime, st.ed_prime].into_iter().enumerate() {
                w[lay.gen(i, k)] = v;
            }
            w[lay.gen_id(i)] = op.id;
            w[lay.gen_iq(i)] = op.iq;
            self.gens[i].p_m0 = op.p_m;
            self.gens[i].e_fd0 = op.e_fd;
            if let Some(a) = self.gens[i].avr {
                let ap = &self.avrs[a].params;
                if op.e_fd > ap.efd_max || op.e_fd < ap.efd_min {
                    return Err(SimError::Invariant(format!(
                        "initial field voltage {:.4} of {} outside regulator limits",
                        op.e_fd, self.gens[i].params.id
                    )));
                }
                self.avrs[a].v_ref = ap.reference_for(pf.v[b], op.e_fd);
                w[lay.avr(a, 0)] = pf.v[b];
                w[lay.avr(a, 1)] = op.e_fd;
                w[lay.avr(a, 2)] = op.e_fd;
            }
            if let Some(g) = self.gens[i].gov {
                let gp = &self.govs[g].params;
                if op.p_m > gp.p_max || op.p_m < 0.0 {
                    return Err(SimError::Invariant(format!(
                        "initial mechanical power {:.4} of {} outside governor limits",
                        op.p_m, self.gens[i].params.id
                    )));
                }
                self.govs[g].p_ref = op.p_m;
                w[lay.gov_pg(g)] = op.p_m;
                w[lay.gov_pm(g)] = op.p_m;
            }
        }
        for (i, l) in self.loads.iter().enumerate() {
            let eq = l.params.equilibrium(pf.v[l.bus]);
            w[lay.load_xp(i)] = eq.x_p;
            w[lay.load_xq(i)] = eq.x_q;
        }
        let z_d = self.ltcs.iter().map(|t| self.case.branches[t.branch].tap).collect::<Vec<_>>();
        let grid = Grid {
            in_service,
            load_dp: vec![0.0; n_bus],
            load_dq: vec![0.0; n_bus],
            y,
            revision: 0,
        };
        let part = StatePartition::scatter(&lay, &w, z_d);
        let mut clocks = Clocks {
            oxl: vec![OxlClock::default(); self.oxls.len()],
            ltc: vec![LtcClock::default(); self.ltcs.len()],
        };
        let i_f = self.field_currents(&w);
        for (i, (o, c)) in self.oxls.iter().zip(clocks.oxl.iter_mut()).enumerate() {
            c.observe(&o.params, 0.0, i_f[o.gen], part.z_c[lay.oxl(i)]);
        }
        Ok(SimState {
            t: 0.0,
            part,
            clocks,
            grid,
            k: 0,
        })
    }

    /// Tap ratio applied to every branch for discrete state `z_d`.
    pub fn taps(&self, z_d: &[f64]) -> Vec<f64> {
        let mut taps: Vec<f64> = self.case.branches.iter().map(|b| b.tap).collect();
        for (t, &n) in self.ltcs.iter().zip(z_d) {
            taps[t.branch] = n;
        }
        taps
    }

    /// Rebuilds the admittance matrix for new taps or topology.
    pub fn rebuild_grid(&self, grid: &Grid, z_d: &[f64]) -> Grid {
        let y = build_admittance_with(&self.case.buses, &self.case.branches, &grid.in_service, &self.taps(z_d))
            .expect("case validated at load time");
        Grid {
            y,
            revision: grid.revision + 1,
            ..grid.clone()
        }
    }

    /// Takes a branch out of service. Returns `None` if it already was.
    pub fn trip_branch(&self, grid: &Grid, z_d: &[f64], branch: usize) -> Option<Grid> {
        if !grid.in_service[branch] {
            return None;
        }
        let mut br = self.case.branches[branch].clone();
        br.tap = self.taps(z_d)[branch];
        br.in_service = true;
        let out = apply_branch_outage(&grid.y, &br).expect("case validated at load time");
        let mut in_service = grid.in_service.clone();
        in_service[branch] = false;
        Some(Grid {
            in_service,
            y: out.matrix,
            revision: grid.revision + 1,
            ..grid.clone()
        })
    }

    pub fn step_load(&self, grid: &Grid, bus: usize, dp: f64, dq: f64) -> Grid {
        let mut g = grid.clone();
        g.load_dp[bus] += dp;
        g.load_dq[bus] += dq;
        g.revision += 1;
        g
    }

    pub fn field_currents(&self, w: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        self.gens
            .iter()
            .enumerate()
            .map(|(i, g)| g.params.field_current(w[lay.gen(i, 2)], w[lay.gen_id(i)]))
            .collect()
    }

    fn mech_power(&self, i: usize, w: &[f64]) -> f64 {
        match self.gens[i].gov {
            Some(g) => w[self.layout.gov_pm(g)],
            None => self.gens[i].p_m0,
        }
    }

    fn field_voltage(&self, i: usize, w: &[f64]) -> f64 {
        match self.gens[i].avr {
            Some(a) => w[self.layout.avr(a, 2)],
            None => self.gens[i].e_fd0,
        }
    }

    /// Limit statuses appropriate at the start of a step from `w`.
    pub fn modes_at(&self, w: &[f64], clocks: &Clocks) -> Modes {
        let lay = &self.layout;
        let i_f = self.field_currents(w);
        Modes {
            avr: self
                .avrs
                .iter()
                .enumerate()
                .map(|(a, b)| clamp_at_start(w[lay.avr(a, 2)], w[lay.avr(a, 1)], b.params.efd_min, b.params.efd_max))
                .collect(),
            gov: self
                .govs
                .iter()
                .enumerate()
                .map(|(g, b)| GovernorModes::at_start(&b.params, &gov_state(lay, g, w), b.p_ref, w[lay.gen(b.gen, 1)]))
                .collect(),
            oxl: self
                .oxls
                .iter()
                .enumerate()
                .map(|(o, b)| OxlMode::at_start(&b.params, &clocks.oxl[o], w[lay.oxl(o)], i_f[b.gen]))
                .collect(),
        }
    }

    /// The statuses a step ending at `w` should have used.
    pub fn modes_after(&self, modes: &Modes, w: &[f64]) -> Modes {
        let lay = &self.layout;
        let i_f = self.field_currents(w);
        Modes {
            avr: self
                .avrs
                .iter()
                .enumerate()
                .map(|(a, b)| clamp_after(w[lay.avr(a, 2)], w[lay.avr(a, 1)], b.params.efd_min, b.params.efd_max, modes.avr[a]))
                .collect(),
            gov: self
                .govs
                .iter()
                .enumerate()
                .map(|(g, b)| modes.gov[g].after(&b.params, &gov_state(lay, g, w), b.p_ref, w[lay.gen(b.gen, 1)]))
                .collect(),
            oxl: self
                .oxls
                .iter()
                .enumerate()
                .map(|(o, b)| modes.oxl[o].after(&b.params, w[lay.oxl(o)], i_f[b.gen]))
                .collect(),
        }
    }

    /// Residual rows `[h_c; f; g]` at `w`. With `jac` given, also writes
    /// the analytic Jacobian into it (overwriting).
    pub fn eval_rows(&self, w: &[f64], grid: &Grid, modes: &Modes, mut jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
        let lay = &self.layout;
        let n = lay.n();
        debug_assert_eq!(w.len(), n);
        let mut r = vec![0.0; n];
        if let Some(j) = jac.as_deref_mut() {
            if j.nrows() != n || j.ncols() != n {
                *j = DMatrix::zeros(n, n);
            } else {
                j.fill(0.0);
            }
        }
        macro_rules! add {
            ($row:expr, $col:expr, $v:expr) => {
                if let Some(j) = jac.as_deref_mut() {
                    j[($row, $col)] += $v;
                }
            };
        }
        let slack = self.slack;
        let p_row = |b: usize| lay.bus_v(b);
        let q_row = |b: usize| lay.bus_theta(b);

        // generators
        let mut if_partials = Vec::with_capacity(self.gens.len());
        for (i, gb) in self.gens.iter().enumerate() {
            let st = GeneratorState {
                delta: w[lay.gen(i, 0)],
                omega: w[lay.gen(i, 1)],
                eq_prime: w[lay.gen(i, 2)],
                ed_prime: w[lay.gen(i, 3)],
            };
            let u = MachineInputs {
                v: w[lay.bus_v(gb.bus)],
                theta: w[lay.bus_theta(gb.bus)],
                id: w[lay.gen_id(i)],
                iq: w[lay.gen_iq(i)],
                p_m: self.mech_power(i, w),
                e_fd: self.field_voltage(i, w),
            };
            let ev = generator_derivatives(&gb.params, &st, &u, self.omega_base);
            let cols: [Option<usize>; gen::N_LOCAL] = [
                Some(lay.gen(i, 0)),
                Some(lay.gen(i, 1)),
                Some(lay.gen(i, 2)),
                Some(lay.gen(i, 3)),
                Some(lay.gen_id(i)),
                Some(lay.gen_iq(i)),
                Some(lay.bus_v(gb.bus)),
                Some(lay.bus_theta(gb.bus)),
                gb.gov.map(|g| lay.gov_pm(g)),
                gb.avr.map(|a| lay.avr(a, 2)),
            ];
            let mut rows: Vec<(usize, usize)> = (0..4).map(|k| (k, lay.gen(i, k))).collect();
            rows.push((gen::R_STATOR_D, lay.gen_id(i)));
            rows.push((gen::R_STATOR_Q, lay.gen_iq(i)));
            if gb.bus != slack {
                rows.push((gen::R_P, p_row(gb.bus)));
                rows.push((gen::R_Q, q_row(gb.bus)));
            }
            for (lr, gr) in rows {
                r[gr] += ev.val[lr];
                for (lc, c) in cols.iter().enumerate() {
                    if let Some(c) = *c {
                        if ev.jac[lr][lc] != 0.0 {
                            add!(gr, c, ev.jac[lr][lc]);
                        }
                    }
                }
            }
            if_partials.push([(lay.gen(i, 2), ev.jac[gen::R_IF][gen::L_EQP]), (lay.gen_id(i), ev.jac[gen::R_IF][gen::L_ID])]);
        }
        let i_f = self.field_currents(w);

        // voltage regulators
        for (a, ab) in self.avrs.iter().enumerate() {
            let gb = &self.gens[ab.gen];
            let st = crate::devices::AvrState {
                v_m: w[lay.avr(a, 0)],
                v_r: w[lay.avr(a, 1)],
                e_fd: w[lay.avr(a, 2)],
            };
            let oxl_col = gb.oxl.map(|o| lay.oxl(o));
            let v_oxl = oxl_col.map_or(0.0, |c| w[c]);
            let ev = avr_derivatives(&ab.params, &st, ab.v_ref, w[lay.bus_v(gb.bus)], v_oxl, modes.avr[a]);
            let cols = [Some(lay.avr(a, 0)), Some(lay.avr(a, 1)), Some(lay.avr(a, 2)), Some(lay.bus_v(gb.bus)), oxl_col];
            for k in 0..3 {
                let row = lay.avr(a, k);
                r[row] += ev.val[k];
                for (lc, c) in cols.iter().enumerate() {
                    if let Some(c) = *c {
                        if ev.jac[k][lc] != 0.0 {
                            add!(row, c, ev.jac[k][lc]);
                        }
                    }
                }
            }
        }

        // limiters
        for (o, ob) in self.oxls.iter().enumerate() {
            let row = lay.oxl(o);
            let (rate, dv, dif) = oxl_rate(&ob.params, modes.oxl[o], w[row], i_f[ob.gen]);
            r[row] += rate;
            add!(row, row, dv);
            if dif != 0.0 {
                for (c, d) in if_partials[ob.gen] {
                    add!(row, c, dif * d);
                }
            }
        }

        // governors
        for (g, gb) in self.govs.iter().enumerate() {
            let ev = governor_dynamics(&gb.params, &gov_state(lay, g, w), gb.p_ref, w[lay.gen(gb.gen, 1)], modes.gov[g]);
            let cols = [lay.gov_pg(g), lay.gov_pm(g), lay.gen(gb.gen, 1)];
            for (k, row) in [lay.gov_pg(g), lay.gov_pm(g)].into_iter().enumerate() {
                r[row] += ev.val[k];
                for (lc, &c) in cols.iter().enumerate() {
                    if ev.jac[k][lc] != 0.0 {
                        add!(row, c, ev.jac[k][lc]);
                    }
                }
            }
        }

        // recovery loads
        for (l, lb) in self.loads.iter().enumerate() {
            let st = RecoveryLoadState {
                x_p: w[lay.load_xp(l)],
                x_q: w[lay.load_xq(l)],
            };
            let vcol = lay.bus_v(lb.bus);
            let ev = recovery_load_dynamics(&lb.params, &st, w[vcol]);
            let cols = [lay.load_xp(l), lay.load_xq(l), vcol];
            let rows = [(lay.load_xp(l), 1.0), (lay.load_xq(l), 1.0), (p_row(lb.bus), -1.0), (q_row(lb.bus), -1.0)];
            for (k, &(row, sign)) in rows.iter().enumerate() {
                if k >= 2 && lb.bus == slack {
                    continue;
                }
                r[row] += sign * ev.val[k];
                for (lc, &c) in cols.iter().enumerate() {
                    if ev.jac[k][lc] != 0.0 {
                        add!(row, c, sign * ev.jac[k][lc]);
                    }
                }
            }
        }

        // static loads and network flows
        let nb = lay.n_bus;
        let v: Vec<f64> = (0..nb).map(|b| w[lay.bus_v(b)]).collect();
        let th: Vec<f64> = (0..nb).map(|b| w[lay.bus_theta(b)]).collect();
        let (pf, qf) = bus_flows(&grid.y, &v, &th);
        for (b, bus) in self.case.buses.iter().enumerate() {
            if b == slack {
                continue;
            }
            let p0 = bus.p_load + grid.load_dp[b];
            let q0 = bus.q_load + grid.load_dq[b];
            let vb = v[b];
            r[p_row(b)] -= p0 * vb.powf(bus.load_alpha) + pf[b];
            r[q_row(b)] -= q0 * vb.powf(bus.load_beta) + qf[b];
            if p0 != 0.0 {
                add!(p_row(b), lay.bus_v(b), -p0 * bus.load_alpha * vb.powf(bus.load_alpha - 1.0));
            }
            if q0 != 0.0 {
                add!(q_row(b), lay.bus_v(b), -q0 * bus.load_beta * vb.powf(bus.load_beta - 1.0));
            }
        }
        if jac.is_some() {
            let mut trip = Vec::new();
            bus_flow_jacobian(&grid.y, &v, &th, &mut trip);
            for (rr, cc, val) in trip {
                let b = rr / 2;
                if b == slack {
                    continue;
                }
                add!(lay.y_offset() + rr, lay.y_offset() + cc, -val);
            }
        }
        // the slack is an infinite bus
        r[p_row(slack)] = w[lay.bus_theta(slack)] - self.slack_theta;
        r[q_row(slack)] = w[lay.bus_v(slack)] - self.slack_v;
        add!(p_row(slack), lay.bus_theta(slack), 1.0);
        add!(q_row(slack), lay.bus_v(slack), 1.0);
        r
    }

    pub fn eval_residuals(&self, part: &StatePartition, grid: &Grid, modes: &Modes) -> Residuals {
        let rows = self.eval_rows(&part.gather(), grid, modes, None);
        self.split_rows(&rows)
    }

    pub fn split_rows(&self, rows: &[f64]) -> Residuals {
        let lay = &self.layout;
        Residuals {
            h_c: rows[lay.slow()].to_vec(),
            f: rows[lay.fast()].to_vec(),
            g: rows[lay.algebraic()].to_vec(),
        }
    }

    pub fn eval_jacobian(&self, w: &[f64], grid: &Grid, modes: &Modes) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(0, 0);
        self.eval_rows(w, grid, modes, Some(&mut j));
        j
    }

    pub fn eval_jacobian_blocks(&self, part: &StatePartition, grid: &Grid, modes: &Modes) -> JacobianBlocks {
        JacobianBlocks::from_full(&self.layout, &self.eval_jacobian(&part.gather(), grid, modes))
    }

    /// Residuals and modes at a settled state, for equilibrium tests.
    pub fn residuals_at(&self, st: &SimState) -> Residuals {
        let w = st.part.gather();
        let modes = self.modes_at(&w, &st.clocks);
        self.split_rows(&self.eval_rows(&w, &st.grid, &modes, None))
    }

    /// Applies every due tap move at sample time `t`. Changers are visited
    /// in declaration order; `k` advances once if anything moved.
    pub fn eval_discrete(&self, st: &SimState) -> DiscreteOutcome {
        let lay = &self.layout;
        let mut z_d = st.part.z_d.clone();
        let mut clocks = st.clocks.ltc.clone();
        let mut changes = Vec::new();
        for (i, tb) in self.ltcs.iter().enumerate() {
            let v = st.part.y[lay.bus_v(tb.bus) - lay.y_offset()];
            let mut s = LtcState { n: z_d[i], clock: clocks[i] };
            let d = ltc_transition(&tb.params, &mut s, v, st.t);
            clocks[i] = s.clock;
            if d.changed {
                changes.push(TapChange {
                    ltc: i,
                    from: z_d[i],
                    to: d.n,
                });
                z_d[i] = d.n;
            }
        }
        let jumped = !changes.is_empty();
        DiscreteOutcome {
            z_d,
            ltc_clocks: clocks,
            changes,
            jumped,
            k: st.k + u32::from(jumped),
        }
    }

    /// Updates limiter pickup timers at sample time. Returns the limiters
    /// that latched at this sample.
    pub fn observe_limiters(&self, st: &mut SimState) -> Vec<usize> {
        let w = st.part.gather();
        let i_f = self.field_currents(&w);
        let mut fired = Vec::new();
        for (o, ob) in self.oxls.iter().enumerate() {
            let v_oxl = st.part.z_c[self.layout.oxl(o)];
            if st.clocks.oxl[o].observe(&ob.params, st.t, i_f[ob.gen], v_oxl) {
                fired.push(o);
            }
        }
        fired
    }

    /// Describes the first study-region violation, if any.
    pub fn region_violation(&self, part: &StatePartition, bounds: &StudyRegion) -> Option<String> {
        let lay = &self.layout;
        for (i, g) in self.gens.iter().enumerate() {
            let om = part.x[lay.gen(i, 1) - lay.x_offset()];
            if !(om.abs() <= bounds.omega_max) {
                return Some(format!("speed of {} at {om:.4}", g.params.id));
            }
        }
        for (b, bus) in self.case.buses.iter().enumerate() {
            let v = part.y[2 * b];
            if !(v >= bounds.v_min && v <= bounds.v_max) {
                return Some(format!("voltage of bus {} at {v:.4}", bus.id));
            }
        }
        None
    }

    /// Generation minus consumption minus losses, including the slack.
    pub fn power_balance(&self, part: &StatePartition, grid: &Grid) -> f64 {
        let lay = &self.layout;
        let nb = lay.n_bus;
        let v: Vec<f64> = (0..nb).map(|b| part.y[2 * b]).collect();
        let th: Vec<f64> = (0..nb).map(|b| part.y[2 * b + 1]).collect();
        let (pf, _) = bus_flows(&grid.y, &v, &th);
        let losses: f64 = pf.iter().sum();
        let mut gen_p = pf[self.slack];
        let w = part.gather();
        for (i, g) in self.gens.iter().enumerate() {
            let (s, c) = (w[lay.gen(i, 0)] - th[g.bus]).sin_cos();
            let (id, iq) = (w[lay.gen_id(i)], w[lay.gen_iq(i)]);
            gen_p += v[g.bus] * (s * id + c * iq);
        }
        let mut load_p = 0.0;
        for (b, bus) in self.case.buses.iter().enumerate() {
            if b != self.slack {
                load_p += (bus.p_load + grid.load_dp[b]) * v[b].powf(bus.load_alpha);
            }
        }
        for (l, lb) in self.loads.iter().enumerate() {
            load_p += w[lay.load_xp(l)] / lb.params.tp + lb.params.p0 * v[lb.bus].powf(lb.params.alpha_t);
        }
        gen_p - load_p - losses
    }

    /// Column names of `[z_c; z_d; x; y]` in trace order, then the field
    /// currents.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for o in &self.oxls {
            out.push(format!("oxl.{}.v_oxl", o.params.generator));
        }
        for g in &self.govs {
            out.push(format!("gov.{}.p_g", g.params.generator));
            out.push(format!("gov.{}.p_m", g.params.generator));
        }
        for l in &self.loads {
            out.push(format!("load.{}.x_p", l.params.id));
            out.push(format!("load.{}.x_q", l.params.id));
        }
        for t in &self.ltcs {
            out.push(format!("ltc.{}.n", t.params.id));
        }
        for g in &self.gens {
            for s in ["delta", "omega", "eq_prime", "ed_prime"] {
                out.push(format!("gen.{}.{s}", g.params.id));
            }
        }
        for a in &self.avrs {
            for s in ["v_m", "v_r", "e_fd"] {
                out.push(format!("avr.{}.{s}", a.params.generator));
            }
        }
        for b in &self.case.buses {
            out.push(format!("bus.{}.v", b.id));
            out.push(format!("bus.{}.theta", b.id));
        }
        for g in &self.gens {
            out.push(format!("gen.{}.i_d", g.params.id));
            out.push(format!("gen.{}.i_q", g.params.id));
        }
        for g in &self.gens {
            out.push(format!("gen.{}.i_f", g.params.id));
        }
        out
    }

    /// One row of values matching [`column_names`](Self::column_names).
    pub fn row_values(&self, part: &StatePartition) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout.n() + self.layout.n_zd() + self.gens.len());
        out.extend_from_slice(&part.z_c);
        out.extend_from_slice(&part.z_d);
        out.extend_from_slice(&part.x);
        out.extend_from_slice(&part.y);
        out.extend(self.field_currents(&part.gather()));
        out
    }

    /// The limiter outputs inside `z_c`.
    pub fn oxl_slice<'a>(&self, part: &'a StatePartition) -> &'a [f64] {
        &part.z_c[..self.layout.n_oxl]
    }
}

fn gov_state(lay: &Layout, g: usize, w: &[f64]) -> GovernorState {
    GovernorState {
        p_g: w[lay.gov_pg(g)],
        p_m: w[lay.gov_pm(g)],
    }
}
