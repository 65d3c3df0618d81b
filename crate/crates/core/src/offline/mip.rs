//! The bin-level mixed-integer program in CPLEX LP text, and a checker that
//! evaluates a variable assignment against the same rows.
//!
//! Indices: requests `i` and clients `j` are 0-based, bins `k` and prefill
//! levels `l` are 1-based. Times are in milliseconds.
//!
//! Variables: `tmax`; per bin `tsp_k`, `tsd_k` (stage starts) and `np_k`,
//! `nd_k` (stage lengths); binaries `p_i_j_k` (prefill), `d_i_j_k`
//! (decoding), `x_i_j` (placement), `y_k_l` (level); and `w_i_j_k` in
//! `[0, 1]`, the share of request `i`'s output decoded on `j` in bin `k`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::cost::{us_to_ms, CostModel};
use crate::feasibility::FeasibilityReport;
use crate::sim::Schedule;
use crate::workload::Trace;

pub const MAX_MIP_REQUESTS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum MipError {
    #[error("empty trace")]
    EmptyTrace,
    #[error("client count must be positive")]
    NoClients,
    #[error("bin count must be positive")]
    NoBins,
    #[error("instance too large: {0} requests exceeds the cap of {MAX_MIP_REQUESTS}")]
    TooLarge(usize),
    #[error("big-M must be at least 1, got {0}")]
    BadBigM(f64),
    #[error("missing variable {0}")]
    MissingVariable(String),
    #[error("schedule does not fit the instance: {0}")]
    ScheduleMismatch(String),
}

#[derive(Debug, Clone)]
pub struct MipInstance<'a> {
    pub trace: &'a Trace,
    pub clients: usize,
    pub bins: usize,
    pub cost: &'a CostModel,
    pub big_m: f64,
}

impl<'a> MipInstance<'a> {
    /// `big_m` defaults to the bin count, the smallest value that keeps the
    /// consecutive-decode rows inactive when they should be.
    pub fn new(trace: &'a Trace, clients: usize, bins: usize, cost: &'a CostModel) -> Result<Self, MipError> {
        let inst = MipInstance { trace, clients, bins, cost, big_m: bins.max(1) as f64 };
        inst.check()?;
        Ok(inst)
    }

    fn check(&self) -> Result<(), MipError> {
        if self.trace.is_empty() {
            return Err(MipError::EmptyTrace);
        }
        if self.clients == 0 {
            return Err(MipError::NoClients);
        }
        if self.bins == 0 {
            return Err(MipError::NoBins);
        }
        if self.trace.len() > MAX_MIP_REQUESTS {
            return Err(MipError::TooLarge(self.trace.len()));
        }
        if self.big_m.is_nan() || self.big_m < 1.0 {
            return Err(MipError::BadBigM(self.big_m));
        }
        Ok(())
    }

    fn levels(&self) -> usize {
        self.cost.levels.entries().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub terms: Vec<(String, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    /// Family label, e.g. `eq10` for `eq10_i0_j0_k1_k2`.
    pub fn family(&self) -> &str {
        self.name.split('_').next().unwrap_or(&self.name)
    }
}

fn p(i: usize, j: usize, k: usize) -> String {
    format!("p_{i}_{j}_{k}")
}
fn d(i: usize, j: usize, k: usize) -> String {
    format!("d_{i}_{j}_{k}")
}
fn w(i: usize, j: usize, k: usize) -> String {
    format!("w_{i}_{j}_{k}")
}
fn x(i: usize, j: usize) -> String {
    format!("x_{i}_{j}")
}
fn y(k: usize, l: usize) -> String {
    format!("y_{k}_{l}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    NonNegative,
    Unit,
    Binary,
}

/// Every variable with its domain, in a fixed order.
fn variables(inst: &MipInstance) -> Vec<(String, Domain)> {
    let (n, jn, kn, ln) = (inst.trace.len(), inst.clients, inst.bins, inst.levels());
    let mut v = vec![("tmax".to_string(), Domain::NonNegative)];
    for k in 1..=kn {
        for name in ["tsp", "tsd", "np", "nd"] {
            v.push((format!("{name}_{k}"), Domain::NonNegative));
        }
    }
    for i in 0..n {
        for j in 0..jn {
            for k in 1..=kn {
                v.push((p(i, j, k), Domain::Binary));
                v.push((d(i, j, k), Domain::Binary));
                v.push((w(i, j, k), Domain::Unit));
            }
            v.push((x(i, j), Domain::Binary));
        }
    }
    for k in 1..=kn {
        for l in 1..=ln {
            v.push((y(k, l), Domain::Binary));
        }
    }
    v
}

/// Generates every constraint row in family order.
pub fn for_each_row(inst: &MipInstance, mut emit: impl FnMut(Row)) {
    let (n, jn, kn) = (inst.trace.len(), inst.clients, inst.bins);
    let levels = inst.cost.levels.entries();
    let m = inst.big_m;
    let reqs = &inst.trace.requests;
    let mut row = |name: String, terms: Vec<(String, f64)>, sense: Sense, rhs: f64| emit(Row { name, terms, sense, rhs });

    for k in 1..=kn {
        row(format!("eq02_k{k}"), vec![("tmax".into(), 1.0), (format!("tsd_{k}"), -1.0), (format!("nd_{k}"), -1.0)], Sense::Ge, 0.0);
    }
    for k in 2..=kn {
        row(
            format!("eq03_k{k}"),
            vec![(format!("tsp_{k}"), 1.0), (format!("tsd_{}", k - 1), -1.0), (format!("nd_{}", k - 1), -1.0)],
            Sense::Ge,
            0.0,
        );
    }
    for k in 1..=kn {
        row(format!("eq04_k{k}"), vec![(format!("tsd_{k}"), 1.0), (format!("tsp_{k}"), -1.0), (format!("np_{k}"), -1.0)], Sense::Ge, 0.0);
    }
    for k in 1..=kn {
        let mut t = vec![(format!("np_{k}"), 1.0)];
        t.extend(levels.iter().map(|lv| (y(k, lv.index), -lv.duration_ms)));
        row(format!("eq05_k{k}"), t, Sense::Ge, 0.0);
    }
    for k in 1..=kn {
        let mut t = Vec::new();
        for (i, r) in reqs.iter().enumerate() {
            for j in 0..jn {
                t.push((p(i, j, k), r.input_tokens as f64));
            }
        }
        t.extend(levels.iter().map(|lv| (y(k, lv.index), -(lv.capacity as f64))));
        row(format!("eq06_k{k}"), t, Sense::Le, 0.0);
    }
    for k in 1..=kn {
        row(format!("eq07_k{k}"), levels.iter().map(|lv| (y(k, lv.index), 1.0)).collect(), Sense::Eq, 1.0);
    }
    for j in 0..jn {
        for k in 1..=kn {
            let mut t = vec![(format!("nd_{k}"), 1.0)];
            for (i, r) in reqs.iter().enumerate() {
                t.push((w(i, j, k), -inst.cost.decode_rate * r.output_tokens as f64));
            }
            row(format!("eq08_j{j}_k{k}"), t, Sense::Ge, 0.0);
        }
    }
    for i in 0..n {
        for j in 0..jn {
            for k in 1..=kn {
                row(format!("eq09_i{i}_j{j}_k{k}"), vec![(d(i, j, k), 1.0), (p(i, j, k), -1.0)], Sense::Ge, 0.0);
            }
        }
    }
    for i in 0..n {
        for j in 0..jn {
            for k1 in 1..=kn {
                for k2 in k1 + 1..=kn {
                    let mut t = vec![(d(i, j, k1), 1.0 - m)];
                    t.extend((k1 + 1..k2).map(|k| (d(i, j, k), 1.0)));
                    t.push((d(i, j, k2), 1.0 - m));
                    row(format!("eq10_i{i}_j{j}_k{k1}_k{k2}"), t, Sense::Ge, (k2 - k1 + 1) as f64 - 2.0 * m);
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..jn {
            for k1 in 1..=kn {
                for k2 in 1..k1 {
                    row(format!("eq11_i{i}_j{j}_k{k1}_k{k2}"), vec![(p(i, j, k1), m), (d(i, j, k2), 1.0)], Sense::Le, m);
                }
            }
        }
    }
    for j in 0..jn {
        for k in 1..=kn {
            row(format!("eq12_j{j}_k{k}"), (0..n).map(|i| (d(i, j, k), 1.0)).collect(), Sense::Le, 1.0);
        }
    }
    for i in 0..n {
        for j in 0..jn {
            row(format!("eq13_i{i}_j{j}"), (1..=kn).map(|k| (d(i, j, k), 1.0)).collect(), Sense::Le, kn as f64);
        }
    }
    for i in 0..n {
        for j in 0..jn {
            let mut t: Vec<_> = (1..=kn).map(|k| (w(i, j, k), 1.0)).collect();
            t.push((x(i, j), -1.0));
            row(format!("eq14_i{i}_j{j}"), t, Sense::Eq, 0.0);
        }
    }
    for i in 0..n {
        let t = (0..jn).flat_map(|j| (1..=kn).map(move |k| (w(i, j, k), 1.0))).collect();
        row(format!("eq15_i{i}"), t, Sense::Eq, 1.0);
    }
    for j in 0..jn {
        for k in 1..=kn {
            row(format!("eq16_j{j}_k{k}"), (0..n).map(|i| (p(i, j, k), 1.0)).collect(), Sense::Le, 1.0);
        }
    }
    for i in 0..n {
        for j in 0..jn {
            let mut t: Vec<_> = (1..=kn).map(|k| (p(i, j, k), 1.0)).collect();
            t.push((x(i, j), -1.0));
            row(format!("eq17_i{i}_j{j}"), t, Sense::Eq, 0.0);
        }
    }
    for i in 0..n {
        row(format!("eq18_i{i}"), (0..jn).map(|j| (x(i, j), 1.0)).collect(), Sense::Eq, 1.0);
    }
}

/// Row count per family, from the generator itself.
pub fn row_counts(inst: &MipInstance) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for_each_row(inst, |r| *counts.entry(r.family().to_string()).or_insert(0) += 1);
    counts
}

fn push_coef(out: &mut String, coef: f64, var: &str, first: bool) {
    if coef < 0.0 {
        let _ = write!(out, " - {} {var}", -coef);
    } else if first {
        let _ = write!(out, " {coef} {var}");
    } else {
        let _ = write!(out, " + {coef} {var}");
    }
}

/// Writes the program in CPLEX LP format, minimizing `tmax`.
pub fn write_lp(inst: &MipInstance) -> Result<String, MipError> {
    inst.check()?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\ requests={} clients={} bins={} levels={} big_m={}",
        inst.trace.len(),
        inst.clients,
        inst.bins,
        inst.levels(),
        inst.big_m
    );
    out.push_str("Minimize\n obj: tmax\nSubject To\n");
    for_each_row(inst, |r| {
        let _ = write!(out, " {}:", r.name);
        for (n, (var, coef)) in r.terms.iter().enumerate() {
            push_coef(&mut out, *coef, var, n == 0);
        }
        let _ = writeln!(out, " {} {}", r.sense.symbol(), r.rhs);
    });
    let vars = variables(inst);
    out.push_str("Bounds\n");
    for (name, dom) in &vars {
        if *dom == Domain::Unit {
            let _ = writeln!(out, " 0 <= {name} <= 1");
        }
    }
    out.push_str("Binaries\n");
    for (name, dom) in &vars {
        if *dom == Domain::Binary {
            let _ = writeln!(out, " {name}");
        }
    }
    out.push_str("End\n");
    Ok(out)
}

/// Same as [`write_lp`] on a fresh instance with the default big-M.
pub fn export_original_mip(trace: &Trace, clients: usize, bins: usize, cost: &CostModel) -> Result<String, MipError> {
    write_lp(&MipInstance::new(trace, clients, bins, cost)?)
}

/// Evaluates every row and variable domain. A row holds when it is violated
/// by at most `1e-6 * max(1, sum of |coef * value| and |rhs|)`.
pub fn validate_solution(values: &HashMap<String, f64>, inst: &MipInstance) -> Result<FeasibilityReport, MipError> {
    inst.check()?;
    let mut rep = FeasibilityReport::default();
    for (name, dom) in variables(inst) {
        let v = *values.get(&name).ok_or_else(|| MipError::MissingVariable(name.clone()))?;
        let tol = 1e-6 * v.abs().max(1.0);
        let ok = match dom {
            Domain::NonNegative => v >= -tol,
            Domain::Unit => v >= -tol && v <= 1.0 + tol,
            Domain::Binary => v.abs() <= tol || (v - 1.0).abs() <= tol,
        };
        rep.check("domain", ok, || format!("{name} = {v} outside its domain"));
    }
    let mut missing = None;
    for_each_row(inst, |r| {
        if missing.is_some() {
            return;
        }
        let mut lhs = 0.0;
        let mut scale = r.rhs.abs();
        for (var, coef) in &r.terms {
            let Some(v) = values.get(var) else {
                missing = Some(var.clone());
                return;
            };
            lhs += coef * v;
            scale += (coef * v).abs();
        }
        let tol = 1e-6 * scale.max(1.0);
        let ok = match r.sense {
            Sense::Le => lhs <= r.rhs + tol,
            Sense::Ge => lhs >= r.rhs - tol,
            Sense::Eq => (lhs - r.rhs).abs() <= tol,
        };
        rep.check(r.family(), ok, || format!("{}: lhs {lhs} {} {}", r.name, r.sense.symbol(), r.rhs));
    });
    match missing {
        Some(var) => Err(MipError::MissingVariable(var)),
        None => Ok(rep),
    }
}

/// Reads a simulated schedule as a MIP valuation. Bins past the end of the
/// schedule are filled with empty level-1 stages.
pub fn valuation_from_schedule(schedule: &Schedule, inst: &MipInstance) -> Result<HashMap<String, f64>, MipError> {
    inst.check()?;
    if schedule.clients != inst.clients {
        return Err(MipError::ScheduleMismatch(format!("{} clients, instance has {}", schedule.clients, inst.clients)));
    }
    if schedule.bins.len() > inst.bins {
        return Err(MipError::ScheduleMismatch(format!("{} bins, instance has {}", schedule.bins.len(), inst.bins)));
    }
    let mut vals: HashMap<String, f64> = variables(inst).into_iter().map(|(n, _)| (n, 0.0)).collect();
    let first = inst.cost.levels.entries()[0];
    let mut end_ms = 0.0f64;
    for k in 1..=inst.bins {
        let (tsp, np, tsd, nd, level) = match schedule.bins.get(k - 1) {
            Some(b) => (
                us_to_ms(b.prefill.start_us),
                us_to_ms(b.prefill.length_us),
                us_to_ms(b.decode.start_us),
                us_to_ms(b.decode.length_us),
                b.prefill.level,
            ),
            None => (end_ms, first.duration_ms, end_ms + first.duration_ms, 0.0, first.index),
        };
        if level == 0 || level > inst.levels() {
            return Err(MipError::ScheduleMismatch(format!("bin {k} uses level {level}")));
        }
        vals.insert(format!("tsp_{k}"), tsp);
        vals.insert(format!("np_{k}"), np);
        vals.insert(format!("tsd_{k}"), tsd);
        vals.insert(format!("nd_{k}"), nd);
        vals.insert(y(k, level), 1.0);
        end_ms = end_ms.max(tsd + nd);
    }
    vals.insert("tmax".into(), end_ms.max(schedule.makespan_ms()));

    let n = inst.trace.len();
    for (pos, b) in schedule.bins.iter().enumerate() {
        let k = pos + 1;
        for mem in &b.prefill.members {
            let (i, j) = (mem.request as usize, mem.client);
            if i >= n || j >= inst.clients {
                return Err(MipError::ScheduleMismatch(format!("bin {k} member {i} on client {j}")));
            }
            vals.insert(p(i, j, k), 1.0);
            vals.insert(x(i, j), 1.0);
        }
        for s in &b.decode.shares {
            let (i, j) = (s.request as usize, s.client);
            if i >= n || j >= inst.clients {
                return Err(MipError::ScheduleMismatch(format!("bin {k} share {i} on client {j}")));
            }
            if s.tokens > 0 {
                vals.insert(d(i, j, k), 1.0);
                let out = inst.trace.requests[i].output_tokens as f64;
                vals.insert(w(i, j, k), s.tokens as f64 / out);
            }
        }
    }
    Ok(vals)
}
