//! Per-unit network model, MATPOWER case parsing and admittance assembly.
//!
//! Everything inside a [`NetworkCase`] is per unit on `base_mva` and in
//! radians; MW, MVAr and degrees only appear in the file grammar.

mod admittance;
mod parse;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admittance::{build_admittance, AdmittanceModel, BranchAdmittance, Polar};
pub use parse::parse_matpower_case;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BusKind {
    Pq,
    Pv,
    Ref,
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    /// External bus number from the case file.
    pub id: u64,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v_init: f64,
    pub theta_init: f64,
}

/// Polynomial generation cost `c2·p² + c1·p + c0` in $/h, `p` in per unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PolyCost {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl PolyCost {
    pub fn value(&self, p: f64) -> f64 {
        (self.c2 * p + self.c1) * p + self.c0
    }

    pub fn slope(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    /// Internal (dense) bus index.
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Dispatch recorded in the case file; used as the DC power-flow injection.
    pub p_init: f64,
    pub q_init: f64,
    pub in_service: bool,
    pub cost: PolyCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_charge: f64,
    /// Off-nominal ratio; a file value of 0 is stored as 1.0.
    pub tap: f64,
    pub shift: f64,
    /// Thermal limit in per-unit MVA; `None` means unlimited.
    pub rate_a: Option<f64>,
    /// Angle-difference bounds; `None` on a side means unconstrained.
    pub ang_min: Option<f64>,
    pub ang_max: Option<f64>,
    pub in_service: bool,
}

impl BranchRecord {
    pub fn has_angle_limits(&self) -> bool {
        self.ang_min.is_some() || self.ang_max.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub gens: Vec<GenRecord>,
    pub branches: Vec<BranchRecord>,
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Index of the single reference bus.
    pub fn ref_bus(&self) -> Result<usize> {
        let mut refs = self
            .buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Ref)
            .map(|(i, _)| i);
        match (refs.next(), refs.next()) {
            (Some(i), None) => Ok(i),
            (None, _) => Err(Error::InvalidNetwork("no reference bus".into())),
            (Some(_), Some(_)) => Err(Error::InvalidNetwork("more than one reference bus".into())),
        }
    }

    /// Drop out-of-service equipment and isolated buses, re-index densely and
    /// validate the result. The returned case is what every formulation
    /// consumes: all equipment in service, one reference bus, one island.
    pub fn prepared(&self) -> Result<NetworkCase> {
        let keep: Vec<bool> = self
            .buses
            .iter()
            .map(|b| b.kind != BusKind::Isolated)
            .collect();
        let mut new_index = vec![usize::MAX; self.buses.len()];
        let mut buses = Vec::new();
        for (i, b) in self.buses.iter().enumerate() {
            if keep[i] {
                new_index[i] = buses.len();
                buses.push(b.clone());
            }
        }
        let mut gens = Vec::new();
        for g in self.gens.iter().filter(|g| g.in_service) {
            if !keep[g.bus] {
                continue;
            }
            gens.push(GenRecord {
                bus: new_index[g.bus],
                ..g.clone()
            });
        }
        let mut branches = Vec::new();
        for br in self.branches.iter().filter(|b| b.in_service) {
            if !keep[br.from] || !keep[br.to] {
                continue;
            }
            branches.push(BranchRecord {
                from: new_index[br.from],
                to: new_index[br.to],
                ..br.clone()
            });
        }
        let case = NetworkCase {
            name: self.name.clone(),
            base_mva: self.base_mva,
            buses,
            gens,
            branches,
        };
        case.validate()?;
        Ok(case)
    }

    /// Check record invariants, the single reference bus and connectivity.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(Error::InvalidNetwork(format!("baseMVA = {}", self.base_mva)));
        }
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("no buses".into()));
        }
        for b in &self.buses {
            if b.v_min > b.v_max {
                return Err(Error::InvalidNetwork(format!(
                    "bus {}: v_min {} > v_max {}",
                    b.id, b.v_min, b.v_max
                )));
            }
        }
        for (k, g) in self.gens.iter().enumerate() {
            if g.bus >= n {
                return Err(Error::InvalidNetwork(format!("generator {k} at unknown bus")));
            }
            if g.p_min > g.p_max || g.q_min > g.q_max {
                return Err(Error::InvalidNetwork(format!("generator {k}: inverted limits")));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            if br.from >= n || br.to >= n {
                return Err(Error::InvalidBranch {
                    branch: k,
                    msg: "endpoint out of range".into(),
                });
            }
            if br.in_service && br.x == 0.0 {
                return Err(Error::InvalidBranch {
                    branch: k,
                    msg: "zero series reactance".into(),
                });
            }
            if let (Some(lo), Some(hi)) = (br.ang_min, br.ang_max) {
                if lo > hi {
                    return Err(Error::InvalidBranch {
                        branch: k,
                        msg: "ang_min > ang_max".into(),
                    });
                }
            }
        }
        let root = self.ref_bus()?;

        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidNetwork(format!(
                "bus {} is not connected to the reference bus",
                self.buses[i].id
            )));
        }
        Ok(())
    }

    /// Canonical JSON dump used for fixtures.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("NetworkCase is always serializable")
    }

    pub fn from_json(text: &str) -> Result<NetworkCase> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Reduce thermal ratings by `m` percent on the first 90% (rounded down) of
/// the in-service rated branches, taken in ascending branch index.
pub fn scale_line_ratings(case: &NetworkCase, m: f64) -> Result<NetworkCase> {
    if !(0.0..100.0).contains(&m) {
        return Err(Error::InvalidParameter(format!(
            "rating scale m = {m} outside [0, 100)"
        )));
    }
    let mut out = case.clone();
    if m == 0.0 {
        return Ok(out);
    }
    let rated: Vec<usize> = out
        .branches
        .iter()
        .enumerate()
        .filter(|(_, b)| b.in_service && b.rate_a.is_some())
        .map(|(k, _)| k)
        .collect();
    let count = rated.len() * 9 / 10;
    let factor = 1.0 - m / 100.0;
    for &k in &rated[..count] {
        if let Some(r) = out.branches[k].rate_a.as_mut() {
            *r *= factor;
        }
    }
    Ok(out)
}
