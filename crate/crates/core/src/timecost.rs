//! Closed-form wall-clock model of one training round for the grouped
//! protocol and for plain FedAvg, over Shannon-capacity links.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Link and workload parameters. Sizes are in bits, bandwidths in bits per
/// second, SNRs are linear ratios, times are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    #[serde(rename = "S")]
    pub model_bits: f64,
    #[serde(rename = "M")]
    pub groups: u64,
    #[serde(rename = "L")]
    pub selected: u64,
    #[serde(rename = "T")]
    pub iterations: u64,
    #[serde(rename = "B_up_ext")]
    pub b_up_ext: f64,
    #[serde(rename = "B_down_ext")]
    pub b_down_ext: f64,
    #[serde(rename = "B_up_int")]
    pub b_up_int: f64,
    #[serde(rename = "B_down_int")]
    pub b_down_int: f64,
    pub gamma_top: f64,
    pub gamma_bs: f64,
    pub gamma_device: f64,
    #[serde(rename = "T_comp")]
    pub t_comp: f64,
    #[serde(rename = "T_select", default)]
    pub t_select: f64,
}

impl CostParams {
    /// Default workload on symmetric links with `B_int = 10 B_ext`.
    pub fn defaults() -> Self {
        CostParams {
            model_bits: 1e6,
            groups: 10,
            selected: 10,
            iterations: 50,
            b_up_ext: 1e7,
            b_down_ext: 1e7,
            b_up_int: 1e8,
            b_down_int: 1e8,
            gamma_top: 3.0,
            gamma_bs: 3.0,
            gamma_device: 3.0,
            t_comp: 0.01,
            t_select: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("S", self.model_bits),
            ("B_up_ext", self.b_up_ext),
            ("B_down_ext", self.b_down_ext),
            ("B_up_int", self.b_up_int),
            ("B_down_int", self.b_down_int),
            ("gamma_top", self.gamma_top),
            ("gamma_bs", self.gamma_bs),
            ("gamma_device", self.gamma_device),
            ("T_comp", self.t_comp),
        ];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("M", self.groups), ("L", self.selected), ("T", self.iterations)] {
            if v == 0 {
                return Err(Error::InvalidParams(format!("{name} must be at least 1")));
            }
        }
        if !(self.t_select >= 0.0 && self.t_select.is_finite()) {
            return Err(Error::InvalidParams(format!("T_select must be non-negative, got {}", self.t_select)));
        }
        Ok(())
    }

    /// Equal up/down bandwidths on each tier and one common SNR.
    pub fn is_symmetric(&self) -> bool {
        self.b_up_ext == self.b_down_ext
            && self.b_up_int == self.b_down_int
            && self.gamma_top == self.gamma_bs
            && self.gamma_bs == self.gamma_device
    }
}

fn link(bits: f64, bandwidth: f64, snr: f64) -> f64 {
    bits / (bandwidth * (1.0 + snr).log2())
}

/// Top server and base stations exchange `M` models.
pub fn comm_ext(p: &CostParams) -> Result<f64> {
    p.validate()?;
    let bits = p.model_bits * p.groups as f64;
    Ok(link(bits, p.b_up_ext, p.gamma_top) + link(bits, p.b_down_ext, p.gamma_bs))
}

/// A base station exchanges `L` models with its selected devices.
pub fn comm_int(p: &CostParams) -> Result<f64> {
    p.validate()?;
    let bits = p.model_bits * p.selected as f64;
    Ok(link(bits, p.b_up_int, p.gamma_bs) + link(bits, p.b_down_int, p.gamma_device))
}

/// FedAvg: all `M L` devices talk to the top server directly.
pub fn comm_fedavg(p: &CostParams) -> Result<f64> {
    p.validate()?;
    let bits = p.model_bits * (p.groups * p.selected) as f64;
    Ok(link(bits, p.b_up_ext, p.gamma_top) + link(bits, p.b_down_ext, p.gamma_device))
}

pub fn total_fedgs(p: &CostParams) -> Result<f64> {
    Ok(comm_ext(p)? + p.iterations as f64 * (p.t_select + comm_int(p)? + p.t_comp))
}

pub fn total_fedavg(p: &CostParams) -> Result<f64> {
    Ok(comm_fedavg(p)? + p.iterations as f64 * p.t_comp)
}

/// Both totals in the symmetric-link form. Fails unless
/// [`CostParams::is_symmetric`] holds.
pub fn simplified_totals(p: &CostParams) -> Result<(f64, f64)> {
    p.validate()?;
    if !p.is_symmetric() {
        return Err(Error::InvalidParams(
            "simplified model needs equal up/down bandwidths and one common SNR".into(),
        ));
    }
    let beta = (1.0 + p.gamma_top).log2();
    let (s, m, l, t) = (p.model_bits, p.groups as f64, p.selected as f64, p.iterations as f64);
    let fedgs = 2.0 * s * m / (beta * p.b_up_ext) + t * (p.t_select + 2.0 * s * l / (beta * p.b_up_int) + p.t_comp);
    let fedavg = 2.0 * s * m * l / (beta * p.b_up_ext) + t * p.t_comp;
    Ok((fedgs, fedavg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `T L / (M (L - 1)) < B_int / B_ext`: when it holds the grouped protocol
/// finishes a round sooner (symmetric links, free selection).
pub fn efficiency_condition(t: u64, m: u64, l: u64, b_int: f64, b_ext: f64) -> Result<Condition> {
    if l < 2 {
        return Err(Error::InvalidParams(format!("L must be at least 2, got {l}")));
    }
    if t == 0 || m == 0 {
        return Err(Error::InvalidParams("T and M must be at least 1".into()));
    }
    if !(b_int > 0.0 && b_ext > 0.0 && b_int.is_finite() && b_ext.is_finite()) {
        return Err(Error::InvalidParams("bandwidths must be positive and finite".into()));
    }
    let lhs = (t * l) as f64 / (m * (l - 1)) as f64;
    let rhs = b_int / b_ext;
    Ok(Condition { lhs, rhs, holds: lhs < rhs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    #[serde(rename = "T_comm_ext")]
    pub comm_ext: f64,
    #[serde(rename = "T_comm_int")]
    pub comm_int: f64,
    #[serde(rename = "T_fedgs")]
    pub fedgs: f64,
    #[serde(rename = "T_fedavg")]
    pub fedavg: f64,
    pub condition_lhs: f64,
    pub condition_rhs: f64,
    pub condition_holds: bool,
    pub fedgs_faster: bool,
}

/// Evaluates every delay. The condition uses the uplink bandwidths.
pub fn report(p: &CostParams) -> Result<CostReport> {
    let cond = efficiency_condition(p.iterations, p.groups, p.selected, p.b_up_int, p.b_up_ext)?;
    let fedgs = total_fedgs(p)?;
    let fedavg = total_fedavg(p)?;
    Ok(CostReport {
        comm_ext: comm_ext(p)?,
        comm_int: comm_int(p)?,
        fedgs,
        fedavg,
        condition_lhs: cond.lhs,
        condition_rhs: cond.rhs,
        condition_holds: cond.holds,
        fedgs_faster: fedgs < fedavg,
    })
}
