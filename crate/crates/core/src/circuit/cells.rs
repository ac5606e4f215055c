//! Transistor-level standard cells and ring oscillators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Netlist, Probes, Waveform, GROUND};
use crate::compact::{CompactModelParams, VDD};
use crate::{Device, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CellKind {
    Inv,
    Tg,
    Nand2,
    Nor2,
    Xor2,
    Xnor2,
}

impl CellKind {
    pub const ALL: [CellKind; 6] = [CellKind::Inv, CellKind::Tg, CellKind::Nand2, CellKind::Nor2, CellKind::Xor2, CellKind::Xnor2];

    pub fn inputs(self) -> usize {
        match self {
            CellKind::Inv | CellKind::Tg => 1,
            _ => 2,
        }
    }

    /// Boolean function of the cell.
    pub fn logic(self, x: &[bool]) -> bool {
        match self {
            CellKind::Inv | CellKind::Tg => !x[0],
            CellKind::Nand2 => !(x[0] && x[1]),
            CellKind::Nor2 => !(x[0] || x[1]),
            CellKind::Xor2 => x[0] != x[1],
            CellKind::Xnor2 => x[0] == x[1],
        }
    }

    /// Input pattern that makes the output toggle every half period.
    pub fn default_drive(self) -> Drive {
        match self {
            CellKind::Xor2 | CellKind::Xnor2 => Drive::Single { index: 0, others_high: false },
            _ => Drive::Common,
        }
    }

    /// Transistor count including input inverters.
    pub fn transistors(self) -> usize {
        match self {
            CellKind::Inv => 2,
            CellKind::Tg => 4,
            CellKind::Nand2 | CellKind::Nor2 => 4,
            CellKind::Xor2 | CellKind::Xnor2 => 12,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CellKind::Inv => "INV",
            CellKind::Tg => "TG",
            CellKind::Nand2 => "NAND2",
            CellKind::Nor2 => "NOR2",
            CellKind::Xor2 => "XOR2",
            CellKind::Xnor2 => "XNOR2",
        };
        f.write_str(s)
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL.into_iter().find(|c| c.to_string().eq_ignore_ascii_case(s)).ok_or_else(|| Error::Config(format!("unknown cell `{s}`")))
    }
}

/// Which inputs switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Drive {
    /// Every input carries the same square wave.
    Common,
    /// Input `index` switches; the others sit at a rail.
    Single { index: usize, others_high: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stimulus {
    /// s.
    pub period: f64,
    /// Edge duration, s.
    pub edge: f64,
    pub drive: Option<Drive>,
}

impl Default for Stimulus {
    fn default() -> Self {
        Stimulus { period: 10e-9, edge: 1e-12, drive: None }
    }
}

impl Stimulus {
    /// Inputs rise a quarter period in, so every cycle holds one rising and one falling edge.
    pub fn delay(&self) -> f64 {
        0.25 * self.period
    }

    pub fn t_stop(&self) -> f64 {
        3.0 * self.period
    }
}

const INPUTS: [&str; 2] = ["a", "b"];

struct Builder {
    net: Netlist,
    mn: usize,
    mp: usize,
    vdd: usize,
}

impl Builder {
    fn new(cards: &[CompactModelParams; 2]) -> Result<Self> {
        if cards[0].polarity != Device::N || cards[1].polarity != Device::P {
            return Err(Error::Config("cell cards must be [NFET, PFET]".into()));
        }
        let mut net = Netlist::new();
        let mn = net.add_model(cards[0].clone());
        let mp = net.add_model(cards[1].clone());
        let vdd = net.node("vdd");
        net.vsource("vdd", vdd, Waveform::Dc { v: VDD });
        Ok(Builder { net, mn, mp, vdd })
    }

    fn n(&mut self, name: &str, d: usize, g: usize, s: usize, pair: usize) {
        let m = self.mn;
        self.net.mosfet(name, d, g, s, m, pair);
    }

    fn p(&mut self, name: &str, d: usize, g: usize, s: usize, pair: usize) {
        let m = self.mp;
        self.net.mosfet(name, d, g, s, m, pair);
    }

    fn inverter(&mut self, tag: &str, input: usize, output: usize, pair: usize) {
        let vdd = self.vdd;
        self.p(&format!("mp_{tag}"), output, input, vdd, pair);
        self.n(&format!("mn_{tag}"), output, input, GROUND, pair);
    }
}

/// Transistor-level netlist of `kind` driving `c_load` to ground.
///
/// `cards` holds the NFET and PFET parameters. Each stage of the cell maps to
/// one thermal pair; series stacks share the pair of their stage.
pub fn cell(kind: CellKind, c_load: f64, stim: &Stimulus, cards: &[CompactModelParams; 2]) -> Result<Netlist> {
    if !(c_load >= 0.0 && c_load.is_finite()) {
        return Err(Error::Config(format!("bad load capacitance {c_load}")));
    }
    if !(stim.period > 0.0 && stim.edge > 0.0 && stim.edge < 0.25 * stim.period) {
        return Err(Error::Config("stimulus needs 0 < edge < period/4".into()));
    }
    let drive = stim.drive.unwrap_or(kind.default_drive());
    let mut b = Builder::new(cards)?;
    let ins: Vec<usize> = INPUTS[..kind.inputs()].iter().map(|n| b.net.node(n)).collect();
    let square = Waveform::square(VDD, stim.period, stim.edge, stim.delay());
    let toggling = match drive {
        Drive::Common => 0,
        Drive::Single { index, .. } if index < ins.len() => index,
        Drive::Single { index, .. } => return Err(Error::Config(format!("{kind} has no input {index}"))),
    };
    for (k, &node) in ins.iter().enumerate() {
        let wave = match drive {
            Drive::Single { index, others_high } if index != k => Waveform::Dc { v: if others_high { VDD } else { 0.0 } },
            _ => square.clone(),
        };
        b.net.vsource(&format!("v{}", INPUTS[k]), node, wave);
    }
    let out = b.net.node("out");
    let vdd = b.vdd;
    match kind {
        CellKind::Inv => b.inverter("0", ins[0], out, 0),
        CellKind::Tg => {
            let mid = b.net.node("mid");
            b.inverter("drv", ins[0], mid, 0);
            b.n("mn_tg", mid, vdd, out, 1);
            b.p("mp_tg", mid, GROUND, out, 1);
        }
        CellKind::Nand2 => {
            let x = b.net.node("x");
            b.p("mp_a", out, ins[0], vdd, 0);
            b.p("mp_b", out, ins[1], vdd, 0);
            b.n("mn_a", out, ins[0], x, 0);
            b.n("mn_b", x, ins[1], GROUND, 0);
        }
        CellKind::Nor2 => {
            let y = b.net.node("y");
            b.p("mp_a", y, ins[0], vdd, 0);
            b.p("mp_b", out, ins[1], y, 0);
            b.n("mn_a", out, ins[0], GROUND, 0);
            b.n("mn_b", out, ins[1], GROUND, 0);
        }
        CellKind::Xor2 | CellKind::Xnor2 => {
            let (a, bb) = (ins[0], ins[1]);
            let (an, bn) = (b.net.node("an"), b.net.node("bn"));
            b.inverter("ia", a, an, 0);
            b.inverter("ib", bb, bn, 1);
            let [x1, x2, y1, y2] = ["x1", "x2", "y1", "y2"].map(|n| b.net.node(n));
            // Pull-down branches conduct when the output should be low.
            let (down, up) =
                if kind == CellKind::Xor2 { ([(a, bb), (an, bn)], [(a, bn), (an, bb)]) } else { ([(a, bn), (an, bb)], [(a, bb), (an, bn)]) };
            for (k, ((g1, g2), x)) in down.into_iter().zip([x1, x2]).enumerate() {
                b.n(&format!("mn_{k}t"), out, g1, x, 2);
                b.n(&format!("mn_{k}b"), x, g2, GROUND, 2);
            }
            for (k, ((g1, g2), y)) in up.into_iter().zip([y1, y2]).enumerate() {
                b.p(&format!("mp_{k}t"), y, g1, vdd, 2);
                b.p(&format!("mp_{k}b"), out, g2, y, 2);
            }
        }
    }
    b.net.capacitor("cl", out, GROUND, c_load);
    b.net.probes = Probes { input: Some(ins[toggling]), output: Some(out) };
    Ok(b.net)
}

/// Loop of `stages` inverters, each node loaded with `c_per_stage`. The
/// operating point of an odd ring is its metastable midpoint, so node 1 is
/// offset to start the oscillation.
pub fn ring_oscillator(stages: usize, c_per_stage: f64, cards: &[CompactModelParams; 2]) -> Result<Netlist> {
    if stages < 3 || stages.is_multiple_of(2) {
        return Err(Error::Config(format!("ring oscillator needs an odd stage count of at least 3, got {stages}")));
    }
    if !(c_per_stage >= 0.0 && c_per_stage.is_finite()) {
        return Err(Error::Config(format!("bad stage capacitance {c_per_stage}")));
    }
    let mut b = Builder::new(cards)?;
    let nodes: Vec<usize> = (0..stages).map(|k| b.net.node(&format!("n{k}"))).collect();
    for k in 0..stages {
        b.inverter(&k.to_string(), nodes[k], nodes[(k + 1) % stages], k);
        b.net.capacitor(&format!("c{k}"), nodes[k], GROUND, c_per_stage);
    }
    b.net.initial = vec![(nodes[1], 0.1 * VDD)];
    b.net.probes = Probes { input: Some(nodes[0]), output: Some(nodes[1]) };
    Ok(b.net)
}

/// Rough period from charge-over-current stage delays, used to size runs.
pub fn ro_period_estimate(stages: usize, c_per_stage: f64, cards: &[CompactModelParams; 2]) -> f64 {
    let t0 = cards[0].t0;
    let i_on = 0.5 * (cards[0].ids(VDD, VDD, t0).ids.abs() + cards[1].ids(-VDD, -VDD, t0).ids.abs());
    let c_par: f64 = cards.iter().map(|c| c.c_gs + 3.0 * c.c_gd).sum();
    2.0 * stages as f64 * (c_per_stage + c_par) * 0.5 * VDD / i_on
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{dc_operating_point, Element, SimOptions};
    use crate::Flavor;

    fn cards() -> [CompactModelParams; 2] {
        Device::BOTH.map(|d| CompactModelParams::calibrated(Flavor::Nsfet, d))
    }

    fn dc_out(kind: CellKind, x: &[bool]) -> f64 {
        let mut net = cell(kind, 1e-15, &Stimulus::default(), &cards()).unwrap();
        for (k, &v) in x.iter().enumerate() {
            net.set_source(&format!("v{}", INPUTS[k]), Waveform::Dc { v: if v { VDD } else { 0.0 } }).unwrap();
        }
        let v = dc_operating_point(&net, 0.0, &SimOptions::default()).unwrap();
        v[net.find_node("out").unwrap()]
    }

    #[test]
    fn truth_tables_at_dc() {
        for kind in CellKind::ALL {
            let n = kind.inputs();
            for code in 0..1u32 << n {
                let x: Vec<bool> = (0..n).map(|k| code >> k & 1 == 1).collect();
                let v = dc_out(kind, &x);
                assert_eq!(v > 0.5 * VDD, kind.logic(&x), "{kind} {x:?} -> {v}");
                let rail = if kind.logic(&x) { VDD } else { 0.0 };
                assert!((v - rail).abs() < 0.05 * VDD, "{kind} {x:?} -> {v} not at rail");
            }
        }
    }

    #[test]
    fn nand_structure() {
        let net = cell(CellKind::Nand2, 1e-15, &Stimulus::default(), &cards()).unwrap();
        let (vdd, out) = (net.find_node("vdd").unwrap(), net.find_node("out").unwrap());
        let ps: Vec<_> = net.mosfets().filter(|m| m.4.polarity == Device::P).collect();
        let ns: Vec<_> = net.mosfets().filter(|m| m.4.polarity == Device::N).collect();
        // Parallel pull-up: both PFETs span vdd to out.
        assert!(ps.iter().all(|m| m.1 == out && m.3 == vdd));
        // Series pull-down: one NFET touches out, the other ground, joined by an internal node.
        let top = ns.iter().find(|m| m.1 == out).unwrap();
        let bottom = ns.iter().find(|m| m.3 == GROUND).unwrap();
        assert_eq!(top.3, bottom.1);
        assert_ne!(top.3, GROUND);
    }

    #[test]
    fn transistor_counts() {
        for kind in CellKind::ALL {
            let net = cell(kind, 1e-15, &Stimulus::default(), &cards()).unwrap();
            assert_eq!(net.mosfets().count(), kind.transistors(), "{kind}");
        }
    }

    #[test]
    fn unknown_cell_rejected() {
        assert!("NAND3".parse::<CellKind>().is_err());
        assert_eq!("xnor2".parse::<CellKind>().unwrap(), CellKind::Xnor2);
    }

    #[test]
    fn ring_needs_odd_stages() {
        assert!(ring_oscillator(4, 1e-15, &cards()).is_err());
        assert!(ring_oscillator(1, 1e-15, &cards()).is_err());
        let net = ring_oscillator(5, 1e-15, &cards()).unwrap();
        assert_eq!(net.pair_count(), 5);
        assert_eq!(net.elements.iter().filter(|e| matches!(e, Element::Capacitor { .. })).count(), 5);
    }
}
