//! Reader, writer and synthetic generator for the small SPEF dialect used by
//! ladder-style interconnect extractions:
//!
//! ```text
//! *D_NET net_0 106.518
//! *CONN
//! *I I1:Y O
//! *I I2:A I
//! *CAP
//! 1 net_0:0 21.3035
//! *RES
//! 1 I1:Y net_0:0 145.5
//! *END
//! ```
//!
//! Capacitances are in fF and resistances in Ω. Coupling capacitors, `*PORT`
//! sections and name maps are not supported.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `I`: receiver input pin.
    Input,
    /// `O`: driver output pin.
    Output,
}

impl Direction {
    fn code(self) -> &'static str {
        match self {
            Direction::Input => "I",
            Direction::Output => "O",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub pin: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapEntry {
    pub index: usize,
    pub node: String,
    /// Grounded capacitance in fF.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResEntry {
    pub index: usize,
    pub node_a: String,
    pub node_b: String,
    /// Resistance in Ω.
    pub value: f64,
}

/// One `*D_NET` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpefNet {
    pub name: String,
    /// Total net capacitance in fF as written in the header.
    pub total_cap: f64,
    pub connections: Vec<Connection>,
    pub caps: Vec<CapEntry>,
    pub ress: Vec<ResEntry>,
}

impl SpefNet {
    /// First pin declared with direction `O`.
    pub fn driver_pin(&self) -> Option<&str> {
        self.connections
            .iter()
            .find(|c| c.direction == Direction::Output)
            .map(|c| c.pin.as_str())
    }

    /// First pin declared with direction `I`.
    pub fn receiver_pin(&self) -> Option<&str> {
        self.connections
            .iter()
            .find(|c| c.direction == Direction::Input)
            .map(|c| c.pin.as_str())
    }

    /// Checks the structural invariants that `parse_spef` enforces on input.
    pub fn validate(&self) -> Result<()> {
        for (k, cap) in self.caps.iter().enumerate() {
            if cap.index != k + 1 {
                return Err(Error::MalformedSection {
                    line: 0,
                    msg: format!("cap index {} out of sequence", cap.index),
                });
            }
            if !(cap.value > 0.0) {
                return Err(Error::NonPositiveValue { line: 0, value: cap.value });
            }
        }
        let known = self.known_nodes();
        for (k, res) in self.ress.iter().enumerate() {
            if res.index != k + 1 {
                return Err(Error::MalformedSection {
                    line: 0,
                    msg: format!("res index {} out of sequence", res.index),
                });
            }
            if !(res.value > 0.0) {
                return Err(Error::NonPositiveValue { line: 0, value: res.value });
            }
            for node in [&res.node_a, &res.node_b] {
                if !known.contains(node.as_str()) {
                    return Err(Error::DanglingNode { line: 0, node: node.clone() });
                }
            }
        }
        Ok(())
    }

    fn known_nodes(&self) -> HashSet<&str> {
        self.caps
            .iter()
            .map(|c| c.node.as_str())
            .chain(self.connections.iter().map(|c| c.pin.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Start,
    Header,
    Conn,
    Cap,
    Res,
}

struct NetBuilder {
    net: SpefNet,
    known: HashSet<String>,
}

/// Parses every `*D_NET` block in `text`.
pub fn parse_spef(text: &str) -> Result<Vec<SpefNet>> {
    let mut nets = Vec::new();
    let mut section = Section::Start;
    let mut cur: Option<NetBuilder> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |msg: &str| Error::MalformedSection { line: line_no, msg: msg.to_string() };
        let mut fields = line.split_whitespace();
        let head = fields.next().unwrap_or_default();

        match (section, head) {
            (Section::Start, "*D_NET") => {
                let name = fields.next().ok_or_else(|| malformed("*D_NET without net name"))?;
                let total = fields.next().ok_or_else(|| malformed("*D_NET without total cap"))?;
                let total_cap = parse_value(total, line_no)?;
                if fields.next().is_some() {
                    return Err(malformed("trailing fields after *D_NET"));
                }
                cur = Some(NetBuilder {
                    net: SpefNet {
                        name: name.to_string(),
                        total_cap,
                        connections: Vec::new(),
                        caps: Vec::new(),
                        ress: Vec::new(),
                    },
                    known: HashSet::new(),
                });
                section = Section::Header;
            }
            (Section::Start, _) => return Err(malformed("expected *D_NET")),
            (Section::Header, "*CONN") => section = Section::Conn,
            (Section::Header, _) => return Err(malformed("expected *CONN")),
            (Section::Conn, "*I") => {
                let b = cur.as_mut().expect("net open in *CONN");
                let pin = fields.next().ok_or_else(|| malformed("*I without pin name"))?;
                let direction = match fields.next() {
                    Some("I") => Direction::Input,
                    Some("O") => Direction::Output,
                    _ => return Err(malformed("*I direction must be I or O")),
                };
                b.known.insert(pin.to_string());
                b.net.connections.push(Connection { pin: pin.to_string(), direction });
            }
            (Section::Conn, "*CAP") => section = Section::Cap,
            (Section::Conn, _) => return Err(malformed("expected *I entry or *CAP")),
            (Section::Cap, "*RES") => section = Section::Res,
            (Section::Cap, _) => {
                let b = cur.as_mut().expect("net open in *CAP");
                let index = parse_index(head, b.net.caps.len() + 1, line_no)?;
                let node = fields.next().ok_or_else(|| malformed("cap entry without node"))?;
                let value = fields.next().ok_or_else(|| malformed("cap entry without value"))?;
                let value = parse_value(value, line_no)?;
                if fields.next().is_some() {
                    return Err(malformed("coupling capacitors are not supported"));
                }
                b.known.insert(node.to_string());
                b.net.caps.push(CapEntry { index, node: node.to_string(), value });
            }
            (Section::Res, "*END") => {
                let b = cur.take().expect("net open in *RES");
                nets.push(b.net);
                section = Section::Start;
            }
            (Section::Res, _) => {
                let b = cur.as_mut().expect("net open in *RES");
                let index = parse_index(head, b.net.ress.len() + 1, line_no)?;
                let a = fields.next().ok_or_else(|| malformed("res entry without first node"))?;
                let c = fields.next().ok_or_else(|| malformed("res entry without second node"))?;
                let value = fields.next().ok_or_else(|| malformed("res entry without value"))?;
                let value = parse_value(value, line_no)?;
                if fields.next().is_some() {
                    return Err(malformed("trailing fields in res entry"));
                }
                for node in [a, c] {
                    if !b.known.contains(node) {
                        return Err(Error::DanglingNode { line: line_no, node: node.to_string() });
                    }
                }
                b.net.ress.push(ResEntry {
                    index,
                    node_a: a.to_string(),
                    node_b: c.to_string(),
                    value,
                });
            }
        }
    }

    if section != Section::Start {
        return Err(Error::MalformedSection {
            line: text.lines().count(),
            msg: "unterminated *D_NET block (missing *END)".into(),
        });
    }
    Ok(nets)
}

fn parse_index(field: &str, expected: usize, line: usize) -> Result<usize> {
    let index: usize = field.parse().map_err(|_| Error::MalformedSection {
        line,
        msg: format!("expected entry index, got `{field}`"),
    })?;
    if index != expected {
        return Err(Error::MalformedSection {
            line,
            msg: format!("entry index {index} out of sequence (expected {expected})"),
        });
    }
    Ok(index)
}

fn parse_value(field: &str, line: usize) -> Result<f64> {
    let value: f64 = field.parse().map_err(|_| Error::MalformedSection {
        line,
        msg: format!("expected a number, got `{field}`"),
    })?;
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::NonPositiveValue { line, value });
    }
    Ok(value)
}

/// Writes one net in the dialect shown in the module docs.
pub fn emit_spef(net: &SpefNet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "*D_NET {} {}", net.name, format_sig6(net.total_cap));
    out.push_str("*CONN\n");
    for c in &net.connections {
        let _ = writeln!(out, "*I {} {}", c.pin, c.direction.code());
    }
    out.push_str("*CAP\n");
    for c in &net.caps {
        let _ = writeln!(out, "{} {} {}", c.index, c.node, format_sig6(c.value));
    }
    out.push_str("*RES\n");
    for r in &net.ress {
        let _ = writeln!(out, "{} {} {} {}", r.index, r.node_a, r.node_b, format_sig6(r.value));
    }
    out.push_str("*END\n");
    out
}

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Rounds to the precision `emit_spef` writes, so generated values survive a
/// text round trip unchanged.
pub fn round_sig6(x: f64) -> f64 {
    format_sig6(x).parse().expect("formatted number parses")
}

/// Sampling intervals for synthetic ladders. Bounds are inclusive and may
/// coincide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRanges {
    /// Node capacitance range, fF.
    pub cap_min_ff: f64,
    pub cap_max_ff: f64,
    /// Driver-side and receiver-side resistor range, Ω.
    pub r_end_min: f64,
    pub r_end_max: f64,
    /// Segment resistor range, Ω.
    pub r_int_min: f64,
    pub r_int_max: f64,
}

impl Default for ValueRanges {
    fn default() -> Self {
        ValueRanges {
            cap_min_ff: 5.0,
            cap_max_ff: 50.0,
            r_end_min: 20.0,
            r_end_max: 500.0,
            r_int_min: 1.0,
            r_int_max: 20.0,
        }
    }
}

impl ValueRanges {
    /// Degenerate ranges reproducing the five-segment example net.
    pub fn reference_net() -> Self {
        ValueRanges {
            cap_min_ff: 21.30352,
            cap_max_ff: 21.30352,
            r_end_min: 145.5,
            r_end_max: 145.5,
            r_int_min: 5.32588,
            r_int_max: 5.32588,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("cap", self.cap_min_ff, self.cap_max_ff),
            ("r_end", self.r_end_min, self.r_end_max),
            ("r_int", self.r_int_min, self.r_int_max),
        ];
        for (name, lo, hi) in pairs {
            if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        Ok(())
    }
}

/// Flat key-value generator configuration, e.g.
///
/// ```toml
/// order = 5
/// seed = 7
/// cap_min_ff = 5.0
/// cap_max_ff = 50.0
/// r_end_min = 20.0
/// r_end_max = 500.0
/// r_int_min = 1.0
/// r_int_max = 20.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub order: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub ranges: ValueRanges,
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        cfg.ranges.validate()?;
        Ok(cfg)
    }
}

pub const DRIVER_PIN: &str = "I1:Y";
pub const RECEIVER_PIN: &str = "I2:A";

/// Builds an RC ladder with `order` capacitive nodes, a driver resistor in
/// front and a receiver resistor behind it. Every value is drawn
/// independently from `ranges` and rounded to six significant digits.
pub fn generate_spef(order: usize, seed: u64, ranges: &ValueRanges) -> Result<SpefNet> {
    if order == 0 {
        return Err(Error::InvalidArgument("ladder order must be at least 1".into()));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();

    let name = "net_0";
    let node = |k: usize| format!("{name}:{k}");

    // The header total is taken over the unrounded values, as an extractor would.
    let raw_caps: Vec<f64> = (0..order).map(|_| draw(ranges.cap_min_ff, ranges.cap_max_ff)).collect();
    let total_cap = round_sig6(raw_caps.iter().sum());
    let caps: Vec<CapEntry> = raw_caps
        .iter()
        .enumerate()
        .map(|(k, &v)| CapEntry { index: k + 1, node: node(k), value: round_sig6(v) })
        .collect();

    let mut ress = Vec::with_capacity(order + 1);
    ress.push(ResEntry {
        index: 1,
        node_a: DRIVER_PIN.into(),
        node_b: node(0),
        value: round_sig6(draw(ranges.r_end_min, ranges.r_end_max)),
    });
    for k in 1..order {
        ress.push(ResEntry {
            index: k + 1,
            node_a: node(k - 1),
            node_b: node(k),
            value: round_sig6(draw(ranges.r_int_min, ranges.r_int_max)),
        });
    }
    ress.push(ResEntry {
        index: order + 1,
        node_a: node(order - 1),
        node_b: RECEIVER_PIN.into(),
        value: round_sig6(draw(ranges.r_end_min, ranges.r_end_max)),
    });

    Ok(SpefNet {
        name: name.into(),
        total_cap,
        connections: vec![
            Connection { pin: DRIVER_PIN.into(), direction: Direction::Output },
            Connection { pin: RECEIVER_PIN.into(), direction: Direction::Input },
        ],
        caps,
        ress,
    })
}
