//! Coordinator/worker messages and their byte framing.
//!
//! A frame is a 4-byte big-endian payload length followed by the payload:
//!
//! ```text
//! version: u16 | round: u32 | tag: u8 | body
//! ```
//!
//! All integers are big-endian; reals travel as their IEEE-754 bit patterns, so every
//! value round-trips exactly. No message carries raw feature values of individual
//! instances or per-instance gradient statistics; histograms only hold per-bin sums.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::binning::{BinLayout, BinLayoutSet};
use crate::error::{Error, Result};
use crate::histogram::{FeatureHistogram, NodeHistogramSet};
use crate::stats::{GradStats, LossSum};
use crate::tree::{Model, TreeNode};

pub const PROTOCOL_VERSION: u16 = 1;
/// Frames above this size are rejected before any allocation.
pub const MAX_FRAME_LEN: usize = 1 << 30;
const MAX_TREE_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Trees fit the base training rows only.
    Initial,
    /// Trees fit base rows plus currently misclassified update rows.
    Update,
}

/// Which local instances a histogram covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceFilter {
    Base,
    WrongOnly,
    Integrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: u32,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    Hello { worker_id: u32 },
    LayoutShare(BinLayoutSet),
    ModelSync(Model),
    BeginTree { tree_index: u32, phase: Phase },
    HistogramRequest { tree_index: u32, filter: InstanceFilter, nodes: Vec<u32> },
    HistogramReport { tree_index: u32, worker_id: u32, hist: NodeHistogramSet },
    SplitBroadcast { tree_index: u32, node_id: u32, split: Option<SplitRule> },
    LeafBroadcast { tree_index: u32, node_id: u32, weight: f64 },
    RoundComplete { round: u32 },
    RoundStats { worker_id: u32, loss: LossSum, wrong: u64 },
    Shutdown,
}

impl ProtocolMessage {
    fn tag(&self) -> u8 {
        match self {
            Self::Hello { .. } => 0,
            Self::LayoutShare(_) => 1,
            Self::ModelSync(_) => 2,
            Self::BeginTree { .. } => 3,
            Self::HistogramRequest { .. } => 4,
            Self::HistogramReport { .. } => 5,
            Self::SplitBroadcast { .. } => 6,
            Self::LeafBroadcast { .. } => 7,
            Self::RoundComplete { .. } => 8,
            Self::RoundStats { .. } => 9,
            Self::Shutdown => 10,
        }
    }
}

/// A message stamped with the sender's round counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub round: u32,
    pub message: ProtocolMessage,
}

impl Frame {
    pub fn new(round: u32, message: ProtocolMessage) -> Self {
        Self { round, message }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u16(&mut self, x: u16) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn i64(&mut self, x: i64) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn i128(&mut self, x: i128) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.u64(x.to_bits());
    }
    fn len(&mut self, n: usize) {
        self.u32(n as u32);
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn stats(&mut self, s: &GradStats) {
        self.i64(s.g);
        self.i64(s.h);
        self.u64(s.count);
    }

    fn layouts(&mut self, set: &BinLayoutSet) {
        self.u64(set.v as u64);
        self.u64(set.k);
        self.len(set.layouts.len());
        for l in &set.layouts {
            self.u32(l.feature as u32);
            self.len(l.cuts.len());
            l.cuts.iter().for_each(|&c| self.f64(c));
            self.len(l.populations.len());
            l.populations.iter().for_each(|&p| self.u64(p));
        }
    }

    fn hist(&mut self, h: &NodeHistogramSet) {
        self.u32(h.node_id);
        self.stats(&h.total);
        self.len(h.features.len());
        for f in &h.features {
            self.u32(f.feature as u32);
            self.u32(f.num_bins);
            self.len(f.entries.len());
            for (bin, s) in &f.entries {
                self.u32(*bin);
                self.stats(s);
            }
        }
    }

    fn tree(&mut self, t: &TreeNode) {
        match t {
            TreeNode::Leaf { weight } => {
                self.u8(0);
                self.f64(*weight);
            }
            TreeNode::Split { feature, cut, left, right } => {
                self.u8(1);
                self.u32(*feature as u32);
                self.f64(*cut);
                self.tree(left);
                self.tree(right);
            }
        }
    }

    fn model(&mut self, m: &Model) {
        self.u32(m.version);
        self.f64(m.base_margin);
        self.f64(m.learning_rate);
        self.str(&m.bin_layouts_ref);
        self.u32(m.n_features as u32);
        self.len(m.trees.len());
        m.trees.iter().for_each(|t| self.tree(t));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_be_bytes(self.array()?))
    }
    fn i128(&mut self) -> Result<i128> {
        Ok(i128::from_be_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    /// Element count, checked against the bytes left so corrupt counts cannot trigger
    /// huge allocations.
    fn len(&mut self, min_item_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_size) > self.buf.len() - self.pos {
            return Err(Error::Truncated);
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Malformed("invalid utf-8".into()))
    }
    fn stats(&mut self) -> Result<GradStats> {
        Ok(GradStats { g: self.i64()?, h: self.i64()?, count: self.u64()? })
    }

    fn layouts(&mut self) -> Result<BinLayoutSet> {
        let v = self.u64()? as usize;
        let k = self.u64()?;
        let n = self.len(12)?;
        let mut layouts = Vec::with_capacity(n);
        for _ in 0..n {
            let feature = self.u32()? as usize;
            let nc = self.len(8)?;
            let cuts = (0..nc).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            let np = self.len(8)?;
            let populations = (0..np).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
            if np != nc + 1 {
                return Err(Error::Malformed(format!("{nc} cuts but {np} populations")));
            }
            layouts.push(BinLayout { feature, cuts, populations });
        }
        Ok(BinLayoutSet { v, k, layouts })
    }

    fn hist(&mut self) -> Result<NodeHistogramSet> {
        let node_id = self.u32()?;
        let total = self.stats()?;
        let nf = self.len(12)?;
        let mut features = Vec::with_capacity(nf);
        for _ in 0..nf {
            let feature = self.u32()? as usize;
            let num_bins = self.u32()?;
            let ne = self.len(28)?;
            let mut entries = Vec::with_capacity(ne);
            for _ in 0..ne {
                entries.push((self.u32()?, self.stats()?));
            }
            features.push(FeatureHistogram { feature, num_bins, entries });
        }
        Ok(NodeHistogramSet { node_id, features, total })
    }

    fn tree(&mut self, depth: usize) -> Result<TreeNode> {
        if depth > MAX_TREE_DEPTH {
            return Err(Error::Malformed("tree too deep".into()));
        }
        match self.u8()? {
            0 => Ok(TreeNode::Leaf { weight: self.f64()? }),
            1 => {
                let feature = self.u32()? as usize;
                let cut = self.f64()?;
                let left = Box::new(self.tree(depth + 1)?);
                let right = Box::new(self.tree(depth + 1)?);
                Ok(TreeNode::Split { feature, cut, left, right })
            }
            t => Err(Error::Malformed(format!("tree node tag {t}"))),
        }
    }

    fn model(&mut self) -> Result<Model> {
        let version = self.u32()?;
        let base_margin = self.f64()?;
        let learning_rate = self.f64()?;
        let bin_layouts_ref = self.str()?;
        let n_features = self.u32()? as usize;
        let n = self.len(9)?;
        let trees = (0..n).map(|_| self.tree(0)).collect::<Result<Vec<_>>>()?;
        Ok(Model { version, base_margin, learning_rate, bin_layouts_ref, n_features, trees })
    }
}

fn phase_code(p: Phase) -> u8 {
    match p {
        Phase::Initial => 0,
        Phase::Update => 1,
    }
}

fn filter_code(f: InstanceFilter) -> u8 {
    match f {
        InstanceFilter::Base => 0,
        InstanceFilter::WrongOnly => 1,
        InstanceFilter::Integrated => 2,
    }
}

/// Serializes a frame, including its length prefix.
pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(64));
    w.u32(0);
    w.u16(PROTOCOL_VERSION);
    w.u32(frame.round);
    w.u8(frame.message.tag());
    match &frame.message {
        ProtocolMessage::Hello { worker_id } => w.u32(*worker_id),
        ProtocolMessage::LayoutShare(set) => w.layouts(set),
        ProtocolMessage::ModelSync(model) => w.model(model),
        ProtocolMessage::BeginTree { tree_index, phase } => {
            w.u32(*tree_index);
            w.u8(phase_code(*phase));
        }
        ProtocolMessage::HistogramRequest { tree_index, filter, nodes } => {
            w.u32(*tree_index);
            w.u8(filter_code(*filter));
            w.len(nodes.len());
            nodes.iter().for_each(|&n| w.u32(n));
        }
        ProtocolMessage::HistogramReport { tree_index, worker_id, hist } => {
            w.u32(*tree_index);
            w.u32(*worker_id);
            w.hist(hist);
        }
        ProtocolMessage::SplitBroadcast { tree_index, node_id, split } => {
            w.u32(*tree_index);
            w.u32(*node_id);
            match split {
                None => w.u8(0),
                Some(rule) => {
                    w.u8(1);
                    w.u32(rule.feature);
                    w.f64(rule.threshold);
                }
            }
        }
        ProtocolMessage::LeafBroadcast { tree_index, node_id, weight } => {
            w.u32(*tree_index);
            w.u32(*node_id);
            w.f64(*weight);
        }
        ProtocolMessage::RoundComplete { round } => w.u32(*round),
        ProtocolMessage::RoundStats { worker_id, loss, wrong } => {
            w.u32(*worker_id);
            w.i128(loss.fixed);
            w.u64(loss.count);
            w.u64(*wrong);
        }
        ProtocolMessage::Shutdown => {}
    }
    let payload_len = (w.0.len() - 4) as u32;
    w.0[..4].copy_from_slice(&payload_len.to_be_bytes());
    w.0
}

/// Reads the payload length from a frame's 4-byte prefix.
pub fn frame_len(prefix: [u8; 4]) -> Result<usize> {
    let n = u32::from_be_bytes(prefix) as usize;
    if n < 7 || n > MAX_FRAME_LEN {
        return Err(Error::Malformed(format!("frame length {n}")));
    }
    Ok(n)
}

/// Parses one complete frame (prefix included). Trailing or missing bytes are errors.
pub fn decode(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    let n = frame_len(bytes[..4].try_into().unwrap())?;
    match (bytes.len() - 4).cmp(&n) {
        core::cmp::Ordering::Less => return Err(Error::Truncated),
        core::cmp::Ordering::Greater => {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - 4 - n)))
        }
        core::cmp::Ordering::Equal => {}
    }
    decode_payload(&bytes[4..])
}

/// Parses a frame payload (everything after the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<Frame> {
    let mut r = Reader { buf: payload, pos: 0 };
    let version = r.u16()?;
    if version != PROTOCOL_VERSION {
        return Err(Error::UnknownVersion(version));
    }
    let round = r.u32()?;
    let message = match r.u8()? {
        0 => ProtocolMessage::Hello { worker_id: r.u32()? },
        1 => ProtocolMessage::LayoutShare(r.layouts()?),
        2 => ProtocolMessage::ModelSync(r.model()?),
        3 => {
            let tree_index = r.u32()?;
            let phase = match r.u8()? {
                0 => Phase::Initial,
                1 => Phase::Update,
                p => return Err(Error::Malformed(format!("phase {p}"))),
            };
            ProtocolMessage::BeginTree { tree_index, phase }
        }
        4 => {
            let tree_index = r.u32()?;
            let filter = match r.u8()? {
                0 => InstanceFilter::Base,
                1 => InstanceFilter::WrongOnly,
                2 => InstanceFilter::Integrated,
                f => return Err(Error::Malformed(format!("filter {f}"))),
            };
            let n = r.len(4)?;
            let nodes = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            ProtocolMessage::HistogramRequest { tree_index, filter, nodes }
        }
        5 => ProtocolMessage::HistogramReport { tree_index: r.u32()?, worker_id: r.u32()?, hist: r.hist()? },
        6 => {
            let tree_index = r.u32()?;
            let node_id = r.u32()?;
            let split = match r.u8()? {
                0 => None,
                1 => Some(SplitRule { feature: r.u32()?, threshold: r.f64()? }),
                s => return Err(Error::Malformed(format!("split flag {s}"))),
            };
            ProtocolMessage::SplitBroadcast { tree_index, node_id, split }
        }
        7 => ProtocolMessage::LeafBroadcast { tree_index: r.u32()?, node_id: r.u32()?, weight: r.f64()? },
        8 => ProtocolMessage::RoundComplete { round: r.u32()? },
        9 => ProtocolMessage::RoundStats {
            worker_id: r.u32()?,
            loss: LossSum { fixed: r.i128()?, count: r.u64()? },
            wrong: r.u64()?,
        },
        10 => ProtocolMessage::Shutdown,
        t => return Err(Error::UnknownTag(t)),
    };
    if r.pos != payload.len() {
        return Err(Error::Malformed(format!("{} unread bytes", payload.len() - r.pos)));
    }
    Ok(Frame { round, message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn roundtrip(frame: Frame) {
        assert_eq!(decode(&encode(&frame)).unwrap(), frame);
    }

    #[test]
    fn simple_messages_roundtrip() {
        roundtrip(Frame::new(0, ProtocolMessage::RoundComplete { round: 0 }));
        roundtrip(Frame::new(3, ProtocolMessage::Hello { worker_id: 2 }));
        roundtrip(Frame::new(9, ProtocolMessage::Shutdown));
        roundtrip(Frame::new(
            1,
            ProtocolMessage::SplitBroadcast {
                tree_index: 1,
                node_id: 4,
                split: Some(SplitRule { feature: 3, threshold: -0.1 }),
            },
        ));
        roundtrip(Frame::new(1, ProtocolMessage::SplitBroadcast { tree_index: 1, node_id: 4, split: None }));
        roundtrip(Frame::new(
            5,
            ProtocolMessage::RoundStats { worker_id: 1, loss: LossSum { fixed: -5 << 80, count: 7 }, wrong: 3 },
        ));
        roundtrip(Frame::new(
            2,
            ProtocolMessage::HistogramRequest { tree_index: 2, filter: InstanceFilter::Integrated, nodes: vec![3, 4] },
        ));
        roundtrip(Frame::new(2, ProtocolMessage::BeginTree { tree_index: 7, phase: Phase::Update }));
        roundtrip(Frame::new(2, ProtocolMessage::LeafBroadcast { tree_index: 7, node_id: 9, weight: f64::MIN_POSITIVE }));
    }

    #[test]
    fn model_and_layouts_roundtrip() {
        let mut model = Model::new(2, 0.1, String::from("abc"));
        model.trees.push(TreeNode::Split {
            feature: 1,
            cut: 0.3,
            left: Box::new(TreeNode::Leaf { weight: 0.1 + 0.2 }),
            right: Box::new(TreeNode::Leaf { weight: -1e-300 }),
        });
        roundtrip(Frame::new(0, ProtocolMessage::ModelSync(model)));
        let set = BinLayoutSet {
            v: 3,
            k: 1,
            layouts: vec![BinLayout { feature: 0, cuts: vec![1.5, 2.5], populations: vec![1, 1, 1] }],
        };
        roundtrip(Frame::new(0, ProtocolMessage::LayoutShare(set)));
    }

    #[test]
    fn corrupt_frames_are_errors() {
        let bytes = encode(&Frame::new(1, ProtocolMessage::RoundComplete { round: 1 }));
        assert_eq!(decode(&bytes[..bytes.len() - 1]), Err(Error::Truncated));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).is_err());
        let mut bad_len = bytes.clone();
        bad_len[0] = 0xff;
        assert!(decode(&bad_len).is_err());
        let mut bad_version = bytes.clone();
        bad_version[5] = 9;
        assert_eq!(decode(&bad_version), Err(Error::UnknownVersion(9)));
        let mut bad_tag = bytes.clone();
        bad_tag[10] = 200;
        assert_eq!(decode(&bad_tag), Err(Error::UnknownTag(200)));
        assert!(decode(&[]).is_err());
    }
}
