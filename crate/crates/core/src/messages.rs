//! Protocol message vocabulary and its canonical byte codec.
//!
//! ```text
//! frame      = tag (1) || body
//! NodeId     = u16 big-endian
//! SeqNum     = u32 big-endian
//! counts     = u16 big-endian (hop counts, payload size, set/list lengths)
//! ids        = u32 big-endian (broadcast id, alarm id, flow id, flow sequence)
//! lifetime   = u32 big-endian, milliseconds
//! DriEntry   = 1 byte, from in bit 1, through in bit 0
//! option     = flag byte (0 absent, 1 present) || value
//! set / list = u16 length || items (sets strictly ascending)
//! ```
//!
//! Tags: RREQ 1, RREP 2, RERR 3, HELLO 4, FRQ 5, FRP 6, ALARM 7, DATA 8.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Destination sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SeqNum(pub u32);

/// One row of a DRI table: has data been routed *from* / *through* the keyed node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DriEntry {
    pub from: bool,
    pub through: bool,
}

impl DriEntry {
    pub const NONE: DriEntry = DriEntry { from: false, through: false };
    pub const BOTH: DriEntry = DriEntry { from: true, through: true };

    pub const fn new(from: bool, through: bool) -> Self {
        DriEntry { from, through }
    }

    pub fn to_bits(self) -> u8 {
        ((self.from as u8) << 1) | self.through as u8
    }

    pub fn from_bits(b: u8) -> Option<Self> {
        (b <= 3).then_some(DriEntry { from: b & 0b10 != 0, through: b & 0b01 != 0 })
    }

    /// Bitwise OR; bits already set stay set.
    pub fn merge(self, other: DriEntry) -> DriEntry {
        DriEntry { from: self.from || other.from, through: self.through || other.through }
    }
}

impl fmt::Display for DriEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.from as u8, self.through as u8)
    }
}

/// A node's claim about its next hop toward some destination plus its DRI row for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NextHopClaim {
    pub node: NodeId,
    pub dri: DriEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rreq {
    pub origin: NodeId,
    pub origin_seq: SeqNum,
    pub broadcast_id: u32,
    pub destination: NodeId,
    pub dest_seq_known: Option<SeqNum>,
    pub hop_count: u16,
    /// Only the destination may answer.
    pub dest_only: bool,
    /// Nodes that must neither forward nor answer this request.
    pub avoid: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rrep {
    /// Originator of the RREQ being answered; the reply travels toward it.
    pub origin: NodeId,
    pub destination: NodeId,
    pub dest_seq: SeqNum,
    pub hop_count: u16,
    pub lifetime_ms: u32,
    pub responder: NodeId,
    /// Next-hop extension, absent when the responder is the destination.
    pub next_hop: Option<NextHopClaim>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rerr {
    pub unreachable: Vec<(NodeId, SeqNum)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hello {
    pub sender: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frq {
    pub asker: NodeId,
    pub suspect_in: NodeId,
    pub target_nhn: NodeId,
    pub wanted_destination: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frp {
    /// Node that issued the FRq; the reply travels toward it.
    pub asker: NodeId,
    pub responder: NodeId,
    pub dri_for_suspect: DriEntry,
    pub own_next_hop: Option<NextHopClaim>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alarm {
    pub accuser: NodeId,
    pub blackholes: BTreeSet<NodeId>,
    pub alarm_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataPacket {
    pub flow_id: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub seq_in_flow: u32,
    pub payload_bytes: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Message {
    Rreq(Rreq),
    Rrep(Rrep),
    Rerr(Rerr),
    Hello(Hello),
    Frq(Frq),
    Frp(Frp),
    Alarm(Alarm),
    Data(DataPacket),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Rreq,
    Rrep,
    Rerr,
    Hello,
    Frq,
    Frp,
    Alarm,
    Data,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::Rreq,
        MessageKind::Rrep,
        MessageKind::Rerr,
        MessageKind::Hello,
        MessageKind::Frq,
        MessageKind::Frp,
        MessageKind::Alarm,
        MessageKind::Data,
    ];

    pub fn tag(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag.checked_sub(1)? as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Rreq => "RREQ",
            MessageKind::Rrep => "RREP",
            MessageKind::Rerr => "RERR",
            MessageKind::Hello => "HELLO",
            MessageKind::Frq => "FRQ",
            MessageKind::Frp => "FRP",
            MessageKind::Alarm => "ALARM",
            MessageKind::Data => "DATA",
        }
    }

    /// Routing and defense control traffic, HELLO excluded.
    pub fn is_control(self) -> bool {
        !matches!(self, MessageKind::Hello | MessageKind::Data)
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Rreq(_) => MessageKind::Rreq,
            Message::Rrep(_) => MessageKind::Rrep,
            Message::Rerr(_) => MessageKind::Rerr,
            Message::Hello(_) => MessageKind::Hello,
            Message::Frq(_) => MessageKind::Frq,
            Message::Frp(_) => MessageKind::Frp,
            Message::Alarm(_) => MessageKind::Alarm,
            Message::Data(_) => MessageKind::Data,
        }
    }

    /// Checks the per-type invariants that the codec enforces on decode.
    pub fn validate(&self) -> Result<(), MalformedMessage> {
        let fail = |what| Err(MalformedMessage::Invariant(what));
        match self {
            Message::Rrep(r) if r.responder == r.destination && r.next_hop.is_some() => {
                fail("destination responder carries next-hop extension")
            }
            Message::Rerr(r) if r.unreachable.is_empty() => fail("empty RERR"),
            Message::Frq(q) if q.suspect_in == q.target_nhn => fail("FRq suspect equals target"),
            Message::Frq(q) if q.asker == q.suspect_in => fail("FRq asker equals suspect"),
            Message::Alarm(a) if a.blackholes.is_empty() => fail("empty alarm"),
            Message::Alarm(a) if a.blackholes.contains(&a.accuser) => fail("accuser in alarm"),
            Message::Data(d) if d.src == d.dst => fail("data src equals dst"),
            Message::Rreq(r) if r.avoid.len() > u16::MAX as usize => fail("avoid set too large"),
            Message::Rerr(r) if r.unreachable.len() > u16::MAX as usize => fail("RERR too large"),
            Message::Alarm(a) if a.blackholes.len() > u16::MAX as usize => fail("alarm too large"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedMessage {
    #[error("empty frame")]
    Empty,
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("frame truncated")]
    Truncated,
    #[error("invalid option flag {0:#04x}")]
    BadOptionFlag(u8),
    #[error("invalid DRI byte {0:#04x}")]
    BadDriByte(u8),
    #[error("set not strictly ascending")]
    NonCanonicalSet,
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invariant violated: {0}")]
    Invariant(&'static str),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn node(&mut self, n: NodeId) {
        self.u16(n.0);
    }
    fn seq(&mut self, s: SeqNum) {
        self.u32(s.0);
    }
    fn dri(&mut self, d: DriEntry) {
        self.u8(d.to_bits());
    }
    fn len(&mut self, n: usize) {
        debug_assert!(n <= u16::MAX as usize);
        self.u16(n as u16);
    }
    fn opt<T>(&mut self, v: Option<T>, mut f: impl FnMut(&mut Self, T)) {
        match v {
            None => self.u8(0),
            Some(v) => {
                self.u8(1);
                f(self, v);
            }
        }
    }
    fn node_set(&mut self, set: &BTreeSet<NodeId>) {
        self.len(set.len());
        for n in set {
            self.node(*n);
        }
    }
}

/// Cursor over an input frame. Every read is bounds-checked.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MalformedMessage> {
        let end = self.pos.checked_add(n).ok_or(MalformedMessage::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(MalformedMessage::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, MalformedMessage> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, MalformedMessage> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32, MalformedMessage> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn node(&mut self) -> Result<NodeId, MalformedMessage> {
        self.u16().map(NodeId)
    }
    fn seq(&mut self) -> Result<SeqNum, MalformedMessage> {
        self.u32().map(SeqNum)
    }
    fn dri(&mut self) -> Result<DriEntry, MalformedMessage> {
        let b = self.u8()?;
        DriEntry::from_bits(b).ok_or(MalformedMessage::BadDriByte(b))
    }
    fn flag(&mut self) -> Result<bool, MalformedMessage> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(MalformedMessage::BadOptionFlag(b)),
        }
    }
    fn opt<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, MalformedMessage>,
    ) -> Result<Option<T>, MalformedMessage> {
        if self.flag()? {
            f(self).map(Some)
        } else {
            Ok(None)
        }
    }
    fn node_set(&mut self) -> Result<BTreeSet<NodeId>, MalformedMessage> {
        let n = self.u16()? as usize;
        let mut set = BTreeSet::new();
        let mut prev: Option<NodeId> = None;
        for _ in 0..n {
            let id = self.node()?;
            if prev.is_some_and(|p| p >= id) {
                return Err(MalformedMessage::NonCanonicalSet);
            }
            prev = Some(id);
            set.insert(id);
        }
        Ok(set)
    }

    /// Pairs a next-hop node option with its DRI option; both or neither.
    fn claim(&mut self) -> Result<Option<NextHopClaim>, MalformedMessage> {
        let node = self.opt(Self::node)?;
        let dri = self.opt(Self::dri)?;
        match (node, dri) {
            (Some(node), Some(dri)) => Ok(Some(NextHopClaim { node, dri })),
            (None, None) => Ok(None),
            _ => Err(MalformedMessage::Invariant("next hop and its DRI must travel together")),
        }
    }
}

fn write_claim(w: &mut Writer, claim: Option<NextHopClaim>) {
    w.opt(claim.map(|c| c.node), Writer::node);
    w.opt(claim.map(|c| c.dri), Writer::dri);
}

pub fn encode(msg: &Message) -> Vec<u8> {
    debug_assert_eq!(msg.validate(), Ok(()), "encoding invalid message {msg:?}");
    let mut w = Writer { buf: Vec::with_capacity(32) };
    w.u8(msg.kind().tag());
    match msg {
        Message::Rreq(r) => {
            w.node(r.origin);
            w.seq(r.origin_seq);
            w.u32(r.broadcast_id);
            w.node(r.destination);
            w.opt(r.dest_seq_known, Writer::seq);
            w.u16(r.hop_count);
            w.u8(r.dest_only as u8);
            w.node_set(&r.avoid);
        }
        Message::Rrep(r) => {
            w.node(r.origin);
            w.node(r.destination);
            w.seq(r.dest_seq);
            w.u16(r.hop_count);
            w.u32(r.lifetime_ms);
            w.node(r.responder);
            write_claim(&mut w, r.next_hop);
        }
        Message::Rerr(r) => {
            w.len(r.unreachable.len());
            for (d, s) in &r.unreachable {
                w.node(*d);
                w.seq(*s);
            }
        }
        Message::Hello(h) => w.node(h.sender),
        Message::Frq(q) => {
            w.node(q.asker);
            w.node(q.suspect_in);
            w.node(q.target_nhn);
            w.node(q.wanted_destination);
        }
        Message::Frp(p) => {
            w.node(p.asker);
            w.node(p.responder);
            w.dri(p.dri_for_suspect);
            write_claim(&mut w, p.own_next_hop);
        }
        Message::Alarm(a) => {
            w.node(a.accuser);
            w.node_set(&a.blackholes);
            w.u32(a.alarm_id);
        }
        Message::Data(d) => {
            w.u32(d.flow_id);
            w.node(d.src);
            w.node(d.dst);
            w.u32(d.seq_in_flow);
            w.u16(d.payload_bytes);
        }
    }
    w.buf
}

/// Decodes one message from the front of `bytes`, returning it with the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), MalformedMessage> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let tag = r.u8().map_err(|_| MalformedMessage::Empty)?;
    let kind = MessageKind::from_tag(tag).ok_or(MalformedMessage::UnknownTag(tag))?;
    let msg = match kind {
        MessageKind::Rreq => Message::Rreq(Rreq {
            origin: r.node()?,
            origin_seq: r.seq()?,
            broadcast_id: r.u32()?,
            destination: r.node()?,
            dest_seq_known: r.opt(Reader::seq)?,
            hop_count: r.u16()?,
            dest_only: r.flag()?,
            avoid: r.node_set()?,
        }),
        MessageKind::Rrep => Message::Rrep(Rrep {
            origin: r.node()?,
            destination: r.node()?,
            dest_seq: r.seq()?,
            hop_count: r.u16()?,
            lifetime_ms: r.u32()?,
            responder: r.node()?,
            next_hop: r.claim()?,
        }),
        MessageKind::Rerr => {
            let n = r.u16()? as usize;
            let mut unreachable = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                unreachable.push((r.node()?, r.seq()?));
            }
            Message::Rerr(Rerr { unreachable })
        }
        MessageKind::Hello => Message::Hello(Hello { sender: r.node()? }),
        MessageKind::Frq => Message::Frq(Frq {
            asker: r.node()?,
            suspect_in: r.node()?,
            target_nhn: r.node()?,
            wanted_destination: r.node()?,
        }),
        MessageKind::Frp => Message::Frp(Frp {
            asker: r.node()?,
            responder: r.node()?,
            dri_for_suspect: r.dri()?,
            own_next_hop: r.claim()?,
        }),
        MessageKind::Alarm => {
            Message::Alarm(Alarm { accuser: r.node()?, blackholes: r.node_set()?, alarm_id: r.u32()? })
        }
        MessageKind::Data => Message::Data(DataPacket {
            flow_id: r.u32()?,
            src: r.node()?,
            dst: r.node()?,
            seq_in_flow: r.u32()?,
            payload_bytes: r.u16()?,
        }),
    };
    msg.validate()?;
    Ok((msg, r.pos))
}

/// Decodes exactly one message; any bytes after it are an error.
pub fn decode(bytes: &[u8]) -> Result<Message, MalformedMessage> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(MalformedMessage::TrailingBytes(bytes.len() - used));
    }
    Ok(msg)
}
