//! Wire format of protocol messages and ordered batches.
//!
//! A record is `len: u32` (bytes that follow), `kind: u8`, `view: u32`,
//! `cid: u64`, `sender: u16` and a kind-specific payload, all big-endian.

use std::fmt;

use thiserror::Error;

use crate::monitoring::{MeasurePayload, MonitoringError};
use crate::model::ReplicaId;
use crate::Cid;

/// 64-bit FNV-1a hash of an encoded batch.
pub type Digest = u64;

/// Simulated clients are numbered independently of replicas.
pub type ClientId = u16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("record truncated")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("unknown request tag {0}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error(transparent)]
    Measure(#[from] MonitoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    Propose = 0,
    Write = 1,
    Accept = 2,
    WriteResponse = 3,
    ProposeResponse = 4,
    DummyPropose = 5,
    Measure = 6,
    ClientRequest = 7,
    ClientReply = 8,
    ViewChange = 9,
}

impl MessageKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        use MessageKind::*;
        Some(match v {
            0 => Propose,
            1 => Write,
            2 => Accept,
            3 => WriteResponse,
            4 => ProposeResponse,
            5 => DummyPropose,
            6 => Measure,
            7 => ClientRequest,
            8 => ClientReply,
            9 => ViewChange,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use MessageKind::*;
        match self {
            Propose => "PROPOSE",
            Write => "WRITE",
            Accept => "ACCEPT",
            WriteResponse => "WRITE-RESPONSE",
            ProposeResponse => "PROPOSE-RESPONSE",
            DummyPropose => "DUMMY-PROPOSE",
            Measure => "MEASURE",
            ClientRequest => "CLIENT-REQUEST",
            ClientReply => "CLIENT-REPLY",
            ViewChange => "VIEW-CHANGE",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Who issued an ordered request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Client(ClientId),
    Replica(ReplicaId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId {
    pub origin: Origin,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operation {
    /// Opaque client command.
    Client(Vec<u8>),
    Measure(MeasurePayload),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: RequestId,
    pub op: Operation,
}

impl Request {
    pub fn client(client: ClientId, seq: u64, command: Vec<u8>) -> Self {
        Self {
            id: RequestId {
                origin: Origin::Client(client),
                seq,
            },
            op: Operation::Client(command),
        }
    }

    pub fn measure(payload: MeasurePayload, seq: u64) -> Self {
        Self {
            id: RequestId {
                origin: Origin::Replica(payload.sender),
                seq,
            },
            op: Operation::Measure(payload),
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        match (&self.op, self.id.origin) {
            (Operation::Client(cmd), Origin::Client(c)) => {
                out.push(0);
                out.extend_from_slice(&c.to_be_bytes());
                out.extend_from_slice(&self.id.seq.to_be_bytes());
                out.extend_from_slice(&(cmd.len() as u32).to_be_bytes());
                out.extend_from_slice(cmd);
            }
            (Operation::Measure(p), _) => {
                out.push(1);
                out.extend_from_slice(&self.id.seq.to_be_bytes());
                p.encode(out);
            }
            (Operation::Client(_), Origin::Replica(_)) => unreachable!("client operation with replica origin"),
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => {
                let client = r.u16()?;
                let seq = r.u64()?;
                let len = r.u32()? as usize;
                Ok(Self::client(client, seq, r.bytes(len)?.to_vec()))
            }
            1 => {
                let seq = r.u64()?;
                let (payload, used) = MeasurePayload::decode(r.rest())?;
                r.skip(used)?;
                Ok(Self::measure(payload, seq))
            }
            t => Err(DecodeError::UnknownTag(t)),
        }
    }
}

/// Ordered list of requests decided in one consensus instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub requests: Vec<Request>,
}

impl Batch {
    pub fn new(requests: Vec<Request>) -> Self {
        Self { requests }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.requests.len() as u32).to_be_bytes());
        for req in &self.requests {
            req.encode(out);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let count = r.u32()? as usize;
        let mut requests = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            requests.push(Request::decode(r)?);
        }
        Ok(Self { requests })
    }

    pub fn digest(&self) -> Digest {
        fnv1a(&self.to_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Propose { batch: Batch, challenge: u64 },
    Write { digest: Digest, challenge: u64 },
    Accept { digest: Digest },
    WriteResponse { challenge: u64, digest: Digest },
    /// Answers both PROPOSE and DUMMY-PROPOSE; echoes the proposed batch.
    ProposeResponse { challenge: u64, echo: Batch },
    DummyPropose { batch: Batch, challenge: u64 },
    Measure(Request),
    ClientRequest(Request),
    ClientReply { seq: u64, digest: Digest },
    ViewChange { view: u32 },
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Propose { .. } => MessageKind::Propose,
            Body::Write { .. } => MessageKind::Write,
            Body::Accept { .. } => MessageKind::Accept,
            Body::WriteResponse { .. } => MessageKind::WriteResponse,
            Body::ProposeResponse { .. } => MessageKind::ProposeResponse,
            Body::DummyPropose { .. } => MessageKind::DummyPropose,
            Body::Measure(_) => MessageKind::Measure,
            Body::ClientRequest(_) => MessageKind::ClientRequest,
            Body::ClientReply { .. } => MessageKind::ClientReply,
            Body::ViewChange { .. } => MessageKind::ViewChange,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub view: u32,
    pub cid: Cid,
    /// Replica id, or client id for CLIENT-REQUEST.
    pub sender: u16,
    pub body: Body,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&[0; 4]);
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.view.to_be_bytes());
        out.extend_from_slice(&self.cid.to_be_bytes());
        out.extend_from_slice(&self.sender.to_be_bytes());
        match &self.body {
            Body::Propose { batch, challenge } | Body::DummyPropose { batch, challenge } => {
                out.extend_from_slice(&challenge.to_be_bytes());
                batch.encode(out);
            }
            Body::Write { digest, challenge } | Body::WriteResponse { challenge, digest } => {
                out.extend_from_slice(&challenge.to_be_bytes());
                out.extend_from_slice(&digest.to_be_bytes());
            }
            Body::Accept { digest } => out.extend_from_slice(&digest.to_be_bytes()),
            Body::ProposeResponse { challenge, echo } => {
                out.extend_from_slice(&challenge.to_be_bytes());
                echo.encode(out);
            }
            Body::Measure(req) | Body::ClientRequest(req) => req.encode(out),
            Body::ClientReply { seq, digest } => {
                out.extend_from_slice(&seq.to_be_bytes());
                out.extend_from_slice(&digest.to_be_bytes());
            }
            Body::ViewChange { view } => out.extend_from_slice(&view.to_be_bytes()),
        }
        let len = (out.len() - start - 4) as u32;
        out[start..start + 4].copy_from_slice(&len.to_be_bytes());
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    /// Decodes exactly one record.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let len = r.u32()? as usize;
        if bytes.len() - 4 < len {
            return Err(DecodeError::Truncated);
        }
        if bytes.len() - 4 > len {
            return Err(DecodeError::Trailing(bytes.len() - 4 - len));
        }
        let raw_kind = r.u8()?;
        let kind = MessageKind::from_u8(raw_kind).ok_or(DecodeError::UnknownKind(raw_kind))?;
        let view = r.u32()?;
        let cid = r.u64()?;
        let sender = r.u16()?;
        let body = match kind {
            MessageKind::Propose | MessageKind::DummyPropose => {
                let challenge = r.u64()?;
                let batch = Batch::decode(&mut r)?;
                if kind == MessageKind::Propose {
                    Body::Propose { batch, challenge }
                } else {
                    Body::DummyPropose { batch, challenge }
                }
            }
            MessageKind::Write | MessageKind::WriteResponse => {
                let challenge = r.u64()?;
                let digest = r.u64()?;
                if kind == MessageKind::Write {
                    Body::Write { digest, challenge }
                } else {
                    Body::WriteResponse { challenge, digest }
                }
            }
            MessageKind::Accept => Body::Accept { digest: r.u64()? },
            MessageKind::ProposeResponse => {
                let challenge = r.u64()?;
                Body::ProposeResponse {
                    challenge,
                    echo: Batch::decode(&mut r)?,
                }
            }
            MessageKind::Measure => Body::Measure(Request::decode(&mut r)?),
            MessageKind::ClientRequest => Body::ClientRequest(Request::decode(&mut r)?),
            MessageKind::ClientReply => Body::ClientReply {
                seq: r.u64()?,
                digest: r.u64()?,
            },
            MessageKind::ViewChange => Body::ViewChange { view: r.u32()? },
        };
        if r.pos != bytes.len() {
            return Err(DecodeError::Trailing(bytes.len() - r.pos));
        }
        Ok(Self { view, cid, sender, body })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, len: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(len).ok_or(DecodeError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    fn skip(&mut self, len: usize) -> Result<(), DecodeError> {
        self.bytes(len).map(|_| ())
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.bytes(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
}
