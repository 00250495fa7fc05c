//! Binary wire format for active-message packets.
//!
//! Every packet starts with a fixed 32-byte little-endian base header:
//!
//! ```text
//! off  size  field
//!   0     1  version (always 1)
//!   1     1  class (0 short, 1 medium, 2 long)
//!   2     1  flags (see `AmFlags`)
//!   3     1  arg_count (0..=8)
//!   4     2  src kernel
//!   6     2  dst kernel
//!   8     2  handler_id
//!  10     2  reserved, zero
//!  12     4  token
//!  16     4  payload_len
//!  20     8  dest_offset
//!  28     4  padding, zero
//! ```
//!
//! followed by `8 * arg_count` bytes of handler arguments, an optional
//! destination layout descriptor (12 bytes strided, `4 + 12n` bytes
//! vectored) and finally the payload. Get requests declare the requested
//! byte count in `payload_len` but carry no payload bytes.

use std::fmt;

use thiserror::Error;

pub const VERSION: u8 = 1;
pub const BASE_HEADER_BYTES: usize = 32;
pub const WORD_BYTES: usize = 8;
/// Largest packet any driver will carry, in encoded bytes.
pub const MAX_PACKET_BYTES: usize = 9000;
pub const MAX_ARGS: usize = 8;
pub const MAX_VECTORED_ENTRIES: usize = 16;
pub const STRIDED_SPEC_BYTES: usize = 12;
pub const VECTORED_ENTRY_BYTES: usize = 12;

/// Handler id reserved for the built-in reply counter.
pub const REPLY_HANDLER: HandlerId = 0;

pub type HandlerId = u16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("OVERSIZE: packet would be {len} bytes, limit is {max}")]
    Oversize { len: usize, max: usize },
    #[error("INVALID_HEADER: {0}")]
    InvalidHeader(String),
    #[error("TRUNCATED: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("BAD_VERSION: {0}")]
    BadVersion(u8),
}

fn invalid(msg: impl Into<String>) -> ProtocolError {
    ProtocolError::InvalidHeader(msg.into())
}

/// Globally unique, dense kernel identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct KernelId(pub u16);

impl KernelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for KernelId {
    fn from(v: u16) -> Self {
        KernelId(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AmClass {
    Short = 0,
    Medium = 1,
    Long = 2,
}

impl AmClass {
    pub const ALL: [AmClass; 3] = [AmClass::Short, AmClass::Medium, AmClass::Long];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(AmClass::Short),
            1 => Some(AmClass::Medium),
            2 => Some(AmClass::Long),
            _ => None,
        }
    }
}

/// Message modifiers. Only certain combinations are legal for each class;
/// see [`AmHeader::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AmFlags {
    /// Payload supplied by the kernel rather than gathered from its partition.
    pub fifo: bool,
    pub get: bool,
    /// Suppresses the automatic reply.
    pub asynchronous: bool,
    pub reply: bool,
    pub strided: bool,
    pub vectored: bool,
}

impl AmFlags {
    pub const FIFO: u8 = 0x01;
    pub const GET: u8 = 0x02;
    pub const ASYNC: u8 = 0x04;
    pub const REPLY: u8 = 0x08;
    pub const STRIDED: u8 = 0x10;
    pub const VECTORED: u8 = 0x20;
    const KNOWN: u8 = 0x3f;

    pub fn bits(self) -> u8 {
        let mut b = 0;
        if self.fifo {
            b |= Self::FIFO;
        }
        if self.get {
            b |= Self::GET;
        }
        if self.asynchronous {
            b |= Self::ASYNC;
        }
        if self.reply {
            b |= Self::REPLY;
        }
        if self.strided {
            b |= Self::STRIDED;
        }
        if self.vectored {
            b |= Self::VECTORED;
        }
        b
    }

    pub fn from_bits(b: u8) -> Result<Self, ProtocolError> {
        if b & !Self::KNOWN != 0 {
            return Err(invalid(format!("unknown flag bits {:#04x}", b & !Self::KNOWN)));
        }
        Ok(AmFlags {
            fifo: b & Self::FIFO != 0,
            get: b & Self::GET != 0,
            asynchronous: b & Self::ASYNC != 0,
            reply: b & Self::REPLY != 0,
            strided: b & Self::STRIDED != 0,
            vectored: b & Self::VECTORED != 0,
        })
    }

    /// Checks the class/flag lattice without looking at lengths or layouts.
    pub fn check(self, class: AmClass) -> Result<(), ProtocolError> {
        let has_payload = matches!(class, AmClass::Medium | AmClass::Long);
        if self.fifo && !has_payload {
            return Err(invalid("fifo requires MEDIUM or LONG"));
        }
        if self.get && !has_payload {
            return Err(invalid("get requires MEDIUM or LONG"));
        }
        if self.get && self.fifo {
            return Err(invalid("get and fifo are mutually exclusive"));
        }
        if (self.strided || self.vectored) && class != AmClass::Long {
            return Err(invalid("strided/vectored require LONG"));
        }
        if self.strided && self.vectored {
            return Err(invalid("strided and vectored are mutually exclusive"));
        }
        if self.get && (self.strided || self.vectored) {
            return Err(invalid("get requests take a contiguous range"));
        }
        if self.reply && (class != AmClass::Short || !self.asynchronous) {
            return Err(invalid("reply must be an asynchronous SHORT"));
        }
        Ok(())
    }
}

/// Fixed-size blocks at a regular stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StridedSpec {
    pub block_bytes: u32,
    pub stride_bytes: u32,
    pub block_count: u32,
}

impl StridedSpec {
    pub fn new(block_bytes: u32, stride_bytes: u32, block_count: u32) -> Self {
        StridedSpec { block_bytes, stride_bytes, block_count }
    }

    pub fn total_bytes(&self) -> u64 {
        self.block_bytes as u64 * self.block_count as u64
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.block_count == 0 {
            return Err(invalid("strided block_count must be >= 1"));
        }
        if self.stride_bytes < self.block_bytes {
            return Err(invalid("strided stride_bytes < block_bytes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VectorEntry {
    pub offset: u64,
    pub len: u32,
}

/// Explicit list of absolute `(offset, len)` extents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct VectoredSpec {
    pub entries: Vec<VectorEntry>,
}

impl VectoredSpec {
    pub fn new(entries: impl IntoIterator<Item = (u64, u32)>) -> Self {
        VectoredSpec { entries: entries.into_iter().map(|(offset, len)| VectorEntry { offset, len }).collect() }
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(|e| e.len as u64).sum()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.entries.is_empty() || self.entries.len() > MAX_VECTORED_ENTRIES {
            return Err(invalid(format!(
                "vectored entry count {} outside 1..={MAX_VECTORED_ENTRIES}",
                self.entries.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DestLayout {
    Strided(StridedSpec),
    Vectored(VectoredSpec),
}

impl DestLayout {
    pub fn total_bytes(&self) -> u64 {
        match self {
            DestLayout::Strided(s) => s.total_bytes(),
            DestLayout::Vectored(v) => v.total_bytes(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            DestLayout::Strided(_) => STRIDED_SPEC_BYTES,
            DestLayout::Vectored(v) => 4 + VECTORED_ENTRY_BYTES * v.entries.len(),
        }
    }
}

/// Decoded form of every message header.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AmHeader {
    pub class: AmClass,
    pub flags: AmFlags,
    pub src: KernelId,
    pub dst: KernelId,
    pub handler_id: HandlerId,
    pub token: u32,
    pub args: Vec<u64>,
    pub payload_len: u32,
    pub dest_offset: u64,
    pub layout: Option<DestLayout>,
}

impl AmHeader {
    pub fn new(class: AmClass, src: KernelId, dst: KernelId, handler_id: HandlerId) -> Self {
        AmHeader {
            class,
            flags: AmFlags::default(),
            src,
            dst,
            handler_id,
            token: 0,
            args: Vec::new(),
            payload_len: 0,
            dest_offset: 0,
            layout: None,
        }
    }

    /// The reply to `inbound`: an asynchronous SHORT to handler 0 echoing
    /// its token. A non-zero `status` travels in `args[0]`.
    pub fn reply_to(inbound: &AmHeader, status: u64) -> Self {
        let mut h = AmHeader::new(AmClass::Short, inbound.dst, inbound.src, REPLY_HANDLER);
        h.flags.asynchronous = true;
        h.flags.reply = true;
        h.token = inbound.token;
        if status != 0 {
            h.args.push(status);
        }
        h
    }

    /// Number of payload bytes physically present after the header.
    pub fn carried_payload_len(&self) -> usize {
        if self.flags.get {
            0
        } else {
            self.payload_len as usize
        }
    }

    pub fn encoded_len(&self) -> usize {
        BASE_HEADER_BYTES
            + WORD_BYTES * self.args.len()
            + self.layout.as_ref().map_or(0, DestLayout::encoded_len)
            + self.carried_payload_len()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.flags.check(self.class)?;
        if self.args.len() > MAX_ARGS {
            return Err(invalid(format!("{} args, max {MAX_ARGS}", self.args.len())));
        }
        if self.class == AmClass::Short && self.payload_len != 0 {
            return Err(invalid("SHORT carries no payload"));
        }
        match (&self.layout, self.flags.strided, self.flags.vectored) {
            (None, false, false) => {}
            (Some(DestLayout::Strided(s)), true, false) => s.validate()?,
            (Some(DestLayout::Vectored(v)), false, true) => v.validate()?,
            _ => return Err(invalid("layout descriptor disagrees with flags")),
        }
        if let Some(layout) = &self.layout {
            if layout.total_bytes() != self.payload_len as u64 {
                return Err(invalid(format!(
                    "layout covers {} bytes, payload_len is {}",
                    layout.total_bytes(),
                    self.payload_len
                )));
            }
        }
        Ok(())
    }
}

/// A header plus the payload bytes that travel with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub header: AmHeader,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn new(header: AmHeader, payload: Vec<u8>) -> Self {
        Packet { header, payload }
    }

    pub fn encoded_len(&self) -> usize {
        self.header.encoded_len()
    }

    pub fn size_words(&self) -> usize {
        self.encoded_len().div_ceil(WORD_BYTES)
    }

    /// Checks header invariants, payload length and the size cap without
    /// producing bytes.
    pub fn check(&self) -> Result<(), ProtocolError> {
        self.header.validate()?;
        if self.payload.len() != self.header.carried_payload_len() {
            return Err(invalid(format!(
                "payload is {} bytes, header expects {}",
                self.payload.len(),
                self.header.carried_payload_len()
            )));
        }
        let len = self.encoded_len();
        if len > MAX_PACKET_BYTES {
            return Err(ProtocolError::Oversize { len, max: MAX_PACKET_BYTES });
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        encode_packet(&self.header, &self.payload)
    }
}

/// Encoded size of `header` in 8-byte words, rounded up.
pub fn packet_size_words(header: &AmHeader) -> Result<usize, ProtocolError> {
    header.validate()?;
    Ok(header.encoded_len().div_ceil(WORD_BYTES))
}

pub fn encode_packet(header: &AmHeader, payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    header.validate()?;
    if payload.len() != header.carried_payload_len() {
        return Err(invalid(format!(
            "payload is {} bytes, header expects {}",
            payload.len(),
            header.carried_payload_len()
        )));
    }
    let len = header.encoded_len();
    if len > MAX_PACKET_BYTES {
        return Err(ProtocolError::Oversize { len, max: MAX_PACKET_BYTES });
    }

    let mut out = Vec::with_capacity(len);
    out.push(VERSION);
    out.push(header.class as u8);
    out.push(header.flags.bits());
    out.push(header.args.len() as u8);
    out.extend_from_slice(&header.src.0.to_le_bytes());
    out.extend_from_slice(&header.dst.0.to_le_bytes());
    out.extend_from_slice(&header.handler_id.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&header.token.to_le_bytes());
    out.extend_from_slice(&header.payload_len.to_le_bytes());
    out.extend_from_slice(&header.dest_offset.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    debug_assert_eq!(out.len(), BASE_HEADER_BYTES);

    for a in &header.args {
        out.extend_from_slice(&a.to_le_bytes());
    }
    match &header.layout {
        Some(DestLayout::Strided(s)) => {
            out.extend_from_slice(&s.block_bytes.to_le_bytes());
            out.extend_from_slice(&s.stride_bytes.to_le_bytes());
            out.extend_from_slice(&s.block_count.to_le_bytes());
        }
        Some(DestLayout::Vectored(v)) => {
            out.extend_from_slice(&(v.entries.len() as u32).to_le_bytes());
            for e in &v.entries {
                out.extend_from_slice(&e.offset.to_le_bytes());
                out.extend_from_slice(&e.len.to_le_bytes());
            }
        }
        None => {}
    }
    out.extend_from_slice(payload);
    debug_assert_eq!(out.len(), len);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(ProtocolError::Truncated { needed: end, available: self.buf.len() });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_packet(bytes: &[u8]) -> Result<Packet, ProtocolError> {
    if bytes.len() < BASE_HEADER_BYTES {
        return Err(ProtocolError::Truncated { needed: BASE_HEADER_BYTES, available: bytes.len() });
    }
    if bytes[0] != VERSION {
        return Err(ProtocolError::BadVersion(bytes[0]));
    }
    let class = AmClass::from_u8(bytes[1]).ok_or_else(|| invalid(format!("class {}", bytes[1])))?;
    let flags = AmFlags::from_bits(bytes[2])?;
    flags.check(class)?;
    let arg_count = bytes[3] as usize;
    if arg_count > MAX_ARGS {
        return Err(invalid(format!("{arg_count} args, max {MAX_ARGS}")));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u16_at(10) != 0 || u32_at(28) != 0 {
        return Err(invalid("reserved bytes must be zero"));
    }
    let payload_len = u32_at(16);
    let dest_offset = u64::from_le_bytes(bytes[20..28].try_into().unwrap());

    let mut r = Reader { buf: bytes, pos: BASE_HEADER_BYTES };
    let args = (0..arg_count).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
    let layout = if flags.strided {
        Some(DestLayout::Strided(StridedSpec { block_bytes: r.u32()?, stride_bytes: r.u32()?, block_count: r.u32()? }))
    } else if flags.vectored {
        let n = r.u32()? as usize;
        if n == 0 || n > MAX_VECTORED_ENTRIES {
            return Err(invalid(format!("vectored entry count {n} outside 1..={MAX_VECTORED_ENTRIES}")));
        }
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            entries.push(VectorEntry { offset: r.u64()?, len: r.u32()? });
        }
        Some(DestLayout::Vectored(VectoredSpec { entries }))
    } else {
        None
    };

    let header = AmHeader {
        class,
        flags,
        src: KernelId(u16_at(4)),
        dst: KernelId(u16_at(6)),
        handler_id: u16_at(8),
        token: u32_at(12),
        args,
        payload_len,
        dest_offset,
        layout,
    };
    header.validate()?;
    let payload = r.take(header.carried_payload_len())?.to_vec();
    if r.pos != bytes.len() {
        return Err(invalid(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Packet { header, payload })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn medium_fifo(args: Vec<u64>, payload: &[u8]) -> AmHeader {
        let mut h = AmHeader::new(AmClass::Medium, KernelId(0), KernelId(1), 3);
        h.flags.fifo = true;
        h.args = args;
        h.payload_len = payload.len() as u32;
        h
    }

    #[test]
    fn short_reply_is_four_words() {
        let mut h = AmHeader::new(AmClass::Short, KernelId(1), KernelId(0), REPLY_HANDLER);
        h.flags.asynchronous = true;
        h.flags.reply = true;
        let bytes = encode_packet(&h, &[]).unwrap();
        assert_eq!(bytes.len(), 32);
        assert_eq!(packet_size_words(&h).unwrap(), 4);
    }

    #[test]
    fn medium_fifo_sizes() {
        let h = medium_fifo(vec![42], &[0; 8]);
        let bytes = encode_packet(&h, &[0; 8]).unwrap();
        assert_eq!(bytes.len(), 48);
        assert_eq!(packet_size_words(&h).unwrap(), 6);

        let h = medium_fifo(vec![42], &[0; 9]);
        assert_eq!(encode_packet(&h, &[0; 9]).unwrap().len(), 49);
        assert_eq!(packet_size_words(&h).unwrap(), 7);
    }

    #[test]
    fn long_16k_is_oversize() {
        let mut h = AmHeader::new(AmClass::Long, KernelId(0), KernelId(1), 1);
        h.flags.fifo = true;
        h.payload_len = 16384;
        let err = encode_packet(&h, &vec![0; 16384]).unwrap_err();
        assert!(matches!(err, ProtocolError::Oversize { len: 16416, max: 9000 }));
    }

    #[test]
    fn exact_size_threshold() {
        let h = medium_fifo(vec![], &[0; 8968]);
        assert_eq!(encode_packet(&h, &[0; 8968]).unwrap().len(), 9000);
        let h = medium_fifo(vec![], &[0; 8969]);
        assert!(matches!(encode_packet(&h, &[0; 8969]), Err(ProtocolError::Oversize { len: 9001, .. })));
    }

    #[test]
    fn byte_layout_is_fixed() {
        let mut h = medium_fifo(vec![0x1122334455667788], &[0xaa, 0xbb]);
        h.src = KernelId(0x0102);
        h.dst = KernelId(0x0304);
        h.handler_id = 0x0506;
        h.token = 0x0a0b0c0d;
        let b = encode_packet(&h, &[0xaa, 0xbb]).unwrap();
        assert_eq!(&b[..4], &[1, 1, AmFlags::FIFO, 1]);
        assert_eq!(&b[4..12], &[0x02, 0x01, 0x04, 0x03, 0x06, 0x05, 0, 0]);
        assert_eq!(&b[12..16], &[0x0d, 0x0c, 0x0b, 0x0a]);
        assert_eq!(&b[16..20], &[2, 0, 0, 0]);
        assert_eq!(&b[20..32], &[0; 12]);
        assert_eq!(&b[32..40], &0x1122334455667788u64.to_le_bytes());
        assert_eq!(&b[40..], &[0xaa, 0xbb]);
    }

    #[test]
    fn get_request_carries_no_payload() {
        let mut h = AmHeader::new(AmClass::Long, KernelId(0), KernelId(1), 0);
        h.flags.get = true;
        h.payload_len = 4096;
        h.dest_offset = 256;
        let b = encode_packet(&h, &[]).unwrap();
        assert_eq!(b.len(), 32);
        assert_eq!(decode_packet(&b).unwrap().header, h);
        assert!(encode_packet(&h, &[0; 4096]).is_err());
    }

    #[test]
    fn decode_rejects_short_input() {
        assert!(matches!(decode_packet(&[0; 10]), Err(ProtocolError::Truncated { needed: 32, available: 10 })));
    }

    #[test]
    fn decode_rejects_bad_version_and_truncated_payload() {
        let h = medium_fifo(vec![], &[1, 2, 3]);
        let mut b = encode_packet(&h, &[1, 2, 3]).unwrap();
        assert!(matches!(decode_packet(&b[..b.len() - 1]), Err(ProtocolError::Truncated { .. })));
        b.push(0);
        assert!(matches!(decode_packet(&b), Err(ProtocolError::InvalidHeader(_))));
        b.pop();
        b[0] = 2;
        assert_eq!(decode_packet(&b), Err(ProtocolError::BadVersion(2)));
    }

    #[test]
    fn nine_args_rejected() {
        let mut h = AmHeader::new(AmClass::Short, KernelId(0), KernelId(0), 1);
        h.args = vec![0; 9];
        assert!(matches!(h.validate(), Err(ProtocolError::InvalidHeader(_))));
        let mut b = encode_packet(&AmHeader::new(AmClass::Short, KernelId(0), KernelId(0), 1), &[]).unwrap();
        b[3] = 9;
        assert!(matches!(decode_packet(&b), Err(ProtocolError::InvalidHeader(_))));
    }

    #[test]
    fn layout_must_match_payload_len() {
        let mut h = AmHeader::new(AmClass::Long, KernelId(0), KernelId(1), 1);
        h.flags.fifo = true;
        h.flags.vectored = true;
        h.layout = Some(DestLayout::Vectored(VectoredSpec::new([(0, 2), (6, 2)])));
        h.payload_len = 5;
        assert!(h.validate().is_err());
        h.payload_len = 4;
        assert!(h.validate().is_ok());
        h.layout = Some(DestLayout::Vectored(VectoredSpec::new((0..17).map(|i| (i * 8, 1)))));
        h.payload_len = 17;
        assert!(h.validate().is_err());
    }

    #[test]
    fn strided_spec_invariants() {
        assert!(StridedSpec::new(4, 2, 1).validate().is_err());
        assert!(StridedSpec::new(4, 4, 0).validate().is_err());
        assert!(StridedSpec::new(4, 4, 1).validate().is_ok());
    }

    fn arb_header() -> impl Strategy<Value = (AmHeader, Vec<u8>)> {
        let layout = prop_oneof![
            Just(None),
            (0u32..64, 0u32..64, 1u32..16).prop_map(|(b, extra, c)| Some(DestLayout::Strided(StridedSpec::new(
                b,
                b + extra,
                c
            )))),
            prop::collection::vec((any::<u64>(), 0u32..128), 1..=MAX_VECTORED_ENTRIES)
                .prop_map(|e| Some(DestLayout::Vectored(VectoredSpec::new(e)))),
        ];
        (
            0u8..3,
            any::<[bool; 4]>(),
            any::<(u16, u16, u16, u32, u64)>(),
            prop::collection::vec(any::<u64>(), 0..=MAX_ARGS),
            layout,
            prop::collection::vec(any::<u8>(), 0..512),
        )
            .prop_map(|(class, [fifo, get, asy, reply], (src, dst, hid, token, off), args, layout, bytes)| {
                let class = AmClass::from_u8(class).unwrap();
                let mut h = AmHeader::new(class, KernelId(src), KernelId(dst), hid);
                h.token = token;
                h.dest_offset = off;
                h.args = args;
                match class {
                    AmClass::Short => {
                        h.flags.reply = reply;
                        h.flags.asynchronous = asy || reply;
                        (h, vec![])
                    }
                    _ => {
                        h.flags.asynchronous = asy;
                        if get {
                            h.flags.get = true;
                            h.payload_len = bytes.len() as u32;
                            return (h, vec![]);
                        }
                        h.flags.fifo = fifo;
                        let mut payload = bytes;
                        if class == AmClass::Long {
                            if let Some(l) = layout {
                                h.flags.strided = matches!(l, DestLayout::Strided(_));
                                h.flags.vectored = !h.flags.strided;
                                payload = (0..l.total_bytes()).map(|i| i as u8).collect();
                                h.layout = Some(l);
                            }
                        }
                        h.payload_len = payload.len() as u32;
                        (h, payload)
                    }
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn round_trip((h, p) in arb_header()) {
            let bytes = encode_packet(&h, &p).unwrap();
            let words = packet_size_words(&h).unwrap();
            prop_assert!(words * 8 >= bytes.len() && bytes.len() > (words - 1) * 8);
            let back = decode_packet(&bytes).unwrap();
            prop_assert_eq!(back.header, h);
            prop_assert_eq!(back.payload, p);
        }
    }
}
