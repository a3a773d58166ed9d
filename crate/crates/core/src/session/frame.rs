//! Binary framing of public messages.
//!
//! ```text
//! u32 length (big-endian, counts every byte after itself)
//! u8  version
//! u8  message type
//! u64 session id
//! u32 sequence
//! ... payload
//! u64 authentication tag
//! ```

use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const VERSION: u8 = 1;
/// Bytes in a frame with an empty payload.
pub const EMPTY_FRAME_LEN: usize = 4 + 1 + 1 + 8 + 4 + 8;
/// Largest accepted frame body.
pub const MAX_FRAME_LEN: usize = 1 << 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("truncated frame ({0} bytes)")]
    Truncated(usize),
    #[error("length field {declared} does not match {actual} bytes")]
    BadLength { declared: usize, actual: usize },
    #[error("unsupported frame version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageType {
    Hello = 0,
    Params = 1,
    IndexList = 2,
    BasisList = 3,
    ParityReport = 4,
    PermutationSeed = 5,
    HashSeed = 6,
    VerifyParity = 7,
    Replenish = 8,
    Abort = 9,
}

impl MessageType {
    pub const ALL: [MessageType; 10] = [
        MessageType::Hello,
        MessageType::Params,
        MessageType::IndexList,
        MessageType::BasisList,
        MessageType::ParityReport,
        MessageType::PermutationSeed,
        MessageType::HashSeed,
        MessageType::VerifyParity,
        MessageType::Replenish,
        MessageType::Abort,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.get(b as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicMessage {
    pub version: u8,
    pub msg_type: MessageType,
    pub session_id: u64,
    pub sequence: u32,
    pub payload: Vec<u8>,
    pub auth_tag: u64,
}

impl PublicMessage {
    pub fn new(msg_type: MessageType, session_id: u64, sequence: u32, payload: Vec<u8>) -> Self {
        Self {
            version: VERSION,
            msg_type,
            session_id,
            sequence,
            payload,
            auth_tag: 0,
        }
    }

    /// The bytes covered by the tag: everything between the length and the tag.
    pub fn authenticated_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.payload.len());
        out.push(self.version);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.session_id.to_be_bytes());
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Integrity checksum used in place of a tag on `Hello`, which precedes
    /// any key agreement.
    pub fn checksum(&self) -> u64 {
        let d = Sha256::digest(self.authenticated_bytes());
        u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

pub fn encode_frame(msg: &PublicMessage) -> Vec<u8> {
    let body = msg.authenticated_bytes();
    let len = (body.len() + 8) as u32;
    let mut out = Vec::with_capacity(4 + len as usize);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&msg.auth_tag.to_be_bytes());
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<PublicMessage, FrameError> {
    if bytes.len() < EMPTY_FRAME_LEN {
        return Err(FrameError::Truncated(bytes.len()));
    }
    let declared = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    if declared != bytes.len() - 4 {
        return Err(FrameError::BadLength {
            declared,
            actual: bytes.len() - 4,
        });
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(FrameError::Version(version));
    }
    let msg_type = MessageType::from_u8(bytes[5]).ok_or(FrameError::UnknownType(bytes[5]))?;
    let session_id = u64::from_be_bytes(bytes[6..14].try_into().expect("8 bytes"));
    let sequence = u32::from_be_bytes(bytes[14..18].try_into().expect("4 bytes"));
    let tag_at = bytes.len() - 8;
    Ok(PublicMessage {
        version,
        msg_type,
        session_id,
        sequence,
        payload: bytes[18..tag_at].to_vec(),
        auth_tag: u64::from_be_bytes(bytes[tag_at..].try_into().expect("8 bytes")),
    })
}

/// Reads one whole frame from a byte stream. `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_be_bytes(len) as usize;
    if !(EMPTY_FRAME_LEN - 4..=MAX_FRAME_LEN).contains(&n) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame length {n} out of range"),
        ));
    }
    let mut frame = vec![0u8; 4 + n];
    frame[..4].copy_from_slice(&len);
    r.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_frame_is_header_only() {
        let m = PublicMessage::new(MessageType::Hello, 7, 0, Vec::new());
        let f = encode_frame(&m);
        assert_eq!(f.len(), EMPTY_FRAME_LEN);
        assert_eq!(EMPTY_FRAME_LEN, 26);
        assert_eq!(&f[..4], &22u32.to_be_bytes());
    }

    #[test]
    fn decode_rejects_malformed() {
        let mut m = PublicMessage::new(MessageType::Abort, 1, 2, vec![1, 2, 3]);
        m.auth_tag = 99;
        let f = encode_frame(&m);
        assert_eq!(decode_frame(&f[..10]), Err(FrameError::Truncated(10)));
        assert!(matches!(decode_frame(&f[..f.len() - 1]), Err(FrameError::BadLength { .. })));
        let mut v = f.clone();
        v[4] = 2;
        assert_eq!(decode_frame(&v), Err(FrameError::Version(2)));
        let mut t = f.clone();
        t[5] = 10;
        assert_eq!(decode_frame(&t), Err(FrameError::UnknownType(10)));
    }

    #[test]
    fn stream_reader_splits_frames() {
        let a = encode_frame(&PublicMessage::new(MessageType::Params, 1, 0, vec![5; 40]));
        let b = encode_frame(&PublicMessage::new(MessageType::Replenish, 1, 1, vec![]));
        let mut bytes = a.clone();
        bytes.extend_from_slice(&b);
        let mut r = std::io::Cursor::new(bytes);
        assert_eq!(read_frame(&mut r).unwrap(), Some(a));
        assert_eq!(read_frame(&mut r).unwrap(), Some(b));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn round_trip(t in 0u8..10, sid in any::<u64>(), seq in any::<u32>(), tag in any::<u64>(),
                      payload in proptest::collection::vec(any::<u8>(), 0..64)) {
            let mut m = PublicMessage::new(MessageType::from_u8(t).unwrap(), sid, seq, payload);
            m.auth_tag = tag;
            prop_assert_eq!(decode_frame(&encode_frame(&m)).unwrap(), m);
        }
    }
}
