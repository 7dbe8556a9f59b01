//! Framing for validator links: a 4-byte big-endian length followed by one
//! canonical envelope.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::message::ConsensusMessage;
use crate::canonical;
use crate::config::ValidatorId;
use crate::crypto::Digest;
use crate::ledger::{BallotTx, Block, TxError};

pub const MAX_FRAME: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    /// First frame on a validator-to-validator link.
    Hello {
        validator_id: ValidatorId,
    },
    Consensus {
        message: ConsensusMessage,
    },
    /// A ballot from a gateway.
    Submit {
        tx: BallotTx,
    },
    SubmitAck {
        ballot_hash: Digest,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<TxError>,
    },
    /// Request blocks `from..=to` (clamped to the head).
    SyncRequest {
        from: u64,
        to: u64,
    },
    SyncBlocks {
        blocks: Vec<Block>,
    },
    /// Ask for the current head index.
    Status {},
    StatusReply {
        height: u64,
    },
    /// Ask the validator to allow an empty block at its current height.
    /// Answered with `StatusReply`.
    Heartbeat {},
}

pub fn encode_frame(envelope: &Envelope) -> Vec<u8> {
    let body = canonical::to_canonical_bytes(envelope);
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    frame
}

pub fn write_frame(w: &mut impl Write, envelope: &Envelope) -> io::Result<()> {
    w.write_all(&encode_frame(envelope))?;
    w.flush()
}

/// Reads one frame. `Ok(None)` means the peer closed the link cleanly
/// between frames.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Envelope>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes"),
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body).map(Some)
}

pub fn decode_body(body: &[u8]) -> io::Result<Envelope> {
    canonical::from_canonical_bytes(body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::Payload;
    use crate::testkit;

    #[test]
    fn frames_roundtrip_back_to_back() {
        let setup = testkit::toy_election(4);
        let msg = ConsensusMessage::sign(1, 0, 2, Payload::ViewChange {}, &setup.validator_keys[2]);
        let envelopes = vec![
            Envelope::Hello { validator_id: 2 },
            Envelope::Consensus { message: msg },
            Envelope::SyncRequest { from: 1, to: 5 },
            Envelope::SubmitAck {
                ballot_hash: Digest::ZERO,
                error: Some(TxError::DoubleVote),
            },
            Envelope::Status {},
            Envelope::Heartbeat {},
        ];
        let mut wire = Vec::new();
        for e in &envelopes {
            write_frame(&mut wire, e).unwrap();
        }
        let mut cursor = std::io::Cursor::new(wire);
        for e in &envelopes {
            assert_eq!(read_frame(&mut cursor).unwrap().as_ref(), Some(e));
        }
        assert_eq!(read_frame(&mut cursor).unwrap(), None);
    }

    #[test]
    fn rejects_oversized_and_garbage() {
        let mut huge = std::io::Cursor::new(u32::MAX.to_be_bytes().to_vec());
        assert!(read_frame(&mut huge).is_err());
        let mut frame = encode_frame(&Envelope::Status {});
        let last = frame.len() - 1;
        frame[last] = b' ';
        assert!(read_frame(&mut std::io::Cursor::new(frame)).is_err());
        let mut truncated = std::io::Cursor::new(vec![0, 0, 0, 9, b'{']);
        assert!(read_frame(&mut truncated).is_err());
    }
}
