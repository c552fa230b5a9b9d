//! Framing: 4-byte big-endian length, then that many bytes of UTF-8 JSON.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::evaluation::{EvalJob, EvalOutcome};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Message {
    Hello {
        capacity: u32,
        version: u32,
    },
    Job {
        job_id: u64,
        job: Box<EvalJob>,
    },
    Result {
        job_id: u64,
        #[serde(flatten)]
        outcome: EvalOutcome,
    },
    Shutdown,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("frame is not UTF-8")]
    NotUtf8,
    #[error("malformed message: {error}")]
    Malformed {
        error: String,
        /// `job_id` field of the frame, when it could be recovered.
        job_id: Option<u64>,
    },
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("messages always serialize");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

/// Reads one raw frame body. `Ok(None)` is a clean end of stream before any
/// length byte.
pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME_BYTES {
        return Err(WireError::TooLarge(n));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn decode(body: &[u8]) -> Result<Message, WireError> {
    let text = std::str::from_utf8(body).map_err(|_| WireError::NotUtf8)?;
    serde_json::from_str(text).map_err(|e| WireError::Malformed {
        error: e.to_string(),
        job_id: serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("job_id").and_then(serde_json::Value::as_u64)),
    })
}

pub fn read_message<R: Read + ?Sized>(r: &mut R) -> Result<Option<Message>, WireError> {
    read_frame(r)?.map(|b| decode(&b)).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::EpochHistory;
    use std::io::Cursor;

    #[test]
    fn hello_bytes() {
        let b = encode(&Message::Hello { capacity: 2, version: PROTOCOL_VERSION });
        let body = br#"{"kind":"hello","capacity":2,"version":1}"#;
        assert_eq!(&b[..4], &(body.len() as u32).to_be_bytes());
        assert_eq!(&b[4..], body);
    }

    #[test]
    fn round_trip_result() {
        let h = EpochHistory::new(vec![0.3, 0.2], vec![0.5, 0.4]).unwrap();
        let m = Message::Result { job_id: 7, outcome: EvalOutcome::from_history(h, 1234, 1.5) };
        let mut c = Cursor::new(encode(&m));
        assert_eq!(read_message(&mut c).unwrap(), Some(m));
        assert!(read_message(&mut c).unwrap().is_none());
    }

    #[test]
    fn minimal_failed_result_parses() {
        let body = br#"{"kind":"result","job_id":3,"status":"oom","best_error":null,"best_loss":null,"history":null,"params":0,"wall_seconds":2.0}"#;
        match decode(body).unwrap() {
            Message::Result { job_id, outcome } => {
                assert_eq!(job_id, 3);
                assert_eq!(outcome.status, crate::evaluation::EvalStatus::Oom);
            }
            m => panic!("{m:?}"),
        }
    }

    #[test]
    fn malformed_keeps_job_id() {
        match decode(br#"{"kind":"job","job_id":11,"job":{}}"#) {
            Err(WireError::Malformed { job_id, .. }) => assert_eq!(job_id, Some(11)),
            r => panic!("{r:?}"),
        }
        assert!(matches!(decode(&[0xff, 0xfe]), Err(WireError::NotUtf8)));
    }

    #[test]
    fn truncated_frame_is_error() {
        let mut b = encode(&Message::Shutdown);
        b.truncate(b.len() - 1);
        assert!(matches!(read_message(&mut Cursor::new(b)), Err(WireError::Io(_))));
        assert!(matches!(read_message(&mut Cursor::new(vec![0u8, 0])), Err(WireError::Io(_))));
        let big = ((MAX_FRAME_BYTES + 1) as u32).to_be_bytes().to_vec();
        assert!(matches!(read_message(&mut Cursor::new(big)), Err(WireError::TooLarge(_))));
    }
}
