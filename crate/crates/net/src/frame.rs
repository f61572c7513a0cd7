//! Length-prefixed framing: a 4-byte big-endian payload length followed by
//! that many bytes of UTF-8 JSON.

use thiserror::Error;

use crate::protocol::Message;

pub const MAX_FRAME: usize = 16 * 1024 * 1024;
pub const PREFIX_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame length {0} exceeds the {MAX_FRAME} byte limit")]
    TooLarge(usize),
    #[error("payload is not valid UTF-8")]
    Utf8,
    #[error("payload is not a single JSON object: {0}")]
    NotObject(String),
    #[error("payload has no string \"type\" field")]
    MissingType,
    #[error("malformed {type_name} message: {detail}")]
    Invalid { type_name: String, detail: String },
    #[error("message cannot be encoded: {0}")]
    Unencodable(String),
}

impl FrameError {
    /// Errors after which the byte stream can no longer be framed.
    pub fn is_fatal(&self) -> bool {
        matches!(self, FrameError::TooLarge(_))
    }
}

pub fn encode_payload(message: &Message) -> Result<String, FrameError> {
    if !message.is_encodable() {
        return Err(FrameError::Unencodable(format!(
            "{} with non-finite values or unknown type",
            message.type_name()
        )));
    }
    serde_json::to_string(message).map_err(|e| FrameError::Unencodable(e.to_string()))
}

pub fn encode_frame(message: &Message) -> Result<Vec<u8>, FrameError> {
    let payload = encode_payload(message)?;
    if payload.len() > MAX_FRAME {
        return Err(FrameError::TooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(PREFIX_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload.as_bytes());
    Ok(out)
}

/// Parses one payload. Unknown types become [`Message::Unknown`].
pub fn decode_payload(bytes: &[u8]) -> Result<Message, FrameError> {
    let text = std::str::from_utf8(bytes).map_err(|_| FrameError::Utf8)?;
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| FrameError::NotObject(e.to_string()))?;
    let type_name = match value.as_object().map(|o| o.get("type")) {
        None => return Err(FrameError::NotObject("top level is not an object".into())),
        Some(Some(serde_json::Value::String(t))) => t.clone(),
        Some(_) => return Err(FrameError::MissingType),
    };
    if !Message::KNOWN_TYPES.contains(&type_name.as_str()) {
        return Ok(Message::Unknown { type_name });
    }
    serde_json::from_value(value).map_err(|e| FrameError::Invalid {
        type_name,
        detail: e.to_string(),
    })
}

/// Decodes the first frame of `bytes`. `Ok(None)` means more bytes are
/// needed; otherwise returns the message and the bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<Option<(Message, usize)>, FrameError> {
    let Some(prefix) = bytes.get(..PREFIX_LEN) else {
        return Ok(None);
    };
    let len = u32::from_be_bytes(prefix.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::TooLarge(len));
    }
    let Some(payload) = bytes.get(PREFIX_LEN..PREFIX_LEN + len) else {
        return Ok(None);
    };
    decode_payload(payload).map(|m| Some((m, PREFIX_LEN + len)))
}

/// Incremental decoder for a byte stream arriving in arbitrary chunks.
///
/// A malformed payload is consumed and reported; the next frame decodes
/// normally. An oversized length prefix is fatal and the decoder stays
/// failed.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
    failed: Option<FrameError>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.failed.is_none() {
            self.buf.extend_from_slice(bytes);
        }
    }

    /// Bytes received but not yet consumed by a complete frame.
    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }

    pub fn next_message(&mut self) -> Option<Result<Message, FrameError>> {
        if let Some(e) = &self.failed {
            return Some(Err(e.clone()));
        }
        let pending = &self.buf[self.start..];
        let result = match decode_frame(pending) {
            Ok(None) => None,
            Ok(Some((m, used))) => {
                self.start += used;
                Some(Ok(m))
            }
            Err(e) if e.is_fatal() => {
                self.failed = Some(e.clone());
                self.buf = Vec::new();
                self.start = 0;
                Some(Err(e))
            }
            Err(e) => {
                let len = u32::from_be_bytes(pending[..PREFIX_LEN].try_into().expect("4 bytes")) as usize;
                self.start += PREFIX_LEN + len;
                Some(Err(e))
            }
        };
        if self.start > 0 && self.start * 2 >= self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_frame_bytes() {
        let f = encode_frame(&Message::Tick).unwrap();
        assert_eq!(&f[..4], &[0, 0, 0, 15]);
        assert_eq!(&f[4..], br#"{"type":"tick"}"#);
    }

    #[test]
    fn short_declared_length_leaves_rest() {
        let mut bytes = vec![0, 0, 0, 2];
        bytes.extend_from_slice(&[b'{'; 100]);
        // the two declared bytes are a broken payload; the remainder stays
        let mut d = FrameDecoder::new();
        d.push(&bytes);
        assert!(matches!(d.next_message(), Some(Err(FrameError::NotObject(_)))));
        assert_eq!(d.buffered(), 98);
    }

    #[test]
    fn unknown_type_is_not_an_error() {
        let m = decode_payload(br#"{"type":"teleport","x":1}"#).unwrap();
        assert_eq!(
            m,
            Message::Unknown {
                type_name: "teleport".into()
            }
        );
        assert!(encode_frame(&m).is_err());
    }

    #[test]
    fn oversize_is_fatal() {
        let mut d = FrameDecoder::new();
        d.push(&[0x01, 0x00, 0x00, 0x01]);
        assert_eq!(d.next_message(), Some(Err(FrameError::TooLarge(MAX_FRAME + 1))));
        d.push(&encode_frame(&Message::Tick).unwrap());
        assert!(matches!(d.next_message(), Some(Err(FrameError::TooLarge(_)))));
    }

    #[test]
    fn known_type_with_bad_fields() {
        let e = decode_payload(br#"{"type":"vehicle_control","id":"x"}"#).unwrap_err();
        assert!(matches!(e, FrameError::Invalid { .. }));
        assert_eq!(decode_payload(br#"[1]"#).unwrap_err(), FrameError::NotObject("top level is not an object".into()));
        assert_eq!(decode_payload(br#"{"type":3}"#).unwrap_err(), FrameError::MissingType);
    }
}
