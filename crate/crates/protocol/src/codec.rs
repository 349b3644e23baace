//! Frames are a 4-byte big-endian body length followed by a UTF-8 JSON body.
//! Websocket text frames carry the same body without the prefix.

use bytes::{Buf, BufMut, BytesMut};
use thiserror::Error;
use tokio_util::codec::{Decoder, Encoder, LengthDelimitedCodec};

use crate::message::Message;

/// Largest accepted body, bytes.
pub const MAX_FRAME_LEN: usize = 1 << 20;
const PREFIX: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    /// The body is valid JSON but names a type outside the schema.
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("message cannot be encoded: {0}")]
    Unencodable(String),
}

impl CodecError {
    fn malformed(msg: impl Into<String>) -> Self {
        CodecError::MalformedFrame(msg.into())
    }
}

/// Serializes the JSON body. JSON has no form for non-finite numbers
/// (serde_json writes `null`), so a body is only accepted if it reads back
/// as the same message.
pub fn encode_body(msg: &Message) -> Result<String, CodecError> {
    let body = serde_json::to_string(msg).map_err(|e| CodecError::Unencodable(e.to_string()))?;
    match serde_json::from_str::<Message>(&body) {
        Ok(back) if back == *msg => Ok(body),
        _ => Err(CodecError::Unencodable("message contains a non-finite number".into())),
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, CodecError> {
    let body = encode_body(msg)?;
    if body.len() > MAX_FRAME_LEN {
        return Err(CodecError::Unencodable(format!("body of {} bytes exceeds {MAX_FRAME_LEN}", body.len())));
    }
    let mut out = Vec::with_capacity(PREFIX + body.len());
    out.put_u32(body.len() as u32);
    out.extend_from_slice(body.as_bytes());
    Ok(out)
}

/// Decodes exactly one frame; trailing or missing bytes are malformed.
pub fn decode(frame: &[u8]) -> Result<Message, CodecError> {
    if frame.len() < PREFIX {
        return Err(CodecError::malformed(format!("{} bytes is shorter than the length prefix", frame.len())));
    }
    let mut prefix = &frame[..PREFIX];
    let len = prefix.get_u32() as usize;
    if len > MAX_FRAME_LEN {
        return Err(CodecError::malformed(format!("declared length {len} exceeds {MAX_FRAME_LEN}")));
    }
    let body = &frame[PREFIX..];
    if body.len() != len {
        return Err(CodecError::malformed(format!("declared length {len}, got {} body bytes", body.len())));
    }
    decode_body(body)
}

pub fn decode_body(body: &[u8]) -> Result<Message, CodecError> {
    let text = std::str::from_utf8(body).map_err(|e| CodecError::malformed(format!("body is not UTF-8: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CodecError::malformed(format!("invalid JSON: {e}")))?;
    let ty = match value.get("type") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(_) => return Err(CodecError::malformed("`type` is not a string")),
        None => return Err(CodecError::malformed("missing `type`")),
    };
    if !Message::TYPE_NAMES.contains(&ty.as_str()) {
        return Err(CodecError::UnknownType(ty));
    }
    // Parse from the text, not the Value, so floats keep every bit.
    serde_json::from_str(text).map_err(|e| CodecError::malformed(format!("{ty}: {e}")))
}

/// Joint arrays of `msg` must all have length `n`.
pub fn check_arity(msg: &Message, n: usize) -> Result<(), CodecError> {
    for arr in msg.joint_arrays() {
        if arr.len() != n {
            return Err(CodecError::malformed(format!(
                "{} carries {} joint values, expected {n}",
                msg.type_name(),
                arr.len()
            )));
        }
    }
    Ok(())
}

/// Stream codec for TCP connections. Framing errors poison the stream
/// (the boundary of the next frame is unknown); body errors do not.
#[derive(Debug)]
pub struct FrameCodec {
    inner: LengthDelimitedCodec,
}

impl Default for FrameCodec {
    fn default() -> Self {
        Self {
            inner: LengthDelimitedCodec::builder()
                .big_endian()
                .length_field_length(PREFIX)
                .max_frame_length(MAX_FRAME_LEN)
                .new_codec(),
        }
    }
}

/// One item read from a stream: a message or a recoverable body error.
pub type Inbound = Result<Message, CodecError>;

impl Decoder for FrameCodec {
    type Item = Inbound;
    type Error = std::io::Error;

    fn decode(&mut self, src: &mut BytesMut) -> Result<Option<Inbound>, std::io::Error> {
        Ok(self.inner.decode(src)?.map(|body| decode_body(&body)))
    }

    fn decode_eof(&mut self, src: &mut BytesMut) -> Result<Option<Inbound>, std::io::Error> {
        Ok(self.inner.decode_eof(src)?.map(|body| decode_body(&body)))
    }
}

impl Encoder<&Message> for FrameCodec {
    type Error = std::io::Error;

    fn encode(&mut self, msg: &Message, dst: &mut BytesMut) -> Result<(), std::io::Error> {
        let body = encode_body(msg).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
        self.inner.encode(bytes::Bytes::from(body.into_bytes()), dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heartbeat_frame_layout() {
        let frame = encode(&Message::Heartbeat { t: 1.5 }).unwrap();
        let body = br#"{"type":"Heartbeat","t":1.5}"#;
        assert_eq!(&frame[..4], &(body.len() as u32).to_be_bytes());
        assert_eq!(&frame[4..], body);
        assert_eq!(decode(&frame).unwrap(), Message::Heartbeat { t: 1.5 });
    }

    #[test]
    fn truncated_and_overlong() {
        let frame = encode(&Message::Heartbeat { t: 2.0 }).unwrap();
        for cut in 0..frame.len() {
            assert!(matches!(decode(&frame[..cut]), Err(CodecError::MalformedFrame(_))), "cut {cut}");
        }
        let mut extra = frame.clone();
        extra.push(b' ');
        assert!(matches!(decode(&extra), Err(CodecError::MalformedFrame(_))));
        let mut huge = vec![0xff, 0xff, 0xff, 0xff];
        huge.extend_from_slice(b"{}");
        assert!(matches!(decode(&huge), Err(CodecError::MalformedFrame(_))));
    }

    #[test]
    fn unknown_type_is_distinguished() {
        assert_eq!(decode_body(br#"{"type":"Teleport","t":0}"#), Err(CodecError::UnknownType("Teleport".into())));
        assert!(matches!(decode_body(br#"{"type":"Heartbeat"}"#), Err(CodecError::MalformedFrame(_))));
        assert!(matches!(decode_body(br#"{"t":1}"#), Err(CodecError::MalformedFrame(_))));
        assert!(matches!(decode_body(b"not json"), Err(CodecError::MalformedFrame(_))));
    }

    #[test]
    fn non_finite_is_unencodable() {
        let m = Message::LeaderJointState { t: 0.0, q: vec![f64::NAN], trigger: 0.0 };
        assert!(matches!(encode(&m), Err(CodecError::Unencodable(_))));
    }

    #[test]
    fn arity() {
        let m = Message::LeaderJointState { t: 0.0, q: vec![0.0; 5], trigger: 0.0 };
        assert!(check_arity(&m, 5).is_ok());
        assert!(matches!(check_arity(&m, 6), Err(CodecError::MalformedFrame(_))));
    }

    #[test]
    fn stream_codec_matches_frame_encoding() {
        let msgs = [Message::Heartbeat { t: 0.25 }, Message::Abort { t: 1.0 }];
        let mut buf = BytesMut::new();
        for m in &msgs {
            buf.extend_from_slice(&encode(m).unwrap());
        }
        let mut codec = FrameCodec::default();
        let mut got = Vec::new();
        // Feed one byte at a time.
        let mut src = BytesMut::new();
        for b in buf.iter() {
            src.put_u8(*b);
            if let Some(item) = codec.decode(&mut src).unwrap() {
                got.push(item.unwrap());
            }
        }
        assert_eq!(got, msgs);
    }
}
