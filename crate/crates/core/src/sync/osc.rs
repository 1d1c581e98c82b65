//! OSC 1.0 message codec. Bundles and timetags are not supported.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OscError {
    #[error("address {0:?} must start with '/' and contain no NUL")]
    Address(String),
    #[error("string argument contains NUL")]
    NulInString,
    #[error("empty packet")]
    Empty,
    #[error("packet length {0} is not a multiple of 4")]
    Alignment(usize),
    #[error("truncated packet: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("unterminated string at offset {0}")]
    Unterminated(usize),
    #[error("non-zero padding at offset {0}")]
    Padding(usize),
    #[error("string at offset {0} is not UTF-8")]
    Utf8(usize),
    #[error("missing type tag string")]
    MissingTypeTags,
    #[error("unsupported type tag {0:?}")]
    TypeTag(char),
    #[error("bundles are not supported")]
    Bundle,
    #[error("{0} trailing bytes after arguments")]
    Trailing(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    String(String),
}

impl OscArg {
    fn tag(&self) -> u8 {
        match self {
            OscArg::Int(_) => b'i',
            OscArg::Float(_) => b'f',
            OscArg::String(_) => b's',
        }
    }

    pub fn as_int(&self) -> Option<i32> {
        match *self {
            OscArg::Int(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Self {
        OscMessage {
            address: address.into(),
            args,
        }
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        let args: usize = self
            .args
            .iter()
            .map(|a| match a {
                OscArg::String(s) => padded(s.len() + 1),
                _ => 4,
            })
            .sum();
        padded(self.address.len() + 1) + padded(self.args.len() + 2) + args
    }
}

fn padded(n: usize) -> usize {
    (n + 3) & !3
}

fn put_str(out: &mut Vec<u8>, s: &[u8]) {
    out.extend_from_slice(s);
    out.push(0);
    while out.len() % 4 != 0 {
        out.push(0);
    }
}

pub fn encode(msg: &OscMessage) -> Result<Vec<u8>, OscError> {
    if !msg.address.starts_with('/') || msg.address.contains('\0') {
        return Err(OscError::Address(msg.address.clone()));
    }
    let mut out = Vec::with_capacity(msg.encoded_len());
    put_str(&mut out, msg.address.as_bytes());
    let mut tags = Vec::with_capacity(msg.args.len() + 1);
    tags.push(b',');
    tags.extend(msg.args.iter().map(OscArg::tag));
    put_str(&mut out, &tags);
    for arg in &msg.args {
        match arg {
            OscArg::Int(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => out.extend_from_slice(&v.to_bits().to_be_bytes()),
            OscArg::String(s) => {
                if s.contains('\0') {
                    return Err(OscError::NulInString);
                }
                put_str(&mut out, s.as_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn str(&mut self) -> Result<&'a str, OscError> {
        let start = self.pos;
        let rest = &self.buf[start..];
        let nul = rest.iter().position(|&b| b == 0).ok_or(OscError::Unterminated(start))?;
        let end = start + padded(nul + 1);
        if end > self.buf.len() {
            return Err(OscError::Truncated {
                offset: start,
                needed: end - start,
            });
        }
        if let Some(i) = self.buf[start + nul..end].iter().position(|&b| b != 0) {
            return Err(OscError::Padding(start + nul + i));
        }
        self.pos = end;
        std::str::from_utf8(&rest[..nul]).map_err(|_| OscError::Utf8(start))
    }

    fn word(&mut self) -> Result<[u8; 4], OscError> {
        let bytes = self.buf.get(self.pos..self.pos + 4).ok_or(OscError::Truncated {
            offset: self.pos,
            needed: 4,
        })?;
        self.pos += 4;
        Ok(bytes.try_into().expect("four bytes"))
    }
}

pub fn decode(buf: &[u8]) -> Result<OscMessage, OscError> {
    if buf.is_empty() {
        return Err(OscError::Empty);
    }
    if buf.len() % 4 != 0 {
        return Err(OscError::Alignment(buf.len()));
    }
    if buf.starts_with(b"#bundle\0") {
        return Err(OscError::Bundle);
    }
    let mut r = Reader { buf, pos: 0 };
    let address = r.str()?;
    if !address.starts_with('/') {
        return Err(OscError::Address(address.to_string()));
    }
    if r.pos == buf.len() || buf[r.pos] != b',' {
        return Err(OscError::MissingTypeTags);
    }
    let tags = r.str()?;
    let mut args = Vec::with_capacity(tags.len() - 1);
    for tag in tags.chars().skip(1) {
        let arg = match tag {
            'i' => OscArg::Int(i32::from_be_bytes(r.word()?)),
            'f' => OscArg::Float(f32::from_bits(u32::from_be_bytes(r.word()?))),
            's' => OscArg::String(r.str()?.to_string()),
            other => return Err(OscError::TypeTag(other)),
        };
        args.push(arg);
    }
    if r.pos != buf.len() {
        return Err(OscError::Trailing(buf.len() - r.pos));
    }
    Ok(OscMessage {
        address: address.to_string(),
        args,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_int_layout() {
        let bytes = encode(&OscMessage::new("/a", vec![OscArg::Int(1)])).unwrap();
        assert_eq!(bytes, b"/a\0\0,i\0\0\0\0\0\x01");
    }

    #[test]
    fn lengths_follow_padding() {
        let m = OscMessage::new("/ensemble/context", vec![OscArg::Int(2), OscArg::Int(0), OscArg::Int(120)]);
        assert_eq!(m.encoded_len(), 40);
        assert_eq!(encode(&m).unwrap().len(), 40);
        let m = OscMessage::new("/abc", vec![OscArg::String("xyz".into())]);
        // "/abc" + NUL pads to 8; ",s" to 4; "xyz" + NUL is exactly 4
        assert_eq!(encode(&m).unwrap().len(), 16);
    }

    #[test]
    fn encode_rejects_bad_input() {
        assert!(matches!(encode(&OscMessage::new("a", vec![])), Err(OscError::Address(_))));
        assert_eq!(
            encode(&OscMessage::new("/a", vec![OscArg::String("x\0y".into())])),
            Err(OscError::NulInString)
        );
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode(&[]), Err(OscError::Empty));
        assert_eq!(decode(b"/a\0"), Err(OscError::Alignment(3)));
        assert_eq!(decode(b"/a\0\0"), Err(OscError::MissingTypeTags));
        assert_eq!(decode(b"/a\0\0,i\0\0"), Err(OscError::Truncated { offset: 8, needed: 4 }));
        assert_eq!(decode(b"/a\0x,i\0\0\0\0\0\x01"), Err(OscError::Padding(3)));
        assert_eq!(decode(b"/a\0\0,b\0\0"), Err(OscError::TypeTag('b')));
        assert_eq!(decode(b"/abc"), Err(OscError::Unterminated(0)));
        assert_eq!(decode(b"#bundle\0\0\0\0\0\0\0\0\x01"), Err(OscError::Bundle));
        assert_eq!(decode(b"/a\0\0,\0\0\0\0\0\0\0"), Err(OscError::Trailing(4)));
    }

    #[test]
    fn round_trip_mixed() {
        let m = OscMessage::new(
            "/x/y",
            vec![OscArg::Int(-5), OscArg::Float(0.25), OscArg::String("hello".into())],
        );
        assert_eq!(decode(&encode(&m).unwrap()).unwrap(), m);
    }
}
