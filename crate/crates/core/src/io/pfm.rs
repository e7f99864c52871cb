//! Portable float maps: `Pf` (one channel) and `PF` (three channels).

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_file, write_file};
use crate::tensor::Tensor;

/// Encodes a `(1,C,H,W)` or `(C,H,W)` image with `C ∈ {1, 3}` as
/// little-endian PFM (scale `-1.0`), bottom row first.
pub fn encode_pfm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match img.shape() {
        &[1, c, h, w] | &[c, h, w] => (c, h, w),
        s => {
            return Err(Error::InvalidShape {
                op: "encode_pfm",
                shape: s.to_vec(),
                reason: "expected (1,C,H,W) or (C,H,W)".into(),
            })
        }
    };
    let magic = match c {
        1 => "Pf",
        3 => "PF",
        _ => {
            return Err(Error::InvalidShape {
                op: "encode_pfm",
                shape: img.shape().to_vec(),
                reason: "PFM holds 1 or 3 channels".into(),
            })
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(c * h * w * 4);
    let d = img.data();
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                out.extend_from_slice(&d[(ch * h + y) * w + x].to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    fn skip_space(&mut self) {
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return self.fail("unexpected end of header");
        }
        std::str::from_utf8(&self.buf[start..self.pos]).or_else(|_| {
            Err(Error::Format {
                offset: start,
                reason: "header token is not ASCII".into(),
            })
        })
    }
}

/// Decodes a PFM byte stream into `(1,C,H,W)` top row first.
pub fn decode_pfm(buf: &[u8]) -> Result<Tensor<f32>> {
    let mut cur = Cursor { buf, pos: 0 };
    if buf.len() < 2 {
        return cur.fail("missing magic");
    }
    let c = match &buf[..2] {
        b"Pf" => 1,
        b"PF" => 3,
        _ => return cur.fail(format!("magic {:?} is not Pf or PF", String::from_utf8_lossy(&buf[..2]))),
    };
    cur.pos = 2;
    if cur.pos >= buf.len() || !buf[cur.pos].is_ascii_whitespace() {
        return cur.fail("magic not followed by whitespace");
    }
    let dim = |cur: &mut Cursor, what: &str| -> Result<usize> {
        cur.skip_space();
        let at = cur.pos;
        let t = cur.token()?;
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::Format {
                offset: at,
                reason: format!("bad {what} `{t}`"),
            }),
        }
    };
    let w = dim(&mut cur, "width")?;
    let h = dim(&mut cur, "height")?;
    cur.skip_space();
    let at = cur.pos;
    let scale: f64 = match cur.token()?.parse::<f64>() {
        Ok(v) if v != 0.0 && v.is_finite() => v,
        _ => {
            return Err(Error::Format {
                offset: at,
                reason: "bad scale".into(),
            })
        }
    };
    if cur.pos >= buf.len() || !buf[cur.pos].is_ascii_whitespace() {
        return cur.fail("header not terminated");
    }
    cur.pos += 1;
    let little = scale < 0.0;
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(c * 4));
    let Some(need) = need else {
        return cur.fail("dimensions overflow");
    };
    let payload = &buf[cur.pos..];
    if payload.len() < need {
        cur.pos = buf.len();
        return cur.fail(format!("payload truncated: {} of {need} bytes", payload.len()));
    }
    if payload.len() > need {
        cur.pos += need;
        return cur.fail("trailing bytes after payload");
    }
    let mut data = vec![0f32; c * h * w];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (pix, ch) = (i / c, i % c);
        let (row, x) = (pix / w, pix % w);
        let y = h - 1 - row;
        data[(ch * h + y) * w + x] = v;
    }
    Tensor::new(vec![1, c, h, w], data)
}

pub fn save_pfm(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    write_file(path, &encode_pfm(img)?)
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_pfm(&read_file(path)?)
}
