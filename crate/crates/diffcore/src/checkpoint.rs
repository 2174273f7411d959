//! `DFC1` checkpoint files.
//!
//! Layout: a UTF-8 header terminated by a line `end`, followed by the raw
//! tensor payload as little-endian `f64`.
//!
//! ```text
//! DFC1
//! meta <key> <value>
//! param <name> <d0,d1,...> <byte offset>
//! end
//! <payload>
//! ```
//!
//! Scalars (empty shape) are written with the shape token `-`.

use std::io::{BufRead, Read, Write};

use crate::error::{DiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &str = "DFC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut header = String::from(MAGIC);
        header.push('\n');
        for (k, v) in &self.meta {
            check_token(k)?;
            if v.contains('\n') {
                return Err(DiffError::Checkpoint(format!("meta value for {k} contains a newline")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            check_token(name)?;
            let shape = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            };
            header.push_str(&format!("param {name} {shape} {offset}\n"));
            offset += t.numel() * 8;
        }
        header.push_str("end\n");
        w.write_all(header.as_bytes())?;
        for (_, t) in &self.tensors {
            for v in t.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(DiffError::Checkpoint(format!("bad magic {:?}", line.trim_end())));
        }
        let mut meta = Vec::new();
        let mut entries = Vec::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(DiffError::Checkpoint("header not terminated".into()));
            }
            let l = line.trim_end_matches('\n');
            if l == "end" {
                break;
            }
            let mut parts = l.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.push((k.to_string(), v.to_string()));
                }
                (Some("param"), Some(rest)) => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 3 {
                        return Err(DiffError::Checkpoint(format!("bad param line {l:?}")));
                    }
                    let shape: Vec<usize> = if f[1] == "-" {
                        vec![]
                    } else {
                        f[1].split(',')
                            .map(|d| d.parse().map_err(|_| DiffError::Checkpoint(format!("bad shape in {l:?}"))))
                            .collect::<Result<_>>()?
                    };
                    let offset: usize = f[2]
                        .parse()
                        .map_err(|_| DiffError::Checkpoint(format!("bad offset in {l:?}")))?;
                    entries.push((f[0].to_string(), shape, offset));
                }
                _ => return Err(DiffError::Checkpoint(format!("unrecognised header line {l:?}"))),
            }
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let end = offset + n * 8;
            let bytes = payload
                .get(offset..end)
                .ok_or_else(|| DiffError::Checkpoint(format!("payload too short for {name}")))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { meta, tensors })
    }
}

fn check_token(s: &str) -> Result<()> {
    if s.is_empty() || s.contains(char::is_whitespace) {
        return Err(DiffError::Checkpoint(format!("name {s:?} must be a non-empty token")));
    }
    Ok(())
}
