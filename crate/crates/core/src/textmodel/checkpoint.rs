use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{AdamState, GradientBundle, Head, ScorerParams, Vocabulary};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PRAGCKPT";
const VERSION: u32 = 1;

/// Parameters plus optional optimizer state, serialized bit-exactly.
///
/// Layout (little endian): magic, version, label, dim, vocabulary tokens,
/// embedding table, optional head, optional Adam state, then a SHA-256 of
/// everything before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub label: String,
    pub params: ScorerParams,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.label);
        let p = &self.params;
        out.extend_from_slice(&(p.dim() as u32).to_le_bytes());
        let tokens = p.vocab().tokens();
        out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
        for t in tokens {
            put_str(&mut out, t);
        }
        put_f64s(&mut out, p.embeddings());
        put_head(&mut out, p.head());
        match &self.optimizer {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.step.to_le_bytes());
                for b in [&s.m, &s.v] {
                    put_f64s(&mut out, &b.embeddings);
                    put_head(&mut out, b.head.as_ref());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted)".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let label = r.string()?;
        let dim = r.u32()? as usize;
        let n_tokens = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            tokens.push(r.string()?);
        }
        let vocab = Arc::new(Vocabulary::from_tokens(tokens));
        if vocab.len() != n_tokens + 1 {
            return Err(Error::Checkpoint("duplicate vocabulary tokens".into()));
        }
        let embeddings = r.f64s(vocab.len() * dim)?;
        let head = r.head(dim)?;
        let params = ScorerParams::from_parts(vocab, dim, embeddings, head)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut bundles = Vec::with_capacity(2);
                for _ in 0..2 {
                    let embeddings = r.f64s(params.embeddings().len())?;
                    let head = r.head(dim)?;
                    bundles.push(GradientBundle {
                        dim,
                        embeddings,
                        head,
                    });
                }
                let v = bundles.pop().expect("two bundles");
                let m = bundles.pop().expect("two bundles");
                Some(AdamState { step, m, v })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            label,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingCheckpoint(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_head(out: &mut Vec<u8>, head: Option<&Head>) {
    match head {
        None => out.push(0),
        Some(h) => {
            out.push(1);
            put_f64s(out, &h.weights);
            out.extend_from_slice(&h.bias.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }

    fn head(&mut self, dim: usize) -> Result<Option<Head>> {
        match self.u8()? {
            0 => Ok(None),
            1 => {
                let weights = self.f64s(dim)?;
                let bias = self.f64()?;
                Ok(Some(Head { weights, bias }))
            }
            f => Err(Error::Checkpoint(format!("bad head flag {f}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::textmodel::{adam_step, backprop_scores, AdamConfig, ScoreInput};

    fn trained() -> Checkpoint {
        let vocab = Arc::new(Vocabulary::build(["one two three four"]));
        let mut params = ScorerParams::init(vocab, 6, true, &mut substream(9, "init"));
        let mut state = AdamState::new(&params);
        let bag = params.bag("one three");
        let g = backprop_scores(&params, &[ScoreInput::Head(&bag)], &[1.0]).unwrap();
        adam_step(&mut params, &g, &mut state, &AdamConfig::new(0.1, 4)).unwrap();
        adam_step(&mut params, &g, &mut state, &AdamConfig::new(0.1, 4)).unwrap();
        Checkpoint {
            label: "rspg-post".into(),
            params,
            optimizer: Some(state),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ck = trained();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let probe = back.params.head_score("two four").unwrap();
        assert_eq!(probe.to_bits(), ck.params.head_score("two four").unwrap().to_bits());
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ckpt");
        let ck = trained();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn truncated_or_missing_is_error() {
        let bytes = trained().to_bytes();
        let r = Checkpoint::from_bytes(&bytes[..bytes.len() - 5]);
        assert!(matches!(r, Err(Error::Checkpoint(_))));
        let r = Checkpoint::load(Path::new("/nonexistent/model.ckpt"));
        assert!(matches!(r, Err(Error::MissingCheckpoint(_))));
    }
}
