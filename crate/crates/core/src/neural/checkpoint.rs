//! Plain-text model checkpoints.
//!
//! ```text
//! csilab-model 1
//! arch mlp
//! head softmax
//! seed 7
//! dims 100 100 100 100 20
//! tensor 10000
//! 0.0123 -0.5 ...
//! ```
//!
//! Tensors follow [`Trainable::param_slices`] order, row-major. Values use the
//! shortest representation that parses back to the same bits.

use std::io::{BufRead, Write};

use super::{GruSeq2Seq, Head, MlpModel, Trainable};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "csilab-model";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Mlp(MlpModel),
    Gru(GruSeq2Seq),
}

impl Checkpoint {
    fn params(&self) -> Vec<&[f64]> {
        match self {
            Checkpoint::Mlp(m) => m.param_slices(),
            Checkpoint::Gru(m) => m.param_slices(),
        }
    }
}

fn head_name(h: Head) -> &'static str {
    match h {
        Head::Softmax => "softmax",
        Head::LogSpectrum => "log_spectrum",
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, mut w: impl Write) -> Result<(), CheckpointError> {
    writeln!(w, "{MAGIC} {CHECKPOINT_VERSION}")?;
    let (arch, head, seed, dims) = match ckpt {
        Checkpoint::Mlp(m) => ("mlp", m.head, m.seed, m.layer_dims()),
        Checkpoint::Gru(m) => ("gru_seq2seq", m.head, m.seed, vec![m.d_in(), m.hidden(), m.d_out()]),
    };
    writeln!(w, "arch {arch}")?;
    writeln!(w, "head {}", head_name(head))?;
    writeln!(w, "seed {seed}")?;
    let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims {}", dims.join(" "))?;
    for t in ckpt.params() {
        writeln!(w, "tensor {}", t.len())?;
        let vals: Vec<String> = t.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", vals.join(" "))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn err(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Result<String, CheckpointError> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    /// Next line split as `key rest`, checking the key.
    fn field(&mut self, key: &str) -> Result<String, CheckpointError> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(self.err(format!("expected `{key}`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T, CheckpointError> {
        s.parse().map_err(|_| self.err(format!("cannot parse `{s}`")))
    }
}

pub fn read_checkpoint(r: impl BufRead) -> Result<Checkpoint, CheckpointError> {
    let mut lines = Lines {
        inner: r.lines(),
        line: 0,
    };
    let version: u32 = {
        let v = lines.field(MAGIC)?;
        lines.parse(&v)?
    };
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let arch = lines.field("arch")?;
    let head = match lines.field("head")?.as_str() {
        "softmax" => Head::Softmax,
        "log_spectrum" => Head::LogSpectrum,
        other => return Err(lines.err(format!("unknown head `{other}`"))),
    };
    let seed: u64 = {
        let s = lines.field("seed")?;
        lines.parse(&s)?
    };
    let dims: Vec<usize> = {
        let d = lines.field("dims")?;
        d.split_whitespace().map(|t| lines.parse(t)).collect::<Result<_, _>>()?
    };
    let bad_dims = |l: &Lines<_>| l.err(format!("invalid dims {dims:?}"));
    let mut ckpt = match arch.as_str() {
        "mlp" => {
            let mut m = MlpModel::zeros(&dims, head).map_err(|_| bad_dims(&lines))?;
            m.seed = seed;
            Checkpoint::Mlp(m)
        }
        "gru_seq2seq" => {
            if dims.len() != 3 {
                return Err(bad_dims(&lines));
            }
            let mut m = GruSeq2Seq::zeros(dims[0], dims[1], dims[2], head).map_err(|_| bad_dims(&lines))?;
            m.seed = seed;
            Checkpoint::Gru(m)
        }
        other => return Err(lines.err(format!("unknown arch `{other}`"))),
    };
    let mut values = Vec::new();
    let sizes: Vec<usize> = ckpt.params().iter().map(|s| s.len()).collect();
    for size in sizes {
        let n: usize = {
            let s = lines.field("tensor")?;
            lines.parse(&s)?
        };
        if n != size {
            return Err(lines.err(format!("tensor has {n} values, expected {size}")));
        }
        let row = lines.next()?;
        let before = values.len();
        for tok in row.split_whitespace() {
            let v: f64 = lines.parse(tok)?;
            if !v.is_finite() {
                return Err(lines.err("non-finite parameter"));
            }
            values.push(v);
        }
        if values.len() - before != n {
            return Err(lines.err(format!("expected {n} values")));
        }
    }
    match &mut ckpt {
        Checkpoint::Mlp(m) => m.set_params_flat(&values),
        Checkpoint::Gru(m) => m.set_params_flat(&values),
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(c: &Checkpoint) -> Checkpoint {
        let mut buf = Vec::new();
        write_checkpoint(c, &mut buf).unwrap();
        read_checkpoint(buf.as_slice()).unwrap()
    }

    #[test]
    fn test_mlp_round_trip_is_bit_exact() {
        let c = Checkpoint::Mlp(MlpModel::new(&[7, 10, 10, 3], Head::Softmax, 99).unwrap());
        let back = round_trip(&c);
        assert_eq!(back, c);
        let (a, b) = (c.params().concat(), back.params().concat());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn test_gru_round_trip_is_bit_exact() {
        let mut m = GruSeq2Seq::new(3, 4, 5, Head::LogSpectrum, 2).unwrap();
        m.out.b[0] = 1e-300;
        m.out.b[1] = -0.1 + 0.2;
        let c = Checkpoint::Gru(m);
        assert_eq!(round_trip(&c), c);
    }

    #[test]
    fn test_rejects_truncated_and_wrong_version() {
        let c = Checkpoint::Mlp(MlpModel::new(&[2, 2], Head::Softmax, 0).unwrap());
        let mut buf = Vec::new();
        write_checkpoint(&c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_checkpoint(cut.as_bytes()), Err(CheckpointError::Parse { .. })));
        let v2 = text.replacen("csilab-model 1", "csilab-model 2", 1);
        assert!(matches!(read_checkpoint(v2.as_bytes()), Err(CheckpointError::Version(2))));
    }
}
