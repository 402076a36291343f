//! Versioned plain-text dataset files.
//!
//! ```text
//! csilab-dataset 1
//! kind static
//! meta seed 42
//! meta feature_dim 100
//! field features real 100
//! field target index 1
//! field h_target complex 20
//! records 2
//! <one line per record: fields in declared order, complex values as re im>
//! ```

use std::io::{BufRead, Write};

use csilab_core::scene::Point;
use csilab_core::tasks::{ApsDataset, ApsRecord, SequenceDataset, SequenceRecord, StaticDataset, StaticRecord};
use num_complex::Complex64;

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &str = "csilab-dataset";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("corrupt dataset at line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("schema mismatch: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Real,
    Complex,
    Index,
}

impl FieldKind {
    fn name(&self) -> &'static str {
        match self {
            Self::Real => "real",
            Self::Complex => "complex",
            Self::Index => "index",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(Self::Real),
            "complex" => Some(Self::Complex),
            "index" => Some(Self::Index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
    Index(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub kind: String,
    /// Ordered key/value metadata (seed, config hash, dimensions).
    pub meta: Vec<(String, String)>,
    pub fields: Vec<FieldSpec>,
    pub records: Vec<Vec<FieldData>>,
}

fn spec(name: &str, kind: FieldKind, len: usize) -> FieldSpec {
    FieldSpec {
        name: name.into(),
        kind,
        len,
    }
}

impl DatasetFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, DatasetError> {
        self.meta(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DatasetError::Schema(format!("missing or invalid metadata `{key}`")))
    }

    fn expect_kind(&self, kind: &str) -> Result<(), DatasetError> {
        if self.kind != kind {
            return Err(DatasetError::Schema(format!("expected a {kind} dataset, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), DatasetError> {
        writeln!(w, "{MAGIC} {DATASET_VERSION}")?;
        writeln!(w, "kind {}", self.kind)?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} {v}")?;
        }
        for f in &self.fields {
            writeln!(w, "field {} {} {}", f.name, f.kind.name(), f.len)?;
        }
        writeln!(w, "records {}", self.records.len())?;
        let mut line = String::new();
        for rec in &self.records {
            line.clear();
            for (spec, data) in self.fields.iter().zip(rec) {
                match data {
                    FieldData::Real(v) => v.iter().for_each(|x| push(&mut line, &format!("{x:?}"))),
                    FieldData::Complex(v) => v.iter().for_each(|c| {
                        push(&mut line, &format!("{:?}", c.re));
                        push(&mut line, &format!("{:?}", c.im));
                    }),
                    FieldData::Index(v) => v.iter().for_each(|i| push(&mut line, &i.to_string())),
                }
                debug_assert_eq!(spec.kind, data.kind());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self, DatasetError> {
        let mut lines = r.lines();
        let mut n = 0usize;
        let mut next = |n: &mut usize| -> Result<String, DatasetError> {
            *n += 1;
            match lines.next() {
                Some(l) => Ok(l?),
                None => Err(DatasetError::Corrupt {
                    line: *n,
                    msg: "unexpected end of file".into(),
                }),
            }
        };
        let corrupt = |line: usize, msg: String| DatasetError::Corrupt { line, msg };

        let head = next(&mut n)?;
        let version = match head.split_once(' ') {
            Some((MAGIC, v)) => v.parse::<u32>().map_err(|_| corrupt(n, format!("bad version `{v}`")))?,
            _ => return Err(corrupt(n, "not a dataset file".into())),
        };
        if version != DATASET_VERSION {
            return Err(DatasetError::Version(version));
        }
        let kind = match next(&mut n)?.split_once(' ') {
            Some(("kind", k)) => k.to_string(),
            _ => return Err(corrupt(n, "expected `kind`".into())),
        };
        let mut meta = Vec::new();
        let mut fields = Vec::new();
        let count = loop {
            let l = next(&mut n)?;
            let mut parts = l.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => meta.push((k.to_string(), v.unwrap_or("").to_string())),
                (Some("field"), Some(name), Some(rest)) => {
                    let (kind, len) = rest.split_once(' ').ok_or_else(|| corrupt(n, "bad field line".into()))?;
                    let kind = FieldKind::parse(kind).ok_or_else(|| corrupt(n, format!("unknown field kind `{kind}`")))?;
                    let len = len.parse().map_err(|_| corrupt(n, format!("bad field length `{len}`")))?;
                    fields.push(spec(name, kind, len));
                }
                (Some("records"), Some(c), None) => break c.parse::<usize>().map_err(|_| corrupt(n, format!("bad count `{c}`")))?,
                _ => return Err(corrupt(n, format!("unexpected header line `{l}`"))),
            }
        };
        let width: usize = fields
            .iter()
            .map(|f| if f.kind == FieldKind::Complex { 2 * f.len } else { f.len })
            .sum();
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next(&mut n)?;
            let toks: Vec<&str> = l.split_ascii_whitespace().collect();
            if toks.len() != width {
                return Err(corrupt(n, format!("expected {width} values, found {}", toks.len())));
            }
            let real = |t: &str| t.parse::<f64>().map_err(|_| corrupt(n, format!("bad number `{t}`")));
            let mut at = 0;
            let mut rec = Vec::with_capacity(fields.len());
            for f in &fields {
                let data = match f.kind {
                    FieldKind::Real => FieldData::Real(toks[at..at + f.len].iter().map(|t| real(t)).collect::<Result<_, _>>()?),
                    FieldKind::Complex => FieldData::Complex(
                        toks[at..at + 2 * f.len]
                            .chunks(2)
                            .map(|p| Ok(Complex64::new(real(p[0])?, real(p[1])?)))
                            .collect::<Result<_, DatasetError>>()?,
                    ),
                    FieldKind::Index => FieldData::Index(
                        toks[at..at + f.len]
                            .iter()
                            .map(|t| t.parse().map_err(|_| corrupt(n, format!("bad index `{t}`"))))
                            .collect::<Result<_, _>>()?,
                    ),
                };
                at += if f.kind == FieldKind::Complex { 2 * f.len } else { f.len };
                rec.push(data);
            }
            records.push(rec);
        }
        if let Some(Ok(extra)) = lines.next() {
            if !extra.trim().is_empty() {
                return Err(corrupt(n + 1, format!("more than {count} records")));
            }
        }
        Ok(Self {
            kind,
            meta,
            fields,
            records,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }
}

fn push(line: &mut String, tok: &str) {
    if !line.is_empty() {
        line.push(' ');
    }
    line.push_str(tok);
}

impl FieldData {
    fn kind(&self) -> FieldKind {
        match self {
            Self::Real(_) => FieldKind::Real,
            Self::Complex(_) => FieldKind::Complex,
            Self::Index(_) => FieldKind::Index,
        }
    }

    fn real(&self) -> &[f64] {
        match self {
            Self::Real(v) => v,
            _ => unreachable!("schema checked"),
        }
    }

    fn complex(&self) -> &[Complex64] {
        match self {
            Self::Complex(v) => v,
            _ => unreachable!("schema checked"),
        }
    }

    fn index(&self) -> &[usize] {
        match self {
            Self::Index(v) => v,
            _ => unreachable!("schema checked"),
        }
    }
}

fn check_fields(file: &DatasetFile, expected: &[FieldSpec]) -> Result<(), DatasetError> {
    if file.fields != expected {
        return Err(DatasetError::Schema(format!(
            "fields {:?} do not match the {} schema",
            file.fields.iter().map(|f| &f.name).collect::<Vec<_>>(),
            file.kind
        )));
    }
    Ok(())
}

fn base_meta(seed: u64, extra: &[(&str, String)], header: &[(String, String)]) -> Vec<(String, String)> {
    let mut m: Vec<(String, String)> = header.to_vec();
    m.push(("seed".into(), seed.to_string()));
    m.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    m
}

// Channel length is stored separately from the class count because the
// codebook may be oversampled.
fn static_fields(feature_dim: usize, elements: usize) -> Vec<FieldSpec> {
    vec![
        spec("features", FieldKind::Real, feature_dim),
        spec("target", FieldKind::Index, 1),
        spec("h_target", FieldKind::Complex, elements),
        spec("user_position", FieldKind::Real, 2),
    ]
}

/// Static dataset with `header` metadata (config hash) placed first.
pub fn static_to_file(d: &StaticDataset, header: &[(String, String)]) -> DatasetFile {
    let m = d.records.first().map_or(0, |r| r.h_target.len());
    DatasetFile {
        kind: "static".into(),
        meta: base_meta(
            d.seed,
            &[("feature_dim", d.feature_dim.to_string()), ("num_classes", d.num_classes.to_string()), ("elements", m.to_string())],
            header,
        ),
        fields: static_fields(d.feature_dim, m),
        records: d
            .records
            .iter()
            .map(|r| {
                vec![
                    FieldData::Real(r.features.clone()),
                    FieldData::Index(vec![r.target]),
                    FieldData::Complex(r.h_target.clone()),
                    FieldData::Real(vec![r.user_position.x, r.user_position.y]),
                ]
            })
            .collect(),
    }
}

pub fn static_from_file(f: &DatasetFile) -> Result<StaticDataset, DatasetError> {
    f.expect_kind("static")?;
    let feature_dim: usize = f.meta_parse("feature_dim")?;
    let num_classes: usize = f.meta_parse("num_classes")?;
    check_fields(f, &static_fields(feature_dim, f.meta_parse("elements")?))?;
    let records = f
        .records
        .iter()
        .map(|r| {
            let p = r[3].real();
            StaticRecord {
                features: r[0].real().to_vec(),
                target: r[1].index()[0],
                h_target: r[2].complex().to_vec(),
                user_position: Point::new(p[0], p[1]),
            }
        })
        .collect();
    Ok(StaticDataset {
        records,
        feature_dim,
        num_classes,
        seed: f.meta_parse("seed")?,
    })
}

pub fn aps_to_file(d: &ApsDataset, header: &[(String, String)]) -> DatasetFile {
    DatasetFile {
        kind: "aps".into(),
        meta: base_meta(
            d.seed,
            &[("source_grid", d.source_grid.to_string()), ("target_grid", d.target_grid.to_string())],
            header,
        ),
        fields: vec![spec("source", FieldKind::Real, d.source_grid), spec("target", FieldKind::Real, d.target_grid)],
        records: d
            .records
            .iter()
            .map(|r| vec![FieldData::Real(r.source.clone()), FieldData::Real(r.target.clone())])
            .collect(),
    }
}

pub fn aps_from_file(f: &DatasetFile) -> Result<ApsDataset, DatasetError> {
    f.expect_kind("aps")?;
    let (gs, gt): (usize, usize) = (f.meta_parse("source_grid")?, f.meta_parse("target_grid")?);
    check_fields(f, &[spec("source", FieldKind::Real, gs), spec("target", FieldKind::Real, gt)])?;
    Ok(ApsDataset {
        records: f
            .records
            .iter()
            .map(|r| ApsRecord {
                source: r[0].real().to_vec(),
                target: r[1].real().to_vec(),
            })
            .collect(),
        source_grid: gs,
        target_grid: gt,
        seed: f.meta_parse("seed")?,
    })
}

fn sequence_fields(d_in: usize, len: usize, horizon: usize, m: usize) -> Vec<FieldSpec> {
    vec![
        spec("trajectory", FieldKind::Index, 1),
        spec("window", FieldKind::Index, 1),
        spec("delay", FieldKind::Index, 1),
        spec("current_target", FieldKind::Index, 1),
        spec("future_targets", FieldKind::Index, horizon),
        spec("last_position", FieldKind::Real, 2),
        spec("inputs", FieldKind::Real, len * d_in),
        spec("future_channels", FieldKind::Complex, horizon * m),
    ]
}

pub fn sequence_to_file(d: &SequenceDataset, header: &[(String, String)]) -> DatasetFile {
    let m = d.records.first().and_then(|r| r.future_channels.first()).map_or(0, |h| h.len());
    DatasetFile {
        kind: "sequence".into(),
        meta: base_meta(
            d.seed,
            &[
                ("input_len", d.input_len.to_string()),
                ("output_len", d.output_len.to_string()),
                ("horizon", d.horizon.to_string()),
                ("feature_dim", d.feature_dim.to_string()),
                ("num_classes", d.num_classes.to_string()),
                ("elements", m.to_string()),
            ],
            header,
        ),
        fields: sequence_fields(d.feature_dim, d.input_len, d.horizon, m),
        records: d
            .records
            .iter()
            .map(|r| {
                vec![
                    FieldData::Index(vec![r.trajectory]),
                    FieldData::Index(vec![r.window]),
                    FieldData::Index(vec![r.delay]),
                    FieldData::Index(vec![r.current_target]),
                    FieldData::Index(r.future_targets.clone()),
                    FieldData::Real(vec![r.last_position.x, r.last_position.y]),
                    FieldData::Real(r.inputs.concat()),
                    FieldData::Complex(r.future_channels.concat()),
                ]
            })
            .collect(),
    }
}

pub fn sequence_from_file(f: &DatasetFile) -> Result<SequenceDataset, DatasetError> {
    f.expect_kind("sequence")?;
    let input_len: usize = f.meta_parse("input_len")?;
    let horizon: usize = f.meta_parse("horizon")?;
    let feature_dim: usize = f.meta_parse("feature_dim")?;
    let m: usize = f.meta_parse("elements")?;
    check_fields(f, &sequence_fields(feature_dim, input_len, horizon, m))?;
    if feature_dim == 0 || m == 0 {
        return Err(DatasetError::Schema("zero-width sequence fields".into()));
    }
    let records = f
        .records
        .iter()
        .map(|r| {
            let p = r[5].real();
            SequenceRecord {
                trajectory: r[0].index()[0],
                window: r[1].index()[0],
                delay: r[2].index()[0],
                current_target: r[3].index()[0],
                future_targets: r[4].index().to_vec(),
                last_position: Point::new(p[0], p[1]),
                inputs: r[6].real().chunks(feature_dim).map(|c| c.to_vec()).collect(),
                future_channels: r[7].complex().chunks(m).map(|c| c.to_vec()).collect(),
            }
        })
        .collect();
    Ok(SequenceDataset {
        records,
        input_len,
        output_len: f.meta_parse("output_len")?,
        horizon,
        feature_dim,
        num_classes: f.meta_parse("num_classes")?,
        seed: f.meta_parse("seed")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use csilab_core::tasks::{build_static_dataset, LinkConfig};

    fn small() -> DatasetFile {
        let d = build_static_dataset(&LinkConfig::default(), 4, 3).unwrap();
        static_to_file(&d, &[("config_hash".into(), "abc".into())])
    }

    #[test]
    fn test_write_read_write_identical() {
        let f = small();
        let bytes = f.to_bytes();
        let back = DatasetFile::read(bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta("config_hash"), Some("abc"));
    }

    #[test]
    fn test_static_conversion_round_trip() {
        let d = build_static_dataset(&LinkConfig::default(), 5, 8).unwrap();
        let back = static_from_file(&DatasetFile::read(static_to_file(&d, &[]).to_bytes().as_slice()).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn test_truncated_file_is_corruption() {
        let bytes = small().to_bytes();
        let cut = &bytes[..bytes.len() - 40];
        assert!(matches!(DatasetFile::read(cut), Err(DatasetError::Corrupt { .. })));
        let text = String::from_utf8(bytes.clone()).unwrap();
        let fewer: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
        assert!(matches!(DatasetFile::read(fewer.join("\n").as_bytes()), Err(DatasetError::Corrupt { .. })));
    }

    #[test]
    fn test_version_mismatch_is_explicit() {
        let text = String::from_utf8(small().to_bytes()).unwrap().replacen("csilab-dataset 1", "csilab-dataset 2", 1);
        assert!(matches!(DatasetFile::read(text.as_bytes()), Err(DatasetError::Version(2))));
    }

    #[test]
    fn test_wrong_kind_is_schema_error() {
        assert!(matches!(aps_from_file(&small()), Err(DatasetError::Schema(_))));
    }
}
