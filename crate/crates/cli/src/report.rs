//! CSV reports. Each file starts with `# config_hash <hex>` and `# seed <n>`
//! comment lines followed by an RFC 4180 table.

use std::path::Path;

use csilab_core::neural::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header_lines(&self) -> String {
        format!("# config_hash {}\n# seed {}\n", self.config_hash, self.seed)
    }

    /// Metadata pairs for dataset files.
    pub fn meta(&self) -> Vec<(String, String)> {
        vec![
            ("config_hash".into(), self.config_hash.clone()),
            ("master_seed".into(), self.seed.to_string()),
        ]
    }
}

/// Renders a table; numbers should already be formatted by the caller.
pub fn csv_bytes(prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = prov.header_lines().into_bytes();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    out.extend(w.into_inner().expect("in-memory flush"));
    out
}

pub fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    std::fs::write(path, csv_bytes(prov, header, rows))
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Reads a report back as (header, rows), skipping comment lines.
pub fn read_csv(bytes: &[u8]) -> Result<(Vec<String>, Vec<Vec<String>>), csv::Error> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

pub fn save_model(path: &Path, ckpt: &Checkpoint, prov: &Provenance) -> Result<(), CheckpointError> {
    let mut buf = prov.header_lines().into_bytes();
    write_checkpoint(ckpt, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Loads a checkpoint, ignoring leading `#` provenance lines.
pub fn load_model(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text.lines().skip_while(|l| l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    read_checkpoint(body.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use csilab_core::neural::{mlp_forward, Head, MlpModel};

    fn prov() -> Provenance {
        Provenance {
            config_hash: "ff00".into(),
            seed: 5,
        }
    }

    #[test]
    fn test_csv_quotes_and_reads_back() {
        let rows = vec![vec!["a,b".to_string(), num(0.1)], vec!["plain".into(), num(-2.5e-9)]];
        let bytes = csv_bytes(&prov(), &["name", "value"], &rows);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("# config_hash ff00\n# seed 5\nname,value\n\"a,b\",0.1\n"));
        let (h, r) = read_csv(&bytes).unwrap();
        assert_eq!(h, vec!["name", "value"]);
        assert_eq!(r, rows);
        assert_eq!(r[1][1].parse::<f64>().unwrap(), -2.5e-9);
    }

    #[test]
    fn test_model_round_trip_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = MlpModel::new(&[6, 8, 3], Head::Softmax, 4).unwrap();
        save_model(&path, &Checkpoint::Mlp(m.clone()), &prov()).unwrap();
        let Checkpoint::Mlp(back) = load_model(&path).unwrap() else { panic!("wrong arch") };
        let x = [0.3, -1.0, 2.0, 0.0, 0.5, 1.5];
        let (a, b) = (mlp_forward(&m, &x).unwrap(), mlp_forward(&back, &x).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash ff00\n# seed 5\ncsilab-model 1\n"));
    }
}
