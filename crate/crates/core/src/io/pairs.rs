use std::collections::BTreeSet;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::training::PairSample;

pub fn parse_pairs(path: &Path) -> Result<Vec<PairSample>> {
    parse_pairs_str(&super::read_text(path)?, path)
}

pub fn parse_pairs_str(text: &str, origin: &Path) -> Result<Vec<PairSample>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut duplicates = 0usize;
    for (line, l) in super::data_lines(text) {
        let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::format(
                origin,
                format!("line {line}: expected id_a<TAB>id_b<TAB>label"),
            ));
        }
        let label = match fields[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::format(
                    origin,
                    format!("line {line}: label {other:?} is not 0 or 1"),
                ))
            }
        };
        let pair = PairSample::new(fields[0], fields[1], label);
        if !seen.insert(pair.clone()) {
            duplicates += 1;
        }
        out.push(pair);
    }
    if duplicates > 0 {
        warn!("{}: {duplicates} duplicate pair line(s)", origin.display());
    }
    Ok(out)
}

pub fn format_pairs(pairs: &[PairSample]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.id_a, p.id_b, p.label))
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[PairSample]) -> Result<()> {
    super::write_file(path, format_pairs(pairs).as_bytes())
}
