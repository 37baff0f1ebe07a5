use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::ProteinSequence;

pub const LINE_WIDTH: usize = 60;

pub fn parse_fasta(path: &Path, sanitize: bool) -> Result<Vec<ProteinSequence>> {
    parse_fasta_str(&super::read_text(path)?, path, sanitize)
}

/// Parses FASTA text. `origin` is only used in error messages.
pub fn parse_fasta_str(text: &str, origin: &Path, sanitize: bool) -> Result<Vec<ProteinSequence>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut current: Option<(String, usize, String)> = None;

    let finish = |rec: (String, usize, String), out: &mut Vec<ProteinSequence>| -> Result<()> {
        let (id, line, residues) = rec;
        if residues.is_empty() {
            return Err(Error::format(
                origin,
                format!("line {line}: record {id} has no sequence"),
            ));
        }
        let seq = ProteinSequence::new(id, &residues, sanitize)
            .map_err(|e| Error::format(origin, format!("line {line}: {e}")))?;
        out.push(seq);
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            if let Some(rec) = current.take() {
                finish(rec, &mut out)?;
            }
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::format(
                    origin,
                    format!("line {line_no}: header without an id"),
                ));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::format(
                    origin,
                    format!("line {line_no}: duplicate id {id}"),
                ));
            }
            current = Some((id, line_no, String::new()));
        } else {
            match current.as_mut() {
                Some((_, _, residues)) => residues.push_str(line),
                None => {
                    return Err(Error::format(
                        origin,
                        format!("line {line_no}: sequence data before the first header"),
                    ))
                }
            }
        }
    }
    if let Some(rec) = current.take() {
        finish(rec, &mut out)?;
    }
    Ok(out)
}

pub fn format_fasta(seqs: &[ProteinSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push('>');
        out.push_str(s.id());
        out.push('\n');
        for chunk in s.residues().as_bytes().chunks(LINE_WIDTH) {
            out.push_str(std::str::from_utf8(chunk).expect("ASCII residues"));
            out.push('\n');
        }
    }
    out
}

pub fn write_fasta(path: &Path, seqs: &[ProteinSequence]) -> Result<()> {
    super::write_file(path, format_fasta(seqs).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ProteinSequence>> {
        parse_fasta_str(text, Path::new("t.fa"), false)
    }

    #[test]
    fn two_records_round_trip() {
        let long: String = "ACDEFGHIKLMNPQRSTVWY".repeat(4);
        let text = format!(">a desc\n{}\n{}\n>b\nMKV\n", &long[..60], &long[60..]);
        let seqs = parse(&text).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].residues(), long);
        assert_eq!(format_fasta(&seqs), text.replace(" desc", ""));
        assert_eq!(parse(&format_fasta(&seqs)).unwrap(), seqs);
    }

    #[test]
    fn lowercase_uppercased() {
        assert_eq!(parse(">x\nacd\nef\n").unwrap()[0].residues(), "ACDEF");
    }

    #[test]
    fn duplicate_id_names_id_and_line() {
        let err = parse(">x\nAC\n>y\nAC\n>x\nAC\n").unwrap_err().to_string();
        assert!(err.contains("duplicate id x"), "{err}");
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn empty_record_and_invalid_residue() {
        assert!(parse(">x\n>y\nAC\n").is_err());
        assert!(parse(">x\nACB\n").is_err());
        assert_eq!(
            parse_fasta_str(">x\nACBX\n", Path::new("t"), true).unwrap()[0].residues(),
            "AC"
        );
    }
}
