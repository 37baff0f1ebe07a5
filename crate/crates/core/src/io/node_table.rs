use std::path::Path;

use crate::error::{Error, Result};
use crate::skipgram::NodeEmbeddingTable;

/// One `id<TAB>v1<TAB>…` row per node, sorted by id. Values use the
/// shortest representation that parses back exactly.
pub fn format_node_table(table: &NodeEmbeddingTable) -> String {
    let mut out = String::new();
    for (id, v) in table.iter() {
        out.push_str(id);
        for x in v {
            out.push('\t');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_node_table(path: &Path, table: &NodeEmbeddingTable) -> Result<()> {
    super::write_file(path, format_node_table(table).as_bytes())
}

/// Parses a table whose rows must all have `dim` values.
pub fn parse_node_table(text: &str, origin: &Path, dim: usize) -> Result<NodeEmbeddingTable> {
    let mut table = NodeEmbeddingTable::new(dim);
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let mut fields = l.split('\t');
        let id = fields.next().unwrap_or_default();
        let v = fields
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(origin, format!("line {}: {e}", i + 1)))?;
        if id.is_empty() || v.len() != dim {
            return Err(Error::format(
                origin,
                format!("line {}: expected an id and {dim} values", i + 1),
            ));
        }
        table.insert(id, v)?;
    }
    Ok(table)
}

pub fn read_node_table(path: &Path, dim: usize) -> Result<NodeEmbeddingTable> {
    parse_node_table(&super::read_text(path)?, path, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut t = NodeEmbeddingTable::new(3);
        t.insert("b", vec![0.1, -2.5e-8, 3.0]).unwrap();
        t.insert("a", vec![f32::MIN_POSITIVE, 1.0 / 3.0, -0.0])
            .unwrap();
        let text = format_node_table(&t);
        let back = parse_node_table(&text, Path::new("n"), 3).unwrap();
        assert!(text.starts_with("a\t"));
        assert_eq!(format_node_table(&back), text);
        assert_eq!(
            back.get("a").unwrap()[1].to_bits(),
            (1.0f32 / 3.0).to_bits()
        );
    }

    #[test]
    fn empty_table_and_width_check() {
        let back = parse_node_table(
            &format_node_table(&NodeEmbeddingTable::new(5)),
            Path::new("n"),
            5,
        )
        .unwrap();
        assert_eq!(back.dim(), 5);
        assert!(back.is_empty());
        assert!(parse_node_table("a\t1\t2\n", Path::new("n"), 3).is_err());
    }
}
