use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::graph::{EdgeInsert, PpiGraph};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EdgeWarnings {
    pub self_loops: usize,
    pub replaced: usize,
}

pub fn parse_edges(path: &Path) -> Result<PpiGraph> {
    Ok(parse_edges_str(&super::read_text(path)?, path)?.0)
}

/// Parses `id_a<TAB>id_b[<TAB>weight]` lines into an undirected graph.
/// Self-loops are dropped and repeated edges keep the last weight; both are
/// counted in the returned warnings.
pub fn parse_edges_str(text: &str, origin: &Path) -> Result<(PpiGraph, EdgeWarnings)> {
    let mut graph = PpiGraph::new();
    let mut warnings = EdgeWarnings::default();
    for (line, l) in super::data_lines(text) {
        let fields: Vec<&str> = l.split('\t').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::format(
                origin,
                format!("line {line}: expected id_a<TAB>id_b[<TAB>weight]"),
            ));
        }
        let weight = match fields.get(2) {
            Some(w) => w.parse::<f64>().map_err(|_| {
                Error::format(origin, format!("line {line}: weight {w:?} is not a number"))
            })?,
            None => 1.0,
        };
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::format(
                origin,
                format!("line {line}: weight {weight} must be positive"),
            ));
        }
        match graph
            .insert_edge(fields[0], fields[1], weight)
            .map_err(|e| Error::format(origin, format!("line {line}: {e}")))?
        {
            EdgeInsert::Added => {}
            EdgeInsert::SelfLoop => warnings.self_loops += 1,
            EdgeInsert::Replaced { .. } => warnings.replaced += 1,
        }
    }
    if warnings.self_loops > 0 {
        warn!(
            "{}: dropped {} self-loop(s)",
            origin.display(),
            warnings.self_loops
        );
    }
    if warnings.replaced > 0 {
        warn!(
            "{}: {} repeated edge(s), last weight kept",
            origin.display(),
            warnings.replaced
        );
    }
    Ok((graph, warnings))
}

pub fn format_edges(graph: &PpiGraph) -> String {
    graph
        .edges()
        .into_iter()
        .map(|(u, v, w)| format!("{}\t{}\t{}\n", graph.id(u), graph.id(v), w))
        .collect()
}

pub fn write_edges(path: &Path, graph: &PpiGraph) -> Result<()> {
    super::write_file(path, format_edges(graph).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(PpiGraph, EdgeWarnings)> {
        parse_edges_str(text, Path::new("e.tsv"))
    }

    #[test]
    fn unit_edge() {
        let (g, w) = parse("A\tB\n").unwrap();
        assert_eq!(g.num_edges(), 1);
        assert!(g.has_edge_ids("B", "A"));
        assert_eq!(g.weight(0, 1), Some(1.0));
        assert_eq!(w, EdgeWarnings::default());
    }

    #[test]
    fn self_loop_dropped() {
        let (g, w) = parse("A\tA\t1.0\n").unwrap();
        assert_eq!(g.num_edges(), 0);
        assert_eq!(w.self_loops, 1);
    }

    #[test]
    fn last_weight_wins() {
        let (g, w) = parse("A\tB\t1\nB\tA\t2\n").unwrap();
        assert_eq!(g.weight(0, 1), Some(2.0));
        assert_eq!(w.replaced, 1);
    }

    #[test]
    fn nonpositive_weight() {
        assert!(parse("A\tB\t0\n").is_err());
        assert!(parse("A\tB\t-1\n").is_err());
    }

    #[test]
    fn writer_round_trip() {
        let (g, _) = parse("A\tB\t0.5\nB\tC\n").unwrap();
        let (h, _) = parse(&format_edges(&g)).unwrap();
        assert_eq!(format_edges(&h), format_edges(&g));
    }
}
