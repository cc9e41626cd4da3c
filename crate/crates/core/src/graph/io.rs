//! JSON Lines persistence: a header line, one line per vertex, one line per
//! edge. Inverse edges are stored explicitly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentedGraph, GraphError, VertexId, VertexKind};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    num_vertices: usize,
    num_edges: usize,
}

#[derive(Serialize, Deserialize)]
struct VertexLine {
    id: u32,
    kind: VertexKind,
    surface: String,
}

#[derive(Serialize, Deserialize)]
struct EdgeLine {
    src: u32,
    label: String,
    dst: u32,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_graph<W: Write>(graph: &AugmentedGraph, mut out: W) -> std::io::Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        num_vertices: graph.num_vertices(),
        num_edges: graph.num_edges(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for v in graph.vertices() {
        let line = VertexLine {
            id: v.id.0,
            kind: v.kind,
            surface: v.surface.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    for e in graph.edges() {
        let line = EdgeLine {
            src: e.src.0,
            label: graph.label_name(e.label).to_string(),
            dst: e.dst.0,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_graph(graph: &AugmentedGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_graph(graph, BufWriter::new(file)).map_err(io_err(path))
}

fn parse<'a, T: Deserialize<'a>>(line: &'a str, lineno: usize, what: &str) -> Result<T, GraphError> {
    serde_json::from_str(line).map_err(|e| GraphError::Format {
        line: lineno,
        message: format!("malformed {what}: {e}"),
    })
}

pub fn read_graph<R: Read>(input: R) -> Result<AugmentedGraph, GraphError> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let mut next_line = || -> Result<Option<(usize, String)>, GraphError> {
        loop {
            match lines.next() {
                None => return Ok(None),
                Some((i, line)) => {
                    let line = line.map_err(|e| GraphError::Format {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                    if !line.trim().is_empty() {
                        return Ok(Some((i + 1, line)));
                    }
                }
            }
        }
    };

    let (lineno, line) = next_line()?.ok_or(GraphError::Format {
        line: 1,
        message: "missing header".into(),
    })?;
    let header: Header = parse(&line, lineno, "header")?;
    if header.version != FORMAT_VERSION {
        return Err(GraphError::Format {
            line: lineno,
            message: format!("unsupported version {}", header.version),
        });
    }

    let mut vertices = Vec::with_capacity(header.num_vertices);
    for expected in 0..header.num_vertices {
        let (lineno, line) = next_line()?.ok_or_else(|| GraphError::Format {
            line: lineno + expected + 1,
            message: format!("expected {} vertices, found {expected}", header.num_vertices),
        })?;
        let v: VertexLine = parse(&line, lineno, "vertex")?;
        if v.id as usize != expected {
            return Err(GraphError::Format {
                line: lineno,
                message: format!("vertex id {} out of order (expected {expected})", v.id),
            });
        }
        vertices.push((v.kind, v.surface));
    }

    let mut edges = Vec::with_capacity(header.num_edges);
    let mut last_line = lineno;
    while let Some((lineno, line)) = next_line()? {
        let e: EdgeLine = parse(&line, lineno, "edge")?;
        let (src, dst) = (VertexId(e.src), VertexId(e.dst));
        if src.index() >= vertices.len() || dst.index() >= vertices.len() {
            return Err(GraphError::DanglingEdge {
                src,
                label: e.label,
                dst,
            });
        }
        edges.push((src, e.label, dst));
        last_line = lineno;
    }
    if edges.len() != header.num_edges {
        return Err(GraphError::Format {
            line: last_line,
            message: format!("expected {} edges, found {}", header.num_edges, edges.len()),
        });
    }
    AugmentedGraph::from_parts(vertices, edges).map_err(|e| match e {
        GraphError::InvalidEntity(_) | GraphError::EmptySentence(_) => GraphError::Format {
            line: 0,
            message: e.to_string(),
        },
        other => other,
    })
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<AugmentedGraph, GraphError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_graph(file)
}
