//! Line-oriented tree serialization with hexadecimal floats.

use std::fmt::Write as _;

use nalgebra::DVector;

use super::{Node, NodeStatus, PartitionTree};
use crate::geometry::Polytope;
use crate::problem::{Commutation, ScalingTransform};
use crate::textio::{parse_f64, parse_usize, write_floats, write_vec, FormatError, LineReader};

const MAGIC: &str = "commutree-tree";
const VERSION: &str = "1";
/// Relative tolerance for the child-volume check at load time.
const VOLUME_TOL: f64 = 1e-6;

fn opt_float(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), crate::hexfloat::format)
}

pub fn write_tree(tree: &PartitionTree) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "dims {} {}", tree.p, tree.m).unwrap();
    write_vec(&mut out, "scale", &tree.scaling.scale);
    write_vec(&mut out, "offset", &tree.scaling.offset);
    writeln!(out, "nodes {}", tree.nodes.len()).unwrap();
    for n in &tree.nodes {
        let parent = n.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
        let delta = n.delta.as_ref().map_or_else(|| "-".to_string(), |d| format!("{d}"));
        writeln!(out, "node {} {parent} {} {} {delta} {}", n.id, n.status, n.depth, n.vertices.len()).unwrap();
        writeln!(out, "err {} {}", opt_float(n.e_abs), opt_float(n.e_rel)).unwrap();
        if let Some(vals) = &n.vertex_values {
            write!(out, "vals {}", vals.len()).unwrap();
            write_floats(&mut out, vals.iter().copied());
            out.push('\n');
        }
        for v in &n.vertices {
            out.push('v');
            write_floats(&mut out, v.iter().copied());
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

fn parse_opt_f64(line: usize, tok: &str) -> Result<Option<f64>, FormatError> {
    if tok == "-" {
        Ok(None)
    } else {
        parse_f64(line, tok).map(Some)
    }
}

pub fn read_tree(text: &str) -> Result<PartitionTree, FormatError> {
    let mut r = LineReader::new(text);
    let (n, toks) = r.next()?;
    if toks != [MAGIC, VERSION] {
        return LineReader::err_at(n, format!("expected header '{MAGIC} {VERSION}'"));
    }
    let (n, dims) = r.expect("dims")?;
    if dims.len() != 2 {
        return LineReader::err_at(n, "dims needs p m");
    }
    let p = parse_usize(n, Some(dims[0]))?;
    let m = parse_usize(n, Some(dims[1]))?;
    let scale_line = r.line_no();
    let scale = r.read_vec("scale")?;
    let offset = r.read_vec("offset")?;
    if scale.len() != p || offset.len() != p || scale.iter().any(|&s| !(s.is_finite() && s != 0.0)) {
        return LineReader::err_at(scale_line, "scaling must have p finite nonzero entries");
    }
    let (n, t) = r.expect("nodes")?;
    let count = parse_usize(n, t.first().copied())?;
    if count == 0 {
        return LineReader::err_at(n, "tree needs a root");
    }

    let mut nodes: Vec<Node> = Vec::with_capacity(count);
    let mut lines = Vec::with_capacity(count);
    for expected_id in 0..count {
        let (n, t) = r.expect("node")?;
        if t.len() != 6 {
            return LineReader::err_at(n, "node needs id parent status depth delta nverts");
        }
        let id = parse_usize(n, Some(t[0]))?;
        if id != expected_id {
            return LineReader::err_at(n, format!("expected node {expected_id}, found {id}"));
        }
        let parent = match t[1] {
            "-" => None,
            s => Some(parse_usize(n, Some(s))?),
        };
        match (id, parent) {
            (0, None) => {}
            (0, Some(_)) => return LineReader::err_at(n, "root cannot have a parent"),
            (_, None) => return LineReader::err_at(n, "only the root may lack a parent"),
            (_, Some(pid)) if pid >= id => return LineReader::err_at(n, "parent must precede its child"),
            _ => {}
        }
        let status: NodeStatus = t[2].parse().map_err(|e: String| FormatError { line: n, message: e })?;
        let depth = parse_usize(n, Some(t[3]))?;
        let expected_depth = parent.map_or(0, |pid| nodes[pid].depth + 1);
        if depth != expected_depth {
            return LineReader::err_at(n, format!("depth {depth} does not match parent (expected {expected_depth})"));
        }
        let delta = match t[4] {
            "-" => None,
            s => {
                let d: Commutation = s.parse().map_err(|e: crate::problem::ProblemError| FormatError {
                    line: n,
                    message: e.to_string(),
                })?;
                if d.len() != m {
                    return LineReader::err_at(n, format!("commutation has {} bits, expected {m}", d.len()));
                }
                Some(d)
            }
        };
        let nverts = parse_usize(n, Some(t[5]))?;
        if (id > 0 && nverts != p + 1) || nverts < p + 1 {
            return LineReader::err_at(n, format!("node has {nverts} vertices"));
        }

        let (en, et) = r.expect("err")?;
        if et.len() != 2 {
            return LineReader::err_at(en, "err needs two entries");
        }
        let e_abs = parse_opt_f64(en, et[0])?;
        let e_rel = parse_opt_f64(en, et[1])?;

        let mut vertex_values = None;
        if r.peek().is_some_and(|t| t[0] == "vals") {
            let (vn, vt) = r.expect("vals")?;
            let k = parse_usize(vn, vt.first().copied())?;
            if vt.len() != k + 1 || k != nverts {
                return LineReader::err_at(vn, "vals must list one value per vertex");
            }
            vertex_values = Some(vt[1..].iter().map(|s| parse_f64(vn, s)).collect::<Result<Vec<_>, _>>()?);
        }

        let mut vertices = Vec::with_capacity(nverts);
        for _ in 0..nverts {
            let (vn, vt) = r.expect("v")?;
            if vt.len() != p {
                return LineReader::err_at(vn, format!("vertex needs {p} coordinates"));
            }
            let vals = vt.iter().map(|s| parse_f64(vn, s)).collect::<Result<Vec<_>, _>>()?;
            vertices.push(DVector::from_vec(vals));
        }
        if let Some(pid) = parent {
            nodes[pid].children.push(id);
        }
        nodes.push(Node { id, parent, children: Vec::new(), vertices, status, delta, vertex_values, e_abs, e_rel, depth });
        lines.push(n);
    }
    r.expect("end")?;
    if !r.at_end() {
        return r.err("trailing content after 'end'");
    }

    if let Err(e) = Polytope::new(nodes[0].vertices.clone()) {
        return LineReader::err_at(lines[0], format!("root region: {e}"));
    }
    let tree = PartitionTree { p, m, scaling: ScalingTransform { scale, offset }, nodes };
    for node in &tree.nodes {
        let at = lines[node.id];
        let branch = node.status == NodeStatus::Branch;
        if branch == node.is_leaf() && node.id != 0 {
            return LineReader::err_at(at, "only internal nodes may have status 'branch'");
        }
        if node.is_leaf() {
            continue;
        }
        let vol = tree.node_volume(node.id).map_err(|e| FormatError { line: at, message: e.to_string() })?;
        let mut sum = 0.0;
        for &c in &node.children {
            sum += tree.node_volume(c).map_err(|e| FormatError { line: lines[c], message: e.to_string() })?;
        }
        if (sum - vol).abs() > VOLUME_TOL * vol {
            return LineReader::err_at(at, format!("children cover volume {sum:e}, node has {vol:e}"));
        }
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::tests::toy_tree;

    #[test]
    fn round_trip_is_exact() {
        let mut t = toy_tree();
        t.nodes[2].e_abs = Some(0.125);
        t.nodes[3].vertex_values = Some(vec![0.1, -1.0 / 3.0]);
        let text = write_tree(&t);
        let back = read_tree(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(write_tree(&back), text);
    }

    #[test]
    fn volume_mismatch_names_the_parent_line() {
        let t = toy_tree();
        let text = write_tree(&t);
        // Shrink the last child so the children no longer cover node 1.
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let last_v = lines.iter().rposition(|l| l.starts_with("v ")).unwrap();
        lines[last_v] = format!("v {}", crate::hexfloat::format(0.5));
        let bad = lines.join("\n");
        let err = read_tree(&bad).unwrap_err();
        let node1 = text.lines().position(|l| l.starts_with("node 1 ")).unwrap() + 1;
        assert_eq!(err.line, node1, "{err}");
    }

    #[test]
    fn truncated_input_is_rejected() {
        let text = write_tree(&toy_tree());
        let cut: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(read_tree(&cut).is_err());
        assert!(read_tree("commutree-tree 2\n").is_err());
    }
}
