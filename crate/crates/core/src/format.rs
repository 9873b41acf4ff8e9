//! Line-oriented text formats.
//!
//! All four formats share the same lexical rules: UTF-8 text, `#` starts a
//! comment that runs to the end of the line, blank lines are ignored, and the
//! first meaningful line is a `torsor-<kind> v1` header. Writers emit every
//! real number with 17 significant digits so that `write ∘ parse` reproduces
//! the written text exactly.
//!
//! ```text
//! torsor-graph v1
//! group so2
//! vertices 3
//! edge 0 1 1.5707963267948966
//! edge 1 2 0.7853981633974483 w=2.0
//! ```
//!
//! Group element payloads: a decimal residue for `cyclic n`, radians for
//! `so2`, nine row-major entries for `so3`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Result, TorsorError};
use crate::groups::{project_to_so3, GroupElement, GroupKind, RepSpec, Representation, SO3_TOLERANCE};
use crate::potentialgraph::PotentialGraph;
use crate::sheaf::FeatureAssignment;

pub const GRAPH_HEADER: &str = "torsor-graph v1";
pub const FEATURES_HEADER: &str = "torsor-features v1";
pub const STATES_HEADER: &str = "torsor-states v1";
pub const KERNEL_HEADER: &str = "torsor-kernel v1";

/// Rotations read from text are projected onto SO(3) when their drift lies
/// between [`SO3_TOLERANCE`] and this bound, and rejected beyond it.
const SO3_READ_TOLERANCE: f64 = 1e-6;

/// Canonical real-number rendering, 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

#[derive(Debug)]
struct Line<'a> {
    number: usize,
    tokens: Vec<Token<'a>>,
}

impl<'a> Line<'a> {
    fn error(&self, column: usize, message: impl Into<String>) -> TorsorError {
        TorsorError::Parse {
            line: self.number,
            column,
            message: message.into(),
        }
    }

    fn at(&self, i: usize, what: &str) -> Result<Token<'a>> {
        self.tokens.get(i).copied().ok_or_else(|| {
            let column = self.tokens.last().map_or(1, |t| t.column + t.text.chars().count());
            self.error(column, format!("missing {what}"))
        })
    }

    fn expect_len(&self, n: usize) -> Result<()> {
        if let Some(extra) = self.tokens.get(n) {
            return Err(self.error(extra.column, format!("unexpected token '{}'", extra.text)));
        }
        Ok(())
    }

    fn keyword(&self) -> &'a str {
        self.tokens[0].text
    }
}

fn lex(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = Vec::new();
        let mut start: Option<usize> = None;
        for (pos, ch) in content.char_indices().chain(std::iter::once((content.len(), ' '))) {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    tokens.push(Token {
                        text: &content[s..pos],
                        column: content[..s].chars().count() + 1,
                    });
                }
            } else if start.is_none() {
                start = Some(pos);
            }
        }
        if !tokens.is_empty() {
            out.push(Line { number: i + 1, tokens });
        }
    }
    out
}

fn expect_header<'a>(lines: &'a [Line<'a>], header: &str) -> Result<&'a [Line<'a>]> {
    let Some(first) = lines.first() else {
        return Err(TorsorError::Parse {
            line: 1,
            column: 1,
            message: format!("empty input, expected '{header}'"),
        });
    };
    let found: Vec<&str> = first.tokens.iter().map(|t| t.text).collect();
    if found.join(" ") != header {
        return Err(first.error(1, format!("expected header '{header}', found '{}'", found.join(" "))));
    }
    Ok(&lines[1..])
}

fn parse_real(line: &Line<'_>, tok: Token<'_>) -> Result<f64> {
    let x: f64 = tok
        .text
        .parse()
        .map_err(|_| line.error(tok.column, format!("expected a number, found '{}'", tok.text)))?;
    if !x.is_finite() {
        return Err(line.error(tok.column, format!("non-finite number '{}'", tok.text)));
    }
    Ok(x)
}

fn parse_usize(line: &Line<'_>, tok: Token<'_>) -> Result<usize> {
    tok.text.parse().map_err(|_| {
        line.error(
            tok.column,
            format!("expected a non-negative integer, found '{}'", tok.text),
        )
    })
}

fn element_width(kind: GroupKind) -> usize {
    match kind {
        GroupKind::So3 => 9,
        _ => 1,
    }
}

fn parse_element(line: &Line<'_>, kind: GroupKind, first: usize) -> Result<GroupElement> {
    let tok = line.at(first, "group element")?;
    match kind {
        GroupKind::Cyclic(n) => {
            let k: i64 = tok
                .text
                .parse()
                .map_err(|_| line.error(tok.column, format!("expected an integer residue, found '{}'", tok.text)))?;
            GroupElement::cyclic(n, k).map_err(|e| line.error(tok.column, e.to_string()))
        }
        GroupKind::So2 => GroupElement::so2(parse_real(line, tok)?).map_err(|e| line.error(tok.column, e.to_string())),
        GroupKind::So3 => {
            let mut entries = [0.0; 9];
            for (i, x) in entries.iter_mut().enumerate() {
                *x = parse_real(line, line.at(first + i, "rotation entry")?)?;
            }
            let m = Matrix3::from_row_slice(&entries);
            let drift = (m.transpose() * m - Matrix3::identity()).amax();
            let m = if drift > SO3_TOLERANCE && drift <= SO3_READ_TOLERANCE {
                project_to_so3(&m)
            } else {
                m
            };
            GroupElement::so3(m).map_err(|e| line.error(tok.column, e.to_string()))
        }
    }
}

/// Payload text of a group element.
pub fn format_element(g: &GroupElement) -> String {
    if let Some(k) = g.residue() {
        k.to_string()
    } else if let Some(theta) = g.angle() {
        fmt_real(theta)
    } else {
        let m = g.rotation().expect("so3");
        let mut parts = Vec::with_capacity(9);
        for r in 0..3 {
            for c in 0..3 {
                parts.push(fmt_real(m[(r, c)]));
            }
        }
        parts.join(" ")
    }
}

fn format_group(kind: GroupKind) -> String {
    match kind {
        GroupKind::Cyclic(n) => format!("cyclic {n}"),
        GroupKind::So2 => "so2".into(),
        GroupKind::So3 => "so3".into(),
    }
}

fn parse_group(line: &Line<'_>) -> Result<GroupKind> {
    let tok = line.at(1, "group name")?;
    let kind = match tok.text {
        "so2" => {
            line.expect_len(2)?;
            GroupKind::So2
        }
        "so3" => {
            line.expect_len(2)?;
            GroupKind::So3
        }
        "cyclic" => {
            let n_tok = line.at(2, "cyclic order")?;
            let n: u32 = n_tok.text.parse().map_err(|_| {
                line.error(
                    n_tok.column,
                    format!("expected a positive order, found '{}'", n_tok.text),
                )
            })?;
            line.expect_len(3)?;
            GroupKind::Cyclic(n)
        }
        other => {
            return Err(line.error(
                tok.column,
                format!("unknown group '{other}', expected so2|so3|cyclic <n>"),
            ))
        }
    };
    kind.validate().map_err(|e| line.error(tok.column, e.to_string()))
}

pub fn parse_graph(text: &str) -> Result<PotentialGraph> {
    let lines = lex(text);
    let body = expect_header(&lines, GRAPH_HEADER)?;
    let mut kind = None;
    let mut builder = None;
    for line in body {
        match line.keyword() {
            "group" => {
                if kind.is_some() {
                    return Err(line.error(1, "duplicate 'group' line"));
                }
                kind = Some(parse_group(line)?);
            }
            "vertices" => {
                let k = kind.ok_or_else(|| line.error(1, "'vertices' before 'group'"))?;
                if builder.is_some() {
                    return Err(line.error(1, "duplicate 'vertices' line"));
                }
                let n = parse_usize(line, line.at(1, "vertex count")?)?;
                line.expect_len(2)?;
                builder = Some(PotentialGraph::builder(k, n).map_err(|e| line.error(1, e.to_string()))?);
            }
            "edge" => {
                let (Some(k), Some(b)) = (kind, builder.as_mut()) else {
                    return Err(line.error(1, "'edge' before 'group' and 'vertices'"));
                };
                let u_tok = line.at(1, "first vertex")?;
                let u = parse_usize(line, u_tok)?;
                let v = parse_usize(line, line.at(2, "second vertex")?)?;
                let psi = parse_element(line, k, 3)?;
                let mut next = 3 + element_width(k);
                let mut weight = 1.0;
                if let Some(tok) = line.tokens.get(next) {
                    let w = tok.text.strip_prefix("w=").ok_or_else(|| {
                        line.error(tok.column, format!("expected 'w=<weight>', found '{}'", tok.text))
                    })?;
                    weight = parse_real(
                        line,
                        Token {
                            text: w,
                            column: tok.column + 2,
                        },
                    )?;
                    next += 1;
                }
                line.expect_len(next)?;
                b.weighted_edge(u, v, psi, weight)
                    .map_err(|e| line.error(u_tok.column, e.to_string()))?;
            }
            other => return Err(line.error(1, format!("unknown directive '{other}'"))),
        }
    }
    let Some(b) = builder else {
        let last = lines.last().map_or(1, |l| l.number);
        return Err(TorsorError::Parse {
            line: last,
            column: 1,
            message: "missing 'group' or 'vertices' line".into(),
        });
    };
    Ok(b.build())
}

/// Canonical text: edges in stored order and orientation, `w=` only when not 1.
pub fn write_graph(g: &PotentialGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{GRAPH_HEADER}");
    let _ = writeln!(out, "group {}", format_group(g.kind()));
    let _ = writeln!(out, "vertices {}", g.num_vertices());
    for e in g.edges() {
        let _ = write!(out, "edge {} {} {}", e.u, e.v, format_element(&e.psi));
        if e.weight != 1.0 {
            let _ = write!(out, " w={}", fmt_real(e.weight));
        }
        out.push('\n');
    }
    out
}

/// Rows of a feature file, ordered by vertex id; ids must be exactly `0..n`.
pub fn parse_feature_values(text: &str) -> Result<DMatrix<f64>> {
    let lines = lex(text);
    let body = expect_header(&lines, FEATURES_HEADER)?;
    let Some((dim_line, rows)) = body.split_first() else {
        return Err(TorsorError::Parse {
            line: lines[0].number,
            column: 1,
            message: "missing 'dim' line".into(),
        });
    };
    if dim_line.keyword() != "dim" {
        return Err(dim_line.error(1, format!("expected 'dim', found '{}'", dim_line.keyword())));
    }
    let dim_tok = dim_line.at(1, "dimension")?;
    let dim = parse_usize(dim_line, dim_tok)?;
    dim_line.expect_len(2)?;
    if dim == 0 {
        return Err(dim_line.error(dim_tok.column, "dimension must be at least 1"));
    }
    let n = rows.len();
    let mut values = DMatrix::zeros(n, dim);
    let mut seen = vec![false; n];
    for line in rows {
        let id_tok = line.tokens[0];
        let id = parse_usize(line, id_tok)?;
        if id >= n {
            return Err(line.error(id_tok.column, format!("vertex id {id} out of range for {n} rows")));
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(line.error(id_tok.column, format!("vertex {id} listed twice")));
        }
        for j in 0..dim {
            values[(id, j)] = parse_real(line, line.at(1 + j, "feature value")?)?;
        }
        line.expect_len(1 + dim)?;
    }
    Ok(values)
}

pub fn parse_features(text: &str, rep: &Representation) -> Result<FeatureAssignment> {
    let values = parse_feature_values(text)?;
    if values.ncols() != rep.dim() {
        return Err(TorsorError::DimensionMismatch {
            expected: rep.dim(),
            found: values.ncols(),
        });
    }
    FeatureAssignment::new(rep.clone(), values)
}

pub fn write_features(f: &FeatureAssignment) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FEATURES_HEADER}");
    let _ = writeln!(out, "dim {}", f.dim());
    for (v, row) in f.values().row_iter().enumerate() {
        let _ = write!(out, "{v}");
        for x in row.iter() {
            let _ = write!(out, " {}", fmt_real(*x));
        }
        out.push('\n');
    }
    out
}

/// Per-vertex group elements; ids must be exactly `0..n`.
pub fn parse_states(text: &str, kind: GroupKind) -> Result<Vec<GroupElement>> {
    let lines = lex(text);
    let body = expect_header(&lines, STATES_HEADER)?;
    let n = body.len();
    let mut states = vec![None; n];
    for line in body {
        let id_tok = line.tokens[0];
        let id = parse_usize(line, id_tok)?;
        if id >= n {
            return Err(line.error(id_tok.column, format!("vertex id {id} out of range for {n} rows")));
        }
        if states[id].is_some() {
            return Err(line.error(id_tok.column, format!("vertex {id} listed twice")));
        }
        states[id] = Some(parse_element(line, kind, 1)?);
        line.expect_len(1 + element_width(kind))?;
    }
    Ok(states.into_iter().map(|s| s.expect("all ids seen")).collect())
}

pub fn write_states(states: &[GroupElement], objective: Option<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{STATES_HEADER}");
    for (v, s) in states.iter().enumerate() {
        let _ = writeln!(out, "{v} {}", format_element(s));
    }
    if let Some(obj) = objective {
        let _ = writeln!(out, "# objective {}", fmt_real(obj));
    }
    out
}

/// Contents of a kernel file; the group comes from the graph it is applied on.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFile {
    pub rep_in: RepSpec,
    pub rep_out: RepSpec,
    pub coefficients: Vec<f64>,
}

pub fn parse_kernel(text: &str) -> Result<KernelFile> {
    let lines = lex(text);
    let body = expect_header(&lines, KERNEL_HEADER)?;
    let (mut rep_in, mut rep_out, mut coefficients) = (None, None, None);
    for line in body {
        match line.keyword() {
            key @ ("rep_in" | "rep_out") => {
                let tok = line.at(1, "representation")?;
                line.expect_len(2)?;
                let spec: RepSpec = tok
                    .text
                    .parse()
                    .map_err(|e: TorsorError| line.error(tok.column, e.to_string()))?;
                let slot = if key == "rep_in" { &mut rep_in } else { &mut rep_out };
                if slot.replace(spec).is_some() {
                    return Err(line.error(1, format!("duplicate '{key}' line")));
                }
            }
            "coeffs" => {
                if coefficients.is_some() {
                    return Err(line.error(1, "duplicate 'coeffs' line"));
                }
                coefficients = Some(
                    line.tokens[1..]
                        .iter()
                        .map(|&t| parse_real(line, t))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            other => return Err(line.error(1, format!("unknown directive '{other}'"))),
        }
    }
    let last = lines.last().map_or(1, |l| l.number);
    let missing = |what: &str| TorsorError::Parse {
        line: last,
        column: 1,
        message: format!("missing '{what}' line"),
    };
    Ok(KernelFile {
        rep_in: rep_in.ok_or_else(|| missing("rep_in"))?,
        rep_out: rep_out.ok_or_else(|| missing("rep_out"))?,
        coefficients: coefficients.ok_or_else(|| missing("coeffs"))?,
    })
}

pub fn write_kernel(k: &KernelFile) -> String {
    let coeffs: Vec<String> = k.coefficients.iter().map(|c| fmt_real(*c)).collect();
    let mut out = String::new();
    let _ = writeln!(out, "{KERNEL_HEADER}");
    let _ = writeln!(out, "rep_in {}", k.rep_in);
    let _ = writeln!(out, "rep_out {}", k.rep_out);
    if coeffs.is_empty() {
        let _ = writeln!(out, "coeffs");
    } else {
        let _ = writeln!(out, "coeffs {}", coeffs.join(" "));
    }
    out
}
