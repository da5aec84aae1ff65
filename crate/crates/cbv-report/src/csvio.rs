//! Node lists, vectors, matrices and flow tables in CSV form.
//!
//! Readers take raw bytes so the caller can hash exactly what was parsed.
//! Writers render numbers in shortest round-trip form.

use std::collections::BTreeSet;

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use crate::error::{ReportError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub id: String,
    pub node_type: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

impl LabeledVector {
    pub fn get(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|x| x == id).map(|i| self.values[i])
    }
}

/// Dense matrix with row and column identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub corner: String,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub from: String,
    pub to: String,
    pub kind: String,
    pub amount: f64,
}

pub fn render_number(x: f64) -> String {
    format!("{x}")
}

fn reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    ReaderBuilder::new().has_headers(true).trim(Trim::All).from_reader(bytes)
}

fn headers(rdr: &mut csv::Reader<&[u8]>, file: &str) -> Result<StringRecord> {
    rdr.headers().cloned().map_err(|e| ReportError::parse(file, e))
}

fn column(h: &StringRecord, name: &str, file: &str) -> Result<usize> {
    h.iter()
        .position(|c| c == name)
        .ok_or_else(|| ReportError::parse(file, format!("missing column {name:?}")))
}

fn number(cell: &str, file: &str, line: u64) -> Result<f64> {
    if cell.is_empty() {
        return Ok(0.0);
    }
    let x: f64 = cell
        .parse()
        .map_err(|_| ReportError::parse(file, format!("line {line}: {cell:?} is not a number")))?;
    if !x.is_finite() {
        return Err(ReportError::parse(file, format!("line {line}: non-finite value {cell:?}")));
    }
    Ok(x)
}

fn check_unique<'a>(ids: impl IntoIterator<Item = &'a String>, file: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(ReportError::parse(file, "empty identifier"));
        }
        if !seen.insert(id) {
            return Err(ReportError::parse(file, format!("duplicate identifier {id:?}")));
        }
    }
    Ok(())
}

fn records(rdr: &mut csv::Reader<&[u8]>, file: &str) -> Result<Vec<(u64, StringRecord)>> {
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ReportError::parse(file, e))?;
        // header is line 1
        out.push((k as u64 + 2, rec));
    }
    Ok(out)
}

pub fn read_nodes(bytes: &[u8], file: &str) -> Result<Vec<NodeRecord>> {
    let mut rdr = reader(bytes);
    let h = headers(&mut rdr, file)?;
    let id = column(&h, "id", file)?;
    let ty = h.iter().position(|c| c == "type");
    let label = h.iter().position(|c| c == "label");
    let mut out = Vec::new();
    for (_, rec) in records(&mut rdr, file)? {
        let cell = |i: Option<usize>| i.and_then(|i| rec.get(i)).unwrap_or("").to_string();
        out.push(NodeRecord {
            id: cell(Some(id)),
            node_type: cell(ty),
            label: cell(label),
        });
    }
    check_unique(out.iter().map(|n| &n.id), file)?;
    Ok(out)
}

pub fn read_vector(bytes: &[u8], file: &str, value_column: &str) -> Result<LabeledVector> {
    let mut rdr = reader(bytes);
    let h = headers(&mut rdr, file)?;
    let id = column(&h, "id", file)?;
    let val = column(&h, value_column, file)?;
    let mut v = LabeledVector {
        ids: Vec::new(),
        values: Vec::new(),
    };
    for (line, rec) in records(&mut rdr, file)? {
        v.ids.push(rec.get(id).unwrap_or("").to_string());
        v.values.push(number(rec.get(val).unwrap_or(""), file, line)?);
    }
    check_unique(&v.ids, file)?;
    Ok(v)
}

/// Reads a matrix whose header is `corner` followed by one column per column id.
pub fn read_matrix(bytes: &[u8], file: &str, corner: &str) -> Result<LabeledMatrix> {
    let mut rdr = reader(bytes);
    let h = headers(&mut rdr, file)?;
    if h.get(0) != Some(corner) {
        return Err(ReportError::parse(
            file,
            format!("first header cell must be {corner:?}, found {:?}", h.get(0).unwrap_or("")),
        ));
    }
    let col_ids: Vec<String> = h.iter().skip(1).map(str::to_string).collect();
    check_unique(&col_ids, file)?;
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in records(&mut rdr, file)? {
        if rec.len() != col_ids.len() + 1 {
            return Err(ReportError::parse(
                file,
                format!("line {line}: {} cells, expected {}", rec.len(), col_ids.len() + 1),
            ));
        }
        row_ids.push(rec[0].to_string());
        values.push(
            rec.iter()
                .skip(1)
                .map(|c| number(c, file, line))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    check_unique(&row_ids, file)?;
    Ok(LabeledMatrix {
        corner: corner.to_string(),
        row_ids,
        col_ids,
        values,
    })
}

pub fn read_flows(bytes: &[u8], file: &str) -> Result<Vec<FlowRecord>> {
    let mut rdr = reader(bytes);
    let h = headers(&mut rdr, file)?;
    let (from, to, ty, amount) = (
        column(&h, "from", file)?,
        column(&h, "to", file)?,
        column(&h, "type", file)?,
        column(&h, "amount", file)?,
    );
    let mut out = Vec::new();
    for (line, rec) in records(&mut rdr, file)? {
        out.push(FlowRecord {
            from: rec.get(from).unwrap_or("").to_string(),
            to: rec.get(to).unwrap_or("").to_string(),
            kind: rec.get(ty).unwrap_or("").to_string(),
            amount: number(rec.get(amount).unwrap_or(""), file, line)?,
        });
    }
    Ok(out)
}

fn write_rows(rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

pub fn write_nodes(nodes: &[NodeRecord]) -> Vec<u8> {
    let header = vec!["id".to_string(), "type".to_string(), "label".to_string()];
    write_rows(
        std::iter::once(header)
            .chain(nodes.iter().map(|n| vec![n.id.clone(), n.node_type.clone(), n.label.clone()])),
    )
}

pub fn write_vector(v: &LabeledVector, value_column: &str) -> Vec<u8> {
    let header = vec!["id".to_string(), value_column.to_string()];
    write_rows(
        std::iter::once(header).chain(
            v.ids
                .iter()
                .zip(&v.values)
                .map(|(id, x)| vec![id.clone(), render_number(*x)]),
        ),
    )
}

pub fn write_matrix(m: &LabeledMatrix) -> Vec<u8> {
    let header = std::iter::once(m.corner.clone()).chain(m.col_ids.iter().cloned()).collect();
    write_rows(
        std::iter::once(header).chain(m.row_ids.iter().zip(&m.values).map(|(id, row)| {
            std::iter::once(id.clone())
                .chain(row.iter().map(|x| render_number(*x)))
                .collect()
        })),
    )
}

pub fn write_flows(flows: &[FlowRecord]) -> Vec<u8> {
    let header = ["from", "to", "type", "amount"].map(String::from).to_vec();
    write_rows(std::iter::once(header).chain(flows.iter().map(|f| {
        vec![f.from.clone(), f.to.clone(), f.kind.clone(), render_number(f.amount)]
    })))
}
