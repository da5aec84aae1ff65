//! The on-disk data package: manifest plus CSV and JSON data files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use cbv_core::control::ControlRuleSpec;
use cbv_core::cut::{internal_inverse, spectral_radius_bound, ClearingState, FlowKind, PricedFlow};
use cbv_core::linalg::{op_norm, NormKind};
use cbv_core::network::{is_currency_code, parse_date};
use cbv_core::{CutStatistics, NodeId, Observer, Regime, RuleId, Severity, SparseMatrix, ValidationReport};

use crate::clearing_spec::{ClearingSpec, CLEARING_FILE};
use crate::csvio::{self, FlowRecord, LabeledMatrix, LabeledVector, NodeRecord};
use crate::error::{ReportError, Result};
use crate::hash;
use crate::manifest::{
    ClearingBlock, FxBlock, Manifest, ManifestObserver, ManifestPerimeter, PppBlock, SdfBlock, StabilityBlock,
    MANIFEST_FILE, MANIFEST_VERSION,
};
use crate::pov::{PovDoc, PovMetadata, POV_FILE};

pub const KEY_NODES_P: &str = "nodes_P";
pub const KEY_NODES_O: &str = "nodes_O";
pub const KEY_B_P: &str = "b_P";
pub const KEY_V_O: &str = "v_O";
pub const KEY_V_P: &str = "v_P";
pub const KEY_O_PO: &str = "O_PO";
pub const KEY_O_OP: &str = "O_OP";
pub const KEY_O_PP: &str = "O_PP";
pub const KEY_FLOWS: &str = "flows";
pub const KEY_CLEARING: &str = "clearing_spec";
pub const KEY_POV: &str = "pov";
pub const KEY_PROOF_STABILITY: &str = "proof_stability";

const REQUIRED: [&str; 6] = [KEY_NODES_P, KEY_NODES_O, KEY_B_P, KEY_V_O, KEY_O_PO, KEY_O_OP];

fn default_file(key: &str) -> String {
    match key {
        KEY_CLEARING => CLEARING_FILE.to_string(),
        KEY_POV => POV_FILE.to_string(),
        KEY_PROOF_STABILITY => "proof_stability.txt".to_string(),
        other => format!("{other}.csv"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Package {
    pub manifest: Manifest,
    pub nodes_p: Vec<NodeRecord>,
    pub nodes_o: Vec<NodeRecord>,
    pub b_p: LabeledVector,
    pub v_o: LabeledVector,
    pub v_p: Option<LabeledVector>,
    pub o_po: LabeledMatrix,
    pub o_op: LabeledMatrix,
    pub o_pp: Option<LabeledMatrix>,
    pub flows: Vec<FlowRecord>,
    pub clearing: Option<ClearingSpec>,
    pub pov: Option<PovDoc>,
    /// Data files with keys outside the schema, kept byte for byte: key → (file name, bytes).
    pub other_files: BTreeMap<String, (String, Vec<u8>)>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ReportError::io(path, e))
}

/// Reads and verifies a package directory.
pub fn load_package(dir: &Path) -> Result<Package> {
    let text = String::from_utf8(read(&dir.join(MANIFEST_FILE))?)
        .map_err(|_| ReportError::parse(MANIFEST_FILE, "not UTF-8"))?;
    let manifest = Manifest::parse(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(ReportError::Package(format!(
            "unsupported manifest version {:?}, expected {MANIFEST_VERSION}",
            manifest.version
        )));
    }

    let mut files = BTreeMap::new();
    for (key, name) in &manifest.data_files {
        let bytes = read(&dir.join(name))?;
        let expected = manifest
            .hashes
            .get(key)
            .ok_or_else(|| ReportError::Package(format!("no hash entry for data file {key} ({name})")))?;
        if !hash::matches(expected, &bytes) {
            return Err(ReportError::Integrity {
                file: name.clone(),
                expected: expected.clone(),
                actual: hash::sha256_tag(&bytes),
            });
        }
        files.insert(key.clone(), (name.clone(), bytes));
    }

    for key in REQUIRED {
        if !files.contains_key(key) {
            return Err(ReportError::Package(format!("required data file {key} is not listed")));
        }
    }
    let regime = Regime::parse(&manifest.regime).map_err(|e| ReportError::parse(MANIFEST_FILE, e))?;

    let mut take = |key: &str| files.remove(key);
    let nodes_p = take(KEY_NODES_P).unwrap();
    let nodes_o = take(KEY_NODES_O).unwrap();
    let b_p = take(KEY_B_P).unwrap();
    let v_o = take(KEY_V_O).unwrap();
    let o_po = take(KEY_O_PO).unwrap();
    let o_op = take(KEY_O_OP).unwrap();
    let v_p = take(KEY_V_P);
    let o_pp = take(KEY_O_PP);
    let flows = take(KEY_FLOWS);
    let clearing = take(KEY_CLEARING);
    let pov = take(KEY_POV);

    let nodes_p = csvio::read_nodes(&nodes_p.1, &nodes_p.0)?;
    if regime == Regime::B && o_pp.is_none() && nodes_p.len() != 1 {
        return Err(ReportError::Package(format!(
            "regime B with {} perimeter nodes requires {KEY_O_PP}",
            nodes_p.len()
        )));
    }
    if regime == Regime::A && v_p.is_none() {
        return Err(ReportError::Package(format!("regime A requires observed internal values {KEY_V_P}")));
    }

    Ok(Package {
        nodes_p,
        nodes_o: csvio::read_nodes(&nodes_o.1, &nodes_o.0)?,
        b_p: csvio::read_vector(&b_p.1, &b_p.0, "b")?,
        v_o: csvio::read_vector(&v_o.1, &v_o.0, "v")?,
        v_p: v_p.map(|(n, b)| csvio::read_vector(&b, &n, "v")).transpose()?,
        o_po: csvio::read_matrix(&o_po.1, &o_po.0, "id_P")?,
        o_op: csvio::read_matrix(&o_op.1, &o_op.0, "id_O")?,
        o_pp: o_pp.map(|(n, b)| csvio::read_matrix(&b, &n, "id_P")).transpose()?,
        flows: flows.map(|(n, b)| csvio::read_flows(&b, &n)).transpose()?.unwrap_or_default(),
        clearing: clearing.map(|(_, b)| ClearingSpec::parse(&b)).transpose()?,
        pov: pov
            .map(|(_, b)| {
                let text = String::from_utf8(b).map_err(|_| ReportError::parse(POV_FILE, "not UTF-8"))?;
                PovDoc::parse(&text)
            })
            .transpose()?,
        other_files: files,
        manifest,
    })
}

/// Writes every component plus `manifest.yaml`, refreshing the file list and hashes in
/// `pkg.manifest`. Output bytes depend only on the package contents.
pub fn emit_package(pkg: &mut Package, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ReportError::io(dir, e))?;
    let mut outputs: Vec<(&str, Vec<u8>)> = vec![
        (KEY_NODES_P, csvio::write_nodes(&pkg.nodes_p)),
        (KEY_NODES_O, csvio::write_nodes(&pkg.nodes_o)),
        (KEY_B_P, csvio::write_vector(&pkg.b_p, "b")),
        (KEY_V_O, csvio::write_vector(&pkg.v_o, "v")),
        (KEY_O_PO, csvio::write_matrix(&pkg.o_po)),
        (KEY_O_OP, csvio::write_matrix(&pkg.o_op)),
    ];
    if let Some(v) = &pkg.v_p {
        outputs.push((KEY_V_P, csvio::write_vector(v, "v")));
    }
    if let Some(m) = &pkg.o_pp {
        outputs.push((KEY_O_PP, csvio::write_matrix(m)));
    }
    if !pkg.flows.is_empty() {
        outputs.push((KEY_FLOWS, csvio::write_flows(&pkg.flows)));
    }
    if let Some(c) = &pkg.clearing {
        outputs.push((KEY_CLEARING, c.to_json().into_bytes()));
    }
    if let Some(p) = &pkg.pov {
        outputs.push((KEY_POV, p.to_json()?.into_bytes()));
    }

    let old_names = std::mem::take(&mut pkg.manifest.data_files);
    pkg.manifest.hashes.clear();
    let mut write = |key: &str, name: String, bytes: &[u8]| -> Result<()> {
        let path = dir.join(&name);
        fs::write(&path, bytes).map_err(|e| ReportError::io(&path, e))?;
        pkg.manifest.hashes.insert(key.to_string(), hash::sha256_tag(bytes));
        pkg.manifest.data_files.insert(key.to_string(), name);
        Ok(())
    };
    for (key, bytes) in &outputs {
        let name = old_names.get(*key).cloned().unwrap_or_else(|| default_file(key));
        write(key, name, bytes)?;
    }
    for (key, (name, bytes)) in &pkg.other_files {
        write(key, name.clone(), bytes)?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, pkg.manifest.to_yaml()).map_err(|e| ReportError::io(&path, e))
}

fn node_ids(nodes: &[NodeRecord]) -> Result<Vec<NodeId>> {
    Ok(nodes
        .iter()
        .map(|n| NodeId::new(n.id.as_str()))
        .collect::<cbv_core::Result<Vec<_>>>()?)
}

fn same_ids(file: &str, what: &str, got: &[String], want: &[NodeRecord]) -> Result<()> {
    let a: BTreeSet<&str> = got.iter().map(String::as_str).collect();
    let b: BTreeSet<&str> = want.iter().map(|n| n.id.as_str()).collect();
    if a != b || got.len() != want.len() {
        return Err(ReportError::Package(format!("{file}: {what} do not match the node list")));
    }
    Ok(())
}

fn align_vector(v: &LabeledVector, nodes: &[NodeRecord], file: &str) -> Result<Vec<f64>> {
    same_ids(file, "ids", &v.ids, nodes)?;
    Ok(nodes.iter().map(|n| v.get(&n.id).unwrap()).collect())
}

fn align_matrix(m: &LabeledMatrix, rows: &[NodeRecord], cols: &[NodeRecord], file: &str) -> Result<SparseMatrix> {
    same_ids(file, "row ids", &m.row_ids, rows)?;
    same_ids(file, "column ids", &m.col_ids, cols)?;
    let col_pos: BTreeMap<&str, usize> = cols.iter().enumerate().map(|(k, n)| (n.id.as_str(), k)).collect();
    let row_pos: BTreeMap<&str, usize> = rows.iter().enumerate().map(|(k, n)| (n.id.as_str(), k)).collect();
    let mut t = Vec::new();
    for (rid, row) in m.row_ids.iter().zip(&m.values) {
        for (cid, v) in m.col_ids.iter().zip(row) {
            t.push((row_pos[rid.as_str()], col_pos[cid.as_str()], *v));
        }
    }
    Ok(SparseMatrix::from_triplets(rows.len(), cols.len(), t)?)
}

fn labeled(m: &SparseMatrix, corner: &str, rows: &[NodeId], cols: &[NodeId]) -> LabeledMatrix {
    let d = m.to_dense();
    LabeledMatrix {
        corner: corner.to_string(),
        row_ids: rows.iter().map(|x| x.to_string()).collect(),
        col_ids: cols.iter().map(|x| x.to_string()).collect(),
        values: (0..d.nrows()).map(|r| (0..d.ncols()).map(|c| d[(r, c)]).collect()).collect(),
    }
}

fn vector(ids: &[NodeId], values: &[f64]) -> LabeledVector {
    LabeledVector {
        ids: ids.iter().map(|x| x.to_string()).collect(),
        values: values.to_vec(),
    }
}

/// Bound evidence for a regime-B internal block, or `None` when `I − O_PP` is singular.
pub fn stability_evidence(o_pp: &SparseMatrix) -> Option<StabilityBlock> {
    let bound = spectral_radius_bound(o_pp).ok()?;
    let inv = internal_inverse(o_pp).ok()?;
    Some(StabilityBlock {
        rho_bound: (bound.rho_upper < 1.0).then_some(bound.rho_upper),
        inverse_norm_inf: Some(op_norm(&inv, NormKind::Inf)),
        method: Some("min(norm_1, norm_inf); dense inverse".to_string()),
        extra: BTreeMap::new(),
    })
}

impl Package {
    /// Builds a package from in-memory statistics. Node type is `node` and labels are the ids.
    pub fn from_statistics(stats: &CutStatistics, observer: &Observer, perimeter: ManifestPerimeter) -> Result<Self> {
        let nodes = |ids: &[NodeId]| {
            ids.iter()
                .map(|id| NodeRecord {
                    id: id.to_string(),
                    node_type: "node".to_string(),
                    label: id.to_string(),
                })
                .collect::<Vec<_>>()
        };
        let flow_records = |flows: &[PricedFlow], from: &[NodeId], to: &[NodeId]| {
            flows
                .iter()
                .map(|f| FlowRecord {
                    from: from[f.from].to_string(),
                    to: to[f.to].to_string(),
                    kind: f.kind.as_str().to_string(),
                    amount: f.amount,
                })
                .collect::<Vec<_>>()
        };
        let mut flows = flow_records(&stats.flows_po, &stats.p_ids, &stats.o_ids);
        flows.extend(flow_records(&stats.flows_op, &stats.o_ids, &stats.p_ids));

        let clearing = match &stats.clearing {
            ClearingState::PreClearing => ClearingBlock::default(),
            ClearingState::PostClearing { engine } => ClearingBlock {
                used: true,
                engine: Some(engine.clone()),
                ..ClearingBlock::default()
            },
        };
        let fx = observer.fx_ppp.as_ref();
        let manifest = Manifest {
            version: MANIFEST_VERSION.to_string(),
            observer: ManifestObserver {
                currency: observer.units.clone(),
                date: Some(observer.date.format("%Y-%m-%d").to_string()),
                fx: fx.and_then(|f| f.fx_source.clone()).map(|provider| FxBlock {
                    provider: Some(provider),
                    date: None,
                    pairs: Vec::new(),
                    method: None,
                    extra: BTreeMap::new(),
                }),
                ppp: Some(PppBlock {
                    used: fx.is_some_and(|f| f.ppp_source.is_some()),
                    source: fx.and_then(|f| f.ppp_source.clone()),
                    base_year: None,
                    extra: BTreeMap::new(),
                }),
                sdf: Some(SdfBlock {
                    used: observer.sdf.is_some(),
                    measure: observer.sdf.as_ref().map(|s| s.measure.clone()),
                    spec: observer.sdf.as_ref().and_then(|s| s.curve_source.clone()),
                    extra: BTreeMap::new(),
                }),
                prices: None,
                extra: BTreeMap::new(),
            },
            perimeter,
            regime: observer.regime.as_str().to_string(),
            clearing,
            data_files: BTreeMap::new(),
            hashes: BTreeMap::new(),
            stability: stats.o_pp.as_ref().and_then(stability_evidence),
            notes: Vec::new(),
            extra: BTreeMap::new(),
        };
        let p_names: Vec<String> = stats.p_ids.iter().map(|x| x.to_string()).collect();
        Ok(Package {
            manifest,
            nodes_p: nodes(&stats.p_ids),
            nodes_o: nodes(&stats.o_ids),
            b_p: vector(&stats.p_ids, &stats.b_p),
            v_o: vector(&stats.o_ids, &stats.v_o),
            v_p: stats.v_p.as_ref().map(|v| vector(&stats.p_ids, v)),
            o_po: labeled(&stats.o_po, "id_P", &stats.p_ids, &stats.o_ids),
            o_op: labeled(&stats.o_op, "id_O", &stats.o_ids, &stats.p_ids),
            o_pp: stats.o_pp.as_ref().map(|m| labeled(m, "id_P", &stats.p_ids, &stats.p_ids)),
            flows,
            clearing: None,
            pov: Some(PovDoc::from_observer(observer, &p_names, &PovMetadata::default())),
            other_files: BTreeMap::new(),
        })
    }

    pub fn regime(&self) -> Result<Regime> {
        Regime::parse(&self.manifest.regime).map_err(|e| ReportError::parse(MANIFEST_FILE, e))
    }

    /// Border statistics in node-list order.
    ///
    /// A single-node perimeter without `O_PP` gets a zero internal block.
    pub fn cut_statistics(&self) -> Result<CutStatistics> {
        let p_ids = node_ids(&self.nodes_p)?;
        let o_ids = node_ids(&self.nodes_o)?;
        let name = |key: &str| self.manifest.data_files.get(key).cloned().unwrap_or_else(|| default_file(key));
        let mut stats = CutStatistics::new(
            p_ids.clone(),
            o_ids.clone(),
            align_vector(&self.b_p, &self.nodes_p, &name(KEY_B_P))?,
            align_vector(&self.v_o, &self.nodes_o, &name(KEY_V_O))?,
            align_matrix(&self.o_po, &self.nodes_p, &self.nodes_o, &name(KEY_O_PO))?,
            align_matrix(&self.o_op, &self.nodes_o, &self.nodes_p, &name(KEY_O_OP))?,
        )?;
        if let Some(v) = &self.v_p {
            stats = stats.with_v_p(align_vector(v, &self.nodes_p, &name(KEY_V_P))?)?;
        }
        match &self.o_pp {
            Some(m) => stats = stats.with_o_pp(align_matrix(m, &self.nodes_p, &self.nodes_p, &name(KEY_O_PP))?)?,
            None if self.nodes_p.len() == 1 => stats = stats.with_o_pp(SparseMatrix::zeros(1, 1))?,
            None => {}
        }
        let pos = |ids: &[NodeId], s: &str| ids.iter().position(|x| x.as_str() == s);
        let (mut po, mut op) = (Vec::new(), Vec::new());
        for f in &self.flows {
            let kind = FlowKind::parse(&f.kind)?;
            match (pos(&p_ids, &f.from), pos(&o_ids, &f.to), pos(&o_ids, &f.from), pos(&p_ids, &f.to)) {
                (Some(from), Some(to), _, _) => po.push(PricedFlow { from, to, kind, amount: f.amount }),
                (_, _, Some(from), Some(to)) => op.push(PricedFlow { from, to, kind, amount: f.amount }),
                _ => {
                    return Err(ReportError::Package(format!(
                        "{}: flow {} -> {} does not cross the boundary",
                        name(KEY_FLOWS),
                        f.from,
                        f.to
                    )))
                }
            }
        }
        stats = stats.with_flows(po, op)?;
        if self.manifest.clearing.used {
            stats.clearing = ClearingState::PostClearing {
                engine: self.manifest.clearing.engine.clone().unwrap_or_default(),
            };
        }
        Ok(stats)
    }

    /// The observer from `pov.json`, or one assembled from the manifest when no PoV is packaged.
    pub fn observer(&self) -> Result<Observer> {
        if let Some(pov) = &self.pov {
            let mut observer = pov.to_observer()?;
            observer.perimeter_ref = self.manifest.perimeter.p_ref.clone();
            return Ok(observer);
        }
        let m = &self.manifest;
        let date = m
            .observer
            .date
            .clone()
            .or_else(|| m.observer.fx.as_ref().and_then(|f| f.date.clone()))
            .ok_or_else(|| ReportError::Package("observer has no date (observer.date or observer.fx.date)".into()))?;
        Ok(Observer::new(
            m.perimeter.p_ref.clone(),
            &m.observer.currency,
            &date,
            self.regime()?,
            ControlRuleSpec::default(),
        )?)
    }

    pub fn file_name(&self, key: &str) -> String {
        self.manifest.data_files.get(key).cloned().unwrap_or_else(|| default_file(key))
    }
}

fn check_ids(report: &mut ValidationReport, file: &str, what: &str, got: &[String], want: &[NodeRecord]) {
    let want_set: BTreeSet<&str> = want.iter().map(|n| n.id.as_str()).collect();
    let got_set: BTreeSet<&str> = got.iter().map(String::as_str).collect();
    for id in want_set.difference(&got_set) {
        report.push(RuleId::D1, Severity::Error, format!("{what}: node {id} missing"), file);
    }
    for id in got_set.difference(&want_set) {
        report.push(RuleId::D1, Severity::Error, format!("{what}: unknown node {id}"), file);
    }
}

fn check_shares(report: &mut ValidationReport, file: &str, m: &LabeledMatrix) {
    for (r, row) in m.row_ids.iter().zip(&m.values) {
        for (c, v) in m.col_ids.iter().zip(row) {
            if *v < 0.0 {
                report.push(RuleId::D2, Severity::Error, format!("negative share {v}"), format!("{file}[{r},{c}]"));
            } else if *v > 1.0 {
                report.push(RuleId::D2, Severity::Warning, format!("share {v} exceeds 1"), format!("{file}[{r},{c}]"));
            }
        }
    }
}

/// Applies rules D1 to D5 plus hash-list and schema checks. Never fails; problems become findings.
pub fn validate_package(pkg: &Package) -> ValidationReport {
    let mut report = ValidationReport::new();
    let m = &pkg.manifest;

    // schema
    if m.version != MANIFEST_VERSION {
        report.push(RuleId::Schema, Severity::Error, format!("version {:?}", m.version), MANIFEST_FILE);
    }
    let regime = Regime::parse(&m.regime).ok();
    if regime.is_none() {
        report.push(RuleId::Schema, Severity::Error, format!("regime {:?} is not A or B", m.regime), MANIFEST_FILE);
    }
    if !is_currency_code(&m.observer.currency) {
        report.push(
            RuleId::Schema,
            Severity::Error,
            format!("currency {:?} is not an ISO-4217 code", m.observer.currency),
            MANIFEST_FILE,
        );
    }
    let dates = [("observer.date", m.observer.date.as_ref()), ("observer.fx.date", m.observer.fx.as_ref().and_then(|f| f.date.as_ref()))];
    for (field, d) in dates {
        if let Some(d) = d {
            if parse_date(d).is_err() {
                report.push(RuleId::Schema, Severity::Error, format!("{field} {d:?} is not YYYY-MM-DD"), MANIFEST_FILE);
            }
        }
    }
    for f in m.unknown_fields() {
        report.push(RuleId::Schema, Severity::Note, format!("field {f} is outside the v1.0 schema"), MANIFEST_FILE);
    }
    if let Some(p) = &pkg.pov {
        for f in p.unknown_fields() {
            report.push(RuleId::Schema, Severity::Note, format!("field {f} is outside the v1.0 schema"), pkg.file_name(KEY_POV));
        }
        for f in p.missing_required() {
            report.push(RuleId::Schema, Severity::Error, format!("required field {f} missing or malformed"), pkg.file_name(KEY_POV));
        }
    }
    if let Some(c) = &pkg.clearing {
        for f in c.extra.keys() {
            report.push(RuleId::Schema, Severity::Note, format!("field {f} is outside the v1.0 schema"), pkg.file_name(KEY_CLEARING));
        }
    }

    // hash list
    for key in m.data_files.keys() {
        match m.hashes.get(key) {
            None => report.push(RuleId::Hash, Severity::Error, format!("no hash entry for {key}"), MANIFEST_FILE),
            Some(h) if !h.starts_with(hash::PREFIX) => {
                report.push(RuleId::Hash, Severity::Error, format!("hash for {key} is not sha256:<hex>"), MANIFEST_FILE)
            }
            _ => {}
        }
    }
    for key in m.hashes.keys().filter(|k| !m.data_files.contains_key(*k)) {
        report.push(RuleId::Hash, Severity::Warning, format!("hash entry {key} has no data file"), MANIFEST_FILE);
    }

    // D1
    let f = |k: &str| pkg.file_name(k);
    check_ids(&mut report, &f(KEY_B_P), "ids", &pkg.b_p.ids, &pkg.nodes_p);
    check_ids(&mut report, &f(KEY_V_O), "ids", &pkg.v_o.ids, &pkg.nodes_o);
    if let Some(v) = &pkg.v_p {
        check_ids(&mut report, &f(KEY_V_P), "ids", &v.ids, &pkg.nodes_p);
    }
    check_ids(&mut report, &f(KEY_O_PO), "rows", &pkg.o_po.row_ids, &pkg.nodes_p);
    check_ids(&mut report, &f(KEY_O_PO), "columns", &pkg.o_po.col_ids, &pkg.nodes_o);
    check_ids(&mut report, &f(KEY_O_OP), "rows", &pkg.o_op.row_ids, &pkg.nodes_o);
    check_ids(&mut report, &f(KEY_O_OP), "columns", &pkg.o_op.col_ids, &pkg.nodes_p);
    if let Some(pp) = &pkg.o_pp {
        check_ids(&mut report, &f(KEY_O_PP), "rows", &pp.row_ids, &pkg.nodes_p);
        check_ids(&mut report, &f(KEY_O_PP), "columns", &pp.col_ids, &pkg.nodes_p);
    }
    let p_set: BTreeSet<&str> = pkg.nodes_p.iter().map(|n| n.id.as_str()).collect();
    let o_set: BTreeSet<&str> = pkg.nodes_o.iter().map(|n| n.id.as_str()).collect();
    for id in p_set.intersection(&o_set) {
        report.push(RuleId::D1, Severity::Error, format!("node {id} is listed in both P and O"), f(KEY_NODES_O));
    }
    for (k, fl) in pkg.flows.iter().enumerate() {
        let crosses = (p_set.contains(fl.from.as_str()) && o_set.contains(fl.to.as_str()))
            || (o_set.contains(fl.from.as_str()) && p_set.contains(fl.to.as_str()));
        if !crosses {
            report.push(
                RuleId::D1,
                Severity::Error,
                format!("flow {} -> {} does not cross the boundary", fl.from, fl.to),
                format!("{}[{}]", f(KEY_FLOWS), k + 2),
            );
        }
        if FlowKind::parse(&fl.kind).is_err() {
            report.push(RuleId::Schema, Severity::Error, format!("unknown flow type {:?}", fl.kind), format!("{}[{}]", f(KEY_FLOWS), k + 2));
        }
    }

    // D2
    check_shares(&mut report, &f(KEY_O_PO), &pkg.o_po);
    check_shares(&mut report, &f(KEY_O_OP), &pkg.o_op);
    if let Some(pp) = &pkg.o_pp {
        check_shares(&mut report, &f(KEY_O_PP), pp);
    }
    for (k, fl) in pkg.flows.iter().enumerate() {
        if fl.amount < 0.0 {
            report.push(RuleId::D2, Severity::Error, format!("negative flow amount {}", fl.amount), format!("{}[{}]", f(KEY_FLOWS), k + 2));
        }
    }
    let justified = m.notes.iter().any(|n| n.to_ascii_lowercase().contains("negative"));
    let mut signed = vec![(KEY_B_P, &pkg.b_p), (KEY_V_O, &pkg.v_o)];
    if let Some(v) = &pkg.v_p {
        signed.push((KEY_V_P, v));
    }
    for (key, v) in signed {
        for (id, x) in v.ids.iter().zip(&v.values) {
            if *x < 0.0 {
                let (sev, msg) = if justified {
                    (Severity::Note, format!("negative value {x} (justified in notes)"))
                } else {
                    (Severity::Error, format!("negative value {x} without a justification note"))
                };
                report.push(RuleId::D2, sev, msg, format!("{}[{id}]", f(key)));
            }
        }
    }

    // D3
    if let Some(p) = &pkg.pov {
        let o = &p.observer;
        if o.units != m.observer.currency {
            report.push(RuleId::D3, Severity::Error, format!("PoV units {} differ from manifest currency {}", o.units, m.observer.currency), f(KEY_POV));
        }
        if let Some(d) = &m.observer.date {
            if &o.date != d {
                report.push(RuleId::D3, Severity::Error, format!("PoV date {} differs from manifest date {d}", o.date), f(KEY_POV));
            }
        }
        if o.information_regime != m.regime {
            report.push(
                RuleId::D3,
                Severity::Error,
                format!("PoV regime {} differs from manifest regime {}", o.information_regime, m.regime),
                f(KEY_POV),
            );
        }
        let members: BTreeSet<&str> = o.p.iter().map(String::as_str).collect();
        if members != p_set {
            report.push(RuleId::D3, Severity::Error, "PoV perimeter differs from nodes_P", f(KEY_POV));
        }
    }

    // D4
    let has_proof = m.data_files.contains_key(KEY_PROOF_STABILITY);
    let reported = m
        .stability
        .as_ref()
        .is_some_and(|s| s.rho_bound.is_some() || s.inverse_norm_inf.is_some());
    match &pkg.o_pp {
        Some(_) if !(reported || has_proof) => report.push(
            RuleId::D4,
            Severity::Error,
            "O_PP provided without a bound on ||(I - O_PP)^-1|| or rho(O_PP)",
            MANIFEST_FILE,
        ),
        Some(_) => {
            if let (Some(claim), Ok(stats)) = (m.stability.as_ref().and_then(|s| s.rho_bound), pkg.cut_statistics()) {
                if let Some(o_pp) = &stats.o_pp {
                    if let Ok(b) = spectral_radius_bound(o_pp) {
                        if claim < b.power_iteration_estimate - 1e-9 {
                            report.push(
                                RuleId::D4,
                                Severity::Warning,
                                format!("reported rho bound {claim} is below the estimate {}", b.power_iteration_estimate),
                                MANIFEST_FILE,
                            );
                        }
                    }
                }
            }
        }
        None if regime == Some(Regime::B) && m.notes.is_empty() => report.push(
            RuleId::D4,
            Severity::Warning,
            "regime B without O_PP; add a note explaining why it is not required",
            MANIFEST_FILE,
        ),
        None => {}
    }

    // D5
    match (&pkg.clearing, m.clearing.used) {
        (None, true) => report.push(RuleId::D5, Severity::Error, "clearing used but no clearing_spec file", MANIFEST_FILE),
        (Some(_), false) => report.push(
            RuleId::D5,
            Severity::Warning,
            "clearing_spec present but flows are declared pre-clearing",
            MANIFEST_FILE,
        ),
        (Some(spec), true) => {
            if m.clearing.engine.as_deref() != Some(spec.engine.as_str()) {
                report.push(
                    RuleId::D5,
                    Severity::Error,
                    format!("manifest engine {:?} differs from clearing spec engine {:?}", m.clearing.engine, spec.engine),
                    MANIFEST_FILE,
                );
            }
            if spec.selection().is_err() {
                report.push(RuleId::D5, Severity::Error, format!("unknown selection {:?}", spec.selection), f(KEY_CLEARING));
            }
        }
        (None, false) => {}
    }

    report
}

/// Loads then validates; load failures become findings.
pub fn validate_directory(dir: &Path) -> ValidationReport {
    match load_package(dir) {
        Ok(pkg) => validate_package(&pkg),
        Err(e) => {
            let mut report = ValidationReport::new();
            let (rule, location) = match &e {
                ReportError::Integrity { file, .. } => (RuleId::Hash, file.clone()),
                ReportError::Parse { file, .. } => (RuleId::Schema, file.clone()),
                ReportError::Io { path, .. } => (RuleId::Schema, path.display().to_string()),
                _ => (RuleId::Schema, MANIFEST_FILE.to_string()),
            };
            report.push(rule, Severity::Error, e.to_string(), location);
            report
        }
    }
}
