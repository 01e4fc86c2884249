//! On-disk formats: graph JSON, headerless matrix CSV, labels and dataset
//! bundles.
//!
//! A bundle is a directory holding `graph.json`, `signals.csv`, `meta.json`
//! and optionally `labels.csv`. Bundles and result files are written to a
//! temporary sibling first and renamed into place, so a failed write leaves
//! nothing behind.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{weights_to_laplacian, LaplacianMatrix, WeightVector};
use crate::moments::SignalMatrix;
use crate::synth::{Dataset, DatasetSpec, GraphSpec};

pub const GRAPH_FILE: &str = "graph.json";
pub const SIGNALS_FILE: &str = "signals.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub d: usize,
    pub edges: Vec<Edge>,
}

impl GraphFile {
    /// Edges with positive weight, 1-based with `i > j`, column by column.
    pub fn from_laplacian(l: &LaplacianMatrix) -> Self {
        let d = l.dim();
        let m = l.as_matrix();
        let mut edges = Vec::new();
        for j in 0..d {
            for i in j + 1..d {
                let w = -m[(i, j)];
                if w > 0.0 {
                    edges.push(Edge { i: i + 1, j: j + 1, w });
                }
            }
        }
        Self { d, edges }
    }

    pub fn to_laplacian(&self) -> Result<LaplacianMatrix> {
        if self.d < 2 {
            return Err(Error::Format(format!("graph needs d >= 2, got {}", self.d)));
        }
        let mut w = WeightVector::zeros(self.d)?.into_values();
        let mut seen = HashSet::new();
        for e in &self.edges {
            let (i, j) = (e.i.max(e.j), e.i.min(e.j));
            if i == j {
                return Err(Error::Format(format!("self-loop at vertex {i}")));
            }
            if j == 0 || i > self.d {
                return Err(Error::Format(format!("edge ({}, {}) outside 1..={}", e.i, e.j, self.d)));
            }
            if !(e.w >= 0.0) || !e.w.is_finite() {
                return Err(Error::Format(format!("edge ({}, {}) has invalid weight {}", e.i, e.j, e.w)));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Format(format!("duplicate edge ({i}, {j})")));
            }
            w[crate::graph::lower_index(i - 1, j - 1, self.d)] = e.w;
        }
        Ok(weights_to_laplacian(&WeightVector::from_vector(self.d, w)?))
    }
}

/// Dataset metadata. `sigma` and `tau` are absent for SBM graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub seed: u64,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub noise_sigma: f64,
    /// Training samples.
    #[serde(rename = "N")]
    pub n: usize,
    /// Held-out samples stored after the training columns.
    #[serde(default)]
    pub n_test: usize,
}

impl BundleMeta {
    pub fn for_spec(spec: &DatasetSpec) -> Self {
        let (sigma, tau) = match spec.graph {
            GraphSpec::Rbf { sigma, tau, .. } => (Some(sigma), Some(tau)),
            GraphSpec::Sbm { .. } => (None, None),
        };
        Self { seed: spec.seed, sigma, tau, noise_sigma: spec.noise_sigma, n: spec.n, n_test: spec.test_n }
    }
}

/// A loaded bundle. Ingested data may come without a ground truth graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub groundtruth: Option<LaplacianMatrix>,
    pub signals: SignalMatrix,
    pub labels: Option<Vec<usize>>,
    pub meta: BundleMeta,
}

impl Bundle {
    pub fn train(&self) -> Result<SignalMatrix> {
        self.signals.columns(0, self.meta.n)
    }

    pub fn test(&self) -> Result<SignalMatrix> {
        if self.meta.n_test == 0 {
            return Err(Error::arg("bundle has no held-out columns"));
        }
        self.signals.columns(self.meta.n, self.meta.n_test)
    }
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn parse_matrix(text: &str, what: &str) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{what}: {e}")))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Format(format!("{what}: row {} has a non-numeric entry", rows.len() + 1)))?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::Format(format!("{what}: no data")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::arg(format!("{} does not exist", path.display()))
        } else {
            Error::Io(e)
        }
    })
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let res = (|| {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn write_graph(path: &Path, l: &LaplacianMatrix) -> Result<()> {
    write_json(path, &GraphFile::from_laplacian(l))
}

pub fn read_graph(path: &Path) -> Result<LaplacianMatrix> {
    let file: GraphFile =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    file.to_laplacian()
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, format_matrix(m).as_bytes())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&read_to_string(path)?, &path.display().to_string())
}

/// Signals are stored `d` rows by `N` columns.
pub fn read_signals(path: &Path) -> Result<SignalMatrix> {
    SignalMatrix::new(read_matrix_csv(path)?)
}

fn format_labels(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<usize>().map_err(|_| Error::Format(format!("{}: bad label {l:?}", path.display()))))
        .collect()
}

/// Writes the bundle into `dir`, replacing any previous bundle there.
pub fn write_bundle(dir: &Path, dataset: &Dataset, spec: &DatasetSpec) -> Result<()> {
    let staging = temp_sibling(dir);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let res = (|| -> Result<()> {
        fs::create_dir_all(&staging)?;
        let put = |name: &str, bytes: &[u8]| -> Result<()> { Ok(fs::write(staging.join(name), bytes)?) };
        put(GRAPH_FILE, &to_json_bytes(&GraphFile::from_laplacian(&dataset.groundtruth))?)?;
        put(SIGNALS_FILE, format_matrix(dataset.signals.as_matrix()).as_bytes())?;
        if let Some(labels) = &dataset.labels {
            put(LABELS_FILE, format_labels(labels).as_bytes())?;
        }
        put(META_FILE, &to_json_bytes(&BundleMeta::for_spec(spec))?)?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&staging, dir)?;
        Ok(())
    })();
    if res.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    res
}

pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    if !dir.is_dir() {
        return Err(Error::arg(format!("bundle directory {} does not exist", dir.display())));
    }
    let signals = read_signals(&dir.join(SIGNALS_FILE))?;
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        serde_json::from_str(&read_to_string(&meta_path)?).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?
    } else {
        BundleMeta { seed: 0, sigma: None, tau: None, noise_sigma: 0.0, n: signals.samples(), n_test: 0 }
    };
    let meta: BundleMeta = meta;
    if meta.n == 0 || meta.n + meta.n_test != signals.samples() {
        return Err(Error::Format(format!(
            "meta declares {} + {} samples, signals.csv has {}",
            meta.n,
            meta.n_test,
            signals.samples()
        )));
    }
    let graph_path = dir.join(GRAPH_FILE);
    let groundtruth = if graph_path.exists() { Some(read_graph(&graph_path)?) } else { None };
    if let Some(g) = &groundtruth {
        if g.dim() != signals.dim() {
            return Err(Error::Format(format!("graph has d = {}, signals have d = {}", g.dim(), signals.dim())));
        }
    }
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() { Some(read_labels(&labels_path)?) } else { None };
    if let Some(l) = &labels {
        if l.len() != signals.dim() {
            return Err(Error::Format(format!("{} labels for {} vertices", l.len(), signals.dim())));
        }
    }
    Ok(Bundle { groundtruth, signals, labels, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_dataset;

    fn sbm_spec() -> DatasetSpec {
        DatasetSpec {
            graph: GraphSpec::Sbm { cluster_sizes: vec![3, 4], p_in: 0.8, p_out: 0.1 },
            n: 6,
            noise_sigma: 0.1,
            seed: 5,
            test_n: 2,
        }
    }

    #[test]
    fn graph_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let l = weights_to_laplacian(&WeightVector::new(4, vec![0.5, 0.0, 1.0 / 3.0, 2.0, 0.0, 1e-7]).unwrap());
        let p = dir.path().join("g.json");
        write_graph(&p, &l).unwrap();
        assert_eq!(read_graph(&p).unwrap(), l);
        let file: GraphFile = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(file.edges.len(), 4);
        assert!(file.edges.iter().all(|e| e.i > e.j));
        assert_eq!(file.edges[0], Edge { i: 2, j: 1, w: 0.5 });
    }

    #[test]
    fn graph_loader_rejects_bad_edges() {
        let bad = [
            r#"{"d": 3, "edges": [{"i": 2, "j": 2, "w": 1.0}]}"#,
            r#"{"d": 3, "edges": [{"i": 2, "j": 1, "w": -1.0}]}"#,
            r#"{"d": 3, "edges": [{"i": 2, "j": 1, "w": 1.0}, {"i": 1, "j": 2, "w": 1.0}]}"#,
            r#"{"d": 3, "edges": [{"i": 4, "j": 1, "w": 1.0}]}"#,
            r#"{"d": 3, "edges": [{"i": 1, "j": 0, "w": 1.0}]}"#,
            r#"{"d": 3}"#,
        ];
        for text in bad {
            let file: std::result::Result<GraphFile, _> = serde_json::from_str(text);
            assert!(file.map_err(Error::from).and_then(|f| f.to_laplacian()).is_err(), "{text}");
        }
    }

    #[test]
    fn matrix_csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1e-300, 3.0, 1.0 / 3.0, 2.5e17, -0.0]);
        let p = dir.path().join("m.csv");
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
        let text = fs::read_to_string(&p).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn matrix_csv_rejects_garbage() {
        assert!(parse_matrix("1,2\n3\n", "x").is_err());
        assert!(parse_matrix("1,abc\n", "x").is_err());
        assert!(parse_matrix("1,NaN\n", "x").is_err());
        assert!(parse_matrix("", "x").is_err());
    }

    #[test]
    fn bundle_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = sbm_spec();
        let data = generate_dataset(&spec).unwrap();
        let path = dir.path().join("bundle");
        write_bundle(&path, &data, &spec).unwrap();
        let b = read_bundle(&path).unwrap();
        assert_eq!(b.groundtruth.as_ref(), Some(&data.groundtruth));
        assert_eq!(b.signals, data.signals);
        assert_eq!(b.labels, data.labels);
        assert_eq!(b.meta, BundleMeta::for_spec(&spec));
        assert_eq!(b.train().unwrap(), data.train().unwrap());
        assert_eq!(b.test().unwrap(), data.test().unwrap());

        // rewriting replaces the bundle and leaves no staging directory
        write_bundle(&path, &data, &spec).unwrap();
        let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn meta_uses_paper_keys() {
        let spec = DatasetSpec { graph: GraphSpec::Rbf { d: 5, sigma: 0.5, tau: 0.7 }, n: 10, noise_sigma: 0.1, seed: 9, test_n: 0 };
        let v: serde_json::Value = serde_json::to_value(BundleMeta::for_spec(&spec)).unwrap();
        for key in ["seed", "sigma", "tau", "noise_sigma", "N"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn missing_bundle_is_an_argument_error() {
        let err = read_bundle(Path::new("/nonexistent/bundle")).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn labels_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        write_atomic(&p, format_labels(&[0, 2, 1]).as_bytes()).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 2, 1]);
    }
}
