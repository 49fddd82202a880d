use std::path::Path;

use ndarray::Array2;

use super::{Csr, GraphDataset, Split};
use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{GapError, Result};

const DATASET_MAGIC: [u8; 4] = *b"GAPD";
const DATASET_VERSION: u16 = 1;

/// Seed of the split assigned to CSV datasets without a splits file.
pub const DEFAULT_SPLIT_SEED: u64 = 0;

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> GapError {
    GapError::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| GapError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> GapError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => GapError::io(path, e),
        other => malformed(path, line, format!("{other:?}")),
    }
}

/// Loads `id,label,f0,...` nodes and `src,dst` edges. Splits default to a
/// fixed-seed 75/10/15 partition; see [`apply_splits_csv`].
pub fn load_csv(nodes_path: &Path, edges_path: &Path) -> Result<GraphDataset> {
    let mut nodes = csv_reader(nodes_path)?;
    let header = nodes.headers().map_err(|e| csv_error(nodes_path, e))?.clone();
    if header.len() < 2 || &header[0] != "id" || &header[1] != "label" {
        return Err(malformed(nodes_path, 1, "header must start with `id,label`"));
    }
    let d = header.len() - 2;

    let mut rows: Vec<Option<(usize, Vec<f32>)>> = Vec::new();
    for record in nodes.records() {
        let record = record.map_err(|e| csv_error(nodes_path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != d + 2 {
            return Err(malformed(
                nodes_path,
                line,
                format!("expected {} fields, found {}", d + 2, record.len()),
            ));
        }
        let id: usize = record[0]
            .parse()
            .map_err(|_| malformed(nodes_path, line, format!("bad node id {:?}", &record[0])))?;
        let label: usize = record[1]
            .parse()
            .map_err(|_| malformed(nodes_path, line, format!("bad label {:?}", &record[1])))?;
        let mut feats = Vec::with_capacity(d);
        for (j, field) in record.iter().skip(2).enumerate() {
            let x: f32 = field
                .parse()
                .map_err(|_| malformed(nodes_path, line, format!("bad feature f{j} {field:?}")))?;
            if !x.is_finite() {
                return Err(malformed(nodes_path, line, format!("non-finite feature f{j}")));
            }
            feats.push(x);
        }
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(malformed(nodes_path, line, format!("duplicate node id {id}")));
        }
        rows[id] = Some((label, feats));
    }
    let n = rows.len();
    if let Some(missing) = rows.iter().position(Option::is_none) {
        return Err(GapError::InvalidDataset(format!(
            "node ids must be consecutive from 0; id {missing} is missing"
        )));
    }
    let mut features = Array2::<f32>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (v, row) in rows.into_iter().enumerate() {
        let (label, feats) = row.unwrap();
        labels.push(label);
        for (j, x) in feats.into_iter().enumerate() {
            features[[v, j]] = x;
        }
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);

    let mut edges_rdr = csv_reader(edges_path)?;
    let eh = edges_rdr.headers().map_err(|e| csv_error(edges_path, e))?.clone();
    if eh.len() != 2 || &eh[0] != "src" || &eh[1] != "dst" {
        return Err(malformed(edges_path, 1, "header must be `src,dst`"));
    }
    let mut edges = Vec::new();
    for record in edges_rdr.records() {
        let record = record.map_err(|e| csv_error(edges_path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(malformed(edges_path, line, "expected `src,dst`"));
        }
        let mut ends = [0usize; 2];
        for (k, end) in ends.iter_mut().enumerate() {
            let id: u64 = record[k]
                .parse()
                .map_err(|_| malformed(edges_path, line, format!("bad node id {:?}", &record[k])))?;
            if id as usize >= n {
                return Err(GapError::UnknownNode { id, num_nodes: n });
            }
            *end = id as usize;
        }
        edges.push((ends[0], ends[1]));
    }

    GraphDataset::from_parts(
        num_classes,
        Csr::from_edges(n, edges),
        features,
        labels,
        Split::assign_random(n, DEFAULT_SPLIT_SEED),
    )
}

/// Overrides split tags from an `id,split` CSV. Nodes not listed keep
/// their current tag.
pub fn apply_splits_csv(g: &GraphDataset, path: &Path) -> Result<GraphDataset> {
    let mut rdr = csv_reader(path)?;
    let h = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if h.len() != 2 || &h[0] != "id" || &h[1] != "split" {
        return Err(malformed(path, 1, "header must be `id,split`"));
    }
    let mut split = g.split().to_vec();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id: u64 = record
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(path, line, "bad node id"))?;
        let tag = record
            .get(1)
            .and_then(Split::parse)
            .ok_or_else(|| malformed(path, line, "split must be train, val or test"))?;
        let slot = split.get_mut(id as usize).ok_or(GapError::UnknownNode {
            id,
            num_nodes: g.num_nodes(),
        })?;
        *slot = tag;
    }
    g.with_split(split)
}

/// Writes nodes and edges CSVs in the format read by [`load_csv`].
pub fn save_csv(g: &GraphDataset, nodes_path: &Path, edges_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(nodes_path).map_err(|e| csv_error(nodes_path, e))?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..g.num_features()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_error(nodes_path, e))?;
    for v in 0..g.num_nodes() {
        let mut row = vec![v.to_string(), g.labels()[v].to_string()];
        row.extend(g.features().row(v).iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(|e| csv_error(nodes_path, e))?;
    }
    w.flush().map_err(|e| GapError::io(nodes_path, e))?;

    let mut w = csv::Writer::from_path(edges_path).map_err(|e| csv_error(edges_path, e))?;
    w.write_record(["src", "dst"]).map_err(|e| csv_error(edges_path, e))?;
    for (s, d) in g.edges() {
        w.write_record([s.to_string(), d.to_string()]).map_err(|e| csv_error(edges_path, e))?;
    }
    w.flush().map_err(|e| GapError::io(edges_path, e))
}

pub(crate) fn encode_binary(g: &GraphDataset) -> Vec<u8> {
    let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
    w.u64(g.num_nodes() as u64);
    w.u32(g.num_features() as u32);
    w.u32(g.num_classes() as u32);
    w.u64(g.num_edges() as u64);
    for &x in g.features().iter() {
        w.f32(x);
    }
    for &l in g.labels() {
        w.u32(l as u32);
    }
    for &s in g.split() {
        w.u8(s.tag());
    }
    for (s, d) in g.edges() {
        w.u64(s as u64);
        w.u64(d as u64);
    }
    w.finish()
}

pub(crate) fn decode_binary(bytes: &[u8]) -> Result<GraphDataset> {
    let mut r = Reader::open(bytes, DATASET_MAGIC, DATASET_VERSION)?;
    let n = r.u64("header")? as usize;
    let d = r.u32("header")? as usize;
    let c = r.u32("header")? as usize;
    let e = r.u64("header")? as usize;

    let feat_bytes = r.take(n.saturating_mul(d).saturating_mul(4), "features")?;
    let feats: Vec<f32> = feat_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let features = Array2::from_shape_vec((n, d), feats)
        .map_err(|e| GapError::InvalidDataset(e.to_string()))?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u32("labels")? as usize);
    }
    let mut split = Vec::with_capacity(n);
    for _ in 0..n {
        let tag = r.u8("split tags")?;
        split.push(
            Split::from_tag(tag)
                .ok_or_else(|| GapError::InvalidDataset(format!("bad split tag {tag}")))?,
        );
    }
    if r.remaining() < e.saturating_mul(16) {
        return Err(GapError::Truncated { section: "edges" });
    }
    let mut edges = Vec::with_capacity(e);
    for _ in 0..e {
        let s = r.u64("edges")?;
        let t = r.u64("edges")?;
        for id in [s, t] {
            if id as usize >= n {
                return Err(GapError::UnknownNode { id, num_nodes: n });
            }
        }
        edges.push((s as usize, t as usize));
    }
    GraphDataset::from_parts(c, Csr::from_edges(n, edges), features, labels, split)
}

pub fn save_binary(g: &GraphDataset, path: &Path) -> Result<()> {
    write_file(path, &encode_binary(g))
}

pub fn load_binary(path: &Path) -> Result<GraphDataset> {
    decode_binary(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmParams};

    fn sample() -> GraphDataset {
        generate_sbm(&SbmParams {
            num_nodes: 40,
            num_classes: 3,
            p_in: 0.3,
            p_out: 0.05,
            feature_dim: 5,
            feature_signal: 1.0,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let g = sample();
        let bytes = encode_binary(&g);
        assert_eq!(&bytes[..4], b"GAPD");
        assert_eq!(decode_binary(&bytes).unwrap(), g);
    }

    #[test]
    fn binary_header_layout() {
        let g = sample();
        let bytes = encode_binary(&g);
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 40);
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[18..22].try_into().unwrap()), 3);
        let e = g.num_edges();
        assert_eq!(u64::from_le_bytes(bytes[22..30].try_into().unwrap()), e as u64);
        assert_eq!(bytes.len(), 30 + 40 * 5 * 4 + 40 * 4 + 40 + e * 16);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_binary(&sample());
        let err = decode_binary(&[b"XXXX".as_slice(), &bytes[4..]].concat()).unwrap_err();
        assert!(err.to_string().contains("bad magic"));

        bytes[4] = 2;
        assert!(matches!(
            decode_binary(&bytes).unwrap_err(),
            GapError::VersionMismatch { found: 2, .. }
        ));
        bytes[4] = 1;

        let cut = 30 + 100;
        let err = decode_binary(&bytes[..cut]).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }
}
