//! Persistence for embedding sets and their JSONL sidecars.
//!
//! GBE1 layout (all integers little-endian):
//!
//! ```text
//! "GBE1" | version u32 | branch u8 | rows u64 | dims u64
//! | rows x (id_len u16, id bytes) | rows*dims f32, row-major
//! ```
//!
//! Values are stored as f32 and widened to f64 on load.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const GBE_MAGIC: [u8; 4] = *b"GBE1";
pub const GBE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Text,
    Modal,
    Anchor,
}

impl Branch {
    pub fn code(self) -> u8 {
        match self {
            Branch::Text => 0,
            Branch::Modal => 1,
            Branch::Anchor => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Branch::Text),
            1 => Some(Branch::Modal),
            2 => Some(Branch::Anchor),
            _ => None,
        }
    }
}

/// Row vectors keyed by unique string ids. `ids[i]` always names row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    matrix: Matrix,
    branch: Branch,
    modality: String,
}

impl EmbeddingSet {
    pub fn new(
        ids: Vec<String>,
        matrix: Matrix,
        branch: Branch,
        modality: impl Into<String>,
    ) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::Shape(format!(
                "{} ids for a matrix with {} rows",
                ids.len(),
                matrix.rows()
            )));
        }
        check_unique(&ids)?;
        Ok(Self {
            ids,
            matrix,
            branch,
            modality: modality.into(),
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn with_modality(mut self, modality: impl Into<String>) -> Self {
        self.modality = modality.into();
        self
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> EmbeddingSet {
        EmbeddingSet {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            matrix: self.matrix.select_rows(indices),
            branch: self.branch,
            modality: self.modality.clone(),
        }
    }

    /// Rows for the given ids, in that order.
    pub fn select_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<EmbeddingSet> {
        let index = self.id_index();
        let indices = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_ref())
                    .copied()
                    .ok_or_else(|| Error::UnknownId(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&indices))
    }

    /// Copy with every row scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<EmbeddingSet> {
        let mut out = self.clone();
        for r in 0..out.len() {
            let row = crate::linalg::l2_normalize(self.row(r))?;
            out.matrix.row_mut(r).copy_from_slice(&row);
        }
        Ok(out)
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// Serializes a set to GBE1 bytes.
pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    check_unique(&set.ids)?;
    let id_bytes: usize = set.ids.iter().map(|id| 2 + id.len()).sum();
    let mut buf = Vec::with_capacity(HEADER_LEN + id_bytes + set.matrix.as_slice().len() * 4);
    buf.extend_from_slice(&GBE_MAGIC);
    buf.extend_from_slice(&GBE_VERSION.to_le_bytes());
    buf.push(set.branch.code());
    buf.extend_from_slice(&(set.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(set.dim() as u64).to_le_bytes());
    for id in &set.ids {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::Validation(format!("id longer than 65535 bytes: {id:.32}...")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    for &x in set.matrix.as_slice() {
        let narrowed = x as f32;
        if !narrowed.is_finite() {
            return Err(Error::NonFinite("embedding payload"));
        }
        buf.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(buf)
}

/// Writes a set as GBE1. Nothing is written if validation fails.
pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(set)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses GBE1 bytes; `path` is only used in error messages.
pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != GBE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: GBE_MAGIC,
        });
    }
    let version = cur.u32()?;
    if version != GBE_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: GBE_VERSION,
        });
    }
    let code = cur.take(1)?[0];
    let branch = Branch::from_code(code)
        .ok_or_else(|| Error::Validation(format!("{}: unknown branch code {code}", path.display())))?;
    let rows = cur.u64()? as usize;
    let dims = cur.u64()? as usize;

    let mut ids = Vec::with_capacity(rows.min(1 << 20));
    for _ in 0..rows {
        let len = cur.u16()? as usize;
        let raw = cur.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| Error::Validation(format!("{}: id is not valid UTF-8", path.display())))?;
        ids.push(id.to_string());
    }

    let payload_len = rows
        .checked_mul(dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Validation(format!("{}: payload size overflows", path.display())))?;
    let expected = (cur.pos + payload_len) as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Validation(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() as u64 - expected
        )));
    }
    let payload = cur.take(payload_len)?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let matrix = Matrix::new(rows, dims, data)?;
    EmbeddingSet::new(ids, matrix, branch, "")
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caption {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub id: String,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub text_id: String,
    pub modal_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassHeader {
    class_names: Vec<String>,
}

/// Multi-label ground truth for zero-shot classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    ids: Vec<String>,
    labels: Vec<Vec<usize>>,
    class_names: Vec<String>,
}

impl LabelSet {
    pub fn new(ids: Vec<String>, labels: Vec<Vec<usize>>, class_names: Vec<String>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} ids but {} label lists",
                ids.len(),
                labels.len()
            )));
        }
        check_unique(&ids)?;
        for (id, ls) in ids.iter().zip(&labels) {
            if let Some(&bad) = ls.iter().find(|&&c| c >= class_names.len()) {
                return Err(Error::Validation(format!(
                    "sample {id:?} has class index {bad} but only {} classes are declared",
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            ids,
            labels,
            class_names,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[Vec<usize>] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn as_map(&self) -> HashMap<&str, &[usize]> {
        self.ids
            .iter()
            .zip(&self.labels)
            .map(|(id, l)| (id.as_str(), l.as_slice()))
            .collect()
    }
}

fn for_each_jsonl_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> std::result::Result<(), String>,
) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line).map_err(|message| Error::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
    }
    Ok(())
}

fn parse_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for_each_jsonl_line(path, |_, line| {
        out.push(serde_json::from_str(line).map_err(|e| e.to_string())?);
        Ok(())
    })?;
    Ok(out)
}

pub fn read_captions(path: impl AsRef<Path>) -> Result<Vec<Caption>> {
    parse_records(path.as_ref())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    Ok(parse_records::<PairRecord>(path.as_ref())?
        .into_iter()
        .map(|p| (p.text_id, p.modal_id))
        .collect())
}

/// Reads a labels sidecar. The first non-blank line may be a
/// `{"class_names": [...]}` header; without one, classes are named
/// `class_<i>` up to the largest index seen.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let mut header: Option<Vec<String>> = None;
    let mut records = Vec::new();
    for_each_jsonl_line(path, |line_no, line| {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if value.get("class_names").is_some() {
            if header.is_some() || !records.is_empty() {
                return Err("class_names header must be the first record".into());
            }
            let h: ClassHeader = serde_json::from_value(value).map_err(|e| e.to_string())?;
            header = Some(h.class_names);
            return Ok(());
        }
        let rec: LabelRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
        if let Some(names) = &header {
            if let Some(&bad) = rec.labels.iter().find(|&&c| c >= names.len()) {
                return Err(format!(
                    "class index {bad} out of range ({} classes declared)",
                    names.len()
                ));
            }
        }
        records.push((line_no, rec));
        Ok(())
    })?;
    let class_names = header.unwrap_or_else(|| {
        let n = records
            .iter()
            .flat_map(|(_, r)| r.labels.iter().map(|&c| c + 1))
            .max()
            .unwrap_or(0);
        (0..n).map(|i| format!("class_{i}")).collect()
    });
    let (ids, labels) = records.into_iter().map(|(_, r)| (r.id, r.labels)).unzip();
    LabelSet::new(ids, labels, class_names)
}

fn write_jsonl<T: Serialize>(path: &Path, header: Option<String>, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(h) = header {
        buf.extend_from_slice(h.as_bytes());
        buf.push(b'\n');
    }
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("serializing plain records");
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn write_labels(labels: &LabelSet, path: impl AsRef<Path>) -> Result<()> {
    let header = serde_json::to_string(&ClassHeader {
        class_names: labels.class_names.clone(),
    })
    .expect("serializing header");
    let records: Vec<LabelRecord> = labels
        .ids
        .iter()
        .zip(&labels.labels)
        .map(|(id, l)| LabelRecord {
            id: id.clone(),
            labels: l.clone(),
        })
        .collect();
    write_jsonl(path.as_ref(), Some(header), &records)
}

pub fn write_pairs(pairs: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<PairRecord> = pairs
        .iter()
        .map(|(t, m)| PairRecord {
            text_id: t.clone(),
            modal_id: m.clone(),
        })
        .collect();
    write_jsonl(path.as_ref(), None, &records)
}

pub fn write_captions(captions: &[Caption], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), None, captions)
}

/// Text and modal sets with optional instance-level pairing, used for offset
/// estimation and geometry diagnostics only.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub text_set: EmbeddingSet,
    pub modal_set: EmbeddingSet,
    pairs: Vec<(String, String)>,
    index_pairs: Vec<(usize, usize)>,
}

impl PairedDataset {
    pub fn new(
        text_set: EmbeddingSet,
        modal_set: EmbeddingSet,
        pairs: Vec<(String, String)>,
    ) -> Result<Self> {
        let ti = text_set.id_index();
        let mi = modal_set.id_index();
        let index_pairs = pairs
            .iter()
            .map(|(t, m)| {
                let a = *ti.get(t.as_str()).ok_or_else(|| Error::UnknownId(t.clone()))?;
                let b = *mi.get(m.as_str()).ok_or_else(|| Error::UnknownId(m.clone()))?;
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            text_set,
            modal_set,
            pairs,
            index_pairs,
        })
    }

    /// Pairs rows whose ids appear in both sets, in text-set order.
    pub fn by_shared_ids(text_set: EmbeddingSet, modal_set: EmbeddingSet) -> Result<Self> {
        let mi = modal_set.id_index();
        let pairs = text_set
            .ids()
            .iter()
            .filter(|id| mi.contains_key(id.as_str()))
            .map(|id| (id.clone(), id.clone()))
            .collect();
        drop(mi);
        Self::new(text_set, modal_set, pairs)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// `(text_row, modal_row)` for each pair.
    pub fn index_pairs(&self) -> &[(usize, usize)] {
        &self.index_pairs
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> EmbeddingSet {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, -0.5, 0.25, 8.0]).unwrap();
        EmbeddingSet::new(vec!["a".into(), "bc".into()], m, Branch::Modal, "audio").unwrap()
    }

    #[test]
    fn header_arithmetic() {
        let bytes = encode_embeddings(&small_set()).unwrap();
        let id_block = (2 + 1) + (2 + 2);
        assert_eq!(bytes.len(), 4 + 4 + 1 + 8 + 8 + id_block + 2 * 3 * 4);
        assert_eq!(&bytes[..4], b"GBE1");
        assert_eq!(bytes[8], 1);
    }

    #[test]
    fn duplicate_ids_rejected_before_writing() {
        let m = Matrix::zeros(2, 2);
        assert!(matches!(
            EmbeddingSet::new(vec!["x".into(), "x".into()], m, Branch::Text, ""),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_embeddings(&small_set()).unwrap();
        let p = Path::new("mem.gbe");
        let short = &bytes[..bytes.len() - 5];
        match decode_embeddings(short, p) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, bytes.len() as u64 - 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_embeddings(&bytes, p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_embeddings(&small_set()).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_embeddings(&bytes, Path::new("v")),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn duplicate_ids_in_file_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"GBE1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(0);
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&1u16.to_le_bytes());
            bytes.push(b'a');
        }
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            decode_embeddings(&bytes, Path::new("d")),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let m = Matrix::new(1, 1, vec![1e300]).unwrap();
        let s = EmbeddingSet::new(vec!["z".into()], m, Branch::Text, "").unwrap();
        assert!(matches!(encode_embeddings(&s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn labels_parse_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        fs::write(&p, "{\"id\":\"a1\",\"labels\":[0]}\n").unwrap();
        let ls = read_labels(&p).unwrap();
        assert_eq!(ls.len(), 1);
        assert_eq!(ls.labels()[0], vec![0]);

        fs::write(&p, "").unwrap();
        assert!(read_labels(&p).unwrap().is_empty());

        fs::write(
            &p,
            "{\"class_names\":[\"a\",\"b\",\"c\"]}\n{\"id\":\"x\",\"labels\":[5]}\n",
        )
        .unwrap();
        match read_labels(&p) {
            Err(Error::Jsonl { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.jsonl");
        fs::write(
            &p,
            "{\"text_id\":\"t\",\"modal_id\":\"m\"}\n\n{\"text_id\":\"t2\"}\n",
        )
        .unwrap();
        match read_pairs(&p) {
            Err(Error::Jsonl { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn paired_dataset_rejects_unknown_ids() {
        let s = small_set();
        let r = PairedDataset::new(s.clone(), s, vec![("a".into(), "nope".into())]);
        assert!(matches!(r, Err(Error::UnknownId(_))));
    }
}
