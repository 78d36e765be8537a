//! Phonological-feature inventory, phone inventory and the PLF-to-phone
//! conversion matrix.
//!
//! The conversion matrix `M` is `P×F`: one row per phone, one column per
//! PLF. Entries range over `[-1, 1]` where `-1` means the feature is
//! expected absent, `1` present and `0` irrelevant. Columns that belong to
//! one of the two vowel-position groups carry nonnegative weights instead;
//! a phone's weights within a group describe where in that dimension it
//! sits (e.g. `Mid = 0.75, High = 0.25`).

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Canonical inventory of 21 phonological features.
pub const CANONICAL_PLFS: [&str; 21] = [
    "Coronal",
    "Alveolar",
    "Speech",
    "Turbulent",
    "Mid",
    "Back",
    "Low",
    "Central",
    "Vowel",
    "High",
    "Dorsal",
    "Nasal",
    "Labial",
    "Plosive",
    "Diphthong",
    "Sonorant",
    "Rounded",
    "Voiced",
    "Lateral",
    "Frontal",
    "Fricative",
];

const DEMO_SPEC_JSON: &str = include_str!("../data/demo_spec.json");
const TEMPLATE_SPEC_JSON: &str = include_str!("../data/template_21.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlfGroups {
    /// Horizontal vowel position, e.g. Frontal / Central / Back.
    pub horizontal: Vec<String>,
    /// Vertical vowel position, e.g. High / Mid / Low.
    pub vertical: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlfInventory {
    names: Vec<String>,
    groups: PlfGroups,
    horizontal_idx: Vec<usize>,
    vertical_idx: Vec<usize>,
}

impl PlfInventory {
    pub fn new(names: Vec<String>, groups: PlfGroups) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::Validation("empty PLF name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Validation(format!("duplicate PLF name {n:?}")));
            }
        }
        let resolve = |members: &[String], label: &str| -> Result<Vec<usize>> {
            let mut out = Vec::with_capacity(members.len());
            for m in members {
                let i = names
                    .iter()
                    .position(|n| n == m)
                    .ok_or_else(|| Error::Validation(format!("{label} group member {m:?} is not a PLF")))?;
                if out.contains(&i) {
                    return Err(Error::Validation(format!("{label} group lists {m:?} twice")));
                }
                out.push(i);
            }
            Ok(out)
        };
        let horizontal_idx = resolve(&groups.horizontal, "horizontal")?;
        let vertical_idx = resolve(&groups.vertical, "vertical")?;
        if let Some(i) = horizontal_idx.iter().find(|i| vertical_idx.contains(i)) {
            return Err(Error::Validation(format!("PLF {:?} is in both groups", names[*i])));
        }
        Ok(Self {
            names,
            groups,
            horizontal_idx,
            vertical_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &PlfGroups {
        &self.groups
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn group_members(&self, kind: GroupKind) -> &[usize] {
        match kind {
            GroupKind::Horizontal => &self.horizontal_idx,
            GroupKind::Vertical => &self.vertical_idx,
        }
    }

    pub fn group_of(&self, plf: usize) -> Option<GroupKind> {
        if self.horizontal_idx.contains(&plf) {
            Some(GroupKind::Horizontal)
        } else if self.vertical_idx.contains(&plf) {
            Some(GroupKind::Vertical)
        } else {
            None
        }
    }
}

/// `P×F` matrix of expected PLF responses per phone.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionMatrix {
    values: Array2<f64>,
}

impl ConversionMatrix {
    /// Wraps raw values after checking the bound `[-1, 1]` only; the
    /// row/group rules need the inventory and are checked by
    /// [`ConversionSpec::new`].
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for ((p, f), v) in values.indexed_iter() {
            if !v.is_finite() || !(-1.0..=1.0).contains(v) {
                return Err(Error::Validation(format!(
                    "entry {v} at row {p}, column {f} is outside [-1, 1]"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn num_phones(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_plfs(&self) -> usize {
        self.values.ncols()
    }
}

/// Learnable positive scaling `S = exp(raw)`, stored in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingMatrix {
    pub raw: Array2<f64>,
}

impl ScalingMatrix {
    pub fn identity(phones: usize, plfs: usize) -> Self {
        Self {
            raw: Array2::zeros((phones, plfs)),
        }
    }

    pub fn effective(&self) -> Array2<f64> {
        self.raw.mapv(f64::exp)
    }
}

/// Entrywise `M ⊙ exp(raw)`.
pub fn effective_matrix(m: &ConversionMatrix, s: &ScalingMatrix) -> Result<Array2<f64>> {
    if m.values.dim() != s.raw.dim() {
        return Err(Error::Dimension(format!(
            "conversion matrix is {:?} but scaling matrix is {:?}",
            m.values.dim(),
            s.raw.dim()
        )));
    }
    Ok(&m.values * &s.raw.mapv(f64::exp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionSpec {
    pub plf_inventory: PlfInventory,
    pub phones: Vec<String>,
    pub matrix: ConversionMatrix,
    pub description: Option<String>,
}

/// On-disk JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    plfs: Vec<String>,
    groups: PlfGroups,
    phones: Vec<String>,
    matrix: Vec<Vec<f64>>,
}

impl ConversionSpec {
    pub fn new(plf_inventory: PlfInventory, phones: Vec<String>, matrix: ConversionMatrix) -> Result<Self> {
        let (p, f) = matrix.values.dim();
        if p != phones.len() || f != plf_inventory.len() {
            return Err(Error::Validation(format!(
                "matrix is {p}x{f} but there are {} phones and {} PLFs",
                phones.len(),
                plf_inventory.len()
            )));
        }
        if phones.is_empty() {
            return Err(Error::Validation("no phones".into()));
        }
        let mut seen = HashSet::new();
        for s in &phones {
            if s.is_empty() {
                return Err(Error::Validation("empty phone symbol".into()));
            }
            if !seen.insert(s.as_str()) {
                return Err(Error::Validation(format!("duplicate phone symbol {s:?}")));
            }
        }
        for (pi, row) in matrix.values.rows().into_iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Validation(format!(
                    "phone {:?} (row {pi}) has no nonzero entry",
                    phones[pi]
                )));
            }
            for (fi, &v) in row.iter().enumerate() {
                let name = &plf_inventory.names[fi];
                match plf_inventory.group_of(fi) {
                    Some(_) if v < 0.0 => {
                        return Err(Error::Validation(format!(
                            "grouped PLF {name:?} has negative weight {v} for phone {:?} (row {pi}, column {fi})",
                            phones[pi]
                        )));
                    }
                    None if v != -1.0 && v != 0.0 && v != 1.0 => {
                        return Err(Error::Validation(format!(
                            "non-grouped PLF {name:?} has fractional entry {v} for phone {:?} (row {pi}, column {fi})",
                            phones[pi]
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            plf_inventory,
            phones,
            matrix,
            description: None,
        })
    }

    pub fn num_phones(&self) -> usize {
        self.phones.len()
    }

    pub fn num_plfs(&self) -> usize {
        self.plf_inventory.len()
    }

    pub fn phone_index(&self, symbol: &str) -> Option<usize> {
        self.phones.iter().position(|p| p == symbol)
    }

    /// Shipped 10-phone, 8-PLF demo phonology.
    pub fn demo() -> Self {
        Self::from_json(DEMO_SPEC_JSON).expect("shipped demo spec is valid")
    }

    /// Shipped template over the canonical 21 PLFs.
    pub fn template() -> Self {
        Self::from_json(TEMPLATE_SPEC_JSON).expect("shipped template spec is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpecFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    fn from_file(file: SpecFile) -> Result<Self> {
        let inv = PlfInventory::new(file.plfs, file.groups)?;
        let p = file.matrix.len();
        let f = inv.len();
        if p != file.phones.len() {
            return Err(Error::Validation(format!(
                "matrix has {p} rows but there are {} phones",
                file.phones.len()
            )));
        }
        let mut values = Array2::zeros((p, f));
        for (pi, row) in file.matrix.iter().enumerate() {
            if row.len() != f {
                return Err(Error::Validation(format!(
                    "row {pi} has {} entries, expected {f}",
                    row.len()
                )));
            }
            for (fi, &v) in row.iter().enumerate() {
                values[[pi, fi]] = v;
            }
        }
        let matrix = ConversionMatrix::new(values)?;
        let mut spec = Self::new(inv, file.phones, matrix)?;
        spec.description = file.description;
        Ok(spec)
    }

    fn to_file(&self) -> SpecFile {
        SpecFile {
            description: self.description.clone(),
            plfs: self.plf_inventory.names.clone(),
            groups: self.plf_inventory.groups.clone(),
            phones: self.phones.clone(),
            matrix: self.matrix.values.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("spec serializes")
    }

    /// SHA-256 over the canonical (compact, description-free) JSON form.
    pub fn content_hash(&self) -> String {
        let mut file = self.to_file();
        file.description = None;
        let canonical = serde_json::to_vec(&file).expect("spec serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Human-readable table: header of PLF names, one row per phone.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["phone".to_string()];
        header.extend(self.plf_inventory.names.iter().cloned());
        w.write_record(&header)?;
        for (sym, row) in self.phones.iter().zip(self.matrix.values.rows()) {
            let mut rec = vec![sym.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<ConversionSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConversionSpec::from_json(&text)
}

pub fn write_spec(path: impl AsRef<Path>, spec: &ConversionSpec) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, spec.to_json()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_json(matrix: &str) -> String {
        format!(
            r#"{{"plfs":["A","B","Hi","Lo"],
                "groups":{{"horizontal":[],"vertical":["Hi","Lo"]}},
                "phones":["x","y"],
                "matrix":{matrix}}}"#
        )
    }

    #[test]
    fn demo_spec_loads() {
        let spec = ConversionSpec::demo();
        assert_eq!(spec.num_phones(), 10);
        assert_eq!(spec.num_plfs(), 8);
    }

    #[test]
    fn template_uses_canonical_inventory() {
        let spec = ConversionSpec::template();
        assert_eq!(spec.num_plfs(), 21);
        let names: HashSet<_> = spec.plf_inventory.names().iter().map(String::as_str).collect();
        assert_eq!(names, CANONICAL_PLFS.iter().copied().collect());
        let g = spec.plf_inventory.groups();
        assert_eq!(g.horizontal, ["Frontal", "Central", "Back"]);
        assert_eq!(g.vertical, ["High", "Mid", "Low"]);
    }

    #[test]
    fn out_of_range_entry_reports_coordinates() {
        let err = ConversionSpec::from_json(&tiny_json("[[1,0,0,0],[0,1.5,0,0]]")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("row 1") && msg.contains("column 1"), "{msg}");
    }

    #[test]
    fn empty_row_is_rejected() {
        let err = ConversionSpec::from_json(&tiny_json("[[1,0,0,0],[0,0,0,0]]")).unwrap_err();
        assert!(err.to_string().contains("no nonzero"), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = ConversionSpec::from_json(&tiny_json("[[1,0,0],[0,1,0]]")).unwrap_err();
        assert!(err.to_string().contains("row 0"), "{err}");
        let err = ConversionSpec::from_json(&tiny_json("[[1,0,0,0]]")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn duplicate_symbols_are_rejected() {
        let text = tiny_json("[[1,0,0,0],[0,1,0,0]]").replace(r#"["x","y"]"#, r#"["x","x"]"#);
        assert!(ConversionSpec::from_json(&text).is_err());
        let text = tiny_json("[[1,0,0,0],[0,1,0,0]]").replace(r#""B","Hi""#, r#""A","Hi""#);
        assert!(ConversionSpec::from_json(&text).is_err());
    }

    #[test]
    fn grouped_columns_allow_fractions_but_not_negatives() {
        assert!(ConversionSpec::from_json(&tiny_json("[[1,0,0.25,0.75],[0,1,0,0]]")).is_ok());
        let err = ConversionSpec::from_json(&tiny_json("[[1,0,-0.5,0],[0,1,0,0]]")).unwrap_err();
        assert!(err.to_string().contains("negative"), "{err}");
        let err = ConversionSpec::from_json(&tiny_json("[[0.5,0,0,0],[0,1,0,0]]")).unwrap_err();
        assert!(err.to_string().contains("fractional"), "{err}");
    }

    #[test]
    fn unknown_group_member_is_rejected() {
        let text = tiny_json("[[1,0,0,0],[0,1,0,0]]").replace(r#"["Hi","Lo"]"#, r#"["Hi","Nope"]"#);
        assert!(ConversionSpec::from_json(&text).is_err());
    }

    #[test]
    fn effective_matrix_examples() {
        let m = ConversionMatrix::new(ndarray::array![[-1.0, 0.0], [1.0, 0.5]]).unwrap();
        let zero = ScalingMatrix::identity(2, 2);
        assert_eq!(effective_matrix(&m, &zero).unwrap(), *m.values());

        let s = ScalingMatrix {
            raw: ndarray::array![[2f64.ln(), 7.0], [0.0, 0.0]],
        };
        let w = effective_matrix(&m, &s).unwrap();
        assert!((w[[0, 0]] + 2.0).abs() < 1e-15);
        assert_eq!(w[[0, 1]], 0.0);

        let bad = ScalingMatrix::identity(3, 2);
        assert!(matches!(effective_matrix(&m, &bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        for spec in [ConversionSpec::demo(), ConversionSpec::template()] {
            write_spec(&path, &spec).unwrap();
            assert_eq!(load_spec(&path).unwrap(), spec);
        }
    }

    #[test]
    fn hash_ignores_description() {
        let a = ConversionSpec::demo();
        let mut b = a.clone();
        b.description = Some("other".into());
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), ConversionSpec::template().content_hash());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let mut buf = Vec::new();
        ConversionSpec::demo().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert!(lines[0].starts_with("phone,Voiced,Nasal"));
        assert!(lines[1].starts_with("p,-1"));
    }

    proptest! {
        #[test]
        fn scaling_preserves_sign(raw in proptest::collection::vec(-20.0f64..20.0, 80)) {
            let spec = ConversionSpec::demo();
            let s = ScalingMatrix { raw: Array2::from_shape_vec((10, 8), raw).unwrap() };
            let w = effective_matrix(&spec.matrix, &s).unwrap();
            for (a, b) in w.iter().zip(spec.matrix.values().iter()) {
                prop_assert_eq!(a.signum() * (*a != 0.0) as i32 as f64, b.signum() * (*b != 0.0) as i32 as f64);
            }
        }

        #[test]
        fn random_specs_round_trip(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = rng.random_range(1..6);
            let names: Vec<String> = ["A", "B", "C", "Hi", "Lo"].iter().map(|s| s.to_string()).collect();
            let groups = PlfGroups { horizontal: vec![], vertical: vec!["Hi".into(), "Lo".into()] };
            let values = Array2::from_shape_fn((p, 5), |(_, f)| {
                if f < 3 { [-1.0, 0.0, 1.0][rng.random_range(0..3)] } else { rng.random_range(0.0..1.0) }
            });
            let mut values = values;
            for r in 0..p { values[[r, 0]] = 1.0; }
            let spec = ConversionSpec::new(
                PlfInventory::new(names, groups).unwrap(),
                (0..p).map(|i| format!("ph{i}")).collect(),
                ConversionMatrix::new(values).unwrap(),
            ).unwrap();
            prop_assert_eq!(ConversionSpec::from_json(&spec.to_json()).unwrap(), spec);
        }
    }
}
