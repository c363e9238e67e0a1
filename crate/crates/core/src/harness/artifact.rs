//! Artifact directories.
//!
//! Layout:
//!
//! ```text
//! <dir>/manifest.json     format tag, kind, free-form metadata, array index
//! <dir>/arrays/<name>.f64 raw little-endian float64, column-major
//! <dir>/mesh.txt          optional, see TriMesh::to_text
//! ```
//!
//! The array index maps a name to `{ "file": ..., "shape": [rows, cols] }`.
//! Vectors use shape `[n, 1]`. Readers check the byte length against the
//! shape. Metadata keys are sorted, so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::branchnet::{BranchNet, Mlp, Standardizer};
use crate::datamodes::{BoundaryModes, ModeTrace, SourceModes};
use crate::geomap::{EimSurrogate, RadialMap};
use crate::reduction::{Provenance, RBSpace};
use crate::{Error, Result};

pub const FORMAT: &str = "rb-operon-artifact/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub kind: String,
    pub meta: BTreeMap<String, Value>,
    pub arrays: BTreeMap<String, ArrayEntry>,
}

/// In-memory artifact: metadata plus named column-major arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub kind: String,
    pub meta: BTreeMap<String, Value>,
    pub arrays: BTreeMap<String, ([usize; 2], Vec<f64>)>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

impl Artifact {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.into(), meta: BTreeMap::new(), arrays: BTreeMap::new() }
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.meta.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn meta<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| Error::Format(format!("missing metadata '{key}'")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn has(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn put(&mut self, name: &str, shape: [usize; 2], data: Vec<f64>) -> Result<()> {
        if shape[0] * shape[1] != data.len() {
            return Err(Error::InvalidArgument(format!("array '{name}' does not match shape {shape:?}")));
        }
        self.arrays.insert(name.into(), (shape, data));
        Ok(())
    }

    pub fn put_matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        self.put(name, [m.nrows(), m.ncols()], m.as_slice().to_vec())
    }

    pub fn put_vector(&mut self, name: &str, v: &[f64]) -> Result<()> {
        self.put(name, [v.len(), 1], v.to_vec())
    }

    /// Rows of equal length stored as the columns of a matrix.
    pub fn put_columns(&mut self, name: &str, cols: &[Vec<f64>]) -> Result<()> {
        let r = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != r) {
            return Err(Error::InvalidArgument(format!("ragged columns in '{name}'")));
        }
        self.put(name, [r, cols.len()], cols.concat())
    }

    fn get(&self, name: &str) -> Result<&([usize; 2], Vec<f64>)> {
        self.arrays.get(name).ok_or_else(|| Error::Format(format!("missing array '{name}'")))
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (s, d) = self.get(name)?;
        Ok(DMatrix::from_column_slice(s[0], s[1], d))
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.1.clone())
    }

    pub fn columns(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let (s, d) = self.get(name)?;
        if s[0] == 0 {
            return Ok(vec![Vec::new(); s[1]]);
        }
        Ok(d.chunks(s[0]).map(<[f64]>::to_vec).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let adir = dir.join("arrays");
        fs::create_dir_all(&adir)?;
        let mut index = BTreeMap::new();
        for (name, (shape, data)) in &self.arrays {
            let file = format!("arrays/{}.f64", sanitize(name));
            let mut bytes = Vec::with_capacity(data.len() * 8);
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(dir.join(&file), bytes)?;
            index.insert(name.clone(), ArrayEntry { file, shape: *shape });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: index,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != FORMAT {
            return Err(Error::Format(format!("unknown artifact format '{}'", m.format)));
        }
        let mut arrays = BTreeMap::new();
        for (name, e) in m.arrays {
            let bytes = fs::read(dir.join(&e.file))?;
            let n = e.shape[0] * e.shape[1];
            if bytes.len() != 8 * n {
                return Err(Error::Format(format!("array '{name}' has {} bytes, expected {}", bytes.len(), 8 * n)));
            }
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.insert(name, (e.shape, data));
        }
        Ok(Self { kind: m.kind, meta: m.meta, arrays })
    }

    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }
}

pub fn put_space(art: &mut Artifact, prefix: &str, s: &RBSpace) -> Result<()> {
    art.put_matrix(&format!("{prefix}.basis"), &s.basis)?;
    art.put_matrix(&format!("{prefix}.gram"), &s.gram)?;
    art.put_matrix(&format!("{prefix}.mass"), &s.mass)?;
    for (p, a) in s.operators.iter().enumerate() {
        art.put_matrix(&format!("{prefix}.op{p:03}"), a)?;
    }
    for (q, f) in s.loads.iter().enumerate() {
        art.put_vector(&format!("{prefix}.load{q:04}"), f.as_slice())?;
    }
    art.set_meta(&format!("{prefix}.alpha_lb"), &s.alpha_lb)?;
    art.set_meta(&format!("{prefix}.q_a"), &s.operators.len())?;
    art.set_meta(&format!("{prefix}.q_f"), &s.loads.len())?;
    art.set_meta(&format!("{prefix}.provenance"), &s.provenance)
}

pub fn get_space(art: &Artifact, prefix: &str) -> Result<RBSpace> {
    let q_a: usize = art.meta(&format!("{prefix}.q_a"))?;
    let q_f: usize = art.meta(&format!("{prefix}.q_f"))?;
    let operators = (0..q_a).map(|p| art.matrix(&format!("{prefix}.op{p:03}"))).collect::<Result<_>>()?;
    let loads = (0..q_f)
        .map(|q| art.vector(&format!("{prefix}.load{q:04}")).map(DVector::from_vec))
        .collect::<Result<_>>()?;
    let provenance: Provenance = art.meta(&format!("{prefix}.provenance"))?;
    Ok(RBSpace {
        basis: art.matrix(&format!("{prefix}.basis"))?,
        operators,
        loads,
        gram: art.matrix(&format!("{prefix}.gram"))?,
        mass: art.matrix(&format!("{prefix}.mass"))?,
        alpha_lb: art.meta(&format!("{prefix}.alpha_lb"))?,
        provenance,
    })
}

pub fn put_boundary_modes(art: &mut Artifact, m: &BoundaryModes) -> Result<()> {
    art.put_matrix("boundary.modes", &m.modes)?;
    art.put_matrix("boundary.weighted", &m.weighted)?;
    art.put_matrix("boundary.lifted", &m.lifted)?;
    art.set_meta("boundary.trace", &m.trace)
}

pub fn get_boundary_modes(art: &Artifact) -> Result<BoundaryModes> {
    Ok(BoundaryModes {
        modes: art.matrix("boundary.modes")?,
        weighted: art.matrix("boundary.weighted")?,
        lifted: art.matrix("boundary.lifted")?,
        trace: art.meta::<ModeTrace>("boundary.trace")?,
    })
}

pub fn put_source_modes(art: &mut Artifact, m: &SourceModes) -> Result<()> {
    art.put_matrix("source.modes", &m.modes)?;
    art.put_matrix("source.images", &m.images)?;
    art.set_meta("source.trace", &m.trace)
}

pub fn get_source_modes(art: &Artifact) -> Result<SourceModes> {
    Ok(SourceModes {
        modes: art.matrix("source.modes")?,
        images: art.matrix("source.images")?,
        trace: art.meta::<ModeTrace>("source.trace")?,
    })
}

pub fn put_surrogate(art: &mut Artifact, s: &EimSurrogate) -> Result<()> {
    art.set_meta("eim.map", &s.map)?;
    art.set_meta("eim.pivots", &s.pivots)?;
    art.set_meta("eim.trace", &s.trace)?;
    art.set_meta("eim.selected", &s.selected)?;
    art.set_meta("eim.training_size", &s.training_size)?;
    art.put_columns("eim.basis", &s.basis)?;
    art.put_columns("eim.interp", &s.interp)?;
    let pts: Vec<Vec<f64>> = s.points.iter().map(|p| p.to_vec()).collect();
    art.put_columns("eim.points", &pts)
}

pub fn get_surrogate(art: &Artifact) -> Result<EimSurrogate> {
    let map: RadialMap = art.meta("eim.map")?;
    Ok(EimSurrogate {
        map,
        points: art.columns("eim.points")?.into_iter().map(|p| [p[0], p[1]]).collect(),
        basis: art.columns("eim.basis")?,
        pivots: art.meta("eim.pivots")?,
        interp: art.columns("eim.interp")?,
        trace: art.meta("eim.trace")?,
        selected: art.meta("eim.selected")?,
        training_size: art.meta("eim.training_size")?,
    })
}

pub fn put_net(art: &mut Artifact, prefix: &str, net: &BranchNet) -> Result<()> {
    art.set_meta(&format!("{prefix}.sizes"), &net.mlp.sizes)?;
    art.put_vector(&format!("{prefix}.params"), &net.mlp.params)?;
    art.put_vector(&format!("{prefix}.mean"), &net.standardizer.mean)?;
    art.put_vector(&format!("{prefix}.std"), &net.standardizer.std)
}

pub fn get_net(art: &Artifact, prefix: &str) -> Result<BranchNet> {
    let sizes: Vec<usize> = art.meta(&format!("{prefix}.sizes"))?;
    let mut mlp = Mlp::zeros(&sizes)?;
    let params = art.vector(&format!("{prefix}.params"))?;
    if params.len() != mlp.param_count() {
        return Err(Error::Format(format!("{prefix}: parameter vector does not match layer sizes")));
    }
    mlp.params = params;
    Ok(BranchNet {
        standardizer: Standardizer {
            mean: art.vector(&format!("{prefix}.mean"))?,
            std: art.vector(&format!("{prefix}.std"))?,
        },
        mlp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifact::new("test");
        a.set_meta("seed", &42u64).unwrap();
        let m = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        a.put_matrix("m", &m).unwrap();
        a.put_vector("v/x", &[f64::MIN_POSITIVE, -0.0, 1e300]).unwrap();
        a.save(dir.path()).unwrap();
        let b = Artifact::load(dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.matrix("m").unwrap(), m);
        assert_eq!(b.meta::<u64>("seed").unwrap(), 42);
        let bytes1 = fs::read(dir.path().join("manifest.json")).unwrap();
        b.save(dir.path()).unwrap();
        assert_eq!(bytes1, fs::read(dir.path().join("manifest.json")).unwrap());
    }

    #[test]
    fn truncated_array_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifact::new("test");
        a.put_vector("v", &[1.0, 2.0]).unwrap();
        a.save(dir.path()).unwrap();
        fs::write(dir.path().join("arrays/v.f64"), [0u8; 12]).unwrap();
        assert!(matches!(Artifact::load(dir.path()), Err(Error::Format(_))));
        assert!(a.put("bad", [2, 2], vec![0.0]).is_err());
        assert!(a.matrix("missing").is_err());
    }

    #[test]
    fn net_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = BranchNet {
            standardizer: Standardizer { mean: vec![0.5, 1.0], std: vec![2.0, 3.0] },
            mlp: Mlp::xavier(&[2, 4, 3], 1).unwrap(),
        };
        let mut a = Artifact::new("net");
        put_net(&mut a, "rb", &net).unwrap();
        a.save(dir.path()).unwrap();
        let back = get_net(&Artifact::load(dir.path()).unwrap(), "rb").unwrap();
        assert_eq!(back, net);
    }
}
