use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::partition::{BaseNodeSet, PartitionScheme, SchemeLabel};
use crate::stgraph::{SpatialGraph, UnifiedGraph};
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::data::NormStats;
use super::network::ForecastModel;

pub const MAGIC: &[u8; 4] = b"STGA";
pub const FORMAT_VERSION: u32 = 1;

/// Serialises `model` as: magic, version, key/value pairs (config plus
/// normalisation and epoch count), parameters, then the P1 and P2 schemes.
/// All integers and floats are little-endian.
pub fn to_bytes(model: &ForecastModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);

    let mut pairs = model.config.to_pairs();
    pairs.push(("epochs_completed".into(), model.epochs_completed.to_string()));
    if let Some(stats) = &model.norm {
        pairs.push(("norm_mean".into(), join(&stats.mean)));
        pairs.push(("norm_std".into(), join(&stats.std)));
    }
    w.u32(pairs.len() as u32);
    for (k, v) in &pairs {
        w.str(k);
        w.str(v);
    }

    w.u32(model.store.len() as u32);
    for p in model.store.iter() {
        w.str(&p.name);
        w.u32(p.value.rank() as u32);
        for &d in p.value.shape() {
            w.u64(d as u64);
        }
        for &x in p.value.data() {
            w.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    for scheme in [&model.p1, &model.p2] {
        w.0.push(match scheme.label() {
            SchemeLabel::P1 => 1,
            SchemeLabel::P2 => 2,
        });
        w.u64(scheme.tau() as u64);
        w.u32(scheme.bases().len() as u32);
        for &c in &scheme.bases().coords {
            w.u64(model.graph.flat(c) as u64);
        }
        w.u64(scheme.n_elements() as u64);
        for &s in scheme.assignment() {
            w.u32(s as u32);
        }
    }
    w.0
}

pub fn save(model: &ForecastModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

/// Rebuilds a model from checkpoint bytes. The spatial embedding is
/// recomputed from `graph`; the stored schemes are used as they are.
pub fn from_bytes(bytes: &[u8], graph: &SpatialGraph) -> Result<ForecastModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::input("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::input(format!("unsupported checkpoint version {version}")));
    }

    let n_pairs = r.u32()?;
    let mut config = ModelConfig::default();
    let mut epochs_completed = 0;
    let (mut mean, mut std) = (None, None);
    for _ in 0..n_pairs {
        let k = r.str()?;
        let v = r.str()?;
        match k.as_str() {
            "epochs_completed" => {
                epochs_completed = v.parse().map_err(|_| Error::input("bad epochs_completed"))?
            }
            "norm_mean" => mean = Some(split(&v)?),
            "norm_std" => std = Some(split(&v)?),
            _ => config.set(&k, &v)?,
        }
    }

    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push((name, Tensor::new(shape, data)?));
    }

    let ug = UnifiedGraph::build(graph, config.horizon)?;
    let mut schemes = Vec::with_capacity(2);
    for expected in [SchemeLabel::P1, SchemeLabel::P2] {
        let label = match r.take(1)?[0] {
            1 => SchemeLabel::P1,
            2 => SchemeLabel::P2,
            b => return Err(Error::input(format!("bad scheme label byte {b}"))),
        };
        if label != expected {
            return Err(Error::input("schemes stored out of order"));
        }
        let tau = r.u64()? as usize;
        let n_bases = r.u32()? as usize;
        let mut coords = Vec::with_capacity(n_bases);
        for _ in 0..n_bases {
            let flat = r.u64()? as usize;
            if flat >= ug.n_elements() {
                return Err(Error::input("checkpoint base outside the graph"));
            }
            coords.push(ug.coord(flat));
        }
        let n = r.u64()? as usize;
        let assignment = (0..n).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        schemes.push(PartitionScheme::from_assignment(&ug, label, assignment, BaseNodeSet { coords, tau })?);
    }
    if r.pos != bytes.len() {
        return Err(Error::input("trailing bytes after checkpoint"));
    }
    let p2 = schemes.pop().expect("two schemes");
    let p1 = schemes.pop().expect("two schemes");

    let mut model = ForecastModel::with_schemes(config, graph, p1, p2)?;
    if params.len() != model.store.len() {
        return Err(Error::input(format!(
            "checkpoint has {} parameters, model expects {}",
            params.len(),
            model.store.len()
        )));
    }
    for (name, value) in params {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::input(format!("unexpected parameter '{name}'")))?;
        let slot = &mut model.store.get_mut(id).value;
        if slot.shape() != value.shape() {
            return Err(Error::input(format!(
                "parameter '{name}' has shape {:?}, expected {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
    }
    model.epochs_completed = epochs_completed;
    model.norm = match (mean, std) {
        (Some(mean), Some(std)) if mean.len() == std.len() => Some(NormStats { mean, std }),
        (None, None) => None,
        _ => return Err(Error::input("incomplete normalisation statistics")),
    };
    Ok(model)
}

pub fn load(path: impl AsRef<Path>, graph: &SpatialGraph) -> Result<ForecastModel> {
    from_bytes(&fs::read(path)?, graph)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn split(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.parse().map_err(|_| Error::input(format!("bad number '{s}' in checkpoint"))))
        .collect()
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::input("checkpoint is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::input("checkpoint string is not UTF-8"))
    }
}
