//! Binary model file.
//!
//! Layout (little-endian): magic `SWMM`, format version `u32`, stage tag `u8`,
//! point count `u32`, class count `u32`, block count `u32`, then per block a
//! `u16` name length, the UTF-8 name, a `u8` rank, `rank` dimensions as `u32`
//! and the payload as `f32`. Running statistics are ordinary blocks.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::{Architecture, BatchNorm, Classifier, DenseNormLayer, Encoder, Linear, Model, ParamBlocks, Projector, Stage};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"SWMM";
pub const MODEL_VERSION: u32 = 1;

pub fn serialize_model(model: &Model) -> Vec<u8> {
    let blocks = model.blocks();
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.write_u32::<LittleEndian>(MODEL_VERSION).unwrap();
    out.write_u8(model.stage.tag()).unwrap();
    out.write_u32::<LittleEndian>(model.n_points as u32).unwrap();
    out.write_u32::<LittleEndian>(model.classes() as u32).unwrap();
    out.write_u32::<LittleEndian>(blocks.len() as u32).unwrap();
    for b in &blocks {
        let name = b.name.as_bytes();
        out.write_u16::<LittleEndian>(name.len() as u16).unwrap();
        out.write_all(name).unwrap();
        out.write_u8(b.shape.len() as u8).unwrap();
        for &d in &b.shape {
            out.write_u32::<LittleEndian>(d as u32).unwrap();
        }
        for &v in b.data {
            out.write_f32::<LittleEndian>(v as f32).unwrap();
        }
    }
    out
}

struct RawBlock {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn truncated(what: &str) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(e)
        }
    }
}

/// Parses a model file, inferring the architecture from block shapes.
pub fn deserialize_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated("version"))?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let tag = r.read_u8().map_err(truncated("stage tag"))?;
    let stage = Stage::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown stage tag {tag}")))?;
    let n_points = r.read_u32::<LittleEndian>().map_err(truncated("point count"))? as usize;
    let classes = r.read_u32::<LittleEndian>().map_err(truncated("class count"))? as usize;
    let count = r.read_u32::<LittleEndian>().map_err(truncated("block count"))?;

    let mut blocks = BTreeMap::new();
    for i in 0..count {
        let ctx = format!("block {i}");
        let len = r.read_u16::<LittleEndian>().map_err(truncated(&ctx))? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated(&ctx))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format(format!("{ctx}: name is not UTF-8")))?;
        let rank = r.read_u8().map_err(truncated(&name))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(truncated(&name))? as usize);
        }
        let size: usize = shape.iter().product();
        let remaining = bytes.len() - r.position() as usize;
        if size.saturating_mul(4) > remaining {
            return Err(Error::Truncated(format!("payload of `{name}`")));
        }
        let mut data = Vec::with_capacity(size);
        for _ in 0..size {
            data.push(r.read_f32::<LittleEndian>().map_err(truncated(&name))? as f64);
        }
        if blocks.insert(name.clone(), RawBlock { shape, data }).is_some() {
            return Err(Error::Format(format!("duplicate block `{name}`")));
        }
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Format("trailing bytes after last block".into()));
    }

    let mut store = BlockStore { blocks };
    let encoder = store.encoder()?;
    let classifier = store.classifier(encoder.feature_dim())?;
    if classifier.classes() != classes {
        return Err(Error::ShapeMismatch {
            block: format!("classifier.{}.weight", classifier.hidden.len()),
            expected: vec![classifier.output.fan_in(), classes],
            found: vec![classifier.output.fan_in(), classifier.classes()],
        });
    }
    let projector = store.projector(encoder.feature_dim())?;
    if let Some(name) = store.blocks.keys().next() {
        return Err(Error::Format(format!("unexpected block `{name}`")));
    }
    Ok(Model {
        stage,
        n_points,
        encoder,
        classifier,
        projector,
    })
}

/// Parses a model file and checks it against an expected architecture and
/// stage. Shape disagreements name the first offending block.
pub fn deserialize_model_expecting(bytes: &[u8], arch: &Architecture, stage: Stage) -> Result<Model> {
    let model = deserialize_model(bytes)?;
    if model.stage != stage {
        return Err(Error::Format(format!(
            "expected a stage-{} model, found stage {}",
            stage.tag(),
            model.stage.tag()
        )));
    }
    if model.n_points != arch.n_points {
        return Err(Error::PointCountMismatch {
            left: arch.n_points,
            right: model.n_points,
        });
    }
    let reference = Model::init(arch, stage, model.projector.is_some(), 0)?;
    let expected = reference.blocks();
    let found = model.blocks();
    for e in &expected {
        match found.iter().find(|f| f.name == e.name) {
            Some(f) if f.shape == e.shape => {}
            Some(f) => {
                return Err(Error::ShapeMismatch {
                    block: e.name.clone(),
                    expected: e.shape.clone(),
                    found: f.shape.clone(),
                })
            }
            None => return Err(Error::MissingBlock(e.name.clone())),
        }
    }
    if let Some(extra) = found.iter().find(|f| !expected.iter().any(|e| e.name == f.name)) {
        return Err(Error::Format(format!("unexpected block `{}`", extra.name)));
    }
    Ok(model)
}

struct BlockStore {
    blocks: BTreeMap<String, RawBlock>,
}

impl BlockStore {
    fn has(&self, name: &str) -> bool {
        self.blocks.contains_key(name)
    }

    fn take(&mut self, name: &str, expected: &[Option<usize>]) -> Result<RawBlock> {
        let b = self
            .blocks
            .remove(name)
            .ok_or_else(|| Error::MissingBlock(name.to_string()))?;
        let ok = b.shape.len() == expected.len()
            && b.shape.iter().zip(expected).all(|(&d, e)| e.map_or(true, |e| e == d));
        if !ok {
            return Err(Error::ShapeMismatch {
                block: name.to_string(),
                expected: expected.iter().map(|e| e.unwrap_or(0)).collect(),
                found: b.shape,
            });
        }
        Ok(b)
    }

    fn linear(&mut self, prefix: &str, fan_in: usize) -> Result<Linear> {
        let w = self.take(&format!("{prefix}.weight"), &[Some(fan_in), None])?;
        let fan_out = w.shape[1];
        let b = self.take(&format!("{prefix}.bias"), &[Some(fan_out)])?;
        Ok(Linear {
            weight: Array2::from_shape_vec((fan_in, fan_out), w.data).expect("shape checked"),
            bias: Array1::from_vec(b.data),
        })
    }

    fn norm(&mut self, prefix: &str, width: usize) -> Result<BatchNorm> {
        let mut get = |part: &str| -> Result<Array1<f64>> {
            Ok(Array1::from_vec(self.take(&format!("{prefix}.norm.{part}"), &[Some(width)])?.data))
        };
        let bn = BatchNorm {
            gamma: get("gamma")?,
            beta: get("beta")?,
            running_mean: get("running_mean")?,
            running_var: get("running_var")?,
        };
        if bn.running_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Format(format!("{prefix}.norm.running_var must be positive")));
        }
        Ok(bn)
    }

    fn dense_norm(&mut self, prefix: &str, fan_in: usize) -> Result<DenseNormLayer> {
        let linear = self.linear(prefix, fan_in)?;
        let norm = self.norm(prefix, linear.fan_out())?;
        Ok(DenseNormLayer { linear, norm })
    }

    fn encoder(&mut self) -> Result<Encoder> {
        let mut layers = Vec::new();
        let mut fan_in = 3;
        while self.has(&format!("encoder.{}.weight", layers.len())) {
            let l = self.dense_norm(&format!("encoder.{}", layers.len()), fan_in)?;
            fan_in = l.linear.fan_out();
            layers.push(l);
        }
        if layers.is_empty() {
            return Err(Error::MissingBlock("encoder.0.weight".into()));
        }
        Ok(Encoder { layers })
    }

    fn classifier(&mut self, feature_dim: usize) -> Result<Classifier> {
        let mut count = 0;
        while self.has(&format!("classifier.{count}.weight")) {
            count += 1;
        }
        if count == 0 {
            return Err(Error::MissingBlock("classifier.0.weight".into()));
        }
        let mut hidden = Vec::new();
        let mut fan_in = feature_dim;
        for i in 0..count - 1 {
            let l = self.dense_norm(&format!("classifier.{i}"), fan_in)?;
            fan_in = l.linear.fan_out();
            hidden.push(l);
        }
        let output = self.linear(&format!("classifier.{}", count - 1), fan_in)?;
        Ok(Classifier { hidden, output })
    }

    fn projector(&mut self, feature_dim: usize) -> Result<Option<Projector>> {
        let mut layers = Vec::new();
        let mut fan_in = feature_dim;
        while self.has(&format!("projector.{}.weight", layers.len())) {
            let l = self.linear(&format!("projector.{}", layers.len()), fan_in)?;
            fan_in = l.fan_out();
            layers.push(l);
        }
        Ok((!layers.is_empty()).then_some(Projector { layers }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(classes: usize) -> Architecture {
        Architecture {
            n_points: 5,
            encoder_widths: vec![4, 6],
            classifier_widths: vec![5],
            projector_widths: vec![6, 3],
            classes,
        }
    }

    fn rounded(arch: &Architecture, projector: bool) -> Model {
        let mut m = Model::init(arch, Stage::Two, projector, 11).unwrap();
        for (i, b) in m.blocks_mut().into_iter().enumerate() {
            if b.name.ends_with("running_var") {
                b.data.iter_mut().for_each(|v| *v = 0.5 + i as f64);
            } else if b.name.ends_with("running_mean") || b.name.ends_with("bias") {
                b.data.iter_mut().enumerate().for_each(|(j, v)| *v = 0.1 * j as f64 - 0.2);
            }
        }
        m.round_to_f32();
        m
    }

    #[test]
    fn round_trip_is_exact() {
        for projector in [false, true] {
            let m = rounded(&tiny(4), projector);
            let bytes = serialize_model(&m);
            let back = deserialize_model(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(serialize_model(&back), bytes);
        }
    }

    #[test]
    fn bad_magic_is_distinct() {
        let mut bytes = serialize_model(&rounded(&tiny(4), false));
        bytes[0] = b'X';
        assert!(matches!(deserialize_model(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let mut bytes = serialize_model(&rounded(&tiny(4), false));
        bytes[4] = 9;
        assert!(matches!(
            deserialize_model(&bytes),
            Err(Error::VersionMismatch { expected: 1, found: 9 })
        ));
    }

    #[test]
    fn truncation_is_distinct() {
        let bytes = serialize_model(&rounded(&tiny(4), false));
        for cut in [2, 10, 30, bytes.len() - 1] {
            assert!(
                matches!(deserialize_model(&bytes[..cut]), Err(Error::Truncated(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn class_count_mismatch_names_block() {
        let bytes = serialize_model(&rounded(&tiny(10), false));
        match deserialize_model_expecting(&bytes, &tiny(5), Stage::Two) {
            Err(Error::ShapeMismatch { block, expected, found }) => {
                assert_eq!(block, "classifier.1.weight");
                assert_eq!(expected, vec![5, 5]);
                assert_eq!(found, vec![5, 10]);
            }
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }
}
