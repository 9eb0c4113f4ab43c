use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::resnet::Depth;
use crate::nn::{Slot, Visit};
use crate::{Error, Result};

/// Flat key to tensor archive.
pub type WeightMap = BTreeMap<String, ArrayD<f64>>;

/// Parameter and buffer keys of a network, in order, with their shapes.
///
/// Names follow the common ResNet checkpoint layout (`conv1.weight`,
/// `layer2.0.downsample.1.running_var`, `fc.weight`, ...). The classifier
/// `fc` is listed when `n_classes` is given.
pub fn key_table(depth: Depth, width: usize, n_classes: Option<usize>) -> Vec<(String, Vec<usize>)> {
    let mut keys = Vec::new();
    let bn = |keys: &mut Vec<(String, Vec<usize>)>, prefix: &str, c: usize| {
        for leaf in ["weight", "bias", "running_mean", "running_var"] {
            keys.push((format!("{prefix}.{leaf}"), vec![c]));
        }
    };
    keys.push(("conv1.weight".to_string(), vec![width, 3, 7, 7]));
    bn(&mut keys, "bn1", width);
    let exp = depth.expansion();
    let mut inplanes = width;
    for (i, &n) in depth.layers().iter().enumerate() {
        let planes = width << i;
        for b in 0..n {
            let p = format!("layer{}.{b}", i + 1);
            let stride = if i > 0 && b == 0 { 2 } else { 1 };
            let convs: Vec<(usize, usize, usize)> = if depth.bottleneck() {
                vec![(planes, inplanes, 1), (planes, planes, 3), (planes * 4, planes, 1)]
            } else {
                vec![(planes, inplanes, 3), (planes, planes, 3)]
            };
            for (j, (o, c, k)) in convs.into_iter().enumerate() {
                keys.push((format!("{p}.conv{}.weight", j + 1), vec![o, c, k, k]));
                bn(&mut keys, &format!("{p}.bn{}", j + 1), o);
            }
            if stride != 1 || inplanes != planes * exp {
                keys.push((format!("{p}.downsample.0.weight"), vec![planes * exp, inplanes, 1, 1]));
                bn(&mut keys, &format!("{p}.downsample.1"), planes * exp);
            }
            inplanes = planes * exp;
        }
    }
    if let Some(n) = n_classes {
        keys.push(("fc.weight".to_string(), vec![n, inplanes]));
        keys.push(("fc.bias".to_string(), vec![n]));
    }
    keys
}

/// Copy every parameter and buffer of `module` (under `prefix`) from the
/// archive. Each key must be present with exactly the module's shape.
pub fn import_weights(module: &mut dyn Visit, prefix: &str, weights: &WeightMap) -> Result<usize> {
    let mut err = None;
    let mut n = 0;
    module.visit(prefix, &mut |key, slot| {
        if err.is_some() {
            return;
        }
        let mut dst = match slot {
            Slot::Param { value, .. } => value,
            Slot::Buffer(v) => v,
        };
        match weights.get(key) {
            None => err = Some(Error::MissingWeights(key.to_string())),
            Some(src) if src.shape() != dst.shape() => {
                err = Some(Error::WeightShapeMismatch {
                    key: key.to_string(),
                    expected: dst.shape().to_vec(),
                    found: src.shape().to_vec(),
                })
            }
            Some(src) => {
                dst.assign(src);
                n += 1;
            }
        }
    });
    err.map_or(Ok(n), Err)
}

/// Snapshot every parameter and buffer of `module` under `prefix`.
pub fn export_weights(module: &mut dyn Visit, prefix: &str, out: &mut WeightMap) {
    module.visit(prefix, &mut |key, slot| {
        let v = match slot {
            Slot::Param { value, .. } => value.to_owned(),
            Slot::Buffer(v) => v.to_owned(),
        };
        out.insert(key.to_string(), v);
    });
}

/// Read a safetensors archive. F32 and F64 tensors are accepted; integer
/// bookkeeping tensors are skipped.
pub fn load_safetensors(path: &Path) -> Result<(WeightMap, HashMap<String, String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes)?;
    let mut map = WeightMap::new();
    for (name, view) in st.tensors() {
        let data = view.data();
        let values: Vec<f64> = match view.dtype() {
            Dtype::F64 => data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            other => {
                log::debug!("skipping {name}: dtype {other:?}");
                continue;
            }
        };
        let arr = ArrayD::from_shape_vec(view.shape().to_vec(), values)
            .map_err(|e| Error::Data(format!("{name}: {e}")))?;
        map.insert(name, arr);
    }
    let (_, meta) = SafeTensors::read_metadata(&bytes)?;
    let info = meta.metadata().clone().unwrap_or_default();
    Ok((map, info))
}

/// Write an F64 safetensors archive with string metadata.
pub fn save_safetensors(path: &Path, weights: &WeightMap, metadata: HashMap<String, String>) -> Result<()> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = weights
        .iter()
        .map(|(k, v)| {
            let bytes = v.iter().flat_map(|x| x.to_le_bytes()).collect();
            (k.clone(), v.shape().to_vec(), bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(k, shape, bytes)| Ok((k.as_str(), TensorView::new(Dtype::F64, shape.clone(), bytes)?)))
        .collect::<Result<Vec<_>>>()?;
    let meta = if metadata.is_empty() { None } else { Some(metadata) };
    safetensors::serialize_to_file(views, &meta, path)?;
    Ok(())
}
