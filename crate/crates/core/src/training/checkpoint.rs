//! Plain-text checkpoints.
//!
//! ```text
//! AEFS-CHECKPOINT v1
//! vocab_sizes=12,7,30
//! fields=0,2
//! config=method = aefs
//! ...
//! tensor aux.controller.fc.weight 16 8
//! 0.0123 -0.5 ...
//! end
//! ```
//!
//! Values are printed with the shortest representation that parses back to
//! the same `f64`, so a save/load round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::numerics::{Module, Tensor2};

const MAGIC: &str = "AEFS-CHECKPOINT v1";

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Checkpoint(format!("bad list entry `{v}`"))))
        .collect()
}

fn write_tensor(out: &mut String, name: &str, t: &Tensor2) {
    let _ = writeln!(out, "tensor {name} {} {}", t.rows(), t.cols());
    let vals: Vec<String> = t.as_slice().iter().map(f64::to_string).collect();
    out.push_str(&vals.join(" "));
    out.push('\n');
}

/// Serializes the model with the config and vocabulary sizes needed to
/// rebuild it.
pub fn checkpoint_to_string(model: &Model, config: &TrainConfig) -> String {
    let mut model = model.clone();
    let mut out = String::from(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "vocab_sizes={}", join(&model.main_embeddings().vocab_sizes()));
    if let Model::Fixed(m) = &model {
        let _ = writeln!(out, "fields={}", join(&m.fields));
    }
    for line in config.to_text().lines() {
        let _ = writeln!(out, "config={line}");
    }
    for (name, p) in model.params() {
        write_tensor(&mut out, &format!("param:{name}"), &p.value);
    }
    for (name, b) in model.buffers() {
        write_tensor(&mut out, &format!("buffer:{name}"), b);
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(model: &Model, config: &TrainConfig, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, checkpoint_to_string(model, config))?;
    Ok(())
}

/// Rebuilds the architecture from the stored config and overwrites every
/// parameter and buffer by name. Missing, extra or misshapen tensors are
/// errors.
pub fn checkpoint_from_str(text: &str) -> Result<(Model, TrainConfig)> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Checkpoint("not a checkpoint (bad header)".into()));
    }
    let mut vocab_sizes = None;
    let mut fields = None;
    let mut config_text = String::new();
    let mut tensors: Vec<(String, Tensor2)> = Vec::new();
    let mut ended = false;
    while let Some(line) = lines.next() {
        if line == "end" {
            ended = true;
            break;
        }
        if let Some(v) = line.strip_prefix("vocab_sizes=") {
            vocab_sizes = Some(split_list::<usize>(v)?);
        } else if let Some(v) = line.strip_prefix("fields=") {
            fields = Some(split_list::<usize>(v)?);
        } else if let Some(v) = line.strip_prefix("config=") {
            config_text.push_str(v);
            config_text.push('\n');
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(Error::Checkpoint(format!("bad tensor header `{line}`")));
            };
            let rows: usize = rows.parse().map_err(|_| Error::Checkpoint(format!("bad rows in `{line}`")))?;
            let cols: usize = cols.parse().map_err(|_| Error::Checkpoint(format!("bad cols in `{line}`")))?;
            let data: Vec<f64> = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing values for `{name}`")))?
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::Checkpoint(format!("bad value `{v}` in `{name}`"))))
                .collect::<Result<_>>()?;
            tensors.push((name.to_string(), Tensor2::from_vec(rows, cols, data)?));
        } else {
            return Err(Error::Checkpoint(format!("unexpected checkpoint line `{line}`")));
        }
    }
    if !ended {
        return Err(Error::Checkpoint("truncated checkpoint (no `end`)".into()));
    }
    let vocab_sizes = vocab_sizes.ok_or_else(|| Error::Checkpoint("checkpoint lacks vocab_sizes".into()))?;
    let config = TrainConfig::parse(&config_text)?;
    let mut model = Model::build(&mut ChaCha8Rng::seed_from_u64(config.seed), &config, &vocab_sizes)?;
    if let (Model::Fixed(m), Some(f)) = (&mut model, fields) {
        if f.len() != m.fields.len() || f.iter().any(|&i| i >= vocab_sizes.len()) {
            return Err(Error::Checkpoint("checkpoint field list does not fit the model".into()));
        }
        m.fields = f;
    }

    let mut stored: std::collections::HashMap<String, Tensor2> = tensors.into_iter().collect();
    let mut assign = |key: String, target: &mut Tensor2| -> Result<()> {
        let t = stored
            .remove(&key)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{key}`")))?;
        if !t.same_shape(target) {
            return Err(Error::Checkpoint(format!(
                "`{key}` has shape {:?}, model expects {:?}",
                t.shape(),
                target.shape()
            )));
        }
        *target = t;
        Ok(())
    };
    for (name, p) in model.params() {
        assign(format!("param:{name}"), &mut p.value)?;
    }
    for (name, b) in model.buffers() {
        assign(format!("buffer:{name}"), b)?;
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::Checkpoint(format!("checkpoint has unknown tensor `{extra}`")));
    }
    Ok((model, config))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, TrainConfig)> {
    checkpoint_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{jitter_params, BatchNormMode};
    use crate::training::Method;

    fn cfg(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            d1: 4,
            d2: 2,
            hidden_dims: vec![3],
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn exact_round_trip_for_every_method() {
        let vocab = [5, 3, 4, 2];
        let batch: Vec<&[u32]> = vec![&[1, 0, 3, 1], &[4, 2, 0, 0]];
        for method in Method::ALL {
            let c = cfg(method);
            let mut m = Model::build(&mut ChaCha8Rng::seed_from_u64(9), &c, &vocab).unwrap();
            jitter_params(&mut m, 3, 0.1);
            for (_, b) in m.buffers() {
                b.as_mut_slice().iter_mut().for_each(|v| *v += 0.125);
            }
            m.set_mode(BatchNormMode::Inference);
            let text = checkpoint_to_string(&m, &c);
            let (mut back, c2) = checkpoint_from_str(&text).unwrap();
            back.set_mode(BatchNormMode::Inference);
            assert_eq!(c2, c);
            let (mut a, mut b) = (m.clone(), back.clone());
            let pa: Vec<_> = a.params().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
            let pb: Vec<_> = b.params().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
            assert_eq!(pa, pb, "{method}");
            assert_eq!(m.infer(&batch).unwrap().p_main, back.infer(&batch).unwrap().p_main);
            if let (Model::Fixed(x), Model::Fixed(y)) = (&m, &back) {
                assert_eq!(x.fields, y.fields);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let c = cfg(Method::Aefs);
        let m = Model::build(&mut ChaCha8Rng::seed_from_u64(1), &c, &[3, 3, 3]).unwrap();
        save_checkpoint(&m, &c, &path).unwrap();
        let (back, _) = load_checkpoint(&path).unwrap();
        assert_eq!(checkpoint_to_string(&back, &c), checkpoint_to_string(&m, &c));
    }

    #[test]
    fn corrupt_input_rejected() {
        let c = cfg(Method::None);
        let m = Model::build(&mut ChaCha8Rng::seed_from_u64(1), &c, &[3, 3]).unwrap();
        let good = checkpoint_to_string(&m, &c);
        assert!(checkpoint_from_str("hello\n").is_err());
        assert!(checkpoint_from_str(good.trim_end_matches("end\n")).is_err());
        let first_tensor = good.lines().position(|l| l.starts_with("tensor ")).unwrap();
        let mut lines: Vec<&str> = good.lines().collect();
        lines.remove(first_tensor);
        lines.remove(first_tensor);
        assert!(checkpoint_from_str(&lines.join("\n")).is_err());
        // Swap rows and cols of a non-square tensor: same values, wrong shape.
        let header = good
            .lines()
            .find(|l| {
                let p: Vec<&str> = l.split_whitespace().collect();
                p.len() == 4 && p[0] == "tensor" && p[2] != p[3]
            })
            .unwrap();
        let p: Vec<&str> = header.split_whitespace().collect();
        let swapped = format!("tensor {} {} {}", p[1], p[3], p[2]);
        assert!(checkpoint_from_str(&good.replacen(header, &swapped, 1)).is_err());
    }
}
