//! Flat `key = value` run configuration covering both the model and the
//! training schedule. Lines starting with `#` are comments.

use crate::error::{Error, Result};
use crate::network::{ModelConfig, Variant};
use crate::pr::Strategy;
use crate::training::TrainConfig;

/// A complete, commented configuration with every recognized key at its
/// default value.
pub const EXAMPLE: &str = "\
# model
variant = ggs_ssd          # fpn | ggs | ggs_ssd
strategy = fc              # fc | spatial | channel
stage_channels = 16,32,64,64,64
unified = 16
pooled = 4x4               # pooling extent of the fc perception head
reduction = 16             # channel reduction of the memory-unit heads
ieo = true                 # eye-observation refinement at the deep levels
cfe = false                # dilated context enrichment at the same levels
input_size = 128
model_seed = 42

# training
epochs = 40
batch_size = 4
lr = 0.001
momentum = 0.9
weight_decay = 0.0005
power = 0.9                # polynomial lr-decay exponent
augment = true
train_seed = 1
";

fn bad(line: usize, detail: impl Into<String>) -> Error {
    Error::Config(format!("line {line}: {}", detail.into()))
}

fn parse<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(line, format!("cannot parse '{v}' for {key}")))
}

pub fn parse_config(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let mut m = ModelConfig::default();
    let mut t = TrainConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let no_comment = raw.split('#').next().unwrap_or("").trim();
        if no_comment.is_empty() {
            continue;
        }
        let (key, value) = no_comment
            .split_once('=')
            .ok_or_else(|| bad(line, format!("expected 'key = value', got '{no_comment}'")))?;
        let key = key.trim();
        let v = value.trim();
        match key {
            "variant" => {
                m.variant = match v {
                    "fpn" => Variant::Fpn,
                    "ggs" => Variant::Ggs,
                    "ggs_ssd" => Variant::GgsSsd,
                    _ => return Err(bad(line, format!("unknown variant '{v}'"))),
                }
            }
            "strategy" => {
                m.strategy = match v {
                    "fc" => Strategy::Fc,
                    "spatial" => Strategy::Spatial,
                    "channel" => Strategy::Channel,
                    _ => return Err(bad(line, format!("unknown strategy '{v}'"))),
                }
            }
            "stage_channels" => {
                let parts: Vec<usize> = v
                    .split(',')
                    .map(|p| parse(line, key, p.trim()))
                    .collect::<Result<_>>()?;
                m.stage_channels = parts
                    .try_into()
                    .map_err(|p: Vec<usize>| bad(line, format!("need 5 stage channels, got {}", p.len())))?;
            }
            "unified" => m.unified = parse(line, key, v)?,
            "pooled" => {
                let (a, b) = v
                    .split_once('x')
                    .ok_or_else(|| bad(line, "pooled wants WxH, e.g. 4x4"))?;
                m.pooled = (parse(line, key, a.trim())?, parse(line, key, b.trim())?);
            }
            "reduction" => m.reduction = parse(line, key, v)?,
            "ieo" => m.ieo = parse(line, key, v)?,
            "cfe" => m.cfe = parse(line, key, v)?,
            "input_size" => m.input_size = parse(line, key, v)?,
            "model_seed" => m.seed = parse(line, key, v)?,
            "epochs" => t.epochs = parse(line, key, v)?,
            "batch_size" => t.batch_size = parse(line, key, v)?,
            "lr" => t.lr = parse(line, key, v)?,
            "momentum" => t.momentum = parse(line, key, v)?,
            "weight_decay" => t.weight_decay = parse(line, key, v)?,
            "power" => t.power = parse(line, key, v)?,
            "augment" => t.augment = parse(line, key, v)?,
            "train_seed" => t.seed = parse(line, key, v)?,
            _ => return Err(bad(line, format!("unknown key '{key}'"))),
        }
    }
    m.validate()?;
    Ok((m, t))
}

pub fn read_config_file(path: &std::path::Path) -> Result<(ModelConfig, TrainConfig)> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_parses_to_the_defaults() {
        let (m, t) = parse_config(EXAMPLE).unwrap();
        assert_eq!(m, ModelConfig::default());
        assert_eq!(t, TrainConfig::default());
    }

    #[test]
    fn overrides_and_comments() {
        let (m, t) = parse_config(
            "variant = fpn\nieo = false\ninput_size = 224 # bigger\nlr = 0.01\nstage_channels = 8, 8, 8, 8, 8\n",
        )
        .unwrap();
        assert_eq!(m.variant, Variant::Fpn);
        assert_eq!(m.input_size, 224);
        assert_eq!(m.stage_channels, [8; 5]);
        assert_eq!(t.lr, 0.01);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_config("variant = fpn\nieo = false\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_config("pooled = 44\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn parsed_config_is_validated() {
        assert!(parse_config("input_size = 100\n").is_err());
    }
}
