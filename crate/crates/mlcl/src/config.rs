//! Experiment configuration: flat `key = value` text with `[sections]`.
//!
//! Unknown keys are rejected with their line number. Every omitted key falls
//! back to a documented default (see the guide's configuration chapter).

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::stream::{
    generate_synthetic, load_stream, split_into_tasks, CooccurrenceSpec, Scenario, TaskStream,
};
use crate::trainer::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Synthetic stream description, sufficient to rebuild the exact stream from
/// a seed.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub examples: usize,
    pub noise: f64,
    /// Per-class marginals; a single entry broadcasts to every class.
    pub marginals: Vec<f64>,
    /// Base pairwise joint probability for every distinct pair.
    pub pair_base: f64,
    /// Specific pair overrides `(i, j, p)`.
    pub pair_overrides: Vec<(usize, usize, f64)>,
    /// Per-class prototype magnitudes (feature signal strength); a single
    /// entry broadcasts.
    pub prototype_scales: Vec<f64>,
    /// Class partition into tasks.
    pub tasks: Vec<Vec<usize>>,
    pub train_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 6,
            examples: 1200,
            noise: 0.25,
            marginals: vec![0.35],
            pair_base: 0.10,
            pair_overrides: Vec::new(),
            prototype_scales: vec![1.0],
            tasks: vec![vec![0, 1], vec![2, 3], vec![4, 5]],
            train_fraction: 0.7,
        }
    }
}

impl SyntheticSpec {
    pub fn to_cooccurrence(&self, feature_dim: usize, seed: u64) -> Result<CooccurrenceSpec> {
        let c = self.classes;
        let marginals = if self.marginals.len() == 1 {
            vec![self.marginals[0]; c]
        } else if self.marginals.len() == c {
            self.marginals.clone()
        } else {
            return Err(Error::Config(format!(
                "{} marginals for {c} classes",
                self.marginals.len()
            )));
        };
        let mut pairwise = vec![vec![self.pair_base; c]; c];
        for (i, row) in pairwise.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for &(i, j, p) in &self.pair_overrides {
            if i >= c || j >= c || i == j {
                return Err(Error::Config(format!("bad pair override ({i}, {j})")));
            }
            pairwise[i][j] = p;
            pairwise[j][i] = p;
        }
        let scales = if self.prototype_scales.len() == 1 {
            vec![self.prototype_scales[0]; c]
        } else if self.prototype_scales.len() == c {
            self.prototype_scales.clone()
        } else {
            return Err(Error::Config(format!(
                "{} prototype scales for {c} classes",
                self.prototype_scales.len()
            )));
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_01);
        let prototypes = (0..c)
            .map(|class| {
                (0..feature_dim)
                    .map(|_| scales[class] * rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let spec = CooccurrenceSpec { marginals, pairwise, prototypes, noise: self.noise };
        spec.validate()?;
        Ok(spec)
    }

    pub fn build_stream(
        &self,
        scenario: Scenario,
        feature_dim: usize,
        seed: u64,
    ) -> Result<TaskStream> {
        let covered: usize = self.tasks.iter().map(|t| t.len()).sum();
        if covered != self.classes {
            return Err(Error::Config(format!(
                "task partition covers {covered} classes, spec has {}",
                self.classes
            )));
        }
        let cooc = self.to_cooccurrence(feature_dim, seed)?;
        let data = generate_synthetic(&cooc, self.examples, seed)?;
        split_into_tasks(&data, &self.tasks, scenario, self.train_fraction, seed)
    }
}

/// Where the task stream comes from.
#[derive(Clone, Debug)]
pub enum StreamSource {
    Synthetic(SyntheticSpec),
    Files { manifest: PathBuf },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub stream: StreamSource,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run: RunConfig::default(),
            stream: StreamSource::Synthetic(SyntheticSpec::default()),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut synthetic = SyntheticSpec::default();
        let mut manifest: Option<PathBuf> = None;
        let mut source_files = false;
        let mut section = String::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                match section.as_str() {
                    "run" | "model" | "stream" | "out" => continue,
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("unknown section '[{other}]'"),
                        })
                    }
                }
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: line_no,
                msg: "expected 'key = value'".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad_value = |what: &str| Error::Parse {
                line: line_no,
                msg: format!("bad {what} value '{value}'"),
            };

            match (section.as_str(), key) {
                ("run", "mode") => cfg.run.mode = value.parse()?,
                ("run", "scenario") => cfg.run.scenario = value.parse()?,
                ("run", "seed") => cfg.run.seed = value.parse().map_err(|_| bad_value("seed"))?,
                ("run", "batch_size") => {
                    cfg.run.batch_size = value.parse().map_err(|_| bad_value("batch_size"))?
                }
                ("run", "learning_rate") => {
                    cfg.run.adam.learning_rate =
                        value.parse().map_err(|_| bad_value("learning_rate"))?
                }
                ("run", "beta1") => {
                    cfg.run.adam.beta1 = value.parse().map_err(|_| bad_value("beta1"))?
                }
                ("run", "beta2") => {
                    cfg.run.adam.beta2 = value.parse().map_err(|_| bad_value("beta2"))?
                }
                ("run", "epsilon") => {
                    cfg.run.adam.epsilon = value.parse().map_err(|_| bad_value("epsilon"))?
                }
                ("run", "lambda1") | ("run", "lambda2") | ("run", "lambda3") => {
                    let v: f64 = value.parse().map_err(|_| bad_value(key))?;
                    let w = &mut cfg.run.weights;
                    let (l1, l2, l3) = (w.lambda1, w.lambda2, w.lambda3);
                    *w = match key {
                        "lambda1" => LossWeights::new(v, l2, l3)?,
                        "lambda2" => LossWeights::new(l1, v, l3)?,
                        _ => LossWeights::new(l1, l2, v)?,
                    };
                }
                ("run", "threshold") => {
                    cfg.run.threshold = value.parse().map_err(|_| bad_value("threshold"))?
                }
                ("run", "disable_rq") => {
                    cfg.run.disable_rq = parse_bool(value, line_no)?
                }
                ("run", "disable_gph") => {
                    cfg.run.disable_gph = parse_bool(value, line_no)?
                }
                ("run", "disable_dst") => {
                    cfg.run.disable_dst = parse_bool(value, line_no)?
                }
                ("run", "random_expert") => {
                    cfg.run.random_expert = parse_bool(value, line_no)?
                }
                ("run", "acm_binarize") => {
                    cfg.run.acm_binarize =
                        Some(value.parse().map_err(|_| bad_value("acm_binarize"))?)
                }
                ("model", "input_dim") => {
                    cfg.run.dims.input_dim = value.parse().map_err(|_| bad_value("input_dim"))?
                }
                ("model", "feature_dim") => {
                    cfg.run.dims.feature_dim =
                        value.parse().map_err(|_| bad_value("feature_dim"))?
                }
                ("model", "gcn_dim1") => {
                    cfg.run.dims.gcn_dim1 = value.parse().map_err(|_| bad_value("gcn_dim1"))?
                }
                ("model", "gcn_dim2") => {
                    cfg.run.dims.gcn_dim2 = value.parse().map_err(|_| bad_value("gcn_dim2"))?
                }
                ("model", "backbone_layers") => {
                    cfg.run.dims.backbone_layers =
                        value.parse().map_err(|_| bad_value("backbone_layers"))?
                }
                ("model", "activation_slope") => {
                    cfg.run.dims.activation_slope =
                        value.parse().map_err(|_| bad_value("activation_slope"))?
                }
                ("stream", "source") => match value {
                    "synthetic" => source_files = false,
                    "files" => source_files = true,
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("unknown stream source '{other}'"),
                        })
                    }
                },
                ("stream", "manifest") => manifest = Some(PathBuf::from(value)),
                ("stream", "classes") => {
                    synthetic.classes = value.parse().map_err(|_| bad_value("classes"))?
                }
                ("stream", "examples") => {
                    synthetic.examples = value.parse().map_err(|_| bad_value("examples"))?
                }
                ("stream", "noise") => {
                    synthetic.noise = value.parse().map_err(|_| bad_value("noise"))?
                }
                ("stream", "marginal") => {
                    synthetic.marginals =
                        vec![value.parse().map_err(|_| bad_value("marginal"))?]
                }
                ("stream", "marginals") => {
                    synthetic.marginals = value
                        .split(';')
                        .map(|tok| tok.trim().parse::<f64>().map_err(|_| bad_value("marginals")))
                        .collect::<Result<_>>()?
                }
                ("stream", "pair_base") => {
                    synthetic.pair_base = value.parse().map_err(|_| bad_value("pair_base"))?
                }
                ("stream", "prototype_scales") => {
                    synthetic.prototype_scales = value
                        .split(';')
                        .map(|tok| {
                            tok.trim()
                                .parse::<f64>()
                                .map_err(|_| bad_value("prototype_scales"))
                        })
                        .collect::<Result<_>>()?
                }
                ("stream", "train_fraction") => {
                    synthetic.train_fraction =
                        value.parse().map_err(|_| bad_value("train_fraction"))?
                }
                ("stream", "tasks") => {
                    synthetic.tasks = value
                        .split('|')
                        .map(|group| {
                            group
                                .split(',')
                                .map(|tok| {
                                    tok.trim()
                                        .parse::<usize>()
                                        .map_err(|_| bad_value("tasks"))
                                })
                                .collect::<Result<Vec<usize>>>()
                        })
                        .collect::<Result<_>>()?
                }
                ("stream", k) if k.starts_with("pair.") => {
                    let mut parts = k.splitn(3, '.');
                    parts.next();
                    let i: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad_value("pair override key"))?;
                    let j: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad_value("pair override key"))?;
                    let p: f64 = value.parse().map_err(|_| bad_value("pair override"))?;
                    synthetic.pair_overrides.push((i, j, p));
                }
                ("out", "dir") => cfg.out_dir = Some(PathBuf::from(value)),
                (sec, k) => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: if sec.is_empty() {
                            format!("key '{k}' before any section")
                        } else {
                            format!("unknown key '{k}' in section '[{sec}]'")
                        },
                    })
                }
            }
        }

        cfg.stream = if source_files {
            let manifest = manifest.ok_or_else(|| {
                Error::Config("stream source 'files' needs a manifest path".into())
            })?;
            StreamSource::Files { manifest }
        } else {
            StreamSource::Synthetic(synthetic)
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Materializes the task stream this config describes.
    pub fn build_stream(&self) -> Result<TaskStream> {
        match &self.stream {
            StreamSource::Synthetic(spec) => {
                spec.build_stream(self.run.scenario, self.run.dims.input_dim, self.run.seed)
            }
            StreamSource::Files { manifest } => {
                let mut stream = load_stream(manifest)?;
                // The file's mode is a default; the run scenario governs.
                stream.scenario = self.run.scenario;
                Ok(stream)
            }
        }
    }
}

fn parse_bool(value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Parse {
            line,
            msg: format!("bad boolean '{other}'"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# direction-check experiment
[run]
mode = agcn++
scenario = IL
seed = 11
batch_size = 8
learning_rate = 0.005
lambda1 = 0.2
lambda2 = 0.8
lambda3 = 50

[model]
input_dim = 12
feature_dim = 12
gcn_dim1 = 8
gcn_dim2 = 8
backbone_layers = 2

[stream]
source = synthetic
classes = 4
examples = 400
marginal = 0.4
pair_base = 0.12
pair.0.2 = 0.3
tasks = 0,1|2,3

[out]
dir = runs/sample
"#;

    #[test]
    fn parses_a_full_config() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.run.seed, 11);
        assert_eq!(cfg.run.batch_size, 8);
        assert_eq!(cfg.run.weights.lambda3, 50.0);
        assert_eq!(cfg.run.dims.input_dim, 12);
        match &cfg.stream {
            StreamSource::Synthetic(s) => {
                assert_eq!(s.classes, 4);
                assert_eq!(s.pair_overrides, vec![(0, 2, 0.3)]);
                assert_eq!(s.tasks, vec![vec![0, 1], vec![2, 3]]);
            }
            _ => panic!("expected synthetic source"),
        }
        assert_eq!(cfg.out_dir.as_deref(), Some(Path::new("runs/sample")));
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let text = "[run]\nmode = agcn++\nbogus = 1\n";
        match ExperimentConfig::parse(text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("bogus"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn marginal_above_one_is_rejected_at_build() {
        let text = "[stream]\nmarginal = 1.5\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        match cfg.stream {
            StreamSource::Synthetic(s) => {
                assert!(s.build_stream(Scenario::Il, 8, 0).is_err());
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn same_seed_builds_identical_streams() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let a = cfg.build_stream().unwrap();
        let b = cfg.build_stream().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn files_source_requires_manifest() {
        let text = "[stream]\nsource = files\n";
        assert!(matches!(
            ExperimentConfig::parse(text),
            Err(Error::Config(_))
        ));
    }
}
