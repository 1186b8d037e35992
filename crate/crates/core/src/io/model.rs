//! Versioned model container: kernels, expert weights, means grid metadata,
//! conditioning variant and parameters, training provenance. Stored as JSON
//! with exact `f64` round-tripping.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{GmmExpert, TimeConditioning, TimeMlp, MLP_HIDDEN};
use crate::filterbank::FilterBank;
use crate::prior::{ModelMetadata, PoGmdm};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertSpec {
    pub v_min: f64,
    pub v_max: f64,
    pub n_components: usize,
    pub free_weights: Vec<f64>,
    pub base_variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ConditioningSpec {
    SpectralMax {
        nu2: Vec<f64>,
        sigma0_sq: f64,
    },
    SpectralMean {
        nu2: Vec<f64>,
        sigma0_sq: f64,
    },
    LearnedMlp {
        sigma0_sq: f64,
        n_outputs: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
        w3: Vec<f64>,
        b3: Vec<f64>,
    },
    LearnedSoftplus {
        theta1: Vec<f64>,
        theta2: Vec<f64>,
        theta3: Vec<f64>,
        sigma0_sq: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kernel_size: usize,
    pub image_shape: (usize, usize),
    /// Row-major kernel coefficients, one vector per filter.
    pub kernels: Vec<Vec<f64>>,
    pub experts: Vec<ExpertSpec>,
    pub conditioning: ConditioningSpec,
    pub metadata: ModelMetadata,
}

impl ModelFile {
    pub fn from_model(model: &PoGmdm) -> Self {
        let bank = model.bank();
        let kernels = bank
            .kernels()
            .iter()
            .map(|k| k.iter().copied().collect())
            .collect();
        let experts = model
            .experts()
            .iter()
            .map(|e| {
                let (v_min, v_max) = e.interval();
                ExpertSpec {
                    v_min,
                    v_max,
                    n_components: e.n_components(),
                    free_weights: e.free_weights().to_vec(),
                    base_variance: e.base_variance(),
                }
            })
            .collect();
        let conditioning = match model.conditioning() {
            TimeConditioning::SpectralMax { nu2, sigma0_sq } => ConditioningSpec::SpectralMax {
                nu2: nu2.clone(),
                sigma0_sq: *sigma0_sq,
            },
            TimeConditioning::SpectralMean { nu2, sigma0_sq } => ConditioningSpec::SpectralMean {
                nu2: nu2.clone(),
                sigma0_sq: *sigma0_sq,
            },
            TimeConditioning::LearnedMlp { mlp, sigma0_sq } => ConditioningSpec::LearnedMlp {
                sigma0_sq: *sigma0_sq,
                n_outputs: mlp.n_outputs(),
                w1: mlp.w1.clone(),
                b1: mlp.b1.clone(),
                w2: mlp.w2.iter().copied().collect(),
                b2: mlp.b2.clone(),
                w3: mlp.w3.iter().copied().collect(),
                b3: mlp.b3.clone(),
            },
            TimeConditioning::LearnedSoftplus {
                theta1,
                theta2,
                theta3,
                sigma0_sq,
            } => ConditioningSpec::LearnedSoftplus {
                theta1: theta1.clone(),
                theta2: theta2.clone(),
                theta3: theta3.clone(),
                sigma0_sq: *sigma0_sq,
            },
        };
        Self {
            format_version: MODEL_FORMAT_VERSION,
            kernel_size: bank.kernel_size(),
            image_shape: bank.image_shape(),
            kernels,
            experts,
            conditioning,
            metadata: model.metadata().clone(),
        }
    }

    pub fn into_model(self) -> Result<PoGmdm> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        let r = self.kernel_size;
        let kernels = self
            .kernels
            .into_iter()
            .map(|flat| {
                Array2::from_shape_vec((r, r), flat)
                    .map_err(|e| Error::Format(format!("kernel shape: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let bank = FilterBank::new(kernels, self.image_shape)?;
        let experts = self
            .experts
            .into_iter()
            .map(|spec| {
                GmmExpert::from_parts(
                    spec.v_min,
                    spec.v_max,
                    spec.n_components,
                    spec.free_weights,
                    spec.base_variance,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let conditioning = match self.conditioning {
            ConditioningSpec::SpectralMax { nu2, sigma0_sq } => {
                TimeConditioning::SpectralMax { nu2, sigma0_sq }
            }
            ConditioningSpec::SpectralMean { nu2, sigma0_sq } => {
                TimeConditioning::SpectralMean { nu2, sigma0_sq }
            }
            ConditioningSpec::LearnedMlp {
                sigma0_sq,
                n_outputs,
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => {
                let h = MLP_HIDDEN;
                if w1.len() != h || w2.len() != h * h || w3.len() != n_outputs * h {
                    return Err(Error::Format("MLP parameter shapes inconsistent".into()));
                }
                let mlp = TimeMlp {
                    w1,
                    b1,
                    w2: Array2::from_shape_vec((h, h), w2)
                        .map_err(|e| Error::Format(e.to_string()))?,
                    b2,
                    w3: Array2::from_shape_vec((n_outputs, h), w3)
                        .map_err(|e| Error::Format(e.to_string()))?,
                    b3,
                };
                TimeConditioning::LearnedMlp { mlp, sigma0_sq }
            }
            ConditioningSpec::LearnedSoftplus {
                theta1,
                theta2,
                theta3,
                sigma0_sq,
            } => TimeConditioning::LearnedSoftplus {
                theta1,
                theta2,
                theta3,
                sigma0_sq,
            },
        };
        PoGmdm::new(bank, experts, conditioning, self.metadata)
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &PoGmdm) -> Result<()> {
    let file = ModelFile::from_model(model);
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Format(format!("model serialization: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PoGmdm> {
    let json = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("model parse: {e}")))?;
    file.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::SpectralMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_model(seed: u64) -> PoGmdm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = FilterBank::random_init(4, 3, (16, 16), &mut rng).unwrap();
        let experts = (0..4)
            .map(|_| GmmExpert::uniform(-0.5, 0.5, 9).unwrap())
            .collect();
        let nu2 = bank.spectral_nu(SpectralMode::Max);
        PoGmdm::new(
            bank,
            experts,
            TimeConditioning::SpectralMax {
                nu2,
                sigma0_sq: 0.125,
            },
            ModelMetadata {
                iterations: 123,
                ema: true,
                interval: (-0.5, 0.5),
                training_image_size: (16, 16),
            },
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_preserves_evaluation() {
        let dir = std::env::temp_dir().join("pogmdm_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let model = sample_model(3);
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.count_parameters(), model.count_parameters());
        let x = crate::synth::corpus_images(1, 16, 5).remove(0);
        let a = model.score(&x, 0.04).unwrap();
        let b = loaded.score(&x, 0.04).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert_eq!(p.to_bits(), q.to_bits(), "bit-exact model roundtrip");
        }
    }

    #[test]
    fn save_is_deterministic() {
        let dir = std::env::temp_dir().join("pogmdm_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let (p1, p2) = (dir.join("m1.json"), dir.join("m2.json"));
        let model = sample_model(7);
        save_model(&p1, &model).unwrap();
        save_model(&p2, &model).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn mlp_variant_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bank = FilterBank::random_init(3, 3, (8, 8), &mut rng).unwrap();
        let experts = (0..3)
            .map(|_| GmmExpert::uniform(-0.5, 0.5, 5).unwrap())
            .collect();
        let mlp = TimeMlp::new(3, &mut rng);
        let model = PoGmdm::new(
            bank,
            experts,
            TimeConditioning::LearnedMlp {
                mlp,
                sigma0_sq: 0.25,
            },
            ModelMetadata::default(),
        )
        .unwrap();
        let dir = std::env::temp_dir().join("pogmdm_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mlp.json");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        let a = model.variances(0.3).unwrap();
        let b = loaded.variances(0.3).unwrap();
        assert_eq!(a, b);
    }
}
