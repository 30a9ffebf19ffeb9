//! Reward-supervised termination classifier.
//!
//! A binary network over [`StateEmb`] deciding whether ending the episode
//! now is advisable. Labels come straight from the environment reward: a
//! step whose reward clears the threshold (only a successful Done does
//! under the default scheme) is positive, everything else negative.
//! Training happens online through a fixed-capacity batch buffer and uses
//! focal loss, since positives are rare.
//!
//! Only *effective* states — frames where the target is visible — ever
//! reach the judge, for inference or training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    focal_loss, focal_loss_logit_coefficient, sgd_step, softmax, Activation, Gradients, LayerSpec,
    Mlp, MlpCache, NetworkParams,
};
use crate::perception::{StateEmb, SCENE_DIM};

/// Judge output distribution `[p_terminate, p_continue]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutput {
    /// Probability that terminating now is advisable.
    pub p_terminate: f64,
    /// Probability that it is not.
    pub p_continue: f64,
}

impl JudgeOutput {
    pub fn new(p_terminate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_terminate) {
            return Err(Error::Domain(format!(
                "p_terminate must lie in [0, 1], got {p_terminate}"
            )));
        }
        Ok(JudgeOutput {
            p_terminate,
            p_continue: 1.0 - p_terminate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JudgeLabel {
    Positive,
    Negative,
}

/// One buffered training sample.
#[derive(Debug, Clone)]
pub struct JudgeSample {
    pub state_emb: StateEmb,
    pub label: JudgeLabel,
}

/// Fixed-capacity sample store; returns a full batch exactly when the
/// capacity is reached and empties itself immediately.
#[derive(Debug)]
pub struct BatchBuffer {
    samples: Vec<JudgeSample>,
    capacity: usize,
}

impl BatchBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".to_string()));
        }
        Ok(BatchBuffer {
            samples: Vec::with_capacity(capacity),
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Is the target visible in this frame? The judge acts only on such states.
pub fn is_effective_state(state_emb: &StateEmb) -> bool {
    state_emb.effective
}

/// Reward-to-label rule: positive iff `reward >= tau` (inclusive).
pub fn label_from_reward(reward: f64, tau: f64) -> JudgeLabel {
    if reward >= tau {
        JudgeLabel::Positive
    } else {
        JudgeLabel::Negative
    }
}

/// Append one sample; on reaching capacity, drain and return the batch.
pub fn push_sample(
    buffer: &mut BatchBuffer,
    state_emb: StateEmb,
    label: JudgeLabel,
) -> Result<Option<Vec<JudgeSample>>> {
    if !state_emb.effective {
        return Err(Error::Contract(
            "non-effective state pushed to the judge buffer".to_string(),
        ));
    }
    buffer.samples.push(JudgeSample { state_emb, label });
    if buffer.samples.len() >= buffer.capacity {
        let batch = std::mem::take(&mut buffer.samples);
        buffer.samples.reserve(buffer.capacity);
        return Ok(Some(batch));
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeNetConfig {
    pub d_emb: usize,
    /// Common dimension each component is mapped to before fusion.
    pub common_dim: usize,
    /// Width multiplier of the expanding layer.
    pub expansion: usize,
    pub leaky_slope: f64,
}

impl Default for JudgeNetConfig {
    fn default() -> Self {
        JudgeNetConfig {
            d_emb: 16,
            common_dim: 64,
            expansion: 2,
            leaky_slope: 0.01,
        }
    }
}

/// The judge network: one expand/squeeze stack per state component mapping
/// to a common dimension, then fusion layers down to two logits.
#[derive(Debug, Clone)]
pub struct JudgeNet {
    cfg: JudgeNetConfig,
    scene: Mlp,
    target: Mlp,
    tag: Mlp,
    fuse: Mlp,
}

/// Intermediates of one judge forward pass.
#[derive(Debug, Clone)]
pub struct JudgeCache {
    scene: MlpCache,
    target: MlpCache,
    tag: MlpCache,
    fuse: MlpCache,
    pub probs: [f64; 2],
}

fn component_stack(prefix: &str, in_dim: usize, cfg: &JudgeNetConfig) -> Result<Mlp> {
    let wide = cfg.common_dim * cfg.expansion;
    let act = Activation::LeakyRelu(cfg.leaky_slope);
    Mlp::new(vec![
        LayerSpec::new(&format!("{prefix}_expand"), in_dim, wide, act),
        LayerSpec::new(&format!("{prefix}_squeeze"), wide, cfg.common_dim, act),
    ])
}

impl JudgeNet {
    pub fn new(cfg: JudgeNetConfig) -> Result<Self> {
        if cfg.common_dim == 0 || cfg.expansion == 0 {
            return Err(Error::Config(
                "judge dimensions must be positive".to_string(),
            ));
        }
        let act = Activation::LeakyRelu(cfg.leaky_slope);
        let scene = component_stack("judge_scene", SCENE_DIM, &cfg)?;
        let target = component_stack("judge_target", cfg.d_emb, &cfg)?;
        let tag = component_stack("judge_tag", 5, &cfg)?;
        let fuse = Mlp::new(vec![
            LayerSpec::new("judge_fuse", 3 * cfg.common_dim, cfg.common_dim, act),
            LayerSpec::new("judge_logits", cfg.common_dim, 2, Activation::Linear),
        ])?;
        Ok(JudgeNet {
            cfg,
            scene,
            target,
            tag,
            fuse,
        })
    }

    pub fn cfg(&self) -> &JudgeNetConfig {
        &self.cfg
    }

    pub fn init_params(&self, seed: u64) -> Result<NetworkParams> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = NetworkParams::new();
        self.scene.init_params(&mut params, &mut rng)?;
        self.target.init_params(&mut params, &mut rng)?;
        self.tag.init_params(&mut params, &mut rng)?;
        self.fuse.init_params(&mut params, &mut rng)?;
        Ok(params)
    }

    pub fn forward(
        &self,
        params: &NetworkParams,
        state_emb: &StateEmb,
    ) -> Result<(JudgeOutput, JudgeCache)> {
        if !state_emb.effective {
            return Err(Error::Contract(
                "judge forward on a non-effective state".to_string(),
            ));
        }
        if state_emb.target_emb.len() != self.cfg.d_emb {
            return Err(Error::shape(
                format!("target embedding of dim {}", self.cfg.d_emb),
                format!("{}", state_emb.target_emb.len()),
            ));
        }
        let (scene_out, scene) = self.scene.forward(params, &state_emb.scene_emb)?;
        let (target_out, target) = self.target.forward(params, &state_emb.target_emb)?;
        let (tag_out, tag) = self.tag.forward(params, &state_emb.tag_vec.features())?;
        let mut joint = Vec::with_capacity(3 * self.cfg.common_dim);
        joint.extend_from_slice(&scene_out);
        joint.extend_from_slice(&target_out);
        joint.extend_from_slice(&tag_out);
        let (logits, fuse) = self.fuse.forward(params, &joint)?;
        let probs = softmax(&logits);
        Ok((
            JudgeOutput {
                p_terminate: probs[0],
                p_continue: probs[1],
            },
            JudgeCache {
                scene,
                target,
                tag,
                fuse,
                probs: [probs[0], probs[1]],
            },
        ))
    }

    /// Backpropagate a gradient on the two logits into `grads`.
    fn backward_logits(
        &self,
        params: &NetworkParams,
        cache: &JudgeCache,
        d_logits: &[f64; 2],
        grads: &mut Gradients,
    ) -> Result<()> {
        let d_joint = self
            .fuse
            .backward_into(params, &cache.fuse, d_logits, grads)?;
        let d = self.cfg.common_dim;
        self.scene
            .backward_into(params, &cache.scene, &d_joint[..d], grads)?;
        self.target
            .backward_into(params, &cache.target, &d_joint[d..2 * d], grads)?;
        self.tag
            .backward_into(params, &cache.tag, &d_joint[2 * d..], grads)?;
        Ok(())
    }

    /// Mean focal loss and its gradients over a batch.
    pub fn batch_gradients(
        &self,
        params: &NetworkParams,
        batch: &[JudgeSample],
        gamma: f64,
    ) -> Result<(Gradients, f64)> {
        if batch.is_empty() {
            return Err(Error::Empty("judge training batch".to_string()));
        }
        let mut grads = params.zeros_like();
        let scale = 1.0 / batch.len() as f64;
        let mut loss_sum = 0.0;
        for sample in batch {
            let (_, cache) = self.forward(params, &sample.state_emb)?;
            let true_idx = match sample.label {
                JudgeLabel::Positive => 0,
                JudgeLabel::Negative => 1,
            };
            let p_true = cache.probs[true_idx].clamp(1e-12, 1.0);
            loss_sum += focal_loss(p_true, gamma)?;
            let coef = focal_loss_logit_coefficient(p_true, gamma) * scale;
            let mut d_logits = [0.0; 2];
            for k in 0..2 {
                let delta = if k == true_idx { 1.0 } else { 0.0 };
                d_logits[k] = coef * (delta - cache.probs[k]);
            }
            self.backward_logits(params, &cache, &d_logits, &mut grads)?;
        }
        Ok((grads, loss_sum * scale))
    }
}

/// Spec-level wrapper: forward pass returning only the output distribution.
pub fn judge_forward(
    net: &JudgeNet,
    params: &NetworkParams,
    state_emb: &StateEmb,
) -> Result<JudgeOutput> {
    net.forward(params, state_emb).map(|(out, _)| out)
}

/// One SGD step on a full batch; returns the pre-update mean focal loss.
pub fn train_on_batch(
    net: &JudgeNet,
    params: &mut NetworkParams,
    batch: &[JudgeSample],
    gamma: f64,
    learning_rate: f64,
) -> Result<f64> {
    let (grads, loss) = net.batch_gradients(params, batch, gamma)?;
    sgd_step(params, &grads, learning_rate)?;
    Ok(loss)
}

/// Fraction of positive labels in a batch.
pub fn positive_fraction(batch: &[JudgeSample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch
        .iter()
        .filter(|s| s.label == JudgeLabel::Positive)
        .count() as f64
        / batch.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;
    use crate::perception::DetectionRow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_effective_state(rng: &mut ChaCha8Rng, d_emb: usize) -> StateEmb {
        let tag = DetectionRow {
            b: 1.0,
            x_c: rng.gen::<f64>() * 300.0,
            y_c: rng.gen::<f64>() * 300.0,
            bbx: rng.gen::<f64>(),
            cs: 1.0,
        };
        StateEmb {
            scene_emb: (0..SCENE_DIM).map(|_| rng.gen::<f64>() - 0.5).collect(),
            tag_vec: tag,
            target_emb: (0..d_emb).map(|_| rng.gen::<f64>() - 0.5).collect(),
            effective: true,
        }
    }

    fn tiny_cfg() -> JudgeNetConfig {
        JudgeNetConfig {
            d_emb: 16,
            common_dim: 8,
            expansion: 2,
            leaky_slope: 0.01,
        }
    }

    #[test]
    fn output_is_a_distribution_and_deterministic() {
        let net = JudgeNet::new(tiny_cfg()).unwrap();
        let params = net.init_params(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let s = random_effective_state(&mut rng, 16);
            let (out, _) = net.forward(&params, &s).unwrap();
            assert!((out.p_terminate + out.p_continue - 1.0).abs() < 1e-9);
            assert!(out.p_terminate > 0.0 && out.p_terminate < 1.0);
            let (again, _) = net.forward(&params, &s).unwrap();
            assert_eq!(out, again);
        }
    }

    #[test]
    fn forward_matches_independent_loop_oracle() {
        // Reference path: raw loops over the parameter tensors, no Mlp code.
        let net = JudgeNet::new(tiny_cfg()).unwrap();
        let params = net.init_params(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_effective_state(&mut rng, 16);

        let dense = |name: &str, x: &[f64], slope: f64, linear: bool| -> Vec<f64> {
            let layer = params.get(name).unwrap();
            let (rows, cols) = (layer.weights.rows(), layer.weights.cols());
            assert_eq!(cols, x.len());
            (0..rows)
                .map(|r| {
                    let mut acc = layer.bias.data()[r];
                    for c in 0..cols {
                        acc += layer.weights.get2(r, c) * x[c];
                    }
                    if linear || acc >= 0.0 {
                        acc
                    } else {
                        slope * acc
                    }
                })
                .collect()
        };
        let comp = |prefix: &str, x: &[f64]| -> Vec<f64> {
            let h = dense(&format!("{prefix}_expand"), x, 0.01, false);
            dense(&format!("{prefix}_squeeze"), &h, 0.01, false)
        };
        let mut joint = comp("judge_scene", &s.scene_emb);
        joint.extend(comp("judge_target", &s.target_emb));
        joint.extend(comp("judge_tag", &s.tag_vec.features()));
        let fused = dense("judge_fuse", &joint, 0.01, false);
        let logits = dense("judge_logits", &fused, 0.01, true);
        let z = (logits[0] - logits[0].max(logits[1])).exp();
        let w = (logits[1] - logits[0].max(logits[1])).exp();
        let expected = z / (z + w);

        let (out, _) = net.forward(&params, &s).unwrap();
        assert!((out.p_terminate - expected).abs() < 1e-12);
    }

    #[test]
    fn non_effective_state_is_rejected() {
        let net = JudgeNet::new(tiny_cfg()).unwrap();
        let params = net.init_params(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = random_effective_state(&mut rng, 16);
        s.effective = false;
        s.tag_vec.b = 0.0;
        assert!(matches!(
            net.forward(&params, &s),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn label_rule_is_inclusive_at_tau() {
        assert_eq!(label_from_reward(4.99, 4.0), JudgeLabel::Positive);
        assert_eq!(label_from_reward(-0.01, 4.0), JudgeLabel::Negative);
        assert_eq!(label_from_reward(4.0, 4.0), JudgeLabel::Positive);
    }

    #[test]
    fn buffer_triggers_exactly_at_capacity() {
        let mut buffer = BatchBuffer::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..63 {
            let s = random_effective_state(&mut rng, 16);
            let out = push_sample(&mut buffer, s, JudgeLabel::Negative).unwrap();
            assert!(out.is_none(), "no trigger at size {}", i + 1);
        }
        assert_eq!(buffer.len(), 63);
        let s = random_effective_state(&mut rng, 16);
        let batch = push_sample(&mut buffer, s, JudgeLabel::Positive)
            .unwrap()
            .expect("trigger at capacity");
        assert_eq!(batch.len(), 64);
        assert!(buffer.is_empty());
    }

    #[test]
    fn small_pushes_do_not_trigger() {
        let mut buffer = BatchBuffer::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let s = random_effective_state(&mut rng, 16);
            push_sample(&mut buffer, s, JudgeLabel::Negative).unwrap();
        }
        let s = random_effective_state(&mut rng, 16);
        assert!(push_sample(&mut buffer, s, JudgeLabel::Negative)
            .unwrap()
            .is_none());
        assert_eq!(buffer.len(), 11);
    }

    #[test]
    fn non_effective_push_is_rejected() {
        let mut buffer = BatchBuffer::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = random_effective_state(&mut rng, 16);
        s.effective = false;
        assert!(push_sample(&mut buffer, s, JudgeLabel::Negative).is_err());
    }

    #[test]
    fn duplicated_batch_keeps_mean_loss() {
        let net = JudgeNet::new(tiny_cfg()).unwrap();
        let params = net.init_params(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch: Vec<JudgeSample> = (0..8)
            .map(|i| JudgeSample {
                state_emb: random_effective_state(&mut rng, 16),
                label: if i % 4 == 0 {
                    JudgeLabel::Positive
                } else {
                    JudgeLabel::Negative
                },
            })
            .collect();
        let (_, loss_once) = net.batch_gradients(&params, &batch, 0.7).unwrap();
        let mut doubled = batch.clone();
        doubled.extend(batch.iter().cloned());
        let (_, loss_twice) = net.batch_gradients(&params, &doubled, 0.7).unwrap();
        assert!((loss_once - loss_twice).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let net = JudgeNet::new(tiny_cfg()).unwrap();
        let mut params = net.init_params(6).unwrap();
        assert!(train_on_batch(&net, &mut params, &[], 0.7, 0.1).is_err());
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        // Slope 0.1 here: with the default 0.01 a weight between two
        // negative-side units has its gradient suppressed by 1e-4, which
        // lands at the f64 noise floor of the central difference and makes
        // the relative comparison meaningless.
        let net = JudgeNet::new(JudgeNetConfig {
            leaky_slope: 0.1,
            ..tiny_cfg()
        })
        .unwrap();
        for seed in 0..5 {
            let params = net.init_params(seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
            let batch: Vec<JudgeSample> = (0..4)
                .map(|i| JudgeSample {
                    state_emb: random_effective_state(&mut rng, 16),
                    label: if i % 2 == 0 {
                        JudgeLabel::Positive
                    } else {
                        JudgeLabel::Negative
                    },
                })
                .collect();
            let (grads, _) = net.batch_gradients(&params, &batch, 0.7).unwrap();
            let loss_fn = |p: &NetworkParams| -> crate::error::Result<f64> {
                let mut total = 0.0;
                for sample in &batch {
                    let (_, cache) = net.forward(p, &sample.state_emb)?;
                    let idx = match sample.label {
                        JudgeLabel::Positive => 0,
                        JudgeLabel::Negative => 1,
                    };
                    total += focal_loss(cache.probs[idx].clamp(1e-12, 1.0), 0.7)?;
                }
                Ok(total / batch.len() as f64)
            };
            let err = finite_diff_check(&params, &grads, loss_fn, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    #[test]
    fn well_classified_batch_has_negligible_loss_and_update() {
        // Drive the network to confident correct predictions first, then
        // check the loss and gradient magnitudes collapse.
        let net = JudgeNet::new(tiny_cfg()).unwrap();
        let mut params = net.init_params(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let make = |rng: &mut ChaCha8Rng, positive: bool| -> JudgeSample {
            let mut s = random_effective_state(rng, 16);
            // Separable rule: positives have huge bbx.
            s.tag_vec.bbx = if positive { 1.0 } else { 0.01 };
            JudgeSample {
                state_emb: s,
                label: if positive {
                    JudgeLabel::Positive
                } else {
                    JudgeLabel::Negative
                },
            }
        };
        for _ in 0..400 {
            let batch: Vec<JudgeSample> = (0..16).map(|i| make(&mut rng, i % 2 == 0)).collect();
            train_on_batch(&net, &mut params, &batch, 0.7, 0.3).unwrap();
        }
        let batch: Vec<JudgeSample> = (0..16).map(|i| make(&mut rng, i % 2 == 0)).collect();
        let (grads, loss) = net.batch_gradients(&params, &batch, 0.7).unwrap();
        assert!(loss < 0.05, "loss {loss}");
        assert!(grads.max_abs() < 0.05, "gradient {}", grads.max_abs());
    }
}
