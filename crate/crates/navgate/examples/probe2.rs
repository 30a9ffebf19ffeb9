// Temporary diagnostic: judge learnability on a separable synthetic task.
use navgate::judge::{train_on_batch, JudgeLabel, JudgeNet, JudgeNetConfig, JudgeSample};
use navgate::perception::{DetectionRow, StateEmb, SCENE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(rng: &mut ChaCha8Rng, d_emb: usize, threshold: f64) -> JudgeSample {
    let bbx: f64 = rng.gen();
    let tag = DetectionRow {
        b: 1.0,
        x_c: rng.gen::<f64>() * 300.0,
        y_c: rng.gen::<f64>() * 300.0,
        bbx,
        cs: 1.0,
    };
    let state_emb = StateEmb {
        scene_emb: (0..SCENE_DIM).map(|_| rng.gen::<f64>() - 0.5).collect(),
        tag_vec: tag,
        target_emb: (0..d_emb).map(|_| rng.gen::<f64>() - 0.5).collect(),
        effective: true,
    };
    JudgeSample {
        state_emb,
        label: if bbx > threshold {
            JudgeLabel::Positive
        } else {
            JudgeLabel::Negative
        },
    }
}

fn main() {
    let d_emb = 16;
    for lr in [0.05f64, 0.1, 0.3, 0.5] {
        for batches in [100usize, 200, 400] {
            let net = JudgeNet::new(JudgeNetConfig {
                d_emb,
                ..JudgeNetConfig::default()
            })
            .unwrap();
            let mut params = net.init_params(7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut last_loss = 0.0;
            for _ in 0..batches {
                let batch: Vec<JudgeSample> =
                    (0..64).map(|_| sample(&mut rng, d_emb, 0.25)).collect();
                last_loss = train_on_batch(&net, &mut params, &batch, 0.7, lr).unwrap();
            }
            let mut correct = 0;
            let held: Vec<JudgeSample> = (0..2000).map(|_| sample(&mut rng, d_emb, 0.25)).collect();
            for s in &held {
                let out = navgate::judge::judge_forward(&net, &params, &s.state_emb).unwrap();
                let predicted = if out.p_terminate >= 0.5 {
                    JudgeLabel::Positive
                } else {
                    JudgeLabel::Negative
                };
                if predicted == s.label {
                    correct += 1;
                }
            }
            println!(
                "lr {lr:5} batches {batches:4}: held-out acc {:.4} last loss {last_loss:.4}",
                correct as f64 / held.len() as f64
            );
        }
    }
}
