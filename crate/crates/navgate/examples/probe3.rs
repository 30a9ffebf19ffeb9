// Temporary diagnostic: trained judge response vs target distance, per type.
use navgate::checkpoint::load_checkpoint;
use navgate::config::parse_config;
use navgate::env::{AgentPose, Cell, GridRoom, HeightBand, ObjectInstance};
use navgate::judge::{judge_forward, JudgeNet};
use navgate::perception::{build_context_matrix, build_state_emb, detect, EmbeddingSet};
use navgate::rl::PolicyNet;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = parse_config(std::path::Path::new(&args[1])).unwrap();
    let ckpt = load_checkpoint(std::path::Path::new(&args[2])).unwrap();
    let judge_net = JudgeNet::new(cfg.judge_net_config()).unwrap();
    let _policy = PolicyNet::new(cfg.policy_net_config(), cfg.adjacency().unwrap()).unwrap();
    let embeddings = EmbeddingSet::new(cfg.catalog.len(), cfg.d_emb, cfg.embedding_seed).unwrap();

    for ty in [3usize, 4, 5, 6] {
        let t = cfg.catalog.get(ty).unwrap().clone();
        print!("type {} ({}, size {:.2}): p_term by distance: ", ty, t.name, t.physical_size);
        for cells in [2i32, 4, 6, 8, 10, 14, 18] {
            let room = GridRoom::from_parts(
                24,
                24,
                vec![false; 576],
                vec![ObjectInstance {
                    type_id: ty,
                    position: Cell::new(12, 2 + cells),
                    physical_size: t.physical_size,
                    height_band: HeightBand::Mid,
                }],
                "probe".to_string(),
                0,
            );
            let pose = AgentPose {
                position: Cell::new(12, 2),
                heading: 0,
                pitch: 0,
            };
            let dets = detect(&room, &pose);
            let ctx = build_context_matrix(&dets, ty, &embeddings).unwrap();
            let s = build_state_emb(&ctx, ty, &embeddings).unwrap();
            if !s.effective {
                print!("  d{:.2}:inv", cells as f64 * 0.25);
                continue;
            }
            let out = judge_forward(&judge_net, &ckpt.judge, &s).unwrap();
            print!(" d{:.2}:{:.2}", cells as f64 * 0.25, out.p_terminate);
        }
        println!();
    }
}
