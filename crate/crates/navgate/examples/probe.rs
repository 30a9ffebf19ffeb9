// Temporary diagnostic: where do episodes end, and what does the judge say?
use navgate::checkpoint::load_checkpoint;
use navgate::config::parse_config;
use navgate::runner::{build_eval_specs, load_agent, run_episode, AgentKind};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = parse_config(std::path::Path::new(&args[1])).unwrap();
    let agent = load_agent(&cfg, load_checkpoint(std::path::Path::new(&args[2])).unwrap()).unwrap();
    let specs = build_eval_specs(&cfg, cfg.seed).unwrap();

    for kind in [AgentKind::GateOff, AgentKind::GateOn] {
        let mut done_eff_near = 0usize;
        let mut done_eff_far = 0usize;
        let mut done_noneff = 0usize;
        let mut timeout = 0usize;
        let mut success = 0usize;
        let mut eff_steps = 0usize;
        let mut total_steps = 0usize;
        let mut p_done_eff = 0.0f64;
        let mut p_done_noneff = 0.0f64;
        let mut judge_near = Vec::new();
        let mut judge_far = Vec::new();
        for spec in &specs {
            let (record, steps) = run_episode(&cfg, &agent, kind, spec).unwrap();
            if record.success {
                success += 1;
            }
            total_steps += steps.len();
            for s in &steps {
                if s.effective {
                    eff_steps += 1;
                    p_done_eff += s.p_con[5];
                    let near = spec
                        .room
                        .instances_of(spec.target_type)
                        .any(|o| s.pose.position.distance_m(o.position) < 1.5);
                    if let Some(j) = s.judge {
                        if near {
                            judge_near.push(j.p_terminate);
                        } else {
                            judge_far.push(j.p_terminate);
                        }
                    }
                } else {
                    p_done_noneff += s.p_con[5];
                }
            }
            match steps.last() {
                Some(last) if last.action == navgate::env::Action::Done => {
                    if last.effective {
                        let near = spec
                            .room
                            .instances_of(spec.target_type)
                            .any(|o| last.pose.position.distance_m(o.position) < 1.5);
                        if near {
                            done_eff_near += 1;
                        } else {
                            done_eff_far += 1;
                        }
                    } else {
                        done_noneff += 1;
                    }
                }
                _ => timeout += 1,
            }
        }
        let n = specs.len();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        println!(
            "{}: n {n} success {success} | done: eff_near {done_eff_near} eff_far {done_eff_far} noneff {done_noneff} timeout {timeout}",
            match kind { AgentKind::GateOff => "gate_off", _ => "gate_on" },
        );
        println!(
            "  eff steps {eff_steps}/{total_steps} ({:.3}) mean p_done|eff {:.3} |noneff {:.3}",
            eff_steps as f64 / total_steps as f64,
            p_done_eff / eff_steps.max(1) as f64,
            p_done_noneff / (total_steps - eff_steps).max(1) as f64
        );
        println!(
            "  judge p_term: near n {} mean {:.3} | far n {} mean {:.3}",
            judge_near.len(),
            mean(&judge_near),
            judge_far.len(),
            mean(&judge_far)
        );
    }
}
