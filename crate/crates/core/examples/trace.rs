// Throwaway: print argmax-policy trajectories for a trained checkpoint.
use pair_rl_core::autodiff::load_checkpoint;
use pair_rl_core::env::{build_splits, render, reset, step, ActionCmd, EnvConfig, ScenarioSpec};
use pair_rl_core::policy::{ActionValue, PolicyNet};
use pair_rl_core::rng::stream;

fn main() {
    let path = std::env::args().nth(1).expect("checkpoint path");
    let episode: u64 = std::env::args().nth(2).map_or(0, |s| s.parse().unwrap());
    let net = PolicyNet::from_named(load_checkpoint(path.as_ref()).unwrap()).unwrap();
    let cfg = EnvConfig::new(build_splits(7));
    let sc = ScenarioSpec::train(&cfg.splits, 1);
    let mut state = reset(&cfg, &sc, &mut stream(0, "eval-env", episode)).unwrap();
    println!(
        "target cat {} at ({:.3},{:.3}); distractor at ({:.3},{:.3}); receptacle ({:.3},{:.3}); gripper ({:.3},{:.3})",
        state.target.category,
        state.target.x,
        state.target.y,
        state.distractors[0].x,
        state.distractors[0].y,
        state.receptacle.0,
        state.receptacle.1,
        state.gripper.x,
        state.gripper.y
    );
    let names = ["+x", "-x", "+y", "-y", "grasp", "release"];
    for t in 0..cfg.horizon {
        let obs = render(&cfg, &state);
        let (dist, value) = net.forward_single(&obs.to_input());
        let cmd = match dist.mode() {
            ActionValue::Discrete(d) => {
                print!("t{t:02} act {} ", names[d]);
                ActionCmd::Discrete(d)
            }
            ActionValue::Continuous(v) => {
                print!("t{t:02} act ({:+.3},{:+.3},{:+.3}) ", v[0], v[1], v[2]);
                ActionCmd::Continuous { dx: v[0], dy: v[1], grip_logit: v[2] }
            }
        };
        let (ns, r, done, info) = step(&cfg, &state, &cmd).unwrap();
        println!(
            "grip ({:+.3},{:+.3}) hold {:?} r {:.2} v {:+.3}{}{}",
            ns.gripper.x,
            ns.gripper.y,
            ns.gripper.grasped,
            r,
            value,
            if info.grasped_event.is_some() { " GRASP" } else { "" },
            if info.released_event.is_some() { " RELEASE" } else { "" },
        );
        state = ns;
        if done {
            println!("done at t{t} succeeded={}", state.succeeded);
            break;
        }
    }
}
