// quick probe of tier returns and normalized spans
fn main() {
    use claw_core::env::*;
    let env = PointMassEnv::new(PointMassConfig::default());
    for kind in [BehaviorKind::Expert, BehaviorKind::Medium, BehaviorKind::Replay, BehaviorKind::Random] {
        let r = scripted_mean_return(&env, kind, 50, 3);
        println!("{:8} mean return {:.2}", kind.as_str(), r);
    }
    let (rr, er) = reference_returns(&env);
    println!("refs: random {rr:.2} expert {er:.2}");
    let med = scripted_mean_return(&env, BehaviorKind::Medium, 50, 3);
    println!("medium normalized: {:.1}", normalized_return(med, rr, er).unwrap());
    let rep = scripted_mean_return(&env, BehaviorKind::Replay, 50, 3);
    println!("replay normalized: {:.1}", normalized_return(rep, rr, er).unwrap());
}
