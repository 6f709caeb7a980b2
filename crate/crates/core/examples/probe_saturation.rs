//! Quick comparison of analytic vs simulated saturation goodput.

use hybridmac::csma::solve_saturation;
use hybridmac::sim::{run, Scenario, Scheme};
use hybridmac::traffic::{BatchPmf, TrafficSpec};
use hybridmac::types::{MacParams, SuperframeConfig};

fn main() {
    let mut cfg = SuperframeConfig::default_star();
    cfg.m = 0;
    let mac = MacParams {
        drop_enabled: true,
        ..MacParams::default_csma()
    };
    let traffic = TrafficSpec::per_interval(0.0, cfg.interval(), BatchPmf::unit()).unwrap();
    println!("n theta analytic sim ratio  p_cs_sim p_cs_ana p_c_sim p_c_ana");
    for n in [1usize, 2, 5, 10, 20] {
        for theta in [0.0, 0.1, 0.2] {
            let sat = solve_saturation(n as u32, cfg.t_cap(), cfg.t_tx, &mac, theta).unwrap();
            let analytic = sat.kappa * cfg.t_cap() as f64; // per node per superframe
            let mut sc = Scenario::uniform(
                cfg,
                mac.clone(),
                Scheme::Csma,
                n,
                traffic.clone(),
                5000,
                12345,
            );
            sc.saturation = true;
            sc.theta = vec![theta; n];
            let m = run(&sc).unwrap();
            let sim = m.delivered as f64 / (m.horizon_superframes as f64 * n as f64);
            let cap_ubp_total = m.horizon_superframes as f64 * cfg.t_cap() as f64 * n as f64;
            let p_cs_sim = m.cap_cca1_attempts as f64 / cap_ubp_total;
            let p_c_sim = m.cap_collided_tx as f64 / m.cap_tx_attempts as f64;
            let alpha_sim = 1.0 - m.cap_cca1_busy as f64 / m.cap_cca1_attempts as f64;
            let beta_sim = 1.0 - m.cap_cca2_busy as f64 / m.cap_cca2_attempts.max(1) as f64;
            println!(
                "{n:2} {theta:.1} {analytic:8.4} {sim:8.4} {:6.3}  pcs {p_cs_sim:.4}/{:.4} pc {p_c_sim:.4}/{:.4} a {alpha_sim:.4}/{:.4} b {beta_sim:.4}/{:.4}",
                sim / analytic,
                sat.p_cs,
                sat.p_c,
                sat.alpha,
                sat.beta,
            );
        }
    }
}
