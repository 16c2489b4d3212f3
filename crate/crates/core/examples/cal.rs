use rampart_core::mitigation::Scheme;
use rampart_core::timing::{simulate_bandwidth, TimingParams, Workload};

fn main() {
    let p = TimingParams::ddr5_5600();
    let dur = 4e6; // 4 ms
    for wl in [Workload::Rand, Workload::HamR] {
        let base = simulate_bandwidth(&p, wl, Scheme::None, 0, dur, 42);
        println!("{:?} baseline eff {:.4}  completed {}", wl, base.efficiency, base.completed);
        for n in [16u32, 24, 32, 48, 64, 80, 100] {
            let vl = simulate_bandwidth(&p, wl, Scheme::BrcVl, n, dur, 42);
            let brc = simulate_bandwidth(&p, wl, Scheme::Brc, n, dur, 42);
            println!(
                "  N={:3}  brc {:.4}  brc_vl {:.4}  gap {:+.2}%  vs_base brc {:+.2}% vl {:+.2}%",
                n, brc.efficiency, vl.efficiency,
                (vl.efficiency - brc.efficiency) * 100.0,
                (brc.efficiency / base.efficiency - 1.0) * 100.0,
                (vl.efficiency / base.efficiency - 1.0) * 100.0,
            );
        }
    }
}
