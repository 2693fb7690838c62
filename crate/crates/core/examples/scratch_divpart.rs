// temporary probe, not part of the crate
use ewlab_core::diagnostics::{divpart_residual, DivpartMutation};
use ewlab_core::evolve::{simulate_decomposed, SimOptions, State};
use ewlab_core::fft::{forward, inverse};
use ewlab_core::grid::{Field, Grid3, Rank};
use ewlab_core::material::MaterialSpec;
use ewlab_core::norms::sobolev_norm;

fn lowpass(f: &Field, mmax: i64) -> Field {
    let mut s = forward(f);
    s.map_modes(|mi, mj, mk, v| {
        if mi.abs() > mmax || mj.abs() > mmax || mk.abs() > mmax {
            num_complex::Complex64::new(0.0, 0.0)
        } else {
            v
        }
    });
    inverse(&s)
}

fn main() {
    let grid = Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap();
    let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![0.4]).unwrap();
    for mmax in [3i64, 5] {
        for safety in [0.1, 0.05] {
            let mut u = ewlab_core::random::rough_random_field(grid, Rank::Vector3, 2.6, 1.0, 77).unwrap();
            u = lowpass(&u, mmax);
            let a = sobolev_norm(&u, 2.6).unwrap();
            u.scale(0.05 / a);
            let state = State::new(u, Field::zeros(grid, Rank::Vector3), 0.0).unwrap();
            let opts = SimOptions { t_end: 0.3, cfl_safety: safety, out_every: 1, ..Default::default() };
            let run = simulate_decomposed(state, &spec, &opts).unwrap();
            let rows = divpart_residual(&run, DivpartMutation::None).unwrap();
            let max_rel = rows.iter().map(|r| r.residual_rel).fold(0.0_f64, f64::max);
            let mu = divpart_residual(&run, DivpartMutation::FlipQuadraticTermSign).unwrap();
            let mid = rows.len() / 2;
            println!("mmax={} safety={} stride={:.5} max_rel={:.3e} mutation_x={:.1}",
                mmax, safety, run.full.out_stride, max_rel,
                mu[mid].residual_l2 / rows[mid].residual_l2.max(1e-300));
        }
    }
}
