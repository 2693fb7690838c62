//! Time integration of the first-order system (U, V = dU/dt) and the
//! exact per-mode evolution of the decoupled slower-wave sector.

use crate::error::{EwError, Result};
use crate::fft::{forward, inverse, Spectrum};
use crate::grid::{Field, Grid3, Rank};
use crate::material::{
    acceleration, displacement_gradient, stability_scan, MaterialSpec,
};
use crate::metric::{metric_from_displacement_gradient, MetricField};
use crate::rescale::SnapshotSeq;
use crate::spectral::helmholtz_decompose;

/// First-order-in-time phase point.
#[derive(Debug, Clone)]
pub struct State {
    pub u: Field,
    pub v: Field,
    pub t: f64,
}

impl State {
    pub fn new(u: Field, v: Field, t: f64) -> Result<Self> {
        if u.rank() != Rank::Vector3 || v.rank() != Rank::Vector3 || !u.same_shape(&v) {
            return Err(EwError::contract("state needs matching vector fields"));
        }
        u.assert_finite()?;
        v.assert_finite()?;
        Ok(State { u, v, t })
    }

    pub fn rest(grid: Grid3) -> Self {
        State {
            u: Field::zeros(grid, Rank::Vector3),
            v: Field::zeros(grid, Rank::Vector3),
            t: 0.0,
        }
    }

    pub fn grid(&self) -> Grid3 {
        self.u.grid()
    }
}

/// Largest characteristic speed of the current state: sqrt of the largest
/// eigenvalue of the spatial block of g^{-1} over the grid.
pub fn max_wave_speed(state: &State, spec: &MaterialSpec) -> Result<f64> {
    let du = displacement_gradient(&state.u)?;
    let (_, lam_max) = stability_scan(&du, spec);
    Ok((lam_max + spec.c2 * spec.c2).max(0.0).sqrt())
}

/// CFL time step: safety * spacing / c_max.
pub fn cfl_dt(state: &State, spec: &MaterialSpec, safety: f64) -> Result<f64> {
    if !(safety > 0.0) {
        return Err(EwError::contract(format!(
            "CFL safety factor must be positive, got {safety}"
        )));
    }
    let c_max = max_wave_speed(state, spec)?;
    if c_max <= 0.0 {
        return Err(EwError::contract("degenerate wave speeds"));
    }
    Ok(safety * state.grid().spacing() / c_max)
}

/// One classical RK4 step of dU/dt = V, dV/dt = acceleration(U).
///
/// The step must respect the current CFL bound at safety 0.4 within 1%.
pub fn rk4_step(state: &State, dt: f64, spec: &MaterialSpec) -> Result<State> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(EwError::contract(format!("invalid time step {dt}")));
    }
    let limit = cfl_dt(state, spec, 0.4)?;
    if dt > limit * 1.01 {
        return Err(EwError::Instability {
            cause: format!("time step {dt} exceeds CFL bound {limit}"),
            time: state.t,
        });
    }
    rk4_step_unchecked(state, dt, spec)
}

pub(crate) fn rk4_step_unchecked(state: &State, dt: f64, spec: &MaterialSpec) -> Result<State> {
    let eval = |u: &Field, v: &Field| -> Result<(Field, Field)> {
        let a = acceleration(u, spec)?;
        Ok((v.clone(), a))
    };
    let (k1u, k1v) = eval(&state.u, &state.v)?;
    let mut u2 = state.u.clone();
    u2.axpy(0.5 * dt, &k1u);
    let mut v2 = state.v.clone();
    v2.axpy(0.5 * dt, &k1v);
    let (k2u, k2v) = eval(&u2, &v2)?;
    let mut u3 = state.u.clone();
    u3.axpy(0.5 * dt, &k2u);
    let mut v3 = state.v.clone();
    v3.axpy(0.5 * dt, &k2v);
    let (k3u, k3v) = eval(&u3, &v3)?;
    let mut u4 = state.u.clone();
    u4.axpy(dt, &k3u);
    let mut v4 = state.v.clone();
    v4.axpy(dt, &k3v);
    let (k4u, k4v) = eval(&u4, &v4)?;

    let mut u = state.u.clone();
    let mut v = state.v.clone();
    let w = dt / 6.0;
    u.axpy(w, &k1u);
    u.axpy(2.0 * w, &k2u);
    u.axpy(2.0 * w, &k3u);
    u.axpy(w, &k4u);
    v.axpy(w, &k1v);
    v.axpy(2.0 * w, &k2v);
    v.axpy(2.0 * w, &k3v);
    v.axpy(w, &k4v);
    if !u.all_finite() || !v.all_finite() {
        return Err(EwError::Instability {
            cause: "non-finite intermediate state".into(),
            time: state.t + dt,
        });
    }
    State::new(u, v, state.t + dt)
}

/// Why a run stopped early.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FailureRecord {
    pub time: f64,
    pub cause: String,
}

/// Per-snapshot cheap monitors recorded while stepping.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub hyper_margin: f64,
    pub max_grad: f64,
    pub u_max: f64,
    pub v_max: f64,
}

/// Ordered snapshots at uniform output stride.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid3,
    pub spec: MaterialSpec,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub series: Vec<SeriesRow>,
    pub failure: Option<FailureRecord>,
    pub dt: f64,
    pub out_stride: f64,
    pub config_hash: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn snapshot_stride(&self) -> f64 {
        self.out_stride
    }

    /// Faster-wave metric on snapshot j, recomputed from the state.
    pub fn metric_at(&self, j: usize) -> Result<MetricField> {
        let du = displacement_gradient(&self.states[j].u)?;
        metric_from_displacement_gradient(&du, &self.spec)
    }

    pub fn displacement_seq(&self) -> SnapshotSeq {
        SnapshotSeq::new(
            self.times.clone(),
            self.states.iter().map(|s| s.u.clone()).collect(),
        )
        .expect("trajectory times strictly increase")
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub t_end: f64,
    pub cfl_safety: f64,
    /// Emit a snapshot every this many steps.
    pub out_every: usize,
    /// Continue past hyperbolicity failure.
    pub force: bool,
    /// Blowup detector factor (threshold = factor * margin0 / max|gamma''|).
    pub blowup_factor: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            t_end: 1.0,
            cfl_safety: 0.4,
            out_every: 4,
            force: false,
            blowup_factor: 10.0,
        }
    }
}

/// Advances the state to t_end with a fixed step chosen from the initial
/// CFL bound, emitting snapshots at a uniform stride. Hyperbolicity
/// failure or the blowup detector truncate the run with a failure record.
pub fn simulate(initial: State, spec: &MaterialSpec, opts: &SimOptions) -> Result<Trajectory> {
    spec.validate()?;
    if !(opts.t_end > 0.0) {
        return Err(EwError::contract("t_end must be positive"));
    }
    if opts.out_every == 0 {
        return Err(EwError::contract("out_every must be at least 1"));
    }
    let dt_bound = cfl_dt(&initial, spec, opts.cfl_safety)?;
    let mut steps = (opts.t_end / dt_bound).ceil() as usize;
    steps = steps.max(1);
    // Round up to a snapshot multiple so the stride stays uniform.
    let rem = steps % opts.out_every;
    if rem != 0 {
        steps += opts.out_every - rem;
    }
    let dt = opts.t_end / steps as f64;

    let du0 = displacement_gradient(&initial.u)?;
    let (margin0, _) = stability_scan(&du0, spec);
    let gpp = spec.max_gamma_second(1.0);
    let blowup_threshold = if gpp > 0.0 {
        opts.blowup_factor * margin0 / gpp
    } else {
        f64::INFINITY
    };

    let grid = initial.grid();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut series = Vec::new();
    let mut failure = None;

    let record =
        |state: &State, times: &mut Vec<f64>, states: &mut Vec<State>, series: &mut Vec<SeriesRow>| -> Result<(f64, f64)> {
            let du = displacement_gradient(&state.u)?;
            let (margin, _) = stability_scan(&du, spec);
            let max_grad = du.max_abs();
            times.push(state.t);
            series.push(SeriesRow {
                t: state.t,
                hyper_margin: margin,
                max_grad,
                u_max: state.u.max_abs(),
                v_max: state.v.max_abs(),
            });
            states.push(state.clone());
            Ok((margin, max_grad))
        };

    let mut state = initial;
    record(&state, &mut times, &mut states, &mut series)?;
    if margin0 <= 0.0 && !opts.force {
        return Ok(Trajectory {
            grid,
            spec: spec.clone(),
            times,
            states,
            series,
            failure: Some(FailureRecord {
                time: state.t,
                cause: format!("hyperbolicity failure, margin {margin0}"),
            }),
            dt,
            out_stride: dt * opts.out_every as f64,
            config_hash: 0,
        });
    }
    for step in 1..=steps {
        state = match rk4_step_unchecked(&state, dt, spec) {
            Ok(s) => s,
            Err(EwError::Instability { cause, time }) => {
                failure = Some(FailureRecord { time, cause });
                break;
            }
            Err(e) => return Err(e),
        };
        if step % opts.out_every == 0 {
            let (margin, max_grad) = record(&state, &mut times, &mut states, &mut series)?;
            if margin <= 0.0 && !opts.force {
                failure = Some(FailureRecord {
                    time: state.t,
                    cause: format!("hyperbolicity failure, margin {margin}"),
                });
                break;
            }
            if max_grad > blowup_threshold {
                failure = Some(FailureRecord {
                    time: state.t,
                    cause: format!(
                        "blowup detector: |grad U| = {max_grad} > {blowup_threshold}"
                    ),
                });
                break;
            }
        }
    }
    Ok(Trajectory {
        grid,
        spec: spec.clone(),
        times,
        states,
        series,
        failure,
        dt,
        out_stride: dt * opts.out_every as f64,
        config_hash: 0,
    })
}

/// Exact evolution of the linear slower-wave sector: each Fourier mode of
/// (psi, dpsi/dt) rotates at frequency c2 |xi|; the zero mode drifts.
pub fn psi_linear_evolution(
    psi0: &Field,
    psidot0: &Field,
    spec: &MaterialSpec,
    times: &[f64],
    t0: f64,
) -> Result<SnapshotSeq> {
    if psi0.rank() != Rank::Vector3 {
        return Err(EwError::contract("psi sector must be a vector field"));
    }
    let grid = psi0.grid();
    let a0 = forward(psi0);
    let b0 = forward(psidot0);
    let c2 = spec.c2;
    let n = grid.n();
    let mut fields = Vec::with_capacity(times.len());
    for &t in times {
        let dt = t - t0;
        let mut out = Spectrum::zeros(grid, Rank::Vector3);
        for c in 0..3 {
            let (pa, pb) = (a0.component(c), b0.component(c));
            let dst = out.component_mut(c);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let idx = (i * n + j) * n + k;
                        let xi2 =
                            grid.xi(i).powi(2) + grid.xi(j).powi(2) + grid.xi(k).powi(2);
                        dst[idx] = if xi2 == 0.0 {
                            pa[idx] + dt * pb[idx]
                        } else {
                            let om = c2 * xi2.sqrt();
                            pa[idx] * (om * dt).cos() + pb[idx] * ((om * dt).sin() / om)
                        };
                    }
                }
            }
        }
        fields.push(inverse(&out));
    }
    SnapshotSeq::new(times.to_vec(), fields)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PsiGapRow {
    pub t: f64,
    pub gap_l2: f64,
    pub gap_rel: f64,
}

/// Full evolution plus the decoupled comparison: Helmholtz parts of the
/// evolved solution against the exactly-evolved linear psi sector.
#[derive(Debug)]
pub struct DecomposedRun {
    pub full: Trajectory,
    pub phi_full: SnapshotSeq,
    pub psi_full: SnapshotSeq,
    pub psi_linear: SnapshotSeq,
    pub psi_gap: Vec<PsiGapRow>,
}

pub fn simulate_decomposed(
    initial: State,
    spec: &MaterialSpec,
    opts: &SimOptions,
) -> Result<DecomposedRun> {
    let (psi0, psidot0) = {
        let (_, psi_u, _) = helmholtz_decompose(&initial.u)?;
        let (_, psi_v, _) = helmholtz_decompose(&initial.v)?;
        (psi_u, psi_v)
    };
    let t0 = initial.t;
    let full = simulate(initial, spec, opts)?;
    let psi_linear = psi_linear_evolution(&psi0, &psidot0, spec, &full.times, t0)?;
    let mut phi_fields = Vec::with_capacity(full.len());
    let mut psi_fields = Vec::with_capacity(full.len());
    let mut psi_gap = Vec::with_capacity(full.len());
    for (j, state) in full.states.iter().enumerate() {
        let (phi, psi, _) = helmholtz_decompose(&state.u)?;
        let mut diff = psi.clone();
        diff.axpy(-1.0, &psi_linear.fields[j]);
        let gap = diff.l2_norm();
        let denom = psi_linear.fields[j].l2_norm();
        psi_gap.push(PsiGapRow {
            t: state.t,
            gap_l2: gap,
            gap_rel: if denom > 0.0 { gap / denom } else { gap },
        });
        phi_fields.push(phi);
        psi_fields.push(psi);
    }
    let times = full.times.clone();
    Ok(DecomposedRun {
        full,
        phi_full: SnapshotSeq::new(times.clone(), phi_fields)?,
        psi_full: SnapshotSeq::new(times, psi_fields)?,
        psi_linear,
        psi_gap,
    })
}

/// Traveling or standing plane-wave initial data for the linear system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    Longitudinal,
    Transverse,
}

pub fn plane_wave_state(
    grid: Grid3,
    spec: &MaterialSpec,
    mode: [i64; 3],
    amplitude: f64,
    pol: Polarization,
    traveling: bool,
) -> Result<State> {
    let l = grid.box_len();
    let xi = [
        2.0 * std::f64::consts::PI * mode[0] as f64 / l,
        2.0 * std::f64::consts::PI * mode[1] as f64 / l,
        2.0 * std::f64::consts::PI * mode[2] as f64 / l,
    ];
    let xi_norm = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    if xi_norm == 0.0 {
        return Err(EwError::contract("plane wave needs a nonzero mode"));
    }
    let khat = [xi[0] / xi_norm, xi[1] / xi_norm, xi[2] / xi_norm];
    let (dir, speed) = match pol {
        Polarization::Longitudinal => (khat, spec.c1),
        Polarization::Transverse => {
            // Any unit vector orthogonal to xi.
            let trial = if khat[0].abs() < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            let dot = trial[0] * khat[0] + trial[1] * khat[1] + trial[2] * khat[2];
            let mut d = [
                trial[0] - dot * khat[0],
                trial[1] - dot * khat[1],
                trial[2] - dot * khat[2],
            ];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            for v in &mut d {
                *v /= norm;
            }
            (d, spec.c2)
        }
    };
    let omega = speed * xi_norm;
    let u = Field::sample(grid, Rank::Vector3, |x| {
        let phase = xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2];
        dir.iter().map(|d| amplitude * d * phase.sin()).collect()
    });
    let v = if traveling {
        Field::sample(grid, Rank::Vector3, |x| {
            let phase = xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2];
            dir.iter()
                .map(|d| -omega * amplitude * d * phase.cos())
                .collect()
        })
    } else {
        Field::zeros(grid, Rank::Vector3)
    };
    State::new(u, v, 0.0)
}

/// Period of a linear plane wave.
pub fn plane_wave_period(grid: Grid3, spec: &MaterialSpec, mode: [i64; 3], pol: Polarization) -> f64 {
    let l = grid.box_len();
    let xi_norm = 2.0 * std::f64::consts::PI / l
        * (((mode[0] * mode[0] + mode[1] * mode[1] + mode[2] * mode[2]) as f64).sqrt());
    let speed = match pol {
        Polarization::Longitudinal => spec.c1,
        Polarization::Transverse => spec.c2,
    };
    2.0 * std::f64::consts::PI / (speed * xi_norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid32() -> Grid3 {
        Grid3::new(32, 2.0 * std::f64::consts::PI).unwrap()
    }

    #[test]
    fn cfl_flat_matches_formula() {
        let grid = grid32();
        let spec = MaterialSpec::linear(1.0, 0.5).unwrap();
        let state = State::rest(grid);
        let dt = cfl_dt(&state, &spec, 0.4).unwrap();
        let expect = 0.4 * grid.spacing();
        assert!((dt - expect).abs() < 1e-14);
        assert!(cfl_dt(&state, &spec, 0.0).is_err());
    }

    #[test]
    fn cfl_shrinks_with_amplitude() {
        let grid = grid32();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![0.4]).unwrap();
        let mut prev = f64::INFINITY;
        for amp in [0.0, 0.1, 0.2, 0.4] {
            let u = Field::sample(grid, Rank::Vector3, |x| {
                vec![amp * (x[0]).sin(), 0.0, 0.0]
            });
            let state = State::new(u, Field::zeros(grid, Rank::Vector3), 0.0).unwrap();
            let dt = cfl_dt(&state, &spec, 0.4).unwrap();
            assert!(dt <= prev + 1e-15, "dt not monotone at amp {amp}");
            prev = dt;
        }
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let grid = Grid3::new(16, 1.0).unwrap();
        let spec = MaterialSpec::default();
        let state = State::rest(grid);
        let dt = cfl_dt(&state, &spec, 0.4).unwrap();
        let next = rk4_step(&state, dt, &spec).unwrap();
        assert_eq!(next.u.max_abs(), 0.0);
        assert_eq!(next.v.max_abs(), 0.0);
    }

    #[test]
    fn transverse_wave_returns_after_one_period() {
        let grid = grid32();
        let spec = MaterialSpec::linear(1.0, 0.5).unwrap();
        let state =
            plane_wave_state(grid, &spec, [1, 0, 0], 0.01, Polarization::Transverse, true)
                .unwrap();
        let period = plane_wave_period(grid, &spec, [1, 0, 0], Polarization::Transverse);
        let steps = 512usize;
        let dt = period / steps as f64;
        let mut s = state.clone();
        for _ in 0..steps {
            s = rk4_step_unchecked(&s, dt, &spec).unwrap();
        }
        let mut diff = s.u.clone();
        diff.axpy(-1.0, &state.u);
        let rel = diff.l2_norm() / state.u.l2_norm();
        assert!(rel <= 1e-6, "one-period return error {rel}");
    }

    #[test]
    fn rk4_is_fourth_order_on_plane_wave() {
        let grid = Grid3::new(16, 2.0 * std::f64::consts::PI).unwrap();
        let spec = MaterialSpec::linear(1.0, 0.5).unwrap();
        let state =
            plane_wave_state(grid, &spec, [1, 0, 0], 0.01, Polarization::Transverse, true)
                .unwrap();
        let period = plane_wave_period(grid, &spec, [1, 0, 0], Polarization::Transverse);
        let run = |steps: usize| -> f64 {
            let dt = period / steps as f64;
            let mut s = state.clone();
            for _ in 0..steps {
                s = rk4_step_unchecked(&s, dt, &spec).unwrap();
            }
            let mut diff = s.u.clone();
            diff.axpy(-1.0, &state.u);
            diff.l2_norm() / state.u.l2_norm()
        };
        let e1 = run(64);
        let e2 = run(128);
        let ratio = e1 / e2;
        assert!(
            (12.0..=20.0).contains(&ratio),
            "Richardson ratio {ratio} (errors {e1}, {e2})"
        );
    }

    #[test]
    fn linear_superposition_oracle() {
        let grid = grid32();
        let spec = MaterialSpec::linear(1.0, 0.5).unwrap();
        let s1 =
            plane_wave_state(grid, &spec, [1, 0, 0], 0.02, Polarization::Longitudinal, true)
                .unwrap();
        let s2 =
            plane_wave_state(grid, &spec, [0, 2, 0], 0.015, Polarization::Transverse, true)
                .unwrap();
        let mut u = s1.u.clone();
        u.axpy(1.0, &s2.u);
        let mut v = s1.v.clone();
        v.axpy(1.0, &s2.v);
        let init = State::new(u, v, 0.0).unwrap();
        let opts = SimOptions {
            t_end: 1.0,
            cfl_safety: 0.3,
            out_every: 8,
            ..Default::default()
        };
        let traj = simulate(init, &spec, &opts).unwrap();
        assert!(traj.failure.is_none());
        // Exact solution: superposition of the two traveling waves.
        let t = *traj.times.last().unwrap();
        let exact = {
            let l = grid.box_len();
            let om1 = spec.c1;
            let om2 = 2.0 * spec.c2;
            Field::sample(grid, Rank::Vector3, |x| {
                let p1 = 2.0 * std::f64::consts::PI * x[0] / l * 1.0;
                let p2 = 2.0 * std::f64::consts::PI * x[1] / l * 2.0;
                // Mode [1,0,0] longitudinal: dir = e1; mode [0,2,0] transverse: dir = e1.
                let w1 = 0.02 * (p1 * 1.0 - om1 * t).sin();
                let w2 = 0.015 * (p2 - om2 * t).sin();
                vec![w1 + w2, 0.0, 0.0]
            })
        };
        let last = &traj.states.last().unwrap().u;
        let mut diff = last.clone();
        diff.axpy(-1.0, &exact);
        assert!(
            diff.max_abs() <= 1e-5,
            "superposition error {}",
            diff.max_abs()
        );
    }

    #[test]
    fn huge_amplitude_trips_a_failure_record() {
        let grid = Grid3::new(16, 2.0 * std::f64::consts::PI).unwrap();
        let spec = MaterialSpec::new(1.0, 0.5, 0.5, vec![0.4]).unwrap();
        // Amplitude 5 drives gamma'(dU) past the c1^2 - c2^2 margin.
        let u = Field::sample(grid, Rank::Vector3, |x| vec![5.0 * x[0].sin(), 0.0, 0.0]);
        let v = Field::zeros(grid, Rank::Vector3);
        let init = State::new(u, v, 0.0).unwrap();
        let traj = simulate(init, &spec, &SimOptions::default()).unwrap();
        let failure = traj.failure.expect("hyperbolicity failure must be recorded");
        assert!(failure.time < 1.0);
        assert!(failure.cause.contains("hyperbolicity"));
    }

    #[test]
    fn psi_linear_evolution_is_exact_rotation() {
        let grid = grid32();
        let spec = MaterialSpec::linear(1.0, 0.5).unwrap();
        let state =
            plane_wave_state(grid, &spec, [0, 1, 0], 0.03, Polarization::Transverse, true)
                .unwrap();
        let times = [0.0, 0.7, 1.3];
        let seq = psi_linear_evolution(&state.u, &state.v, &spec, &times, 0.0).unwrap();
        let l = grid.box_len();
        for (j, &t) in times.iter().enumerate() {
            let exact = Field::sample(grid, Rank::Vector3, |x| {
                let p = 2.0 * std::f64::consts::PI * x[1] / l;
                vec![0.03 * (p - 0.5 * t).sin(), 0.0, 0.0]
            });
            let mut diff = seq.fields[j].clone();
            diff.axpy(-1.0, &exact);
            assert!(diff.max_abs() <= 1e-12, "t = {t}: {}", diff.max_abs());
        }
    }

    #[test]
    fn divergence_free_linear_data_keeps_phi_zero() {
        let grid = grid32();
        let spec = MaterialSpec::linear(1.0, 0.5).unwrap();
        let state =
            plane_wave_state(grid, &spec, [0, 1, 0], 0.02, Polarization::Transverse, true)
                .unwrap();
        let run = simulate_decomposed(
            state,
            &spec,
            &SimOptions {
                t_end: 0.5,
                cfl_safety: 0.4,
                out_every: 8,
                ..Default::default()
            },
        )
        .unwrap();
        for f in &run.phi_full.fields {
            assert!(f.max_abs() <= 1e-8, "phi leaked {}", f.max_abs());
        }
    }
}
