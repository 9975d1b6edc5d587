// debug scratch
use eulerstat::iterate::*;
use eulerstat::noise::{sample_ou_path, NoiseSpectrum, TimeGrid};
use eulerstat::params::{build_schedule, reference_inputs, BaseSpec, RunMode};

fn main() {
    let mut inputs = reference_inputs();
    inputs.a = BaseSpec::Small(2);
    inputs.gamma = "1/2".into();
    let sched = build_schedule(&inputs, RunMode::Desk).unwrap();
    let tg = TimeGrid { t0: -0.75, dt: 1.0 / 64.0, steps: 112 };
    let spec = NoiseSpectrum { s: "5".into(), c0: 0.0, sigma: "1".into(), mode_budget: 2.2 };
    let path = sample_ou_path(&spec, tg, 3, 0).unwrap();
    let cut0 = eulerstat::noise::truncate_and_cutoff(&path, 0, &sched, 15.0).unwrap();
    let state = initial_state(&sched, &path, &cut0, 32).unwrap();
    let vz: Vec<Vec<f64>> = vec![state.vz_l2sq.clone(), state.vz_l2sq.clone()];
    let energy = EnergyProfile::Constant { value: sched.energy.e_lo };
    let si = step::StepInputs { schedule: &sched, state: &state, path: &path, ensemble_vz: &vz, energy: &energy };
    let options = StepOptions { grid_n: 32, include_energy: false, residual_stride: 8, ..Default::default() };
    match step::step(&si, &options) {
        Ok(out) => println!("ok: residual {}", out.worst_residual),
        Err(e) => println!("ERROR: {e}"),
    }
}
