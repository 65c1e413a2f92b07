use num_complex::Complex64;
use wandering::dilatation::{model_beltrami, BeltramiOptions};
use wandering::grid::GridSpec;
use wandering::maps::{Model, ModelParams};
use wandering::solver::{disc_field, solve_mrt, SolverOptions};
use wandering::Exec;

#[test]
fn sequential_and_parallel_solves_agree_bitwise() {
    let spec = GridSpec::new(Complex64::new(0.0, 0.0), 2.0, 128).unwrap();
    let f = disc_field(spec, Complex64::new(0.1, -0.2), 0.8, Complex64::new(0.25, 0.1));
    let run = |exec| solve_mrt(&f, &SolverOptions { exec, ..Default::default() }).unwrap();
    let (a, b) = (run(Exec::Sequential), run(Exec::Parallel));
    assert_eq!(a.displacement().values(), b.displacement().values());
    assert_eq!(a.a, b.a);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn sequential_and_parallel_fields_agree_bitwise() {
    let model = Model::new(ModelParams::bare(1.6, 9)).unwrap();
    let spec = GridSpec::new(Complex64::new(0.0, 0.0), 8.0, 128).unwrap();
    let run = |exec| model_beltrami(&model, spec, &BeltramiOptions { exec, ..Default::default() }).unwrap();
    assert_eq!(run(Exec::Sequential).grid().values(), run(Exec::Parallel).grid().values());
}
