use num_complex::Complex;
use torus_transport::dynamics::*;
use torus_transport::experiments::*;
use torus_transport::field::SpectralField;
use torus_transport::grid::Grid;
use torus_transport::noise::*;

fn main() {
    for (nn, n_list, dt, paths) in [
        (64usize, vec![1usize, 8], 1e-3, 8usize),
        (128, vec![1, 4, 16], 1e-3, 16),
    ] {
        let g = Grid::new(2, nn).unwrap();
        let initial = SpectralField::from_modes(
            g,
            &[([1, 0, 0], Complex::new(std::f64::consts::FRAC_1_SQRT_2, 0.0))],
        ).unwrap();
        let cfg = SimConfig {
            grid: g, equation: Equation::Scalar, limit_form: None,
            molecular: 0.05, mu: 0.5,
            theta: ThetaFamily::empty(2),
            basis: NoiseBasis::build(2, &[[1,0,0],[-1,0,0]]).unwrap(),
            dt, t_end: 1.0, paths, seed: 11, dealias: true,
            cutoff: None, record: RecordSpec::default(), initial,
        };
        let spec = ScalingSpec { n_list: n_list.clone(), ..Default::default() };
        let table = exp_scaling_limit(&cfg, &spec, None).unwrap();
        println!("N={nn} dt={dt} paths={paths}:");
        for r in &table.rows {
            println!("  n={}: median={:.4} mean={:.4} q25={:.4} q75={:.4} max={:.4}",
                r.shell, r.sup_distance.median, r.sup_distance.mean, r.sup_distance.q25, r.sup_distance.q75, r.sup_distance.max);
        }
    }
}
