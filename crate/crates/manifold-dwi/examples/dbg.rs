use manifold_dwi::odf::{self, SphereGrid, ShBasis};
fn main() {
    let grid = SphereGrid::icosphere(2);
    let basis = ShBasis::new(4, &grid).unwrap();
    for k in [1.5f64, 2.5, 3.5, 4.5, 6.0] {
        for ratio in [5.0f64, 8.0] {
            let p_raw: Vec<f64> = grid.directions().iter().map(|&s| {
                let c = s[2];
                let q = 1.0 + c * c * (1.0 / ratio - 1.0);
                q.powf(-k)
            }).collect();
            let integral: f64 = p_raw.iter().zip(grid.weights()).map(|(p, w)| p * w).sum();
            let psi: Vec<f64> = p_raw.iter().map(|p| (p / integral).sqrt()).collect();
            let c = odf::fit_sh(&psi, &grid, &basis).unwrap();
            let gfa = odf::gfa(&c);
            let min = basis.min_value(c.coeffs()).unwrap();
            println!("k={k} ratio={ratio}: gfa {gfa:.3} min_psi {min:.4}");
        }
    }
}
