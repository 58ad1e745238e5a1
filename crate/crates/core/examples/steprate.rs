use std::time::Instant;
use zitterwalk_core::grid_noise::TimeGrid;
use zitterwalk_core::stream::{self, PathSource};
use zitterwalk_core::walker::{builtin_field, InitialCondition, PhysicalScale, RademacherWalk};
use zitterwalk_core::equivalence::GaussianWalk;

fn main() {
    let grid = TimeGrid::new(1_000_000, 1.0).unwrap();
    let field = builtin_field("free", PhysicalScale::natural(), None).unwrap();
    let n_paths = 200;
    let walk = RademacherWalk::new(field.clone(), InitialCondition::Point(0.0), grid, n_paths, 1).unwrap();
    let t0 = Instant::now();
    let parts = stream::scan(&walk, 50, || 0.0f64, |acc, _, v| *acc += v[v.len()-1]).unwrap();
    let dt = t0.elapsed();
    let steps = n_paths as f64 * 1e6;
    println!("rademacher: {:.2} ns/step ({} paths x 1e6, sum {})", dt.as_secs_f64()/steps*1e9, n_paths, parts.iter().sum::<f64>());

    let gauss = GaussianWalk::new(field, InitialCondition::Point(0.0), grid, n_paths, 2).unwrap();
    let t0 = Instant::now();
    let parts = stream::scan(&gauss, 50, || 0.0f64, |acc, _, v| *acc += v[v.len()-1]).unwrap();
    let dt = t0.elapsed();
    println!("gaussian: {:.2} ns/step (sum {})", dt.as_secs_f64()/steps*1e9, parts.iter().sum::<f64>());

    let gridou = TimeGrid::new(1_000_000, 1.0).unwrap();
    let fieldou = builtin_field("ou_nelson", PhysicalScale::natural(), Some(1.0)).unwrap();
    let walkou = RademacherWalk::new(fieldou, InitialCondition::Point(0.0), gridou, n_paths, 1).unwrap();
    let t0 = Instant::now();
    let parts = stream::scan(&walkou, 50, || 0.0f64, |acc, _, v| *acc += v[v.len()-1]).unwrap();
    let dt = t0.elapsed();
    println!("ou rademacher: {:.2} ns/step (sum {})", dt.as_secs_f64()/steps*1e9, parts.iter().sum::<f64>());
}
