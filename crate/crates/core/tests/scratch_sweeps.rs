//! Temporary timing probes; not part of the suite.

use std::time::Instant;

use mhr_core::lasso::{cox_lasso_path, cross_validate, CvKind};
use mhr_core::rng::RngStream;
use mhr_core::selection::{select_xy, select_xz};
use mhr_core::simulate::{generate_dataset, GeneratorParams};

fn probe(n: usize, p: usize, k: f64, label: &str) {
    let mut params = GeneratorParams::new(n, p);
    params.k = k;
    params.alpha_z_star = Some(0.874);
    params.theta = Some(f64::INFINITY);
    let mut rng = RngStream::new(424_242, 0);
    let data = generate_dataset(&params, &mut rng).unwrap();

    let t0 = Instant::now();
    let xz = select_xz(&data, &mut rng);
    let t_xz = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let xy = select_xy(&data, &mut rng);
    let t_xy = t0.elapsed().as_secs_f64();
    match (&xz, &xy) {
        (Ok(a), Ok(b)) => println!(
            "{label}: xz {:5.1}s |xz|={:<3} xy {:5.1}s |xy|={:<3} total {:5.1}s",
            t_xz,
            a.indices().len(),
            t_xy,
            b.indices().len(),
            t_xz + t_xy
        ),
        _ => println!(
            "{label}: xz {:5.1}s {:?} xy {:5.1}s {:?}",
            t_xz,
            xz.map(|s| s.indices().len()),
            t_xy,
            xy.map(|s| s.indices().len())
        ),
    }
}

#[test]
#[ignore]
fn select_timing() {
    probe(1000, 500, 1.0, "scenario 1  (1000 x  500, k=1)");
    probe(1000, 1000, 3.0, "scenario 6  (1000 x 1000, k=3)");
    probe(1000, 1500, 1.0, "scenario 3  (1000 x 1500, k=1)");
    probe(500, 750, 1.0, "scenario 9  ( 500 x  750, k=1)");
}

#[test]
#[ignore]
fn scenario1_stall_stage() {
    let mut params = GeneratorParams::new(1000, 500);
    params.alpha_z_star = Some(0.874);
    params.theta = Some(f64::INFINITY);
    let mut rng = RngStream::new(424_242, 0);
    let data = generate_dataset(&params, &mut rng).unwrap();
    // Match select_xy's stream consumption: select_xz runs first.
    let _ = select_xz(&data, &mut rng);

    let z = data.z();
    let time: Vec<f64> = data.time().to_vec();
    let event: Vec<u8> = data.event().to_vec();
    for arm in [1u8, 0u8] {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| z[i] == arm).collect();
        let t_arm: Vec<f64> = rows.iter().map(|&i| time[i]).collect();
        let d_arm: Vec<u8> = rows.iter().map(|&i| event[i]).collect();
        let x_arm = data.x().select(ndarray::Axis(0), &rows);
        let t0 = Instant::now();
        let cv = cross_validate(
            CvKind::Cox { time: &t_arm, event: &d_arm },
            x_arm.view(),
            10,
            &mut rng,
        );
        let t_cv = t0.elapsed().as_secs_f64();
        match cv {
            Ok(cv) => {
                let grid = cv.grid_to_1se();
                let idx = grid.len();
                println!("arm {arm}: cv ok {t_cv:5.1}s lambda_1se at grid point {idx}");
                let t0 = Instant::now();
                let path = cox_lasso_path(x_arm.view(), &t_arm, &d_arm, &grid);
                let t_fit = t0.elapsed().as_secs_f64();
                match path {
                    Ok(p) => println!(
                        "arm {arm}: refit ok {t_fit:5.1}s nonzero {}",
                        p.nonzero_at(idx - 1).len()
                    ),
                    Err(e) => println!("arm {arm}: refit FAILED {t_fit:5.1}s: {e}"),
                }
            }
            Err(e) => println!("arm {arm}: cv FAILED {t_cv:5.1}s: {e}"),
        }
    }
}
