// quick profiling harness for the eval-mode inner loop
use dln_core::data::gen_synthetic;
use dln_core::degrade::DegradationSpec;
use dln_core::dlnet::{restore, ObsModel, InnerHyper};
use dln_core::net::build_autoencoder;
use dln_core::tensor::{backward_toward, no_grad, GradMode, Tensor};
use std::time::Instant;

fn main() {
    let net = build_autoencoder::<f64>(32, 4, 1).unwrap();
    let ds = gen_synthetic(25, 32, 2).unwrap();
    let mut data = Vec::new();
    for im in &ds.images { data.extend_from_slice(im.data()); }
    let x = Tensor::from_vec(&[25,1,32,32], data).unwrap();
    let spec = DegradationSpec::<f64>::inpaint(32,32,8,(0,0)).unwrap();
    let specs = vec![spec.clone(); 25];
    let obs = ObsModel::from_specs(&specs).unwrap();
    let y = no_grad(|| obs.apply(&x)).unwrap();

    let reps = 200;
    // reference forward
    let t0 = Instant::now();
    for _ in 0..reps { let _ = no_grad(|| net.forward(&y)).unwrap(); }
    let t_ref = t0.elapsed().as_secs_f64()/reps as f64;

    // pieces
    let z0 = no_grad(|| net.forward_g(&y)).unwrap();
    let zc = z0.requiring_grad();
    let t0 = Instant::now();
    for _ in 0..reps { let _ = net.forward_h(&zc, &y).unwrap(); }
    let t_h = t0.elapsed().as_secs_f64()/reps as f64;

    let xh = net.forward_h(&zc, &y).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps { let _ = obs.fidelity(&xh, &y).unwrap(); }
    let t_fid = t0.elapsed().as_secs_f64()/reps as f64;

    let fid = obs.fidelity(&xh, &y).unwrap();
    let t0 = Instant::now();
    for _ in 0..reps { let _ = backward_toward(&fid, GradMode::EVAL, &zc).unwrap(); }
    let t_bwd = t0.elapsed().as_secs_f64()/reps as f64;

    // full restores
    let t0 = Instant::now();
    for _ in 0..(reps/10) { let _ = restore(&net, &y, &spec, &InnerHyper::default().with_k(0), false).unwrap(); }
    let t_k0 = t0.elapsed().as_secs_f64()/(reps/10) as f64;
    let t0 = Instant::now();
    for _ in 0..(reps/10) { let _ = restore(&net, &y, &spec, &InnerHyper::default(), false).unwrap(); }
    let t_k5 = t0.elapsed().as_secs_f64()/(reps/10) as f64;

    println!("batch25: ref fwd {:.3} ms | h fwd {:.3} ms | fid {:.3} ms | bwd->z {:.3} ms", t_ref*1e3, t_h*1e3, t_fid*1e3, t_bwd*1e3);
    println!("restore k0 {:.3} ms, k5 {:.3} ms, ratio {:.2}", t_k0*1e3, t_k5*1e3, t_k5/t_k0);
    println!("per-step overhead: {:.3} ms vs pieces h+fid+bwd = {:.3} ms", (t_k5-t_k0)/5.0*1e3, (t_h+t_fid+t_bwd)*1e3);
}
