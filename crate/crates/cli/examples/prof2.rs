// instrumented replica of the eval-mode refinement loop
use dln_core::data::gen_synthetic;
use dln_core::degrade::DegradationSpec;
use dln_core::dlnet::{ObsModel, InnerHyper, adam_inner_step, InnerState};
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
    let obs = ObsModel::from_spec(&spec).unwrap();
    let y = no_grad(|| obs.apply(&x)).unwrap();

    let hyper = InnerHyper::default();
    let (mut t_h, mut t_fid, mut t_bwd, mut t_adam, mut t_upd) = (0.0,0.0,0.0,0.0,0.0);
    let reps = 40;
    for _ in 0..reps {
        let z0 = no_grad(|| net.forward_g(&y)).unwrap();
        let mut z = z0.detach();
        let mut state = InnerState::new(z.shape());
        for k in 1..=hyper.k_steps {
            let zc = z.requiring_grad();
            let t = Instant::now(); let xh = net.forward_h(&zc, &y).unwrap(); t_h += t.elapsed().as_secs_f64();
            let t = Instant::now(); let fid = obs.fidelity(&xh, &y).unwrap(); t_fid += t.elapsed().as_secs_f64();
            let t = Instant::now(); let gz = backward_toward(&fid, GradMode::EVAL, &zc).unwrap(); t_bwd += t.elapsed().as_secs_f64();
            let t = Instant::now(); let dz = no_grad(|| adam_inner_step(&gz.detach(), &mut state, &hyper, k)).unwrap(); t_adam += t.elapsed().as_secs_f64();
            let t = Instant::now(); z = no_grad(|| zc.detach().add(&dz)).unwrap(); t_upd += t.elapsed().as_secs_f64();
        }
    }
    let n = (reps * hyper.k_steps) as f64 / 1e3;
    println!("per step: h {:.3} ms, fid {:.3} ms, bwd {:.3} ms, adam {:.3} ms, upd {:.3} ms",
        t_h/n, t_fid/n, t_bwd/n, t_adam/n, t_upd/n);
}
