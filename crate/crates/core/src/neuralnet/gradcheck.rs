use rand::Rng;

use super::Mlp;

/// `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub worst_param: usize,
    pub num_params: usize,
}

/// Compares backpropagation against central differences with step `h` on
/// the scalar `<output_weights, net(input)>`, coordinate by coordinate.
pub fn gradcheck(net: &Mlp, input: &[f64], output_weights: &[f64], h: f64) -> GradcheckReport {
    let analytic = net.backward_single(input, output_weights).expect("shapes").flatten();
    let scalar = |m: &Mlp| -> f64 { m.forward(input).unwrap().iter().zip(output_weights).map(|(y, g)| y * g).sum() };
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut params = base.clone();
    let mut report = GradcheckReport { max_relative_error: 0.0, worst_param: 0, num_params: base.len() };
    for i in 0..base.len() {
        params[i] = base[i] + h;
        probe.set_flat_params(&params);
        let up = scalar(&probe);
        params[i] = base[i] - h;
        probe.set_flat_params(&params);
        let down = scalar(&probe);
        params[i] = base[i];
        let err = relative_error(analytic[i], (up - down) / (2.0 * h));
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_param = i;
        }
    }
    report
}

/// Smallest `|z|` over every hidden pre-activation. Central differences
/// straddling a rectifier kink are meaningless, so checks should draw
/// inputs whose margin is well above the finite-difference step.
pub fn kink_margin(net: &Mlp, input: &[f64]) -> f64 {
    let x = ndarray::ArrayView2::from_shape((1, input.len()), input).unwrap();
    let cache = net.forward_batch(x);
    let hidden = &cache.pre_activations()[..net.layers().len() - 1];
    hidden.iter().flat_map(|z| z.iter()).fold(f64::INFINITY, |m, z| m.min(z.abs()))
}

/// One random draw: fresh network of the given sizes with random biases,
/// a random input and random output weights, redrawn until every hidden
/// pre-activation is at least `1e-3` away from the kink.
pub fn random_gradcheck(sizes: &[usize], rng: &mut impl Rng) -> GradcheckReport {
    loop {
        let mut net = Mlp::new(sizes, rng);
        for layer in net.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let input: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        if kink_margin(&net, &input) >= 1e-3 {
            return gradcheck(&net, &input, &weights, 1e-5);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_networks_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let r = random_gradcheck(&[4, 6, 6, 3], &mut rng);
            assert!(r.max_relative_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-18);
    }
}
