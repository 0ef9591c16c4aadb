//! 3x3 stride-1 convolutions with circular (wraparound) padding.
//!
//! Feature maps are channel-major: `[channel][y][x]`. Weights are
//! `[out][in][ky][kx]`.

/// Copy `c` channels of a `w x h` map into a `(w+2) x (h+2)` buffer whose
/// one-pixel border wraps around to the opposite edge.
pub(crate) fn pad_circular(src: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let (pw, ph) = (w + 2, h + 2);
    let mut out = vec![0.0; c * pw * ph];
    for ch in 0..c {
        let s = &src[ch * w * h..(ch + 1) * w * h];
        let d = &mut out[ch * pw * ph..(ch + 1) * pw * ph];
        for py in 0..ph {
            let sy = (py + h - 1) % h;
            for px in 0..pw {
                let sx = (px + w - 1) % w;
                d[py * pw + px] = s[sy * w + sx];
            }
        }
    }
    out
}

/// Fold gradients on a padded buffer back onto the unpadded map.
pub(crate) fn unpad_circular_add(padded: &[f64], c: usize, w: usize, h: usize) -> Vec<f64> {
    let (pw, ph) = (w + 2, h + 2);
    let mut out = vec![0.0; c * w * h];
    for ch in 0..c {
        let s = &padded[ch * pw * ph..(ch + 1) * pw * ph];
        let d = &mut out[ch * w * h..(ch + 1) * w * h];
        for py in 0..ph {
            let sy = (py + h - 1) % h;
            for px in 0..pw {
                let sx = (px + w - 1) % w;
                d[sy * w + sx] += s[py * pw + px];
            }
        }
    }
    out
}

pub(crate) fn forward(
    padded: &[f64],
    cin: usize,
    w: usize,
    h: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let pw = w + 2;
    let plane = (w + 2) * (h + 2);
    let mut out = vec![0.0; cout * w * h];
    for oc in 0..cout {
        let o = &mut out[oc * w * h..(oc + 1) * w * h];
        o.iter_mut().for_each(|v| *v = bias[oc]);
        for ic in 0..cin {
            let p = &padded[ic * plane..(ic + 1) * plane];
            let k = &weight[(oc * cin + ic) * 9..(oc * cin + ic + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    for y in 0..h {
                        let src = &p[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        let dst = &mut o[y * w..(y + 1) * w];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d_weight, d_bias, d_input)`; `d_input` is skipped when
/// `need_input_grad` is false.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    padded: &[f64],
    cin: usize,
    w: usize,
    h: usize,
    weight: &[f64],
    cout: usize,
    d_out: &[f64],
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let pw = w + 2;
    let plane = (w + 2) * (h + 2);
    let mut d_weight = vec![0.0; cout * cin * 9];
    let mut d_bias = vec![0.0; cout];
    let mut d_padded = if need_input_grad {
        vec![0.0; cin * plane]
    } else {
        Vec::new()
    };
    for oc in 0..cout {
        let g = &d_out[oc * w * h..(oc + 1) * w * h];
        d_bias[oc] = g.iter().sum();
        for ic in 0..cin {
            let p = &padded[ic * plane..(ic + 1) * plane];
            let base = (oc * cin + ic) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let src = &p[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        let gr = &g[y * w..(y + 1) * w];
                        acc += gr.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d_weight[base + ky * 3 + kx] = acc;
                    if need_input_grad {
                        let wv = weight[base + ky * 3 + kx];
                        let dp = &mut d_padded[ic * plane..(ic + 1) * plane];
                        for y in 0..h {
                            let dst = &mut dp[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                            let gr = &g[y * w..(y + 1) * w];
                            for (d, s) in dst.iter_mut().zip(gr) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    let d_input = need_input_grad.then(|| unpad_circular_add(&d_padded, cin, w, h));
    (d_weight, d_bias, d_input)
}
