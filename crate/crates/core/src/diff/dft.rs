//! Direct (quadratic) discrete Fourier transforms over real and complex grids.

use std::f64::consts::PI;

fn twiddles(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut c = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for k in 0..n {
        let ang = -2.0 * PI * k as f64 / n as f64;
        c.push(ang.cos());
        s.push(ang.sin());
    }
    (c, s)
}

/// 2-D DFT of a complex `rows × cols` grid given as separate real/imaginary parts.
pub(crate) fn dft2(re: &[f64], im: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let (cc, sc) = twiddles(cols);
    let (cr, sr) = twiddles(rows);
    // along columns within each row
    let mut yr = vec![0.0; rows * cols];
    let mut yi = vec![0.0; rows * cols];
    for j in 0..rows {
        let base = j * cols;
        for b in 0..cols {
            let (mut accr, mut acci) = (0.0, 0.0);
            for c in 0..cols {
                let w = (b * c) % cols;
                let (xr, xi) = (re[base + c], im[base + c]);
                accr += xr * cc[w] - xi * sc[w];
                acci += xr * sc[w] + xi * cc[w];
            }
            yr[base + b] = accr;
            yi[base + b] = acci;
        }
    }
    // along rows
    let mut zr = vec![0.0; rows * cols];
    let mut zi = vec![0.0; rows * cols];
    for a in 0..rows {
        for j in 0..rows {
            let w = (a * j) % rows;
            let (wr, wi) = (cr[w], sr[w]);
            let src = j * cols;
            let dst = a * cols;
            for b in 0..cols {
                let (xr, xi) = (yr[src + b], yi[src + b]);
                zr[dst + b] += xr * wr - xi * wi;
                zi[dst + b] += xr * wi + xi * wr;
            }
        }
    }
    (zr, zi)
}

/// Magnitude spectrum of a real grid, together with the complex spectrum.
pub(crate) fn magnitude2(x: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let zeros = vec![0.0; x.len()];
    let (re, im) = dft2(x, &zeros, rows, cols);
    let mag = re.iter().zip(&im).map(|(r, i)| r.hypot(*i)).collect();
    (mag, re, im)
}
