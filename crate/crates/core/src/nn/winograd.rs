//! Winograd F(2×2, 3×3) forward path for stride-1, pad-1, 3×3 convolutions.
//!
//! Each 4×4 input tile is transformed once per channel, the 16 transform
//! coefficients are multiplied by the transformed filters with 16 gemms, and
//! every 2×2 output tile is recovered by the inverse transform. That needs 16
//! multiplies per output tile and channel pair instead of 36.

use super::conv::{matmul_col_dst, ConvDims};
use super::Real;

/// Transformed buffers are capped at roughly this many elements per chunk so
/// they stay cache resident between the transforms and the gemms.
const CHUNK_ELEMS: usize = 1 << 19;

pub(crate) fn applies(d: &ConvDims) -> bool {
    d.kh == 3 && d.kw == 3 && d.stride == 1 && d.pad == 1
}

fn scalar<T: Real>(v: f64) -> T {
    T::from_f64(v)
}

/// Filter transform `G g Gᵀ`, laid out as 16 matrices of shape (O, C).
fn transform_filters<T: Real>(w: &[T], o: usize, c: usize) -> Vec<T> {
    let half: T = scalar(0.5);
    let mut u = vec![T::zero(); 16 * o * c];
    for oi in 0..o {
        for ci in 0..c {
            let g = &w[(oi * c + ci) * 9..(oi * c + ci) * 9 + 9];
            // t = G g (4×3)
            let mut t = [T::zero(); 12];
            for j in 0..3 {
                let (g0, g1, g2) = (g[j], g[3 + j], g[6 + j]);
                t[j] = g0;
                t[3 + j] = (g0 + g1 + g2) * half;
                t[6 + j] = (g0 + g2 - g1) * half;
                t[9 + j] = g2;
            }
            // t Gᵀ (4×4)
            for i in 0..4 {
                let (a, b, cc) = (t[i * 3], t[i * 3 + 1], t[i * 3 + 2]);
                let row = [a, (a + b + cc) * half, (a + cc - b) * half, cc];
                for (j, v) in row.into_iter().enumerate() {
                    u[((i * 4 + j) * o + oi) * c + ci] = v;
                }
            }
        }
    }
    u
}

pub(crate) fn conv_forward<T: Real>(x: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let (c, o, h, wi) = (d.c, d.o, d.h, d.w);
    let (ho, wo) = (d.ho, d.wo);
    let th = ho.div_ceil(2);
    let tw = wo.div_ceil(2);
    let u = transform_filters(w, o, c);
    let per_row = 16 * tw * c.max(o);
    let rows_per_chunk = (CHUNK_ELEMS / per_row.max(1)).clamp(1, th);
    let cap = rows_per_chunk * tw;
    let mut v = vec![T::zero(); 16 * c * cap];
    let mut m = vec![T::zero(); 16 * o * cap];
    let mut out = vec![T::zero(); d.n * o * ho * wo];
    // Even / odd columns of the zero-padded input rows (padded column p = x + 1).
    let half = tw + 1;
    let mut ev = vec![T::zero(); 4 * half];
    let mut od = vec![T::zero(); 4 * half];
    let mut bev = vec![T::zero(); 4 * half];
    let mut bod = vec![T::zero(); 4 * half];
    let mut t = vec![T::zero(); 8 * tw];
    let mut oev = vec![T::zero(); tw];
    let mut ood = vec![T::zero(); tw];

    for b in 0..d.n {
        let xb = &x[b * c * h * wi..(b + 1) * c * h * wi];
        let ob = &mut out[b * o * ho * wo..(b + 1) * o * ho * wo];
        let mut tr0 = 0;
        while tr0 < th {
            let rows = rows_per_chunk.min(th - tr0);
            let tc = rows * tw;

            for ci in 0..c {
                let plane = &xb[ci * h * wi..(ci + 1) * h * wi];
                for r in 0..rows {
                    let y0 = 2 * (tr0 + r) as isize - 1;
                    for i in 0..4 {
                        let e = &mut ev[i * half..(i + 1) * half];
                        let q = &mut od[i * half..(i + 1) * half];
                        e.fill(T::zero());
                        q.fill(T::zero());
                        let yy = y0 + i as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let src = &plane[yy as usize * wi..(yy as usize + 1) * wi];
                        for (xx, &val) in src.iter().enumerate() {
                            let p = xx + 1;
                            if p % 2 == 0 {
                                e[p / 2] = val;
                            } else {
                                q[p / 2] = val;
                            }
                        }
                    }
                    vertical_bt(&ev, &mut bev, half);
                    vertical_bt(&od, &mut bod, half);
                    let col0 = r * tw;
                    for i in 0..4 {
                        let e = &bev[i * half..(i + 1) * half];
                        let q = &bod[i * half..(i + 1) * half];
                        let dst = |j: usize| ((i * 4 + j) * c + ci) * tc + col0;
                        let v0 = &mut v[dst(0)..dst(0) + tw];
                        for k in 0..tw {
                            v0[k] = e[k] - e[k + 1];
                        }
                        let v1 = &mut v[dst(1)..dst(1) + tw];
                        for k in 0..tw {
                            v1[k] = q[k] + e[k + 1];
                        }
                        let v2 = &mut v[dst(2)..dst(2) + tw];
                        for k in 0..tw {
                            v2[k] = e[k + 1] - q[k];
                        }
                        let v3 = &mut v[dst(3)..dst(3) + tw];
                        for k in 0..tw {
                            v3[k] = q[k] - q[k + 1];
                        }
                    }
                }
            }

            // M[ξ] (o × tc, row-major) computed as the column-major product V[ξ]ᵀ U[ξ]ᵀ.
            for xi in 0..16 {
                matmul_col_dst(
                    tc,
                    o,
                    c,
                    &mut m[xi * o * tc..(xi + 1) * o * tc],
                    tc,
                    &v[xi * c * tc..(xi + 1) * c * tc],
                    1,
                    tc,
                    &u[xi * o * c..(xi + 1) * o * c],
                    1,
                    c,
                );
            }

            for oi in 0..o {
                let oplane = &mut ob[oi * ho * wo..(oi + 1) * ho * wo];
                for r in 0..rows {
                    let col0 = r * tw;
                    let mrow = |xi: usize| &m[(xi * o + oi) * tc + col0..(xi * o + oi) * tc + col0 + tw];
                    for j in 0..4 {
                        let (m0, m1, m2, m3) = (mrow(j), mrow(4 + j), mrow(8 + j), mrow(12 + j));
                        let (lo, hi) = t.split_at_mut(4 * tw);
                        let t0 = &mut lo[j * tw..(j + 1) * tw];
                        let t1 = &mut hi[j * tw..(j + 1) * tw];
                        for k in 0..tw {
                            t0[k] = m0[k] + m1[k] + m2[k];
                            t1[k] = m1[k] - m2[k] - m3[k];
                        }
                    }
                    for i in 0..2 {
                        let yy = 2 * (tr0 + r) + i;
                        if yy >= ho {
                            break;
                        }
                        let ti = &t[i * 4 * tw..(i + 1) * 4 * tw];
                        let (a0, a1, a2, a3) = (&ti[..tw], &ti[tw..2 * tw], &ti[2 * tw..3 * tw], &ti[3 * tw..]);
                        for k in 0..tw {
                            oev[k] = a0[k] + a1[k] + a2[k];
                            ood[k] = a1[k] - a2[k] - a3[k];
                        }
                        let row = &mut oplane[yy * wo..(yy + 1) * wo];
                        for (k, pair) in row.chunks_mut(2).enumerate() {
                            pair[0] = oev[k];
                            if let Some(second) = pair.get_mut(1) {
                                *second = ood[k];
                            }
                        }
                    }
                }
            }
            tr0 += rows;
        }
    }
    out
}

/// `Bᵀ d` along the vertical axis for four stacked rows of length `len`.
fn vertical_bt<T: Real>(src: &[T], dst: &mut [T], len: usize) {
    let (r0, rest) = src.split_at(len);
    let (r1, rest) = rest.split_at(len);
    let (r2, r3) = rest.split_at(len);
    let (b0, rest) = dst.split_at_mut(len);
    let (b1, rest) = rest.split_at_mut(len);
    let (b2, b3) = rest.split_at_mut(len);
    for k in 0..len {
        b0[k] = r0[k] - r2[k];
        b1[k] = r1[k] + r2[k];
        b2[k] = r2[k] - r1[k];
        b3[k] = r1[k] - r3[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
        let mut out = vec![0.0; d.n * d.o * d.ho * d.wo];
        for b in 0..d.n {
            for o in 0..d.o {
                for y in 0..d.ho {
                    for xx in 0..d.wo {
                        let mut acc = 0.0;
                        for c in 0..d.c {
                            for i in 0..3 {
                                for j in 0..3 {
                                    let iy = y as isize + i as isize - 1;
                                    let ix = xx as isize + j as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                        continue;
                                    }
                                    acc += x[((b * d.c + c) * d.h + iy as usize) * d.w + ix as usize]
                                        * w[((o * d.c + c) * 3 + i) * 3 + j];
                                }
                            }
                        }
                        out[((b * d.o + o) * d.ho + y) * d.wo + xx] = acc;
                    }
                }
            }
        }
        out
    }

    fn check(n: usize, c: usize, h: usize, w: usize, o: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = ConvDims::new(&[n, c, h, w], &[o, c, 3, 3], 1, 1).unwrap();
        assert!(applies(&d));
        let x: Vec<f64> = (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..o * c * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = direct(&x, &wt, &d);
        let got = conv_forward(&x, &wt, &d);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-11, "{a} vs {b} for {d:?}");
        }
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let w32: Vec<f32> = wt.iter().map(|&v| v as f32).collect();
        let got32 = conv_forward(&x32, &w32, &d);
        let tol = 1e-5 * (c as f64 * 9.0).sqrt();
        for (a, b) in got32.iter().zip(&want) {
            assert!((*a as f64 - b).abs() < tol, "{a} vs {b} for {d:?}");
        }
    }

    #[test]
    fn matches_direct_convolution_on_odd_and_tiny_shapes() {
        check(1, 1, 1, 1, 1, 0);
        check(2, 3, 1, 4, 2, 1);
        check(1, 2, 3, 2, 5, 2);
        check(2, 4, 7, 9, 3, 3);
        check(1, 5, 16, 16, 4, 4);
    }

    #[test]
    fn matches_direct_convolution_across_chunks() {
        let per_row = 16 * 128 * 64;
        assert!((CHUNK_ELEMS / per_row) < 20, "test must span several chunks");
        check(1, 64, 40, 256, 2, 5);
    }
}
