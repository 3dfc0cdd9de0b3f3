//! Dormand–Prince 5(4) integrator with continuous (dense) output.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// When set, take equal steps of (at most) this size and skip error control.
    pub fixed_step: Option<f64>,
    pub max_steps: usize,
    pub h_max: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, fixed_step: None, max_steps: 200_000, h_max: f64::INFINITY }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol * 1e-2, ..Self::default() }
    }

    pub fn fixed(h: f64) -> Self {
        Self { fixed_step: Some(h), ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Completed,
    /// The stop predicate fired; the solution is truncated at `t`.
    Stopped { t: f64 },
    /// Step size underflow, non-finite derivatives or the step budget ran out.
    StepFailure { t: f64 },
}

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    h: f64,
    cont: [DVector<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64) -> DVector<f64> {
        let s = if self.h == 0.0 { 0.0 } else { (t - self.t0) / self.h };
        let s1 = 1.0 - s;
        let [c0, c1, c2, c3, c4] = &self.cont;
        c0 + (c1 + (c2 + (c3 + c4 * s1) * s) * s1) * s
    }
}

/// Time grid, states and dense output of an integration.
#[derive(Debug, Clone)]
pub struct Solution {
    pub ts: Vec<f64>,
    pub ys: Vec<DVector<f64>>,
    pub status: Status,
    segments: Vec<Segment>,
}

impl Solution {
    pub fn t_start(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.ts.last().expect("non-empty grid")
    }

    pub fn last(&self) -> &DVector<f64> {
        self.ys.last().expect("non-empty grid")
    }

    pub fn completed(&self) -> bool {
        self.status == Status::Completed
    }

    /// Concatenates `n` copies of a forward solution, each shifted in time by
    /// the span and in state by `i · shift`.
    pub fn repeat(&self, n: usize, shift: &DVector<f64>) -> Solution {
        assert!(n >= 1);
        let span = self.t_end() - self.t_start();
        let mut out = self.clone();
        for i in 1..n {
            let dt = span * i as f64;
            let dy = shift * i as f64;
            for (t, y) in self.ts.iter().zip(&self.ys).skip(1) {
                out.ts.push(t + dt);
                out.ys.push(y + &dy);
            }
            for seg in &self.segments {
                let mut seg = seg.clone();
                seg.t0 += dt;
                seg.cont[0] += &dy;
                out.segments.push(seg);
            }
        }
        out
    }

    /// Dense-output state at `t`, clamped to the integrated interval.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        if self.segments.is_empty() {
            return self.ys[0].clone();
        }
        let forward = self.t_end() >= self.t_start();
        // Segments are ordered along the direction of integration.
        let idx = self.segments.partition_point(|seg| {
            let end = seg.t0 + seg.h;
            if forward {
                end < t
            } else {
                end > t
            }
        });
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        let lo = seg.t0.min(seg.t0 + seg.h);
        let hi = seg.t0.max(seg.t0 + seg.h);
        seg.eval(t.clamp(lo, hi))
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (either direction). The
/// optional `stop` predicate is checked on accepted states; the first
/// crossing is located by bisection on the dense output.
pub fn integrate<F>(
    f: F,
    t0: f64,
    y0: DVector<f64>,
    t_end: f64,
    opts: &OdeOptions,
    stop: Option<&dyn Fn(&DVector<f64>) -> bool>,
) -> Solution
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut ts = vec![t0];
    let mut ys = vec![y0.clone()];
    let mut segments = Vec::new();
    let span = t_end - t0;
    if span == 0.0 {
        return Solution { ts, ys, status: Status::Completed, segments };
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    if !k1.iter().all(|v| v.is_finite()) {
        return Solution { ts, ys, status: Status::StepFailure { t }, segments };
    }
    let n = y.len() as f64;
    let scale = |a: &DVector<f64>, b: &DVector<f64>, i: usize| opts.atol + opts.rtol * a[i].abs().max(b[i].abs());

    let (mut h, fixed) = match opts.fixed_step {
        Some(hf) => {
            let steps = (span.abs() / hf).ceil().max(1.0);
            (span / steps, true)
        }
        None => (dir * initial_step(&f, t, &y, &k1, opts).min(span.abs()).min(opts.h_max), false),
    };
    let h_min = 1e-14 * (t0.abs().max(t_end.abs()).max(1.0));

    let mut steps = 0usize;
    let mut rejected_last = false;
    loop {
        if (t_end - t) * dir <= h_min * 0.5 {
            break;
        }
        if steps >= opts.max_steps {
            return Solution { ts, ys, status: Status::StepFailure { t }, segments };
        }
        steps += 1;
        if (t + h - t_end) * dir > 0.0 || (fixed && (t_end - (t + h)).abs() < 1e-9 * h.abs()) {
            h = t_end - t;
        }

        let k2 = f(t + C2 * h, &(&y + &k1 * (h * A21)));
        let k3 = f(t + C3 * h, &(&y + (&k1 * A31 + &k2 * A32) * h));
        let k4 = f(t + C4 * h, &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
        let k5 = f(t + C5 * h, &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
        let k6 = f(t + h, &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = f(t + h, &y_new);

        let finite = y_new.iter().chain(k7.iter()).all(|v| v.is_finite());
        let err = if finite {
            let e = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
            ((0..y.len()).map(|i| (e[i] / scale(&y, &y_new, i)).powi(2)).sum::<f64>() / n).sqrt()
        } else {
            f64::INFINITY
        };

        if !fixed && err > 1.0 {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.1 };
            h *= if rejected_last { fac.min(0.5) } else { fac };
            rejected_last = true;
            if h.abs() < h_min {
                return Solution { ts, ys, status: Status::StepFailure { t }, segments };
            }
            continue;
        }
        if !finite {
            return Solution { ts, ys, status: Status::StepFailure { t }, segments };
        }
        rejected_last = false;

        let ydiff = &y_new - &y;
        let bspl = &k1 * h - &ydiff;
        let cont3 = &ydiff - &k7 * h - &bspl;
        let cont4 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
        let seg = Segment { t0: t, h, cont: [y.clone(), ydiff, bspl, cont3, cont4] };

        if let Some(stop) = stop {
            if stop(&y_new) {
                // Bisect on the dense output for the first stopping time.
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if stop(&seg.eval(t + mid * h)) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let t_stop = t + lo * h;
                let y_stop = seg.eval(t_stop);
                segments.push(restrict(&seg, t_stop));
                ts.push(t_stop);
                ys.push(y_stop);
                return Solution { ts, ys, status: Status::Stopped { t: t_stop }, segments };
            }
        }

        segments.push(seg);
        t += h;
        if (t_end - t).abs() <= h_min {
            t = t_end;
        }
        y = y_new;
        k1 = k7;
        ts.push(t);
        ys.push(y.clone());

        if !fixed {
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).abs().min(opts.h_max) * dir;
        }
    }
    Solution { ts, ys, status: Status::Completed, segments }
}

/// Re-expresses a segment's interpolant on the shorter window `[t0, t_new]`
/// by resampling it; exact because the interpolant is a quartic polynomial.
fn restrict(seg: &Segment, t_new: f64) -> Segment {
    let h = t_new - seg.t0;
    if h == 0.0 {
        return Segment { t0: seg.t0, h: 0.0, cont: seg.cont.clone() };
    }
    // Sample five points and rebuild the same basis.
    let p = |s: f64| seg.eval(seg.t0 + s * h);
    let y0 = p(0.0);
    let y1 = p(1.0);
    let ydiff = &y1 - &y0;
    // Solve for (c2, c3, c4) from values at s = 1/4, 1/2, 3/4.
    // y(s) = y0 + s(ydiff + s1(c2 + s(c3 + s1 c4))).
    let r = |s: f64| -> DVector<f64> { (p(s) - &y0 - &ydiff * s) / (s * (1.0 - s)) };
    let (ra, rb, rc) = (r(0.25), r(0.5), r(0.75));
    // r(s) = c2 + s c3 + s(1-s) c4
    let a = nalgebra::Matrix3::new(1.0, 0.25, 0.1875, 1.0, 0.5, 0.25, 1.0, 0.75, 0.1875);
    let inv = a.try_inverse().expect("fixed nonsingular system");
    let mix = |i: usize| &ra * inv[(i, 0)] + &rb * inv[(i, 1)] + &rc * inv[(i, 2)];
    Segment { t0: seg.t0, h, cont: [y0, ydiff, mix(0), mix(1), mix(2)] }
}

fn initial_step<F>(f: &F, t: f64, y: &DVector<f64>, f0: &DVector<f64>, opts: &OdeOptions) -> f64
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let n = y.len() as f64;
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let norm = |v: &DVector<f64>| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt();
    let d0 = norm(y);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = y + f0 * h0;
    let f1 = f(t + h0, &y1);
    let d2 = norm(&(&f1 - f0)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    let h = (100.0 * h0).min(h1);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-6
    }
}
