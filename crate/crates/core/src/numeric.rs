//! Small numerical kernels: double-double products, exact gamma values at
//! integer and half-integer points, and adaptive Gauss–Kronrod quadrature.

use std::f64::consts::PI;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DoubleDouble {
    hi: f64,
    lo: f64,
}

/// π to double-double precision.
pub(crate) const PI_DD: DoubleDouble = DoubleDouble {
    hi: PI,
    lo: 1.2246467991473532e-16,
};

/// √π to double-double precision.
pub(crate) const SQRT_PI_DD: DoubleDouble = DoubleDouble {
    hi: 1.772453850905516,
    lo: -7.666586499825799e-17,
};

/// √2 to double-double precision.
const SQRT_2_DD: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::SQRT_2,
    lo: -9.667293313452913e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl DoubleDouble {
    pub(crate) const ONE: DoubleDouble = DoubleDouble { hi: 1.0, lo: 0.0 };

    pub(crate) fn from_f64(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    pub(crate) fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub(crate) fn mul(self, o: Self) -> Self {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }

    pub(crate) fn mul_f64(self, v: f64) -> Self {
        self.mul(Self::from_f64(v))
    }

    pub(crate) fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul_f64(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul_f64(q2));
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo }.add(Self::from_f64(q3))
    }

    pub(crate) fn div_f64(self, v: f64) -> Self {
        self.div(Self::from_f64(v))
    }

    pub(crate) fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Self { hi, lo }
    }

    pub(crate) fn sub(self, o: Self) -> Self {
        self.add(Self {
            hi: -o.hi,
            lo: -o.lo,
        })
    }

    pub(crate) fn powi(self, mut k: u32) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            k >>= 1;
        }
        acc
    }
}

/// `Γ(x)` in double-double for `x` an integer or half-integer, not a pole.
///
/// Returns `None` for other arguments, at poles, or when the value would
/// leave the normal `f64` range.
pub(crate) fn gamma_half_integer(x: f64) -> Option<DoubleDouble> {
    let twice = 2.0 * x;
    if twice.fract() != 0.0 || !(-300.0..=340.0).contains(&twice) {
        return None;
    }
    if x <= 0.0 && x.fract() == 0.0 {
        return None;
    }
    // Γ(x) = Γ(x + k) / (x (x+1) … (x+k-1)) moves negative arguments up.
    let mut shift = DoubleDouble::ONE;
    let mut arg = x;
    while arg <= 0.0 {
        shift = shift.mul_f64(arg);
        arg += 1.0;
    }
    let mut g = if arg.fract() == 0.0 {
        DoubleDouble::ONE
    } else {
        SQRT_PI_DD
    };
    let mut k = if arg.fract() == 0.0 { 1.0 } else { 0.5 };
    while k < arg {
        g = g.mul_f64(k);
        k += 1.0;
    }
    let out = g.div(shift);
    out.to_f64().is_normal().then_some(out)
}

/// `2^e` in double-double for integer or half-integer `e`.
pub(crate) fn pow2_half_integer(e: f64) -> Option<DoubleDouble> {
    let twice = 2.0 * e;
    if twice.fract() != 0.0 || e.abs() > 1000.0 {
        return None;
    }
    let whole = e.floor();
    let base = DoubleDouble::from_f64(2f64.powi(whole as i32));
    Some(if e.fract() == 0.0 {
        base
    } else {
        base.mul(SQRT_2_DD)
    })
}

/// `π^(k/2)` in double-double.
pub(crate) fn pi_half_power(k: u32) -> DoubleDouble {
    let p = PI_DD.powi(k / 2);
    if k % 2 == 1 {
        p.mul(SQRT_PI_DD)
    } else {
        p
    }
}

/// Gamma function for arbitrary real arguments away from poles.
pub(crate) fn gamma(x: f64) -> f64 {
    match gamma_half_integer(x) {
        Some(v) => v.to_f64(),
        None => libm::tgamma(x),
    }
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1], digits as published.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Result of an adaptive quadrature.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Quadrature {
    pub value: f64,
    pub error: f64,
}

#[cfg(test)]
/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]` to absolute
/// tolerance `tol`, bisecting the worst interval until the summed error
/// estimate drops below `tol` or `max_intervals` is reached.
pub(crate) fn integrate(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_intervals: usize,
) -> Quadrature {
    integrate_panels(&f, &[a, b], tol, max_intervals)
}

/// Like [`integrate`] but starts from the given panel breakpoints, which
/// must be increasing.
pub(crate) fn integrate_panels(
    f: &impl Fn(f64) -> f64,
    breaks: &[f64],
    tol: f64,
    max_intervals: usize,
) -> Quadrature {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    struct Piece {
        a: f64,
        b: f64,
        value: f64,
        error: f64,
    }
    impl PartialEq for Piece {
        fn eq(&self, o: &Self) -> bool {
            self.error == o.error
        }
    }
    impl Eq for Piece {}
    impl PartialOrd for Piece {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Piece {
        fn cmp(&self, o: &Self) -> Ordering {
            self.error.total_cmp(&o.error)
        }
    }

    let mut heap = BinaryHeap::new();
    let mut error = 0.0;
    for w in breaks.windows(2) {
        let (v, e) = gk15(f, w[0], w[1]);
        error += e;
        heap.push(Piece {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    while error > tol && heap.len() < max_intervals {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = gk15(f, worst.a, mid);
        let (v2, e2) = gk15(f, mid, worst.b);
        error += e1 + e2 - worst.error;
        heap.push(Piece {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Piece {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Recompute the totals to shed drift from incremental updates.
    let (value_sum, error_sum) = heap
        .iter()
        .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    Quadrature {
        value: value_sum,
        error: error_sum.max(0.0),
    }
}
