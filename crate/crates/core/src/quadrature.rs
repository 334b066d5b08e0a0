//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Used as the independent oracle for every closed-form kernel, so it only
//! relies on pointwise integrand evaluation.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Scalar types the integrator can accumulate.
pub trait QuadValue:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_subdivisions: 4000,
        }
    }
}

impl QuadSettings {
    pub fn tolerance(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

/// Integral value with its estimated absolute error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadEstimate<T> {
    pub value: T,
    pub error: f64,
    pub evaluations: usize,
}

struct Panel<T> {
    a: f64,
    b: f64,
    value: T,
    error: f64,
}

impl<T> PartialEq for Panel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl<T> Eq for Panel<T> {}

impl<T> PartialOrd for Panel<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Panel<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<T: QuadValue, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> (T, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        let pair = f1 + f2;
        kronrod = kronrod + pair * WGK[j];
        if j % 2 == 1 {
            gauss = gauss + pair * WG[j / 2];
        }
    }
    let value = kronrod * half;
    let error = (kronrod - gauss).magnitude() * half.abs();
    (value, error)
}

/// Integrate `f` over `[a, b]`.
pub fn integrate<T, F>(f: F, a: f64, b: f64, settings: &QuadSettings) -> Result<QuadEstimate<T>>
where
    T: QuadValue,
    F: FnMut(f64) -> T,
{
    integrate_points(f, &[a, b], settings)
}

/// Integrate `f` over `[points[0], points[last]]`, starting from panels split
/// at every listed point (discontinuities and kinks belong there).
pub fn integrate_points<T, F>(
    mut f: F,
    points: &[f64],
    settings: &QuadSettings,
) -> Result<QuadEstimate<T>>
where
    T: QuadValue,
    F: FnMut(f64) -> T,
{
    if points.len() < 2 {
        return Ok(QuadEstimate {
            value: T::default(),
            error: 0.0,
            evaluations: 0,
        });
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("quadrature limits must be finite".into()));
    }
    let mut heap = BinaryHeap::new();
    let mut total = T::default();
    let mut total_err = 0.0;
    let mut evaluations = 0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let (value, error) = gauss_kronrod(&mut f, a, b);
        evaluations += 15;
        total = total + value;
        total_err += error;
        heap.push(Panel { a, b, value, error });
    }
    let mut subdivisions = 0;
    loop {
        let tol = settings.abs_tol.max(settings.rel_tol * total.magnitude());
        if total_err <= tol {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if subdivisions >= settings.max_subdivisions || mid <= worst.a || mid >= worst.b {
            return Err(Error::Quadrature {
                value: total.magnitude(),
                error: total_err,
                subdivisions,
            });
        }
        let (v1, e1) = gauss_kronrod(&mut f, worst.a, mid);
        let (v2, e2) = gauss_kronrod(&mut f, mid, worst.b);
        evaluations += 30;
        subdivisions += 1;
        total = total - worst.value + v1 + v2;
        total_err += e1 + e2 - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // Re-sum to shed drift from the incremental updates.
    let value = heap.iter().fold(T::default(), |acc, p| acc + p.value);
    let error = heap.iter().map(|p| p.error).sum();
    Ok(QuadEstimate {
        value,
        error,
        evaluations,
    })
}

/// Iterated integral `∫∫ f(x, y) dy dx` with outer break points `x_points`
/// and inner break points supplied per `x`.
pub fn integrate_2d<T, F, B>(
    f: F,
    x_points: &[f64],
    y_points: B,
    settings: &QuadSettings,
) -> Result<QuadEstimate<T>>
where
    T: QuadValue,
    F: Fn(f64, f64) -> T,
    B: Fn(f64) -> Vec<f64>,
{
    let inner_settings = QuadSettings {
        abs_tol: settings.abs_tol * 1e-2,
        rel_tol: settings.rel_tol * 1e-2,
        max_subdivisions: settings.max_subdivisions,
    };
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let outer = integrate_points(
        |x| {
            if failure.borrow().is_some() {
                return T::default();
            }
            match integrate_points(|y| f(x, y), &y_points(x), &inner_settings) {
                Ok(est) => est.value,
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    T::default()
                }
            }
        },
        x_points,
        settings,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    outer
}

/// Sorted, deduplicated break points inside `[a, b]`, including both ends.
pub fn breakpoints(a: f64, b: f64, interior: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut pts: Vec<f64> = std::iter::once(a)
        .chain(interior.into_iter().filter(|&p| p > a && p < b))
        .chain(std::iter::once(b))
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * y.abs().max(1.0));
    pts
}
