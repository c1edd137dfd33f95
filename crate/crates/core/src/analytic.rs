//! Closed-form stationary quantities of the atom under homodyne detection and
//! simplified phase feedback, from the 3x3 Bloch drift matrix.

use nalgebra::{Matrix3, Matrix6, Vector3};
use num_complex::Complex64;

use crate::atom::{AtomParams, FeedbackSpec, FrameParams, OscillatorSpec};
use crate::error::{Error, Result};
use crate::ops::{c, Operator2};

/// Mean Bloch dynamics `dr/dt = -A r - u` in the rotating frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochSystem {
    pub a: Matrix3<f64>,
    pub u: Vector3<f64>,
    /// Stationary Bloch vector `d = -A^{-1} u`.
    pub d: Vector3<f64>,
    /// `(2 n_bar + 1) gamma + k0^2 + k1^2`
    pub gamma_total: f64,
    /// `cos(theta2) d1 + sin(theta2) d2`
    pub v: f64,
    pub theta2: f64,
    pub abs2_alpha2: f64,
    /// 1-norm condition number of `A`.
    pub condition: f64,
}

fn inverse3(a: &Matrix3<f64>, what: &str) -> Result<Matrix3<f64>> {
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem(format!("{what} is singular")))?;
    if !inv.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularSystem(format!("{what} is singular")));
    }
    Ok(inv)
}

fn norm1(a: &Matrix3<f64>) -> f64 {
    (0..3).map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

impl BlochSystem {
    pub fn from_frame(fp: &FrameParams) -> Result<Self> {
        let gamma_total = (2.0 * fp.n_bar + 1.0) * fp.gamma + fp.k0 * fp.k0 + fp.k1 * fp.k1;
        let fs = fp.k1 * fp.abs_alpha1 * fp.theta1.sin();
        let fc = fp.k1 * fp.abs_alpha1 * fp.theta1.cos();
        let relax = (2.0 * fp.n_bar + 1.0) * fp.gamma;
        #[rustfmt::skip]
        let a = Matrix3::new(
            gamma_total / 2.0, fp.delta_nu, -fs,
            -fp.delta_nu, gamma_total / 2.0, fp.omega_r + fc,
            0.0, -fp.omega_r, relax,
        );
        let u = Vector3::new(-fs, fc, fp.gamma);
        let inv = inverse3(&a, "Bloch matrix A")?;
        let d = -(inv * u);
        let condition = norm1(&a) * norm1(&inv);
        let mut bs = BlochSystem {
            a,
            u,
            d,
            gamma_total,
            v: 0.0,
            theta2: fp.theta2,
            abs2_alpha2: fp.abs_alpha2 * fp.abs_alpha2,
            condition,
        };
        bs.v = bs.quadrature(fp.theta2);
        Ok(bs)
    }

    fn quadrature(&self, theta2: f64) -> f64 {
        theta2.cos() * self.d[0] + theta2.sin() * self.d[1]
    }

    /// Same system observed at another quadrature of channel 2.
    pub fn with_theta2(&self, theta2: f64) -> Self {
        BlochSystem {
            theta2,
            v: self.quadrature(theta2),
            ..*self
        }
    }

    /// Relative residual of `A d + u = 0`.
    pub fn residual(&self) -> f64 {
        (self.a * self.d + self.u).norm() / self.u.norm().max(f64::MIN_POSITIVE)
    }

    /// Stationary state of the rotating frame, `(1 + d . sigma) / 2`.
    pub fn stationary_state(&self) -> Operator2 {
        let [x, y, z] = [self.d[0], self.d[1], self.d[2]];
        Operator2::new(c(0.5 * (1.0 + z), 0.0), c(0.5 * x, -0.5 * y), c(0.5 * x, 0.5 * y), c(0.5 * (1.0 - z), 0.0))
    }

    /// Stationary mean `n_inf = |alpha_2| v` of `m_2`.
    pub fn n_inf(&self) -> f64 {
        self.abs2_alpha2.sqrt() * self.v
    }

    fn e2(&self) -> Vector3<f64> {
        Vector3::new(self.theta2.cos(), self.theta2.sin(), 0.0)
    }

    fn w(&self) -> Vector3<f64> {
        let (s, cth) = self.theta2.sin_cos();
        Vector3::new(cth * (1.0 + self.d[2]), s * (1.0 + self.d[2]), -self.v)
    }
}

/// Bloch system of a model; requires homodyne oscillators and no feedback
/// or simplified phase feedback.
pub fn build_bloch(params: &AtomParams, fb: &FeedbackSpec, osc: &OscillatorSpec) -> Result<BlochSystem> {
    BlochSystem::from_frame(&FrameParams::from_model(params, fb, osc)?)
}

/// Inelastic homodyne spectrum of channel 2.
pub fn spectrum_inelastic(bs: &BlochSystem, mu: f64) -> Result<f64> {
    let resolvent = inverse3(&(bs.a * bs.a + Matrix3::identity() * (mu * mu)), "A^2 + mu^2")?;
    let rhs = bs.a * bs.w() + bs.u * bs.v;
    Ok(1.0 + 2.0 * bs.abs2_alpha2 * bs.e2().dot(&(resolvent * rhs)))
}

/// Coefficient `s_el = 2 pi |alpha_2|^2 v^2` of `delta(mu)` in the elastic spectrum.
pub fn spectrum_elastic_weight(bs: &BlochSystem) -> f64 {
    2.0 * std::f64::consts::PI * bs.abs2_alpha2 * bs.v * bs.v
}

/// Stationary covariance density `c(tau)` of the channel-2 output,
/// so that `S_inel(mu) = 1 + 2 int_0^inf cos(mu tau) c(tau) dtau`.
pub fn stationary_correlation(bs: &BlochSystem, tau: f64) -> f64 {
    let prop = (-bs.a * tau).exp();
    bs.abs2_alpha2 * bs.e2().dot(&(prop * (bs.w() - bs.d * bs.v)))
}

/// Expected periodogram of the inelastic part over a window of length `t_window`:
/// `1 + 2 int_0^T (1 - tau/T) cos(mu tau) c(tau) dtau`.
pub fn spectrum_inelastic_windowed(bs: &BlochSystem, mu: f64, t_window: f64) -> Result<f64> {
    if !(t_window > 0.0) {
        return Err(Error::invalid(format!("window must be > 0, got {t_window}")));
    }
    let b: Matrix3<Complex64> = bs.a.map(|x| c(x, 0.0)) - Matrix3::identity() * c(0.0, mu);
    let binv = b
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("A - i mu is singular".into()))?;
    let decay = (-b * c(t_window, 0.0)).exp();
    let kernel = binv - binv * binv * (Matrix3::identity() - decay) * c(1.0 / t_window, 0.0);
    let vec = (bs.w() - bs.d * bs.v).map(|x| c(x, 0.0));
    let e = bs.e2().map(|x| c(x, 0.0));
    let val = e.dot(&(kernel * vec));
    Ok(1.0 + 2.0 * bs.abs2_alpha2 * val.re)
}

/// `S_inel(mu; theta2) S_inel(mu; theta2 + pi/2)`.
pub fn heisenberg_product(bs: &BlochSystem, mu: f64) -> Result<f64> {
    let other = bs.with_theta2(bs.theta2 + std::f64::consts::FRAC_PI_2);
    Ok(spectrum_inelastic(bs, mu)? * spectrum_inelastic(&other, mu)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MandelQ {
    pub q: f64,
    /// Stationary count rate `M_3 / t = |beta_3|^2 (1 + d_3) / 2`.
    pub rate: f64,
}

/// `(1 - e^{-X}) / X` as the top-right block of `exp([[-X, I], [0, 0]])`.
pub fn phi1_neg(x: &Matrix3<f64>) -> Matrix3<f64> {
    let mut big = Matrix6::<f64>::zeros();
    big.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-x));
    big.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    big.exp().fixed_view::<3, 3>(0, 3).into_owned()
}

/// Stationary Mandel Q of counting channel 3 over a window of length `t`.
pub fn mandel_q3(bs: &BlochSystem, beta3_sq: f64, horizon: Horizon) -> Result<MandelQ> {
    let inv = inverse3(&bs.a, "Bloch matrix A")?;
    let y = inv * Vector3::new(bs.d[0], bs.d[1], 1.0 + bs.d[2]);
    let q = match horizon {
        Horizon::Infinite => -beta3_sq * y[2],
        Horizon::Finite(t) => {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("counting window must be > 0, got {t}")));
            }
            let f = phi1_neg(&(bs.a * t)) - Matrix3::identity();
            beta3_sq * (f * y)[2]
        }
    };
    Ok(MandelQ {
        q,
        rate: 0.5 * beta3_sq * (1.0 + bs.d[2]),
    })
}

/// Lorentzian line of the phase-diffusing laser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaserSpectrum {
    pub omega_r: f64,
    pub k0: f64,
    pub nu: f64,
}

impl LaserSpectrum {
    pub fn eval(&self, mu: f64) -> f64 {
        let k2 = self.k0 * self.k0;
        self.omega_r * self.omega_r * k2 / (k2 * k2 + 4.0 * (mu - self.nu).powi(2))
    }

    pub fn peak(&self) -> f64 {
        (self.omega_r / self.k0).powi(2)
    }

    pub fn fwhm(&self) -> f64 {
        self.k0 * self.k0
    }
}

pub fn laser_spectrum(params: &AtomParams) -> Result<LaserSpectrum> {
    if params.k0 == 0.0 {
        return Err(Error::Undefined(
            "the laser line is a delta function when k0 = 0".into(),
        ));
    }
    Ok(LaserSpectrum {
        omega_r: params.omega_r,
        k0: params.k0,
        nu: params.nu,
    })
}
