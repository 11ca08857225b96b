//! Float math that works both with `std` and with `libm` under `no_std`.

use crate::Real;

macro_rules! unary {
    ($name:ident, $std:ident, $libm64:ident, $libm32:ident) => {
        #[inline]
        pub fn $name(x: Real) -> Real {
            #[cfg(feature = "std")]
            {
                x.$std()
            }
            #[cfg(not(feature = "std"))]
            {
                #[cfg(not(feature = "f32"))]
                {
                    libm::$libm64(x)
                }
                #[cfg(feature = "f32")]
                {
                    libm::$libm32(x)
                }
            }
        }
    };
}

unary!(exp, exp, exp, expf);
unary!(ln, ln, log, logf);
unary!(sqrt, sqrt, sqrt, sqrtf);
unary!(floor, floor, floor, floorf);
unary!(sin, sin, sin, sinf);
unary!(cos, cos, cos, cosf);

#[inline]
pub fn abs(x: Real) -> Real {
    if x < 0.0 {
        -x
    } else {
        x
    }
}

#[inline]
pub fn powf(x: Real, y: Real) -> Real {
    #[cfg(feature = "std")]
    {
        x.powf(y)
    }
    #[cfg(not(feature = "std"))]
    {
        #[cfg(not(feature = "f32"))]
        {
            libm::pow(x, y)
        }
        #[cfg(feature = "f32")]
        {
            libm::powf(x, y)
        }
    }
}

/// Logistic function.
#[inline]
pub fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}
