//! A desk-scale laboratory for GRW spontaneous collapse and the spin-1
//! locality argument.

pub mod grw;
pub mod hilbert;
pub mod ks;
pub mod lindblad;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod scenarios;
pub mod spin;
pub mod stats;

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident) => {
            #[doc = include_str!(concat!("../../../book/src/", stringify!($name), ".md"))]
            mod $name {}
        };
    }
    chapter!(introduction);
    chapter!(state_spaces);
    chapter!(collapse);
    chapter!(master_equation);
    chapter!(spin_one);
    chapter!(colorability);
    chapter!(experiments);
    chapter!(command_line);
}
