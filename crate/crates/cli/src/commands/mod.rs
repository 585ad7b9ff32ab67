pub mod compare;
pub mod fit_s21;
pub mod power;
pub mod simulate;
pub mod spectrum;
