pub mod evaluate;
pub mod fit;
pub mod residuals;
pub mod simulate;
pub mod study;
