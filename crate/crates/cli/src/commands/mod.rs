pub mod check;
pub mod code;
pub mod convert;
pub mod evaluate;
pub mod fetch;
pub mod pipeline;
pub mod plot;
