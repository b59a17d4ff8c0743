pub mod boxmodel;
pub mod calibrate;
pub mod eval;
pub mod explorer;
pub mod manifest;
pub mod neural;
pub mod oracle;
pub mod pipeline;
pub mod tipgan;
