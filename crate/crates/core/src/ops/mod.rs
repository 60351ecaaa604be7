pub mod attention;

pub(crate) mod act;
pub(crate) mod conv;
pub(crate) mod linalg;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod shape_ops;
