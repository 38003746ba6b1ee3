pub mod certificate;
pub mod certshape;
pub mod driver;
pub mod emitter;
pub mod frontend;
pub mod poly;
pub mod rationalize;
pub mod sdp;
pub mod sexpr;
