//! Persistence: EMF1 frame files, calibration-curve CSV and SVG plots.

mod csv;
mod emf;
mod svg;

pub use csv::{
    covariance_path, curve_to_csv, parse_curve_csv, read_curve_covariance, read_curve_csv,
    write_curve_covariance, write_curve_csv, write_curve_csv_flagged, CURVE_HEADER,
};
pub use emf::{
    decode_stack, encode_stack, meta_path, read_meta, read_stack, write_stack, FrameFileHeader,
    Provenance, StackMeta, HEADER_LEN, MAGIC, VERSION,
};
pub use svg::{render_svg, write_svg, Plot, PlotOptions, PlotPoint};
