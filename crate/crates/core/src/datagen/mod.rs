//! Ground-truth generation: initial shapes, prescribed flows, level-set
//! transport, dataset assembly and file formats.

mod advect;
mod cases;
mod dataset;
mod flow;
mod init;
mod io;

pub use advect::{
    advect, cfl_number, redistance, simulate, simulate_from, Frame, Interpolation, SimConfig,
};
pub use cases::{unit_width_grid, BlobsCase, ForecastCase};
pub use dataset::{build_forecast_dataset, build_pairs_dataset, level_set_to_rdf, Dataset};
pub use flow::FlowSpec;
pub use init::{
    blob_union, init_blobs, init_column, initial_field, rectangle_distance, InitKind, InitSpec,
    MAX_PLACEMENT_ATTEMPTS,
};
pub use io::{
    decode_dataset, encode_dataset, format_grid_text, import_grid_text, parse_grid_text,
    read_dataset, write_dataset, write_grid_text, DATASET_HEADER_LEN, DATASET_MAGIC,
    DATASET_VERSION,
};

pub(crate) use io::ByteReader;
