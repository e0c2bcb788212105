pub mod geo;
pub mod raster_io;
pub mod ingest;
pub mod dataset;
pub mod segmodel;
pub mod metrics;
pub mod transfer;
