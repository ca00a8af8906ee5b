//! Single-file named-array container ("CRNS") and the datasets stored in it.
//!
//! Layout: `"CRNS"`, u16 version, u32 directory length, JSON directory,
//! then each array little-endian and 64-byte aligned. Directory offsets are
//! relative to the aligned end of the directory; every array carries a
//! CRC32.

mod container;
mod cube;
mod spectraset;

pub use container::{
    ArrayData, Container, DType, DirEntry, Directory, NamedArray, ALIGNMENT, CONTAINER_VERSION,
};
pub use cube::{
    cube_from_container, cube_to_container, read_cube, read_environment, write_cube,
    write_environment, GroundTruth, PixelClass,
};
pub use spectraset::{read_spectraset, write_spectraset, SpectraSet, SpectrumInfo};
