//! Minimal GeoTIFF reading and writing on top of the `tiff` crate.
//!
//! Georeferencing uses ModelPixelScale + ModelTiepoint (north-up only) and a
//! GeoKeyDirectory carrying the EPSG code. Nodata follows the GDAL_NODATA ASCII tag.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::colortype::{self, ColorType};
use tiff::encoder::{TiffEncoder, TiffValue};
use tiff::tags::Tag;

use crate::geo::{BinaryMask, Crs, GeoError, GeoTransform, RasterGrid};


const GT_MODEL_TYPE: u16 = 1024;
const GT_RASTER_TYPE: u16 = 1025;
const GEOGRAPHIC_TYPE: u16 = 2048;
const PROJECTED_CS_TYPE: u16 = 3072;

/// Nodata value used by written masks.
pub const MASK_NODATA: u8 = 255;

#[derive(Debug, thiserror::Error)]
pub enum RasterIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: TIFF error: {message}")]
    Tiff { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl RasterIoError {
    fn tiff(path: &Path, e: tiff::TiffError) -> Self {
        Self::Tiff {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

/// Pixel payload of a GeoTIFF. Multi-band rasters are band-major `(bands, rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    U8(Array2<u8>),
    U16(Array2<u16>),
    F32(Array2<f32>),
    F32Bands(Array3<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    pub grid: RasterGrid,
    pub data: RasterData,
    pub nodata: Option<f64>,
}

type TiffDecoder = Decoder<BufReader<File>>;

fn open_decoder(path: &Path) -> Result<(TiffDecoder, RasterGrid, Option<f64>), RasterIoError> {
    let file = File::open(path).map_err(|source| RasterIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| RasterIoError::tiff(path, e))?
        .with_limits(Limits::unlimited());
    let (w, h) = dec.dimensions().map_err(|e| RasterIoError::tiff(path, e))?;
    let (w, h) = (w as usize, h as usize);
    let scale = dec
        .get_tag_f64_vec(Tag::ModelPixelScaleTag)
        .map_err(|_| RasterIoError::format(path, "missing ModelPixelScale tag"))?;
    let tie = dec
        .get_tag_f64_vec(Tag::ModelTiepointTag)
        .map_err(|_| RasterIoError::format(path, "missing ModelTiepoint tag"))?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(RasterIoError::format(path, "malformed georeferencing tags"));
    }
    let keys = dec
        .get_tag_u16_vec(Tag::GeoKeyDirectoryTag)
        .map_err(|_| RasterIoError::format(path, "missing GeoKeyDirectory tag"))?;
    let crs = crs_from_keys(&keys).ok_or_else(|| RasterIoError::format(path, "no EPSG code in GeoKeyDirectory"))?;
    let nodata = dec
        .get_tag_ascii_string(Tag::GdalNodata)
        .ok()
        .and_then(|s| s.trim_matches(char::from(0)).trim().parse::<f64>().ok());

    // Tiepoint (i, j, k, x, y, z) anchors raster point (i, j) to world (x, y).
    let (pw, ph) = (scale[0], -scale[1]);
    let origin_x = tie[3] - tie[0] * pw;
    let origin_y = tie[4] - tie[1] * ph;
    let grid = RasterGrid::new(crs, GeoTransform::north_up(origin_x, origin_y, pw, ph), w, h)?;
    Ok((dec, grid, nodata))
}

/// Grid and nodata value without decoding pixels.
pub fn read_header(path: &Path) -> Result<(RasterGrid, Option<f64>), RasterIoError> {
    let (_, grid, nodata) = open_decoder(path)?;
    Ok((grid, nodata))
}

pub fn read_geotiff(path: &Path) -> Result<GeoRaster, RasterIoError> {
    let (mut dec, grid, nodata) = open_decoder(path)?;
    let (h, w) = grid.shape();
    let color = dec.colortype().map_err(|e| RasterIoError::tiff(path, e))?;
    let image = dec.read_image().map_err(|e| RasterIoError::tiff(path, e))?;
    let shape_err = |_| RasterIoError::format(path, "pixel buffer does not match dimensions");
    let data = match (color, image) {
        (tiff::ColorType::Gray(8), DecodingResult::U8(v)) => RasterData::U8(Array2::from_shape_vec((h, w), v).map_err(shape_err)?),
        (tiff::ColorType::Gray(16), DecodingResult::U16(v)) => RasterData::U16(Array2::from_shape_vec((h, w), v).map_err(shape_err)?),
        (tiff::ColorType::Gray(32), DecodingResult::F32(v)) => RasterData::F32(Array2::from_shape_vec((h, w), v).map_err(shape_err)?),
        (tiff::ColorType::RGB(32), DecodingResult::F32(v)) => {
            let interleaved = Array3::from_shape_vec((h, w, 3), v).map_err(shape_err)?;
            RasterData::F32Bands(interleaved.permuted_axes([2, 0, 1]).as_standard_layout().into_owned())
        }
        (other, _) => return Err(RasterIoError::format(path, format!("unsupported pixel layout {other:?}"))),
    };
    Ok(GeoRaster { grid, data, nodata })
}

fn crs_from_keys(keys: &[u16]) -> Option<Crs> {
    let n = *keys.get(3)? as usize;
    keys.get(4..4 + 4 * n)?
        .chunks_exact(4)
        .find(|k| (k[0] == PROJECTED_CS_TYPE || k[0] == GEOGRAPHIC_TYPE) && k[1] == 0)
        .map(|k| Crs(k[3] as u32))
}

fn write_with<C: ColorType>(path: &Path, grid: &RasterGrid, nodata: Option<String>, data: &[C::Inner]) -> Result<(), RasterIoError>
where
    [C::Inner]: TiffValue,
{
    let t = grid.transform();
    if t.is_rotated() {
        return Err(GeoError::RotatedGridUnsupported.into());
    }
    let io_err = |source| RasterIoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| RasterIoError::tiff(path, e))?;
    let mut image = enc
        .new_image::<C>(grid.width() as u32, grid.height() as u32)
        .map_err(|e| RasterIoError::tiff(path, e))?;
    let crs_key = if grid.crs().is_geographic() {
        GEOGRAPHIC_TYPE
    } else {
        PROJECTED_CS_TYPE
    };
    let model_type = if grid.crs().is_geographic() { 2 } else { 1 };
    let code = u16::try_from(grid.crs().0).map_err(|_| RasterIoError::format(path, format!("EPSG code {} exceeds GeoKey range", grid.crs())))?;
    let keys: [u16; 16] = [1, 1, 0, 3, GT_MODEL_TYPE, 0, 1, model_type, GT_RASTER_TYPE, 0, 1, 1, crs_key, 0, 1, code];
    let dir = image.encoder();
    let tiff_err = |e| RasterIoError::tiff(path, e);
    dir.write_tag(Tag::ModelPixelScaleTag, &[t.pixel_width, -t.pixel_height, 0.0][..])
        .map_err(tiff_err)?;
    dir.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, t.origin_x, t.origin_y, 0.0][..])
        .map_err(tiff_err)?;
    dir.write_tag(Tag::GeoKeyDirectoryTag, &keys[..]).map_err(tiff_err)?;
    if let Some(nd) = nodata {
        dir.write_tag(Tag::GdalNodata, nd.as_str()).map_err(tiff_err)?;
    }
    image.write_data(data).map_err(tiff_err)
}

fn check_shape(path: &Path, grid: &RasterGrid, shape: (usize, usize)) -> Result<(), RasterIoError> {
    if shape != grid.shape() {
        return Err(RasterIoError::format(path, format!("array shape {shape:?} does not match grid {:?}", grid.shape())));
    }
    Ok(())
}

pub fn write_u8(path: &Path, grid: &RasterGrid, data: &Array2<u8>, nodata: Option<u8>) -> Result<(), RasterIoError> {
    check_shape(path, grid, data.dim())?;
    let buf: Vec<u8> = data.iter().copied().collect();
    write_with::<colortype::Gray8>(path, grid, nodata.map(|v| v.to_string()), &buf)
}

pub fn write_u16(path: &Path, grid: &RasterGrid, data: &Array2<u16>, nodata: Option<u16>) -> Result<(), RasterIoError> {
    check_shape(path, grid, data.dim())?;
    let buf: Vec<u16> = data.iter().copied().collect();
    write_with::<colortype::Gray16>(path, grid, nodata.map(|v| v.to_string()), &buf)
}

/// Single-band float32; NaN marks missing pixels.
pub fn write_f32(path: &Path, grid: &RasterGrid, data: &Array2<f32>) -> Result<(), RasterIoError> {
    check_shape(path, grid, data.dim())?;
    let buf: Vec<f32> = data.iter().copied().collect();
    write_with::<colortype::Gray32Float>(path, grid, Some("nan".into()), &buf)
}

/// Three-band float32 from a band-major `(3, rows, cols)` array; NaN marks missing pixels.
pub fn write_f32_bands(path: &Path, grid: &RasterGrid, data: &Array3<f32>) -> Result<(), RasterIoError> {
    let (bands, h, w) = data.dim();
    if bands != 3 {
        return Err(RasterIoError::format(path, format!("expected 3 bands, got {bands}")));
    }
    check_shape(path, grid, (h, w))?;
    let buf: Vec<f32> = data.view().permuted_axes([1, 2, 0]).iter().copied().collect();
    write_with::<colortype::RGB32Float>(path, grid, Some("nan".into()), &buf)
}

/// Writes a mask as 8-bit {0, 1}; pixels outside `valid` become [`MASK_NODATA`].
pub fn write_mask(path: &Path, mask: &BinaryMask, valid: Option<&BinaryMask>) -> Result<(), RasterIoError> {
    let mut data = mask.data().clone();
    if let Some(v) = valid {
        if v.grid() != mask.grid() {
            return Err(GeoError::GridMismatch.into());
        }
        ndarray::Zip::from(&mut data).and(v.data()).for_each(|d, &ok| {
            if ok == 0 {
                *d = MASK_NODATA;
            }
        });
    }
    write_u8(path, mask.grid(), &data, Some(MASK_NODATA))
}

/// Reads an 8-bit mask, returning the mask and its validity (nodata pixels are 0 in both).
pub fn read_mask(path: &Path) -> Result<(BinaryMask, BinaryMask), RasterIoError> {
    let raster = read_geotiff(path)?;
    let RasterData::U8(data) = raster.data else {
        return Err(RasterIoError::format(path, "mask must be single-band 8-bit"));
    };
    let nodata = raster.nodata.map(|v| v as u8);
    let valid = data.mapv(|v| u8::from(Some(v) != nodata));
    let mut bad = None;
    let values = data.mapv(|v| {
        if Some(v) == nodata {
            0
        } else {
            if v > 1 {
                bad = Some(v);
            }
            v
        }
    });
    if let Some(v) = bad {
        return Err(RasterIoError::format(path, format!("mask value {v} outside {{0, 1}}")));
    }
    Ok((
        BinaryMask::new(raster.grid.clone(), values)?,
        BinaryMask::new(raster.grid, valid)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize) -> RasterGrid {
        RasterGrid::new(Crs(32629), GeoTransform::north_up(600000.0, 4400000.0, 20.0, -20.0), w, h).unwrap()
    }

    #[test]
    fn u16_round_trip_keeps_georeference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.tif");
        let g = grid(5, 3);
        let data = Array2::from_shape_fn((3, 5), |(r, c)| (r * 100 + c) as u16);
        write_u16(&path, &g, &data, Some(0)).unwrap();
        let back = read_geotiff(&path).unwrap();
        assert_eq!(back.grid, g);
        assert_eq!(back.nodata, Some(0.0));
        assert_eq!(back.data, RasterData::U16(data));
    }

    #[test]
    fn bands_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tif");
        let g = grid(4, 2);
        let mut data = Array3::from_shape_fn((3, 2, 4), |(b, r, c)| (b * 10 + r * 4 + c) as f32 / 100.0);
        data[[1, 1, 1]] = f32::NAN;
        write_f32_bands(&path, &g, &data).unwrap();
        let back = read_geotiff(&path).unwrap();
        let RasterData::F32Bands(arr) = back.data else { panic!() };
        assert_eq!(arr.dim(), (3, 2, 4));
        assert!(arr[[1, 1, 1]].is_nan());
        assert_eq!(arr[[2, 1, 3]], data[[2, 1, 3]]);
        assert_eq!(arr[[0, 0, 2]], data[[0, 0, 2]]);
    }

    #[test]
    fn mask_nodata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tif");
        let g = grid(2, 2);
        let mask = BinaryMask::new(g.clone(), Array2::from_shape_vec((2, 2), vec![1, 0, 1, 1]).unwrap()).unwrap();
        let valid = BinaryMask::new(g, Array2::from_shape_vec((2, 2), vec![1, 1, 0, 1]).unwrap()).unwrap();
        write_mask(&path, &mask, Some(&valid)).unwrap();
        let (m, v) = read_mask(&path).unwrap();
        assert_eq!(v, valid);
        assert_eq!(m.data().as_slice().unwrap(), &[1, 0, 0, 1]);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(read_geotiff(Path::new("/nonexistent/x.tif")), Err(RasterIoError::Io { .. })));
    }
}
