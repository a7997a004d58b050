//! Minimal multi-band 32-bit float GeoTIFF reader/writer.
//!
//! Files are classic little-endian TIFF, uncompressed, pixel-interleaved, with
//! `ModelPixelScale`/`ModelTiepoint`/`GeoKeyDirectory` georeferencing, the GDAL nodata tag and
//! GDAL band descriptions. The reader also accepts planar layouts and integer sample formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Seek, Write};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::TiffEncoder;
use tiff::tags::{PhotometricInterpretation, PlanarConfiguration, SampleFormat, Tag};

use crate::error::{Error, Result};
use crate::raster::{Georef, RasterTile};

const GDAL_METADATA: u16 = 42112;
const ROWS_PER_STRIP: usize = 16;

/// A decoded raster plus its band descriptions (empty strings when absent).
#[derive(Debug, Clone)]
pub struct GeoRaster {
    pub tile: RasterTile<f32>,
    pub band_names: Vec<String>,
}

fn band_metadata_xml(names: &[String]) -> String {
    let mut xml = String::from("<GDALMetadata>\n");
    for (i, n) in names.iter().enumerate() {
        xml.push_str(&format!(
            "  <Item name=\"DESCRIPTION\" sample=\"{i}\" role=\"description\">{n}</Item>\n"
        ));
    }
    xml.push_str("</GDALMetadata>");
    xml
}

fn parse_band_metadata(xml: &str, bands: usize) -> Vec<String> {
    let mut names = vec![String::new(); bands];
    for item in xml.split("<Item ").skip(1) {
        if !item.contains("role=\"description\"") {
            continue;
        }
        let sample = item
            .split("sample=\"")
            .nth(1)
            .and_then(|s| s.split('"').next())
            .and_then(|s| s.parse::<usize>().ok());
        let body = item
            .split_once('>')
            .and_then(|(_, rest)| rest.split("</Item>").next());
        if let (Some(i), Some(body)) = (sample, body) {
            if i < bands {
                names[i] = body.trim().to_string();
            }
        }
    }
    names
}

/// Writes `tile` to `path`. `band_names` may be empty; otherwise it must have one name per band.
pub fn write_geotiff(path: &Path, tile: &RasterTile<f32>, band_names: &[String]) -> Result<()> {
    if !band_names.is_empty() && band_names.len() != tile.bands() {
        return Err(Error::shape(
            format!("{} band names", tile.bands()),
            band_names.len(),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, tile, band_names).map_err(|e| Error::geotiff(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode<W: Write + Seek>(
    w: &mut W,
    tile: &RasterTile<f32>,
    band_names: &[String],
) -> tiff::TiffResult<()> {
    let (bands, width, height) = (tile.bands(), tile.width(), tile.height());
    let n = tile.pixels();
    let mut enc = TiffEncoder::new(w)?;
    let mut dir = enc.image_directory()?;

    let mut offsets = Vec::new();
    let mut counts = Vec::new();
    let mut strip = Vec::with_capacity(ROWS_PER_STRIP * width * bands);
    for row0 in (0..height).step_by(ROWS_PER_STRIP) {
        strip.clear();
        for y in row0..(row0 + ROWS_PER_STRIP).min(height) {
            for x in 0..width {
                let p = y * width + x;
                strip.extend((0..bands).map(|b| tile.as_slice()[b * n + p]));
            }
        }
        offsets.push(dir.write_data(&strip[..])? as u32);
        counts.push((strip.len() * 4) as u32);
    }

    dir.write_tag(Tag::ImageWidth, width as u32)?;
    dir.write_tag(Tag::ImageLength, height as u32)?;
    dir.write_tag(Tag::BitsPerSample, &vec![32u16; bands][..])?;
    dir.write_tag(Tag::Compression, 1u16)?;
    dir.write_tag(Tag::PhotometricInterpretation, PhotometricInterpretation::BlackIsZero)?;
    dir.write_tag(Tag::StripOffsets, &offsets[..])?;
    dir.write_tag(Tag::SamplesPerPixel, bands as u16)?;
    dir.write_tag(Tag::RowsPerStrip, ROWS_PER_STRIP as u32)?;
    dir.write_tag(Tag::StripByteCounts, &counts[..])?;
    dir.write_tag(Tag::PlanarConfiguration, PlanarConfiguration::Chunky)?;
    if bands > 1 {
        // unspecified extra samples
        dir.write_tag(Tag::ExtraSamples, &vec![0u16; bands - 1][..])?;
    }
    dir.write_tag(Tag::SampleFormat, &vec![SampleFormat::IEEEFP; bands][..])?;

    let g = &tile.georef;
    dir.write_tag(
        Tag::ModelPixelScaleTag,
        &[g.resolution_m, g.resolution_m, 0.0][..],
    )?;
    dir.write_tag(
        Tag::ModelTiepointTag,
        &[0.0, 0.0, 0.0, g.origin_e, g.origin_n, 0.0][..],
    )?;
    // GTModelType = projected, GTRasterType = PixelIsArea, ProjectedCSType = EPSG code
    let keys: [u16; 16] = [1, 1, 0, 3, 1024, 0, 1, 1, 1025, 0, 1, 1, 3072, 0, 1, g.epsg];
    dir.write_tag(Tag::GeoKeyDirectoryTag, &keys[..])?;
    if !band_names.is_empty() {
        dir.write_tag(Tag::Unknown(GDAL_METADATA), band_metadata_xml(band_names).as_str())?;
    }
    if let Some(nd) = tile.nodata {
        dir.write_tag(Tag::GdalNodata, nd.to_string().as_str())?;
    }
    dir.finish()
}

fn to_f32(result: DecodingResult) -> Option<Vec<f32>> {
    Some(match result {
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => return None,
    })
}

pub fn read_geotiff(path: &Path) -> Result<GeoRaster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(BufReader::new(file)).map_err(|e| match e {
        DecodeError::Tiff(t) => Error::geotiff(path, t),
        DecodeError::Msg(m) => Error::geotiff(path, m),
    })
}

enum DecodeError {
    Tiff(tiff::TiffError),
    Msg(String),
}

impl From<tiff::TiffError> for DecodeError {
    fn from(e: tiff::TiffError) -> Self {
        DecodeError::Tiff(e)
    }
}

fn decode<R: std::io::Read + Seek>(r: R) -> std::result::Result<GeoRaster, DecodeError> {
    let mut dec = Decoder::new(r)?.with_limits(Limits::unlimited());
    let (width, height) = dec.dimensions()?;
    let (width, height) = (width as usize, height as usize);
    let bands = dec
        .find_tag_unsigned::<u16>(Tag::SamplesPerPixel)?
        .unwrap_or(1) as usize;
    let planar = dec
        .find_tag_unsigned::<u16>(Tag::PlanarConfiguration)?
        .unwrap_or(1)
        == 2;

    let mut buf = DecodingResult::F32(Vec::new());
    dec.read_image_to_buffer(&mut buf)?;
    let raw = to_f32(buf).ok_or_else(|| DecodeError::Msg("unsupported sample type".into()))?;
    let n = width * height;
    if raw.len() != n * bands {
        return Err(DecodeError::Msg(format!(
            "decoded {} samples, expected {}",
            raw.len(),
            n * bands
        )));
    }
    let data = if planar || bands == 1 {
        raw
    } else {
        let mut out = vec![0f32; n * bands];
        for p in 0..n {
            for b in 0..bands {
                out[b * n + p] = raw[p * bands + b];
            }
        }
        out
    };

    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)?
        .map(|v| v.into_f64_vec())
        .transpose()?;
    let tie = dec
        .find_tag(Tag::ModelTiepointTag)?
        .map(|v| v.into_f64_vec())
        .transpose()?;
    let (resolution_m, origin_e, origin_n) = match (scale, tie) {
        (Some(s), Some(t)) if s.len() >= 2 && t.len() >= 6 => {
            if (s[0] - s[1]).abs() > 1e-9 {
                return Err(DecodeError::Msg(format!(
                    "non-square pixels {} x {}",
                    s[0], s[1]
                )));
            }
            (s[0], t[3] - t[0] * s[0], t[4] + t[1] * s[1])
        }
        _ => return Err(DecodeError::Msg("missing georeferencing tags".into())),
    };
    let epsg = dec
        .find_tag(Tag::GeoKeyDirectoryTag)?
        .map(|v| v.into_u16_vec())
        .transpose()?
        .and_then(|keys| {
            keys.chunks(4)
                .skip(1)
                .find(|k| k.len() == 4 && (k[0] == 3072 || k[0] == 2048) && k[1] == 0)
                .map(|k| k[3])
        })
        .unwrap_or(0);
    let nodata = match dec.find_tag(Tag::GdalNodata)? {
        Some(v) => v.into_string()?.trim_matches(char::from(0)).trim().parse::<f32>().ok(),
        None => None,
    };
    let band_names = match dec.find_tag(Tag::Unknown(GDAL_METADATA))? {
        Some(v) => parse_band_metadata(&v.into_string()?, bands),
        None => vec![String::new(); bands],
    };

    let georef = Georef {
        origin_e,
        origin_n,
        resolution_m,
        epsg,
    };
    let mut tile = RasterTile::new(bands, width, height, data, georef)
        .map_err(|e| DecodeError::Msg(e.to_string()))?;
    tile.nodata = nodata;
    Ok(GeoRaster { tile, band_names })
}
