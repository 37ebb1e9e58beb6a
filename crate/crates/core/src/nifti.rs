//! Single-file NIfTI-1 reading and writing.
//!
//! Supported subset: 3D volumes (`dim[0] == 3`) with datatype codes 2
//! (uint8), 4 (int16), 512 (uint16) and 16 (float32), either byte order,
//! optionally gzip-compressed. Orientation matrices are only checked for
//! being axis-aligned without axis permutation; anything else is rejected
//! because this crate never reorients data. Stored values are returned raw
//! (`scl_slope`/`scl_inter` are not applied).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{voxel_count, ValueKind, Volume, VoxelData};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag of a single-file `.nii`.
pub const SINGLE_FILE_OFFSET: usize = 352;

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// Header fields this crate reads or writes, with their byte offsets and
/// widths. Exposed so tests can build byte-swapped fixtures.
pub const HEADER_FIELDS: &[(&str, usize, usize, usize)] = &[
    // (name, offset, element width, element count)
    ("sizeof_hdr", 0, 4, 1),
    ("extents", 32, 4, 1),
    ("session_error", 36, 2, 1),
    ("dim", 40, 2, 8),
    ("intent_p", 56, 4, 3),
    ("intent_code", 68, 2, 1),
    ("datatype", 70, 2, 1),
    ("bitpix", 72, 2, 1),
    ("slice_start", 74, 2, 1),
    ("pixdim", 76, 4, 8),
    ("vox_offset", 108, 4, 1),
    ("scl_slope", 112, 4, 1),
    ("scl_inter", 116, 4, 1),
    ("slice_end", 120, 2, 1),
    ("cal_max", 124, 4, 1),
    ("cal_min", 128, 4, 1),
    ("slice_duration", 132, 4, 1),
    ("toffset", 136, 4, 1),
    ("glmax", 140, 4, 1),
    ("glmin", 144, 4, 1),
    ("qform_code", 252, 2, 1),
    ("sform_code", 254, 2, 1),
    ("quatern", 256, 4, 6),
    ("srow", 280, 4, 12),
];

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn has_gz_extension(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_gzip(&raw) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Decoded header values needed to interpret the data block.
#[derive(Clone, Debug)]
struct Header {
    endian: Endianness,
    kind: ValueKind,
    shape: [usize; 3],
    spacing: [f64; 3],
    vox_offset: usize,
    single_file: bool,
}

struct Fields<'a> {
    bytes: &'a [u8],
    endian: Endianness,
}

impl Fields<'_> {
    fn i16(&self, off: usize) -> i16 {
        match self.endian {
            Endianness::Little => LittleEndian::read_i16(&self.bytes[off..]),
            Endianness::Big => BigEndian::read_i16(&self.bytes[off..]),
        }
    }

    fn f32(&self, off: usize) -> f32 {
        match self.endian {
            Endianness::Little => LittleEndian::read_f32(&self.bytes[off..]),
            Endianness::Big => BigEndian::read_f32(&self.bytes[off..]),
        }
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "{} bytes, a NIfTI-1 header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let endian = if LittleEndian::read_i32(bytes) == HEADER_SIZE as i32 {
        Endianness::Little
    } else if BigEndian::read_i32(bytes) == HEADER_SIZE as i32 {
        Endianness::Big
    } else {
        return Err(Error::MalformedHeader(format!(
            "sizeof_hdr is {} (expected 348 in either byte order)",
            LittleEndian::read_i32(bytes)
        )));
    };
    let magic = &bytes[344..348];
    let single_file = if magic == MAGIC_SINGLE {
        true
    } else if magic == MAGIC_PAIR {
        false
    } else {
        return Err(Error::MalformedHeader(format!(
            "magic {:?} is neither \"n+1\\0\" nor \"ni1\\0\"",
            String::from_utf8_lossy(magic)
        )));
    };
    let f = Fields { bytes, endian };

    let ndim = f.i16(40);
    if ndim != 3 {
        return Err(Error::UnsupportedDimensionality(ndim));
    }
    let mut dims = [0usize; 3];
    for (axis, d) in dims.iter_mut().enumerate() {
        let v = f.i16(42 + 2 * axis);
        if v < 1 {
            return Err(Error::MalformedHeader(format!("dim[{}] = {v}", axis + 1)));
        }
        *d = v as usize;
    }
    let code = f.i16(70);
    let kind = ValueKind::from_nifti_code(code).ok_or(Error::UnsupportedDatatype(code))?;
    let bitpix = f.i16(72);
    if bitpix as usize != 8 * kind.bytes_per_voxel() {
        return Err(Error::MalformedHeader(format!(
            "bitpix {bitpix} does not match datatype {code}"
        )));
    }

    let mut pix = [0f64; 3];
    for (axis, p) in pix.iter_mut().enumerate() {
        let v = f.f32(80 + 4 * axis) as f64;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::MalformedHeader(format!("pixdim[{}] = {v}", axis + 1)));
        }
        *p = v;
    }

    let vox_offset = f.f32(108);
    let vox_offset = if single_file {
        if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32)
            || vox_offset.fract() != 0.0
        {
            return Err(Error::MalformedHeader(format!("vox_offset {vox_offset}")));
        }
        vox_offset as usize
    } else {
        if !(vox_offset.is_finite() && vox_offset >= 0.0) || vox_offset.fract() != 0.0 {
            return Err(Error::MalformedHeader(format!("vox_offset {vox_offset}")));
        }
        vox_offset as usize
    };

    check_orientation(&f)?;

    Ok(Header {
        endian,
        kind,
        // NIfTI dim[1..3] are (x, y, z)
        shape: [dims[2], dims[1], dims[0]],
        spacing: [pix[2], pix[1], pix[0]],
        vox_offset,
        single_file,
    })
}

fn off_diagonal_ok(m: [[f64; 3]; 3]) -> bool {
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    (0..3).all(|r| {
        (0..3).all(|c| r == c || m[r][c].abs() <= 1e-4 * scale) && m[r][r].abs() > 1e-4 * scale
    })
}

fn check_orientation(f: &Fields<'_>) -> Result<()> {
    let qform_code = f.i16(252);
    let sform_code = f.i16(254);
    if sform_code > 0 {
        let mut m = [[0f64; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f.f32(280 + 16 * r + 4 * c) as f64;
            }
        }
        if !off_diagonal_ok(m) {
            return Err(Error::NonCanonicalOrientation(format!(
                "sform rotation {m:?} is not axis-aligned"
            )));
        }
    }
    if qform_code > 0 {
        let b = f.f32(256) as f64;
        let c = f.f32(260) as f64;
        let d = f.f32(264) as f64;
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let m = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        if !off_diagonal_ok(m) {
            return Err(Error::NonCanonicalOrientation(format!(
                "qform quaternion ({b}, {c}, {d}) is not axis-aligned"
            )));
        }
    }
    Ok(())
}

fn decode(bytes: &[u8], kind: ValueKind, endian: Endianness, n: usize) -> VoxelData {
    macro_rules! decode_with {
        ($read:ident, $ty:ty, $width:expr) => {{
            let mut out = vec![<$ty>::default(); n];
            match endian {
                Endianness::Little => {
                    for (i, v) in out.iter_mut().enumerate() {
                        *v = LittleEndian::$read(&bytes[i * $width..]);
                    }
                }
                Endianness::Big => {
                    for (i, v) in out.iter_mut().enumerate() {
                        *v = BigEndian::$read(&bytes[i * $width..]);
                    }
                }
            }
            out
        }};
    }
    match kind {
        ValueKind::U8 => VoxelData::U8(bytes[..n].to_vec()),
        ValueKind::I16 => VoxelData::I16(decode_with!(read_i16, i16, 2)),
        ValueKind::U16 => VoxelData::U16(decode_with!(read_u16, u16, 2)),
        ValueKind::F32 => VoxelData::F32(decode_with!(read_f32, f32, 4)),
    }
}

/// Parse an in-memory single-file NIfTI-1 image (already decompressed).
pub fn parse_volume(bytes: &[u8]) -> Result<Volume> {
    let header = parse_header(bytes)?;
    if !header.single_file {
        return Err(Error::MalformedHeader(
            "header declares a separate .img file".into(),
        ));
    }
    volume_from_data(&header, &bytes[header.vox_offset.min(bytes.len())..])
}

fn volume_from_data(header: &Header, data: &[u8]) -> Result<Volume> {
    let n = voxel_count(header.shape);
    let expected = n * header.kind.bytes_per_voxel();
    if data.len() < expected {
        return Err(Error::TruncatedData {
            expected,
            found: data.len(),
        });
    }
    let values = decode(&data[..expected], header.kind, header.endian, n);
    Volume::new(header.shape, header.spacing, values)
}

fn companion_image(path: &Path) -> Option<PathBuf> {
    let name = path.file_name()?.to_str()?;
    let (stem, gz) = match name.strip_suffix(".gz") {
        Some(s) => (s, true),
        None => (name, false),
    };
    let stem = stem.strip_suffix(".hdr")?;
    let plain = path.with_file_name(format!("{stem}.img"));
    let zipped = path.with_file_name(format!("{stem}.img.gz"));
    if gz && zipped.exists() {
        Some(zipped)
    } else if plain.exists() {
        Some(plain)
    } else {
        Some(zipped)
    }
}

/// Read a NIfTI-1 volume from `.nii`, `.nii.gz`, or a `.hdr`/`.img` pair.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let header = parse_header(&bytes)?;
    if header.single_file {
        let start = header.vox_offset.min(bytes.len());
        volume_from_data(&header, &bytes[start..])
    } else {
        let image = companion_image(path).ok_or_else(|| {
            Error::MalformedHeader(format!(
                "{} declares a separate image file but is not a .hdr",
                path.display()
            ))
        })?;
        let data = read_maybe_gz(&image)?;
        let start = header.vox_offset.min(data.len());
        volume_from_data(&header, &data[start..])
    }
}

/// Encode a volume as single-file NIfTI-1 bytes (uncompressed).
pub fn encode_volume(volume: &Volume, endian: Endianness) -> Vec<u8> {
    let kind = volume.kind();
    let n = voxel_count(volume.shape());
    let mut buf = vec![0u8; SINGLE_FILE_OFFSET + n * kind.bytes_per_voxel()];

    fn put_i16(buf: &mut [u8], off: usize, v: i16, e: Endianness) {
        match e {
            Endianness::Little => LittleEndian::write_i16(&mut buf[off..], v),
            Endianness::Big => BigEndian::write_i16(&mut buf[off..], v),
        }
    }
    fn put_i32(buf: &mut [u8], off: usize, v: i32, e: Endianness) {
        match e {
            Endianness::Little => LittleEndian::write_i32(&mut buf[off..], v),
            Endianness::Big => BigEndian::write_i32(&mut buf[off..], v),
        }
    }
    fn put_f32(buf: &mut [u8], off: usize, v: f32, e: Endianness) {
        match e {
            Endianness::Little => LittleEndian::write_f32(&mut buf[off..], v),
            Endianness::Big => BigEndian::write_f32(&mut buf[off..], v),
        }
    }

    let [nz, ny, nx] = volume.shape();
    let [sz, sy, sx] = volume.spacing();
    put_i32(&mut buf, 0, HEADER_SIZE as i32, endian);
    put_i16(&mut buf, 40, 3, endian);
    put_i16(&mut buf, 42, nx as i16, endian);
    put_i16(&mut buf, 44, ny as i16, endian);
    put_i16(&mut buf, 46, nz as i16, endian);
    for axis in 4..8 {
        put_i16(&mut buf, 40 + 2 * axis, 1, endian);
    }
    put_i16(&mut buf, 70, kind.nifti_code(), endian);
    put_i16(&mut buf, 72, (8 * kind.bytes_per_voxel()) as i16, endian);
    put_f32(&mut buf, 76, 1.0, endian);
    put_f32(&mut buf, 80, sx as f32, endian);
    put_f32(&mut buf, 84, sy as f32, endian);
    put_f32(&mut buf, 88, sz as f32, endian);
    for i in 4..8 {
        put_f32(&mut buf, 76 + 4 * i, 1.0, endian);
    }
    put_f32(&mut buf, 108, SINGLE_FILE_OFFSET as f32, endian);
    put_f32(&mut buf, 112, 1.0, endian);
    // xyzt_units: millimeters
    buf[123] = 2;
    // sform: scaled identity, axis-aligned
    put_i16(&mut buf, 254, 1, endian);
    put_f32(&mut buf, 280, sx as f32, endian);
    put_f32(&mut buf, 280 + 16 + 4, sy as f32, endian);
    put_f32(&mut buf, 280 + 32 + 8, sz as f32, endian);
    buf[344..348].copy_from_slice(MAGIC_SINGLE);

    let data = &mut buf[SINGLE_FILE_OFFSET..];
    match volume.data() {
        VoxelData::U8(v) => data.copy_from_slice(v),
        VoxelData::I16(v) => match endian {
            Endianness::Little => LittleEndian::write_i16_into(v, data),
            Endianness::Big => BigEndian::write_i16_into(v, data),
        },
        VoxelData::U16(v) => match endian {
            Endianness::Little => LittleEndian::write_u16_into(v, data),
            Endianness::Big => BigEndian::write_u16_into(v, data),
        },
        VoxelData::F32(v) => match endian {
            Endianness::Little => LittleEndian::write_f32_into(v, data),
            Endianness::Big => BigEndian::write_f32_into(v, data),
        },
    }
    buf
}

/// Write a single-file NIfTI-1 volume; gzip-compressed when the path ends
/// in `.gz`.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_volume_with(volume, path, Endianness::Little)
}

pub fn write_volume_with(volume: &Volume, path: impl AsRef<Path>, endian: Endianness) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(volume, endian);
    let payload = if has_gz_extension(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Volume {
        Volume::new([2, 2, 2], [1.0, 1.0, 1.0], VoxelData::U8((0..8).collect())).unwrap()
    }

    #[test]
    fn single_voxel_file_size() {
        let v = Volume::new([1, 1, 1], [1.0; 3], VoxelData::U8(vec![7])).unwrap();
        let bytes = encode_volume(&v, Endianness::Little);
        assert_eq!(bytes.len(), 353);
        assert_eq!(bytes[352], 7);
    }

    #[test]
    fn bad_magic_is_malformed() {
        let mut bytes = encode_volume(&small(), Endianness::Little);
        bytes[344..348].copy_from_slice(b"XXXX");
        assert!(matches!(parse_volume(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn bad_sizeof_hdr_is_malformed() {
        let mut bytes = encode_volume(&small(), Endianness::Little);
        bytes[0] = 0;
        assert!(matches!(parse_volume(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn rejects_unsupported_datatype_and_dims() {
        let mut bytes = encode_volume(&small(), Endianness::Little);
        LittleEndian::write_i16(&mut bytes[70..], 64);
        assert!(matches!(parse_volume(&bytes), Err(Error::UnsupportedDatatype(64))));

        let mut bytes = encode_volume(&small(), Endianness::Little);
        LittleEndian::write_i16(&mut bytes[40..], 4);
        assert!(matches!(
            parse_volume(&bytes),
            Err(Error::UnsupportedDimensionality(4))
        ));
    }

    #[test]
    fn truncated_data() {
        let bytes = encode_volume(&small(), Endianness::Little);
        let err = parse_volume(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::TruncatedData { expected: 8, found: 7 }));
    }

    #[test]
    fn rejects_rotated_sform() {
        let mut bytes = encode_volume(&small(), Endianness::Little);
        // swap x and y rows of the sform
        LittleEndian::write_f32(&mut bytes[280..], 0.0);
        LittleEndian::write_f32(&mut bytes[284..], 1.0);
        LittleEndian::write_f32(&mut bytes[296..], 1.0);
        LittleEndian::write_f32(&mut bytes[300..], 0.0);
        assert!(matches!(
            parse_volume(&bytes),
            Err(Error::NonCanonicalOrientation(_))
        ));
    }

    #[test]
    fn honors_vox_offset() {
        let bytes = encode_volume(&small(), Endianness::Little);
        let mut shifted = bytes[..SINGLE_FILE_OFFSET].to_vec();
        LittleEndian::write_f32(&mut shifted[108..], 400.0);
        shifted.resize(400, 0);
        shifted.extend_from_slice(&bytes[SINGLE_FILE_OFFSET..]);
        assert_eq!(parse_volume(&shifted).unwrap(), small());
    }

    #[test]
    fn big_endian_writer_round_trips() {
        let v = Volume::new(
            [1, 2, 3],
            [5.0, 0.4, 0.4],
            VoxelData::I16(vec![-3, 0, 1, 300, -32768, 32767]),
        )
        .unwrap();
        let bytes = encode_volume(&v, Endianness::Big);
        assert_eq!(&bytes[0..4], &[0, 0, 1, 92]);
        let back = parse_volume(&bytes).unwrap();
        assert_eq!(back.data(), v.data());
        assert_eq!(back.shape(), v.shape());
    }
}
