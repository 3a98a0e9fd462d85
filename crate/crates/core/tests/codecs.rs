use dkt_core::disparity::DisparityMap;
use dkt_core::image::GrayImage;
use dkt_core::io::kitti::{decode_kitti_png, encode_kitti_png, quantize, read_kitti_png, write_kitti_png};
use dkt_core::io::pfm::{decode_pfm, encode_pfm, parse_pfm_header, read_pfm, write_pfm};
use dkt_core::io::pnm::{decode_pgm, encode_pgm};
use dkt_core::io::{read_disparity, write_disparity};
use dkt_core::Error;
use proptest::prelude::*;

fn f32_map() -> impl Strategy<Value = DisparityMap> {
    (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::option::weighted(0.8, any::<f32>().prop_filter("finite", |v| v.is_finite())), w * h)
            .prop_map(move |px| {
                let px: Vec<Option<f64>> = px.into_iter().map(|v| v.map(f64::from)).collect();
                DisparityMap::from_options(w, h, &px).unwrap()
            })
    })
}

fn kitti_map() -> impl Strategy<Value = DisparityMap> {
    (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::option::weighted(0.7, 0.0f64..255.9), w * h)
            .prop_map(move |px| DisparityMap::from_options(w, h, &px).unwrap())
    })
}

proptest! {
    #[test]
    fn pfm_round_trip(map in f32_map()) {
        let back = decode_pfm(&encode_pfm(&map)).unwrap();
        prop_assert_eq!(back.mask(), map.mask());
        for i in 0..map.len() {
            if let Some(v) = map.value(i) {
                prop_assert_eq!(back.value(i).unwrap().to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn kitti_round_trip(map in kitti_map()) {
        let back = decode_kitti_png(&encode_kitti_png(&map).unwrap()).unwrap();
        prop_assert_eq!(back.mask(), map.mask());
        for i in 0..map.len() {
            if let Some(v) = map.value(i) {
                prop_assert!((back.value(i).unwrap() - v).abs() <= 1.0 / 256.0);
            }
        }
    }

    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let data: Vec<u8> = (0..w * h).map(|i| (seed.rotate_left(i as u32 % 64) % 256) as u8).collect();
        let img = GrayImage::new(w, h, data).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_pfm(&bytes);
        let _ = decode_kitti_png(&bytes);
        let _ = decode_pgm(&bytes);
    }

    #[test]
    fn mutated_pfm_never_panics(map in f32_map(), at in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let mut bytes = encode_pfm(&map);
        let i = at.index(bytes.len());
        bytes[i] = byte;
        let _ = decode_pfm(&bytes);
        bytes.truncate(i);
        prop_assert!(decode_pfm(&bytes).is_err());
    }
}

#[test]
fn pfm_fixture_and_header() {
    let bytes = encode_pfm(&DisparityMap::dense(1, 1, vec![3.5]).unwrap());
    assert_eq!(bytes, b"Pf\n1 1\n-1.0\n\x00\x00\x60\x40");
    let (header, offset) = parse_pfm_header(&bytes).unwrap();
    assert_eq!((header.width, header.height, header.scale), (1, 1, -1.0));
    assert!(header.little_endian());
    assert_eq!(offset, bytes.len() - 4);
}

#[test]
fn pfm_rows_are_bottom_up() {
    let map = DisparityMap::dense(1, 2, vec![1.0, 2.0]).unwrap();
    let bytes = encode_pfm(&map);
    let payload = &bytes[bytes.len() - 8..];
    assert_eq!(&payload[..4], &2f32.to_le_bytes());
    assert_eq!(&payload[4..], &1f32.to_le_bytes());
}

#[test]
fn big_endian_pfm() {
    let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
    bytes.extend_from_slice(&1.25f32.to_be_bytes());
    bytes.extend_from_slice(&f32::NAN.to_be_bytes());
    let map = decode_pfm(&bytes).unwrap();
    assert_eq!(map.value(0), Some(1.25));
    assert_eq!(map.value(1), None);
}

#[test]
fn pfm_errors_carry_offsets() {
    assert!(matches!(decode_pfm(b"PF\n1 1\n-1\n"), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(decode_pfm(b"Pf\n1 1\n0\n\0\0\0\0"), Err(Error::Format { .. })));
    match decode_pfm(b"Pf\n2 2\n-1.0\n\0\0\0\0") {
        Err(Error::Format { offset, .. }) => assert!(offset > 0),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn kitti_examples() {
    assert_eq!(quantize(1.0), 256);
    assert_eq!(quantize(0.0), 1);
    assert_eq!(quantize(1e9), 65535);
    let map = DisparityMap::from_options(2, 1, &[Some(1.0), None]).unwrap();
    let back = decode_kitti_png(&encode_kitti_png(&map).unwrap()).unwrap();
    assert_eq!(back.value(0), Some(1.0));
    assert_eq!(back.value(1), None);
}

#[test]
fn eight_bit_png_is_rejected() {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, 1, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[7]).unwrap();
    }
    assert!(matches!(decode_kitti_png(&buf), Err(Error::Format { .. })));
}

#[test]
fn file_round_trips_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let map = DisparityMap::from_options(3, 2, &[Some(1.5), None, Some(7.25), Some(0.5), Some(100.0), None]).unwrap();
    write_pfm(&map, dir.path().join("a.pfm")).unwrap();
    assert_eq!(read_pfm(dir.path().join("a.pfm")).unwrap(), map);
    write_kitti_png(&map, dir.path().join("a.png")).unwrap();
    assert_eq!(read_kitti_png(dir.path().join("a.png")).unwrap(), map);
    write_disparity(&map, dir.path().join("b.pfm")).unwrap();
    assert_eq!(read_disparity(dir.path().join("b.pfm")).unwrap(), map);
    assert!(write_disparity(&map, dir.path().join("b.tiff")).is_err());
    assert!(matches!(read_pfm(dir.path().join("missing.pfm")), Err(Error::Io { .. })));
}
