use std::path::Path;

use dekan_data::*;
use image::{GrayImage, Luma, Rgb, RgbImage};

fn pair(id: &str, w: u32, h: u32) -> SamplePair {
    let image = RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, 9]));
    let mask = GrayImage::from_fn(w, h, |x, _| Luma([if x % 2 == 0 { 255 } else { 0 }]));
    SamplePair::new(id, image, mask).unwrap()
}

fn layout(root: &Path) {
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(root.join(sub)).unwrap();
    }
}

#[test]
fn write_then_load_round_trips_in_id_order() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = vec![pair("b", 5, 4), pair("a", 3, 6), pair("c", 2, 2)];
    write_dataset(dir.path(), &pairs).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    let ids: Vec<&str> = loaded.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert_eq!(loaded[0], pairs[1]);
    assert_eq!(loaded, load_dataset(dir.path()).unwrap());
}

#[test]
fn missing_root_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_dataset(&dir.path().join("nothing"))
        .unwrap()
        .is_empty());
}

#[test]
fn orphans_are_listed_on_both_sides() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &[pair("ok", 2, 2)]).unwrap();
    RgbImage::new(2, 2)
        .save(dir.path().join("images/lonely.png"))
        .unwrap();
    GrayImage::new(2, 2)
        .save(dir.path().join("masks/stray.png"))
        .unwrap();
    match load_dataset(dir.path()).unwrap_err() {
        DataError::Orphans {
            images_without_masks,
            masks_without_images,
        } => {
            assert_eq!(images_without_masks, ["lonely"]);
            assert_eq!(masks_without_images, ["stray"]);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn dimension_mismatch_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    RgbImage::new(4, 3)
        .save(dir.path().join("images/x.png"))
        .unwrap();
    GrayImage::new(3, 4)
        .save(dir.path().join("masks/x.png"))
        .unwrap();
    match load_dataset(dir.path()).unwrap_err() {
        DataError::DimensionMismatch { id, image, mask } => {
            assert_eq!((id.as_str(), image, mask), ("x", (4, 3), (3, 4)));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(SamplePair::new("y", RgbImage::new(2, 2), GrayImage::new(2, 3)).is_err());
}

#[test]
fn masks_are_binarised_on_load() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    RgbImage::new(4, 1)
        .save(dir.path().join("images/g.png"))
        .unwrap();
    GrayImage::from_raw(4, 1, vec![0, 127, 128, 200])
        .unwrap()
        .save(dir.path().join("masks/g.png"))
        .unwrap();
    let p = &load_dataset(dir.path()).unwrap()[0];
    assert_eq!(p.mask.as_raw(), &[0, 0, 255, 255]);
}

#[test]
fn undecodable_png_is_an_image_error() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path());
    std::fs::write(dir.path().join("images/bad.png"), b"not a png").unwrap();
    GrayImage::new(2, 2)
        .save(dir.path().join("masks/bad.png"))
        .unwrap();
    assert!(matches!(
        load_dataset(dir.path()),
        Err(DataError::Image { .. })
    ));
}

#[test]
fn split_examples() {
    let many: Vec<SamplePair> = (0..10).map(|i| pair(&format!("s{i}"), 2, 2)).collect();
    let (train, val) = split_dataset(many.clone(), 0.8, 1).unwrap();
    assert_eq!((train.len(), val.len()), (8, 2));
    let (train2, val2) = split_dataset(many.clone(), 0.8, 1).unwrap();
    assert_eq!((train, val), (train2, val2));

    let (a, b) = split_dataset(many[..2].to_vec(), 0.5, 0).unwrap();
    assert_eq!((a.len(), b.len()), (1, 1));
    let (a, b) = split_dataset(many[..3].to_vec(), 0.99, 0).unwrap();
    assert_eq!((a.len(), b.len()), (2, 1));

    assert!(matches!(
        split_dataset(many[..1].to_vec(), 0.8, 0),
        Err(DataError::Split(_))
    ));
    assert!(matches!(
        split_dataset(many.clone(), 1.0, 0),
        Err(DataError::Split(_))
    ));
}
