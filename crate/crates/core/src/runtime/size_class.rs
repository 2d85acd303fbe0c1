pub const PAGE_SIZE: u64 = 4096;

pub const SMALL_CLASSES: [u64; 13] = [8, 16, 32, 48, 64, 96, 128, 192, 256, 512, 1024, 2048, 4096];

/// Class code stored in the page map for page-multiple classes; their exact
/// size lives in the span table.
pub const LARGE_CODE: u8 = 0xFF;

/// Smallest class holding `n` bytes. Zero rounds up to the smallest class;
/// anything above one page rounds up to a whole number of pages.
pub fn size_class(n: u64) -> u64 {
    match SMALL_CLASSES.iter().find(|&&c| c >= n) {
        Some(&c) => c,
        None => n.div_ceil(PAGE_SIZE).saturating_mul(PAGE_SIZE),
    }
}

/// Object size an `alloc n` request receives: one extra byte is reserved so
/// that the past-the-end pointer still lands inside the object.
pub fn alloc_class(n: u64) -> u64 {
    size_class(n.saturating_add(1))
}

pub fn class_code(class: u64) -> u8 {
    SMALL_CLASSES
        .iter()
        .position(|&c| c == class)
        .map_or(LARGE_CODE, |i| i as u8)
}

/// Pages per span: the fewest whole pages that a class divides evenly.
pub fn span_pages(class: u64) -> u64 {
    if class >= PAGE_SIZE {
        return class.div_ceil(PAGE_SIZE);
    }
    (1..=class)
        .find(|p| (p * PAGE_SIZE).is_multiple_of(class))
        .unwrap_or(class)
}
