use std::collections::VecDeque;

/// Labels the connected components of a binary `D × H × W` volume under
/// 26-connectivity (8-connectivity when `D = 1`).
///
/// Returns one label per voxel (`None` for background) and the number of
/// components. Labels are assigned in scan order.
pub fn label_components(mask: &[bool], (depth, height, width): (usize, usize, usize)) -> (Vec<Option<usize>>, usize) {
    assert_eq!(mask.len(), depth * height * width, "mask length does not match dims");
    let mut labels = vec![None; mask.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    let index = |d: usize, h: usize, w: usize| (d * height + h) * width + w;
    for start in 0..mask.len() {
        if !mask[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(count);
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            let (d, h, w) = (v / (height * width), (v / width) % height, v % width);
            for dd in d.saturating_sub(1)..=(d + 1).min(depth - 1) {
                for hh in h.saturating_sub(1)..=(h + 1).min(height - 1) {
                    for ww in w.saturating_sub(1)..=(w + 1).min(width - 1) {
                        let u = index(dd, hh, ww);
                        if mask[u] && labels[u].is_none() {
                            labels[u] = Some(count);
                            queue.push_back(u);
                        }
                    }
                }
            }
        }
        count += 1;
    }
    (labels, count)
}
