use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{derived_rng, Stream};

/// Per class, `floor(ratio * n)` samples go to training and the rest to
/// testing. Indices refer into `labels`; within each class they are
/// shuffled by `seed`, and the returned lists are grouped by class in
/// ascending class order. Classes with no samples are skipped; a class with
/// exactly one sample is an error.
pub fn stratified_split(labels: &[usize], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("split ratio {ratio} outside [0, 1]")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        match members.len() {
            0 => continue,
            1 => {
                return Err(Error::Precondition(format!(
                    "class index {class} has a single sample; stratified splitting needs at least 2"
                )))
            }
            _ => {}
        }
        members.shuffle(&mut derived_rng(seed, Stream::Split, class as u64, 0));
        // The epsilon keeps e.g. 0.7 * 10 from flooring to 6.
        let k = ((ratio * members.len() as f64) + 1e-9).floor() as usize;
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    Ok((train, test))
}
