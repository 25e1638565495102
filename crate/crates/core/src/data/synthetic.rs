//! Desk-scale stand-in for real video features: every video belongs to a
//! theme (subject, action, object); its visual and semantic vectors are
//! noisy indicator blocks of that theme and its captions are template
//! variants drawn from the theme's synonyms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Manifest, ManifestRecord, RawRecord, Splits};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub name: String,
    /// Total number of videos; the training split gets what is left after
    /// validation and test.
    pub videos: usize,
    pub validation: usize,
    pub test: usize,
    pub themes: usize,
    pub n_v: usize,
    pub n_s: usize,
    pub annotations_per_video: usize,
    /// Mixing weight of uniform noise into the indicator features, in [0, 1].
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            name: "synthetic".into(),
            videos: 30,
            validation: 5,
            test: 5,
            themes: 6,
            n_v: 12,
            n_s: 12,
            annotations_per_video: 8,
            noise: 0.3,
        }
    }
}

struct Theme {
    subjects: &'static [&'static str],
    actions: &'static [&'static str],
    objects: &'static [&'static str],
    places: &'static [&'static str],
}

const THEMES: &[Theme] = &[
    Theme {
        subjects: &["man", "guy"],
        actions: &["playing", "strumming"],
        objects: &["a guitar", "the guitar"],
        places: &["on stage", "in a room"],
    },
    Theme {
        subjects: &["woman", "lady"],
        actions: &["slicing", "cutting", "chopping"],
        objects: &["an onion", "vegetables"],
        places: &["in the kitchen", "on a board"],
    },
    Theme {
        subjects: &["dog", "puppy"],
        actions: &["chasing", "catching"],
        objects: &["a ball", "a frisbee"],
        places: &["in the park", "on the grass"],
    },
    Theme {
        subjects: &["cat", "kitten"],
        actions: &["drinking", "lapping"],
        objects: &["milk", "some water"],
        places: &["from a bowl", "on the floor"],
    },
    Theme {
        subjects: &["boy", "child"],
        actions: &["riding", "pedaling"],
        objects: &["a bicycle", "a bike"],
        places: &["down the street", "on a road"],
    },
    Theme {
        subjects: &["girl", "singer"],
        actions: &["singing", "performing"],
        objects: &["a song", "into a microphone"],
        places: &["on stage", "at a concert"],
    },
    Theme {
        subjects: &["chef", "cook"],
        actions: &["frying", "cooking"],
        objects: &["an egg", "some eggs"],
        places: &["in a pan", "in the kitchen"],
    },
    Theme {
        subjects: &["monkey", "ape"],
        actions: &["eating", "peeling"],
        objects: &["a banana", "fruit"],
        places: &["in a tree", "at the zoo"],
    },
    Theme {
        subjects: &["player", "footballer"],
        actions: &["kicking", "shooting"],
        objects: &["a ball", "the football"],
        places: &["on the field", "into the goal"],
    },
    Theme {
        subjects: &["baby", "toddler"],
        actions: &["holding", "hugging"],
        objects: &["a toy", "a teddy bear"],
        places: &["on a bed", "on the sofa"],
    },
];

const ADJECTIVES: &[&str] = &["young", "small", "happy"];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty word list")
}

fn caption(theme: &Theme, rng: &mut ChaCha8Rng) -> String {
    let s = pick(rng, theme.subjects);
    let a = pick(rng, theme.actions);
    let o = pick(rng, theme.objects);
    match rng.gen_range(0..5) {
        0 => format!("a {s} is {a} {o}"),
        1 => format!("the {s} is {a} {o}"),
        2 => format!("a {} {s} is {a} {o}", pick(rng, ADJECTIVES)),
        3 => format!("a {s} is {a} {o} {}", pick(rng, theme.places)),
        _ => format!("the {} {s} is {a} {o} {}", pick(rng, ADJECTIVES), pick(rng, theme.places)),
    }
}

fn indicator(rng: &mut ChaCha8Rng, dims: usize, themes: usize, theme: usize, noise: f64) -> Vec<f32> {
    let block = dims / themes;
    (0..dims)
        .map(|i| {
            let hot = if i / block == theme && i < block * themes { 1.0 } else { 0.0 };
            let u: f64 = rng.gen();
            ((1.0 - noise) * hot + noise * u) as f32
        })
        .collect()
}

impl SyntheticSpec {
    pub fn train(&self) -> usize {
        self.videos.saturating_sub(self.validation + self.test)
    }

    pub fn validate(&self) -> Result<()> {
        if self.videos == 0 {
            return Err(Error::Config("synthetic dataset needs at least one video".into()));
        }
        if self.validation + self.test > self.videos {
            return Err(Error::Config("validation and test splits exceed the number of videos".into()));
        }
        if self.themes < 2 || self.themes > THEMES.len() {
            return Err(Error::Config(format!("themes must be in 2..={}", THEMES.len())));
        }
        if self.n_v < self.themes || self.n_s < self.themes {
            return Err(Error::Config(format!(
                "n_v ({}) and n_s ({}) must be at least the number of themes ({})",
                self.n_v, self.n_s, self.themes
            )));
        }
        if self.annotations_per_video == 0 {
            return Err(Error::Config("annotations_per_video must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config("noise must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generates a dataset; a pure function of `(spec, seed)`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut themes: Vec<usize> = (0..spec.videos).map(|i| i % spec.themes).collect();
    themes.shuffle(&mut rng);

    let mut records = Vec::with_capacity(spec.videos);
    let mut manifest_records = Vec::with_capacity(spec.videos);
    for (i, &t) in themes.iter().enumerate() {
        let id = format!("video{i:04}");
        let captions: Vec<String> = (0..spec.annotations_per_video)
            .map(|_| caption(&THEMES[t], &mut rng))
            .collect();
        let visual = indicator(&mut rng, spec.n_v, spec.themes, t, spec.noise);
        let semantic = indicator(&mut rng, spec.n_s, spec.themes, t, spec.noise);
        manifest_records.push(ManifestRecord {
            id: id.clone(),
            captions: captions.clone(),
        });
        records.push(RawRecord {
            id,
            visual,
            semantic,
            captions,
        });
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let train = spec.train();
    let splits = Splits {
        train: ids[..train].to_vec(),
        validation: ids[train..train + spec.validation].to_vec(),
        test: ids[train + spec.validation..].to_vec(),
    };
    Ok(Dataset {
        manifest: Manifest {
            name: spec.name.clone(),
            n_v: spec.n_v,
            n_s: spec.n_s,
            features: "features.bin".into(),
            splits,
            records: manifest_records,
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_features_are_orthogonal_blocks() {
        let spec = SyntheticSpec {
            videos: 6,
            validation: 1,
            test: 1,
            themes: 2,
            n_v: 6,
            n_s: 4,
            noise: 0.0,
            ..Default::default()
        };
        let d = generate_synthetic_dataset(&spec, 3).unwrap();
        let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>();
        let a = &d.records[0];
        for r in &d.records {
            assert!(r.visual.iter().all(|&x| x == 0.0 || x == 1.0));
            assert_eq!(r.visual.iter().sum::<f32>(), 3.0);
        }
        let same = d.records.iter().filter(|r| r.visual == a.visual).count();
        assert_eq!(same, 3);
        let other = d.records.iter().find(|r| r.visual != a.visual).unwrap();
        assert_eq!(dot(&a.visual, &other.visual), 0.0);
        assert_eq!(dot(&a.semantic, &other.semantic), 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec::default();
        assert_eq!(
            generate_synthetic_dataset(&spec, 7).unwrap(),
            generate_synthetic_dataset(&spec, 7).unwrap()
        );
        assert_ne!(
            generate_synthetic_dataset(&spec, 7).unwrap(),
            generate_synthetic_dataset(&spec, 8).unwrap()
        );
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let bad = |f: fn(&mut SyntheticSpec)| {
            let mut s = SyntheticSpec::default();
            f(&mut s);
            generate_synthetic_dataset(&s, 0).is_err()
        };
        assert!(bad(|s| s.videos = 0));
        assert!(bad(|s| s.n_v = 3));
        assert!(bad(|s| s.themes = 1));
        assert!(bad(|s| s.annotations_per_video = 0));
        assert!(bad(|s| s.test = 40));
    }

    #[test]
    fn splits_have_requested_sizes() {
        let d = generate_synthetic_dataset(&SyntheticSpec::default(), 7).unwrap();
        let s = &d.manifest.splits;
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (20, 5, 5));
        d.manifest.validate().unwrap();
    }
}
