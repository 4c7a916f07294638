//! Descriptors of the benchmark corpora, for manifests and documentation.

use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipFormat {
    Fixed,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetUse {
    MetaTrainTest,
    MetaTestOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetDescriptor {
    pub id: &'static str,
    pub name: &'static str,
    pub setting: &'static str,
    pub n_classes: usize,
    pub n_samples: usize,
    pub format: ClipFormat,
    /// Shortest and longest clip, seconds.
    pub length_range_s: (f64, f64),
    pub usage: DatasetUse,
}

pub const DATASETS: [DatasetDescriptor; 8] = [
    DatasetDescriptor {
        id: "esc50",
        name: "ESC-50",
        setting: "Environmental",
        n_classes: 50,
        n_samples: 2_000,
        format: ClipFormat::Fixed,
        length_range_s: (5.0, 5.0),
        usage: DatasetUse::MetaTrainTest,
    },
    DatasetDescriptor {
        id: "nsynth",
        name: "NSynth",
        setting: "Instrumentation",
        n_classes: 1006,
        n_samples: 305_978,
        format: ClipFormat::Fixed,
        length_range_s: (4.0, 4.0),
        usage: DatasetUse::MetaTrainTest,
    },
    DatasetDescriptor {
        id: "kaggle18",
        name: "FSDKaggle18",
        setting: "Mixed",
        n_classes: 41,
        n_samples: 11_073,
        format: ClipFormat::Variable,
        length_range_s: (0.3, 30.0),
        usage: DatasetUse::MetaTrainTest,
    },
    DatasetDescriptor {
        id: "voxceleb1",
        name: "VoxCeleb1",
        setting: "Voice",
        n_classes: 1251,
        n_samples: 153_516,
        format: ClipFormat::Variable,
        length_range_s: (3.0, 180.0),
        usage: DatasetUse::MetaTrainTest,
    },
    DatasetDescriptor {
        id: "birdclef2020",
        name: "BirdCLEF 2020",
        setting: "Bird Song",
        n_classes: 960,
        n_samples: 72_305,
        format: ClipFormat::Variable,
        length_range_s: (3.0, 1800.0),
        usage: DatasetUse::MetaTrainTest,
    },
    DatasetDescriptor {
        id: "birdclef2020_pruned",
        name: "BirdCLEF 2020 (Pruned)",
        setting: "Bird Song",
        n_classes: 715,
        n_samples: 63_364,
        format: ClipFormat::Variable,
        length_range_s: (3.0, 180.0),
        usage: DatasetUse::MetaTrainTest,
    },
    DatasetDescriptor {
        id: "watkins",
        name: "Watkins Marine Mammal Sounds",
        setting: "Marine Mammals",
        n_classes: 32,
        n_samples: 1_698,
        format: ClipFormat::Variable,
        length_range_s: (0.1, 150.0),
        usage: DatasetUse::MetaTestOnly,
    },
    DatasetDescriptor {
        id: "speechcommands_v2",
        name: "SpeechCommandsV2",
        setting: "Spoken Word",
        n_classes: 35,
        n_samples: 105_829,
        format: ClipFormat::Fixed,
        length_range_s: (1.0, 1.0),
        usage: DatasetUse::MetaTestOnly,
    },
];

/// Pruning applied to BirdCLEF 2020: drop clips over 180 s, then classes under 50 clips.
pub const BIRDCLEF_MAX_DURATION_S: f64 = 180.0;
pub const BIRDCLEF_MIN_CLASS_COUNT: usize = 50;

/// Default sub-clip length for variable-length corpora.
pub const DEFAULT_SUBCLIP_S: f64 = 5.0;

pub fn descriptor(id: &str) -> Option<&'static DatasetDescriptor> {
    DATASETS.iter().find(|d| d.id == id)
}

pub const ESC50_CLASSES: [&str; 50] = [
    "airplane",
    "breathing",
    "brushing_teeth",
    "can_opening",
    "car_horn",
    "cat",
    "chainsaw",
    "chirping_birds",
    "church_bells",
    "clapping",
    "clock_alarm",
    "clock_tick",
    "coughing",
    "cow",
    "crackling_fire",
    "crickets",
    "crow",
    "crying_baby",
    "dog",
    "door_wood_creaks",
    "door_wood_knock",
    "drinking_sipping",
    "engine",
    "fireworks",
    "footsteps",
    "frog",
    "glass_breaking",
    "hand_saw",
    "helicopter",
    "hen",
    "insects",
    "keyboard_typing",
    "laughing",
    "mouse_click",
    "pig",
    "pouring_water",
    "rain",
    "rooster",
    "sea_waves",
    "sheep",
    "siren",
    "sneezing",
    "snoring",
    "thunderstorm",
    "toilet_flush",
    "train",
    "vacuum_cleaner",
    "washing_machine",
    "water_drops",
    "wind",
];

pub fn esc50_class_labels() -> BTreeSet<String> {
    ESC50_CLASSES.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_consistent() {
        assert_eq!(esc50_class_labels().len(), 50);
        let pruned = descriptor("birdclef2020_pruned").unwrap();
        let full = descriptor("birdclef2020").unwrap();
        assert!(pruned.n_classes < full.n_classes && pruned.n_samples < full.n_samples);
        assert_eq!(pruned.length_range_s.1, BIRDCLEF_MAX_DURATION_S);
        assert_eq!(
            DATASETS.iter().filter(|d| d.usage == DatasetUse::MetaTestOnly).count(),
            2
        );
    }
}
