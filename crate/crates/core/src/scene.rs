//! Scenes: named groups of lanes that are evaluated together.

use serde::{Deserialize, Serialize};

use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LaneEntry<L> {
    pub lane_id: String,
    pub lane: L,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene<L> {
    pub id: String,
    pub lanes: Vec<LaneEntry<L>>,
}

/// Scenes plus, when synthetic, the seed and configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSet<L> {
    pub scenes: Vec<Scene<L>>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config: SynthConfig,
}

impl<L> SceneSet<L> {
    pub fn new(scenes: Vec<Scene<L>>) -> Self {
        Self {
            scenes,
            provenance: None,
        }
    }

    pub fn lanes(&self) -> impl Iterator<Item = &L> {
        self.scenes.iter().flat_map(|s| s.lanes.iter().map(|e| &e.lane))
    }

    pub fn lane_count(&self) -> usize {
        self.scenes.iter().map(|s| s.lanes.len()).sum()
    }

    pub fn scene(&self, id: &str) -> Option<&Scene<L>> {
        self.scenes.iter().find(|s| s.id == id)
    }
}

/// Groups `(scene_id, lane_id, lane)` triples by scene, keeping first-seen
/// scene order and the lane order within each scene.
pub fn group_by_scene<L>(items: impl IntoIterator<Item = (String, String, L)>) -> Vec<Scene<L>> {
    let mut scenes: Vec<Scene<L>> = Vec::new();
    let mut index = std::collections::HashMap::<String, usize>::new();
    for (scene_id, lane_id, lane) in items {
        let i = *index.entry(scene_id.clone()).or_insert_with(|| {
            scenes.push(Scene {
                id: scene_id,
                lanes: Vec::new(),
            });
            scenes.len() - 1
        });
        scenes[i].lanes.push(LaneEntry { lane_id, lane });
    }
    scenes
}
