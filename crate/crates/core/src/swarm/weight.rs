use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    #[default]
    Proximity,
}

/// Radial proximity weight `A(x, y) = 1{|x - y| <= r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionWeight {
    pub kind: WeightKind,
    pub radius: f64,
}

impl InteractionWeight {
    pub fn proximity(radius: f64) -> Self {
        Self {
            kind: WeightKind::Proximity,
            radius,
        }
    }

    pub fn weight(&self, distance: f64) -> f64 {
        match self.kind {
            WeightKind::Proximity => {
                if distance <= self.radius {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}
