use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{GraphError, HypGraph, Result};

const START_ANGLE: f64 = PI / 6.0;

/// Angular-slice schedule: lesson `l` of `L` keeps the nodes whose angle
/// lies in a sector of width `pi/6 + l (2 pi - pi/6) / (L - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Curriculum {
    pub lessons: usize,
    pub steps_per_lesson: usize,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self {
            lessons: 5,
            steps_per_lesson: 2000,
        }
    }
}

impl Curriculum {
    pub fn lesson_at(&self, step: usize) -> usize {
        (step / self.steps_per_lesson.max(1)).min(self.lessons.saturating_sub(1))
    }

    pub fn state_at(&self, step: usize) -> CurriculumState {
        CurriculumState::new(self.lesson_at(step), self.lessons)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub lesson: usize,
    pub total_lessons: usize,
    pub theta: f64,
}

impl CurriculumState {
    pub fn new(lesson: usize, total_lessons: usize) -> Self {
        let theta = if total_lessons <= 1 || lesson + 1 >= total_lessons {
            2.0 * PI
        } else {
            START_ANGLE + lesson as f64 * (2.0 * PI - START_ANGLE) / (total_lessons - 1) as f64
        };
        Self {
            lesson,
            total_lessons,
            theta,
        }
    }
}

/// Subgraph induced by the nodes whose angle, measured from `offset`, lies in
/// `[0, theta]`. The full angle keeps every node.
pub fn curriculum_slice(g: &HypGraph, theta: f64, offset: f64) -> Result<HypGraph> {
    let nodes: Vec<usize> = if theta >= 2.0 * PI {
        (0..g.n()).collect()
    } else {
        g.points()
            .iter()
            .enumerate()
            .filter(|(_, p)| (p.angle - offset).rem_euclid(2.0 * PI) <= theta)
            .map(|(i, _)| i)
            .collect()
    };
    if nodes.len() < 2 {
        return Err(GraphError::SliceTooSmall(nodes.len()));
    }
    Ok(g.induced(&nodes))
}
