use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::*;
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 1000;
/// Distractors keep this far inside the workspace edge so they stay in view.
const PLACEMENT_MARGIN: f64 = 0.03;

fn jitter<R: Rng + ?Sized>(nominal: [f64; 2], variability: Variability, rng: &mut R) -> [f64; 2] {
    let mut draw = || rng.random_range(-POSITION_JITTER..=POSITION_JITTER);
    match variability {
        Variability::Fixed => nominal,
        Variability::Var1 => [nominal[0] + draw(), nominal[1]],
        Variability::Var2 | Variability::Var3 => {
            let dx = draw();
            let dy = draw();
            [nominal[0] + dx, nominal[1] + dy]
        }
    }
}

/// Draws one trial of the given grid cell.
pub fn sample_scene<R: Rng + ?Sized>(config: &DatasetConfig, rng: &mut R) -> Result<SceneSpec> {
    config.validate()?;
    let task = *config.tasks.choose(rng).expect("validated non-empty");
    let mut kinds = ObjectKind::ALL.to_vec();
    kinds.shuffle(rng);
    let target_kind = kinds[0];

    let target_pos = jitter(NOMINAL_TARGET, config.variability, rng);
    let mut objects = vec![SceneObject { kind: target_kind, position: target_pos }];
    let lim = WORKSPACE_HALF - PLACEMENT_MARGIN;
    for &kind in kinds.iter().skip(1).take(config.distractors) {
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let p = [rng.random_range(-lim..=lim), rng.random_range(-lim..=lim)];
            if objects.iter().all(|o| dist2(o.position, p) >= MIN_SEPARATION) {
                placed = Some(p);
                break;
            }
        }
        let position = placed.ok_or_else(|| {
            Error::Generation(format!("no room for a distractor after {MAX_ATTEMPTS} attempts"))
        })?;
        objects.push(SceneObject { kind, position });
    }

    let drawer = task
        .needs_drawer()
        .then(|| Drawer { position: jitter(NOMINAL_DRAWER, config.variability, rng), open: true });
    let robot_base_y = match config.variability {
        Variability::Var3 => rng.random_range(-BASE_Y_RANGE..=BASE_Y_RANGE),
        _ => 0.0,
    };
    Ok(SceneSpec { objects, target_index: 0, robot_base_y, drawer, task, variability: config.variability })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn fixed_cell_uses_nominal_position() {
        let cfg = DatasetConfig::preset("fixed-reach").unwrap();
        for i in 0..50 {
            let s = sample_scene(&cfg, &mut rng_for(1, "t", i)).unwrap();
            assert_eq!(s.target().position, NOMINAL_TARGET);
            assert_eq!(s.objects.len(), 1);
            assert_eq!(s.task, Task::Reach);
            assert!(s.drawer.is_none());
        }
    }

    #[test]
    fn two_distractors_use_all_kinds() {
        let cfg = DatasetConfig::preset("random-2d-lift").unwrap();
        for i in 0..200 {
            let s = sample_scene(&cfg, &mut rng_for(2, "t", i)).unwrap();
            assert_eq!(s.objects.len(), 3);
            let mut kinds: Vec<_> = s.objects.iter().map(|o| o.kind).collect();
            kinds.sort();
            kinds.dedup();
            assert_eq!(kinds.len(), 3);
            for (a, oa) in s.objects.iter().enumerate() {
                for ob in &s.objects[a + 1..] {
                    assert!(dist2(oa.position, ob.position) >= MIN_SEPARATION);
                }
                assert!(oa.position.iter().all(|c| c.abs() <= WORKSPACE_HALF));
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = DatasetConfig::preset("var3-close").unwrap();
        assert_eq!(sample_scene(&cfg, &mut rng_for(5, "t", 3)).unwrap(), sample_scene(&cfg, &mut rng_for(5, "t", 3)).unwrap());
    }

    #[test]
    fn variability_levels_respect_ranges() {
        for (name, vary_y, vary_base) in [("var1-insert", false, false), ("var2-insert", true, false), ("var3-insert", true, true)] {
            let cfg = DatasetConfig::preset(name).unwrap();
            let mut saw_y = false;
            let mut saw_base = false;
            for i in 0..200 {
                let s = sample_scene(&cfg, &mut rng_for(9, name, i)).unwrap();
                let p = s.target().position;
                assert!((p[0] - NOMINAL_TARGET[0]).abs() <= POSITION_JITTER);
                assert!((p[1] - NOMINAL_TARGET[1]).abs() <= POSITION_JITTER);
                saw_y |= p[1] != NOMINAL_TARGET[1];
                saw_base |= s.robot_base_y != 0.0;
                assert!(s.robot_base_y.abs() <= BASE_Y_RANGE);
                let d = s.drawer.expect("insert needs a drawer");
                assert!(d.open);
                assert_eq!(d.position[1] != NOMINAL_DRAWER[1], vary_y);
            }
            assert_eq!(saw_y, vary_y, "{name}");
            assert_eq!(saw_base, vary_base, "{name}");
        }
    }
}
