//! Question/answer episodes over generated houses, expert demonstrations and
//! house-disjoint dataset splits.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridhouse::{
    self, shortest_path, spawn_at_distance, vocab, ActionType, AgentPose, Cell, GridError, Heading,
    HouseMap,
};

/// Width of the answer classifier.
pub const MAX_ANSWERS: usize = 172;
/// No answer may label more than this share of a split's episodes.
pub const MAX_ANSWER_SHARE: f64 = 0.6;

#[derive(Debug, Error)]
pub enum EqaError {
    #[error("answer space of {0} exceeds the classifier width {MAX_ANSWERS}")]
    TooManyAnswers(usize),
    #[error("empty house population")]
    EmptyPopulation,
    #[error("house {0}: no unambiguous question after {1} attempts")]
    NoQuestion(usize, usize),
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("answer {0:?} is not in the vocabulary")]
    UnknownAnswer(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EqaError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Location,
    Color,
    ColorRoom,
    Preposition,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::Location,
        TemplateKind::Color,
        TemplateKind::ColorRoom,
        TemplateKind::Preposition,
    ];

    /// Token pattern; `<OBJ>`, `<ROOM>` and `<PREP>` are slots.
    pub fn pattern(self) -> &'static str {
        match self {
            TemplateKind::Location => "what room is the <OBJ> located in",
            TemplateKind::Color => "what color is the <OBJ>",
            TemplateKind::ColorRoom => "what color is the <OBJ> in the <ROOM>",
            TemplateKind::Preposition => "what is <PREP> the <OBJ> in the <ROOM>",
        }
    }
}

/// Only grid adjacency has a meaning in a flat world.
pub const PREPOSITION: &str = "next to";

/// A question that pins down one object and one answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    pub template: TemplateKind,
    pub object: usize,
    pub text: String,
    pub answer: String,
}

fn fill(template: TemplateKind, house: &HouseMap, object: usize) -> String {
    template
        .pattern()
        .replace("<OBJ>", house.object_name(object))
        .replace("<ROOM>", house.room_name(house.objects[object].room))
        .replace("<PREP>", PREPOSITION)
}

/// Every unambiguous question the house supports, in (template, object) order.
pub fn candidate_questions(house: &HouseMap) -> Vec<Question> {
    let count_kind = |kind: usize, room: Option<usize>| {
        house
            .objects
            .iter()
            .filter(|o| o.kind == kind && room.is_none_or(|r| o.room == r))
            .count()
    };
    let mut out = Vec::new();
    for t in TemplateKind::ALL {
        for o in &house.objects {
            let unique_house = count_kind(o.kind, None) == 1;
            let unique_room = count_kind(o.kind, Some(o.room)) == 1;
            let answer = match t {
                TemplateKind::Location if unique_house => house.room_name(o.room).to_string(),
                TemplateKind::Color if unique_house => house.color_name(o.id).to_string(),
                TemplateKind::ColorRoom if unique_room => house.color_name(o.id).to_string(),
                TemplateKind::Preposition if unique_room => {
                    let kinds: BTreeSet<usize> =
                        o.next_to.iter().map(|&n| house.objects[n].kind).collect();
                    if kinds.len() != 1 {
                        continue;
                    }
                    vocab::OBJECT_KINDS[*kinds.first().unwrap()].to_string()
                }
                _ => continue,
            };
            out.push(Question {
                template: t,
                object: o.id,
                text: fill(t, house, o.id),
                answer,
            });
        }
    }
    out
}

pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub answers: Vec<String>,
}

impl Vocabulary {
    /// Question words cover every template and every name in the fixed
    /// inventories; answers are those attested in `population`. Both lists
    /// are sorted so ids depend only on the sets.
    pub fn build(population: &[HouseMap]) -> Result<Self> {
        if population.is_empty() {
            return Err(EqaError::EmptyPopulation);
        }
        let mut words = BTreeSet::new();
        for t in TemplateKind::ALL {
            words.extend(
                tokenize(t.pattern())
                    .into_iter()
                    .filter(|w| !w.starts_with('<')),
            );
        }
        words.extend(tokenize(PREPOSITION));
        for name in vocab::ROOM_KINDS.iter().chain(vocab::OBJECT_KINDS.iter()) {
            words.extend(tokenize(name));
        }
        let answers: BTreeSet<String> = population
            .iter()
            .flat_map(candidate_questions)
            .map(|q| q.answer)
            .collect();
        Self::from_parts(
            words.into_iter().map(str::to_string).collect(),
            answers.into_iter().collect(),
        )
    }

    pub fn from_parts(words: Vec<String>, answers: Vec<String>) -> Result<Self> {
        if answers.len() > MAX_ANSWERS {
            return Err(EqaError::TooManyAnswers(answers.len()));
        }
        Ok(Self { words, answers })
    }

    pub fn word_id(&self, w: &str) -> Result<usize> {
        self.words
            .binary_search_by(|x| x.as_str().cmp(w))
            .map_err(|_| EqaError::UnknownWord(w.to_string()))
    }

    pub fn answer_id(&self, a: &str) -> Result<usize> {
        self.answers
            .binary_search_by(|x| x.as_str().cmp(a))
            .map_err(|_| EqaError::UnknownAnswer(a.to_string()))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        tokenize(text)
            .into_iter()
            .map(|w| self.word_id(w))
            .collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| self.words.get(t).map_or("<unk>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(
            dir.join("words.json"),
            serde_json::to_string(&self.words).unwrap(),
        )?;
        std::fs::write(
            dir.join("answers.json"),
            serde_json::to_string(&self.answers).unwrap(),
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Vec<String>> {
            let s = std::fs::read_to_string(dir.join(name))?;
            serde_json::from_str(&s).map_err(|e| EqaError::Parse {
                line: e.line(),
                msg: format!("{name}: {e}"),
            })
        };
        Self::from_parts(read("words.json")?, read("answers.json")?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub id: usize,
    pub house_id: usize,
    pub template: TemplateKind,
    pub question: String,
    pub tokens: Vec<usize>,
    pub answer: usize,
    pub object: usize,
    pub target: Cell,
    /// Heading that faces the object from `target`.
    pub target_heading: Heading,
    pub spawn: AgentPose,
    pub spawn_k: u32,
    pub spawn_fallback: bool,
    pub actions: Vec<ActionType>,
}

impl Episode {
    /// Poses visited by the expert, starting with the spawn pose.
    pub fn expert_poses(&self, house: &HouseMap) -> Vec<AgentPose> {
        let mut poses = vec![self.spawn];
        let mut p = self.spawn;
        for &a in &self.actions {
            if a == ActionType::Stop {
                break;
            }
            p = gridhouse::step(house, p, a);
            poses.push(p);
        }
        poses
    }
}

/// Turns that rotate `from` onto `to`, preferring left on a half turn.
pub fn facing_turns(from: Heading, to: Heading) -> Vec<ActionType> {
    match (to.index() + 4 - from.index()) % 4 {
        0 => vec![],
        1 => vec![ActionType::TurnRight],
        2 => vec![ActionType::TurnLeft, ActionType::TurnLeft],
        _ => vec![ActionType::TurnLeft],
    }
}

/// Expert actions: shortest path to `target`, then the turns needed to face
/// the object, then `Stop`.
pub fn expert_actions(
    house: &HouseMap,
    spawn: AgentPose,
    target: Cell,
    facing: Heading,
) -> Result<Vec<ActionType>> {
    let mut path = shortest_path(house, spawn, target)?;
    path.pop();
    let mut end = spawn;
    for &a in &path {
        end = gridhouse::step(house, end, a);
    }
    path.extend(facing_turns(end.heading, facing));
    path.push(ActionType::Stop);
    Ok(path)
}

const EPISODE_ATTEMPTS: usize = 32;

/// Picks a random unambiguous question, a target cell next to and facing its
/// object, a spawn `spawn_k` actions away and the expert demonstration.
pub fn generate_episode(
    house: &HouseMap,
    vocab: &Vocabulary,
    seed: u64,
    spawn_k: u32,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let questions = candidate_questions(house);
    for _ in 0..EPISODE_ATTEMPTS {
        let Some(kind) = TemplateKind::ALL
            .choose(&mut rng)
            .filter(|k| questions.iter().any(|q| q.template == **k))
        else {
            continue;
        };
        let pool: Vec<&Question> = questions.iter().filter(|q| q.template == *kind).collect();
        let q = pool[rng.gen_range(0..pool.len())];
        let approaches = house.approach_cells(q.object);
        let Some(&(target, facing)) = approaches.choose(&mut rng) else {
            continue;
        };
        let spawn = match spawn_at_distance(house, target, spawn_k, rng.gen()) {
            Ok(s) => s,
            Err(GridError::NoSpawn(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let actions = expert_actions(house, spawn.pose, target, facing)?;
        return Ok(Episode {
            id: 0,
            house_id: house.id,
            template: q.template,
            question: q.text.clone(),
            tokens: vocab.encode(&q.text)?,
            answer: vocab.answer_id(&q.answer)?,
            object: q.object,
            target,
            target_heading: facing,
            spawn: spawn.pose,
            spawn_k: spawn.distance,
            spawn_fallback: spawn.fallback,
            actions,
        });
    }
    Err(EqaError::NoQuestion(house.id, EPISODE_ATTEMPTS))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn of(&self, house_id: usize) -> Option<Split> {
        if self.train.contains(&house_id) {
            Some(Split::Train)
        } else if self.val.contains(&house_id) {
            Some(Split::Val)
        } else if self.test.contains(&house_id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Shuffles houses under `seed`, then sizes the splits by flooring
/// `n * ratio` and handing leftover houses to the largest fractional parts.
pub fn make_splits(house_ids: &[usize], ratios: [f64; 3], seed: u64) -> Result<SplitSpec> {
    let n = house_ids.len();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(EqaError::Split(format!(
            "ratios {ratios:?} must be in [0,1] and sum to 1"
        )));
    }
    if n < 3 {
        return Err(EqaError::Split(format!(
            "{n} houses cannot fill three splits"
        )));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    if counts.contains(&0) {
        return Err(EqaError::Split(format!(
            "{n} houses at {ratios:?} leave a split empty"
        )));
    }
    let mut ids = house_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != n {
        return Err(EqaError::Split("duplicate house ids".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids.split_off(counts[0] + counts[1]);
    let val = ids.split_off(counts[0]);
    Ok(SplitSpec {
        train: ids,
        val,
        test,
    })
}

/// Drops episodes of over-represented answers (latest first) until no answer
/// exceeds `max_share` of the set.
pub fn balance_answers(episodes: Vec<Episode>, max_share: f64) -> Vec<Episode> {
    let mut eps = episodes;
    loop {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for e in &eps {
            *counts.entry(e.answer).or_default() += 1;
        }
        let Some((&top, &c)) = counts
            .iter()
            .max_by_key(|(a, c)| (**c, std::cmp::Reverse(**a)))
        else {
            return eps;
        };
        if c as f64 <= max_share * eps.len() as f64 {
            return eps;
        }
        let pos = eps.iter().rposition(|e| e.answer == top).unwrap();
        eps.remove(pos);
    }
}

pub fn max_answer_share(episodes: &[Episode]) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for e in episodes {
        *counts.entry(e.answer).or_default() += 1;
    }
    *counts.values().max().unwrap() as f64 / episodes.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub houses: usize,
    pub rooms: usize,
    pub grid_size: usize,
    pub episodes_per_house: usize,
    pub spawn_k: u32,
    pub ratios: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            houses: 40,
            rooms: 3,
            grid_size: 11,
            episodes_per_house: 10,
            spawn_k: 12,
            ratios: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub houses: Vec<HouseMap>,
    pub vocab: Vocabulary,
    pub splits: SplitSpec,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    /// House ids are `seed * 1000 + i`; every (house, episode) gets its own stream.
    pub fn generate(cfg: &DatasetConfig, seed: u64) -> Result<Self> {
        let houses = (0..cfg.houses)
            .map(|i| gridhouse::generate_house(seed * 1000 + i as u64, cfg.rooms, cfg.grid_size))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = Vocabulary::build(&houses)?;
        let ids: Vec<usize> = houses.iter().map(|h| h.id).collect();
        let splits = make_splits(&ids, cfg.ratios, seed)?;
        let mut episodes = Vec::new();
        for split in [Split::Train, Split::Val, Split::Test] {
            let mut eps = Vec::new();
            for h in houses.iter().filter(|h| splits.of(h.id) == Some(split)) {
                for j in 0..cfg.episodes_per_house {
                    let s = (h.id as u64) << 16 | j as u64;
                    eps.push(generate_episode(h, &vocab, s, cfg.spawn_k)?);
                }
            }
            episodes.extend(balance_answers(eps, MAX_ANSWER_SHARE));
        }
        for (i, e) in episodes.iter_mut().enumerate() {
            e.id = i;
        }
        Ok(Self {
            houses,
            vocab,
            splits,
            episodes,
        })
    }

    pub fn house(&self, id: usize) -> Option<&HouseMap> {
        self.houses.iter().find(|h| h.id == id)
    }

    pub fn split(&self, split: Split) -> Vec<&Episode> {
        self.episodes
            .iter()
            .filter(|e| self.splits.of(e.house_id) == Some(split))
            .collect()
    }

    /// Layout: `houses/<id>.json`, `words.json`, `answers.json`,
    /// `splits.json`, `episodes.jsonl`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("houses"))?;
        for h in &self.houses {
            std::fs::write(
                dir.join("houses").join(format!("{}.json", h.id)),
                h.to_json(),
            )?;
        }
        self.vocab.save(dir)?;
        std::fs::write(
            dir.join("splits.json"),
            serde_json::to_string_pretty(&self.splits).unwrap(),
        )?;
        write_dataset(&self.episodes, dir.join("episodes.jsonl"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let vocab = Vocabulary::load(dir)?;
        let splits: SplitSpec = serde_json::from_str(&std::fs::read_to_string(
            dir.join("splits.json"),
        )?)
        .map_err(|e| EqaError::Parse {
            line: e.line(),
            msg: format!("splits.json: {e}"),
        })?;
        let episodes = read_dataset(dir.join("episodes.jsonl"))?;
        let mut ids: Vec<usize> = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .copied()
            .collect();
        ids.sort_unstable();
        let houses = ids
            .iter()
            .map(|id| {
                let s = std::fs::read_to_string(dir.join("houses").join(format!("{id}.json")))?;
                Ok(HouseMap::from_json(&s)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            houses,
            vocab,
            splits,
            episodes,
        })
    }
}

pub fn write_dataset(episodes: &[Episode], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in episodes {
        serde_json::to_writer(&mut f, e).expect("episode serializes");
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|err| EqaError::Parse {
            line: i + 1,
            msg: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn facing_turns_rotate_onto_target() {
        for from in Heading::ALL {
            for to in Heading::ALL {
                let mut h = from;
                for t in facing_turns(from, to) {
                    h = if t == ActionType::TurnLeft {
                        h.left()
                    } else {
                        h.right()
                    };
                }
                assert_eq!(h, to);
            }
        }
    }

    #[test]
    fn splits_floor_then_distribute() {
        let ids: Vec<usize> = (0..10).collect();
        let s = make_splits(&ids, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let s = make_splits(&(0..7).collect::<Vec<_>>(), [0.5, 0.25, 0.25], 0).unwrap();
        // 3.5 / 1.75 / 1.75 -> 3/1/1 plus two leftovers to the .75 parts
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3, 2, 2));
        assert!(make_splits(&[1, 2], [0.8, 0.1, 0.1], 0).is_err());
        assert!(make_splits(&(0..5).collect::<Vec<_>>(), [0.9, 0.1, 0.0], 0).is_err());
    }

    #[test]
    fn balance_caps_the_top_answer() {
        let mk = |answer| Episode {
            id: 0,
            house_id: 0,
            template: TemplateKind::Color,
            question: String::new(),
            tokens: vec![],
            answer,
            object: 0,
            target: Cell::new(1, 1),
            target_heading: Heading::North,
            spawn: AgentPose::new(1, 1, Heading::North),
            spawn_k: 0,
            spawn_fallback: false,
            actions: vec![ActionType::Stop],
        };
        let eps: Vec<Episode> = [0, 0, 0, 0, 0, 0, 0, 1, 2, 3].into_iter().map(mk).collect();
        let b = balance_answers(eps, 0.6);
        assert!(max_answer_share(&b) <= 0.6);
        assert_eq!(b.len(), 7);
    }
}
