//! Deterministic offline fixtures for the file-based tasks.
//!
//! The image fixture expands the small real handwritten-digit set shipped in
//! `data/` (8x8 grayscale, IDX format) into larger 28x28 IDX train/test
//! files via nearest-neighbor upscaling plus seeded shift/noise jitter. The
//! text fixture generates a word-structured corpus from an embedded English
//! vocabulary with Zipf-weighted draws and sticky word pairs, so word-level
//! context carries real signal. Both let every file-format and training path
//! run without external downloads; real IDX/PTB files drop in via the same
//! config keys.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::mnist::{read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};

pub struct ImageFixture {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Expand the shipped 8x8 digit set to `train_count`/`test_count` 28x28
/// images under `out_dir`. Deterministic in (seed, counts).
pub fn expand_digits(
    src_images: &Path,
    src_labels: &Path,
    out_dir: &Path,
    train_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<ImageFixture> {
    let (images, rows, cols) = read_idx_images(src_images)?;
    let labels = read_idx_labels(src_labels)?;
    if rows != 8 || cols != 8 {
        return Err(Error::Data(format!(
            "digit source must be 8x8, got {rows}x{cols}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Seeded split of the originals into train/test pools.
    let mut order: Vec<usize> = (0..images.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let holdout = images.len() / 5;
    let (test_pool, train_pool) = order.split_at(holdout);

    let render = |pool: &[usize], count: usize, rng: &mut ChaCha8Rng| {
        let mut imgs = Vec::with_capacity(count);
        let mut labs = Vec::with_capacity(count);
        for i in 0..count {
            let src = pool[i % pool.len()];
            let first_pass = i < pool.len();
            imgs.push(render_28(&images[src], rng, first_pass));
            labs.push(labels[src]);
        }
        (imgs, labs)
    };

    let (train_imgs, train_labs) = render(train_pool, train_count, &mut rng);
    let (test_imgs, test_labs) = render(test_pool, test_count, &mut rng);

    std::fs::create_dir_all(out_dir)?;
    let fixture = ImageFixture {
        train_images: out_dir.join("train-images-idx3-ubyte"),
        train_labels: out_dir.join("train-labels-idx1-ubyte"),
        test_images: out_dir.join("t10k-images-idx3-ubyte"),
        test_labels: out_dir.join("t10k-labels-idx1-ubyte"),
    };
    write_idx_images(&fixture.train_images, &train_imgs, 28, 28)?;
    write_idx_labels(&fixture.train_labels, &train_labs)?;
    write_idx_images(&fixture.test_images, &test_imgs, 28, 28)?;
    write_idx_labels(&fixture.test_labels, &test_labs)?;
    Ok(fixture)
}

/// Nearest-neighbor 8->28 upscale; repeated passes add +/-2px shift and
/// mild pixel noise so augmented copies differ.
fn render_28(img8: &[u8], rng: &mut ChaCha8Rng, first_pass: bool) -> Vec<u8> {
    let (dr, dc, noise) = if first_pass {
        (0i32, 0i32, 0u8)
    } else {
        (rng.gen_range(-2..=2), rng.gen_range(-2..=2), 12u8)
    };
    let mut out = vec![0u8; 28 * 28];
    for r in 0..28i32 {
        for c in 0..28i32 {
            let sr = r - dr;
            let sc = c - dc;
            let mut v = if (0..28).contains(&sr) && (0..28).contains(&sc) {
                img8[(sr as usize * 8 / 28) * 8 + (sc as usize * 8 / 28)]
            } else {
                0
            };
            if noise > 0 {
                let n = rng.gen_range(0..=noise) as i32 - (noise / 2) as i32;
                v = (v as i32 + n).clamp(0, 255) as u8;
            }
            out[(r * 28 + c) as usize] = v;
        }
    }
    out
}

pub struct TextFixture {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

/// Generate a word-structured text corpus of roughly `total_bytes` under
/// `out_dir`, split 90/5/5 into train/valid/test.
pub fn generate_corpus(out_dir: &Path, total_bytes: usize, seed: u64) -> Result<TextFixture> {
    let text = corpus_text(total_bytes, seed);
    let n = text.len();
    let train_end = floor_char(&text, n * 90 / 100);
    let valid_end = floor_char(&text, n * 95 / 100);
    std::fs::create_dir_all(out_dir)?;
    let fixture = TextFixture {
        train: out_dir.join("corpus.train.txt"),
        valid: out_dir.join("corpus.valid.txt"),
        test: out_dir.join("corpus.test.txt"),
    };
    std::fs::write(&fixture.train, &text[..train_end])?;
    std::fs::write(&fixture.valid, &text[train_end..valid_end])?;
    std::fs::write(&fixture.test, &text[valid_end..])?;
    Ok(fixture)
}

fn floor_char(s: &str, mut i: usize) -> usize {
    while i > 0 && !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// Zipf-weighted word soup with sticky successor pairs and sentence breaks.
pub fn corpus_text(total_bytes: usize, seed: u64) -> String {
    let words = word_list();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Fixed successor map: some pairs co-occur strongly, giving word-level
    // context real predictive value.
    let successors: Vec<usize> = (0..words.len())
        .map(|_| rng.gen_range(0..words.len()))
        .collect();

    // Zipf weights w_i = 1/(i+1), sampled via cumulative table.
    let weights: Vec<f64> = (0..words.len()).map(|i| 1.0 / (i + 1) as f64).collect();
    let total_w: f64 = weights.iter().sum();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total_w;
            Some(*acc)
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng| -> usize {
        let x: f64 = rng.gen_range(0.0..1.0);
        cumulative.partition_point(|&c| c < x).min(words.len() - 1)
    };

    let mut out = String::with_capacity(total_bytes + 64);
    let mut prev = draw(&mut rng);
    let mut sentence_left = rng.gen_range(4..12usize);
    out.push_str(words[prev]);
    while out.len() < total_bytes {
        // Strong word-to-word dependency: knowing the previous word often
        // determines the next one, so word-level context carries real bits.
        let next = if rng.gen_range(0.0..1.0) < 0.55 {
            successors[prev]
        } else {
            draw(&mut rng)
        };
        out.push(' ');
        out.push_str(words[next]);
        prev = next;
        sentence_left -= 1;
        if sentence_left == 0 {
            out.push('\n');
            sentence_left = rng.gen_range(4..12usize);
        }
    }
    out.push('\n');
    out
}

fn word_list() -> Vec<&'static str> {
    WORDS.split_whitespace().collect()
}

const WORDS: &str = "the of and to in a is that for it as was with be by on not he \
this are or his from at which but have an they you were her she all their one we \
can has there been if more when will would who so no out up into them then its only \
some could time these two may first any my now such like our over man me even most \
made after also did many before must through back years where much your way well \
down should because each just those people how too little state good very make \
world still own see men work long get here between both life being under never day \
same another know while last might us great old year off come since against go came \
right used take three states himself few house use during without again place \
around however home small found mrs thought went say part once general high upon \
school every don't does got united left number course war until always away \
something fact though water less public put think almost hand enough far took head \
yet government system better set told nothing night end why called didn't eyes find \
going look asked later knew point next city business case group woman need \
president money play seemed stood possible family interest child itself quite \
service material human power am side several order national art feet among problem \
line open court second god face toward cost book whole given early white john \
become large big need four within felt children along saw best church ever least \
power development thing seem light want members others mind country area done \
already effect kind across social above turned society having history english \
themselves really question death experience anything evidence certain free often \
program least result today example leave million room until help law including \
continue real kept major military political available local name value economic \
various action full model data process field report level rate student per type \
market paper moment idea information nature figure center provide front strong \
black care matter period herself person plan behind close table tell five run word \
special college road form office class car door sense reason change music sound \
modern plant plane short study town start story move face increase minutes \
particular party building force whether received live total research shown held \
university cut third probably alone months basic clear club north south east west \
age amount army bank bill board body bridge brother camp capital captain chance \
character charge choice circle company condition control corner council county \
couple cover cross crowd current danger deal decision degree demand design desire \
detail direction doctor dollar doubt dream dress drive drop earth edge education \
element energy engine event exercise expression fall farm fear feeling fight \
finger fire floor flow food foot forest frame future game garden gas glass gold \
grade ground growth hair half hall heart heat height hill hope hospital hotel hour \
ice image income industry island issue job judge key king kitchen knowledge land \
language leader length letter library lift list lot love machine mail main manner \
map mass master meaning measure meeting member memory message metal method middle \
mile milk mind mine minute mirror model moon morning mother motion mountain mouth \
movement nation neck network news noise nose note object observation ocean offer \
oil operation opinion option orange organization outside page pain paint pair \
palace pattern peace pen pencil performance phone picture piece pipe pleasure \
pocket poem policy pool population position practice pressure price primary print \
prison private prize product profit progress project property public purpose \
quality quarter queen radio rain range reaction reading record region relation \
religion rent rest return review reward ring river rock role roof rule safety salt \
sample scale scene science sea season seat secret section security selection self \
sentence series shape share ship shop shoulder sign silver sister site situation \
size skill skin sky sleep smile snow soil song source space speech speed spirit \
sport spring square stage star station steel step stone store storm street stress \
stretch structure style subject success sugar summer sun supply surface surprise \
taste tax teacher team temperature test theory thread throat ticket tin tip title \
tone tongue tool tooth top touch trade train transport travel tree trick trip \
trouble turn twist unit valley variety vehicle verse vessel view voice walk wall \
wash wave weather week weight wheel wind window wine winter wire wise wood wool \
writing yard yesterday young zero";
