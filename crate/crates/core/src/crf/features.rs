use std::collections::HashMap;

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";
/// Joins the words of a conjunction template.
pub const CONJUNCTION: char = '\u{1f}';
pub const BIGRAM_TEMPLATE: &str = "B";

/// A unigram template: a name and the relative word offsets it reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub offsets: &'static [isize],
}

/// Unigram templates plus the implicit label-bigram template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureTemplateSet {
    templates: Vec<Template>,
}

impl Default for FeatureTemplateSet {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureTemplateSet {
    /// Previous, current and next word, the two adjacent pairs and the
    /// full triple.
    pub fn standard() -> Self {
        let t = |name, offsets| Template { name, offsets };
        Self {
            templates: vec![
                t("U00", &[-1]),
                t("U01", &[0]),
                t("U02", &[1]),
                t("U03", &[-1, 0]),
                t("U04", &[0, 1]),
                t("U05", &[-1, 0, 1]),
            ],
        }
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn template_id(&self, name: &str) -> Option<usize> {
        self.templates.iter().position(|t| t.name == name)
    }

    /// Every unigram firing at every position as `(template index, surface)`.
    pub fn extract<S: AsRef<str>>(&self, words: &[S]) -> Vec<Vec<(usize, String)>> {
        let word_at = |i: isize| -> &str {
            if i < 0 {
                BOS
            } else if i as usize >= words.len() {
                EOS
            } else {
                words[i as usize].as_ref()
            }
        };
        (0..words.len() as isize)
            .map(|pos| {
                self.templates
                    .iter()
                    .enumerate()
                    .map(|(t, tpl)| {
                        let mut surface = String::new();
                        for (k, off) in tpl.offsets.iter().enumerate() {
                            if k > 0 {
                                surface.push(CONJUNCTION);
                            }
                            surface.push_str(word_at(pos + off));
                        }
                        (t, surface)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Observation ids for `(template, surface)` pairs seen in training.
///
/// Ids follow first appearance in the training corpus, so rebuilding from
/// the same records yields the same ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureIndex {
    entries: Vec<(usize, String)>,
    ids: HashMap<(usize, String), usize>,
}

impl FeatureIndex {
    /// Indexes every firing that occurs at least `min_count` times.
    pub fn build<'a, S: AsRef<str> + 'a>(
        templates: &FeatureTemplateSet,
        documents: impl IntoIterator<Item = &'a [S]>,
        min_count: usize,
    ) -> Self {
        let mut order: Vec<(usize, String)> = Vec::new();
        let mut counts: HashMap<(usize, String), usize> = HashMap::new();
        for words in documents {
            for firing in templates.extract(words).into_iter().flatten() {
                let c = counts.entry(firing.clone()).or_insert(0);
                if *c == 0 {
                    order.push(firing);
                }
                *c += 1;
            }
        }
        let mut index = Self::default();
        for f in order {
            if counts[&f] >= min_count {
                index.push(f);
            }
        }
        index
    }

    pub(crate) fn push(&mut self, feature: (usize, String)) -> usize {
        if let Some(&id) = self.ids.get(&feature) {
            return id;
        }
        let id = self.entries.len();
        self.ids.insert(feature.clone(), id);
        self.entries.push(feature);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, template: usize, surface: &str) -> Option<usize> {
        self.ids.get(&(template, surface.to_string())).copied()
    }

    pub fn entry(&self, id: usize) -> (usize, &str) {
        let (t, s) = &self.entries[id];
        (*t, s)
    }

    /// Active observation ids per position; unseen firings are dropped.
    pub fn observations<S: AsRef<str>>(&self, templates: &FeatureTemplateSet, words: &[S]) -> Vec<Vec<usize>> {
        templates
            .extract(words)
            .into_iter()
            .map(|fs| fs.into_iter().filter_map(|f| self.ids.get(&f).copied()).collect())
            .collect()
    }
}
