use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Canonical name of the not-applicable class.
pub const NA_LABEL: &str = "NA";

/// Label spellings treated as the not-applicable class when a scheme is
/// inferred from data.
pub const NA_ALIASES: &[&str] = &["NA", "N.A.", "O"];

/// The five handover form headings, plus N.A. and a bucket for label names
/// whose heading cannot be inferred.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MainCategory {
    PatientIntroduction,
    MyShift,
    Appointments,
    Medication,
    FutureCare,
    NotApplicable,
    Uncategorized,
}

impl MainCategory {
    pub const ALL: [MainCategory; 7] = [
        MainCategory::PatientIntroduction,
        MainCategory::MyShift,
        MainCategory::Appointments,
        MainCategory::Medication,
        MainCategory::FutureCare,
        MainCategory::NotApplicable,
        MainCategory::Uncategorized,
    ];

    pub fn title(self) -> &'static str {
        match self {
            MainCategory::PatientIntroduction => "PATIENT INTRODUCTION",
            MainCategory::MyShift => "MY SHIFT",
            MainCategory::Appointments => "APPOINTMENTS",
            MainCategory::Medication => "MEDICATION",
            MainCategory::FutureCare => "FUTURE CARE",
            MainCategory::NotApplicable => "N.A.",
            MainCategory::Uncategorized => "UNCATEGORIZED",
        }
    }

    /// Infers the heading from the label's prefix (text before the first
    /// `_` or `:`), e.g. `PI_CurrentBed` or `MyShift_Status`.
    pub fn infer(label: &str) -> MainCategory {
        if NA_ALIASES.contains(&label) {
            return MainCategory::NotApplicable;
        }
        let prefix = label
            .split(['_', ':'])
            .next()
            .unwrap_or("")
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match prefix.as_str() {
            "pi" | "patientintroduction" | "patient" => MainCategory::PatientIntroduction,
            "myshift" | "shift" => MainCategory::MyShift,
            "appointment" | "appointments" => MainCategory::Appointments,
            "medication" | "medications" => MainCategory::Medication,
            "future" | "futurecare" => MainCategory::FutureCare,
            _ => MainCategory::Uncategorized,
        }
    }
}

impl fmt::Display for MainCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

/// Ordered label inventory. Label id 0 is always the N.A. class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelScheme {
    labels: Vec<String>,
    categories: Vec<MainCategory>,
    index: HashMap<String, usize>,
}

impl LabelScheme {
    /// Builds a scheme whose first entry is the N.A. label.
    pub fn new(labels: Vec<String>) -> Result<Self, CorpusError> {
        if labels.is_empty() {
            return Err(CorpusError::Scheme("a scheme needs at least the N.A. label".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.contains(['\t', '\n']) {
                return Err(CorpusError::Scheme(format!("invalid label name {l:?}")));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(CorpusError::Scheme(format!("duplicate label {l:?}")));
            }
        }
        let categories = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if i == 0 {
                    MainCategory::NotApplicable
                } else {
                    match MainCategory::infer(l) {
                        MainCategory::NotApplicable => MainCategory::Uncategorized,
                        c => c,
                    }
                }
            })
            .collect();
        Ok(Self {
            labels,
            categories,
            index,
        })
    }

    /// A scheme holding only the N.A. label.
    pub fn na_only() -> Self {
        Self::new(vec![NA_LABEL.to_string()]).expect("valid")
    }

    /// Builds a scheme from observed label names: the N.A. label first
    /// (an observed alias, or [`NA_LABEL`]), then the rest sorted.
    pub fn from_observed<'a>(observed: impl IntoIterator<Item = &'a str>) -> Self {
        let mut na: Option<&str> = None;
        let mut rest: Vec<&str> = Vec::new();
        for l in observed {
            if na.is_none() && NA_ALIASES.contains(&l) {
                na = Some(l);
            } else if Some(l) != na {
                rest.push(l);
            }
        }
        rest.sort_unstable();
        rest.dedup();
        let mut labels = vec![na.unwrap_or(NA_LABEL).to_string()];
        labels.extend(rest.into_iter().map(str::to_string));
        Self::new(labels).expect("observed labels are distinct and non-empty")
    }

    /// Subclasses reported for the handover form, with their headings as
    /// name prefixes.
    pub fn handover() -> Self {
        let names = [
            "PI_GivenNames/Initials",
            "PI_LastName",
            "PI_AgeInYears",
            "PI_Gender",
            "PI_CurrentRoom",
            "PI_CurrentBed",
            "PI_UnderDr_GivenNames/Initials",
            "PI_UnderDr_LastName",
            "PI_AdmissionReason/Diagnosis",
            "PI_Allergy",
            "PI_ChronicCondition",
            "PI_Disease/ProblemHistory",
            "PI_CarePlan",
            "MyShift_Status",
            "MyShift_Contraption",
            "MyShift_Input/Diet",
            "MyShift_Output/Diuresis/BowelMovement",
            "MyShift_Wounds/Skin",
            "MyShift_ActivitiesOfDailyLiving",
            "MyShift_RiskManagement",
            "MyShift_OtherObservation",
            "Appointment_Status",
            "Appointment_Description",
            "Appointment_Clinician_GivenNames/Initials",
            "Appointment_Clinician_LastName",
            "Appointment_Day",
            "Appointment_Time",
            "Appointment_City",
            "Appointment_Ward",
            "Medication_Medicine",
            "Medication_Dosage",
            "Medication_Status",
            "Future_Alert/Warning/AbnormalResult",
            "Future_Goal/TaskToBeCompleted/ExpectedOutcome",
            "Future_Discharge/TransferPlan",
        ];
        let mut labels = vec![NA_LABEL.to_string()];
        labels.extend(names.iter().map(|s| s.to_string()));
        Self::new(labels).expect("static scheme is valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn na(&self) -> usize {
        0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn name(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn category(&self, id: usize) -> MainCategory {
        self.categories[id]
    }

    pub fn categories(&self) -> &[MainCategory] {
        &self.categories
    }

    /// One label per line, N.A. first.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for l in &self.labels {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn parse(reader: impl BufRead) -> Result<Self, CorpusError> {
        let mut labels = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| CorpusError::Io("label scheme".into(), e))?;
            if line.is_empty() {
                continue;
            }
            labels.push(line);
        }
        Self::new(labels)
    }
}
