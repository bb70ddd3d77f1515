//! Closed clinical vocabulary behind the synthetic corpus and the mock
//! paraphrase engine.
//!
//! Every concept has the surface form patients' records use plus a few
//! paraphrases that share no tokens with it. "Easy" criteria quote the record
//! form; "hard" criteria use a paraphrase.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Diagnosis,
    Medication,
    Procedure,
}

#[derive(Debug, Clone, Copy)]
pub struct Concept {
    pub category: Category,
    /// Phrase as it appears in patient records.
    pub record_phrase: &'static str,
    /// Billing or order code appended to record entries.
    pub code: &'static str,
    /// Low-overlap paraphrases.
    pub paraphrases: &'static [&'static str],
}

macro_rules! concept {
    ($cat:ident, $phrase:literal, $code:literal, [$($p:literal),+ $(,)?]) => {
        Concept {
            category: Category::$cat,
            record_phrase: $phrase,
            code: $code,
            paraphrases: &[$($p),+],
        }
    };
}

pub const CONCEPTS: &[Concept] = &[
    concept!(
        Diagnosis,
        "atrial fibrillation",
        "I48.91",
        [
            "irregular cardiac rhythm",
            "quivering heart arrhythmia",
            "AFib"
        ]
    ),
    concept!(
        Diagnosis,
        "essential hypertension",
        "I10",
        [
            "high blood pressure",
            "elevated arterial tension",
            "raised BP"
        ]
    ),
    concept!(
        Diagnosis,
        "type 2 diabetes mellitus",
        "E11.9",
        [
            "adult onset glucose intolerance",
            "NIDDM",
            "noninsulin dependent sugar disease"
        ]
    ),
    concept!(
        Diagnosis,
        "hyperlipidemia",
        "E78.5",
        ["high cholesterol", "elevated serum lipids", "dyslipidaemia"]
    ),
    concept!(
        Diagnosis,
        "congestive heart failure",
        "I50.9",
        [
            "cardiac pump insufficiency",
            "weak myocardial output",
            "CHF"
        ]
    ),
    concept!(
        Diagnosis,
        "chronic kidney disease",
        "N18.3",
        [
            "renal insufficiency",
            "reduced glomerular filtration",
            "CKD"
        ]
    ),
    concept!(
        Diagnosis,
        "intracranial hemorrhage",
        "I62.9",
        ["bleeding inside the skull", "cerebral bleed", "ICH"]
    ),
    concept!(
        Diagnosis,
        "acute ischemic stroke",
        "I63.9",
        [
            "sudden blockage of blood flow to the brain",
            "cerebral infarction",
            "brain attack"
        ]
    ),
    concept!(
        Diagnosis,
        "transient ischemic attack",
        "G45.9",
        ["mini stroke", "TIA", "temporary neurological deficit"]
    ),
    concept!(
        Diagnosis,
        "coronary artery disease",
        "I25.10",
        [
            "narrowed cardiac vessels",
            "CAD",
            "atherosclerotic heart condition"
        ]
    ),
    concept!(
        Diagnosis,
        "peptic ulcer",
        "K27.9",
        ["stomach sore", "gastric erosion", "duodenal lesion"]
    ),
    concept!(
        Diagnosis,
        "epilepsy",
        "G40.909",
        ["seizure disorder", "recurrent convulsions", "fits"]
    ),
    concept!(
        Diagnosis,
        "dementia",
        "F03.90",
        [
            "cognitive decline",
            "memory loss syndrome",
            "neurocognitive impairment"
        ]
    ),
    concept!(
        Diagnosis,
        "liver cirrhosis",
        "K74.60",
        [
            "hepatic scarring",
            "end stage hepatic fibrosis",
            "cirrhotic hepatopathy"
        ]
    ),
    concept!(
        Diagnosis,
        "pregnancy",
        "Z33.1",
        ["expecting a baby", "gravid state", "with child"]
    ),
    concept!(
        Diagnosis,
        "thrombocytopenia",
        "D69.6",
        [
            "low platelet count",
            "platelet deficiency",
            "reduced thrombocytes"
        ]
    ),
    concept!(
        Diagnosis,
        "obstructive sleep apnea",
        "G47.33",
        [
            "breathing pauses during slumber",
            "nocturnal airway collapse",
            "OSA"
        ]
    ),
    concept!(
        Diagnosis,
        "major depressive disorder",
        "F32.9",
        ["clinical depression", "persistent low mood", "melancholia"]
    ),
    concept!(
        Diagnosis,
        "active malignancy",
        "C80.1",
        ["cancer", "neoplastic disease", "tumour under treatment"]
    ),
    concept!(
        Diagnosis,
        "deep vein thrombosis",
        "I82.409",
        ["leg clot", "DVT", "venous thromboembolic occlusion"]
    ),
    concept!(
        Medication,
        "warfarin",
        "RX11289",
        ["coumadin", "vitamin K antagonist", "coumarin anticoagulant"]
    ),
    concept!(
        Medication,
        "apixaban",
        "RX1364430",
        [
            "eliquis",
            "factor Xa inhibitor",
            "direct oral anticoagulant"
        ]
    ),
    concept!(
        Medication,
        "aspirin",
        "RX1191",
        ["acetylsalicylic acid", "ASA", "salicylate antiplatelet"]
    ),
    concept!(
        Medication,
        "clopidogrel",
        "RX32968",
        ["plavix", "P2Y12 antagonist", "thienopyridine"]
    ),
    concept!(
        Medication,
        "atorvastatin",
        "RX83367",
        ["lipitor", "HMG CoA reductase inhibitor", "statin therapy"]
    ),
    concept!(
        Medication,
        "metformin",
        "RX6809",
        ["glucophage", "biguanide", "oral hypoglycemic"]
    ),
    concept!(
        Medication,
        "insulin glargine",
        "RX274783",
        ["lantus", "long acting basal analog", "basaglar"]
    ),
    concept!(
        Medication,
        "lisinopril",
        "RX29046",
        [
            "zestril",
            "ACE inhibitor",
            "angiotensin converting enzyme blocker"
        ]
    ),
    concept!(
        Medication,
        "amlodipine",
        "RX17767",
        ["norvasc", "calcium channel blocker", "dihydropyridine"]
    ),
    concept!(
        Medication,
        "alteplase",
        "RX8410",
        [
            "tPA",
            "tissue plasminogen activator",
            "clot busting thrombolytic"
        ]
    ),
    concept!(
        Medication,
        "heparin",
        "RX5224",
        [
            "unfractionated anticoagulant infusion",
            "UFH",
            "heparinoid drip"
        ]
    ),
    concept!(
        Medication,
        "levetiracetam",
        "RX114477",
        ["keppra", "antiepileptic drug", "anticonvulsant"]
    ),
    concept!(
        Medication,
        "sertraline",
        "RX36437",
        [
            "zoloft",
            "SSRI antidepressant",
            "serotonin reuptake blocker"
        ]
    ),
    concept!(
        Medication,
        "prednisone",
        "RX8640",
        ["oral corticosteroid", "deltasone", "glucocorticoid tablets"]
    ),
    concept!(
        Medication,
        "omeprazole",
        "RX7646",
        ["prilosec", "proton pump inhibitor", "PPI"]
    ),
    concept!(
        Medication,
        "furosemide",
        "RX4603",
        ["lasix", "loop diuretic", "water pill"]
    ),
    concept!(
        Procedure,
        "carotid endarterectomy",
        "CPT35301",
        [
            "surgical plaque removal from the neck artery",
            "CEA",
            "neck artery plaque removal"
        ]
    ),
    concept!(
        Procedure,
        "mechanical thrombectomy",
        "CPT61645",
        [
            "endovascular clot retrieval",
            "stent retriever intervention",
            "catheter based clot extraction"
        ]
    ),
    concept!(
        Procedure,
        "ct angiography",
        "CPT70496",
        [
            "CTA",
            "contrast vessel imaging scan",
            "computed tomographic arteriogram"
        ]
    ),
    concept!(
        Procedure,
        "brain mri",
        "CPT70551",
        [
            "magnetic resonance imaging of the head",
            "cerebral MR scan",
            "neuroimaging MR study"
        ]
    ),
    concept!(
        Procedure,
        "transthoracic echocardiogram",
        "CPT93306",
        ["cardiac ultrasound", "TTE", "echo study"]
    ),
    concept!(
        Procedure,
        "coronary artery bypass graft",
        "CPT33533",
        [
            "CABG",
            "open chest cardiac surgery",
            "surgical revascularisation"
        ]
    ),
    concept!(
        Procedure,
        "hemodialysis",
        "CPT90935",
        [
            "kidney dialysis",
            "renal replacement therapy",
            "extracorporeal filtration"
        ]
    ),
    concept!(
        Procedure,
        "percutaneous coronary intervention",
        "CPT92920",
        ["PCI", "cardiac stenting", "balloon angioplasty"]
    ),
    concept!(
        Procedure,
        "lumbar puncture",
        "CPT62270",
        ["spinal tap", "CSF sampling", "lower back needle drainage"]
    ),
    concept!(
        Procedure,
        "craniotomy",
        "CPT61510",
        [
            "open skull surgery",
            "cranial vault opening",
            "neurosurgical bone flap"
        ]
    ),
    concept!(
        Procedure,
        "endotracheal intubation",
        "CPT31500",
        [
            "breathing tube placement",
            "mechanical airway insertion",
            "ETT insertion"
        ]
    ),
    concept!(
        Procedure,
        "red cell transfusion",
        "CPT36430",
        [
            "packed RBC administration",
            "receipt of donor blood",
            "erythrocyte infusion"
        ]
    ),
];

/// Criterion wording frames. `{}` is replaced by the concept phrase.
pub struct Frames {
    pub easy_inclusion: &'static [&'static str],
    pub easy_exclusion: &'static [&'static str],
    pub hard_inclusion: &'static [&'static str],
    pub hard_exclusion: &'static [&'static str],
}

pub fn frames(category: Category) -> Frames {
    match category {
        Category::Diagnosis => Frames {
            easy_inclusion: &["History of {}.", "Diagnosis of {}.", "Patients with {}."],
            easy_exclusion: &["Known {}.", "Prior diagnosis of {}.", "Any history of {}."],
            hard_inclusion: &[
                "Documented {}.",
                "Evidence of {}.",
                "Individuals presenting with {}.",
            ],
            hard_exclusion: &[
                "Suspected or confirmed {}.",
                "Clinical signs of {}.",
                "Subjects affected by {}.",
            ],
        },
        Category::Medication => Frames {
            easy_inclusion: &[
                "Currently taking {}.",
                "Use of {}.",
                "Patients receiving {}.",
            ],
            easy_exclusion: &[
                "Current treatment with {}.",
                "Receiving {}.",
                "Prior use of {}.",
            ],
            hard_inclusion: &[
                "Maintained on {}.",
                "On a regimen including {}.",
                "Prescribed {}.",
            ],
            hard_exclusion: &[
                "Ongoing exposure to {}.",
                "Therapy involving {}.",
                "Administered {}.",
            ],
        },
        Category::Procedure => Frames {
            easy_inclusion: &["Underwent {}.", "Prior {}.", "Patients who had {}."],
            easy_exclusion: &["Previous {}.", "History of {}.", "Recent {}."],
            hard_inclusion: &["Has had {}.", "Status post {}.", "Completed {}."],
            hard_exclusion: &[
                "Scheduled or completed {}.",
                "Subjected to {}.",
                "Treated by {}.",
            ],
        },
    }
}

/// Groups of mutually substitutable phrases used by the mock paraphraser.
///
/// Concept groups list the record phrase first, then the paraphrases. The
/// remaining groups cover criterion framing and a few stroke-trial phrases.
pub fn phrase_groups() -> Vec<Vec<&'static str>> {
    let mut groups: Vec<Vec<&'static str>> = CONCEPTS
        .iter()
        .map(|c| {
            let mut g = vec![c.record_phrase];
            g.extend_from_slice(c.paraphrases);
            g
        })
        .collect();
    groups.extend(
        [
            &["History of", "Documented", "Evidence of", "Record of"][..],
            &["Diagnosis of", "Diagnosed with", "Confirmed"],
            &["Patients with", "Individuals presenting with", "Subjects who have", "People with"],
            &["Known", "Suspected or confirmed", "Established"],
            &["Prior diagnosis of", "Previously diagnosed", "Past"],
            &["Any history of", "Clinical signs of", "Subjects affected by"],
            &["Currently taking", "Maintained on", "On a regimen including", "Using"],
            &["Use of", "Prescribed", "Taking"],
            &["Patients receiving", "People treated with", "Subjects given"],
            &["Current treatment with", "Ongoing exposure to", "Therapy involving"],
            &["Receiving", "Administered", "Being given"],
            &["Prior use of", "Past exposure to", "Previously took"],
            &["Underwent", "Has had", "Completed"],
            &["Patients who had", "Status post", "Individuals after"],
            &["Previous", "Scheduled or completed", "Subjected to"],
            &["Recent", "Treated by", "Lately received"],
            &["women of child bearing potential", "women of reproductive age", "women who are capable of bearing children"],
            &["Positive urine or serum pregnancy test", "a positive result on their urine or serum pregnancy test", "a positive pregnancy test in their urine or serum"],
            &["Acute ischemic stroke patients", "Patients suffering from a sudden blockage of blood flow to the brain due to ischemia", "People with an abrupt interruption of blood flow to the brain caused by an ischemic event"],
            &["age 18 years or older", "adults aged at least 18", "participants who are 18 or above"],
        ]
        .into_iter()
        .map(|g| g.to_vec()),
    );
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn tokens(s: &str) -> HashSet<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    #[test]
    fn paraphrases_share_no_token_with_record_phrase() {
        for c in CONCEPTS {
            let base = tokens(c.record_phrase);
            for p in c.paraphrases {
                assert!(base.is_disjoint(&tokens(p)), "{} / {}", c.record_phrase, p);
            }
        }
    }

    #[test]
    fn record_phrases_are_distinct() {
        let set: HashSet<_> = CONCEPTS.iter().map(|c| c.record_phrase).collect();
        assert_eq!(set.len(), CONCEPTS.len());
    }
}
