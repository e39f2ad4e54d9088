//! Published corpus compositions encoded as manifests.
//!
//! "B" and "M" figures are stored as exact integers. The CPT totals row is
//! printed rounded (202.4M documents), so that manifest validates at three
//! significant figures; the post-training table is exact.

use alloc::vec;

use super::{
    CategorySubtotal, Category, CorpusManifest, EntrySource, InstructionGroup, Lang,
    ManifestEntry, ManifestTotals, Source, Task,
};

const M: u64 = 1_000_000;
const B: u64 = 1_000_000_000;

fn cpt(lang: Lang, source: Source, docs: u64, total: u64, sampled: u64) -> ManifestEntry {
    ManifestEntry {
        lang,
        source: EntrySource::Corpus(source),
        n_documents: docs,
        total_tokens: Some(total),
        sampled_tokens: Some(sampled),
    }
}

/// CPT corpus composition: 445B raw tokens down-sampled to 140B.
pub fn cpt_manifest() -> CorpusManifest {
    use Lang::*;
    use Source::*;
    CorpusManifest {
        entries: vec![
            cpt(En, GeneralIndustry, 57_900_000, 138 * B, 20 * B),
            cpt(En, LegalPoliticalNews, 22_500_000, 39 * B, 20 * B),
            cpt(Zh, GeneralIndustry, 24_300_000, 87 * B, 35 * B),
            cpt(Zh, LegalPoliticalNews, 9_600_000, 22 * B, 11 * B),
            cpt(Zh, JudicialJudgments, 86_400_000, 155 * B, 50 * B),
            cpt(Zh, ArticlesInterpretations, 1_550_000, 2 * B, 2 * B),
            cpt(Zh, LegalBooksPapers, 130_000, 2 * B, 2 * B),
        ],
        totals: ManifestTotals {
            n_documents: 2024 * M / 10,
            total_tokens: Some(445 * B),
            sampled_tokens: Some(140 * B),
        },
        subtotals: vec![],
        totals_sig_figs: Some(3),
    }
}

fn sft(category: Category, task: Task, samples: u64) -> ManifestEntry {
    ManifestEntry {
        lang: category.lang(),
        source: EntrySource::Instruction(InstructionGroup { category, task }),
        n_documents: samples,
        total_tokens: None,
        sampled_tokens: None,
    }
}

/// Post-training instruction corpus: 1,834,198 samples.
pub fn post_training_manifest() -> CorpusManifest {
    use Category::*;
    use Task::*;
    CorpusManifest {
        entries: vec![
            sft(EnGeneral, DialogueQa, 198_847),
            sft(EnGeneral, InstructionFollowing, 25_618),
            sft(ZhGeneral, DialogueQa, 589_226),
            sft(ZhGeneral, InstructionFollowing, 402_455),
            sft(ZhPolilegal, DialogueQa, 83_929),
            sft(ZhPolilegal, ArticleMemory, 67_913),
            sft(ZhPolilegal, PolilegalTasks, 383_953),
            sft(ZhPolilegal, DocumentGeneration, 82_257),
        ],
        totals: ManifestTotals {
            n_documents: 1_834_198,
            total_tokens: None,
            sampled_tokens: None,
        },
        subtotals: vec![
            CategorySubtotal { category: EnGeneral, n_documents: 224_465 },
            CategorySubtotal { category: ZhGeneral, n_documents: 991_681 },
            CategorySubtotal { category: ZhPolilegal, n_documents: 618_052 },
        ],
        totals_sig_figs: None,
    }
}
